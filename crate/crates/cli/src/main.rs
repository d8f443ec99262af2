use clap::{Parser, Subcommand};

use rectangling_cli::{cmd_eval, cmd_gen_data, cmd_rectangle, cmd_train, EvalArgs, GenDataArgs, RectangleArgs, TrainArgs};

#[derive(Parser)]
#[command(name = "rectangling", version, about = "Rectangle stitched images with motion and content diffusion models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground-truth fields.
    GenData(GenDataArgs),
    /// Train the motion (mdm) or content (cdm) model.
    Train(TrainArgs),
    /// Rectangle every sample of an input directory.
    Rectangle(RectangleArgs),
    /// Score outputs against ground truth, with the stitched inputs as the
    /// Reference row.
    Eval(EvalArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let out = cmd_gen_data(&a)?;
            println!("wrote {}", out.display());
        }
        Command::Train(a) => {
            let st = cmd_train(&a)?;
            match st.history.last() {
                Some(r) => println!("{} steps, final loss {:.6}", st.step, r.l_total),
                None => println!("{} steps", st.step),
            }
        }
        Command::Rectangle(a) => {
            let out = cmd_rectangle(&a)?;
            println!("wrote {}", out.display());
        }
        Command::Eval(a) => print!("{}", cmd_eval(&a)?.summary()),
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

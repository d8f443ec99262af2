//! The four subcommands.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};

use rectangling_core::cdm::{rectangle_full, CdmObjective, ContentOptions, FusionMask, PipelineConfig};
use rectangling_core::dataset::{load_dird, write_dataset, Sample, MANIFEST};
use rectangling_core::diffusion::{make_schedule, NoiseSchedule, SamplerConfig};
use rectangling_core::files::{read_png_rgb, write_atomic, write_field, write_field_pngs, write_mask_png, write_png};
use rectangling_core::masks::MaskConfig;
use rectangling_core::mdm::{MdmObjective, MotionOptions};
use rectangling_core::metrics::{heatmap, psnr, ssim, EvalReport, EvalRow};
use rectangling_core::nn::checkpoint::{load_adam, load_params, save_adam, save_params};
use rectangling_core::nn::{DenoiserParams, Layout};
use rectangling_core::synth::{generate, FieldFamily, Split, SynthConfig};
use rectangling_core::train::{curve_ends, history_csv, parse_history_csv, train_steps, Objective, TrainConfig, TrainState};

use crate::config::{read_manifest, Resolver};

pub const SCHEDULE_STEPS: usize = 1000;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;
pub const BASELINE: &str = "baseline.csv";

pub const MODEL_FILE: &str = "model.ckpt";
pub const ADAM_FILE: &str = "adam.ckpt";
pub const RAW_FILE: &str = "raw.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const STATE_FILE: &str = "state.txt";

fn schedule() -> Result<NoiseSchedule> {
    Ok(make_schedule(SCHEDULE_STEPS, BETA_START, BETA_END)?)
}

fn required(r: &mut Resolver, key: &str, flag: Option<String>) -> Result<PathBuf> {
    r.get_opt(key, flag)?
        .map(PathBuf::from)
        .ok_or_else(|| anyhow!("missing --{key}"))
}

#[derive(Debug, Clone, Default, Args)]
pub struct GenDataArgs {
    /// Output directory (receives train/ and eval/ splits).
    #[arg(long)]
    pub out: Option<String>,
    /// Training samples.
    #[arg(long)]
    pub n: Option<usize>,
    /// Evaluation samples.
    #[arg(long)]
    pub n_eval: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    /// Largest displacement in pixels.
    #[arg(long)]
    pub max_disp: Option<f64>,
    /// smooth-random or boundary-shrink.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// key = value configuration file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn baseline_csv(samples: &[Sample]) -> Result<String> {
    let mut s = String::from("name,ref_psnr,ref_ssim\n");
    for x in samples {
        s.push_str(&format!(
            "{},{:.6},{:.6}\n",
            x.name,
            psnr(&x.stitched, &x.target)?,
            ssim(&x.stitched, &x.target)?
        ));
    }
    Ok(s)
}

/// Per-sample Reference metrics stored at generation time.
pub fn read_baseline(dir: &Path) -> Result<Vec<(String, f64, f64)>> {
    let text = std::fs::read_to_string(dir.join(BASELINE))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            if c.len() != 3 {
                bail!("malformed baseline line '{l}'");
            }
            Ok((c[0].to_string(), c[1].parse()?, c[2].parse()?))
        })
        .collect()
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<PathBuf> {
    let mut r = Resolver::new(args.config.as_deref())?;
    let out = required(&mut r, "out", args.out.clone())?;
    let d = SynthConfig::default();
    let n = r.get("n", args.n, d.n_samples)?;
    let n_eval = r.get("n-eval", args.n_eval, 50)?;
    let cfg = SynthConfig {
        height: r.get("height", args.height, d.height)?,
        width: r.get("width", args.width, d.width)?,
        n_samples: n,
        field_family: FieldFamily::parse(&r.get("family", args.family.clone(), d.field_family.name().to_string())?)?,
        max_disp: r.get("max-disp", args.max_disp, d.max_disp)?,
        seed: r.get("seed", args.seed, d.seed)?,
    };
    r.finish()?;
    if n == 0 {
        bail!("--n must be at least 1");
    }
    cfg.validate()?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let manifest = r.manifest("gen-data");
    for (split, count, name) in [(Split::Train, n, "train"), (Split::Eval, n_eval, "eval")] {
        if count == 0 {
            continue;
        }
        let dir = out.join(name);
        let samples: Vec<Sample> = generate(&cfg, split, count)?.iter().map(Sample::quantized).collect();
        write_dataset(&dir, &samples).with_context(|| format!("writing {}", dir.display()))?;
        write_atomic(&dir.join(BASELINE), baseline_csv(&samples)?.as_bytes())?;
        write_atomic(&dir.join(MANIFEST), format!("{manifest}split = {name}\n").as_bytes())?;
        log::info!("{name}: {count} samples");
    }
    write_atomic(&out.join(MANIFEST), manifest.as_bytes())?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Mdm,
    Cdm,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Mdm => "mdm",
            ModelKind::Cdm => "cdm",
        }
    }

    fn channels(&self) -> usize {
        match self {
            ModelKind::Mdm => 2,
            ModelKind::Cdm => 3,
        }
    }

    pub fn default_lr(&self) -> f64 {
        match self {
            ModelKind::Mdm => 2e-4,
            ModelKind::Cdm => 1e-5,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Which model to train.
    #[arg(value_enum)]
    pub model: ModelKind,
    /// Dataset directory (a `train` subfolder is used when present).
    #[arg(long)]
    pub data: Option<String>,
    /// Run directory for checkpoints, history and manifest.
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Probability of training a step's sample without conditioning.
    #[arg(long)]
    pub cond_drop: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train without the stitched-mask input plane.
    #[arg(long)]
    pub no_mask: bool,
    /// Anneal the learning rate to zero along a half cosine over --steps.
    #[arg(long)]
    pub cosine_lr: bool,
    /// Keep a moving average of the weights with this decay and write it
    /// as the model checkpoint; 0 disables it.
    #[arg(long)]
    pub ema: Option<f64>,
    /// Field normaliser in pixels (motion model).
    #[arg(long)]
    pub max_disp: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Channel widths of the three levels, e.g. 16,32,64.
    #[arg(long)]
    pub widths: Option<String>,
    #[arg(long)]
    pub time_dim: Option<usize>,
    /// Continue from the checkpoint in --out if one exists.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl TrainArgs {
    pub fn new(model: ModelKind) -> Self {
        Self {
            model,
            data: None,
            out: None,
            steps: None,
            batch: None,
            lr: None,
            cond_drop: None,
            seed: None,
            no_mask: false,
            cosine_lr: false,
            ema: None,
            max_disp: None,
            checkpoint_every: None,
            widths: None,
            time_dim: None,
            resume: false,
            config: None,
        }
    }
}

fn parse_widths(s: &str) -> Result<[usize; 3]> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("widths '{s}'"))?;
    match v.as_slice() {
        [a, b, c] if *a > 0 && *b > 0 && *c > 0 => Ok([*a, *b, *c]),
        _ => bail!("widths must be three positive integers, got '{s}'"),
    }
}

/// Uses `<dir>/<split>` when it exists, else `dir` itself.
pub fn split_dir(dir: &Path, split: &str) -> PathBuf {
    let sub = dir.join(split);
    if sub.is_dir() {
        sub
    } else {
        dir.to_path_buf()
    }
}

/// With a weight average, `model.ckpt` holds the average and the raw
/// weights go to `raw.ckpt` for resuming.
fn save_run(out: &Path, state: &TrainState) -> Result<()> {
    match &state.ema {
        Some(ema) => {
            save_params(&out.join(MODEL_FILE), ema)?;
            save_params(&out.join(RAW_FILE), &state.params)?;
        }
        None => save_params(&out.join(MODEL_FILE), &state.params)?,
    }
    save_adam(&out.join(ADAM_FILE), &state.adam)?;
    write_atomic(&out.join(HISTORY_FILE), history_csv(&state.history).as_bytes())?;
    write_atomic(&out.join(STATE_FILE), format!("step = {}\n", state.step).as_bytes())?;
    Ok(())
}

fn load_run(out: &Path, layout: &Layout, cfg: &TrainConfig) -> Result<TrainState> {
    let (params, ema) = if cfg.ema_decay > 0.0 && out.join(RAW_FILE).is_file() {
        (load_params(&out.join(RAW_FILE))?, Some(load_params(&out.join(MODEL_FILE))?))
    } else {
        (load_params(&out.join(MODEL_FILE))?, None)
    };
    if params.layout().fingerprint() != layout.fingerprint() {
        bail!("checkpoint in {} has a different architecture", out.display());
    }
    let adam = load_adam(&out.join(ADAM_FILE))?;
    let history = parse_history_csv(&std::fs::read_to_string(out.join(HISTORY_FILE))?)?;
    let st = read_manifest(&out.join(STATE_FILE))?;
    let step = st
        .get("step")
        .ok_or_else(|| anyhow!("{} lacks a step", STATE_FILE))?
        .parse()?;
    Ok(TrainState { params, ema, adam, step, history })
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainState> {
    let mut r = Resolver::new(args.config.as_deref())?;
    let kind = args.model;
    r.note("model", kind.name());
    let data = required(&mut r, "data", args.data.clone())?;
    let out = required(&mut r, "out", args.out.clone())?;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        steps: r.get("steps", args.steps, d.steps)?,
        batch_size: r.get("batch", args.batch, d.batch_size)?,
        lr: r.get("lr", args.lr, kind.default_lr())?,
        cond_drop: r.get("cond-drop", args.cond_drop, d.cond_drop)?,
        seed: r.get("seed", args.seed, d.seed)?,
        use_mask: !r.flag("no-mask", args.no_mask)?,
        cosine_decay: r.flag("cosine-lr", args.cosine_lr)?,
        ema_decay: r.get("ema", args.ema, d.ema_decay)?,
    };
    let max_disp = r.get("max-disp", args.max_disp, MotionOptions::default().max_disp)?;
    let every = r.get("checkpoint-every", args.checkpoint_every, 1000usize)?;
    let widths = parse_widths(&r.get("widths", args.widths.clone(), "16,32,64".to_string())?)?;
    let time_dim = r.get("time-dim", args.time_dim, 32usize)?;
    let resume = r.flag("resume", args.resume)?;
    r.finish()?;
    cfg.validate()?;
    if every == 0 {
        bail!("--checkpoint-every must be at least 1");
    }
    if !(max_disp > 0.0) {
        bail!("--max-disp must be positive");
    }

    let samples = load_dird(&split_dir(&data, "train")).with_context(|| format!("loading {}", data.display()))?;
    if kind == ModelKind::Mdm {
        if let Some(s) = samples.iter().find(|s| s.field.is_none()) {
            bail!("motion training needs field files; sample {} has none", s.name);
        }
    }
    let layout = Layout::unet(kind.channels(), widths, time_dim, true)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut state = if resume && out.join(STATE_FILE).is_file() {
        let s = load_run(&out, &layout, &cfg)?;
        log::info!("resuming at step {}", s.step);
        s
    } else {
        TrainState::new(DenoiserParams::init(layout, cfg.seed), cfg.lr)
    };
    let objective: Box<dyn Objective> = match kind {
        ModelKind::Mdm => Box::new(MdmObjective { max_disp }),
        ModelKind::Cdm => Box::new(CdmObjective),
    };
    let sched = schedule()?;
    write_atomic(&out.join(MANIFEST), r.manifest("train").as_bytes())?;
    if state.step >= cfg.steps {
        save_run(&out, &state)?;
    }
    while state.step < cfg.steps {
        let chunk = (every - state.step % every).min(cfg.steps - state.step);
        train_steps(&mut state, &samples, &cfg, &sched, objective.as_ref(), chunk)?;
        save_run(&out, &state)?;
        if let Some(last) = state.history.last() {
            log::info!("step {}: loss {:.6}", state.step, last.l_total);
        }
    }
    if let Some((first, last)) = curve_ends(&state.history, 100.min(state.history.len() / 2).max(1)) {
        log::info!("loss: leading mean {first:.6}, trailing mean {last:.6}");
    }
    Ok(state)
}

#[derive(Debug, Clone, Default, Args)]
pub struct RectangleArgs {
    /// Directory of stitched inputs (img/mask[/gt][/field]).
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// Motion model checkpoint.
    #[arg(long)]
    pub mdm: Option<String>,
    /// Content model checkpoint.
    #[arg(long)]
    pub cdm: Option<String>,
    #[arg(long)]
    pub mdm_steps: Option<usize>,
    /// Guidance scale of the motion sampler.
    #[arg(long)]
    pub cfg_scale: Option<f64>,
    #[arg(long)]
    pub cdm_steps: Option<usize>,
    #[arg(long)]
    pub cdm_cfg_scale: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub omega0: Option<f64>,
    #[arg(long)]
    pub tau_valid: Option<f64>,
    /// Displacement normaliser of the intensity map (default: diagonal).
    #[arg(long)]
    pub norm_len: Option<f64>,
    /// Use a constant fusion mask instead of the confidence mask.
    #[arg(long)]
    pub fixed_mask: bool,
    /// Use the stitched mask unwarped in the confidence mask.
    #[arg(long)]
    pub raw_stitched_mask: bool,
    /// Re-noise the kept region after every content step.
    #[arg(long)]
    pub stochastic_fusion: bool,
    /// Motion model was trained without the mask plane (default: read
    /// from the checkpoint's manifest).
    #[arg(long)]
    pub mdm_no_mask: Option<bool>,
    #[arg(long)]
    pub cdm_no_mask: Option<bool>,
    #[arg(long)]
    pub max_disp: Option<f64>,
    /// Use the dataset's field files instead of the motion model.
    #[arg(long)]
    pub gt_field: bool,
    /// Also write fields, masks, coarse results and heatmaps.
    #[arg(long)]
    pub debug: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn checkpoint_path(r: &mut Resolver, key: &str, flag: Option<String>, what: &str) -> Result<PathBuf> {
    let p = r
        .get_opt(key, flag)?
        .map(PathBuf::from)
        .ok_or_else(|| anyhow!("no {what} checkpoint given; pass --{key} <path>"))?;
    if !p.is_file() {
        bail!("{what} checkpoint {} not found (--{key})", p.display());
    }
    Ok(p)
}

/// Values recorded when the checkpoint was trained, if its manifest is
/// beside it.
fn training_manifest(ckpt: &Path) -> std::collections::BTreeMap<String, String> {
    ckpt.parent()
        .map(|d| d.join(MANIFEST))
        .filter(|p| p.is_file())
        .and_then(|p| read_manifest(&p).ok())
        .unwrap_or_default()
}

fn manifest_value<T: std::str::FromStr>(m: &std::collections::BTreeMap<String, String>, key: &str, default: T) -> T {
    m.get(key).and_then(|v| v.parse().ok()).unwrap_or(default)
}

pub fn cmd_rectangle(args: &RectangleArgs) -> Result<PathBuf> {
    let mut r = Resolver::new(args.config.as_deref())?;
    let input = required(&mut r, "input", args.input.clone())?;
    let out = required(&mut r, "out", args.out.clone())?;
    let gt_field = r.flag("gt-field", args.gt_field)?;
    let mdm_path = if gt_field {
        r.get_opt("mdm", args.mdm.clone())?;
        None
    } else {
        Some(checkpoint_path(&mut r, "mdm", args.mdm.clone(), "motion model")?)
    };
    let cdm_path = checkpoint_path(&mut r, "cdm", args.cdm.clone(), "content model")?;
    let mdm_manifest = mdm_path.as_deref().map(training_manifest).unwrap_or_default();
    let cdm_manifest = training_manifest(&cdm_path);
    let d = PipelineConfig::default();
    let seed = r.get("seed", args.seed, 0u64)?;
    let eta = r.get("eta", args.eta, 0.0)?;
    let cfg = PipelineConfig {
        motion_sampler: SamplerConfig {
            num_steps: r.get("mdm-steps", args.mdm_steps, d.motion_sampler.num_steps)?,
            cfg_scale: r.get("cfg-scale", args.cfg_scale, d.motion_sampler.cfg_scale)?,
            eta,
            seed,
        },
        content_sampler: SamplerConfig {
            num_steps: r.get("cdm-steps", args.cdm_steps, d.content_sampler.num_steps)?,
            cfg_scale: r.get("cdm-cfg-scale", args.cdm_cfg_scale, d.content_sampler.cfg_scale)?,
            eta,
            seed,
        },
        motion: MotionOptions {
            max_disp: r.get("max-disp", args.max_disp, manifest_value(&mdm_manifest, "max-disp", d.motion.max_disp))?,
            use_mask: !r.get("mdm-no-mask", args.mdm_no_mask, manifest_value(&mdm_manifest, "no-mask", false))?,
        },
        content: ContentOptions {
            no_mask: r.get("cdm-no-mask", args.cdm_no_mask, manifest_value(&cdm_manifest, "no-mask", false))?,
            stochastic_fusion: r.flag("stochastic-fusion", args.stochastic_fusion)?,
        },
        masks: MaskConfig {
            tau_valid: r.get("tau-valid", args.tau_valid, d.masks.tau_valid)?,
            omega0: r.get("omega0", args.omega0, d.masks.omega0)?,
            warp_stitched_mask: !r.flag("raw-stitched-mask", args.raw_stitched_mask)?,
        },
        fusion_mask: if r.flag("fixed-mask", args.fixed_mask)? {
            FusionMask::Fixed
        } else {
            FusionMask::Confidence
        },
        norm_len: r.get_opt("norm-len", args.norm_len)?,
    };
    let debug = r.flag("debug", args.debug)?;
    r.finish()?;

    let mdm = match &mdm_path {
        Some(p) => Some(load_params(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let cdm = load_params(&cdm_path).with_context(|| format!("loading {}", cdm_path.display()))?;
    let samples = load_dird(&input).with_context(|| format!("loading {}", input.display()))?;
    let sched = schedule()?;
    std::fs::create_dir_all(&out)?;
    if debug {
        for sub in ["coarse", "confidence", "white_edges", "intensity", "warped_mask", "field", "heatmap"] {
            std::fs::create_dir_all(out.join(sub))?;
        }
    }
    for s in &samples {
        let injected = if gt_field {
            Some(s.field.as_ref().ok_or_else(|| anyhow!("--gt-field: sample {} has no field file", s.name))?)
        } else {
            None
        };
        let res = rectangle_full(mdm.as_ref(), &cdm, &sched, &s.stitched, &s.mask, injected, &cfg)
            .with_context(|| format!("rectangling {}", s.name))?;
        write_png(&out.join(format!("{}.png", s.name)), &res.output)?;
        if debug {
            let n = &s.name;
            write_png(&out.join("coarse").join(format!("{n}.png")), &res.coarse)?;
            write_mask_png(&out.join("confidence").join(format!("{n}.png")), &res.confidence)?;
            write_mask_png(&out.join("white_edges").join(format!("{n}.png")), &res.white_edges)?;
            write_mask_png(&out.join("intensity").join(format!("{n}.png")), &res.intensity)?;
            write_mask_png(&out.join("warped_mask").join(format!("{n}.png")), &res.warped_mask)?;
            write_field(&out.join("field").join(format!("{n}.f32")), &res.field)?;
            write_field_pngs(
                &out.join("field").join(format!("{n}_dx.png")),
                &out.join("field").join(format!("{n}_dy.png")),
                &res.field,
                cfg.motion.max_disp,
            )?;
            write_png(&out.join("heatmap").join(format!("{n}.png")), &heatmap(&res.output, &s.target)?)?;
        }
        log::info!("{} done", s.name);
    }
    write_atomic(&out.join(MANIFEST), r.manifest("rectangle").as_bytes())?;
    Ok(out)
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    /// Directory of result PNGs named like the dataset samples.
    #[arg(long)]
    pub outputs: Option<String>,
    /// Dataset with stitched inputs and ground truth.
    #[arg(long)]
    pub data: Option<String>,
    /// Report directory (default: the outputs directory).
    #[arg(long)]
    pub report: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let mut r = Resolver::new(args.config.as_deref())?;
    let outputs = required(&mut r, "outputs", args.outputs.clone())?;
    let data = required(&mut r, "data", args.data.clone())?;
    let report_dir = r.get_opt("report", args.report.clone())?.map(PathBuf::from).unwrap_or_else(|| outputs.clone());
    r.finish()?;
    let samples = load_dird(&data).with_context(|| format!("loading {}", data.display()))?;
    let mut rows = Vec::with_capacity(samples.len());
    let mut missing = Vec::new();
    for s in &samples {
        let p = outputs.join(format!("{}.png", s.name));
        if !p.is_file() {
            missing.push(s.name.clone());
            continue;
        }
        let out = read_png_rgb(&p)?;
        if out.shape() != s.target.shape() {
            bail!("{}: output is {:?}, ground truth {:?}", s.name, out.shape(), s.target.shape());
        }
        rows.push(EvalRow {
            name: s.name.clone(),
            psnr: psnr(&out, &s.target)?,
            ssim: ssim(&out, &s.target)?,
            ref_psnr: psnr(&s.stitched, &s.target)?,
            ref_ssim: ssim(&s.stitched, &s.target)?,
        });
    }
    if !missing.is_empty() {
        bail!(
            "{} of {} samples have no output in {} (first: {})",
            missing.len(),
            samples.len(),
            outputs.display(),
            missing[0]
        );
    }
    let report = EvalReport::from_rows(rows)?;
    if data.join(BASELINE).is_file() {
        let base = read_baseline(&data)?;
        let mismatched = base.iter().filter(|(name, p, s)| {
            report
                .rows
                .iter()
                .find(|row| &row.name == name)
                .map_or(false, |row| (row.ref_psnr - p).abs() > 1e-5 || (row.ref_ssim - s).abs() > 1e-5)
        });
        let n = mismatched.count();
        if n > 0 {
            log::warn!("{n} Reference rows differ from the generation-time baseline");
        }
    }
    std::fs::create_dir_all(&report_dir)?;
    write_atomic(&report_dir.join("eval.csv"), report.to_csv().as_bytes())?;
    write_atomic(&report_dir.join("summary.txt"), report.summary().as_bytes())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widths_parse() {
        assert_eq!(parse_widths("8, 16,32").unwrap(), [8, 16, 32]);
        assert!(parse_widths("8,16").is_err());
        assert!(parse_widths("0,1,2").is_err());
    }
}

//! Reproducible command-line runs: synthetic data generation, model
//! training, rectangling and evaluation.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_eval, cmd_gen_data, cmd_rectangle, cmd_train, EvalArgs, GenDataArgs, ModelKind, RectangleArgs, TrainArgs,
};

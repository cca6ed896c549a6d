//! Experiment plumbing: toy corpora, policy evaluation on pre-simulated
//! stacks and against the live sensor, rate/quality sweeps and their curves.

mod curves;
mod eval;
mod live;
mod sweep;
mod toy;

pub use curves::{matched_rate_reduction, Pchip};
pub use eval::{evaluate_stacks, fixed_rate, PolicyEval};
pub use live::{run_live, LiveRun};
pub use sweep::{hotswap_eval, match_lambda, summarize, sweep_rate_quality, ExperimentSpec, HotswapRow, PolicySpec, SweepRow};
pub use toy::ToyCorpus;

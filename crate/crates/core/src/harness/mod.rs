//! CLI and replicate engine: config-driven simulation grids, method
//! dispatch, dataset file IO, and truth evaluation.

pub mod config;
pub mod ingest;
pub mod methods;
pub mod sim;

pub use config::{replicate_seed, CrossfitSettings, MethodSpec, RunConfig};
pub use ingest::{export_dataset, ingest_dataset, run_true_effect, EffectMode};
pub use methods::{run_method, run_method_with_bootstrap};
pub use sim::{render_table, run_simulation, write_outputs, RunManifest};

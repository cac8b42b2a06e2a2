//! Command-line front end: simulation grids, single-dataset estimation,
//! truth evaluation, and spatial split inspection.

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::path::PathBuf;
use std::process::ExitCode;

use geodml::dgp::Scenario;
use geodml::harness::{
    ingest_dataset, render_table, run_method_with_bootstrap, run_simulation, run_true_effect,
    write_outputs, EffectMode, MethodSpec, RunConfig,
};
use geodml::spatial::{sample_locations, spatial_block_split};
use geodml::Error;

#[derive(Parser)]
#[command(name = "geodml", version, about = "Shift-effect estimation under spatial confounding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config-driven simulation grid and print the metrics table.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path (overrides the config's `output`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Thread pool size (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Estimate the shift effect on a dataset file.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long)]
        delta: f64,
        /// Bootstrap resamples for the confidence interval.
        #[arg(long)]
        boot: Option<usize>,
        /// Standardize y, x, and covariates before fitting.
        #[arg(long)]
        normalize: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Report the true effect for a simulation scenario.
    TrueEffect {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        #[arg(long, value_enum, default_value_t = ModeArg::Shift)]
        mode: ModeArg,
        #[arg(long, default_value_t = geodml::dgp::DEFAULT_ORACLE_N)]
        oracle_n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Draw a spatial block split and verify its geometry.
    SplitCheck {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        r: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Shift,
    Derivative,
    OlsSlope,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::UnknownMethod(_)
        | Error::UnknownScenario(_)
        | Error::InvalidArgument(_) => 2,
        Error::Ingestion(_) | Error::UnsupportedDataset | Error::Io(_) => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn run(cli: Cli) -> geodml::Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            workers,
        } => {
            if let Some(w) = workers {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(w)
                    .build_global()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            }
            let mut config = RunConfig::from_path(&config)?;
            if let Some(s) = seed {
                config.master_seed = s;
            }
            let (rows, manifest) = run_simulation(&config)?;
            print!("{}", render_table(&rows));
            let out_path = out.or_else(|| config.output.as_ref().map(PathBuf::from));
            if let Some(path) = out_path {
                write_outputs(&path, &rows, &manifest)?;
                eprintln!("wrote {} rows to {}", rows.len(), path.display());
            }
            Ok(())
        }
        Command::Estimate {
            data,
            method,
            delta,
            boot,
            normalize,
            seed,
        } => {
            let ds = ingest_dataset(&data, normalize)?;
            let mut spec = MethodSpec::named(&method);
            spec.bootstrap = boot.is_some();
            let resamples = boot.unwrap_or(geodml::inference::DEFAULT_BOOTSTRAP_RESAMPLES);
            let crossfit = geodml::harness::CrossfitSettings::default();
            let est = run_method_with_bootstrap(&ds, &spec, delta, &crossfit, resamples, seed)?;
            println!("method: {}", est.method);
            println!("delta: {}", est.delta);
            println!("point: {:.6}", est.point);
            if let Some(se) = est.se {
                println!("se: {se:.6}");
            }
            if let Some((lo, hi)) = est.ci {
                println!("ci: [{lo:.6}, {hi:.6}]");
            }
            if let Some(gamma) = est.diagnostics.gamma {
                println!("gamma: {gamma:.6}");
            }
            if let Some(ess) = est.diagnostics.weight_ess {
                println!("weight_ess: {ess:.1}");
            }
            Ok(())
        }
        Command::TrueEffect {
            scenario,
            delta,
            mode,
            oracle_n,
            seed,
        } => {
            let scenario: Scenario = scenario.parse()?;
            let mode = match mode {
                ModeArg::Shift => EffectMode::Shift,
                ModeArg::Derivative => EffectMode::AverageDerivative,
                ModeArg::OlsSlope => EffectMode::OlsSlope,
            };
            let truth = run_true_effect(scenario, delta, oracle_n, mode, seed)?;
            println!("scenario: {scenario}");
            println!("delta: {delta}");
            println!("value: {:.6}", truth.value);
            if let Some(se) = truth.mc_se {
                println!("mc_se: {se:.6}");
            }
            Ok(())
        }
        Command::SplitCheck { n, q, r, seed } => {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let locs = sample_locations(n, &mut rng)?;
            let split = spatial_block_split(&locs, q, r, &mut rng)?;
            let geometry_ok = split.verify(&locs);
            println!("n: {n}");
            println!("q: {q}");
            println!("r: {r}");
            println!("fit_size: {}", split.fit_indices.len());
            println!("eval_size: {}", split.eval_indices.len());
            let min_cross = split.min_cross_distance(&locs);
            println!("min_cross_distance: {min_cross:.6}");
            println!("geometry: {}", if geometry_ok { "ok" } else { "violated" });
            if !geometry_ok {
                return Err(Error::NumericalFailure(
                    "split geometry verification failed".into(),
                ));
            }
            Ok(())
        }
    }
}

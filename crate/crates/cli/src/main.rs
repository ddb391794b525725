use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sspinv_cli::commands::{self, InvertPaths};
use sspinv_cli::config::{ExperimentConfig, Selection};
use sspinv_cli::report::Axis;
use sspinv_core::Error;

/// Sound speed profile inversion experiments.
#[derive(Parser)]
#[command(name = "sspinv", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override fields of the configuration file.
#[derive(Args)]
struct Overrides {
    /// Experiment configuration (TOML). Without it, defaults plus `--seed`.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    n_eof: Option<usize>,
    #[arg(long, global = true)]
    n_beam: Option<usize>,
    #[arg(long, global = true)]
    n_ping: Option<usize>,
    /// Swath width in degrees.
    #[arg(long, global = true)]
    swath: Option<f64>,
    /// Range error in meters.
    #[arg(long, global = true, conflicts_with = "sigma_t")]
    sigma_x: Option<f64>,
    /// Two-way time error in seconds.
    #[arg(long, global = true)]
    sigma_t: Option<f64>,
    /// Select this regularization weight instead of using the net.
    #[arg(long, global = true, conflicts_with_all = ["net", "discrepancy"])]
    fixed_alpha: Option<f64>,
    /// Trained selector net to load.
    #[arg(long, global = true, conflicts_with = "discrepancy")]
    net: Option<PathBuf>,
    /// Select the weight by the discrepancy principle.
    #[arg(long, global = true)]
    discrepancy: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build and save the EOF basis from the training profiles.
    EofBuild,
    /// Simulate a survey over one test profile.
    Simulate {
        /// Test profile index.
        #[arg(long, default_value_t = 0)]
        profile: usize,
    },
    /// Invert a measurement file with the saved basis.
    Invert {
        #[arg(long)]
        measurements: PathBuf,
        /// Sidecar JSON; defaults to the measurement path with `.json`.
        #[arg(long)]
        sidecar: Option<PathBuf>,
        /// Defaults to `basis.json` in the output directory.
        #[arg(long)]
        basis: Option<PathBuf>,
    },
    /// Evaluate the test set along one parameter axis.
    Sweep {
        /// beams_pings, swath_deg, n_eof or spatial_error_cm.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values; defaults to the published table's.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Mean-profile baseline errors on the test set.
    Baselines,
    /// Train the regularization-weight selector for the saved basis.
    TrainAlpha {
        #[arg(long)]
        basis: Option<PathBuf>,
    },
    /// Evaluate the configuration over the test set with figures.
    Report,
}

fn load_config(o: &Overrides) -> Result<ExperimentConfig, Error> {
    let mut c = match &o.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let seed = o.seed.ok_or_else(|| Error::Config("give --config or --seed".into()))?;
            ExperimentConfig::from_toml(&format!("seed = {seed}"))?
        }
    };
    if let Some(v) = o.seed {
        c.seed = v;
    }
    if let Some(v) = &o.out {
        c.output_dir = v.clone();
    }
    if let Some(v) = o.n_eof {
        c.basis.n_eof = v;
    }
    if let Some(v) = o.n_beam {
        c.survey.n_beam = v;
    }
    if let Some(v) = o.n_ping {
        c.survey.n_ping = v;
    }
    if let Some(v) = o.swath {
        c.survey.swath_deg = v;
    }
    if let Some(v) = o.sigma_x {
        c.survey.set_sigma_x(v);
    }
    if let Some(v) = o.sigma_t {
        c.survey.sigma_x = None;
        c.survey.sigma_t = Some(v);
    }
    if let Some(alpha) = o.fixed_alpha {
        c.selection = Selection::Fixed { alpha };
    }
    if let Some(path) = &o.net {
        c.selection = Selection::Net { path: Some(path.clone()) };
    }
    if o.discrepancy {
        c.selection = Selection::Discrepancy;
    }
    c.validate()?;
    Ok(c)
}

fn run(cli: Cli) -> Result<(), Error> {
    let config = load_config(&cli.overrides)?;
    match cli.command {
        Command::EofBuild => {
            let s = commands::eof_build(&config)?;
            println!("training profiles {}, test profiles {}", s.n_training, s.n_test);
            if s.rejected_records > 0 {
                eprintln!("warning: {} profile records rejected", s.rejected_records);
            }
            println!("k  sigma  explained_variance");
            for (k, (sigma, v)) in s.sigma.iter().zip(&s.explained_variance).enumerate() {
                println!("{}  {sigma:.4}  {v:.4}", k + 1);
            }
        }
        Command::Simulate { profile } => {
            let m = commands::simulate(&config, profile)?;
            println!("{} observations from test profile {profile}", m.len());
        }
        Command::Invert { measurements, sidecar, basis } => {
            let d = commands::invert(&config, &InvertPaths { measurements, sidecar, basis })?;
            println!(
                "alpha {} ({}), misfit {:.4e} us^2, {} iterations, converged {}",
                d.selected.alpha, d.selection, d.selected.misfit, d.selected.iterations, d.selected.converged
            );
        }
        Command::Sweep { axis, values } => {
            let axis: Axis = axis.parse()?;
            let values = if values.is_empty() { axis.default_values() } else { values };
            let r = commands::sweep(&config, axis, &values)?;
            println!("{}", axis.label());
            for v in &r.values {
                println!("{:>8}  mean {:.3}  median {:.3}  failed {}", v.value, v.summary.mean, v.summary.median, v.summary.failed);
            }
        }
        Command::Baselines => {
            let b = commands::baselines_cmd(&config)?;
            println!("training-mean profile {:.3} m/s, test-mean profile {:.3} m/s", b.train_mean, b.test_mean);
        }
        Command::TrainAlpha { basis } => {
            let r = commands::train_alpha(&config, basis.as_deref())?;
            println!(
                "{} cases ({} train, {} validation), validation loss {:.4e}, label variance {:.4e}",
                r.n_cases, r.n_train, r.n_validation, r.validation_loss, r.label_variance
            );
        }
        Command::Report => {
            let r = commands::report(&config)?;
            let s = r.values[0].summary;
            println!(
                "mean {:.3} m/s, median {:.3}, std {:.3}, failed {}; training-mean baseline {:.3}, test-mean baseline {:.3}",
                s.mean, s.median, s.std, s.failed, r.baselines.train_mean, r.baselines.test_mean
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}

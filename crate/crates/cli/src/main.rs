//! `mcfq`: simulate, reconstruct and certify two-photon multi-core fiber
//! entanglement from a config file or a bundled preset.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use mcf_qudit::measurement::{slm_mask, CountsRecord, MeasurementSetting, SlmGeometry};
use mcf_qudit::pipeline::{
    analyze_counts, fringe_report, fringes_csv, mean_visibility, metric_rows, metrics_csv,
    resolve_config, rho_bars_csv, run_experiment, simulate, ExperimentConfig, MetricRow,
    PipelineError, Stage,
};
use mcf_qudit::qstate::{DensityMatrix, MatrixFile};
use mcf_qudit::tomography::standard_settings;
use mcf_qudit::Error;

#[derive(Parser)]
#[command(
    name = "mcfq",
    version,
    about = "Multi-core fiber ququart entanglement pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH", global = true)]
    config: Option<PathBuf>,
    /// Bundled config: ideal, paper or fig4.
    #[arg(long, value_name = "NAME", global = true)]
    preset: Option<String>,
    /// Overrides the config seed.
    #[arg(long, value_name = "N", global = true)]
    seed: Option<u64>,
    /// Output directory (default: the config's output_dir, else ./mcfq-out).
    #[arg(long, value_name = "DIR", global = true)]
    out: Option<PathBuf>,
    /// Overrides the number of bootstrap resamples.
    #[arg(long, value_name = "N", global = true)]
    resamples: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Config → tomography counts (counts.csv).
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Counts → maximum-likelihood density matrix (rho.json, rho_bars.csv).
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        counts: PathBuf,
    },
    /// Density matrix or counts → metrics (metrics.csv); counts also get
    /// bootstrap errors.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(
            long,
            value_name = "PATH",
            conflicts_with = "rho",
            required_unless_present = "rho"
        )]
        counts: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        rho: Option<PathBuf>,
    },
    /// Full pipeline with every artifact and report.json.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Two-core fringe scans (fringes.csv).
    Fringes {
        #[command(flatten)]
        common: Common,
    },
    /// SLM phase masks as PGM images, one per setting.
    Masks {
        #[command(flatten)]
        common: Common,
        /// Setting labels such as `1`, `1+i2`, `2+-3`; default: the tomography set.
        #[arg(long = "setting", value_name = "LABEL")]
        settings: Vec<String>,
        /// Qudit dimension when no config is given.
        #[arg(long, default_value_t = 4)]
        dim: usize,
    },
}

/// An error and the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn config_failure(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: error.into(),
    }
}

fn stage_failure(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 3,
        error: error.into(),
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.stage == Stage::Config {
            config_failure(e)
        } else {
            stage_failure(e)
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn load_config(common: &Common) -> CliResult<ExperimentConfig> {
    let mut config = resolve_config(
        common.config.as_deref(),
        common.preset.as_deref(),
        common.seed,
    )
    .map_err(config_failure)?;
    if let Some(n) = common.resamples {
        config.bootstrap_resamples = n;
    }
    config.validate().map_err(config_failure)?;
    Ok(config)
}

fn out_dir(common: &Common, config: Option<&ExperimentConfig>) -> CliResult<PathBuf> {
    let dir = common
        .out
        .clone()
        .or_else(|| config.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("mcfq-out"));
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(stage_failure)?;
    Ok(dir)
}

fn write(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(stage_failure)
}

fn print_metrics(rows: &[MetricRow]) {
    for r in rows {
        match r.std {
            Some(s) => println!("{:<16} {:>9.4} ± {:.4}", r.name, r.value, s),
            None => println!("{:<16} {:>9.4}", r.name, r.value),
        }
    }
}

fn load_counts(path: &Path) -> CliResult<CountsRecord> {
    CountsRecord::load(path)
        .with_context(|| format!("reading counts from {}", path.display()))
        .map_err(stage_failure)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { common } => {
            let config = load_config(&common)?;
            let dir = out_dir(&common, Some(&config))?;
            let counts = simulate(&config)?;
            let path = dir.join("counts.csv");
            write(&path, &counts.to_table())?;
            println!(
                "{} settings, {} coincidences -> {}",
                counts.entries.len(),
                counts.total(),
                path.display()
            );
        }
        Command::Reconstruct { common, counts } => {
            let config = load_config(&common)?;
            let dir = out_dir(&common, Some(&config))?;
            let record = load_counts(&counts)?;
            let analysis = analyze_counts(&config, &record, 0)?;
            let rec = &analysis.reconstruction;
            rec.save_json(&dir.join("rho.json"))
                .map_err(stage_failure)?;
            write(&dir.join("rho_bars.csv"), &rho_bars_csv(&rec.rho))?;
            println!(
                "log-likelihood {:.6} after {} iterations (converged: {}) -> {}",
                rec.log_likelihood,
                rec.iterations,
                rec.converged,
                dir.join("rho.json").display()
            );
        }
        Command::Analyze {
            common,
            counts,
            rho,
        } => {
            let dir;
            let rows = if let Some(counts) = counts {
                let config = load_config(&common)?;
                dir = out_dir(&common, Some(&config))?;
                let record = load_counts(&counts)?;
                let analysis = analyze_counts(&config, &record, config.bootstrap_resamples)?;
                analysis
                    .reconstruction
                    .save_json(&dir.join("rho.json"))
                    .map_err(stage_failure)?;
                analysis.metrics
            } else {
                let path = rho.expect("clap requires --counts or --rho");
                dir = out_dir(&common, None)?;
                let rho = MatrixFile::load(&path)
                    .and_then(|f| DensityMatrix::from_file(&f))
                    .with_context(|| format!("reading density matrix from {}", path.display()))
                    .map_err(stage_failure)?;
                metric_rows(&rho, None).map_err(stage_failure)?
            };
            write(&dir.join("metrics.csv"), &metrics_csv(&rows))?;
            print_metrics(&rows);
        }
        Command::Report { common } => {
            let config = load_config(&common)?;
            let dir = out_dir(&common, Some(&config))?;
            let report = run_experiment(&config, Some(&dir))?;
            print_metrics(&report.metrics);
            if let Some(s) = report.violation_sigma {
                println!("{:<16} {:>9.2}", "violation_sigma", s);
            }
            println!("{:<16} {:>9.4}", "crosstalk", report.crosstalk);
            println!(
                "{:<16} {:>9.4}",
                "mean_visibility", report.mean_fringe_visibility
            );
            println!("report -> {}", dir.join("report.json").display());
        }
        Command::Fringes { common } => {
            let config = load_config(&common)?;
            let dir = out_dir(&common, Some(&config))?;
            let rows = fringe_report(&config, &config.fringe_pairs())?;
            write(&dir.join("fringes.csv"), &fringes_csv(&rows))?;
            for r in &rows {
                println!(
                    "({},{}) rot {:>3} phi1 {:.4}  V = {:.4}  offset {:+.4}",
                    r.i, r.j, r.rotation_deg, r.phi1_rad, r.visibility, r.phase_offset_rad
                );
            }
            println!("mean visibility {:.4}", mean_visibility(&rows));
        }
        Command::Masks {
            common,
            settings,
            dim,
        } => {
            let config = if common.config.is_some() || common.preset.is_some() {
                Some(load_config(&common)?)
            } else {
                None
            };
            let dim = config.as_ref().map_or(dim, ExperimentConfig::dim);
            let dir = out_dir(&common, config.as_ref())?;
            let settings = if settings.is_empty() {
                standard_settings(dim)
                    .map_err(config_failure)?
                    .settings()
                    .to_vec()
            } else {
                settings
                    .iter()
                    .map(|l| MeasurementSetting::parse_label(dim, l))
                    .collect::<Result<Vec<_>, Error>>()
                    .map_err(config_failure)?
            };
            let geometry = SlmGeometry::for_dim(dim);
            for (k, s) in settings.iter().enumerate() {
                let mask = slm_mask(s, &geometry).map_err(stage_failure)?;
                let name = format!("mask_{:02}_{}.pgm", k + 1, file_safe(&s.label()));
                let path = dir.join(name);
                mask.save_pgm(&path)
                    .with_context(|| format!("writing {}", path.display()))
                    .map_err(stage_failure)?;
                println!("{} -> {}", s.label(), path.display());
            }
        }
    }
    Ok(())
}

fn file_safe(label: &str) -> String {
    label
        .chars()
        .map(|c| match c {
            '+' => 'p',
            '-' => 'm',
            '@' => 'a',
            c if c.is_ascii_alphanumeric() || c == '.' => c,
            _ => '_',
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}

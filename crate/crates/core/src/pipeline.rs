//! Experiment configs, end-to-end runs and the report artifacts.
//!
//! A run goes source → channel → counts → reconstruction → metrics, plus the
//! two-core fringe scans. Every random draw comes from a stream derived from
//! the config seed, so equal configs give byte-identical output files.

use std::f64::consts::FRAC_PI_2;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bell::{violation_sigma, MetricSet};
use crate::channel::{apply_channel, ChannelParams};
use crate::error::{Error, Result};
use crate::measurement::{
    default_sweep, expected_counts, fit_cosine, simulate_counts, stream_rng, CountsRecord,
    EfficiencyModel, MeasurementSetting, DEFAULT_SWEEP_POINTS,
};
use crate::qstate::{make_correlated_state, maximally_entangled, DensityMatrix, PureState};
use crate::tomography::{
    bootstrap_data, mle_reconstruct_data, standard_settings, BootstrapSummary, MleOptions,
    ReconstructionResult, TomographyData, MIN_RESAMPLES,
};

pub const PRESETS: [&str; 3] = ["ideal", "paper", "fig4"];

const IDEAL_PRESET: &str = include_str!("../../../presets/ideal.toml");
const PAPER_PRESET: &str = include_str!("../../../presets/paper.toml");
const FIG4_PRESET: &str = include_str!("../../../presets/fig4.toml");

pub fn preset_text(name: &str) -> Result<&'static str> {
    match name {
        "ideal" => Ok(IDEAL_PRESET),
        "paper" => Ok(PAPER_PRESET),
        "fig4" => Ok(FIG4_PRESET),
        other => Err(Error::Config(format!(
            "unknown preset {other:?} (expected one of {})",
            PRESETS.join(", ")
        ))),
    }
}

/// How coincidence counts are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistics {
    #[default]
    Poisson,
    /// Means rounded to integers; no shot noise in the primary counts.
    Expected,
}

/// Correlated source amplitudes `Σ c_i |i⟩|i⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateConfig {
    pub coefficients_re: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coefficients_im: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MleConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for MleConfig {
    fn default() -> Self {
        let o = MleOptions::default();
        Self {
            max_iterations: o.max_iterations,
            tolerance: o.tolerance,
        }
    }
}

/// Two-core fringe scans. Pairs are one-based; an empty list means the ring
/// `(1,2), (2,3), …, (d,1)`. An empty rotation list uses the channel rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FringeConfig {
    pub pairs: Vec<[usize; 2]>,
    pub phi1_rad: Vec<f64>,
    pub points: usize,
    pub rotations_deg: Vec<i32>,
}

impl Default for FringeConfig {
    fn default() -> Self {
        Self {
            pairs: Vec::new(),
            phi1_rad: vec![0.0, FRAC_PI_2],
            points: DEFAULT_SWEEP_POINTS,
            rotations_deg: Vec::new(),
        }
    }
}

fn default_integration_time() -> f64 {
    60.0
}

fn default_resamples() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub pair_rate_hz: f64,
    #[serde(default = "default_integration_time")]
    pub integration_time_s: f64,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default)]
    pub statistics: Statistics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub state: StateConfig,
    pub channel: ChannelParams,
    pub efficiency: EfficiencyModel,
    #[serde(default)]
    pub mle: MleConfig,
    #[serde(default)]
    pub fringes: FringeConfig,
}

fn config_err(e: impl fmt::Display) -> Error {
    Error::Config(e.to_string())
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(config_err)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn preset(name: &str) -> Result<Self> {
        Self::from_toml_str(preset_text(name)?)
    }

    pub fn dim(&self) -> usize {
        self.state.coefficients_re.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d < 2 {
            return Err(Error::Config(format!(
                "need at least 2 state coefficients, got {d}"
            )));
        }
        if !self.state.coefficients_im.is_empty() && self.state.coefficients_im.len() != d {
            return Err(Error::Config(format!(
                "coefficients_im has {} entries, coefficients_re has {d}",
                self.state.coefficients_im.len()
            )));
        }
        if self.channel.dim() != d {
            return Err(Error::Config(format!(
                "channel describes {} cores but the state has {d}",
                self.channel.dim()
            )));
        }
        self.channel.validate().map_err(as_config)?;
        self.efficiency.validate(d).map_err(as_config)?;
        self.source_state().map_err(as_config)?;
        if !(self.pair_rate_hz > 0.0 && self.pair_rate_hz.is_finite()) {
            return Err(Error::Config(format!(
                "pair_rate_hz must be positive, got {}",
                self.pair_rate_hz
            )));
        }
        if !(self.integration_time_s > 0.0 && self.integration_time_s.is_finite()) {
            return Err(Error::Config(format!(
                "integration_time_s must be positive, got {}",
                self.integration_time_s
            )));
        }
        if self.bootstrap_resamples < MIN_RESAMPLES {
            return Err(Error::Config(format!(
                "bootstrap_resamples must be at least {MIN_RESAMPLES}, got {}",
                self.bootstrap_resamples
            )));
        }
        if self.mle.max_iterations == 0 || !(self.mle.tolerance >= 0.0) {
            return Err(Error::Config(
                "mle needs max_iterations > 0 and tolerance >= 0".into(),
            ));
        }
        if self.fringes.points < 4 {
            return Err(Error::Config(format!(
                "fringes.points must be >= 4, got {}",
                self.fringes.points
            )));
        }
        if self.fringes.phi1_rad.is_empty() {
            return Err(Error::Config("fringes.phi1_rad is empty".into()));
        }
        for &[i, j] in &self.fringes.pairs {
            if i == j || i == 0 || j == 0 || i > d || j > d {
                return Err(Error::Config(format!(
                    "invalid fringe pair ({i}, {j}) for {d} cores"
                )));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }

    /// SHA-256 of the serialized config. The output directory is excluded so
    /// the same experiment hashes equally wherever it is written.
    pub fn config_hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = None;
        Ok(hex::encode(Sha256::digest(c.to_toml()?.as_bytes())))
    }

    pub fn source_state(&self) -> Result<PureState> {
        let c: Vec<Complex64> = self
            .state
            .coefficients_re
            .iter()
            .enumerate()
            .map(|(k, &re)| {
                Complex64::new(
                    re,
                    self.state.coefficients_im.get(k).copied().unwrap_or(0.0),
                )
            })
            .collect();
        make_correlated_state(&c)
    }

    pub fn mle_options(&self) -> MleOptions {
        MleOptions {
            max_iterations: self.mle.max_iterations,
            tolerance: self.mle.tolerance,
            ..MleOptions::default()
        }
    }

    /// Zero-based fringe pairs.
    pub fn fringe_pairs(&self) -> Vec<(usize, usize)> {
        let d = self.dim();
        if self.fringes.pairs.is_empty() {
            (0..d).map(|i| (i, (i + 1) % d)).collect()
        } else {
            self.fringes
                .pairs
                .iter()
                .map(|&[i, j]| (i - 1, j - 1))
                .collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Source,
    Channel,
    Counts,
    Reconstruction,
    Bootstrap,
    Metrics,
    Fringes,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Source => "source",
            Stage::Channel => "channel",
            Stage::Counts => "counts",
            Stage::Reconstruction => "reconstruction",
            Stage::Bootstrap => "bootstrap",
            Stage::Metrics => "metrics",
            Stage::Fringes => "fringes",
            Stage::Output => "output",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

pub type StageResult<T> = std::result::Result<T, PipelineError>;

pub trait AtStage<T> {
    fn at(self, stage: Stage) -> StageResult<T>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> StageResult<T> {
        self.map_err(|source| PipelineError { stage, source })
    }
}

const COUNTS_STREAM: u64 = 1;
const BOOTSTRAP_STREAM: u64 = 2;
const FRINGE_STREAM: u64 = 3;

/// Independent sub-seed for one consumer of randomness.
fn derive_seed(seed: u64, stream: u64) -> u64 {
    stream_rng(seed, stream).next_u64()
}

fn counts_for(
    config: &ExperimentConfig,
    rho: &DensityMatrix,
    pairs: &[(MeasurementSetting, MeasurementSetting)],
    seed: u64,
) -> Result<CountsRecord> {
    match config.statistics {
        Statistics::Poisson => simulate_counts(
            rho,
            pairs,
            config.pair_rate_hz,
            config.integration_time_s,
            &config.efficiency,
            seed,
        ),
        Statistics::Expected => expected_counts(
            rho,
            pairs,
            config.pair_rate_hz,
            config.integration_time_s,
            &config.efficiency,
        ),
    }
}

/// The state leaving the fibers.
pub fn transported_state(config: &ExperimentConfig) -> StageResult<DensityMatrix> {
    let psi = config.source_state().at(Stage::Source)?;
    apply_channel(&psi.density(), &config.channel).at(Stage::Channel)
}

/// Tomography counts for the config.
pub fn simulate(config: &ExperimentConfig) -> StageResult<CountsRecord> {
    let rho = transported_state(config)?;
    let protocol = standard_settings(config.dim()).at(Stage::Counts)?;
    counts_for(
        config,
        &rho,
        protocol.pairs(),
        derive_seed(config.seed, COUNTS_STREAM),
    )
    .at(Stage::Counts)
}

/// Fraction of one-core coincidences outside the matching-core pairs.
pub fn crosstalk_summary(counts: &CountsRecord) -> Result<f64> {
    let d = counts.dim;
    let (mut off, mut total) = (0u64, 0u64);
    for i in 0..d {
        for j in 0..d {
            let s1 = MeasurementSetting::one_core(d, i)?;
            let s2 = MeasurementSetting::one_core(d, j)?;
            let n = counts.get(&s1, &s2).ok_or_else(|| {
                Error::MissingData(format!(
                    "no counts for one-core pair {},{}",
                    s1.label(),
                    s2.label()
                ))
            })?;
            total += n;
            if i != j {
                off += n;
            }
        }
    }
    if total == 0 {
        return Err(Error::MissingData("one-core counts are all zero".into()));
    }
    Ok(off as f64 / total as f64)
}

/// One fitted fringe: photon 1 on `(|i⟩+e^{iφ₁}|j⟩)/√2`, photon 2 swept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeRow {
    /// One-based cores.
    pub i: usize,
    pub j: usize,
    pub rotation_deg: i32,
    pub phi1_rad: f64,
    pub visibility: f64,
    pub phase_offset_rad: f64,
    /// `(φ₂, counts)`.
    #[serde(skip)]
    pub points: Vec<(f64, f64)>,
}

/// Fringe scans for `pairs` (zero-based) at every configured `φ₁` and fiber
/// rotation.
pub fn fringe_report(
    config: &ExperimentConfig,
    pairs: &[(usize, usize)],
) -> StageResult<Vec<FringeRow>> {
    let d = config.dim();
    let psi = config.source_state().at(Stage::Source)?;
    let sweep = default_sweep(config.fringes.points);
    let rotations = if config.fringes.rotations_deg.is_empty() {
        vec![config.channel.rotation_1_deg]
    } else {
        config.fringes.rotations_deg.clone()
    };
    let base_seed = derive_seed(config.seed, FRINGE_STREAM);
    let mut rows = Vec::new();
    for &rotation in &rotations {
        let mut channel = config.channel.clone();
        channel.rotation_1_deg = rotation;
        let rho = apply_channel(&psi.density(), &channel).at(Stage::Channel)?;
        for &(i, j) in pairs {
            for &phi1 in &config.fringes.phi1_rad {
                let scan = || -> Result<FringeRow> {
                    let s1 = MeasurementSetting::two_core(d, i, j, phi1)?;
                    let settings = sweep
                        .iter()
                        .map(|&phi2| Ok((s1.clone(), MeasurementSetting::two_core(d, i, j, phi2)?)))
                        .collect::<Result<Vec<_>>>()?;
                    let record = counts_for(
                        config,
                        &rho,
                        &settings,
                        derive_seed(base_seed, rows.len() as u64),
                    )?;
                    let points: Vec<(f64, f64)> = sweep
                        .iter()
                        .zip(&record.entries)
                        .map(|(&phi2, e)| (phi2, e.counts as f64))
                        .collect();
                    let fit = fit_cosine(&points)?;
                    Ok(FringeRow {
                        i: i + 1,
                        j: j + 1,
                        rotation_deg: rotation,
                        phi1_rad: phi1,
                        visibility: fit.visibility(),
                        phase_offset_rad: fit.phase,
                        points,
                    })
                };
                rows.push(scan().at(Stage::Fringes)?);
            }
        }
    }
    Ok(rows)
}

pub fn mean_visibility(rows: &[FringeRow]) -> f64 {
    rows.iter().map(|r| r.visibility).sum::<f64>() / rows.len().max(1) as f64
}

/// Point estimate on the reconstructed state plus its bootstrap spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub name: String,
    pub value: f64,
    pub std: Option<f64>,
    pub bootstrap_mean: Option<f64>,
}

/// Metrics of `rho` against the maximally entangled target.
pub fn metric_rows(
    rho: &DensityMatrix,
    bootstrap: Option<&BootstrapSummary>,
) -> Result<Vec<MetricRow>> {
    let metrics = MetricSet::new(maximally_entangled(rho.dim())?)?;
    let values = metrics.evaluate(rho)?;
    Ok(metrics
        .names()
        .into_iter()
        .zip(values)
        .map(|(name, value)| {
            let b = bootstrap.and_then(|b| b.get(&name));
            MetricRow {
                name,
                value,
                std: b.map(|b| b.1),
                bootstrap_mean: b.map(|b| b.0),
            }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub reconstruction: ReconstructionResult,
    pub bootstrap: Option<BootstrapSummary>,
    pub metrics: Vec<MetricRow>,
}

/// Reconstruction, bootstrap (skipped when `resamples == 0`) and metrics.
pub fn analyze_counts(
    config: &ExperimentConfig,
    counts: &CountsRecord,
    resamples: usize,
) -> StageResult<Analysis> {
    let protocol = standard_settings(counts.dim).at(Stage::Reconstruction)?;
    let data = TomographyData::from_record(counts, &protocol, &config.efficiency)
        .at(Stage::Reconstruction)?;
    let opts = config.mle_options();
    let reconstruction = mle_reconstruct_data(&data, &opts).at(Stage::Reconstruction)?;
    let bootstrap = if resamples == 0 {
        None
    } else {
        let metrics = MetricSet::new(maximally_entangled(counts.dim).at(Stage::Bootstrap)?)
            .at(Stage::Bootstrap)?;
        let seed = derive_seed(config.seed, BOOTSTRAP_STREAM);
        Some(bootstrap_data(&data, &metrics, resamples, seed, &opts).at(Stage::Bootstrap)?)
    };
    let metrics = metric_rows(&reconstruction.rho, bootstrap.as_ref()).at(Stage::Metrics)?;
    Ok(Analysis {
        reconstruction,
        bootstrap,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    pub flux: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInfo {
    pub resamples: usize,
    pub failures: usize,
    pub unconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
    pub package: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dim: usize,
    pub metrics: Vec<MetricRow>,
    /// `(I_d − 2)/σ(I_d)`, absent when the spread is zero.
    pub violation_sigma: Option<f64>,
    pub crosstalk: f64,
    pub mean_fringe_visibility: f64,
    pub fringes: Vec<FringeRow>,
    pub reconstruction: FitSummary,
    pub bootstrap: BootstrapInfo,
    pub provenance: Provenance,
}

impl Report {
    pub fn metric(&self, name: &str) -> Option<&MetricRow> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut out = String::from("metric,value,std,bootstrap_mean\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.name,
            r.value,
            opt(r.std),
            opt(r.bootstrap_mean)
        );
    }
    out
}

/// Real and imaginary parts of every element, labelled by one-based
/// `(core₁ core₂)` kets.
pub fn rho_bars_csv(rho: &DensityMatrix) -> String {
    let d = rho.dim();
    let mut out = String::from("row,col,re,im\n");
    for r in 0..d * d {
        for c in 0..d * d {
            let z = rho.matrix()[(r, c)];
            let _ = writeln!(
                out,
                "{}{},{}{},{},{}",
                r / d + 1,
                r % d + 1,
                c / d + 1,
                c % d + 1,
                z.re,
                z.im
            );
        }
    }
    out
}

pub fn fringes_csv(rows: &[FringeRow]) -> String {
    let mut out =
        String::from("i,j,rotation_deg,phi1_rad,phi2_rad,counts,visibility,phase_offset_rad\n");
    for r in rows {
        for &(phi2, n) in &r.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.i, r.j, r.rotation_deg, r.phi1_rad, phi2, n, r.visibility, r.phase_offset_rad
            );
        }
    }
    out
}

fn write(dir: &Path, name: &str, contents: &str) -> StageResult<()> {
    std::fs::write(dir.join(name), contents)
        .map_err(Error::from)
        .at(Stage::Output)
}

/// Runs every stage. Artifacts land in `out` (or the config's
/// `output_dir`) as soon as their stage finishes, so a failed run keeps
/// what it produced.
pub fn run_experiment(config: &ExperimentConfig, out: Option<&Path>) -> StageResult<Report> {
    config.validate().at(Stage::Config)?;
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone());
    if let Some(dir) = &dir {
        std::fs::create_dir_all(dir)
            .map_err(Error::from)
            .at(Stage::Output)?;
        let mut resolved = config.clone();
        resolved.output_dir = None;
        write(dir, "config.toml", &resolved.to_toml().at(Stage::Config)?)?;
    }

    let counts = simulate(config)?;
    if let Some(dir) = &dir {
        write(dir, "counts.csv", &counts.to_table())?;
    }
    let crosstalk = crosstalk_summary(&counts).at(Stage::Counts)?;

    let analysis = analyze_counts(config, &counts, config.bootstrap_resamples)?;
    if let Some(dir) = &dir {
        analysis
            .reconstruction
            .save_json(&dir.join("rho.json"))
            .at(Stage::Output)?;
        write(
            dir,
            "rho_bars.csv",
            &rho_bars_csv(&analysis.reconstruction.rho),
        )?;
        write(dir, "metrics.csv", &metrics_csv(&analysis.metrics))?;
    }

    let fringes = fringe_report(config, &config.fringe_pairs())?;
    if let Some(dir) = &dir {
        write(dir, "fringes.csv", &fringes_csv(&fringes))?;
    }

    let bell_name = format!("I{}", config.dim());
    let violation = analysis
        .metrics
        .iter()
        .find(|m| m.name == bell_name)
        .and_then(|m| m.std.and_then(|s| violation_sigma(m.value, s).ok()));
    let rec = &analysis.reconstruction;
    let boot = analysis.bootstrap.as_ref();
    let report = Report {
        dim: config.dim(),
        metrics: analysis.metrics.clone(),
        violation_sigma: violation,
        crosstalk,
        mean_fringe_visibility: mean_visibility(&fringes),
        fringes,
        reconstruction: FitSummary {
            log_likelihood: rec.log_likelihood,
            iterations: rec.iterations,
            converged: rec.converged,
            residual: rec.residual,
            flux: rec.flux,
        },
        bootstrap: BootstrapInfo {
            resamples: boot.map_or(0, |b| b.resamples),
            failures: boot.map_or(0, |b| b.failures),
            unconverged: boot.map_or(0, |b| b.unconverged),
        },
        provenance: Provenance {
            config_sha256: config.config_hash().at(Stage::Config)?,
            seed: config.seed,
            package: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    };
    if let Some(dir) = &dir {
        write(dir, "report.json", &report.to_json().at(Stage::Output)?)?;
    }
    Ok(report)
}

/// Resolves the config a CLI invocation refers to.
pub fn resolve_config(
    path: Option<&Path>,
    preset: Option<&str>,
    seed: Option<u64>,
) -> Result<ExperimentConfig> {
    let mut config = match (path, preset) {
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "give either a config file or a preset, not both".into(),
            ))
        }
        (Some(p), None) => ExperimentConfig::load(p)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => return Err(Error::Config("no config file or preset given".into())),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

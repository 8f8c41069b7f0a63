use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use dephasing_core::schedule::{PlateSchedule, ARM_MAX, DEFAULT_STEP, PRESET_OFFSETS, TOTAL_MAX};
use dephasing_core::spectra::{AmplitudeGrid, Characteristic, GaussianJointSpectrum};
use dephasing_core::synthlab::{default_synth_points, CountingPlan};
use dephasing_core::Complex64;
use serde::Deserialize;

/// Invalid or inconsistent run configuration. Maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelConfig>,
    pub grid: Option<GridConfig>,
    pub offset: Option<f64>,
    pub step: Option<f64>,
    pub offsets: Option<Vec<f64>>,
    pub counting: Option<CountingConfig>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub outputs: OutputsConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "unit")]
    pub a: f64,
    /// Decay per λ₀². Give this or `u`, not both.
    pub b: Option<f64>,
    pub u: Option<f64>,
    pub k: f64,
    #[serde(default)]
    pub m1: f64,
    #[serde(default)]
    pub m2: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub path: PathBuf,
    #[serde(default = "unit")]
    pub a: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountingConfig {
    pub total_expected: f64,
    pub duration_s: f64,
    pub points: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    pub trajectory: Option<PathBuf>,
    pub family: Option<PathBuf>,
    pub noisy: Option<PathBuf>,
    pub fit: Option<PathBuf>,
}

fn unit() -> f64 {
    1.0
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub step: Option<f64>,
    pub offset: Option<f64>,
    pub out: Option<PathBuf>,
}

pub enum Environment {
    Gaussian(GaussianJointSpectrum),
    Grid(Box<AmplitudeGrid>),
}

impl Characteristic for Environment {
    fn characteristic(&self, x1: f64, x2: f64) -> dephasing_core::Result<Complex64> {
        match self {
            Environment::Gaussian(s) => s.characteristic(x1, x2),
            Environment::Grid(g) => g.characteristic(x1, x2),
        }
    }
}

/// A validated configuration, ready to drive a subcommand.
pub struct Run {
    pub env: Environment,
    pub a: f64,
    pub schedule: PlateSchedule,
    pub step: f64,
    pub offsets: Vec<f64>,
    pub counting: Option<(CountingPlan, Vec<f64>)>,
    pub seed: u64,
    pub outputs: OutputsConfig,
    pub out: Option<PathBuf>,
}

impl Run {
    pub fn resolve(cfg: RunConfig, ov: Overrides) -> Result<Self, ConfigError> {
        let (env, a) = match (cfg.model, cfg.grid) {
            (Some(m), None) => {
                let b = match (m.b, m.u) {
                    (Some(b), None) => b,
                    (None, Some(u)) => u / (ARM_MAX * ARM_MAX),
                    _ => return invalid("model: give exactly one of `b` or `u`"),
                };
                let spec = GaussianJointSpectrum::with_means(b, m.k, m.m1, m.m2)
                    .map_err(|e| ConfigError(format!("model: {e}")))?;
                (Environment::Gaussian(spec), m.a)
            }
            (None, Some(g)) => {
                let file = File::open(&g.path).map_err(|e| ConfigError(format!("grid {}: {e}", g.path.display())))?;
                let grid = AmplitudeGrid::read_csv(BufReader::new(file))
                    .map_err(|e| ConfigError(format!("grid {}: {e}", g.path.display())))?;
                (Environment::Grid(Box::new(grid)), g.a)
            }
            (None, None) => return invalid("config needs a `model` or a `grid`"),
            (Some(_), Some(_)) => return invalid("config has both `model` and `grid`; give exactly one"),
        };
        if !(a > 0.0 && a <= 1.0) {
            return invalid(format!("amplitude a = {a} must lie in (0, 1]"));
        }

        let offset = ov.offset.or(cfg.offset).unwrap_or(ARM_MAX);
        let schedule = PlateSchedule::new(offset).map_err(|e| ConfigError(format!("offset: {e}")))?;
        let step = ov.step.or(cfg.step).unwrap_or(DEFAULT_STEP);
        if !(step > 0.0 && step <= TOTAL_MAX) {
            return invalid(format!("step {step} must lie in (0, {TOTAL_MAX}]"));
        }
        let offsets = cfg.offsets.unwrap_or_else(|| PRESET_OFFSETS.to_vec());
        if let Some(o) = offsets.iter().find(|o| !(0.0..=ARM_MAX).contains(*o)) {
            return invalid(format!("offsets: {o} outside [0, {ARM_MAX}]"));
        }
        let counting = cfg
            .counting
            .map(|c| {
                let plan = CountingPlan::new(c.total_expected, c.duration_s).map_err(|e| ConfigError(format!("counting: {e}")))?;
                let points = c.points.unwrap_or_else(default_synth_points);
                if points.is_empty() {
                    return invalid("counting.points is empty");
                }
                if let Some(x) = points.iter().find(|x| !(0.0..=TOTAL_MAX).contains(*x)) {
                    return invalid(format!("counting.points: {x} outside [0, {TOTAL_MAX}]"));
                }
                Ok((plan, points))
            })
            .transpose()?;

        Ok(Run {
            env,
            a,
            schedule,
            step,
            offsets,
            counting,
            seed: ov.seed.or(cfg.seed).unwrap_or(0),
            outputs: cfg.outputs,
            out: ov.out,
        })
    }

    /// `--out` when given, otherwise the named file from `outputs`.
    pub fn output(&self, from_file: &Option<PathBuf>, what: &str) -> Result<PathBuf, ConfigError> {
        self.out
            .clone()
            .or_else(|| from_file.clone())
            .ok_or_else(|| ConfigError(format!("no output path for the {what}; pass --out or set outputs.{what}")))
    }
}

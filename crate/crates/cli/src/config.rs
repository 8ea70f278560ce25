//! TOML experiment configuration: one table per command.

use serde::Deserialize;

use noma_core::fbl::{DispersionMode, DEFAULT_NODES};
use noma_core::planner::RiskAllocation;

use crate::CliError;

pub const DEFAULT_TRIALS: u64 = 1_000_000;
pub const DEFAULT_SEED: u64 = 1;
pub const MIN_TRIALS: u64 = 1_000;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// A list of values or an inclusive `start..=stop` range with a step.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl Grid {
    pub fn values(&self, name: &str) -> Result<Vec<f64>, CliError> {
        let v = match *self {
            Grid::List(ref v) => v.clone(),
            Grid::Range { start, stop, step } => {
                if !(step > 0.0) || !(stop >= start) {
                    return Err(CliError::Config(format!(
                        "{name}: range needs step > 0 and stop >= start"
                    )));
                }
                let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
                (0..count).map(|i| start + i as f64 * step).collect()
            }
        };
        if v.is_empty() {
            return Err(CliError::Config(format!("{name}: grid is empty")));
        }
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(CliError::Config(format!("{name}: non-finite value {bad}")));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(rename = "outage-sweep")]
    pub outage_sweep: Option<OutageSweepConfig>,
    #[serde(rename = "fbl-sweep")]
    pub fbl_sweep: Option<FblSweepConfig>,
    #[serde(rename = "moment-check")]
    pub moment_check: Option<MomentCheckConfig>,
    pub plan: Option<PlanConfig>,
    pub linklevel: Option<LinklevelConfig>,
    #[serde(rename = "sic-sim")]
    pub sic_sim: Option<SicSimConfig>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Seed and trial count shared by every table; CLI flags override both.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunSettings {
    pub seed: Option<u64>,
    pub trials: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolved {
    pub seed: u64,
    pub trials: u64,
}

impl RunSettings {
    pub fn resolve(&self, seed: Option<u64>, trials: Option<u64>) -> Result<Resolved, CliError> {
        let trials = trials.or(self.trials).unwrap_or(DEFAULT_TRIALS);
        if trials < MIN_TRIALS {
            return Err(CliError::Config(format!(
                "trials must be at least {MIN_TRIALS}, got {trials}"
            )));
        }
        Ok(Resolved {
            seed: seed.or(self.seed).unwrap_or(DEFAULT_SEED),
            trials,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutageSweepConfig {
    pub copies: Vec<u32>,
    pub interferers: Vec<u32>,
    pub thresholds: Grid,
    pub snr_db: Grid,
    /// Also simulate the surrogate model (rows with `M >= 1`).
    #[serde(default = "yes")]
    pub omega: bool,
    pub seed: Option<u64>,
    pub trials: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointConfig {
    pub copies: u32,
    pub interferers: u32,
    pub label: Option<String>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DyadicLayout {
    pub blocks: usize,
    pub layers: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FblSweepConfig {
    /// Explicit `(D, M)` points.
    #[serde(default)]
    pub points: Vec<PointConfig>,
    /// Or one point per layer of a dyadic frame.
    pub layout: Option<DyadicLayout>,
    pub rates: Grid,
    pub n: Vec<u64>,
    pub snr_db: Grid,
    #[serde(default = "exact_v")]
    pub dispersion: DispersionMode,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default = "yes")]
    pub simulate: bool,
    pub seed: Option<u64>,
    pub trials: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentCheckConfig {
    /// `[D, M]` pairs.
    pub pairs: Vec<[u32; 2]>,
    pub seed: Option<u64>,
    pub trials: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanModeName {
    DesignRule,
    Dyadic,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub layers: usize,
    pub snr_db: f64,
    pub mode: PlanModeName,
    /// Frame length for dyadic mode.
    pub blocks: Option<usize>,
    /// `T` in the layer-size rule for design-rule mode (defaults to
    /// `threshold`).
    pub design_threshold: Option<f64>,
    /// Fixed per-layer threshold; exclusive with `eps_target`.
    pub threshold: Option<f64>,
    pub eps_target: Option<f64>,
    #[serde(default)]
    pub allocation: RiskAllocation,
    pub seed: Option<u64>,
    pub trials: Option<u64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkCase {
    pub blocks: usize,
    pub layers: usize,
    /// 0-based user index in the frame.
    #[serde(default)]
    pub user: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinklevelConfig {
    pub cases: Vec<LinkCase>,
    pub rates: Grid,
    pub n: Vec<u64>,
    pub snr_db: Grid,
    /// Trials of the SINR-model reference (defaults to `trials`).
    pub model_trials: Option<u64>,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    pub seed: Option<u64>,
    pub trials: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionName {
    Outage,
    FiniteBlocklength,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SicSimConfig {
    pub blocks: usize,
    pub layers: usize,
    pub snr_db: Grid,
    /// Exactly one of `thresholds`, `eps_target` (planner) or
    /// `genie_quantile` (empirical tuning) selects the layer thresholds.
    pub thresholds: Option<Vec<f64>>,
    pub eps_target: Option<f64>,
    pub genie_quantile: Option<f64>,
    #[serde(default = "outage_decision")]
    pub decision: DecisionName,
    pub n: Option<u64>,
    pub seed: Option<u64>,
    pub trials: Option<u64>,
}

macro_rules! run_settings {
    ($($t:ty),*) => {$(
        impl $t {
            pub fn run(&self) -> RunSettings {
                RunSettings { seed: self.seed, trials: self.trials }
            }
        }
    )*};
}

run_settings!(
    OutageSweepConfig,
    FblSweepConfig,
    MomentCheckConfig,
    PlanConfig,
    LinklevelConfig,
    SicSimConfig
);

fn yes() -> bool {
    true
}

fn exact_v() -> DispersionMode {
    DispersionMode::ExactV
}

fn default_nodes() -> usize {
    DEFAULT_NODES
}

fn outage_decision() -> DecisionName {
    DecisionName::Outage
}

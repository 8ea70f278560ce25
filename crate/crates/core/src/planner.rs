//! Threshold, rate and layout planning from the closed-form outage bound.

use serde::{Deserialize, Serialize};

use crate::bounds::{interferers_supported, outage_bound, outage_prediction, sufficient_condition};
use crate::channel::{build_layout, build_layout_custom, FrameLayout, LayoutDescription};
use crate::error::{domain, Error, Result};

const T_FLOOR: f64 = 1e-6;
const REL_TOL: f64 = 1e-6;
const MAX_DOUBLINGS: usize = 200;

/// `R = log2(1 + T)`.
pub fn rate_for_layer(threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(domain(format!(
            "threshold must be positive and finite, got {threshold}"
        )));
    }
    Ok(threshold.ln_1p() * std::f64::consts::LOG2_E)
}

/// `T = 2^R - 1`.
pub fn threshold_for_rate(rate: f64) -> Result<f64> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(domain(format!(
            "rate must be positive and finite, got {rate}"
        )));
    }
    Ok((rate * std::f64::consts::LN_2).exp_m1())
}

/// Largest `T` whose predicted outage (see
/// [`crate::bounds::outage_prediction`]) stays at or below `eps_target`.
///
/// The bracket `[1e-6, T_max]` is found by doubling until the prediction
/// exceeds the target; the prediction is checked to be nondecreasing on
/// those grid points (a warning is logged otherwise) and the bracket is
/// then bisected to a relative width of 1e-6.
pub fn solve_threshold(copies: u32, interferers: u32, snr: f64, eps_target: f64) -> Result<f64> {
    if !(eps_target > 0.0 && eps_target < 0.5) {
        return Err(domain(format!(
            "target outage must lie in (0, 0.5), got {eps_target}"
        )));
    }
    let f = |t: f64| outage_prediction(copies, interferers, t, snr);
    if f(T_FLOOR)? > eps_target {
        return Err(Error::Infeasible(format!(
            "outage at T = {T_FLOOR:e} already exceeds {eps_target:e} (D={copies}, M={interferers}, snr={snr})"
        )));
    }
    let mut lo = T_FLOOR;
    let mut prev = f(lo)?;
    let mut hi = None;
    let mut monotone = true;
    for _ in 0..MAX_DOUBLINGS {
        let t = lo * 2.0;
        let v = f(t)?;
        monotone &= v >= prev;
        prev = v;
        if v > eps_target {
            hi = Some(t);
            break;
        }
        lo = t;
    }
    if !monotone {
        log::warn!("outage prediction is not monotone in T on the bracket (D={copies}, M={interferers}, snr={snr})");
    }
    let mut hi = hi.ok_or_else(|| Error::Infeasible("no threshold exceeds the target".into()))?;
    while (hi - lo) > REL_TOL * lo {
        let mid = 0.5 * (lo + hi);
        if f(mid)? <= eps_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// `rho_1 = eps_1`, `rho_b = rho_{b-1} + prod_{b'<b}(1 - eps_b') eps_b`.
pub fn propagated_error(eps: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = eps.iter().find(|e| !(0.0..=1.0).contains(*e)) {
        return Err(domain(format!(
            "probabilities must lie in [0, 1], got {bad}"
        )));
    }
    let mut survive = 1.0;
    let mut rho = 0.0;
    let mut out = Vec::with_capacity(eps.len());
    let mut sum = 0.0;
    for &e in eps {
        rho += survive * e;
        survive *= 1.0 - e;
        sum += e;
        debug_assert!(rho <= sum * (1.0 + 1e-12));
        out.push(rho);
    }
    Ok(out)
}

/// How layer sizes are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PlanMode {
    /// `D_(b) = 4 T 2^{(B-b)/2}` rounded up to a divisor of the frame length.
    DesignRule { threshold: f64 },
    /// `D_(b) = L / 2^{b-1}` for a given `L`.
    Dyadic { blocks: usize },
}

/// What fixes the per-layer thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum PlanTarget {
    /// The same threshold for every layer.
    Threshold(f64),
    /// Thresholds solved from a target outage.
    Outage(f64),
}

/// How an outage target is shared between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskAllocation {
    /// Each layer gets the full target (equal `eps_b`).
    #[default]
    PerLayer,
    /// Each layer gets `target / B`, so the union bound on `rho_B` meets the
    /// target.
    SplitTotal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub layers: usize,
    pub snr: f64,
    pub mode: PlanMode,
    pub target: PlanTarget,
    #[serde(default)]
    pub allocation: RiskAllocation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub layer: usize,
    pub copies: usize,
    pub users: usize,
    pub interferers: usize,
    /// `D_(b)` minus the unrounded design value (0 in dyadic mode).
    pub copies_slack: f64,
    pub threshold: Option<f64>,
    pub rate: Option<f64>,
    pub predicted_eps: Option<f64>,
    /// Union bound `sum_{b' <= b} eps_b'`.
    pub rho_bound: Option<f64>,
    /// `rho_b` from the SIC recursion.
    pub rho: Option<f64>,
    /// `d > 0`, so the closed-form bound applies.
    pub bound_valid: bool,
    /// `M_(b) <= 2 log2(D_(b) / (4 T_(b)))`.
    pub interferers_supported: bool,
    /// `2^{1 + M/2} < (D + 1) / (2T)`.
    pub sufficient_condition: bool,
    pub issues: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub blocks: usize,
    pub layer_count: usize,
    pub snr: f64,
    pub target_eps: Option<f64>,
    pub allocation: RiskAllocation,
    pub layout: LayoutDescription,
    pub layers: Vec<LayerEntry>,
}

impl LayerPlan {
    pub fn is_feasible(&self) -> bool {
        self.layers.iter().all(|l| l.issues.is_empty())
    }

    pub fn frame_layout(&self) -> Result<FrameLayout> {
        FrameLayout::try_from(self.layout.clone())
    }
}

fn smallest_divisor_at_least(n: usize, lower: usize) -> usize {
    (lower.max(1)..=n)
        .find(|d| n.is_multiple_of(*d))
        .unwrap_or(n)
}

/// Layer sizes `(D_(b), slack)` and frame length for the design rule.
fn design_rule_sizes(layers: usize, threshold: f64) -> Result<(usize, Vec<(usize, f64)>)> {
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(domain(format!(
            "design threshold must be positive and finite, got {threshold}"
        )));
    }
    let raw: Vec<f64> = (1..=layers)
        .map(|b| 4.0 * threshold * 2f64.powf((layers - b) as f64 / 2.0))
        .collect();
    let ceil: Vec<usize> = raw
        .iter()
        .map(|r| ((r - 1e-9).ceil() as usize).max(1))
        .collect();
    let blocks = ceil
        .iter()
        .enumerate()
        .map(|(i, &d)| d.checked_mul(1usize << i))
        .try_fold(0usize, |acc, v| v.map(|v| acc.max(v)))
        .ok_or_else(|| domain("frame length overflows"))?;
    let sizes = ceil
        .iter()
        .zip(&raw)
        .map(|(&d, &r)| {
            let adj = smallest_divisor_at_least(blocks, d);
            (adj, adj as f64 - r)
        })
        .collect();
    Ok((blocks, sizes))
}

/// Builds a layer plan. Rule violations are reported per layer in
/// `issues`; the plan is returned either way.
pub fn plan_frame(req: &PlanRequest) -> Result<LayerPlan> {
    let b_count = req.layers;
    if b_count == 0 || b_count > 32 {
        return Err(domain(format!(
            "layer count must be in 1..=32, got {b_count}"
        )));
    }
    if !(req.snr > 0.0) || !req.snr.is_finite() {
        return Err(domain(format!(
            "snr must be positive and finite, got {}",
            req.snr
        )));
    }
    let layout = match req.mode {
        PlanMode::DesignRule { threshold } => {
            let (blocks, sizes) = design_rule_sizes(b_count, threshold)?;
            let specs: Vec<(usize, usize)> = sizes.iter().map(|&(d, _)| (d, blocks / d)).collect();
            (
                build_layout_custom(&specs)?,
                sizes.iter().map(|s| s.1).collect::<Vec<_>>(),
            )
        }
        PlanMode::Dyadic { blocks } => (build_layout(blocks, b_count)?, vec![0.0; b_count]),
    };
    let (layout, slack) = layout;
    let (target_eps, per_layer_eps) = match req.target {
        PlanTarget::Outage(eps) => {
            let share = match req.allocation {
                RiskAllocation::PerLayer => eps,
                RiskAllocation::SplitTotal => eps / b_count as f64,
            };
            (Some(eps), Some(share))
        }
        PlanTarget::Threshold(t) => {
            if !(t > 0.0) || !t.is_finite() {
                return Err(domain(format!(
                    "threshold must be positive and finite, got {t}"
                )));
            }
            (None, None)
        }
    };

    let mut entries = Vec::with_capacity(b_count);
    for (spec, &copies_slack) in layout.layers().iter().zip(&slack) {
        let (d, m) = (spec.copies as u32, spec.interferers as u32);
        let mut issues = Vec::new();
        let threshold = match (req.target, per_layer_eps) {
            (PlanTarget::Threshold(t), _) => Some(t),
            (_, Some(eps)) => match solve_threshold(d, m, req.snr, eps) {
                Ok(t) => Some(t),
                Err(e) => {
                    issues.push(format!("no threshold meets the target: {e}"));
                    None
                }
            },
            _ => unreachable!("outage target always carries a share"),
        };
        let (mut bound_valid, mut supported, mut sufficient) = (false, false, false);
        let mut predicted = None;
        if let Some(t) = threshold {
            bound_valid = m == 0 || outage_bound(d, m, t, req.snr)?.valid;
            // the rule limits interference; a layer without any is always supported
            supported = m == 0 || interferers_supported(d, m, t);
            sufficient = sufficient_condition(d, m, t);
            predicted = Some(outage_prediction(d, m, t, req.snr)?);
            if !bound_valid {
                issues.push("closed-form bound does not apply (d <= 0)".into());
            }
            if !supported {
                issues.push(format!(
                    "M = {m} exceeds 2 log2(D / (4T)) for D = {d}, T = {t:.6}"
                ));
            }
        }
        entries.push(LayerEntry {
            layer: spec.index,
            copies: spec.copies,
            users: spec.users,
            interferers: spec.interferers,
            copies_slack,
            threshold,
            rate: threshold.map(rate_for_layer).transpose()?,
            predicted_eps: predicted,
            rho_bound: None,
            rho: None,
            bound_valid,
            interferers_supported: supported,
            sufficient_condition: sufficient,
            issues,
        });
    }

    // propagation is defined up to the first layer without a prediction
    let eps: Vec<f64> = entries.iter().map_while(|e| e.predicted_eps).collect();
    let rho = propagated_error(&eps)?;
    let mut sum = 0.0;
    for ((entry, e), r) in entries.iter_mut().zip(&eps).zip(rho) {
        sum += e;
        entry.rho_bound = Some(sum.min(1.0));
        entry.rho = Some(r);
    }

    Ok(LayerPlan {
        blocks: layout.blocks(),
        layer_count: b_count,
        snr: req.snr,
        target_eps,
        allocation: req.allocation,
        layout: layout.description(),
        layers: entries,
    })
}

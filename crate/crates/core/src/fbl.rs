//! Finite-blocklength error analysis under the normal approximation.
//!
//! The `O(log2(n) / (2n))` correction of the normal approximation is dropped
//! throughout.

use serde::{Deserialize, Serialize};

use crate::bounds::outage_prediction;
use crate::error::{domain, Error, Result};
use crate::montecarlo::{MeanEstimate, SinrSampleSet};
use crate::numerics::{q_function, q_inverse, QuadratureRule};

/// `(log2 e)^2 = 1 / ln^2 2`, the supremum of the dispersion.
pub const VBAR: f64 = std::f64::consts::LOG2_E * std::f64::consts::LOG2_E;

pub const DEFAULT_NODES: usize = 96;
const REFERENCE_NODES: usize = 960;
const REFERENCE_SPAN: f64 = 10.0;
const QUADRATURE_WARN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DispersionMode {
    ExactV,
    Vbar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FblConfig {
    pub n: u64,
    pub rate: f64,
    pub dispersion_mode: DispersionMode,
    pub nodes: usize,
}

impl FblConfig {
    pub fn new(n: u64, rate: f64, dispersion_mode: DispersionMode) -> Result<Self> {
        if n < 2 {
            return Err(domain(format!("blocklength must be at least 2, got {n}")));
        }
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(domain(format!(
                "rate must be positive and finite, got {rate}"
            )));
        }
        Ok(Self {
            n,
            rate,
            dispersion_mode,
            nodes: DEFAULT_NODES,
        })
    }

    pub fn with_nodes(mut self, nodes: usize) -> Self {
        self.nodes = nodes;
        self
    }
}

/// Channel dispersion `V(g) = g (2 + g) / (1 + g)^2 (log2 e)^2`.
pub fn dispersion(gamma: f64) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(domain(format!("dispersion needs gamma >= 0, got {gamma}")));
    }
    if gamma.is_infinite() {
        return Ok(VBAR);
    }
    // 1 - 1/(1+g)^2, written to keep precision at both ends
    let inv = 1.0 / (1.0 + gamma);
    Ok(gamma * (2.0 + gamma) * inv * inv * VBAR)
}

fn mode_dispersion(gamma: f64, mode: DispersionMode) -> Result<f64> {
    match mode {
        DispersionMode::ExactV => dispersion(gamma),
        DispersionMode::Vbar => Ok(VBAR),
    }
}

/// `log2(1 + g) - sqrt(V / n) Q^{-1}(eps)`. With `Vbar` this is a lower
/// bound on the exact-dispersion value whenever `eps < 1/2`.
pub fn rate_normal_approx(n: u64, epsilon: f64, gamma: f64, mode: DispersionMode) -> Result<f64> {
    if n == 0 {
        return Err(domain("blocklength must be positive"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let v = mode_dispersion(gamma, mode)?;
    Ok(gamma.ln_1p() * std::f64::consts::LOG2_E - (v / n as f64).sqrt() * q_inverse(epsilon)?)
}

/// Normal-approximation error of one codeword at SINR `gamma`:
/// `Q(sqrt(n / V(g)) (log2(1 + g) - R))`.
pub fn codeword_error(gamma: f64, rate: f64, n: u64, mode: DispersionMode) -> f64 {
    let capacity = gamma.max(0.0).ln_1p() * std::f64::consts::LOG2_E;
    let v = mode_dispersion(gamma.max(0.0), mode).unwrap_or(VBAR);
    if v == 0.0 {
        return if capacity > rate { 0.0 } else { 1.0 };
    }
    q_function((n as f64 / v).sqrt() * (capacity - rate))
}

/// Threshold `2^{sqrt(Vbar/n) x + R} - 1` for the Gaussian variable `x`.
fn threshold_at(x: f64, rate: f64, n: u64) -> f64 {
    ((VBAR / n as f64).sqrt() * x + rate).exp2() - 1.0
}

fn check_error_args(copies: u32, rate: f64, n: u64, snr: f64) -> Result<()> {
    if copies == 0 {
        return Err(domain("D must be at least 1"));
    }
    if n < 2 {
        return Err(domain(format!("blocklength must be at least 2, got {n}")));
    }
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(domain(format!(
            "rate must be positive and finite, got {rate}"
        )));
    }
    if !(snr > 0.0) || !snr.is_finite() {
        return Err(domain(format!(
            "snr must be positive and finite, got {snr}"
        )));
    }
    Ok(())
}

fn error_integrand(
    copies: u32,
    interferers: u32,
    rate: f64,
    n: u64,
    snr: f64,
) -> impl Fn(f64) -> f64 {
    move |x| {
        let t = threshold_at(x, rate, n);
        if !(t > 0.0) {
            return 0.0;
        }
        if !t.is_finite() {
            return 1.0;
        }
        outage_prediction(copies, interferers, t, snr).map_or(1.0, |p| p.clamp(0.0, 1.0))
    }
}

/// Upper bound on the average codeword error:
/// `E_x[ Pr(gamma < 2^{sqrt(Vbar/n) x + R} - 1) ]`, `x ~ N(0, 1)`.
///
/// The inner probability is the closed-form outage bound (the exact cdf for
/// `M = 0`), clamped to 1, and set to 1 where the bound does not apply.
pub fn avg_error_upper(
    copies: u32,
    interferers: u32,
    rate: f64,
    n: u64,
    snr: f64,
    nodes: usize,
) -> Result<f64> {
    check_error_args(copies, rate, n, snr)?;
    let rule = QuadratureRule::gauss_hermite(nodes)?;
    let f = error_integrand(copies, interferers, rate, n, snr);
    Ok(rule.expectation(f).clamp(0.0, 1.0))
}

/// Outcome of the quadrature cross-check in [`avg_error_upper_checked`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureCheck {
    pub value: f64,
    pub reference: f64,
    pub discrepancy: f64,
}

/// [`avg_error_upper`] plus a 960-node Gauss-Legendre evaluation over
/// `[-10, 10]`; logs a warning when the two differ by more than 1e-6.
pub fn avg_error_upper_checked(
    copies: u32,
    interferers: u32,
    rate: f64,
    n: u64,
    snr: f64,
    nodes: usize,
) -> Result<QuadratureCheck> {
    let value = avg_error_upper(copies, interferers, rate, n, snr, nodes)?;
    let rule = QuadratureRule::gauss_legendre(REFERENCE_NODES, -REFERENCE_SPAN, REFERENCE_SPAN)?;
    let reference = rule
        .expectation(error_integrand(copies, interferers, rate, n, snr))
        .clamp(0.0, 1.0);
    let discrepancy = (value - reference).abs();
    if discrepancy > QUADRATURE_WARN {
        log::warn!(
            "quadrature mismatch {discrepancy:.3e} at D={copies} M={interferers} R={rate} n={n} snr={snr}"
        );
    }
    Ok(QuadratureCheck {
        value,
        reference,
        discrepancy,
    })
}

/// Sample mean of [`codeword_error`] over SINR draws.
pub fn avg_error_mc(
    samples: &SinrSampleSet,
    rate: f64,
    n: u64,
    mode: DispersionMode,
) -> Result<MeanEstimate> {
    if samples.values.is_empty() {
        return Err(Error::EmptySamples);
    }
    if n < 2 {
        return Err(domain(format!("blocklength must be at least 2, got {n}")));
    }
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(domain(format!(
            "rate must be positive and finite, got {rate}"
        )));
    }
    Ok(MeanEstimate::from_values(
        samples
            .values
            .iter()
            .map(|&g| codeword_error(g, rate, n, mode)),
    ))
}

//! Closed-form outage expressions.
//!
//! Notation follows the usual repetition-NOMA analysis: a user sends `D`
//! copies, each copy sees `M` co-channel interferers, `T` is the SINR
//! threshold and `snr` the linear per-copy SNR. The interference term is
//! replaced by a chi-squared surrogate with `2NM` degrees of freedom,
//! `N = (D+1)/2`, which matches the first two moments of the true term.
//!
//! Everything that involves factorials, binomials or large powers is
//! evaluated in the log domain and exponentiated once, so `D = 64` and
//! `MN ~ 130` stay finite.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numerics::{ln_gamma_unchecked, log_sum_exp, regularized_lower_gamma};

/// Terms more than this many nats below the running maximum are dropped
/// from the `psi` sum (a relative contribution below 1e-18).
const LOG_SUM_CUTOFF: f64 = 41.446_531_673_892_82; // ln(1e18)

/// Parameters shared by every closed-form expression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub copies: u32,
    pub interferers: u32,
    pub threshold: f64,
    pub snr: f64,
}

impl BoundInputs {
    pub fn new(copies: u32, interferers: u32, threshold: f64, snr: f64) -> Result<Self> {
        if copies == 0 {
            return Err(domain("D must be at least 1"));
        }
        if !(threshold > 0.0) || !threshold.is_finite() {
            return Err(domain(format!(
                "threshold must be positive and finite, got {threshold}"
            )));
        }
        if !(snr > 0.0) || !snr.is_finite() {
            return Err(domain(format!(
                "snr must be positive and finite, got {snr}"
            )));
        }
        Ok(Self {
            copies,
            interferers,
            threshold,
            snr,
        })
    }

    /// Moment-matched degrees-of-freedom parameter `N = (D+1)/2`.
    pub fn n_match(&self) -> f64 {
        matched_dof(self.copies)
    }

    pub fn c_d(&self) -> f64 {
        correction_c(self.copies)
    }

    /// `d = D / (c_D T) - 1/snr`; the closed-form bound needs `d > 0`.
    pub fn d(&self) -> f64 {
        f64::from(self.copies) / (self.c_d() * self.threshold) - 1.0 / self.snr
    }

    /// `T / N`, the per-dof threshold used by the design rules.
    pub fn rho_tn(&self) -> f64 {
        self.threshold / self.n_match()
    }
}

pub fn matched_dof(copies: u32) -> f64 {
    (f64::from(copies) + 1.0) / 2.0
}

/// `c_D = D e^{-1} (D!)^{-1/D}`, computed as
/// `exp(ln D - 1 - lnGamma(D+1)/D)`.
pub fn correction_c(copies: u32) -> f64 {
    let d = f64::from(copies.max(1));
    (d.ln() - 1.0 - ln_gamma_unchecked(d + 1.0) / d).exp()
}

/// Chernoff-type bounds on the cdf of `Z_D = chi^2_{2D} / (2D)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChernoffBounds {
    /// Corrected left-tail bound `F_D(z) = (z c_D e^{1 - z c_D})^D`, defined
    /// on `[0, 1/c_D]`.
    pub left: Option<f64>,
    /// Right-tail bound on `Pr(Z_D > z)`, `(z e^{1-z})^D` for `z > 1`.
    pub right: Option<f64>,
}

pub fn chernoff_cdf_bounds(copies: u32, z: f64) -> Result<ChernoffBounds> {
    if copies == 0 {
        return Err(domain("D must be at least 1"));
    }
    if !(z >= 0.0) {
        return Err(domain(format!("z must be nonnegative, got {z}")));
    }
    let d = f64::from(copies);
    let c = correction_c(copies);
    let tilt = |u: f64| {
        if u == 0.0 {
            0.0
        } else {
            (d * (u.ln() + 1.0 - u)).exp()
        }
    };
    let left = (z * c <= 1.0 + 1e-12).then(|| tilt(z * c).min(1.0));
    let right = (z > 1.0).then(|| tilt(z));
    Ok(ChernoffBounds { left, right })
}

/// Exact outage without interference: `Pr(chi^2_{2D}/2 < T/snr) = P(D, T/snr)`.
pub fn outage_exact_m0(copies: u32, threshold: f64, snr: f64) -> Result<f64> {
    let p = BoundInputs::new(copies, 0, threshold, snr)?;
    regularized_lower_gamma(f64::from(p.copies), p.threshold / p.snr)
}

/// `(1/D!) (T/snr)^D e^{-c_D T/snr}`; an upper bound on the exact value
/// while `T/(D snr) <= 1/c_D`.
pub fn outage_bound_m0(copies: u32, threshold: f64, snr: f64) -> Result<f64> {
    let p = BoundInputs::new(copies, 0, threshold, snr)?;
    let d = f64::from(copies);
    let x = p.threshold / p.snr;
    Ok((d * x.ln() - ln_gamma_unchecked(d + 1.0) - p.c_d() * x).exp())
}

fn require_interference(p: &BoundInputs) -> Result<()> {
    if p.interferers == 0 {
        return Err(domain(
            "M = 0 has no interference term; use outage_exact_m0",
        ));
    }
    Ok(())
}

fn ln_psi(p: &BoundInputs) -> f64 {
    let d = f64::from(p.copies);
    let n = p.n_match();
    let c = p.c_d();
    let t = p.threshold;
    let mn = f64::from(p.interferers) * n;
    let prefix = -ln_gamma_unchecked(d + 1.0) + d * (t / p.snr).ln()
        - c * t / p.snr
        - mn * (c * t / n).ln_1p();
    let ratio = (p.snr / (n + c * t)).ln();
    let ln_gamma_mn = ln_gamma_unchecked(mn);
    let ln_fact_d = ln_gamma_unchecked(d + 1.0);
    let terms: Vec<f64> = (0..=p.copies)
        .map(|k| {
            let k = f64::from(k);
            ln_fact_d - ln_gamma_unchecked(k + 1.0) - ln_gamma_unchecked(d - k + 1.0)
                + k * ratio
                + ln_gamma_unchecked(mn + k)
                - ln_gamma_mn
        })
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<f64> = terms
        .into_iter()
        .filter(|t| *t >= max - LOG_SUM_CUTOFF)
        .collect();
    prefix + log_sum_exp(&kept)
}

/// Leading term of the outage bound with interference:
///
/// `psi = (1/D!) (T/snr)^D e^{-c_D T/snr} (1 + c_D T/N)^{-MN}
///        * sum_{n=0}^{D} C(D,n) (snr/(N + c_D T))^n Gamma(MN+n)/Gamma(MN)`.
pub fn psi(copies: u32, interferers: u32, threshold: f64, snr: f64) -> Result<f64> {
    let p = BoundInputs::new(copies, interferers, threshold, snr)?;
    require_interference(&p)?;
    Ok(ln_psi(&p).exp())
}

/// Tail term `(d e / M)^{MN} e^{-N d}`; requires `d > 0`.
pub fn residual_term(copies: u32, interferers: u32, threshold: f64, snr: f64) -> Result<f64> {
    let p = BoundInputs::new(copies, interferers, threshold, snr)?;
    require_interference(&p)?;
    let d = p.d();
    if !(d > 0.0) {
        return Err(Error::ConditionViolated { d });
    }
    let m = f64::from(p.interferers);
    let n = p.n_match();
    Ok((m * n * (d.ln() + 1.0 - m.ln()) - n * d).exp())
}

/// High-SNR limit of `psi`:
/// `C(MN+D-1, MN-1) (N/(N+c_D T))^{MN} (T/(N+c_D T))^D`, with the binomial
/// through the gamma function since `MN` may be a half-integer.
pub fn psi_asymptotic(copies: u32, interferers: u32, threshold: f64) -> Result<f64> {
    // snr does not enter; any valid value passes validation.
    let p = BoundInputs::new(copies, interferers, threshold, 1.0)?;
    require_interference(&p)?;
    Ok(ln_psi_asymptotic(&p).exp())
}

fn ln_psi_asymptotic(p: &BoundInputs) -> f64 {
    let d = f64::from(p.copies);
    let n = p.n_match();
    let c = p.c_d();
    let t = p.threshold;
    let mn = f64::from(p.interferers) * n;
    let ln_binom =
        ln_gamma_unchecked(mn + d) - ln_gamma_unchecked(d + 1.0) - ln_gamma_unchecked(mn);
    ln_binom + mn * (n / (n + c * t)).ln() + d * (t / (n + c * t)).ln()
}

/// Diversity quantities: `psi <= (C / D!) nu^D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityCondition {
    pub nu: f64,
    pub c: f64,
    /// The SNR/threshold inequality that makes `nu < 1`, evaluated directly.
    pub holds: bool,
}

pub fn diversity_condition(
    copies: u32,
    interferers: u32,
    threshold: f64,
    snr: f64,
) -> Result<DiversityCondition> {
    let p = BoundInputs::new(copies, interferers, threshold, snr)?;
    let d = p.d();
    if !(d > 0.0) {
        return Err(Error::ConditionViolated { d });
    }
    let dd = f64::from(p.copies);
    let m = f64::from(p.interferers);
    let c_d = p.c_d();
    let t = p.threshold;
    let snr = p.snr;
    let spread = dd * (m + 1.0) + m - 1.0;
    let denom = dd + 1.0 + 2.0 * c_d * t;
    let nu = (t / snr)
        * (1.0 + 2.0 * c_d * t / (dd + 1.0)).powf(-m / 2.0)
        * (1.0 + snr * spread / denom);
    let c = (1.0 + snr / (d * snr + 1.0)).powf(-m / 2.0);
    let lhs = (snr / t) * ((dd + 1.0) / denom).powf(m / 2.0);
    let rhs = 1.0 + snr * spread / denom;
    Ok(DiversityCondition {
        nu,
        c,
        holds: lhs >= rhs,
    })
}

/// Outage bound for `M >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub inputs: BoundInputs,
    pub d: f64,
    /// `d > 0`; when false the bound does not apply and `psi`, `residual`
    /// and `total` are absent.
    pub valid: bool,
    /// `d > M`: the right-tail Chernoff step behind the residual only holds
    /// for `d/M > 1`. Below that `total` is not guaranteed to bound anything.
    pub residual_is_bound: bool,
    pub psi: Option<f64>,
    pub residual: Option<f64>,
    pub total: Option<f64>,
    /// High-SNR error floor.
    pub floor: f64,
    pub nu: Option<f64>,
    pub diversity_ok: bool,
}

pub fn outage_bound(
    copies: u32,
    interferers: u32,
    threshold: f64,
    snr: f64,
) -> Result<BoundResult> {
    let p = BoundInputs::new(copies, interferers, threshold, snr)?;
    require_interference(&p)?;
    let d = p.d();
    let floor = ln_psi_asymptotic(&p).exp();
    if !(d > 0.0) {
        return Ok(BoundResult {
            inputs: p,
            d,
            valid: false,
            residual_is_bound: false,
            psi: None,
            residual: None,
            total: None,
            floor,
            nu: None,
            diversity_ok: false,
        });
    }
    let psi = ln_psi(&p).exp();
    let residual = residual_term(copies, interferers, threshold, snr)?;
    let div = diversity_condition(copies, interferers, threshold, snr)?;
    Ok(BoundResult {
        inputs: p,
        d,
        valid: true,
        residual_is_bound: d > f64::from(interferers),
        psi: Some(psi),
        residual: Some(residual),
        total: Some(psi + residual),
        floor,
        nu: Some(div.nu),
        diversity_ok: div.holds,
    })
}

/// Outage figure used for planning and the finite-blocklength integral:
/// the exact cdf for `M = 0`, otherwise the bound total clamped to `[0, 1]`.
/// Where the total is not guaranteed to bound the outage (`d <= M`,
/// including the invalid region `d <= 0`) the value is 1.
pub fn outage_prediction(copies: u32, interferers: u32, threshold: f64, snr: f64) -> Result<f64> {
    if interferers == 0 {
        return outage_exact_m0(copies, threshold, snr);
    }
    let r = outage_bound(copies, interferers, threshold, snr)?;
    Ok(match r.total {
        Some(t) if r.residual_is_bound => t.min(1.0),
        _ => 1.0,
    })
}

/// `floor(2 log2(D / (4T)))`: interferers a layer with `D` copies can carry
/// at threshold `T` and still keep a low outage.
pub fn max_interferers(copies: u32, threshold: f64) -> Result<u32> {
    if copies == 0 || !(threshold > 0.0) {
        return Err(domain("max_interferers needs D >= 1 and T > 0"));
    }
    let ratio = f64::from(copies) / (4.0 * threshold);
    if ratio < 1.0 {
        return Err(Error::Infeasible(format!(
            "no interferers supportable: D/(4T) = {ratio:.4} < 1"
        )));
    }
    Ok((2.0 * ratio.log2() + 1e-12).floor() as u32)
}

/// `ceil(4 T 2^{M/2})`: copies needed for `M` interferers at threshold `T`.
pub fn copies_needed(interferers: u32, threshold: f64) -> Result<u32> {
    if !(threshold > 0.0) {
        return Err(domain("copies_needed needs T > 0"));
    }
    let raw = 4.0 * threshold * 2f64.powf(f64::from(interferers) / 2.0);
    Ok((raw - 1e-9).ceil().max(1.0) as u32)
}

/// `2^{1 + M/2} < (D + 1) / (2T)`.
pub fn sufficient_condition(copies: u32, interferers: u32, threshold: f64) -> bool {
    2f64.powf(1.0 + f64::from(interferers) / 2.0) < (f64::from(copies) + 1.0) / (2.0 * threshold)
}

/// `M <= 2 log2(D / (4T))` (false when `D/(4T) < 1`).
pub fn interferers_supported(copies: u32, interferers: u32, threshold: f64) -> bool {
    max_interferers(copies, threshold).is_ok_and(|m| interferers <= m)
}

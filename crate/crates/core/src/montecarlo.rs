//! Monte Carlo engines.
//!
//! Channel powers `X = |h|^2` are `Exp(1)`; the SINR of a user with `D`
//! copies, each shared with `M` interferers, after maximal ratio combining is
//!
//! `gamma = S / (W + 1/snr)`, `S = sum_l X_l`, `W = sum_l I_l X_l / S`,
//!
//! where `I_l` is the total interferer power on block `l`. The surrogate
//! model replaces `W` by `Omega/2` with `Omega = chi^2_{2NM} / N`.
//!
//! Every trial reads its own counter-keyed stream, and results are merged in
//! trial order, so estimates are bit-identical for any thread count.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bounds::matched_dof;
use crate::channel::{fill_gains, make_interleaver, FrameLayout, Interleaver};
use crate::error::{domain, Error, Result};
use crate::fbl::{codeword_error, DispersionMode};
use crate::numerics::regularized_lower_gamma;
use crate::rng::{par_trials, Domain, StreamFamily};

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleKind {
    Exact,
    Omega,
    LinkLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleParams {
    pub copies: u32,
    pub interferers: u32,
    pub snr: f64,
}

/// SINR draws together with the settings that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinrSampleSet {
    pub values: Vec<f64>,
    pub params: SampleParams,
    pub seed: u64,
    pub trials: u64,
    pub kind: SampleKind,
}

/// Outage frequency with a Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutageEstimate {
    pub p_hat: f64,
    pub failures: u64,
    pub trials: u64,
    pub ci95: (f64, f64),
}

impl OutageEstimate {
    pub fn from_counts(failures: u64, trials: u64) -> Result<Self> {
        if trials == 0 {
            return Err(Error::EmptySamples);
        }
        if failures > trials {
            return Err(domain(format!(
                "{failures} failures out of {trials} trials"
            )));
        }
        let p_hat = failures as f64 / trials as f64;
        Ok(Self {
            p_hat,
            failures,
            trials,
            ci95: wilson_interval(failures, trials),
        })
    }

    pub fn ci_halfwidth(&self) -> f64 {
        (self.ci95.1 - self.ci95.0) / 2.0
    }
}

fn wilson_interval(k: u64, n: u64) -> (f64, f64) {
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = Z95 * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    let lo = if k == 0 {
        0.0
    } else {
        (center - half).clamp(0.0, p)
    };
    let hi = if k == n {
        1.0
    } else {
        (center + half).clamp(p, 1.0)
    };
    (lo, hi)
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: u64,
}

impl MeanEstimate {
    pub fn from_values<I: IntoIterator<Item = f64>>(values: I) -> Self {
        let mut acc = MeanAcc::default();
        for v in values {
            acc.push(v);
        }
        acc.finish()
    }

    pub fn ci_halfwidth(&self) -> f64 {
        Z95 * self.std_error
    }

    pub fn ci95(&self) -> (f64, f64) {
        (
            self.mean - self.ci_halfwidth(),
            self.mean + self.ci_halfwidth(),
        )
    }
}

/// Running mean and centred second moment, merged with the pairwise
/// update so constant inputs give an exactly zero variance.
#[derive(Debug, Clone, Copy, Default)]
struct MeanAcc {
    n: u64,
    mean: f64,
    m2: f64,
}

impl MeanAcc {
    fn push(&mut self, v: f64) {
        self.n += 1;
        let delta = v - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (v - self.mean);
    }

    fn merge(&mut self, other: MeanAcc) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other;
            return;
        }
        let n = (self.n + other.n) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n;
        self.m2 += other.m2 + delta * delta * self.n as f64 * other.n as f64 / n;
        self.n += other.n;
    }

    fn finish(&self) -> MeanEstimate {
        if self.n == 0 {
            return MeanEstimate {
                mean: f64::NAN,
                std_error: f64::NAN,
                trials: 0,
            };
        }
        let n = self.n as f64;
        let var = if self.n > 1 {
            (self.m2 / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        MeanEstimate {
            mean: self.mean,
            std_error: (var / n).sqrt(),
            trials: self.n,
        }
    }
}

fn check_sim_args(copies: u32, snrs: &[f64], trials: u64) -> Result<()> {
    if copies == 0 {
        return Err(domain("D must be at least 1"));
    }
    if trials == 0 {
        return Err(domain("trials must be at least 1"));
    }
    if let Some(bad) = snrs.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        return Err(domain(format!(
            "snr must be positive and finite, got {bad}"
        )));
    }
    Ok(())
}

fn check_thresholds(thresholds: &[f64]) -> Result<()> {
    if let Some(bad) = thresholds.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return Err(domain(format!(
            "threshold must be positive and finite, got {bad}"
        )));
    }
    Ok(())
}

/// Draws one trial of the exact model. Fills `w[m]` with `W` for every
/// interferer count `m = 0..=m_max` (interferer powers are shared, so the
/// draws are common across `m`) and returns `S`.
///
/// Draw order: the `D` signal powers, then `m_max` interferer powers per
/// block.
fn draw_exact(rng: &mut ChaCha8Rng, x: &mut [f64], w: &mut [f64], unit_gains: bool) -> f64 {
    let draw = |rng: &mut ChaCha8Rng| {
        if unit_gains {
            1.0
        } else {
            rng.sample::<f64, _>(Exp1)
        }
    };
    for xi in x.iter_mut() {
        *xi = draw(rng);
    }
    let s: f64 = x.iter().sum();
    w.fill(0.0);
    let m_max = w.len() - 1;
    for &xl in x.iter() {
        let mut acc = 0.0;
        for wm in w[1..=m_max].iter_mut() {
            acc += draw(rng);
            *wm += acc * xl;
        }
    }
    for wm in w.iter_mut() {
        *wm /= s;
    }
    s
}

fn sample_exact_inner(
    copies: u32,
    interferers: u32,
    snr: f64,
    trials: u64,
    seed: u64,
    unit_gains: bool,
) -> Result<SinrSampleSet> {
    check_sim_args(copies, &[snr], trials)?;
    let fam = StreamFamily::new(seed, Domain::Trial);
    let noise = 1.0 / snr;
    let values = par_trials(
        trials,
        Vec::new,
        |acc: &mut Vec<f64>, t| {
            let mut x = vec![0.0; copies as usize];
            let mut w = vec![0.0; interferers as usize + 1];
            let s = draw_exact(&mut fam.stream(t), &mut x, &mut w, unit_gains);
            acc.push(s / (w[interferers as usize] + noise));
        },
        |a, b| a.extend(b),
    );
    Ok(SinrSampleSet {
        values,
        params: SampleParams {
            copies,
            interferers,
            snr,
        },
        seed,
        trials,
        kind: SampleKind::Exact,
    })
}

/// SINR draws from the exact model.
pub fn sample_sinr_exact(
    copies: u32,
    interferers: u32,
    snr: f64,
    trials: u64,
    seed: u64,
) -> Result<SinrSampleSet> {
    sample_exact_inner(copies, interferers, snr, trials, seed, false)
}

fn omega_gamma(copies: u32, interferers: u32) -> Result<(Gamma<f64>, f64)> {
    let n = matched_dof(copies);
    let g = Gamma::new(f64::from(interferers) * n, 2.0).map_err(|e| domain(e.to_string()))?;
    Ok((g, n))
}

/// SINR draws from the surrogate model `S / (Omega/2 + 1/snr)`.
///
/// `S` is drawn directly as `Gamma(D, 1)`, which has the law of a sum of
/// `D` unit exponentials.
pub fn sample_sinr_omega(
    copies: u32,
    interferers: u32,
    snr: f64,
    trials: u64,
    seed: u64,
) -> Result<SinrSampleSet> {
    check_sim_args(copies, &[snr], trials)?;
    if interferers == 0 {
        return Err(domain("the Omega surrogate needs M >= 1"));
    }
    let signal = Gamma::new(f64::from(copies), 1.0).map_err(|e| domain(e.to_string()))?;
    let (omega, n) = omega_gamma(copies, interferers)?;
    let fam = StreamFamily::new(seed, Domain::Trial);
    let noise = 1.0 / snr;
    let values = par_trials(
        trials,
        Vec::new,
        |acc: &mut Vec<f64>, t| {
            let mut rng = fam.stream(t);
            let s = signal.sample(&mut rng);
            let o = omega.sample(&mut rng) / n;
            acc.push(s / (o / 2.0 + noise));
        },
        |a, b| a.extend(b),
    );
    Ok(SinrSampleSet {
        values,
        params: SampleParams {
            copies,
            interferers,
            snr,
        },
        seed,
        trials,
        kind: SampleKind::Omega,
    })
}

/// Number of draws strictly below `threshold`.
pub fn count_outage(values: &[f64], threshold: f64) -> u64 {
    values.iter().filter(|&&g| g < threshold).count() as u64
}

/// Fraction of draws with `gamma < T`, with a Wilson 95% interval.
pub fn estimate_outage(samples: &SinrSampleSet, threshold: f64) -> Result<OutageEstimate> {
    if samples.values.is_empty() {
        return Err(Error::EmptySamples);
    }
    check_thresholds(&[threshold])?;
    OutageEstimate::from_counts(
        count_outage(&samples.values, threshold),
        samples.values.len() as u64,
    )
}

/// Outage estimates over an `(M, snr, T)` grid, indexed `[m][s][t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutageGrid {
    pub interferers: Vec<u32>,
    pub snrs: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub estimates: Vec<OutageEstimate>,
}

impl OutageGrid {
    pub fn get(&self, m: usize, s: usize, t: usize) -> &OutageEstimate {
        &self.estimates[(m * self.snrs.len() + s) * self.thresholds.len() + t]
    }

    fn from_counts(
        interferers: &[u32],
        snrs: &[f64],
        thresholds: &[f64],
        counts: &[u64],
        trials: u64,
    ) -> Result<Self> {
        Ok(Self {
            interferers: interferers.to_vec(),
            snrs: snrs.to_vec(),
            thresholds: thresholds.to_vec(),
            estimates: counts
                .iter()
                .map(|&c| OutageEstimate::from_counts(c, trials))
                .collect::<Result<_>>()?,
        })
    }
}

fn check_grid(interferers: &[u32], snrs: &[f64], thresholds: &[f64]) -> Result<()> {
    if interferers.is_empty() || snrs.is_empty() || thresholds.is_empty() {
        return Err(domain("grid axes must be nonempty"));
    }
    check_thresholds(thresholds)
}

/// Streaming outage counts of the exact model over a grid. All grid points
/// share the same draws (common random numbers); a trial's draws coincide
/// with those of [`sample_sinr_exact`] at `M = max(interferers)`.
pub fn exact_outage_grid(
    copies: u32,
    interferers: &[u32],
    snrs: &[f64],
    thresholds: &[f64],
    trials: u64,
    seed: u64,
) -> Result<OutageGrid> {
    check_sim_args(copies, snrs, trials)?;
    check_grid(interferers, snrs, thresholds)?;
    let m_max = *interferers.iter().max().expect("nonempty") as usize;
    let fam = StreamFamily::new(seed, Domain::Trial);
    let noises: Vec<f64> = snrs.iter().map(|s| 1.0 / s).collect();
    let cells = interferers.len() * snrs.len() * thresholds.len();
    let counts = par_trials(
        trials,
        || vec![0u64; cells],
        |acc, t| {
            let mut x = vec![0.0; copies as usize];
            let mut w = vec![0.0; m_max + 1];
            let s = draw_exact(&mut fam.stream(t), &mut x, &mut w, false);
            tally(
                acc,
                s,
                interferers.iter().map(|&m| w[m as usize]),
                &noises,
                thresholds,
            );
        },
        add_counts,
    );
    OutageGrid::from_counts(interferers, snrs, thresholds, &counts, trials)
}

/// Streaming outage counts of the surrogate model over a grid. Per trial,
/// `S` is drawn first and then one `Omega` per entry of `interferers`.
pub fn omega_outage_grid(
    copies: u32,
    interferers: &[u32],
    snrs: &[f64],
    thresholds: &[f64],
    trials: u64,
    seed: u64,
) -> Result<OutageGrid> {
    check_sim_args(copies, snrs, trials)?;
    check_grid(interferers, snrs, thresholds)?;
    if interferers.contains(&0) {
        return Err(domain("the Omega surrogate needs M >= 1"));
    }
    let signal = Gamma::new(f64::from(copies), 1.0).map_err(|e| domain(e.to_string()))?;
    let omegas: Vec<(Gamma<f64>, f64)> = interferers
        .iter()
        .map(|&m| omega_gamma(copies, m))
        .collect::<Result<_>>()?;
    let fam = StreamFamily::new(seed, Domain::Trial);
    let noises: Vec<f64> = snrs.iter().map(|s| 1.0 / s).collect();
    let cells = interferers.len() * snrs.len() * thresholds.len();
    let counts = par_trials(
        trials,
        || vec![0u64; cells],
        |acc, t| {
            let mut rng = fam.stream(t);
            let s = signal.sample(&mut rng);
            let ws: Vec<f64> = omegas
                .iter()
                .map(|(g, n)| g.sample(&mut rng) / n / 2.0)
                .collect();
            tally(acc, s, ws.into_iter(), &noises, thresholds);
        },
        add_counts,
    );
    OutageGrid::from_counts(interferers, snrs, thresholds, &counts, trials)
}

fn tally(
    acc: &mut [u64],
    s: f64,
    ws: impl Iterator<Item = f64>,
    noises: &[f64],
    thresholds: &[f64],
) {
    let mut idx = 0;
    for w in ws {
        for &noise in noises {
            let gamma = s / (w + noise);
            for &t in thresholds {
                acc[idx] += u64::from(gamma < t);
                idx += 1;
            }
        }
    }
}

#[allow(clippy::ptr_arg)] // matches the par_trials merge signature
fn add_counts(a: &mut Vec<u64>, b: Vec<u64>) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// Conditional Monte Carlo for the exact model. With `S = sum X_l` and
/// `alpha = X / S`, `S ~ Gamma(D, 1)` is independent of `alpha` and hence of
/// `W`, so `Pr(gamma < T | W) = P(D, T (W + 1/snr))`. Averaging that over
/// draws of `W` estimates the same outage as [`exact_outage_grid`] with far
/// smaller variance in the tail. Uses the same draws as the grid at the
/// same seed and `M`. One estimate per entry of `snrs`.
pub fn exact_outage_conditional(
    copies: u32,
    interferers: u32,
    threshold: f64,
    snrs: &[f64],
    trials: u64,
    seed: u64,
) -> Result<Vec<MeanEstimate>> {
    check_sim_args(copies, snrs, trials)?;
    check_thresholds(&[threshold])?;
    let fam = StreamFamily::new(seed, Domain::Trial);
    let d = f64::from(copies);
    let noises: Vec<f64> = snrs.iter().map(|s| 1.0 / s).collect();
    let accs = par_trials(
        trials,
        || vec![MeanAcc::default(); noises.len()],
        |acc, t| {
            let mut x = vec![0.0; copies as usize];
            let mut w = vec![0.0; interferers as usize + 1];
            draw_exact(&mut fam.stream(t), &mut x, &mut w, false);
            let wm = w[interferers as usize];
            for (a, &noise) in acc.iter_mut().zip(&noises) {
                a.push(lower_gamma(d, threshold * (wm + noise)));
            }
        },
        merge_accs,
    );
    Ok(accs.iter().map(MeanAcc::finish).collect())
}

/// Conditional Monte Carlo for the surrogate model:
/// the average of `P(D, T (Omega/2 + 1/snr))` over draws of `Omega`.
pub fn omega_outage_conditional(
    copies: u32,
    interferers: u32,
    threshold: f64,
    snrs: &[f64],
    trials: u64,
    seed: u64,
) -> Result<Vec<MeanEstimate>> {
    check_sim_args(copies, snrs, trials)?;
    check_thresholds(&[threshold])?;
    if interferers == 0 {
        return Err(domain("the Omega surrogate needs M >= 1"));
    }
    let (omega, n) = omega_gamma(copies, interferers)?;
    let fam = StreamFamily::new(seed, Domain::Auxiliary);
    let d = f64::from(copies);
    let noises: Vec<f64> = snrs.iter().map(|s| 1.0 / s).collect();
    let accs = par_trials(
        trials,
        || vec![MeanAcc::default(); noises.len()],
        |acc, t| {
            let w = omega.sample(&mut fam.stream(t)) / n / 2.0;
            for (a, &noise) in acc.iter_mut().zip(&noises) {
                a.push(lower_gamma(d, threshold * (w + noise)));
            }
        },
        merge_accs,
    );
    Ok(accs.iter().map(MeanAcc::finish).collect())
}

fn lower_gamma(a: f64, x: f64) -> f64 {
    regularized_lower_gamma(a, x).expect("arguments validated by caller")
}

#[allow(clippy::ptr_arg)]
fn merge_accs(a: &mut Vec<MeanAcc>, b: Vec<MeanAcc>) {
    for (x, y) in a.iter_mut().zip(b) {
        x.merge(y);
    }
}

/// Moment-matching diagnostics for the interference term
/// `W = sum_l alpha_l Y_l`, `alpha_l = X_l / S`, `Y_l ~ chi^2_{2M}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentDiag {
    pub copies: u32,
    pub interferers: u32,
    pub trials: u64,
    pub mean_w: f64,
    pub mean_w_se: f64,
    pub second_moment_w: f64,
    pub second_moment_w_se: f64,
    /// `E[W] = 2M`.
    pub predicted_mean: f64,
    /// `E[W^2] = 4M(M + 1/N)`, `N = (D+1)/2`.
    pub predicted_second: f64,
    pub mean_alpha_sq: f64,
    pub mean_alpha_sq_se: f64,
    /// `E[alpha_l^2] = 2 / (D (D+1))`.
    pub predicted_alpha_sq: f64,
    pub ks_distance_w_vs_omega: f64,
}

pub fn moment_diagnostics(
    copies: u32,
    interferers: u32,
    trials: u64,
    seed: u64,
) -> Result<MomentDiag> {
    check_sim_args(copies, &[], trials)?;
    if interferers == 0 {
        return Err(domain("moment diagnostics need M >= 1"));
    }
    let (omega, n) = omega_gamma(copies, interferers)?;
    let fam_w = StreamFamily::new(seed, Domain::Trial);
    let fam_o = StreamFamily::new(seed, Domain::Auxiliary);
    struct Acc {
        w: Vec<f64>,
        o: Vec<f64>,
        first: MeanAcc,
        second: MeanAcc,
        alpha_sq: MeanAcc,
    }
    let acc = par_trials(
        trials,
        || Acc {
            w: Vec::new(),
            o: Vec::new(),
            first: MeanAcc::default(),
            second: MeanAcc::default(),
            alpha_sq: MeanAcc::default(),
        },
        |acc, t| {
            let mut x = vec![0.0; copies as usize];
            let mut w = vec![0.0; interferers as usize + 1];
            let s = draw_exact(&mut fam_w.stream(t), &mut x, &mut w, false);
            // chi^2_{2M} is twice a sum of M unit exponentials
            let wv = 2.0 * w[interferers as usize];
            acc.w.push(wv);
            acc.first.push(wv);
            acc.second.push(wv * wv);
            acc.alpha_sq.push((x[0] / s).powi(2));
            acc.o.push(omega.sample(&mut fam_o.stream(t)) / n);
        },
        |a, b| {
            a.w.extend(b.w);
            a.o.extend(b.o);
            a.first.merge(b.first);
            a.second.merge(b.second);
            a.alpha_sq.merge(b.alpha_sq);
        },
    );
    let m = f64::from(interferers);
    let d = f64::from(copies);
    let (first, second, alpha_sq) = (
        acc.first.finish(),
        acc.second.finish(),
        acc.alpha_sq.finish(),
    );
    Ok(MomentDiag {
        copies,
        interferers,
        trials,
        mean_w: first.mean,
        mean_w_se: first.std_error,
        second_moment_w: second.mean,
        second_moment_w_se: second.std_error,
        predicted_mean: 2.0 * m,
        predicted_second: 4.0 * m * (m + 1.0 / n),
        mean_alpha_sq: alpha_sq.mean,
        mean_alpha_sq_se: alpha_sq.std_error,
        predicted_alpha_sq: 2.0 / (d * (d + 1.0)),
        ks_distance_w_vs_omega: ks_two_sample(&acc.w, &acc.o)?,
    })
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut sup) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(sup)
}

/// Empirical `q`-quantile (lower order statistic).
pub fn empirical_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(domain(format!(
            "quantile level must lie in [0, 1], got {q}"
        )));
    }
    let mut v = values.to_vec();
    let idx = ((q * v.len() as f64).floor() as usize).min(v.len() - 1);
    let (_, x, _) = v.select_nth_unstable_by(idx, f64::total_cmp);
    Ok(*x)
}

/// How a user decides whether its packet was recovered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SicDecision {
    /// Success iff the SINR reaches the layer threshold.
    Outage,
    /// Success with probability `1 - Q(...)` at rate `log2(1 + T_b)` and
    /// blocklength `n`.
    FiniteBlocklength { n: u64 },
}

/// Per-layer SIC statistics over users and trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SicLayerEstimate {
    pub layer: usize,
    pub users: usize,
    pub threshold: f64,
    /// Failure rate when every lower-layer signal has been removed.
    pub genie: OutageEstimate,
    /// Failure rate with actual SIC: undecoded lower-layer users stay as
    /// interference.
    pub propagated: OutageEstimate,
}

struct SicUser {
    layer: usize,
    blocks: Vec<usize>,
    // per block: co-channel users, with their layer
    cochannel: Vec<Vec<(usize, usize)>>,
}

fn sic_users(layout: &FrameLayout) -> Vec<SicUser> {
    layout
        .users()
        .iter()
        .enumerate()
        .map(|(k, slot)| SicUser {
            layer: slot.layer,
            blocks: slot.blocks.clone(),
            cochannel: slot
                .blocks
                .iter()
                .map(|&l| {
                    layout
                        .block_users(l)
                        .iter()
                        .filter(|&&q| q != k)
                        .map(|&q| (q, layout.users()[q].layer))
                        .collect()
                })
                .collect(),
        })
        .collect()
}

/// Full-frame SIC: users are decoded layer by layer, successfully decoded
/// signals are cancelled and failed ones remain as interference.
///
/// Each trial draws one frame of gains exactly as
/// [`crate::channel::draw_channel`] does for the same `(seed, trial)`; the
/// finite-blocklength decision then reads one uniform per user from the
/// same stream, shared by the genie and the propagated decision.
pub fn simulate_sic_frame(
    layout: &FrameLayout,
    thresholds: &[f64],
    snr: f64,
    trials: u64,
    seed: u64,
    decision: SicDecision,
) -> Result<Vec<SicLayerEstimate>> {
    let n_layers = layout.layers().len();
    if thresholds.len() != n_layers {
        return Err(Error::InvalidLayout(format!(
            "{} thresholds for {n_layers} layers",
            thresholds.len()
        )));
    }
    check_thresholds(thresholds)?;
    check_sim_args(1, &[snr], trials)?;
    if let SicDecision::FiniteBlocklength { n } = decision {
        if n < 2 {
            return Err(domain(format!("blocklength must be at least 2, got {n}")));
        }
    }
    let users = sic_users(layout);
    let n_users = users.len();
    let n_blocks = layout.blocks();
    let noise = 1.0 / snr;
    let fam = StreamFamily::new(seed, Domain::Trial);
    let rates: Vec<f64> = thresholds
        .iter()
        .map(|t| t.ln_1p() * std::f64::consts::LOG2_E)
        .collect();

    // counts: [genie fail per layer..., actual fail per layer...]
    let counts = par_trials(
        trials,
        || vec![0u64; 2 * n_layers],
        |acc, t| {
            let mut rng = fam.stream(t);
            let mut gains = vec![Complex64::new(0.0, 0.0); n_blocks * n_users];
            fill_gains(&mut rng, &mut gains);
            let power = |l: usize, k: usize| gains[l * n_users + k].norm_sqr();
            let uniforms: Vec<f64> = match decision {
                SicDecision::Outage => Vec::new(),
                SicDecision::FiniteBlocklength { .. } => {
                    (0..n_users).map(|_| rng.random::<f64>()).collect()
                }
            };
            let fails = |k: usize, gamma: f64| -> bool {
                let b = users[k].layer - 1;
                match decision {
                    SicDecision::Outage => gamma < thresholds[b],
                    SicDecision::FiniteBlocklength { n } => {
                        uniforms[k] < codeword_error(gamma, rates[b], n, DispersionMode::ExactV)
                    }
                }
            };
            let sinr = |k: usize, include: &dyn Fn(usize, usize) -> bool| -> f64 {
                let u = &users[k];
                let mut s = 0.0;
                let mut wx = 0.0;
                for (i, &l) in u.blocks.iter().enumerate() {
                    let x = power(l, k);
                    let interference: f64 = u.cochannel[i]
                        .iter()
                        .filter(|&&(q, lq)| include(q, lq))
                        .map(|&(q, _)| power(l, q))
                        .sum();
                    s += x;
                    wx += interference * x;
                }
                s / (wx / s + noise)
            };
            let mut decoded = vec![false; n_users];
            for b in 1..=n_layers {
                for k in (0..n_users).filter(|&k| users[k].layer == b) {
                    let genie = sinr(k, &|_, lq| lq > b);
                    if fails(k, genie) {
                        acc[b - 1] += 1;
                    }
                    let actual = sinr(k, &|q, lq| lq >= b || !decoded[q]);
                    if fails(k, actual) {
                        acc[n_layers + b - 1] += 1;
                    } else {
                        decoded[k] = true;
                    }
                }
            }
        },
        add_counts,
    );
    layout
        .layers()
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let n = trials * spec.users as u64;
            Ok(SicLayerEstimate {
                layer: spec.index,
                users: spec.users,
                threshold: thresholds[i],
                genie: OutageEstimate::from_counts(counts[i], n)?,
                propagated: OutageEstimate::from_counts(counts[n_layers + i], n)?,
            })
        })
        .collect()
}

/// Genie-aided SINR draws of every layer (all lower layers removed), pooled
/// over the users of each layer. Uses the same per-trial gains as
/// [`simulate_sic_frame`], so quantiles taken here tune its thresholds.
pub fn genie_layer_sinr(
    layout: &FrameLayout,
    snr: f64,
    trials: u64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    check_sim_args(1, &[snr], trials)?;
    let users = sic_users(layout);
    let n_users = users.len();
    let n_blocks = layout.blocks();
    let n_layers = layout.layers().len();
    let noise = 1.0 / snr;
    let fam = StreamFamily::new(seed, Domain::Trial);
    Ok(par_trials(
        trials,
        || vec![Vec::new(); n_layers],
        |acc, t| {
            let mut gains = vec![Complex64::new(0.0, 0.0); n_blocks * n_users];
            fill_gains(&mut fam.stream(t), &mut gains);
            for (k, u) in users.iter().enumerate() {
                let mut s = 0.0;
                let mut wx = 0.0;
                for (i, &l) in u.blocks.iter().enumerate() {
                    let x = gains[l * n_users + k].norm_sqr();
                    let interference: f64 = u.cochannel[i]
                        .iter()
                        .filter(|&&(_, lq)| lq > u.layer)
                        .map(|&(q, _)| gains[l * n_users + q].norm_sqr())
                        .sum();
                    s += x;
                    wx += interference * x;
                }
                acc[u.layer - 1].push(s / (wx / s + noise));
            }
        },
        |a, b| {
            for (x, y) in a.iter_mut().zip(b) {
                x.extend(y);
            }
        },
    ))
}

/// Result of the symbol-level link simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkLevelResult {
    pub user: usize,
    pub layer: usize,
    pub copies: usize,
    pub interferers: usize,
    /// Average normal-approximation codeword error at the measured SINR.
    pub error: MeanEstimate,
    /// Per-codeword measured SINR.
    pub sinr: SinrSampleSet,
}

/// Symbol-level simulation of one user with interleaved QPSK repetition.
///
/// Each codeword is `n/2` QPSK symbols. Copy `l` of user `q` is the codeword
/// permuted by a fixed random interleaver for `(l, q)`. Co-channel users of
/// higher layers (the ones left after the lower layers are cancelled) send
/// independent random codewords. The receiver deinterleaves each copy and
/// combines them with maximal ratio weights; the SINR of the codeword is
/// the combined signal power over the mean power of the combined
/// interference-plus-noise across symbol positions.
pub fn simulate_linklevel(
    layout: &FrameLayout,
    user: usize,
    rate: f64,
    n: u64,
    snr: f64,
    trials: u64,
    seed: u64,
) -> Result<LinkLevelResult> {
    let slot = layout.user(user).ok_or_else(|| {
        domain(format!(
            "user {user} is not in the layout ({} users)",
            layout.user_count()
        ))
    })?;
    if n < 2 || !n.is_multiple_of(2) {
        return Err(domain(format!(
            "codeword length must be even and at least 2, got {n}"
        )));
    }
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(domain(format!(
            "rate must be positive and finite, got {rate}"
        )));
    }
    check_sim_args(1, &[snr], trials)?;
    let symbols = (n / 2) as usize;
    let layer = slot.layer;
    let blocks = slot.blocks.clone();
    // per block: the user's interleaver and the interferers' (index into `others`, interleaver)
    let mut others: Vec<usize> = Vec::new();
    let mut plan: Vec<(Interleaver, Vec<(usize, Interleaver)>)> = Vec::with_capacity(blocks.len());
    for &l in &blocks {
        let own = make_interleaver(symbols, seed, l, user)?;
        let mut co = Vec::new();
        for &q in layout.block_users(l) {
            if q != user && layout.users()[q].layer > layer {
                let idx = match others.iter().position(|&o| o == q) {
                    Some(i) => i,
                    None => {
                        others.push(q);
                        others.len() - 1
                    }
                };
                co.push((idx, make_interleaver(symbols, seed, l, q)?));
            }
        }
        plan.push((own, co));
    }
    let interferers = plan.first().map_or(0, |p| p.1.len());
    let noise_std = (0.5 / snr).sqrt();
    let fam = StreamFamily::new(seed, Domain::LinkTrial);
    let qpsk = |bits: u64| {
        let a = std::f64::consts::FRAC_1_SQRT_2;
        Complex64::new(
            if bits & 1 == 0 { a } else { -a },
            if bits & 2 == 0 { a } else { -a },
        )
    };
    let (values, acc) = par_trials(
        trials,
        || (Vec::new(), MeanAcc::default()),
        |(values, acc), t| {
            let mut rng = fam.stream(t);
            // interferer codewords; the user's own symbols cancel in the error term
            let words: Vec<Vec<Complex64>> = others
                .iter()
                .map(|_| (0..symbols).map(|_| qpsk(rng.random::<u64>())).collect())
                .collect();
            let mut err = vec![Complex64::new(0.0, 0.0); symbols];
            let mut gain = 0.0;
            for (own, co) in &plan {
                let h = complex_normal(&mut rng);
                let hq: Vec<Complex64> = co.iter().map(|_| complex_normal(&mut rng)).collect();
                gain += h.norm_sqr();
                let hc = h.conj();
                let own_perm = own.permutation();
                for i in 0..symbols {
                    let mut v = Complex64::new(
                        noise_std * rng.sample::<f64, _>(StandardNormal),
                        noise_std * rng.sample::<f64, _>(StandardNormal),
                    );
                    for ((idx, pi), g) in co.iter().zip(&hq) {
                        v += g * words[*idx][pi.permutation()[i]];
                    }
                    err[own_perm[i]] += hc * v;
                }
            }
            let noise_power = err.iter().map(|e| e.norm_sqr()).sum::<f64>() / symbols as f64;
            let gamma = gain * gain / noise_power;
            values.push(gamma);
            acc.push(codeword_error(gamma, rate, n, DispersionMode::ExactV));
        },
        |a, b| {
            a.0.extend(b.0);
            a.1.merge(b.1);
        },
    );
    Ok(LinkLevelResult {
        user,
        layer,
        copies: blocks.len(),
        interferers,
        error: acc.finish(),
        sinr: SinrSampleSet {
            values,
            params: SampleParams {
                copies: blocks.len() as u32,
                interferers: interferers as u32,
                snr,
            },
            seed,
            trials,
            kind: SampleKind::LinkLevel,
        },
    })
}

fn complex_normal(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{outage_bound, outage_exact_m0};
    use crate::channel::{build_layout, draw_channel};
    use crate::fbl::avg_error_mc;
    use approx::assert_relative_eq;

    #[test]
    fn unit_gains_collapse_to_d_snr() {
        let s = sample_exact_inner(5, 0, 3.0, 10, 1, true).unwrap();
        assert!(s.values.iter().all(|&g| (g - 15.0).abs() < 1e-12));
    }

    #[test]
    fn single_copy_matches_exponential_cdf() {
        let (snr, t) = (2.0, 0.7);
        let s = sample_sinr_exact(1, 0, snr, 200_000, 3).unwrap();
        let est = estimate_outage(&s, t).unwrap();
        let want = 1.0 - (-t / snr).exp();
        assert!(
            (est.p_hat - want).abs() < 3.0 * est.ci_halfwidth(),
            "{} vs {want}",
            est.p_hat
        );
    }

    #[test]
    fn two_copies_match_incomplete_gamma() {
        let s = sample_sinr_exact(2, 0, 2.0, 400_000, 5).unwrap();
        let est = estimate_outage(&s, 1.0).unwrap();
        assert!((est.p_hat - 0.090204).abs() < 3.0 * est.ci_halfwidth());
    }

    #[test]
    fn estimate_edge_cases() {
        let s = sample_sinr_exact(4, 1, 10.0, 100, 1).unwrap();
        let none = estimate_outage(&s, 1e-12).unwrap();
        assert_eq!(none.p_hat, 0.0);
        assert_eq!(none.ci95.0, 0.0);
        assert!(estimate_outage(&s, f64::INFINITY).is_err());
        let empty = SinrSampleSet {
            values: vec![],
            ..s
        };
        assert!(matches!(
            estimate_outage(&empty, 1.0),
            Err(Error::EmptySamples)
        ));
    }

    #[test]
    fn wilson_contains_point_estimate() {
        for (k, n) in [(0, 10), (1, 10), (5, 10), (10, 10), (3, 1_000_000)] {
            let e = OutageEstimate::from_counts(k, n).unwrap();
            assert!(e.ci95.0 <= e.p_hat && e.p_hat <= e.ci95.1);
        }
        // textbook value: 5/10 -> (0.2366, 0.7634)
        let e = OutageEstimate::from_counts(5, 10).unwrap();
        assert!((e.ci95.0 - 0.2366).abs() < 1e-4 && (e.ci95.1 - 0.7634).abs() < 1e-4);
    }

    #[test]
    fn exact_below_bound_at_reference_point() {
        let snr = 10f64.powf(0.6);
        let s = sample_sinr_exact(16, 2, snr, 200_000, 9).unwrap();
        let est = estimate_outage(&s, 2.0).unwrap();
        let bound = outage_bound(16, 2, 2.0, snr).unwrap().total.unwrap();
        assert!(est.p_hat <= bound);
    }

    #[test]
    fn grid_matches_sampled_values() {
        let snr = 3.0;
        let grid = exact_outage_grid(4, &[1, 2], &[snr], &[0.5, 1.0], 20_000, 17).unwrap();
        let s = sample_sinr_exact(4, 2, snr, 20_000, 17).unwrap();
        for (ti, &t) in [0.5, 1.0].iter().enumerate() {
            assert_eq!(grid.get(1, 0, ti).failures, count_outage(&s.values, t));
        }
        let og = omega_outage_grid(4, &[2], &[snr], &[1.0], 20_000, 17).unwrap();
        let os = sample_sinr_omega(4, 2, snr, 20_000, 17).unwrap();
        assert_eq!(og.get(0, 0, 0).failures, count_outage(&os.values, 1.0));
    }

    #[test]
    fn single_copy_omega_is_exact_model() {
        // D = 1: N = 1 and W = Y_1 exactly, so the two models share a law.
        let a = sample_sinr_exact(1, 1, 4.0, 200_000, 1).unwrap();
        let b = sample_sinr_omega(1, 1, 4.0, 200_000, 2).unwrap();
        assert!(ks_two_sample(&a.values, &b.values).unwrap() < 0.01);
    }

    #[test]
    fn omega_tracks_exact_model() {
        let snr = 4.0;
        let a = sample_sinr_exact(8, 2, snr, 400_000, 1).unwrap();
        let b = sample_sinr_omega(8, 2, snr, 400_000, 2).unwrap();
        let t = empirical_quantile(&a.values, 0.05).unwrap();
        let pa = estimate_outage(&a, t).unwrap().p_hat;
        let pb = estimate_outage(&b, t).unwrap().p_hat;
        assert!((pb / pa - 1.0).abs() < 0.1, "{pa} vs {pb}");
        let a = sample_sinr_exact(32, 4, snr, 1_000_000, 1).unwrap();
        let b = sample_sinr_omega(32, 4, snr, 1_000_000, 2).unwrap();
        assert!(ks_two_sample(&a.values, &b.values).unwrap() < 0.03);
        assert!(sample_sinr_omega(8, 0, snr, 10, 1).is_err());
    }

    #[test]
    fn conditional_estimators_agree_with_counts() {
        let snrs = [2.0, 8.0];
        let (d, m, t) = (8, 2, 1.5);
        let grid = exact_outage_grid(d, &[m], &snrs, &[t], 300_000, 4).unwrap();
        let cond = exact_outage_conditional(d, m, t, &snrs, 300_000, 4).unwrap();
        for (i, c) in cond.iter().enumerate() {
            let g = grid.get(0, i, 0);
            assert!(
                (c.mean - g.p_hat).abs() < 3.0 * g.ci_halfwidth(),
                "{} vs {}",
                c.mean,
                g.p_hat
            );
            assert!(c.std_error < g.ci_halfwidth());
        }
        let og = omega_outage_grid(d, &[m], &snrs, &[t], 300_000, 4).unwrap();
        let oc = omega_outage_conditional(d, m, t, &snrs, 300_000, 4).unwrap();
        for (i, c) in oc.iter().enumerate() {
            let g = og.get(0, i, 0);
            assert!((c.mean - g.p_hat).abs() < 3.0 * g.ci_halfwidth() + 3.0 * c.ci_halfwidth());
        }
    }

    #[test]
    fn conditional_m0_is_deterministic_cdf() {
        let est = exact_outage_conditional(4, 0, 1.0, &[2.0], 10, 1).unwrap();
        assert_relative_eq!(
            est[0].mean,
            outage_exact_m0(4, 1.0, 2.0).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn moment_examples() {
        let diag = moment_diagnostics(1, 3, 200_000, 1).unwrap();
        assert_relative_eq!(diag.predicted_second, 4.0 * 3.0 * 4.0, max_relative = 1e-14);
        assert_relative_eq!(diag.mean_alpha_sq, 1.0, max_relative = 1e-12);
        let diag = moment_diagnostics(8, 2, 1_000_000, 2).unwrap();
        assert_relative_eq!(
            diag.predicted_second,
            4.0 * 2.0 * (2.0 + 2.0 / 9.0),
            max_relative = 1e-14
        );
        assert!((diag.predicted_second - 17.778).abs() < 1e-3);
        assert!((diag.mean_w - diag.predicted_mean).abs() < 3.0 * diag.mean_w_se);
        assert!(
            (diag.second_moment_w - diag.predicted_second).abs() < 3.0 * diag.second_moment_w_se
        );
        assert!((diag.mean_alpha_sq - diag.predicted_alpha_sq).abs() < 3.0 * diag.mean_alpha_sq_se);
        assert!(diag.ks_distance_w_vs_omega < 0.02);
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_relative_eq!(ks_two_sample(&[1.0, 3.0], &[2.0, 4.0]).unwrap(), 0.5);
        assert!(ks_two_sample(&[], &[1.0]).is_err());
    }

    #[test]
    fn quantile_examples() {
        let v: Vec<f64> = (0..100).map(f64::from).collect();
        assert_eq!(empirical_quantile(&v, 0.0).unwrap(), 0.0);
        assert_eq!(empirical_quantile(&v, 0.1).unwrap(), 10.0);
        assert_eq!(empirical_quantile(&v, 1.0).unwrap(), 99.0);
        assert!(empirical_quantile(&[], 0.5).is_err());
    }

    #[test]
    fn sic_single_layer_is_plain_outage() {
        let layout = build_layout(4, 1).unwrap();
        let (snr, t) = (2.0, 1.0);
        let res = simulate_sic_frame(&layout, &[t], snr, 200_000, 8, SicDecision::Outage).unwrap();
        assert_eq!(res.len(), 1);
        assert_eq!(res[0].genie.failures, res[0].propagated.failures);
        let want = outage_exact_m0(4, t, snr).unwrap();
        assert!((res[0].genie.p_hat - want).abs() < 3.0 * res[0].genie.ci_halfwidth());
    }

    #[test]
    fn sic_frame_uses_channel_draws() {
        let layout = build_layout(4, 3).unwrap();
        let snr = 4.0;
        let sinr = genie_layer_sinr(&layout, snr, 1, 21).unwrap();
        let draw = draw_channel(&layout, snr, 21, 0).unwrap();
        // layer 1: the single user 0 on blocks 0..4 with every other user interfering
        let mut s = 0.0;
        let mut wx = 0.0;
        for l in 0..4 {
            let x = draw.power(l, 0);
            let i: f64 = layout
                .block_users(l)
                .iter()
                .filter(|&&q| q != 0)
                .map(|&q| draw.power(l, q))
                .sum();
            s += x;
            wx += i * x;
        }
        assert_relative_eq!(sinr[0][0], s / (wx / s + 1.0 / snr), max_relative = 1e-12);
    }

    #[test]
    fn sic_propagation_respects_union_bound() {
        let layout = build_layout(4, 3).unwrap();
        let snr = 10.0;
        let samples = genie_layer_sinr(&layout, snr, 100_000, 1).unwrap();
        let thresholds: Vec<f64> = samples
            .iter()
            .map(|s| empirical_quantile(s, 0.02).unwrap())
            .collect();
        for decision in [
            SicDecision::Outage,
            SicDecision::FiniteBlocklength { n: 256 },
        ] {
            let res = simulate_sic_frame(&layout, &thresholds, snr, 100_000, 2, decision).unwrap();
            let mut sum = 0.0;
            let mut prev = 0.0;
            for r in &res {
                sum += r.genie.p_hat;
                assert!(r.propagated.p_hat >= r.genie.p_hat);
                assert!(r.propagated.p_hat <= sum + 3.0 * r.propagated.ci_halfwidth());
                assert!(r.propagated.p_hat >= prev - 3.0 * r.propagated.ci_halfwidth());
                prev = r.propagated.p_hat;
            }
        }
        assert!(simulate_sic_frame(&layout, &[1.0], snr, 10, 1, SicDecision::Outage).is_err());
    }

    #[test]
    fn linklevel_without_interference_matches_sinr_model() {
        let layout = build_layout(4, 1).unwrap();
        let (snr, rate, n) = (2.0, 2.0, 256);
        let ll = simulate_linklevel(&layout, 0, rate, n, snr, 20_000, 3).unwrap();
        assert_eq!(ll.interferers, 0);
        let s = sample_sinr_exact(4, 0, snr, 200_000, 4).unwrap();
        let mc = avg_error_mc(&s, rate, n, DispersionMode::ExactV).unwrap();
        let slack = 3.0 * (ll.error.ci_halfwidth() + mc.ci_halfwidth());
        assert!(
            (ll.error.mean - mc.mean).abs() < slack + 0.01 * mc.mean,
            "{} vs {}",
            ll.error.mean,
            mc.mean
        );
    }

    #[test]
    fn linklevel_rejects_bad_input() {
        let layout = build_layout(4, 2).unwrap();
        assert!(simulate_linklevel(&layout, 9, 1.0, 64, 2.0, 10, 1).is_err());
        assert!(simulate_linklevel(&layout, 0, 1.0, 63, 2.0, 10, 1).is_err());
        let ll = simulate_linklevel(&layout, 0, 1.0, 64, 2.0, 10, 1).unwrap();
        assert_eq!((ll.copies, ll.interferers), (4, 1));
        assert!(ll.sinr.values.iter().all(|&g| g >= 0.0));
    }

    #[test]
    fn estimates_do_not_depend_on_thread_count() {
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let g = exact_outage_grid(8, &[1, 2], &[4.0], &[1.0], 40_000, 6).unwrap();
                let c = omega_outage_conditional(8, 2, 1.0, &[4.0], 40_000, 6).unwrap();
                (g, c[0].mean.to_bits())
            })
        };
        assert_eq!(run(1), run(3));
    }
}

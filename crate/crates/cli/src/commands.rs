//! One function per subcommand, each returning rendered output.

use noma_core::bounds::{correction_c, outage_bound, outage_bound_m0, psi_asymptotic};
use noma_core::channel::build_layout;
use noma_core::fbl::{avg_error_mc, avg_error_upper_checked, DispersionMode};
use noma_core::montecarlo::{
    empirical_quantile, exact_outage_grid, genie_layer_sinr, moment_diagnostics, omega_outage_grid,
    sample_sinr_exact, simulate_linklevel, simulate_sic_frame, SicDecision,
};
use noma_core::planner::{plan_frame, propagated_error, PlanMode, PlanRequest, PlanTarget};

use crate::config::{
    db_to_linear, ConfigFile, DecisionName, FblSweepConfig, LinklevelConfig, MomentCheckConfig,
    OutageSweepConfig, PlanConfig, PlanModeName, Resolved, SicSimConfig,
};
use crate::output::{num, opt, prob_ci, render_json, Metadata, Table};
use crate::{CliError, CommandKind, Outcome};

pub fn dispatch(
    kind: CommandKind,
    cfg: &ConfigFile,
    text: &str,
    seed: Option<u64>,
    trials: Option<u64>,
) -> Result<Outcome, CliError> {
    let missing = || CliError::Config(format!("no [{}] table in the configuration", kind.name()));
    macro_rules! go {
        ($table:expr, $f:ident) => {{
            let c = $table.as_ref().ok_or_else(missing)?;
            let r = c.run().resolve(seed, trials)?;
            log::info!("{}: seed {} trials {}", kind.name(), r.seed, r.trials);
            $f(c, r, Metadata::new(kind.name(), r.seed, r.trials, text))
        }};
    }
    match kind {
        CommandKind::OutageSweep => go!(cfg.outage_sweep, outage_sweep),
        CommandKind::FblSweep => go!(cfg.fbl_sweep, fbl_sweep),
        CommandKind::MomentCheck => go!(cfg.moment_check, moment_check),
        CommandKind::Plan => go!(cfg.plan, plan),
        CommandKind::Linklevel => go!(cfg.linklevel, linklevel),
        CommandKind::SicSim => go!(cfg.sic_sim, sic_sim),
    }
}

fn done(table: &Table, meta: &Metadata) -> Result<Outcome, CliError> {
    Ok(Outcome {
        text: table.render(meta)?,
        infeasible: false,
    })
}

fn nonempty<T>(v: &[T], name: &str) -> Result<(), CliError> {
    if v.is_empty() {
        return Err(CliError::Config(format!("{name} must not be empty")));
    }
    Ok(())
}

pub fn outage_sweep(
    c: &OutageSweepConfig,
    r: Resolved,
    meta: Metadata,
) -> Result<Outcome, CliError> {
    nonempty(&c.copies, "copies")?;
    nonempty(&c.interferers, "interferers")?;
    let ts = c.thresholds.values("thresholds")?;
    let dbs = c.snr_db.values("snr_db")?;
    let snrs: Vec<f64> = dbs.iter().map(|&x| db_to_linear(x)).collect();
    let with_omega: Vec<u32> = c
        .interferers
        .iter()
        .copied()
        .filter(|&m| c.omega && m > 0)
        .collect();

    let mut table = Table::new(&[
        "D",
        "M",
        "T",
        "snr_db",
        "mc_exact",
        "mc_ci_lo",
        "mc_ci_hi",
        "mc_omega",
        "psi",
        "residual",
        "bound_total",
        "bound_valid",
        "residual_is_bound",
        "psi_asymptotic",
    ]);
    for &d in &c.copies {
        let exact = exact_outage_grid(d, &c.interferers, &snrs, &ts, r.trials, r.seed)?;
        let omega = if with_omega.is_empty() {
            None
        } else {
            Some(omega_outage_grid(
                d,
                &with_omega,
                &snrs,
                &ts,
                r.trials,
                r.seed,
            )?)
        };
        for (mi, &m) in c.interferers.iter().enumerate() {
            let oi = with_omega.iter().position(|&x| x == m);
            for (ti, &t) in ts.iter().enumerate() {
                for (si, &snr) in snrs.iter().enumerate() {
                    let e = exact.get(mi, si, ti);
                    let om = match (&omega, oi) {
                        (Some(g), Some(oi)) => Some(g.get(oi, si, ti).p_hat),
                        _ => None,
                    };
                    let (psi, residual, total, valid, is_bound, floor) = if m == 0 {
                        let valid = t / (f64::from(d) * snr) <= 1.0 / correction_c(d);
                        (
                            None,
                            None,
                            Some(outage_bound_m0(d, t, snr)?),
                            valid,
                            valid,
                            None,
                        )
                    } else {
                        let b = outage_bound(d, m, t, snr)?;
                        (
                            b.psi,
                            b.residual,
                            b.total,
                            b.valid,
                            b.residual_is_bound,
                            Some(psi_asymptotic(d, m, t)?),
                        )
                    };
                    table.push(vec![
                        d.to_string(),
                        m.to_string(),
                        num(t),
                        num(dbs[si]),
                        num(e.p_hat),
                        num(e.ci95.0),
                        num(e.ci95.1),
                        opt(om),
                        opt(psi),
                        opt(residual),
                        opt(total),
                        valid.to_string(),
                        is_bound.to_string(),
                        opt(floor),
                    ]);
                }
            }
        }
    }
    done(&table, &meta)
}

struct Point {
    label: String,
    copies: u32,
    interferers: u32,
}

fn fbl_points(c: &FblSweepConfig) -> Result<Vec<Point>, CliError> {
    let mut pts: Vec<Point> = c
        .points
        .iter()
        .map(|p| Point {
            label: p
                .label
                .clone()
                .unwrap_or_else(|| format!("D{}M{}", p.copies, p.interferers)),
            copies: p.copies,
            interferers: p.interferers,
        })
        .collect();
    if let Some(l) = c.layout {
        let layout = build_layout(l.blocks, l.layers)?;
        pts.extend(layout.layers().iter().map(|s| Point {
            label: format!("layer{}", s.index),
            copies: s.copies as u32,
            interferers: s.interferers as u32,
        }));
    }
    nonempty(&pts, "points (or layout)")?;
    Ok(pts)
}

fn check_blocklengths(n: &[u64]) -> Result<(), CliError> {
    nonempty(n, "n")?;
    if let Some(bad) = n.iter().find(|&&x| x < 2) {
        return Err(CliError::Config(format!(
            "blocklength must be at least 2, got {bad}"
        )));
    }
    Ok(())
}

pub fn fbl_sweep(c: &FblSweepConfig, r: Resolved, meta: Metadata) -> Result<Outcome, CliError> {
    let pts = fbl_points(c)?;
    let rates = c.rates.values("rates")?;
    let dbs = c.snr_db.values("snr_db")?;
    check_blocklengths(&c.n)?;
    let mut table = Table::new(&[
        "label",
        "D",
        "M",
        "R",
        "n",
        "snr_db",
        "mc_avg_error",
        "mc_ci_lo",
        "mc_ci_hi",
        "analytic_upper",
    ]);
    for p in &pts {
        for &db in &dbs {
            let snr = db_to_linear(db);
            // one sample set per (point, snr), shared by every (R, n)
            let samples = if c.simulate {
                Some(sample_sinr_exact(
                    p.copies,
                    p.interferers,
                    snr,
                    r.trials,
                    r.seed,
                )?)
            } else {
                None
            };
            for &rate in &rates {
                for &n in &c.n {
                    let mc = match &samples {
                        Some(s) => Some(avg_error_mc(s, rate, n, c.dispersion)?),
                        None => None,
                    };
                    let (lo, hi) = mc.map(|m| prob_ci(m.ci95())).unwrap_or_default();
                    let upper =
                        avg_error_upper_checked(p.copies, p.interferers, rate, n, snr, c.nodes)?;
                    table.push(vec![
                        p.label.clone(),
                        p.copies.to_string(),
                        p.interferers.to_string(),
                        num(rate),
                        n.to_string(),
                        num(db),
                        opt(mc.map(|m| m.mean)),
                        lo,
                        hi,
                        num(upper.value),
                    ]);
                }
            }
        }
    }
    done(&table, &meta)
}

pub fn moment_check(
    c: &MomentCheckConfig,
    r: Resolved,
    meta: Metadata,
) -> Result<Outcome, CliError> {
    nonempty(&c.pairs, "pairs")?;
    let mut table = Table::new(&[
        "D",
        "M",
        "mean_w",
        "mean_w_se",
        "pred_mean",
        "second_w",
        "second_w_se",
        "pred_second",
        "alpha_sq",
        "alpha_sq_se",
        "pred_alpha_sq",
        "ks_w_vs_omega",
    ]);
    for &[d, m] in &c.pairs {
        let g = moment_diagnostics(d, m, r.trials, r.seed)?;
        table.push(vec![
            d.to_string(),
            m.to_string(),
            num(g.mean_w),
            num(g.mean_w_se),
            num(g.predicted_mean),
            num(g.second_moment_w),
            num(g.second_moment_w_se),
            num(g.predicted_second),
            num(g.mean_alpha_sq),
            num(g.mean_alpha_sq_se),
            num(g.predicted_alpha_sq),
            num(g.ks_distance_w_vs_omega),
        ]);
    }
    done(&table, &meta)
}

fn plan_request(c: &PlanConfig, snr: f64) -> Result<PlanRequest, CliError> {
    let mode = match c.mode {
        PlanModeName::Dyadic => PlanMode::Dyadic {
            blocks: c
                .blocks
                .ok_or_else(|| CliError::Config("dyadic mode needs blocks".into()))?,
        },
        PlanModeName::DesignRule => PlanMode::DesignRule {
            threshold: c.design_threshold.or(c.threshold).ok_or_else(|| {
                CliError::Config("design-rule mode needs design_threshold or threshold".into())
            })?,
        },
    };
    let target = match (c.threshold, c.eps_target) {
        (Some(t), None) => PlanTarget::Threshold(t),
        (None, Some(e)) => PlanTarget::Outage(e),
        _ => {
            return Err(CliError::Config(
                "set exactly one of threshold and eps_target".into(),
            ))
        }
    };
    Ok(PlanRequest {
        layers: c.layers,
        snr,
        mode,
        target,
        allocation: c.allocation,
    })
}

pub fn plan(c: &PlanConfig, _r: Resolved, meta: Metadata) -> Result<Outcome, CliError> {
    let req = plan_request(c, db_to_linear(c.snr_db))?;
    let p = plan_frame(&req)?;
    Ok(Outcome {
        text: render_json(&meta, &p)?,
        infeasible: !p.is_feasible(),
    })
}

pub fn linklevel(c: &LinklevelConfig, r: Resolved, meta: Metadata) -> Result<Outcome, CliError> {
    nonempty(&c.cases, "cases")?;
    let rates = c.rates.values("rates")?;
    let dbs = c.snr_db.values("snr_db")?;
    check_blocklengths(&c.n)?;
    let model_trials = c.model_trials.unwrap_or(r.trials);
    let mut table = Table::new(&[
        "L",
        "B",
        "user",
        "layer",
        "D",
        "M",
        "R",
        "n",
        "snr_db",
        "ll_error",
        "ll_ci_lo",
        "ll_ci_hi",
        "model_error",
        "model_ci_lo",
        "model_ci_hi",
        "analytic_upper",
    ]);
    for case in &c.cases {
        let layout = build_layout(case.blocks, case.layers)?;
        for &db in &dbs {
            let snr = db_to_linear(db);
            let mut model = None;
            for &n in &c.n {
                // the measured SINR does not depend on the rate
                let ll =
                    simulate_linklevel(&layout, case.user, rates[0], n, snr, r.trials, r.seed)?;
                let (d, m) = (ll.copies as u32, ll.interferers as u32);
                if model.is_none() {
                    model = Some(sample_sinr_exact(d, m, snr, model_trials, r.seed)?);
                }
                let model = model.as_ref().expect("set above");
                for &rate in &rates {
                    let e = avg_error_mc(&ll.sinr, rate, n, DispersionMode::ExactV)?;
                    let me = avg_error_mc(model, rate, n, DispersionMode::ExactV)?;
                    let upper = avg_error_upper_checked(d, m, rate, n, snr, c.nodes)?;
                    let (e_lo, e_hi) = prob_ci(e.ci95());
                    let (m_lo, m_hi) = prob_ci(me.ci95());
                    table.push(vec![
                        case.blocks.to_string(),
                        case.layers.to_string(),
                        case.user.to_string(),
                        ll.layer.to_string(),
                        d.to_string(),
                        m.to_string(),
                        num(rate),
                        n.to_string(),
                        num(db),
                        num(e.mean),
                        e_lo,
                        e_hi,
                        num(me.mean),
                        m_lo,
                        m_hi,
                        num(upper.value),
                    ]);
                }
            }
        }
    }
    done(&table, &meta)
}

fn sic_thresholds(
    c: &SicSimConfig,
    layout: &noma_core::channel::FrameLayout,
    snr: f64,
    r: Resolved,
) -> Result<Vec<f64>, CliError> {
    match (&c.thresholds, c.eps_target, c.genie_quantile) {
        (Some(t), None, None) => Ok(t.clone()),
        (None, Some(eps), None) => {
            let p = plan_frame(&PlanRequest {
                layers: c.layers,
                snr,
                mode: PlanMode::Dyadic { blocks: c.blocks },
                target: PlanTarget::Outage(eps),
                allocation: Default::default(),
            })?;
            p.layers
                .iter()
                .map(|l| {
                    l.threshold.ok_or_else(|| {
                        CliError::Infeasible(format!("layer {}: {}", l.layer, l.issues.join("; ")))
                    })
                })
                .collect()
        }
        (None, None, Some(q)) => {
            if !(q > 0.0 && q < 1.0) {
                return Err(CliError::Config(format!(
                    "genie_quantile must lie in (0, 1), got {q}"
                )));
            }
            // tuned on draws independent of the evaluation run
            let draws = genie_layer_sinr(layout, snr, r.trials, r.seed.wrapping_add(1))?;
            draws
                .iter()
                .map(|v| Ok(empirical_quantile(v, q)?))
                .collect()
        }
        _ => Err(CliError::Config(
            "set exactly one of thresholds, eps_target and genie_quantile".into(),
        )),
    }
}

pub fn sic_sim(c: &SicSimConfig, r: Resolved, meta: Metadata) -> Result<Outcome, CliError> {
    let layout = build_layout(c.blocks, c.layers)?;
    let dbs = c.snr_db.values("snr_db")?;
    let decision = match c.decision {
        DecisionName::Outage => SicDecision::Outage,
        DecisionName::FiniteBlocklength => SicDecision::FiniteBlocklength {
            n: c.n
                .ok_or_else(|| CliError::Config("finite-blocklength decision needs n".into()))?,
        },
    };
    let mut table = Table::new(&[
        "snr_db",
        "layer",
        "D",
        "K",
        "M",
        "threshold",
        "eps_genie",
        "eps_ci_lo",
        "eps_ci_hi",
        "rho",
        "rho_ci_lo",
        "rho_ci_hi",
        "rho_recursion",
        "union_bound",
    ]);
    for &db in &dbs {
        let snr = db_to_linear(db);
        let ts = sic_thresholds(c, &layout, snr, r)?;
        let res = simulate_sic_frame(&layout, &ts, snr, r.trials, r.seed, decision)?;
        let eps: Vec<f64> = res.iter().map(|e| e.genie.p_hat).collect();
        let rec = propagated_error(&eps)?;
        let mut union = 0.0;
        for ((e, spec), rho_rec) in res.iter().zip(layout.layers()).zip(rec) {
            union += e.genie.p_hat;
            table.push(vec![
                num(db),
                e.layer.to_string(),
                spec.copies.to_string(),
                spec.users.to_string(),
                spec.interferers.to_string(),
                num(e.threshold),
                num(e.genie.p_hat),
                num(e.genie.ci95.0),
                num(e.genie.ci95.1),
                num(e.propagated.p_hat),
                num(e.propagated.ci95.0),
                num(e.propagated.ci95.1),
                num(rho_rec),
                num(union.min(1.0)),
            ]);
        }
    }
    done(&table, &meta)
}

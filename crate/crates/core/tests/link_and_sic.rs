use noma_core::channel::build_layout;
use noma_core::fbl::{avg_error_mc, avg_error_upper, DispersionMode, DEFAULT_NODES};
use noma_core::montecarlo::{
    sample_sinr_exact, simulate_linklevel, simulate_sic_frame, SicDecision,
};
use noma_core::planner::{plan_frame, PlanMode, PlanRequest, PlanTarget, RiskAllocation};

fn snr_6db() -> f64 {
    10f64.powf(0.6)
}

#[test]
fn mc_error_below_analytic_upper() {
    let snr = snr_6db();
    let s = sample_sinr_exact(16, 2, snr, 500_000, 31).unwrap();
    for rate in [1.5, 2.0, 2.5] {
        let mc = avg_error_mc(&s, rate, 512, DispersionMode::ExactV).unwrap();
        let upper = avg_error_upper(16, 2, rate, 512, snr, DEFAULT_NODES).unwrap();
        assert!(
            mc.mean <= upper + 3.0 * mc.ci_halfwidth(),
            "R={rate}: {} > {upper}",
            mc.mean
        );
    }
}

#[test]
fn mc_error_monotone_in_snr_and_rate() {
    let mut prev = f64::INFINITY;
    for db in [0.0, 4.0, 8.0, 12.0] {
        let s = sample_sinr_exact(8, 1, 10f64.powf(db / 10.0), 100_000, 5).unwrap();
        let v = avg_error_mc(&s, 1.0, 256, DispersionMode::ExactV)
            .unwrap()
            .mean;
        assert!(v <= prev);
        prev = v;
    }
    let s = sample_sinr_exact(8, 1, 4.0, 100_000, 5).unwrap();
    let mut prev = 0.0;
    for r in [0.5, 1.0, 1.5, 2.0] {
        let v = avg_error_mc(&s, r, 256, DispersionMode::Vbar).unwrap().mean;
        assert!(v >= prev && (0.0..=1.0).contains(&v));
        prev = v;
    }
}

#[test]
fn linklevel_sits_near_the_sinr_model() {
    // Layer 1 of an L=16, B=3 frame: D=16, two co-channel layers above it.
    let layout = build_layout(16, 3).unwrap();
    let snr = snr_6db();
    let ll = simulate_linklevel(&layout, 0, 2.0, 512, snr, 4_000, 7).unwrap();
    assert_eq!((ll.copies, ll.interferers), (16, 2));
    let s = sample_sinr_exact(16, 2, snr, 400_000, 8).unwrap();
    let model = avg_error_mc(&s, 2.0, 512, DispersionMode::ExactV).unwrap();
    // "slightly lower"; allow for the link estimate's noise
    assert!(ll.error.mean <= model.mean + 3.0 * (ll.error.ci_halfwidth() + model.ci_halfwidth()));
    assert!(
        ll.error.mean >= 0.5 * model.mean,
        "{} vs {}",
        ll.error.mean,
        model.mean
    );
}

#[test]
fn linklevel_error_falls_then_saturates_with_n() {
    let layout = build_layout(16, 3).unwrap();
    let snr = snr_6db();
    let errs: Vec<_> = [64u64, 256, 1024, 4096]
        .iter()
        .map(|&n| {
            simulate_linklevel(&layout, 0, 2.0, n, snr, 10_000, 9)
                .unwrap()
                .error
        })
        .collect();
    for w in errs.windows(2) {
        let slack = 3.0 * (w[0].ci_halfwidth() + w[1].ci_halfwidth());
        assert!(w[1].mean <= w[0].mean + slack, "{errs:?}");
    }
    // the longest blocks approach the outage floor rather than zero
    let s = sample_sinr_exact(16, 2, snr, 400_000, 10).unwrap();
    let floor = noma_core::montecarlo::estimate_outage(&s, 3.0)
        .unwrap()
        .p_hat;
    let last = errs.last().unwrap();
    assert!(last.mean > 0.3 * floor, "{} vs outage {floor}", last.mean);
}

#[test]
fn planned_small_frame_meets_union_bound() {
    let eps_out = 1e-2;
    let snr = 10.0;
    let plan = plan_frame(&PlanRequest {
        layers: 3,
        snr,
        mode: PlanMode::Dyadic { blocks: 4 },
        target: PlanTarget::Outage(eps_out),
        allocation: RiskAllocation::PerLayer,
    })
    .unwrap();
    let thresholds: Vec<f64> = plan.layers.iter().map(|l| l.threshold.unwrap()).collect();
    let layout = plan.frame_layout().unwrap();
    let res =
        simulate_sic_frame(&layout, &thresholds, snr, 200_000, 3, SicDecision::Outage).unwrap();
    for (b, r) in res.iter().enumerate() {
        let slack = 3.0 * r.propagated.ci_halfwidth();
        assert!(
            r.genie.p_hat <= eps_out + 3.0 * r.genie.ci_halfwidth(),
            "layer {}: {}",
            b + 1,
            r.genie.p_hat
        );
        assert!(
            r.propagated.p_hat <= (b + 1) as f64 * eps_out + slack,
            "layer {}: {}",
            b + 1,
            r.propagated.p_hat
        );
    }
}

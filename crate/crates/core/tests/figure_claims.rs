//! Qualitative claims behind each campaign, at reduced Monte Carlo sizes.

use oia_core::experiments::{
    run_asymptote_convergence, run_oia_vs_zfbf, run_rate_surface, run_to_fraction, run_upa_vs_opa, ExperimentId,
    ExperimentSpec, ResultTable, SnrGrid,
};

fn col(t: &ResultTable, name: &str) -> Vec<f64> {
    t.values(name).unwrap()
}

#[test]
fn rate_surface_trends() {
    let grid = SnrGrid::new(0.0, 40.0, 10.0).unwrap();
    let t = run_rate_surface(&ExperimentSpec::new(ExperimentId::RateSurface).with_trials(200).with_seed(31).with_snr(grid))
        .unwrap();
    assert_eq!(t.checks.violations(), 0);
    let (s1, s2) = (col(&t, "snr1_db"), col(&t, "snr2_db"));
    let (mean, se) = (col(&t, "rate_mean"), col(&t, "rate_stderr"));
    let at = |a: f64, b: f64| (0..s1.len()).find(|&i| s1[i] == a && s2[i] == b).unwrap();
    let points = grid.points();
    for &fixed in &points {
        for w in points.windows(2) {
            let (i, j) = (at(w[0], fixed), at(w[1], fixed));
            assert!(mean[j] <= mean[i] + 2.0 * (se[i] + se[j]), "SNR2 {fixed}: SNR1 {} -> {}", w[0], w[1]);
            let (i, j) = (at(fixed, w[0]), at(fixed, w[1]));
            assert!(mean[j] + 2.0 * (se[i] + se[j]) >= mean[i], "SNR1 {fixed}: SNR2 {} -> {}", w[0], w[1]);
        }
    }

    let high = ExperimentSpec::new(ExperimentId::RateSurface)
        .with_trials(200)
        .with_seed(32)
        .with_snr(SnrGrid::single(60.0).unwrap());
    let rate = col(&run_rate_surface(&high).unwrap(), "rate_mean")[0];
    assert!(rate < 0.05, "rate at 60 dB: {rate}");
}

#[test]
fn opa_gap_largest_at_low_snr() {
    let t = run_upa_vs_opa(
        &ExperimentSpec::new(ExperimentId::UpaVsOpa)
            .with_sizes(vec![9])
            .with_trials(100)
            .with_seed(33)
            .with_snr(SnrGrid::new(0.0, 40.0, 40.0).unwrap()),
    )
    .unwrap();
    let gap = col(&t, "gap_mean");
    assert!(gap[0] > gap[1], "{gap:?}");
    assert!(col(&t, "upa_mean").iter().chain(&col(&t, "opa_mean")).all(|&r| r >= 0.0));
}

#[test]
fn oia_and_zfbf_meet_at_high_snr() {
    let t = run_oia_vs_zfbf(
        &ExperimentSpec::new(ExperimentId::OiaVsZfbf)
            .with_sizes(vec![3])
            .with_trials(300)
            .with_seed(34),
    )
    .unwrap();
    let n = t.rows.len();
    let rel = |a: &str, b: &str| -> Vec<f64> {
        let (x, y) = (col(&t, a), col(&t, b));
        x.iter().zip(&y).map(|(p, q)| (p - q).abs() / p.max(q.abs()).max(1e-12)).collect()
    };
    let zf = rel("oia_opa_mean", "zfbf_opa_mean");
    let pa = rel("oia_opa_mean", "oia_upa_mean");
    let peak_zf = zf.iter().cloned().fold(0.0, f64::max);
    let peak_pa = pa.iter().cloned().fold(0.0, f64::max);
    for k in n - 3..n {
        assert!(zf[k] <= 0.1 * peak_zf, "OIA/ZFBF gap at row {k}: {} (peak {peak_zf})", zf[k]);
        assert!(pa[k] <= 0.1 * peak_pa, "UPA/OPA gap at row {k}: {} (peak {peak_pa})", pa[k]);
    }
}

#[test]
fn primary_and_secondary_rates_same_order() {
    let t = run_asymptote_convergence(
        &ExperimentSpec::new(ExperimentId::AsymptoteConvergence)
            .with_sizes(vec![8])
            .with_trials(50)
            .with_seed(35)
            .with_snr(SnrGrid::new(0.0, 10.0, 10.0).unwrap()),
    )
    .unwrap();
    for (s, p) in col(&t, "secondary_asym").iter().zip(col(&t, "primary_asym")) {
        let ratio = s / p;
        assert!((0.1..=10.0).contains(&ratio), "secondary {s} vs primary {p}");
    }
    for (mc, asym) in col(&t, "primary_mc_mean").iter().zip(col(&t, "primary_asym")) {
        assert!((mc - asym).abs() <= 0.05 * asym, "primary {mc} vs {asym}");
    }
}

#[test]
fn to_fraction_high_snr_limits() {
    let t = run_to_fraction(
        &ExperimentSpec::new(ExperimentId::ToFraction)
            .with_trials(20)
            .with_seed(36)
            .with_snr(SnrGrid::single(40.0).unwrap()),
    )
    .unwrap();
    let (alpha, s_inf) = (col(&t, "alpha11"), col(&t, "s_inf"));
    for (a, s) in alpha.iter().zip(&s_inf) {
        if *a == 2.0 {
            assert!(s.abs() <= 0.02);
        }
        if *a == 0.5 {
            assert!((s - 1.0).abs() <= 0.05);
        }
    }
}

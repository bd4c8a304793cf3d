//! Large-system predictions against finite-size Monte Carlo draws.

use oia_core::asymptotics::{
    asymptotic_m1, asymptotic_waterlevel, mp_expectation, stieltjes_kernel, upa_power_distribution, AsymptoticModel,
    MpLaw, Ratios,
};
use oia_core::channel::{draw_channel, Dimensions, PowerNoiseConfig, TrialRng};
use oia_core::experiments::{run_to_fraction, ExperimentId, ExperimentSpec, LinkDraw, SnrGrid};
use oia_core::linalg::hermitian_eigenvalues;
use oia_core::oia::{effective_cross_channel, oia_precoder};
use oia_core::primary::{gram_eigenvalues, waterfill};
use oia_core::secondary::upa;

#[test]
fn wishart_first_moment_matches_mp_mean() {
    for (n, m) in [(64, 64), (32, 64), (64, 32)] {
        let mut total = 0.0;
        let draws = 200;
        for d in 0..draws {
            let h = draw_channel(&mut TrialRng::new(21, d), n, m);
            let gram = h.adjoint() * &h;
            total += gram.trace().re / m as f64;
        }
        let empirical = total / draws as f64;
        let law = MpLaw::new(n as f64 / m as f64).unwrap();
        let mean = mp_expectation(&law, |x| x, f64::NEG_INFINITY).unwrap();
        assert!((empirical - mean).abs() <= 0.02 * mean, "{n}x{m}: {empirical} vs {mean}");
    }
}

#[test]
fn waterlevel_and_used_dimensions_at_256() {
    let n = 256;
    for snr_db in [0.0, 10.0, 20.0] {
        let cfg = PowerNoiseConfig::from_snr_db(snr_db, snr_db).unwrap();
        let beta_inf = asymptotic_waterlevel(1.0, cfg.p1_max, cfg.sigma1_sq).unwrap();
        let m1_inf = asymptotic_m1(1.0, beta_inf, cfg.sigma1_sq).unwrap();
        let h = draw_channel(&mut TrialRng::new(22, snr_db as u64), n, n);
        let eigs = gram_eigenvalues(&h).unwrap();
        let wf = waterfill(&eigs, cfg.sigma1_sq, n as f64 * cfg.p1_max).unwrap();
        assert!((wf.beta - beta_inf).abs() <= 0.02 * beta_inf, "{snr_db} dB: beta {} vs {beta_inf}", wf.beta);
        let frac = wf.m1 as f64 / n as f64;
        assert!((frac - m1_inf).abs() <= 0.03, "{snr_db} dB: m1/M1 {frac} vs {m1_inf}");
    }
}

#[test]
fn upa_spectrum_kernel_at_256() {
    // alpha22 = 1.25 separates the candidate normalizations of the gamma atom.
    let dims = Dimensions::new(256, 320, 256, 320).unwrap();
    let cfg = PowerNoiseConfig::from_snr_db(10.0, 10.0).unwrap();
    let model = AsymptoticModel::new(Ratios::from_dimensions(&dims), cfg).unwrap();
    let draw = LinkDraw::draw(&mut TrialRng::new(23, 0), &dims).unwrap();
    let t = &draw.primary;
    let wf = waterfill(&t.lambda_sq, cfg.sigma1_sq, dims.m1 as f64 * cfg.p1_max).unwrap();
    let pre = oia_precoder(&effective_cross_channel(&t.u, &draw.channels.h12, wf.m1).unwrap()).unwrap();
    let pa = upa(&pre.v2, cfg.p2_max);
    let cov = &pa.v2_effective * oia_core::linalg::real_diag(&pa.p2) * pa.v2_effective.adjoint();
    let spectrum = hermitian_eigenvalues(&cov, "test").unwrap();

    let alpha22 = dims.alpha(2, 2);
    let dist = upa_power_distribution(model.l2_inf, cfg.p2_max);
    for u in [0.0, 0.1, 0.5, 1.0, 3.0] {
        let empirical = spectrum
            .iter()
            .map(|&p| p.max(0.0) / (1.0 + p.max(0.0) * u / alpha22))
            .sum::<f64>()
            / dims.m2 as f64;
        let predicted = stieltjes_kernel(&dist, u, alpha22).unwrap();
        assert!(
            (empirical - predicted).abs() <= 0.01 * empirical,
            "u = {u}: empirical {empirical}, predicted {predicted}"
        );
    }
}

#[test]
fn to_fraction_error_shrinks_with_size() {
    let grid = SnrGrid::new(0.0, 40.0, 10.0).unwrap();
    let run = |n: usize, trials: usize| {
        run_to_fraction(
            &ExperimentSpec::new(ExperimentId::ToFraction)
                .with_sizes(vec![n])
                .with_trials(trials)
                .with_seed(24)
                .with_snr(grid),
        )
        .unwrap()
    };
    let (small, large) = (run(64, 100), run(256, 25));
    let err = |t: &oia_core::experiments::ResultTable| -> Vec<f64> {
        let sim = t.values("s_frac_mean").unwrap();
        let th = t.values("s_inf").unwrap();
        sim.iter().zip(&th).map(|(a, b)| (a - b).abs()).collect()
    };
    let stderr = large.values("s_frac_stderr").unwrap();
    for (i, (e64, e256)) in err(&small).iter().zip(err(&large)).enumerate() {
        assert!(e256 <= e64 + 2.0 * stderr[i] + 1e-12, "row {i}: N=256 err {e256} vs N=64 err {e64}");
    }
}

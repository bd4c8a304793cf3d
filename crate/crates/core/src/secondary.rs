//! Secondary receiver whitening, rate evaluation, and the two power
//! allocation policies over the aligned dimensions.

use std::f64::consts::LN_2;

use crate::error::{OiaError, Result};
use crate::linalg::{
    hermitian_inv_sqrt, ln_abs_det, ln_det_hpd, real_diag, sorted_svd, ComplexMatrix, SortedSvd, C64,
};
use crate::primary::waterfill;

/// Colored noise at the secondary receiver: primary CCI plus thermal noise.
#[derive(Debug, Clone)]
pub struct SecondaryNoiseCov {
    pub q: ComplexMatrix,
}

/// `Q = H21 V_H11 P1 V_H11^H H21^H + sigma2^2 I`.
pub fn cci_covariance(
    h21: &ComplexMatrix,
    v_h11: &ComplexMatrix,
    p1: &[f64],
    sigma2_sq: f64,
) -> Result<SecondaryNoiseCov> {
    const OP: &str = "cci_covariance";
    if h21.ncols() != v_h11.nrows() || v_h11.ncols() != p1.len() {
        return Err(OiaError::shape(
            OP,
            "H21 N2xM1, V_H11 M1xM1, M1 powers",
            format!(
                "H21 {}x{}, V_H11 {}x{}, {} powers",
                h21.nrows(),
                h21.ncols(),
                v_h11.nrows(),
                v_h11.ncols(),
                p1.len()
            ),
        ));
    }
    let n2 = h21.nrows();
    let a = h21 * v_h11;
    let q = &a * real_diag(p1) * a.adjoint() + ComplexMatrix::identity(n2, n2) * C64::new(sigma2_sq, 0.0);
    Ok(SecondaryNoiseCov {
        q: (&q + q.adjoint()) * C64::new(0.5, 0.0),
    })
}

fn received_cov(h22: &ComplexMatrix, v2: &ComplexMatrix, p2: &[f64]) -> Result<ComplexMatrix> {
    if h22.ncols() != v2.nrows() || v2.ncols() != p2.len() {
        return Err(OiaError::shape(
            "secondary_rate",
            "H22 N2xM2, V2 M2xL2, L2 powers",
            format!(
                "H22 {}x{}, V2 {}x{}, {} powers",
                h22.nrows(),
                h22.ncols(),
                v2.nrows(),
                v2.ncols(),
                p2.len()
            ),
        ));
    }
    let a = h22 * v2;
    Ok(&a * real_diag(p2) * a.adjoint())
}

/// `log2 |I + Q^{-1/2} H22 V2 P2 V2^H H22^H Q^{-1/2}|`: the rate with the
/// whitening post-processor `D2 = Q^{-1/2}`.
pub fn secondary_rate(h22: &ComplexMatrix, v2: &ComplexMatrix, p2: &[f64], q: &SecondaryNoiseCov) -> Result<f64> {
    if p2.is_empty() {
        return Ok(0.0);
    }
    let signal = received_cov(h22, v2, p2)?;
    let w = hermitian_inv_sqrt(&q.q)?;
    let n2 = q.q.nrows();
    let whitened = ComplexMatrix::identity(n2, n2) + &w * signal * &w;
    Ok(ln_det_hpd(&whitened, "secondary_rate")? / LN_2)
}

/// Same rate through `log2 |I + Q^{-1} H22 V2 P2 V2^H H22^H|` without forming
/// the whitening filter.
pub fn secondary_rate_colored(
    h22: &ComplexMatrix,
    v2: &ComplexMatrix,
    p2: &[f64],
    q: &SecondaryNoiseCov,
) -> Result<f64> {
    if p2.is_empty() {
        return Ok(0.0);
    }
    let signal = received_cov(h22, v2, p2)?;
    let q_inv = q.q.clone().try_inverse().ok_or(OiaError::NotPositiveDefinite {
        op: "secondary_rate_colored",
        min_eigenvalue: f64::NAN,
    })?;
    let n2 = q.q.nrows();
    Ok(ln_abs_det(&(ComplexMatrix::identity(n2, n2) + q_inv * signal)) / LN_2)
}

/// Whitened equivalent channel `K = Q^{-1/2} H22 V2` and its SVD.
#[derive(Debug, Clone)]
pub struct EquivalentChannel {
    pub v2: ComplexMatrix,
    pub k: ComplexMatrix,
    pub svd: Option<SortedSvd>,
    /// Eigenvalues of `K^H K`, length L2, zero beyond `min(N2, L2)`.
    pub lambda_khk: Vec<f64>,
}

impl EquivalentChannel {
    pub fn l2(&self) -> usize {
        self.v2.ncols()
    }
}

pub fn equivalent_channel(h22: &ComplexMatrix, v2: &ComplexMatrix, q: &SecondaryNoiseCov) -> Result<EquivalentChannel> {
    if h22.ncols() != v2.nrows() || h22.nrows() != q.q.nrows() {
        return Err(OiaError::shape(
            "equivalent_channel",
            "H22 N2xM2, V2 M2xL2, Q N2xN2",
            format!(
                "H22 {}x{}, V2 {}x{}, Q {}x{}",
                h22.nrows(),
                h22.ncols(),
                v2.nrows(),
                v2.ncols(),
                q.q.nrows(),
                q.q.ncols()
            ),
        ));
    }
    let k = hermitian_inv_sqrt(&q.q)? * h22 * v2;
    let l2 = v2.ncols();
    if l2 == 0 {
        return Ok(EquivalentChannel {
            v2: v2.clone(),
            k,
            svd: None,
            lambda_khk: Vec::new(),
        });
    }
    let svd = sorted_svd(&k)?;
    let mut lambda_khk = vec![0.0; l2];
    for (slot, s) in lambda_khk.iter_mut().zip(&svd.singular_values) {
        *slot = s * s;
    }
    Ok(EquivalentChannel {
        v2: v2.clone(),
        k,
        svd: Some(svd),
        lambda_khk,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerPolicy {
    Uniform,
    Optimal,
}

#[derive(Debug, Clone)]
pub struct SecondaryPa {
    pub p2: Vec<f64>,
    /// `V2` for the uniform policy, `V2 V_K` for the optimal one.
    pub v2_effective: ComplexMatrix,
    pub beta2: Option<f64>,
    pub policy: PowerPolicy,
}

impl SecondaryPa {
    pub fn total_power(&self) -> f64 {
        // Trace(V P V^H) = sum_n p_n ||v_n||^2
        self.v2_effective
            .column_iter()
            .zip(&self.p2)
            .map(|(col, p)| p * col.norm_squared())
            .sum()
    }
}

/// Spreads `M2 p2_max` evenly over the `L2` columns of `v2`.
pub fn upa(v2: &ComplexMatrix, p2_max: f64) -> SecondaryPa {
    let (m2, l2) = v2.shape();
    let p2 = if l2 == 0 {
        Vec::new()
    } else {
        vec![m2 as f64 * p2_max / l2 as f64; l2]
    };
    SecondaryPa {
        p2,
        v2_effective: v2.clone(),
        beta2: None,
        policy: PowerPolicy::Uniform,
    }
}

/// Water-filling over the eigenmodes of `K^H K`:
/// `p_n = (beta2 - 1/lambda_n)^+`, `sum p_n = M2 p2_max`.
pub fn opa(equivalent: &EquivalentChannel, p2_max: f64) -> Result<SecondaryPa> {
    let m2 = equivalent.v2.nrows();
    let Some(svd) = &equivalent.svd else {
        return Ok(SecondaryPa {
            p2: Vec::new(),
            v2_effective: equivalent.v2.clone(),
            beta2: None,
            policy: PowerPolicy::Optimal,
        });
    };
    let solution = waterfill(&equivalent.lambda_khk, 1.0, m2 as f64 * p2_max).map_err(|e| match e {
        OiaError::NoUsableDimension { .. } => OiaError::NoUsableDimension { op: "opa" },
        other => other,
    })?;
    Ok(SecondaryPa {
        p2: solution.powers,
        v2_effective: &equivalent.v2 * &svd.v,
        beta2: Some(solution.beta),
        policy: PowerPolicy::Optimal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{draw_channel, TrialRng};
    use crate::linalg::{hermitian_eigen, orthonormality_residual};

    fn scalar(v: f64) -> ComplexMatrix {
        ComplexMatrix::from_element(1, 1, C64::new(v, 0.0))
    }

    #[test]
    fn cci_without_primary_power_is_white() {
        let h21 = draw_channel(&mut TrialRng::new(1, 0), 3, 2);
        let q = cci_covariance(&h21, &ComplexMatrix::identity(2, 2), &[0.0, 0.0], 0.7).unwrap();
        let expected = ComplexMatrix::identity(3, 3) * C64::new(0.7, 0.0);
        assert_eq!(q.q, expected);
    }

    #[test]
    fn cci_identity_case() {
        let i = ComplexMatrix::identity(2, 2);
        let q = cci_covariance(&i, &i, &[1.0, 1.0], 0.25).unwrap();
        assert!(crate::linalg::frobenius(&(q.q - i * C64::new(1.25, 0.0))) < 1e-15);
    }

    #[test]
    fn cci_floor_is_noise() {
        let mut rng = TrialRng::new(2, 0);
        let h21 = draw_channel(&mut rng, 4, 5);
        let v = crate::linalg::sorted_svd(&draw_channel(&mut rng, 5, 5)).unwrap().v;
        let q = cci_covariance(&h21, &v, &[3.0, 1.0, 0.5, 0.0, 0.2], 0.1).unwrap();
        let (eigs, _) = hermitian_eigen(&q.q, "test").unwrap();
        assert!(eigs[0] >= 0.1 - 1e-12);
    }

    #[test]
    fn zero_power_zero_rate() {
        let q = SecondaryNoiseCov { q: scalar(1.0) };
        assert_eq!(secondary_rate(&scalar(1.0), &scalar(1.0), &[0.0], &q).unwrap(), 0.0);
        assert_eq!(secondary_rate(&scalar(1.0), &ComplexMatrix::zeros(1, 0), &[], &q).unwrap(), 0.0);
    }

    #[test]
    fn scalar_rate() {
        let q = SecondaryNoiseCov { q: scalar(0.5) };
        let r = secondary_rate(&scalar(1.0), &scalar(1.0), &[3.0], &q).unwrap();
        assert!((r - (1.0f64 + 6.0).log2()).abs() < 1e-14);
    }

    fn random_instance(seed: u64) -> (ComplexMatrix, ComplexMatrix, SecondaryNoiseCov) {
        let mut rng = TrialRng::new(seed, 0);
        let h22 = draw_channel(&mut rng, 4, 5);
        let h21 = draw_channel(&mut rng, 4, 3);
        let v2 = crate::linalg::sorted_svd(&draw_channel(&mut rng, 5, 3))
            .unwrap()
            .u
            .columns(0, 3)
            .into_owned();
        let q = cci_covariance(&h21, &ComplexMatrix::identity(3, 3), &[2.0, 1.0, 0.5], 0.2).unwrap();
        (h22, v2, q)
    }

    #[test]
    fn whitened_and_colored_forms_agree() {
        for seed in 0..20 {
            let (h22, v2, q) = random_instance(seed);
            let p2 = [1.5, 0.5, 3.0];
            let a = secondary_rate(&h22, &v2, &p2, &q).unwrap();
            let b = secondary_rate_colored(&h22, &v2, &p2, &q).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn uniform_allocation_values() {
        let v2 = ComplexMatrix::identity(4, 4).columns(0, 2).into_owned();
        let pa = upa(&v2, 1.0);
        assert_eq!(pa.p2, vec![2.0, 2.0]);
        assert!((pa.total_power() - 4.0).abs() < 1e-15);
        let full = upa(&ComplexMatrix::identity(3, 3), 0.7);
        assert!(full.p2.iter().all(|&p| (p - 0.7).abs() < 1e-15));
        let empty = upa(&ComplexMatrix::zeros(3, 0), 1.0);
        assert!(empty.p2.is_empty());
    }

    #[test]
    fn optimal_allocation_single_mode() {
        let q = SecondaryNoiseCov { q: scalar(1.0) };
        let eq = equivalent_channel(&scalar(1.0), &scalar(1.0), &q).unwrap();
        let pa = opa(&eq, 3.0).unwrap();
        assert!((pa.p2[0] - 3.0).abs() < 1e-15);
        assert!((pa.beta2.unwrap() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn optimal_allocation_two_modes() {
        // K = diag(sqrt 2, sqrt 0.5) with unit noise and a budget of 2 = M2 p2_max.
        let q = SecondaryNoiseCov {
            q: ComplexMatrix::identity(2, 2),
        };
        let h22 = real_diag(&[2f64.sqrt(), 0.5f64.sqrt()]);
        let eq = equivalent_channel(&h22, &ComplexMatrix::identity(2, 2), &q).unwrap();
        let pa = opa(&eq, 1.0).unwrap();
        assert!((pa.p2[0] - 1.75).abs() < 1e-12);
        assert!((pa.p2[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn optimal_beats_uniform_and_random_feasible() {
        for seed in 0..30 {
            let (h22, v2, q) = random_instance(100 + seed);
            let p2_max = 0.8;
            let eq = equivalent_channel(&h22, &v2, &q).unwrap();
            let o = opa(&eq, p2_max).unwrap();
            let u = upa(&v2, p2_max);
            let r_opa = secondary_rate(&h22, &o.v2_effective, &o.p2, &q).unwrap();
            let r_upa = secondary_rate(&h22, &u.v2_effective, &u.p2, &q).unwrap();
            assert!(r_opa >= r_upa - 1e-12);
            assert!((o.total_power() - 5.0 * p2_max).abs() <= 1e-9 * 5.0 * p2_max);
            assert!(orthonormality_residual(&o.v2_effective) < 1e-10);
            let mut rng = TrialRng::new(seed, 7);
            for _ in 0..200 {
                let raw: Vec<f64> = (0..3).map(|_| rng.uniform()).collect();
                let s: f64 = raw.iter().sum();
                let p: Vec<f64> = raw.iter().map(|x| x / s * 5.0 * p2_max).collect();
                let r = secondary_rate(&h22, &v2, &p, &q).unwrap();
                assert!(r_opa >= r - 1e-12);
            }
        }
    }

    #[test]
    fn gap_closes_at_high_snr() {
        let (h22, v2, _) = random_instance(55);
        let h21 = draw_channel(&mut TrialRng::new(55, 1), 4, 3);
        let mut previous = f64::INFINITY;
        for noise in [1.0, 0.1, 0.01, 0.001] {
            let q = cci_covariance(&h21, &ComplexMatrix::identity(3, 3), &[0.0; 3], noise).unwrap();
            let eq = equivalent_channel(&h22, &v2, &q).unwrap();
            let o = opa(&eq, 1.0).unwrap();
            let u = upa(&v2, 1.0);
            let gap = secondary_rate(&h22, &o.v2_effective, &o.p2, &q).unwrap()
                - secondary_rate(&h22, &u.v2_effective, &u.p2, &q).unwrap();
            assert!(gap >= -1e-12);
            assert!(gap < previous, "gap {gap} did not shrink below {previous}");
            previous = gap;
        }
    }

    #[test]
    fn degenerate_equivalent_channel_is_an_error() {
        let q = SecondaryNoiseCov {
            q: ComplexMatrix::identity(2, 2),
        };
        let eq = equivalent_channel(&ComplexMatrix::zeros(2, 2), &ComplexMatrix::identity(2, 2), &q).unwrap();
        assert!(matches!(opa(&eq, 1.0), Err(OiaError::NoUsableDimension { op: "opa" })));
    }
}

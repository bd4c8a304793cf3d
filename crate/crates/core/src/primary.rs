//! Capacity-achieving primary link: SVD transceiver, water-filling power
//! allocation, used dimensions and the transmit opportunities left behind.

use std::f64::consts::LN_2;

use crate::error::{OiaError, Result};
use crate::linalg::{ln_det_hpd, real_diag, singular_values_sorted, sorted_svd, ComplexMatrix, SortedSvd};

/// Relative size (w.r.t. the per-dimension budget) under which an allocated
/// power counts as an unused dimension.
pub const UNUSED_POWER_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct PrimaryTransceiver {
    /// `V1 = V_H11` (M1 x M1).
    pub v1: ComplexMatrix,
    /// `D1 = U_H11^H` (N1 x N1).
    pub d1: ComplexMatrix,
    /// `U_H11` (N1 x N1), kept for the secondary's effective cross channel.
    pub u: ComplexMatrix,
    /// The `min(N1, M1)` singular values of `H11`, non-increasing.
    pub lambda: Vec<f64>,
    /// Eigenvalues of `H11^H H11`, zero-padded to length M1.
    pub lambda_sq: Vec<f64>,
}

impl PrimaryTransceiver {
    pub fn n1(&self) -> usize {
        self.u.nrows()
    }

    pub fn m1(&self) -> usize {
        self.v1.nrows()
    }

    /// `Lambda P1 Lambda^H` as an N1 x N1 diagonal matrix.
    pub fn received_signal_cov(&self, powers: &[f64]) -> ComplexMatrix {
        let mut diag = vec![0.0; self.n1()];
        for (n, s) in self.lambda.iter().enumerate() {
            diag[n] = s * s * powers[n];
        }
        real_diag(&diag)
    }
}

pub fn primary_transceiver(h11: &ComplexMatrix) -> Result<PrimaryTransceiver> {
    let SortedSvd {
        u,
        singular_values,
        v,
    } = sorted_svd(h11)?;
    let m1 = h11.ncols();
    let mut lambda_sq = vec![0.0; m1];
    for (slot, s) in lambda_sq.iter_mut().zip(&singular_values) {
        *slot = s * s;
    }
    Ok(PrimaryTransceiver {
        v1: v,
        d1: u.adjoint(),
        u,
        lambda: singular_values,
        lambda_sq,
    })
}

/// Eigenvalues of `H11^H H11` in decreasing order, zero-padded to `M1`.
pub fn gram_eigenvalues(h11: &ComplexMatrix) -> Result<Vec<f64>> {
    let mut eigs = vec![0.0; h11.ncols()];
    for (slot, s) in eigs.iter_mut().zip(singular_values_sorted(h11)?) {
        *slot = s * s;
    }
    Ok(eigs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaterfillSolution {
    pub beta: f64,
    /// Per-dimension powers, in the order of the input eigenvalues.
    pub powers: Vec<f64>,
    /// Number of dimensions with non-negligible power.
    pub m1: usize,
}

impl WaterfillSolution {
    pub fn total_power(&self) -> f64 {
        self.powers.iter().sum()
    }
}

/// Solves `p_n = (beta - noise / lambda_n)^+` with `sum p_n = total_budget`.
///
/// The active set is found exactly: with the positive eigenvalues sorted in
/// decreasing order, the water level for the `k` strongest dimensions is
/// `(budget + sum_{i<=k} noise/lambda_i) / k`, and the solution is the largest
/// `k` whose level still clears `noise / lambda_k`.
pub fn waterfill(eigenvalues: &[f64], noise_var: f64, total_budget: f64) -> Result<WaterfillSolution> {
    const OP: &str = "waterfill";
    if !(noise_var > 0.0 && noise_var.is_finite()) {
        return Err(OiaError::InvalidArgument {
            op: OP,
            reason: format!("noise variance must be > 0, got {noise_var}"),
        });
    }
    if !(total_budget > 0.0 && total_budget.is_finite()) {
        return Err(OiaError::InvalidArgument {
            op: OP,
            reason: format!("power budget must be > 0, got {total_budget}"),
        });
    }
    if eigenvalues.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(OiaError::InvalidArgument {
            op: OP,
            reason: "eigenvalues must be finite and non-negative".into(),
        });
    }

    let mut order: Vec<usize> = (0..eigenvalues.len()).filter(|&i| eigenvalues[i] > 0.0).collect();
    if order.is_empty() {
        return Err(OiaError::NoUsableDimension { op: OP });
    }
    order.sort_by(|&i, &j| eigenvalues[j].total_cmp(&eigenvalues[i]));

    let mut floor_sum = 0.0;
    let mut beta = f64::NAN;
    for (k, &idx) in order.iter().enumerate() {
        let floor = noise_var / eigenvalues[idx];
        let candidate = (total_budget + floor_sum + floor) / (k + 1) as f64;
        if candidate > floor {
            beta = candidate;
            floor_sum += floor;
        } else {
            break;
        }
    }

    let powers: Vec<f64> = eigenvalues
        .iter()
        .map(|&lam| if lam > 0.0 { (beta - noise_var / lam).max(0.0) } else { 0.0 })
        .collect();
    let threshold = UNUSED_POWER_TOL * total_budget / eigenvalues.len() as f64;
    let m1 = powers.iter().filter(|&&p| p > threshold).count();
    Ok(WaterfillSolution { beta, powers, m1 })
}

pub fn used_dimensions(solution: &WaterfillSolution) -> usize {
    solution.m1
}

/// `S = N1 - m1`.
pub fn transmit_opportunities(n1: usize, m1: usize) -> usize {
    debug_assert!(m1 <= n1, "m1 = {m1} exceeds N1 = {n1}");
    n1.saturating_sub(m1)
}

/// Primary rate in bits/s/Hz. Without interference this is the single-user
/// water-filling rate; with `R` (CCI plus noise covariance in the `D1`
/// domain) it is `log2 |I + R^{-1} Lambda P1 Lambda^H|`.
pub fn primary_rate(
    transceiver: &PrimaryTransceiver,
    solution: &WaterfillSolution,
    noise_var: f64,
    interference_cov: Option<&ComplexMatrix>,
) -> Result<f64> {
    const OP: &str = "primary_rate";
    if solution.powers.len() != transceiver.m1() {
        return Err(OiaError::shape(
            OP,
            format!("{} powers", transceiver.m1()),
            format!("{} powers", solution.powers.len()),
        ));
    }
    match interference_cov {
        None => Ok(transceiver
            .lambda_sq
            .iter()
            .zip(&solution.powers)
            .map(|(l, p)| (l * p / noise_var).ln_1p())
            .sum::<f64>()
            / LN_2),
        Some(r) => {
            let n1 = transceiver.n1();
            if r.shape() != (n1, n1) {
                return Err(OiaError::shape(
                    OP,
                    format!("{n1}x{n1} covariance"),
                    format!("{}x{}", r.nrows(), r.ncols()),
                ));
            }
            let signal = transceiver.received_signal_cov(&solution.powers);
            let with_signal = ln_det_hpd(&(r + signal), OP)?;
            let noise_only = ln_det_hpd(r, OP)?;
            Ok((with_signal - noise_only) / LN_2)
        }
    }
}

//! Opportunistic interference alignment: the secondary precoder is confined
//! to the kernel of the rows of the (rotated) cross channel that the primary
//! actually uses, so the primary's rate is untouched whatever the secondary
//! power allocation. Zero-forcing beamforming over the whole cross channel is
//! provided as the baseline.

use crate::error::{OiaError, Result};
use crate::linalg::{default_rank_tol, frobenius, null_space_basis, real_diag, ComplexMatrix, C64};
use crate::primary::{primary_rate, PrimaryTransceiver, WaterfillSolution};

/// `H~ = U_H11^H H12` split into the `m1` rows seen by the primary's used
/// dimensions and the `N1 - m1` transmit opportunities.
#[derive(Debug, Clone)]
pub struct EffectiveCrossChannel {
    pub h_tilde: ComplexMatrix,
    pub h_tilde_1: ComplexMatrix,
    pub h_tilde_2: ComplexMatrix,
}

impl EffectiveCrossChannel {
    pub fn m1(&self) -> usize {
        self.h_tilde_1.nrows()
    }
}

pub fn effective_cross_channel(
    u_h11: &ComplexMatrix,
    h12: &ComplexMatrix,
    m1: usize,
) -> Result<EffectiveCrossChannel> {
    const OP: &str = "effective_cross_channel";
    let n1 = u_h11.nrows();
    if u_h11.ncols() != n1 {
        return Err(OiaError::shape(OP, "square U_H11", format!("{}x{}", n1, u_h11.ncols())));
    }
    if h12.nrows() != n1 {
        return Err(OiaError::shape(
            OP,
            format!("H12 with {n1} rows"),
            format!("{}x{}", h12.nrows(), h12.ncols()),
        ));
    }
    if m1 == 0 || m1 > n1 {
        return Err(OiaError::InvalidArgument {
            op: OP,
            reason: format!("m1 = {m1} outside 1..={n1}"),
        });
    }
    let h_tilde = u_h11.adjoint() * h12;
    let m2 = h12.ncols();
    Ok(EffectiveCrossChannel {
        h_tilde_1: h_tilde.view((0, 0), (m1, m2)).into_owned(),
        h_tilde_2: h_tilde.view((m1, 0), (n1 - m1, m2)).into_owned(),
        h_tilde,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecoderKind {
    Oia,
    Zfbf,
}

#[derive(Debug, Clone)]
pub struct PrecoderSolution {
    /// M2 x L2 with orthonormal columns; M2 x 0 when nothing can be sent.
    pub v2: ComplexMatrix,
    pub l2: usize,
    pub kind: PrecoderKind,
}

impl PrecoderSolution {
    pub fn is_empty(&self) -> bool {
        self.l2 == 0
    }
}

/// Orthonormal basis of `Ker(H~1)` from the trailing right singular vectors.
pub fn oia_precoder(effective: &EffectiveCrossChannel) -> Result<PrecoderSolution> {
    let h1 = &effective.h_tilde_1;
    let v2 = null_space_basis(h1, default_rank_tol(h1.nrows(), h1.ncols()))?;
    Ok(PrecoderSolution {
        l2: v2.ncols(),
        v2,
        kind: PrecoderKind::Oia,
    })
}

/// Orthonormal basis of `Ker(H12)`: the secondary nulls its whole footprint at
/// the primary receiver.
pub fn zfbf_precoder(h12: &ComplexMatrix) -> Result<PrecoderSolution> {
    let v2 = null_space_basis(h12, default_rank_tol(h12.nrows(), h12.ncols()))?;
    Ok(PrecoderSolution {
        l2: v2.ncols(),
        v2,
        kind: PrecoderKind::Zfbf,
    })
}

/// `||(I - B B^H) A||_F`: how far the columns of `a` stick out of the span of
/// the orthonormal columns of `basis`.
pub fn subspace_residual(a: &ComplexMatrix, basis: &ComplexMatrix) -> f64 {
    if a.ncols() == 0 {
        return 0.0;
    }
    let projected = basis * (basis.adjoint() * a);
    frobenius(&(a - projected))
}

/// Co-channel interference plus noise at the primary receiver, expressed in
/// the `D1 = U_H11^H` domain.
#[derive(Debug, Clone)]
pub struct PrimaryInterferenceCov {
    pub r: ComplexMatrix,
    pub sigma1_sq: f64,
}

impl PrimaryInterferenceCov {
    /// `(R1, R2, R3)`: the leading m1 x m1 block, the m1 x (N1-m1) coupling
    /// block and the trailing block, each with the noise removed.
    pub fn blocks(&self, m1: usize) -> (ComplexMatrix, ComplexMatrix, ComplexMatrix) {
        let n1 = self.r.nrows();
        let noise = ComplexMatrix::identity(n1, n1) * C64::new(self.sigma1_sq, 0.0);
        let interference = &self.r - noise;
        (
            interference.view((0, 0), (m1, m1)).into_owned(),
            interference.view((0, m1), (m1, n1 - m1)).into_owned(),
            interference.view((m1, m1), (n1 - m1, n1 - m1)).into_owned(),
        )
    }
}

fn check_power_len(op: &'static str, v2: &ComplexMatrix, p2: &[f64]) -> Result<()> {
    if p2.len() != v2.ncols() {
        return Err(OiaError::shape(
            op,
            format!("{} powers", v2.ncols()),
            format!("{} powers", p2.len()),
        ));
    }
    if p2.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(OiaError::InvalidArgument {
            op,
            reason: "powers must be finite and non-negative".into(),
        });
    }
    Ok(())
}

/// `R = sigma1^2 I + U_H11^H H12 V2 P2 V2^H H12^H U_H11`.
pub fn primary_interference_cov(
    u_h11: &ComplexMatrix,
    h12: &ComplexMatrix,
    v2: &ComplexMatrix,
    p2: &[f64],
    sigma1_sq: f64,
) -> Result<PrimaryInterferenceCov> {
    const OP: &str = "primary_interference_cov";
    let n1 = u_h11.nrows();
    if h12.nrows() != n1 || v2.nrows() != h12.ncols() {
        return Err(OiaError::shape(
            OP,
            format!("H12 {n1}xM2 and V2 M2xL2"),
            format!(
                "H12 {}x{}, V2 {}x{}",
                h12.nrows(),
                h12.ncols(),
                v2.nrows(),
                v2.ncols()
            ),
        ));
    }
    check_power_len(OP, v2, p2)?;
    let footprint = u_h11.adjoint() * h12 * v2;
    let interference = &footprint * real_diag(p2) * footprint.adjoint();
    let r = ComplexMatrix::identity(n1, n1) * C64::new(sigma1_sq, 0.0) + interference;
    Ok(PrimaryInterferenceCov {
        r: (&r + r.adjoint()) * C64::new(0.5, 0.0),
        sigma1_sq,
    })
}

/// `(H~a V2 P2 V2^H H~b^H)` for the block pairs (1,1), (1,2), (2,2).
pub fn interference_blocks(
    effective: &EffectiveCrossChannel,
    v2: &ComplexMatrix,
    p2: &[f64],
) -> Result<(ComplexMatrix, ComplexMatrix, ComplexMatrix)> {
    check_power_len("interference_blocks", v2, p2)?;
    let p = real_diag(p2);
    let a1 = &effective.h_tilde_1 * v2;
    let a2 = &effective.h_tilde_2 * v2;
    Ok((
        &a1 * &p * a1.adjoint(),
        &a1 * &p * a2.adjoint(),
        &a2 * &p * a2.adjoint(),
    ))
}

/// Relative gap between the primary's single-user rate and its rate under
/// the secondary's interference. Zero means the IA condition holds.
pub fn verify_ia_condition(
    transceiver: &PrimaryTransceiver,
    waterfill: &WaterfillSolution,
    cov: &PrimaryInterferenceCov,
) -> Result<f64> {
    let single_user = primary_rate(transceiver, waterfill, cov.sigma1_sq, None)?;
    let with_interference = primary_rate(transceiver, waterfill, cov.sigma1_sq, Some(&cov.r))?;
    Ok((single_user - with_interference).abs() / single_user.max(f64::MIN_POSITIVE))
}

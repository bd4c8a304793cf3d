//! Large-system limits with all antenna counts growing at fixed ratios
//! `alpha_ij = M_j / N_i`.
//!
//! The primary's used dimensions and water level follow from integrals
//! against the Marčenko–Pastur law of `H11^H H11`. The secondary's rate per
//! receive antenna follows from the Stieltjes transforms of the limiting
//! spectra of `M1 = H21 V P1 V^H H21^H` and `M = M1 + H22 V2 P2 V2^H H22^H`,
//! each the solution of a scalar fixed-point equation on the negative real
//! axis.

use std::f64::consts::{LN_2, PI};

use crate::channel::PowerNoiseConfig;
use crate::error::{OiaError, Result};
use crate::quadrature::{gauss_legendre_on, integrate, Tolerance};

/// Absolute tolerance of every integral against the MP density.
pub const MP_QUAD_TOL: f64 = 1e-10;
pub const FIXED_POINT_TOL: f64 = 1e-12;
pub const FIXED_POINT_DAMPING: f64 = 0.5;
pub const FIXED_POINT_MAX_ITER: usize = 10_000;
/// Gauss–Legendre nodes used to discretize the continuous part of the
/// limiting primary power distribution.
pub const POWER_GRID_NODES: usize = 192;

/// Marčenko–Pastur law of `H^H H` for an `N x M` matrix with `CN(0, 1/M)`
/// entries, parametrized by `ratio = N / M`: an atom of mass
/// `(1 - ratio)^+` at zero and density
/// `sqrt((x - a)(b - x)) / (2 pi x)` on `[a, b] = [(1 -+ sqrt(ratio))^2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpLaw {
    pub ratio: f64,
    pub a: f64,
    pub b: f64,
    pub atom: f64,
}

impl MpLaw {
    pub fn new(ratio: f64) -> Result<Self> {
        if !(ratio > 0.0 && ratio.is_finite()) {
            return Err(OiaError::InvalidArgument {
                op: "MpLaw::new",
                reason: format!("ratio must be finite and > 0, got {ratio}"),
            });
        }
        let root = ratio.sqrt();
        Ok(MpLaw {
            ratio,
            a: (1.0 - root).powi(2),
            b: (1.0 + root).powi(2),
            atom: (1.0 - ratio).max(0.0),
        })
    }

    /// Law of `H11^H H11` when `M1 / N1 = alpha11`.
    pub fn for_alpha(alpha: f64) -> Result<Self> {
        Self::new(1.0 / alpha)
    }

    pub fn density(&self, x: f64) -> f64 {
        if x <= self.a || x >= self.b || x <= 0.0 {
            return 0.0;
        }
        ((x - self.a) * (self.b - x)).sqrt() / (2.0 * PI * x)
    }

    pub fn continuous_mass(&self) -> f64 {
        self.ratio.min(1.0)
    }

    fn half_width(&self) -> f64 {
        0.5 * (self.b - self.a)
    }

    // x(t) = a + (b - a) sin^2(t / 2), t in [0, pi]; the square-root edges
    // become smooth in t.
    fn x_of(&self, t: f64) -> f64 {
        let s = (0.5 * t).sin();
        self.a + 2.0 * self.half_width() * s * s
    }

    fn t_of(&self, x: f64) -> f64 {
        let u = ((x - self.a) / (self.b - self.a)).clamp(0.0, 1.0);
        2.0 * u.sqrt().asin()
    }

    /// `density(x(t)) dx/dt`.
    fn weight_in_t(&self, t: f64) -> f64 {
        let r = self.half_width();
        let s = t.sin();
        r * r * s * s / (2.0 * PI * self.x_of(t))
    }

    /// Integration interval in `t` for the continuous part above `lower_cut`,
    /// `None` when the cut lies beyond the support.
    fn t_range(&self, lower_cut: f64) -> Option<(f64, f64)> {
        if lower_cut >= self.b {
            return None;
        }
        Some((if lower_cut > self.a { self.t_of(lower_cut) } else { 0.0 }, PI))
    }
}

/// `E[f(x) 1{x >= lower_cut}]` under `law`; the atom at zero counts only when
/// `lower_cut <= 0`.
pub fn mp_expectation<F: Fn(f64) -> f64>(law: &MpLaw, f: F, lower_cut: f64) -> Result<f64> {
    let atom = if lower_cut <= 0.0 { law.atom * f(0.0) } else { 0.0 };
    let Some((t0, t1)) = law.t_range(lower_cut) else {
        return Ok(atom);
    };
    let integral = integrate(
        |t| f(law.x_of(t)) * law.weight_in_t(t),
        t0,
        t1,
        Tolerance::absolute(MP_QUAD_TOL),
        "mp_expectation",
    )?;
    Ok(atom + integral.value)
}

/// Asymptotic water level: the root in `beta` of
/// `int_{max(a, s/beta)}^b (beta - s/x) f_MP(x) dx = p1_max`.
pub fn asymptotic_waterlevel(alpha11: f64, p1_max: f64, sigma1_sq: f64) -> Result<f64> {
    const OP: &str = "asymptotic_waterlevel";
    if !(alpha11 > 0.0 && p1_max > 0.0 && sigma1_sq > 0.0) {
        return Err(OiaError::InvalidArgument {
            op: OP,
            reason: format!("inputs must be > 0, got alpha11={alpha11}, p1_max={p1_max}, sigma1_sq={sigma1_sq}"),
        });
    }
    let law = MpLaw::for_alpha(alpha11)?;
    let spent = |beta: f64| -> Result<f64> {
        mp_expectation(&law, |x| beta - sigma1_sq / x, sigma1_sq / beta)
    };

    // spent(sigma^2 / b) = 0 and spent grows without bound.
    let mut lo = sigma1_sq / law.b;
    let mut hi = lo + p1_max / law.continuous_mass();
    let mut expansions = 0;
    while spent(hi)? < p1_max {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 200 || !hi.is_finite() {
            return Err(OiaError::Bracketing { op: OP });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if spent(mid)? < p1_max {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Fraction of primary transmit dimensions carrying power.
pub fn asymptotic_m1(alpha11: f64, beta_inf: f64, sigma1_sq: f64) -> Result<f64> {
    if !(beta_inf > 0.0) {
        return Err(OiaError::InvalidArgument {
            op: "asymptotic_m1",
            reason: format!("water level must be > 0, got {beta_inf}"),
        });
    }
    let law = MpLaw::for_alpha(alpha11)?;
    mp_expectation(&law, |_| 1.0, sigma1_sq / beta_inf)
}

/// Transmit opportunities per primary transmit antenna, `1/alpha11 - m1`.
pub fn asymptotic_s(alpha11: f64, m1_inf: f64) -> f64 {
    (1.0 / alpha11 - m1_inf).max(0.0)
}

/// Aligned secondary dimensions per secondary transmit antenna.
pub fn asymptotic_l2(alpha11: f64, alpha12: f64, m1_inf: f64) -> f64 {
    (1.0 - alpha11 / alpha12 * m1_inf).max(0.0)
}

/// The four antenna ratios `alpha_ij = M_j / N_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratios {
    pub alpha11: f64,
    pub alpha12: f64,
    pub alpha21: f64,
    pub alpha22: f64,
}

impl Ratios {
    pub fn new(alpha11: f64, alpha12: f64, alpha21: f64, alpha22: f64) -> Result<Self> {
        let all = [alpha11, alpha12, alpha21, alpha22];
        if !all.iter().all(|a| a.is_finite() && *a > 0.0) {
            return Err(OiaError::InvalidArgument {
                op: "Ratios::new",
                reason: format!("ratios must be finite and > 0, got {all:?}"),
            });
        }
        Ok(Ratios {
            alpha11,
            alpha12,
            alpha21,
            alpha22,
        })
    }

    pub fn uniform(alpha: f64) -> Result<Self> {
        Self::new(alpha, alpha, alpha, alpha)
    }

    pub fn from_dimensions(dims: &crate::channel::Dimensions) -> Self {
        Ratios {
            alpha11: dims.alpha(1, 1),
            alpha12: dims.alpha(1, 2),
            alpha21: dims.alpha(2, 1),
            alpha22: dims.alpha(2, 2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticModel {
    pub ratios: Ratios,
    pub config: PowerNoiseConfig,
    pub beta_inf: f64,
    pub m1_inf: f64,
    pub s_inf: f64,
    pub l2_inf: f64,
}

impl AsymptoticModel {
    pub fn new(ratios: Ratios, config: PowerNoiseConfig) -> Result<Self> {
        let beta_inf = asymptotic_waterlevel(ratios.alpha11, config.p1_max, config.sigma1_sq)?;
        let m1_inf = asymptotic_m1(ratios.alpha11, beta_inf, config.sigma1_sq)?;
        Ok(AsymptoticModel {
            ratios,
            config,
            beta_inf,
            m1_inf,
            s_inf: asymptotic_s(ratios.alpha11, m1_inf),
            l2_inf: asymptotic_l2(ratios.alpha11, ratios.alpha12, m1_inf),
        })
    }

    /// `(1/alpha11 - 1)^+ <= S_inf <= 1/alpha11`, `0 <= m1_inf <= min(1, 1/alpha11)`,
    /// `0 <= L2_inf <= 1`, up to `tol`.
    pub fn bounds_hold(&self, tol: f64) -> bool {
        let inv = 1.0 / self.ratios.alpha11;
        let s_lower = (inv - 1.0).max(0.0);
        self.s_inf >= s_lower - tol
            && self.s_inf <= inv + tol
            && self.m1_inf >= -tol
            && self.m1_inf <= inv.min(1.0) + tol
            && (-tol..=1.0 + tol).contains(&self.l2_inf)
    }

    /// Limiting distribution of the primary's diagonal powers: the MP law
    /// pushed through `x -> (beta - sigma^2/x)^+`.
    pub fn primary_power_distribution(&self) -> Result<LimitingPowerDistribution> {
        primary_power_distribution(self.ratios.alpha11, self.beta_inf, self.config.sigma1_sq)
    }

    /// Limiting spectrum of `V2 P2 V2^H` under uniform allocation.
    pub fn upa_power_distribution(&self) -> LimitingPowerDistribution {
        upa_power_distribution(self.l2_inf, self.config.p2_max)
    }

    /// Single-user primary rate per primary receive antenna.
    pub fn primary_rate_per_antenna(&self) -> Result<f64> {
        let law = MpLaw::for_alpha(self.ratios.alpha11)?;
        let (beta, s2) = (self.beta_inf, self.config.sigma1_sq);
        let per_tx = mp_expectation(&law, |x| (x * (beta - s2 / x) / s2).ln_1p(), s2 / beta)?;
        Ok(self.ratios.alpha11 * per_tx / LN_2)
    }

    /// Secondary rate per receive antenna under uniform allocation.
    pub fn secondary_rate_upa(&self) -> Result<AsymptoticRate> {
        asymptotic_rate(self, &self.primary_power_distribution()?, &self.upa_power_distribution())
    }
}

/// Compactly supported distribution on `[0, inf)`: point masses plus a
/// quadrature-weighted sample of a continuous part.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitingPowerDistribution {
    pub atoms: Vec<(f64, f64)>,
    pub grid: Vec<(f64, f64)>,
}

impl LimitingPowerDistribution {
    pub fn point_mass(value: f64) -> Self {
        LimitingPowerDistribution {
            atoms: vec![(value, 1.0)],
            grid: Vec::new(),
        }
    }

    pub fn atomic(atoms: Vec<(f64, f64)>) -> Self {
        LimitingPowerDistribution { atoms, grid: Vec::new() }
    }

    fn support(&self) -> impl Iterator<Item = &(f64, f64)> {
        self.atoms.iter().chain(self.grid.iter())
    }

    pub fn total_mass(&self) -> f64 {
        self.support().map(|(_, w)| w).sum()
    }

    pub fn expectation<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.support().map(|&(v, w)| w * f(v)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.expectation(|p| p)
    }
}

pub fn primary_power_distribution(alpha11: f64, beta_inf: f64, sigma1_sq: f64) -> Result<LimitingPowerDistribution> {
    let law = MpLaw::for_alpha(alpha11)?;
    let cut = sigma1_sq / beta_inf;
    let grid: Vec<(f64, f64)> = match law.t_range(cut) {
        None => Vec::new(),
        Some((t0, t1)) => gauss_legendre_on(POWER_GRID_NODES, t0, t1)
            .into_iter()
            .map(|(t, w)| {
                let x = law.x_of(t);
                ((beta_inf - sigma1_sq / x).max(0.0), w * law.weight_in_t(t))
            })
            .collect(),
    };
    let used: f64 = grid.iter().map(|(_, w)| w).sum();
    Ok(LimitingPowerDistribution {
        atoms: vec![(0.0, (1.0 - used).max(0.0))],
        grid,
    })
}

/// `gamma = p2_max / L2_inf` on a fraction `L2_inf` of the eigenvalues, zero
/// elsewhere.
pub fn upa_power_distribution(l2_inf: f64, p2_max: f64) -> LimitingPowerDistribution {
    if l2_inf <= 0.0 {
        return LimitingPowerDistribution::point_mass(0.0);
    }
    let l2 = l2_inf.min(1.0);
    let mut atoms = vec![(p2_max / l2, l2)];
    if l2 < 1.0 {
        atoms.push((0.0, 1.0 - l2));
    }
    LimitingPowerDistribution::atomic(atoms)
}

/// `E[p / (1 + p u / alpha)]`: the `g` (primary, `alpha = alpha21`) and `h`
/// (secondary, `alpha = alpha22`) kernels of the fixed-point equations.
pub fn stieltjes_kernel(dist: &LimitingPowerDistribution, u: f64, alpha: f64) -> Result<f64> {
    let mut acc = 0.0;
    for &(p, w) in dist.support() {
        let denom = 1.0 + p * u / alpha;
        if !(denom > 0.0) {
            return Err(OiaError::InvalidArgument {
                op: "stieltjes_kernel",
                reason: format!("1 + p u / alpha = {denom} at p = {p}, u = {u}"),
            });
        }
        acc += w * p / denom;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub value: f64,
    pub residual: f64,
    pub iterations: usize,
}

fn damped_fixed_point<F: Fn(f64) -> Result<f64>>(z: f64, rhs: F, op: &'static str) -> Result<FixedPoint> {
    if !(z < 0.0 && z.is_finite()) {
        return Err(OiaError::InvalidArgument {
            op,
            reason: format!("z must be finite and < 0, got {z}"),
        });
    }
    let mut g = -1.0 / z;
    let mut residual = f64::INFINITY;
    for iteration in 0..FIXED_POINT_MAX_ITER {
        let next = rhs(g)?;
        residual = (g - next).abs();
        if residual <= FIXED_POINT_TOL {
            return Ok(FixedPoint {
                value: g,
                residual,
                iterations: iteration,
            });
        }
        g = (1.0 - FIXED_POINT_DAMPING) * g + FIXED_POINT_DAMPING * next;
    }
    Err(OiaError::FixedPoint {
        op,
        iterations: FIXED_POINT_MAX_ITER,
        residual,
    })
}

/// Stieltjes transform of the limiting spectrum of `M1` at `z < 0`:
/// `G = -1 / (z - g(G))`.
pub fn solve_gm1(z: f64, dist_p1: &LimitingPowerDistribution, alpha21: f64) -> Result<FixedPoint> {
    damped_fixed_point(
        z,
        |u| Ok(-1.0 / (z - stieltjes_kernel(dist_p1, u, alpha21)?)),
        "solve_gm1",
    )
}

/// Stieltjes transform of the limiting spectrum of `M = M1 + M2` at `z < 0`:
/// `G = -1 / (z - g(G) - h(G))`.
pub fn solve_gm(
    z: f64,
    dist_p1: &LimitingPowerDistribution,
    dist_p2: &LimitingPowerDistribution,
    alpha21: f64,
    alpha22: f64,
) -> Result<FixedPoint> {
    damped_fixed_point(
        z,
        |u| {
            let g = stieltjes_kernel(dist_p1, u, alpha21)?;
            let h = stieltjes_kernel(dist_p2, u, alpha22)?;
            Ok(-1.0 / (z - g - h))
        },
        "solve_gm",
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticRate {
    /// Rate per secondary receive antenna, bits/s/Hz.
    pub bits_per_antenna: f64,
    pub abs_error: f64,
    /// Smallest value of `G_M1(-z) - G_M(-z)` met during integration.
    pub min_integrand: f64,
    /// Largest fixed-point residual met during integration.
    pub max_residual: f64,
    pub evaluations: usize,
}

/// Quadrature tolerance (nats) on the rate integral.
pub const RATE_QUAD_TOL: f64 = 1e-9;

/// `(1/ln 2) int_{sigma2^2}^inf G_M1(-z) - G_M(-z) dz`.
///
/// The substitution `z = sigma2^2 / s` maps the half-line onto `(0, 1]`. The
/// integrand `G_M1 G_M (g(G_M) + h(G_M) - g(G_M1))` is the same difference
/// written without cancellation; multiplied by `dz/ds` it tends to a finite
/// limit as `s -> 0`, so no truncation of the range is needed.
pub fn asymptotic_rate(
    model: &AsymptoticModel,
    dist_p1: &LimitingPowerDistribution,
    dist_p2: &LimitingPowerDistribution,
) -> Result<AsymptoticRate> {
    const OP: &str = "asymptotic_rate";
    let sigma2 = model.config.sigma2_sq;
    let (a21, a22) = (model.ratios.alpha21, model.ratios.alpha22);
    if dist_p2.expectation(|p| p) == 0.0 {
        return Ok(AsymptoticRate {
            bits_per_antenna: 0.0,
            abs_error: 0.0,
            min_integrand: 0.0,
            max_residual: 0.0,
            evaluations: 0,
        });
    }

    let mut failure: Option<OiaError> = None;
    let mut min_integrand = f64::INFINITY;
    let mut max_residual: f64 = 0.0;
    let result = {
        let mut integrand = |s: f64| -> f64 {
            if failure.is_some() {
                return 0.0;
            }
            let z = sigma2 / s;
            let eval = || -> Result<(f64, f64)> {
                let g1 = solve_gm1(-z, dist_p1, a21)?;
                let gm = solve_gm(-z, dist_p1, dist_p2, a21, a22)?;
                let kick = stieltjes_kernel(dist_p1, gm.value, a21)? + stieltjes_kernel(dist_p2, gm.value, a22)?
                    - stieltjes_kernel(dist_p1, g1.value, a21)?;
                Ok((g1.value * gm.value * kick, g1.residual.max(gm.residual)))
            };
            match eval() {
                Ok((diff, residual)) => {
                    min_integrand = min_integrand.min(diff);
                    max_residual = max_residual.max(residual);
                    diff * z * z / sigma2
                }
                Err(e) => {
                    failure = Some(e);
                    0.0
                }
            }
        };
        integrate(&mut integrand, 0.0, 1.0, Tolerance::absolute(RATE_QUAD_TOL), OP)
    };
    if let Some(e) = failure {
        return Err(e);
    }
    let integral = result?;
    Ok(AsymptoticRate {
        bits_per_antenna: integral.value / LN_2,
        abs_error: integral.abs_error / LN_2,
        min_integrand,
        max_residual,
        evaluations: integral.evaluations,
    })
}

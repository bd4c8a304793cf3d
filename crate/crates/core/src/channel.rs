//! Two-link MIMO interference channel: antenna geometry, power/noise budget,
//! and the i.i.d. Rayleigh channel draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{OiaError, Result};
use crate::linalg::{ComplexMatrix, C64};

/// Antenna counts: `n1`/`m1` at the primary receiver/transmitter, `n2`/`m2`
/// at the secondary receiver/transmitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dimensions {
    pub n1: usize,
    pub m1: usize,
    pub n2: usize,
    pub m2: usize,
}

impl Dimensions {
    pub fn new(n1: usize, m1: usize, n2: usize, m2: usize) -> Result<Self> {
        if n1 == 0 || m1 == 0 || n2 == 0 || m2 == 0 {
            return Err(OiaError::InvalidArgument {
                op: "Dimensions::new",
                reason: format!("antenna counts must be >= 1, got ({n1}, {m1}, {n2}, {m2})"),
            });
        }
        Ok(Dimensions { n1, m1, n2, m2 })
    }

    /// `N_r = N1 = N2`, `N_t = M1 = M2`.
    pub fn symmetric(n_r: usize, n_t: usize) -> Result<Self> {
        Self::new(n_r, n_t, n_r, n_t)
    }

    /// `alpha_ij = M_j / N_i`.
    pub fn alpha(&self, i: usize, j: usize) -> f64 {
        let n = match i {
            1 => self.n1,
            _ => self.n2,
        };
        let m = match j {
            1 => self.m1,
            _ => self.m2,
        };
        m as f64 / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerNoiseConfig {
    pub p1_max: f64,
    pub p2_max: f64,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
}

impl PowerNoiseConfig {
    pub fn new(p1_max: f64, p2_max: f64, sigma1_sq: f64, sigma2_sq: f64) -> Result<Self> {
        let all = [p1_max, p2_max, sigma1_sq, sigma2_sq];
        if !all.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(OiaError::InvalidArgument {
                op: "PowerNoiseConfig::new",
                reason: format!("powers and noise variances must be finite and > 0, got {all:?}"),
            });
        }
        Ok(PowerNoiseConfig {
            p1_max,
            p2_max,
            sigma1_sq,
            sigma2_sq,
        })
    }

    /// Unit per-antenna budgets with the noise set so that
    /// `p_max / sigma^2 = 10^(dB/10)` on each link.
    pub fn from_snr_db(snr1_db: f64, snr2_db: f64) -> Result<Self> {
        Self::new(1.0, 1.0, db_to_linear(-snr1_db), db_to_linear(-snr2_db))
    }

    pub fn snr1(&self) -> f64 {
        self.p1_max / self.sigma1_sq
    }

    pub fn snr2(&self) -> f64 {
        self.p2_max / self.sigma2_sq
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Seeded counter-based generator. Every Monte Carlo trial gets its own
/// ChaCha stream, so results do not depend on how trials are scheduled.
#[derive(Debug, Clone)]
pub struct TrialRng {
    inner: ChaCha8Rng,
}

impl TrialRng {
    pub fn new(seed: u64, substream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(substream);
        TrialRng { inner }
    }

    /// Uniform on `(0, 1]`.
    fn open_unit(&mut self) -> f64 {
        1.0 - self.inner.random::<f64>()
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Box–Muller pair of independent standard normals.
    pub fn standard_normal_pair(&mut self) -> (f64, f64) {
        let radius = (-2.0 * self.open_unit().ln()).sqrt();
        let angle = std::f64::consts::TAU * self.inner.random::<f64>();
        (radius * angle.cos(), radius * angle.sin())
    }

    /// Circularly-symmetric complex Gaussian with `E|z|^2 = variance`.
    pub fn complex_normal(&mut self, variance: f64) -> C64 {
        let (re, im) = self.standard_normal_pair();
        let scale = (variance / 2.0).sqrt();
        C64::new(re * scale, im * scale)
    }
}

/// `n_rows x n_cols` matrix with i.i.d. `CN(0, 1/n_cols)` entries, drawn in
/// row-major order.
pub fn draw_channel(rng: &mut TrialRng, n_rows: usize, n_cols: usize) -> ComplexMatrix {
    let variance = 1.0 / n_cols as f64;
    let entries: Vec<C64> = (0..n_rows * n_cols)
        .map(|_| rng.complex_normal(variance))
        .collect();
    ComplexMatrix::from_row_slice(n_rows, n_cols, &entries)
}

/// The four links `H_ij` from transmitter `j` to receiver `i`.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    pub h11: ComplexMatrix,
    pub h12: ComplexMatrix,
    pub h21: ComplexMatrix,
    pub h22: ComplexMatrix,
}

impl ChannelSet {
    pub fn draw(rng: &mut TrialRng, dims: &Dimensions) -> Self {
        let h11 = draw_channel(rng, dims.n1, dims.m1);
        let h12 = draw_channel(rng, dims.n1, dims.m2);
        let h21 = draw_channel(rng, dims.n2, dims.m1);
        let h22 = draw_channel(rng, dims.n2, dims.m2);
        ChannelSet { h11, h12, h21, h22 }
    }

    pub fn dimensions(&self) -> Dimensions {
        Dimensions {
            n1: self.h11.nrows(),
            m1: self.h11.ncols(),
            n2: self.h22.nrows(),
            m2: self.h22.ncols(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_matrix() {
        let a = draw_channel(&mut TrialRng::new(42, 9), 2, 2);
        let b = draw_channel(&mut TrialRng::new(42, 9), 2, 2);
        assert_eq!(a, b);
        let c = draw_channel(&mut TrialRng::new(42, 10), 2, 2);
        assert_ne!(a, c);
    }

    #[test]
    fn trace_of_gram_matches_receive_count() {
        let trials = 10_000;
        let samples: Vec<f64> = (0..trials)
            .map(|t| {
                let h = draw_channel(&mut TrialRng::new(1, t), 4, 8);
                h.iter().map(|z| z.norm_sqr()).sum::<f64>()
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / trials as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (trials as f64 - 1.0);
        let stderr = (var / trials as f64).sqrt();
        assert!((mean - 4.0).abs() <= 3.0 * stderr, "mean {mean} stderr {stderr}");
    }

    #[test]
    fn scalar_entry_has_unit_variance() {
        let trials = 10_000;
        let mut rng = TrialRng::new(3, 0);
        let draws: Vec<C64> = (0..trials).map(|_| draw_channel(&mut rng, 1, 1)[(0, 0)]).collect();
        let mean = draws.iter().sum::<C64>() / trials as f64;
        let var = draws.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / (trials as f64 - 1.0);
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
        let re_var = draws.iter().map(|z| z.re * z.re).sum::<f64>() / trials as f64;
        assert!((re_var - 0.5).abs() < 0.05 * 0.5 * 2.0);
    }

    #[test]
    fn channel_set_shapes() {
        let dims = Dimensions::new(3, 4, 5, 2).unwrap();
        let set = ChannelSet::draw(&mut TrialRng::new(0, 0), &dims);
        assert_eq!(set.h11.shape(), (3, 4));
        assert_eq!(set.h12.shape(), (3, 2));
        assert_eq!(set.h21.shape(), (5, 4));
        assert_eq!(set.h22.shape(), (5, 2));
        assert_eq!(set.dimensions(), dims);
        assert!((dims.alpha(1, 2) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_degenerate_configs() {
        assert!(Dimensions::new(0, 1, 1, 1).is_err());
        assert!(PowerNoiseConfig::new(1.0, 1.0, 0.0, 1.0).is_err());
        let cfg = PowerNoiseConfig::from_snr_db(10.0, 20.0).unwrap();
        assert!((cfg.snr1() - 10.0).abs() < 1e-12);
        assert!((cfg.snr2() - 100.0).abs() < 1e-10);
    }
}

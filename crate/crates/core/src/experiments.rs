//! Monte Carlo campaigns: transmit-opportunity fraction, OIA against ZFBF,
//! uniform against optimal power allocation, the two-SNR rate surface and
//! finite-size convergence towards the large-system limits.
//!
//! Every trial draws its channels from its own RNG substream, indexed by
//! antenna configuration and trial number, and reuses that draw across the
//! whole SNR grid. Trials run on the rayon pool and are reduced in trial
//! order, so the emitted tables do not depend on the number of workers.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::asymptotics::{AsymptoticModel, Ratios, FIXED_POINT_TOL};
use crate::channel::{draw_channel, ChannelSet, Dimensions, PowerNoiseConfig, TrialRng};
use crate::error::{OiaError, Result};
use crate::oia::{
    effective_cross_channel, oia_precoder, primary_interference_cov, subspace_residual, verify_ia_condition,
    zfbf_precoder, PrecoderSolution,
};
use crate::primary::{
    gram_eigenvalues, primary_rate, primary_transceiver, transmit_opportunities, waterfill, PrimaryTransceiver,
};
use crate::secondary::{cci_covariance, equivalent_channel, opa, secondary_rate, upa, SecondaryNoiseCov};

pub const DEFAULT_TRIALS: usize = 500;
/// IA residual above which a draw counts as a violation.
pub const IA_TOL: f64 = 1e-8;
/// Relative slack when comparing two rates that may coincide exactly.
pub const RATE_SLACK: f64 = 1e-9;
const NESTING_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentId {
    ToFraction,
    OiaVsZfbf,
    UpaVsOpa,
    RateSurface,
    AsymptoteConvergence,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 5] = [
        ExperimentId::ToFraction,
        ExperimentId::OiaVsZfbf,
        ExperimentId::UpaVsOpa,
        ExperimentId::RateSurface,
        ExperimentId::AsymptoteConvergence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::ToFraction => "to-fraction",
            ExperimentId::OiaVsZfbf => "oia-vs-zfbf",
            ExperimentId::UpaVsOpa => "upa-vs-opa",
            ExperimentId::RateSurface => "rate-surface",
            ExperimentId::AsymptoteConvergence => "asymptote-convergence",
        }
    }

    /// Antenna sizes swept when none are given.
    pub fn default_sizes(self) -> Vec<usize> {
        match self {
            ExperimentId::ToFraction => vec![10],
            ExperimentId::OiaVsZfbf => vec![3, 9],
            ExperimentId::UpaVsOpa => vec![3, 6, 9],
            ExperimentId::RateSurface => vec![4],
            ExperimentId::AsymptoteConvergence => vec![4, 8, 16, 32, 64],
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = OiaError;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| OiaError::InvalidSpec(format!("unknown experiment '{s}'")))
    }
}

/// Inclusive dB grid `min, min + step, ..., <= max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrGrid {
    pub min_db: f64,
    pub max_db: f64,
    pub step_db: f64,
}

impl Default for SnrGrid {
    fn default() -> Self {
        SnrGrid {
            min_db: 0.0,
            max_db: 40.0,
            step_db: 2.0,
        }
    }
}

impl SnrGrid {
    pub fn new(min_db: f64, max_db: f64, step_db: f64) -> Result<Self> {
        let grid = SnrGrid { min_db, max_db, step_db };
        grid.validate()?;
        Ok(grid)
    }

    pub fn single(db: f64) -> Result<Self> {
        Self::new(db, db, 1.0)
    }

    fn validate(&self) -> Result<()> {
        if ![self.min_db, self.max_db, self.step_db].iter().all(|v| v.is_finite()) {
            return Err(OiaError::InvalidSpec("SNR grid values must be finite".into()));
        }
        if self.max_db < self.min_db {
            return Err(OiaError::InvalidSpec(format!(
                "empty SNR grid: max {} dB < min {} dB",
                self.max_db, self.min_db
            )));
        }
        if !(self.step_db > 0.0) {
            return Err(OiaError::InvalidSpec(format!("SNR step must be > 0, got {}", self.step_db)));
        }
        if (self.max_db - self.min_db) / self.step_db > 1e6 {
            return Err(OiaError::InvalidSpec("SNR grid has more than 1e6 points".into()));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.max_db - self.min_db) / self.step_db + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.min_db + i as f64 * self.step_db).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Geometry {
    Antennas(Dimensions),
    /// Ratios `alpha_ij` with the primary receiver size `N1` taken from the
    /// size sweep (or `n_ref` when no sweep is given).
    Ratios { ratios: Ratios, n_ref: usize },
}

/// Integer antenna counts realizing `ratios` with `N1 = n1`.
pub fn dimensions_from_ratios(ratios: &Ratios, n1: usize) -> Result<Dimensions> {
    let consistency = ratios.alpha11 * ratios.alpha22 - ratios.alpha12 * ratios.alpha21;
    if consistency.abs() > 1e-9 * (ratios.alpha11 * ratios.alpha22).abs() {
        return Err(OiaError::InvalidSpec(format!(
            "inconsistent ratios: alpha11 alpha22 must equal alpha12 alpha21, got {ratios:?}"
        )));
    }
    let m1 = (ratios.alpha11 * n1 as f64).round() as usize;
    let m2 = (ratios.alpha12 * n1 as f64).round() as usize;
    let n2 = (m1 as f64 / ratios.alpha21).round() as usize;
    Dimensions::new(n1, m1, n2, m2).map_err(|e| {
        OiaError::InvalidSpec(format!("ratios {ratios:?} with N1 = {n1} give no valid antenna counts: {e}"))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub id: ExperimentId,
    pub geometry: Option<Geometry>,
    pub snr: SnrGrid,
    pub trials: usize,
    pub seed: u64,
    /// Sweep over `N_r` (or `N1` for to-fraction).
    pub sizes: Option<Vec<usize>>,
    /// `alpha11` values for to-fraction.
    pub alpha11_grid: Option<Vec<f64>>,
}

impl ExperimentSpec {
    pub fn new(id: ExperimentId) -> Self {
        ExperimentSpec {
            id,
            geometry: None,
            snr: SnrGrid::default(),
            trials: DEFAULT_TRIALS,
            seed: 0,
            sizes: None,
            alpha11_grid: None,
        }
    }

    pub fn with_trials(mut self, trials: usize) -> Self {
        self.trials = trials;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_snr(mut self, snr: SnrGrid) -> Self {
        self.snr = snr;
        self
    }

    pub fn with_sizes(mut self, sizes: Vec<usize>) -> Self {
        self.sizes = Some(sizes);
        self
    }

    pub fn with_geometry(mut self, geometry: Geometry) -> Self {
        self.geometry = Some(geometry);
        self
    }

    pub fn with_alpha11_grid(mut self, grid: Vec<f64>) -> Self {
        self.alpha11_grid = Some(grid);
        self
    }

    /// Antenna configurations the campaign sweeps, in output order.
    pub fn configurations(&self) -> Result<Vec<Dimensions>> {
        self.validate()?;
        let sizes = self.sizes.clone().unwrap_or_else(|| match self.geometry {
            Some(Geometry::Ratios { n_ref, .. }) => vec![n_ref],
            _ => self.id.default_sizes(),
        });
        let configs = match (&self.geometry, self.id) {
            (Some(Geometry::Antennas(dims)), _) => vec![*dims],
            (Some(Geometry::Ratios { ratios, .. }), _) => sizes
                .iter()
                .map(|&n| dimensions_from_ratios(ratios, n))
                .collect::<Result<_>>()?,
            (None, ExperimentId::ToFraction) => {
                let alphas = self.alpha11_grid.clone().unwrap_or_else(|| vec![0.5, 1.0, 2.0]);
                let mut out = Vec::new();
                for &alpha in &alphas {
                    for &n in &sizes {
                        out.push(dimensions_from_ratios(&Ratios::uniform(alpha)?, n)?);
                    }
                }
                out
            }
            (None, ExperimentId::OiaVsZfbf) => sizes
                .iter()
                .map(|&n| Dimensions::symmetric(n, (5 * n).div_ceil(4)))
                .collect::<Result<_>>()?,
            (None, _) => sizes
                .iter()
                .map(|&n| Dimensions::symmetric(n, n))
                .collect::<Result<_>>()?,
        };
        for dims in &configs {
            self.check_shape(dims)?;
        }
        Ok(configs)
    }

    fn check_shape(&self, d: &Dimensions) -> Result<()> {
        match self.id {
            ExperimentId::OiaVsZfbf if d.m2 <= d.n1 => Err(OiaError::InvalidSpec(format!(
                "oia-vs-zfbf needs N_t > N_r (M2 > N1), got N1 = {}, M2 = {}",
                d.n1, d.m2
            ))),
            ExperimentId::UpaVsOpa | ExperimentId::AsymptoteConvergence
                if !(d.n1 == d.m1 && d.n1 == d.n2 && d.n2 == d.m2) =>
            {
                Err(OiaError::InvalidSpec(format!(
                    "{} needs N_r = N_t on both links, got {:?}",
                    self.id, d
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(OiaError::InvalidSpec("trial count must be >= 1".into()));
        }
        if u32::try_from(self.trials).is_err() {
            return Err(OiaError::InvalidSpec("trial count must fit in 32 bits".into()));
        }
        self.snr.validate()?;
        if let Some(sizes) = &self.sizes {
            if sizes.is_empty() || sizes.contains(&0) {
                return Err(OiaError::InvalidSpec("sizes must be a non-empty list of positive integers".into()));
            }
        }
        if let Some(grid) = &self.alpha11_grid {
            if grid.is_empty() || grid.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                return Err(OiaError::InvalidSpec("alpha11 grid must be non-empty and positive".into()));
            }
        }
        if let Some(Geometry::Ratios { n_ref: 0, .. }) = self.geometry {
            return Err(OiaError::InvalidSpec("n-ref must be >= 1".into()));
        }
        Ok(())
    }

    /// Stable textual form used for the metadata hash.
    pub fn canonical(&self) -> String {
        let geometry = match &self.geometry {
            None => "default".to_string(),
            Some(Geometry::Antennas(d)) => format!("antennas:{},{},{},{}", d.n1, d.m1, d.n2, d.m2),
            Some(Geometry::Ratios { ratios: r, n_ref }) => format!(
                "ratios:{:?},{:?},{:?},{:?};n_ref={n_ref}",
                r.alpha11, r.alpha12, r.alpha21, r.alpha22
            ),
        };
        format!(
            "id={};geometry={};snr={:?},{:?},{:?};trials={};seed={};sizes={:?};alpha11={:?}",
            self.id,
            geometry,
            self.snr.min_db,
            self.snr.max_db,
            self.snr.step_db,
            self.trials,
            self.seed,
            self.sizes,
            self.alpha11_grid
        )
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

/// Mean, standard error (`sample std / sqrt(n)`) and sample count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
}

impl Summary {
    pub fn of(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Summary {
                mean: f64::NAN,
                stderr: f64::NAN,
                trials: 0,
            };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Summary { mean, stderr, trials: n }
    }
}

/// Per-draw structural checks. Every field except `draws` counts violations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StructuralChecks {
    pub draws: usize,
    /// `N1 - min(N1, M1) <= S <= N1 - 1`.
    pub s_bounds: usize,
    /// `L2 >= (M2 - m1)^+` for the OIA precoder.
    pub l2_bound: usize,
    /// ZFBF precoder not contained in the OIA precoder.
    pub nesting: usize,
    /// Primary rate changed by the secondary's interference.
    pub ia_condition: usize,
    /// OIA rate below ZFBF rate under optimal allocation.
    pub dominance: usize,
    /// Optimal allocation below uniform allocation.
    pub optimality: usize,
}

impl StructuralChecks {
    pub fn violations(&self) -> usize {
        self.s_bounds + self.l2_bound + self.nesting + self.ia_condition + self.dominance + self.optimality
    }

    fn merge(&mut self, other: &StructuralChecks) {
        self.draws += other.draws;
        self.s_bounds += other.s_bounds;
        self.l2_bound += other.l2_bound;
        self.nesting += other.nesting;
        self.ia_condition += other.ia_condition;
        self.dominance += other.dominance;
        self.optimality += other.optimality;
    }
}

impl fmt::Display for StructuralChecks {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "draws={} s_bounds={} l2_bound={} nesting={} ia_condition={} dominance={} optimality={}",
            self.draws, self.s_bounds, self.l2_bound, self.nesting, self.ia_condition, self.dominance, self.optimality
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Int(u64),
    Float(f64),
}

impl Value {
    pub fn as_f64(self) -> f64 {
        match self {
            Value::Int(i) => i as f64,
            Value::Float(x) => x,
        }
    }

    fn render(self) -> String {
        match self {
            Value::Int(i) => i.to_string(),
            Value::Float(x) => format!("{x:.16e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub experiment: ExperimentId,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub metadata: Vec<(String, String)>,
    pub checks: StructuralChecks,
}

impl ResultTable {
    fn new(spec: &ExperimentSpec, columns: Vec<String>) -> Self {
        ResultTable {
            experiment: spec.id,
            columns,
            rows: Vec::new(),
            metadata: vec![
                ("experiment".into(), spec.id.to_string()),
                ("seed".into(), spec.seed.to_string()),
                ("spec_sha256".into(), spec.hash()),
                ("spec".into(), spec.canonical()),
                ("version".into(), format!("oia-core {}", env!("CARGO_PKG_VERSION"))),
            ],
            checks: StructuralChecks::default(),
        }
    }

    fn push(&mut self, row: Row) {
        debug_assert_eq!(row.0.len(), self.columns.len());
        self.rows.push(row.0);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Column as floats, in row order.
    pub fn values(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.column(name)?;
        Some(self.rows.iter().map(|r| r[idx].as_f64()).collect())
    }

    /// Rows whose `key` column equals `value`.
    pub fn filter(&self, key: &str, value: f64) -> ResultTable {
        let idx = self.column(key).expect("filter on unknown column");
        ResultTable {
            rows: self.rows.iter().filter(|r| r[idx].as_f64() == value).cloned().collect(),
            ..self.clone()
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        out.push_str(&format!("# checks: {}\n", self.checks));
        let mut writer = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| OiaError::InvalidSpec(format!("csv encoding failed: {e}"));
        writer.write_record(&self.columns).map_err(csv_err)?;
        for row in &self.rows {
            writer
                .write_record(row.iter().map(|v| v.render()))
                .map_err(csv_err)?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| OiaError::InvalidSpec(format!("csv encoding failed: {e}")))?;
        out.push_str(&String::from_utf8(bytes).expect("csv output is ASCII"));
        Ok(out)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let text = self.to_csv()?;
        fs::write(path, text).map_err(|source| OiaError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Gnuplot script reading `csv_name` from its own directory.
    pub fn plot_script(&self, csv_name: &str) -> String {
        let mut s = String::new();
        s.push_str("# gnuplot script; run from the directory holding the CSV\n");
        s.push_str("set datafile separator ','\nset datafile commentschars '#'\nset datafile columnheaders\n");
        s.push_str("set grid\n");
        s.push_str(&format!("data = '{csv_name}'\n"));
        let series = |cols: &[&str], x: &str| -> String {
            cols.iter()
                .map(|c| {
                    format!(
                        "data using (column('{x}')):(column('{c}_mean')):(column('{c}_stderr')):(column('config')) with yerrorbars lc variable title '{c}'"
                    )
                })
                .collect::<Vec<_>>()
                .join(", \\\n     ")
        };
        match self.experiment {
            ExperimentId::ToFraction => {
                s.push_str("set xlabel 'SNR [dB]'\nset ylabel 'S / M1'\n");
                s.push_str(&format!("plot {}, \\\n", series(&["s_frac"], "snr_db")));
                s.push_str("     data using (column('snr_db')):(column('s_inf')) with points pt 7 ps 0.5 title 'S_inf'\n");
            }
            ExperimentId::OiaVsZfbf => {
                s.push_str("set xlabel 'SNR [dB]'\nset ylabel 'secondary rate [bps/Hz]'\n");
                s.push_str(&format!(
                    "plot {}\n",
                    series(&["oia_upa", "oia_opa", "zfbf_upa", "zfbf_opa"], "snr_db")
                ));
            }
            ExperimentId::UpaVsOpa => {
                s.push_str("set xlabel 'SNR [dB]'\nset ylabel 'secondary rate [bps/Hz]'\n");
                s.push_str(&format!("plot {}\n", series(&["upa", "opa"], "snr_db")));
            }
            ExperimentId::RateSurface => {
                s.push_str("set xlabel 'SNR1 [dB]'\nset ylabel 'SNR2 [dB]'\nset zlabel 'rate [bps/Hz]'\n");
                s.push_str("set dgrid3d\nset hidden3d\n");
                s.push_str("splot data using (column('snr1_db')):(column('snr2_db')):(column('rate_mean')) with lines title 'OIA-OPA'\n");
            }
            ExperimentId::AsymptoteConvergence => {
                s.push_str("set xlabel 'SNR [dB]'\nset ylabel 'rate per antenna [bps/Hz]'\n");
                s.push_str(&format!("plot {}, \\\n", series(&["secondary_mc", "primary_mc"], "snr_db")));
                s.push_str("     data using (column('snr_db')):(column('secondary_asym')) with lines lc black title 'secondary asymptote', \\\n");
                s.push_str("     data using (column('snr_db')):(column('primary_asym')) with lines lc black dt 2 title 'primary asymptote'\n");
            }
        }
        s
    }
}

struct Row(Vec<Value>);

impl Row {
    fn new() -> Self {
        Row(Vec::new())
    }

    fn int(mut self, v: usize) -> Self {
        self.0.push(Value::Int(v as u64));
        self
    }

    fn float(mut self, v: f64) -> Self {
        self.0.push(Value::Float(v));
        self
    }

    fn stat(self, s: Summary) -> Self {
        self.float(s.mean).float(s.stderr)
    }
}

fn stat_columns(names: &[&str]) -> Vec<String> {
    names
        .iter()
        .flat_map(|n| [format!("{n}_mean"), format!("{n}_stderr")])
        .collect()
}

fn columns(head: &[&str], stats: &[&str], tail: &[&str]) -> Vec<String> {
    head.iter()
        .map(|s| s.to_string())
        .chain(stat_columns(stats))
        .chain(tail.iter().map(|s| s.to_string()))
        .collect()
}

pub fn trial_substream(config: usize, trial: usize) -> u64 {
    ((config as u64) << 32) | trial as u64
}

/// Runs `trial` for every trial index in parallel and returns the outcomes
/// in trial order.
fn run_trials<T, F>(spec: &ExperimentSpec, config: usize, trial: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut TrialRng) -> Result<T> + Sync,
{
    (0..spec.trials)
        .into_par_iter()
        .map(|t| trial(&mut TrialRng::new(spec.seed, trial_substream(config, t))))
        .collect()
}

/// One channel realization with the SNR-independent primary SVD.
pub struct LinkDraw {
    pub channels: ChannelSet,
    pub primary: PrimaryTransceiver,
}

impl LinkDraw {
    pub fn draw(rng: &mut TrialRng, dims: &Dimensions) -> Result<Self> {
        let channels = ChannelSet::draw(rng, dims);
        let primary = primary_transceiver(&channels.h11)?;
        Ok(LinkDraw { channels, primary })
    }
}

/// Rates and dimensions of one draw at one operating point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LinkOutcome {
    pub m1: usize,
    pub s: usize,
    pub l2_oia: usize,
    pub l2_zfbf: usize,
    pub primary: f64,
    pub oia_upa: f64,
    pub oia_opa: f64,
    pub zfbf_upa: f64,
    pub zfbf_opa: f64,
    pub ia_residual: f64,
    pub checks: StructuralChecks,
}

fn rate_at_least(a: f64, b: f64) -> bool {
    a >= b - RATE_SLACK * b.abs().max(1.0)
}

fn precoder_rates(
    draw: &LinkDraw,
    precoder: &PrecoderSolution,
    q: &SecondaryNoiseCov,
    p2_max: f64,
) -> Result<(f64, f64, (Vec<f64>, crate::linalg::ComplexMatrix))> {
    let h22 = &draw.channels.h22;
    if precoder.is_empty() {
        return Ok((0.0, 0.0, (Vec::new(), precoder.v2.clone())));
    }
    let uniform = upa(&precoder.v2, p2_max);
    let r_upa = secondary_rate(h22, &uniform.v2_effective, &uniform.p2, q)?;
    let eq = equivalent_channel(h22, &precoder.v2, q)?;
    match opa(&eq, p2_max) {
        Ok(optimal) => {
            let r_opa = secondary_rate(h22, &optimal.v2_effective, &optimal.p2, q)?;
            Ok((r_upa, r_opa, (optimal.p2, optimal.v2_effective)))
        }
        Err(OiaError::NoUsableDimension { .. }) => Ok((r_upa, 0.0, (Vec::new(), precoder.v2.clone()))),
        Err(e) => Err(e),
    }
}

/// Full link evaluation: primary water-filling, OIA and ZFBF precoders, the
/// secondary's whitened rates under both allocations, and every structural
/// check.
pub fn evaluate_link(draw: &LinkDraw, cfg: &PowerNoiseConfig) -> Result<LinkOutcome> {
    let dims = draw.channels.dimensions();
    let t = &draw.primary;
    let wf = waterfill(&t.lambda_sq, cfg.sigma1_sq, dims.m1 as f64 * cfg.p1_max)?;
    let s = transmit_opportunities(dims.n1, wf.m1);
    let mut checks = StructuralChecks {
        draws: 1,
        ..Default::default()
    };
    if s < dims.n1 - dims.n1.min(dims.m1) || s + 1 > dims.n1 {
        checks.s_bounds += 1;
    }

    let h12 = &draw.channels.h12;
    let eff = effective_cross_channel(&t.u, h12, wf.m1)?;
    let oia = oia_precoder(&eff)?;
    let zf = zfbf_precoder(h12)?;
    if oia.l2 < dims.m2.saturating_sub(wf.m1) {
        checks.l2_bound += 1;
    }
    if zf.l2 > oia.l2 || subspace_residual(&zf.v2, &oia.v2) > NESTING_TOL * (zf.l2.max(1) as f64).sqrt() {
        checks.nesting += 1;
    }

    let q = cci_covariance(&draw.channels.h21, &t.v1, &wf.powers, cfg.sigma2_sq)?;
    let (oia_upa, oia_opa, (p2, v2_eff)) = precoder_rates(draw, &oia, &q, cfg.p2_max)?;
    let (zfbf_upa, zfbf_opa, _) = precoder_rates(draw, &zf, &q, cfg.p2_max)?;
    if !rate_at_least(oia_opa, zfbf_opa) {
        checks.dominance += 1;
    }
    if !rate_at_least(oia_opa, oia_upa) || !rate_at_least(zfbf_opa, zfbf_upa) {
        checks.optimality += 1;
    }

    let ia_residual = if p2.is_empty() {
        0.0
    } else {
        let cov = primary_interference_cov(&t.u, h12, &v2_eff, &p2, cfg.sigma1_sq)?;
        verify_ia_condition(t, &wf, &cov)?
    };
    if !(ia_residual <= IA_TOL) {
        checks.ia_condition += 1;
    }

    Ok(LinkOutcome {
        m1: wf.m1,
        s,
        l2_oia: oia.l2,
        l2_zfbf: zf.l2,
        primary: primary_rate(t, &wf, cfg.sigma1_sq, None)?,
        oia_upa,
        oia_opa,
        zfbf_upa,
        zfbf_opa,
        ia_residual,
        checks,
    })
}

fn snr_configs(grid: &[f64]) -> Result<Vec<PowerNoiseConfig>> {
    grid.iter().map(|&db| PowerNoiseConfig::from_snr_db(db, db)).collect()
}

/// Runs the link pipeline over every trial and every grid point, returning
/// `outcomes[point][trial]`.
fn link_campaign(
    spec: &ExperimentSpec,
    config: usize,
    dims: &Dimensions,
    points: &[PowerNoiseConfig],
) -> Result<Vec<Vec<LinkOutcome>>> {
    let per_trial = run_trials(spec, config, |rng| {
        let draw = LinkDraw::draw(rng, dims)?;
        points.iter().map(|cfg| evaluate_link(&draw, cfg)).collect::<Result<Vec<_>>>()
    })?;
    Ok((0..points.len())
        .map(|k| per_trial.iter().map(|trial| trial[k]).collect())
        .collect())
}

fn summarize<F: Fn(&LinkOutcome) -> f64>(outcomes: &[LinkOutcome], f: F) -> Summary {
    Summary::of(&outcomes.iter().map(f).collect::<Vec<_>>())
}

fn tally(table: &mut ResultTable, outcomes: &[LinkOutcome]) {
    for o in outcomes {
        table.checks.merge(&o.checks);
    }
}

fn describe_configs(configs: &[Dimensions]) -> String {
    configs
        .iter()
        .enumerate()
        .map(|(i, d)| format!("{i}:({},{},{},{})", d.n1, d.m1, d.n2, d.m2))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Simulated `S / M1` against `S_inf` for each `alpha11`.
pub fn run_to_fraction(spec: &ExperimentSpec) -> Result<ResultTable> {
    expect_id(spec, ExperimentId::ToFraction)?;
    let configs = spec.configurations()?;
    let grid = spec.snr.points();
    let cfgs = snr_configs(&grid)?;
    let mut table = ResultTable::new(
        spec,
        columns(&["config", "alpha11", "n1", "m1", "snr_db"], &["s_frac"], &["trials", "s_inf"]),
    );
    table.metadata.push(("configurations".into(), describe_configs(&configs)));

    for (ci, dims) in configs.iter().enumerate() {
        let per_trial = run_trials(spec, ci, |rng| {
            let h11 = draw_channel(rng, dims.n1, dims.m1);
            let eigs = gram_eigenvalues(&h11)?;
            cfgs.iter()
                .map(|cfg| {
                    let wf = waterfill(&eigs, cfg.sigma1_sq, dims.m1 as f64 * cfg.p1_max)?;
                    Ok(transmit_opportunities(dims.n1, wf.m1))
                })
                .collect::<Result<Vec<usize>>>()
        })?;
        let alpha11 = dims.alpha(1, 1);
        for (k, cfg) in cfgs.iter().enumerate() {
            let mut samples = Vec::with_capacity(spec.trials);
            for trial in &per_trial {
                let s = trial[k];
                table.checks.draws += 1;
                if s < dims.n1 - dims.n1.min(dims.m1) || s + 1 > dims.n1 {
                    table.checks.s_bounds += 1;
                }
                samples.push(s as f64 / dims.m1 as f64);
            }
            let model = AsymptoticModel::new(Ratios::from_dimensions(dims), *cfg)?;
            table.push(
                Row::new()
                    .int(ci)
                    .float(alpha11)
                    .int(dims.n1)
                    .int(dims.m1)
                    .float(grid[k])
                    .stat(Summary::of(&samples))
                    .int(spec.trials)
                    .float(model.s_inf),
            );
        }
    }
    Ok(table)
}

/// Secondary rates of OIA and ZFBF under both power allocations.
pub fn run_oia_vs_zfbf(spec: &ExperimentSpec) -> Result<ResultTable> {
    expect_id(spec, ExperimentId::OiaVsZfbf)?;
    let configs = spec.configurations()?;
    let grid = spec.snr.points();
    let cfgs = snr_configs(&grid)?;
    let mut table = ResultTable::new(
        spec,
        columns(
            &["config", "n_r", "n_t", "snr_db"],
            &["oia_upa", "oia_opa", "zfbf_upa", "zfbf_opa", "l2_oia", "l2_zfbf"],
            &["trials"],
        ),
    );
    table.metadata.push(("configurations".into(), describe_configs(&configs)));
    if spec.geometry.is_none() && spec.sizes.is_none() {
        table
            .metadata
            .push(("note".into(), "default N_t = ceil(5 N_r / 4) for N_r in {3, 9}".into()));
    }
    for (ci, dims) in configs.iter().enumerate() {
        let outcomes = link_campaign(spec, ci, dims, &cfgs)?;
        for (k, o) in outcomes.iter().enumerate() {
            tally(&mut table, o);
            table.push(
                Row::new()
                    .int(ci)
                    .int(dims.n1)
                    .int(dims.m1)
                    .float(grid[k])
                    .stat(summarize(o, |x| x.oia_upa))
                    .stat(summarize(o, |x| x.oia_opa))
                    .stat(summarize(o, |x| x.zfbf_upa))
                    .stat(summarize(o, |x| x.zfbf_opa))
                    .stat(summarize(o, |x| x.l2_oia as f64))
                    .stat(summarize(o, |x| x.l2_zfbf as f64))
                    .int(o.len()),
            );
        }
    }
    Ok(table)
}

/// OIA secondary rate under uniform and optimal allocation.
pub fn run_upa_vs_opa(spec: &ExperimentSpec) -> Result<ResultTable> {
    expect_id(spec, ExperimentId::UpaVsOpa)?;
    let configs = spec.configurations()?;
    let grid = spec.snr.points();
    let cfgs = snr_configs(&grid)?;
    let mut table = ResultTable::new(
        spec,
        columns(&["config", "n", "snr_db"], &["upa", "opa", "gap"], &["trials"]),
    );
    table.metadata.push(("configurations".into(), describe_configs(&configs)));
    for (ci, dims) in configs.iter().enumerate() {
        let outcomes = link_campaign(spec, ci, dims, &cfgs)?;
        for (k, o) in outcomes.iter().enumerate() {
            tally(&mut table, o);
            table.push(
                Row::new()
                    .int(ci)
                    .int(dims.n1)
                    .float(grid[k])
                    .stat(summarize(o, |x| x.oia_upa))
                    .stat(summarize(o, |x| x.oia_opa))
                    .stat(summarize(o, |x| x.oia_opa - x.oia_upa))
                    .int(o.len()),
            );
        }
    }
    Ok(table)
}

/// OIA-OPA secondary rate over the product grid `SNR1 x SNR2`.
pub fn run_rate_surface(spec: &ExperimentSpec) -> Result<ResultTable> {
    expect_id(spec, ExperimentId::RateSurface)?;
    let configs = spec.configurations()?;
    let grid = spec.snr.points();
    let mut cells = Vec::with_capacity(grid.len() * grid.len());
    for &snr1 in &grid {
        for &snr2 in &grid {
            cells.push((snr1, snr2, PowerNoiseConfig::from_snr_db(snr1, snr2)?));
        }
    }
    let cfgs: Vec<PowerNoiseConfig> = cells.iter().map(|c| c.2).collect();
    let mut table = ResultTable::new(
        spec,
        columns(&["config", "n_r", "n_t", "snr1_db", "snr2_db"], &["rate"], &["trials"]),
    );
    table.metadata.push(("configurations".into(), describe_configs(&configs)));
    for (ci, dims) in configs.iter().enumerate() {
        let outcomes = link_campaign(spec, ci, dims, &cfgs)?;
        for (k, o) in outcomes.iter().enumerate() {
            tally(&mut table, o);
            table.push(
                Row::new()
                    .int(ci)
                    .int(dims.n1)
                    .int(dims.m1)
                    .float(cells[k].0)
                    .float(cells[k].1)
                    .stat(summarize(o, |x| x.oia_opa))
                    .int(o.len()),
            );
        }
    }
    Ok(table)
}

/// Per-antenna Monte Carlo rates (OIA, uniform allocation) against their
/// large-system limits.
pub fn run_asymptote_convergence(spec: &ExperimentSpec) -> Result<ResultTable> {
    expect_id(spec, ExperimentId::AsymptoteConvergence)?;
    let configs = spec.configurations()?;
    let grid = spec.snr.points();
    let cfgs = snr_configs(&grid)?;
    let mut table = ResultTable::new(
        spec,
        columns(
            &["config", "n", "snr_db"],
            &["secondary_mc", "primary_mc"],
            &["trials", "secondary_asym", "primary_asym", "secondary_rel_gap", "primary_rel_gap"],
        ),
    );
    table.metadata.push(("configurations".into(), describe_configs(&configs)));
    let mut worst_residual: f64 = 0.0;
    let mut worst_integrand = f64::INFINITY;
    for (ci, dims) in configs.iter().enumerate() {
        let outcomes = link_campaign(spec, ci, dims, &cfgs)?;
        for (k, o) in outcomes.iter().enumerate() {
            tally(&mut table, o);
            let model = AsymptoticModel::new(Ratios::from_dimensions(dims), cfgs[k])?;
            let secondary = model.secondary_rate_upa()?;
            worst_residual = worst_residual.max(secondary.max_residual);
            worst_integrand = worst_integrand.min(secondary.min_integrand);
            let primary_asym = model.primary_rate_per_antenna()?;
            let sec = summarize(o, |x| x.oia_upa / dims.n2 as f64);
            let pri = summarize(o, |x| x.primary / dims.n1 as f64);
            table.push(
                Row::new()
                    .int(ci)
                    .int(dims.n1)
                    .float(grid[k])
                    .stat(sec)
                    .stat(pri)
                    .int(o.len())
                    .float(secondary.bits_per_antenna)
                    .float(primary_asym)
                    .float(relative_gap(sec.mean, secondary.bits_per_antenna))
                    .float(relative_gap(pri.mean, primary_asym)),
            );
        }
    }
    if worst_residual > FIXED_POINT_TOL {
        return Err(OiaError::FixedPoint {
            op: "run_asymptote_convergence",
            iterations: 0,
            residual: worst_residual,
        });
    }
    table.metadata.push((
        "fixed_point".into(),
        format!("max_residual={worst_residual:e} min_integrand={worst_integrand:e}"),
    ));
    Ok(table)
}

fn relative_gap(estimate: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        if estimate == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (estimate - reference).abs() / reference.abs()
    }
}

fn expect_id(spec: &ExperimentSpec, id: ExperimentId) -> Result<()> {
    if spec.id != id {
        return Err(OiaError::InvalidSpec(format!("expected a {id} spec, got {}", spec.id)));
    }
    Ok(())
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    match spec.id {
        ExperimentId::ToFraction => run_to_fraction(spec),
        ExperimentId::OiaVsZfbf => run_oia_vs_zfbf(spec),
        ExperimentId::UpaVsOpa => run_upa_vs_opa(spec),
        ExperimentId::RateSurface => run_rate_surface(spec),
        ExperimentId::AsymptoteConvergence => run_asymptote_convergence(spec),
    }
}

/// Sizes the global worker pool. Must run before the first campaign.
pub fn configure_threads(threads: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| OiaError::InvalidSpec(format!("cannot size worker pool: {e}")))
}

/// Writes `<id>.csv` (and `<id>.gp` when asked) into `dir`, creating it if
/// needed. Returns the paths written.
pub fn write_outputs(table: &ResultTable, dir: &Path, plot_script: bool) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(dir).map_err(|source| OiaError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let csv_name = format!("{}.csv", table.experiment);
    let csv_path = dir.join(&csv_name);
    table.write_csv(&csv_path)?;
    let mut written = vec![csv_path];
    if plot_script {
        let gp = dir.join(format!("{}.gp", table.experiment));
        fs::write(&gp, table.plot_script(&csv_name)).map_err(|source| OiaError::Io {
            path: gp.clone(),
            source,
        })?;
        written.push(gp);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(id: ExperimentId) -> ExperimentSpec {
        ExperimentSpec::new(id)
            .with_trials(8)
            .with_seed(7)
            .with_snr(SnrGrid::new(0.0, 20.0, 10.0).unwrap())
    }

    #[test]
    fn id_round_trip() {
        for id in ExperimentId::ALL {
            assert_eq!(id.as_str().parse::<ExperimentId>().unwrap(), id);
        }
        assert!("fig7".parse::<ExperimentId>().unwrap_err().is_invalid_input());
    }

    #[test]
    fn snr_grid_points() {
        assert_eq!(SnrGrid::default().points().len(), 21);
        assert_eq!(SnrGrid::new(0.0, 5.0, 2.0).unwrap().points(), vec![0.0, 2.0, 4.0]);
        assert_eq!(SnrGrid::single(10.0).unwrap().points(), vec![10.0]);
        assert!(SnrGrid::new(10.0, 0.0, 1.0).is_err());
        assert!(SnrGrid::new(0.0, 10.0, 0.0).is_err());
    }

    #[test]
    fn summary_stderr_definition() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        let sample_std = (5.0f64 / 3.0).sqrt();
        assert!((s.stderr - sample_std / 2.0).abs() < 1e-15);
        assert_eq!(s.trials, 4);
        assert_eq!(Summary::of(&[3.0]).stderr, 0.0);
    }

    #[test]
    fn default_configurations() {
        let c = ExperimentSpec::new(ExperimentId::OiaVsZfbf).configurations().unwrap();
        assert_eq!(c[0], Dimensions::symmetric(3, 4).unwrap());
        assert_eq!(c[1], Dimensions::symmetric(9, 12).unwrap());
        let c = ExperimentSpec::new(ExperimentId::ToFraction).configurations().unwrap();
        let m1: Vec<usize> = c.iter().map(|d| d.m1).collect();
        assert_eq!(m1, vec![5, 10, 20]);
    }

    #[test]
    fn ratio_geometry() {
        let r = Ratios::new(0.5, 1.0, 0.5, 1.0).unwrap();
        let d = dimensions_from_ratios(&r, 8).unwrap();
        assert_eq!((d.n1, d.m1, d.n2, d.m2), (8, 4, 8, 8));
        let bad = Ratios::new(0.5, 1.0, 1.0, 1.0).unwrap();
        assert!(dimensions_from_ratios(&bad, 8).unwrap_err().is_invalid_input());
    }

    #[test]
    fn shape_preconditions() {
        let spec = ExperimentSpec::new(ExperimentId::OiaVsZfbf)
            .with_geometry(Geometry::Antennas(Dimensions::symmetric(4, 4).unwrap()));
        assert!(spec.configurations().unwrap_err().is_invalid_input());
        let spec = ExperimentSpec::new(ExperimentId::UpaVsOpa)
            .with_geometry(Geometry::Antennas(Dimensions::symmetric(3, 4).unwrap()));
        assert!(spec.configurations().unwrap_err().is_invalid_input());
        assert!(ExperimentSpec::new(ExperimentId::UpaVsOpa)
            .with_trials(0)
            .validate()
            .is_err());
    }

    #[test]
    fn to_fraction_small_run() {
        let t = run_to_fraction(&small(ExperimentId::ToFraction)).unwrap();
        assert_eq!(t.rows.len(), 9);
        assert_eq!(t.checks.violations(), 0);
        assert_eq!(t.checks.draws, 9 * 8);
        for row in &t.rows {
            assert_eq!(row.len(), t.columns.len());
        }
    }

    #[test]
    fn link_campaigns_have_no_violations() {
        for id in [ExperimentId::OiaVsZfbf, ExperimentId::UpaVsOpa, ExperimentId::RateSurface] {
            let t = run_experiment(&small(id)).unwrap();
            assert_eq!(t.checks.violations(), 0, "{id}: {}", t.checks);
        }
    }

    #[test]
    fn csv_layout() {
        let t = run_upa_vs_opa(&small(ExperimentId::UpaVsOpa).with_sizes(vec![3])).unwrap();
        let csv = t.to_csv().unwrap();
        let mut lines = csv.lines().skip_while(|l| l.starts_with('#'));
        assert_eq!(lines.next().unwrap(), t.columns.join(","));
        let first = lines.next().unwrap();
        let fields: Vec<&str> = first.split(',').collect();
        assert_eq!(fields.len(), t.columns.len());
        assert_eq!(fields[3].split('e').next().unwrap().replace(['-', '.'], "").len(), 17);
        assert!(csv.starts_with("# experiment: upa-vs-opa\n# seed: 7\n"));
    }

    #[test]
    fn hash_tracks_spec() {
        let a = small(ExperimentId::UpaVsOpa);
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), a.clone().with_seed(8).hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn plot_script_names_csv() {
        let t = run_to_fraction(&small(ExperimentId::ToFraction).with_sizes(vec![4])).unwrap();
        let gp = t.plot_script("to-fraction.csv");
        assert!(gp.contains("data = 'to-fraction.csv'"));
        let data_line = gp.lines().find(|l| l.starts_with("data =")).unwrap();
        assert!(!data_line.contains('/'));
    }
}

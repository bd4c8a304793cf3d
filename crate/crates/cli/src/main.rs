use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{ArgGroup, Parser};

use oia_core::asymptotics::Ratios;
use oia_core::channel::Dimensions;
use oia_core::experiments::{
    configure_threads, run_experiment, write_outputs, ExperimentId, ExperimentSpec, Geometry, SnrGrid, DEFAULT_TRIALS,
};
use oia_core::OiaError;

const EXIT_INVALID: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

/// Monte Carlo campaigns for opportunistic interference alignment.
#[derive(Debug, Parser)]
#[command(name = "oia-lab", version)]
#[command(group(ArgGroup::new("antennas").args(["n1", "m1", "n2", "m2"]).multiple(true).conflicts_with("ratios")))]
#[command(group(ArgGroup::new("ratios").args(["alpha11", "alpha12", "alpha21", "alpha22", "n_ref"]).multiple(true)))]
struct Cli {
    /// to-fraction | oia-vs-zfbf | upa-vs-opa | rate-surface | asymptote-convergence
    experiment: String,

    /// Primary receive antennas.
    #[arg(long, requires_all = ["m1", "n2", "m2"])]
    n1: Option<usize>,
    /// Primary transmit antennas.
    #[arg(long, requires_all = ["n1", "n2", "m2"])]
    m1: Option<usize>,
    /// Secondary receive antennas.
    #[arg(long, requires_all = ["n1", "m1", "m2"])]
    n2: Option<usize>,
    /// Secondary transmit antennas.
    #[arg(long, requires_all = ["n1", "m1", "n2"])]
    m2: Option<usize>,

    #[arg(long, requires_all = ["alpha12", "alpha21", "alpha22"])]
    alpha11: Option<f64>,
    #[arg(long, requires_all = ["alpha11", "alpha21", "alpha22"])]
    alpha12: Option<f64>,
    #[arg(long, requires_all = ["alpha11", "alpha12", "alpha22"])]
    alpha21: Option<f64>,
    #[arg(long, requires_all = ["alpha11", "alpha12", "alpha21"])]
    alpha22: Option<f64>,
    /// N1 used to turn the ratios into antenna counts.
    #[arg(long, requires = "alpha11")]
    n_ref: Option<usize>,

    /// Comma-separated antenna sizes to sweep (N_r, or N1 for to-fraction).
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,

    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    snr_min: f64,
    #[arg(long, default_value_t = 40.0, allow_negative_numbers = true)]
    snr_max: f64,
    #[arg(long, default_value_t = 2.0)]
    snr_step: f64,

    /// Monte Carlo trials per grid point.
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long, env = "OIA_SEED", default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores). Does not change the output.
    #[arg(long)]
    threads: Option<usize>,

    /// Output directory for `<experiment>.csv`.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Also write a gnuplot script next to the CSV.
    #[arg(long)]
    emit_plot_script: bool,
}

impl Cli {
    fn spec(&self) -> Result<ExperimentSpec, OiaError> {
        let id: ExperimentId = self.experiment.parse()?;
        let mut spec = ExperimentSpec::new(id)
            .with_trials(self.trials)
            .with_seed(self.seed)
            .with_snr(SnrGrid::new(self.snr_min, self.snr_max, self.snr_step)?);
        if let (Some(n1), Some(m1), Some(n2), Some(m2)) = (self.n1, self.m1, self.n2, self.m2) {
            let dims = Dimensions::new(n1, m1, n2, m2).map_err(|e| OiaError::InvalidSpec(e.to_string()))?;
            spec = spec.with_geometry(Geometry::Antennas(dims));
        }
        if let (Some(a11), Some(a12), Some(a21), Some(a22)) = (self.alpha11, self.alpha12, self.alpha21, self.alpha22) {
            let ratios = Ratios::new(a11, a12, a21, a22).map_err(|e| OiaError::InvalidSpec(e.to_string()))?;
            spec = spec.with_geometry(Geometry::Ratios {
                ratios,
                n_ref: self.n_ref.unwrap_or(10),
            });
        }
        if let Some(sizes) = &self.sizes {
            if self.n1.is_some() {
                return Err(OiaError::InvalidSpec("--sizes cannot be combined with --n1..--m2".into()));
            }
            spec = spec.with_sizes(sizes.clone());
        }
        spec.configurations()?;
        Ok(spec)
    }
}

fn fail(code: u8, err: &OiaError) -> ExitCode {
    eprintln!("oia-lab: error: {err}");
    ExitCode::from(code)
}

fn exit_code_for(err: &OiaError) -> u8 {
    if err.is_invalid_input() || matches!(err, OiaError::Io { .. }) {
        EXIT_INVALID
    } else {
        EXIT_NUMERICAL
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_INVALID,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let spec = match cli.spec() {
        Ok(spec) => spec,
        Err(e) => return fail(EXIT_INVALID, &e),
    };
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return fail(EXIT_INVALID, &OiaError::InvalidSpec("--threads must be >= 1".into()));
        }
        if let Err(e) = configure_threads(threads) {
            return fail(EXIT_INVALID, &e);
        }
    }

    let table = match run_experiment(&spec) {
        Ok(t) => t,
        Err(e) => return fail(exit_code_for(&e), &e),
    };
    if table.checks.violations() > 0 {
        eprintln!("oia-lab: error: structural checks failed: {}", table.checks);
        return ExitCode::from(EXIT_NUMERICAL);
    }
    match write_outputs(&table, &cli.out, cli.emit_plot_script) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            println!("checks: {}", table.checks);
            ExitCode::SUCCESS
        }
        Err(e) => fail(exit_code_for(&e), &e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_failures_map_to_two() {
        let e = OiaError::FixedPoint {
            op: "solve_gm",
            iterations: 10,
            residual: 1.0,
        };
        assert_eq!(exit_code_for(&e), EXIT_NUMERICAL);
        assert_eq!(exit_code_for(&OiaError::SvdFailure { op: "sorted_svd" }), EXIT_NUMERICAL);
        assert_eq!(exit_code_for(&OiaError::InvalidSpec("x".into())), EXIT_INVALID);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}

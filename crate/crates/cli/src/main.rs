mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bilevel_core::model::GnepMode;
use bilevel_core::solve::GridSpec;

#[derive(Parser, Debug)]
#[command(name = "bilevel", version, about = "Solve and verify optimistic bilevel programs and their uneven GNEP")]
pub struct Cli {
    #[command(flatten)]
    pub opts: Options,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Options {
    /// Grid points per coordinate.
    #[arg(long, global = true, default_value_t = 101)]
    pub grid_points: usize,
    /// Refinement sweeps after the coarse sweep.
    #[arg(long, global = true, default_value_t = 3)]
    pub refine_rounds: usize,
    #[arg(long, global = true, default_value_t = 1e-6)]
    pub feas_tol: f64,
    #[arg(long, global = true, default_value_t = 1e-6)]
    pub opt_tol: f64,
    /// Neighbourhood radius for local checks.
    #[arg(long, global = true, default_value_t = 0.1)]
    pub radius: f64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

impl Options {
    pub fn grid(&self) -> GridSpec {
        GridSpec {
            points: self.grid_points,
            rounds: self.refine_rounds,
            feas_tol: self.feas_tol,
            opt_tol: self.opt_tol,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Global solution of the bilevel problem by nested grid search.
    SolveSbp { file: PathBuf },
    /// Enumerate equilibria of a GNEP reformulation.
    SolveGnep {
        file: PathBuf,
        #[arg(long, default_value = "uneven", value_parser = parse_mode)]
        mode: GnepMode,
    },
    /// Follower once, then leader against that follower point.
    SolveTwoStage { file: PathBuf },
    /// Alternating best responses on the uneven game.
    Alternate {
        file: PathBuf,
        /// Start triple `x,y,w`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        start: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
    },
    /// Check solution certificates at a point `(x, y)` or `(x, y, w)`.
    Verify {
        file: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        point: Vec<f64>,
        /// Comma list of: equilibrium, thm1, thm3, sbp, feasible, global,
        /// strong-local, joint-local, obp-local, easy, active-set.
        #[arg(long, value_delimiter = ',', default_value = "equilibrium,sbp")]
        checks: Vec<String>,
    },
    /// Structural classification of the lower level.
    Classify {
        file: PathBuf,
        /// Also run the numeric solution-map probe.
        #[arg(long)]
        probe: bool,
    },
    /// Print a GNEP reformulation in the problem-file grammar.
    Reformulate {
        file: PathBuf,
        #[arg(long, default_value = "uneven", value_parser = parse_mode)]
        mode: GnepMode,
    },
    /// Compare the three market perspectives, sweeping `b1` when a budget is present.
    MarketSweep {
        file: PathBuf,
        #[arg(long, default_value_t = 61)]
        samples: usize,
        /// Tolerance for the profit relations.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
    /// Variational check of an easy vertical market solution.
    ViCheck {
        file: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        point: Vec<f64>,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
}

fn parse_mode(s: &str) -> Result<GnepMode, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(out) => {
            if let Some(path) = &cli.opts.out {
                if let Err(e) = std::fs::write(path, &out.report) {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return ExitCode::from(2);
                }
            } else {
                print!("{}", out.report);
            }
            ExitCode::from(if out.all_true { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

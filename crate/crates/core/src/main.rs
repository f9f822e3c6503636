use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use gfdm::benchmark::{
    estimate_record_order, run_sweep, solve_case, write_results_csv, Discretization, Method, RunOptions, TestCase,
};
use gfdm::diffusion::ReconstructionScheme;
use gfdm::pointcloud::{generate_cloud, save_cloud};
use gfdm::solver::write_solution_csv;
use gfdm::verification::{run_suite, Suite, DEFAULT_VERIFY_H};
use gfdm::Result;

/// Meshfree diffusion operators on point clouds in the unit square.
#[derive(Debug, Parser)]
#[command(name = "gfdm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a point cloud and write it as CSV.
    Gen {
        #[arg(long)]
        h: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve one benchmark case on one cloud and print `error=<value>`.
    Solve {
        /// Benchmark case, 1 to 5.
        #[arg(long)]
        case: u8,
        /// fvm, mls2, mls4, ddo2 or ddo4.
        #[arg(long)]
        method: String,
        /// am, hm, gm, taylor, skew or gr. Use hm for the interface case 3.
        #[arg(long, default_value = "am")]
        recon: String,
        #[arg(long)]
        h: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Diagonal dominance correction. Defaults to on for every method
        /// except fvm.
        #[arg(long, value_enum)]
        dd: Option<Toggle>,
        /// Solution CSV. Nothing is written when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Refinement sweep of several methods, with fitted orders.
    Converge {
        #[arg(long)]
        case: u8,
        /// Comma separated methods.
        #[arg(long, value_delimiter = ',', default_value = "fvm,mls2,ddo2")]
        methods: Vec<String>,
        #[arg(long, default_value = "am")]
        recon: String,
        /// Comma separated target spacings.
        #[arg(long, value_delimiter = ',', default_value = "0.16,0.08,0.04")]
        h_list: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum)]
        dd: Option<Toggle>,
        /// Results CSV. Nothing is written when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the operator checks and print a PASS/FAIL report.
    Verify {
        /// consistency, signs, derived, enrichment or all.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_delimiter = ',')]
        h_list: Option<Vec<f64>>,
        /// Report CSV. Nothing is written when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn options(dd: Option<Toggle>) -> RunOptions {
    RunOptions {
        dd: dd.map(|t| matches!(t, Toggle::On)),
        ..RunOptions::default()
    }
}

/// Exit status of a successful command that still wants to signal failure.
enum Outcome {
    Done,
    Failed(String),
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Gen { h, seed, out } => {
            let cloud = generate_cloud(h, seed)?;
            save_cloud(&cloud, &out)?;
            println!("points={} boundary={}", cloud.len(), cloud.boundary_count());
        }
        Command::Solve {
            case,
            method,
            recon,
            h,
            seed,
            dd,
            out,
        } => {
            let case = TestCase::new(case)?;
            let method: Method = method.parse()?;
            let scheme: ReconstructionScheme = recon.parse()?;
            let mut disc = Discretization::new(h, seed)?;
            let solution = solve_case(&mut disc, case, method, scheme, &options(dd))?;
            if let Some(path) = out {
                write_solution_csv(path, &disc.cloud, &solution.u_h, &solution.u_ref)?;
            }
            println!("error={:e}", solution.error);
        }
        Command::Converge {
            case,
            methods,
            recon,
            h_list,
            seed,
            dd,
            out,
        } => {
            let case = TestCase::new(case)?;
            let methods = methods.iter().map(|m| m.parse()).collect::<Result<Vec<Method>>>()?;
            let scheme: ReconstructionScheme = recon.parse()?;
            let records = run_sweep(case, &methods, scheme, &h_list, seed, &options(dd))?;
            if let Some(path) = out {
                write_results_csv(path, &records)?;
            }
            let mut failed = Vec::new();
            for m in &methods {
                let rows: Vec<_> = records.iter().filter(|r| r.method == *m).cloned().collect();
                let fit = estimate_record_order(&rows);
                let order = fit.slope.map_or("n/a".to_string(), |s| format!("{s:.3}"));
                let finest = rows.last().and_then(|r| r.error_value());
                let finest = finest.map_or("n/a".to_string(), |e| format!("{e:.3e}"));
                println!("{m}: order={order} finest_error={finest}");
                for r in rows.iter().filter(|r| r.error.is_err()) {
                    failed.push(format!("{m} at h={}: {}", r.h, r.error.as_ref().unwrap_err()));
                }
            }
            if !failed.is_empty() {
                return Ok(Outcome::Failed(failed.join("\n")));
            }
        }
        Command::Verify {
            suite,
            seed,
            h_list,
            out,
        } => {
            let suite: Suite = suite.parse()?;
            let h_list = h_list.unwrap_or(DEFAULT_VERIFY_H.to_vec());
            let report = run_suite(suite, &h_list, seed)?;
            if let Some(path) = out {
                report.write_csv(path)?;
            }
            print!("{}", report.to_text());
            if !report.passed() {
                return Ok(Outcome::Failed("some checks failed".into()));
            }
        }
    }
    Ok(Outcome::Done)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Failed(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}


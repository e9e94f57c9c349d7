use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hpf_core::pipeline::{
    load_feeder, parse_multipliers, partition_stage, run_bench, run_pipeline, run_sweep, solution_csv, RunConfig,
    Stage, StageError,
};
use hpf_core::solver::{solve_fixed_point, SolverOptions};

#[derive(Parser)]
#[command(name = "hpf", version, about = "Hierarchical neural surrogates for three-phase distribution power flow")]
struct Cli {
    /// Worker threads for training and evaluation (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `[output] path`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces every seed in the config.
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Partition, synthesize, train, benchmark and report.
    Pipeline(RunArgs),
    /// Hyperparameter grid search on one cluster.
    Sweep(RunArgs),
    /// Partition only; writes partition.txt.
    Partition(RunArgs),
    /// Benchmark a saved bundle.
    Bench(RunArgs),
    /// Solve one operating point with the fixed-point oracle.
    Solve {
        #[arg(long)]
        feeder: PathBuf,
        /// Load multipliers file; every load at 1 when omitted.
        #[arg(long)]
        multipliers: Option<PathBuf>,
        /// CSV destination (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = SolverOptions::default().tolerance)]
        tolerance: f64,
        #[arg(long, default_value_t = SolverOptions::default().max_iterations)]
        max_iterations: usize,
    },
}

fn load_config(a: &RunArgs) -> Result<RunConfig, StageError> {
    let mut cfg = RunConfig::load(&a.config).map_err(|source| StageError { stage: Stage::Config, source })?;
    if let Some(o) = &a.out {
        cfg.output = o.clone();
    }
    if let Some(s) = a.seed_override {
        cfg = cfg.with_seed(s);
    }
    Ok(cfg)
}

fn solve(
    feeder: &Path,
    multipliers: Option<&Path>,
    out: Option<&Path>,
    opts: &SolverOptions,
) -> Result<bool, StageError> {
    let at = |source| StageError { stage: Stage::Solve, source };
    let f = load_feeder(feeder).map_err(|source| StageError { stage: Stage::Parse, source })?;
    let m = match multipliers {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| at(hpf_core::pipeline::Error::Io(format!("{}: {e}", p.display()))))?;
            parse_multipliers(&text, f.loads().len()).map_err(|e| at(hpf_core::pipeline::Error::Input(format!("{}: {e}", p.display()))))?
        }
        None => vec![1.0; f.loads().len()],
    };
    let sol = solve_fixed_point(&f, &m, opts).map_err(|e| at(e.into()))?;
    let csv = solution_csv(&f, &sol);
    match out {
        Some(p) => std::fs::write(p, csv).map_err(|e| at(hpf_core::pipeline::Error::Io(format!("{}: {e}", p.display()))))?,
        None => print!("{csv}"),
    }
    if sol.converged {
        log::info!("converged in {} iterations, mismatch {:.3e} pu", sol.iterations, sol.mismatch);
    } else {
        eprintln!(
            "error: no convergence after {} iterations; final mismatch {:.3e} pu",
            sol.iterations, sol.mismatch
        );
    }
    Ok(sol.converged)
}

fn run(cli: &Cli) -> Result<bool, StageError> {
    match &cli.command {
        Command::Pipeline(a) => {
            let o = run_pipeline(&load_config(a)?)?;
            println!(
                "clusters {}  rows {}  worst |V| MAE {:.4}%  t_ATS {:.6} s  oracle {:.6} s  speedup {:.1}x",
                o.prepared.tree.len(),
                o.report.rows,
                100.0 * o.report.worst_vmag_mae(),
                o.report.timing.t_ats,
                o.report.oracle_seconds,
                o.report.speedup
            );
        }
        Command::Sweep(a) => {
            let ranking = run_sweep(&load_config(a)?)?;
            if let Some(best) = ranking.first() {
                println!("{} cells; best cell {} with validation MAE {:.6e}", ranking.len(), best.cell, best.val_mae);
            }
        }
        Command::Partition(a) => {
            let cfg = load_config(a)?;
            let at = |stage| move |source| StageError { stage, source };
            let f = load_feeder(&cfg.feeder).map_err(at(Stage::Parse))?;
            let tree = partition_stage(&f, &cfg.policy).map_err(at(Stage::Partition))?;
            std::fs::create_dir_all(&cfg.output)
                .and_then(|_| std::fs::write(cfg.output.join("partition.txt"), tree.export(&f)))
                .map_err(|e| at(Stage::Partition)(hpf_core::pipeline::Error::Io(format!("{}: {e}", cfg.output.display()))))?;
            for c in tree.clusters() {
                println!("{}  layer {}  {} buses", tree.label(c.id), c.layer, c.nodes.len());
            }
        }
        Command::Bench(a) => {
            let r = run_bench(&load_config(a)?)?;
            println!(
                "rows {}  worst |V| MAE {:.4}%  t_ATS {:.6} s  speedup {:.1}x",
                r.rows,
                100.0 * r.worst_vmag_mae(),
                r.timing.t_ats,
                r.speedup
            );
        }
        Command::Solve { feeder, multipliers, out, tolerance, max_iterations } => {
            let opts = SolverOptions { tolerance: *tolerance, max_iterations: *max_iterations, ..Default::default() };
            return solve(feeder, multipliers.as_deref(), out.as_deref(), &opts);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use polishplan::belief::InitialBelief;
use polishplan::calibration::{calibrate, generate_trajectories, parse_chain, resolve_chain, trajectories_csv, CalibrationFile};
use polishplan::config::RunConfig;
use polishplan::model::{Action, ProcessConfig};
use polishplan::pomcp::PlanTree;
use polishplan::run::{evaluate_with_benchmark, run_optimize, write_artifacts, RunReport, REPORT_FORMAT};
use polishplan::service::{serve, AppState};
use polishplan::{Error, Result};

/// Plan polishing process chains under uncertainty.
///
/// Log verbosity follows RUST_LOG, e.g. RUST_LOG=polishplan=debug.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate ground-truth trajectories of a fixed chain and write them as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// e.g. "MRF*13, SLS, CCP2*8, CCP3"
        #[arg(long)]
        chain: String,
        #[arg(short, long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Search for a plan, evaluate it and write plan.json, plan.dot, branches.csv and report.json.
    Optimize {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a saved plan, or a fixed chain, against the configured initial belief.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, conflicts_with = "chain")]
        plan: Option<PathBuf>,
        #[arg(long)]
        chain: Option<String>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Fit multiplier means and cycle counts to calibration records.
    Calibrate {
        /// Calibration problem and records (TOML).
        #[arg(long)]
        records: PathBuf,
        /// Run config whose model is the starting point; the built-in table otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Also write this many trajectories per record under the fitted model,
        /// starting from the first roughness channel.
        #[arg(long)]
        trajectories: Option<usize>,
        #[arg(long, requires = "trajectories")]
        trajectories_out: Option<PathBuf>,
    },
    /// Convert a saved plan to another format.
    Export {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, value_enum, default_value_t = ExportFormat::Dot)]
        format: ExportFormat,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Serve the plan navigation API and UI assets.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to plan.json in the configured output directory.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Defaults to report.json in the output directory, if present.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Dot,
    Json,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io { path: p.display().to_string(), source: e }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn fixed_chain(chain: &str) -> Result<Vec<Action>> {
    let runs = resolve_chain(&parse_chain(chain)?, &Default::default())?;
    Ok(runs.into_iter().flat_map(|(a, n)| std::iter::repeat_n(a, n as usize)).collect())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, chain, n, seed, out } => {
            let cfg = RunConfig::load(&config)?;
            let t = generate_trajectories(&cfg.model, &cfg.initial.belief, &fixed_chain(&chain)?, n, seed)?;
            emit(out.as_deref(), &trajectories_csv(&t))
        }
        Command::Optimize { config } => {
            let cfg = RunConfig::load(&config)?;
            let a = run_optimize(&cfg)?;
            write_artifacts(&cfg, &a.outcome.plan, &a.report)?;
            eprintln!("optimized in {:.1}s with {} simulations", a.seconds, a.report.simulations);
            for node in a.outcome.plan.dominant_path() {
                eprintln!("  {}", node.label());
            }
            let r = &a.report.plan;
            eprintln!(
                "plan: mean {:.1} min, max {:.1} min, in target {:.3}, failures {:.3}",
                r.mean_duration_min, r.max_duration_min, r.in_target_rate, r.failure_rate
            );
            if let (Some(b), Some(c)) = (&a.report.benchmark, &a.report.comparison) {
                eprintln!(
                    "benchmark: mean {:.1} min; difference {:.1} min ({:.0}% CI {:.1} .. {:.1})",
                    b.mean_duration_min,
                    c.mean_difference_min,
                    c.level * 100.0,
                    c.ci_low_min,
                    c.ci_high_min
                );
            }
            eprintln!("wrote {}", cfg.output.dir.display());
            Ok(())
        }
        Command::Evaluate { config, plan, chain, out } => {
            let cfg = RunConfig::load(&config)?;
            let plan = match (plan, chain) {
                (Some(p), _) => PlanTree::load(&p)?,
                (None, Some(c)) => PlanTree::from_chain(&c, &cfg.model)?,
                (None, None) => PlanTree::load(&cfg.output.plan_json())?,
            };
            let (mut report, mut benchmark, comparison) = evaluate_with_benchmark(&plan, &cfg)?;
            report.states.clear();
            if let Some(b) = benchmark.as_mut() {
                b.states.clear();
            }
            let report = RunReport { format: REPORT_FORMAT.into(), simulations: 0, dead_ends: 0, plan: report, benchmark, comparison };
            emit(out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))
        }
        Command::Calibrate { records, config, out, trajectories, trajectories_out } => {
            let file = CalibrationFile::load(&records)?;
            let model = match config {
                Some(c) => RunConfig::load(c)?.model,
                None => ProcessConfig::table1(),
            };
            let fit = calibrate(&file.problem, &file.records, &model)?;
            eprintln!("objective {:.3e} after {} evaluations", fit.objective, fit.evaluations);
            emit(out.as_deref(), &(serde_json::to_string_pretty(&fit)? + "\n"))?;
            if let Some(n) = trajectories {
                let fitted = fit.model(&model)?;
                let mut csv = String::new();
                for (i, r) in file.records.iter().enumerate() {
                    let runs = resolve_chain(&parse_chain(&r.chain)?, &fit.params.cycles)?;
                    let actions: Vec<Action> = runs.into_iter().flat_map(|(a, k)| std::iter::repeat_n(a, k as usize)).collect();
                    let init = InitialBelief::PointMass { shape_nm: r.initial_shape_nm, roughness_nm: r.initial_roughness_nm[0] };
                    let mut t = generate_trajectories(&fitted, &init, &actions, n, file.problem.seed.wrapping_add(i as u64))?;
                    t.iter_mut().for_each(|x| x.id += i * n);
                    let body = trajectories_csv(&t);
                    // one header for all records
                    csv.push_str(if i == 0 { &body } else { body.split_once('\n').map_or("", |x| x.1) });
                }
                emit(trajectories_out.as_deref(), &csv)?;
            }
            Ok(())
        }
        Command::Export { plan, format, out } => {
            let plan = PlanTree::load(&plan)?;
            let text = match format {
                ExportFormat::Dot => plan.to_dot(),
                ExportFormat::Json => plan.to_json()? + "\n",
            };
            emit(out.as_deref(), &text)
        }
        Command::Serve { config, plan, report, port } => {
            let cfg = RunConfig::load(&config)?;
            cfg.check_serve_files()?;
            let plan = PlanTree::load(&plan.unwrap_or_else(|| cfg.output.plan_json()))?;
            let report_path = report.clone().unwrap_or_else(|| cfg.output.report_json());
            let report = if report.is_some() || report_path.exists() { Some(RunReport::load(&report_path)?) } else { None };
            let addr = format!("{}:{}", cfg.serve.host, port.unwrap_or(cfg.serve.port));
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Io { path: "runtime".into(), source: e })?;
            rt.block_on(serve(AppState::new(plan, report), cfg.serve.static_dir.clone(), &addr))
                .map_err(|e| Error::Io { path: addr, source: e })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

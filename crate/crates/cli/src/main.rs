use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wavelab::config::{EquationChoice, ExperimentKind};
use wavelab::output::{merge_runs, write_merged, write_run};
use wavelab::{exit, run, validate, ExperimentConfig, Overrides};
use wavelab_core::{Error, SigmaSpec};

#[derive(Parser)]
#[command(name = "wavelab", version, about = "Monte Carlo experiments for the stochastic wave equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve fields and summarize u(t, x); optionally write field snapshots.
    Simulate(Common),
    /// Quadratic variation along time or space (`qv-time`, `qv-space`, `ladder`).
    Qv(Common),
    /// Conditional CLT for temporal increments.
    Clt(Common),
    /// Law-of-the-iterated-logarithm probe against a Brownian control.
    Lil(Common),
    /// Martingale / remainder decomposition of temporal increments.
    Mart(Common),
    /// Local-linearization defect of spatial increments.
    Linearize {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        equation: Option<EquationArg>,
    },
    /// Merge the replicate tables of several runs and summarize them.
    Report {
        /// Run directories containing replicates.csv.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// e.g. "linear(1)", "sine(1)".
    #[arg(long)]
    sigma: Option<SigmaSpec>,
    /// Validate and print the resolved config without running.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum EquationArg {
    Wave,
    Heat,
    Both,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Simulate(c) => experiment(c, None, &[ExperimentKind::Simulate]),
        Command::Qv(c) => experiment(c, None, &[ExperimentKind::QvTime, ExperimentKind::QvSpace, ExperimentKind::Ladder]),
        Command::Clt(c) => experiment(c, None, &[ExperimentKind::Clt]),
        Command::Lil(c) => experiment(c, None, &[ExperimentKind::Lil]),
        Command::Mart(c) => experiment(c, None, &[ExperimentKind::Mart]),
        Command::Linearize { common, equation } => {
            let eq = equation.map(|e| match e {
                EquationArg::Wave => EquationChoice::Wave,
                EquationArg::Heat => EquationChoice::Heat,
                EquationArg::Both => EquationChoice::Both,
            });
            experiment(common, eq, &[ExperimentKind::Linearize])
        }
        Command::Report { dirs, out_dir } => report(&dirs, out_dir),
    };
    ExitCode::from(code as u8)
}

fn experiment(c: Common, equation: Option<EquationChoice>, kinds: &[ExperimentKind]) -> i32 {
    let mut config = match ExperimentConfig::load(&c.config) {
        Ok(cfg) => cfg,
        Err(issue) => {
            eprintln!("error: {issue}");
            return exit::CONFIG_ERROR;
        }
    };
    if !kinds.contains(&config.experiment) {
        let names: Vec<_> = kinds.iter().map(|k| k.name()).collect();
        eprintln!("error: config declares experiment '{}', this subcommand runs {names:?}", config.experiment.name());
        return exit::CONFIG_ERROR;
    }
    config.apply(&Overrides {
        seed: c.seed,
        replicates: c.replicates,
        workers: c.workers,
        out_dir: c.out_dir,
        sigma: c.sigma,
        equation,
    });
    let validated = match validate(&config) {
        Ok(v) => v,
        Err(issues) => {
            for issue in &issues {
                eprintln!("error: {issue}");
            }
            return exit::CONFIG_ERROR;
        }
    };
    for w in &validated.warnings {
        eprintln!("warning: {w}");
    }
    if c.dry_run {
        match toml::to_string(&validated.config) {
            Ok(text) => print!("{text}"),
            Err(e) => {
                eprintln!("error: {e}");
                return exit::RUNTIME_ERROR;
            }
        }
        if !validated.admissible_partitions.is_empty() {
            println!("# admissible partition counts: {:?}", validated.admissible_partitions);
        }
        return exit::PASS;
    }

    let out = match run(&validated) {
        Ok(out) => out,
        Err(e) => {
            eprintln!("error: {e}");
            return match e {
                Error::Config(_) | Error::Alignment(_) | Error::Domain(_) => exit::CONFIG_ERROR,
                _ => exit::RUNTIME_ERROR,
            };
        }
    };
    let dir = config.out_dir.clone().unwrap_or_else(|| PathBuf::from("out").join(config.experiment.name()));
    let written = match write_run(&dir, &out) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("error: {e}");
            return exit::RUNTIME_ERROR;
        }
    };

    let s = &out.summary;
    println!("{} (wavelab {}), σ = {}, {} replicates", s.experiment, s.version, config.sigma, config.replicates);
    for st in &s.statistics {
        println!("  {:<28} mean {:>12.6}  s.e. {:>10.6}  n = {}", st.name, st.mean, st.std_err, st.count);
    }
    for sl in &s.slopes {
        println!("  slope {:<22} {:>8.4} ± {:.4} ({} points)", sl.name, sl.slope, sl.slope_se, sl.points);
    }
    for w in &s.warnings {
        println!("  warning: {w}");
    }
    for ch in &s.checks {
        let value = ch.value.map_or("missing".to_string(), |v| format!("{v:.6}"));
        println!(
            "  check {:<30} {value} in [{}, {}]: {}",
            ch.metric,
            ch.min.map_or("-∞".into(), |v| v.to_string()),
            ch.max.map_or("+∞".into(), |v| v.to_string()),
            if ch.passed { "pass" } else { "FAIL" }
        );
    }
    for p in &written {
        println!("  wrote {}", p.display());
    }
    match s.passed {
        Some(false) => exit::ACCEPTANCE_FAIL,
        _ => exit::PASS,
    }
}

fn report(dirs: &[PathBuf], out_dir: Option<PathBuf>) -> i32 {
    let (merged, table) = match merge_runs(dirs) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return exit::RUNTIME_ERROR;
        }
    };
    println!("merged {} replicates from {} run(s)", merged.replicates, dirs.len());
    for st in &merged.statistics {
        println!("  {:<28} mean {:>12.6}  s.e. {:>10.6}  n = {}", st.name, st.mean, st.std_err, st.count);
    }
    if let Some(dir) = out_dir {
        if let Err(e) = write_merged(&dir, &merged, &table) {
            eprintln!("error: {e}");
            return exit::RUNTIME_ERROR;
        }
        println!("  wrote {}", dir.display());
    }
    exit::PASS
}

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oubranch::harness::{
    emit, run_selected, run_simulate, run_test, run_variance, write_summary, ExperimentConfig,
    OutputFormat, Overrides, TestKind, TestReport,
};
use oubranch::simulator::dump_snapshots_csv;
use oubranch::Error;

#[derive(Parser)]
#[command(name = "oubranch", version, about = "Branching OU particle systems: simulation and limit-law checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate replicas and write particle positions
    Simulate(Common),
    /// Law of large numbers for the normalized U-statistic
    Lln(Common),
    /// Regime CLT against the sampled limit law
    Clt(Common),
    /// Exponential law of the population martingale limit
    Wlaw(Common),
    /// Monte Carlo V-statistic means against the exact tree expansion
    Oracle(Common),
    /// Degeneracy order and limit variance of the kernel
    Variance(Common),
    /// Every test listed in the config
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML)
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<usize>,
    /// Observation times, comma separated
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    t: Option<Vec<f64>>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or jsonl
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        let format = self.format.as_deref().map(str::parse::<OutputFormat>).transpose()?;
        cfg.apply(&Overrides {
            seed: self.seed,
            replicas: self.replicas,
            t_grid: self.t.clone(),
            out: self.out.clone(),
            format,
            threads: self.threads,
        })?;
        Ok(cfg)
    }
}

fn print_summary(reports: &[TestReport]) {
    for r in reports {
        eprintln!(
            "{} [{}] survivors {}/{} ({:.4}), {:.2}s",
            r.test, r.regime, r.survivors, r.replicas, r.survival_fraction, r.runtime_secs
        );
        for c in &r.checks {
            let tag = if c.tolerance.is_none() {
                "INFO"
            } else if c.pass {
                "PASS"
            } else {
                "FAIL"
            };
            let expected = c.expected.map_or(String::new(), |e| format!(" expected {e:.6}"));
            let tol = c.tolerance.map_or(String::new(), |t| format!(" tol {t:.6} ({})", c.rule));
            eprintln!("  {tag} {} = {:.6}{expected}{tol}", c.name, c.value);
        }
    }
}

fn write_out(cfg: &ExperimentConfig, reports: &[TestReport]) -> Result<(), Error> {
    match &cfg.output.dir {
        Some(dir) => {
            for p in emit(reports, dir, cfg.output.format)? {
                eprintln!("wrote {}", p.display());
            }
        }
        None => {
            let stdout = io::stdout();
            write_summary(stdout.lock(), reports, cfg.output.format)?;
        }
    }
    Ok(())
}

fn execute(command: Command) -> Result<bool, Error> {
    let (common, kind) = match &command {
        Command::Simulate(c) => (c, None),
        Command::Lln(c) => (c, Some(TestKind::Lln)),
        Command::Clt(c) => (c, Some(TestKind::Clt)),
        Command::Wlaw(c) => (c, Some(TestKind::Wlaw)),
        Command::Oracle(c) => (c, Some(TestKind::Oracle)),
        Command::Variance(c) | Command::Run(c) => (c, None),
    };
    let cfg = common.load()?;
    let reports = match (&command, kind) {
        (Command::Simulate(_), _) => {
            let (report, snaps) = run_simulate(&cfg)?;
            if let Some(dir) = &cfg.output.dir {
                std::fs::create_dir_all(dir)?;
                let path = dir.join("particles.csv");
                let rows: Vec<(u64, &_)> = snaps
                    .iter()
                    .enumerate()
                    .flat_map(|(r, path)| path.iter().map(move |s| (r as u64, s)))
                    .collect();
                dump_snapshots_csv(std::fs::File::create(&path)?, &rows, cfg.model.dim())?;
                eprintln!("wrote {}", path.display());
            }
            vec![report]
        }
        (Command::Variance(_), _) => vec![run_variance(&cfg)?],
        (Command::Run(_), _) => run_selected(&cfg)?,
        (_, Some(k)) => vec![run_test(&cfg, k)?],
        (_, None) => unreachable!("every test command carries its kind"),
    };
    print_summary(&reports);
    write_out(&cfg, &reports)?;
    io::stdout().flush()?;
    Ok(reports.iter().all(TestReport::passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

//! `fedleak`: train simulated federated-learning protocols and run the
//! transcript attacks against them from the command line.
//!
//! The `attack` verbs execute a TOML scenario end to end and write a JSON
//! report (exit code 0 when the attack met its declared tolerance, 1 when it
//! did not). `dof` and `kdr` print the closed-form recoverability numbers,
//! and `report-diff` compares two report files with timing ignored.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use fedleak_core::attacks::{kdr_horizontal, kdr_vertical};
use fedleak_core::recovery::{constrained_dof, quadratic_dof};
use fedleak_core::workbench::{
    epsilon_sweep, far_sweep, report_diff, run_scenario, summarize, write_csv, AttackReport,
    ScenarioConfig, SettingKind,
};

#[derive(Parser)]
#[command(
    name = "fedleak",
    version,
    about = "Simulates encrypted federated-learning protocols and inverts their transcripts"
)]
struct Cli {
    /// Scenario configuration file (TOML).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed override: points dataset generation, weight
    /// initialization, and known-entry placement at one value.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Directory for the report and any sweep files (created if missing).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Also print the full report JSON to standard output.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a protocol and attack it per the scenario config.
    Attack {
        #[command(subcommand)]
        setting: AttackVerb,
    },
    /// Print degrees-of-freedom counts for a victim matrix shape.
    Dof {
        /// Row count of the unknown matrix in the solver's orientation
        /// (samples for vertical recovery, features for horizontal).
        #[arg(long)]
        rows: usize,
        /// Column count of the unknown matrix (victim features for
        /// vertical recovery, victim rows for horizontal).
        #[arg(long)]
        cols: usize,
    },
    /// Print the known-data ratio an attack would need up front.
    Kdr {
        #[command(subcommand)]
        shape: KdrShape,
    },
    /// Compare two report files field by field, ignoring timing.
    /// Exits 0 when they match, 1 when they differ.
    ReportDiff {
        left: PathBuf,
        right: PathBuf,
    },
}

#[derive(Subcommand, Clone, Copy)]
enum AttackVerb {
    /// Two-party vertical linear regression.
    VflLinreg,
    /// Two-party vertical logistic regression (polynomial sigmoid).
    VflLogreg,
    /// Two-party horizontal linear regression.
    HflLinreg,
    /// Multi-party vertical linear regression with a colluding arbiter.
    VflMulti,
    /// Vertically federated gradient boosting.
    Secureboost,
}

impl AttackVerb {
    fn setting(self) -> SettingKind {
        match self {
            AttackVerb::VflLinreg => SettingKind::VflLinreg,
            AttackVerb::VflLogreg => SettingKind::VflLogreg,
            AttackVerb::HflLinreg => SettingKind::HflLinreg,
            AttackVerb::VflMulti => SettingKind::VflMulti,
            AttackVerb::Secureboost => SettingKind::Secureboost,
        }
    }
}

#[derive(Subcommand, Clone, Copy)]
enum KdrShape {
    /// Vertical victim: n features over m training samples.
    Vertical {
        #[arg(long)]
        victim_features: usize,
        #[arg(long)]
        samples: usize,
    },
    /// Horizontal victim: m rows with n shared features.
    Horizontal {
        #[arg(long)]
        victim_rows: usize,
        #[arg(long)]
        features: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            for cause in err.chain().skip(1) {
                eprintln!("  caused by: {cause}");
            }
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Attack { setting } => run_attack(setting.setting(), cli),
        Command::Dof { rows, cols } => run_dof(*rows, *cols),
        Command::Kdr { shape } => run_kdr(*shape),
        Command::ReportDiff { left, right } => run_report_diff(left, right),
    }
}

fn run_attack(setting: SettingKind, cli: &Cli) -> Result<ExitCode> {
    let config_path = cli
        .config
        .as_ref()
        .context("attack needs --config <scenario.toml>")?;
    let mut config = ScenarioConfig::load(config_path)
        .with_context(|| format!("loading {}", config_path.display()))?;
    if config.setting != setting {
        bail!(
            "config {} declares setting {} but the command asked for {}",
            config_path.display(),
            config.setting,
            setting
        );
    }
    if let Some(seed) = cli.seed {
        config.apply_seed_override(seed);
    }
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;

    let report = run_scenario(&config)?;
    print!("{}", summarize(&report));
    let report_path = out_dir.join(format!("report-{setting}.json"));
    report.write(&report_path)?;
    println!("report written to {}", report_path.display());

    match setting {
        SettingKind::VflLinreg | SettingKind::VflLogreg
            if !config.sweep.fake_rates.is_empty() =>
        {
            let rows = far_sweep(&config)?;
            let path = out_dir.join("loss_vs_far.csv");
            write_csv(&path, &rows)?;
            println!("fake-rate sweep written to {}", path.display());
        }
        SettingKind::Secureboost if !config.sweep.epsilons.is_empty() => {
            let rows = epsilon_sweep(&config)?;
            let path = out_dir.join("queries_vs_epsilon.csv");
            write_csv(&path, &rows)?;
            println!("precision sweep written to {}", path.display());
        }
        _ => {}
    }

    if cli.verbose {
        println!("{}", report.to_json()?);
    }
    Ok(if report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn run_dof(rows: usize, cols: usize) -> Result<ExitCode> {
    println!("unknown matrix: {rows} rows x {cols} cols");
    match quadratic_dof(rows, cols) {
        Ok(dof) => println!("gram constraints only:     dof = {dof}"),
        Err(err) => println!("gram constraints only:     n/a ({err})"),
    }
    match constrained_dof(rows, cols) {
        Ok(dof) => println!("gram + linear constraint:  dof = {dof}"),
        Err(err) => println!("gram + linear constraint:  n/a ({err})"),
    }
    Ok(ExitCode::SUCCESS)
}

fn run_kdr(shape: KdrShape) -> Result<ExitCode> {
    match shape {
        KdrShape::Vertical {
            victim_features,
            samples,
        } => {
            let kdr = kdr_vertical(victim_features, samples);
            println!(
                "vertical kdr for {victim_features} victim features over {samples} samples: {:.4} ({:.1}%)",
                kdr,
                kdr * 100.0
            );
        }
        KdrShape::Horizontal {
            victim_rows,
            features,
        } => {
            let kdr = kdr_horizontal(victim_rows, features);
            println!(
                "horizontal kdr for {victim_rows} victim rows with {features} features: {:.4} ({:.1}%)",
                kdr,
                kdr * 100.0
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run_report_diff(left: &Path, right: &Path) -> Result<ExitCode> {
    let left_report = AttackReport::load(left)?;
    let right_report = AttackReport::load(right)?;
    let diffs = report_diff(&left_report, &right_report)?;
    if diffs.is_empty() {
        println!("reports match (timing ignored)");
        Ok(ExitCode::SUCCESS)
    } else {
        for diff in &diffs {
            println!("{diff}");
        }
        println!("{} difference(s)", diffs.len());
        Ok(ExitCode::from(1))
    }
}

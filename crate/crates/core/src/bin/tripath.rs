use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tripath::config::{ExperimentConfig, Mode, Protocol};
use tripath::harness::{PulseLibrary, Simulator};
use tripath::report::{emit_report, read_records, RunMetadata, Summary};
use tripath::spin_system::Severity;
use tripath::stats::KappaDataset;
use tripath::Result;

#[derive(Parser)]
#[command(name = "tripath", version, about = "Three-path interference simulator for NMR qubits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Analytic,
    Ideal,
    Noisy,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    TwoExp,
    Inline,
}

#[derive(Subcommand)]
enum Command {
    /// Run the τ sweep and write run records, κ series and a summary.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum)]
        protocol: Option<ProtocolArg>,
        /// First delay in µs.
        #[arg(long)]
        tau_start: Option<f64>,
        /// Last delay in µs (inclusive).
        #[arg(long)]
        tau_stop: Option<f64>,
        #[arg(long)]
        tau_step: Option<f64>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory of pulse files from `synthesize`; synthesized on the fly if absent.
        #[arg(long)]
        pulses: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run GRAPE for Û and the eight V̂^γ and write one pulse file per gate.
    Synthesize {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "pulses")]
        out: PathBuf,
    },
    /// Recompute κ statistics from a run-record CSV.
    Analyze {
        input: PathBuf,
        /// Also write the report files here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a configuration file and list problems.
    Validate { config: PathBuf },
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn print_summary(s: &Summary) {
    match (s.kappa_bar, s.standard_error) {
        (Some(k), Some(e)) => println!("kappa_bar = {k:.6e} ± {e:.3e}"),
        _ => println!("kappa_bar undefined (no defined samples)"),
    }
    println!(
        "{} records, {} kappa samples ({} defined), {} invalid records",
        s.records, s.kappa_samples, s.defined_kappa_samples, s.invalid_records
    );
    if !s.undefined_tau_s.is_empty() {
        let us: Vec<String> = s.undefined_tau_s.iter().map(|t| format!("{}", t * 1e6)).collect();
        println!("undefined kappa at tau (µs): {}", us.join(", "));
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            mode,
            protocol,
            tau_start,
            tau_stop,
            tau_step,
            reps,
            seed,
            pulses,
            out,
        } => {
            let mut cfg = load_config(config.as_ref())?;
            let e = &mut cfg.experiment;
            if let Some(m) = mode {
                e.mode = match m {
                    ModeArg::Analytic => Mode::Analytic,
                    ModeArg::Ideal => Mode::Ideal,
                    ModeArg::Noisy => Mode::Noisy,
                };
            }
            if let Some(p) = protocol {
                e.protocol = match p {
                    ProtocolArg::TwoExp => Protocol::TwoExp,
                    ProtocolArg::Inline => Protocol::Inline,
                };
            }
            if let Some(v) = tau_start {
                e.tau_start_us = v;
            }
            if let Some(v) = tau_stop {
                e.tau_stop_us = v;
            }
            if let Some(v) = tau_step {
                e.tau_step_us = v;
            }
            if let Some(v) = reps {
                e.repetitions = v;
            }
            if let Some(v) = seed {
                e.seed = v;
            }
            let library = pulses.as_deref().map(PulseLibrary::load).transpose()?;
            let sim = Simulator::new(&cfg, library)?;
            let records = sim.run_sweep()?;
            let data = KappaDataset::from_records(&records)?;
            let summary = emit_report(&records, &data, Some(RunMetadata::from_config(&cfg)), &out)?;
            print_summary(&summary);
            println!("report written to {}", out.display());
        }
        Command::Synthesize { config, out } => {
            let cfg = load_config(config.as_ref())?;
            cfg.validate()?;
            let (library, reports) = PulseLibrary::synthesize(&cfg)?;
            library.save(&out)?;
            for r in &reports {
                println!(
                    "{:<10} fidelity {:.6}  iterations {:>5}  {}",
                    r.name,
                    r.fidelity,
                    r.iterations,
                    if r.converged { "converged" } else { "NOT converged" }
                );
            }
            println!("pulses written to {}", out.display());
            if reports.iter().any(|r| !r.converged) {
                return Err(tripath::Error::MissingPulse(
                    "some targets missed the fidelity target".into(),
                ));
            }
        }
        Command::Analyze { input, out } => {
            let records = read_records(&input)?;
            let data = KappaDataset::from_records(&records)?;
            let summary = match out {
                Some(dir) => emit_report(&records, &data, None, &dir)?,
                None => Summary::new(&records, &data, None),
            };
            print_summary(&summary);
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let issues = cfg.lint();
            for i in &issues {
                println!("{i}");
            }
            if issues.iter().any(|i| i.severity == Severity::Violation) {
                return Err(tripath::Error::InvalidConfig(format!(
                    "{} has violations",
                    config.display()
                )));
            }
            println!("{}: ok", config.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

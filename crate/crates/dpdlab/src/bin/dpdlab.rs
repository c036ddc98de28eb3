use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dpdlab::cli::{
    cmd_eval, cmd_fit_mp, cmd_gen_data, cmd_grad_check, cmd_train_pan, cmd_train_pdn,
    load_config, parse_freq, parse_voltage, thread_cap, TargetKind,
};
use dpdlab::trainer::DpdKind;
use dpdlab::vpa::{FreqClass, PaCondition};
use dpdlab::Result;

/// Digital pre-distortion laboratory: waveforms, a virtual PA, two-stage
/// neural DPD training, a memory-polynomial baseline, and spectral metrics.
#[derive(Parser)]
#[command(name = "dpdlab", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate training/test frames and virtual-PA outputs with a manifest.
    GenData {
        #[arg(long)]
        config: PathBuf,
    },
    /// Stage 1: train the conditional PA surrogate network.
    TrainPan {
        #[arg(long)]
        config: PathBuf,
        /// Train with the time-domain loss only (ablation variant).
        #[arg(long)]
        tmse_only: bool,
        /// Continue from the existing checkpoint's epoch counter.
        #[arg(long)]
        resume: bool,
    },
    /// Stage 2: train the pre-distortion network through the frozen PAN.
    TrainPdn {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        tmse_only: bool,
        #[arg(long)]
        resume: bool,
        /// Explicit PAN checkpoint (defaults to <out_dir>/pan/pan.dpn).
        #[arg(long)]
        pan: Option<PathBuf>,
    },
    /// Fit the memory-polynomial baseline for one condition.
    FitMp {
        #[arg(long)]
        config: PathBuf,
        /// Voltage class: v4.0, v4.2 or v4.6.
        #[arg(long)]
        cond: String,
    },
    /// Evaluate a (DPD, target) pair and dump metrics + spectrum CSVs.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        dpd: DpdArg,
        #[arg(long, value_enum)]
        target: TargetArg,
        /// Voltage class: v4.0, v4.2 or v4.6.
        #[arg(long)]
        cond: String,
        /// Frequency class: f2593 (default) or f2643.
        #[arg(long)]
        freq: Option<String>,
        /// Drive scale (default 1.0; 1.122 is the +1 dB unseen point).
        #[arg(long)]
        drive: Option<f64>,
        /// Output file tag (defaults to "<dpd>_<target>_<cond>").
        #[arg(long)]
        tag: Option<String>,
    },
    /// Finite-difference gradient check of the full network (64-bit).
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DpdArg {
    None,
    Pdn,
    Mp,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Pan,
    Vpa,
}

fn run(cli: Cli) -> Result<()> {
    let _workers = thread_cap()?;
    match cli.cmd {
        Command::GenData { config } => {
            let cfg = load_config(&config)?;
            let manifest = cmd_gen_data(&cfg)?;
            println!("wrote {} dataset files to {}", manifest.files.len(), cfg.data_dir().display());
        }
        Command::TrainPan { config, tmse_only, resume } => {
            let cfg = load_config(&config)?;
            let reports = cmd_train_pan(&cfg, tmse_only, resume)?;
            for r in &reports {
                println!(
                    "{:?}: mse {:.2} dBc, ACLR err H {:+.2} dB / L {:+.2} dB",
                    r.condition.voltage_class,
                    r.mse_dbc,
                    r.aclr_err_h_db(),
                    r.aclr_err_l_db()
                );
            }
        }
        Command::TrainPdn { config, tmse_only, resume, pan } => {
            let cfg = load_config(&config)?;
            let path = cmd_train_pdn(&cfg, tmse_only, resume, pan.as_deref())?;
            println!("wrote {}", path.display());
        }
        Command::FitMp { config, cond } => {
            let cfg = load_config(&config)?;
            let condition = PaCondition::nominal(parse_voltage(&cond)?);
            let coeffs = cmd_fit_mp(&cfg, &condition)?;
            println!("fitted {} MP coefficients", coeffs.coeffs.len());
        }
        Command::Eval { config, dpd, target, cond, freq, drive, tag } => {
            let cfg = load_config(&config)?;
            let condition = PaCondition {
                voltage_class: parse_voltage(&cond)?,
                freq_class: freq.as_deref().map(parse_freq).transpose()?.unwrap_or(FreqClass::F2593),
                drive_scale: drive.unwrap_or(1.0),
            };
            let dpd_kind = match dpd {
                DpdArg::None => DpdKind::None,
                DpdArg::Pdn => DpdKind::Pdn,
                DpdArg::Mp => DpdKind::Mp,
            };
            let target_kind = match target {
                TargetArg::Pan => TargetKind::Pan,
                TargetArg::Vpa => TargetKind::Vpa,
            };
            let tag = tag.unwrap_or_else(|| {
                format!(
                    "{:?}_{:?}_{}",
                    dpd_kind,
                    target_kind,
                    cond.to_ascii_lowercase().replace('.', "_")
                )
                .to_lowercase()
            });
            let report = cmd_eval(&cfg, dpd_kind, target_kind, &condition, &tag)?;
            println!(
                "mse {:.2} dBc, ACLR H {:.2} dB / L {:.2} dB, OOB reduction {:.1} %",
                report.mse_dbc, report.aclr_h_db, report.aclr_l_db, report.oob_reduction_pct
            );
        }
        Command::GradCheck { seed, tol } => {
            let report = cmd_grad_check(seed)?;
            println!(
                "checked {} parameters, max relative error {:.3e} (worst: {})",
                report.checked, report.max_rel_err, report.worst
            );
            if report.max_rel_err >= tol {
                return Err(dpdlab::DpdError::Divergence(format!(
                    "gradient check failed: {:.3e} >= {tol:.3e}",
                    report.max_rel_err
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

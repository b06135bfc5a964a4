//! Experiment runner.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::Scheme;
pub use config::{load_config, ExperimentConfig};
pub use manifest::RunManifest;

use crate::channel::NormalizeMode;
use crate::error::{Error, Result};
use crate::numerics::ComplexTensor;
use crate::transceiver::WaveformMatrix;
use commands::OutputSet;

#[derive(Debug, Parser)]
#[command(name = "flexwave", version, about = "Learned multicarrier waveform experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML configuration, or a manifest.json from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Use the published run sizes instead of desk-scale defaults.
    #[arg(long)]
    pub paper_scale: bool,
    /// `tdl-a`, `exponential`, or a profile CSV path.
    #[arg(long)]
    pub profile: Option<String>,
    /// Comma-separated RMS delay spreads in ns.
    #[arg(long, value_delimiter = ',')]
    pub rms_ds_ns: Option<Vec<f64>>,
    /// Comma-separated Eb/N0 points in dB.
    #[arg(long, value_delimiter = ',')]
    pub ebn0_db: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub normalize_channel: Option<NormalizeArg>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum NormalizeArg {
    PerRealization,
    Ensemble,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize a waveform per delay spread; writes qmat.csv, qtaps.csv and
    /// train_trace.csv under rms_<ds>ns/.
    Optimize(CommonArgs),
    /// PAPR CCDFs of the learned waveform, OFDM and SC/FDE per delay spread.
    PaprCcdf(CommonArgs),
    /// BER versus Eb/N0 over a delay-spread mixture.
    BerSweep(CommonArgs),
    /// Time and frequency views of learned waveforms.
    WaveformReport(CommonArgs),
    /// Constellation points and Gray labels.
    ConstellationDump(CommonArgs),
    /// Columns of a waveform matrix in time and frequency.
    WaveformDump {
        #[command(flatten)]
        common: CommonArgs,
        /// Matrix CSV (`row,col,re,im`) as written by `optimize`; the IDFT
        /// basis if omitted.
        #[arg(long)]
        qmat: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Optimize(_) => "optimize",
            Command::PaprCcdf(_) => "papr-ccdf",
            Command::BerSweep(_) => "ber-sweep",
            Command::WaveformReport(_) => "waveform-report",
            Command::ConstellationDump(_) => "constellation-dump",
            Command::WaveformDump { .. } => "waveform-dump",
        }
    }

    fn common(&self) -> &CommonArgs {
        match self {
            Command::Optimize(c)
            | Command::PaprCcdf(c)
            | Command::BerSweep(c)
            | Command::WaveformReport(c)
            | Command::ConstellationDump(c) => c,
            Command::WaveformDump { common, .. } => common,
        }
    }
}

/// Configuration from the file (if any) with command-line overrides applied,
/// validated.
pub fn resolve_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(d) = &args.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(p) = &args.profile {
        cfg.channel.profile = p.clone();
    }
    if let Some(v) = &args.rms_ds_ns {
        cfg.channel.rms_ds_ns = v.clone();
    }
    if let Some(v) = &args.ebn0_db {
        cfg.noise.ebn0_db = v.clone();
    }
    if let Some(n) = args.normalize_channel {
        cfg.channel.normalize = match n {
            NormalizeArg::PerRealization => NormalizeMode::PerRealization,
            NormalizeArg::Ensemble => NormalizeMode::Ensemble,
        };
    }
    if args.paper_scale && !cfg.paper_scale {
        cfg.apply_paper_scale();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Execute one subcommand; returns the manifest of the files written.
pub fn run(command: &Command) -> Result<RunManifest> {
    let cfg = resolve_config(command.common())?;
    let mut out = OutputSet::new(command.name(), &cfg)?;
    commands::with_workers(cfg.workers, || -> Result<()> {
        match command {
            Command::Optimize(_) => commands::write_optimize(&cfg, &mut out).map(|_| ()),
            Command::PaprCcdf(_) => {
                let results = commands::papr_ccdf(&cfg)?;
                commands::write_papr_ccdf(&results, &mut out)
            }
            Command::BerSweep(_) => {
                let sweep = commands::ber_sweep(&cfg)?;
                commands::write_ber_sweep(&sweep, &mut out)
            }
            Command::WaveformReport(_) => commands::write_waveform_report(&cfg, &mut out),
            Command::ConstellationDump(_) => out.write("constellation.csv", &cfg.constellation()?.to_csv()),
            Command::WaveformDump { qmat, .. } => {
                let q: ComplexTensor = match qmat {
                    Some(path) => {
                        let text = std::fs::read_to_string(path).map_err(|e| {
                            Error::Config(format!("cannot read --qmat {}: {e}", path.display()))
                        })?;
                        let q = commands::parse_matrix_csv(&text)?;
                        if !q.is_finite() {
                            return Err(Error::Degenerate(format!("{} has non-finite entries", path.display())));
                        }
                        q
                    }
                    None => WaveformMatrix::idft(cfg.frame.n).into_matrix(),
                };
                let (time, freq) = commands::waveform_csvs(&q, q.cols());
                out.write("waveform_time.csv", &time)?;
                out.write("waveform_freq.csv", &freq)
            }
        }
    })??;
    out.finish()
}

/// Parse arguments, run, and map the outcome to a process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(m) => {
            eprintln!("{}: wrote {} files", m.command, m.outputs.len());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

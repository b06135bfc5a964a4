//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::RunManifest;
use crate::channel::{NormalizeMode, TdlProfile};
use crate::error::{Error, Result};
use crate::modem::Constellation;
use crate::optimizer::OptimConfig;
use crate::transceiver::{FrameConfig, ScFdeConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub out_dir: PathBuf,
    /// Switch evaluation and training sizes to the published protocol.
    pub paper_scale: bool,
    pub frame: FrameConfig,
    pub modem: ModemConfig,
    pub channel: ChannelConfig,
    pub noise: NoiseConfig,
    pub optim: OptimConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            workers: 0,
            out_dir: PathBuf::from("out"),
            paper_scale: false,
            frame: FrameConfig::default(),
            modem: ModemConfig::default(),
            channel: ChannelConfig::default(),
            noise: NoiseConfig::default(),
            optim: OptimConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModemConfig {
    /// Bits per QAM symbol (`M`); 4 is 16-QAM.
    pub bits_per_symbol: usize,
}

impl Default for ModemConfig {
    fn default() -> Self {
        Self { bits_per_symbol: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// `tdl-a`, `exponential`, or a path to a `delay_norm,power_db` CSV.
    pub profile: String,
    /// Delay spreads for per-spread experiments (CCDF, waveform report).
    pub rms_ds_ns: Vec<f64>,
    /// Uniform delay-spread range of the channel mixture used by BER sweeps.
    pub rms_ds_range_ns: [f64; 2],
    pub normalize: NormalizeMode,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            profile: "tdl-a".into(),
            rms_ds_ns: vec![10.0, 130.0, 250.0, 580.0],
            rms_ds_range_ns: [10.0, 600.0],
            normalize: NormalizeMode::PerRealization,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub ebn0_db: Vec<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            ebn0_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Blocks per CCDF curve.
    pub ccdf_blocks: usize,
    /// Channel realizations per BER point.
    pub ber_channels: usize,
    /// Blocks sent over each channel at each Eb/N0.
    pub ber_blocks_per_channel: usize,
    /// CCDF grid `[start, stop, step]` in dB.
    pub thresholds_db: [f64; 3],
    /// Include the cyclic prefix in PAPR measurements.
    pub include_cp: bool,
    /// Columns of `Q` written by the waveform report.
    pub report_columns: usize,
    pub scfde_rolloff: f64,
    pub scfde_oversampling: usize,
    pub scfde_span_symbols: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let sc = ScFdeConfig::default();
        Self {
            ccdf_blocks: 10_000,
            ber_channels: 100,
            ber_blocks_per_channel: 200,
            thresholds_db: [0.0, 12.0, 0.1],
            include_cp: false,
            report_columns: 8,
            scfde_rolloff: sc.rolloff,
            scfde_oversampling: sc.oversampling,
            scfde_span_symbols: sc.span_symbols,
        }
    }
}

impl EvalConfig {
    pub fn scfde(&self) -> ScFdeConfig {
        ScFdeConfig {
            rolloff: self.scfde_rolloff,
            oversampling: self.scfde_oversampling,
            span_symbols: self.scfde_span_symbols,
        }
    }

    pub fn thresholds(&self) -> Vec<f64> {
        let [start, stop, step] = self.thresholds_db;
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| start + i as f64 * step).collect()
    }
}

impl ExperimentConfig {
    /// Parse TOML text; errors name the offending field path.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config(e.to_string()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner().to_string();
            if path == "." {
                Error::Config(inner.trim_end().to_string())
            } else {
                Error::Config(format!("{path}: {}", inner.trim_end()))
            }
        })?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Apply the published run sizes.
    pub fn apply_paper_scale(&mut self) {
        self.paper_scale = true;
        self.optim.batch_size = 9_000;
        self.optim.fine_tune.batch_size = 14_000;
        self.eval.ber_channels = 1_000;
        self.eval.ccdf_blocks = 100_000;
    }

    pub fn validate(&self) -> Result<()> {
        self.frame.validate()?;
        self.optim.validate()?;
        Constellation::square_qam(self.modem.bits_per_symbol)
            .map_err(|e| Error::Config(format!("modem.bits_per_symbol: {e}")))?;
        self.profile()?;
        if self.channel.rms_ds_ns.is_empty() {
            return Err(Error::Config("channel.rms_ds_ns must not be empty".into()));
        }
        if let Some(v) = self.channel.rms_ds_ns.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Config(format!("channel.rms_ds_ns entries must be > 0, got {v}")));
        }
        let [lo, hi] = self.channel.rms_ds_range_ns;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!(
                "channel.rms_ds_range_ns must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
            )));
        }
        if self.noise.ebn0_db.is_empty() || self.noise.ebn0_db.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("noise.ebn0_db must be a non-empty list of finite values".into()));
        }
        let e = &self.eval;
        for (name, v) in [
            ("eval.ccdf_blocks", e.ccdf_blocks),
            ("eval.ber_channels", e.ber_channels),
            ("eval.ber_blocks_per_channel", e.ber_blocks_per_channel),
            ("eval.scfde_oversampling", e.scfde_oversampling),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        let [start, stop, step] = e.thresholds_db;
        if !(step > 0.0 && start <= stop && stop.is_finite() && start.is_finite()) {
            return Err(Error::Config(format!(
                "eval.thresholds_db must be [start, stop, step] with start <= stop and step > 0, got {:?}",
                e.thresholds_db
            )));
        }
        if !(0.0..=1.0).contains(&e.scfde_rolloff) {
            return Err(Error::Config(format!("eval.scfde_rolloff must lie in [0, 1], got {}", e.scfde_rolloff)));
        }
        Ok(())
    }

    pub fn profile(&self) -> Result<TdlProfile> {
        TdlProfile::by_name(&self.channel.profile).map_err(|e| match e {
            Error::Io(io) => Error::Config(format!("channel.profile: cannot read {}: {io}", self.channel.profile)),
            Error::Config(msg) => Error::Config(format!("channel.profile: {msg}")),
            other => other,
        })
    }

    pub fn constellation(&self) -> Result<Constellation> {
        Constellation::square_qam(self.modem.bits_per_symbol)
    }
}

/// Load a configuration from a TOML file or from a run manifest (`.json`),
/// then validate it.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let cfg = if path.extension().is_some_and(|x| x == "json") {
        RunManifest::from_json(&text)?.config
    } else {
        ExperimentConfig::from_toml_str(&text)?
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_documented_defaults() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!((cfg.frame.n, cfg.modem.bits_per_symbol, cfg.frame.cp_len), (32, 4, 8));
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::from_toml_str("[optim]\nstepz = 3\n").unwrap_err().to_string();
        assert!(err.contains("stepz"), "{err}");
        let err = ExperimentConfig::from_toml_str("colour = 1\n").unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");
    }

    #[test]
    fn type_errors_carry_the_field_path() {
        let err = ExperimentConfig::from_toml_str("[optim.fine_tune]\nsteps = \"many\"\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("optim.fine_tune.steps"), "{err}");
    }

    #[test]
    fn validation_names_fields() {
        let cfg = ExperimentConfig::from_toml_str("[channel]\nrms_ds_ns = []\n").unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("channel.rms_ds_ns"));
        let cfg = ExperimentConfig::from_toml_str("[optim]\nlearning_rate = 0.0\n").unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("learning_rate"));
        let cfg = ExperimentConfig::from_toml_str("[channel]\nprofile = \"/no/such/file.csv\"\n").unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("channel.profile"));
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "seed = 9\n[optim]\nsteps = 10\n[optim.weighting]\nmode = \"fixed\"\nalpha = 1.0\nbeta = 2.0\ngamma = 0.0\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.optim.steps, 10);
        assert_eq!(cfg.optim.batch_size, 64);
        assert_eq!(cfg.frame, FrameConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.channel.rms_ds_ns = vec![10.0, 33.5];
        cfg.optim.fine_tune.steps = 7;
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn threshold_grid_has_121_points() {
        let t = EvalConfig::default().thresholds();
        assert_eq!(t.len(), 121);
        assert!((t[120] - 12.0).abs() < 1e-9);
    }
}

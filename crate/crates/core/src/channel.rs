//! Tapped-delay-line multipath channels and AWGN.
//!
//! A profile lists normalized path delays and relative powers. A realization
//! scales the delays by the target RMS delay spread, draws an independent
//! Rayleigh gain per path, and rounds each delay to the nearest sample.
//! Paths landing on the same sample are summed.

use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::complex_gaussian;

const TDL_A_CSV: &str = include_str!("../data/tdl_a.csv");

#[derive(Debug, Clone, PartialEq)]
pub struct TdlProfile {
    pub name: String,
    delays_norm: Vec<f64>,
    powers_db: Vec<f64>,
}

impl TdlProfile {
    /// Paths are sorted by delay; ties keep their input order.
    pub fn new(name: impl Into<String>, delays_norm: Vec<f64>, powers_db: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if delays_norm.is_empty() || delays_norm.len() != powers_db.len() {
            return Err(Error::Config(format!(
                "profile {name}: need at least one tap and equal delay/power counts ({} vs {})",
                delays_norm.len(),
                powers_db.len()
            )));
        }
        if delays_norm.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Config(format!(
                "profile {name}: delays must be finite and non-negative"
            )));
        }
        if powers_db.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config(format!("profile {name}: powers must be finite")));
        }
        let mut order: Vec<usize> = (0..delays_norm.len()).collect();
        order.sort_by(|&a, &b| delays_norm[a].total_cmp(&delays_norm[b]));
        Ok(Self {
            name,
            delays_norm: order.iter().map(|&i| delays_norm[i]).collect(),
            powers_db: order.iter().map(|&i| powers_db[i]).collect(),
        })
    }

    /// 3GPP TDL-A (normalized delays, RMS delay spread 1).
    pub fn tdl_a() -> Self {
        Self::from_csv_str("tdl-a", TDL_A_CSV).expect("bundled TDL-A table parses")
    }

    /// Synthetic 12-tap exponential profile: delays 0..=11, power ∝ e^-delay.
    pub fn exponential() -> Self {
        let delays: Vec<f64> = (0..12).map(f64::from).collect();
        let powers = delays
            .iter()
            .map(|d| -10.0 * std::f64::consts::LOG10_E * d)
            .collect();
        Self::new("exponential", delays, powers).expect("valid synthetic profile")
    }

    /// Parse CSV with header `delay_norm,power_db`.
    pub fn from_csv_str(name: &str, text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        match lines.next() {
            Some((_, header)) if header.trim() == "delay_norm,power_db" => {}
            Some((i, header)) => {
                return Err(Error::Config(format!(
                    "profile {name} line {}: expected header `delay_norm,power_db`, found `{}`",
                    i + 1,
                    header.trim()
                )))
            }
            None => return Err(Error::Config(format!("profile {name}: empty file"))),
        }
        let mut delays = Vec::new();
        let mut powers = Vec::new();
        for (i, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|e| {
                    Error::Config(format!("profile {name} line {}: `{s}`: {e}", i + 1))
                })
            };
            if fields.len() != 2 {
                return Err(Error::Config(format!(
                    "profile {name} line {}: expected 2 fields, found {}",
                    i + 1,
                    fields.len()
                )));
            }
            delays.push(parse(fields[0])?);
            powers.push(parse(fields[1])?);
        }
        Self::new(name, delays, powers)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("profile {}: {e}", path.display())))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".into());
        Self::from_csv_str(&name, &text)
    }

    /// `tdl-a`, `exponential`, or a path to a profile CSV.
    pub fn by_name(spec: &str) -> Result<Self> {
        match spec {
            "tdl-a" | "TDL-A" => Ok(Self::tdl_a()),
            "exponential" => Ok(Self::exponential()),
            path => Self::load(Path::new(path)),
        }
    }

    pub fn delays_norm(&self) -> &[f64] {
        &self.delays_norm
    }

    pub fn powers_db(&self) -> &[f64] {
        &self.powers_db
    }

    /// Linear path powers normalized to sum 1.
    pub fn linear_powers(&self) -> Vec<f64> {
        let lin: Vec<f64> = self.powers_db.iter().map(|p| 10f64.powf(p / 10.0)).collect();
        let total: f64 = lin.iter().sum();
        lin.into_iter().map(|p| p / total).collect()
    }

    /// RMS delay spread of the profile in normalized units.
    pub fn rms_delay_spread_norm(&self) -> f64 {
        rms_delay_spread(&self.delays_norm, &self.linear_powers())
    }
}

/// RMS width of a power-delay profile.
pub fn rms_delay_spread(delays: &[f64], powers: &[f64]) -> f64 {
    let total: f64 = powers.iter().sum();
    let mean: f64 = delays.iter().zip(powers).map(|(d, p)| d * p).sum::<f64>() / total;
    let second: f64 = delays.iter().zip(powers).map(|(d, p)| d * d * p).sum::<f64>() / total;
    (second - mean * mean).max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizeMode {
    /// Every realization scaled to unit total power.
    #[default]
    PerRealization,
    /// Unit power only on average over realizations.
    Ensemble,
}

/// One continuous-delay path before discretization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathGain {
    pub delay_s: f64,
    pub gain: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// Complex gain at each integer sample delay `0..taps.len()`.
    pub taps: Vec<Complex64>,
    pub rms_ds_s: f64,
    pub sample_rate_hz: f64,
    /// Paths with unrounded delays, scaled consistently with `taps`.
    pub paths: Vec<PathGain>,
}

impl ChannelRealization {
    /// Single-tap channel with gain 1.
    pub fn identity() -> Self {
        Self::from_taps(vec![Complex64::new(1.0, 0.0)])
    }

    pub fn from_taps(taps: Vec<Complex64>) -> Self {
        let paths = taps
            .iter()
            .enumerate()
            .map(|(d, &g)| PathGain {
                delay_s: d as f64,
                gain: g,
            })
            .collect();
        Self {
            taps,
            rms_ds_s: 0.0,
            sample_rate_hz: 1.0,
            paths,
        }
    }

    /// Largest sample delay carried by the taps.
    pub fn max_delay(&self) -> usize {
        self.taps.len().saturating_sub(1)
    }

    pub fn power(&self) -> f64 {
        self.taps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Unnormalized DFT of the taps zero-padded to `n` points.
    pub fn frequency_response(&self, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|k| {
                self.taps
                    .iter()
                    .enumerate()
                    .map(|(l, a)| {
                        let ang = -2.0 * std::f64::consts::PI * ((k * l) % n) as f64 / n as f64;
                        a * Complex64::from_polar(1.0, ang)
                    })
                    .sum()
            })
            .collect()
    }

    /// The same channel on a grid `factor` times finer (delays scaled).
    pub fn upsampled(&self, factor: usize) -> Self {
        let mut taps = vec![Complex64::new(0.0, 0.0); self.max_delay() * factor + 1];
        for (d, a) in self.taps.iter().enumerate() {
            taps[d * factor] = *a;
        }
        Self {
            taps,
            rms_ds_s: self.rms_ds_s,
            sample_rate_hz: self.sample_rate_hz * factor as f64,
            paths: self.paths.clone(),
        }
    }
}

/// Draw one realization at the given RMS delay spread.
///
/// Fails if the largest rounded delay exceeds `cp_len`, since the cyclic
/// prefix could then no longer absorb the channel memory.
pub fn sample_channel<R: Rng + ?Sized>(
    profile: &TdlProfile,
    rms_ds_s: f64,
    sample_rate_hz: f64,
    cp_len: usize,
    normalize: NormalizeMode,
    rng: &mut R,
) -> Result<ChannelRealization> {
    if !(rms_ds_s >= 0.0) || !rms_ds_s.is_finite() {
        return Err(Error::Domain(format!("RMS delay spread must be >= 0, got {rms_ds_s}")));
    }
    if !(sample_rate_hz > 0.0) {
        return Err(Error::Domain(format!("sample rate must be > 0, got {sample_rate_hz}")));
    }
    let sample_delays: Vec<usize> = profile
        .delays_norm
        .iter()
        .map(|d| (d * rms_ds_s * sample_rate_hz).round() as usize)
        .collect();
    let max_delay = *sample_delays.iter().max().expect("profile has taps");
    if max_delay > cp_len {
        return Err(Error::ChannelTooLong {
            length: max_delay + 1,
            cp_len,
        });
    }

    let mut paths: Vec<PathGain> = profile
        .delays_norm
        .iter()
        .zip(profile.linear_powers())
        .map(|(d, p)| PathGain {
            delay_s: d * rms_ds_s,
            gain: complex_gaussian(rng, p),
        })
        .collect();
    let mut taps = vec![Complex64::new(0.0, 0.0); max_delay + 1];
    for (path, &d) in paths.iter().zip(&sample_delays) {
        taps[d] += path.gain;
    }
    if normalize == NormalizeMode::PerRealization {
        let power: f64 = taps.iter().map(|a| a.norm_sqr()).sum();
        if power > 0.0 {
            let s = power.sqrt().recip();
            taps.iter_mut().for_each(|a| *a *= s);
            paths.iter_mut().for_each(|p| p.gain *= s);
        }
    }
    Ok(ChannelRealization {
        taps,
        rms_ds_s,
        sample_rate_hz,
        paths,
    })
}

/// Linear convolution truncated to the input length.
pub fn convolve(x: &[Complex64], taps: &[Complex64]) -> Vec<Complex64> {
    let mut y = vec![Complex64::new(0.0, 0.0); x.len()];
    for (l, a) in taps.iter().enumerate() {
        if *a == Complex64::new(0.0, 0.0) {
            continue;
        }
        for n in l..x.len() {
            y[n] += a * x[n - l];
        }
    }
    y
}

pub fn apply_channel(xt: &[Complex64], h: &ChannelRealization) -> Vec<Complex64> {
    convolve(xt, &h.taps)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub ebn0_db: f64,
    /// Complex noise variance per sample.
    pub n0: f64,
    /// Symbol energy.
    pub es: f64,
}

/// `N0 = Es / (M * Eb/N0)`.
pub fn noise_from_ebn0(ebn0_db: f64, bits_per_symbol: usize, es: f64) -> Result<NoiseSpec> {
    if bits_per_symbol == 0 || !(es > 0.0) {
        return Err(Error::Domain(format!(
            "need M >= 1 and Es > 0, got M={bits_per_symbol}, Es={es}"
        )));
    }
    let n0 = es / (bits_per_symbol as f64 * 10f64.powf(ebn0_db / 10.0));
    Ok(NoiseSpec { ebn0_db, n0, es })
}

/// Add circular complex Gaussian noise with variance `n0` per sample.
pub fn add_awgn<R: Rng + ?Sized>(y: &[Complex64], n0: f64, rng: &mut R) -> Result<Vec<Complex64>> {
    if !(n0 >= 0.0) {
        return Err(Error::Domain(format!("noise variance must be >= 0, got {n0}")));
    }
    if n0 == 0.0 {
        return Ok(y.to_vec());
    }
    Ok(y.iter().map(|v| v + complex_gaussian(rng, n0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn tdl_a_profile_is_sorted_and_unit_rms() {
        let p = TdlProfile::tdl_a();
        assert_eq!(p.delays_norm().len(), 23);
        assert!(p.delays_norm().windows(2).all(|w| w[0] <= w[1]));
        assert!((p.linear_powers().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p.rms_delay_spread_norm() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn profile_csv_errors_name_the_line() {
        let err = TdlProfile::from_csv_str("x", "delay_norm,power_db\n0.0,abc\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = TdlProfile::from_csv_str("x", "delay,power\n").unwrap_err();
        assert!(err.to_string().contains("header"), "{err}");
        assert!(TdlProfile::new("x", vec![-1.0], vec![0.0]).is_err());
        assert!(TdlProfile::new("x", vec![], vec![]).is_err());
    }

    #[test]
    fn tiny_delay_spread_collapses_to_one_tap() {
        let mut rng = derive(1, &[]);
        let h = sample_channel(
            &TdlProfile::tdl_a(),
            10e-9,
            1e6,
            8,
            NormalizeMode::PerRealization,
            &mut rng,
        )
        .unwrap();
        assert_eq!(h.taps.len(), 1);
        assert!((h.taps[0].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn realizations_have_unit_power() {
        let mut rng = derive(2, &[]);
        for k in 0..200 {
            let ds = 10e-9 + 590e-9 * (k as f64 / 199.0);
            let h = sample_channel(
                &TdlProfile::tdl_a(),
                ds,
                1e6,
                8,
                NormalizeMode::PerRealization,
                &mut rng,
            )
            .unwrap();
            assert!((h.power() - 1.0).abs() < 1e-9);
            assert!(h.max_delay() <= 8);
        }
    }

    #[test]
    fn too_long_channel_names_both_lengths() {
        let mut rng = derive(3, &[]);
        let err = sample_channel(
            &TdlProfile::tdl_a(),
            600e-9,
            1e6,
            4,
            NormalizeMode::PerRealization,
            &mut rng,
        )
        .unwrap_err();
        match err {
            Error::ChannelTooLong { length, cp_len } => {
                assert_eq!((length, cp_len), (7, 4));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn identity_and_delay_channels() {
        let x: Vec<Complex64> = (0..6).map(|k| c(k as f64, -(k as f64))).collect();
        assert_eq!(apply_channel(&x, &ChannelRealization::identity()), x);
        let h = ChannelRealization::from_taps(vec![c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        let y = apply_channel(&x, &h);
        assert_eq!(&y[..2], &[c(0.0, 0.0); 2]);
        assert_eq!(&y[2..], &x[..4]);
    }

    #[test]
    fn two_tap_convolution_on_ramp() {
        let x: Vec<Complex64> = (0..8).map(|k| c(k as f64, 0.5 * k as f64)).collect();
        let taps = vec![c(0.8, 0.1), c(0.0, 0.0), c(-0.3, 0.4)];
        let y = convolve(&x, &taps);
        for n in 0..8 {
            let mut want = c(0.0, 0.0);
            for (l, a) in taps.iter().enumerate() {
                if n >= l {
                    want += a * x[n - l];
                }
            }
            assert!((y[n] - want).norm() < 1e-12);
        }
    }

    #[test]
    fn noise_levels() {
        let s = noise_from_ebn0(10.0, 4, 1.0).unwrap();
        assert!((s.n0 - 0.025).abs() < 1e-15);
        assert!((noise_from_ebn0(0.0, 1, 1.0).unwrap().n0 - 1.0).abs() < 1e-15);
        let s = noise_from_ebn0(25.0, 4, 1.0).unwrap();
        assert!((s.n0 - 7.9057e-4).abs() < 1e-8);
        assert!(noise_from_ebn0(0.0, 0, 1.0).is_err());
    }

    #[test]
    fn awgn_zero_is_identity_and_seeded_noise_repeats() {
        let y = vec![c(1.0, 2.0); 4];
        let mut rng = derive(4, &[]);
        assert_eq!(add_awgn(&y, 0.0, &mut rng).unwrap(), y);
        let a = add_awgn(&y, 0.3, &mut derive(9, &[])).unwrap();
        let b = add_awgn(&y, 0.3, &mut derive(9, &[])).unwrap();
        assert_eq!(a, b);
        assert!(add_awgn(&y, -1.0, &mut rng).is_err());
    }

    #[test]
    fn awgn_variance() {
        let n = 1_000_000;
        let y = vec![c(0.0, 0.0); n];
        let out = add_awgn(&y, 0.5, &mut derive(5, &[])).unwrap();
        let var = out.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        assert!((var - 0.5).abs() < 0.005, "{var}");
    }

    #[test]
    fn frequency_response_of_delay() {
        let h = ChannelRealization::from_taps(vec![c(0.0, 0.0), c(1.0, 0.0)]);
        let hf = h.frequency_response(8);
        for (k, v) in hf.iter().enumerate() {
            let want = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * k as f64 / 8.0);
            assert!((v - want).norm() < 1e-12);
        }
    }
}

//! Block transmission with a waveform matrix, a cyclic prefix, matched
//! filtering and one-tap detection.
//!
//! Each block of `N` symbols `x` is sent as `Q x` preceded by its last
//! `cp_len` samples. After CP removal the receiver applies `Q^H` and scales
//! every output by `q_n`. OFDM is the special case `Q = F^H` (unitary IDFT).

mod scfde;

pub use scfde::{rrc_taps, scfde_bodies, scfde_reference, ScFdeConfig, ScFdeOutput};

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::numerics::ComplexTensor;

/// Guard added to noise levels in detector denominators.
pub const NOISE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameConfig {
    pub n: usize,
    pub cp_len: usize,
    pub blocks: usize,
    pub sample_rate_hz: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            n: 32,
            cp_len: 8,
            blocks: 1,
            sample_rate_hz: 1e6,
        }
    }
}

impl FrameConfig {
    pub fn new(n: usize, cp_len: usize, blocks: usize) -> Result<Self> {
        let cfg = Self {
            n,
            cp_len,
            blocks,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("frame.n must be >= 1".into()));
        }
        if self.cp_len >= self.n {
            return Err(Error::Config(format!(
                "frame.cp_len must be < frame.n ({} >= {})",
                self.cp_len, self.n
            )));
        }
        if self.blocks == 0 {
            return Err(Error::Config("frame.blocks must be >= 1".into()));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::Config(format!(
                "frame.sample_rate_hz must be > 0, got {}",
                self.sample_rate_hz
            )));
        }
        Ok(())
    }

    pub fn block_len(&self) -> usize {
        self.n + self.cp_len
    }

    pub fn frame_len(&self) -> usize {
        self.blocks * self.block_len()
    }

    pub fn symbols_per_frame(&self) -> usize {
        self.blocks * self.n
    }
}

/// `N x N` waveform basis; column `k` is the sampled waveform carrying
/// symbol `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformMatrix {
    q: ComplexTensor,
}

impl WaveformMatrix {
    pub fn new(q: ComplexTensor) -> Result<Self> {
        if q.rows() != q.cols() || q.is_empty() {
            return Err(Error::shape(
                "WaveformMatrix",
                format!("expected a non-empty square matrix, got {}x{}", q.rows(), q.cols()),
            ));
        }
        Ok(Self { q })
    }

    /// Unitary inverse DFT: `Q[t, k] = exp(j 2 pi t k / N) / sqrt(N)`.
    pub fn idft(n: usize) -> Self {
        Self { q: idft_matrix(n) }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            q: ComplexTensor::identity(n),
        }
    }

    pub fn n(&self) -> usize {
        self.q.rows()
    }

    pub fn matrix(&self) -> &ComplexTensor {
        &self.q
    }

    pub fn into_matrix(self) -> ComplexTensor {
        self.q
    }

    /// `trace(Q Q^H)`, the expected block energy for unit-energy symbols.
    pub fn energy(&self) -> f64 {
        self.q.frobenius_sq()
    }

    pub fn column(&self, k: usize) -> Vec<Complex64> {
        self.q.column_values(k)
    }
}

pub fn idft_matrix(n: usize) -> ComplexTensor {
    let s = 1.0 / (n as f64).sqrt();
    let mut m = ComplexTensor::zeros(n, n);
    for t in 0..n {
        for k in 0..n {
            let ang = 2.0 * PI * ((t * k) % n) as f64 / n as f64;
            m.set(t, k, Complex64::from_polar(s, ang));
        }
    }
    m
}

/// Per-output complex scaling applied after the matched filter.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorTaps {
    pub taps: Vec<Complex64>,
}

impl DetectorTaps {
    pub fn ones(n: usize) -> Self {
        Self {
            taps: vec![Complex64::new(1.0, 0.0); n],
        }
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Detector-output noise variance `N0 |q_n|^2` per tap.
    pub fn noise_var(&self, n0: f64) -> Vec<f64> {
        self.taps.iter().map(|q| n0 * q.norm_sqr()).collect()
    }
}

fn check_square(q: &WaveformMatrix, cfg: &FrameConfig, op: &'static str) -> Result<()> {
    if q.n() != cfg.n {
        return Err(Error::shape(
            op,
            format!("waveform matrix is {}x{}, frame N = {}", q.n(), q.n(), cfg.n),
        ));
    }
    Ok(())
}

/// `x` holds `blocks * N` symbols; returns `blocks * (N + cp_len)` samples.
pub fn modulate(q: &WaveformMatrix, x: &[Complex64], cfg: &FrameConfig) -> Result<Vec<Complex64>> {
    check_square(q, cfg, "modulate")?;
    if x.len() != cfg.symbols_per_frame() {
        return Err(Error::shape(
            "modulate",
            format!("{} symbols for {} blocks of {}", x.len(), cfg.blocks, cfg.n),
        ));
    }
    let mut out = Vec::with_capacity(cfg.frame_len());
    for block in x.chunks(cfg.n) {
        let body = q.q.apply(block)?;
        out.extend_from_slice(&body[cfg.n - cfg.cp_len..]);
        out.extend_from_slice(&body);
    }
    Ok(out)
}

/// Bodies `Q x` of each block without the cyclic prefix.
pub fn block_bodies(q: &WaveformMatrix, x: &[Complex64], cfg: &FrameConfig) -> Result<Vec<Vec<Complex64>>> {
    check_square(q, cfg, "block_bodies")?;
    if !x.len().is_multiple_of(cfg.n) {
        return Err(Error::shape(
            "block_bodies",
            format!("{} symbols is not a multiple of N = {}", x.len(), cfg.n),
        ));
    }
    x.chunks(cfg.n).map(|b| q.q.apply(b)).collect()
}

/// Drop each block's cyclic prefix and project onto the waveform basis.
pub fn matched_filter(y: &[Complex64], q: &WaveformMatrix, cfg: &FrameConfig) -> Result<Vec<Complex64>> {
    check_square(q, cfg, "matched_filter")?;
    if y.len() != cfg.frame_len() {
        return Err(Error::shape(
            "matched_filter",
            format!(
                "{} samples for {} blocks of {} + {}",
                y.len(),
                cfg.blocks,
                cfg.n,
                cfg.cp_len
            ),
        ));
    }
    let mut r = Vec::with_capacity(cfg.symbols_per_frame());
    for block in y.chunks(cfg.block_len()) {
        r.extend(q.q.apply_adjoint(&block[cfg.cp_len..])?);
    }
    Ok(r)
}

/// `N x N` circulant matrix `C[t, s] = h[(t - s) mod N]`.
pub fn circulant(taps: &[Complex64], n: usize) -> Result<ComplexTensor> {
    if taps.len() > n {
        return Err(Error::Contract(format!(
            "{} channel taps do not fit a circulant of size {n}",
            taps.len()
        )));
    }
    let mut c = ComplexTensor::zeros(n, n);
    for t in 0..n {
        for (l, a) in taps.iter().enumerate() {
            c.set(t, (t + n - l) % n, *a);
        }
    }
    Ok(c)
}

/// The circulant channel matrix, after checking the channel fits the CP.
pub fn channel_matrix(h: &ChannelRealization, cfg: &FrameConfig) -> Result<ComplexTensor> {
    if h.max_delay() > cfg.cp_len {
        return Err(Error::Contract(format!(
            "channel delay {} exceeds cyclic prefix {}",
            h.max_delay(),
            cfg.cp_len
        )));
    }
    circulant(&h.taps, cfg.n)
}

/// `Lambda = Q^H C Q`: noiseless matched-filter output is `Lambda x`.
pub fn effective_channel(q: &WaveformMatrix, h: &ChannelRealization, cfg: &FrameConfig) -> Result<ComplexTensor> {
    check_square(q, cfg, "effective_channel")?;
    let c = channel_matrix(h, cfg)?;
    q.q.adjoint().matmul(&c.matmul(&q.q)?)
}

/// `x~_n = r_n q_n`, repeating `q` over each block.
pub fn detect(r: &[Complex64], q: &DetectorTaps) -> Result<Vec<Complex64>> {
    if q.is_empty() || !r.len().is_multiple_of(q.len()) {
        return Err(Error::shape(
            "detect",
            format!("{} samples is not a multiple of {} taps", r.len(), q.len()),
        ));
    }
    Ok(r
        .chunks(q.len())
        .flat_map(|b| b.iter().zip(&q.taps).map(|(v, t)| v * t))
        .collect())
}

/// Per-bin MMSE taps `H* / (|H|^2 + N0)`.
pub fn mmse_taps(freq_response: &[Complex64], n0: f64) -> DetectorTaps {
    let nu = n0.max(NOISE_FLOOR);
    DetectorTaps {
        taps: freq_response
            .iter()
            .map(|h| h.conj() / (h.norm_sqr() + nu))
            .collect(),
    }
}

/// MMSE taps divided by their per-bin bias `|H|^2 / (|H|^2 + N0)`, so a
/// noiseless bin is restored with unit gain and nearest-point slicing is
/// unbiased.
pub fn unbiased_mmse_taps(freq_response: &[Complex64], n0: f64) -> DetectorTaps {
    let nu = n0.max(NOISE_FLOOR);
    DetectorTaps {
        taps: freq_response
            .iter()
            .map(|h| {
                let g = h.norm_sqr();
                let bias = (g / (g + nu)).max(NOISE_FLOOR);
                h.conj() / (g + nu) / bias
            })
            .collect(),
    }
}

/// Channel response seen by the OFDM subcarriers, `H_n = sum_l a_l e^{-j2 pi n l / N}`.
pub fn ofdm_frequency_response(h: &ChannelRealization, n: usize) -> Vec<Complex64> {
    h.frequency_response(n)
}

/// OFDM: unitary IDFT basis with bias-compensated MMSE taps.
pub fn ofdm_reference(cfg: &FrameConfig, h: &ChannelRealization, n0: f64) -> (WaveformMatrix, DetectorTaps) {
    let hf = ofdm_frequency_response(h, cfg.n);
    (WaveformMatrix::idft(cfg.n), unbiased_mmse_taps(&hf, n0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{apply_channel, convolve};
    use crate::rng::{complex_gaussian, derive};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_vec(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = derive(seed, &[]);
        (0..n).map(|_| complex_gaussian(&mut rng, 1.0)).collect()
    }

    fn random_matrix(n: usize, seed: u64) -> WaveformMatrix {
        WaveformMatrix::new(ComplexTensor::from_complex(n, n, &random_vec(n * n, seed)).unwrap())
            .unwrap()
    }

    #[test]
    fn frame_config_rules() {
        assert!(FrameConfig::new(32, 8, 1).is_ok());
        assert!(FrameConfig::new(8, 8, 1).is_err());
        assert!(FrameConfig::new(8, 0, 0).is_err());
        assert_eq!(FrameConfig::default().frame_len(), 40);
    }

    #[test]
    fn identity_basis_without_cp_passes_symbols() {
        let cfg = FrameConfig::new(4, 0, 2).unwrap();
        let x = random_vec(8, 1);
        assert_eq!(modulate(&WaveformMatrix::identity(4), &x, &cfg).unwrap(), x);
    }

    #[test]
    fn first_idft_column_has_constant_modulus() {
        let cfg = FrameConfig::new(8, 0, 1).unwrap();
        let mut e0 = vec![c(0.0, 0.0); 8];
        e0[0] = c(1.0, 0.0);
        let out = modulate(&WaveformMatrix::idft(8), &e0, &cfg).unwrap();
        for v in out {
            assert!((v - c(1.0 / 8f64.sqrt(), 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn cyclic_prefix_copies_block_tail() {
        let cfg = FrameConfig::new(8, 3, 2).unwrap();
        let y = modulate(&random_matrix(8, 2), &random_vec(16, 3), &cfg).unwrap();
        for b in y.chunks(cfg.block_len()) {
            assert_eq!(&b[..3], &b[8..11]);
        }
    }

    #[test]
    fn modulate_rejects_wrong_length() {
        let cfg = FrameConfig::new(4, 1, 2).unwrap();
        let err = modulate(&WaveformMatrix::identity(4), &random_vec(7, 0), &cfg).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
        assert!(matched_filter(&random_vec(9, 0), &WaveformMatrix::identity(4), &cfg).is_err());
    }

    #[test]
    fn unitary_round_trip() {
        let cfg = FrameConfig::new(16, 4, 3).unwrap();
        let q = WaveformMatrix::idft(16);
        let x = random_vec(48, 4);
        let r = matched_filter(&modulate(&q, &x, &cfg).unwrap(), &q, &cfg).unwrap();
        for (a, b) in r.iter().zip(&x) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn delay_gives_phase_ramp_under_idft() {
        let n = 8;
        let d = 2;
        let cfg = FrameConfig::new(n, 3, 1).unwrap();
        let q = WaveformMatrix::idft(n);
        let mut taps = vec![c(0.0, 0.0); d + 1];
        taps[d] = c(1.0, 0.0);
        let h = ChannelRealization::from_taps(taps);
        let x = random_vec(n, 5);
        let r = matched_filter(&apply_channel(&modulate(&q, &x, &cfg).unwrap(), &h), &q, &cfg).unwrap();
        for k in 0..n {
            let want = x[k] * Complex64::from_polar(1.0, -2.0 * PI * (k * d) as f64 / n as f64);
            assert!((r[k] - want).norm() < 1e-12);
        }
    }

    #[test]
    fn effective_channel_identity_is_gram_matrix() {
        let cfg = FrameConfig::new(6, 2, 1).unwrap();
        let q = random_matrix(6, 6);
        let lam = effective_channel(&q, &ChannelRealization::identity(), &cfg).unwrap();
        let gram = q.matrix().adjoint().matmul(q.matrix()).unwrap();
        assert!(lam.max_abs_diff(&gram) < 1e-12);
    }

    #[test]
    fn effective_channel_under_idft_is_diagonal_dft() {
        let n = 8;
        let cfg = FrameConfig::new(n, 3, 1).unwrap();
        let h = ChannelRealization::from_taps(random_vec(3, 7));
        let lam = effective_channel(&WaveformMatrix::idft(n), &h, &cfg).unwrap();
        for i in 0..n {
            for j in 0..n {
                let want = if i == j {
                    (0..3)
                        .map(|l| h.taps[l] * Complex64::from_polar(1.0, -2.0 * PI * (i * l) as f64 / n as f64))
                        .sum()
                } else {
                    c(0.0, 0.0)
                };
                assert!((lam.get(i, j) - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn effective_channel_matches_time_domain_chain() {
        let n = 8;
        let cfg = FrameConfig::new(n, 2, 1).unwrap();
        let q = random_matrix(n, 8);
        let h = ChannelRealization::from_taps(random_vec(3, 9));
        let x = random_vec(n, 10);
        let lam = effective_channel(&q, &h, &cfg).unwrap();
        let want = lam.apply(&x).unwrap();
        let tx = modulate(&q, &x, &cfg).unwrap();
        let r = matched_filter(&convolve(&tx, &h.taps), &q, &cfg).unwrap();
        for (a, b) in r.iter().zip(&want) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn channel_longer_than_cp_is_a_contract_error() {
        let cfg = FrameConfig::new(8, 1, 1).unwrap();
        let h = ChannelRealization::from_taps(random_vec(3, 11));
        let err = effective_channel(&WaveformMatrix::idft(8), &h, &cfg).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn detector_cases() {
        let r = random_vec(8, 12);
        assert_eq!(detect(&r, &DetectorTaps::ones(4)).unwrap(), r);
        assert!(detect(&r, &DetectorTaps::ones(3)).is_err());

        let cfg = FrameConfig::new(8, 2, 1).unwrap();
        let h = ChannelRealization::from_taps(random_vec(2, 13));
        let lam = effective_channel(&WaveformMatrix::idft(8), &h, &cfg).unwrap();
        let x = random_vec(8, 14);
        let zf = DetectorTaps {
            taps: (0..8).map(|k| 1.0 / lam.get(k, k)).collect(),
        };
        let out = detect(&lam.apply(&x).unwrap(), &zf).unwrap();
        for (a, b) in out.iter().zip(&x) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn mmse_taps_match_closed_form() {
        let hf = vec![c(1.0, 0.0), c(0.5, -0.5), c(0.0, 2.0), c(0.1, 0.0)];
        let n0 = 0.1;
        let q = mmse_taps(&hf, n0);
        let want = [
            c(1.0 / 1.1, 0.0),
            c(0.5, 0.5) / 0.6,
            c(0.0, -2.0) / 4.1,
            c(0.1, 0.0) / 0.11,
        ];
        for (a, b) in q.taps.iter().zip(want) {
            assert!((a - b).norm() < 1e-12);
        }
        let u = unbiased_mmse_taps(&hf, n0);
        for (a, h) in u.taps.iter().zip(&hf) {
            assert!((a * h - 1.0).norm() < 1e-12);
        }
    }

    #[test]
    fn ofdm_reference_flat_noiseless() {
        let cfg = FrameConfig::default();
        let (q, taps) = ofdm_reference(&cfg, &ChannelRealization::identity(), 0.0);
        assert!((q.energy() - 32.0).abs() < 1e-9);
        for t in &taps.taps {
            assert!((t - 1.0).norm() < 1e-9);
        }
        let x = random_vec(32, 15);
        let r = matched_filter(&modulate(&q, &x, &cfg).unwrap(), &q, &cfg).unwrap();
        for (a, b) in detect(&r, &taps).unwrap().iter().zip(&x) {
            assert!((a - b).norm() < 1e-9);
        }
    }
}

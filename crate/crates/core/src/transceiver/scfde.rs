//! Single-carrier block transmission with frequency-domain equalization.
//!
//! Symbols are upsampled and shaped by a root-raised-cosine filter applied
//! circularly over each `sps * N` sample block, so a cyclic prefix of
//! `sps * cp_len` samples keeps the channel circular. The receiver combines
//! the `sps` spectral images of every symbol-rate bin with MMSE weights,
//! which folds matched filtering, downsampling and equalization into one
//! step.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rustfft::{Fft, FftPlanner};

use super::{FrameConfig, NOISE_FLOOR};
use crate::channel::{add_awgn, convolve, ChannelRealization};
use crate::error::{Error, Result};
use crate::metrics::papr;
use crate::modem::{map_bits, slice_bits, BitBlock, Constellation};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScFdeConfig {
    pub rolloff: f64,
    pub oversampling: usize,
    pub span_symbols: usize,
}

impl Default for ScFdeConfig {
    fn default() -> Self {
        Self {
            rolloff: 0.15,
            oversampling: 2,
            span_symbols: 8,
        }
    }
}

/// Root-raised-cosine taps, `span * sps + 1` long, symmetric, unit energy.
pub fn rrc_taps(rolloff: f64, sps: usize, span: usize) -> Vec<f64> {
    let len = span * sps + 1;
    let mid = (span * sps) as f64 / 2.0;
    let b = rolloff;
    let mut g: Vec<f64> = (0..len)
        .map(|i| {
            let t = (i as f64 - mid) / sps as f64;
            if t.abs() < 1e-12 {
                1.0 - b + 4.0 * b / PI
            } else if b > 0.0 && (t.abs() - 1.0 / (4.0 * b)).abs() < 1e-9 {
                b / 2f64.sqrt()
                    * ((1.0 + 2.0 / PI) * (PI / (4.0 * b)).sin()
                        + (1.0 - 2.0 / PI) * (PI / (4.0 * b)).cos())
            } else {
                ((PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos())
                    / (PI * t * (1.0 - (4.0 * b * t).powi(2)))
            }
        })
        .collect();
    let energy: f64 = g.iter().map(|v| v * v).sum();
    let s = energy.sqrt().recip();
    g.iter_mut().for_each(|v| *v *= s);
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScFdeOutput {
    pub bits_hat: BitBlock,
    /// One linear PAPR per oversampled block body.
    pub papr: Vec<f64>,
}

struct Link {
    n: usize,
    len: usize,
    cp: usize,
    shaping: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    fft_n: Arc<dyn Fft<f64>>,
    ifft_n: Arc<dyn Fft<f64>>,
}

impl Link {
    fn new(frame: &FrameConfig, sc: &ScFdeConfig) -> Result<Self> {
        if sc.oversampling == 0 || !(0.0..=1.0).contains(&sc.rolloff) {
            return Err(Error::Config(format!(
                "SC/FDE needs oversampling >= 1 and rolloff in [0, 1], got {} and {}",
                sc.oversampling, sc.rolloff
            )));
        }
        let len = frame.n * sc.oversampling;
        let g = rrc_taps(sc.rolloff, sc.oversampling, sc.span_symbols);
        let mid = sc.span_symbols * sc.oversampling / 2;
        let mut circ = vec![Complex64::new(0.0, 0.0); len];
        for (i, v) in g.iter().enumerate() {
            let j = (i as isize - mid as isize).rem_euclid(len as isize) as usize;
            circ[j] += v;
        }
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(len);
        let ifft = planner.plan_fft_inverse(len);
        fft.process(&mut circ);
        Ok(Self {
            n: frame.n,
            len,
            cp: frame.cp_len * sc.oversampling,
            shaping: circ,
            fft,
            ifft,
            fft_n: planner.plan_fft_forward(frame.n),
            ifft_n: planner.plan_fft_inverse(frame.n),
        })
    }

    fn body(&self, symbols: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut s = symbols.to_vec();
        self.fft_n.process(&mut s);
        let mut x: Vec<Complex64> = (0..self.len).map(|i| self.shaping[i] * s[i % n]).collect();
        self.ifft.process(&mut x);
        let scale = 1.0 / self.len as f64;
        x.iter_mut().for_each(|v| *v *= scale);
        x
    }

    fn equalize(&self, body: &[Complex64], chan: &[Complex64], rho: f64) -> Vec<Complex64> {
        let n = self.n;
        let mut y = body.to_vec();
        self.fft.process(&mut y);
        let mut s_hat = vec![Complex64::new(0.0, 0.0); n];
        let mut gain = 0.0;
        for (k, out) in s_hat.iter_mut().enumerate() {
            let mut num = Complex64::new(0.0, 0.0);
            let mut pow = 0.0;
            for i in (k..self.len).step_by(n) {
                let h = self.shaping[i] * chan[i];
                num += h.conj() * y[i];
                pow += h.norm_sqr();
            }
            *out = num / (pow + rho);
            gain += pow / (pow + rho);
        }
        let mu = (gain / n as f64).max(NOISE_FLOOR);
        self.ifft_n.process(&mut s_hat);
        let scale = 1.0 / (n as f64 * mu);
        s_hat.iter_mut().for_each(|v| *v *= scale);
        s_hat
    }
}

/// Oversampled transmit bodies (CP excluded), one per block of `N` symbols.
pub fn scfde_bodies(symbols: &[Complex64], frame: &FrameConfig, sc: &ScFdeConfig) -> Result<Vec<Vec<Complex64>>> {
    if !symbols.len().is_multiple_of(frame.n) {
        return Err(Error::shape(
            "scfde_bodies",
            format!("{} symbols is not a multiple of N = {}", symbols.len(), frame.n),
        ));
    }
    let link = Link::new(frame, sc)?;
    Ok(symbols.chunks(frame.n).map(|b| link.body(b)).collect())
}

/// Send `bits` over `h` with noise `n0` per oversampled sample; unit-energy
/// symbols are assumed.
pub fn scfde_reference<R: Rng + ?Sized>(
    bits: &BitBlock,
    constellation: &Constellation,
    frame: &FrameConfig,
    sc: &ScFdeConfig,
    h: &ChannelRealization,
    n0: f64,
    rng: &mut R,
) -> Result<ScFdeOutput> {
    if h.max_delay() > frame.cp_len {
        return Err(Error::ChannelTooLong {
            length: h.taps.len(),
            cp_len: frame.cp_len,
        });
    }
    let symbols = map_bits(bits, constellation)?;
    if symbols.len() % frame.n != 0 {
        return Err(Error::shape(
            "scfde_reference",
            format!("{} symbols is not a multiple of N = {}", symbols.len(), frame.n),
        ));
    }
    let link = Link::new(frame, sc)?;
    let h_os = h.upsampled(sc.oversampling);
    let mut chan = vec![Complex64::new(0.0, 0.0); link.len];
    for (d, a) in h_os.taps.iter().enumerate() {
        chan[d % link.len] += a;
    }
    link.fft.process(&mut chan);
    let rho = 2.0 * n0.max(NOISE_FLOOR);

    let mut decided = Vec::with_capacity(symbols.len());
    let mut paprs = Vec::with_capacity(symbols.len() / frame.n);
    for block in symbols.chunks(frame.n) {
        let body = link.body(block);
        paprs.push(papr(&body)?);
        let mut tx = Vec::with_capacity(link.cp + link.len);
        tx.extend_from_slice(&body[link.len - link.cp..]);
        tx.extend_from_slice(&body);
        let rx = add_awgn(&convolve(&tx, &h_os.taps), n0, rng)?;
        decided.extend(link.equalize(&rx[link.cp..], &chan, rho));
    }
    Ok(ScFdeOutput {
        bits_hat: slice_bits(&decided, constellation),
        papr: paprs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive;

    #[test]
    fn rrc_is_symmetric_with_unit_energy() {
        let g = rrc_taps(0.15, 2, 8);
        assert_eq!(g.len(), 17);
        for i in 0..g.len() {
            assert!((g[i] - g[g.len() - 1 - i]).abs() < 1e-15);
        }
        assert!((g.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(g[8] > g[7] && g[7] > g[6]);
    }

    #[test]
    fn rrc_handles_the_singular_points() {
        // rolloff 0.25 puts t = +-1 exactly on a tap at sps = 4
        let g = rrc_taps(0.25, 4, 6);
        assert!(g.iter().all(|v| v.is_finite()));
        assert!((g.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_channel_without_noise_recovers_bits() {
        let c = Constellation::square_qam(4).unwrap();
        let frame = FrameConfig::new(32, 8, 4).unwrap();
        let mut rng = derive(1, &[]);
        let bits = BitBlock::random(frame.symbols_per_frame(), 4, &mut rng);
        let out = scfde_reference(
            &bits,
            &c,
            &frame,
            &ScFdeConfig::default(),
            &ChannelRealization::identity(),
            0.0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.bits_hat, bits);
        assert_eq!(out.papr.len(), 4);
    }

    #[test]
    fn multipath_without_noise_recovers_bits() {
        let c = Constellation::square_qam(4).unwrap();
        let frame = FrameConfig::new(32, 8, 2).unwrap();
        let mut rng = derive(2, &[]);
        let bits = BitBlock::random(frame.symbols_per_frame(), 4, &mut rng);
        let h = ChannelRealization::from_taps(vec![
            Complex64::new(0.8, 0.1),
            Complex64::new(0.0, 0.0),
            Complex64::new(-0.3, 0.4),
            Complex64::new(0.1, -0.2),
        ]);
        let out = scfde_reference(&bits, &c, &frame, &ScFdeConfig::default(), &h, 0.0, &mut rng)
            .unwrap();
        assert_eq!(out.bits_hat, bits);
    }

    #[test]
    fn body_has_unit_average_symbol_energy() {
        let frame = FrameConfig::new(32, 8, 1).unwrap();
        let c = Constellation::square_qam(4).unwrap();
        let mut rng = derive(3, &[]);
        let mut energy = 0.0;
        let trials = 2000;
        for _ in 0..trials {
            let bits = BitBlock::random(32, 4, &mut rng);
            let x = map_bits(&bits, &c).unwrap();
            let body = &scfde_bodies(&x, &frame, &ScFdeConfig::default()).unwrap()[0];
            energy += body.iter().map(|v| v.norm_sqr()).sum::<f64>();
        }
        // 32 unit-energy symbols, each spread by a unit-energy pulse
        let per_block = energy / trials as f64;
        assert!((per_block / 32.0 - 1.0).abs() < 0.02, "{per_block}");
    }
}

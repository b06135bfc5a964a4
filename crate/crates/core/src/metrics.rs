//! PAPR, CCDF and bit-error measurement.

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::modem::BitBlock;
use crate::numerics::ComplexTensor;

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Peak-to-average power ratio of one block (linear).
pub fn papr(block: &[Complex64]) -> Result<f64> {
    if block.is_empty() {
        return Err(Error::Degenerate("PAPR of an empty block".into()));
    }
    let mut peak = 0.0f64;
    let mut total = 0.0;
    for v in block {
        let p = v.norm_sqr();
        peak = peak.max(p);
        total += p;
    }
    if total == 0.0 {
        return Err(Error::Degenerate("PAPR of an all-zero block".into()));
    }
    // rounding can leave peak / mean a hair under 1 for constant envelopes
    Ok((peak * block.len() as f64 / total).max(1.0))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PaprSamples {
    pub values: Vec<f64>,
}

impl PaprSamples {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_blocks<'a>(blocks: impl IntoIterator<Item = &'a [Complex64]>) -> Result<Self> {
        let values = blocks.into_iter().map(papr).collect::<Result<_>>()?;
        Ok(Self { values })
    }

    pub fn push_block(&mut self, block: &[Complex64]) -> Result<()> {
        self.values.push(papr(block)?);
        Ok(())
    }

    /// Append `other` after `self`.
    pub fn merge(&mut self, other: PaprSamples) {
        self.values.extend(other.values);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Smallest level `x` (dB) with empirical `P(PAPR > x) <= prob`.
    pub fn level_at(&self, prob: f64) -> Result<f64> {
        if self.values.is_empty() {
            return Err(Error::Degenerate("no PAPR samples".into()));
        }
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::Domain(format!("probability must be in [0, 1], got {prob}")));
        }
        let mut sorted = self.values.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let allowed = (prob * n as f64).floor() as usize;
        if allowed >= n {
            return Ok(to_db(sorted[0]).min(0.0));
        }
        Ok(to_db(sorted[n - 1 - allowed]))
    }
}

/// CCDF thresholds from 0 to 12 dB in 0.1 dB steps.
pub fn default_thresholds_db() -> Vec<f64> {
    (0..=120).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcdfCurve {
    pub thresholds_db: Vec<f64>,
    /// Empirical `P(PAPR > threshold)`.
    pub prob: Vec<f64>,
    pub n_samples: usize,
}

impl CcdfCurve {
    /// Threshold (dB) where the curve first drops to `prob` or below,
    /// linearly interpolated between grid points. `None` if it never does.
    pub fn crossing_db(&self, prob: f64) -> Option<f64> {
        let k = self.prob.iter().position(|&p| p <= prob)?;
        if k == 0 {
            return Some(self.thresholds_db[0]);
        }
        let (p0, p1) = (self.prob[k - 1], self.prob[k]);
        let (t0, t1) = (self.thresholds_db[k - 1], self.thresholds_db[k]);
        if p0 == p1 {
            return Some(t1);
        }
        Some(t0 + (t1 - t0) * (p0 - prob) / (p0 - p1))
    }

    /// `threshold_db,prob,n` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold_db,prob,n\n");
        for (t, p) in self.thresholds_db.iter().zip(&self.prob) {
            writeln!(out, "{t:.1},{p:.6e},{}", self.n_samples).expect("write to string");
        }
        out
    }
}

pub fn ccdf(samples: &PaprSamples, thresholds_db: &[f64]) -> Result<CcdfCurve> {
    if samples.is_empty() {
        return Err(Error::Degenerate("CCDF of an empty sample set".into()));
    }
    if thresholds_db.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Domain("CCDF thresholds must be ascending".into()));
    }
    let mut sorted_db: Vec<f64> = samples.values.iter().map(|&v| to_db(v)).collect();
    sorted_db.sort_by(f64::total_cmp);
    let n = sorted_db.len();
    let prob = thresholds_db
        .iter()
        .map(|&t| {
            let at_or_below = sorted_db.partition_point(|&v| v <= t);
            (n - at_or_below) as f64 / n as f64
        })
        .collect();
    Ok(CcdfCurve {
        thresholds_db: thresholds_db.to_vec(),
        prob,
        n_samples: n,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BerStats {
    pub bit_errors: u64,
    pub bits_total: u64,
}

impl BerStats {
    pub fn merge(self, other: BerStats) -> BerStats {
        BerStats {
            bit_errors: self.bit_errors + other.bit_errors,
            bits_total: self.bits_total + other.bits_total,
        }
    }

    pub fn ber(&self) -> f64 {
        if self.bits_total == 0 {
            0.0
        } else {
            self.bit_errors as f64 / self.bits_total as f64
        }
    }

    /// Binomial standard error of [`BerStats::ber`].
    pub fn std_err(&self) -> f64 {
        if self.bits_total == 0 {
            return 0.0;
        }
        let p = self.ber();
        (p * (1.0 - p) / self.bits_total as f64).sqrt()
    }
}

pub fn ber(bits: &BitBlock, bits_hat: &BitBlock) -> Result<BerStats> {
    if bits.bits().len() != bits_hat.bits().len() {
        return Err(Error::shape(
            "ber",
            format!("{} bits vs {} decisions", bits.bits().len(), bits_hat.bits().len()),
        ));
    }
    let errors = bits
        .bits()
        .iter()
        .zip(bits_hat.bits())
        .filter(|(a, b)| a != b)
        .count();
    Ok(BerStats {
        bit_errors: errors as u64,
        bits_total: bits.bits().len() as u64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerPoint {
    pub ebn0_db: f64,
    pub stats: BerStats,
    pub channels_averaged: usize,
}

/// `ebn0_db,ber,bits,errors,channels_averaged` rows.
pub fn ber_csv(points: &[BerPoint]) -> String {
    let mut out = String::from("ebn0_db,ber,bits,errors,channels_averaged\n");
    for p in points {
        writeln!(
            out,
            "{},{:.6e},{},{},{}",
            p.ebn0_db,
            p.stats.ber(),
            p.stats.bits_total,
            p.stats.bit_errors,
            p.channels_averaged
        )
        .expect("write to string");
    }
    out
}

fn top_fraction(mut energies: Vec<f64>, top: usize) -> f64 {
    let total: f64 = energies.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    energies.sort_by(|a, b| b.total_cmp(a));
    energies.iter().take(top).sum::<f64>() / total
}

/// Mean over columns of the energy fraction in each column's `top` largest
/// samples.
pub fn time_concentration(q: &ComplexTensor, top: usize) -> f64 {
    let cols = q.cols();
    (0..cols)
        .map(|k| top_fraction(q.column_values(k).iter().map(|v| v.norm_sqr()).collect(), top))
        .sum::<f64>()
        / cols as f64
}

/// Unitary DFT of a sequence.
pub fn unitary_dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    let s = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(t, v)| {
                    let ang = -2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                    v * Complex64::from_polar(s, ang)
                })
                .sum()
        })
        .collect()
}

/// As [`time_concentration`], over DFT bins of each column.
pub fn frequency_concentration(q: &ComplexTensor, top: usize) -> f64 {
    let cols = q.cols();
    (0..cols)
        .map(|k| {
            let spec = unitary_dft(&q.column_values(k));
            top_fraction(spec.iter().map(|v| v.norm_sqr()).collect(), top)
        })
        .sum::<f64>()
        / cols as f64
}

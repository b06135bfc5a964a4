//! Gray-labelled square QAM, exact LLR demapping and the bitwise
//! cross-entropy (achievable-rate) loss.
//!
//! Labelling: the first `M/2` bits of a label select the in-phase level and
//! the last `M/2` bits the quadrature level. On each axis the levels are
//! ordered from most positive to most negative and labelled with the
//! reflected Gray code, so bit pattern `0...0` sits at the most positive
//! level. For QPSK this puts label `00` at `(1 + j)/sqrt(2)`.
//!
//! LLR sign convention: `llr = ln P(b = 0 | y) - ln P(b = 1 | y)`, so a
//! positive LLR favours bit 0.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{logsumexp, pairwise_sum, softplus, ComplexTensor, Tape, Var};

/// LLR magnitude limit (natural-log units).
pub const LLR_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    bits_per_symbol: usize,
    points: Vec<Complex64>,
    labels: Vec<u32>,
}

fn gray_inverse(mut g: u32) -> u32 {
    let mut i = g;
    while g > 0 {
        g >>= 1;
        i ^= g;
    }
    i
}

impl Constellation {
    /// Unit-energy square `2^M`-QAM. `M` must be even and at least 2.
    pub fn square_qam(bits_per_symbol: usize) -> Result<Self> {
        if bits_per_symbol < 2 || !bits_per_symbol.is_multiple_of(2) || bits_per_symbol > 16 {
            return Err(Error::Domain(format!(
                "square QAM needs an even number of bits per symbol in 2..=16, got {bits_per_symbol}"
            )));
        }
        let half = bits_per_symbol / 2;
        let levels = 1u32 << half;
        let scale = (2.0 * ((levels * levels) as f64 - 1.0) / 3.0).sqrt().recip();
        let axis = |g: u32| -> f64 {
            let pos = gray_inverse(g);
            ((levels - 1) as f64 - 2.0 * pos as f64) * scale
        };
        let size = 1u32 << bits_per_symbol;
        let mask = levels - 1;
        let points = (0..size)
            .map(|label| Complex64::new(axis(label >> half), axis(label & mask)))
            .collect();
        Ok(Self {
            bits_per_symbol,
            points,
            labels: (0..size).collect(),
        })
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn size(&self) -> usize {
        self.points.len()
    }

    /// Points indexed by position; `labels()[i]` is the label of `points()[i]`.
    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Bit `m` (0 = most significant) of the label at index `i`.
    pub fn bit(&self, i: usize, m: usize) -> u8 {
        ((self.labels[i] >> (self.bits_per_symbol - 1 - m)) & 1) as u8
    }

    /// Same labelling with every point rotated by `phase` radians.
    pub fn rotated(&self, phase: f64) -> Self {
        let r = Complex64::from_polar(1.0, phase);
        Self {
            bits_per_symbol: self.bits_per_symbol,
            points: self.points.iter().map(|p| p * r).collect(),
            labels: self.labels.clone(),
        }
    }

    fn index_of_label(&self, label: u32) -> usize {
        // labels are 0..size in order for the built-in tables
        if self.labels.get(label as usize) == Some(&label) {
            label as usize
        } else {
            self.labels
                .iter()
                .position(|&l| l == label)
                .expect("label in table")
        }
    }

    /// Index of the nearest point.
    pub fn slice(&self, z: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (z - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// For each bit position, the point indices whose label has that bit
    /// equal to 0, followed by the same for bit value 1.
    pub fn bit_partitions(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let m = self.bits_per_symbol;
        let zeros = (0..m)
            .map(|b| (0..self.size()).filter(|&i| self.bit(i, b) == 0).collect())
            .collect();
        let ones = (0..m)
            .map(|b| (0..self.size()).filter(|&i| self.bit(i, b) == 1).collect())
            .collect();
        (zeros, ones)
    }

    /// Point/label table as CSV (`label,bits,re,im`).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,bits,re,im\n");
        for (i, p) in self.points.iter().enumerate() {
            let bits: String = (0..self.bits_per_symbol)
                .map(|m| char::from(b'0' + self.bit(i, m)))
                .collect();
            out.push_str(&format!("{},{},{:.17e},{:.17e}\n", self.labels[i], bits, p.re, p.im));
        }
        out
    }
}

/// `rows x bits_per_symbol` binary matrix; row `n` holds the bits of symbol `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitBlock {
    rows: usize,
    cols: usize,
    bits: Vec<u8>,
}

impl BitBlock {
    pub fn new(rows: usize, cols: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::shape(
                "BitBlock::new",
                format!("{rows}x{cols} needs {} bits, got {}", rows * cols, bits.len()),
            ));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Domain("bit values must be 0 or 1".into()));
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bits = (0..rows * cols).map(|_| rng.random_range(0..2u8)).collect();
        Self { rows, cols, bits }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.bits[row * self.cols + col]
    }

    fn row_label(&self, row: usize) -> u32 {
        self.bits[row * self.cols..(row + 1) * self.cols]
            .iter()
            .fold(0u32, |acc, &b| (acc << 1) | b as u32)
    }
}

/// `rows x bits_per_symbol` LLRs, clamped to `±LLR_CLAMP`.
#[derive(Debug, Clone, PartialEq)]
pub struct LlrBlock {
    pub rows: usize,
    pub cols: usize,
    pub llr: Vec<f64>,
}

impl LlrBlock {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.llr[row * self.cols + col]
    }

    /// Bitwise MAP decisions under the sign convention.
    pub fn hard_decisions(&self) -> BitBlock {
        BitBlock {
            rows: self.rows,
            cols: self.cols,
            bits: self.llr.iter().map(|&l| u8::from(l < 0.0)).collect(),
        }
    }
}

pub fn map_bits(bits: &BitBlock, c: &Constellation) -> Result<Vec<Complex64>> {
    if bits.cols != c.bits_per_symbol {
        return Err(Error::shape(
            "map_bits",
            format!(
                "bit rows have width {}, constellation carries {} bits",
                bits.cols, c.bits_per_symbol
            ),
        ));
    }
    Ok((0..bits.rows)
        .map(|r| c.points[c.index_of_label(bits.row_label(r))])
        .collect())
}

/// Nearest-point decisions mapped back to bits.
pub fn slice_bits(symbols: &[Complex64], c: &Constellation) -> BitBlock {
    let m = c.bits_per_symbol;
    let mut bits = Vec::with_capacity(symbols.len() * m);
    for &z in symbols {
        let i = c.slice(z);
        bits.extend((0..m).map(|b| c.bit(i, b)));
    }
    BitBlock {
        rows: symbols.len(),
        cols: m,
        bits,
    }
}

/// Exact (log-sum-exp) LLRs for observations `y_n = x_n + w_n` with
/// `w_n ~ CN(0, noise_var[n])`.
pub fn demap_llr(symbols: &[Complex64], noise_var: &[f64], c: &Constellation) -> Result<LlrBlock> {
    if symbols.len() != noise_var.len() {
        return Err(Error::shape(
            "demap_llr",
            format!("{} symbols vs {} noise variances", symbols.len(), noise_var.len()),
        ));
    }
    if let Some(v) = noise_var.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("noise variance must be > 0, got {v}")));
    }
    let m = c.bits_per_symbol;
    let (zeros, ones) = c.bit_partitions();
    let mut llr = Vec::with_capacity(symbols.len() * m);
    let mut metric = vec![0.0; c.size()];
    for (&y, &v) in symbols.iter().zip(noise_var) {
        for (d, p) in metric.iter_mut().zip(&c.points) {
            *d = -(y - p).norm_sqr() / v;
        }
        for b in 0..m {
            let l0 = logsumexp(zeros[b].iter().map(|&i| metric[i]));
            let l1 = logsumexp(ones[b].iter().map(|&i| metric[i]));
            llr.push((l0 - l1).clamp(-LLR_CLAMP, LLR_CLAMP));
        }
    }
    Ok(LlrBlock {
        rows: symbols.len(),
        cols: m,
        llr,
    })
}

/// Mean of `-log2 P(b | y)` over every bit, with `P(b = 0) = sigmoid(llr)`.
pub fn bce_loss(llrs: &LlrBlock, bits: &BitBlock) -> Result<f64> {
    if llrs.rows != bits.rows || llrs.cols != bits.cols {
        return Err(Error::shape(
            "bce_loss",
            format!(
                "LLRs {}x{} vs bits {}x{}",
                llrs.rows, llrs.cols, bits.rows, bits.cols
            ),
        ));
    }
    let terms: Vec<f64> = llrs
        .llr
        .iter()
        .zip(&bits.bits)
        .map(|(&l, &b)| {
            let signed = if b == 0 { l } else { -l };
            softplus(-signed)
        })
        .collect();
    Ok(pairwise_sum(&terms) / terms.len() as f64 / std::f64::consts::LN_2)
}

/// Tape version of [`demap_llr`]. `symbols` and `noise_var` are `K x 1`;
/// the result is `K x M`.
pub fn demap_llr_tape(tape: &mut Tape, symbols: Var, noise_var: Var, c: &Constellation) -> Result<Var> {
    let [k, one] = tape.value(symbols).shape();
    if one != 1 || tape.value(noise_var).shape() != [k, 1] {
        return Err(Error::shape(
            "demap_llr_tape",
            format!(
                "symbols {:?} and noise variances {:?} must both be K x 1",
                tape.value(symbols).shape(),
                tape.value(noise_var).shape()
            ),
        ));
    }
    if let Some(v) = tape.value(noise_var).re.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("noise variance must be > 0, got {v}")));
    }
    let m = c.bits_per_symbol;
    let pts = tape.constant(ComplexTensor::from_complex(1, c.size(), &c.points)?);
    let diff = tape.sub(symbols, pts)?;
    let dist = tape.abs2(diff);
    let scaled = tape.div(dist, noise_var)?;
    let metric = tape.neg(scaled);
    let (zeros, ones) = c.bit_partitions();
    let groups: Vec<Vec<usize>> = zeros.into_iter().chain(ones).collect();
    let lse = tape.logsumexp_groups(metric, &groups)?;
    let l0 = tape.select_cols(lse, &(0..m).collect::<Vec<_>>())?;
    let l1 = tape.select_cols(lse, &(m..2 * m).collect::<Vec<_>>())?;
    let llr = tape.sub(l0, l1)?;
    Ok(tape.clamp(llr, -LLR_CLAMP, LLR_CLAMP))
}

/// Tape version of [`bce_loss`].
pub fn bce_loss_tape(tape: &mut Tape, llrs: Var, bits: &BitBlock) -> Result<Var> {
    if tape.value(llrs).shape() != [bits.rows, bits.cols] {
        return Err(Error::shape(
            "bce_loss_tape",
            format!(
                "LLRs {:?} vs bits {}x{}",
                tape.value(llrs).shape(),
                bits.rows,
                bits.cols
            ),
        ));
    }
    let signs = bits
        .bits
        .iter()
        .map(|&b| if b == 0 { -1.0 } else { 1.0 })
        .collect();
    let signs = tape.constant(ComplexTensor::real(bits.rows, bits.cols, signs)?);
    let z = tape.mul(llrs, signs)?;
    let sp = tape.softplus(z);
    let mean = tape.mean(sp);
    Ok(tape.scale(mean, 1.0 / std::f64::consts::LN_2))
}

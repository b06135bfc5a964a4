use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense row-major complex matrix stored as split real/imaginary planes.
///
/// Vectors are `n x 1`, scalars `1 x 1`. Real-valued quantities carry an
/// all-zero imaginary plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    rows: usize,
    cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexTensor {
    pub fn new(rows: usize, cols: usize, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        let len = rows * cols;
        if re.len() != len || im.len() != len {
            return Err(Error::shape(
                "ComplexTensor::new",
                format!(
                    "{rows}x{cols} needs {len} elements, got re={} im={}",
                    re.len(),
                    im.len()
                ),
            ));
        }
        Ok(Self { rows, cols, re, im })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            re: vec![0.0; rows * cols],
            im: vec![0.0; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            re: vec![value],
            im: vec![0.0],
        }
    }

    pub fn complex_scalar(value: Complex64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            re: vec![value.re],
            im: vec![value.im],
        }
    }

    pub fn real(rows: usize, cols: usize, re: Vec<f64>) -> Result<Self> {
        let im = vec![0.0; re.len()];
        Self::new(rows, cols, re, im)
    }

    pub fn from_complex(rows: usize, cols: usize, values: &[Complex64]) -> Result<Self> {
        let re = values.iter().map(|z| z.re).collect();
        let im = values.iter().map(|z| z.im).collect();
        Self::new(rows, cols, re, im)
    }

    /// Column vector from complex samples.
    pub fn column(values: &[Complex64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            re: values.iter().map(|z| z.re).collect(),
            im: values.iter().map(|z| z.im).collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.re[i * n + i] = 1.0;
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        let k = row * self.cols + col;
        Complex64::new(self.re[k], self.im[k])
    }

    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        let k = row * self.cols + col;
        self.re[k] = value.re;
        self.im[k] = value.im;
    }

    pub fn at(&self, k: usize) -> Complex64 {
        Complex64::new(self.re[k], self.im[k])
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect()
    }

    pub fn column_values(&self, col: usize) -> Vec<Complex64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }

    /// Same data reinterpreted with a new shape of equal element count.
    pub fn reshaped(&self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.len() {
            return Err(Error::shape(
                "reshape",
                format!("{}x{} -> {rows}x{cols}", self.rows, self.cols),
            ));
        }
        Ok(Self {
            rows,
            cols,
            re: self.re.clone(),
            im: self.im.clone(),
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            re: self.re.iter().map(|v| v * s).collect(),
            im: self.im.iter().map(|v| v * s).collect(),
        }
    }

    pub fn conj(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            re: self.re.clone(),
            im: self.im.iter().map(|v| -v).collect(),
        }
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let k = r * self.cols + c;
                let t = c * self.rows + r;
                out.re[t] = self.re[k];
                out.im[t] = -self.im[k];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!(
                    "{}x{} * {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let (n, m, p) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(n, p);
        for i in 0..n {
            let orow_re = &mut out.re[i * p..(i + 1) * p];
            let orow_im = &mut out.im[i * p..(i + 1) * p];
            for k in 0..m {
                let ar = self.re[i * m + k];
                let ai = self.im[i * m + k];
                if ar == 0.0 && ai == 0.0 {
                    continue;
                }
                let brow_re = &other.re[k * p..(k + 1) * p];
                let brow_im = &other.im[k * p..(k + 1) * p];
                for j in 0..p {
                    orow_re[j] += ar * brow_re[j] - ai * brow_im[j];
                    orow_im[j] += ar * brow_im[j] + ai * brow_re[j];
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product on plain complex slices.
    pub fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.cols {
            return Err(Error::shape(
                "apply",
                format!("{}x{} * vector of {}", self.rows, self.cols, x.len()),
            ));
        }
        Ok((0..self.rows)
            .map(|r| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (c, xv) in x.iter().enumerate() {
                    acc += self.get(r, c) * xv;
                }
                acc
            })
            .collect())
    }

    /// Conjugate-transpose matrix-vector product, `self^H x`.
    pub fn apply_adjoint(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.rows {
            return Err(Error::shape(
                "apply_adjoint",
                format!("({}x{})^H * vector of {}", self.rows, self.cols, x.len()),
            ));
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.cols];
        for (r, xv) in x.iter().enumerate() {
            for (c, o) in out.iter_mut().enumerate() {
                *o += self.get(r, c).conj() * xv;
            }
        }
        Ok(out)
    }

    pub fn trace(&self) -> Complex64 {
        let n = self.rows.min(self.cols);
        (0..n).map(|i| self.get(i, i)).sum()
    }

    /// Squared Frobenius norm, equal to `trace(A A^H)`.
    pub fn frobenius_sq(&self) -> f64 {
        pairwise_sum_by(self.len(), |k| {
            self.re[k] * self.re[k] + self.im[k] * self.im[k]
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.re
            .iter()
            .zip(&other.re)
            .chain(self.im.iter().zip(&other.im))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Pairwise (cascade) summation; error grows with log n instead of n.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    pairwise_sum_by(values.len(), |k| values[k])
}

pub(crate) fn pairwise_sum_by(n: usize, f: impl Fn(usize) -> f64 + Copy) -> f64 {
    fn rec(lo: usize, hi: usize, f: impl Fn(usize) -> f64 + Copy) -> f64 {
        if hi - lo <= 16 {
            (lo..hi).map(f).sum()
        } else {
            let mid = lo + (hi - lo) / 2;
            rec(lo, mid, f) + rec(mid, hi, f)
        }
    }
    rec(0, n, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ComplexTensor {
        let re = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let im = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        ComplexTensor::new(rows, cols, re, im).unwrap()
    }

    #[test]
    fn identity_times_vector() {
        let x = ComplexTensor::column(&[c(1.0, 1.0), c(2.0, 0.0)]);
        let y = ComplexTensor::identity(2).matmul(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn permutation_swaps_entries() {
        let p = ComplexTensor::from_complex(
            2,
            2,
            &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)],
        )
        .unwrap();
        let x = ComplexTensor::column(&[c(3.0, -1.0), c(0.5, 2.0)]);
        let y = p.matmul(&x).unwrap();
        assert_eq!(y.to_complex(), vec![c(0.5, 2.0), c(3.0, -1.0)]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(4, 4, &mut rng);
        let b = random(4, 4, &mut rng);
        let got = a.matmul(&b).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut want = c(0.0, 0.0);
                for k in 0..4 {
                    want += a.get(i, k) * b.get(k, j);
                }
                let g = got.get(i, j);
                assert!((g - want).norm() <= 1e-12 * want.norm().max(1.0));
            }
        }
    }

    #[test]
    fn matmul_rejects_bad_inner_dimension() {
        let a = ComplexTensor::zeros(2, 3);
        let b = ComplexTensor::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(Error::Shape { .. })));
    }

    #[test]
    fn new_rejects_wrong_length() {
        assert!(ComplexTensor::new(2, 2, vec![0.0; 3], vec![0.0; 4]).is_err());
    }

    #[test]
    fn adjoint_and_apply_agree_with_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(3, 5, &mut rng);
        let x = random(3, 1, &mut rng);
        let via_mat = a.adjoint().matmul(&x).unwrap().to_complex();
        let via_apply = a.apply_adjoint(&x.to_complex()).unwrap();
        for (u, v) in via_mat.iter().zip(&via_apply) {
            assert!((u - v).norm() < 1e-12);
        }
        let trace = a.matmul(&a.adjoint()).unwrap().trace();
        assert!((trace.re - a.frobenius_sq()).abs() < 1e-12);
        assert!(trace.im.abs() < 1e-12);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_input() {
        let v: Vec<f64> = (0..100).map(|k| k as f64 * 0.5).collect();
        assert_eq!(pairwise_sum(&v), v.iter().sum::<f64>());
    }
}

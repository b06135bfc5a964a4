//! Objective terms: power normalization, detection loss, PAPR hinge,
//! threshold penalty and their weighted total.
//!
//! Each term has a plain version over concrete values and a tape version
//! used during training. Tests pin the two to each other.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, ComplexTensor, Tape, Var};
use crate::transceiver::WaveformMatrix;

const DB_TO_NEPER: f64 = std::f64::consts::LN_10 / 10.0;

/// Scale `Q_raw` so that `trace(Q Q^H) = N`.
pub fn normalize_power(q_raw: &ComplexTensor) -> Result<WaveformMatrix> {
    let energy = q_raw.frobenius_sq();
    if !(energy > 0.0) {
        return Err(Error::Degenerate("cannot normalize a zero waveform matrix".into()));
    }
    let n = q_raw.rows() as f64;
    WaveformMatrix::new(q_raw.scaled((n / energy).sqrt()))
}

pub fn normalize_power_tape(tape: &mut Tape, q_raw: Var) -> Result<Var> {
    let n = tape.value(q_raw).rows() as f64;
    let power = tape.abs2(q_raw);
    let energy = tape.sum(power);
    if !(tape.scalar(energy) > 0.0) {
        return Err(Error::Degenerate("cannot normalize a zero waveform matrix".into()));
    }
    let norm = tape.sqrt(energy)?;
    let unit = tape.div(q_raw, norm)?;
    Ok(tape.scale(unit, n.sqrt()))
}

/// Mean hinge `max(p[n] / mean(p) - eps_lin, 0)` over every sample of every
/// block.
pub fn papr_loss(bodies: &[Vec<Complex64>], eps_db: f64) -> Result<f64> {
    if bodies.is_empty() || bodies.iter().any(|b| b.is_empty()) {
        return Err(Error::Degenerate("PAPR loss of an empty batch".into()));
    }
    let eps_lin = (eps_db * DB_TO_NEPER).exp();
    let mut total = 0.0;
    let mut count = 0usize;
    for body in bodies {
        let p: Vec<f64> = body.iter().map(|v| v.norm_sqr()).collect();
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        if mean == 0.0 {
            return Err(Error::Degenerate("PAPR loss of an all-zero block".into()));
        }
        total += p.iter().map(|v| (v / mean - eps_lin).max(0.0)).sum::<f64>();
        count += p.len();
    }
    Ok(total / count as f64)
}

/// Tape version of [`papr_loss`]. `bodies` is `N x S`, one block per column;
/// `eps_lin` is a scalar.
pub fn papr_loss_tape(tape: &mut Tape, bodies: Var, eps_lin: Var) -> Result<Var> {
    let power = tape.abs2(bodies);
    let mean = tape.mean_rows(power);
    if tape.value(mean).re.contains(&0.0) {
        return Err(Error::Degenerate("PAPR loss of an all-zero block".into()));
    }
    let ratio = tape.div(power, mean)?;
    let excess = tape.sub(ratio, eps_lin)?;
    let hinge = tape.relu(excess);
    Ok(tape.mean(hinge))
}

/// Mean learned threshold in dB.
pub fn threshold_loss(eps_db: &[f64]) -> f64 {
    eps_db.iter().sum::<f64>() / eps_db.len().max(1) as f64
}

/// `lo + (hi - lo) * sigmoid(raw)`.
pub fn eps_db_from_raw(raw: f64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * sigmoid(raw)
}

/// Inverse of [`eps_db_from_raw`], with the target pulled strictly inside
/// the interval.
pub fn eps_raw_from_db(eps_db: f64, lo: f64, hi: f64) -> f64 {
    let u = ((eps_db - lo) / (hi - lo)).clamp(1e-6, 1.0 - 1e-6);
    (u / (1.0 - u)).ln()
}

pub fn eps_db_tape(tape: &mut Tape, eps_raw: Var, lo: f64, hi: f64) -> Result<Var> {
    let s = tape.sigmoid(eps_raw);
    let spread = tape.scale(s, hi - lo);
    let offset = tape.constant(ComplexTensor::scalar(lo));
    tape.add(spread, offset)
}

/// `10^(eps_db / 10)`.
pub fn eps_lin_tape(tape: &mut Tape, eps_db: Var) -> Var {
    let nepers = tape.scale(eps_db, DB_TO_NEPER);
    tape.exp(nepers)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
#[derive(Default)]
pub enum Weighting {
    /// `sum_i exp(-sigma_i) L_i + sigma_i` with learned `sigma`.
    #[default]
    Uncertainty,
    /// `alpha R + beta P + gamma Theta`.
    Fixed { alpha: f64, beta: f64, gamma: f64 },
}


pub fn total_loss(terms: [f64; 3], sigmas: [f64; 3], weighting: Weighting) -> f64 {
    match weighting {
        Weighting::Uncertainty => terms
            .iter()
            .zip(sigmas)
            .map(|(l, s)| (-s).exp() * l + s)
            .sum(),
        Weighting::Fixed { alpha, beta, gamma } => {
            alpha * terms[0] + beta * terms[1] + gamma * terms[2]
        }
    }
}

/// Tape version of [`total_loss`]. In fixed mode a zero weight drops its
/// term from the graph entirely.
pub fn total_loss_tape(tape: &mut Tape, terms: [Var; 3], sigmas: [Var; 3], weighting: Weighting) -> Result<Var> {
    let mut parts = Vec::with_capacity(6);
    match weighting {
        Weighting::Uncertainty => {
            for (l, s) in terms.into_iter().zip(sigmas) {
                let neg = tape.neg(s);
                let w = tape.exp(neg);
                parts.push(tape.mul(w, l)?);
                parts.push(s);
            }
        }
        Weighting::Fixed { alpha, beta, gamma } => {
            for (l, w) in terms.into_iter().zip([alpha, beta, gamma]) {
                if w != 0.0 {
                    parts.push(tape.scale(l, w));
                }
            }
        }
    }
    let mut acc = match parts.first() {
        Some(&v) => v,
        None => tape.constant(ComplexTensor::scalar(0.0)),
    };
    for &p in parts.iter().skip(1) {
        acc = tape.add(acc, p)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check_gradients;
    use crate::rng::{complex_gaussian, derive};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_tensor(rows: usize, cols: usize, seed: u64) -> ComplexTensor {
        let mut rng = derive(seed, &[]);
        let v: Vec<Complex64> = (0..rows * cols).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
        ComplexTensor::from_complex(rows, cols, &v).unwrap()
    }

    #[test]
    fn normalize_twice_identity() {
        let q = normalize_power(&ComplexTensor::identity(5).scaled(2.0)).unwrap();
        assert!(q.matrix().max_abs_diff(&ComplexTensor::identity(5)) < 1e-15);
        let r = normalize_power(&random_tensor(7, 7, 1)).unwrap();
        assert!((r.energy() - 7.0).abs() < 1e-9);
        assert!(matches!(
            normalize_power(&ComplexTensor::zeros(3, 3)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn normalize_tape_matches_plain_and_has_valid_gradient() {
        let raw = random_tensor(4, 4, 2);
        let mut t = Tape::new();
        let v = t.param(raw.clone());
        let q = normalize_power_tape(&mut t, v).unwrap();
        assert!(t.value(q).max_abs_diff(normalize_power(&raw).unwrap().matrix()) < 1e-14);
        let target = random_tensor(4, 4, 3);
        let err = check_gradients(
            |t, p| {
                let q = normalize_power_tape(t, p[0])?;
                let w = t.constant(target.clone());
                let prod = t.mul(q, w)?;
                let s = t.sum(prod);
                let s2 = t.abs2(s);
                Ok(s2)
            },
            &[raw],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn papr_loss_cases() {
        let flat: Vec<Vec<Complex64>> = (0..3)
            .map(|s| (0..8).map(|k| Complex64::from_polar(1.0, (k * s) as f64)).collect())
            .collect();
        for eps in [0.0, 1.0, 4.0] {
            assert_eq!(papr_loss(&flat, eps).unwrap(), 0.0);
        }
        let impulse = vec![vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]];
        assert!((papr_loss(&impulse, 0.0).unwrap() - 0.75).abs() < 1e-15);
        assert!(papr_loss(&[vec![c(0.0, 0.0); 4]], 0.0).is_err());
    }

    #[test]
    fn papr_loss_is_non_increasing_in_threshold() {
        let b = random_tensor(8, 6, 4);
        let bodies: Vec<Vec<Complex64>> = (0..6).map(|s| b.column_values(s)).collect();
        let mut prev = f64::INFINITY;
        for k in 0..=80 {
            let p = papr_loss(&bodies, k as f64 * 0.1).unwrap();
            assert!(p <= prev);
            prev = p;
        }
    }

    #[test]
    fn papr_tape_matches_plain() {
        let b = random_tensor(8, 5, 5);
        let bodies: Vec<Vec<Complex64>> = (0..5).map(|s| b.column_values(s)).collect();
        let mut t = Tape::new();
        let bv = t.constant(b);
        let raw = t.param(ComplexTensor::scalar(eps_raw_from_db(3.0, 2.0, 8.0)));
        let db = eps_db_tape(&mut t, raw, 2.0, 8.0).unwrap();
        let lin = eps_lin_tape(&mut t, db);
        let p = papr_loss_tape(&mut t, bv, lin).unwrap();
        assert!((t.scalar(db) - 3.0).abs() < 1e-9);
        assert!((t.scalar(p) - papr_loss(&bodies, t.scalar(db)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn threshold_cases() {
        assert_eq!(threshold_loss(&[2.0]), 2.0);
        assert!((eps_db_from_raw(-50.0, 2.0, 8.0) - 2.0).abs() < 1e-12);
        assert!((eps_db_from_raw(eps_raw_from_db(5.0, 2.0, 8.0), 2.0, 8.0) - 5.0).abs() < 1e-12);
        let err = check_gradients(
            |t, p| eps_db_tape(t, p[0], 2.0, 8.0),
            &[ComplexTensor::scalar(0.3)],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn total_loss_modes() {
        let terms = [0.4, 0.2, 3.0];
        assert!((total_loss(terms, [0.0; 3], Weighting::Uncertainty) - 3.6).abs() < 1e-15);
        let pure = Weighting::Fixed {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
        };
        assert_eq!(total_loss(terms, [0.0; 3], pure), 0.4);
    }

    #[test]
    fn sigma_stationary_point() {
        // dL/dsigma_R = 1 - exp(-sigma_R) R, zero at sigma_R = ln R
        let r: f64 = 0.37;
        for sigma in [-1.0, 0.0, r.ln(), 2.0] {
            let mut t = Tape::new();
            let terms = [
                t.constant(ComplexTensor::scalar(r)),
                t.constant(ComplexTensor::scalar(0.1)),
                t.constant(ComplexTensor::scalar(4.0)),
            ];
            let s = [
                t.param(ComplexTensor::scalar(sigma)),
                t.param(ComplexTensor::scalar(0.0)),
                t.param(ComplexTensor::scalar(0.0)),
            ];
            let l = total_loss_tape(&mut t, terms, s, Weighting::Uncertainty).unwrap();
            let g = t.backward(l).unwrap();
            let want = 1.0 - (-sigma).exp() * r;
            assert!((g.get(s[0]).unwrap().re[0] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_weight_removes_term_from_graph() {
        let mut t = Tape::new();
        let r = t.param(ComplexTensor::scalar(0.5));
        let p = t.param(ComplexTensor::scalar(0.5));
        let th = t.param(ComplexTensor::scalar(0.5));
        let s = [t.constant(ComplexTensor::scalar(0.0)); 3];
        let w = Weighting::Fixed {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
        };
        let l = total_loss_tape(&mut t, [r, p, th], s, w).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(r).unwrap().re[0], 1.0);
        assert!(g.get(p).is_none_or(|v| v.re[0] == 0.0));
        assert!(g.get(th).is_none_or(|v| v.re[0] == 0.0));
    }
}

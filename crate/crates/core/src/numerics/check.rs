//! Central finite differences as an independent check on tape gradients.

use super::tape::{Tape, Var};
use super::tensor::ComplexTensor;
use crate::error::{Error, Result};

/// Absolute gradient error below which a parameter is considered exact.
pub const ABS_ERROR_FLOOR: f64 = 1e-9;

/// Compare `grads` against central differences of `loss_fn` at `params`.
///
/// Every real and imaginary component is perturbed by `±step`. For each
/// parameter the error is `|fd - g| / max(|fd|, |g|)` in the Euclidean norm,
/// taken as zero when `|fd - g| <= ABS_ERROR_FLOOR`. Returns the worst
/// parameter.
pub fn finite_diff<F>(
    mut loss_fn: F,
    params: &[ComplexTensor],
    grads: &[ComplexTensor],
    step: f64,
) -> Result<f64>
where
    F: FnMut(&[ComplexTensor]) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::Domain(format!("finite-difference step must be > 0, got {step}")));
    }
    if params.len() != grads.len() {
        return Err(Error::shape(
            "finite_diff",
            format!("{} params vs {} gradients", params.len(), grads.len()),
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "finite_diff",
                format!("parameter {:?} vs gradient {:?}", p.shape(), g.shape()),
            ));
        }
    }

    let base = loss_fn(params)?;
    let again = loss_fn(params)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::OracleInvalid(format!(
            "loss is not deterministic: {base} then {again}"
        )));
    }

    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for (pi, grad) in grads.iter().enumerate() {
        let mut diff_sq = 0.0;
        let mut fd_sq = 0.0;
        let mut g_sq = 0.0;
        for k in 0..grad.len() {
            for imag in [false, true] {
                let central = {
                    let mut eval = |delta: f64| -> Result<f64> {
                        let slot = if imag {
                            &mut work[pi].im[k]
                        } else {
                            &mut work[pi].re[k]
                        };
                        let orig = *slot;
                        *slot = orig + delta;
                        let v = loss_fn(&work);
                        let slot = if imag {
                            &mut work[pi].im[k]
                        } else {
                            &mut work[pi].re[k]
                        };
                        *slot = orig;
                        v
                    };
                    (eval(step)? - eval(-step)?) / (2.0 * step)
                };
                let analytic = if imag { grad.im[k] } else { grad.re[k] };
                diff_sq += (central - analytic).powi(2);
                fd_sq += central * central;
                g_sq += analytic * analytic;
            }
        }
        let abs_err = diff_sq.sqrt();
        if abs_err > ABS_ERROR_FLOOR {
            worst = worst.max(abs_err / fd_sq.sqrt().max(g_sq.sqrt()));
        }
    }
    Ok(worst)
}

/// Build a scalar loss on a fresh tape, backpropagate, and check the result
/// against [`finite_diff`].
pub fn check_gradients<F>(build: F, params: &[ComplexTensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let grads: Vec<ComplexTensor> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| {
            grads
                .get(*v)
                .cloned()
                .unwrap_or_else(|| ComplexTensor::zeros(p.rows(), p.cols()))
        })
        .collect();
    finite_diff(
        |ps| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ps.iter().map(|p| t.param(p.clone())).collect();
            let l = build(&mut t, &vs)?;
            Ok(t.scalar(l))
        },
        params,
        &grads,
        step,
    )
}

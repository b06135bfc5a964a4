//! Per-channel gradient descent over the waveform matrix, detector taps,
//! PAPR threshold and loss-weighting scalars.
//!
//! Each step draws a fresh batch of `S` single-block transmissions from a
//! stream derived from `(seed, stage, step)`, builds the whole chain on a
//! new tape, and applies one Adam update. The chain uses the effective
//! channel `Q^H C Q`, which equals the sample-domain chain whenever the
//! channel fits inside the cyclic prefix.

mod adam;
mod loss;

pub use adam::Adam;
pub use loss::{
    eps_db_from_raw, eps_db_tape, eps_lin_tape, eps_raw_from_db, normalize_power, normalize_power_tape,
    papr_loss, papr_loss_tape, threshold_loss, total_loss, total_loss_tape, Weighting,
};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{noise_from_ebn0, ChannelRealization};
use crate::error::{Error, Result};
use crate::metrics::{papr, to_db};
use crate::modem::{bce_loss, bce_loss_tape, demap_llr, demap_llr_tape, map_bits, BitBlock, Constellation};
use crate::numerics::{ComplexTensor, Tape, Var};
use crate::rng::{complex_gaussian, derive};
use crate::transceiver::{
    channel_matrix, idft_matrix, ofdm_frequency_response, unbiased_mmse_taps, DetectorTaps, FrameConfig,
    WaveformMatrix,
};

/// Uncertainty scalars are clipped to `[-SIGMA_LIMIT, SIGMA_LIMIT]`.
pub const SIGMA_LIMIT: f64 = 10.0;

/// Settings of one training stage. The default is the fine-tune stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub eps_db_range: [f64; 2],
    pub ebn0_db_range: [f64; 2],
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            batch_size: 64,
            learning_rate: 1e-4,
            eps_db_range: [2.0, 6.0],
            ebn0_db_range: [20.0, 25.0],
        }
    }
}

impl StageConfig {
    fn validate(&self, name: &str) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config(format!("{name}.batch_size must be >= 1")));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "{name}.learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        let [lo, hi] = self.eps_db_range;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!(
                "{name}.eps_db_range must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        let [a, b] = self.ebn0_db_range;
        if !(a <= b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Config(format!(
                "{name}.ebn0_db_range must satisfy lo <= hi, got [{a}, {b}]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub eps_db_range: [f64; 2],
    pub ebn0_db_range: [f64; 2],
    pub weighting: Weighting,
    /// Std of the complex Gaussian perturbation added to the IDFT start.
    pub init_perturbation: f64,
    /// Eb/N0 used for the initial MMSE detector taps.
    pub init_ebn0_db: f64,
    pub init_eps_db: f64,
    pub fine_tune: StageConfig,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 64,
            learning_rate: 1e-3,
            eps_db_range: [2.0, 8.0],
            ebn0_db_range: [0.0, 25.0],
            weighting: Weighting::Uncertainty,
            init_perturbation: 0.01,
            init_ebn0_db: 12.5,
            init_eps_db: 5.0,
            fine_tune: StageConfig::default(),
        }
    }
}

impl OptimConfig {
    pub fn main_stage(&self) -> StageConfig {
        StageConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            eps_db_range: self.eps_db_range,
            ebn0_db_range: self.ebn0_db_range,
        }
    }

    pub fn stages(&self) -> [StageConfig; 2] {
        [self.main_stage(), self.fine_tune]
    }

    pub fn validate(&self) -> Result<()> {
        self.main_stage().validate("optim")?;
        self.fine_tune.validate("optim.fine_tune")?;
        if !(self.init_perturbation >= 0.0) {
            return Err(Error::Config("optim.init_perturbation must be >= 0".into()));
        }
        let [lo, hi] = self.eps_db_range;
        if !(lo..=hi).contains(&self.init_eps_db) {
            return Err(Error::Config(format!(
                "optim.init_eps_db {} is outside optim.eps_db_range [{lo}, {hi}]",
                self.init_eps_db
            )));
        }
        if let Weighting::Fixed { alpha, beta, gamma } = self.weighting {
            if [alpha, beta, gamma].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(Error::Config("optim.weighting weights must be finite and >= 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainableParams {
    pub q_raw: ComplexTensor,
    /// `N x 1` detector taps.
    pub q: ComplexTensor,
    pub eps_raw: f64,
    /// `sigma_R`, `sigma_P`, `sigma_Theta`.
    pub sigma: [f64; 3],
}

impl TrainableParams {
    /// IDFT basis plus perturbation, bias-compensated MMSE taps for the
    /// OFDM view of `h`, threshold at `init_eps_db`, zero sigmas.
    pub fn init(h: &ChannelRealization, frame: &FrameConfig, constellation: &Constellation, cfg: &OptimConfig, seed: u64) -> Result<Self> {
        let n = frame.n;
        let mut q_raw = idft_matrix(n);
        if cfg.init_perturbation > 0.0 {
            let mut rng = derive(seed, &[u64::MAX]);
            let var = cfg.init_perturbation * cfg.init_perturbation;
            for k in 0..q_raw.len() {
                let z = complex_gaussian(&mut rng, var);
                q_raw.re[k] += z.re;
                q_raw.im[k] += z.im;
            }
        }
        let n0 = noise_from_ebn0(cfg.init_ebn0_db, constellation.bits_per_symbol(), 1.0)?.n0;
        let taps = unbiased_mmse_taps(&ofdm_frequency_response(h, n), n0);
        let [lo, hi] = cfg.eps_db_range;
        Ok(Self {
            q_raw,
            q: ComplexTensor::column(&taps.taps),
            eps_raw: eps_raw_from_db(cfg.init_eps_db, lo, hi),
            sigma: [0.0; 3],
        })
    }

    pub fn waveform(&self) -> Result<WaveformMatrix> {
        normalize_power(&self.q_raw)
    }

    pub fn detector(&self) -> DetectorTaps {
        DetectorTaps {
            taps: self.q.to_complex(),
        }
    }

    /// Parameters in the order used by [`objective`]: `Q_raw`, `q`,
    /// `eps_raw`, `sigma_R`, `sigma_P`, `sigma_Theta`.
    pub fn to_tensors(&self) -> Vec<ComplexTensor> {
        let mut v = vec![self.q_raw.clone(), self.q.clone(), ComplexTensor::scalar(self.eps_raw)];
        v.extend(self.sigma.iter().map(|&s| ComplexTensor::scalar(s)));
        v
    }
}

/// One batch of independent single-block transmissions.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    /// Row `n * S + s` carries the bits of symbol `n` in block `s`.
    pub bits: BitBlock,
    /// `N x S` symbols, one block per column.
    pub symbols: ComplexTensor,
    /// `N x S` time-domain noise with per-column variance `n0[s]`.
    pub noise: ComplexTensor,
    pub n0: Vec<f64>,
}

impl TrainingBatch {
    pub fn draw<R: Rng + ?Sized>(
        n: usize,
        batch_size: usize,
        constellation: &Constellation,
        ebn0_db_range: [f64; 2],
        rng: &mut R,
    ) -> Result<Self> {
        let m = constellation.bits_per_symbol();
        let bits = BitBlock::random(n * batch_size, m, rng);
        let x = map_bits(&bits, constellation)?;
        let symbols = ComplexTensor::from_complex(n, batch_size, &x)?;
        let [lo, hi] = ebn0_db_range;
        let n0: Vec<f64> = (0..batch_size)
            .map(|_| {
                let ebn0 = if hi > lo { rng.random_range(lo..hi) } else { lo };
                noise_from_ebn0(ebn0, m, 1.0).map(|s| s.n0)
            })
            .collect::<Result<_>>()?;
        let mut noise = ComplexTensor::zeros(n, batch_size);
        for r in 0..n {
            for (s, &v) in n0.iter().enumerate() {
                noise.set(r, s, complex_gaussian(rng, v));
            }
        }
        Ok(Self {
            bits,
            symbols,
            noise,
            n0,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.symbols.cols()
    }
}

/// Fixed inputs of one objective evaluation.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveInputs<'a> {
    /// Circulant channel matrix `C`.
    pub channel: &'a ComplexTensor,
    pub batch: &'a TrainingBatch,
    pub constellation: &'a Constellation,
    pub eps_db_range: [f64; 2],
    pub weighting: Weighting,
}

/// Nodes of interest in one recorded objective.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveVars {
    pub r: Var,
    pub p: Var,
    pub theta: Var,
    pub total: Var,
    /// Normalized waveform matrix.
    pub q_norm: Var,
    /// `N x S` transmit bodies `Q X`.
    pub bodies: Var,
}

/// Record the full objective. `params` are, in order: `Q_raw` (`N x N`),
/// `q` (`N x 1`), `eps_raw`, `sigma_R`, `sigma_P`, `sigma_Theta` (scalars).
pub fn objective(tape: &mut Tape, params: &[Var], inputs: &ObjectiveInputs) -> Result<ObjectiveVars> {
    let &[q_raw, q, eps_raw, s_r, s_p, s_t] = params else {
        return Err(Error::shape(
            "objective",
            format!("expected 6 parameters, got {}", params.len()),
        ));
    };
    let batch = inputs.batch;
    let (n, s) = (batch.symbols.rows(), batch.symbols.cols());

    let q_norm = normalize_power_tape(tape, q_raw)?;
    let q_h = tape.adjoint(q_norm);
    let c = tape.constant(inputs.channel.clone());
    let cq = tape.matmul(c, q_norm)?;
    let lambda = tape.matmul(q_h, cq)?;
    let x = tape.constant(batch.symbols.clone());
    let w = tape.constant(batch.noise.clone());
    let lx = tape.matmul(lambda, x)?;
    let qw = tape.matmul(q_h, w)?;
    let r = tape.add(lx, qw)?;
    let detected = tape.mul(r, q)?;

    let q_pow = tape.abs2(q);
    let n0 = tape.constant(ComplexTensor::real(1, s, batch.n0.clone())?);
    let noise_var = tape.mul(q_pow, n0)?;

    let sym = tape.reshape(detected, n * s, 1)?;
    let var = tape.reshape(noise_var, n * s, 1)?;
    let llr = demap_llr_tape(tape, sym, var, inputs.constellation)?;
    let r_loss = bce_loss_tape(tape, llr, &batch.bits)?;

    let [lo, hi] = inputs.eps_db_range;
    let eps_db = eps_db_tape(tape, eps_raw, lo, hi)?;
    let eps_lin = eps_lin_tape(tape, eps_db);
    let bodies = tape.matmul(q_norm, x)?;
    let p_loss = papr_loss_tape(tape, bodies, eps_lin)?;

    let total = total_loss_tape(tape, [r_loss, p_loss, eps_db], [s_r, s_p, s_t], inputs.weighting)?;
    Ok(ObjectiveVars {
        r: r_loss,
        p: p_loss,
        theta: eps_db,
        total,
        q_norm,
        bodies,
    })
}

/// Detection loss of a fixed waveform and detector on a batch, computed
/// without the tape.
pub fn batch_bce(
    waveform: &WaveformMatrix,
    detector: &DetectorTaps,
    channel: &ComplexTensor,
    batch: &TrainingBatch,
    constellation: &Constellation,
) -> Result<f64> {
    let q = waveform.matrix();
    let lambda = q.adjoint().matmul(&channel.matmul(q)?)?;
    let r = lambda.matmul(&batch.symbols)?;
    let qw = q.adjoint().matmul(&batch.noise)?;
    let (n, s) = (r.rows(), r.cols());
    let mut sym = Vec::with_capacity(n * s);
    let mut var = Vec::with_capacity(n * s);
    for row in 0..n {
        let tap = detector.taps[row];
        for col in 0..s {
            sym.push((r.get(row, col) + qw.get(row, col)) * tap);
            var.push(tap.norm_sqr() * batch.n0[col]);
        }
    }
    bce_loss(&demap_llr(&sym, &var, constellation)?, &batch.bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PaprStats {
    pub mean_db: f64,
    pub max_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Global step index across both stages.
    pub step: usize,
    /// 1 for the main stage, 2 for fine-tuning.
    pub stage: u8,
    pub r: f64,
    pub p: f64,
    pub theta: f64,
    pub total: f64,
    pub eps_db: f64,
    pub sigma: [f64; 3],
    /// `trace(Q Q^H)` of the normalized matrix used in this step.
    pub trace_qqh: f64,
    pub papr_db_batch: PaprStats,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str =
        "step,stage,R,P,Theta,total,eps_db,sigma_R,sigma_P,sigma_Theta,trace_qqh,papr_db_mean,papr_db_max";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.12e},{:.6},{:.6}",
            self.step,
            self.stage,
            self.r,
            self.p,
            self.theta,
            self.total,
            self.eps_db,
            self.sigma[0],
            self.sigma[1],
            self.sigma[2],
            self.trace_qqh,
            self.papr_db_batch.mean_db,
            self.papr_db_batch.max_db
        )
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub waveform: WaveformMatrix,
    pub detector: DetectorTaps,
    pub eps_db: f64,
    pub params: TrainableParams,
    pub trace: Vec<LossBreakdown>,
}

pub fn trace_csv(trace: &[LossBreakdown]) -> String {
    let mut out = String::from(LossBreakdown::CSV_HEADER);
    out.push('\n');
    for b in trace {
        out.push_str(&b.csv_row());
        out.push('\n');
    }
    out
}

fn column_papr_stats(bodies: &ComplexTensor) -> Result<PaprStats> {
    let cols = bodies.cols();
    let mut sum = 0.0;
    let mut max = f64::NEG_INFINITY;
    for k in 0..cols {
        let v = to_db(papr(&bodies.column_values(k))?);
        sum += v;
        max = max.max(v);
    }
    Ok(PaprStats {
        mean_db: sum / cols as f64,
        max_db: max,
    })
}

fn dump(step: usize, stage: u8, params: &TrainableParams, values: [f64; 4]) -> String {
    let q_abs_max = params
        .q
        .to_complex()
        .iter()
        .map(|v| v.norm())
        .fold(0.0f64, f64::max);
    format!(
        "stage {stage}, R={:e}, P={:e}, Theta={:e}, total={:e}, eps_raw={:e}, sigma={:?}, \
         ||Q_raw||_F^2={:e}, max|q|={:e} (step {step})",
        values[0],
        values[1],
        values[2],
        values[3],
        params.eps_raw,
        params.sigma,
        params.q_raw.frobenius_sq(),
        q_abs_max
    )
}

/// Optimize the waveform for one channel: the main stage, then the
/// fine-tuning stage with its own threshold interval and a fresh Adam state.
pub fn optimize_for_channel(
    h: &ChannelRealization,
    frame: &FrameConfig,
    constellation: &Constellation,
    cfg: &OptimConfig,
    seed: u64,
) -> Result<OptimResult> {
    let params = TrainableParams::init(h, frame, constellation, cfg, seed)?;
    optimize_from(params, h, frame, constellation, cfg, seed)
}

/// As [`optimize_for_channel`], from explicit starting parameters.
pub fn optimize_from(
    mut params: TrainableParams,
    h: &ChannelRealization,
    frame: &FrameConfig,
    constellation: &Constellation,
    cfg: &OptimConfig,
    seed: u64,
) -> Result<OptimResult> {
    cfg.validate()?;
    frame.validate()?;
    if h.max_delay() > frame.cp_len {
        return Err(Error::ChannelTooLong {
            length: h.taps.len(),
            cp_len: frame.cp_len,
        });
    }
    if params.q_raw.shape() != [frame.n, frame.n] || params.q.shape() != [frame.n, 1] {
        return Err(Error::shape(
            "optimize_from",
            format!(
                "parameters {:?} / {:?} do not match N = {}",
                params.q_raw.shape(),
                params.q.shape(),
                frame.n
            ),
        ));
    }
    let c = channel_matrix(h, frame)?;
    let mut trace = Vec::with_capacity(cfg.steps + cfg.fine_tune.steps);
    let mut global = 0usize;
    let mut eps_range = cfg.eps_db_range;

    for (stage_idx, stage) in cfg.stages().iter().enumerate() {
        let stage_no = stage_idx as u8 + 1;
        if stage.steps == 0 {
            continue;
        }
        if stage_idx > 0 {
            // keep the current threshold, re-expressed in the new interval
            let current = eps_db_from_raw(params.eps_raw, eps_range[0], eps_range[1]);
            eps_range = stage.eps_db_range;
            params.eps_raw = eps_raw_from_db(current, eps_range[0], eps_range[1]);
        }
        let mut adam = Adam::new(stage.learning_rate);
        for step in 0..stage.steps {
            let mut rng = derive(seed, &[stage_idx as u64, step as u64]);
            let batch = TrainingBatch::draw(
                frame.n,
                stage.batch_size,
                constellation,
                stage.ebn0_db_range,
                &mut rng,
            )?;
            let inputs = ObjectiveInputs {
                channel: &c,
                batch: &batch,
                constellation,
                eps_db_range: eps_range,
                weighting: cfg.weighting,
            };
            let mut tape = Tape::new();
            let tensors = params.to_tensors();
            let vars: Vec<Var> = tensors.into_iter().map(|t| tape.param(t)).collect();
            let obj = match objective(&mut tape, &vars, &inputs) {
                Ok(o) => o,
                Err(e @ (Error::Domain(_) | Error::Degenerate(_))) => {
                    return Err(Error::NonFinite {
                        step: global,
                        dump: format!("{e}; {}", dump(global, stage_no, &params, [f64::NAN; 4])),
                    })
                }
                Err(e) => return Err(e),
            };
            let values = [
                tape.scalar(obj.r),
                tape.scalar(obj.p),
                tape.scalar(obj.theta),
                tape.scalar(obj.total),
            ];
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    step: global,
                    dump: dump(global, stage_no, &params, values),
                });
            }
            let grads = tape.backward(obj.total)?;
            let grads: Vec<ComplexTensor> = vars
                .iter()
                .map(|&v| {
                    grads
                        .get(v)
                        .cloned()
                        .unwrap_or_else(|| ComplexTensor::zeros(tape.value(v).rows(), tape.value(v).cols()))
                })
                .collect();
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    step: global,
                    dump: format!("non-finite gradient; {}", dump(global, stage_no, &params, values)),
                });
            }

            trace.push(LossBreakdown {
                step: global,
                stage: stage_no,
                r: values[0],
                p: values[1],
                theta: values[2],
                total: values[3],
                eps_db: values[2],
                sigma: params.sigma,
                trace_qqh: tape.value(obj.q_norm).frobenius_sq(),
                papr_db_batch: column_papr_stats(tape.value(obj.bodies))?,
            });

            let mut eps = ComplexTensor::scalar(params.eps_raw);
            let mut sig: Vec<ComplexTensor> = params.sigma.iter().map(|&s| ComplexTensor::scalar(s)).collect();
            {
                let [s0, s1, s2] = &mut sig[..] else { unreachable!() };
                adam.step(&mut [&mut params.q_raw, &mut params.q, &mut eps, s0, s1, s2], &grads)?;
            }
            // the loss ignores the scale of Q_raw; pin it so Adam's step size stays meaningful
            params.q_raw = normalize_power(&params.q_raw)?.into_matrix();
            params.eps_raw = eps.re[0];
            for (dst, src) in params.sigma.iter_mut().zip(&sig) {
                *dst = src.re[0].clamp(-SIGMA_LIMIT, SIGMA_LIMIT);
            }
            global += 1;
        }
    }

    let waveform = params.waveform()?;
    Ok(OptimResult {
        detector: params.detector(),
        eps_db: eps_db_from_raw(params.eps_raw, eps_range[0], eps_range[1]),
        waveform,
        params,
        trace,
    })
}

/// OFDM-equivalent learned state (no perturbation) for `h`, useful as a
/// reference point.
pub fn ofdm_start(h: &ChannelRealization, frame: &FrameConfig, constellation: &Constellation, cfg: &OptimConfig) -> Result<TrainableParams> {
    let cfg = OptimConfig {
        init_perturbation: 0.0,
        ..*cfg
    };
    TrainableParams::init(h, frame, constellation, &cfg, 0)
}

/// Transmit bodies for a flat list of symbols under `waveform`.
pub fn bodies(waveform: &WaveformMatrix, symbols: &[Complex64]) -> Result<Vec<Vec<Complex64>>> {
    let n = waveform.n();
    if !symbols.len().is_multiple_of(n) {
        return Err(Error::shape(
            "bodies",
            format!("{} symbols is not a multiple of N = {n}", symbols.len()),
        ));
    }
    symbols.chunks(n).map(|b| waveform.matrix().apply(b)).collect()
}

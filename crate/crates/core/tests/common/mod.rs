//! Oracles shared by the integration test targets.
#![allow(dead_code)]

use flexwave::channel::{add_awgn, apply_channel, noise_from_ebn0, ChannelRealization};
use flexwave::metrics::{ber, BerStats};
use flexwave::modem::{map_bits, slice_bits, BitBlock, Constellation};
use flexwave::numerics::{check_gradients, ComplexTensor};
use flexwave::optimizer::{objective, ObjectiveInputs, OptimConfig, TrainableParams, TrainingBatch, Weighting};
use flexwave::rng::{complex_gaussian, derive};
use flexwave::transceiver::{
    circulant, detect, effective_channel, matched_filter, modulate, ofdm_reference, FrameConfig, WaveformMatrix,
};
use num_complex::Complex64;
use rand::Rng;
use statrs::function::erf::erfc;

pub fn q_func(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Uncoded Gray 16-QAM bit error rate on AWGN.
pub fn qam16_ber(ebn0_db: f64) -> f64 {
    let a = (0.8 * 10f64.powf(ebn0_db / 10.0)).sqrt();
    (3.0 * q_func(a) + 2.0 * q_func(3.0 * a) - q_func(5.0 * a)) / 4.0
}

pub fn within_3_sigma(stats: &BerStats, p: f64) -> bool {
    let sigma = (p * (1.0 - p) / stats.bits_total as f64).sqrt();
    (stats.ber() - p).abs() <= 3.0 * sigma
}

pub fn random_q<R: Rng>(n: usize, rng: &mut R) -> WaveformMatrix {
    let v: Vec<Complex64> = (0..n * n).map(|_| complex_gaussian(rng, 1.0)).collect();
    WaveformMatrix::new(ComplexTensor::from_complex(n, n, &v).unwrap()).unwrap()
}

/// Largest relative deviation between the noiseless chain and `Λ x` over
/// `draws` random (Q, h, x) at block size `n`.
pub fn chain_error(n: usize, draws: u64) -> f64 {
    let c = Constellation::square_qam(4).unwrap();
    let frame = FrameConfig::new(n, n / 2, 1).unwrap();
    let mut worst = 0.0f64;
    for draw in 0..draws {
        let mut rng = derive(n as u64, &[draw]);
        let q = random_q(n, &mut rng);
        let taps_len = rng.random_range(1..=frame.cp_len + 1);
        let taps: Vec<Complex64> = (0..taps_len).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
        let h = ChannelRealization::from_taps(taps);
        let x = map_bits(&BitBlock::random(n, 4, &mut rng), &c).unwrap();
        let r = matched_filter(&apply_channel(&modulate(&q, &x, &frame).unwrap(), &h), &q, &frame).unwrap();
        let expect = effective_channel(&q, &h, &frame).unwrap().apply(&x).unwrap();
        let scale = expect.iter().map(|v| v.norm()).fold(1.0, f64::max);
        for (a, b) in r.iter().zip(&expect) {
            worst = worst.max((a - b).norm() / scale);
        }
    }
    worst
}

/// BER of the OFDM reference on the identity channel.
pub fn ofdm_awgn_ber(ebn0_db: f64, bits_wanted: u64, seed: u64) -> BerStats {
    let c = Constellation::square_qam(4).unwrap();
    let frame = FrameConfig::new(32, 8, 250).unwrap();
    let h = ChannelRealization::identity();
    let n0 = noise_from_ebn0(ebn0_db, 4, 1.0).unwrap().n0;
    let (q, taps) = ofdm_reference(&frame, &h, n0);
    let mut stats = BerStats::default();
    let mut k = 0u64;
    while stats.bits_total < bits_wanted {
        let mut rng = derive(seed, &[k]);
        let bits = BitBlock::random(frame.symbols_per_frame(), 4, &mut rng);
        let x = map_bits(&bits, &c).unwrap();
        let y = add_awgn(&apply_channel(&modulate(&q, &x, &frame).unwrap(), &h), n0, &mut rng).unwrap();
        let hat = slice_bits(&detect(&matched_filter(&y, &q, &frame).unwrap(), &taps).unwrap(), &c);
        stats = stats.merge(ber(&bits, &hat).unwrap());
        k += 1;
    }
    stats
}

/// Finite-difference error of the full training objective on a random
/// instance with block size `n`.
pub fn objective_gradient_error(n: usize, seed: u64, weighting: Weighting) -> f64 {
    let mut rng = derive(seed, &[]);
    let c = Constellation::square_qam(4).unwrap();
    let frame = FrameConfig::new(n, n / 4, 1).unwrap();
    let taps: Vec<_> = (0..=frame.cp_len).map(|_| complex_gaussian(&mut rng, 1.0 / (frame.cp_len + 1) as f64)).collect();
    let h = ChannelRealization::from_taps(taps);
    let cfg = OptimConfig {
        init_perturbation: 0.1,
        ..OptimConfig::default()
    };
    let mut params = TrainableParams::init(&h, &frame, &c, &cfg, seed).unwrap();
    params.eps_raw = rng.random_range(-1.5..1.5);
    for s in params.sigma.iter_mut() {
        *s = rng.random_range(-1.0..1.0);
    }
    let batch = TrainingBatch::draw(n, 4, &c, [5.0, 15.0], &mut rng).unwrap();
    let cm = circulant(&h.taps, n).unwrap();
    let inputs = ObjectiveInputs {
        channel: &cm,
        batch: &batch,
        constellation: &c,
        eps_db_range: [2.0, 8.0],
        weighting,
    };
    let tensors: Vec<ComplexTensor> = params.to_tensors();
    check_gradients(|t, v| Ok(objective(t, v, &inputs)?.total), &tensors, 1e-6).unwrap()
}

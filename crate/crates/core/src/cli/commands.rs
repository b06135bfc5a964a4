//! Experiment drivers behind the CLI subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::manifest::{FileRecord, RunManifest};
use crate::channel::{add_awgn, apply_channel, noise_from_ebn0, sample_channel, ChannelRealization};
use crate::error::{Error, Result};
use crate::metrics::{
    ccdf, frequency_concentration, papr, time_concentration, unitary_dft, BerPoint, BerStats, CcdfCurve,
    PaprSamples,
};
use crate::modem::{map_bits, slice_bits, BitBlock, Constellation};
use crate::numerics::ComplexTensor;
use crate::optimizer::{optimize_for_channel, trace_csv, OptimResult};
use crate::rng::derive;
use crate::transceiver::{
    detect, matched_filter, modulate, ofdm_reference, scfde_bodies, scfde_reference, DetectorTaps, FrameConfig,
    WaveformMatrix,
};

// stream labels keep the random draws of different experiments apart
const CHANNEL: u64 = 1;
const OPTIM: u64 = 2;
const CCDF: u64 = 3;
const BER_CHANNEL: u64 = 4;
const BER_BITS: u64 = 5;
const BER_NOISE: u64 = 6;

/// Blocks per independently seeded CCDF work item.
const CCDF_CHUNK: usize = 500;
const CONCENTRATION_TOP: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Learned,
    Ofdm,
    ScFde,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Learned, Scheme::Ofdm, Scheme::ScFde];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Learned => "learned",
            Scheme::Ofdm => "ofdm",
            Scheme::ScFde => "scfde",
        }
    }
}

/// Short decimal form of a delay spread for file names (`10`, `33.5`).
pub fn ds_label(rms_ds_ns: f64) -> String {
    format!("{rms_ds_ns}")
}

/// Files produced by a command, written under one directory and listed in
/// its manifest.
#[derive(Debug)]
pub struct OutputSet {
    dir: PathBuf,
    manifest: RunManifest,
}

impl OutputSet {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(&cfg.out_dir)?;
        let mut manifest = RunManifest::new(command, cfg);
        let profile = Path::new(&cfg.channel.profile);
        if profile.is_file() {
            let data = std::fs::read(profile)?;
            manifest.inputs.push(FileRecord::of_bytes(cfg.channel.profile.clone(), &data));
        }
        Ok(Self {
            dir: cfg.out_dir.clone(),
            manifest,
        })
    }

    pub fn write(&mut self, rel: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, contents)?;
        self.manifest.outputs.push(FileRecord::of_bytes(rel, contents.as_bytes()));
        Ok(())
    }

    /// Write `manifest.json` and return the manifest.
    pub fn finish(self) -> Result<RunManifest> {
        std::fs::write(self.dir.join("manifest.json"), self.manifest.to_json()?)?;
        Ok(self.manifest)
    }
}

/// Run `f` on a pool of `workers` threads (0: all cores).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

fn sub_seed(seed: u64, labels: &[u64]) -> u64 {
    derive(seed, labels).random()
}

/// Channel realization `index` of the per-spread experiments.
pub fn spread_channel(cfg: &ExperimentConfig, index: usize, rms_ds_ns: f64) -> Result<ChannelRealization> {
    let profile = cfg.profile()?;
    sample_channel(
        &profile,
        rms_ds_ns * 1e-9,
        cfg.frame.sample_rate_hz,
        cfg.frame.cp_len,
        cfg.channel.normalize,
        &mut derive(cfg.seed, &[CHANNEL, index as u64]),
    )
}

/// Learned waveform for spread `index`.
pub fn optimize_spread(cfg: &ExperimentConfig, index: usize, rms_ds_ns: f64) -> Result<(ChannelRealization, OptimResult)> {
    let h = spread_channel(cfg, index, rms_ds_ns)?;
    let frame = FrameConfig { blocks: 1, ..cfg.frame };
    let res = optimize_for_channel(
        &h,
        &frame,
        &cfg.constellation()?,
        &cfg.optim,
        sub_seed(cfg.seed, &[OPTIM, index as u64]),
    )?;
    Ok((h, res))
}

fn with_cp(body: &[Complex64], cp: usize) -> Vec<Complex64> {
    let mut out = body[body.len() - cp..].to_vec();
    out.extend_from_slice(body);
    out
}

/// PAPR samples of `scheme` over `blocks` random blocks. Symbols come from
/// the stream `(seed, stream...)`, chunk by chunk, so the result does not
/// depend on the worker count.
pub fn papr_samples(
    cfg: &ExperimentConfig,
    scheme: Scheme,
    waveform: Option<&WaveformMatrix>,
    blocks: usize,
    stream: &[u64],
) -> Result<PaprSamples> {
    let c = cfg.constellation()?;
    let n = cfg.frame.n;
    let sc = cfg.eval.scfde();
    let idft = WaveformMatrix::idft(n);
    let q = match scheme {
        Scheme::Learned => Some(waveform.ok_or_else(|| Error::Contract("learned PAPR needs a waveform".into()))?),
        Scheme::Ofdm => Some(&idft),
        Scheme::ScFde => None,
    };
    let chunks = blocks.div_ceil(CCDF_CHUNK);
    let parts: Vec<Result<PaprSamples>> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let count = CCDF_CHUNK.min(blocks - k * CCDF_CHUNK);
            let mut labels = stream.to_vec();
            labels.push(k as u64);
            let mut rng = derive(cfg.seed, &labels);
            let bits = BitBlock::random(count * n, c.bits_per_symbol(), &mut rng);
            let x = map_bits(&bits, &c)?;
            let (bodies, cp) = match q {
                Some(q) => (
                    x.chunks(n).map(|b| q.matrix().apply(b)).collect::<Result<Vec<_>>>()?,
                    cfg.frame.cp_len,
                ),
                None => (
                    scfde_bodies(&x, &FrameConfig { blocks: count, ..cfg.frame }, &sc)?,
                    cfg.frame.cp_len * sc.oversampling,
                ),
            };
            let mut out = PaprSamples::new();
            for b in &bodies {
                if cfg.eval.include_cp {
                    out.push_block(&with_cp(b, cp))?;
                } else {
                    out.push_block(b)?;
                }
            }
            Ok(out)
        })
        .collect();
    let mut all = PaprSamples::new();
    for p in parts {
        all.merge(p?);
    }
    Ok(all)
}

#[derive(Debug, Clone)]
pub struct SpreadResult {
    pub rms_ds_ns: f64,
    pub channel: ChannelRealization,
    pub optim: OptimResult,
    pub curves: Vec<(Scheme, CcdfCurve)>,
    pub time_concentration: f64,
    pub frequency_concentration: f64,
}

impl SpreadResult {
    pub fn curve(&self, scheme: Scheme) -> &CcdfCurve {
        &self.curves.iter().find(|(s, _)| *s == scheme).expect("every scheme measured").1
    }
}

/// Optimize at every configured delay spread and measure CCDFs of all three
/// schemes.
pub fn papr_ccdf(cfg: &ExperimentConfig) -> Result<Vec<SpreadResult>> {
    let thresholds = cfg.eval.thresholds();
    let spreads: Vec<(usize, f64)> = cfg.channel.rms_ds_ns.iter().copied().enumerate().collect();
    let optimized: Vec<Result<(ChannelRealization, OptimResult)>> = spreads
        .par_iter()
        .map(|&(i, ds)| optimize_spread(cfg, i, ds))
        .collect();
    let mut out = Vec::with_capacity(spreads.len());
    for ((i, ds), opt) in spreads.into_iter().zip(optimized) {
        let (channel, optim) = opt?;
        let mut curves = Vec::new();
        for (s_idx, scheme) in Scheme::ALL.into_iter().enumerate() {
            let samples = papr_samples(
                cfg,
                scheme,
                Some(&optim.waveform),
                cfg.eval.ccdf_blocks,
                &[CCDF, i as u64, s_idx as u64],
            )?;
            curves.push((scheme, ccdf(&samples, &thresholds)?));
        }
        out.push(SpreadResult {
            rms_ds_ns: ds,
            channel,
            time_concentration: time_concentration(optim.waveform.matrix(), CONCENTRATION_TOP),
            frequency_concentration: frequency_concentration(optim.waveform.matrix(), CONCENTRATION_TOP),
            optim,
            curves,
        });
    }
    Ok(out)
}

fn fmt_level(curve: &CcdfCurve, prob: f64) -> String {
    curve.crossing_db(prob).map_or_else(|| "nan".into(), |v| format!("{v:.4}"))
}

pub fn write_papr_ccdf(results: &[SpreadResult], out: &mut OutputSet) -> Result<()> {
    let mut summary = String::from(
        "scheme,rms_ds_ns,papr_db_at_1e-1,papr_db_at_1e-2,eps_db,time_concentration,frequency_concentration\n",
    );
    for r in results {
        for (scheme, curve) in &r.curves {
            out.write(&format!("ccdf_{}_{}ns.csv", scheme.name(), ds_label(r.rms_ds_ns)), &curve.to_csv())?;
            let extra = if *scheme == Scheme::Learned {
                format!(
                    "{:.4},{:.6},{:.6}",
                    r.optim.eps_db, r.time_concentration, r.frequency_concentration
                )
            } else {
                ",,".into()
            };
            writeln!(
                summary,
                "{},{},{},{},{extra}",
                scheme.name(),
                ds_label(r.rms_ds_ns),
                fmt_level(curve, 0.1),
                fmt_level(curve, 0.01)
            )
            .expect("write to string");
        }
    }
    out.write("ccdf_summary.csv", &summary)
}

#[allow(clippy::too_many_arguments)]
fn learned_link_ber<R: Rng + ?Sized>(
    bits: &BitBlock,
    c: &Constellation,
    frame: &FrameConfig,
    q: &WaveformMatrix,
    taps: &DetectorTaps,
    h: &ChannelRealization,
    n0: f64,
    rng: &mut R,
) -> Result<BitBlock> {
    let x = map_bits(bits, c)?;
    let y = add_awgn(&apply_channel(&modulate(q, &x, frame)?, h), n0, rng)?;
    let r = matched_filter(&y, q, frame)?;
    Ok(slice_bits(&detect(&r, taps)?, c))
}

/// Bit errors of every scheme over one channel at every Eb/N0 point. Bits and
/// noise streams are shared across schemes, so comparisons are paired.
pub fn ber_one_channel(
    cfg: &ExperimentConfig,
    index: usize,
    h: &ChannelRealization,
    learned: &OptimResult,
) -> Result<Vec<[BerStats; 3]>> {
    let c = cfg.constellation()?;
    let m = c.bits_per_symbol();
    let frame = FrameConfig {
        blocks: cfg.eval.ber_blocks_per_channel,
        ..cfg.frame
    };
    let sc = cfg.eval.scfde();
    let mut out = Vec::with_capacity(cfg.noise.ebn0_db.len());
    for (j, &ebn0) in cfg.noise.ebn0_db.iter().enumerate() {
        let n0 = noise_from_ebn0(ebn0, m, 1.0)?.n0;
        let bits = BitBlock::random(frame.symbols_per_frame(), m, &mut derive(cfg.seed, &[BER_BITS, index as u64, j as u64]));
        let noise = |s: u64| derive(cfg.seed, &[BER_NOISE, index as u64, j as u64, s]);
        let mut stats = [BerStats::default(); 3];
        let hat = learned_link_ber(&bits, &c, &frame, &learned.waveform, &learned.detector, h, n0, &mut noise(0))?;
        stats[0] = crate::metrics::ber(&bits, &hat)?;
        let (qo, to) = ofdm_reference(&frame, h, n0);
        let hat = learned_link_ber(&bits, &c, &frame, &qo, &to, h, n0, &mut noise(0))?;
        stats[1] = crate::metrics::ber(&bits, &hat)?;
        let sc_out = scfde_reference(&bits, &c, &frame, &sc, h, n0, &mut noise(2))?;
        stats[2] = crate::metrics::ber(&bits, &sc_out.bits_hat)?;
        out.push(stats);
    }
    Ok(out)
}

/// Channel `index` of the BER mixture: delay spread uniform over the
/// configured range.
pub fn mixture_channel(cfg: &ExperimentConfig, index: usize) -> Result<(f64, ChannelRealization)> {
    let mut rng = derive(cfg.seed, &[BER_CHANNEL, index as u64]);
    let [lo, hi] = cfg.channel.rms_ds_range_ns;
    let ds = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let h = sample_channel(
        &cfg.profile()?,
        ds * 1e-9,
        cfg.frame.sample_rate_hz,
        cfg.frame.cp_len,
        cfg.channel.normalize,
        &mut rng,
    )?;
    Ok((ds, h))
}

#[derive(Debug, Clone)]
pub struct BerSweep {
    /// One curve per scheme, in [`Scheme::ALL`] order.
    pub curves: Vec<(Scheme, Vec<BerPoint>)>,
}

impl BerSweep {
    pub fn curve(&self, scheme: Scheme) -> &[BerPoint] {
        &self.curves.iter().find(|(s, _)| *s == scheme).expect("every scheme swept").1
    }
}

/// Optimize a learned waveform per mixture channel and sweep all schemes.
pub fn ber_sweep(cfg: &ExperimentConfig) -> Result<BerSweep> {
    let frame = FrameConfig { blocks: 1, ..cfg.frame };
    let c = cfg.constellation()?;
    let per_channel: Vec<Result<Vec<[BerStats; 3]>>> = (0..cfg.eval.ber_channels)
        .into_par_iter()
        .map(|i| {
            let (_, h) = mixture_channel(cfg, i)?;
            let learned = optimize_for_channel(&h, &frame, &c, &cfg.optim, sub_seed(cfg.seed, &[OPTIM, 1 << 32 | i as u64]))?;
            ber_one_channel(cfg, i, &h, &learned)
        })
        .collect();
    let points = cfg.noise.ebn0_db.len();
    let mut totals = vec![[BerStats::default(); 3]; points];
    for ch in per_channel {
        for (acc, s) in totals.iter_mut().zip(ch?) {
            for k in 0..3 {
                acc[k] = acc[k].merge(s[k]);
            }
        }
    }
    let curves = Scheme::ALL
        .into_iter()
        .enumerate()
        .map(|(k, scheme)| {
            let pts = cfg
                .noise
                .ebn0_db
                .iter()
                .zip(&totals)
                .map(|(&ebn0_db, t)| BerPoint {
                    ebn0_db,
                    stats: t[k],
                    channels_averaged: cfg.eval.ber_channels,
                })
                .collect();
            (scheme, pts)
        })
        .collect();
    Ok(BerSweep { curves })
}

pub fn write_ber_sweep(sweep: &BerSweep, out: &mut OutputSet) -> Result<()> {
    for (scheme, pts) in &sweep.curves {
        out.write(&format!("ber_{}.csv", scheme.name()), &crate::metrics::ber_csv(pts))?;
    }
    Ok(())
}

/// `row,col,re,im` listing of a matrix.
pub fn matrix_csv(q: &ComplexTensor) -> String {
    let mut out = String::from("row,col,re,im\n");
    for r in 0..q.rows() {
        for c in 0..q.cols() {
            let v = q.get(r, c);
            writeln!(out, "{r},{c},{:.17e},{:.17e}", v.re, v.im).expect("write to string");
        }
    }
    out
}

/// Inverse of [`matrix_csv`] for a square matrix.
pub fn parse_matrix_csv(text: &str) -> Result<ComplexTensor> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Config(format!("matrix CSV line {}: expected row,col,re,im, got {line:?}", i + 1));
        if f.len() != 4 {
            return Err(bad());
        }
        let r: usize = f[0].trim().parse().map_err(|_| bad())?;
        let c: usize = f[1].trim().parse().map_err(|_| bad())?;
        let re: f64 = f[2].trim().parse().map_err(|_| bad())?;
        let im: f64 = f[3].trim().parse().map_err(|_| bad())?;
        entries.push((r, c, Complex64::new(re, im)));
    }
    let n = entries.iter().map(|e| e.0.max(e.1) + 1).max().unwrap_or(0);
    if n == 0 || entries.len() != n * n {
        return Err(Error::Config(format!(
            "matrix CSV must list all {n}x{n} entries, found {}",
            entries.len()
        )));
    }
    let mut q = ComplexTensor::zeros(n, n);
    for (r, c, v) in entries {
        q.set(r, c, v);
    }
    Ok(q)
}

fn taps_csv(taps: &DetectorTaps) -> String {
    let mut out = String::from("index,re,im\n");
    for (i, v) in taps.taps.iter().enumerate() {
        writeln!(out, "{i},{:.17e},{:.17e}", v.re, v.im).expect("write to string");
    }
    out
}

/// Time-domain samples and unitary DFT of the first `columns` columns.
pub fn waveform_csvs(q: &ComplexTensor, columns: usize) -> (String, String) {
    let mut time = String::from("column,sample,re,im,power\n");
    let mut freq = String::from("column,bin,re,im,power\n");
    for k in 0..columns.min(q.cols()) {
        let col = q.column_values(k);
        for (i, v) in col.iter().enumerate() {
            writeln!(time, "{k},{i},{:.17e},{:.17e},{:.17e}", v.re, v.im, v.norm_sqr()).expect("write to string");
        }
        for (i, v) in unitary_dft(&col).iter().enumerate() {
            writeln!(freq, "{k},{i},{:.17e},{:.17e},{:.17e}", v.re, v.im, v.norm_sqr()).expect("write to string");
        }
    }
    (time, freq)
}

pub fn write_optimize(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<Vec<OptimResult>> {
    let spreads: Vec<(usize, f64)> = cfg.channel.rms_ds_ns.iter().copied().enumerate().collect();
    let results: Vec<Result<(ChannelRealization, OptimResult)>> =
        spreads.par_iter().map(|&(i, ds)| optimize_spread(cfg, i, ds)).collect();
    let mut all = Vec::new();
    for ((_, ds), r) in spreads.into_iter().zip(results) {
        let (_, res) = r?;
        let dir = format!("rms_{}ns", ds_label(ds));
        out.write(&format!("{dir}/qmat.csv"), &matrix_csv(res.waveform.matrix()))?;
        out.write(&format!("{dir}/qtaps.csv"), &taps_csv(&res.detector))?;
        out.write(&format!("{dir}/train_trace.csv"), &trace_csv(&res.trace))?;
        all.push(res);
    }
    Ok(all)
}

pub fn write_waveform_report(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<()> {
    let spreads: Vec<(usize, f64)> = cfg.channel.rms_ds_ns.iter().copied().enumerate().collect();
    let results: Vec<Result<(ChannelRealization, OptimResult)>> =
        spreads.par_iter().map(|&(i, ds)| optimize_spread(cfg, i, ds)).collect();
    let mut summary = String::from("rms_ds_ns,time_concentration,frequency_concentration,eps_db,mean_column_papr_db\n");
    for ((_, ds), r) in spreads.into_iter().zip(results) {
        let (_, res) = r?;
        let q = res.waveform.matrix();
        let (time, freq) = waveform_csvs(q, cfg.eval.report_columns);
        let label = ds_label(ds);
        out.write(&format!("waveform_{label}ns_time.csv"), &time)?;
        out.write(&format!("waveform_{label}ns_freq.csv"), &freq)?;
        let col_papr: Vec<f64> = (0..q.cols())
            .map(|k| papr(&q.column_values(k)).map(crate::metrics::to_db))
            .collect::<Result<_>>()?;
        writeln!(
            summary,
            "{label},{:.6},{:.6},{:.4},{:.4}",
            time_concentration(q, CONCENTRATION_TOP),
            frequency_concentration(q, CONCENTRATION_TOP),
            res.eps_db,
            col_papr.iter().sum::<f64>() / col_papr.len() as f64
        )
        .expect("write to string");
    }
    out.write("waveform_report.csv", &summary)
}

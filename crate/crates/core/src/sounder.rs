//! Correlation-based CIR extraction.
//!
//! Each probe period of a capture is circularly correlated with the known
//! probe (FFT), the per-period correlations are coherently averaged, and
//! paths are detected one at a time above `noise floor + margin`. Every
//! detection starts from a 3-point parabolic fit on the correlation
//! magnitude; delays are then refined against the band-limited path response
//! and all complex gains are re-solved jointly by least squares, so
//! neighbouring paths and fractional delays do not bias each other.

use std::f64::consts::LN_2;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{delay_kernel, power_db, CircularCorrelator, KERNEL_HALF_SPAN};
use crate::error::{Error, Result};
use crate::iq;
use crate::trajectory::PoseSample;
use crate::waveform::ProbeWaveform;

#[derive(Debug, Clone, PartialEq)]
pub struct SounderCapture {
    pub iq: Vec<Complex64>,
    pub sample_rate_hz: f64,
    pub carrier_hz: f64,
    pub timestamp_s: f64,
    /// `(tx_pose, rx_pose)` when known.
    pub pose_ref: Option<(PoseSample, PoseSample)>,
}

impl SounderCapture {
    pub fn from_iq(iq: Vec<Complex64>, sample_rate_hz: f64, carrier_hz: f64) -> Self {
        Self {
            iq,
            sample_rate_hz,
            carrier_hz,
            timestamp_s: 0.0,
            pose_ref: None,
        }
    }

    /// Scales every sample by a real gain.
    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            iq: self.iq.iter().map(|s| s * gain).collect(),
            ..self.clone()
        }
    }

    /// Circularly rotates the samples, i.e. delays a periodic capture by
    /// `k` whole samples.
    pub fn rotated(&self, k: usize) -> Self {
        let mut iq = self.iq.clone();
        let n = iq.len().max(1);
        iq.rotate_right(k % n);
        Self { iq, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirTap {
    /// Delay relative to the strongest tap.
    pub delay_s: f64,
    /// Power relative to the strongest tap.
    pub power_db: f64,
    /// Absolute complex gain (unit-power probe reference).
    pub gain: Complex64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedCir {
    /// Sorted by relative delay.
    pub taps: Vec<CirTap>,
    /// Estimated noise power per correlation lag, in dB relative to the
    /// strongest tap (or to the correlation peak when nothing is detected).
    pub noise_floor_db: f64,
    /// Detection threshold in the same reference as `noise_floor_db`.
    pub detection_threshold_db: f64,
    /// Absolute position of the strongest tap within the probe period, in
    /// samples. `None` when no tap was detected.
    pub reference_delay_samples: Option<f64>,
}

impl ExtractedCir {
    /// `(linear power, delay)` pairs for delay-spread computation.
    pub fn power_delay_profile(&self) -> Vec<(f64, f64)> {
        self.taps
            .iter()
            .map(|t| (t.gain.norm_sqr(), t.delay_s))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    /// Detection margin above the estimated noise floor.
    pub threshold_margin_db: f64,
    /// Hard dynamic-range limit below the strongest correlation peak; only
    /// binds for (near) noise-free captures.
    pub max_dynamic_range_db: f64,
    pub max_taps: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            threshold_margin_db: 13.0,
            max_dynamic_range_db: 100.0,
            max_taps: 16,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_margin_db.is_finite() && self.max_dynamic_range_db > 0.0) {
            return Err(Error::Parameter(
                "threshold margin must be finite and dynamic range positive".into(),
            ));
        }
        if self.max_taps == 0 {
            return Err(Error::Parameter("max_taps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean noise power estimated from the median correlation magnitude,
/// returned in dB relative to the peak magnitude squared.
///
/// For circular complex Gaussian noise `|r|` is Rayleigh with
/// `median^2 = ln(2) * E|r|^2`.
pub fn estimate_noise_floor(magnitudes: &[f64]) -> Result<f64> {
    if magnitudes.is_empty() {
        return Err(Error::Input("no correlation magnitudes".into()));
    }
    let mut sorted = magnitudes.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len().is_multiple_of(2) {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    };
    let peak = sorted[sorted.len() - 1];
    Ok(power_db(median * median / LN_2) - power_db(peak * peak))
}

/// Total received power `10 log10(sum |g_i|^2)`.
pub fn received_power_db(cir: &ExtractedCir) -> Result<f64> {
    if cir.taps.is_empty() {
        return Err(Error::Input(
            "received power is undefined for a CIR without taps".into(),
        ));
    }
    Ok(power_db(cir.taps.iter().map(|t| t.gain.norm_sqr()).sum()))
}

/// Reusable extractor bound to one probe.
pub struct Extractor {
    probe: ProbeWaveform,
    correlator: CircularCorrelator,
    config: ExtractorConfig,
}

/// Band-limited correlation response of a unit path at `delay` samples,
/// wrapped onto one period: sparse `(index, weight)` pairs.
fn path_response(delay: f64, len: usize) -> Vec<(usize, f64)> {
    if len >= 2 * KERNEL_HALF_SPAN {
        // The kernel's lags are distinct modulo `len`.
        return delay_kernel(delay)
            .map(|(lag, w)| (lag.rem_euclid(len as i64) as usize, w))
            .collect();
    }
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(2 * KERNEL_HALF_SPAN);
    for (lag, w) in delay_kernel(delay) {
        let idx = lag.rem_euclid(len as i64) as usize;
        match out.iter_mut().find(|(i, _)| *i == idx) {
            Some(entry) => entry.1 += w,
            None => out.push((idx, w)),
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct DetectedPath {
    /// Absolute delay in samples, kept in `[0, L)`.
    delay: f64,
    /// Detection position; refinement stays within one sample of it.
    anchor: f64,
    gain: Complex64,
}

impl Extractor {
    pub fn new(probe: &ProbeWaveform, config: ExtractorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            correlator: CircularCorrelator::new(probe.period()),
            probe: probe.clone(),
            config,
        })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    /// Coherent average of the per-period circular correlations.
    pub fn averaged_correlation(&self, capture: &SounderCapture) -> Result<Vec<Complex64>> {
        let len = self.probe.period_len();
        if capture.iq.len() < len {
            return Err(Error::Input(format!(
                "capture has {} samples, shorter than one {len}-sample period",
                capture.iq.len()
            )));
        }
        let fs = self.probe.sample_rate_hz();
        if (capture.sample_rate_hz - fs).abs() > 1e-9 * fs {
            return Err(Error::Input(format!(
                "capture sample rate {} Hz does not match probe rate {fs} Hz",
                capture.sample_rate_hz
            )));
        }
        let periods = (capture.iq.len() / len).min(self.probe.params().repetitions);
        let mut acc = vec![Complex64::new(0.0, 0.0); len];
        for chunk in capture.iq.chunks_exact(len).take(periods) {
            for (a, c) in acc.iter_mut().zip(self.correlator.correlate(chunk)) {
                *a += c;
            }
        }
        let scale = 1.0 / periods as f64;
        acc.iter_mut().for_each(|a| *a *= scale);
        Ok(acc)
    }

    pub fn extract(&self, capture: &SounderCapture) -> Result<ExtractedCir> {
        let corr = self.averaged_correlation(capture)?;
        let len = corr.len();
        let magnitudes: Vec<f64> = corr.iter().map(|c| c.norm()).collect();
        let peak_power = magnitudes.iter().fold(0.0_f64, |m, &x| m.max(x * x));
        let floor_rel_db = estimate_noise_floor(&magnitudes)?;
        let noise_power = peak_power * 10f64.powf(floor_rel_db / 10.0);
        let threshold_power = (noise_power * 10f64.powf(self.config.threshold_margin_db / 10.0))
            .max(peak_power * 10f64.powf(-self.config.max_dynamic_range_db / 10.0));

        let mut paths: Vec<DetectedPath> = Vec::new();
        if peak_power > 0.0 {
            let mut residual = corr.clone();
            while paths.len() < self.config.max_taps {
                let (m, power) = residual.iter().map(|c| c.norm_sqr()).enumerate().fold(
                    (0, -1.0),
                    |best, (i, p)| if p > best.1 { (i, p) } else { best },
                );
                if power <= threshold_power {
                    break;
                }
                let offset = parabolic_offset(
                    residual[(m + len - 1) % len].norm(),
                    residual[m].norm(),
                    residual[(m + 1) % len].norm(),
                );
                let delay = (m as f64 + offset).rem_euclid(len as f64);
                paths.push(DetectedPath {
                    delay,
                    anchor: delay,
                    gain: residual[m],
                });
                refine(&corr, &mut paths);
                // Drop anything the joint fit pushed below threshold.
                let before = paths.len();
                paths.retain(|p| p.gain.norm_sqr() > threshold_power);
                if paths.len() != before {
                    refine(&corr, &mut paths);
                }
                residual = residual_of(&corr, &paths);
                if paths.len() < before {
                    // The newest detection did not survive; stop rather than
                    // re-detecting the same peak.
                    break;
                }
            }
        }

        Ok(self.summarize(paths, noise_power, threshold_power, peak_power))
    }

    fn summarize(
        &self,
        paths: Vec<DetectedPath>,
        noise_power: f64,
        threshold_power: f64,
        peak_power: f64,
    ) -> ExtractedCir {
        let len = self.probe.period_len() as f64;
        let fs = self.probe.sample_rate_hz();
        let strongest = paths
            .iter()
            .copied()
            .fold(None::<DetectedPath>, |best, p| match best {
                Some(b) if b.gain.norm_sqr() >= p.gain.norm_sqr() => Some(b),
                _ => Some(p),
            });
        let reference_power = strongest.map_or(peak_power, |s| s.gain.norm_sqr());
        let relative = |p: f64| power_db(p) - power_db(reference_power);
        let mut taps: Vec<CirTap> = match strongest {
            Some(s) => paths
                .iter()
                .map(|p| {
                    let rel = wrap_half(p.delay - s.delay, len);
                    CirTap {
                        delay_s: rel / fs,
                        power_db: relative(p.gain.norm_sqr()),
                        gain: p.gain,
                    }
                })
                .collect(),
            None => Vec::new(),
        };
        taps.sort_by(|a, b| a.delay_s.total_cmp(&b.delay_s));
        ExtractedCir {
            taps,
            noise_floor_db: relative(noise_power),
            detection_threshold_db: relative(threshold_power),
            reference_delay_samples: strongest.map(|s| wrap_half(s.delay, len)),
        }
    }

    /// Extracts a batch of captures in parallel, preserving order.
    pub fn extract_batch(&self, captures: &[SounderCapture]) -> Result<Vec<ExtractedCir>> {
        captures.par_iter().map(|c| self.extract(c)).collect()
    }
}

/// Extracts a CIR with the default extractor configuration.
pub fn extract_cir(capture: &SounderCapture, probe: &ProbeWaveform) -> Result<ExtractedCir> {
    Extractor::new(probe, ExtractorConfig::default())?.extract(capture)
}

/// Vertex offset of the parabola through three equally spaced samples.
/// Wraps a lag into `[-len/2, len/2)`.
fn wrap_half(lag: f64, len: f64) -> f64 {
    let mut x = lag.rem_euclid(len);
    if x >= len / 2.0 {
        x -= len;
    }
    x
}

pub fn parabolic_offset(left: f64, centre: f64, right: f64) -> f64 {
    let denom = left - 2.0 * centre + right;
    if denom.abs() < f64::MIN_POSITIVE {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

fn residual_of(corr: &[Complex64], paths: &[DetectedPath]) -> Vec<Complex64> {
    let mut residual = corr.to_vec();
    for p in paths {
        for (i, w) in path_response(p.delay, corr.len()) {
            residual[i] -= p.gain * w;
        }
    }
    residual
}

/// Alternating refinement: each path's delay is re-fitted against the
/// residual with the other paths removed, then all gains are solved jointly.
fn refine(corr: &[Complex64], paths: &mut Vec<DetectedPath>) {
    let len = corr.len();
    solve_gains(corr, paths);
    for _ in 0..60 {
        let mut max_shift: f64 = 0.0;
        for j in 0..paths.len() {
            let mut target = residual_of(corr, paths);
            for (i, w) in path_response(paths[j].delay, len) {
                target[i] += paths[j].gain * w;
            }
            let score = |delay: f64| {
                let response = path_response(delay.rem_euclid(len as f64), len);
                let (dot, energy) = response
                    .iter()
                    .fold((Complex64::new(0.0, 0.0), 0.0), |(d, e), &(i, w)| {
                        (d + target[i] * w, e + w * w)
                    });
                dot.norm_sqr() / energy
            };
            let centre = unwrap_near(paths[j].delay, paths[j].anchor, len as f64);
            let lo = (centre - 0.5).max(paths[j].anchor - 1.0);
            let hi = (centre + 0.5).min(paths[j].anchor + 1.0);
            let best = golden_section_max(score, lo, hi, 1e-7);
            max_shift = max_shift.max((best - centre).abs());
            paths[j].delay = best.rem_euclid(len as f64);
            solve_gains(corr, paths);
        }
        if max_shift < 1e-6 {
            break;
        }
    }
}

/// Representative of `x (mod len)` closest to `anchor`.
fn unwrap_near(x: f64, anchor: f64, len: f64) -> f64 {
    x + ((anchor - x) / len).round() * len
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = f(a);
        }
    }
    0.5 * (lo + hi)
}

/// Least-squares complex gains for fixed delays. The path responses are
/// real, so the normal matrix is real symmetric.
fn solve_gains(corr: &[Complex64], paths: &mut Vec<DetectedPath>) {
    loop {
        let n = paths.len();
        if n == 0 {
            return;
        }
        let responses: Vec<Vec<(usize, f64)>> = paths
            .iter()
            .map(|p| path_response(p.delay, corr.len()))
            .collect();
        let mut dense = vec![vec![0.0; corr.len()]; n];
        for (row, resp) in dense.iter_mut().zip(&responses) {
            for &(i, w) in resp {
                row[i] += w;
            }
        }
        let gram = DMatrix::from_fn(n, n, |a, b| {
            responses[a]
                .iter()
                .map(|&(i, w)| w * dense[b][i])
                .sum::<f64>()
        });
        let rhs_re = DVector::from_fn(n, |a, _| {
            responses[a]
                .iter()
                .map(|&(i, w)| w * corr[i].re)
                .sum::<f64>()
        });
        let rhs_im = DVector::from_fn(n, |a, _| {
            responses[a]
                .iter()
                .map(|&(i, w)| w * corr[i].im)
                .sum::<f64>()
        });
        let well_conditioned = {
            let eig = gram.clone().symmetric_eigenvalues();
            let max = eig.iter().fold(0.0_f64, |m, &x| m.max(x.abs()));
            let min = eig.iter().fold(f64::INFINITY, |m, &x| m.min(x.abs()));
            min > 1e-9 * max
        };
        if let (true, Some(chol)) = (well_conditioned, gram.clone().cholesky()) {
            let re = chol.solve(&rhs_re);
            let im = chol.solve(&rhs_im);
            for (k, p) in paths.iter_mut().enumerate() {
                p.gain = Complex64::new(re[k], im[k]);
            }
            return;
        }
        // Two paths collapsed onto each other: keep the older detection.
        paths.pop();
    }
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureSidecar {
    pub sample_rate_hz: f64,
    pub carrier_hz: f64,
    pub timestamp_s: f64,
    pub tx_pose: Option<PoseSample>,
    pub rx_pose: Option<PoseSample>,
}

/// Writes `<stem>.iq` (interleaved little-endian f32 I/Q) and `<stem>.json`.
pub fn write_capture(stem: &Path, capture: &SounderCapture) -> Result<()> {
    let iq_path = stem.with_extension("iq");
    let json_path = stem.with_extension("json");
    iq::write_iq_f32(&iq_path, &capture.iq)?;
    let sidecar = CaptureSidecar {
        sample_rate_hz: capture.sample_rate_hz,
        carrier_hz: capture.carrier_hz,
        timestamp_s: capture.timestamp_s,
        tx_pose: capture.pose_ref.map(|p| p.0),
        rx_pose: capture.pose_ref.map(|p| p.1),
    };
    let text = serde_json::to_string(&sidecar).expect("sidecar serializes");
    fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))
}

pub fn read_capture(stem: &Path) -> Result<SounderCapture> {
    let iq_path = stem.with_extension("iq");
    let json_path = stem.with_extension("json");
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let sidecar: CaptureSidecar =
        serde_json::from_str(&text).map_err(|e| Error::format(&json_path, e))?;
    let pose_ref = match (sidecar.tx_pose, sidecar.rx_pose) {
        (Some(tx), Some(rx)) => Some((tx, rx)),
        (None, None) => None,
        _ => {
            return Err(Error::format(
                &json_path,
                "tx_pose and rx_pose must be given together",
            ))
        }
    };
    Ok(SounderCapture {
        iq: iq::read_iq_f32(&iq_path)?,
        sample_rate_hz: sidecar.sample_rate_hz,
        carrier_hz: sidecar.carrier_hz,
        timestamp_s: sidecar.timestamp_s,
        pose_ref,
    })
}

/// One line of the CIR JSONL stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CirRecord {
    pub index: usize,
    pub timestamp_s: f64,
    pub tx_pose: Option<PoseSample>,
    pub rx_pose: Option<PoseSample>,
    pub cir: ExtractedCir,
}

impl CirRecord {
    pub fn new(index: usize, capture: &SounderCapture, cir: ExtractedCir) -> Self {
        Self {
            index,
            timestamp_s: capture.timestamp_s,
            tx_pose: capture.pose_ref.map(|p| p.0),
            rx_pose: capture.pose_ref.map(|p| p.1),
            cir,
        }
    }
}

pub fn write_cir_jsonl(path: &Path, records: &[CirRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        for r in records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn read_cir_jsonl(path: &Path) -> Result<Vec<CirRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, line)| line.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, line)| {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line)
                .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Capture file stem for snapshot `index` inside `dir`.
pub fn capture_stem(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("capture_{index:06}"))
}

/// Lists `(index, stem)` for every capture sidecar in `dir`, sorted by index.
pub fn list_captures(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let Some(index) = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.strip_prefix("capture_"))
            .and_then(|s| s.parse::<usize>().ok())
        else {
            continue;
        };
        found.push((index, path.with_extension("")));
    }
    found.sort();
    Ok(found)
}

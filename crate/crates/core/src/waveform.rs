//! Zadoff-Chu probe generation, autocorrelation analysis, and probe export.
//!
//! A probe is one base ZC period repeated `repetitions` times. For even
//! lengths sample `n` is `exp(-i*pi*root*n^2/L)`, for odd lengths
//! `exp(-i*pi*root*n*(n+1)/L)`. Both forms are periodic in `L` and have an
//! ideal periodic autocorrelation whenever `gcd(root, L) = 1`.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::CircularCorrelator;
use crate::error::{Error, Result};
use crate::iq;

/// Default probe: 2048-sample ZC, root 89, repeated four times at 56 MHz.
pub const DEFAULT_LENGTH: usize = 2048;
pub const DEFAULT_ROOT: usize = 89;
pub const DEFAULT_REPETITIONS: usize = 4;
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 56e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZcParams {
    pub length: usize,
    pub root: usize,
    pub repetitions: usize,
}

impl Default for ZcParams {
    fn default() -> Self {
        Self {
            length: DEFAULT_LENGTH,
            root: DEFAULT_ROOT,
            repetitions: DEFAULT_REPETITIONS,
        }
    }
}

impl ZcParams {
    pub fn new(length: usize, root: usize, repetitions: usize) -> Result<Self> {
        let params = Self {
            length,
            root,
            repetitions,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::Parameter("ZC length must be positive".into()));
        }
        if self.root == 0 {
            return Err(Error::Parameter("ZC root must be positive".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Parameter("repetitions must be at least 1".into()));
        }
        if gcd(self.root, self.length) != 1 {
            return Err(Error::Parameter(format!(
                "root {} is not coprime with length {}",
                self.root, self.length
            )));
        }
        Ok(())
    }
}

pub(crate) fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeWaveform {
    samples: Vec<Complex64>,
    params: ZcParams,
    sample_rate_hz: f64,
}

impl ProbeWaveform {
    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    /// The first base period.
    pub fn period(&self) -> &[Complex64] {
        &self.samples[..self.params.length]
    }

    pub fn params(&self) -> ZcParams {
        self.params
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn period_len(&self) -> usize {
        self.params.length
    }

    pub fn with_sample_rate(mut self, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::Parameter(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        self.sample_rate_hz = sample_rate_hz;
        Ok(self)
    }
}

/// Generates one ZC period repeated `params.repetitions` times at the
/// default sample rate. Use [`ProbeWaveform::with_sample_rate`] to change it.
pub fn generate_zc(params: ZcParams) -> Result<ProbeWaveform> {
    params.validate()?;
    let len = params.length as u128;
    let root = params.root as u128;
    let odd = len % 2 == 1;
    let period: Vec<Complex64> = (0..len)
        .map(|n| {
            // Reduce the exponent modulo 2L in exact integer arithmetic so
            // the phase stays accurate for large n.
            let quad = if odd { n * (n + 1) } else { n * n };
            let reduced = (root * quad) % (2 * len);
            let phase = -PI * reduced as f64 / len as f64;
            Complex64::from_polar(1.0, phase)
        })
        .collect();
    let samples = period
        .iter()
        .copied()
        .cycle()
        .take(params.length * params.repetitions)
        .collect();
    Ok(ProbeWaveform {
        samples,
        params,
        sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
    })
}

/// Magnitude of the circular autocorrelation of one base period at every
/// lag, unnormalized so that `profile[0]` equals the period energy.
pub fn autocorrelation_profile(waveform: &ProbeWaveform) -> Result<Vec<f64>> {
    if waveform.samples.is_empty() || waveform.params.length == 0 {
        return Err(Error::Input("empty waveform".into()));
    }
    let period = waveform.period();
    let scale = period.len() as f64;
    Ok(CircularCorrelator::new(period)
        .correlate(period)
        .into_iter()
        .map(|c| c.norm() * scale)
        .collect())
}

/// Largest non-zero-lag sidelobe relative to the zero-lag peak, in dB.
pub fn peak_sidelobe_db(profile: &[f64]) -> f64 {
    let peak = profile[0];
    let side = profile[1..].iter().copied().fold(0.0_f64, f64::max);
    20.0 * (side / peak).log10()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSidecar {
    pub length: usize,
    pub root: usize,
    pub repetitions: usize,
    pub sample_rate_hz: f64,
}

/// Paths of the `.iq` sample file and its `.json` sidecar for a stem.
pub fn probe_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("iq"), stem.with_extension("json"))
}

/// Writes `<stem>.iq` (interleaved little-endian f32 I/Q) and `<stem>.json`.
pub fn write_probe(stem: &Path, probe: &ProbeWaveform) -> Result<()> {
    let (iq_path, json_path) = probe_paths(stem);
    iq::write_iq_f32(&iq_path, &probe.samples)?;
    let sidecar = ProbeSidecar {
        length: probe.params.length,
        root: probe.params.root,
        repetitions: probe.params.repetitions,
        sample_rate_hz: probe.sample_rate_hz,
    };
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))
}

/// Reads a probe back. The waveform is regenerated from the sidecar and the
/// stored samples are checked against it at f32 precision.
pub fn read_probe(stem: &Path) -> Result<ProbeWaveform> {
    let (iq_path, json_path) = probe_paths(stem);
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let sidecar: ProbeSidecar =
        serde_json::from_str(&text).map_err(|e| Error::format(&json_path, e))?;
    let params = ZcParams::new(sidecar.length, sidecar.root, sidecar.repetitions)?;
    let probe = generate_zc(params)?.with_sample_rate(sidecar.sample_rate_hz)?;
    let stored = iq::read_iq_f32(&iq_path)?;
    if stored.len() != probe.samples.len() {
        return Err(Error::format(
            &iq_path,
            format!(
                "expected {} samples, found {}",
                probe.samples.len(),
                stored.len()
            ),
        ));
    }
    if let Some(n) = stored
        .iter()
        .zip(&probe.samples)
        .position(|(a, b)| (a - b).norm() > 1e-6)
    {
        return Err(Error::format(
            &iq_path,
            format!("sample {n} does not match the sidecar parameters"),
        ));
    }
    Ok(probe)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_autocorrelation(x: &[Complex64]) -> Vec<f64> {
        let len = x.len();
        (0..len)
            .map(|k| {
                (0..len)
                    .map(|n| x[n] * x[(n + len - k) % len].conj())
                    .sum::<Complex64>()
                    .norm()
            })
            .collect()
    }

    #[test]
    fn first_sample_is_one() {
        let probe = generate_zc(ZcParams::new(2048, 89, 1).unwrap()).unwrap();
        assert_eq!(probe.samples()[0], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn default_frame_has_8192_samples() {
        let probe = generate_zc(ZcParams::default()).unwrap();
        assert_eq!(probe.samples().len(), 8192);
        assert_eq!(probe.period(), &probe.samples()[2048..4096]);
    }

    #[test]
    fn prime_length_has_ideal_autocorrelation() {
        let probe = generate_zc(ZcParams::new(7, 2, 1).unwrap()).unwrap();
        let brute = brute_autocorrelation(probe.samples());
        assert!((brute[0] - 7.0).abs() < 1e-12);
        assert!(brute[1..].iter().all(|&m| m < 1e-9));
        let fast = autocorrelation_profile(&probe).unwrap();
        for (a, b) in fast.iter().zip(&brute) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn non_coprime_root_is_rejected() {
        assert!(matches!(
            ZcParams::new(2048, 4, 1),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(ZcParams::new(16, 3, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn zero_lag_is_period_energy() {
        for (len, root) in [(63, 5), (2048, 89), (139, 7)] {
            let probe = generate_zc(ZcParams::new(len, root, 2).unwrap()).unwrap();
            let profile = autocorrelation_profile(&probe).unwrap();
            assert_eq!(profile.len(), len);
            assert!((profile[0] - len as f64).abs() < 1e-9 * len as f64);
        }
    }

    #[test]
    fn default_probe_sidelobes_are_numerically_zero() {
        // Regression constant: the even-length definition is perfectly
        // periodic, so the 2048/89 sidelobes sit at floating-point noise.
        let probe = generate_zc(ZcParams::default()).unwrap();
        let profile = autocorrelation_profile(&probe).unwrap();
        let sidelobe = peak_sidelobe_db(&profile);
        assert!(sidelobe < -200.0, "peak sidelobe {sidelobe} dB");
    }

    #[test]
    fn probe_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("probe");
        let probe = generate_zc(ZcParams::new(139, 7, 3).unwrap())
            .unwrap()
            .with_sample_rate(1e6)
            .unwrap();
        write_probe(&stem, &probe).unwrap();
        let back = read_probe(&stem).unwrap();
        assert_eq!(back, probe);
        let bytes = std::fs::read(stem.with_extension("iq")).unwrap();
        assert_eq!(bytes.len(), 139 * 3 * 8);
        assert_eq!(&bytes[..4], &1.0f32.to_le_bytes());
    }
}

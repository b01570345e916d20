//! Signal-processing primitives shared by the channel simulator and the
//! CIR extractor: a windowed-sinc fractional-delay kernel and an FFT-based
//! circular correlator.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Half-width of the interpolation kernel in samples (64 taps in total).
pub const KERNEL_HALF_SPAN: usize = 32;

/// Blackman-windowed sinc evaluated at offset `x` (samples). Zero outside
/// `|x| < KERNEL_HALF_SPAN`; continuous in `x`, and exactly a unit impulse
/// at integer offsets.
#[inline]
pub fn windowed_sinc(x: f64) -> f64 {
    let half = KERNEL_HALF_SPAN as f64;
    if x.abs() >= half {
        return 0.0;
    }
    if x == x.trunc() {
        return if x == 0.0 { 1.0 } else { 0.0 };
    }
    let px = PI * x;
    let arg = PI * x / half;
    let c = arg.cos();
    let window = 0.42 + 0.5 * c + 0.08 * (2.0 * c * c - 1.0);
    px.sin() / px * window
}

/// Non-zero kernel taps for a delay of `delay` samples: pairs of
/// `(integer lag, weight)` with `weight = windowed_sinc(lag - delay)`.
///
/// Consecutive lags differ by one sample, so `sin(pi x)` only alternates in
/// sign and the window phase advances by a fixed rotation; both are carried
/// by recurrence instead of per-tap trig calls.
pub fn delay_kernel(delay: f64) -> impl Iterator<Item = (i64, f64)> {
    let half = KERNEL_HALF_SPAN as i64;
    let base = delay.floor() as i64;
    let integer = delay == base as f64;
    let first = base - half + 1;
    let x0 = first as f64 - delay;
    // x0 = -(half - 1) - frac, so sin(pi x0) = (-1)^(half - 1) sin(-pi frac).
    let frac = delay - base as f64;
    let parity = if (half - 1) % 2 == 0 { 1.0 } else { -1.0 };
    let sin0 = -parity * (PI * frac).sin();
    let step = PI / KERNEL_HALF_SPAN as f64;
    let rot = Complex64::new(step.cos(), step.sin());
    let mut phase = Complex64::new((step * x0).cos(), (step * x0).sin());
    let mut sign = 1.0;
    (first..=base + half).filter_map(move |lag| {
        let x = lag as f64 - delay;
        let w = if integer {
            if lag == base {
                1.0
            } else {
                0.0
            }
        } else if x.abs() >= KERNEL_HALF_SPAN as f64 {
            0.0
        } else {
            let c = phase.re;
            let window = 0.42 + 0.5 * c + 0.08 * (2.0 * c * c - 1.0);
            sign * sin0 / (PI * x) * window
        };
        phase *= rot;
        sign = -sign;
        (w != 0.0).then_some((lag, w))
    })
}

/// Delays one period of a periodic signal by `delay` samples (band-limited,
/// circular): `out[n] = sum_j x[j mod L] * h(n - delay - j)`.
pub fn circular_fractional_delay(period: &[Complex64], delay: f64) -> Vec<Complex64> {
    let len = period.len() as i64;
    let taps: Vec<(i64, f64)> = delay_kernel(delay).collect();
    (0..len)
        .map(|n| {
            taps.iter()
                .map(|&(lag, w)| period[(n - lag).rem_euclid(len) as usize] * w)
                .sum()
        })
        .collect()
}

/// Circular cross-correlation against a fixed reference of length `L`:
/// `r[k] = (1/L) sum_n x[n] conj(ref[(n - k) mod L])`, computed with FFTs.
pub struct CircularCorrelator {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    reference_spectrum_conj: Vec<Complex64>,
}

impl CircularCorrelator {
    pub fn new(reference: &[Complex64]) -> Self {
        let len = reference.len();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let mut spectrum = reference.to_vec();
        forward.process(&mut spectrum);
        let reference_spectrum_conj = spectrum.into_iter().map(|c| c.conj()).collect();
        Self {
            len,
            forward,
            inverse,
            reference_spectrum_conj,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Correlates one period (`x.len() == self.len()`).
    pub fn correlate(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.len, "period length mismatch");
        let mut buf = x.to_vec();
        self.forward.process(&mut buf);
        for (b, r) in buf.iter_mut().zip(&self.reference_spectrum_conj) {
            *b *= r;
        }
        self.inverse.process(&mut buf);
        // One 1/L undoes the unnormalized inverse FFT, the other normalizes
        // by the reference energy.
        let scale = 1.0 / (self.len as f64 * self.len as f64);
        buf.iter_mut().for_each(|b| *b *= scale);
        buf
    }
}

pub fn power_db(p: f64) -> f64 {
    10.0 * p.log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_impulse_at_integer_delay() {
        let taps: Vec<_> = delay_kernel(3.0).collect();
        assert_eq!(taps, vec![(3, 1.0)]);
    }

    #[test]
    fn recurrence_matches_direct_evaluation() {
        for delay in [0.25, -7.6, 3.999, 1234.5, 0.0001] {
            for (lag, w) in delay_kernel(delay) {
                assert!(
                    (w - windowed_sinc(lag as f64 - delay)).abs() < 1e-13,
                    "{delay} {lag}"
                );
            }
        }
    }

    #[test]
    fn kernel_has_64_taps_at_fractional_delay() {
        assert_eq!(delay_kernel(2.4).count(), 2 * KERNEL_HALF_SPAN);
    }

    #[test]
    fn kernel_is_continuous_across_integer_boundary() {
        for lag in -40..40 {
            let a = windowed_sinc(lag as f64 - (5.0 - 1e-9));
            let b = windowed_sinc(lag as f64 - 5.0);
            assert!((a - b).abs() < 1e-7, "lag {lag}: {a} vs {b}");
        }
    }

    #[test]
    fn correlator_matches_brute_force() {
        let reference: Vec<Complex64> = (0..16)
            .map(|n| Complex64::from_polar(1.0, 0.3 * (n * n) as f64))
            .collect();
        let x: Vec<Complex64> = (0..16)
            .map(|n| Complex64::new((n as f64).sin(), (2.0 * n as f64).cos()))
            .collect();
        let fast = CircularCorrelator::new(&reference).correlate(&x);
        for (k, value) in fast.iter().enumerate() {
            let brute: Complex64 = (0..16)
                .map(|n| x[n] * reference[(n + 16 - k) % 16].conj())
                .sum::<Complex64>()
                / 16.0;
            assert!((value - brute).norm() < 1e-12);
        }
    }
}

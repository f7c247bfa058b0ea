//! Digital lock-in detection: I/Q mixing followed by a cascade of identical
//! first-order low-pass stages.

use crate::num::Real;

use super::{LockinConfig, SignalError};

/// `order` identical backward-Euler first-order stages,
/// `y ← y + dt/(τ+dt)·(u − y)`.
#[derive(Debug, Clone)]
pub struct LowPassCascade<T> {
    alpha: T,
    stages: Vec<T>,
}

impl<T: Real> LowPassCascade<T> {
    pub fn new(order: usize, time_constant: T, dt: T) -> Self {
        Self {
            alpha: dt / (time_constant + dt),
            stages: vec![T::zero(); order],
        }
    }

    /// Puts every stage into steady state for a constant input `value`.
    pub fn reset(&mut self, value: T) {
        self.stages.iter_mut().for_each(|s| *s = value);
    }

    #[inline]
    pub fn step(&mut self, input: T) -> T {
        let mut u = input;
        for s in self.stages.iter_mut() {
            *s += self.alpha * (u - *s);
            u = *s;
        }
        u
    }

    pub fn output(&self) -> T {
        self.stages.last().copied().unwrap_or_default()
    }

    /// Analog magnitude response `(1 + (2π f τ)²)^(−n/2)` of the cascade.
    pub fn analog_gain(order: usize, time_constant: T, freq: T) -> T {
        let x = T::TAU() * freq * time_constant;
        (T::one() + x * x).powf(-T::from_usize_lossy(order) * T::half())
    }
}

/// Stateful dual-phase demodulator.
#[derive(Debug, Clone)]
pub struct LockIn<T> {
    cfg: LockinConfig<T>,
    ref_phase: T,
    cycles_per_sample: f64,
    sample_index: u64,
    i: LowPassCascade<T>,
    q: LowPassCascade<T>,
}

impl<T: Real> LockIn<T> {
    pub fn new(cfg: LockinConfig<T>, ref_phase: T) -> Result<Self, SignalError> {
        cfg.validate()?;
        if !(cfg.sample_rate > T::two() * cfg.ref_freq) {
            return Err(SignalError::SampleRateTooLow {
                sample_rate: cfg.sample_rate.as_f64(),
                ref_freq: cfg.ref_freq.as_f64(),
            });
        }
        let dt = T::one() / cfg.sample_rate;
        Ok(Self {
            ref_phase,
            cycles_per_sample: cfg.ref_freq.as_f64() / cfg.sample_rate.as_f64(),
            sample_index: 0,
            i: LowPassCascade::new(cfg.filter_order, cfg.time_constant, dt),
            q: LowPassCascade::new(cfg.filter_order, cfg.time_constant, dt),
            cfg,
        })
    }

    pub fn config(&self) -> &LockinConfig<T> {
        &self.cfg
    }

    /// Primes both filter chains as if a tone of amplitude `amplitude` and
    /// phase `phase` (relative to the reference) had been present forever.
    pub fn prime(&mut self, amplitude: T, phase: T) {
        self.i.reset(amplitude * T::half() * phase.cos());
        self.q.reset(amplitude * T::half() * phase.sin());
    }

    /// Reference phase of the next sample, reduced to one cycle.
    fn phase(&self) -> T {
        let cycles = (self.sample_index as f64 * self.cycles_per_sample).fract();
        T::lit(cycles * std::f64::consts::TAU) + self.ref_phase
    }

    /// Feeds one sample; returns `(R, θ)` with `R = 2·√(I² + Q²)`.
    pub fn step(&mut self, x: T) -> (T, T) {
        let ph = self.phase();
        self.sample_index += 1;
        let i = self.i.step(x * ph.cos());
        let q = self.q.step(-x * ph.sin());
        (T::two() * (i * i + q * q).sqrt(), q.atan2(i))
    }
}

/// Demodulates a uniformly sampled record against a reference at
/// `cfg.ref_freq`; filters start from rest.
pub fn lockin_demodulate<T: Real>(
    samples: &[T],
    cfg: &LockinConfig<T>,
    ref_phase: T,
) -> Result<Vec<(T, T)>, SignalError> {
    let mut li = LockIn::new(*cfg, ref_phase)?;
    Ok(samples.iter().map(|&x| li.step(x)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(order: usize, tau: f64, fr: f64, fs: f64) -> LockinConfig<f64> {
        LockinConfig {
            ref_freq: fr,
            filter_order: order,
            time_constant: tau,
            sample_rate: fs,
        }
    }

    fn tone(a: f64, f: f64, phi: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| a * (std::f64::consts::TAU * f * k as f64 / fs + phi).cos())
            .collect()
    }

    #[test]
    fn settles_to_amplitude_and_phase() {
        let c = cfg(5, 0.01, 1000.0, 50_000.0);
        // 10τ beyond the ~nτ group delay
        let n = (0.15 * 50_000.0) as usize;
        let out = lockin_demodulate(&tone(0.5, 1000.0, 0.3, 50_000.0, n), &c, 0.0).unwrap();
        let (r, th) = *out.last().unwrap();
        assert!((r - 0.5).abs() < 0.005, "{r}");
        assert!((th - 0.3).abs() < 0.01);
    }

    #[test]
    fn zero_input_gives_zero() {
        let c = cfg(5, 0.03, 1000.0, 10_000.0);
        let out = lockin_demodulate(&vec![0.0; 1000], &c, 0.0).unwrap();
        assert!(out.iter().all(|&(r, _)| r == 0.0));
    }

    #[test]
    fn rejects_undersampled_reference() {
        let c = cfg(5, 0.03, 7.01e6, 1e4);
        assert!(matches!(
            lockin_demodulate(&[1.0], &c, 0.0),
            Err(SignalError::SampleRateTooLow { .. })
        ));
    }

    #[test]
    fn reference_phase_offsets_theta() {
        let c = cfg(2, 0.005, 500.0, 20_000.0);
        let n = 20_000;
        let out = lockin_demodulate(&tone(1.0, 500.0, 0.0, 20_000.0, n), &c, 0.4).unwrap();
        let (_, th) = *out.last().unwrap();
        assert!((th + 0.4).abs() < 0.01);
    }

    #[test]
    fn cascade_primed_is_steady() {
        let mut lp = LowPassCascade::new(5, 0.03_f32, 1e-4);
        lp.reset(2.0);
        for _ in 0..100 {
            assert_eq!(lp.step(2.0), 2.0);
        }
    }
}

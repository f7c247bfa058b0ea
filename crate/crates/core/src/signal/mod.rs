//! Synthetic ODMR spectra and the swept-microwave lock-in measurement chain.

pub mod lockin;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::num::{linspace, Real};
pub use lockin::{lockin_demodulate, LockIn, LowPassCascade};

/// Upper bound on simulated raw samples per sweep.
pub const MAX_SWEEP_SAMPLES: u64 = 500_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("invalid dip: {0}")]
    InvalidDip(String),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("invalid lock-in configuration: {0}")]
    InvalidLockin(String),
    #[error("sample rate {sample_rate} Hz must exceed twice the reference frequency {ref_freq} Hz")]
    SampleRateTooLow { sample_rate: f64, ref_freq: f64 },
    #[error("sweep would need {0} raw samples (limit {MAX_SWEEP_SAMPLES})")]
    TooManySamples(u64),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("noise sigma must be finite and >= 0")]
    InvalidNoise,
}

/// One Lorentzian resonance dip: center `f0` and FWHM `fwhm` in MHz, fractional depth `contrast`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DipSpec<T = f64> {
    pub f0: T,
    pub fwhm: T,
    pub contrast: T,
}

impl<T: Real> DipSpec<T> {
    pub fn new(f0: T, fwhm: T, contrast: T) -> Result<Self, SignalError> {
        let d = Self { f0, fwhm, contrast };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if !self.f0.is_finite() {
            return Err(SignalError::InvalidDip("center must be finite".into()));
        }
        if !(self.fwhm > T::zero()) || !self.fwhm.is_finite() {
            return Err(SignalError::InvalidDip(format!("fwhm must be > 0, got {}", self.fwhm)));
        }
        if !(self.contrast >= T::zero() && self.contrast < T::one()) {
            return Err(SignalError::InvalidDip(format!(
                "contrast must be in [0, 1), got {}",
                self.contrast
            )));
        }
        Ok(())
    }

    /// Unit-height Lorentzian profile at `f`.
    #[inline]
    pub fn profile(&self, f: T) -> T {
        let h = self.fwhm * T::half();
        let x = f - self.f0;
        h * h / (x * x + h * h)
    }
}

/// Linear microwave sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig<T = f64> {
    pub f_start: T,
    pub f_stop: T,
    pub n_points: usize,
    /// seconds
    pub duration: T,
}

impl<T: Real> SweepConfig<T> {
    /// 2.75–2.96 GHz over 40 s.
    pub fn standard() -> Self {
        Self {
            f_start: T::lit(2750.0),
            f_stop: T::lit(2960.0),
            n_points: 512,
            duration: T::lit(40.0),
        }
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.f_start < self.f_stop) || !self.f_stop.is_finite() || !self.f_start.is_finite() {
            return Err(SignalError::InvalidSweep("f_start must be < f_stop".into()));
        }
        if self.n_points < 2 {
            return Err(SignalError::InvalidSweep("n_points must be >= 2".into()));
        }
        if !(self.duration > T::zero()) || !self.duration.is_finite() {
            return Err(SignalError::InvalidSweep("duration must be > 0".into()));
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Vec<T> {
        linspace(self.f_start, self.f_stop, self.n_points)
    }

    /// Sweep rate, MHz/s.
    pub fn rate(&self) -> T {
        (self.f_stop - self.f_start) / self.duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LockinConfig<T = f64> {
    /// Hz
    pub ref_freq: T,
    pub filter_order: usize,
    /// seconds
    pub time_constant: T,
    /// Hz
    pub sample_rate: T,
}

impl<T: Real> LockinConfig<T> {
    /// 5th-order filter, 30 ms, 7.01 MHz reference, 10 kHz baseband sampling.
    pub fn standard() -> Self {
        Self {
            ref_freq: T::lit(7.01e6),
            filter_order: 5,
            time_constant: T::lit(0.03),
            sample_rate: T::lit(1e4),
        }
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if self.filter_order < 1 {
            return Err(SignalError::InvalidLockin("filter order must be >= 1".into()));
        }
        if !(self.time_constant > T::zero()) || !self.time_constant.is_finite() {
            return Err(SignalError::InvalidLockin("time constant must be > 0".into()));
        }
        if !(self.sample_rate > T::zero()) || !self.sample_rate.is_finite() {
            return Err(SignalError::InvalidLockin("sample rate must be > 0".into()));
        }
        if !(self.ref_freq >= T::zero()) || !self.ref_freq.is_finite() {
            return Err(SignalError::InvalidLockin("reference frequency must be >= 0".into()));
        }
        Ok(())
    }
}

/// Sampled frequency-vs-signal record.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumTrace<T = f64> {
    pub frequencies: Vec<T>,
    pub signal: Vec<T>,
    pub seed: Option<u64>,
}

impl<T: Real> SpectrumTrace<T> {
    pub fn new(frequencies: Vec<T>, signal: Vec<T>) -> Result<Self, SignalError> {
        let t = Self {
            frequencies,
            signal,
            seed: None,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if self.frequencies.len() != self.signal.len() {
            return Err(SignalError::InvalidTrace(format!(
                "{} frequencies but {} signal values",
                self.frequencies.len(),
                self.signal.len()
            )));
        }
        if let Some(i) = self.frequencies.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(SignalError::InvalidTrace(format!(
                "frequencies not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }
}

/// Multi-Lorentzian dip spectrum
/// `S(f) = baseline·(1 − Σ cᵢ·(Γᵢ/2)² / ((f − f₀ᵢ)² + (Γᵢ/2)²))`.
#[inline]
pub fn lorentzian_spectrum<T: Real>(dips: &[DipSpec<T>], baseline: T, f: T) -> T {
    let mut depth = T::zero();
    for d in dips {
        depth += d.contrast * d.profile(f);
    }
    baseline * (T::one() - depth)
}

/// Seeded Gaussian noise source producing values of type `T`.
pub(crate) struct NoiseSource {
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
}

impl NoiseSource {
    pub(crate) fn new(sigma: f64, seed: u64) -> Result<Self, SignalError> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(SignalError::InvalidNoise);
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: (sigma > 0.0).then(|| Normal::new(0.0, sigma).unwrap()),
        })
    }

    #[inline]
    pub(crate) fn sample<T: Real>(&mut self) -> T {
        match &self.normal {
            Some(n) => T::lit(n.sample(&mut self.rng)),
            None => T::zero(),
        }
    }
}

fn validate_dips<T: Real>(dips: &[DipSpec<T>]) -> Result<(), SignalError> {
    dips.iter().try_for_each(|d| d.validate())
}

/// Uniformly sampled spectrum with additive Gaussian noise of standard
/// deviation `noise_sigma·baseline`. The same seed always gives the same trace.
pub fn synth_trace<T: Real>(
    sweep: &SweepConfig<T>,
    dips: &[DipSpec<T>],
    baseline: T,
    noise_sigma: T,
    seed: u64,
) -> Result<SpectrumTrace<T>, SignalError> {
    sweep.validate()?;
    validate_dips(dips)?;
    let mut noise = NoiseSource::new((noise_sigma * baseline).as_f64(), seed)?;
    let frequencies = sweep.frequencies();
    let signal = frequencies
        .iter()
        .map(|&f| lorentzian_spectrum(dips, baseline, f) + noise.sample::<T>())
        .collect();
    Ok(SpectrumTrace {
        frequencies,
        signal,
        seed: Some(seed),
    })
}

/// How the lock-in is modeled during a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepMode {
    /// Only the fluorescence envelope passes through the low-pass cascade.
    #[default]
    Baseband,
    /// The envelope rides on a carrier at the reference frequency and is fully demodulated.
    Carrier,
}

impl std::str::FromStr for SweepMode {
    type Err = SignalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseband" => Ok(Self::Baseband),
            "carrier" => Ok(Self::Carrier),
            other => Err(SignalError::InvalidLockin(format!("unknown mode '{other}'"))),
        }
    }
}

/// Detector noise added to the raw envelope before filtering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Noise<T = f64> {
    /// Fraction of baseline.
    pub sigma: T,
    pub seed: u64,
}

impl<T: Real> Noise<T> {
    pub fn none() -> Self {
        Self {
            sigma: T::zero(),
            seed: 0,
        }
    }
}

/// Swept-frequency measurement through the lock-in.
///
/// The microwave frequency ramps linearly over `sweep.duration`; the raw
/// envelope is sampled at `lockin.sample_rate`, filtered (baseband) or
/// modulated and demodulated (carrier), then linearly resampled onto the
/// `n_points` nominal sweep frequencies. Filters start in steady state for the
/// first envelope value, as after a settled retrace.
pub fn simulate_sweep<T: Real>(
    sweep: &SweepConfig<T>,
    dips: &[DipSpec<T>],
    baseline: T,
    lockin: &LockinConfig<T>,
    mode: SweepMode,
    noise: Noise<T>,
) -> Result<SpectrumTrace<T>, SignalError> {
    sweep.validate()?;
    lockin.validate()?;
    validate_dips(dips)?;

    let fs = lockin.sample_rate;
    let dt = T::one() / fs;
    let raw = (sweep.duration * fs).ceil().as_f64() as u64 + 1;
    if raw > MAX_SWEEP_SAMPLES {
        return Err(SignalError::TooManySamples(raw));
    }
    let mut noise_src = NoiseSource::new((noise.sigma * baseline).as_f64(), noise.seed)?;
    let rate = sweep.rate();
    let envelope = |k: u64, src: &mut NoiseSource| -> T {
        let t = T::lit(k as f64) * dt;
        lorentzian_spectrum(dips, baseline, sweep.f_start + rate * t) + src.sample::<T>()
    };

    let mut detector: Box<dyn FnMut(u64, T) -> T> = match mode {
        SweepMode::Baseband => {
            let mut lp = LowPassCascade::new(lockin.filter_order, lockin.time_constant, dt);
            lp.reset(lorentzian_spectrum(dips, baseline, sweep.f_start));
            Box::new(move |_, a| lp.step(a))
        }
        SweepMode::Carrier => {
            let mut li = LockIn::new(*lockin, T::zero())?;
            li.prime(lorentzian_spectrum(dips, baseline, sweep.f_start), T::zero());
            let cycles = lockin.ref_freq.as_f64() / fs.as_f64();
            Box::new(move |k, a| {
                let ph = T::lit((k as f64 * cycles).fract() * std::f64::consts::TAU);
                li.step(a * ph.cos()).0
            })
        }
    };

    let frequencies = sweep.frequencies();
    let n = sweep.n_points;
    let step_t = sweep.duration / T::from_usize_lossy(n - 1);
    let mut signal = Vec::with_capacity(n);
    // y0, y1 are the detector outputs at raw samples k and k + 1
    let mut k = 0u64;
    let mut y0 = detector(0, envelope(0, &mut noise_src));
    let mut y1 = if raw > 1 {
        detector(1, envelope(1, &mut noise_src))
    } else {
        y0
    };
    for j in 0..n {
        let target = if j == n - 1 {
            sweep.duration
        } else {
            step_t * T::from_usize_lossy(j)
        };
        let pos = target * fs;
        while T::lit((k + 1) as f64) < pos && k + 2 < raw {
            k += 1;
            y0 = y1;
            y1 = detector(k + 1, envelope(k + 1, &mut noise_src));
        }
        let w = (pos - T::lit(k as f64)).max(T::zero()).min(T::one());
        signal.push(y0 + (y1 - y0) * w);
    }

    Ok(SpectrumTrace {
        frequencies,
        signal,
        seed: Some(noise.seed),
    })
}

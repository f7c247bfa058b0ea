//! JSON experiment configuration. Every section has defaults; unknown keys are
//! rejected and every unit is spelled out in the key name.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_file, IoError};
use crate::fit::DetectConfig;
use crate::lm::LmOptions;
use crate::magnetometry::SolveOptions;
use crate::scan::{
    tile_grid, Channel, ChannelConfig, OdmrSetup, Phantom, PsfConfig, TileConfig,
};
use crate::signal::{
    DipSpec, LockinConfig, Noise, SignalError, SweepConfig, SweepMode, MAX_SWEEP_SAMPLES,
};
use crate::spin::{all_resonances, HamiltonianParams, MagneticField, DEFAULT_MERGE_TOL, D_NV, GAMMA_NV};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HamiltonianSection {
    pub d_mhz: f64,
    pub e_mhz: f64,
    pub gamma_mhz_per_mt: f64,
}

impl Default for HamiltonianSection {
    fn default() -> Self {
        Self {
            d_mhz: D_NV,
            e_mhz: 0.0,
            gamma_mhz_per_mt: GAMMA_NV,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldSection {
    pub bx_mt: f64,
    pub by_mt: f64,
    pub bz_mt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub f_start_mhz: f64,
    pub f_stop_mhz: f64,
    pub n_points: usize,
    pub duration_s: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        let s = SweepConfig::<f64>::standard();
        Self {
            f_start_mhz: s.f_start,
            f_stop_mhz: s.f_stop,
            n_points: s.n_points,
            duration_s: s.duration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LockinSection {
    pub order: usize,
    pub tau_s: f64,
    /// "baseband" or "carrier"
    pub mode: String,
    pub ref_freq_hz: f64,
    pub sample_rate_hz: f64,
}

impl Default for LockinSection {
    fn default() -> Self {
        let l = LockinConfig::<f64>::standard();
        Self {
            order: l.filter_order,
            tau_s: l.time_constant,
            mode: "baseband".into(),
            ref_freq_hz: l.ref_freq,
            sample_rate_hz: l.sample_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DipSection {
    pub f0_mhz: f64,
    pub fwhm_mhz: f64,
    pub contrast: f64,
}

impl DipSection {
    pub fn to_dip(&self) -> Result<DipSpec, IoError> {
        Ok(DipSpec::new(self.f0_mhz, self.fwhm_mhz, self.contrast)?)
    }
}

/// Line shape of the dips derived from the Hamiltonian: every one of the eight
/// transitions gets `fwhm_mhz` and an equal share of `total_contrast`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LineshapeSection {
    pub fwhm_mhz: f64,
    pub total_contrast: f64,
    pub baseline: f64,
}

impl Default for LineshapeSection {
    fn default() -> Self {
        Self {
            fwhm_mhz: 10.0,
            total_contrast: 0.03,
            baseline: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// Fraction of the baseline.
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub candidates: Vec<usize>,
    pub smooth_window: usize,
    pub min_prominence: f64,
    pub max_dips: usize,
    pub max_iterations: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        let d = DetectConfig::<f64>::default();
        Self {
            candidates: vec![1, 2, 3, 4],
            smooth_window: d.smooth_window,
            min_prominence: d.min_prominence,
            max_dips: d.max_dips,
            max_iterations: LmOptions::<f64>::default().max_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatternSection {
    pub merge_tol_mhz: f64,
}

impl Default for PatternSection {
    fn default() -> Self {
        Self {
            merge_tol_mhz: DEFAULT_MERGE_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MagnetometrySection {
    pub inconsistency_mhz: f64,
}

impl Default for MagnetometrySection {
    fn default() -> Self {
        Self {
            inconsistency_mhz: crate::magnetometry::DEFAULT_INCONSISTENCY_MHZ,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsfSection {
    pub fwhm_lateral_um: f64,
    pub fwhm_axial_um: f64,
}

impl Default for PsfSection {
    fn default() -> Self {
        let p = PsfConfig::<f64>::standard();
        Self {
            fwhm_lateral_um: p.fwhm_lateral,
            fwhm_axial_um: p.fwhm_axial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TileSection {
    pub fov_um: f64,
    pub pixels: usize,
    pub focus_z_um: f64,
    pub stage_x_um: f64,
    pub stage_y_um: f64,
    pub overlap: f64,
    pub tiles_x: usize,
    pub tiles_y: usize,
}

impl Default for TileSection {
    fn default() -> Self {
        let t = TileConfig::<f64>::standard();
        Self {
            fov_um: t.fov,
            pixels: t.pixels,
            focus_z_um: t.focus_z,
            stage_x_um: t.stage_position[0],
            stage_y_um: t.stage_position[1],
            overlap: t.overlap,
            tiles_x: 1,
            tiles_y: 1,
        }
    }
}

/// Voxel selection. JSON forms: `"all"`, `{"sphere": {...}}`, `{"box": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    All,
    Sphere { center_um: [f64; 3], radius_um: f64 },
    Box { lo_um: [f64; 3], hi_um: [f64; 3] },
}

impl Shape {
    fn mask(&self, phantom: &Phantom) -> Result<Vec<bool>, IoError> {
        match self {
            Shape::All => Ok(vec![true; phantom.n_voxels()]),
            Shape::Sphere { center_um, radius_um } => {
                if !(*radius_um > 0.0) || center_um.iter().any(|c| !c.is_finite()) {
                    return Err(IoError::Config("sphere needs a finite center and radius_um > 0".into()));
                }
                Ok(phantom.sphere_mask(*center_um, *radius_um))
            }
            Shape::Box { lo_um, hi_um } => {
                if lo_um.iter().zip(hi_um).any(|(l, h)| !(l <= h)) {
                    return Err(IoError::Config("box needs lo_um <= hi_um on every axis".into()));
                }
                Ok(phantom.box_mask(*lo_um, *hi_um))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSection {
    /// "2PEF", "3PEF", "SHG" or "THG"
    pub channel: String,
    pub density: f64,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSection {
    pub shape: Shape,
    pub dips: Vec<DipSection>,
}

/// Layers are painted in order, later ones overwriting earlier ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSection {
    pub dims: [usize; 3],
    pub voxel_um: [f64; 3],
    pub layers: Vec<LayerSection>,
    #[serde(default)]
    pub regions: Vec<RegionSection>,
}

impl PhantomSection {
    pub fn build(&self) -> Result<Phantom, IoError> {
        let mut p = Phantom::new(self.dims, self.voxel_um)?;
        for layer in &self.layers {
            let channel: Channel = layer.channel.parse()?;
            if !(layer.density >= 0.0) || !layer.density.is_finite() {
                return Err(IoError::Config(format!(
                    "{} layer density must be finite and >= 0",
                    layer.channel
                )));
            }
            let mask = layer.shape.mask(&p)?;
            p.fill(channel, &mask, layer.density);
        }
        for region in &self.regions {
            let dips = region.dips.iter().map(DipSection::to_dip).collect::<Result<Vec<_>, _>>()?;
            let mask = region.shape.mask(&p)?;
            p.add_region(mask, dips);
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub channel: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_exponent: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<[f64; 3]>,
}

impl ChannelSection {
    fn build(&self) -> Result<ChannelConfig, IoError> {
        let mut c = ChannelConfig::new(self.channel.parse()?);
        if let Some(n) = self.power_exponent {
            c.power_exponent = n;
        }
        if let Some(col) = self.color {
            c.color = col;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    #[serde(default)]
    pub psf: PsfSection,
    #[serde(default)]
    pub tile: TileSection,
    /// Relative excitation power.
    #[serde(default = "one")]
    pub power: f64,
    /// Channels to render; empty means every channel present in the phantom.
    #[serde(default)]
    pub channels: Vec<ChannelSection>,
    /// Additive image noise as a fraction of each tile's peak.
    #[serde(default)]
    pub image_noise_sigma: f64,
    /// Parked focus for `odmr-point` and `power-series`.
    #[serde(default)]
    pub point_um: [f64; 3],
    #[serde(default = "default_powers")]
    pub powers: Vec<f64>,
    /// Multiplicative noise on power-series readings.
    #[serde(default)]
    pub power_noise_sigma: f64,
    pub phantom: PhantomSection,
}

fn one() -> f64 {
    1.0
}

fn default_powers() -> Vec<f64> {
    vec![0.5, 0.75, 1.0, 1.25, 1.5, 2.0]
}

/// Everything the scan pipelines need, built and validated.
#[derive(Debug, Clone)]
pub struct ScanSetup {
    pub phantom: Phantom,
    pub psf: PsfConfig,
    pub tiles: Vec<TileConfig>,
    pub channels: Vec<ChannelConfig>,
    pub power: f64,
    pub image_noise: Noise,
    pub point: [f64; 3],
    pub powers: Vec<f64>,
    pub power_noise: Option<Noise>,
    pub odmr: OdmrSetup,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub hamiltonian: HamiltonianSection,
    pub field: FieldSection,
    pub sweep: SweepSection,
    pub lockin: LockinSection,
    /// Explicit dips; when present they replace the Hamiltonian-derived ones.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dips: Option<Vec<DipSection>>,
    pub lineshape: LineshapeSection,
    pub noise: NoiseSection,
    pub fit: FitSection,
    pub pattern: PatternSection,
    pub magnetometry: MagnetometrySection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanSection>,
}

impl ExperimentConfig {
    /// Parses and validates.
    pub fn from_json(text: &str) -> Result<Self, IoError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IoError> {
        Self::from_json(&read_file(path.as_ref())?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Builds every derived object once so that a config accepted here is
    /// accepted by every module downstream.
    pub fn validate(&self) -> Result<(), IoError> {
        self.hamiltonian_params()?;
        self.magnetic_field()?;
        let sweep = self.sweep_config()?;
        let lockin = self.lockin_config()?;
        let mode = self.sweep_mode()?;
        check_sweep_budget(&sweep, &lockin, mode)?;
        self.noise()?;
        self.spectrum_dips()?;
        self.detect_config()?;
        self.candidates()?;
        self.lm_options()?;
        self.merge_tol()?;
        self.solve_options()?;
        if self.scan.is_some() {
            self.scan_setup()?;
        }
        Ok(())
    }

    pub fn hamiltonian_params(&self) -> Result<HamiltonianParams, IoError> {
        let h = &self.hamiltonian;
        Ok(HamiltonianParams::new(h.d_mhz, h.e_mhz, h.gamma_mhz_per_mt)?)
    }

    pub fn magnetic_field(&self) -> Result<MagneticField, IoError> {
        let f = &self.field;
        Ok(MagneticField::new(f.bx_mt, f.by_mt, f.bz_mt)?)
    }

    pub fn sweep_config(&self) -> Result<SweepConfig, IoError> {
        let s = &self.sweep;
        let c = SweepConfig {
            f_start: s.f_start_mhz,
            f_stop: s.f_stop_mhz,
            n_points: s.n_points,
            duration: s.duration_s,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn lockin_config(&self) -> Result<LockinConfig, IoError> {
        let l = &self.lockin;
        let c = LockinConfig {
            ref_freq: l.ref_freq_hz,
            filter_order: l.order,
            time_constant: l.tau_s,
            sample_rate: l.sample_rate_hz,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn sweep_mode(&self) -> Result<SweepMode, IoError> {
        Ok(self.lockin.mode.parse()?)
    }

    pub fn noise(&self) -> Result<Noise, IoError> {
        let n = &self.noise;
        if !(n.sigma >= 0.0) || !n.sigma.is_finite() {
            return Err(SignalError::InvalidNoise.into());
        }
        Ok(Noise {
            sigma: n.sigma,
            seed: n.seed,
        })
    }

    pub fn baseline(&self) -> Result<f64, IoError> {
        let b = self.lineshape.baseline;
        if !(b > 0.0) || !b.is_finite() {
            return Err(IoError::Config(format!("lineshape.baseline must be > 0, got {b}")));
        }
        Ok(b)
    }

    /// The explicit `dips` list, or one dip per transition of the four
    /// orientations at the configured field.
    pub fn spectrum_dips(&self) -> Result<Vec<DipSpec>, IoError> {
        self.baseline()?;
        if let Some(dips) = &self.dips {
            return dips.iter().map(DipSection::to_dip).collect();
        }
        let ls = &self.lineshape;
        if !(0.0..1.0).contains(&ls.total_contrast) {
            return Err(IoError::Config(format!(
                "lineshape.total_contrast must be in [0, 1), got {}",
                ls.total_contrast
            )));
        }
        let params = self.hamiltonian_params()?;
        let b = self.magnetic_field()?;
        let share = ls.total_contrast / 8.0;
        let mut freqs: Vec<f64> = all_resonances(&params, &b)
            .iter()
            .flat_map(|p| [p.f_minus, p.f_plus])
            .collect();
        freqs.sort_by(f64::total_cmp);
        freqs
            .into_iter()
            .map(|f| Ok(DipSpec::new(f, ls.fwhm_mhz, share)?))
            .collect()
    }

    pub fn detect_config(&self) -> Result<DetectConfig, IoError> {
        let f = &self.fit;
        let c = DetectConfig {
            smooth_window: f.smooth_window,
            min_prominence: f.min_prominence,
            max_dips: f.max_dips,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn candidates(&self) -> Result<Vec<usize>, IoError> {
        let c = &self.fit.candidates;
        if c.is_empty() || c.contains(&0) {
            return Err(crate::fit::FitError::InvalidCandidates.into());
        }
        Ok(c.clone())
    }

    pub fn lm_options(&self) -> Result<LmOptions<f64>, IoError> {
        if self.fit.max_iterations == 0 {
            return Err(IoError::Config("fit.max_iterations must be >= 1".into()));
        }
        Ok(LmOptions {
            max_iterations: self.fit.max_iterations,
            ..LmOptions::default()
        })
    }

    pub fn merge_tol(&self) -> Result<f64, IoError> {
        let t = self.pattern.merge_tol_mhz;
        if !(t > 0.0) || !t.is_finite() {
            return Err(crate::spin::SpinError::InvalidMergeTolerance.into());
        }
        Ok(t)
    }

    pub fn solve_options(&self) -> Result<SolveOptions, IoError> {
        let t = self.magnetometry.inconsistency_mhz;
        if !(t > 0.0) || !t.is_finite() {
            return Err(IoError::Config(format!(
                "magnetometry.inconsistency_mhz must be > 0, got {t}"
            )));
        }
        Ok(SolveOptions {
            inconsistency_threshold: t,
            ..SolveOptions::default()
        })
    }

    pub fn scan_setup(&self) -> Result<ScanSetup, IoError> {
        let s = self
            .scan
            .as_ref()
            .ok_or_else(|| IoError::Config("missing 'scan' section".into()))?;
        let phantom = s.phantom.build()?;
        let psf = PsfConfig {
            fwhm_lateral: s.psf.fwhm_lateral_um,
            fwhm_axial: s.psf.fwhm_axial_um,
        };
        psf.validate()?;
        let t = &s.tile;
        let base = TileConfig {
            fov: t.fov_um,
            pixels: t.pixels,
            focus_z: t.focus_z_um,
            stage_position: [t.stage_x_um, t.stage_y_um],
            overlap: t.overlap,
        };
        if t.tiles_x == 0 || t.tiles_y == 0 {
            return Err(IoError::Config("scan.tile.tiles_x and tiles_y must be >= 1".into()));
        }
        let tiles = tile_grid(&base, t.tiles_x, t.tiles_y)?;
        let channels = if s.channels.is_empty() {
            phantom.channels.keys().map(|&c| ChannelConfig::new(c)).collect()
        } else {
            s.channels.iter().map(ChannelSection::build).collect::<Result<Vec<_>, _>>()?
        };
        for c in &channels {
            if !phantom.channels.contains_key(&c.channel) {
                return Err(crate::scan::ScanError::MissingChannel(c.channel).into());
            }
        }
        if !(s.power > 0.0) || !s.power.is_finite() {
            return Err(IoError::Config(format!("scan.power must be > 0, got {}", s.power)));
        }
        for sigma in [s.image_noise_sigma, s.power_noise_sigma] {
            if !(sigma >= 0.0) || !sigma.is_finite() {
                return Err(SignalError::InvalidNoise.into());
            }
        }
        if s.powers.len() < 3 || s.powers.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(IoError::Config("scan.powers needs at least 3 values, all > 0".into()));
        }
        if s.point_um.iter().any(|c| !c.is_finite()) || !phantom.contains(s.point_um) {
            return Err(IoError::Config(format!("scan.point_um {:?} lies outside the phantom", s.point_um)));
        }
        let seed = self.noise.seed;
        let sweep = self.sweep_config()?;
        let lockin = self.lockin_config()?;
        let mode = self.sweep_mode()?;
        Ok(ScanSetup {
            psf,
            tiles,
            channels,
            power: s.power,
            image_noise: Noise {
                sigma: s.image_noise_sigma,
                seed,
            },
            point: s.point_um,
            powers: s.powers.clone(),
            power_noise: (s.power_noise_sigma > 0.0).then_some(Noise {
                sigma: s.power_noise_sigma,
                seed,
            }),
            odmr: OdmrSetup {
                psf,
                sweep,
                lockin,
                mode,
                noise: self.noise()?,
            },
            phantom,
        })
    }
}

/// The raw-sample limit and carrier sampling condition of `simulate_sweep`.
fn check_sweep_budget(sweep: &SweepConfig, lockin: &LockinConfig, mode: SweepMode) -> Result<(), IoError> {
    let raw = (sweep.duration * lockin.sample_rate).ceil() as u64 + 1;
    if raw > MAX_SWEEP_SAMPLES {
        return Err(SignalError::TooManySamples(raw).into());
    }
    if mode == SweepMode::Carrier && !(lockin.sample_rate > 2.0 * lockin.ref_freq) {
        return Err(SignalError::SampleRateTooLow {
            sample_rate: lockin.sample_rate,
            ref_freq: lockin.ref_freq,
        }
        .into());
    }
    Ok(())
}

//! Multiphoton raster-scan imaging of voxel phantoms.
//!
//! Voxel `(i, j, k)` sits at `(i·hx, j·hy, k·hz)` µm. The effective excitation
//! volume is a separable Gaussian, truncated at 4σ per axis; every sum runs in
//! a fixed voxel order so results do not depend on thread count.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::num::{regression_slope, Real};
use crate::signal::{
    simulate_sweep, DipSpec, LockinConfig, Noise, SignalError, SpectrumTrace, SweepConfig,
    SweepMode,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScanError {
    #[error("invalid phantom: {0}")]
    InvalidPhantom(String),
    #[error("invalid PSF: {0}")]
    InvalidPsf(String),
    #[error("invalid tile: {0}")]
    InvalidTile(String),
    #[error("unknown channel '{0}'")]
    UnknownChannel(String),
    #[error("phantom has no {0} channel")]
    MissingChannel(Channel),
    #[error("invalid channel config: {0}")]
    InvalidChannelConfig(String),
    #[error("point ({0}, {1}, {2}) µm lies outside the phantom")]
    PointOutside(f64, f64, f64),
    #[error("invalid powers: {0}")]
    InvalidPowers(String),
    #[error("no tiles to stitch")]
    NoTiles,
    #[error("tiles disagree on {0}")]
    InconsistentTiles(String),
    #[error("image dimensions differ: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    TwoPef,
    ThreePef,
    Shg,
    Thg,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::TwoPef, Channel::ThreePef, Channel::Shg, Channel::Thg];

    pub fn name(self) -> &'static str {
        match self {
            Channel::TwoPef => "2PEF",
            Channel::ThreePef => "3PEF",
            Channel::Shg => "SHG",
            Channel::Thg => "THG",
        }
    }

    /// Number of photons in the excitation process.
    pub fn power_exponent(self) -> u32 {
        match self {
            Channel::TwoPef | Channel::Shg => 2,
            Channel::ThreePef | Channel::Thg => 3,
        }
    }

    pub fn color(self) -> [f64; 3] {
        match self {
            Channel::TwoPef => [1.0, 0.0, 0.0],
            Channel::Shg => [0.0, 1.0, 0.0],
            Channel::Thg => [0.0, 0.0, 1.0],
            Channel::ThreePef => [0.0, 1.0, 1.0],
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = ScanError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ScanError::UnknownChannel(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub channel: Channel,
    pub power_exponent: u32,
    pub color: [f64; 3],
}

impl ChannelConfig {
    pub fn new(channel: Channel) -> Self {
        Self {
            channel,
            power_exponent: channel.power_exponent(),
            color: channel.color(),
        }
    }

    pub fn validate(&self) -> Result<(), ScanError> {
        if !(2..=3).contains(&self.power_exponent) {
            return Err(ScanError::InvalidChannelConfig(format!(
                "power exponent must be 2 or 3, got {}",
                self.power_exponent
            )));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(ScanError::InvalidChannelConfig("color components must be in [0, 1]".into()));
        }
        Ok(())
    }
}

impl From<Channel> for ChannelConfig {
    fn from(c: Channel) -> Self {
        Self::new(c)
    }
}

/// Voxels carrying a local ODMR dip model.
#[derive(Debug, Clone, PartialEq)]
pub struct OdmrRegion<T = f64> {
    /// Same layout as the density grids.
    pub mask: Vec<bool>,
    pub dips: Vec<DipSpec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom<T = f64> {
    pub dims: [usize; 3],
    /// µm per axis
    pub voxel_size: [T; 3],
    /// Emitter density per channel, indexed `i + nx·(j + ny·k)`.
    pub channels: BTreeMap<Channel, Vec<T>>,
    pub odmr_regions: Vec<OdmrRegion<T>>,
}

impl<T: Real> Phantom<T> {
    pub fn new(dims: [usize; 3], voxel_size: [T; 3]) -> Result<Self, ScanError> {
        let p = Self {
            dims,
            voxel_size,
            channels: BTreeMap::new(),
            odmr_regions: Vec::new(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn n_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    /// µm position of a voxel center.
    pub fn position(&self, i: usize, j: usize, k: usize) -> [T; 3] {
        [
            T::from_usize_lossy(i) * self.voxel_size[0],
            T::from_usize_lossy(j) * self.voxel_size[1],
            T::from_usize_lossy(k) * self.voxel_size[2],
        ]
    }

    /// Extent `(n − 1)·h` per axis, µm.
    pub fn extent(&self) -> [T; 3] {
        [0, 1, 2].map(|a| T::from_usize_lossy(self.dims[a].saturating_sub(1)) * self.voxel_size[a])
    }

    pub fn contains(&self, point: [T; 3]) -> bool {
        let e = self.extent();
        (0..3).all(|a| point[a] >= T::zero() && point[a] <= e[a])
    }

    pub fn validate(&self) -> Result<(), ScanError> {
        if self.dims.contains(&0) {
            return Err(ScanError::InvalidPhantom("dimensions must be >= 1".into()));
        }
        if self.voxel_size.iter().any(|&h| !(h > T::zero()) || !h.is_finite()) {
            return Err(ScanError::InvalidPhantom("voxel size must be > 0".into()));
        }
        let n = self.n_voxels();
        for (c, grid) in &self.channels {
            if grid.len() != n {
                return Err(ScanError::InvalidPhantom(format!(
                    "{c} grid has {} values, expected {n}",
                    grid.len()
                )));
            }
            if grid.iter().any(|&d| !(d >= T::zero()) || !d.is_finite()) {
                return Err(ScanError::InvalidPhantom(format!("{c} densities must be finite and >= 0")));
            }
        }
        for (r, region) in self.odmr_regions.iter().enumerate() {
            if region.mask.len() != n {
                return Err(ScanError::InvalidPhantom(format!("odmr region {r} mask size mismatch")));
            }
            for d in &region.dips {
                d.validate()?;
            }
        }
        Ok(())
    }

    /// Density grid of `channel`, created empty if absent.
    pub fn channel_mut(&mut self, channel: Channel) -> &mut Vec<T> {
        let n = self.n_voxels();
        self.channels.entry(channel).or_insert_with(|| vec![T::zero(); n])
    }

    pub fn set(&mut self, channel: Channel, i: usize, j: usize, k: usize, density: T) {
        let idx = self.index(i, j, k);
        self.channel_mut(channel)[idx] = density;
    }

    /// Voxels whose centers satisfy `inside(position)`.
    pub fn mask_where(&self, inside: impl Fn([T; 3]) -> bool) -> Vec<bool> {
        let mut m = vec![false; self.n_voxels()];
        for k in 0..self.dims[2] {
            for j in 0..self.dims[1] {
                for i in 0..self.dims[0] {
                    m[self.index(i, j, k)] = inside(self.position(i, j, k));
                }
            }
        }
        m
    }

    pub fn sphere_mask(&self, center: [T; 3], radius: T) -> Vec<bool> {
        self.mask_where(|p| (0..3).map(|a| (p[a] - center[a]).powi(2)).sum::<T>() <= radius * radius)
    }

    pub fn box_mask(&self, lo: [T; 3], hi: [T; 3]) -> Vec<bool> {
        self.mask_where(|p| (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a]))
    }

    /// Adds `density` to every masked voxel of `channel`.
    pub fn fill(&mut self, channel: Channel, mask: &[bool], density: T) {
        let grid = self.channel_mut(channel);
        for (g, &m) in grid.iter_mut().zip(mask) {
            if m {
                *g += density;
            }
        }
    }

    pub fn fill_all(&mut self, channel: Channel, density: T) {
        self.channel_mut(channel).iter_mut().for_each(|g| *g = density);
    }

    pub fn add_region(&mut self, mask: Vec<bool>, dips: Vec<DipSpec<T>>) {
        self.odmr_regions.push(OdmrRegion { mask, dips });
    }

    fn grid(&self, channel: Channel) -> Result<&[T], ScanError> {
        self.channels
            .get(&channel)
            .map(|g| g.as_slice())
            .ok_or(ScanError::MissingChannel(channel))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsfConfig<T = f64> {
    /// µm
    pub fwhm_lateral: T,
    /// µm
    pub fwhm_axial: T,
}

impl<T: Real> PsfConfig<T> {
    pub fn standard() -> Self {
        Self {
            fwhm_lateral: T::lit(0.57),
            fwhm_axial: T::lit(3.95),
        }
    }

    pub fn validate(&self) -> Result<(), ScanError> {
        for (name, v) in [("lateral", self.fwhm_lateral), ("axial", self.fwhm_axial)] {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(ScanError::InvalidPsf(format!("{name} FWHM must be > 0")));
            }
        }
        Ok(())
    }

    fn sigmas(&self) -> [T; 3] {
        let k = T::two() * (T::two() * T::LN_2()).sqrt();
        let l = self.fwhm_lateral / k;
        [l, l, self.fwhm_axial / k]
    }
}

/// `exp(−4 ln2·((dx² + dy²)/w_lat² + dz²/w_ax²))`; 1 at the focus.
pub fn excitation_weight<T: Real>(psf: &PsfConfig<T>, offset: [T; 3]) -> T {
    let c = T::lit(4.0) * T::LN_2();
    let lat = (offset[0] * offset[0] + offset[1] * offset[1]) / (psf.fwhm_lateral * psf.fwhm_lateral);
    let ax = offset[2] * offset[2] / (psf.fwhm_axial * psf.fwhm_axial);
    (-c * (lat + ax)).exp()
}

/// 1-D factor of the excitation weight along one axis.
#[inline]
fn axis_weight<T: Real>(d: T, fwhm: T) -> T {
    let c = T::lit(4.0) * T::LN_2();
    (-c * d * d / (fwhm * fwhm)).exp()
}

/// Voxel indices within 4σ of `f` along an axis of `n` voxels spaced `h`.
fn window<T: Real>(f: T, sigma: T, h: T, n: usize) -> std::ops::Range<usize> {
    let r = T::lit(4.0) * sigma;
    let lo = ((f - r) / h).ceil();
    let hi = ((f + r) / h).floor();
    if hi < T::zero() || lo > T::from_usize_lossy(n - 1) {
        return 0..0;
    }
    let lo = lo.max(T::zero()).as_f64() as usize;
    let hi = (hi.as_f64() as usize).min(n - 1);
    lo..hi + 1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileConfig<T = f64> {
    /// Side of the square field of view, µm.
    pub fov: T,
    /// Pixels per side.
    pub pixels: usize,
    /// µm
    pub focus_z: T,
    /// Stage position of pixel (0, 0), µm.
    pub stage_position: [T; 2],
    /// Fractional overlap between neighbouring tiles of a mosaic.
    pub overlap: T,
}

impl<T: Real> TileConfig<T> {
    pub fn standard() -> Self {
        Self {
            fov: T::lit(317.0),
            pixels: 512,
            focus_z: T::zero(),
            stage_position: [T::zero(); 2],
            overlap: T::lit(0.1),
        }
    }

    pub fn validate(&self) -> Result<(), ScanError> {
        if !(self.fov > T::zero()) || !self.fov.is_finite() {
            return Err(ScanError::InvalidTile("fov must be > 0".into()));
        }
        if self.pixels == 0 {
            return Err(ScanError::InvalidTile("pixels must be >= 1".into()));
        }
        if !(self.overlap >= T::zero() && self.overlap < T::half()) {
            return Err(ScanError::InvalidTile("overlap must be in [0, 0.5)".into()));
        }
        if !self.focus_z.is_finite() || self.stage_position.iter().any(|s| !s.is_finite()) {
            return Err(ScanError::InvalidTile("positions must be finite".into()));
        }
        Ok(())
    }

    /// Pixel spacing, µm.
    pub fn pitch(&self) -> T {
        self.fov / T::from_usize_lossy(self.pixels)
    }

    /// Focus of pixel `i` along one lateral axis.
    pub fn focus(&self, axis: usize, i: usize) -> T {
        self.stage_position[axis] + T::from_usize_lossy(i) * self.pitch()
    }
}

/// `nx × ny` tiles stepping by `fov·(1 − overlap)` rounded to whole pixels.
pub fn tile_grid<T: Real>(base: &TileConfig<T>, nx: usize, ny: usize) -> Result<Vec<TileConfig<T>>, ScanError> {
    base.validate()?;
    let step_px = (T::from_usize_lossy(base.pixels) * (T::one() - base.overlap)).round();
    let step = step_px * base.pitch();
    let mut out = Vec::with_capacity(nx * ny);
    for ty in 0..ny {
        for tx in 0..nx {
            out.push(TileConfig {
                stage_position: [
                    base.stage_position[0] + T::from_usize_lossy(tx) * step,
                    base.stage_position[1] + T::from_usize_lossy(ty) * step,
                ],
                ..*base
            });
        }
    }
    Ok(out)
}

/// Row-major grayscale image; `data[y·width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T = f64> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![T::zero(); width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn max(&self) -> T {
        self.data.iter().fold(T::neg_infinity(), |m, &v| m.max(v))
    }

    pub fn min(&self) -> T {
        self.data.iter().fold(T::infinity(), |m, &v| m.min(v))
    }

    /// Position of the largest value (first in row-major order on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileImage<T = f64> {
    pub channel: Channel,
    pub image: Image<T>,
    pub config: TileConfig<T>,
}

/// Renders one channel over a tile.
///
/// `pixel = Pⁿ · Σ density·excitation_weight(voxel − focus)`, evaluated as a
/// depth collapse, then a pass along x, then along y. Pixels outside the
/// phantom see only the voxels that exist.
pub fn scan_tile<T: Real>(
    phantom: &Phantom<T>,
    channel: &ChannelConfig,
    psf: &PsfConfig<T>,
    tile: &TileConfig<T>,
    power: T,
) -> Result<TileImage<T>, ScanError> {
    phantom.validate()?;
    channel.validate()?;
    psf.validate()?;
    tile.validate()?;
    if !(power >= T::zero()) || !power.is_finite() {
        return Err(ScanError::InvalidPowers(format!("power must be >= 0, got {power}")));
    }
    let grid = phantom.grid(channel.channel)?;
    let [nx, ny, nz] = phantom.dims;
    let [hx, hy, hz] = phantom.voxel_size;
    let [sx, sy, sz] = psf.sigmas();
    let np = tile.pixels;

    let zw: Vec<(usize, T)> = window(tile.focus_z, sz, hz, nz)
        .map(|k| (k, axis_weight(T::from_usize_lossy(k) * hz - tile.focus_z, psf.fwhm_axial)))
        .collect();
    let mut plane = vec![T::zero(); nx * ny];
    for &(k, w) in &zw {
        let slab = &grid[nx * ny * k..nx * ny * (k + 1)];
        for (p, &d) in plane.iter_mut().zip(slab) {
            *p += d * w;
        }
    }

    // x pass: rows[j][px]
    let xw: Vec<(std::ops::Range<usize>, Vec<T>)> = (0..np)
        .map(|px| {
            let f = tile.focus(0, px);
            let r = window(f, sx, hx, nx);
            let w = r.clone().map(|i| axis_weight(T::from_usize_lossy(i) * hx - f, psf.fwhm_lateral)).collect();
            (r, w)
        })
        .collect();
    let mut rows = vec![T::zero(); ny * np];
    rows.par_chunks_mut(np).enumerate().for_each(|(j, out)| {
        let src = &plane[nx * j..nx * (j + 1)];
        for (o, (r, w)) in out.iter_mut().zip(&xw) {
            let mut acc = T::zero();
            for (i, &wi) in r.clone().zip(w) {
                acc += src[i] * wi;
            }
            *o = acc;
        }
    });

    let scale = power.powi(channel.power_exponent as i32);
    let mut data = vec![T::zero(); np * np];
    data.par_chunks_mut(np).enumerate().for_each(|(py, out)| {
        let f = tile.focus(1, py);
        let r = window(f, sy, hy, ny);
        let w: Vec<T> = r.clone().map(|j| axis_weight(T::from_usize_lossy(j) * hy - f, psf.fwhm_lateral)).collect();
        for (px, o) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (j, &wj) in r.clone().zip(&w) {
                acc += rows[j * np + px] * wj;
            }
            *o = acc * scale;
        }
    });

    Ok(TileImage {
        channel: channel.channel,
        image: Image {
            width: np,
            height: np,
            data,
        },
        config: *tile,
    })
}

/// As [`scan_tile`], plus Gaussian noise with standard deviation
/// `noise.sigma` times the noiseless peak; results are clamped at zero.
pub fn scan_tile_noisy<T: Real>(
    phantom: &Phantom<T>,
    channel: &ChannelConfig,
    psf: &PsfConfig<T>,
    tile: &TileConfig<T>,
    power: T,
    noise: Noise<T>,
) -> Result<TileImage<T>, ScanError> {
    let mut t = scan_tile(phantom, channel, psf, tile, power)?;
    let sd = (noise.sigma * t.image.max()).as_f64();
    if !(sd >= 0.0) || !sd.is_finite() {
        return Err(SignalError::InvalidNoise.into());
    }
    if sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        let n = Normal::new(0.0, sd).expect("sd is finite and positive");
        for v in t.image.data.iter_mut() {
            *v = (*v + T::lit(n.sample(&mut rng))).max(T::zero());
        }
    }
    Ok(t)
}

/// Σ density·weight over the voxels near `point`, split by `group(voxel index)`.
fn weighted_sums<T: Real>(
    phantom: &Phantom<T>,
    grid: &[T],
    psf: &PsfConfig<T>,
    point: [T; 3],
    groups: usize,
    group: impl Fn(usize) -> usize,
) -> Vec<T> {
    let [sx, sy, sz] = psf.sigmas();
    let [nx, ny, nz] = phantom.dims;
    let [hx, hy, hz] = phantom.voxel_size;
    let mut sums = vec![T::zero(); groups];
    for k in window(point[2], sz, hz, nz) {
        let wz = axis_weight(T::from_usize_lossy(k) * hz - point[2], psf.fwhm_axial);
        for j in window(point[1], sy, hy, ny) {
            let wy = axis_weight(T::from_usize_lossy(j) * hy - point[1], psf.fwhm_lateral);
            for i in window(point[0], sx, hx, nx) {
                let wx = axis_weight(T::from_usize_lossy(i) * hx - point[0], psf.fwhm_lateral);
                let idx = phantom.index(i, j, k);
                sums[group(idx)] += grid[idx] * (wz * wy * wx);
            }
        }
    }
    sums
}

fn check_point<T: Real>(phantom: &Phantom<T>, point: [T; 3]) -> Result<(), ScanError> {
    if point.iter().any(|c| !c.is_finite()) || !phantom.contains(point) {
        return Err(ScanError::PointOutside(point[0].as_f64(), point[1].as_f64(), point[2].as_f64()));
    }
    Ok(())
}

/// Signal of one channel with the focus parked at `point` (µm).
pub fn point_signal<T: Real>(
    phantom: &Phantom<T>,
    channel: &ChannelConfig,
    psf: &PsfConfig<T>,
    point: [T; 3],
    power: T,
) -> Result<T, ScanError> {
    phantom.validate()?;
    channel.validate()?;
    psf.validate()?;
    check_point(phantom, point)?;
    let grid = phantom.grid(channel.channel)?;
    let s = weighted_sums(phantom, grid, psf, point, 1, |_| 0)[0];
    Ok(s * power.powi(channel.power_exponent as i32))
}

/// Parked-focus signal at each power, optionally with multiplicative noise of
/// relative standard deviation `noise.sigma`.
pub fn power_series<T: Real>(
    phantom: &Phantom<T>,
    channel: &ChannelConfig,
    psf: &PsfConfig<T>,
    point: [T; 3],
    powers: &[T],
    noise: Option<Noise<T>>,
) -> Result<Vec<T>, ScanError> {
    if powers.len() < 3 {
        return Err(ScanError::InvalidPowers(format!("need at least 3 powers, got {}", powers.len())));
    }
    if powers.iter().any(|&p| !(p > T::zero()) || !p.is_finite()) {
        return Err(ScanError::InvalidPowers("powers must be > 0".into()));
    }
    let base = point_signal(phantom, channel, psf, point, T::one())?;
    let mut rng = noise.map(|n| ChaCha8Rng::seed_from_u64(n.seed));
    let normal = match noise {
        Some(n) if n.sigma > T::zero() => Some(
            Normal::new(0.0, n.sigma.as_f64()).map_err(|_| ScanError::from(SignalError::InvalidNoise))?,
        ),
        Some(n) if !(n.sigma >= T::zero()) => return Err(SignalError::InvalidNoise.into()),
        _ => None,
    };
    Ok(powers
        .iter()
        .map(|&p| {
            let s = base * p.powi(channel.power_exponent as i32);
            match (&normal, rng.as_mut()) {
                (Some(n), Some(r)) => s * (T::one() + T::lit(n.sample(r))),
                _ => s,
            }
        })
        .collect())
}

/// Least-squares slope of `ln(signal)` against `ln(power)`.
pub fn power_law_slope<T: Real>(powers: &[T], signals: &[T]) -> T {
    let x: Vec<T> = powers.iter().map(|p| p.ln()).collect();
    let y: Vec<T> = signals.iter().map(|s| s.ln()).collect();
    regression_slope(&x, &y)
}

/// Acquisition settings for a parked-focus ODMR sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdmrSetup<T = f64> {
    pub psf: PsfConfig<T>,
    pub sweep: SweepConfig<T>,
    pub lockin: LockinConfig<T>,
    pub mode: SweepMode,
    pub noise: Noise<T>,
}

impl<T: Real> OdmrSetup<T> {
    pub fn standard() -> Self {
        Self {
            psf: PsfConfig::standard(),
            sweep: SweepConfig::standard(),
            lockin: LockinConfig::standard(),
            mode: SweepMode::Baseband,
            noise: Noise::none(),
        }
    }
}

/// Dip model seen by a parked focus: each region's dips with contrast scaled
/// by that region's share of the collected 2PEF signal. A voxel in several
/// regions belongs to the first. Returns `(dips, total signal)`.
pub fn effective_dips<T: Real>(
    phantom: &Phantom<T>,
    psf: &PsfConfig<T>,
    point: [T; 3],
    power: T,
) -> Result<(Vec<DipSpec<T>>, T), ScanError> {
    phantom.validate()?;
    psf.validate()?;
    check_point(phantom, point)?;
    let ch = ChannelConfig::new(Channel::TwoPef);
    let grid = phantom.grid(Channel::TwoPef)?;
    let nr = phantom.odmr_regions.len();
    let sums = weighted_sums(phantom, grid, psf, point, nr + 1, |idx| {
        phantom
            .odmr_regions
            .iter()
            .position(|r| r.mask[idx])
            .unwrap_or(nr)
    });
    let total: T = sums.iter().copied().sum();
    let mut dips = Vec::new();
    if total > T::zero() {
        for (region, &s) in phantom.odmr_regions.iter().zip(&sums) {
            let share = s / total;
            if share > T::zero() {
                dips.extend(region.dips.iter().map(|d| DipSpec {
                    contrast: d.contrast * share,
                    ..*d
                }));
            }
        }
    }
    Ok((dips, total * power.powi(ch.power_exponent as i32)))
}

/// Swept ODMR trace of the 2PEF signal collected at `point`.
pub fn odmr_at_point<T: Real>(
    phantom: &Phantom<T>,
    point: [T; 3],
    power: T,
    setup: &OdmrSetup<T>,
) -> Result<SpectrumTrace<T>, ScanError> {
    let (dips, baseline) = effective_dips(phantom, &setup.psf, point, power)?;
    Ok(simulate_sweep(
        &setup.sweep,
        &dips,
        baseline,
        &setup.lockin,
        setup.mode,
        setup.noise,
    )?)
}

/// Stitched tiles on a common pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Mosaic<T = f64> {
    pub channel: Channel,
    pub image: Image<T>,
    /// Stage position of pixel (0, 0), µm.
    pub origin: [T; 2],
    pub pitch: T,
}

/// Places tiles by stage position (rounded to whole pixels) and averages
/// overlapping pixels with equal weights. Uncovered pixels are 0.
pub fn stitch<T: Real>(tiles: &[TileImage<T>]) -> Result<Mosaic<T>, ScanError> {
    let first = tiles.first().ok_or(ScanError::NoTiles)?;
    let pitch = first.config.pitch();
    for t in tiles {
        let p = t.config.pitch();
        if (p - pitch).abs() > T::lit(1e-9) * pitch {
            return Err(ScanError::InconsistentTiles(format!("pixel pitch ({pitch} vs {p} µm)")));
        }
        if t.channel != first.channel {
            return Err(ScanError::InconsistentTiles(format!("channel ({} vs {})", first.channel, t.channel)));
        }
        if t.image.data.len() != t.image.width * t.image.height {
            return Err(ScanError::DimensionMismatch("tile data does not match its size".into()));
        }
    }
    let min = [0, 1].map(|a| {
        tiles
            .iter()
            .map(|t| t.config.stage_position[a])
            .fold(T::infinity(), T::min)
    });
    let offsets: Vec<[usize; 2]> = tiles
        .iter()
        .map(|t| [0, 1].map(|a| ((t.config.stage_position[a] - min[a]) / pitch).round().as_f64() as usize))
        .collect();
    let width = tiles
        .iter()
        .zip(&offsets)
        .map(|(t, o)| o[0] + t.image.width)
        .max()
        .unwrap_or(0);
    let height = tiles
        .iter()
        .zip(&offsets)
        .map(|(t, o)| o[1] + t.image.height)
        .max()
        .unwrap_or(0);
    let mut sum = vec![T::zero(); width * height];
    let mut count = vec![0u32; width * height];
    for (t, o) in tiles.iter().zip(&offsets) {
        for y in 0..t.image.height {
            for x in 0..t.image.width {
                let g = (o[1] + y) * width + o[0] + x;
                sum[g] += t.image.get(x, y);
                count[g] += 1;
            }
        }
    }
    let data = sum
        .into_iter()
        .zip(count)
        .map(|(s, c)| if c > 0 { s / T::lit(c as f64) } else { T::zero() })
        .collect();
    Ok(Mosaic {
        channel: first.channel,
        image: Image { width, height, data },
        origin: min,
        pitch,
    })
}

/// RGB image with components in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage<T = f64> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[T; 3]>,
}

/// Additive false-color blend of min–max normalized channels, clamped to
/// `[0, 1]`. A constant channel maps to 1 if positive and 0 otherwise.
pub fn composite<T: Real>(layers: &[(ChannelConfig, &Image<T>)]) -> Result<RgbImage<T>, ScanError> {
    let Some((_, first)) = layers.first() else {
        return Err(ScanError::DimensionMismatch("no channels to blend".into()));
    };
    let (w, h) = (first.width, first.height);
    for (c, img) in layers {
        c.validate()?;
        if img.width != w || img.height != h || img.data.len() != w * h {
            return Err(ScanError::DimensionMismatch(format!(
                "{} is {}×{}, expected {w}×{h}",
                c.channel, img.width, img.height
            )));
        }
    }
    let mut data = vec![[T::zero(); 3]; w * h];
    for (c, img) in layers {
        let (lo, hi) = (img.min(), img.max());
        let color = c.color.map(T::lit);
        for (px, &v) in data.iter_mut().zip(&img.data) {
            let n = if hi > lo {
                (v - lo) / (hi - lo)
            } else if hi > T::zero() {
                T::one()
            } else {
                T::zero()
            };
            for k in 0..3 {
                px[k] += n * color[k];
            }
        }
    }
    for px in data.iter_mut() {
        for v in px.iter_mut() {
            *v = v.max(T::zero()).min(T::one());
        }
    }
    Ok(RgbImage { width: w, height: h, data })
}

//! Subcommand implementations. Each returns a JSON report for stdout plus an
//! exit status; output files are written along the way.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nvodmr::fit::{best_candidate, fit_candidates_with, FitError};
use nvodmr::io::{write_pgm, write_ppm, write_trace, ExperimentConfig, IoError, ScanSetup};
use nvodmr::magnetometry::{classify_pattern, solve_b_vector_with, DegeneracyFlag, MagnetometryError};
use nvodmr::scan::{
    composite, effective_dips, odmr_at_point, power_law_slope, power_series, scan_tile,
    scan_tile_noisy, stitch, ScanError,
};
use nvodmr::signal::{simulate_sweep, synth_trace, DipSpec, Noise, SpectrumTrace};
use nvodmr::spin::{all_resonances, MagneticField, ResonancePair};
use serde_json::{json, Value};

use crate::overrides::Overrides;
use crate::{Command, Common};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_FIT: u8 = 3;
pub const EXIT_MAGNETOMETRY: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    FitFailed(String),
    Inconsistent(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::FitFailed(_) => EXIT_FIT,
            CliError::Inconsistent(_) => EXIT_MAGNETOMETRY,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "{m}"),
            CliError::FitFailed(m) => write!(f, "fit did not converge: {m}"),
            CliError::Inconsistent(m) => write!(f, "inconsistent resonances: {m}"),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Fit(e) => e.into(),
            IoError::Magnetometry(e) => e.into(),
            e => CliError::Input(e.to_string()),
        }
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::AllCandidatesFailed(_) => CliError::FitFailed(e.to_string()),
            e => CliError::Input(e.to_string()),
        }
    }
}

impl From<MagnetometryError> for CliError {
    fn from(e: MagnetometryError) -> Self {
        match e {
            MagnetometryError::Inconsistent { .. } => CliError::Inconsistent(e.to_string()),
            e => CliError::Input(e.to_string()),
        }
    }
}

macro_rules! input_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Input(e.to_string())
            }
        }
    )*};
}

input_errors!(ScanError, nvodmr::signal::SignalError, nvodmr::spin::SpinError);

pub struct Outcome {
    pub report: Value,
    pub status: u8,
}

impl From<Value> for Outcome {
    fn from(report: Value) -> Self {
        Self { report, status: 0 }
    }
}

pub fn run(command: &Command, common: &Common, overrides: &Overrides) -> Result<Outcome, CliError> {
    let base = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let cfg = overrides.apply(base, common.seed)?;
    match command {
        Command::SynthSpectrum => synth_spectrum(&cfg, common).map(Into::into),
        Command::Sweep => sweep(&cfg, common).map(Into::into),
        Command::Fit {
            input,
            dips,
            candidates,
        } => fit(&cfg, common, input, *dips, candidates.as_deref()).map(Into::into),
        Command::Pattern { b, scale } => pattern(&cfg, b.as_deref(), scale.as_deref()).map(Into::into),
        Command::Invert { freqs } => invert(&cfg, freqs.as_deref()),
        Command::Scan => scan(&cfg, common).map(Into::into),
        Command::OdmrPoint { point } => odmr_point(&cfg, common, point.as_deref()).map(Into::into),
        Command::PowerSeries { point } => power_series_cmd(&cfg, common, point.as_deref()).map(Into::into),
    }
}

fn output_path(common: &Common, default_name: &str) -> Result<PathBuf, CliError> {
    let path = common.out.clone().unwrap_or_else(|| common.out_dir.join(default_name));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    Ok(path)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))
}

fn dip_json(d: &DipSpec) -> Value {
    json!({"f0_mhz": d.f0, "fwhm_mhz": d.fwhm, "contrast": d.contrast})
}

fn trace_summary(trace: &SpectrumTrace) -> Value {
    let (lo, hi) = trace
        .signal
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    json!({"n_points": trace.len(), "signal_min": lo, "signal_max": hi})
}

fn synth_spectrum(cfg: &ExperimentConfig, common: &Common) -> Result<Value, CliError> {
    let dips = cfg.spectrum_dips()?;
    let noise = cfg.noise()?;
    let baseline = cfg.baseline()?;
    let trace = synth_trace(&cfg.sweep_config()?, &dips, baseline, noise.sigma, noise.seed)?;
    let path = output_path(common, "spectrum.csv")?;
    write_trace(&path, &trace)?;
    Ok(json!({
        "command": "synth-spectrum",
        "output": path,
        "seed": noise.seed,
        "noise_sigma": noise.sigma,
        "baseline": baseline,
        "dips": dips.iter().map(dip_json).collect::<Vec<_>>(),
        "trace": trace_summary(&trace),
    }))
}

fn sweep(cfg: &ExperimentConfig, common: &Common) -> Result<Value, CliError> {
    let dips = cfg.spectrum_dips()?;
    let noise = cfg.noise()?;
    let baseline = cfg.baseline()?;
    let mode = cfg.sweep_mode()?;
    let trace = simulate_sweep(&cfg.sweep_config()?, &dips, baseline, &cfg.lockin_config()?, mode, noise)?;
    let path = output_path(common, "sweep.csv")?;
    write_trace(&path, &trace)?;
    Ok(json!({
        "command": "sweep",
        "output": path,
        "mode": cfg.lockin.mode,
        "seed": noise.seed,
        "noise_sigma": noise.sigma,
        "baseline": baseline,
        "dips": dips.iter().map(dip_json).collect::<Vec<_>>(),
        "trace": trace_summary(&trace),
    }))
}

fn fit(
    cfg: &ExperimentConfig,
    common: &Common,
    input: &Path,
    dips: Option<usize>,
    candidates: Option<&[usize]>,
) -> Result<Value, CliError> {
    let trace: SpectrumTrace = nvodmr::io::read_trace(input)?;
    let counts = match (dips, candidates) {
        (Some(n), _) => vec![n],
        (None, Some(c)) => c.to_vec(),
        (None, None) => cfg.candidates()?,
    };
    let detect = cfg.detect_config()?;
    let fits = fit_candidates_with(&trace, &counts, &detect, &cfg.lm_options()?)?;
    let best = best_candidate(&fits)?;
    let f = &best.fit;
    for d in fits.iter().map(|c| c.diagnostic()) {
        eprintln!(
            "{} dips: {:?} after {} iterations, BIC {:.3}",
            d.n_dips, d.termination, d.iterations, d.bic
        );
    }
    let se = f.std_errors();
    let dips_json: Vec<Value> = f
        .dips
        .iter()
        .enumerate()
        .map(|(i, d)| {
            json!({
                "f0_mhz": d.f0, "fwhm_mhz": d.fwhm, "contrast": d.contrast,
                "f0_err_mhz": se[1 + 3 * i], "fwhm_err_mhz": se[2 + 3 * i], "contrast_err": se[3 + 3 * i],
            })
        })
        .collect();
    let separation = (f.dips.len() >= 2).then(|| f.dips[f.dips.len() - 1].f0 - f.dips[0].f0);
    let mut report = json!({
        "command": "fit",
        "input": input,
        "n_dips": f.dips.len(),
        "baseline": f.baseline,
        "dips": dips_json,
        "separation_mhz": separation,
        "total_contrast": f.dips.iter().fold(0.0, |s, d| s + d.contrast),
        "mean_fwhm_mhz": f.dips.iter().map(|d| d.fwhm).sum::<f64>() / f.dips.len() as f64,
        "rms_residual": f.rms_residual,
        "bic": best.bic,
        "converged": f.converged,
        "termination": format!("{:?}", f.termination),
        "iterations": f.iterations,
        "candidates": fits.iter().map(|c| {
            let d = c.diagnostic();
            json!({"n_dips": d.n_dips, "converged": d.converged, "bic": d.bic, "rms_residual": d.rms_residual})
        }).collect::<Vec<_>>(),
    });
    if common.out.is_some() {
        let model = SpectrumTrace {
            signal: trace.frequencies.iter().map(|&x| f.evaluate(x)).collect(),
            frequencies: trace.frequencies.clone(),
            seed: None,
        };
        let path = output_path(common, "fit.csv")?;
        write_trace(&path, &model)?;
        report["output"] = json!(path);
    }
    Ok(report)
}

/// Magnitude with a unit suffix (T, mT, uT/µT, nT); bare numbers are mT.
fn parse_scale(s: &str) -> Result<f64, CliError> {
    let s = s.trim();
    let (num, factor) = [("mT", 1.0), ("uT", 1e-3), ("µT", 1e-3), ("nT", 1e-6), ("T", 1e3)]
        .iter()
        .find_map(|(unit, k)| s.strip_suffix(unit).map(|n| (n, *k)))
        .unwrap_or((s, 1.0));
    let v: f64 = num
        .trim()
        .parse()
        .map_err(|_| CliError::Input(format!("cannot parse field magnitude '{s}'")))?;
    if v < 0.0 || !v.is_finite() {
        return Err(CliError::Input(format!("field magnitude must be finite and >= 0, got '{s}'")));
    }
    Ok(v * factor)
}

fn pattern(cfg: &ExperimentConfig, b: Option<&[f64]>, scale: Option<&str>) -> Result<Value, CliError> {
    let params = cfg.hamiltonian_params()?;
    let raw = match three(b, "b")? {
        Some([x, y, z]) => MagneticField::new(x, y, z)?,
        None => cfg.magnetic_field()?,
    };
    let field = match scale {
        Some(s) => {
            let mag = parse_scale(s)?;
            if raw.magnitude() == 0.0 && mag > 0.0 {
                return Err(CliError::Input("--scale needs a nonzero field direction".into()));
            }
            MagneticField::along(raw.to_array(), mag)
        }
        None => raw,
    };
    let class = classify_pattern(&field, &params, cfg.merge_tol()?)?;
    Ok(json!({
        "command": "pattern",
        "field_mt": field.to_array(),
        "magnitude_mt": field.magnitude(),
        "count": class.count,
        "spread_mhz": class.pattern.spread(),
        "dips": class.pattern.dips.iter().map(|d| json!({"frequency_mhz": d.frequency, "multiplicity": d.multiplicity})).collect::<Vec<_>>(),
        "groups": class.groups.iter().map(|g| json!({"projection_mt": g.projection, "axes": g.axes})).collect::<Vec<_>>(),
    }))
}

fn flag_json(f: &DegeneracyFlag) -> Value {
    match f {
        DegeneracyFlag::ZeroField => json!({"kind": "zero_field"}),
        DegeneracyFlag::EqualProjections { axes } => json!({"kind": "equal_projections", "axes": [axes.0, axes.1]}),
        DegeneracyFlag::Perpendicular { axis } => json!({"kind": "perpendicular", "axis": axis}),
    }
}

fn invert(cfg: &ExperimentConfig, freqs: Option<&[f64]>) -> Result<Outcome, CliError> {
    let params = cfg.hamiltonian_params()?;
    let mut f: Vec<f64> = match freqs {
        Some(v) => v.to_vec(),
        None => all_resonances(&params, &cfg.magnetic_field()?)
            .iter()
            .flat_map(|p| [p.f_minus, p.f_plus])
            .collect(),
    };
    if f.len() != 8 || f.iter().any(|x| !x.is_finite()) {
        return Err(CliError::Input(format!("--freqs needs 8 finite frequencies, got {}", f.len())));
    }
    // lower transitions fall as the upper ones rise, so pairs nest around D
    f.sort_by(f64::total_cmp);
    let pairs: Vec<ResonancePair> = (0..4).map(|i| ResonancePair::unlabeled(f[i], f[7 - i])).collect();
    let est = solve_b_vector_with(&pairs, &params, &cfg.solve_options()?)?;
    let report = json!({
        "command": "invert",
        "frequencies_mhz": f,
        "b_mt": est.b.to_array(),
        "b_solved_mt": est.b_solved.to_array(),
        "magnitude_mt": est.b.magnitude(),
        "residual_rms_mhz": est.residual_rms,
        "consistent": est.consistent,
        "assignment": est.assignment.iter().map(|a| a.index).collect::<Vec<_>>(),
        "degenerate": est.degenerate_flags.iter().map(flag_json).collect::<Vec<_>>(),
        "iterations": est.iterations,
    });
    let status = if est.consistent {
        0
    } else {
        eprintln!(
            "nvodmr: residual {:.4} MHz exceeds {} MHz; no field explains these resonances",
            est.residual_rms, cfg.magnetometry.inconsistency_mhz
        );
        EXIT_MAGNETOMETRY
    };
    Ok(Outcome { report, status })
}

fn three(v: Option<&[f64]>, flag: &str) -> Result<Option<[f64; 3]>, CliError> {
    match v {
        None => Ok(None),
        Some(&[a, b, c]) => Ok(Some([a, b, c])),
        Some(v) => Err(CliError::Input(format!("--{flag} needs 3 comma-separated values, got {}", v.len()))),
    }
}

fn scan_setup(cfg: &ExperimentConfig, point: Option<&[f64]>) -> Result<ScanSetup, CliError> {
    let point = three(point, "point")?;
    let mut cfg = cfg.clone();
    if let (Some(p), Some(s)) = (point, cfg.scan.as_mut()) {
        s.point_um = p;
    }
    Ok(cfg.scan_setup()?)
}

fn scan(cfg: &ExperimentConfig, common: &Common) -> Result<Value, CliError> {
    let s = scan_setup(cfg, None)?;
    create_dir(&common.out_dir)?;
    let n_tiles = s.tiles.len();
    let mut mosaics = Vec::new();
    let mut channels = Vec::new();
    for (ci, ch) in s.channels.iter().enumerate() {
        let tiles = s
            .tiles
            .iter()
            .enumerate()
            .map(|(ti, t)| {
                if s.image_noise.sigma > 0.0 {
                    let noise = Noise {
                        sigma: s.image_noise.sigma,
                        seed: s.image_noise.seed.wrapping_add((ci * n_tiles + ti) as u64),
                    };
                    scan_tile_noisy(&s.phantom, ch, &s.psf, t, s.power, noise)
                } else {
                    scan_tile(&s.phantom, ch, &s.psf, t, s.power)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mosaic = stitch(&tiles)?;
        let path = common.out_dir.join(format!("{}.pgm", ch.channel));
        write_pgm(&path, &mosaic.image)?;
        eprintln!("{}: {}×{} px", ch.channel, mosaic.image.width, mosaic.image.height);
        channels.push(json!({
            "channel": ch.channel.name(),
            "output": path,
            "width": mosaic.image.width,
            "height": mosaic.image.height,
            "min": mosaic.image.min(),
            "max": mosaic.image.max(),
            "pitch_um": mosaic.pitch,
            "origin_um": mosaic.origin,
        }));
        mosaics.push((*ch, mosaic));
    }
    let layers: Vec<_> = mosaics.iter().map(|(c, m)| (*c, &m.image)).collect();
    let rgb = composite(&layers)?;
    let path = output_path(common, "composite.ppm")?;
    write_ppm(&path, &rgb)?;
    Ok(json!({
        "command": "scan",
        "tiles": n_tiles,
        "power": s.power,
        "channels": channels,
        "composite": path,
    }))
}

fn odmr_point(cfg: &ExperimentConfig, common: &Common, point: Option<&[f64]>) -> Result<Value, CliError> {
    let s = scan_setup(cfg, point)?;
    let (dips, baseline) = effective_dips(&s.phantom, &s.psf, s.point, s.power)?;
    let trace = odmr_at_point(&s.phantom, s.point, s.power, &s.odmr)?;
    let path = output_path(common, "odmr.csv")?;
    write_trace(&path, &trace)?;
    Ok(json!({
        "command": "odmr-point",
        "output": path,
        "point_um": s.point,
        "power": s.power,
        "baseline": baseline,
        "dips": dips.iter().map(dip_json).collect::<Vec<_>>(),
        "total_contrast": dips.iter().fold(0.0, |s, d| s + d.contrast),
        "seed": s.odmr.noise.seed,
        "trace": trace_summary(&trace),
    }))
}

fn power_series_cmd(cfg: &ExperimentConfig, common: &Common, point: Option<&[f64]>) -> Result<Value, CliError> {
    let s = scan_setup(cfg, point)?;
    let mut columns = Vec::new();
    let mut channels = Vec::new();
    for (ci, ch) in s.channels.iter().enumerate() {
        let noise = s.power_noise.map(|n| Noise {
            sigma: n.sigma,
            seed: n.seed.wrapping_add(ci as u64),
        });
        let signals = power_series(&s.phantom, ch, &s.psf, s.point, &s.powers, noise)?;
        let slope = if signals.iter().all(|&v| v > 0.0) {
            Some(power_law_slope(&s.powers, &signals))
        } else {
            eprintln!("{}: no signal at this point", ch.channel);
            None
        };
        channels.push(json!({"channel": ch.channel.name(), "slope": slope, "signals": signals}));
        columns.push((ch.channel, signals));
    }
    let mut csv = String::from("power");
    for (c, _) in &columns {
        write!(csv, ",{c}").expect("writing to a String");
    }
    csv.push('\n');
    for (i, p) in s.powers.iter().enumerate() {
        write!(csv, "{p}").expect("writing to a String");
        for (_, v) in &columns {
            write!(csv, ",{}", v[i]).expect("writing to a String");
        }
        csv.push('\n');
    }
    let path = output_path(common, "power_series.csv")?;
    std::fs::write(&path, csv).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(json!({
        "command": "power-series",
        "output": path,
        "point_um": s.point,
        "powers": s.powers,
        "channels": channels,
    }))
}

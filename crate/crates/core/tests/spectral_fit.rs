use nvodmr::fit::{
    detect_dips, fit_candidates, fit_lorentzians, select_model, DetectConfig, FitError, FitResult,
};
use nvodmr::signal::{lorentzian_spectrum, synth_trace, DipSpec, SpectrumTrace, SweepConfig};
use proptest::prelude::*;

fn doublet() -> Vec<DipSpec> {
    vec![
        DipSpec::new(2867.18, 26.87, 0.035).unwrap(),
        DipSpec::new(2872.82, 26.87, 0.035).unwrap(),
    ]
}

fn zeeman4() -> Vec<DipSpec> {
    [2825.0, 2855.0, 2885.0, 2915.0]
        .iter()
        .map(|&f| DipSpec::new(f, 10.0, 0.03).unwrap())
        .collect()
}

fn trace(dips: &[DipSpec], sigma: f64, seed: u64) -> SpectrumTrace {
    synth_trace(&SweepConfig::standard(), dips, 1.0, sigma, seed).unwrap()
}

fn shifted(dips: &[DipSpec], df: f64) -> Vec<DipSpec> {
    dips.iter().map(|d| DipSpec { f0: d.f0 + df, ..*d }).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn flat_trace_has_no_dips() {
    let t = trace(&[], 0.0, 0);
    assert!(detect_dips(&t, &DetectConfig::default()).unwrap().is_empty());
}

#[test]
fn overlapping_doublet_detected_once() {
    let t = trace(&doublet(), 0.0, 0);
    let d = detect_dips(&t, &DetectConfig::default()).unwrap();
    assert_eq!(d.len(), 1);
    assert!((d[0].f0 - 2870.0).abs() < 1.0);
}

#[test]
fn zeeman_dips_detected_near_centers() {
    let t = trace(&zeeman4(), 0.0, 0);
    let step = t.frequencies[1] - t.frequencies[0];
    let d = detect_dips(&t, &DetectConfig::default()).unwrap();
    assert_eq!(d.len(), 4);
    for (got, want) in d.iter().zip(zeeman4()) {
        assert!((got.f0 - want.f0).abs() <= step, "{} vs {}", got.f0, want.f0);
    }
}

#[test]
fn detection_respects_limits_and_preconditions() {
    let t = trace(&zeeman4(), 0.0, 0);
    let cfg = DetectConfig {
        max_dips: 2,
        ..Default::default()
    };
    assert_eq!(detect_dips(&t, &cfg).unwrap().len(), 2);
    let short = SpectrumTrace::new(vec![1.0, 2.0, 3.0], vec![1.0, 0.9, 1.0]).unwrap();
    assert!(matches!(
        detect_dips(&short, &DetectConfig::default()),
        Err(FitError::InsufficientData { .. })
    ));
}

#[test]
fn noiseless_round_trip_from_perturbed_start() {
    let truth = doublet();
    let t = trace(&truth, 0.0, 0);
    let fit = fit_lorentzians(&t, &shifted(&truth, 2.0), 1.0).unwrap();
    assert!(fit.converged, "{:?}", fit.termination);
    for (got, want) in fit.dips.iter().zip(&truth) {
        assert!((got.f0 - want.f0).abs() < 1e-3, "{} vs {}", got.f0, want.f0);
        assert!(rel(got.fwhm, want.fwhm) < 1e-3);
        assert!(rel(got.contrast, want.contrast) < 1e-3);
    }
    assert!((fit.baseline - 1.0).abs() < 1e-9);
}

#[test]
fn starting_at_truth_is_immediate() {
    let truth = doublet();
    let t = trace(&truth, 0.0, 0);
    let fit = fit_lorentzians(&t, &truth, 1.0).unwrap();
    assert!(fit.converged);
    assert!(fit.iterations <= 2);
    assert_eq!(fit.rms_residual, 0.0);
}

#[test]
fn cost_history_is_monotone() {
    let truth = zeeman4();
    let t = trace(&truth, 0.002, 3);
    let init: Vec<DipSpec> = truth
        .iter()
        .map(|d| DipSpec::new(d.f0 - 3.0, 14.0, 0.02).unwrap())
        .collect();
    let fit = fit_lorentzians(&t, &init, 0.98).unwrap();
    assert!(fit.converged);
    assert!(fit.cost_history.windows(2).all(|w| w[1] <= w[0]));
    assert!(fit.cost_history.len() >= 2);
}

#[test]
fn noisy_centers_within_half_mhz() {
    // At 512 points this doublet is not identifiable under 0.3% noise (the
    // center standard deviation is a few MHz); a dense sweep pins it down.
    let truth = doublet();
    let sweep = SweepConfig {
        n_points: 1 << 18,
        ..SweepConfig::standard()
    };
    let t = synth_trace(&sweep, &truth, 1.0, 0.003, 42).unwrap();
    let fit = fit_lorentzians(&t, &truth, 1.0).unwrap();
    assert!(fit.converged);
    for (got, want) in fit.dips.iter().zip(&truth) {
        assert!((got.f0 - want.f0).abs() < 0.5, "{} vs {}", got.f0, want.f0);
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[test]
fn covariance_matches_monte_carlo_scatter() {
    // well-separated pair so the linearization holds at this noise level
    let truth = vec![
        DipSpec::new(2840.0, 12.0, 0.05).unwrap(),
        DipSpec::new(2900.0, 12.0, 0.05).unwrap(),
    ];
    let mut centers = vec![Vec::new(); 2];
    let mut widths = Vec::new();
    let mut reported = [0.0; 2];
    for seed in 0..50 {
        let t = trace(&truth, 0.003, 1000 + seed);
        let fit = fit_lorentzians(&t, &truth, 1.0).unwrap();
        assert!(fit.converged);
        let se = fit.std_errors();
        for k in 0..2 {
            centers[k].push(fit.dips[k].f0);
            reported[k] += se[1 + 3 * k] / 50.0;
        }
        widths.push(fit.dips[0].fwhm);
    }
    for k in 0..2 {
        let ratio = sample_sd(&centers[k]) / reported[k];
        assert!((0.5..2.0).contains(&ratio), "dip {k}: ratio {ratio}");
    }
    assert!(sample_sd(&widths) > 0.0);
}

#[test]
fn rms_residual_bounded_by_noise() {
    let truth = zeeman4();
    for seed in 0..5 {
        let t = trace(&truth, 0.003, seed);
        let fit = fit_lorentzians(&t, &truth, 1.0).unwrap();
        let n = t.len() as f64;
        assert!(fit.rms_residual <= 0.003 * (1.0 + 10.0 / n.sqrt()), "{}", fit.rms_residual);
        assert!(fit.rms_residual >= 0.0);
    }
}

#[test]
fn model_selection_resolves_doublet() {
    let t = trace(&doublet(), 0.0, 0);
    let fit = select_model(&t, &[1, 2]).unwrap();
    assert_eq!(fit.dips.len(), 2);
    let sep = fit.dips[1].f0 - fit.dips[0].f0;
    assert!((sep - 5.64).abs() < 0.05, "separation {sep}");
}

#[test]
fn model_selection_on_flat_noise() {
    let sigma = 0.003;
    let t = trace(&[], sigma, 8);
    let cands = fit_candidates(&t, &[1, 2], &DetectConfig::default()).unwrap();
    let fit = select_model(&t, &[1, 2]).unwrap();
    let best = cands
        .iter()
        .filter(|c| c.fit.converged)
        .min_by(|a, b| a.bic.partial_cmp(&b.bic).unwrap())
        .unwrap();
    assert_eq!(fit.dips.len(), best.n_dips);
    let total: f64 = fit.dips.iter().map(|d| d.contrast).sum();
    assert!(total < 3.0 * sigma, "contrast {total}");
}

#[test]
fn model_selection_picks_four_zeeman_dips() {
    let t = trace(&zeeman4(), 0.0, 0);
    assert_eq!(select_model(&t, &[2, 4]).unwrap().dips.len(), 4);
    let noisy = trace(&zeeman4(), 0.003, 5);
    assert_eq!(select_model(&noisy, &[2, 4]).unwrap().dips.len(), 4);
}

#[test]
fn fit_preconditions() {
    let t = trace(&doublet(), 0.0, 0);
    assert_eq!(fit_lorentzians(&t, &[], 1.0).unwrap_err(), FitError::NoInitialDips);
    let short = SpectrumTrace::new((0..9).map(f64::from).collect(), vec![1.0; 9]).unwrap();
    assert!(matches!(
        fit_lorentzians(&short, &doublet()[..1], 1.0),
        Err(FitError::InsufficientData { needed: 12, got: 9 })
    ));
    assert!(select_model(&t, &[]).is_err());
    assert!(select_model(&t, &[0, 1]).is_err());
}

#[test]
fn degenerate_start_does_not_panic() {
    // two identical dips make the Jacobian rank deficient
    let t = trace(&doublet(), 0.0, 0);
    let same = vec![DipSpec::new(2870.0, 27.0, 0.035).unwrap(); 2];
    let fit = fit_lorentzians(&t, &same, 1.0).unwrap();
    assert!(fit.rss.is_finite());
}

#[test]
fn sorted_output_and_covariance_follow_dips() {
    let truth = zeeman4();
    let t = trace(&truth, 0.003, 9);
    let mut init = truth.clone();
    init.reverse();
    let fit = fit_lorentzians(&t, &init, 1.0).unwrap();
    assert!(fit.dips.windows(2).all(|w| w[0].f0 < w[1].f0));
    let forward = fit_lorentzians(&t, &truth, 1.0).unwrap();
    for i in 0..fit.covariance.rows() {
        let a = fit.covariance[(i, i)];
        let b = forward.covariance[(i, i)];
        assert!(rel(a, b) < 1e-6, "{i}: {a} {b}");
    }
}

#[test]
fn single_precision_fit() {
    let sweep = SweepConfig::<f32>::standard();
    let truth: Vec<DipSpec<f32>> = zeeman4()
        .iter()
        .map(|d| DipSpec::new(d.f0 as f32, d.fwhm as f32, d.contrast as f32).unwrap())
        .collect();
    let t = synth_trace(&sweep, &truth, 1.0, 0.0, 0).unwrap();
    let init: Vec<DipSpec<f32>> = truth.iter().map(|d| DipSpec { f0: d.f0 + 1.0, ..*d }).collect();
    let fit = fit_lorentzians(&t, &init, 1.0f32).unwrap();
    for (g, w) in fit.dips.iter().zip(&truth) {
        assert!((g.f0 - w.f0).abs() < 0.01);
    }
}

fn model_rms(fit: &FitResult, t: &SpectrumTrace) -> f64 {
    let ss: f64 = t
        .frequencies
        .iter()
        .zip(&t.signal)
        .map(|(&f, &y)| (lorentzian_spectrum(&fit.dips, fit.baseline, f) - y).powi(2))
        .sum();
    (ss / t.len() as f64).sqrt()
}

#[test]
fn reported_rms_matches_model() {
    let t = trace(&zeeman4(), 0.003, 21);
    let fit = fit_lorentzians(&t, &zeeman4(), 1.0).unwrap();
    assert!((model_rms(&fit, &t) - fit.rms_residual).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn shift_equivariance(delta in -100.0f64..100.0, seed in 0u64..1000) {
        let truth = zeeman4();
        let t = trace(&truth, 0.003, seed);
        let init = shifted(&truth, 1.5);
        let base = fit_lorentzians(&t, &init, 1.0).unwrap();
        let moved = SpectrumTrace {
            frequencies: t.frequencies.iter().map(|f| f + delta).collect(),
            ..t.clone()
        };
        let fit = fit_lorentzians(&moved, &shifted(&init, delta), 1.0).unwrap();
        for (a, b) in base.dips.iter().zip(&fit.dips) {
            prop_assert!((b.f0 - a.f0 - delta).abs() < 1e-6);
            prop_assert!(rel(b.fwhm, a.fwhm) < 1e-6);
            prop_assert!(rel(b.contrast, a.contrast) < 1e-6);
        }
    }

    #[test]
    fn scale_equivariance(k in 0.01f64..100.0, seed in 0u64..1000) {
        let truth = zeeman4();
        let t = trace(&truth, 0.003, seed);
        let init = shifted(&truth, -1.0);
        let base = fit_lorentzians(&t, &init, 1.0).unwrap();
        let scaled = SpectrumTrace {
            signal: t.signal.iter().map(|s| s * k).collect(),
            ..t.clone()
        };
        let fit = fit_lorentzians(&scaled, &init, k).unwrap();
        prop_assert!(rel(fit.baseline, k * base.baseline) < 1e-9);
        for (a, b) in base.dips.iter().zip(&fit.dips) {
            prop_assert!(rel(b.f0, a.f0) < 1e-9);
            prop_assert!(rel(b.fwhm, a.fwhm) < 1e-9);
            prop_assert!(rel(b.contrast, a.contrast) < 1e-9);
        }
    }

    #[test]
    fn well_separated_round_trip(
        f1 in 2790.0f64..2830.0,
        sep in 40.0f64..80.0,
        g in 5.0f64..30.0,
        c in 0.01f64..0.2,
    ) {
        let truth = vec![DipSpec::new(f1, g, c).unwrap(), DipSpec::new(f1 + sep, g * 0.8, c * 0.7).unwrap()];
        let t = trace(&truth, 0.0, 0);
        let (init, b0) = nvodmr::fit::initial_dips(&t, 2, &DetectConfig::default()).unwrap();
        let fit = fit_lorentzians(&t, &init, b0).unwrap();
        for (a, b) in fit.dips.iter().zip(&truth) {
            prop_assert!(rel(a.f0, b.f0) < 1e-3);
            prop_assert!(rel(a.fwhm, b.fwhm) < 1e-3);
            prop_assert!(rel(a.contrast, b.contrast) < 1e-3);
        }
    }
}

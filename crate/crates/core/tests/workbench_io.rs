use nvodmr::io::{
    format_pgm, format_ppm, parse_trace, read_trace, write_pgm, write_trace, ExperimentConfig,
    IoError,
};
use nvodmr::scan::{Image, RgbImage};
use nvodmr::signal::{synth_trace, DipSpec, SpectrumTrace, SweepConfig};
use proptest::prelude::*;

fn noisy_trace() -> SpectrumTrace {
    let dips = [
        DipSpec::new(2867.18, 26.87, 0.035).unwrap(),
        DipSpec::new(2872.82, 26.87, 0.035).unwrap(),
    ];
    synth_trace(&SweepConfig::standard(), &dips, 1.0, 0.003, 7).unwrap()
}

/// Minimal reader for the plain PNM grammar: magic, whitespace-separated
/// decimal fields, `#` comments to end of line.
fn parse_pnm(text: &str) -> (String, usize, usize, u32, Vec<u32>) {
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap())
        .flat_map(str::split_whitespace);
    let magic = tokens.next().unwrap().to_string();
    let w: usize = tokens.next().unwrap().parse().unwrap();
    let h: usize = tokens.next().unwrap().parse().unwrap();
    let maxval: u32 = tokens.next().unwrap().parse().unwrap();
    let samples: Vec<u32> = tokens.map(|t| t.parse().unwrap()).collect();
    (magic, w, h, maxval, samples)
}

#[test]
fn trace_round_trip_is_bit_identical() {
    let t = noisy_trace();
    assert_eq!(t.len(), 512);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    write_trace(&path, &t).unwrap();
    let back: SpectrumTrace = read_trace(&path).unwrap();
    for (a, b) in t.frequencies.iter().zip(&back.frequencies) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    for (a, b) in t.signal.iter().zip(&back.signal) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("frequency_mhz,signal\n"));
    assert!(!text.contains('\r'));
}

#[test]
fn f32_trace_round_trip() {
    let t = SpectrumTrace::<f32>::new(vec![2750.0, 2750.411, 2960.0], vec![1.0, 0.987_654_3, 1e-7]).unwrap();
    let back: SpectrumTrace<f32> = parse_trace(&nvodmr::io::format_trace(&t)).unwrap();
    assert_eq!(back.frequencies, t.frequencies);
    assert_eq!(back.signal, t.signal);
}

#[test]
fn header_only_is_empty_trace_error() {
    let e = parse_trace::<f64>("frequency_mhz,signal\n").unwrap_err();
    assert!(matches!(e, IoError::Validation(_)), "{e}");
}

#[test]
fn missing_header_is_format_error() {
    for text in ["", "2870,1\n2871,1\n", "freq,signal\n2870,1\n"] {
        let e = parse_trace::<f64>(text).unwrap_err();
        assert!(matches!(e, IoError::Format { line: 1, .. }), "{e}");
    }
}

#[test]
fn shuffled_rows_name_first_offending_line() {
    let text = "frequency_mhz,signal\n2750,1\n2751,1\n2753,0.9\n2752,0.95\n2749,1\n";
    let e = parse_trace::<f64>(text).unwrap_err();
    assert!(matches!(e, IoError::Validation(_)));
    assert!(e.to_string().contains("line 5"), "{e}");
    let dup = "frequency_mhz,signal\n2750,1\n2750,1\n";
    assert!(parse_trace::<f64>(dup).unwrap_err().to_string().contains("line 3"));
}

#[test]
fn non_numeric_cell_reports_line() {
    let text = "frequency_mhz,signal\n2750,1\n2751,abc\n";
    match parse_trace::<f64>(text).unwrap_err() {
        IoError::Parse { line, msg } => {
            assert_eq!(line, 3);
            assert!(msg.contains("abc"));
        }
        e => panic!("{e}"),
    }
    let nan = "frequency_mhz,signal\n2750,NaN\n";
    assert!(matches!(parse_trace::<f64>(nan).unwrap_err(), IoError::Parse { line: 2, .. }));
}

#[test]
fn missing_file_is_file_error() {
    let e = read_trace::<f64>("/nonexistent/trace.csv").unwrap_err();
    assert!(matches!(e, IoError::File { .. }));
    assert!(e.to_string().contains("/nonexistent/trace.csv"));
}

#[test]
fn graymap_conforms_to_grammar() {
    let (w, h) = (23, 7);
    let data: Vec<f64> = (0..w * h).map(|i| ((i * 37) % 101) as f64 * 0.013).collect();
    let img = Image { width: w, height: h, data: data.clone() };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("img.pgm");
    write_pgm(&path, &img).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.lines().all(|l| l.len() <= 70));
    let (magic, pw, ph, maxval, samples) = parse_pnm(&text);
    assert_eq!((magic.as_str(), pw, ph, maxval), ("P2", w, h, 65535));
    assert_eq!(samples.len(), w * h);
    let peak = data.iter().cloned().fold(0.0, f64::max);
    for (s, v) in samples.iter().zip(&data) {
        assert_eq!(*s, (v / peak * 65535.0).round() as u32);
    }
    // fixed widths: identical images give identical text
    assert_eq!(format_pgm(&img).unwrap(), text);
}

#[test]
fn pixmap_conforms_to_grammar() {
    let (w, h) = (9, 4);
    let data: Vec<[f64; 3]> = (0..w * h)
        .map(|i| [(i % 3) as f64 / 2.0, (i % 5) as f64 / 4.0, 1.0 - (i % 7) as f64 / 6.0])
        .collect();
    let img = RgbImage { width: w, height: h, data: data.clone() };
    let text = format_ppm(&img).unwrap();
    assert!(text.lines().all(|l| l.len() <= 70));
    let (magic, pw, ph, maxval, samples) = parse_pnm(&text);
    assert_eq!((magic.as_str(), pw, ph, maxval), ("P3", w, h, 255));
    assert_eq!(samples.len(), 3 * w * h);
    for (s, v) in samples.iter().zip(data.iter().flatten()) {
        assert_eq!(*s, (v * 255.0).round() as u32);
    }
}

#[test]
fn unknown_keys_are_rejected() {
    for text in [
        r#"{"hamiltonian": {"d_mhz": 2870, "e": 3}}"#,
        r#"{"sweep": {"f_start_mhz": 2750, "f_start": 1}}"#,
        r#"{"bogus": 1}"#,
        r#"{"dips": [{"f0_mhz": 2870, "fwhm_mhz": 10, "contrast": 0.01, "depth": 1}]}"#,
    ] {
        let e = ExperimentConfig::from_json(text).unwrap_err();
        assert!(matches!(e, IoError::Json(_)), "{text}: {e}");
    }
}

#[test]
fn invalid_values_fail_fast() {
    let bad = [
        r#"{"sweep": {"f_start_mhz": 2960, "f_stop_mhz": 2750}}"#,
        r#"{"sweep": {"n_points": 1}}"#,
        r#"{"hamiltonian": {"gamma_mhz_per_mt": 0}}"#,
        r#"{"lockin": {"order": 0}}"#,
        r#"{"lockin": {"mode": "analog"}}"#,
        r#"{"lockin": {"mode": "carrier"}}"#,
        r#"{"sweep": {"duration_s": 1e6}}"#,
        r#"{"noise": {"sigma": -0.1}}"#,
        r#"{"dips": [{"f0_mhz": 2870, "fwhm_mhz": -1, "contrast": 0.01}]}"#,
        r#"{"lineshape": {"total_contrast": 1.5}}"#,
        r#"{"fit": {"candidates": []}}"#,
        r#"{"fit": {"candidates": [0, 1]}}"#,
        r#"{"fit": {"smooth_window": 4}}"#,
        r#"{"pattern": {"merge_tol_mhz": 0}}"#,
        r#"{"magnetometry": {"inconsistency_mhz": -1}}"#,
    ];
    for text in bad {
        assert!(ExperimentConfig::from_json(text).is_err(), "{text} accepted");
    }
}

fn scan_json(extra: &str) -> String {
    format!(
        r#"{{"scan": {{
            "tile": {{"fov_um": 4, "pixels": 8}},
            "point_um": [1, 1, 1],
            {extra}
            "phantom": {{
                "dims": [10, 10, 5], "voxel_um": [0.5, 0.5, 0.5],
                "layers": [
                    {{"channel": "2PEF", "density": 1, "shape": {{"sphere": {{"center_um": [2, 2, 1], "radius_um": 1}}}}}},
                    {{"channel": "thg", "density": 0.5, "shape": "all"}}
                ],
                "regions": [
                    {{"shape": {{"box": {{"lo_um": [0, 0, 0], "hi_um": [2, 2, 2]}}}},
                     "dips": [{{"f0_mhz": 2866, "fwhm_mhz": 20, "contrast": 0.0125}}]}}
                ]
            }}
        }}}}"#
    )
}

#[test]
fn scan_section_builds_phantom() {
    let cfg = ExperimentConfig::from_json(&scan_json("")).unwrap();
    let s = cfg.scan_setup().unwrap();
    assert_eq!(s.phantom.dims, [10, 10, 5]);
    assert_eq!(s.channels.len(), 2);
    assert_eq!(s.tiles.len(), 1);
    assert_eq!(s.phantom.odmr_regions.len(), 1);
    let idx = s.phantom.index(4, 4, 2);
    assert_eq!(s.phantom.channels[&nvodmr::scan::Channel::TwoPef][idx], 1.0);
    assert_eq!(s.phantom.channels[&nvodmr::scan::Channel::Thg][idx], 0.5);
    assert!(s.phantom.odmr_regions[0].mask[idx]);
    assert!(!s.phantom.odmr_regions[0].mask[s.phantom.index(5, 0, 0)]);
}

#[test]
fn scan_section_fails_fast() {
    for extra in [
        r#""channels": [{"channel": "SHG"}],"#,
        r#""channels": [{"channel": "CARS"}],"#,
        r#""channels": [{"channel": "2PEF", "power_exponent": 4}],"#,
        r#""power": 0,"#,
        r#""powers": [1, 2],"#,
        r#""psf": {"fwhm_lateral_um": 0},"#,
        r#""tile": {"pixels": 0},"#,
    ] {
        let text = scan_json(extra);
        assert!(ExperimentConfig::from_json(&text).is_err(), "{extra} accepted");
    }
    let outside = scan_json("").replace(r#""point_um": [1, 1, 1]"#, r#""point_um": [1, 1, 9]"#);
    assert!(ExperimentConfig::from_json(&outside).is_err());
}

#[test]
fn derived_dips_follow_the_hamiltonian() {
    let cfg = ExperimentConfig::from_json(
        r#"{"hamiltonian": {"e_mhz": 2.82}, "lineshape": {"fwhm_mhz": 26.87, "total_contrast": 0.07}}"#,
    )
    .unwrap();
    let dips = cfg.spectrum_dips().unwrap();
    assert_eq!(dips.len(), 8);
    for (i, d) in dips.iter().enumerate() {
        let want = if i < 4 { 2870.0 - 2.82 } else { 2870.0 + 2.82 };
        assert!((d.f0 - want).abs() < 1e-9, "{}", d.f0);
        assert_eq!(d.fwhm, 26.87);
        assert!((d.contrast - 0.07 / 8.0).abs() < 1e-15);
    }
    let explicit = ExperimentConfig::from_json(
        r#"{"hamiltonian": {"e_mhz": 2.82}, "dips": [{"f0_mhz": 2800, "fwhm_mhz": 5, "contrast": 0.02}]}"#,
    )
    .unwrap();
    assert_eq!(explicit.spectrum_dips().unwrap(), vec![DipSpec::new(2800.0, 5.0, 0.02).unwrap()]);
}

#[test]
fn config_file_round_trip() {
    let cfg = ExperimentConfig::from_json(&scan_json("")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap(), cfg);
    assert!(matches!(ExperimentConfig::load(dir.path().join("none.json")), Err(IoError::File { .. })));
}

proptest! {
    #[test]
    fn write_then_parse_is_identity(
        start in -1e4f64..1e4,
        steps in prop::collection::vec(1e-6f64..10.0, 1..64),
        signal in prop::collection::vec(-1e3f64..1e3, 64),
    ) {
        let mut f = vec![start];
        for s in &steps {
            let next = f.last().unwrap() + s;
            prop_assume!(next > *f.last().unwrap());
            f.push(next);
        }
        let y = signal[..f.len()].to_vec();
        let t = SpectrumTrace::new(f, y).unwrap();
        let back: SpectrumTrace = parse_trace(&nvodmr::io::format_trace(&t)).unwrap();
        prop_assert_eq!(back.frequencies, t.frequencies);
        prop_assert_eq!(back.signal, t.signal);
    }
}

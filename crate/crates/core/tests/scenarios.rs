use std::path::{Path, PathBuf};

use proptest::prelude::*;
use spinprobe::scenario::table::format_f64;
use spinprobe::scenario::units::{parse_quantity, Dim};
use spinprobe::scenario::{parse_scenario, run, run_stage, OutputFormat, ResultBundle, Stage, Table};

fn example(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    std::fs::read_to_string(path).unwrap()
}

fn examples() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    v.sort();
    v
}

#[test]
fn every_example_parses_and_canonicalizes() {
    for path in examples() {
        let sc = parse_scenario(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let canonical = sc.to_canonical_toml().unwrap();
        let again = parse_scenario(&canonical).unwrap();
        assert_eq!(again, sc, "{}", path.display());
        assert_eq!(again.hash(), sc.hash());
        assert_eq!(again.to_canonical_toml().unwrap(), canonical);
    }
}

#[test]
fn units_do_not_change_the_hash() {
    let a = parse_scenario(&example("relaxometry.toml")).unwrap();
    let b = parse_scenario(
        &example("relaxometry.toml")
            .replace("\"120 Hz\"", "\"0.12 kHz\"")
            .replace("\"20 ms\"", "0.02"),
    )
    .unwrap();
    assert_eq!(a.hash(), b.hash());
}

#[test]
fn csv_and_json_exports_read_back_bit_exact() {
    let sc = parse_scenario(&example("relaxometry.toml")).unwrap();
    let bundle = run(&sc).unwrap();
    let dir = tempfile::tempdir().unwrap();

    bundle.export(&dir.path().join("csv"), OutputFormat::Csv).unwrap();
    for t in &bundle.tables {
        let f = std::fs::File::open(dir.path().join("csv").join(format!("{}.csv", t.name))).unwrap();
        let back = Table::read_csv(&t.name, f).unwrap();
        assert!(back.bit_eq(t), "{}", t.name);
    }

    bundle.export(&dir.path().join("json"), OutputFormat::Json).unwrap();
    let back = ResultBundle::read_json(&dir.path().join("json/result.json")).unwrap();
    assert!(back.same_results(&bundle));
    assert_eq!(back.metadata.stage, "t1-epr");
}

#[test]
fn same_seed_same_tables_other_seed_differs() {
    let text = example("relaxometry.toml");
    let a = run(&parse_scenario(&text).unwrap()).unwrap();
    let b = run(&parse_scenario(&text).unwrap()).unwrap();
    assert!(a.same_results(&b));
    let c = run(&parse_scenario(&text.replace("seed = 11", "seed = 12")).unwrap()).unwrap();
    assert_ne!(a.scenario_hash, c.scenario_hash);
    assert!(!a
        .table("relaxation_signals")
        .unwrap()
        .bit_eq(c.table("relaxation_signals").unwrap()));
}

#[test]
fn stage_must_match_protocol() {
    let sc = parse_scenario(&example("relaxometry.toml")).unwrap();
    let err = run_stage(&sc, Stage::Track).unwrap_err();
    assert!(err.is_validation());
    assert!(err.to_string().contains("protocol.kind"), "{err}");
}

#[test]
fn localize_without_a_trap_is_a_runtime_error() {
    let text = example("charge_trap_track.toml");
    let start = text.find("[[environment.traps]]").unwrap();
    let end = text.find("[protocol]").unwrap();
    let quiet = format!("{}{}", &text[..start], &text[end..]);
    let err = run_stage(&parse_scenario(&quiet).unwrap(), Stage::Localize).unwrap_err();
    assert!(!err.is_validation(), "{err}");
}

#[test]
fn charge_trap_example_localizes_near_its_true_distance() {
    let b = run(&parse_scenario(&example("charge_trap_track.toml")).unwrap()).unwrap();
    let loc = b.table("localization").unwrap();
    let d = loc.f64_column("perpendicular_distance_nm").unwrap();
    assert_eq!(d.len(), 1);
    assert!((d[0] - 4.0).abs() < 0.2, "{}", d[0]);
    let truth = b.table("environment_truth").unwrap();
    assert_eq!(truth.n_rows(), b.table("peak_trace").unwrap().n_rows());
}

#[test]
fn dd_example_recovers_one_over_f_slope() {
    let b = run(&parse_scenario(&example("one_over_f_cpmg.toml")).unwrap()).unwrap();
    let fit = b.table("spectrum_power_law").unwrap();
    let alpha = fit.value("exponent").unwrap();
    assert!((alpha - 1.0).abs() < 0.15, "{alpha}");
}

#[test]
fn noise_map_interpolates_through_sensor_values() {
    let b = run(&parse_scenario(&example("noise_map.toml")).unwrap()).unwrap();
    let sensors = b.table("sensors").unwrap();
    let map = b.table("noise_map").unwrap();
    let (sx, sy, sv) = (
        sensors.f64_column("x_um").unwrap(),
        sensors.f64_column("y_um").unwrap(),
        sensors.f64_column("sigma_f_mhz").unwrap(),
    );
    let (mx, my, mv) = (
        map.f64_column("x_um").unwrap(),
        map.f64_column("y_um").unwrap(),
        map.f64_column("sigma_f_mhz").unwrap(),
    );
    assert_eq!(map.n_rows(), 21 * 25);
    // Sensors on grid nodes are reproduced exactly.
    let mut hits = 0;
    for i in 0..sx.len() {
        if let Some(j) = (0..mx.len()).find(|&j| (mx[j] - sx[i]).abs() < 1e-9 && (my[j] - sy[i]).abs() < 1e-9) {
            assert_eq!(mv[j], sv[i]);
            hits += 1;
        }
    }
    assert!(hits >= 4, "{hits}");
    let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = sv.iter().cloned().fold(0.0, f64::max);
    assert!(mv.iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
}

proptest! {
    #[test]
    fn formatted_floats_round_trip(bits in any::<u64>()) {
        let v = f64::from_bits(bits);
        let back: f64 = format_f64(v).parse().unwrap();
        if v.is_nan() {
            prop_assert!(back.is_nan());
        } else {
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn csv_tables_round_trip(values in prop::collection::vec(any::<f64>(), 0..40), ints in any::<i64>()) {
        let n = values.len();
        let t = Table::new("t").f64("x", values).i64("k", vec![ints; n]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = Table::read_csv("t", buf.as_slice()).unwrap();
        prop_assert!(n == 0 || back.bit_eq(&t));
    }

    #[test]
    fn prefixed_units_scale_linearly(x in -1e6f64..1e6) {
        let khz = parse_quantity(&format!("{x} kHz"), Dim::Frequency).unwrap();
        prop_assert!((khz - x * 1e-3).abs() <= 1e-12 * x.abs().max(1.0));
        let ms = parse_quantity(&format!("{x:e} ms"), Dim::Time).unwrap();
        prop_assert!((ms - x * 1e-3).abs() <= 1e-12 * x.abs().max(1.0));
    }
}

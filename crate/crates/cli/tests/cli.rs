use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn spinprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinprobe"))
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn validate_prints_canonical_form() {
    let out = spinprobe(&["validate", "--scenario", scenario("relaxometry.toml").to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("omega_plus = 120.0"), "{text}");
    assert!(stderr(&out).contains("ok: t1_scan"));
}

#[test]
fn unknown_key_exits_2_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let bad = std::fs::read_to_string(scenario("relaxometry.toml"))
        .unwrap()
        .replace("readout_sigma", "readout_sigmaa");
    let path = write(dir.path(), "bad.toml", &bad);
    let out = spinprobe(&["t1-epr", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("protocol"), "{}", stderr(&out));
    assert!(stderr(&out).contains("readout_sigmaa"), "{}", stderr(&out));
}

#[test]
fn unit_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = std::fs::read_to_string(scenario("relaxometry.toml"))
        .unwrap()
        .replace("\"20 ms\"", "\"20 MHz\"");
    let path = write(dir.path(), "bad.toml", &bad);
    let out = spinprobe(&["run", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("protocol.wait_times.stop"), "{}", stderr(&out));
}

#[test]
fn wrong_subcommand_for_protocol_exits_2() {
    let out = spinprobe(&[
        "noise-map",
        "--scenario",
        scenario("relaxometry.toml").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_file_exits_2() {
    let out = spinprobe(&["run", "--scenario", "/nonexistent/scenario.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_estimation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("charge_trap_track.toml")).unwrap();
    let start = text.find("[[environment.traps]]").unwrap();
    let end = text.find("[protocol]").unwrap();
    let path = write(dir.path(), "quiet.toml", &format!("{}{}", &text[..start], &text[end..]));
    let out = spinprobe(&[
        "localize",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario("charge_trap_track.toml");
    for t in ["1", "3"] {
        let out = spinprobe(&[
            "track",
            "--scenario",
            sc.to_str().unwrap(),
            "--out",
            dir.path().join(t).to_str().unwrap(),
            "--threads",
            t,
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let mut n = 0;
    for e in std::fs::read_dir(dir.path().join("1")).unwrap() {
        let name = e.unwrap().file_name();
        if name == "metadata.json" {
            continue;
        }
        let a = std::fs::read(dir.path().join("1").join(&name)).unwrap();
        let b = std::fs::read(dir.path().join("3").join(&name)).unwrap();
        assert!(a == b, "{name:?} differs");
        n += 1;
    }
    assert!(n >= 4);
}

#[test]
fn seed_override_and_json_output() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario("relaxometry.toml");
    let run = |seed: &str, sub: &str| {
        let out = spinprobe(&[
            "run",
            "--scenario",
            sc.to_str().unwrap(),
            "--out",
            dir.path().join(sub).to_str().unwrap(),
            "--format",
            "json",
            "--seed",
            seed,
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        std::fs::read_to_string(dir.path().join(sub).join("result.json")).unwrap()
    };
    let a = run("0x10", "a");
    let b = run("16", "b");
    let c = run("17", "c");
    let hash = |s: &str| s.split("\"scenario_hash\"").nth(1).unwrap()[..70].to_string();
    assert_eq!(hash(&a), hash(&b));
    assert_ne!(hash(&a), hash(&c));
}

#[test]
fn simulate_odmr_writes_spectra_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = spinprobe(&[
        "simulate-odmr",
        "--scenario",
        scenario("charge_trap_track.toml").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut files: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    assert_eq!(files, ["environment_truth.csv", "metadata.json", "odmr_spectra.csv"]);
    let header = std::fs::read_to_string(dir.path().join("odmr_spectra.csv")).unwrap();
    assert!(header.starts_with("window,frequency_mhz,counts\n"));
}

use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;
use triplet_sense_workbench::cli::run;
use triplet_sense_workbench::error::exit;

struct Invocation {
    code: u8,
    stdout: String,
    stderr: String,
}

fn invoke(args: &[&str]) -> Invocation {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run(std::iter::once("triplet-sense").chain(args.iter().copied()), &mut out, &mut err);
    Invocation {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn generate_then_fit_recovers_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = path_str(dir.path());
    let cfg = write_config(dir.path(), "run.json", r#"{"preset": "fig1e", "noise": {"sigma": 0.005}}"#);
    let g = invoke(&["generate", "trace", "--config", &cfg, "--seed", "11", "--out", out]);
    assert_eq!(g.code, exit::OK, "{}", g.stderr);
    let csv = dir.path().join("trace.csv");
    assert!(csv.exists());
    assert!(dir.path().join("trace.provenance.json").exists());

    let f = invoke(&["--json", "fit", "trace", "--input", path_str(&csv), "--out", out]);
    assert_eq!(f.code, exit::OK, "{}", f.stdout);
    let v: Value = serde_json::from_str(&f.stdout).unwrap();
    let params = v["result"]["report"]["parameters"].as_array().unwrap();
    let t2 = params.iter().find(|p| p["name"] == "t2_us").unwrap()["value"].as_f64().unwrap();
    assert!((t2 / 3.4 - 1.0).abs() < 0.03, "t2 {t2}");
    for name in ["trace_fit.json", "trace_overlay.csv", "trace_overlay.svg"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let overlay = fs::read_to_string(dir.path().join("trace_overlay.csv")).unwrap();
    assert!(overlay.starts_with("t_us,data,model,residual\nus,relative,relative,relative\n"));
}

#[test]
fn spectrum_fit_reports_zfs() {
    let dir = tempfile::tempdir().unwrap();
    let out = path_str(dir.path());
    assert_eq!(invoke(&["generate", "spectrum", "--preset", "fig1d", "--out", out]).code, exit::OK);
    let f = invoke(&["fit", "spectrum", "--input", path_str(&dir.path().join("spectrum.csv")), "--out", out]);
    assert_eq!(f.code, exit::OK, "{}", f.stderr);
    let value = |name: &str| -> f64 {
        let line = f.stdout.lines().find(|l| l.starts_with(&format!("{name} = "))).unwrap();
        line.split_whitespace().nth(2).unwrap().parse().unwrap()
    };
    assert!((value("d_mhz") - 1891.0).abs() < 1.0);
    assert!((value("e_mhz") - 459.0).abs() < 1.0);
}

#[test]
fn same_seed_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = write_config(a.path(), "run.json", r#"{"noise": {"sigma": 0.01}}"#);
    for dir in [&a, &b] {
        let r = invoke(&["generate", "spectrum", "--config", &cfg, "--seed", "5", "--out", path_str(dir.path())]);
        assert_eq!(r.code, exit::OK, "{}", r.stderr);
    }
    for name in ["spectrum.csv", "spectrum.provenance.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
    }
    let c = tempfile::tempdir().unwrap();
    invoke(&["generate", "spectrum", "--config", &cfg, "--seed", "6", "--out", path_str(c.path())]);
    assert_ne!(
        fs::read(a.path().join("spectrum.csv")).unwrap(),
        fs::read(c.path().join("spectrum.csv")).unwrap()
    );
}

#[test]
fn corrupt_row_names_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let out = path_str(dir.path());
    invoke(&["generate", "trace", "--preset", "fig1e", "--out", out]);
    let csv = dir.path().join("trace.csv");
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let first = lines[4].split(',').next().unwrap().to_string();
    lines[4] = format!("{first},oops");
    fs::write(&csv, lines.join("\n") + "\n").unwrap();

    let r = invoke(&["fit", "trace", "--input", path_str(&csv), "--out", out]);
    assert_eq!(r.code, exit::PARSE);
    assert!(r.stderr.contains("row 5"), "{}", r.stderr);
    assert!(r.stderr.contains("'oops' is not a number"), "{}", r.stderr);
    let column = text.lines().next().unwrap().split(',').nth(1).unwrap();
    assert!(r.stderr.contains(&format!("column '{column}'")), "{}", r.stderr);
}

#[test]
fn missing_units_header_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = path_str(dir.path());
    invoke(&["generate", "trace", "--preset", "fig1e", "--out", out]);
    let csv = dir.path().join("trace.csv");
    let text = fs::read_to_string(&csv).unwrap();
    let stripped: Vec<&str> = text.lines().enumerate().filter(|(i, _)| *i != 1).map(|(_, l)| l).collect();
    fs::write(&csv, stripped.join("\n")).unwrap();
    let r = invoke(&["fit", "trace", "--input", path_str(&csv), "--out", out]);
    assert_eq!(r.code, exit::PARSE);
    assert!(r.stderr.contains("missing units header"), "{}", r.stderr);
}

#[test]
fn wrong_dataset_kind_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = path_str(dir.path());
    invoke(&["generate", "trace", "--preset", "fig1e", "--out", out]);
    let r = invoke(&["fit", "spectrum", "--input", path_str(&dir.path().join("trace.csv")), "--out", out]);
    assert_eq!(r.code, exit::PARSE);
    assert!(r.stderr.contains("expected columns"), "{}", r.stderr);
}

#[test]
fn config_errors_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = path_str(dir.path());
    let unknown = write_config(dir.path(), "unknown.json", r#"{"modle": {"d_mhz": 1}}"#);
    let r = invoke(&["generate", "spectrum", "--config", &unknown, "--out", out]);
    assert_eq!(r.code, exit::CONFIG);
    assert!(r.stderr.contains("modle"), "{}", r.stderr);

    let unseeded = write_config(dir.path(), "unseeded.json", r#"{"noise": {"sigma": 0.01}}"#);
    let r = invoke(&["generate", "spectrum", "--config", &unseeded, "--out", out]);
    assert_eq!(r.code, exit::CONFIG);
    assert!(r.stderr.contains("seed"), "{}", r.stderr);

    let r = invoke(&["generate", "spectrum", "--preset", "nope", "--out", out]);
    assert_eq!(r.code, exit::CONFIG);
    assert!(fs::read_dir(dir.path()).unwrap().all(|e| e.unwrap().path().extension().unwrap() == "json"));
}

#[test]
fn unknown_figure_lists_valid_ids() {
    let r = invoke(&["reproduce", "fig9z"]);
    assert_eq!(r.code, exit::USAGE);
    for id in ["fig1d", "fig3e", "fig4d", "all"] {
        assert!(r.stderr.contains(id), "{}", r.stderr);
    }
}

#[test]
fn bad_arguments_are_usage_errors() {
    assert_eq!(invoke(&["frobnicate"]).code, exit::USAGE);
    assert_eq!(invoke(&["generate"]).code, exit::USAGE);
    assert_eq!(invoke(&["generate", "histogram"]).code, exit::USAGE);
    assert_eq!(invoke(&["--quiet", "--json", "sense", "zfs", "--peaks", "1,2,3"]).code, exit::USAGE);
}

#[test]
fn sense_zfs_from_measured_lines() {
    let r = invoke(&["sense", "zfs", "--peaks", "917,1433,2350"]);
    assert_eq!(r.code, exit::OK);
    assert!(r.stdout.contains("D = 1891.5 MHz"), "{}", r.stdout);
    assert!(r.stdout.contains("E = 458.5 MHz"), "{}", r.stdout);
}

#[test]
fn sense_invert_field_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "m.json", r#"{"model": {"euler_deg": [10, 20, 30]}}"#);
    // forward shift of the Tx-Tz line at 1 mT along (1,2,2)/3
    let model = triplet_sense_workbench::config::RunConfig::load(Path::new(&cfg)).unwrap().model.to_model().unwrap();
    let dir_vec = nalgebra::Vector3::new(1.0, 2.0, 2.0);
    let shift = triplet_sense::inference::field_shift(&model, triplet_sense::spin::Pair::XZ, &dir_vec, 1.0).unwrap();
    let r = invoke(&[
        "--json",
        "sense",
        "invert-field",
        "--shift-mhz",
        &shift.to_string(),
        "--direction",
        "1,2,2",
        "--config",
        &cfg,
    ]);
    assert_eq!(r.code, exit::OK, "{}", r.stdout);
    let v: Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(v["status"], "ok");
    let b = v["result"]["magnitude_mt"].as_f64().unwrap();
    assert!((b - 1.0).abs() < 1e-3, "{b}");
}

#[test]
fn json_and_quiet_modes() {
    let dir = tempfile::tempdir().unwrap();
    let out = path_str(dir.path());
    let q = invoke(&["--quiet", "generate", "polarization", "--out", out]);
    assert_eq!(q.code, exit::OK);
    assert!(q.stdout.is_empty() && q.stderr.is_empty());

    let j = invoke(&["--json", "generate", "polarization", "--out", out]);
    let v: Value = serde_json::from_str(j.stdout.trim()).unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["exit_code"], 0);
    assert_eq!(v["result"]["kind"], "polarization");

    let e = invoke(&["--json", "sense", "zfs", "--peaks", "917"]);
    let v: Value = serde_json::from_str(e.stdout.trim()).unwrap();
    assert_eq!(v["status"], "error");
    assert_eq!(v["exit_code"].as_u64().unwrap() as u8, e.code);
    assert_ne!(e.code, exit::OK);
}

#[test]
fn simulate_targets_write_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let out = path_str(dir.path());
    for target in ["odmr", "coherence", "rabi", "t2-sweep"] {
        let r = invoke(&["simulate", target, "--preset", "fig3d", "--out", out]);
        assert_eq!(r.code, exit::OK, "{target}: {}", r.stderr);
    }
    let eseem = invoke(&["simulate", "eseem", "--preset", "fig4a", "--out", out]);
    assert_eq!(eseem.code, exit::OK, "{}", eseem.stderr);
    let t = invoke(&["simulate", "transitions"]);
    assert_eq!(t.code, exit::OK);
    assert_eq!(t.stdout.lines().count(), 3);
    assert_eq!(invoke(&["simulate", "double-resonance", "--out", out]).code, exit::CONFIG);
}

#[test]
fn larmor_fit_uses_recorded_fields() {
    let dir = tempfile::tempdir().unwrap();
    let out = path_str(dir.path());
    let mut inputs = Vec::new();
    for (i, bz) in [10.0, 20.0, 30.0].iter().enumerate() {
        let period = 1.0 / (triplet_sense::coherent::PROTON_GAMMA * bz * 1e-3);
        let cfg = write_config(
            dir.path(),
            &format!("e{i}.json"),
            &format!(
                r#"{{"preset": "fig4a", "field_mt": [0, 0, {bz}], "trace": {{"t_max_us": {}, "points": 512}}}}"#,
                12.0 * period
            ),
        );
        let r = invoke(&["simulate", "eseem", "--config", &cfg, "--out", out]);
        assert_eq!(r.code, exit::OK, "{}", r.stderr);
        inputs.push(dir.path().join("simulate_eseem.csv"));
        let moved = dir.path().join(format!("eseem_{i}.csv"));
        fs::rename(&inputs[i], &moved).unwrap();
        fs::rename(
            dir.path().join("simulate_eseem.provenance.json"),
            dir.path().join(format!("eseem_{i}.provenance.json")),
        )
        .unwrap();
        inputs[i] = moved;
    }
    let mut args = vec!["fit", "larmor", "--out", out];
    for p in &inputs {
        args.push("--input");
        args.push(path_str(p));
    }
    let r = invoke(&args);
    assert_eq!(r.code, exit::OK, "{}", r.stderr);
    let slope: f64 = r.stdout.lines().next().unwrap().split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!((slope / triplet_sense::coherent::PROTON_GAMMA - 1.0).abs() < 0.01, "{slope}");

    let mismatch = invoke(&["fit", "larmor", "--input", path_str(&inputs[0]), "--fields-mt", "1,2", "--out", out]);
    assert_eq!(mismatch.code, exit::USAGE);
}

#[test]
fn featureless_spectrum_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let out = path_str(dir.path());
    invoke(&["generate", "spectrum", "--out", out]);
    let csv = dir.path().join("spectrum.csv");
    let text = fs::read_to_string(&csv).unwrap();
    let flat: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| if i < 2 { l.to_string() } else { format!("{},0", l.split(',').next().unwrap()) })
        .collect();
    fs::write(&csv, flat.join("\n")).unwrap();
    let r = invoke(&["fit", "spectrum", "--input", path_str(&csv), "--peaks", "2", "--out", out]);
    assert_eq!(r.code, exit::OK, "{}", r.stderr);
    assert!(r.stdout.contains("warning: unidentifiable: line 1 has no significant amplitude"), "{}", r.stdout);
    assert!(!r.stdout.contains("d_mhz"), "{}", r.stdout);
    let report: Value = serde_json::from_slice(&fs::read(dir.path().join("spectrum_fit.json")).unwrap()).unwrap();
    assert_eq!(report["warnings"].as_array().unwrap().len(), 2);
}

#[test]
fn binary_exit_codes_match_the_library() {
    let bin = env!("CARGO_BIN_EXE_triplet-sense");
    let ok = Command::new(bin).args(["sense", "zfs", "--peaks", "917,1433,2350"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let bad = Command::new(bin).args(["reproduce", "nope"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(i32::from(exit::USAGE)));
    let threads = Command::new(bin)
        .env("TRIPLET_SENSE_THREADS", "zero")
        .args(["sense", "zfs", "--peaks", "917,1433,2350"])
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(i32::from(exit::USAGE)));
}

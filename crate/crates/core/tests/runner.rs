use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;
use zenoq::config::parse_config;
use zenoq::runner::{run_experiment, simulate, sweep_tau};

fn short_scan(dir: &Path, taus: &str) -> String {
    format!(
        r#"{{"system":{{"preset":"vp2_default"}},"propagation":{{"t_end_ps":0.4}},
            "analysis":{{"spectral":false}},
            "measurement":{{"kind":"randomization","tau_list_fs":{taus},"seed":7}},
            "output":{{"directory":{}}}}}"#,
        serde_json::to_string(&dir.to_string_lossy()).unwrap()
    )
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p).unwrap()
}

fn data_rows(csv: &str) -> Vec<&str> {
    csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

#[test]
fn empty_tau_list_gives_only_free_row() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = parse_config(&short_scan(tmp.path(), "[]")).unwrap();
    let out = run_experiment(&exp, Some(1)).unwrap();
    assert_eq!(out.runs.len(), 1);
    let rates = read(tmp.path().join("rates.csv"));
    let rows = data_rows(&rates);
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("inf,") && rows[0].contains(",free,"));
}

#[test]
fn duplicate_taus_are_ignored_with_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = parse_config(&short_scan(tmp.path(), "[20, 5, 20.0, 5]")).unwrap();
    let out = run_experiment(&exp, Some(2)).unwrap();
    assert_eq!(out.warnings.iter().filter(|w| w.starts_with("duplicate tau")).count(), 2);
    let rates = read(tmp.path().join("rates.csv"));
    let taus: Vec<&str> = data_rows(&rates).iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(taus, ["5", "20", "inf"]);
    for sub in ["tau_5fs", "tau_20fs", "free"] {
        assert!(tmp.path().join(sub).join("survival.csv").exists(), "{sub}");
    }
}

#[test]
fn worker_count_does_not_change_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let taus = "[5, 10, 20, 40]";
    sweep_tau(&parse_config(&short_scan(a.path(), taus)).unwrap(), &[5.0, 10.0, 20.0, 40.0], Some(1)).unwrap();
    sweep_tau(&parse_config(&short_scan(b.path(), taus)).unwrap(), &[5.0, 10.0, 20.0, 40.0], Some(4)).unwrap();
    assert_eq!(read(a.path().join("rates.csv")), read(b.path().join("rates.csv")));
    for sub in ["tau_5fs", "tau_40fs", "free"] {
        for f in ["survival.csv", "populations.csv", "fit.json"] {
            assert_eq!(fs::read(a.path().join(sub).join(f)).unwrap(), fs::read(b.path().join(sub).join(f)).unwrap());
        }
    }
}

#[test]
fn manifest_config_reproduces_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = parse_config(&short_scan(tmp.path(), "[10]")).unwrap();
    run_experiment(&exp, Some(1)).unwrap();
    let manifest: Value = serde_json::from_str(&read(tmp.path().join("manifest.json"))).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([7]));
    assert!(manifest["units"]["au_per_fs"].is_number());
    let again = tempfile::tempdir().unwrap();
    let mut cfg = manifest["config"].clone();
    cfg["output"]["directory"] = Value::String(again.path().to_string_lossy().into());
    let exp2 = parse_config(&cfg.to_string()).unwrap();
    assert_eq!(exp2.system, exp.system);
    run_experiment(&exp2, Some(1)).unwrap();
    for f in ["rates.csv", "tau_10fs/survival.csv", "tau_10fs/populations.csv", "free/survival.csv"] {
        assert_eq!(read(tmp.path().join(f)), read(again.path().join(f)), "{f}");
    }
}

#[test]
fn single_run_writes_full_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!(
        r#"{{"system":{{"preset":"ep3_default"}},"propagation":{{"t_end_ps":0.3}},
            "measurement":{{"kind":"depletion","tau_fs":5}},
            "output":{{"directory":{},"checkpoint":true}}}}"#,
        serde_json::to_string(&tmp.path().to_string_lossy()).unwrap()
    );
    let exp = parse_config(&cfg).unwrap();
    let out = run_experiment(&exp, None).unwrap();
    assert_eq!(out.runs.len(), 1);
    for f in ["survival.csv", "populations.csv", "rates.csv", "fit.json", "spectral.csv", "kk.csv", "branching.csv", "manifest.json", "final.chk", "plot.gp"] {
        assert!(tmp.path().join(f).exists(), "missing {f}");
    }
    let surv = read(tmp.path().join("survival.csv"));
    assert!(surv.starts_with("# seed=0\n# model=depletion\n# tau_fs=5\nt_fs,P\n"));
    let pops = read(tmp.path().join("populations.csv"));
    assert!(pops.lines().find(|l| !l.starts_with('#')).unwrap().starts_with("t_fs,live_v20,live_v19,live_2g,live_C,absorbed_v20"));
    let kk = read(tmp.path().join("kk.csv"));
    assert!(kk.lines().last().unwrap().starts_with("inf,"));
    let r = &out.runs[0];
    assert!((r.final_accounted() - 1.0).abs() < 1e-6);
    assert_eq!(r.measurements_applied, 60);
}

#[test]
fn same_seed_reproduces_and_other_seed_differs() {
    let exp = parse_config(&short_scan(Path::new("unused"), "[5]")).unwrap();
    let a = simulate(&exp, Some(5.0), 3).unwrap();
    let b = simulate(&exp, Some(5.0), 3).unwrap();
    let c = simulate(&exp, Some(5.0), 4).unwrap();
    assert_eq!(a.survival.values, b.survival.values);
    assert_eq!(a.populations, b.populations);
    assert_ne!(a.populations, c.populations);
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_zenoq"))
}

#[test]
fn cli_presets_and_validate() {
    let out = bin().arg("presets").output().unwrap();
    assert!(out.status.success());
    let listed = String::from_utf8(out.stdout).unwrap();
    assert!(listed.contains("vp2_default") && listed.contains("ep3_default"));

    let out = bin().args(["presets", "ep3_default"]).output().unwrap();
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["system"]["kind"], "ep_three_state");

    assert_eq!(bin().args(["presets", "nope"]).output().unwrap().status.code(), Some(1));

    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("good.json");
    fs::write(&good, r#"{"system":{"preset":"vp2_default"}}"#).unwrap();
    let out = bin().arg("validate").arg(&good).output().unwrap();
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["grid"]["n_points"], 256);

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"system":{"preset":"vp2_default"},"propagation":{"dt_fs":-1}}"#).unwrap();
    let out = bin().arg("validate").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("propagation.dt_fs"));

    let typo = tmp.path().join("typo.json");
    fs::write(&typo, r#"{"system":{"preset":"vp2_default"},"grid":{"n_pts":128}}"#).unwrap();
    let out = bin().arg("validate").arg(&typo).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid"));
}

#[test]
fn cli_scan_overrides_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("scan.json");
    fs::write(
        &cfg,
        r#"{"system":{"preset":"vp2_default"},"propagation":{"t_end_ps":0.3},
            "analysis":{"spectral":false},
            "measurement":{"kind":"depletion","tau_fs":5}}"#,
    )
    .unwrap();
    let out_dir = tmp.path().join("res");
    let out = bin()
        .arg("scan")
        .arg(&cfg)
        .args(["--tau", "5,10", "--seed", "11", "--threads", "2", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    // A 0.3 ps run cannot pin the fit down, so warnings (exit 2) are acceptable here.
    assert!(matches!(out.status.code(), Some(0) | Some(2)), "{}", String::from_utf8_lossy(&out.stderr));
    let rates = read(out_dir.join("rates.csv"));
    assert!(rates.starts_with("# seed=11\n"));
    assert_eq!(data_rows(&rates).len(), 3);

    let none = tmp.path().join("free.json");
    fs::write(&none, r#"{"system":{"preset":"vp2_default"}}"#).unwrap();
    let out = bin().arg("run").arg(&none).args(["--seed", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("measurement"));
}

#[test]
fn metastable_example_decays_exponentially() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/metastable.json");
    let exp = parse_config(&read(path)).unwrap();
    let r = simulate(&exp, None, 0).unwrap();
    assert!((r.final_accounted() - 1.0).abs() < 1e-8);
    let fit = r.fit.as_ref().unwrap();
    assert_eq!(r.status, "ok");
    assert!(fit.rmse < 1e-4, "rmse {:e}", fit.rmse);
    let p_end = *r.survival.values.last().unwrap();
    let t_end = *r.times.last().unwrap();
    let predicted = fit.amplitude * (-fit.rate_au * t_end).exp();
    assert!(p_end < 0.9 && ((p_end - predicted) / p_end).abs() < 1e-3, "survival {p_end} vs {predicted}");
}

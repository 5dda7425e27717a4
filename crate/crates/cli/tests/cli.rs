use std::path::Path;
use std::process::{Command, Output};

fn shlm(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shlm"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn aggregate_only_criterion_in_contextual_mode_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = shlm(&["collect", "--criterion", "jacov", "--contextual"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("criterion: jacov is aggregate-only"), "{}", stderr(&o));
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"exampels": 3}"#).unwrap();
    let o = shlm(&["--config", cfg.to_str().unwrap(), "flops"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("exampels"), "{}", stderr(&o));
}

#[test]
fn missing_checkpoint_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = shlm(&["eval"], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checkpoint"), "{}", stderr(&o));
    let o = shlm(&["eval", "--checkpoint", "/nonexistent/model.shlm"], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_sweep_grid_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = shlm(&["sweep", "--sparsity", "0.5,0.95"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid"), "{}", stderr(&o));
}

#[test]
fn flops_reports_reference_reduction_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = shlm(&["flops", "--model-preset", "opt-1.3b"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("19.11%"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"]["flops"]["model_preset"], "opt-1.3b");
    assert!(manifest["outputs"]["flops.json"].as_str().unwrap().len() == 64);
}

#[test]
fn unknown_subcommand_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(shlm(&["frobnicate"], dir.path()).status.code(), Some(2));
}

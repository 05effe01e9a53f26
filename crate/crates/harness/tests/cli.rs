use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn exp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_baldwin-exp"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn presets_list_names_every_preset() {
    let out = exp(&["presets", "list"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in [
        "sine-ga",
        "sine-snes",
        "sine-maml",
        "sine-pretrained",
        "rl-goalvel",
        "rl-goaldir",
        "needle",
    ] {
        assert!(
            text.lines().any(|l| l.starts_with(name)),
            "{name} missing from:\n{text}"
        );
    }
}

#[test]
fn run_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let cfg = write_config(
        dir.path(),
        "ga.json",
        &format!(
            r#"{{"preset":"sine-ga","population":4,"generations":2,"output_dir":{:?}}}"#,
            out_a.to_str().unwrap()
        ),
    );
    let out = exp(&["run", "--config", &cfg, "--sequential", "--quiet"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let cfg_b = write_config(
        dir.path(),
        "snes.json",
        &format!(
            r#"{{"preset":"sine-snes","population":4,"generations":2,"output_dir":{:?}}}"#,
            out_b.to_str().unwrap()
        ),
    );
    assert!(exp(&["run", "--config", &cfg_b, "--seed", "3", "-q"])
        .status
        .success());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_b.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 3);

    let csv = dir.path().join("cmp.csv");
    let out = exp(&[
        "compare",
        out_a.to_str().unwrap(),
        out_b.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("final ranking"));
    assert!(text.contains("sine-snes/seed3"));
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 1 + 2 * 2);
}

#[test]
fn invalid_config_exits_one_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{"preset":"sine-ga","sine":{"k_shots":10}}"#,
    );
    let out = exp(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("k_shots"), "{err}");

    let cfg = write_config(
        dir.path(),
        "neg.json",
        r#"{"preset":"needle","population":0}"#,
    );
    let out = exp(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("population"));
}

#[test]
fn missing_files_exit_two_with_the_path() {
    let out = exp(&["run", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("/nonexistent/config.json"));

    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("r");
    let cfg = write_config(
        dir.path(),
        "n.json",
        &format!(
            r#"{{"preset":"needle","population":50,"generations":2,"output_dir":{:?}}}"#,
            run_dir.to_str().unwrap()
        ),
    );
    assert!(exp(&["run", "--config", &cfg, "-q"]).status.success());
    fs::remove_file(run_dir.join("generations.csv")).unwrap();
    let out = exp(&["compare", run_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("generations.csv"));
}

#[test]
fn comparing_different_families_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for (name, body) in [
        (
            "needle",
            r#""preset":"needle","population":50,"generations":2"#,
        ),
        (
            "sine",
            r#""preset":"sine-ga","population":4,"generations":1"#,
        ),
    ] {
        let out_dir = dir.path().join(name);
        let cfg = write_config(
            dir.path(),
            &format!("{name}.json"),
            &format!(r#"{{{body},"output_dir":{:?}}}"#, out_dir.to_str().unwrap()),
        );
        assert!(exp(&["run", "--config", &cfg, "-q"]).status.success());
        dirs.push(out_dir.to_str().unwrap().to_string());
    }
    let out = exp(&["compare", &dirs[0], &dirs[1]]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("needle"));
}

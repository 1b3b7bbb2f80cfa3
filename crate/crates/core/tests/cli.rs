use std::path::Path;
use std::process::Command;

fn cli(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_cemcontact")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn small(dir: &Path) -> Vec<String> {
    ["--nx", "32", "--coarse", "8", "-m", "2", "-o", dir.to_str().unwrap()]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn with<'a>(base: &'a [String], extra: &[&'a str]) -> Vec<&'a str> {
    extra.iter().copied().chain(base.iter().map(String::as_str)).collect()
}

#[test]
fn run_writes_tables_and_fields() {
    let dir = tempfile::tempdir().unwrap();
    let base = small(dir.path());
    let (code, out, err) = cli(&with(&base, &["run", "--variant", "fine", "--variant", "cem", "--variant", "oracle"]));
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("terminal E_L"));
    for f in ["u_fine.txt", "u_cem.txt", "u_oracle.txt", "metrics_fine_cem.csv", "manifest.toml", "active_cem.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let csv = std::fs::read_to_string(dir.path().join("metrics_fine_cem.csv")).unwrap();
    assert!(csv.starts_with("k,E_L,E_a,T_cem_L,T_cem_a,T_fe_L,T_fe_a\n"));

    // the manifest reproduces the run
    let again = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.toml");
    let (code, _, err) = cli(&["run", "--config", manifest.to_str().unwrap(), "-o", again.path().to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    for f in ["u_cem.txt", "metrics_fine_cem.csv"] {
        assert_eq!(
            std::fs::read(dir.path().join(f)).unwrap(),
            std::fs::read(again.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let base = small(dir.path());
    // coarse count must divide the fine count
    let (code, _, _) = cli(&["run", "--nx", "30", "--coarse", "8", "-o", dir.path().to_str().unwrap()]);
    assert_eq!(code, 2);
    let (code, _, _) = cli(&["run", "--config", "/nonexistent/config.toml"]);
    assert_eq!(code, 2);
    // the oracle refuses large grids
    let (code, _, err) = cli(&["run", "--nx", "80", "--variant", "oracle", "-o", dir.path().to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
    let (code, _, err) = cli(&with(&base, &["run", "--variant", "fine", "--max-iter", "1"]));
    assert_eq!(code, 4, "{err}");
    assert!(err.contains("oscillating contact nodes"));
}

#[test]
fn medium_and_sweep_and_basis() {
    let dir = tempfile::tempdir().unwrap();
    let medium = dir.path().join("k.txt");
    let (code, _, err) = cli(&["generate-medium", "--nx", "32", "--style", "B", "-o", medium.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let base = small(dir.path());
    let (code, out, err) = cli(&with(
        &base,
        &["sweep", "--param", "eigvecs", "--values", "1,3", "--medium", medium.to_str().unwrap()],
    ));
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 3);
    assert!(dir.path().join("sweep.csv").exists());

    let (code, out, err) = cli(&with(&base, &["dump-basis", "--element", "27", "--depths", "1,2"]));
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("fitted ratio"));
    let (code, _, _) = cli(&with(&base, &["dump-basis", "--element", "64"]));
    assert_eq!(code, 2);
}

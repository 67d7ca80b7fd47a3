use std::process::Command;

fn run(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_convgp")).args(args).output().unwrap()
}

fn with_config(text: &str, cmd: &str) -> (tempfile::TempDir, std::process::Output) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, text).unwrap();
    let out = dir.path().join("out");
    let o = run(&[cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    (dir, o)
}

#[test]
fn unknown_key_exits_with_config_error() {
    let (_d, o) = with_config("grid_points = 8\ncolour = red\n", "angular");
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
}

#[test]
fn missing_config_file_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["angular", "--config", "/nonexistent/x.cfg", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_cell_is_recorded_and_sets_exit_code() {
    let text = "filter_widths = 1\nd_subs = 2\nmodes = layer1_conditional\nlaws = iid\nreplicates = 1\nn_samples = 50\nn_halfspaces = 100\nd = 20\n";
    let (d, o) = with_config(text, "clt-bound");
    assert_eq!(o.status.code(), Some(3));
    let csv = std::fs::read_to_string(d.path().join("out/clt.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    assert!(last.contains("singular"), "{last}");
}

#[test]
fn plot_with_missing_column_fails() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("t.csv");
    std::fs::write(&data, "# experiment=x\na,b\n1,2\n2,3\n").unwrap();
    let (_d, o) = with_config(&format!("input = {}\nx = a\ny = zzz\n", data.display()), "plot");
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn csv_carries_metadata_and_config_hash() {
    let (d, o) = with_config("grid_points = 8\ndepth = 2\n", "angular");
    assert!(o.status.success());
    let csv = std::fs::read_to_string(d.path().join("out/angular.csv")).unwrap();
    let hash_line = csv.lines().find(|l| l.starts_with("# config_hash=")).unwrap();
    let hash = hash_line.trim_start_matches("# config_hash=");
    assert_eq!(hash.len(), 16);
    let body: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert!(body[0].starts_with("model,depth,theta1"));
    assert!(body[1..].iter().all(|l| l.ends_with(hash)));
}

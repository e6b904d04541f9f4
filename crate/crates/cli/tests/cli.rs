use std::path::PathBuf;
use std::process::{Command, Output};

fn fjlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fjlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fjlab-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn body(csv: &str) -> Vec<&str> {
    csv.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn table1_to_stdout() {
    let out = fjlab(&["table1"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# experiment: table1"));
    assert!(text.lines().any(|l| l == "# seed = 1"));
    let rows = body(&text);
    assert_eq!(rows.len(), 5);
    assert!(rows[0].starts_with("code,et_mu,"));
    assert!(rows[1].contains("0.333333"));
}

#[test]
fn config_file_with_flag_override() {
    let cfg = scratch("qbd.toml");
    std::fs::write(
        &cfg,
        "# heterogeneous rates\nexperiment = \"qbd-ub\"\nlambdas = [0.2, 0.4]\ngamma = 2.0\nseed = 5\n",
    )
    .unwrap();
    let out_path = scratch("qbd.csv");
    let plot = scratch("qbd.svg");
    let out = fjlab(&[
        "qbd-ub",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "9",
        "--lambdas",
        "0.3,0.6,0.9",
        "--out",
        out_path.to_str().unwrap(),
        "--plot",
        plot.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&out_path).unwrap();
    assert!(csv.contains("# seed = 9"));
    assert!(csv.contains("gamma = 2.0"));
    assert_eq!(body(&csv).len(), 4);
    assert!(std::fs::read_to_string(&plot).unwrap().starts_with("<svg"));
}

#[test]
fn reruns_are_byte_identical() {
    let args = [
        "fjfa-bounds",
        "--lambdas",
        "0.4,1.0",
        "--arrivals",
        "3000",
        "--reps",
        "3",
        "--seed",
        "4",
    ];
    let a = fjlab(&args);
    let b = fjlab(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn invalid_config_exits_2() {
    assert_eq!(fjlab(&["qbd-ub", "--lambdas", "-1"]).status.code(), Some(2));
    assert_eq!(fjlab(&["fjfa-bounds", "--reps", "1"]).status.code(), Some(2));
    let cfg = scratch("bad.toml");
    std::fs::write(&cfg, "unknown_key = 3\n").unwrap();
    assert_eq!(
        fjlab(&["table1", "--config", cfg.to_str().unwrap()]).status.code(),
        Some(2)
    );
    assert_eq!(
        fjlab(&["fjfa-bounds", "--layout-file", "/nonexistent/layout.json"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn unstable_cells_exit_3_with_output() {
    let out_path = scratch("unstable.csv");
    let out = fjlab(&["qbd-ub", "--lambdas", "0.5,1.7", "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let csv = std::fs::read_to_string(&out_path).unwrap();
    let rows = body(&csv);
    assert_eq!(rows.len(), 3);
    assert!(rows[2].contains("unstable"));
}

#[test]
fn trace_file_written() {
    let trace = scratch("trace.csv");
    let out = fjlab(&[
        "fjfa-bounds",
        "--lambdas",
        "0.5",
        "--arrivals",
        "500",
        "--reps",
        "2",
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&trace).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("arrival,object,hol_epoch,departure,type,winner"));
    assert_eq!(lines.count(), 500);
}

#[test]
fn layout_file_round_trip() {
    let path = scratch("simplex.json");
    fjlab::layout::simplex_layout(2).unwrap().save(&path).unwrap();
    let out = fjlab(&[
        "service-freqs",
        "--layout-file",
        path.to_str().unwrap(),
        "--lambdas",
        "0.8",
        "--arrivals",
        "4000",
        "--reps",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(body(&text)[0].starts_with("lambda,load,f0,f1,"));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vmapconv"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn vmapconv")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn cae_args<'a>(out: &'a str, image: &'a str) -> Vec<&'a str> {
    vec![
        "train-cae", "--image", image, "--image-size", "16", "--epochs", "6", "--log-every", "2", "--seed", "5", "--out", out,
    ]
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&run(&[])), 2);
    assert_eq!(code(&run(&["train-cae", "--no-such-flag"])), 2);
    assert_eq!(code(&run(&["gradcheck", "--inject-fault", "not_an_op"])), 2);
    assert_eq!(code(&run(&["train-classify", "--lr", "-1"])), 2);
    assert_eq!(code(&run(&["bench", "--ds", "5", "--channels", "8"])), 2);
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "epochs = 2\ncolour = red\n").unwrap();
    let out = run(&["train-cae", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn missing_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let m = missing.to_str().unwrap();
    assert_eq!(code(&run(&["inspect-l", m])), 3);
    assert_eq!(code(&run(&["train-classify", "--data", m, "--out", m])), 3);
    let out = dir.path().join("out");
    assert_eq!(code(&run(&cae_args(out.to_str().unwrap(), m))), 3);
}

#[test]
fn gradcheck_passes_and_catches_fault() {
    let clean = run(&["gradcheck", "--op-seeds", "2", "--layer-seeds", "1"]);
    assert_eq!(code(&clean), 0, "{}", stdout(&clean));
    assert!(!stdout(&clean).contains("FAIL"));

    let faulty = run(&["gradcheck", "--op-seeds", "2", "--layer-seeds", "1", "--inject-fault", "scale_by_l"]);
    assert_eq!(code(&faulty), 1);
    let text = stdout(&faulty);
    let line = |name: &str| text.lines().find(|l| l.split_whitespace().next() == Some(name)).unwrap().to_string();
    assert!(line("op/scale_by_l").ends_with("FAIL"));
    assert!(line("op/conv2d").ends_with("ok"));
}

#[test]
fn oracle_check_passes() {
    let out = run(&["oracle-check", "--scale", "0.1", "--seed", "9"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("oracle/vmap_conv_materialized"));
}

#[test]
fn bench_writes_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let out = run(&[
        "bench", "--ds", "1,2,4", "--channels", "8", "--side", "6", "--reps", "1", "--out", csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "d,path,seconds,max_abs_diff");
    assert_eq!(lines.len(), 7);
    for row in &lines[1..] {
        let cols: Vec<&str> = row.split(',').collect();
        assert!(["expanded", "accumulated"].contains(&cols[1]));
        assert!(cols[3].parse::<f64>().unwrap() < 1e-10);
    }
}

#[test]
fn train_cae_is_deterministic_and_inspectable() {
    let dir = tempfile::tempdir().unwrap();
    let image = fixture("astronaut_64.ppm");
    let image = image.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let res = run(&cae_args(out.to_str().unwrap(), image));
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    }
    let metrics_a = fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics_a, fs::read(b.join("metrics.csv")).unwrap());
    let text = String::from_utf8(metrics_a).unwrap();
    assert!(text.starts_with("epoch,split,loss,metric1,metric2,seconds\n"));
    assert!(a.join("reconstruction.ppm").exists());

    let init = run(&["inspect-l", a.join("checkpoint_init").to_str().unwrap()]);
    assert_eq!(code(&init), 0);
    assert!(stdout(&init).contains("= 100.00%"));

    let csv = dir.path().join("l.csv");
    let trained = run(&[
        "inspect-l",
        a.join("checkpoint").to_str().unwrap(),
        "--initial",
        a.join("checkpoint_init").to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&trained), 0);
    assert!(stdout(&trained).contains("sign retention:"));
    assert!(fs::read_to_string(&csv).unwrap().starts_with("layer,i,j,initial,value,retained\n"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, format!("epochs = 50\nvariant = real\nout = {}\n", out.display())).unwrap();
    let image = fixture("chelsea_64.ppm");
    let res = run(&[
        "train-cae", "--config", cfg.to_str().unwrap(), "--epochs", "2", "--image", image.to_str().unwrap(), "--image-size", "8",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let written = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(written.contains("epochs = 2\n"));
    assert!(written.contains("variant = real\n"));
}

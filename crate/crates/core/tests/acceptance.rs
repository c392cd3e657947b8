//! Acceptance criteria. Each criterion prints one `PASS`/`FAIL`/`NOT RUN`
//! line to stderr (written to the raw handle so the harness shows it without
//! `--nocapture`). Tolerances are pinned below.
//!
//! The CIFAR-10 criteria need the binary batches on disk and are `#[ignore]`d:
//!
//! ```text
//! VMAP_CIFAR10_DIR=/path/to/cifar-10-batches-bin \
//!     cargo test --release -p vmapconv --test acceptance -- --ignored
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use vmapconv::checks::{gradcheck_suite, oracle_suite, CheckReport, GradcheckOptions, OracleOptions};
use vmapconv::config::{Command, RunConfig};
use vmapconv::data::cifar::{encode_cifar10, TEST_FILE, TRAIN_FILES};
use vmapconv::data::Cifar10Set;
use vmapconv::diagnostics::inspect_l;
use vmapconv::models::{build_classifier, ClassifierConfig, Variant};
use vmapconv::run::{run_train_cae, run_train_classify, RunSummary, CHECKPOINT_DIR, INIT_CHECKPOINT_DIR};
use vmapconv::vmap::{
    init_weights, load_checkpoint, ConvMode, Criterion, InitSpec, LMode, Layer, VectorMapConv2d,
};
use vmapconv::{ConvGeometry, SeededRng};

const ORACLE_TOL: f64 = 1e-10;
const ORACLE_CASES: usize = 500;
const ORACLE_MAX_SECONDS: f64 = 60.0;
const EXACT_TOL: f64 = 1e-12;
const EXACT_CASES: usize = 100;
const GRAD_TOL: f64 = 1e-5;
const GRAD_MAX_SECONDS: f64 = 300.0;
const INIT_SAMPLES: usize = 100_000;
const INIT_REL_TOL: f64 = 0.05;
const PARAM_CONFIGS: usize = 20;
const CONV_PARAM_RATIO: f64 = 0.40;
const CAE_EPOCHS: u32 = 3000;
const CAE_SEED: u64 = 42;
const CAE_PSNR_MARGIN_DB: f64 = 3.0;
const CAE_MIN_SSIM: f64 = 0.8;
const CAE_MAX_SECONDS: f64 = 3600.0;
const CIFAR_MIN_ACC: f64 = 0.45;
const CIFAR_MAX_GAP: f64 = 0.05;
const CIFAR_MAX_SECONDS: f64 = 1800.0;
const L_MIN_RETENTION: f64 = 0.70;

fn line(id: &str, title: &str, ok: bool, detail: &str) {
    let status = if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[{status}] criterion {id:<3} {title}: {detail}");
}

fn not_run(id: &str, title: &str, why: &str) {
    let _ = writeln!(std::io::stderr(), "[NOT RUN] criterion {id:<3} {title}: {why}");
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn check(report: &CheckReport, name: &str) -> (bool, usize, f64) {
    let r = report.get(name).unwrap_or_else(|| panic!("missing check {name}"));
    (r.passed(), r.cases, r.max_err)
}

fn oracle_criteria(results: &mut Vec<bool>) {
    let start = Instant::now();
    let report = oracle_suite(&OracleOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();

    let (ok, cases, err) = check(&report, "oracle/vmap_conv_materialized");
    let ok = ok && cases >= ORACLE_CASES && err < ORACLE_TOL && secs < ORACLE_MAX_SECONDS;
    line(
        "1",
        "oracle equivalence",
        ok,
        &format!("{cases} cases, D in {{1,2,3,4,8}}, max abs diff {err:.2e} < {ORACLE_TOL:e}, suite {secs:.1} s"),
    );
    results.push(ok);

    let (ok, cases, err) = check(&report, "oracle/complex_reduction");
    let ok = ok && cases >= EXACT_CASES && err < EXACT_TOL;
    line("2", "complex reduction", ok, &format!("{cases} cases, max abs diff {err:.2e} < {EXACT_TOL:e}"));
    results.push(ok);

    let (q_ok, cases, err) = check(&report, "oracle/quaternion_hamilton");
    let (p_ok, _, _) = check(&report, "oracle/hamilton_not_circulant");
    let ok = q_ok && p_ok && cases >= EXACT_CASES && err < EXACT_TOL;
    line(
        "3",
        "quaternion baseline",
        ok,
        &format!("{cases} cases, max abs diff {err:.2e} < {EXACT_TOL:e}; circulant pattern differs from Hamilton: {p_ok}"),
    );
    results.push(ok);
}

fn gradient_criterion(results: &mut Vec<bool>) {
    let start = Instant::now();
    let report = gradcheck_suite(&GradcheckOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = report.results.iter().map(|r| r.max_err).fold(0.0, f64::max);
    let ok = report.passed() && secs < GRAD_MAX_SECONDS && report.results.iter().all(|r| r.tolerance <= GRAD_TOL);
    let failures: Vec<&str> = report.failures().iter().map(|r| r.name.as_str()).collect();
    line(
        "4",
        "gradient correctness",
        ok,
        &format!(
            "{} checks (ops, layers incl. L, models), max rel err {worst:.2e} < {GRAD_TOL:e}, {secs:.1} s, failures {failures:?}",
            report.results.len()
        ),
    );
    results.push(ok);
}

fn init_criterion(results: &mut Vec<bool>) {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    let root = SeededRng::new(5);
    for d in [2usize, 3, 4, 8] {
        let spec = InitSpec {
            criterion: Criterion::Glorot,
            d,
            n_in: 16,
            n_out: 16,
            l_mode: LMode::Pattern,
        };
        let sigma = spec.sigma().unwrap();
        let (w, _) = init_weights(&spec, &[INIT_SAMPLES, d], 1, &mut root.split(&format!("d{d}"))).unwrap();
        let mean_sq = w.data().iter().map(|v| v * v).sum::<f64>() / INIT_SAMPLES as f64;
        let rel = (mean_sq / (sigma * sigma) / d as f64 - 1.0).abs();
        worst = worst.max(rel);
        ok &= rel < INIT_REL_TOL;
    }
    let sigma = InitSpec {
        criterion: Criterion::Glorot,
        d: 4,
        n_in: 64,
        n_out: 64,
        l_mode: LMode::Pattern,
    }
    .sigma()
    .unwrap();
    ok &= sigma == 0.0625;
    line(
        "5",
        "init statistics",
        ok,
        &format!("E|W|^2/sigma^2 within {:.2}% of D (tol {:.0}%), sigma(D=4, glorot, 64/64) = {sigma}", 100.0 * worst, 100.0 * INIT_REL_TOL),
    );
    results.push(ok);
}

fn param_criterion(results: &mut Vec<bool>) {
    let mut rng = SeededRng::new(6);
    let mut mismatches = Vec::new();
    for case in 0..PARAM_CONFIGS {
        let d = 1 + rng.below(8);
        let (c_in, c_out) = ((1 + rng.below(4)) * d, (1 + rng.below(4)) * d);
        let k = [1, 3, 5][rng.below(3)];
        let bias = rng.below(2) == 1;
        let mode = if rng.below(2) == 1 { ConvMode::Transposed { output_padding: 0 } } else { ConvMode::Forward };
        let layer = VectorMapConv2d::new(
            d,
            c_in,
            c_out,
            (k, k),
            ConvGeometry { stride: 1, pad: 0 },
            mode,
            bias,
            Criterion::He,
            LMode::RandomSign,
            &mut rng,
        )
        .unwrap();
        let closed = c_in * c_out * k * k / d + d * d + if bias { c_out } else { 0 };
        if layer.param_count() != closed {
            mismatches.push(case);
        }
    }
    let root = SeededRng::new(42);
    let vm = build_classifier(&ClassifierConfig::new(Variant::Vmap, 3), &mut root.split("model")).unwrap();
    let real = build_classifier(&ClassifierConfig::new(Variant::Real, 1), &mut root.split("model")).unwrap();
    let ratio = vm.conv_param_count() as f64 / real.conv_param_count() as f64;
    let ok = mismatches.is_empty() && ratio <= CONV_PARAM_RATIO;
    line(
        "6",
        "parameter accounting",
        ok,
        &format!(
            "{PARAM_CONFIGS} configs, mismatches {mismatches:?}; classifier conv params vmap/real = {}/{} = {ratio:.3} <= {CONV_PARAM_RATIO}",
            vm.conv_param_count(),
            real.conv_param_count()
        ),
    );
    results.push(ok);
}

fn cae_run(variant: Variant, d: usize, out: &Path) -> (RunSummary, f64) {
    let mut cfg = RunConfig::defaults(Command::TrainCae);
    cfg.variant = variant;
    cfg.d = d;
    cfg.seed = CAE_SEED;
    cfg.epochs = CAE_EPOCHS;
    cfg.image = Some(fixture("astronaut_64.ppm"));
    cfg.out = out.to_path_buf();
    let start = Instant::now();
    let summary = run_train_cae(&cfg).unwrap();
    (summary, start.elapsed().as_secs_f64())
}

fn num(summary: &RunSummary, key: &str) -> f64 {
    summary.get(key).unwrap().parse().unwrap()
}

fn cae_criteria(results: &mut Vec<bool>, dir: &Path) -> PathBuf {
    let (d3, t3) = cae_run(Variant::Vmap, 3, &dir.join("vmap3"));
    let (psnr, gray, ssim) = (num(&d3, "psnr"), num(&d3, "gray_psnr"), num(&d3, "ssim"));
    let mut ok = psnr >= gray + CAE_PSNR_MARGIN_DB && ssim >= CAE_MIN_SSIM;
    let mut detail = format!(
        "astronaut 64x64, {CAE_EPOCHS} epochs, seed {CAE_SEED}: vmap D=3 PSNR {psnr:.2} dB vs gray {gray:.2} dB (need +{CAE_PSNR_MARGIN_DB}), SSIM {ssim:.3} (need {CAE_MIN_SSIM}), {t3:.0} s"
    );
    let mut total = t3;
    for (variant, d, name) in [(Variant::Vmap, 4, "vmap D=4"), (Variant::Quaternion, 4, "quaternion")] {
        let (s, t) = cae_run(variant, d, &dir.join(name.replace([' ', '='], "")));
        let p = num(&s, "psnr");
        ok &= p.is_finite() && s.rows.last().map(|r| r.epoch) == Some(CAE_EPOCHS);
        total += t;
        detail += &format!("; {name} completed, PSNR {p:.2} dB, SSIM {:.3}", num(&s, "ssim"));
    }
    ok &= total < CAE_MAX_SECONDS;
    line("8", "CAE colorization", ok, &detail);
    results.push(ok);
    d3.metrics_path()
}

fn cae_determinism(results: &mut Vec<bool>, dir: &Path, first: &Path) {
    let (again, _) = cae_run(Variant::Vmap, 3, &dir.join("vmap3_again"));
    let a = fs::read(first).unwrap();
    let b = fs::read(again.metrics_path()).unwrap();
    let ok = a == b;
    line(
        "10b",
        "determinism (CAE)",
        ok,
        &format!("same-seed rerun metrics.csv bitwise identical: {ok} ({} bytes)", a.len()),
    );
    results.push(ok);
}

fn write_synthetic_cifar(dir: &Path, per_file: usize) {
    let mut rng = SeededRng::new(77);
    for (f, name) in TRAIN_FILES.iter().chain([TEST_FILE].iter()).enumerate() {
        let labels: Vec<usize> = (0..per_file).map(|i| (i + f) % 10).collect();
        let images = rng.uniform_tensor(&[per_file, 3, 32, 32], 0.0, 1.0).unwrap();
        fs::write(dir.join(name), encode_cifar10(&Cifar10Set { images, labels })).unwrap();
    }
}

/// The classification pipeline on synthetic CIFAR-format files. Not a
/// criterion: it only shows the run/metrics/checkpoint/inspect chain works.
fn synthetic_smoke() -> bool {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_cifar(dir.path(), 20);
    let mut cfg = RunConfig::defaults(Command::TrainClassify);
    cfg.data = dir.path().to_path_buf();
    cfg.out = dir.path().join("run");
    cfg.epochs = 2;
    cfg.subset = 2;
    cfg.test_subset = 2;
    cfg.batch_size = 10;
    let summary = run_train_classify(&cfg).unwrap();
    let report = inspect_l(
        &load_checkpoint(&cfg.out.join(CHECKPOINT_DIR)).unwrap(),
        Some(&load_checkpoint(&cfg.out.join(INIT_CHECKPOINT_DIR)).unwrap()),
    )
    .unwrap();
    let ok = summary.rows.len() == 5 && report.total() > 0;
    let _ = writeln!(
        std::io::stderr(),
        "[{}] smoke         synthetic CIFAR-format pipeline: {} metric rows, L retention {:.1}% (random data, not a criterion)",
        if ok { "PASS" } else { "FAIL" },
        summary.rows.len(),
        100.0 * report.retention()
    );
    ok
}

#[test]
fn acceptance_criteria() {
    let mut results = Vec::new();
    oracle_criteria(&mut results);
    gradient_criterion(&mut results);
    init_criterion(&mut results);
    param_criterion(&mut results);
    let why = "CIFAR-10 binaries unavailable offline; run the ignored `cifar_criteria` test with VMAP_CIFAR10_DIR set";
    not_run("7", "desk-scale CIFAR-10", why);
    let dir = tempfile::tempdir().unwrap();
    let metrics = cae_criteria(&mut results, dir.path());
    not_run("9", "L-sign retention", why);
    not_run("10a", "determinism (CIFAR)", why);
    cae_determinism(&mut results, dir.path(), &metrics);
    results.push(synthetic_smoke());
    assert!(results.iter().all(|&ok| ok), "acceptance failures: {results:?}");
}

fn cifar_dir() -> PathBuf {
    let dir = PathBuf::from(std::env::var("VMAP_CIFAR10_DIR").unwrap_or_else(|_| "data/cifar-10-batches-bin".into()));
    assert!(
        dir.join(TEST_FILE).exists(),
        "CIFAR-10 binaries not found in {}; set VMAP_CIFAR10_DIR",
        dir.display()
    );
    dir
}

fn classify(data: &Path, variant: Variant, out: PathBuf) -> (RunSummary, f64) {
    let mut cfg = RunConfig::defaults(Command::TrainClassify);
    cfg.variant = variant;
    cfg.d = if variant == Variant::Vmap { 3 } else { 1 };
    cfg.data = data.to_path_buf();
    cfg.out = out;
    let start = Instant::now();
    let summary = run_train_classify(&cfg).unwrap();
    (summary, start.elapsed().as_secs_f64())
}

#[test]
#[ignore = "needs the CIFAR-10 binary batches (VMAP_CIFAR10_DIR)"]
fn cifar_criteria() {
    let data = cifar_dir();
    let dir = tempfile::tempdir().unwrap();
    let mut results = Vec::new();

    let (real, t_real) = classify(&data, Variant::Real, dir.path().join("real"));
    let (vm, t_vm) = classify(&data, Variant::Vmap, dir.path().join("vmap"));
    let (a_real, a_vm) = (num(&real, "final_test_accuracy"), num(&vm, "final_test_accuracy"));
    let ok = real.get("train_images") == Some("5000")
        && real.get("test_images") == Some("1000")
        && a_real >= CIFAR_MIN_ACC
        && a_vm >= CIFAR_MIN_ACC
        && (a_real - a_vm).abs() <= CIFAR_MAX_GAP
        && t_real.max(t_vm) < CIFAR_MAX_SECONDS;
    line(
        "7",
        "desk-scale CIFAR-10",
        ok,
        &format!(
            "real {:.1}% ({t_real:.0} s), vmap D=3 {:.1}% ({t_vm:.0} s), need >= {:.0}% and gap <= {:.0} points",
            100.0 * a_real,
            100.0 * a_vm,
            100.0 * CIFAR_MIN_ACC,
            100.0 * CIFAR_MAX_GAP
        ),
    );
    results.push(ok);

    let report = inspect_l(
        &load_checkpoint(&vm.out.join(CHECKPOINT_DIR)).unwrap(),
        Some(&load_checkpoint(&vm.out.join(INIT_CHECKPOINT_DIR)).unwrap()),
    )
    .unwrap();
    let ok = report.retention() >= L_MIN_RETENTION && report.render().contains("[");
    line(
        "9",
        "L-sign retention",
        ok,
        &format!(
            "{}/{} = {:.1}% (need {:.0}%), {} per-layer histograms",
            report.retained(),
            report.total(),
            100.0 * report.retention(),
            100.0 * L_MIN_RETENTION,
            report.layers.len()
        ),
    );
    results.push(ok);

    let (again, _) = classify(&data, Variant::Vmap, dir.path().join("vmap_again"));
    let ok = fs::read(vm.metrics_path()).unwrap() == fs::read(again.metrics_path()).unwrap();
    line("10a", "determinism (CIFAR)", ok, &format!("same-seed rerun metrics.csv bitwise identical: {ok}"));
    results.push(ok);

    assert!(results.iter().all(|&ok| ok), "CIFAR acceptance failures: {results:?}");
}

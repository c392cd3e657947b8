//! Property suites behind `gradcheck` and `oracle-check`.
//!
//! The gradient suite compares tape gradients against central finite
//! differences for every differentiable op, every layer type and small
//! end-to-end models. The oracle suite compares the fast kernels and the
//! vector map layers against the loop references in [`crate::oracle`].

use std::fmt::Write as _;

use crate::autodiff::{OpKind, Tape, Var};
use crate::error::Result;
use crate::models::{build_cae, build_classifier, cae_pair, CaeConfig, ClassifierConfig, Variant};
use crate::oracle;
use crate::tensor::{self, ConvGeometry, SeededRng, Tensor};
use crate::vmap::{
    circulant_table, expand_weights, hamilton_table, tau, unsigned_pattern, Conv2d, ConvMode, Criterion, Dense,
    ForwardPath, LMatrix, LMode, Layer, QuaternionConv2d, VectorMapConv2d, VectorMapDense,
};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    /// Largest error seen: relative for gradient checks, absolute for oracle
    /// checks.
    pub max_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_err.is_finite() && self.max_err < self.tolerance
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckReport {
    pub results: Vec<CheckResult>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.results.iter().filter(|r| !r.passed()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.results.iter().find(|r| r.name == name)
    }

    /// One line per check: name, cases, max error, tolerance, verdict.
    pub fn render(&self) -> String {
        let width = self.results.iter().map(|r| r.name.len()).max().unwrap_or(4);
        let mut out = String::new();
        let _ = writeln!(out, "{:width$}  {:>5}  {:>10}  {:>8}  result", "check", "cases", "max_err", "tol");
        for r in &self.results {
            let _ = writeln!(
                out,
                "{:width$}  {:>5}  {:>10.3e}  {:>8.0e}  {}",
                r.name,
                r.cases,
                r.max_err,
                r.tolerance,
                if r.passed() { "ok" } else { "FAIL" }
            );
        }
        out
    }
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

struct Case {
    inputs: Vec<Tensor>,
    build: Build,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckOptions {
    /// Random cases per op.
    pub op_seeds: u64,
    /// Random cases per layer type and per model.
    pub layer_seeds: u64,
    pub eps: f64,
    pub tolerance: f64,
    /// Negate an adjoint of this op during every backward pass.
    pub fault: Option<OpKind>,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            op_seeds: 20,
            layer_seeds: 3,
            eps: 1e-6,
            tolerance: 1e-5,
            fault: None,
            seed: 0,
        }
    }
}

fn scalarize(tape: &mut Tape, out: Var, proj: &Tensor) -> Result<Var> {
    let r = tape.constant(proj.clone());
    let m = tape.mul(out, r)?;
    tape.sum(m)
}

/// Largest norm-relative error over the inputs of one case.
fn check_case(case: &Case, rng: &mut SeededRng, eps: f64, fault: Option<OpKind>) -> Result<f64> {
    let shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = case.inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = (case.build)(&mut tape, &vars)?;
        tape.value(out).dims().to_vec()
    };
    let proj = rng.uniform_tensor(&shape, -1.0, 1.0)?;

    let mut tape = Tape::new();
    if let Some(kind) = fault {
        tape.inject_adjoint_fault(kind);
    }
    let vars: Vec<Var> = case.inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = (case.build)(&mut tape, &vars)?;
    let loss = scalarize(&mut tape, out, &proj)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().zip(&case.inputs).map(|(&v, t)| grads.get_or_zeros(v, t)).collect();

    let mut failed = None;
    let numeric = oracle::finite_diff_grad(
        |params| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = params.iter().map(|t| tape.constant(t.clone())).collect();
            let value = (case.build)(&mut tape, &vars)
                .and_then(|out| scalarize(&mut tape, out, &proj))
                .map(|l| tape.value(l).item());
            value.unwrap_or_else(|e| {
                failed = Some(e);
                f64::NAN
            })
        },
        &case.inputs,
        eps,
    );
    if let Some(e) = failed {
        return Err(e);
    }
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| oracle::relative_error(a, n))
        .fold(0.0, f64::max))
}

/// Uniform values in `[-2, 2]` kept at least `margin` away from the kinks
/// at `kinks`.
fn away_from(rng: &mut SeededRng, dims: &[usize], kinks: &[f64], margin: f64) -> Result<Tensor> {
    let mut t = rng.uniform_tensor(dims, -2.0, 2.0)?;
    for v in t.data_mut() {
        for &k in kinks {
            if (*v - k).abs() < margin {
                *v = k + if *v >= k { margin } else { -margin };
            }
        }
    }
    Ok(t)
}

fn between(rng: &mut SeededRng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

fn op_case(kind: OpKind, rng: &mut SeededRng) -> Result<Case> {
    let u = |rng: &mut SeededRng, dims: &[usize]| rng.uniform_tensor(dims, -1.0, 1.0);
    let case = |inputs: Vec<Tensor>, build: Build| Case { inputs, build };
    Ok(match kind {
        OpKind::Add => case(vec![u(rng, &[2, 3])?, u(rng, &[2, 3])?], Box::new(|t, v| t.add(v[0], v[1]))),
        OpKind::Sub => case(vec![u(rng, &[2, 3])?, u(rng, &[2, 3])?], Box::new(|t, v| t.sub(v[0], v[1]))),
        OpKind::Mul => case(vec![u(rng, &[2, 3])?, u(rng, &[2, 3])?], Box::new(|t, v| t.mul(v[0], v[1]))),
        OpKind::Scale => {
            let c = rng.uniform(-2.0, 2.0);
            case(vec![u(rng, &[3, 2])?], Box::new(move |t, v| t.scale(v[0], c)))
        }
        OpKind::MatMul => {
            let (m, k, n) = (between(rng, 1, 4), between(rng, 1, 4), between(rng, 1, 4));
            case(vec![u(rng, &[m, k])?, u(rng, &[k, n])?], Box::new(|t, v| t.matmul(v[0], v[1])))
        }
        OpKind::Transpose => case(vec![u(rng, &[2, 3])?], Box::new(|t, v| t.transpose(v[0]))),
        OpKind::Conv2d => {
            let (kh, kw) = (between(rng, 1, 3), between(rng, 1, 3));
            let geom = ConvGeometry {
                stride: between(rng, 1, 2),
                pad: rng.below(2),
            };
            let c = between(rng, 1, 3);
            let h = between(rng, 3, 5);
            let w = between(rng, 3, 5);
            let x = u(rng, &[2, c, h, w])?;
            let c_out = between(rng, 1, 3);
            let k = u(rng, &[c_out, x.dims()[1], kh, kw])?;
            case(vec![x, k], Box::new(move |t, v| t.conv2d(v[0], v[1], geom)))
        }
        OpKind::ConvTranspose2d => {
            let stride = between(rng, 1, 2);
            let geom = ConvGeometry { stride, pad: rng.below(2) };
            let op = rng.below(stride);
            let c = between(rng, 1, 3);
            let h = between(rng, 2, 4);
            let w = between(rng, 2, 4);
            let x = u(rng, &[2, c, h, w])?;
            let c_out = between(rng, 1, 3);
            let k = u(rng, &[x.dims()[1], c_out, 3, 3])?;
            case(vec![x, k], Box::new(move |t, v| t.conv_transpose2d(v[0], v[1], geom, op)))
        }
        OpKind::Hardtanh => case(
            vec![away_from(rng, &[3, 4], &[-1.0, 1.0], 0.05)?],
            Box::new(|t, v| t.hardtanh(v[0])),
        ),
        OpKind::Relu => case(vec![away_from(rng, &[3, 4], &[0.0], 0.05)?], Box::new(|t, v| t.relu(v[0]))),
        OpKind::Reshape => case(vec![u(rng, &[2, 3, 2])?], Box::new(|t, v| t.reshape(v[0], &[3, 4]))),
        OpKind::SwapLeadingAxes => case(vec![u(rng, &[2, 3, 2, 2])?], Box::new(|t, v| t.swap_leading_axes(v[0]))),
        OpKind::ConcatChannels => case(
            vec![u(rng, &[2, 1, 3, 3])?, u(rng, &[2, 2, 3, 3])?],
            Box::new(|t, v| t.concat_channels(&[v[0], v[1]])),
        ),
        OpKind::SliceChannels => case(vec![u(rng, &[2, 4, 3, 3])?], Box::new(|t, v| t.slice_channels(v[0], 1, 2))),
        OpKind::AddChannelBias => case(
            vec![u(rng, &[2, 3, 3, 3])?, u(rng, &[3])?],
            Box::new(|t, v| t.add_channel_bias(v[0], v[1])),
        ),
        OpKind::BlockGather => {
            let d = between(rng, 1, 4);
            let table = if d == 4 && rng.below(2) == 0 {
                hamilton_table()
            } else {
                circulant_table(d)?
            };
            let table = std::sync::Arc::new(table);
            let bi = between(rng, 1, 2);
            let shared = u(rng, &[2, bi, d, 2, 2])?;
            case(vec![shared], Box::new(move |t, v| t.block_gather(v[0], table.clone())))
        }
        OpKind::ScaleByL => {
            let d = between(rng, 1, 4);
            case(
                vec![u(rng, &[2 * d, d, 2, 2])?, u(rng, &[d, d])?],
                Box::new(|t, v| t.scale_by_l(v[0], v[1])),
            )
        }
        OpKind::GlobalAvgPool => case(vec![u(rng, &[2, 3, 3, 2])?], Box::new(|t, v| t.global_avg_pool(v[0]))),
        OpKind::Sum => case(vec![u(rng, &[2, 3])?], Box::new(|t, v| t.sum(v[0]))),
        OpKind::SoftmaxCrossEntropy => {
            let labels: Vec<usize> = (0..3).map(|_| rng.below(4)).collect();
            case(
                vec![rng.uniform_tensor(&[3, 4], -3.0, 3.0)?],
                Box::new(move |t, v| t.softmax_cross_entropy(v[0], &labels)),
            )
        }
        OpKind::Mse => case(vec![u(rng, &[2, 3])?, u(rng, &[2, 3])?], Box::new(|t, v| t.mse(v[0], v[1]))),
        OpKind::Leaf => unreachable!("leaf has no adjoint"),
    })
}

/// Input then every parameter of `layer` as checked inputs.
fn layer_case(layer: Box<dyn Layer>, x: Tensor) -> Case {
    let mut inputs = vec![x];
    inputs.extend(layer.params().iter().map(|p| p.value.clone()));
    Case {
        inputs,
        build: Box::new(move |t, v| layer.forward(t, v[0], &v[1..])),
    }
}

/// Randomizes every parameter so zero-initialized biases and `±1` entries
/// of `L` are exercised away from their initial values.
fn perturb_params(layer: &mut dyn Layer, rng: &mut SeededRng) -> Result<()> {
    for p in layer.params_mut() {
        let noise = rng.uniform_tensor(p.dims(), -0.5, 0.5)?;
        p.add_assign(&noise)?;
    }
    Ok(())
}

fn layer_cases(rng: &mut SeededRng) -> Result<Vec<(String, Case)>> {
    let mut out: Vec<(String, Case)> = Vec::new();
    let s1 = ConvGeometry { stride: 1, pad: 1 };
    let s2 = ConvGeometry { stride: 2, pad: 1 };
    let up = ConvMode::Transposed { output_padding: 1 };
    let x = |rng: &mut SeededRng, c: usize, side: usize| rng.uniform_tensor(&[2, c, side, side], -1.0, 1.0);

    let mut add = |name: String, mut layer: Box<dyn Layer>, input: Tensor, rng: &mut SeededRng| -> Result<()> {
        perturb_params(layer.as_mut(), rng)?;
        out.push((name, layer_case(layer, input)));
        Ok(())
    };

    let conv = Conv2d::new(2, 3, (3, 3), s2, ConvMode::Forward, true, rng)?;
    let input = x(rng, 2, 5)?;
    add("layer/conv2d".into(), Box::new(conv), input, rng)?;
    let convt = Conv2d::new(3, 2, (3, 3), s2, up, true, rng)?;
    let input = x(rng, 3, 3)?;
    add("layer/conv2d_transposed".into(), Box::new(convt), input, rng)?;

    for d in 1..=4 {
        let layer = VectorMapConv2d::new(d, 2 * d, d, (3, 3), s1, ConvMode::Forward, true, Criterion::Glorot, LMode::RandomSign, rng)?;
        let input = x(rng, 2 * d, 4)?;
        add(format!("layer/vmap_conv2d_d{d}"), Box::new(layer), input, rng)?;
    }
    let layer = VectorMapConv2d::new(3, 6, 3, (3, 3), s2, up, true, Criterion::Glorot, LMode::Pattern, rng)?;
    let input = x(rng, 6, 3)?;
    add("layer/vmap_conv2d_transposed_d3".into(), Box::new(layer), input, rng)?;

    let q = QuaternionConv2d::new(4, 4, (3, 3), s1, ConvMode::Forward, true, Criterion::Glorot, rng)?;
    let input = x(rng, 4, 4)?;
    add("layer/quaternion_conv2d".into(), Box::new(q), input, rng)?;
    let q = QuaternionConv2d::new(8, 4, (3, 3), s2, up, true, Criterion::Glorot, rng)?;
    let input = x(rng, 8, 3)?;
    add("layer/quaternion_conv2d_transposed".into(), Box::new(q), input, rng)?;

    let dense = Dense::new(5, 3, true, rng)?;
    let input = rng.uniform_tensor(&[2, 5], -1.0, 1.0)?;
    add("layer/dense".into(), Box::new(dense), input, rng)?;
    let vd = VectorMapDense::new(3, 2, 2, true, Criterion::Glorot, LMode::RandomSign, rng)?;
    let input = rng.uniform_tensor(&[2, 6], -1.0, 1.0)?;
    add("layer/vmap_dense_d3".into(), Box::new(vd), input, rng)?;
    Ok(out)
}

fn model_cases(rng: &mut SeededRng) -> Result<Vec<(String, Case)>> {
    let mut out = Vec::new();
    for (variant, d) in [(Variant::Real, 1), (Variant::Quaternion, 4), (Variant::Vmap, 3)] {
        let mut cfg = ClassifierConfig::new(variant, d);
        cfg.channel_plan = vec![(12, 1), (12, 2)];
        let model = build_classifier(&cfg, &mut rng.split("classifier"))?;
        let x = model.prepare_input(&rng.uniform_tensor(&[2, 3, 6, 6], 0.0, 1.0)?)?;
        let labels = vec![rng.below(10), rng.below(10)];
        let mut inputs = vec![x];
        inputs.extend(model.params().iter().map(|p| p.value.clone()));
        let name = format!("model/classifier_{}", variant.name());
        out.push((
            name,
            Case {
                inputs,
                build: Box::new(move |t, v| {
                    let logits = model.forward(t, v[0], &v[1..])?;
                    t.softmax_cross_entropy(logits, &labels)
                }),
            },
        ));
    }
    for (variant, d) in [(Variant::Vmap, 3), (Variant::Vmap, 4), (Variant::Quaternion, 4)] {
        let mut cfg = CaeConfig::new(variant, d);
        cfg.bundles = (1, 2);
        let model = build_cae(&cfg, &mut rng.split("cae"))?;
        let rgb = rng.uniform_tensor(&[3, 4, 4], 0.0, 1.0)?;
        let (x, y) = cae_pair(&rgb, model.input_channels())?;
        let mut inputs = vec![x];
        inputs.extend(model.params().iter().map(|p| p.value.clone()));
        out.push((
            format!("model/cae_{}_d{d}", variant.name()),
            Case {
                inputs,
                build: Box::new(move |t, v| {
                    let pred = model.forward(t, v[0], &v[1..])?;
                    let target = t.constant(y.clone());
                    t.mse(pred, target)
                }),
            },
        ));
    }
    Ok(out)
}

/// Central finite-difference check of every op, layer and small model.
pub fn gradcheck_suite(opts: &GradcheckOptions) -> Result<CheckReport> {
    let root = SeededRng::new(opts.seed);
    let mut report = CheckReport::default();
    for kind in OpKind::DIFFERENTIABLE {
        let mut rng = root.split(&format!("op/{}", kind.name()));
        let mut max_err: f64 = 0.0;
        for _ in 0..opts.op_seeds {
            let case = op_case(kind, &mut rng)?;
            max_err = max_err.max(check_case(&case, &mut rng, opts.eps, opts.fault)?);
        }
        report.results.push(CheckResult {
            name: format!("op/{}", kind.name()),
            cases: opts.op_seeds as usize,
            max_err,
            tolerance: opts.tolerance,
        });
    }
    let mut per_name: Vec<(String, f64)> = Vec::new();
    for s in 0..opts.layer_seeds {
        let mut rng = root.split(&format!("layers/{s}"));
        let mut cases = layer_cases(&mut rng)?;
        cases.extend(model_cases(&mut rng)?);
        for (name, case) in cases {
            let err = check_case(&case, &mut rng, opts.eps, opts.fault)?;
            match per_name.iter_mut().find(|(n, _)| *n == name) {
                Some((_, e)) => *e = e.max(err),
                None => per_name.push((name, err)),
            }
        }
    }
    for (name, max_err) in per_name {
        report.results.push(CheckResult {
            name,
            cases: opts.layer_seeds as usize,
            max_err,
            tolerance: opts.tolerance,
        });
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleOptions {
    pub seed: u64,
    /// Multiplies the case counts (1 = full suite).
    pub scale: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions { seed: 0, scale: 1.0 }
    }
}

struct Tally {
    name: &'static str,
    cases: usize,
    max_err: f64,
    tolerance: f64,
}

impl Tally {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Tally {
            name,
            cases: 0,
            max_err: 0.0,
            tolerance,
        }
    }

    fn record(&mut self, a: &Tensor, b: &Tensor) -> Result<()> {
        self.max_err = self.max_err.max(a.max_abs_diff(b)?);
        self.cases += 1;
        Ok(())
    }

    /// Like [`Tally::record`] for a further comparison within the same case.
    fn also(&mut self, a: &Tensor, b: &Tensor) -> Result<()> {
        self.max_err = self.max_err.max(a.max_abs_diff(b)?);
        Ok(())
    }

    fn record_err(&mut self, err: f64) {
        self.max_err = self.max_err.max(err);
        self.cases += 1;
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name.into(),
            cases: self.cases,
            max_err: self.max_err,
            tolerance: self.tolerance,
        }
    }
}

/// Random conv geometry whose output is non-empty for the given input side.
fn conv_geom(rng: &mut SeededRng, side: usize, k: usize) -> ConvGeometry {
    loop {
        let g = ConvGeometry {
            stride: between(rng, 1, 2),
            pad: rng.below(2),
        };
        if side + 2 * g.pad >= k {
            return g;
        }
    }
}

/// Channels `axis, axis + d, …` of a bundle-major tensor.
pub fn axis_planes(x: &Tensor, d: usize, axis: usize) -> Result<Tensor> {
    let [n, c, h, w] = match *x.dims() {
        [a, b, c, e] => [a, b, c, e],
        _ => return Err(crate::Error::InvalidShape(format!("expected rank 4, got {}", x.shape()))),
    };
    let bundles = c / d;
    let plane = h * w;
    let mut data = Vec::with_capacity(n * bundles * plane);
    for b in 0..n {
        for u in 0..bundles {
            let ch = u * d + axis;
            data.extend_from_slice(&x.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane]);
        }
    }
    Tensor::from_vec([n, bundles, h, w], data)
}

/// `[B_out, B_in, D, kh, kw]` → component `comp` as `[B_out, B_in, kh, kw]`.
fn component(shared: &Tensor, comp: usize) -> Result<Tensor> {
    let [bo, bi, d, kh, kw] = match *shared.dims() {
        [a, b, c, e, f] => [a, b, c, e, f],
        _ => return Err(crate::Error::InvalidShape("rank-5 shared kernels expected".into())),
    };
    let k = kh * kw;
    let mut data = Vec::with_capacity(bo * bi * k);
    for u in 0..bo {
        for v in 0..bi {
            let base = ((u * bi + v) * d + comp) * k;
            data.extend_from_slice(&shared.data()[base..base + k]);
        }
    }
    Tensor::from_vec([bo, bi, kh, kw], data)
}

fn rows_of(l: &LMatrix) -> Vec<Vec<f64>> {
    (0..l.d()).map(|i| (0..l.d()).map(|j| l.get(i, j)).collect()).collect()
}

/// Case counts at scale 1: 200 per kernel, 500 vector map conv cases over
/// `D ∈ {1, 2, 3, 4, 8}`, 100 complex and 100 quaternion cases.
pub fn oracle_suite(opts: &OracleOptions) -> Result<CheckReport> {
    let root = SeededRng::new(opts.seed);
    let n = |base: usize| ((base as f64 * opts.scale).ceil() as usize).max(1);
    let mut report = CheckReport::default();

    let mut rng = root.split("matmul");
    let mut t = Tally::new("oracle/matmul", 1e-12);
    for _ in 0..n(200) {
        let (m, k, p) = (between(&mut rng, 1, 8), between(&mut rng, 1, 8), between(&mut rng, 1, 8));
        let a = rng.uniform_tensor(&[m, k], -1.0, 1.0)?;
        let b = rng.uniform_tensor(&[k, p], -1.0, 1.0)?;
        t.record(&a.matmul(&b)?, &oracle::matmul_reference(&a, &b))?;
    }
    report.results.push(t.finish());

    let mut rng = root.split("conv2d");
    let mut t = Tally::new("oracle/conv2d", 1e-12);
    for _ in 0..n(200) {
        let side = between(&mut rng, 3, 8);
        let k = between(&mut rng, 1, 3);
        let g = conv_geom(&mut rng, side, k);
        let batch = between(&mut rng, 1, 2);
        let c = between(&mut rng, 1, 4);
        let x = rng.uniform_tensor(&[batch, c, side, side], -1.0, 1.0)?;
        let c_out = between(&mut rng, 1, 4);
        let kern = rng.uniform_tensor(&[c_out, x.dims()[1], k, k], -1.0, 1.0)?;
        t.record(&tensor::conv2d(&x, &kern, g)?, &oracle::conv2d_reference(&x, &kern, g.stride, g.pad))?;
    }
    report.results.push(t.finish());

    let mut rng = root.split("conv_transpose2d");
    let mut t = Tally::new("oracle/conv_transpose2d", 1e-12);
    let mut adj = Tally::new("oracle/conv_adjoint_identity", 1e-10);
    for _ in 0..n(100) {
        let side = between(&mut rng, 2, 6);
        let k = between(&mut rng, 1, 3);
        let g = conv_geom(&mut rng, side, k);
        let op = rng.below(g.stride);
        let c = between(&mut rng, 1, 3);
        let x = rng.uniform_tensor(&[2, c, side, side], -1.0, 1.0)?;
        let c_out = between(&mut rng, 1, 3);
        let kern = rng.uniform_tensor(&[x.dims()[1], c_out, k, k], -1.0, 1.0)?;
        let fast = tensor::conv_transpose2d(&x, &kern, g, op);
        if let Ok(fast) = fast {
            t.record(&fast, &oracle::conv_transpose2d_reference(&x, &kern, g.stride, g.pad, op))?;
        }
        // <conv2d(a, k), y> = <a, conv_transpose2d(y, k)>, k as [C_out, C_in, kh, kw].
        let c = between(&mut rng, 1, 3);
        let a = rng.uniform_tensor(&[1, c, side + 2, side + 2], -1.0, 1.0)?;
        let c_out = between(&mut rng, 1, 3);
        let kk = rng.uniform_tensor(&[c_out, a.dims()[1], k, k], -1.0, 1.0)?;
        let fwd = tensor::conv2d(&a, &kk, g)?;
        let y = rng.uniform_tensor(fwd.dims(), -1.0, 1.0)?;
        let back = tensor::conv2d_grad_input(&y, &kk, g, (side + 2, side + 2))?;
        adj.record_err((fwd.dot(&y)? - a.dot(&back)?).abs());
    }
    report.results.push(t.finish());
    report.results.push(adj.finish());

    let mut rng = root.split("vmap_conv");
    let mut t = Tally::new("oracle/vmap_conv_materialized", 1e-10);
    let mut acc = Tally::new("oracle/vmap_conv_accumulated", 1e-10);
    let ds = [1usize, 2, 3, 4, 8];
    for case in 0..n(500) {
        let d = ds[case % ds.len()];
        let bi = between(&mut rng, 1, (8 / d).max(1));
        let bo = between(&mut rng, 1, (8 / d).max(1));
        let side = between(&mut rng, 3, 8);
        let k = between(&mut rng, 1, 3);
        let g = conv_geom(&mut rng, side, k);
        let shared = rng.uniform_tensor(&[bo, bi, d, k, k], -1.0, 1.0)?;
        let l = LMatrix::from_tensor(rng.uniform_tensor(&[d, d], -1.5, 1.5)?)?;
        let batch = between(&mut rng, 1, 2);
        let x = rng.uniform_tensor(&[batch, bi * d, side, side], -1.0, 1.0)?;
        let layer = VectorMapConv2d::from_parts(shared.clone(), l.clone(), g, ConvMode::Forward, None)?;
        let reference = oracle::vmap_conv_reference(&x, &shared, &rows_of(&l), g.stride, g.pad);
        t.record(&layer.infer(&x)?, &reference)?;
        acc.record(&layer.infer_with(&x, ForwardPath::Accumulated)?, &reference)?;
    }
    report.results.push(t.finish());
    report.results.push(acc.finish());

    let mut rng = root.split("vmap_dense");
    let mut t = Tally::new("oracle/vmap_dense", 1e-12);
    for _ in 0..n(100) {
        let d = between(&mut rng, 1, 6);
        let (o, i) = (between(&mut rng, 1, 3), between(&mut rng, 1, 3));
        let shared = rng.uniform_tensor(&[o, i, d], -1.0, 1.0)?;
        let l = LMatrix::from_tensor(rng.uniform_tensor(&[d, d], -1.5, 1.5)?)?;
        let x = rng.uniform_tensor(&[1, i * d], -1.0, 1.0)?;
        let layer = VectorMapDense::from_parts(shared.clone(), l.clone(), None)?;
        let nested: Vec<Vec<Vec<f64>>> = (0..o)
            .map(|u| (0..i).map(|v| (0..d).map(|c| shared.at(&[u, v, c])).collect()).collect())
            .collect();
        let reference = oracle::vmap_dense_reference(x.data(), &nested, &rows_of(&l));
        t.record(&layer.infer(&x)?, &Tensor::from_vec([1, o * d], reference)?)?;
    }
    report.results.push(t.finish());

    let mut rng = root.split("structure");
    let mut t = Tally::new("oracle/tau_and_pattern", 1e-15);
    for _ in 0..n(50) {
        let d = between(&mut rng, 1, 16);
        let v: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let k = rng.below(2 * d);
        let diff = tau(&v, k).iter().zip(oracle::tau_reference(&v, k)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        t.max_err = t.max_err.max(diff);
        let l = LMatrix::pattern(d)?;
        let p = oracle::l_pattern_reference(d);
        let diff = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| (l.get(i, j) - p[i][j]).abs())
            .fold(0.0, f64::max);
        t.max_err = t.max_err.max(diff);
        let w = rng.uniform_tensor(&[1, 1, d], -1.0, 1.0)?;
        let built = expand_weights(&w, &l)?;
        let reference = oracle::circulant_build_reference(w.data(), &p);
        let flat: Vec<f64> = reference.into_iter().flatten().collect();
        t.record(&built, &Tensor::from_vec([d, d], flat)?)?;
    }
    report.results.push(t.finish());

    let mut rng = root.split("complex");
    let mut t = Tally::new("oracle/complex_reduction", 1e-12);
    for _ in 0..n(100) {
        let side = between(&mut rng, 3, 7);
        let k = between(&mut rng, 1, 3);
        let g = conv_geom(&mut rng, side, k);
        let (bo, bi) = (between(&mut rng, 1, 3), between(&mut rng, 1, 3));
        let shared = rng.uniform_tensor(&[bo, bi, 2, k, k], -1.0, 1.0)?;
        let x = rng.uniform_tensor(&[2, 2 * bi, side, side], -1.0, 1.0)?;
        let mut layer = VectorMapConv2d::from_parts(shared.clone(), LMatrix::complex(), g, ConvMode::Forward, None)?;
        layer.l_trainable = false;
        let y = layer.infer(&x)?;
        let (re, im) = oracle::complex_conv_reference(
            &axis_planes(&x, 2, 0)?,
            &axis_planes(&x, 2, 1)?,
            &component(&shared, 0)?,
            &component(&shared, 1)?,
            g.stride,
            g.pad,
        );
        t.record(&axis_planes(&y, 2, 0)?, &re)?;
        t.also(&axis_planes(&y, 2, 1)?, &im)?;
    }
    report.results.push(t.finish());

    let mut rng = root.split("quaternion");
    let mut t = Tally::new("oracle/quaternion_hamilton", 1e-12);
    for _ in 0..n(100) {
        let side = between(&mut rng, 3, 7);
        let k = between(&mut rng, 1, 3);
        let g = conv_geom(&mut rng, side, k);
        let (bo, bi) = (between(&mut rng, 1, 2), between(&mut rng, 1, 2));
        let shared = rng.uniform_tensor(&[bo, bi, 4, k, k], -1.0, 1.0)?;
        let x = rng.uniform_tensor(&[2, 4 * bi, side, side], -1.0, 1.0)?;
        let layer = QuaternionConv2d::from_shared(shared.clone(), g, ConvMode::Forward, None);
        let y = layer.infer(&x)?;
        let xs = [axis_planes(&x, 4, 0)?, axis_planes(&x, 4, 1)?, axis_planes(&x, 4, 2)?, axis_planes(&x, 4, 3)?];
        let ks = [component(&shared, 0)?, component(&shared, 1)?, component(&shared, 2)?, component(&shared, 3)?];
        let reference = oracle::quaternion_conv_reference(
            [&xs[0], &xs[1], &xs[2], &xs[3]],
            [&ks[0], &ks[1], &ks[2], &ks[3]],
            g.stride,
            g.pad,
        );
        t.record(&axis_planes(&y, 4, 0)?, &reference[0])?;
        for (axis, r) in reference.iter().enumerate().skip(1) {
            t.also(&axis_planes(&y, 4, axis)?, r)?;
        }
    }
    report.results.push(t.finish());

    let circ = unsigned_pattern(&circulant_table(4)?);
    let ham = unsigned_pattern(&hamilton_table());
    report.results.push(CheckResult {
        name: "oracle/hamilton_not_circulant".into(),
        cases: 1,
        max_err: if circ != ham { 0.0 } else { 1.0 },
        tolerance: 0.5,
    });
    Ok(report)
}

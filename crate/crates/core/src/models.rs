//! Experiment architectures: a three-block CNN classifier and a two-down,
//! two-up convolutional autoencoder, each in real, quaternion and vector map
//! variants.

use crate::autodiff::{Optimizer, Tape, Var};
use crate::data::image::LUMA;
use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, SeededRng, Tensor};
use crate::vmap::{
    CheckpointEntry, Conv2d, ConvMode, Criterion, Dense, Layer, LMode, ParamRole, QuaternionConv2d, VectorMapConv2d,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Real,
    Quaternion,
    Vmap,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Real, Variant::Quaternion, Variant::Vmap];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Real => "real",
            Variant::Quaternion => "quaternion",
            Variant::Vmap => "vmap",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (expected real, quaternion or vmap)")))
    }

    /// Channels per bundle: 4 for quaternion, `d` for vmap, 1 for real.
    pub fn width(self, d: usize) -> usize {
        match self {
            Variant::Real => 1,
            Variant::Quaternion => 4,
            Variant::Vmap => d,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Hardtanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Classifier,
    Autoencoder,
}

/// Number of image channels fed to a model whose bundles are `width` wide:
/// 3 when `width` divides 3, else 3 rounded up to a multiple of `width`.
pub fn io_channels(width: usize) -> usize {
    if 3 % width == 0 {
        3
    } else {
        3_usize.div_ceil(width) * width
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub variant: Variant,
    pub d: usize,
    /// `(c_out, stride)` of each 3×3 conv block, in real channels.
    pub channel_plan: Vec<(usize, usize)>,
    pub classes: usize,
    pub l_mode: LMode,
}

impl ClassifierConfig {
    pub fn new(variant: Variant, d: usize) -> Self {
        ClassifierConfig {
            variant,
            d,
            channel_plan: vec![(24, 1), (48, 2), (96, 2)],
            classes: 10,
            l_mode: LMode::Pattern,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaeConfig {
    pub variant: Variant,
    pub d: usize,
    /// Encoder feature maps, counted in bundles.
    pub bundles: (usize, usize),
    pub l_mode: LMode,
}

impl CaeConfig {
    pub fn new(variant: Variant, d: usize) -> Self {
        CaeConfig {
            variant,
            d,
            bundles: (10, 20),
            l_mode: LMode::Pattern,
        }
    }
}

struct Stage {
    name: String,
    layer: Box<dyn Layer>,
    conv: bool,
    pool_before: bool,
    act: Option<Activation>,
}

pub struct NamedParam<'a> {
    pub name: String,
    pub role: ParamRole,
    pub trainable: bool,
    pub value: &'a Tensor,
}

/// Supervision for one batch.
pub enum Target<'a> {
    Labels(&'a [usize]),
    Image(&'a Tensor),
}

pub struct Model {
    pub kind: ModelKind,
    pub variant: Variant,
    pub d: usize,
    input_channels: usize,
    stages: Vec<Stage>,
}

fn check_variant_d(variant: Variant, d: usize) -> Result<()> {
    if variant == Variant::Vmap && d == 0 {
        return Err(Error::Config("vmap needs d ≥ 1".into()));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn conv_layer(
    variant: Variant,
    d: usize,
    c_in: usize,
    c_out: usize,
    geom: ConvGeometry,
    mode: ConvMode,
    criterion: Criterion,
    l_mode: LMode,
    rng: &mut SeededRng,
) -> Result<Box<dyn Layer>> {
    Ok(match variant {
        Variant::Real => Box::new(Conv2d::new(c_in, c_out, (3, 3), geom, mode, true, rng)?),
        Variant::Quaternion => Box::new(QuaternionConv2d::new(c_in, c_out, (3, 3), geom, mode, true, criterion, rng)?),
        Variant::Vmap => Box::new(VectorMapConv2d::new(
            d,
            c_in,
            c_out,
            (3, 3),
            geom,
            mode,
            true,
            criterion,
            l_mode,
            rng,
        )?),
    })
}

/// Classifier: conv blocks with ReLU, global average pooling, real dense head.
pub fn build_classifier(cfg: &ClassifierConfig, rng: &mut SeededRng) -> Result<Model> {
    check_variant_d(cfg.variant, cfg.d)?;
    if cfg.channel_plan.is_empty() || cfg.classes == 0 {
        return Err(Error::Config("classifier needs conv blocks and classes".into()));
    }
    let width = cfg.variant.width(cfg.d);
    let input_channels = io_channels(width);
    let mut stages = Vec::new();
    let mut c_in = input_channels;
    for (i, &(c_out, stride)) in cfg.channel_plan.iter().enumerate() {
        if c_out % width != 0 {
            return Err(Error::Divisibility {
                what: "channel plan",
                value: c_out,
                d: width,
            });
        }
        let geom = ConvGeometry { stride, pad: 1 };
        let mut layer_rng = rng.split(&format!("conv{}", i + 1));
        stages.push(Stage {
            name: format!("conv{}", i + 1),
            layer: conv_layer(
                cfg.variant,
                cfg.d,
                c_in,
                c_out,
                geom,
                ConvMode::Forward,
                Criterion::He,
                cfg.l_mode,
                &mut layer_rng,
            )?,
            conv: true,
            pool_before: false,
            act: Some(Activation::Relu),
        });
        c_in = c_out;
    }
    let mut fc_rng = rng.split("fc");
    stages.push(Stage {
        name: "fc".into(),
        layer: Box::new(Dense::new(c_in, cfg.classes, true, &mut fc_rng)?),
        conv: false,
        pool_before: true,
        act: None,
    });
    Ok(Model {
        kind: ModelKind::Classifier,
        variant: cfg.variant,
        d: cfg.d,
        input_channels,
        stages,
    })
}

/// Autoencoder: two stride-2 convs, two stride-2 transposed convs, hardtanh
/// after every layer. Maps `[N, C, H, W]` to the same shape for even `H, W`.
pub fn build_cae(cfg: &CaeConfig, rng: &mut SeededRng) -> Result<Model> {
    check_variant_d(cfg.variant, cfg.d)?;
    let width = match cfg.variant {
        Variant::Real => cfg.d.max(1),
        v => v.width(cfg.d),
    };
    let io = io_channels(width);
    let (b1, b2) = cfg.bundles;
    let (c1, c2) = (b1 * width, b2 * width);
    let geom = ConvGeometry { stride: 2, pad: 1 };
    let up = ConvMode::Transposed { output_padding: 1 };
    let plan = [
        ("enc1", io, c1, ConvMode::Forward),
        ("enc2", c1, c2, ConvMode::Forward),
        ("dec1", c2, c1, up),
        ("dec2", c1, io, up),
    ];
    let mut stages = Vec::new();
    for (name, c_in, c_out, mode) in plan {
        let mut layer_rng = rng.split(name);
        stages.push(Stage {
            name: name.into(),
            layer: conv_layer(
                cfg.variant,
                cfg.d,
                c_in,
                c_out,
                geom,
                mode,
                Criterion::Glorot,
                cfg.l_mode,
                &mut layer_rng,
            )?,
            conv: true,
            pool_before: false,
            act: Some(Activation::Hardtanh),
        });
    }
    Ok(Model {
        kind: ModelKind::Autoencoder,
        variant: cfg.variant,
        d: cfg.d,
        input_channels: io,
        stages,
    })
}

/// Colorization pair for one `[3, H, W]` RGB image and `channels` model
/// channels: the input is the gray plane replicated `channels` times, the
/// target is `channels − 3` gray planes followed by R, G, B.
pub fn cae_pair(rgb: &Tensor, channels: usize) -> Result<(Tensor, Tensor)> {
    use crate::data::image::{pad_channels, replicate, to_grayscale};
    let gray = to_grayscale(rgb)?;
    let x = replicate(&gray, channels)?;
    let y = pad_channels(rgb, &gray, channels, true)?;
    let add_batch = |t: Tensor| {
        let mut dims = vec![1];
        dims.extend_from_slice(t.dims());
        t.reshape(dims)
    };
    Ok((add_batch(x)?, add_batch(y)?))
}

/// Last three channels of a `[1, C, H, W]` output, as a `[3, H, W]` image.
pub fn cae_rgb(output: &Tensor) -> Result<Tensor> {
    match *output.dims() {
        [1, c, h, w] if c >= 3 => output.slice_channels(c - 3, 3)?.reshape([3, h, w]),
        _ => Err(Error::InvalidShape(format!("expected [1, C≥3, H, W], got {}", output.shape()))),
    }
}

impl Model {
    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    /// Adapts an `[N, 3, H, W]` RGB batch to the model: luma planes are
    /// prepended until the channel count matches. Other inputs pass through
    /// unchanged when they already have the right channel count.
    pub fn prepare_input(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims();
        if dims.len() != 4 {
            return Err(Error::InvalidShape(format!("expected [N, C, H, W], got {}", x.shape())));
        }
        let (n, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
        if c == self.input_channels {
            return Ok(x.clone());
        }
        if c != 3 {
            return Err(Error::InvalidShape(format!(
                "model takes {} channels (or RGB), got {c}",
                self.input_channels
            )));
        }
        let plane = h * w;
        let extra = self.input_channels - 3;
        let mut out = Vec::with_capacity(n * self.input_channels * plane);
        for img in x.data().chunks(3 * plane) {
            let gray: Vec<f64> = (0..plane)
                .map(|p| LUMA[0] * img[p] + LUMA[1] * img[plane + p] + LUMA[2] * img[2 * plane + p])
                .collect();
            for _ in 0..extra {
                out.extend_from_slice(&gray);
            }
            out.extend_from_slice(img);
        }
        Tensor::from_vec([n, self.input_channels, h, w], out)
    }

    pub fn params(&self) -> Vec<NamedParam<'_>> {
        let mut out = Vec::new();
        for s in &self.stages {
            for p in s.layer.params() {
                out.push(NamedParam {
                    name: format!("{}.{}", s.name, p.role.name()),
                    role: p.role,
                    trainable: p.trainable,
                    value: p.value,
                });
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.stages.iter_mut().flat_map(|s| s.layer.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.stages.iter().map(|s| s.layer.param_count()).sum()
    }

    /// Stored scalars of the convolutional layers only.
    pub fn conv_param_count(&self) -> usize {
        self.stages.iter().filter(|s| s.conv).map(|s| s.layer.param_count()).sum()
    }

    /// Tape variables for every parameter, in [`Model::params`] order;
    /// frozen parameters become constants.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.params()
            .iter()
            .map(|p| {
                if p.trainable {
                    tape.leaf(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect()
    }

    /// Forward pass on an already prepared input.
    pub fn forward(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Result<Var> {
        let expected = self.params().len();
        if params.len() != expected {
            return Err(Error::InvalidArgument(format!("{} parameter variables for {expected} parameters", params.len())));
        }
        let mut h = x;
        let mut offset = 0;
        for s in &self.stages {
            let n = s.layer.params().len();
            if s.pool_before {
                h = tape.global_avg_pool(h)?;
            }
            h = s.layer.forward(tape, h, &params[offset..offset + n])?;
            offset += n;
            h = match s.act {
                Some(Activation::Relu) => tape.relu(h)?,
                Some(Activation::Hardtanh) => tape.hardtanh(h)?,
                None => h,
            };
        }
        Ok(h)
    }

    /// Registers parameters, runs the model and appends the loss: mean
    /// softmax cross-entropy for labels, mean squared error for images.
    /// Returns `(loss, output, params)`.
    pub fn forward_loss(&self, tape: &mut Tape, x: &Tensor, target: Target<'_>) -> Result<(Var, Var, Vec<Var>)> {
        let params = self.register(tape);
        let xv = tape.constant(self.prepare_input(x)?);
        let out = self.forward(tape, xv, &params)?;
        let loss = match target {
            Target::Labels(labels) => tape.softmax_cross_entropy(out, labels)?,
            Target::Image(y) => {
                let yv = tape.constant(y.clone());
                tape.mse(out, yv)?
            }
        };
        Ok((loss, out, params))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params: Vec<Var> = self.params().iter().map(|p| tape.constant(p.value.clone())).collect();
        let xv = tape.constant(self.prepare_input(x)?);
        let out = self.forward(&mut tape, xv, &params)?;
        Ok(tape.value(out).clone())
    }

    /// Gradients of the loss for every parameter (zeros for frozen ones).
    pub fn loss_and_grads(&self, x: &Tensor, target: Target<'_>) -> Result<(f64, Tensor, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let (loss, out, params) = self.forward_loss(&mut tape, x, target)?;
        let loss_value = tape.value(loss).item();
        let output = tape.value(out).clone();
        let values: Vec<Tensor> = params.iter().map(|&p| tape.value(p).clone()).collect();
        let grads = tape.backward(loss)?;
        let g = params.iter().zip(&values).map(|(&p, v)| grads.get_or_zeros(p, v)).collect();
        Ok((loss_value, output, g))
    }

    /// One optimizer step on trainable parameters. Returns the loss and the
    /// model output before the update.
    pub fn train_step(&mut self, x: &Tensor, target: Target<'_>, opt: &mut dyn Optimizer) -> Result<(f64, Tensor)> {
        let (loss, output, grads) = self.loss_and_grads(x, target)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        let trainable: Vec<bool> = self.params().iter().map(|p| p.trainable).collect();
        let mut slots: Vec<&mut Tensor> = self.params_mut();
        let mut values: Vec<Tensor> = Vec::new();
        let mut g = Vec::new();
        for ((slot, grad), &t) in slots.iter().zip(grads).zip(&trainable) {
            if t {
                values.push((**slot).clone());
                g.push(grad);
            }
        }
        opt.step(&mut values, &g)?;
        let mut updated = values.into_iter();
        for (slot, &t) in slots.iter_mut().zip(&trainable) {
            if t {
                **slot = updated.next().expect("one value per trainable slot");
            }
        }
        Ok((loss, output))
    }

    pub fn to_checkpoint(&self) -> Vec<CheckpointEntry> {
        self.params()
            .into_iter()
            .map(|p| CheckpointEntry {
                name: p.name,
                role: p.role,
                value: p.value.clone(),
            })
            .collect()
    }

    /// Overwrites every parameter from `entries`, matched by name.
    pub fn load_entries(&mut self, entries: &[CheckpointEntry]) -> Result<()> {
        let names: Vec<String> = self.params().into_iter().map(|p| p.name).collect();
        let mut found = Vec::with_capacity(names.len());
        for (name, current) in names.iter().zip(self.params()) {
            let e = entries
                .iter()
                .find(|e| &e.name == name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter {name}")))?;
            if e.value.shape() != current.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load checkpoint",
                    lhs: current.value.shape().clone(),
                    rhs: e.value.shape().clone(),
                });
            }
            found.push(e.value.clone());
        }
        if entries.len() != names.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameters, model has {}",
                entries.len(),
                names.len()
            )));
        }
        for (slot, v) in self.params_mut().into_iter().zip(found) {
            *slot = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Sgd;

    fn small_classifier(variant: Variant, d: usize, seed: u64) -> Model {
        let mut cfg = ClassifierConfig::new(variant, d);
        cfg.channel_plan = vec![(12, 1), (12, 2)];
        build_classifier(&cfg, &mut SeededRng::new(seed)).unwrap()
    }

    #[test]
    fn vmap_conv_params_under_forty_percent() {
        let mut rng = SeededRng::new(0);
        let real = build_classifier(&ClassifierConfig::new(Variant::Real, 1), &mut rng).unwrap();
        let vm = build_classifier(&ClassifierConfig::new(Variant::Vmap, 3), &mut rng).unwrap();
        let ratio = vm.conv_param_count() as f64 / real.conv_param_count() as f64;
        assert!(ratio < 0.4, "{ratio}");
        assert!(vm.param_count() < real.param_count());
    }

    #[test]
    fn classifier_variants_share_io_shape() {
        let x = SeededRng::new(3).uniform_tensor(&[2, 3, 8, 8], 0.0, 1.0).unwrap();
        for (variant, d) in [(Variant::Real, 1), (Variant::Quaternion, 4), (Variant::Vmap, 3), (Variant::Vmap, 4)] {
            let m = small_classifier(variant, d, 1);
            assert_eq!(m.infer(&x).unwrap().dims(), &[2, 10], "{variant:?} d={d}");
        }
    }

    #[test]
    fn luma_padding_for_quaternion_input() {
        let m = small_classifier(Variant::Quaternion, 4, 1);
        assert_eq!(m.input_channels(), 4);
        let x = Tensor::from_vec([1, 3, 1, 1], vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.prepare_input(&x).unwrap().data(), &[0.299, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn cae_shapes() {
        let mut rng = SeededRng::new(5);
        let rgb = rng.uniform_tensor(&[3, 64, 64], 0.0, 1.0).unwrap();
        for (variant, d, channels) in [(Variant::Vmap, 3, 3), (Variant::Vmap, 4, 4), (Variant::Quaternion, 4, 4)] {
            let m = build_cae(&CaeConfig::new(variant, d), &mut rng).unwrap();
            assert_eq!(m.input_channels(), channels);
            let (x, y) = cae_pair(&rgb, channels).unwrap();
            assert_eq!(m.infer(&x).unwrap().dims(), y.dims());
            assert_eq!(cae_rgb(&y).unwrap(), rgb);
        }
        let q = build_cae(&CaeConfig::new(Variant::Quaternion, 4), &mut rng).unwrap();
        assert_eq!(q.stages[0].layer.params()[0].value.dims(), &[10, 1, 4, 3, 3]);
    }

    #[test]
    fn divisibility_is_checked() {
        let mut cfg = ClassifierConfig::new(Variant::Vmap, 3);
        cfg.channel_plan = vec![(10, 1)];
        assert!(matches!(build_classifier(&cfg, &mut SeededRng::new(0)), Err(Error::Divisibility { .. })));
    }

    #[test]
    fn uniform_logits_give_ln10() {
        let mut m = small_classifier(Variant::Vmap, 3, 2);
        for p in m.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::full([2, 3, 4, 4], 0.5);
        let (loss, _, _) = m.loss_and_grads(&x, Target::Labels(&[1, 7])).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sgd_step_decreases_single_sample_loss() {
        for seed in 0..5 {
            for variant in Variant::ALL {
                let mut m = small_classifier(variant, 3, seed);
                let x = SeededRng::new(100 + seed).uniform_tensor(&[1, 3, 6, 6], 0.0, 1.0).unwrap();
                let labels = [seed as usize % 10];
                let (before, _) = m.train_step(&x, Target::Labels(&labels), &mut Sgd { lr: 1e-3 }).unwrap();
                let (after, _, _) = m.loss_and_grads(&x, Target::Labels(&labels)).unwrap();
                assert!(after < before, "{variant:?} seed {seed}: {after} !< {before}");
            }
        }
    }

    #[test]
    fn checkpoint_entries_round_trip() {
        let a = small_classifier(Variant::Vmap, 3, 7);
        let mut b = small_classifier(Variant::Vmap, 3, 8);
        let x = SeededRng::new(1).uniform_tensor(&[1, 3, 4, 4], 0.0, 1.0).unwrap();
        assert_ne!(a.infer(&x).unwrap(), b.infer(&x).unwrap());
        b.load_entries(&a.to_checkpoint()).unwrap();
        assert_eq!(a.infer(&x).unwrap(), b.infer(&x).unwrap());
        let names: Vec<String> = a.params().into_iter().map(|p| p.name).collect();
        assert_eq!(names[..3], ["conv1.shared", "conv1.l", "conv1.bias"]);
        let real = small_classifier(Variant::Real, 1, 7);
        assert!(b.load_entries(&real.to_checkpoint()).is_err());
    }
}

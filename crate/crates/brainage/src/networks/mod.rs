//! Generator and Discriminator architectures.
//!
//! The Generator is Encoder -> Transformer -> Decoder with long skip
//! connections: four stride-2 convolutions take the 208x160 slice down to a
//! 13x10 map, a dense layer projects to the latent vector v1, the Transformer
//! concatenates the health code (dense to v2) and then the age code, and a
//! mirrored decoder of nearest-upsample + convolution stages rebuilds the
//! slice, concatenating the matching encoder feature maps (and finally the
//! input itself) at each resolution. The output activation is tanh, so
//! generated slices always lie in [-1, 1].
//!
//! The Discriminator shares the encoder/transformer scheme, is conditioned on
//! the absolute target age, takes one long skip (a 16x16 average-pool of its
//! input) straight into the Judge, and ends in a linear score: a Wasserstein
//! critic. No normalization layers anywhere in the critic.

mod layers;

use ndarray::{Array2, Array4, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

pub use layers::{ConvLayer, DenseLayer};

use crate::autodiff::{NodeId, Scalar, Tape};
use crate::conditioning::{AgeCode, EncodingScheme, HealthCode};
use crate::error::{Error, Result};
use crate::image::{SliceImage, SLICE_HEIGHT, SLICE_WIDTH};
use crate::Elem;

/// Spatial size of the bottleneck map after four stride-2 convolutions.
pub const BOTTLENECK_H: usize = SLICE_HEIGHT / 16;
pub const BOTTLENECK_W: usize = SLICE_WIDTH / 16;

/// Negative slope of every leaky ReLU.
pub const LRELU_ALPHA: f64 = 0.2;

/// Latent sizes supported for the v2 bottleneck ablation.
pub const SUPPORTED_LATENT_V2: [usize; 3] = [65, 130, 260];

/// How the conditioning vectors enter the bottleneck.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingStrategy {
    /// Concat health -> dense to v2 -> concat age (the default).
    Transformer,
    /// Concat latent, health and age in one step.
    ConcatAll,
}

impl Default for EmbeddingStrategy {
    fn default() -> Self {
        EmbeddingStrategy::Transformer
    }
}

/// Architecture descriptor: everything needed to rebuild the parameter
/// shapes. Stored verbatim in checkpoints; loading against a different
/// descriptor is an error.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub latent_v1: usize,
    pub latent_v2: usize,
    pub enc_channels: [usize; 4],
    pub encoding: EncodingScheme,
    pub embedding: EmbeddingStrategy,
    pub judge_hidden: usize,
}

impl Default for ArchDescriptor {
    fn default() -> Self {
        ArchDescriptor {
            latent_v1: 128,
            latent_v2: 130,
            enc_channels: [16, 32, 64, 128],
            encoding: EncodingScheme::Ordinal,
            embedding: EmbeddingStrategy::Transformer,
            judge_hidden: 64,
        }
    }
}

impl ArchDescriptor {
    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_LATENT_V2.contains(&self.latent_v2) {
            return Err(Error::Config(format!(
                "latent v2 size {} not in supported set {:?}",
                self.latent_v2, SUPPORTED_LATENT_V2
            )));
        }
        if self.latent_v1 == 0 || self.judge_hidden == 0 {
            return Err(Error::Config("latent sizes must be positive".into()));
        }
        if self.enc_channels.iter().any(|&c| c < 2) || self.enc_channels[0] % 2 != 0 {
            return Err(Error::Config(format!(
                "encoder channels {:?} must be >= 2 with an even first stage",
                self.enc_channels
            )));
        }
        self.encoding.validate()
    }

    /// Length of the age conditioning vector under this descriptor.
    pub fn age_len(&self) -> usize {
        self.encoding.code_len()
    }

    /// Flattened size of the bottleneck feature map.
    pub fn bottleneck_len(&self) -> usize {
        self.enc_channels[3] * BOTTLENECK_H * BOTTLENECK_W
    }

    /// Length of the discriminator's input-to-Judge skip vector.
    pub fn skip_len(&self) -> usize {
        BOTTLENECK_H * BOTTLENECK_W
    }
}

/// Learnable state of the Generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams<T: Scalar = Elem> {
    pub arch: ArchDescriptor,
    /// Four stride-2 encoder convolutions.
    pub enc: Vec<ConvLayer<T>>,
    /// Bottleneck projection to v1.
    pub v1_dense: DenseLayer<T>,
    /// Health-conditioned dense to v2 (absent for concat_all).
    pub v2_dense: Option<DenseLayer<T>>,
    /// Conditioned vector back to the bottleneck map.
    pub expand_dense: DenseLayer<T>,
    /// Decoder convolutions after each upsample (skip-concatenated inputs).
    pub dec: Vec<ConvLayer<T>>,
    /// Final 3x3 convolution to one channel (before tanh).
    pub out_conv: ConvLayer<T>,
}

/// Learnable state of the Discriminator (Wasserstein critic).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams<T: Scalar = Elem> {
    pub arch: ArchDescriptor,
    pub enc: Vec<ConvLayer<T>>,
    pub v1_dense: DenseLayer<T>,
    pub v2_dense: Option<DenseLayer<T>>,
    pub judge1: DenseLayer<T>,
    pub judge2: DenseLayer<T>,
}

fn decoder_plan(arch: &ArchDescriptor) -> [(usize, usize); 4] {
    let [c0, c1, c2, c3] = arch.enc_channels;
    [
        (c3 + c2, c2), // 13x10 -> 26x20, concat enc stage 3
        (c2 + c1, c1), // -> 52x40, concat enc stage 2
        (c1 + c0, c0), // -> 104x80, concat enc stage 1
        (c0 + 1, c0 / 2), // -> 208x160, concat the input slice
    ]
}

/// Deterministically initialize generator parameters from a seed.
pub fn init_generator<T: Scalar>(arch: &ArchDescriptor, seed: u64) -> Result<GeneratorParams<T>> {
    arch.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let [c0, c1, c2, c3] = arch.enc_channels;
    let enc = vec![
        ConvLayer::glorot(c0, 1, 3, &mut rng),
        ConvLayer::glorot(c1, c0, 3, &mut rng),
        ConvLayer::glorot(c2, c1, 3, &mut rng),
        ConvLayer::glorot(c3, c2, 3, &mut rng),
    ];
    let v1_dense = DenseLayer::glorot(arch.bottleneck_len(), arch.latent_v1, &mut rng);
    let (v2_dense, expand_in) = match arch.embedding {
        EmbeddingStrategy::Transformer => {
            let v2 = DenseLayer::glorot(arch.latent_v1 + 2, arch.latent_v2, &mut rng);
            (Some(v2), arch.latent_v2 + arch.age_len())
        }
        EmbeddingStrategy::ConcatAll => (None, arch.latent_v1 + 2 + arch.age_len()),
    };
    let expand_dense = DenseLayer::glorot(expand_in, arch.bottleneck_len(), &mut rng);
    let dec = decoder_plan(arch)
        .iter()
        .map(|&(cin, cout)| ConvLayer::glorot(cout, cin, 3, &mut rng))
        .collect();
    let out_conv = ConvLayer::glorot(1, c0 / 2, 3, &mut rng);
    Ok(GeneratorParams {
        arch: arch.clone(),
        enc,
        v1_dense,
        v2_dense,
        expand_dense,
        dec,
        out_conv,
    })
}

/// Deterministically initialize discriminator parameters from a seed.
pub fn init_discriminator<T: Scalar>(
    arch: &ArchDescriptor,
    seed: u64,
) -> Result<DiscriminatorParams<T>> {
    arch.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let [c0, c1, c2, c3] = arch.enc_channels;
    let enc = vec![
        ConvLayer::glorot(c0, 1, 3, &mut rng),
        ConvLayer::glorot(c1, c0, 3, &mut rng),
        ConvLayer::glorot(c2, c1, 3, &mut rng),
        ConvLayer::glorot(c3, c2, 3, &mut rng),
    ];
    let v1_dense = DenseLayer::glorot(arch.bottleneck_len(), arch.latent_v1, &mut rng);
    let (v2_dense, judge_feat) = match arch.embedding {
        EmbeddingStrategy::Transformer => {
            let v2 = DenseLayer::glorot(arch.latent_v1 + 2, arch.latent_v2, &mut rng);
            (Some(v2), arch.latent_v2 + arch.age_len())
        }
        EmbeddingStrategy::ConcatAll => (None, arch.latent_v1 + 2 + arch.age_len()),
    };
    let judge1 = DenseLayer::glorot(judge_feat + arch.skip_len(), arch.judge_hidden, &mut rng);
    let judge2 = DenseLayer::glorot(arch.judge_hidden, 1, &mut rng);
    Ok(DiscriminatorParams {
        arch: arch.clone(),
        enc,
        v1_dense,
        v2_dense,
        judge1,
        judge2,
    })
}

macro_rules! named_tensors {
    ($self:ident, $ref_fn:ident, $t:ty) => {{
        let mut out: Vec<(String, $t)> = Vec::new();
        for (i, layer) in $self.enc.$ref_fn().enumerate() {
            out.push((format!("enc{i}.w"), &layer.w));
            out.push((format!("enc{i}.b"), &layer.b));
        }
        out.push(("v1.w".into(), &$self.v1_dense.w));
        out.push(("v1.b".into(), &$self.v1_dense.b));
        if let Some(v2) = &$self.v2_dense {
            out.push(("v2.w".into(), &v2.w));
            out.push(("v2.b".into(), &v2.b));
        }
        out
    }};
}

impl<T: Scalar> GeneratorParams<T> {
    /// All learnable tensors in a fixed, stable order.
    pub fn tensors(&self) -> Vec<(String, &ArrayD<T>)> {
        let mut out = named_tensors!(self, iter, &ArrayD<T>);
        out.push(("expand.w".into(), &self.expand_dense.w));
        out.push(("expand.b".into(), &self.expand_dense.b));
        for (i, layer) in self.dec.iter().enumerate() {
            out.push((format!("dec{i}.w"), &layer.w));
            out.push((format!("dec{i}.b"), &layer.b));
        }
        out.push(("out.w".into(), &self.out_conv.w));
        out.push(("out.b".into(), &self.out_conv.b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ArrayD<T>> {
        let mut out: Vec<&mut ArrayD<T>> = Vec::new();
        for layer in self.enc.iter_mut() {
            out.push(&mut layer.w);
            out.push(&mut layer.b);
        }
        out.push(&mut self.v1_dense.w);
        out.push(&mut self.v1_dense.b);
        if let Some(v2) = &mut self.v2_dense {
            out.push(&mut v2.w);
            out.push(&mut v2.b);
        }
        out.push(&mut self.expand_dense.w);
        out.push(&mut self.expand_dense.b);
        for layer in self.dec.iter_mut() {
            out.push(&mut layer.w);
            out.push(&mut layer.b);
        }
        out.push(&mut self.out_conv.w);
        out.push(&mut self.out_conv.b);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

impl<T: Scalar> DiscriminatorParams<T> {
    pub fn tensors(&self) -> Vec<(String, &ArrayD<T>)> {
        let mut out = named_tensors!(self, iter, &ArrayD<T>);
        out.push(("judge1.w".into(), &self.judge1.w));
        out.push(("judge1.b".into(), &self.judge1.b));
        out.push(("judge2.w".into(), &self.judge2.w));
        out.push(("judge2.b".into(), &self.judge2.b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ArrayD<T>> {
        let mut out: Vec<&mut ArrayD<T>> = Vec::new();
        for layer in self.enc.iter_mut() {
            out.push(&mut layer.w);
            out.push(&mut layer.b);
        }
        out.push(&mut self.v1_dense.w);
        out.push(&mut self.v1_dense.b);
        if let Some(v2) = &mut self.v2_dense {
            out.push(&mut v2.w);
            out.push(&mut v2.b);
        }
        out.push(&mut self.judge1.w);
        out.push(&mut self.judge1.b);
        out.push(&mut self.judge2.w);
        out.push(&mut self.judge2.b);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Node handles for one network's parameters bound onto a tape.
pub struct BoundParams {
    pub ids: Vec<NodeId>,
}

fn bind_tensors<T: Scalar>(
    tape: &mut Tape<T>,
    tensors: &[(String, &ArrayD<T>)],
    trainable: bool,
) -> BoundParams {
    let ids = tensors
        .iter()
        .map(|(_, t)| {
            if trainable {
                tape.var((*t).clone())
            } else {
                tape.constant((*t).clone())
            }
        })
        .collect();
    BoundParams { ids }
}

impl<T: Scalar> GeneratorParams<T> {
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundParams {
        bind_tensors(tape, &self.tensors(), trainable)
    }
}

impl<T: Scalar> DiscriminatorParams<T> {
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundParams {
        bind_tensors(tape, &self.tensors(), trainable)
    }
}

/// Options for the generator graph.
#[derive(Debug, Clone, Copy, Default)]
pub struct GenForwardOpts {
    /// Zero every long-skip tensor (ablation probe for skip wiring).
    pub zero_skips: bool,
}

/// Build the generator forward pass on a tape.
///
/// `x` is (B,1,208,160); `age_delta` is (B, age_len); `health` is (B,2).
/// Returns the output image node (B,1,208,160), tanh-bounded.
pub fn generator_graph<T: Scalar>(
    tape: &mut Tape<T>,
    params: &GeneratorParams<T>,
    bound: &BoundParams,
    x: NodeId,
    age_delta: NodeId,
    health: NodeId,
    opts: GenForwardOpts,
) -> NodeId {
    let arch = &params.arch;
    let has_v2 = params.v2_dense.is_some();
    let mut idx = 0usize;
    let mut next = || {
        let id = bound.ids[idx];
        idx += 1;
        id
    };

    // Encoder: four stride-2 conv stages.
    let mut acts = Vec::with_capacity(4);
    let mut cur = x;
    for _ in 0..4 {
        let (w, b) = (next(), next());
        let c = tape.conv2d(cur, w, 2, 1);
        let c = tape.bias_channel(c, b);
        cur = tape.leaky_relu(c, LRELU_ALPHA);
        acts.push(cur);
    }

    // Transformer: v1, health, (v2), age.
    let batch = tape.value(x).shape()[0];
    let flat = tape.reshape(cur, &[batch, arch.bottleneck_len()]);
    let (w, b) = (next(), next());
    let v1 = tape.matmul(flat, w);
    let v1 = tape.bias_row(v1, b);
    let v1 = tape.leaky_relu(v1, LRELU_ALPHA);

    let z = if has_v2 {
        let (w, b) = (next(), next());
        let cat = tape.concat(&[v1, health], 1);
        let v2 = tape.matmul(cat, w);
        let v2 = tape.bias_row(v2, b);
        let v2 = tape.leaky_relu(v2, LRELU_ALPHA);
        tape.concat(&[v2, age_delta], 1)
    } else {
        tape.concat(&[v1, health, age_delta], 1)
    };

    let (w, b) = (next(), next());
    let exp = tape.matmul(z, w);
    let exp = tape.bias_row(exp, b);
    let exp = tape.leaky_relu(exp, LRELU_ALPHA);
    let mut cur = tape.reshape(exp, &[batch, arch.enc_channels[3], BOTTLENECK_H, BOTTLENECK_W]);

    // Decoder with long skips: enc stage 3, 2, 1, then the input slice.
    let skips = [acts[2], acts[1], acts[0], x];
    for skip in skips {
        let up = tape.upsample2(cur);
        let skip = if opts.zero_skips {
            tape.scale(skip, 0.0)
        } else {
            skip
        };
        let cat = tape.concat(&[up, skip], 1);
        let (w, b) = (next(), next());
        let c = tape.conv2d(cat, w, 1, 1);
        let c = tape.bias_channel(c, b);
        cur = tape.leaky_relu(c, LRELU_ALPHA);
    }

    let (w, b) = (next(), next());
    let c = tape.conv2d(cur, w, 1, 1);
    let c = tape.bias_channel(c, b);
    tape.tanh(c)
}

/// Intermediate node handles of one discriminator forward pass, kept so the
/// tangent pass can reuse the primal pre-activations for its masks.
pub struct DiscTrace {
    /// Critic scores, shape (B,).
    pub score: NodeId,
    pre_enc: Vec<NodeId>,
    pre_v1: NodeId,
    pre_v2: Option<NodeId>,
    pre_j1: NodeId,
}

/// Build the discriminator forward pass on a tape.
///
/// `x` is (B,1,208,160); `age` is the absolute target-age code (B, age_len);
/// `health` is (B,2). The returned score node has shape (B,).
pub fn discriminator_graph<T: Scalar>(
    tape: &mut Tape<T>,
    params: &DiscriminatorParams<T>,
    bound: &BoundParams,
    x: NodeId,
    age: NodeId,
    health: NodeId,
) -> DiscTrace {
    let arch = &params.arch;
    let has_v2 = params.v2_dense.is_some();
    let mut idx = 0usize;
    let mut next = || {
        let id = bound.ids[idx];
        idx += 1;
        id
    };

    let mut pre_enc = Vec::with_capacity(4);
    let mut cur = x;
    for _ in 0..4 {
        let (w, b) = (next(), next());
        let c = tape.conv2d(cur, w, 2, 1);
        let pre = tape.bias_channel(c, b);
        pre_enc.push(pre);
        cur = tape.leaky_relu(pre, LRELU_ALPHA);
    }

    let batch = tape.value(x).shape()[0];
    let flat = tape.reshape(cur, &[batch, arch.bottleneck_len()]);
    let (w, b) = (next(), next());
    let m = tape.matmul(flat, w);
    let pre_v1 = tape.bias_row(m, b);
    let u1 = tape.leaky_relu(pre_v1, LRELU_ALPHA);

    let (z, pre_v2) = if has_v2 {
        let (w, b) = (next(), next());
        let cat = tape.concat(&[u1, health], 1);
        let m = tape.matmul(cat, w);
        let pre = tape.bias_row(m, b);
        let u2 = tape.leaky_relu(pre, LRELU_ALPHA);
        (tape.concat(&[u2, age], 1), Some(pre))
    } else {
        (tape.concat(&[u1, health, age], 1), None)
    };

    // Long skip from the input stage straight into the Judge.
    let pooled = tape.avg_pool(x, 16);
    let skip = tape.reshape(pooled, &[batch, arch.skip_len()]);
    let j_in = tape.concat(&[z, skip], 1);

    let (w, b) = (next(), next());
    let m = tape.matmul(j_in, w);
    let pre_j1 = tape.bias_row(m, b);
    let j1 = tape.leaky_relu(pre_j1, LRELU_ALPHA);
    let (w, b) = (next(), next());
    let m = tape.matmul(j1, w);
    let out = tape.bias_row(m, b);
    let score = tape.reshape(out, &[batch]);

    DiscTrace {
        score,
        pre_enc,
        pre_v1,
        pre_v2,
        pre_j1,
    }
}

fn lrelu_mask<T: Scalar>(tape: &Tape<T>, pre: NodeId) -> ArrayD<T> {
    tape.value(pre).mapv(|e| {
        if e > T::zero() {
            T::one()
        } else {
            T::lit(LRELU_ALPHA)
        }
    })
}

/// Build the directional derivative of the critic score along a constant
/// image-space direction `u`, as first-order ops on the same tape.
///
/// The returned node has shape (B,); element b is u_b . grad_x D(x_b). Its
/// parameter gradients are exactly the mixed second derivatives the gradient
/// penalty needs, because every leaky-ReLU mask is piecewise constant.
pub fn discriminator_tangent_graph<T: Scalar>(
    tape: &mut Tape<T>,
    params: &DiscriminatorParams<T>,
    bound: &BoundParams,
    trace: &DiscTrace,
    u: Array4<T>,
) -> NodeId {
    let arch = &params.arch;
    let has_v2 = params.v2_dense.is_some();
    let batch = u.dim().0;
    let mut idx = 0usize;
    // Parameter layout is (w, b) pairs; tangents only touch the weights.
    let mut next_w = || {
        let id = bound.ids[idx];
        idx += 2;
        id
    };

    let u_node = tape.constant(u.into_dyn());
    let mut t = u_node;
    for pre in &trace.pre_enc {
        let w = next_w();
        let c = tape.conv2d(t, w, 2, 1);
        let mask = lrelu_mask(tape, *pre);
        t = tape.mul_const(c, mask);
    }

    let t_flat = tape.reshape(t, &[batch, arch.bottleneck_len()]);
    let w = next_w();
    let m = tape.matmul(t_flat, w);
    let mask = lrelu_mask(tape, trace.pre_v1);
    let mut t = tape.mul_const(m, mask);

    if has_v2 {
        let zeros_h = tape.constant(ArrayD::zeros(IxDyn(&[batch, 2])));
        let cat = tape.concat(&[t, zeros_h], 1);
        let w = next_w();
        let m = tape.matmul(cat, w);
        let mask = lrelu_mask(tape, trace.pre_v2.expect("transformer trace"));
        t = tape.mul_const(m, mask);
        let zeros_a = tape.constant(ArrayD::zeros(IxDyn(&[batch, arch.age_len()])));
        t = tape.concat(&[t, zeros_a], 1);
    } else {
        let zeros = tape.constant(ArrayD::zeros(IxDyn(&[batch, 2 + arch.age_len()])));
        t = tape.concat(&[t, zeros], 1);
    }

    // Tangent of the input->Judge skip: average pooling is linear.
    let pooled = tape.avg_pool(u_node, 16);
    let t_skip = tape.reshape(pooled, &[batch, arch.skip_len()]);
    let j_in = tape.concat(&[t, t_skip], 1);

    let w = next_w();
    let m = tape.matmul(j_in, w);
    let mask = lrelu_mask(tape, trace.pre_j1);
    let t = tape.mul_const(m, mask);
    let w = next_w();
    let m = tape.matmul(t, w);
    tape.reshape(m, &[batch])
}

/// Stack slices into an NCHW batch tensor.
pub fn slices_to_batch<T: Scalar>(slices: &[&SliceImage]) -> Array4<T> {
    let b = slices.len();
    let mut out = Array4::<T>::zeros((b, 1, SLICE_HEIGHT, SLICE_WIDTH));
    for (i, s) in slices.iter().enumerate() {
        for ((y, x), &v) in s.pixels().indexed_iter() {
            out[[i, 0, y, x]] = T::lit(v);
        }
    }
    out
}

/// Convert an NCHW batch back into slices, validating the image invariants.
pub fn batch_to_slices<T: Scalar>(batch: &Array4<T>) -> Result<Vec<SliceImage>> {
    let (b, c, h, w) = batch.dim();
    if c != 1 || h != SLICE_HEIGHT || w != SLICE_WIDTH {
        return Err(Error::Shape {
            expected: format!("(*, 1, {SLICE_HEIGHT}, {SLICE_WIDTH})"),
            got: format!("({b}, {c}, {h}, {w})"),
        });
    }
    (0..b)
        .map(|i| {
            let pixels = Array2::from_shape_fn((h, w), |(y, x)| batch[[i, 0, y, x]].as_f64());
            SliceImage::new(pixels)
        })
        .collect()
}

/// Stack age codes into a (B, age_len) tensor, checking code lengths.
pub fn age_codes_to_batch<T: Scalar>(codes: &[AgeCode], expected_len: usize) -> Result<Array2<T>> {
    let b = codes.len();
    let mut out = Array2::<T>::zeros((b, expected_len));
    for (i, code) in codes.iter().enumerate() {
        if code.len() != expected_len {
            return Err(Error::Shape {
                expected: format!("age code of length {expected_len}"),
                got: format!("{}", code.len()),
            });
        }
        for (j, &v) in code.as_slice().iter().enumerate() {
            out[[i, j]] = T::lit(v);
        }
    }
    Ok(out)
}

/// Stack health codes into a (B, 2) tensor.
pub fn health_codes_to_batch<T: Scalar>(codes: &[HealthCode]) -> Array2<T> {
    let mut out = Array2::<T>::zeros((codes.len(), 2));
    for (i, code) in codes.iter().enumerate() {
        out[[i, 0]] = T::lit(code.as_slice()[0]);
        out[[i, 1]] = T::lit(code.as_slice()[1]);
    }
    out
}

impl<T: Scalar> GeneratorParams<T> {
    /// Plain forward pass: synthesize aged slices for a batch of inputs.
    pub fn forward(
        &self,
        inputs: &[&SliceImage],
        age_deltas: &[AgeCode],
        healths: &[HealthCode],
        opts: GenForwardOpts,
    ) -> Result<Vec<SliceImage>> {
        if inputs.len() != age_deltas.len() || inputs.len() != healths.len() {
            return Err(Error::Argument(format!(
                "batch length mismatch: {} images, {} age codes, {} health codes",
                inputs.len(),
                age_deltas.len(),
                healths.len()
            )));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(slices_to_batch::<T>(inputs).into_dyn());
        let ad = tape.constant(age_codes_to_batch::<T>(age_deltas, self.arch.age_len())?.into_dyn());
        let h = tape.constant(health_codes_to_batch::<T>(healths).into_dyn());
        let out = generator_graph(&mut tape, self, &bound, x, ad, h, opts);
        let out4: Array4<T> = tape
            .value(out)
            .clone()
            .into_dimensionality()
            .expect("generator output rank");
        batch_to_slices(&out4)
    }

    /// Synthesize a single slice.
    pub fn synthesize(
        &self,
        input: &SliceImage,
        age_delta: &AgeCode,
        health: &HealthCode,
    ) -> Result<SliceImage> {
        Ok(self
            .forward(
                &[input],
                std::slice::from_ref(age_delta),
                &[*health],
                GenForwardOpts::default(),
            )?
            .remove(0))
    }

    /// L-infinity distance between normal output and skip-ablated output.
    /// Nonzero means the long skips are wired into the forward pass.
    pub fn skip_sensitivity(
        &self,
        input: &SliceImage,
        age_delta: &AgeCode,
        health: &HealthCode,
    ) -> Result<f64> {
        let normal = self.forward(
            &[input],
            std::slice::from_ref(age_delta),
            &[*health],
            GenForwardOpts::default(),
        )?;
        let ablated = self.forward(
            &[input],
            std::slice::from_ref(age_delta),
            &[*health],
            GenForwardOpts { zero_skips: true },
        )?;
        let diff = normal[0]
            .pixels()
            .iter()
            .zip(ablated[0].pixels().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        Ok(diff)
    }

    /// Norms of the gradient of the mean output intensity w.r.t. the age and
    /// health conditioning inputs. Both are nonzero when the conditioning
    /// paths are live.
    pub fn conditioning_gradient_norms(
        &self,
        input: &SliceImage,
        age_delta: &AgeCode,
        health: &HealthCode,
    ) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(slices_to_batch::<T>(&[input]).into_dyn());
        let ad = tape.var(
            age_codes_to_batch::<T>(std::slice::from_ref(age_delta), self.arch.age_len())?
                .into_dyn(),
        );
        let h = tape.var(health_codes_to_batch::<T>(&[*health]).into_dyn());
        let out = generator_graph(&mut tape, self, &bound, x, ad, h, GenForwardOpts::default());
        let root = tape.mean_all(out);
        let grads = tape.backward(root);
        let norm = |id: NodeId| -> f64 {
            grads
                .get(id)
                .map(|g| g.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt())
                .unwrap_or(0.0)
        };
        Ok((norm(ad), norm(h)))
    }
}

impl<T: Scalar> DiscriminatorParams<T> {
    /// Plain critic scores for a batch.
    pub fn score(
        &self,
        images: &[&SliceImage],
        ages: &[AgeCode],
        healths: &[HealthCode],
    ) -> Result<Vec<f64>> {
        if images.len() != ages.len() || images.len() != healths.len() {
            return Err(Error::Argument(format!(
                "batch length mismatch: {} images, {} age codes, {} health codes",
                images.len(),
                ages.len(),
                healths.len()
            )));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(slices_to_batch::<T>(images).into_dyn());
        let a = tape.constant(age_codes_to_batch::<T>(ages, self.arch.age_len())?.into_dyn());
        let h = tape.constant(health_codes_to_batch::<T>(healths).into_dyn());
        let trace = discriminator_graph(&mut tape, self, &bound, x, a, h);
        Ok(tape.value(trace.score).iter().map(|v| v.as_f64()).collect())
    }

    /// Critic score and its gradient w.r.t. the input image.
    pub fn score_and_input_grad(
        &self,
        image: &SliceImage,
        age: &AgeCode,
        health: &HealthCode,
    ) -> Result<(f64, Array2<f64>)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.var(slices_to_batch::<T>(&[image]).into_dyn());
        let a = tape.constant(
            age_codes_to_batch::<T>(std::slice::from_ref(age), self.arch.age_len())?.into_dyn(),
        );
        let h = tape.constant(health_codes_to_batch::<T>(&[*health]).into_dyn());
        let trace = discriminator_graph(&mut tape, self, &bound, x, a, h);
        let score = tape.value(trace.score).iter().next().unwrap().as_f64();
        let grads = tape.backward(trace.score);
        let gx = grads.wrt(x);
        let g2 = Array2::from_shape_fn((SLICE_HEIGHT, SLICE_WIDTH), |(y, xx)| {
            gx[[0, 0, y, xx]].as_f64()
        });
        Ok((score, g2))
    }

    /// Gradient norms of the critic score w.r.t. the conditioning inputs.
    pub fn conditioning_gradient_norms(
        &self,
        image: &SliceImage,
        age: &AgeCode,
        health: &HealthCode,
    ) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(slices_to_batch::<T>(&[image]).into_dyn());
        let a = tape.var(
            age_codes_to_batch::<T>(std::slice::from_ref(age), self.arch.age_len())?.into_dyn(),
        );
        let h = tape.var(health_codes_to_batch::<T>(&[*health]).into_dyn());
        let trace = discriminator_graph(&mut tape, self, &bound, x, a, h);
        let grads = tape.backward(trace.score);
        let norm = |id: NodeId| -> f64 {
            grads
                .get(id)
                .map(|g| g.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt())
                .unwrap_or(0.0)
        };
        Ok((norm(a), norm(h)))
    }
}

#[cfg(test)]
mod tests;

//! Network builders: the FC-DenseNet transformer with sub-pixel
//! upsampling, the residual-block baseline generator and the patch
//! discriminator with optional segmentation-augmented input.
//!
//! Parameters are initialized from a seeded generator so two builds with
//! the same seed are bitwise identical.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, GeneratorArch};
use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, SegMapStack};

/// Largest usable downsampling level count for a square crop side:
/// the largest s with `crop_side % 2^s == 0`, capped at 8.
pub fn scales_for_crop(crop_side: usize) -> Result<usize> {
    if crop_side < 4 {
        return Err(Error::Config(format!("crop side {crop_side} is below the minimum of 4")));
    }
    let s = crop_side.trailing_zeros() as usize;
    if s == 0 {
        return Err(Error::Config(format!(
            "crop side {crop_side} has no factor of 2, cannot build downsampling levels"
        )));
    }
    Ok(s.min(8))
}

/// Periodic-shuffle rearrangement (C,H,W) -> (C/r^2, H*r, W*r):
/// `out[c, h*r+i, w*r+j] = in[c*r*r + i*r + j, h, w]`. Pure data
/// movement; accepts a leading batch dimension.
pub fn subpixel_upsample(x: &Tensor, r: usize) -> Result<Tensor> {
    if r == 0 {
        return Err(Error::InvalidValue("upsample factor must be positive".into()));
    }
    let (batched, x) = match x.dims().len() {
        3 => (false, x.unsqueeze(0)?),
        4 => (true, x.clone()),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "subpixel input must be (C,H,W) or (N,C,H,W), got rank {other}"
            )))
        }
    };
    let (n, c, h, w) = x.dims4()?;
    if c % (r * r) != 0 {
        return Err(Error::ShapeMismatch(format!(
            "subpixel factor {r} needs channels divisible by {}, got {c}",
            r * r
        )));
    }
    let c_out = c / (r * r);
    let out = x
        .reshape((n, c_out, r, r, h, w))?
        .permute((0, 1, 4, 2, 5, 3))?
        .reshape((n, c_out, h * r, w * r))?;
    Ok(if batched { out } else { out.squeeze(0)? })
}

/// Mirror-pads the last two dimensions of an (N,C,H,W) tensor.
pub fn reflect_pad2d(x: &Tensor, pad_w: (usize, usize), pad_h: (usize, usize)) -> Result<Tensor> {
    fn mirror_indices(size: usize, before: usize, after: usize) -> Vec<u32> {
        // Reflection without repeating the border pixel, period 2(size-1).
        let reflect = |i: i64| -> u32 {
            if size == 1 {
                return 0;
            }
            let period = 2 * (size as i64 - 1);
            let mut j = i.rem_euclid(period);
            if j >= size as i64 {
                j = period - j;
            }
            j as u32
        };
        let mut out = Vec::with_capacity(before + size + after);
        for i in -(before as i64)..(size + after) as i64 {
            out.push(reflect(i));
        }
        out
    }
    let dims = x.dims();
    let (h, w) = (dims[dims.len() - 2], dims[dims.len() - 1]);
    let dev = x.device();
    let mut out = x.clone();
    if pad_h.0 > 0 || pad_h.1 > 0 {
        let idx = Tensor::from_vec(
            mirror_indices(h, pad_h.0, pad_h.1),
            pad_h.0 + h + pad_h.1,
            dev,
        )?;
        out = out.index_select(&idx, dims.len() - 2)?;
    }
    if pad_w.0 > 0 || pad_w.1 > 0 {
        let idx = Tensor::from_vec(
            mirror_indices(w, pad_w.0, pad_w.1),
            pad_w.0 + w + pad_w.1,
            dev,
        )?;
        out = out.index_select(&idx, dims.len() - 1)?;
    }
    Ok(out)
}

/// Named parameter set with seeded initialization, safetensors
/// persistence and a content checksum.
pub struct ParamStore {
    rng: ChaCha8Rng,
    device: Device,
    vars: Vec<(String, Var)>,
}

impl ParamStore {
    pub fn new(seed: u64, device: &Device) -> Self {
        ParamStore { rng: ChaCha8Rng::seed_from_u64(seed), device: device.clone(), vars: Vec::new() }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| self.rng.gen_range(-bound..bound) as f32).collect();
        let var = Var::from_tensor(&Tensor::from_vec(data, shape, &self.device)?)?;
        self.vars.push((name.to_string(), var.clone()));
        Ok(var)
    }

    fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let var = Var::from_tensor(&Tensor::from_vec(
            vec![value as f32; n],
            shape,
            &self.device,
        )?)?;
        self.vars.push((name.to_string(), var.clone()));
        Ok(var)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.vars.iter().map(|(_, v)| v.as_tensor().elem_count()).sum()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let map: HashMap<String, Tensor> = self
            .vars
            .iter()
            .map(|(n, v)| (n.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&map, path.as_ref())?;
        Ok(())
    }

    pub fn load(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let map = candle_core::safetensors::load(path, &self.device)?;
        for (name, var) in &self.vars {
            let t = map.get(name).ok_or_else(|| {
                Error::Checkpoint(format!("{} is missing tensor `{name}`", path.display()))
            })?;
            var.set(t).map_err(|e| {
                Error::Checkpoint(format!("loading `{name}` from {}: {e}", path.display()))
            })?;
        }
        Ok(())
    }

    /// Content hash over all parameters, in registration order.
    pub fn checksum(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        for (name, var) in &self.vars {
            hasher.update(name.as_bytes());
            let data = var.as_tensor().flatten_all()?.to_vec1::<f32>()?;
            for v in data {
                hasher.update(v.to_le_bytes());
            }
        }
        Ok(format!("{:x}", hasher.finalize()))
    }
}

struct Conv2d {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    fn new(
        store: &mut ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = (in_c * k * k) as f64;
        let bound = (1.0 / fan_in).sqrt();
        let weight = store.uniform(&format!("{name}.weight"), &[out_c, in_c, k, k], bound)?;
        let bias = Some(store.uniform(&format!("{name}.bias"), &[out_c], bound)?);
        Ok(Conv2d { weight, bias, stride, padding })
    }

    /// Zero-initialized convolution, used for the generator tails so a
    /// fresh generator starts as the identity mapping.
    fn new_zeroed(
        store: &mut ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let weight = store.constant(&format!("{name}.weight"), &[out_c, in_c, k, k], 0.0)?;
        let bias = Some(store.constant(&format!("{name}.bias"), &[out_c], 0.0)?);
        Ok(Conv2d { weight, bias, stride, padding })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let w = self.weight.as_tensor().to_dtype(x.dtype())?;
        let mut y = x.conv2d(&w, self.padding, self.stride, 1, 1)?;
        if let Some(b) = &self.bias {
            let out_c = b.as_tensor().dims()[0];
            let b = b.as_tensor().to_dtype(x.dtype())?.reshape((1, out_c, 1, 1))?;
            y = y.broadcast_add(&b)?;
        }
        Ok(y)
    }
}

struct InstanceNorm {
    scale: Var,
    shift: Var,
    eps: f64,
}

impl InstanceNorm {
    fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(InstanceNorm {
            scale: store.constant(&format!("{name}.scale"), &[channels], 1.0)?,
            shift: store.constant(&format!("{name}.shift"), &[channels], 0.0)?,
            eps: 1e-5,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(3)?.mean_keepdim(2)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(3)?.mean_keepdim(2)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        let c = self.scale.as_tensor().dims()[0];
        let scale = self.scale.as_tensor().to_dtype(x.dtype())?.reshape((1, c, 1, 1))?;
        let shift = self.shift.as_tensor().to_dtype(x.dtype())?.reshape((1, c, 1, 1))?;
        Ok(normed.broadcast_mul(&scale)?.broadcast_add(&shift)?)
    }
}

fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::leaky_relu(x, 0.2)?)
}

/// Conv producing `4 * out_c` channels followed by a factor-2 periodic
/// shuffle.
struct SubpixelUp {
    conv: Conv2d,
}

impl SubpixelUp {
    fn new(store: &mut ParamStore, name: &str, in_c: usize, out_c: usize) -> Result<Self> {
        Ok(SubpixelUp { conv: Conv2d::new(store, name, in_c, out_c * 4, 3, 1, 1)? })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        subpixel_upsample(&self.conv.forward(x)?, 2)
    }
}

/// Architecture description stored in checkpoints so evaluation can
/// rebuild the exact network.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TransformerSpec {
    pub arch: GeneratorArch,
    pub n_scales: usize,
    pub growth_rate: usize,
    pub layers_per_block: usize,
    pub first_conv_channels: usize,
    pub resnet_blocks: usize,
    pub resnet_channels: usize,
    pub io_channels: usize,
}

impl TransformerSpec {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        TransformerSpec {
            arch: cfg.generator_arch,
            n_scales: cfg.n_scales,
            growth_rate: cfg.growth_rate,
            layers_per_block: cfg.layers_per_block,
            first_conv_channels: cfg.first_conv_channels,
            resnet_blocks: cfg.resnet_blocks,
            resnet_channels: cfg.resnet_channels,
            io_channels: 3,
        }
    }
}

struct ResBlock {
    conv1: Conv2d,
    norm1: InstanceNorm,
    conv2: Conv2d,
    norm2: InstanceNorm,
}

impl ResBlock {
    fn new(store: &mut ParamStore, name: &str, c: usize) -> Result<Self> {
        Ok(ResBlock {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), c, c, 3, 1, 1)?,
            norm1: InstanceNorm::new(store, &format!("{name}.norm1"), c)?,
            conv2: Conv2d::new(store, &format!("{name}.conv2"), c, c, 3, 1, 1)?,
            norm2: InstanceNorm::new(store, &format!("{name}.norm2"), c)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.norm1.forward(&self.conv1.forward(x)?)?.relu()?;
        let y = self.norm2.forward(&self.conv2.forward(&y)?)?;
        Ok((x + y)?)
    }
}

/// Composes a predicted correction with the input in pre-activation
/// space: `tanh(atanh(x) + delta)`. A zero correction reproduces the
/// input (up to a clamp at ±0.999), so generators with zeroed tails
/// start as the identity and training only learns the enhancement.
fn identity_residual(x: &Tensor, delta: &Tensor) -> Result<Tensor> {
    let xc = x.clamp(-0.999, 0.999)?;
    let atanh = (xc.affine(1.0, 1.0)? / xc.affine(-1.0, 1.0)?)?.log()?.affine(0.5, 0.0)?;
    Ok((atanh + delta)?.tanh()?)
}

struct ResnetGenerator {
    head: Conv2d,
    head_norm: InstanceNorm,
    down: Vec<(Conv2d, InstanceNorm)>,
    blocks: Vec<ResBlock>,
    up: Vec<(SubpixelUp, InstanceNorm)>,
    tail: Conv2d,
}

impl ResnetGenerator {
    fn new(store: &mut ParamStore, spec: &TransformerSpec) -> Result<Self> {
        let f = spec.resnet_channels;
        let head = Conv2d::new(store, "head", spec.io_channels, f, 7, 1, 3)?;
        let head_norm = InstanceNorm::new(store, "head_norm", f)?;
        let mut down = Vec::new();
        let mut c = f;
        for i in 0..2 {
            down.push((
                Conv2d::new(store, &format!("down{i}.conv"), c, c * 2, 3, 2, 1)?,
                InstanceNorm::new(store, &format!("down{i}.norm"), c * 2)?,
            ));
            c *= 2;
        }
        let blocks = (0..spec.resnet_blocks)
            .map(|i| ResBlock::new(store, &format!("res{i}"), c))
            .collect::<Result<Vec<_>>>()?;
        let mut up = Vec::new();
        for i in 0..2 {
            up.push((
                SubpixelUp::new(store, &format!("up{i}.conv"), c, c / 2)?,
                InstanceNorm::new(store, &format!("up{i}.norm"), c / 2)?,
            ));
            c /= 2;
        }
        let tail = Conv2d::new_zeroed(store, "tail", c, spec.io_channels, 7, 1, 3)?;
        Ok(ResnetGenerator { head, head_norm, down, blocks, up, tail })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.head_norm.forward(&self.head.forward(x)?)?.relu()?;
        for (conv, norm) in &self.down {
            y = norm.forward(&conv.forward(&y)?)?.relu()?;
        }
        for block in &self.blocks {
            y = block.forward(&y)?;
        }
        for (upc, norm) in &self.up {
            y = norm.forward(&upc.forward(&y)?)?.relu()?;
        }
        identity_residual(x, &self.tail.forward(&y)?)
    }
}

struct DenseLayer {
    norm: InstanceNorm,
    conv: Conv2d,
}

struct DenseBlock {
    layers: Vec<DenseLayer>,
    growth: usize,
}

impl DenseBlock {
    fn new(store: &mut ParamStore, name: &str, in_c: usize, layers: usize, growth: usize) -> Result<Self> {
        let mut out = Vec::new();
        let mut c = in_c;
        for i in 0..layers {
            out.push(DenseLayer {
                norm: InstanceNorm::new(store, &format!("{name}.layer{i}.norm"), c)?,
                conv: Conv2d::new(store, &format!("{name}.layer{i}.conv"), c, growth, 3, 1, 1)?,
            });
            c += growth;
        }
        Ok(DenseBlock { layers: out, growth })
    }

    fn new_feature_count(&self) -> usize {
        self.layers.len() * self.growth
    }

    /// Returns (concat of input and new features, new features only).
    fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut acc = x.clone();
        let mut new = Vec::new();
        for layer in &self.layers {
            let y = layer.conv.forward(&layer.norm.forward(&acc)?.relu()?)?;
            new.push(y.clone());
            acc = Tensor::cat(&[acc, y], 1)?;
        }
        let new_cat = if new.len() == 1 { new[0].clone() } else { Tensor::cat(&new, 1)? };
        Ok((acc, new_cat))
    }
}

struct TransitionDown {
    norm: InstanceNorm,
    conv: Conv2d,
}

impl TransitionDown {
    fn new(store: &mut ParamStore, name: &str, c: usize) -> Result<Self> {
        Ok(TransitionDown {
            norm: InstanceNorm::new(store, &format!("{name}.norm"), c)?,
            conv: Conv2d::new(store, &format!("{name}.conv"), c, c, 3, 2, 1)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.conv.forward(&self.norm.forward(x)?.relu()?).map_err(Into::into)
    }
}

struct FcDenseNet {
    head: Conv2d,
    down_blocks: Vec<DenseBlock>,
    transitions: Vec<TransitionDown>,
    bottleneck: DenseBlock,
    ups: Vec<SubpixelUp>,
    up_blocks: Vec<DenseBlock>,
    tail: Conv2d,
}

impl FcDenseNet {
    fn new(store: &mut ParamStore, spec: &TransformerSpec) -> Result<Self> {
        let (g, l) = (spec.growth_rate, spec.layers_per_block);
        let mut c = spec.first_conv_channels;
        let head = Conv2d::new(store, "head", spec.io_channels, c, 3, 1, 1)?;
        let mut down_blocks = Vec::new();
        let mut transitions = Vec::new();
        let mut skip_channels = Vec::new();
        for i in 0..spec.n_scales {
            let db = DenseBlock::new(store, &format!("down{i}.dense"), c, l, g)?;
            c += db.new_feature_count();
            skip_channels.push(c);
            transitions.push(TransitionDown::new(store, &format!("down{i}.td"), c)?);
            down_blocks.push(db);
        }
        let bottleneck = DenseBlock::new(store, "bottleneck", c, l, g)?;
        let mut new_c = bottleneck.new_feature_count();
        let mut ups = Vec::new();
        let mut up_blocks = Vec::new();
        for i in (0..spec.n_scales).rev() {
            let up = SubpixelUp::new(store, &format!("up{i}.tu"), new_c, new_c)?;
            let in_c = new_c + skip_channels[i];
            let db = DenseBlock::new(store, &format!("up{i}.dense"), in_c, l, g)?;
            new_c = db.new_feature_count();
            ups.push(up);
            up_blocks.push(db);
        }
        // The tail sees the last up-block input plus its new features.
        let tail_in = bottleneck.new_feature_count() + skip_channels[0] + new_c;
        let tail = Conv2d::new_zeroed(store, "tail", tail_in, spec.io_channels, 1, 1, 0)?;
        Ok(FcDenseNet { head, down_blocks, transitions, bottleneck, ups, up_blocks, tail })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.head.forward(x)?;
        let mut skips = Vec::new();
        for (db, td) in self.down_blocks.iter().zip(&self.transitions) {
            let (cat, _) = db.forward(&y)?;
            skips.push(cat.clone());
            y = td.forward(&cat)?;
        }
        let (_, mut new) = self.bottleneck.forward(&y)?;
        let mut cat = new.clone();
        for (i, (up, db)) in self.ups.iter().zip(&self.up_blocks).enumerate() {
            let skip = &skips[skips.len() - 1 - i];
            let upsampled = up.forward(&new)?;
            let input = Tensor::cat(&[upsampled, skip.clone()], 1)?;
            let (c, n) = db.forward(&input)?;
            cat = c;
            new = n;
        }
        identity_residual(x, &self.tail.forward(&cat)?)
    }
}

enum GenNet {
    Resnet(ResnetGenerator),
    Dense(FcDenseNet),
}

/// An image-to-image transformer with shape-preserving forward pass.
pub struct Transformer {
    pub spec: TransformerSpec,
    store: ParamStore,
    net: GenNet,
}

/// Builds a transformer with seed-deterministic parameters.
pub fn build_transformer(spec: &TransformerSpec, seed: u64, device: &Device) -> Result<Transformer> {
    if spec.n_scales == 0 {
        return Err(Error::Config("n_scales must be positive".into()));
    }
    if spec.growth_rate == 0 || spec.layers_per_block == 0 {
        return Err(Error::Config("growth_rate and layers_per_block must be positive".into()));
    }
    let mut store = ParamStore::new(seed, device);
    let net = match spec.arch {
        GeneratorArch::ResnetBlocks => GenNet::Resnet(ResnetGenerator::new(&mut store, spec)?),
        GeneratorArch::FcDenseNet => GenNet::Dense(FcDenseNet::new(&mut store, spec)?),
    };
    Ok(Transformer { spec: spec.clone(), store, net })
}

impl Transformer {
    /// Input sides must be divisible by this for [`forward`].
    pub fn divisor(&self) -> usize {
        match self.spec.arch {
            GeneratorArch::ResnetBlocks => 4,
            GeneratorArch::FcDenseNet => 1 << self.spec.n_scales,
        }
    }

    /// Strict forward pass on an (N,C,H,W) batch whose sides satisfy the
    /// divisibility contract.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let d = self.divisor();
        if h % d != 0 || w % d != 0 {
            return Err(Error::ShapeMismatch(format!(
                "input {h}x{w} must have sides divisible by {d} for this architecture"
            )));
        }
        match &self.net {
            GenNet::Resnet(n) => n.forward(x),
            GenNet::Dense(n) => n.forward(x),
        }
    }

    /// Whole-image inference: reflect-pads up to the next valid size,
    /// runs the network and crops back.
    pub fn transform(&self, image: &ImageTensor) -> Result<ImageTensor> {
        let (h, w) = (image.height(), image.width());
        let d = self.divisor();
        let pad_h = (d - h % d) % d;
        let pad_w = (d - w % d) % d;
        let x = image.batched()?;
        let x = reflect_pad2d(&x, (0, pad_w), (0, pad_h))?;
        let y = self.forward(&x)?.detach();
        let y = y.narrow(2, 0, h)?.narrow(3, 0, w)?.squeeze(0)?;
        ImageTensor::new(y)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.store.vars()
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    pub fn checksum(&self) -> Result<String> {
        self.store.checksum()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.store.save(path)
    }

    pub fn load(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.store.load(path)
    }
}

/// Patch discriminator shape description.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DiscriminatorSpec {
    pub input_channels: usize,
    pub base_channels: usize,
    /// Number of strided levels before the score head.
    pub depth: usize,
}

impl DiscriminatorSpec {
    pub fn plain(base_channels: usize) -> Self {
        DiscriminatorSpec { input_channels: 3, base_channels, depth: 3 }
    }

    /// Discriminator consuming the image concatenated with K class maps.
    pub fn seg_augmented(base_channels: usize, seg_classes: usize) -> Self {
        DiscriminatorSpec { input_channels: 3 + seg_classes, base_channels, depth: 3 }
    }
}

/// Convolutional patch discriminator emitting a spatial score map.
pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    store: ParamStore,
    levels: Vec<(Conv2d, Option<InstanceNorm>)>,
    head: Conv2d,
}

pub fn build_discriminator(
    spec: &DiscriminatorSpec,
    seed: u64,
    device: &Device,
) -> Result<Discriminator> {
    if spec.depth == 0 {
        return Err(Error::Config("discriminator depth must be positive".into()));
    }
    let mut store = ParamStore::new(seed, device);
    let mut levels = Vec::new();
    let mut c = spec.input_channels;
    let mut f = spec.base_channels;
    for i in 0..spec.depth {
        let conv = Conv2d::new(&mut store, &format!("level{i}.conv"), c, f, 4, 2, 1)?;
        let norm = if i == 0 {
            None
        } else {
            Some(InstanceNorm::new(&mut store, &format!("level{i}.norm"), f)?)
        };
        levels.push((conv, norm));
        c = f;
        f *= 2;
    }
    let pre = Conv2d::new(&mut store, "pre_head.conv", c, f, 4, 1, 1)?;
    let pre_norm = InstanceNorm::new(&mut store, "pre_head.norm", f)?;
    levels.push((pre, Some(pre_norm)));
    let head = Conv2d::new(&mut store, "head", f, 1, 4, 1, 1)?;
    Ok(Discriminator { spec: spec.clone(), store, levels, head })
}

impl Discriminator {
    /// Scores an (N,C,H,W) batch, returning an (N,1,h,w) patch score map.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, _, _) = x.dims4()?;
        if c != self.spec.input_channels {
            return Err(Error::ShapeMismatch(format!(
                "discriminator expects {} input channels, got {c}",
                self.spec.input_channels
            )));
        }
        let mut y = x.clone();
        for (conv, norm) in &self.levels {
            y = conv.forward(&y)?;
            if let Some(n) = norm {
                y = n.forward(&y)?;
            }
            y = leaky_relu(&y)?;
        }
        self.head.forward(&y)
    }

    /// Scores a single image, concatenating segmentation maps when the
    /// spec calls for them. Channel order is image then classes 0..K-1.
    pub fn discriminate(&self, image: &ImageTensor, segmaps: Option<&SegMapStack>) -> Result<Tensor> {
        let expected_extra = self.spec.input_channels - 3;
        let x = match (expected_extra, segmaps) {
            (0, None) => image.batched()?,
            (0, Some(_)) => {
                return Err(Error::ShapeMismatch(
                    "plain discriminator takes no segmentation maps".into(),
                ))
            }
            (k, Some(maps)) => {
                if maps.classes() != k {
                    return Err(Error::ShapeMismatch(format!(
                        "discriminator expects {k} class maps, got {}",
                        maps.classes()
                    )));
                }
                Tensor::cat(&[image.batched()?, maps.tensor().unsqueeze(0)?], 1)?
            }
            (k, None) => {
                return Err(Error::ShapeMismatch(format!(
                    "segmentation-augmented discriminator needs {k} class maps, got none \
                     (input must have {} channels, not 3)",
                    self.spec.input_channels
                )))
            }
        };
        self.forward(&x)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.store.vars()
    }

    pub fn checksum(&self) -> Result<String> {
        self.store.checksum()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.store.save(path)
    }

    pub fn load(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.store.load(path)
    }
}

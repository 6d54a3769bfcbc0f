//! Fixed, non-trainable feature signals consumed by the losses and the
//! discriminator: edge maps, perceptual feature stacks and sigmoid
//! segmentation maps.
//!
//! Extractor parameters never receive gradient updates, but every output
//! stays differentiable with respect to the input image so structural
//! losses can steer the generators.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::PerceptualExtractorKind;
use crate::error::{Error, Result};
use crate::nets::{reflect_pad2d, subpixel_upsample};
use crate::tensor::{EdgeMap, FeatureStack, ImageTensor, SegMapStack};

/// Seed for the desk-scale perceptual stub used during training.
pub const TRAIN_STUB_SEED: u64 = 11;
/// Seed for the evaluation-time extractor; deliberately distinct from the
/// training stub so the metric does not trivially favor the trained
/// objective.
pub const EVAL_STUB_SEED: u64 = 7919;

/// Frozen convolution: plain tensors, no gradient accumulation on the
/// weights, gradient still flows to the input.
struct FrozenConv {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
    dilation: usize,
}

impl FrozenConv {
    fn new(
        rng: &mut ChaCha8Rng,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        device: &Device,
    ) -> Result<Self> {
        let fan_in = (in_c * k * k) as f64;
        let bound = (1.0 / fan_in).sqrt();
        let n = out_c * in_c * k * k;
        let wdata: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..bound) as f32).collect();
        let bdata: Vec<f32> = (0..out_c).map(|_| rng.gen_range(-bound..bound) as f32).collect();
        Ok(FrozenConv {
            weight: Tensor::from_vec(wdata, (out_c, in_c, k, k), device)?,
            bias: Tensor::from_vec(bdata, out_c, device)?,
            stride,
            padding,
            dilation,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let w = self.weight.to_dtype(x.dtype())?;
        let y = x.conv2d(&w, self.padding, self.stride, self.dilation, 1)?;
        let out_c = self.bias.dims()[0];
        let b = self.bias.to_dtype(x.dtype())?.reshape((1, out_c, 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }

    fn hash_into(&self, hasher: &mut Sha256) -> Result<()> {
        for t in [&self.weight, &self.bias] {
            for v in t.flatten_all()?.to_vec1::<f32>()? {
                hasher.update(v.to_le_bytes());
            }
        }
        Ok(())
    }

    fn named(&self, prefix: &str, map: &mut HashMap<String, Tensor>) {
        map.insert(format!("{prefix}.weight"), self.weight.clone());
        map.insert(format!("{prefix}.bias"), self.bias.clone());
    }

    fn load_named(&mut self, prefix: &str, map: &HashMap<String, Tensor>, path: &Path) -> Result<()> {
        for (suffix, slot) in [("weight", &mut self.weight), ("bias", &mut self.bias)] {
            let name = format!("{prefix}.{suffix}");
            let t = map
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("{} is missing `{name}`", path.display())))?;
            if t.dims() != slot.dims() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    t.dims(),
                    slot.dims()
                )));
            }
            *slot = t.clone();
        }
        Ok(())
    }
}

/// Converts a [-1,1] image batch (N,C,H,W) to a [0,1] luma batch (N,1,H,W).
fn to_luma(x: &Tensor) -> Result<Tensor> {
    let (_, c, _, _) = x.dims4()?;
    let unit = x.affine(0.5, 0.5)?;
    match c {
        1 => Ok(unit),
        3 => {
            let r = unit.narrow(1, 0, 1)?;
            let g = unit.narrow(1, 1, 1)?;
            let b = unit.narrow(1, 2, 1)?;
            Ok((r.affine(0.299, 0.0)? + g.affine(0.587, 0.0)? + b.affine(0.114, 0.0)?)?)
        }
        other => Err(Error::InvalidValue(format!("expected 1 or 3 channels, got {other}"))),
    }
}

fn sobel_kernels(device: &Device, dtype: DType) -> Result<(Tensor, Tensor)> {
    let gx: Vec<f32> = vec![-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
    let gy: Vec<f32> = vec![-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
    let kx = Tensor::from_vec(gx, (1, 1, 3, 3), device)?.to_dtype(dtype)?;
    let ky = Tensor::from_vec(gy, (1, 1, 3, 3), device)?.to_dtype(dtype)?;
    Ok((kx, ky))
}

/// 3x3 Sobel gradient magnitude on the luma channel, smoothly saturated
/// into [0,1) with tanh. Differentiable everywhere; mirror padding keeps
/// the image borders edge-free. The squared magnitude is scaled down so
/// a full-contrast step maps to ~0.76 while soft texture gradients stay
/// small: the resulting maps are sparse enough that the heavily weighted
/// edge objectives act on structure instead of saturating everywhere.
fn sobel_edges(x: &Tensor) -> Result<Tensor> {
    let gray = to_luma(x)?;
    let padded = reflect_pad2d(&gray, (1, 1), (1, 1))?;
    let (kx, ky) = sobel_kernels(x.device(), x.dtype())?;
    let gx = padded.conv2d(&kx, 0, 1, 1, 1)?;
    let gy = padded.conv2d(&ky, 0, 1, 1, 1)?;
    (gx.sqr()? + gy.sqr()?)?.affine(1.0 / 16.0, 0.0)?.tanh().map_err(Into::into)
}

/// Dilated residual edge network standing in for an HED-style detector.
/// Side outputs at three dilation scales are fused into one sigmoid map.
pub struct HedNet {
    stem: FrozenConv,
    stages: Vec<(FrozenConv, FrozenConv)>,
    sides: Vec<FrozenConv>,
    fuse: FrozenConv,
}

impl HedNet {
    const STAGES: usize = 3;
    const WIDTH: usize = 16;

    pub fn with_random_weights(seed: u64, device: &Device) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Self::WIDTH;
        let stem = FrozenConv::new(&mut rng, 3, w, 3, 1, 1, 1, device)?;
        let mut stages = Vec::new();
        let mut sides = Vec::new();
        for i in 0..Self::STAGES {
            let d = 1 << i;
            stages.push((
                FrozenConv::new(&mut rng, w, w, 3, 1, d, d, device)?,
                FrozenConv::new(&mut rng, w, w, 3, 1, d, d, device)?,
            ));
            sides.push(FrozenConv::new(&mut rng, w, 1, 1, 1, 0, 1, device)?);
        }
        let fuse = FrozenConv::new(&mut rng, Self::STAGES, 1, 1, 1, 0, 1, device)?;
        Ok(HedNet { stem, stages, sides, fuse })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.stem.forward(x)?.tanh()?;
        let mut side_maps = Vec::new();
        for ((c1, c2), side) in self.stages.iter().zip(&self.sides) {
            let r = c2.forward(&c1.forward(&y)?.tanh()?)?;
            y = (y + r)?.tanh()?;
            side_maps.push(side.forward(&y)?);
        }
        let fused = self.fuse.forward(&Tensor::cat(&side_maps, 1)?)?;
        Ok(candle_nn::ops::sigmoid(&fused)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut map = HashMap::new();
        self.stem.named("stem", &mut map);
        for (i, ((c1, c2), side)) in self.stages.iter().zip(&self.sides).enumerate() {
            c1.named(&format!("stage{i}.conv1"), &mut map);
            c2.named(&format!("stage{i}.conv2"), &mut map);
            side.named(&format!("side{i}"), &mut map);
        }
        self.fuse.named("fuse", &mut map);
        candle_core::safetensors::save(&map, path.as_ref())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, device: &Device) -> Result<Self> {
        let path = path.as_ref();
        let map = candle_core::safetensors::load(path, device)?;
        let mut net = HedNet::with_random_weights(0, device)?;
        net.stem.load_named("stem", &map, path)?;
        for i in 0..Self::STAGES {
            let (c1, c2) = &mut net.stages[i];
            c1.load_named(&format!("stage{i}.conv1"), &map, path)?;
            c2.load_named(&format!("stage{i}.conv2"), &map, path)?;
            net.sides[i].load_named(&format!("side{i}"), &map, path)?;
        }
        net.fuse.load_named("fuse", &map, path)?;
        Ok(net)
    }

    fn hash_into(&self, hasher: &mut Sha256) -> Result<()> {
        self.stem.hash_into(hasher)?;
        for ((c1, c2), side) in self.stages.iter().zip(&self.sides) {
            c1.hash_into(hasher)?;
            c2.hash_into(hasher)?;
            side.hash_into(hasher)?;
        }
        self.fuse.hash_into(hasher)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeBackbone {
    AnalyticSobel,
    HedResidual,
}

/// Edge detection model. Output spatial size equals input size, values in
/// [0,1], parameters frozen.
pub struct EdgeDetector {
    backbone: EdgeBackbone,
    hed: Option<HedNet>,
}

impl EdgeDetector {
    pub fn sobel() -> Self {
        EdgeDetector { backbone: EdgeBackbone::AnalyticSobel, hed: None }
    }

    /// An HED-style detector declared but not yet given weights; detection
    /// fails until weights are supplied.
    pub fn hed_uninitialized() -> Self {
        EdgeDetector { backbone: EdgeBackbone::HedResidual, hed: None }
    }

    pub fn hed_with_random_weights(seed: u64, device: &Device) -> Result<Self> {
        Ok(EdgeDetector {
            backbone: EdgeBackbone::HedResidual,
            hed: Some(HedNet::with_random_weights(seed, device)?),
        })
    }

    pub fn hed_from_file(path: impl AsRef<Path>, device: &Device) -> Result<Self> {
        Ok(EdgeDetector {
            backbone: EdgeBackbone::HedResidual,
            hed: Some(HedNet::load(path, device)?),
        })
    }

    pub fn backbone(&self) -> EdgeBackbone {
        self.backbone
    }

    /// Batch form: (N,C,H,W) in [-1,1] -> (N,1,H,W) edge strengths in [0,1].
    pub fn detect_batch(&self, x: &Tensor) -> Result<Tensor> {
        match self.backbone {
            EdgeBackbone::AnalyticSobel => sobel_edges(x),
            EdgeBackbone::HedResidual => match &self.hed {
                Some(net) => net.forward(x),
                None => Err(Error::InvalidValue(
                    "hed-residual edge detector has no weights loaded".into(),
                )),
            },
        }
    }

    pub fn detect(&self, image: &ImageTensor) -> Result<EdgeMap> {
        let out = self.detect_batch(&image.batched()?)?;
        EdgeMap::new(out.squeeze(0)?.squeeze(0)?)
    }

    /// Persists the HED-style weights; errors for the analytic backbone,
    /// which has nothing to save.
    pub fn save_hed(&self, path: impl AsRef<Path>) -> Result<()> {
        match &self.hed {
            Some(net) => net.save(path),
            None => Err(Error::InvalidValue(
                "edge detector has no hed weights to save".into(),
            )),
        }
    }

    pub fn checksum(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        hasher.update(match self.backbone {
            EdgeBackbone::AnalyticSobel => b"sobel".as_slice(),
            EdgeBackbone::HedResidual => b"hed".as_slice(),
        });
        if let Some(net) = &self.hed {
            net.hash_into(&mut hasher)?;
        }
        Ok(format!("{:x}", hasher.finalize()))
    }
}

/// Fully differentiable analytic edge map: grayscale, 3x3 Sobel gradient
/// magnitude, smooth saturation to [0,1].
pub fn analytic_edge_oracle(image: &ImageTensor) -> Result<EdgeMap> {
    EdgeDetector::sobel().detect(image)
}

/// Frozen convolutional pyramid producing the perceptual feature stacks.
///
/// The desk-scale stand-in for a pretrained classifier: a fixed-seed
/// random pyramid with smooth activations. `multi-layer` exposes the
/// activations at every spatial resolution with equal weights,
/// `last-layer` only the deepest one. Pretrained weights are pluggable
/// through [`PerceptualExtractor::load_weights`].
pub struct PerceptualExtractor {
    kind: PerceptualExtractorKind,
    convs: Vec<FrozenConv>,
}

impl PerceptualExtractor {
    const CHANNELS: [usize; 3] = [8, 16, 32];

    pub fn new(kind: PerceptualExtractorKind, seed: u64, device: &Device) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::new();
        let mut in_c = 3;
        for out_c in Self::CHANNELS {
            convs.push(FrozenConv::new(&mut rng, in_c, out_c, 3, 2, 1, 1, device)?);
            in_c = out_c;
        }
        Ok(PerceptualExtractor { kind, convs })
    }

    pub fn kind(&self) -> PerceptualExtractorKind {
        self.kind
    }

    pub fn min_input_side(&self) -> usize {
        1 << self.convs.len()
    }

    /// Batch form: list of (feature map (N,c,h,w), weight) entries.
    pub fn extract_batch(&self, x: &Tensor) -> Result<Vec<(Tensor, f64)>> {
        let (_, _, h, w) = x.dims4()?;
        let min = self.min_input_side();
        if h < min || w < min {
            return Err(Error::ShapeMismatch(format!(
                "input {h}x{w} is too small for the deepest layer; minimum side is {min}"
            )));
        }
        let mut maps = Vec::new();
        let mut y = x.clone();
        for conv in &self.convs {
            y = conv.forward(&y)?.tanh()?;
            maps.push(y.clone());
        }
        let layers: Vec<(Tensor, f64)> = match self.kind {
            PerceptualExtractorKind::LastLayer => {
                vec![(maps.pop().expect("pyramid has layers"), 1.0)]
            }
            PerceptualExtractorKind::MultiLayer | PerceptualExtractorKind::AnalyticStub => {
                let w = 1.0 / maps.len() as f64;
                maps.into_iter().map(|m| (m, w)).collect()
            }
        };
        Ok(layers)
    }

    pub fn extract(&self, image: &ImageTensor) -> Result<FeatureStack> {
        let layers = self.extract_batch(&image.batched()?)?;
        let layers = layers
            .into_iter()
            .map(|(t, w)| Ok((t.squeeze(0)?, w)))
            .collect::<Result<Vec<_>>>()?;
        FeatureStack::new(layers)
    }

    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut map = HashMap::new();
        for (i, conv) in self.convs.iter().enumerate() {
            conv.named(&format!("level{i}"), &mut map);
        }
        candle_core::safetensors::save(&map, path.as_ref())?;
        Ok(())
    }

    pub fn load_weights(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let map = candle_core::safetensors::load(path, &self.convs[0].weight.device())?;
        for (i, conv) in self.convs.iter_mut().enumerate() {
            conv.load_named(&format!("level{i}"), &map, path)?;
        }
        Ok(())
    }

    pub fn checksum(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        for conv in &self.convs {
            conv.hash_into(&mut hasher)?;
        }
        Ok(format!("{:x}", hasher.finalize()))
    }
}

/// Frozen segmentation network with per-class sigmoid heads. Classes are
/// independent per pixel; overlapping classes are representable, which is
/// exactly what lets the discriminator spot inconsistent fakes.
pub struct Segmenter {
    classes: usize,
    stem: FrozenConv,
    down: FrozenConv,
    mid: FrozenConv,
    up: FrozenConv,
    head: FrozenConv,
}

impl Segmenter {
    const WIDTH: usize = 12;

    pub fn new(classes: usize, seed: u64, device: &Device) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Config("segmentation needs at least one class".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Self::WIDTH;
        Ok(Segmenter {
            classes,
            stem: FrozenConv::new(&mut rng, 3, w, 3, 1, 1, 1, device)?,
            down: FrozenConv::new(&mut rng, w, 2 * w, 3, 2, 1, 1, device)?,
            mid: FrozenConv::new(&mut rng, 2 * w, 2 * w, 3, 1, 1, 1, device)?,
            // Produces 4w channels so a factor-2 shuffle lands back on w.
            up: FrozenConv::new(&mut rng, 2 * w, 4 * w, 3, 1, 1, 1, device)?,
            head: FrozenConv::new(&mut rng, 2 * w, classes, 1, 1, 0, 1, device)?,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Batch form: (N,3,H,W) -> (N,K,H,W), every value in (0,1). Even
    /// input sides required by the single downsampling level.
    pub fn segment_batch(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 {
            return Err(Error::ShapeMismatch(format!("segmenter expects 3 channels, got {c}")));
        }
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "segmenter needs even sides, got {h}x{w}"
            )));
        }
        let s = self.stem.forward(x)?.tanh()?;
        let d = self.down.forward(&s)?.tanh()?;
        let m = self.mid.forward(&d)?.tanh()?;
        let u = subpixel_upsample(&self.up.forward(&m)?, 2)?;
        let cat = Tensor::cat(&[s, u], 1)?;
        Ok(candle_nn::ops::sigmoid(&self.head.forward(&cat)?)?)
    }

    pub fn segment(&self, image: &ImageTensor) -> Result<SegMapStack> {
        let out = self.segment_batch(&image.batched()?)?;
        SegMapStack::new(out.squeeze(0)?)
    }

    pub fn checksum(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        for conv in [&self.stem, &self.down, &self.mid, &self.up, &self.head] {
            conv.hash_into(&mut hasher)?;
        }
        Ok(format!("{:x}", hasher.finalize()))
    }
}

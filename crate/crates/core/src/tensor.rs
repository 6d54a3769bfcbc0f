//! Domain tensor types moved between the networks and losses.
//!
//! Thin validated wrappers over `candle` tensors. The inner tensor may
//! carry an autodiff graph, so validation reads a detached copy.

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

/// Channel-major image, shape (channels, height, width), values expected
/// in [-1, 1] for generator inputs and outputs.
#[derive(Debug, Clone)]
pub struct ImageTensor(Tensor);

impl ImageTensor {
    pub fn new(t: Tensor) -> Result<Self> {
        let dims = t.dims();
        if dims.len() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "image tensor must be (channels, height, width), got {dims:?}"
            )));
        }
        let (c, h, w) = (dims[0], dims[1], dims[2]);
        if c != 1 && c != 3 {
            return Err(Error::InvalidValue(format!("image channels must be 1 or 3, got {c}")));
        }
        if h == 0 || w == 0 {
            return Err(Error::InvalidValue(format!("image size {h}x{w} is degenerate")));
        }
        ensure_finite(&t, "image")?;
        Ok(ImageTensor(t))
    }

    pub fn from_chw_vec(data: Vec<f32>, c: usize, h: usize, w: usize, dev: &Device) -> Result<Self> {
        let t = Tensor::from_vec(data, (c, h, w), dev)?;
        ImageTensor::new(t)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn channels(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.0.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.0.dims()[2]
    }

    /// Adds the batch dimension: (C,H,W) -> (1,C,H,W).
    pub fn batched(&self) -> Result<Tensor> {
        Ok(self.0.unsqueeze(0)?)
    }

    /// Stacks images of identical shape into an (N,C,H,W) batch.
    pub fn stack(images: &[ImageTensor]) -> Result<Tensor> {
        if images.is_empty() {
            return Err(Error::InvalidValue("cannot stack an empty image batch".into()));
        }
        let ts: Vec<&Tensor> = images.iter().map(|i| &i.0).collect();
        Ok(Tensor::stack(&ts, 0)?)
    }
}

/// Single-channel edge-strength field, shape (height, width), values in
/// [0, 1]. Same spatial size as the image it was detected on.
#[derive(Debug, Clone)]
pub struct EdgeMap(Tensor);

impl EdgeMap {
    pub fn new(t: Tensor) -> Result<Self> {
        let dims = t.dims();
        if dims.len() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "edge map must be (height, width), got {dims:?}"
            )));
        }
        let vals = t.detach().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        for v in &vals {
            if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                return Err(Error::InvalidValue(format!(
                    "edge map values must lie in [0,1], found {v}"
                )));
            }
        }
        Ok(EdgeMap(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn height(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.0.dims()[1]
    }
}

/// Ordered list of feature maps with per-layer weights, the input to the
/// perceptual distance.
#[derive(Debug, Clone)]
pub struct FeatureStack {
    layers: Vec<(Tensor, f64)>,
}

impl FeatureStack {
    pub fn new(layers: Vec<(Tensor, f64)>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidValue("feature stack needs at least one layer".into()));
        }
        for (i, (t, w)) in layers.iter().enumerate() {
            if t.dims().len() != 3 {
                return Err(Error::ShapeMismatch(format!(
                    "feature layer {i} must be (channels, height, width), got {:?}",
                    t.dims()
                )));
            }
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::InvalidValue(format!(
                    "feature layer {i} weight must be finite and nonnegative, got {w}"
                )));
            }
        }
        Ok(FeatureStack { layers })
    }

    pub fn layers(&self) -> &[(Tensor, f64)] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

/// Per-class sigmoid segmentation maps, shape (classes, height, width).
/// Values are independent per pixel; overlapping classes are allowed.
#[derive(Debug, Clone)]
pub struct SegMapStack(Tensor);

impl SegMapStack {
    pub fn new(t: Tensor) -> Result<Self> {
        let dims = t.dims();
        if dims.len() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "segmentation stack must be (classes, height, width), got {dims:?}"
            )));
        }
        Ok(SegMapStack(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.dims()[0]
    }
}

pub(crate) fn ensure_finite(t: &Tensor, what: &str) -> Result<()> {
    let sum = t.detach().to_dtype(DType::F64)?.sum_all()?.to_scalar::<f64>()?;
    if sum.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidValue(format!("{what} contains non-finite values")))
    }
}

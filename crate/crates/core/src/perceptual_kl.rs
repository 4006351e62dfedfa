//! Discrete KL divergence between softmax-normalised deep features of two images.
//!
//! The feature network is pluggable: a seeded random stack by default, or weights imported
//! from a small binary file (layout in `docs/formats.md`).

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor_core::{Activation, ConvGeometry, Graph, Shape, Tensor, Var};

/// Floor applied to probabilities before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-8;

pub const EXTRACTOR_MAGIC: [u8; 4] = *b"LLFX";
pub const EXTRACTOR_VERSION: u32 = 1;

/// One convolutional stage of an extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorLayer {
    /// `(out, in, kh, kw)`
    pub weight: Tensor,
    /// `(1, out, 1, 1)`
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub activation: Activation,
    /// 2x2 average pooling with stride 2 after the activation.
    pub pool: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Seeded(u64),
    Imported(PathBuf),
    Custom,
}

/// Fixed (never trained) feature network.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    layers: Vec<ExtractorLayer>,
    provenance: Provenance,
}

/// Channel widths of the default extractor.
pub const DEFAULT_WIDTHS: [usize; 4] = [3, 16, 32, 64];

impl FeatureExtractor {
    pub fn new(layers: Vec<ExtractorLayer>) -> Result<Self> {
        Self::validated(layers, Provenance::Custom)
    }

    fn validated(layers: Vec<ExtractorLayer>, provenance: Provenance) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Invalid("feature extractor needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            let w = l.weight.shape();
            if l.bias.shape() != Shape::new(1, w.batch, 1, 1) {
                return Err(Error::shape(
                    "feature_extractor",
                    format!("layer {i}: bias {} does not match {} output channels", l.bias.shape(), w.batch),
                ));
            }
            if i > 0 && layers[i - 1].weight.shape().batch != w.channels {
                return Err(Error::shape(
                    "feature_extractor",
                    format!(
                        "layer {i} expects {} input channels but layer {} produces {}",
                        w.channels,
                        i - 1,
                        layers[i - 1].weight.shape().batch
                    ),
                ));
            }
            if l.stride == 0 {
                return Err(Error::Invalid(format!("layer {i}: stride must be at least 1")));
            }
            l.activation.validate()?;
            if !l.weight.is_finite() || !l.bias.is_finite() {
                return Err(Error::Invalid(format!("layer {i}: non-finite weights")));
            }
        }
        Ok(Self { layers, provenance })
    }

    /// Default architecture (3→16→32→64, 3x3 kernels, stride 2, padding 1, LeakyReLU)
    /// with He-uniform weights drawn from `seed` and zero biases.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = DEFAULT_WIDTHS
            .windows(2)
            .map(|io| {
                let bound = (6.0 / (io[0] * 9) as f64).sqrt();
                ExtractorLayer {
                    weight: Tensor::uniform(Shape::new(io[1], io[0], 3, 3), -bound, bound, &mut rng),
                    bias: Tensor::zeros(Shape::new(1, io[1], 1, 1)),
                    stride: 2,
                    padding: 1,
                    activation: Activation::leaky(),
                    pool: false,
                }
            })
            .collect();
        Self {
            layers,
            provenance: Provenance::Seeded(seed),
        }
    }

    pub fn layers(&self) -> &[ExtractorLayer] {
        &self.layers
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].weight.shape().channels
    }

    /// Records the extractor on `g`; weights enter as constants.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let c = g.shape(x).channels;
        if c != self.in_channels() {
            return Err(Error::shape(
                "extract_features",
                format!("image has {c} channels, extractor expects {}", self.in_channels()),
            ));
        }
        let mut h = x;
        for l in &self.layers {
            let w = g.constant(l.weight.clone());
            let b = g.constant(l.bias.clone());
            h = g.conv2d(h, w, Some(b), ConvGeometry::new(l.stride, l.padding, 1))?;
            h = g.activation(h, l.activation)?;
            if l.pool {
                let ch = g.shape(h).channels;
                let k = g.constant(Tensor::full(Shape::new(ch, 1, 2, 2), 0.25));
                h = g.conv2d(h, k, None, ConvGeometry::new(2, 0, ch))?;
            }
        }
        Ok(h)
    }

    pub fn extract(&self, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(image.clone());
        let f = self.forward(&mut g, x)?;
        Ok(g.value(f).clone())
    }

    /// Serialises to the binary extractor format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&EXTRACTOR_MAGIC);
        out.extend_from_slice(&EXTRACTOR_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            let s = l.weight.shape();
            let (code, slope) = activation_code(l.activation);
            for v in [s.batch, s.channels, s.height, s.width, l.stride, l.padding] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
            out.extend_from_slice(&code.to_le_bytes());
            out.extend_from_slice(&slope.to_le_bytes());
            out.extend_from_slice(&(l.pool as u32).to_le_bytes());
            for v in l.weight.data().iter().chain(l.bias.data()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |detail: String| Error::Format {
            kind: "extractor",
            path: path.to_path_buf(),
            detail,
        };
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4).map_err(&bad)?;
        if magic != EXTRACTOR_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = r.u32().map_err(&bad)?;
        if version != EXTRACTOR_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = r.u32().map_err(&bad)? as usize;
        let mut layers = Vec::with_capacity(count.min(64));
        for i in 0..count {
            let mut dims = [0usize; 6];
            for d in &mut dims {
                *d = r.u32().map_err(&bad)? as usize;
            }
            let code = r.u32().map_err(&bad)?;
            let slope = r.f64().map_err(&bad)?;
            let activation = activation_from_code(code, slope)
                .ok_or_else(|| bad(format!("layer {i}: unknown activation code {code}")))?;
            let pool = match r.u32().map_err(&bad)? {
                0 => false,
                1 => true,
                p => return Err(bad(format!("layer {i}: pool flag must be 0 or 1, got {p}"))),
            };
            let wshape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            let weight = Tensor::from_vec(wshape, r.f64s(wshape.numel()).map_err(&bad)?)?;
            let bias = Tensor::from_vec(Shape::new(1, dims[0], 1, 1), r.f64s(dims[0]).map_err(&bad)?)?;
            layers.push(ExtractorLayer {
                weight,
                bias,
                stride: dims[4],
                padding: dims[5],
                activation,
                pool,
            });
        }
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Self::validated(layers, Provenance::Imported(path.to_path_buf())).map_err(|e| bad(e.to_string()))
    }

    pub fn import(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Parses `seed:N` or a path to an extractor file.
    pub fn from_spec(spec: &str) -> Result<Self> {
        match spec.strip_prefix("seed:") {
            Some(n) => n
                .parse()
                .map(Self::seeded)
                .map_err(|_| Error::Invalid(format!("bad extractor seed {n:?}"))),
            None => Self::import(Path::new(spec)),
        }
    }
}

fn activation_code(a: Activation) -> (u32, f64) {
    match a {
        Activation::Identity => (0, 0.0),
        Activation::Relu => (1, 0.0),
        Activation::LeakyRelu(s) => (2, s),
        Activation::Sigmoid => (3, 0.0),
        Activation::Tanh => (4, 0.0),
    }
}

fn activation_from_code(code: u32, slope: f64) -> Option<Activation> {
    Some(match code {
        0 => Activation::Identity,
        1 => Activation::Relu,
        2 => Activation::LeakyRelu(slope),
        3 => Activation::Sigmoid,
        4 => Activation::Tanh,
        _ => return None,
    })
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(e) => {
                let s = &self.bytes[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(format!("truncated at byte {} (wanted {n} more)", self.pos)),
        }
    }

    pub fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let raw = self.take(n.checked_mul(8).ok_or("length overflow")?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Rows of strictly positive probabilities, one per batch item, stored as `(B, 1, 1, N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDistribution {
    probs: Tensor,
}

impl FeatureDistribution {
    /// Wraps explicit probability rows, checking positivity and normalisation.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Invalid("distribution rows must be nonempty and equally long".into()));
        }
        for r in rows {
            if r.iter().any(|&p| !(p > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Invalid("each row must be positive and sum to 1".into()));
            }
        }
        let probs = Tensor::from_vec(Shape::new(rows.len(), 1, 1, n), rows.concat())?;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn row(&self, b: usize) -> &[f64] {
        let n = self.probs.shape().width;
        &self.probs.data()[b * n..][..n]
    }
}

impl Graph {
    /// Flattens each batch item and applies a softmax over all of its entries.
    pub fn feature_distribution(&mut self, features: Var) -> Result<Var> {
        let s = self.shape(features);
        let n = s.channels * s.plane();
        if n == 0 {
            return Err(Error::Invalid("features are empty".into()));
        }
        let flat = self.reshape(features, Shape::new(s.batch, 1, 1, n))?;
        self.softmax_lastdim(flat)
    }

    /// `Σ p·(ln max(p, ε) − ln max(q, ε))` per row, averaged over rows.
    pub fn discrete_kl(&mut self, p: Var, q: Var) -> Result<Var> {
        let lp = self.clamp_min(p, LOG_FLOOR)?;
        let lp = self.ln(lp)?;
        let lq = self.clamp_min(q, LOG_FLOOR)?;
        let lq = self.ln(lq)?;
        let d = self.sub(lp, lq)?;
        let t = self.mul(p, d)?;
        self.mean_all_rows(t)
    }

    fn mean_all_rows(&mut self, t: Var) -> Result<Var> {
        let b = self.shape(t).batch as f64;
        let s = self.sum_all(t)?;
        self.scale(s, 1.0 / b)
    }

    /// Feature KL loss `KL(π_pred ‖ π_true)` through `extractor`.
    pub fn feature_kl(&mut self, pred: Var, truth: Var, extractor: &FeatureExtractor) -> Result<Var> {
        let (fp, ft) = self.feature_pair(pred, truth, extractor)?;
        let p = self.feature_distribution(fp)?;
        let q = self.feature_distribution(ft)?;
        self.discrete_kl(p, q)
    }

    /// Plain perceptual loss: mean squared difference of extracted features.
    pub fn feature_mse(&mut self, pred: Var, truth: Var, extractor: &FeatureExtractor) -> Result<Var> {
        let (fp, ft) = self.feature_pair(pred, truth, extractor)?;
        let d = self.sub(fp, ft)?;
        let d2 = self.square(d)?;
        self.mean_all(d2)
    }

    fn feature_pair(&mut self, pred: Var, truth: Var, extractor: &FeatureExtractor) -> Result<(Var, Var)> {
        if self.shape(pred) != self.shape(truth) {
            return Err(Error::shape(
                "feature_kl_loss",
                format!("prediction {} and truth {} differ", self.shape(pred), self.shape(truth)),
            ));
        }
        Ok((extractor.forward(self, pred)?, extractor.forward(self, truth)?))
    }
}

pub fn extract_features(image: &Tensor, extractor: &FeatureExtractor) -> Result<Tensor> {
    extractor.extract(image)
}

pub fn to_distribution(features: &Tensor) -> Result<FeatureDistribution> {
    let mut g = Graph::new();
    let f = g.constant(features.clone());
    let p = g.feature_distribution(f)?;
    Ok(FeatureDistribution {
        probs: g.value(p).clone(),
    })
}

/// Batch-averaged `KL(p ‖ q)`.
pub fn discrete_kl(p: &FeatureDistribution, q: &FeatureDistribution) -> Result<f64> {
    if p.probs.shape() != q.probs.shape() {
        return Err(Error::shape(
            "discrete_kl",
            format!("{} vs {}", p.probs.shape(), q.probs.shape()),
        ));
    }
    let mut g = Graph::new();
    let (a, b) = (g.constant(p.probs.clone()), g.constant(q.probs.clone()));
    let kl = g.discrete_kl(a, b)?;
    g.scalar(kl)
}

pub fn feature_kl_loss(pred: &Tensor, truth: &Tensor, extractor: &FeatureExtractor) -> Result<f64> {
    let mut g = Graph::new();
    let (p, t) = (g.constant(pred.clone()), g.constant(truth.clone()));
    let l = g.feature_kl(p, t, extractor)?;
    g.scalar(l)
}

//! Single- and multi-scale structural similarity.

use crate::error::{Error, Result};
use crate::losses::basic::same_shape;
use crate::tensor_core::{ConvGeometry, Graph, Shape, Tensor, Var};

/// Standard five-scale exponents.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    /// Side of the square Gaussian window.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of the pixel values.
    pub data_range: f64,
    pub max_scales: usize,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
            max_scales: 5,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || !(self.sigma > 0.0) || !(self.data_range > 0.0) {
            return Err(Error::Invalid("ssim window, sigma and range must be positive".into()));
        }
        if !(1..=MS_SSIM_WEIGHTS.len()).contains(&self.max_scales) {
            return Err(Error::Invalid(format!(
                "ssim scale count must be in 1..=5, got {}",
                self.max_scales
            )));
        }
        Ok(())
    }

    /// Largest usable scale count: `min(H, W) ≥ 2^(s−1)·window`.
    pub fn scale_count(&self, height: usize, width: usize) -> Result<usize> {
        self.validate()?;
        let side = height.min(width);
        let s = (1..=self.max_scales)
            .take_while(|&s| side >= (1 << (s - 1)) * self.window)
            .last();
        s.ok_or_else(|| {
            Error::shape(
                "ms_ssim",
                format!(
                    "image {height}x{width} is smaller than the {}x{} window",
                    self.window, self.window
                ),
            )
        })
    }

    /// Exponents for `scales` levels, renormalised to sum to one.
    pub fn weights(&self, scales: usize) -> Vec<f64> {
        let w = &MS_SSIM_WEIGHTS[..scales];
        let total: f64 = w.iter().sum();
        w.iter().map(|v| v / total).collect()
    }

    fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }
}

/// Normalised 2-D Gaussian window, one copy per channel, for a depthwise convolution.
pub fn gaussian_window(size: usize, sigma: f64, channels: usize) -> Tensor {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = g.iter().sum();
    Tensor::from_fn(Shape::new(channels, 1, size, size), |_, _, y, x| g[y] * g[x] / (z * z))
}

impl Graph {
    /// Per-plane mean SSIM and mean contrast-structure term, each `(B, C, 1, 1)`.
    fn ssim_components(&mut self, x: Var, y: Var, cfg: &SsimConfig) -> Result<(Var, Var)> {
        let ch = self.shape(x).channels;
        let win = self.constant(gaussian_window(cfg.window, cfg.sigma, ch));
        let geom = ConvGeometry::new(1, 0, ch);
        let filt = |g: &mut Graph, v: Var| g.conv2d(v, win, None, geom);

        let mx = filt(self, x)?;
        let my = filt(self, y)?;
        let xx = self.square(x)?;
        let yy = self.square(y)?;
        let xy = self.mul(x, y)?;
        let exx = filt(self, xx)?;
        let eyy = filt(self, yy)?;
        let exy = filt(self, xy)?;

        let mx2 = self.square(mx)?;
        let my2 = self.square(my)?;
        let mxy = self.mul(mx, my)?;
        let vx = self.sub(exx, mx2)?;
        let vy = self.sub(eyy, my2)?;
        let cov = self.sub(exy, mxy)?;

        let l_num = self.scale(mxy, 2.0)?;
        let l_num = self.add_scalar(l_num, cfg.c1())?;
        let l_den = self.add(mx2, my2)?;
        let l_den = self.add_scalar(l_den, cfg.c1())?;
        let lum = self.div(l_num, l_den)?;

        let cs_num = self.scale(cov, 2.0)?;
        let cs_num = self.add_scalar(cs_num, cfg.c2())?;
        let cs_den = self.add(vx, vy)?;
        let cs_den = self.add_scalar(cs_den, cfg.c2())?;
        let cs = self.div(cs_num, cs_den)?;

        let ssim = self.mul(lum, cs)?;
        Ok((self.pool_global_avg(ssim)?, self.pool_global_avg(cs)?))
    }

    fn downsample2(&mut self, x: Var) -> Result<Var> {
        let ch = self.shape(x).channels;
        let k = self.constant(Tensor::full(Shape::new(ch, 1, 2, 2), 0.25));
        self.conv2d(x, k, None, ConvGeometry::new(2, 0, ch))
    }

    /// Single-scale SSIM averaged over all planes.
    pub fn ssim(&mut self, x: Var, y: Var, cfg: &SsimConfig) -> Result<Var> {
        same_shape(self, "ssim", x, y)?;
        let s = self.shape(x);
        cfg.scale_count(s.height, s.width)?;
        let (ssim, _) = self.ssim_components(x, y, cfg)?;
        self.mean_all(ssim)
    }

    /// Multi-scale SSIM averaged over all planes.
    ///
    /// With `M ≥ 2` scales each plane scores `Π_{i<M} relu(cs_i)^{w_i} · relu(ssim_M)^{w_M}`.
    /// With a single scale the raw SSIM is used, so the result can be negative.
    pub fn ms_ssim(&mut self, x: Var, y: Var, cfg: &SsimConfig) -> Result<Var> {
        same_shape(self, "ms_ssim", x, y)?;
        let s = self.shape(x);
        let m = cfg.scale_count(s.height, s.width)?;
        if m == 1 {
            let (ssim, _) = self.ssim_components(x, y, cfg)?;
            return self.mean_all(ssim);
        }
        let w = cfg.weights(m);
        let (mut x, mut y) = (x, y);
        let mut acc: Option<Var> = None;
        for (i, &wi) in w.iter().enumerate() {
            let (ssim, cs) = self.ssim_components(x, y, cfg)?;
            let term = if i + 1 == m { ssim } else { cs };
            let term = self.relu(term)?;
            let term = self.powf(term, wi)?;
            acc = Some(match acc {
                None => term,
                Some(a) => self.mul(a, term)?,
            });
            if i + 1 < m {
                x = self.downsample2(x)?;
                y = self.downsample2(y)?;
            }
        }
        self.mean_all(acc.expect("at least two scales"))
    }

    /// `1 − MS-SSIM`.
    pub fn ms_ssim_loss(&mut self, pred: Var, truth: Var, cfg: &SsimConfig) -> Result<Var> {
        let v = self.ms_ssim(pred, truth, cfg)?;
        let neg = self.scale(v, -1.0)?;
        self.add_scalar(neg, 1.0)
    }
}

/// Single-scale SSIM of two images in `[0, 1]` with the standard constants.
pub fn ssim(x: &Tensor, y: &Tensor) -> Result<f64> {
    ssim_with(x, y, &SsimConfig::default())
}

pub fn ssim_with(x: &Tensor, y: &Tensor, cfg: &SsimConfig) -> Result<f64> {
    crate::losses::eval_pair(x, y, |g, a, b| g.ssim(a, b, cfg))
}

pub fn ms_ssim_loss(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    ms_ssim_loss_with(pred, truth, &SsimConfig::default())
}

pub fn ms_ssim_loss_with(pred: &Tensor, truth: &Tensor, cfg: &SsimConfig) -> Result<f64> {
    crate::losses::eval_pair(pred, truth, |g, a, b| g.ms_ssim_loss(a, b, cfg))
}

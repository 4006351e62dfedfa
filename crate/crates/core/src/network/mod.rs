//! U-shaped low-light enhancer built from CAB, IEL, DANCE and SE blocks.
//!
//! Three scales with widths `w, 2w, 4w`. Each scale runs one EnhancedLCA block; the
//! decoder upsamples with transposed convolutions, adds the encoder skip and fuses with a
//! 1x1 convolution. With the global residual on, the network predicts a correction that is
//! added to the input, and the zero-initialised output convolution makes a fresh network
//! the identity.

mod blocks;
mod checkpoint;
mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use blocks::{
    cab_attention, cab_forward, dance_forward, enhanced_lca_forward, iel_forward, se_forward,
    ATTENTION_NORM_FLOOR,
};
pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::{CabParams, Conv, DanceParams, IelParams, LcaParams, NetworkParams, SeParams};

use crate::error::{Error, Result};
use crate::tensor_core::{ConvGeometry, Graph, Shape, Tensor, Var, DEFAULT_LEAKY_SLOPE};

pub const SCALES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkConfig {
    /// Width of the first scale; later scales double it.
    pub base_width: usize,
    pub heads: [usize; SCALES],
    pub leaky_slope: f64,
    pub se_reduction: usize,
    /// Reduction of the channel attention inside DANCE.
    pub dance_reduction: usize,
    /// Hidden width of IEL as a multiple of the block width.
    pub iel_expansion: usize,
    pub global_residual: bool,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            base_width: 16,
            heads: [1, 2, 4],
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            se_reduction: 4,
            dance_reduction: 4,
            iel_expansion: 2,
            global_residual: true,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn with_width(base_width: usize) -> Self {
        Self {
            base_width,
            ..Self::default()
        }
    }

    pub fn widths(&self) -> [usize; SCALES] {
        [self.base_width, 2 * self.base_width, 4 * self.base_width]
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width < 4 {
            return Err(Error::Invalid(format!(
                "base width must be at least 4, got {}",
                self.base_width
            )));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::Invalid("leaky slope must be finite".into()));
        }
        if self.iel_expansion == 0 {
            return Err(Error::Invalid("iel expansion must be at least 1".into()));
        }
        for (w, h) in self.widths().into_iter().zip(self.heads) {
            for (what, d) in [
                ("head count", h),
                ("se reduction", self.se_reduction),
                ("dance reduction", self.dance_reduction),
            ] {
                if d == 0 || w % d != 0 || w / d == 0 {
                    return Err(Error::Invalid(format!("width {w} is not divisible by {what} {d}")));
                }
            }
        }
        Ok(())
    }
}

/// Seeded parameters: fan-in scaled uniform weights, zero biases, unit attention temperatures and a
/// zero output convolution. The draw order is the declaration order of [`NetworkParams`].
pub fn init_params(cfg: &NetworkConfig) -> Result<NetworkParams<Tensor>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w = cfg.widths();
    let stem = Conv::dense(3, w[0], 3, &mut rng);
    let blocks = (0..SCALES)
        .map(|i| LcaParams {
            cab: CabParams::init(w[i], cfg.heads[i], &mut rng),
            iel: IelParams::init(w[i], cfg.iel_expansion, cfg.leaky_slope, &mut rng),
            dance: DanceParams::init(w[i], cfg.dance_reduction, cfg.leaky_slope, &mut rng),
            se: SeParams::init(w[i], cfg.se_reduction, &mut rng),
        })
        .collect();
    let down = (0..SCALES - 1).map(|i| Conv::dense(w[i], w[i + 1], 3, &mut rng)).collect();
    let up = (0..SCALES - 1)
        .rev()
        .map(|i| Conv::transposed(w[i + 1], w[i], 2, &mut rng))
        .collect();
    let fuse = (0..SCALES - 1).rev().map(|i| Conv::dense(w[i], w[i], 1, &mut rng)).collect();
    let output = Conv::zeroed(Shape::new(3, w[0], 3, 3));
    Ok(NetworkParams {
        stem,
        blocks,
        down,
        up,
        fuse,
        output,
    })
}

/// Records the enhancer on `g`. `image` is `(B, 3, H, W)` with `H` and `W` divisible by 4.
pub fn llfdisc_forward(
    g: &mut Graph,
    image: Var,
    p: &NetworkParams<Var>,
    cfg: &NetworkConfig,
) -> Result<Var> {
    let s = g.shape(image);
    if s.channels != 3 {
        return Err(Error::shape("llfdisc", format!("expected 3 channels, got {}", s.channels)));
    }
    let factor = 1 << (SCALES - 1);
    if s.height % factor != 0 || s.width % factor != 0 || s.height == 0 || s.width == 0 {
        return Err(Error::shape(
            "llfdisc",
            format!(
                "height and width must be positive multiples of {factor}, got {}x{}; \
                 pad the image reflectively first (the harness does this in enhance)",
                s.height, s.width
            ),
        ));
    }
    let same3 = ConvGeometry::same(1);
    let mut x = blocks::conv(g, image, &p.stem, same3)?;
    let mut skips = Vec::with_capacity(SCALES - 1);
    for i in 0..SCALES {
        x = enhanced_lca_forward(g, x, &p.blocks[i])?;
        if i + 1 < SCALES {
            skips.push(x);
            x = blocks::conv(g, x, &p.down[i], ConvGeometry::new(2, 1, 1))?;
        }
    }
    for (j, skip) in skips.into_iter().rev().enumerate() {
        let up = &p.up[j];
        x = g.conv_transpose2d(x, up.weight, Some(up.bias), 2, 0)?;
        x = g.add(x, skip)?;
        x = blocks::conv(g, x, &p.fuse[j], ConvGeometry::same(0))?;
    }
    let delta = blocks::conv(g, x, &p.output, same3)?;
    if cfg.global_residual {
        g.add(image, delta)
    } else {
        Ok(delta)
    }
}

/// Configuration plus parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub params: NetworkParams<Tensor>,
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        Ok(Self {
            params: init_params(&config)?,
            config,
        })
    }

    /// Registers every parameter as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> NetworkParams<Var> {
        self.params.map(&mut |t| g.leaf(t.clone()))
    }

    /// Registers every parameter as a constant.
    pub fn bind_constant(&self, g: &mut Graph) -> NetworkParams<Var> {
        self.params.map(&mut |t| g.constant(t.clone()))
    }

    /// Unclamped output for a `(B, 3, H, W)` batch.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.bind_constant(&mut g);
        let x = g.constant(image.clone());
        let y = llfdisc_forward(&mut g, x, &p, &self.config)?;
        Ok(g.value(y).clone())
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }
}

#[cfg(test)]
mod tests;

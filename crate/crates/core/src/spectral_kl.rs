//! Fourier KL loss: amplitude and phase maps summarised as 1-D Gaussians and compared in
//! closed form.

use crate::error::{Error, Result};
use crate::tensor_core::{Graph, Shape, Tensor, Var};

/// Added to every fitted variance so the KL stays finite for flat maps.
pub const VARIANCE_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    pub mean: f64,
    /// Population variance plus [`VARIANCE_EPSILON`].
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FklBreakdown {
    pub d_amp: f64,
    pub d_pha: f64,
    /// `(d_amp + d_pha) / 2`
    pub total: f64,
}

/// Which bins one Gaussian summarises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StatsScope {
    /// One Gaussian per (batch item, channel); the KL is averaged over both.
    #[default]
    PerChannel,
    /// One Gaussian per batch item over all channels' bins.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FklOptions {
    pub scope: StatsScope,
    /// Compute `D(true ‖ pred)` instead of `D(pred ‖ true)`.
    pub reverse: bool,
}

/// Mean and stabilised population variance of every `(b, c)` plane, in `b`-major order.
pub fn spectral_stats(map: &Tensor) -> Result<Vec<GaussianParams>> {
    let plane = map.shape().plane();
    if plane == 0 {
        return Err(Error::Invalid("spectral_stats needs a nonempty map".into()));
    }
    Ok(map
        .data()
        .chunks(plane)
        .map(|c| {
            let n = c.len() as f64;
            let mean = c.iter().sum::<f64>() / n;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            GaussianParams {
                mean,
                variance: var + VARIANCE_EPSILON,
            }
        })
        .collect())
}

/// `KL(p ‖ q)` between two univariate Gaussians.
pub fn gaussian_kl(p: GaussianParams, q: GaussianParams) -> Result<f64> {
    for g in [p, q] {
        if !(g.variance > 0.0) || !g.variance.is_finite() || !g.mean.is_finite() {
            return Err(Error::Invalid(format!(
                "gaussian_kl needs a finite mean and positive variance, got N({}, {})",
                g.mean, g.variance
            )));
        }
    }
    let d = p.mean - q.mean;
    Ok(0.5 * (q.variance / p.variance).ln() + (p.variance + d * d) / (2.0 * q.variance) - 0.5)
}

/// Differentiable pieces of the loss.
#[derive(Debug, Clone, Copy)]
pub struct FklVars {
    pub d_amp: Var,
    pub d_pha: Var,
    pub total: Var,
}

impl Graph {
    /// Per-plane `(mean, variance + ε)`, each shaped `(B, C, 1, 1)`.
    pub fn plane_moments(&mut self, x: Var) -> Result<(Var, Var)> {
        let mean = self.pool_global_avg(x)?;
        let neg = self.scale(mean, -1.0)?;
        let centred = self.add_channel(x, neg)?;
        let sq = self.square(centred)?;
        let var = self.pool_global_avg(sq)?;
        let var = self.add_scalar(var, VARIANCE_EPSILON)?;
        Ok((mean, var))
    }

    /// Elementwise Gaussian KL `D(p ‖ q)` averaged over all entries.
    fn mean_gaussian_kl(&mut self, p: (Var, Var), q: (Var, Var)) -> Result<Var> {
        let (mp, vp) = p;
        let (mq, vq) = q;
        let ln_q = self.ln(vq)?;
        let ln_p = self.ln(vp)?;
        let log_ratio = self.sub(ln_q, ln_p)?;
        let diff = self.sub(mp, mq)?;
        let d2 = self.square(diff)?;
        let num = self.add(vp, d2)?;
        let frac = self.div(num, vq)?;
        let half_log = self.scale(log_ratio, 0.5)?;
        let half_frac = self.scale(frac, 0.5)?;
        let kl = self.add(half_log, half_frac)?;
        let kl = self.add_scalar(kl, -0.5)?;
        self.mean_all(kl)
    }

    /// Fourier KL loss between a prediction and its reference, both `(B, C, H, W)`.
    pub fn fourier_kl(&mut self, pred: Var, truth: Var, opts: FklOptions) -> Result<FklVars> {
        let s = self.shape(pred);
        if s != self.shape(truth) {
            return Err(Error::shape(
                "fourier_kl_loss",
                format!("prediction {} and truth {} differ", s, self.shape(truth)),
            ));
        }
        let (ap, pp) = self.amplitude_phase(pred)?;
        let (at, pt) = self.amplitude_phase(truth)?;
        let mut d = [None, None];
        for (slot, (p_map, t_map)) in d.iter_mut().zip([(ap, at), (pp, pt)]) {
            let (p_map, t_map) = match opts.scope {
                StatsScope::PerChannel => (p_map, t_map),
                StatsScope::Joint => {
                    let joint = Shape::new(s.batch, 1, s.channels * s.height, s.width);
                    (self.reshape(p_map, joint)?, self.reshape(t_map, joint)?)
                }
            };
            let p_stats = self.plane_moments(p_map)?;
            let t_stats = self.plane_moments(t_map)?;
            *slot = Some(if opts.reverse {
                self.mean_gaussian_kl(t_stats, p_stats)?
            } else {
                self.mean_gaussian_kl(p_stats, t_stats)?
            });
        }
        let (d_amp, d_pha) = (d[0].unwrap(), d[1].unwrap());
        let sum = self.add(d_amp, d_pha)?;
        let total = self.scale(sum, 0.5)?;
        Ok(FklVars { d_amp, d_pha, total })
    }
}

/// Default loss: per-channel Gaussians, `D(pred ‖ true)`.
pub fn fourier_kl_loss(pred: &Tensor, truth: &Tensor) -> Result<FklBreakdown> {
    fourier_kl_loss_with(pred, truth, FklOptions::default())
}

pub fn fourier_kl_loss_with(pred: &Tensor, truth: &Tensor, opts: FklOptions) -> Result<FklBreakdown> {
    let mut g = Graph::new();
    let (p, t) = (g.constant(pred.clone()), g.constant(truth.clone()));
    let v = g.fourier_kl(p, t, opts)?;
    Ok(FklBreakdown {
        d_amp: g.scalar(v.d_amp)?,
        d_pha: g.scalar(v.d_pha)?,
        total: g.scalar(v.total)?,
    })
}

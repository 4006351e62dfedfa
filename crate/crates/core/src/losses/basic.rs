//! Smooth L1, PSNR, colour and Fourier-MSE losses.

use std::f64::consts::LN_10;

use crate::error::{Error, Result};
use crate::tensor_core::{Graph, Var};

/// PSNR (dB) at which the PSNR loss reaches zero.
pub const PSNR_TARGET_DB: f64 = 40.0;
/// Floor on the mean squared error; caps PSNR at 100 dB.
pub const MSE_FLOOR: f64 = 1e-10;
/// Floor on mean-colour vector norms.
pub const COLOR_NORM_FLOOR: f64 = 1e-8;

pub(crate) fn same_shape(g: &Graph, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(
            op,
            format!("prediction {} and truth {} differ", g.shape(a), g.shape(b)),
        ));
    }
    Ok(())
}

impl Graph {
    /// Mean Huber-style smooth L1: `0.5 d²/β` for `|d| < β`, else `|d| − 0.5 β`.
    pub fn smooth_l1(&mut self, pred: Var, truth: Var, beta: f64) -> Result<Var> {
        same_shape(self, "smooth_l1", pred, truth)?;
        if !(beta > 0.0) {
            return Err(Error::Invalid(format!("smooth_l1 beta must be positive, got {beta}")));
        }
        let d = self.sub(pred, truth)?;
        let h = self.unary(
            "smooth_l1",
            d,
            move |d| {
                if d.abs() < beta {
                    0.5 * d * d / beta
                } else {
                    d.abs() - 0.5 * beta
                }
            },
            move |d, _| if d.abs() < beta { d / beta } else { d.signum() },
        )?;
        self.mean_all(h)
    }

    /// Mean squared error over every element.
    pub fn mse(&mut self, pred: Var, truth: Var) -> Result<Var> {
        same_shape(self, "mse", pred, truth)?;
        let d = self.sub(pred, truth)?;
        let d2 = self.square(d)?;
        self.mean_all(d2)
    }

    /// `max(0, (40 − PSNR) / 40)` with `PSNR = 10 log10(1 / max(MSE, 1e-10))`.
    pub fn psnr_loss(&mut self, pred: Var, truth: Var) -> Result<Var> {
        let mse = self.mse(pred, truth)?;
        let mse = self.clamp_min(mse, MSE_FLOOR)?;
        // (40 - PSNR)/40 = 10 ln(mse / mse_40) / (40 ln 10), with mse_40 = 10^-4 the MSE at 40 dB
        let ratio = self.scale(mse, 10f64.powf(PSNR_TARGET_DB / 10.0))?;
        let ln = self.ln(ratio)?;
        let t = self.scale(ln, 10.0 / (PSNR_TARGET_DB * LN_10))?;
        self.relu(t)
    }

    /// `1 − cos` between per-image mean RGB vectors, averaged over the batch.
    pub fn color_loss(&mut self, pred: Var, truth: Var) -> Result<Var> {
        same_shape(self, "color_loss", pred, truth)?;
        let c = self.shape(pred).channels;
        if c != 3 {
            return Err(Error::shape("color_loss", format!("expected 3 channels, got {c}")));
        }
        let mp = self.pool_global_avg(pred)?;
        let mt = self.pool_global_avg(truth)?;
        let prod = self.mul(mp, mt)?;
        let dot = self.sum_per_item(prod)?;
        // sqrt(|p|²·|t|²) rather than |p|·|t| keeps cos exactly 1 for identical inputs
        let np = self.floored_sq_norm(mp)?;
        let nt = self.floored_sq_norm(mt)?;
        let den = self.mul(np, nt)?;
        let den = self.sqrt(den)?;
        let cos = self.div(dot, den)?;
        let neg = self.scale(cos, -1.0)?;
        let one_minus = self.add_scalar(neg, 1.0)?;
        self.mean_all(one_minus)
    }

    /// `max(‖v‖, 1e-8)²` per batch item, as `(B, 1, 1, 1)`.
    fn floored_sq_norm(&mut self, v: Var) -> Result<Var> {
        let sq = self.square(v)?;
        let n2 = self.sum_per_item(sq)?;
        self.clamp_min(n2, COLOR_NORM_FLOOR * COLOR_NORM_FLOOR)
    }

    /// Squared-error Fourier loss: `mean((A_p − A_t)²) + mean((P_p − P_t)²)`.
    pub fn fourier_mse(&mut self, pred: Var, truth: Var) -> Result<Var> {
        same_shape(self, "fourier_mse", pred, truth)?;
        let (ap, pp) = self.amplitude_phase(pred)?;
        let (at, pt) = self.amplitude_phase(truth)?;
        let a = self.mse(ap, at)?;
        let p = self.mse(pp, pt)?;
        self.add(a, p)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::fourier::{amplitude, fft2d, phase};
    use crate::losses::eval_pair;
    use crate::tensor_core::{gradient_check, Shape, Tensor};

    fn img(seed: u64, shape: Shape) -> Tensor {
        Tensor::uniform(shape, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn smooth(p: &Tensor, t: &Tensor) -> f64 {
        eval_pair(p, t, |g, p, t| g.smooth_l1(p, t, 1.0)).unwrap()
    }

    #[test]
    fn smooth_l1_examples() {
        let t = img(1, Shape::new(2, 3, 4, 4));
        assert_eq!(smooth(&t, &t), 0.0);
        assert!((smooth(&t.map(|v| v + 0.5), &t) - 0.125).abs() < 1e-12);
        assert!((smooth(&t.map(|v| v - 2.0), &t) - 1.5).abs() < 1e-12);
    }

    fn psnr_l(p: &Tensor, t: &Tensor) -> f64 {
        eval_pair(p, t, |g, p, t| g.psnr_loss(p, t)).unwrap()
    }

    #[test]
    fn psnr_loss_examples() {
        let t = Tensor::full(Shape::new(1, 3, 4, 4), 0.5);
        assert!((psnr_l(&t.map(|v| v + 0.1), &t) - 0.5).abs() < 1e-12);
        assert_eq!(psnr_l(&t, &t), 0.0);
        let zero = Tensor::zeros(t.shape());
        let one = Tensor::ones(t.shape());
        assert!((psnr_l(&zero, &one) - 1.0).abs() < 1e-12);
    }

    fn color(p: &Tensor, t: &Tensor) -> Result<f64> {
        eval_pair(p, t, |g, p, t| g.color_loss(p, t))
    }

    #[test]
    fn color_loss_examples() {
        let s = Shape::new(1, 3, 2, 2);
        let red = Tensor::from_fn(s, |_, c, _, _| (c == 0) as u8 as f64);
        let green = Tensor::from_fn(s, |_, c, _, _| (c == 1) as u8 as f64);
        assert!((color(&red, &green).unwrap() - 1.0).abs() < 1e-15);
        let t = img(2, Shape::new(2, 3, 4, 4));
        assert!(color(&t, &t).unwrap().abs() < 1e-15);
        assert!(color(&t.scale(0.5), &t).unwrap().abs() < 1e-10);
        // a black image has no hue; its floored norm keeps the loss finite
        let black = Tensor::zeros(t.shape());
        assert!((color(&black, &t).unwrap() - 1.0).abs() < 1e-12);
        assert!(color(&Tensor::zeros(Shape::new(1, 2, 2, 2)), &Tensor::zeros(Shape::new(1, 2, 2, 2))).is_err());
    }

    #[test]
    fn fourier_mse_matches_direct_evaluation() {
        let p = img(3, Shape::new(2, 3, 8, 8));
        let t = img(4, Shape::new(2, 3, 8, 8));
        let (fp, ft) = (fft2d(&p), fft2d(&t));
        let mse = |a: &Tensor, b: &Tensor| a.zip_map(b, |x, y| (x - y).powi(2)).unwrap().mean();
        let want = mse(amplitude(&fp).values(), amplitude(&ft).values())
            + mse(phase(&fp).values(), phase(&ft).values());
        let got = eval_pair(&p, &t, |g, p, t| g.fourier_mse(p, t)).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn gradients_pass_check() {
        for s in 0..10u64 {
            let t = img(100 + s, Shape::new(2, 3, 4, 4));
            let p = img(200 + s, Shape::new(2, 3, 4, 4)).scale(0.6);
            // smooth l1 with a mix of quadratic and linear regions
            let wide = p.scale(3.0);
            type LossFn = fn(&mut Graph, Var, Var) -> Result<Var>;
            let cases: [(&str, &Tensor, LossFn); 4] = [
                ("smooth_l1", &wide, |g, p, t| g.smooth_l1(p, t, 1.0)),
                ("psnr", &p, |g, p, t| g.psnr_loss(p, t)),
                ("color", &p, |g, p, t| g.color_loss(p, t)),
                ("fourier_mse", &p, |g, p, t| g.fourier_mse(p, t)),
            ];
            for (name, point, f) in cases {
                let r = gradient_check(
                    |g, v| {
                        let tc = g.constant(t.clone());
                        f(g, v, tc)
                    },
                    point,
                )
                .unwrap();
                assert!(r.max_relative_error < 1e-4, "{name}: {r:?}");
            }
        }
    }
}

//! Differentiable 256-bin intensity histograms.
//!
//! Each value in `[0, 1]` is placed at `t = 255·v` and splits its mass between bins
//! `floor(t)` and `floor(t) + 1` with a triangular kernel one bin wide. Values outside
//! `[0, 1]` are clamped first.

use crate::error::Result;
use crate::losses::basic::same_shape;
use crate::tensor_core::{Graph, Shape, Tensor, Var};

pub const HIST_BINS: usize = 256;

/// Lower bin index and the fraction of mass assigned to the bin above it.
fn bin_split(v: f64) -> (usize, f64) {
    let t = v.clamp(0.0, 1.0) * (HIST_BINS - 1) as f64;
    let k = (t.floor() as usize).min(HIST_BINS - 2);
    (k, t - k as f64)
}

fn histogram_rows(x: &Tensor) -> Tensor {
    let s = x.shape();
    let n = s.plane();
    let mut out = Tensor::zeros(Shape::new(s.batch, s.channels, 1, HIST_BINS));
    let inv = 1.0 / n as f64;
    for (plane, row) in x.data().chunks(n).zip(out.data_mut().chunks_mut(HIST_BINS)) {
        for &v in plane {
            let (k, f) = bin_split(v);
            row[k] += (1.0 - f) * inv;
            row[k + 1] += f * inv;
        }
    }
    out
}

impl Graph {
    /// Normalised soft histogram of every `(b, c)` plane, shaped `(B, C, 1, 256)`.
    pub fn soft_histogram(&mut self, x: Var) -> Result<Var> {
        let value = histogram_rows(self.value(x));
        self.record(
            "soft_histogram",
            value,
            &[x],
            Box::new(|ctx| {
                let x = ctx.inputs[0];
                let n = x.shape().plane();
                let scale = (HIST_BINS - 1) as f64 / n as f64;
                let mut gx = Tensor::zeros(x.shape());
                for ((gp, xp), grow) in gx
                    .data_mut()
                    .chunks_mut(n)
                    .zip(x.data().chunks(n))
                    .zip(ctx.grad.data().chunks(HIST_BINS))
                {
                    for (g, &v) in gp.iter_mut().zip(xp) {
                        if v > 0.0 && v < 1.0 {
                            let (k, _) = bin_split(v);
                            *g = scale * (grow[k + 1] - grow[k]);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// L1 distance between normalised histograms, averaged over batch and channels.
    pub fn histogram_loss(&mut self, pred: Var, truth: Var) -> Result<Var> {
        same_shape(self, "histogram_loss", pred, truth)?;
        let s = self.shape(pred);
        let hp = self.soft_histogram(pred)?;
        let ht = self.soft_histogram(truth)?;
        let d = self.sub(hp, ht)?;
        let a = self.abs(d)?;
        let total = self.sum_all(a)?;
        self.scale(total, 1.0 / (s.batch * s.channels) as f64)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::losses::eval_pair;
    use crate::losses::probe::histogram_check_pair;
    use crate::tensor_core::gradient_check;

    fn hist_loss(p: &Tensor, t: &Tensor) -> f64 {
        eval_pair(p, t, |g, p, t| g.histogram_loss(p, t)).unwrap()
    }

    #[test]
    fn examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::uniform(Shape::new(2, 3, 5, 5), 0.0, 1.0, &mut rng);
        assert_eq!(hist_loss(&x, &x), 0.0);
        let zero = Tensor::zeros(Shape::new(1, 3, 4, 4));
        let one = Tensor::ones(Shape::new(1, 3, 4, 4));
        assert!((hist_loss(&zero, &one) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rows_are_normalised() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::uniform(Shape::new(2, 2, 6, 6), -0.2, 1.2, &mut rng);
        let h = histogram_rows(&x);
        for row in h.data().chunks(HIST_BINS) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn matches_per_bin_accumulation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Tensor::uniform(Shape::new(2, 3, 6, 6), 0.0, 1.0, &mut rng);
        let t = Tensor::uniform(Shape::new(2, 3, 6, 6), 0.0, 1.0, &mut rng);
        // every bin sums its triangular kernel over every pixel
        let hist = |x: &Tensor, b: usize, c: usize, k: usize| {
            let mut acc = 0.0;
            for y in 0..6 {
                for z in 0..6 {
                    acc += (1.0 - (255.0 * x.at(b, c, y, z) - k as f64).abs()).max(0.0);
                }
            }
            acc / 36.0
        };
        let mut total = 0.0;
        for b in 0..2 {
            for c in 0..3 {
                for k in 0..HIST_BINS {
                    total += (hist(&p, b, c, k) - hist(&t, b, c, k)).abs();
                }
            }
        }
        assert!((hist_loss(&p, &t) - total / 6.0).abs() < 1e-10);
    }

    #[test]
    fn gradient_passes_check_away_from_kinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let (p, t) = histogram_check_pair(&mut rng, Shape::new(2, 3, 4, 4));
            let r = gradient_check(
                |g, v| {
                    let tc = g.constant(t.clone());
                    g.histogram_loss(v, tc)
                },
                &p,
            )
            .unwrap();
            assert!(r.max_relative_error < 1e-4, "{r:?}");
        }
    }

    #[test]
    fn out_of_range_values_have_zero_gradient() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-0.5, 0.5, 1.5]).unwrap();
        let mut g = Graph::new();
        let v = g.leaf(x);
        let h = g.soft_histogram(v).unwrap();
        let w = g.constant(Tensor::from_fn(Shape::new(1, 1, 1, HIST_BINS), |_, _, _, k| k as f64));
        let p = g.mul(h, w).unwrap();
        let s = g.sum_all(p).unwrap();
        let grads = g.backward(s).unwrap();
        let gx = grads.wrt(v).data();
        assert_eq!(gx[0], 0.0);
        assert_eq!(gx[2], 0.0);
        // d/dv Σ k·h_k = 255 / n for an interior value
        assert!((gx[1] - 255.0 / 3.0).abs() < 1e-12);
    }
}

//! Batched matrix products and the row softmax used by channel attention.

use super::graph::{Graph, Var};
use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};

/// `a (B, h, M, K) x b (B, h, K, N) -> (B, h, M, N)`, optionally with the last two axes of
/// either operand transposed first.
fn matmul_raw(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Tensor {
    let (sa, sb) = (a.shape(), b.shape());
    let (m, k) = if ta {
        (sa.width, sa.height)
    } else {
        (sa.height, sa.width)
    };
    let n = if tb { sb.height } else { sb.width };
    let out_shape = Shape::new(sa.batch, sa.channels, m, n);
    let mut out = vec![0.0; out_shape.numel()];
    let (ad, bd) = (a.data(), b.data());
    for s in 0..sa.batch * sa.channels {
        let ab = &ad[s * sa.plane()..][..sa.plane()];
        let bb = &bd[s * sb.plane()..][..sb.plane()];
        let ob = &mut out[s * m * n..][..m * n];
        for i in 0..m {
            for p in 0..k {
                let av = if ta { ab[p * m + i] } else { ab[i * k + p] };
                if tb {
                    for j in 0..n {
                        ob[i * n + j] += av * bb[j * k + p];
                    }
                } else {
                    let brow = &bb[p * n..][..n];
                    for (o, bv) in ob[i * n..][..n].iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
    }
    Tensor::from_vec(out_shape, out).expect("matmul shape")
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let w = x.shape().width;
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(w) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

impl Graph {
    /// Matrix product of every `(batch, head)` slice: `(B, h, M, K) · (B, h, K, N)`.
    pub fn batched_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.batch != sb.batch || sa.channels != sb.channels {
            return Err(Error::shape(
                "batched_matmul",
                format!("leading dimensions differ: {sa} vs {sb}"),
            ));
        }
        if sa.width != sb.height {
            return Err(Error::shape(
                "batched_matmul",
                format!(
                    "inner dimensions differ: left has {} columns, right has {} rows",
                    sa.width, sb.height
                ),
            ));
        }
        let value = matmul_raw(self.value(a), self.value(b), false, false);
        self.record(
            "batched_matmul",
            value,
            &[a, b],
            Box::new(|ctx| {
                // dA = G · Bᵀ, dB = Aᵀ · G
                let ga = ctx.needs[0].then(|| matmul_raw(ctx.grad, ctx.inputs[1], false, true));
                let gb = ctx.needs[1].then(|| matmul_raw(ctx.inputs[0], ctx.grad, true, false));
                vec![ga, gb]
            }),
        )
    }

    /// Softmax along the last axis, computed with max subtraction.
    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let value = softmax_rows(self.value(x));
        self.record(
            "softmax_lastdim",
            value,
            &[x],
            Box::new(|ctx| {
                let w = ctx.output.shape().width;
                let mut g = ctx.grad.clone();
                for (grow, prow) in g.data_mut().chunks_mut(w).zip(ctx.output.data().chunks(w)) {
                    let dot: f64 = grow.iter().zip(prow).map(|(g, p)| g * p).sum();
                    for (gv, p) in grow.iter_mut().zip(prow) {
                        *gv = p * (*gv - dot);
                    }
                }
                vec![Some(g)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor_core::gradcheck::gradient_check;

    fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
        let p = g.batched_matmul(av, bv)?;
        Ok(g.value(p).clone())
    }

    fn softmax(x: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let s = g.softmax_lastdim(v).unwrap();
        g.value(s).clone()
    }

    #[test]
    fn identity_and_scalar_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::uniform(Shape::new(1, 2, 3, 4), -1.0, 1.0, &mut rng);
        let eye = Tensor::from_fn(Shape::new(1, 2, 3, 3), |_, _, i, j| (i == j) as u8 as f64);
        assert_eq!(matmul(&eye, &x).unwrap(), x);

        let a = Tensor::full(Shape::new(1, 1, 1, 1), 3.0);
        let b = Tensor::full(Shape::new(1, 1, 1, 1), -2.5);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[-7.5]);
    }

    #[test]
    fn matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Tensor::uniform(Shape::new(2, 2, 3, 4), -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(Shape::new(2, 2, 4, 5), -1.0, 1.0, &mut rng);
        let p = matmul(&a, &b).unwrap();
        let oracle = Tensor::from_fn(Shape::new(2, 2, 3, 5), |n, h, i, j| {
            (0..4).map(|k| a.at(n, h, i, k) * b.at(n, h, k, j)).sum()
        });
        assert!(p.max_abs_diff(&oracle) < 1e-12);
    }

    #[test]
    fn inner_dimension_mismatch_is_an_error() {
        let a = Tensor::zeros(Shape::new(1, 1, 2, 3));
        let b = Tensor::zeros(Shape::new(1, 1, 4, 2));
        let err = matmul(&a, &b).unwrap_err();
        assert!(err.to_string().contains("inner dimensions"));
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&Tensor::full(Shape::new(1, 1, 1, 5), 7.0));
        assert!(u.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));

        let r = softmax(&Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.0, 3f64.ln()]).unwrap());
        assert!((r.data()[0] - 0.25).abs() < 1e-15);
        assert!((r.data()[1] - 0.75).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::uniform(Shape::new(2, 2, 3, 6), -5.0, 5.0, &mut rng);
        let s = softmax(&x);
        for row in s.data().chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let shifted = softmax(&x.map(|v| v + 123.0));
        assert!(s.max_abs_diff(&shifted) < 1e-12);
        // large logits stay finite thanks to max subtraction
        let big = softmax(&x.scale(200.0));
        assert!(big.is_finite());
    }

    #[test]
    fn matmul_and_softmax_gradients_pass_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let a = Tensor::uniform(Shape::new(2, 2, 3, 4), -1.0, 1.0, &mut rng);
            let b = Tensor::uniform(Shape::new(2, 2, 4, 3), -1.0, 1.0, &mut rng);
            let w = Tensor::uniform(Shape::new(2, 2, 3, 3), -1.0, 1.0, &mut rng);
            let f = |g: &mut Graph, a: Var, b: Var| -> Result<Var> {
                let p = g.batched_matmul(a, b)?;
                let s = g.softmax_lastdim(p)?;
                let wc = g.constant(w.clone());
                let z = g.mul(s, wc)?;
                g.sum_all(z)
            };
            let ea = gradient_check(|g, v| { let bc = g.constant(b.clone()); f(g, v, bc) }, &a).unwrap();
            let eb = gradient_check(|g, v| { let ac = g.constant(a.clone()); f(g, ac, v) }, &b).unwrap();
            assert!(ea.max_relative_error < 1e-4, "{ea:?}");
            assert!(eb.max_relative_error < 1e-4, "{eb:?}");
        }
    }
}

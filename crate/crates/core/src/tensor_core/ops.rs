//! Elementwise arithmetic, activations, reductions and reshaping.

use super::graph::{BackwardCtx, Graph, Var};
use super::tensor::{compensated_sum, Shape, Tensor};
use crate::error::{Error, Result};

/// Slope used for `LeakyReLU` when none is configured.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu(DEFAULT_LEAKY_SLOPE)
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    /// Kinks take the negative-side slope.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn validate(self) -> Result<()> {
        if let Activation::LeakyRelu(s) = self {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::Invalid(format!(
                    "leaky_relu slope must lie in (0, 1), got {s}"
                )));
            }
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn same_shape(g: &Graph, op: &'static str, a: Var, b: Var) -> Result<Shape> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb {
        return Err(Error::shape(
            op,
            format!("operands have shapes {sa} and {sb}"),
        ));
    }
    Ok(sa)
}

/// Validates a `(B, C, 1, 1)` or `(1, C, 1, 1)` operand broadcast against `x`.
fn channel_operand(g: &Graph, op: &'static str, x: Var, p: Var) -> Result<bool> {
    let (sx, sp) = (g.shape(x), g.shape(p));
    if sp.channels != sx.channels {
        return Err(Error::shape(
            op,
            format!(
                "channel operand has {} channels, input has {}",
                sp.channels, sx.channels
            ),
        ));
    }
    if sp.height != 1 || sp.width != 1 {
        return Err(Error::shape(
            op,
            format!("channel operand must be 1x1 spatially, got {sp}"),
        ));
    }
    match sp.batch {
        b if b == sx.batch => Ok(false),
        1 => Ok(true),
        b => Err(Error::shape(
            op,
            format!("channel operand batch {b} is neither 1 nor {}", sx.batch),
        )),
    }
}

impl Graph {
    pub(crate) fn unary(
        &mut self,
        op: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Var> {
        let value = self.value(x).map(f);
        self.record(
            op,
            value,
            &[x],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let data = ctx
                    .inputs[0]
                    .data()
                    .iter()
                    .zip(ctx.output.data())
                    .zip(ctx.grad.data())
                    .map(|((&x, &y), &g)| g * df(x, y))
                    .collect();
                vec![Some(Tensor::from_vec(ctx.grad.shape(), data).expect("shape"))]
            }),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.record(
            "add",
            value,
            &[a, b],
            Box::new(|ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.record(
            "sub",
            value,
            &[a, b],
            Box::new(|ctx| {
                let nb = ctx.needs[1].then(|| ctx.grad.scale(-1.0));
                vec![Some(ctx.grad.clone()), nb]
            }),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.record(
            "mul",
            value,
            &[a, b],
            Box::new(|ctx| {
                let ga = ctx.needs[0]
                    .then(|| ctx.grad.zip_map(ctx.inputs[1], |g, y| g * y).expect("shape"));
                let gb = ctx.needs[1]
                    .then(|| ctx.grad.zip_map(ctx.inputs[0], |g, x| g * x).expect("shape"));
                vec![ga, gb]
            }),
        )
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "div", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        self.record(
            "div",
            value,
            &[a, b],
            Box::new(|ctx| {
                let ga = ctx.needs[0]
                    .then(|| ctx.grad.zip_map(ctx.inputs[1], |g, y| g / y).expect("shape"));
                let gb = ctx.needs[1].then(|| {
                    let q = ctx.output.zip_map(ctx.inputs[1], |q, y| q / y).expect("shape");
                    ctx.grad.zip_map(&q, |g, q| -g * q).expect("shape")
                });
                vec![ga, gb]
            }),
        )
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        self.unary("scale", x, move |v| v * k, move |_, _| k)
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Result<Var> {
        self.unary("add_scalar", x, move |v| v + k, |_, _| 1.0)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", x, |v| v * v, |x, _| 2.0 * x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary("sqrt", x, f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, f64::exp, |_, y| y)
    }

    /// Natural logarithm; non-positive inputs produce a non-finite error.
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.unary("ln", x, f64::ln, |x, _| 1.0 / x)
    }

    /// `|x|` with subgradient 0 at 0.
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let y = self.unary("abs", x, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })?;
        self.mark_breakpoint(y, 0.0);
        Ok(y)
    }

    /// `x^p` for positive inputs.
    pub fn powf(&mut self, x: Var, p: f64) -> Result<Var> {
        self.unary("powf", x, move |v| v.powf(p), move |x, y| {
            if x == 0.0 {
                0.0
            } else {
                p * y / x
            }
        })
    }

    /// `max(x, floor)`; gradient passes only where `x > floor`.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Result<Var> {
        let y = self.unary("clamp_min", x, move |v| v.max(floor), move |x, _| {
            if x > floor {
                1.0
            } else {
                0.0
            }
        })?;
        self.mark_breakpoint(y, floor);
        Ok(y)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        kind.validate()?;
        let y = self.unary(
            "activation",
            x,
            move |v| kind.apply(v),
            move |x, y| kind.derivative(x, y),
        )?;
        if matches!(kind, Activation::LeakyRelu(_) | Activation::Relu) {
            self.mark_breakpoint(y, 0.0);
        }
        Ok(y)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.activation(x, Activation::LeakyRelu(slope))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    /// Adds a per-channel term of shape `(B, C, 1, 1)` or `(1, C, 1, 1)`.
    pub fn add_channel(&mut self, x: Var, bias: Var) -> Result<Var> {
        let shared = channel_operand(self, "add_channel", x, bias)?;
        let s = self.shape(x);
        let mut value = self.value(x).clone();
        {
            let bv = self.value(bias).data().to_vec();
            let plane = s.plane();
            for (i, chunk) in value.data_mut().chunks_mut(plane).enumerate() {
                let k = if shared { i % s.channels } else { i };
                chunk.iter_mut().for_each(|v| *v += bv[k]);
            }
        }
        let bshape = self.shape(bias);
        self.record(
            "add_channel",
            value,
            &[x, bias],
            Box::new(move |ctx| {
                let gb = ctx.needs[1].then(|| {
                    let mut gb = Tensor::zeros(bshape);
                    for (i, chunk) in ctx.grad.data().chunks(s.plane()).enumerate() {
                        let k = if shared { i % s.channels } else { i };
                        gb.data_mut()[k] += chunk.iter().sum::<f64>();
                    }
                    gb
                });
                vec![Some(ctx.grad.clone()), gb]
            }),
        )
    }

    /// Multiplies each channel plane by a per-channel factor of shape `(B, C, 1, 1)` or
    /// `(1, C, 1, 1)`.
    pub fn scale_channel(&mut self, x: Var, factor: Var) -> Result<Var> {
        let shared = channel_operand(self, "scale_channel", x, factor)?;
        let s = self.shape(x);
        let mut value = self.value(x).clone();
        {
            let fv = self.value(factor).data().to_vec();
            for (i, chunk) in value.data_mut().chunks_mut(s.plane()).enumerate() {
                let k = if shared { i % s.channels } else { i };
                chunk.iter_mut().for_each(|v| *v *= fv[k]);
            }
        }
        let fshape = self.shape(factor);
        self.record(
            "scale_channel",
            value,
            &[x, factor],
            Box::new(move |ctx| {
                let plane = s.plane();
                let fv = ctx.inputs[1].data();
                let gx = ctx.needs[0].then(|| {
                    let mut gx = ctx.grad.clone();
                    for (i, chunk) in gx.data_mut().chunks_mut(plane).enumerate() {
                        let k = if shared { i % s.channels } else { i };
                        chunk.iter_mut().for_each(|v| *v *= fv[k]);
                    }
                    gx
                });
                let gf = ctx.needs[1].then(|| {
                    let mut gf = Tensor::zeros(fshape);
                    for (i, (gc, xc)) in ctx
                        .grad
                        .data()
                        .chunks(plane)
                        .zip(ctx.inputs[0].data().chunks(plane))
                        .enumerate()
                    {
                        let k = if shared { i % s.channels } else { i };
                        gf.data_mut()[k] += gc.iter().zip(xc).map(|(g, x)| g * x).sum::<f64>();
                    }
                    gf
                });
                vec![gx, gf]
            }),
        )
    }

    /// Sum of every element, as a `(1, 1, 1, 1)` tensor.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let value = Tensor::scalar(self.value(x).sum());
        self.record(
            "sum_all",
            value,
            &[x],
            Box::new(move |ctx| vec![Some(Tensor::full(s, ctx.grad.data()[0]))]),
        )
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Sum over channels and spatial positions of each batch item: `(B, 1, 1, 1)`.
    pub fn sum_per_item(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let per = s.channels * s.plane();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks(per)
            .map(|c| compensated_sum(c.iter().copied()))
            .collect();
        let value = Tensor::from_vec(Shape::new(s.batch, 1, 1, 1), data)?;
        self.record(
            "sum_per_item",
            value,
            &[x],
            Box::new(move |ctx| {
                let mut g = Tensor::zeros(s);
                for (chunk, &gv) in g.data_mut().chunks_mut(per).zip(ctx.grad.data()) {
                    chunk.fill(gv);
                }
                vec![Some(g)]
            }),
        )
    }

    /// Global average pooling: mean over each `H x W` plane, giving `(B, C, 1, 1)`.
    pub fn pool_global_avg(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.height == 0 || s.width == 0 {
            return Err(Error::shape("pool_global_avg", "empty spatial extent"));
        }
        let plane = s.plane();
        let inv = 1.0 / plane as f64;
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|c| compensated_sum(c.iter().copied()) * inv)
            .collect();
        let value = Tensor::from_vec(Shape::new(s.batch, s.channels, 1, 1), data)?;
        self.record(
            "pool_global_avg",
            value,
            &[x],
            Box::new(move |ctx| {
                let mut g = Tensor::zeros(s);
                for (chunk, &gv) in g.data_mut().chunks_mut(plane).zip(ctx.grad.data()) {
                    chunk.fill(gv * inv);
                }
                vec![Some(g)]
            }),
        )
    }

    /// Reinterprets the row-major data under a new shape.
    pub fn reshape(&mut self, x: Var, shape: Shape) -> Result<Var> {
        let from = self.shape(x);
        let value = self.value(x).clone().reshape(shape)?;
        self.record(
            "reshape",
            value,
            &[x],
            Box::new(move |ctx| vec![Some(ctx.grad.clone().reshape(from).expect("shape"))]),
        )
    }

    /// Swaps the last two axes: `(B, C, H, W) -> (B, C, W, H)`.
    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let value = transpose_last2(self.value(x));
        self.record(
            "transpose_last2",
            value,
            &[x],
            Box::new(|ctx| vec![Some(transpose_last2(ctx.grad))]),
        )
    }
}

pub(crate) fn transpose_last2(t: &Tensor) -> Tensor {
    let s = t.shape();
    let out = Shape::new(s.batch, s.channels, s.width, s.height);
    let mut data = vec![0.0; s.numel()];
    let src = t.data();
    for bc in 0..s.batch * s.channels {
        let base = bc * s.plane();
        for y in 0..s.height {
            for x in 0..s.width {
                data[base + x * s.height + y] = src[base + y * s.width + x];
            }
        }
    }
    Tensor::from_vec(out, data).expect("transpose shape")
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor_core::gradcheck::gradient_check;

    fn row(vals: &[f64]) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, 1, vals.len()), vals.to_vec()).unwrap()
    }

    fn eval(x: Tensor, f: impl Fn(&mut Graph, Var) -> Result<Var>) -> Tensor {
        let mut g = Graph::new();
        let v = g.leaf(x);
        let y = f(&mut g, v).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn activation_definitions() {
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert!((Activation::LeakyRelu(0.01).apply(-2.0) + 0.02).abs() < 1e-15);
        assert_eq!(Activation::Relu.apply(-3.0), 0.0);
        assert_eq!(Activation::Relu.apply(3.0), 3.0);
    }

    #[test]
    fn tanh_matches_exponential_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::uniform(Shape::new(1, 2, 5, 5), -4.0, 4.0, &mut rng);
        let y = eval(x.clone(), |g, v| g.tanh(v));
        let oracle = x.map(|v| 1.0 - 2.0 / ((2.0 * v).exp() + 1.0));
        assert!(y.max_abs_diff(&oracle) < 1e-12);
    }

    #[test]
    fn kink_subgradient_is_negative_side_slope() {
        let mut g = Graph::new();
        let x = g.leaf(row(&[0.0, 0.0]));
        let y = g.leaf(row(&[0.0, 0.0]));
        let a = g.leaky_relu(x, 0.2).unwrap();
        let b = g.relu(y).unwrap();
        let s1 = g.sum_all(a).unwrap();
        let s2 = g.sum_all(b).unwrap();
        let s = g.add(s1, s2).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).data(), &[0.2, 0.2]);
        assert_eq!(grads.wrt(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn invalid_leaky_slope_is_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(row(&[1.0]));
        assert!(g.leaky_relu(x, 1.5).is_err());
        assert!(g.leaky_relu(x, 0.0).is_err());
    }

    #[test]
    fn pool_global_avg_values() {
        let plane = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(eval(plane, |g, v| g.pool_global_avg(v)).data(), &[2.5]);

        let c = Tensor::full(Shape::new(2, 3, 4, 5), 1.75);
        let p = eval(c, |g, v| g.pool_global_avg(v));
        assert_eq!(p.shape(), Shape::new(2, 3, 1, 1));
        assert!(p.data().iter().all(|&v| v == 1.75));
    }

    #[test]
    fn pool_mean_over_channels_equals_global_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::uniform(Shape::new(1, 4, 3, 5), -1.0, 1.0, &mut rng);
        let p = eval(x.clone(), |g, v| g.pool_global_avg(v));
        assert!((p.mean() - x.mean()).abs() < 1e-14);
    }

    #[test]
    fn channel_broadcast_rejects_bad_shapes() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(Shape::new(2, 3, 4, 4)));
        let wrong_c = g.leaf(Tensor::zeros(Shape::new(2, 2, 1, 1)));
        let wrong_b = g.leaf(Tensor::zeros(Shape::new(3, 3, 1, 1)));
        let spatial = g.leaf(Tensor::zeros(Shape::new(2, 3, 2, 1)));
        assert!(g.add_channel(x, wrong_c).is_err());
        assert!(g.scale_channel(x, wrong_b).is_err());
        assert!(g.scale_channel(x, spatial).is_err());
    }

    #[test]
    fn elementwise_gradients_pass_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let x = Tensor::uniform(Shape::new(2, 2, 3, 3), 0.2, 2.0, &mut rng);
            let other = Tensor::uniform(Shape::new(2, 2, 3, 3), 0.5, 1.5, &mut rng);
            let err = gradient_check(
                |g, v| {
                    let o = g.constant(other.clone());
                    let a = g.mul(v, o)?;
                    let b = g.div(a, v)?;
                    let c = g.sqrt(v)?;
                    let d = g.ln(c)?;
                    let e = g.exp(d)?;
                    let f = g.sub(e, b)?;
                    let h = g.powf(v, 1.7)?;
                    let k = g.add(f, h)?;
                    let m = g.square(k)?;
                    let n = g.add_scalar(m, 0.5)?;
                    let q = g.div(o, n)?;
                    g.sum_all(q)
                },
                &x,
            )
            .unwrap();
            assert!(err.max_relative_error < 1e-4, "{err:?}");
        }
    }

    #[test]
    fn activation_gradients_pass_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let x = Tensor::uniform(Shape::new(1, 3, 4, 4), -2.0, 2.0, &mut rng);
            let w = Tensor::uniform(Shape::new(1, 3, 4, 4), -1.0, 1.0, &mut rng);
            for kind in [
                Activation::LeakyRelu(0.01),
                Activation::Relu,
                Activation::Sigmoid,
                Activation::Tanh,
            ] {
                let err = gradient_check(
                    |g, v| {
                        let a = g.activation(v, kind)?;
                        let wc = g.constant(w.clone());
                        let p = g.mul(a, wc)?;
                        g.sum_all(p)
                    },
                    &x,
                )
                .unwrap();
                assert!(err.max_relative_error < 1e-4, "{kind:?}: {err:?}");
            }
        }
    }

    #[test]
    fn broadcast_and_reduction_gradients_pass_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for i in 0..10 {
            let x = Tensor::uniform(Shape::new(2, 3, 3, 4), -1.0, 1.0, &mut rng);
            let batch = if i % 2 == 0 { 2 } else { 1 };
            let s = Tensor::uniform(Shape::new(batch, 3, 1, 1), -1.0, 1.0, &mut rng);
            let w = Tensor::uniform(Shape::new(2, 3, 4, 3), -1.0, 1.0, &mut rng);
            // gradient w.r.t. the input
            let err = gradient_check(
                |g, v| {
                    let sc = g.constant(s.clone());
                    let a = g.scale_channel(v, sc)?;
                    let b = g.add_channel(a, sc)?;
                    let p = g.pool_global_avg(b)?;
                    let q = g.mul(p, p)?;
                    let t = g.transpose_last2(b)?;
                    let wc = g.constant(w.clone());
                    let u = g.mul(t, wc)?;
                    let r = g.reshape(u, Shape::new(1, 1, 6, 12))?;
                    let per = g.sum_per_item(r)?;
                    let m = g.mean_all(q)?;
                    let sq = g.square(per)?;
                    let z = g.add(sq, m)?;
                    g.sum_all(z)
                },
                &x,
            )
            .unwrap();
            assert!(err.max_relative_error < 1e-4, "{err:?}");
            // gradient w.r.t. the broadcast operand
            let err = gradient_check(
                |g, v| {
                    let xc = g.constant(x.clone());
                    let a = g.scale_channel(xc, v)?;
                    let b = g.add_channel(a, v)?;
                    let sq = g.square(b)?;
                    g.sum_all(sq)
                },
                &s,
            )
            .unwrap();
            assert!(err.max_relative_error < 1e-4, "{err:?}");
        }
    }

    #[test]
    fn abs_and_clamp_gradients_pass_check_away_from_kinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..10 {
            let x = Tensor::uniform(Shape::new(1, 1, 4, 4), 0.1, 1.0, &mut rng)
                .zip_map(
                    &Tensor::uniform(Shape::new(1, 1, 4, 4), 0.0, 1.0, &mut rng),
                    |m, s| if s < 0.5 { -m } else { m },
                )
                .unwrap();
            let err = gradient_check(
                |g, v| {
                    let a = g.abs(v)?;
                    let c = g.clamp_min(v, 0.0)?;
                    let p = g.mul(a, c)?;
                    let q = g.add(p, a)?;
                    g.sum_all(q)
                },
                &x,
            )
            .unwrap();
            assert!(err.max_relative_error < 1e-4, "{err:?}");
        }
    }

    #[test]
    fn kink_margin_tracks_piecewise_inputs() {
        let mut g = Graph::new();
        let x = g.leaf(row(&[-0.3, 0.02, 1.0]));
        assert_eq!(g.kink_margin(), f64::INFINITY);
        let t = g.tanh(x).unwrap();
        assert_eq!(g.kink_margin(), f64::INFINITY);
        g.leaky_relu(x, 0.1).unwrap();
        assert!((g.kink_margin() - 0.02).abs() < 1e-15);
        g.clamp_min(t, 0.76).unwrap();
        assert!((g.kink_margin() - (1f64.tanh() - 0.76).abs()).abs() < 1e-15);
    }
}

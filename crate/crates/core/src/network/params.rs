//! Parameter containers, generic over what is stored per tensor.
//!
//! `T = Tensor` holds values, `T = Var` holds the same parameters bound to a graph. Every
//! container exposes `map`, which visits its tensors in declaration order; flattening,
//! graph binding, gradient collection and checkpoint I/O all go through it.

use rand::Rng;

use crate::tensor_core::{Shape, Tensor};

/// Weight and bias of one convolution. Bias is `(1, out, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    pub weight: T,
    pub bias: T,
}

impl<T> Conv<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Conv<U> {
        Conv {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }
}

impl Conv<Tensor> {
    /// Uniform weights with bound `sqrt(3 / fan_in)` (unit gain; most convolutions here are
    /// linear) and a zero bias.
    pub(crate) fn fan_in(weight: Shape, fan_in: usize, out: usize, rng: &mut impl Rng) -> Self {
        let bound = (3.0 / fan_in as f64).sqrt();
        Conv {
            weight: Tensor::uniform(weight, -bound, bound, rng),
            bias: Tensor::zeros(Shape::new(1, out, 1, 1)),
        }
    }

    /// Dense `k x k` convolution `cin -> cout`.
    pub(crate) fn dense(cin: usize, cout: usize, k: usize, rng: &mut impl Rng) -> Self {
        Self::fan_in(Shape::new(cout, cin, k, k), cin * k * k, cout, rng)
    }

    /// Depthwise `k x k` convolution over `c` channels.
    pub(crate) fn depthwise(c: usize, k: usize, rng: &mut impl Rng) -> Self {
        Self::fan_in(Shape::new(c, 1, k, k), k * k, c, rng)
    }

    /// Transposed convolution `cin -> cout`, weight `(cin, cout, k, k)`.
    pub(crate) fn transposed(cin: usize, cout: usize, k: usize, rng: &mut impl Rng) -> Self {
        Self::fan_in(Shape::new(cin, cout, k, k), cin, cout, rng)
    }

    pub(crate) fn zeroed(weight: Shape) -> Self {
        Conv {
            weight: Tensor::zeros(weight),
            bias: Tensor::zeros(Shape::new(1, weight.batch, 1, 1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DanceParams<T> {
    /// Depthwise 3x3 of the noise branch.
    pub noise_dw: Conv<T>,
    /// 1x1 producing the noise-gate logits.
    pub noise_pw: Conv<T>,
    pub dark1: Conv<T>,
    pub dark2: Conv<T>,
    /// Channel attention `C -> C/r -> C`, both 1x1.
    pub ca_reduce: Conv<T>,
    pub ca_expand: Conv<T>,
    pub reduction: usize,
    pub slope: f64,
}

impl<T> DanceParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> DanceParams<U> {
        DanceParams {
            noise_dw: self.noise_dw.map(f),
            noise_pw: self.noise_pw.map(f),
            dark1: self.dark1.map(f),
            dark2: self.dark2.map(f),
            ca_reduce: self.ca_reduce.map(f),
            ca_expand: self.ca_expand.map(f),
            reduction: self.reduction,
            slope: self.slope,
        }
    }
}

impl DanceParams<Tensor> {
    pub fn init(c: usize, reduction: usize, slope: f64, rng: &mut impl Rng) -> Self {
        let r = c / reduction;
        DanceParams {
            noise_dw: Conv::depthwise(c, 3, rng),
            noise_pw: Conv::dense(c, c, 1, rng),
            dark1: Conv::dense(c, c, 3, rng),
            dark2: Conv::dense(c, c, 3, rng),
            ca_reduce: Conv::dense(c, r, 1, rng),
            ca_expand: Conv::dense(r, c, 1, rng),
            reduction,
            slope,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IelParams<T> {
    /// 1x1 expansion `C -> E`.
    pub expand: Conv<T>,
    /// Depthwise 3x3 over `E` channels.
    pub dw: Conv<T>,
    /// 1x1 projection `E -> C`.
    pub project: Conv<T>,
    /// 1x1 `C -> C` feeding the tanh gate.
    pub gate: Conv<T>,
    pub slope: f64,
}

impl<T> IelParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> IelParams<U> {
        IelParams {
            expand: self.expand.map(f),
            dw: self.dw.map(f),
            project: self.project.map(f),
            gate: self.gate.map(f),
            slope: self.slope,
        }
    }
}

impl IelParams<Tensor> {
    pub fn init(c: usize, expansion: usize, slope: f64, rng: &mut impl Rng) -> Self {
        let e = c * expansion;
        IelParams {
            expand: Conv::dense(c, e, 1, rng),
            dw: Conv::depthwise(e, 3, rng),
            project: Conv::dense(e, c, 1, rng),
            gate: Conv::dense(c, c, 1, rng),
            slope,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeParams<T> {
    /// `C -> C/r` on the pooled descriptor.
    pub fc1: Conv<T>,
    /// `C/r -> C`.
    pub fc2: Conv<T>,
}

impl<T> SeParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> SeParams<U> {
        SeParams {
            fc1: self.fc1.map(f),
            fc2: self.fc2.map(f),
        }
    }
}

impl SeParams<Tensor> {
    pub fn init(c: usize, reduction: usize, rng: &mut impl Rng) -> Self {
        SeParams {
            fc1: Conv::dense(c, c / reduction, 1, rng),
            fc2: Conv::dense(c / reduction, c, 1, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CabParams<T> {
    pub q: Conv<T>,
    pub k: Conv<T>,
    pub v: Conv<T>,
    pub q_dw: Conv<T>,
    pub k_dw: Conv<T>,
    pub v_dw: Conv<T>,
    pub project: Conv<T>,
    /// `(1, heads, 1, 1)`; the temperature is `exp(log_temperature)`.
    pub log_temperature: T,
    pub heads: usize,
}

impl<T> CabParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> CabParams<U> {
        CabParams {
            q: self.q.map(f),
            k: self.k.map(f),
            v: self.v.map(f),
            q_dw: self.q_dw.map(f),
            k_dw: self.k_dw.map(f),
            v_dw: self.v_dw.map(f),
            project: self.project.map(f),
            log_temperature: f(&self.log_temperature),
            heads: self.heads,
        }
    }
}

impl CabParams<Tensor> {
    pub fn init(c: usize, heads: usize, rng: &mut impl Rng) -> Self {
        CabParams {
            q: Conv::dense(c, c, 1, rng),
            k: Conv::dense(c, c, 1, rng),
            v: Conv::dense(c, c, 1, rng),
            q_dw: Conv::depthwise(c, 3, rng),
            k_dw: Conv::depthwise(c, 3, rng),
            v_dw: Conv::depthwise(c, 3, rng),
            project: Conv::dense(c, c, 1, rng),
            log_temperature: Tensor::zeros(Shape::new(1, heads, 1, 1)),
            heads,
        }
    }
}

/// One EnhancedLCA block: CAB, IEL, DANCE and SE applied in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct LcaParams<T> {
    pub cab: CabParams<T>,
    pub iel: IelParams<T>,
    pub dance: DanceParams<T>,
    pub se: SeParams<T>,
}

impl<T> LcaParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> LcaParams<U> {
        LcaParams {
            cab: self.cab.map(f),
            iel: self.iel.map(f),
            dance: self.dance.map(f),
            se: self.se.map(f),
        }
    }
}

/// Parameters of the full U-shaped enhancer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    /// 3x3, `3 -> w0`.
    pub stem: Conv<T>,
    /// One block per scale.
    pub blocks: Vec<LcaParams<T>>,
    /// 3x3 stride-2 convolutions `w0 -> w1`, `w1 -> w2`.
    pub down: Vec<Conv<T>>,
    /// 2x2 stride-2 transposed convolutions `w2 -> w1`, `w1 -> w0`.
    pub up: Vec<Conv<T>>,
    /// 1x1 fusions after each skip addition, `w1` then `w0`.
    pub fuse: Vec<Conv<T>>,
    /// 3x3, `w0 -> 3`; zero at initialisation.
    pub output: Conv<T>,
}

impl<T> NetworkParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> NetworkParams<U> {
        NetworkParams {
            stem: self.stem.map(f),
            blocks: self.blocks.iter().map(|b| b.map(f)).collect(),
            down: self.down.iter().map(|c| c.map(f)).collect(),
            up: self.up.iter().map(|c| c.map(f)).collect(),
            fuse: self.fuse.iter().map(|c| c.map(f)).collect(),
            output: self.output.map(f),
        }
    }

    /// References to every parameter in declaration order.
    pub fn flatten(&self) -> Vec<&T> {
        let mut out = Vec::new();
        self.visit(&mut |t| out.push(t));
        out
    }

    /// Same layout with the `i`-th tensor replaced by `flat[i]`.
    ///
    /// Panics if `flat` does not have exactly one entry per tensor.
    pub fn relabel<U: Clone>(&self, flat: &[U]) -> NetworkParams<U> {
        let mut it = flat.iter();
        let out = self.map(&mut |_| it.next().expect("too few entries").clone());
        assert!(it.next().is_none(), "too many entries");
        out
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a T)) {
        fn conv<'a, T>(c: &'a Conv<T>, f: &mut impl FnMut(&'a T)) {
            f(&c.weight);
            f(&c.bias);
        }
        conv(&self.stem, f);
        for b in &self.blocks {
            let c = &b.cab;
            for p in [&c.q, &c.k, &c.v, &c.q_dw, &c.k_dw, &c.v_dw, &c.project] {
                conv(p, f);
            }
            f(&c.log_temperature);
            let i = &b.iel;
            for p in [&i.expand, &i.dw, &i.project, &i.gate] {
                conv(p, f);
            }
            let d = &b.dance;
            for p in [&d.noise_dw, &d.noise_pw, &d.dark1, &d.dark2, &d.ca_reduce, &d.ca_expand] {
                conv(p, f);
            }
            conv(&b.se.fc1, f);
            conv(&b.se.fc2, f);
        }
        for c in self.down.iter().chain(&self.up).chain(&self.fuse) {
            conv(c, f);
        }
        conv(&self.output, f);
    }
}

impl NetworkParams<Tensor> {
    /// Number of scalar parameters.
    pub fn count(&self) -> usize {
        self.flatten().iter().map(|t| t.len()).sum()
    }

    /// Parameters with the same layout as `self`, taken in order from `values`.
    ///
    /// Panics if `values` is shorter than the parameter list or a shape differs.
    pub fn with_values(&self, values: impl IntoIterator<Item = Tensor>) -> Self {
        let mut it = values.into_iter();
        self.map(&mut |t: &Tensor| {
            let v = it.next().expect("too few parameter tensors");
            assert_eq!(v.shape(), t.shape(), "parameter shape changed");
            v
        })
    }
}

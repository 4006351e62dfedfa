//! 2-D convolution (cross-correlation, no kernel flip) and its transpose.

use super::graph::{Graph, Var};
use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};

/// Stride, zero padding and channel grouping of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvGeometry {
    pub const fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Self {
            stride,
            padding,
            groups,
        }
    }

    /// Stride 1, `padding` zeros, a single group.
    pub const fn same(padding: usize) -> Self {
        Self::new(1, padding, 1)
    }
}

impl Default for ConvGeometry {
    fn default() -> Self {
        Self::new(1, 0, 1)
    }
}

/// Validated dimensions of one convolution call.
#[derive(Debug, Clone, Copy)]
struct ConvDims {
    input: Shape,
    /// `(out_channels, in_channels / groups, kh, kw)`
    kernel: Shape,
    output: Shape,
    geom: ConvGeometry,
}

impl ConvDims {
    fn in_per_group(&self) -> usize {
        self.kernel.channels
    }

    fn out_per_group(&self) -> usize {
        self.kernel.batch / self.geom.groups
    }
}

fn conv_dims(op: &'static str, input: Shape, kernel: Shape, geom: ConvGeometry) -> Result<ConvDims> {
    if geom.stride == 0 {
        return Err(Error::shape(op, "stride must be at least 1"));
    }
    if geom.groups == 0 {
        return Err(Error::shape(op, "groups must be at least 1"));
    }
    if input.channels % geom.groups != 0 {
        return Err(Error::shape(
            op,
            format!(
                "input channels {} not divisible by groups {}",
                input.channels, geom.groups
            ),
        ));
    }
    if kernel.batch % geom.groups != 0 {
        return Err(Error::shape(
            op,
            format!(
                "output channels {} not divisible by groups {}",
                kernel.batch, geom.groups
            ),
        ));
    }
    if kernel.channels != input.channels / geom.groups {
        return Err(Error::shape(
            op,
            format!(
                "weight in-channels {} does not match input channels {} / groups {}",
                kernel.channels, input.channels, geom.groups
            ),
        ));
    }
    let padded_h = input.height + 2 * geom.padding;
    let padded_w = input.width + 2 * geom.padding;
    if kernel.height == 0 || kernel.height > padded_h {
        return Err(Error::shape(
            op,
            format!(
                "kernel height {} exceeds padded input height {padded_h}",
                kernel.height
            ),
        ));
    }
    if kernel.width == 0 || kernel.width > padded_w {
        return Err(Error::shape(
            op,
            format!(
                "kernel width {} exceeds padded input width {padded_w}",
                kernel.width
            ),
        ));
    }
    let output = Shape::new(
        input.batch,
        kernel.batch,
        (padded_h - kernel.height) / geom.stride + 1,
        (padded_w - kernel.width) / geom.stride + 1,
    );
    Ok(ConvDims {
        input,
        kernel,
        output,
        geom,
    })
}

/// Output columns `ox` for which `ox * stride + k - pad` lands inside `[0, n)`.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, n: usize, n_out: usize) -> (usize, usize) {
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    let hi = if n + pad > k {
        ((n + pad - k - 1) / stride + 1).min(n_out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Calls `f(out_plane_index, in_plane_index, weight_index, oy, iy, ox_lo, ox_hi, ix_base)`
/// for every contributing (plane pair, kernel tap, output row) combination. `ix_base` is the
/// input column for `ox = 0`, possibly negative.
#[inline]
fn for_each_tap(d: &ConvDims, mut f: impl FnMut(usize, usize, usize, usize, usize, usize, usize, isize)) {
    let g = d.geom;
    let (kh, kw) = (d.kernel.height, d.kernel.width);
    for b in 0..d.input.batch {
        for oc in 0..d.output.channels {
            let group = oc / d.out_per_group();
            let out_plane = b * d.output.channels + oc;
            for icl in 0..d.in_per_group() {
                let ic = group * d.in_per_group() + icl;
                let in_plane = b * d.input.channels + ic;
                for ky in 0..kh {
                    let (oy_lo, oy_hi) =
                        valid_range(ky, g.padding, g.stride, d.input.height, d.output.height);
                    for kx in 0..kw {
                        let (ox_lo, ox_hi) =
                            valid_range(kx, g.padding, g.stride, d.input.width, d.output.width);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let widx = ((oc * d.in_per_group() + icl) * kh + ky) * kw + kx;
                        let ix_base = kx as isize - g.padding as isize;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * g.stride + ky - g.padding;
                            f(out_plane, in_plane, widx, oy, iy, ox_lo, ox_hi, ix_base);
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward(d: &ConvDims, input: &[f64], weight: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (ho, wo) = (d.output.height, d.output.width);
    let (hi, wi) = (d.input.height, d.input.width);
    let stride = d.geom.stride;
    let mut out = vec![0.0; d.output.numel()];
    if let Some(bias) = bias {
        for (p, plane) in out.chunks_mut(ho * wo).enumerate() {
            plane.fill(bias[p % d.output.channels]);
        }
    }
    for_each_tap(d, |op, ip, widx, oy, iy, lo, hi_x, ix_base| {
        let w = weight[widx];
        let orow = &mut out[op * ho * wo + oy * wo..][..wo];
        let irow = &input[ip * hi * wi + iy * wi..][..wi];
        for ox in lo..hi_x {
            orow[ox] += w * irow[(ox * stride).wrapping_add(ix_base as usize)];
        }
    });
    out
}

fn conv_grad_input(d: &ConvDims, grad_out: &[f64], weight: &[f64]) -> Vec<f64> {
    let (ho, wo) = (d.output.height, d.output.width);
    let (hi, wi) = (d.input.height, d.input.width);
    let stride = d.geom.stride;
    let mut gin = vec![0.0; d.input.numel()];
    for_each_tap(d, |op, ip, widx, oy, iy, lo, hi_x, ix_base| {
        let w = weight[widx];
        let grow = &grad_out[op * ho * wo + oy * wo..][..wo];
        let irow = &mut gin[ip * hi * wi + iy * wi..][..wi];
        for ox in lo..hi_x {
            irow[(ox * stride).wrapping_add(ix_base as usize)] += w * grow[ox];
        }
    });
    gin
}

fn conv_grad_weight(d: &ConvDims, grad_out: &[f64], input: &[f64]) -> Vec<f64> {
    let (ho, wo) = (d.output.height, d.output.width);
    let (hi, wi) = (d.input.height, d.input.width);
    let stride = d.geom.stride;
    let mut gw = vec![0.0; d.kernel.numel()];
    for_each_tap(d, |op, ip, widx, oy, iy, lo, hi_x, ix_base| {
        let grow = &grad_out[op * ho * wo + oy * wo..][..wo];
        let irow = &input[ip * hi * wi + iy * wi..][..wi];
        let mut acc = 0.0;
        for ox in lo..hi_x {
            acc += grow[ox] * irow[(ox * stride).wrapping_add(ix_base as usize)];
        }
        gw[widx] += acc;
    });
    gw
}

fn grad_bias(grad_out: &Tensor, channels: usize) -> Tensor {
    let s = grad_out.shape();
    let mut gb = vec![0.0; channels];
    for (p, plane) in grad_out.data().chunks(s.plane()).enumerate() {
        gb[p % channels] += plane.iter().sum::<f64>();
    }
    Tensor::from_vec(Shape::new(1, channels, 1, 1), gb).expect("bias shape")
}

fn check_bias(op: &'static str, bias: Shape, channels: usize) -> Result<()> {
    if bias != Shape::new(1, channels, 1, 1) {
        return Err(Error::shape(
            op,
            format!("bias must have shape (1, {channels}, 1, 1), got {bias}"),
        ));
    }
    Ok(())
}

impl Graph {
    /// Cross-correlation of `input (B, Cin, H, W)` with `weight (Cout, Cin/groups, kH, kW)`
    /// plus an optional `(1, Cout, 1, 1)` bias.
    ///
    /// Output is `(B, Cout, floor((H + 2p - kH)/s) + 1, floor((W + 2p - kW)/s) + 1)`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    ) -> Result<Var> {
        let d = conv_dims("conv2d", self.shape(input), self.shape(weight), geom)?;
        if let Some(b) = bias {
            check_bias("conv2d", self.shape(b), d.output.channels)?;
        }
        let data = conv_forward(
            &d,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::from_vec(d.output, data)?;
        let mut parents = vec![input, weight];
        parents.extend(bias);
        self.record(
            "conv2d",
            value,
            &parents,
            Box::new(move |ctx| {
                let (x, w) = (ctx.inputs[0], ctx.inputs[1]);
                let gx = ctx.needs[0].then(|| {
                    Tensor::from_vec(d.input, conv_grad_input(&d, ctx.grad.data(), w.data()))
                        .expect("shape")
                });
                let gw = ctx.needs[1].then(|| {
                    Tensor::from_vec(d.kernel, conv_grad_weight(&d, ctx.grad.data(), x.data()))
                        .expect("shape")
                });
                let mut out = vec![gx, gw];
                if ctx.inputs.len() == 3 {
                    out.push(ctx.needs[2].then(|| grad_bias(ctx.grad, d.output.channels)));
                }
                out
            }),
        )
    }

    /// Transposed convolution with `weight (Cin, Cout, kH, kW)`; the adjoint of
    /// [`Graph::conv2d`] with respect to its input.
    ///
    /// Output spatial size is `(H - 1)·stride − 2·padding + kH` (likewise for W).
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(input), self.shape(weight));
        if stride == 0 {
            return Err(Error::shape("conv_transpose2d", "stride must be at least 1"));
        }
        if ws.batch != xs.channels {
            return Err(Error::shape(
                "conv_transpose2d",
                format!(
                    "weight in-channels {} does not match input channels {}",
                    ws.batch, xs.channels
                ),
            ));
        }
        let out_h = ((xs.height.max(1) - 1) * stride + ws.height) as isize - 2 * padding as isize;
        let out_w = ((xs.width.max(1) - 1) * stride + ws.width) as isize - 2 * padding as isize;
        if out_h < 1 || out_w < 1 || xs.height == 0 || xs.width == 0 {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("padding {padding} leaves no output for input {xs} and kernel {ws}"),
            ));
        }
        let out_shape = Shape::new(xs.batch, ws.channels, out_h as usize, out_w as usize);
        // As a forward convolution this maps `out_shape` to `xs` with kernel `ws`.
        let d = conv_dims(
            "conv_transpose2d",
            out_shape,
            ws,
            ConvGeometry::new(stride, padding, 1),
        )?;
        if d.output != xs {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("inconsistent geometry: adjoint maps to {} not {xs}", d.output),
            ));
        }
        if let Some(b) = bias {
            check_bias("conv_transpose2d", self.shape(b), ws.channels)?;
        }
        let mut data = conv_grad_input(&d, self.value(input).data(), self.value(weight).data());
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for (p, plane) in data.chunks_mut(out_shape.plane()).enumerate() {
                let k = bv[p % out_shape.channels];
                plane.iter_mut().for_each(|v| *v += k);
            }
        }
        let value = Tensor::from_vec(out_shape, data)?;
        let mut parents = vec![input, weight];
        parents.extend(bias);
        self.record(
            "conv_transpose2d",
            value,
            &parents,
            Box::new(move |ctx| {
                let (x, w) = (ctx.inputs[0], ctx.inputs[1]);
                let gx = ctx.needs[0].then(|| {
                    Tensor::from_vec(d.output, conv_forward(&d, ctx.grad.data(), w.data(), None))
                        .expect("shape")
                });
                let gw = ctx.needs[1].then(|| {
                    Tensor::from_vec(d.kernel, conv_grad_weight(&d, x.data(), ctx.grad.data()))
                        .expect("shape")
                });
                let mut out = vec![gx, gw];
                if ctx.inputs.len() == 3 {
                    out.push(ctx.needs[2].then(|| grad_bias(ctx.grad, d.input.channels)));
                }
                out
            }),
        )
    }
}

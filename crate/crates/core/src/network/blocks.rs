//! Forward passes of the enhancer's building blocks. All of them preserve `(B, C, H, W)`.

use super::params::{CabParams, Conv, DanceParams, IelParams, LcaParams, SeParams};
use crate::error::{Error, Result};
use crate::tensor_core::{ConvGeometry, Graph, Shape, Var};

/// Floor on the L2 norm of attention query and key rows.
pub const ATTENTION_NORM_FLOOR: f64 = 1e-12;

fn check_width(g: &Graph, op: &'static str, x: Var, expected: usize) -> Result<()> {
    let c = g.shape(x).channels;
    if c != expected {
        return Err(Error::shape(op, format!("input has {c} channels, block expects {expected}")));
    }
    Ok(())
}

fn width_of(g: &Graph, c: &Conv<Var>) -> usize {
    g.shape(c.weight).batch
}

pub(crate) fn conv(g: &mut Graph, x: Var, c: &Conv<Var>, geom: ConvGeometry) -> Result<Var> {
    g.conv2d(x, c.weight, Some(c.bias), geom)
}

fn pointwise(g: &mut Graph, x: Var, c: &Conv<Var>) -> Result<Var> {
    conv(g, x, c, ConvGeometry::same(0))
}

fn conv3(g: &mut Graph, x: Var, c: &Conv<Var>) -> Result<Var> {
    conv(g, x, c, ConvGeometry::same(1))
}

fn depthwise3(g: &mut Graph, x: Var, c: &Conv<Var>) -> Result<Var> {
    let ch = g.shape(x).channels;
    conv(g, x, c, ConvGeometry::new(1, 1, ch))
}

/// Detail-aware noise correction:
///
/// ```text
/// Z0 = DW3(x)            Z1 = PW(leaky(Z0))      M = sigmoid(Z1)
/// Xden = x * M           F0 = leaky(C3(Xden))    Fdark = C3(F0)
/// s = GAP(Fdark)         w = sigmoid(PW(leaky(PW(s))))
/// Y = Xden + Fdark * w
/// ```
pub fn dance_forward(g: &mut Graph, x: Var, p: &DanceParams<Var>) -> Result<Var> {
    check_width(g, "dance", x, width_of(g, &p.noise_pw))?;
    let z0 = depthwise3(g, x, &p.noise_dw)?;
    let a0 = g.leaky_relu(z0, p.slope)?;
    let z1 = pointwise(g, a0, &p.noise_pw)?;
    let m = g.sigmoid(z1)?;
    let xden = g.mul(x, m)?;

    let f0 = conv3(g, xden, &p.dark1)?;
    let f0 = g.leaky_relu(f0, p.slope)?;
    let fdark = conv3(g, f0, &p.dark2)?;

    let s = g.pool_global_avg(fdark)?;
    let r = pointwise(g, s, &p.ca_reduce)?;
    let r = g.leaky_relu(r, p.slope)?;
    let w = pointwise(g, r, &p.ca_expand)?;
    let w = g.sigmoid(w)?;

    let gated = g.scale_channel(fdark, w)?;
    g.add(xden, gated)
}

/// `project(leaky(DW3(expand(x)))) * tanh(gate(x)) + x`.
pub fn iel_forward(g: &mut Graph, x: Var, p: &IelParams<Var>) -> Result<Var> {
    check_width(g, "iel", x, width_of(g, &p.project))?;
    let h = pointwise(g, x, &p.expand)?;
    let h = depthwise3(g, h, &p.dw)?;
    let h = g.leaky_relu(h, p.slope)?;
    let main = pointwise(g, h, &p.project)?;
    let gate = pointwise(g, x, &p.gate)?;
    let gate = g.tanh(gate)?;
    let y = g.mul(main, gate)?;
    g.add(y, x)
}

/// `x * (1 + tanh(fc2(relu(fc1(GAP(x))))))`.
pub fn se_forward(g: &mut Graph, x: Var, p: &SeParams<Var>) -> Result<Var> {
    check_width(g, "se", x, width_of(g, &p.fc2))?;
    let s = g.pool_global_avg(x)?;
    let h = pointwise(g, s, &p.fc1)?;
    let h = g.relu(h)?;
    let w = pointwise(g, h, &p.fc2)?;
    let w = g.tanh(w)?;
    let w = g.add_scalar(w, 1.0)?;
    g.scale_channel(x, w)
}

/// Divides every row of `(B, h, n, L)` by `max(|row|, 1e-12)`.
fn l2_normalise_rows(g: &mut Graph, x: Var) -> Result<Var> {
    let s = g.shape(x);
    let rows = g.reshape(x, Shape::new(s.batch, s.channels * s.height, 1, s.width))?;
    let sq = g.square(rows)?;
    // mean over the row times its length is the squared norm
    let ms = g.pool_global_avg(sq)?;
    let ss = g.scale(ms, s.width as f64)?;
    let ss = g.clamp_min(ss, ATTENTION_NORM_FLOOR * ATTENTION_NORM_FLOOR)?;
    let inv = g.powf(ss, -0.5)?;
    let normed = g.scale_channel(rows, inv)?;
    g.reshape(normed, s)
}

/// Attention weights of the channel attention, `(B, heads, C/heads, C/heads)`.
///
/// Each head attends over its own channels: rows of `softmax(q̂ k̂ᵀ · τ)`, where `q̂` and
/// `k̂` are the L2-normalised spatial maps of the head's channels.
pub fn cab_attention(g: &mut Graph, x: Var, p: &CabParams<Var>) -> Result<(Var, Var)> {
    let s = g.shape(x);
    check_width(g, "cab", x, width_of(g, &p.project))?;
    if p.heads == 0 || s.channels % p.heads != 0 {
        return Err(Error::shape(
            "cab",
            format!("{} channels cannot be split into {} heads", s.channels, p.heads),
        ));
    }
    let per_head = Shape::new(s.batch, p.heads, s.channels / p.heads, s.height * s.width);
    let branch = |g: &mut Graph, pw: &Conv<Var>, dw: &Conv<Var>| -> Result<Var> {
        let t = pointwise(g, x, pw)?;
        let t = depthwise3(g, t, dw)?;
        g.reshape(t, per_head)
    };
    let q = branch(g, &p.q, &p.q_dw)?;
    let k = branch(g, &p.k, &p.k_dw)?;
    let v = branch(g, &p.v, &p.v_dw)?;
    let q = l2_normalise_rows(g, q)?;
    let k = l2_normalise_rows(g, k)?;
    let kt = g.transpose_last2(k)?;
    let logits = g.batched_matmul(q, kt)?;
    let tau = g.exp(p.log_temperature)?;
    let logits = g.scale_channel(logits, tau)?;
    Ok((g.softmax_lastdim(logits)?, v))
}

/// Multi-head channel attention with a learnable temperature per head, projected by a
/// 1x1 convolution and added back to the input.
pub fn cab_forward(g: &mut Graph, x: Var, p: &CabParams<Var>) -> Result<Var> {
    let s = g.shape(x);
    let (attn, v) = cab_attention(g, x, p)?;
    let mixed = g.batched_matmul(attn, v)?;
    let mixed = g.reshape(mixed, s)?;
    let out = pointwise(g, mixed, &p.project)?;
    g.add(out, x)
}

/// CAB, then IEL, then DANCE, then SE.
pub fn enhanced_lca_forward(g: &mut Graph, x: Var, p: &LcaParams<Var>) -> Result<Var> {
    let x = cab_forward(g, x, &p.cab)?;
    let x = iel_forward(g, x, &p.iel)?;
    let x = dance_forward(g, x, &p.dance)?;
    se_forward(g, x, &p.se)
}

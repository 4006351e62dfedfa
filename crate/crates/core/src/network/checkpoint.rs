//! Binary checkpoints: a config header followed by every parameter tensor in declaration
//! order. Layout in `docs/formats.md`.

use std::fs;
use std::path::Path;

use super::{init_params, Network, NetworkConfig, SCALES};
use crate::error::{Error, Result};
use crate::perceptual_kl::Reader;
use crate::tensor_core::{Shape, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"LLFC";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

impl Network {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_u32(&mut out, c.base_width);
        for h in c.heads {
            put_u32(&mut out, h);
        }
        out.extend_from_slice(&c.leaky_slope.to_le_bytes());
        put_u32(&mut out, c.se_reduction);
        put_u32(&mut out, c.dance_reduction);
        put_u32(&mut out, c.iel_expansion);
        put_u32(&mut out, c.global_residual as usize);
        out.extend_from_slice(&c.seed.to_le_bytes());
        let tensors = self.params.flatten();
        put_u32(&mut out, tensors.len());
        for t in tensors {
            let s = t.shape();
            for d in [s.batch, s.channels, s.height, s.width] {
                put_u32(&mut out, d);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |detail: String| Error::Format {
            kind: "checkpoint",
            path: path.to_path_buf(),
            detail,
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(&bad)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = r.u32().map_err(&bad)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut u = || r.u32().map(|v| v as usize).map_err(&bad);
        let base_width = u()?;
        let mut heads = [0; SCALES];
        for h in &mut heads {
            *h = u()?;
        }
        let leaky_slope = r.f64().map_err(&bad)?;
        let mut u = || r.u32().map(|v| v as usize).map_err(&bad);
        let se_reduction = u()?;
        let dance_reduction = u()?;
        let iel_expansion = u()?;
        let global_residual = match u()? {
            0 => false,
            1 => true,
            v => return Err(bad(format!("residual flag must be 0 or 1, got {v}"))),
        };
        let seed = u64::from_le_bytes(r.take(8).map_err(&bad)?.try_into().unwrap());
        let config = NetworkConfig {
            base_width,
            heads,
            leaky_slope,
            se_reduction,
            dance_reduction,
            iel_expansion,
            global_residual,
            seed,
        };
        let template = init_params(&config).map_err(|e| bad(e.to_string()))?;
        let expected = template.flatten();
        let count = r.u32().map_err(&bad)? as usize;
        if count != expected.len() {
            return Err(bad(format!(
                "{count} parameter tensors, the config needs {}",
                expected.len()
            )));
        }
        let mut values = Vec::with_capacity(count);
        for (i, want) in expected.iter().enumerate() {
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = r.u32().map_err(&bad)? as usize;
            }
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            if shape != want.shape() {
                return Err(bad(format!("tensor {i} has shape {shape}, expected {}", want.shape())));
            }
            let data = r.f64s(shape.numel()).map_err(&bad)?;
            if data.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("tensor {i} holds non-finite values")));
            }
            values.push(Tensor::from_vec(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Network {
            params: template.with_values(values),
            config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

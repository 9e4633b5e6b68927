//! Parameter checkpoint container.
//!
//! All integers are little-endian. Layout (version 1):
//!
//! ```text
//! magic         8 bytes   "SETRCKPT"
//! version       u32       1
//! value_bytes   u32       4 (f32) or 8 (f64)
//! config        9 x u32   input_channels, window_len, model_dim, num_layers,
//!                         num_heads, ffn_hidden, se_reduction, pool_hidden,
//!                         num_classes
//! count         u32       number of tensors
//! per tensor, in canonical parameter order:
//!   name_len    u32
//!   name        name_len bytes of UTF-8 (e.g. "layers.0.w_q")
//!   rank        u32
//!   dims        rank x u32
//!   values      product(dims) x value_bytes, little-endian IEEE-754
//! ```

use std::fs;
use std::path::Path;

use super::{param_shapes, ModelConfig, ModelParams};
use crate::codec::{put_u32, Reader};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"SETRCKPT";
pub const VERSION: u32 = 1;

pub fn encode<F: Scalar>(config: &ModelConfig, params: &ModelParams<F>) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.count() * F::BYTES);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_u32(&mut out, F::BYTES);
    for v in config_fields(config) {
        put_u32(&mut out, v);
    }
    let entries = params.entries();
    put_u32(&mut out, entries.len());
    for (name, t) in entries {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for &v in t.data() {
            v.put_le(&mut out);
        }
    }
    out
}

fn config_fields(c: &ModelConfig) -> [usize; 9] {
    [
        c.input_channels,
        c.window_len,
        c.model_dim,
        c.num_layers,
        c.num_heads,
        c.ffn_hidden,
        c.se_reduction,
        c.pool_hidden,
        c.num_classes,
    ]
}

/// Decodes a checkpoint, converting stored values to precision `F`.
pub fn decode<F: Scalar>(bytes: &[u8]) -> Result<(ModelConfig, ModelParams<F>)> {
    let mut r = Reader::new(bytes, "checkpoint");
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version as u32 != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let width = r.u32()?;
    if width != 4 && width != 8 {
        return Err(Error::Format(format!("unsupported value width {width}")));
    }
    let mut f = [0usize; 9];
    for slot in &mut f {
        *slot = r.u32()?;
    }
    let config = ModelConfig {
        input_channels: f[0],
        window_len: f[1],
        model_dim: f[2],
        num_layers: f[3],
        num_heads: f[4],
        ffn_hidden: f[5],
        se_reduction: f[6],
        pool_hidden: f[7],
        num_classes: f[8],
    };
    config.validate()?;
    let expected = param_shapes(&config);
    let count = r.u32()?;
    if count != expected.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, configuration needs {}",
            expected.len()
        )));
    }
    let mut expected = expected.into_iter();
    let params = ModelParams::try_from_fn(config.num_layers, |want_name| {
        let (_, want_shape) = expected.next().expect("one shape per name");
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        if name != want_name {
            return Err(Error::Format(format!("expected tensor {want_name}, found {name}")));
        }
        let rank = r.u32()?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()?);
        }
        if shape != want_shape {
            return Err(Error::Format(format!(
                "tensor {name} has shape {shape:?}, expected {want_shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * width)?;
        let data = raw
            .chunks_exact(width)
            .map(|c| {
                if width == 4 {
                    F::lit(f32::get_le(c) as f64)
                } else {
                    F::lit(f64::get_le(c))
                }
            })
            .collect();
        Tensor::new(&shape, data)
    })?;
    r.finish()?;
    Ok((config, params))
}

pub fn save<F: Scalar>(path: &Path, config: &ModelConfig, params: &ModelParams<F>) -> Result<()> {
    fs::write(path, encode(config, params))?;
    Ok(())
}

pub fn load<F: Scalar>(path: &Path) -> Result<(ModelConfig, ModelParams<F>)> {
    decode(&fs::read(path)?)
}

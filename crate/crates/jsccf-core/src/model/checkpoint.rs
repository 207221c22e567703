//! Binary checkpoint format, bit-exact across save/load.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic      4 bytes  "JSCF"
//! version    u32
//! arch block:
//!   layers, height, width, channels, kernel   u32 each
//!   tx_estimate                               u8 (0 decoded, 1 zeroed)
//!   total_channel_uses                        u64
//!   channel_uses                              u64 x layers
//!   encoder/decoder/combiner widths           u32 count + u32 each, in order
//!   trained flags                             u8 x layers
//! params:
//!   count u32, then per record:
//!     name  u32 length + utf8 bytes
//!     rank  u32, extents u64 each
//!     data  f32 x product(extents)
//! ```

use std::io::Read;
use std::path::Path;

use crate::autodiff::Tensor;

use super::{build_model, ArchSpec, JsccModel, TxEstimate};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"JSCF";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes {found:02x?} at offset 0, expected \"JSCF\"")]
    BadMagic { found: [u8; 4] },
    #[error("incompatible checkpoint version {found}, this build reads version {expected}")]
    Version { found: u32, expected: u32 },
    #[error("truncated checkpoint: wanted {wanted} more bytes at offset {offset}")]
    Truncated { offset: usize, wanted: usize },
    #[error("malformed checkpoint at offset {offset}: {what}")]
    Malformed { offset: usize, what: String },
    #[error("checkpoint parameters do not match the architecture: {0}")]
    ParamMismatch(String),
    #[error("invalid architecture in checkpoint: {0}")]
    Arch(String),
}

struct Cursor<'a> {
    buf: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.offset + n > self.buf.len() {
            return Err(CheckpointError::Truncated {
                offset: self.offset,
                wanted: n,
            });
        }
        let out = &self.buf[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, CheckpointError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn write_widths(out: &mut Vec<u8>, widths: &[usize]) {
    out.extend_from_slice(&(widths.len() as u32).to_le_bytes());
    for &w in widths {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
}

fn read_widths(c: &mut Cursor) -> Result<Vec<usize>, CheckpointError> {
    let n = c.u32()? as usize;
    (0..n).map(|_| Ok(c.u32()? as usize)).collect()
}

/// Serializes architecture, trained flags, and every parameter tensor.
pub fn save_model(model: &JsccModel, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, model_to_bytes(model))?;
    Ok(())
}

/// The exact byte image [`save_model`] writes.
pub fn model_to_bytes(model: &JsccModel) -> Vec<u8> {
    let spec = model.spec();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [spec.layers, spec.height, spec.width, spec.channels, spec.kernel] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(match spec.tx_estimate {
        TxEstimate::Decoded => 0,
        TxEstimate::Zeroed => 1,
    });
    out.extend_from_slice(&(spec.total_channel_uses as u64).to_le_bytes());
    for &k in &spec.channel_uses {
        out.extend_from_slice(&(k as u64).to_le_bytes());
    }
    write_widths(&mut out, &spec.encoder_widths);
    write_widths(&mut out, &spec.decoder_widths);
    write_widths(&mut out, &spec.combiner_widths);
    for &t in model.trained_layers() {
        out.push(u8::from(t));
    }

    let params = model.named_params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (meta, tensor) in params {
        out.extend_from_slice(&(meta.name.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.name.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &e in tensor.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Rebuilds a model from a checkpoint; parameters load bit-exactly.
pub fn load_model(path: &Path) -> Result<JsccModel, CheckpointError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    load_model_bytes(&buf)
}

pub fn load_model_bytes(buf: &[u8]) -> Result<JsccModel, CheckpointError> {
    let mut c = Cursor { buf, offset: 0 };
    let magic = c.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic {
            found: magic.try_into().unwrap(),
        });
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let layers = c.u32()? as usize;
    let height = c.u32()? as usize;
    let width = c.u32()? as usize;
    let channels = c.u32()? as usize;
    let kernel = c.u32()? as usize;
    let tx_estimate = match c.u8()? {
        0 => TxEstimate::Decoded,
        1 => TxEstimate::Zeroed,
        other => {
            return Err(CheckpointError::Malformed {
                offset: c.offset - 1,
                what: format!("unknown tx_estimate tag {other}"),
            })
        }
    };
    let total_channel_uses = c.u64()? as usize;
    if layers == 0 || layers > 1 << 16 {
        return Err(CheckpointError::Malformed {
            offset: c.offset,
            what: format!("implausible layer count {layers}"),
        });
    }
    let channel_uses: Vec<usize> = (0..layers)
        .map(|_| Ok(c.u64()? as usize))
        .collect::<Result<_, CheckpointError>>()?;
    let encoder_widths = read_widths(&mut c)?;
    let decoder_widths = read_widths(&mut c)?;
    let combiner_widths = read_widths(&mut c)?;
    let trained: Vec<bool> = (0..layers)
        .map(|_| Ok(c.u8()? != 0))
        .collect::<Result<_, CheckpointError>>()?;

    let spec = ArchSpec {
        layers,
        total_channel_uses,
        channel_uses,
        height,
        width,
        channels,
        encoder_widths,
        decoder_widths,
        combiner_widths,
        kernel,
        tx_estimate,
    };
    let mut model = build_model(spec, 0).map_err(|e| CheckpointError::Arch(e.to_string()))?;
    model.set_trained_flags(trained);

    let count = c.u32()? as usize;
    let mut params = model.named_params_mut();
    if count != params.len() {
        return Err(CheckpointError::ParamMismatch(format!(
            "checkpoint holds {count} parameter records, architecture expects {}",
            params.len()
        )));
    }
    for (meta, tensor) in params.iter_mut() {
        let name_len = c.u32()? as usize;
        let name_off = c.offset;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| CheckpointError::Malformed {
                offset: name_off,
                what: "parameter name is not utf-8".into(),
            })?
            .to_string();
        if name != meta.name {
            return Err(CheckpointError::ParamMismatch(format!(
                "expected parameter {:?}, found {:?}",
                meta.name, name
            )));
        }
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u64()? as usize);
        }
        if shape != tensor.shape() {
            return Err(CheckpointError::ParamMismatch(format!(
                "parameter {:?} has extents {shape:?}, architecture expects {:?}",
                meta.name,
                tensor.shape()
            )));
        }
        let len = tensor.len();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(c.f32()?);
        }
        **tensor = Tensor::new(shape, data).expect("extent product checked");
    }
    if c.offset != buf.len() {
        return Err(CheckpointError::Malformed {
            offset: c.offset,
            what: format!("{} trailing bytes after last parameter", buf.len() - c.offset),
        });
    }
    Ok(model)
}


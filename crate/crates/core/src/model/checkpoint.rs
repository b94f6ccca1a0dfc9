//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic   b"FVCKPT01"
//! u64     config JSON length, then the JSON bytes
//! u32     tensor count
//! per tensor:
//!   u32 name length, name bytes (UTF-8)
//!   u32 rank, rank x u64 dims
//!   prod(dims) x f64 values, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{init_params, ModelConfig, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FVCKPT01";

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn write_checkpoint<W: Write>(
    out: &mut W,
    config: &ModelConfig,
    params: &ModelParams,
) -> Result<()> {
    let json = serde_json::to_vec(config)?;
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let tensors = params.tensors();
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        let name = t.name().as_bytes();
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in &t.values {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<(ModelConfig, ModelParams)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(format_err("not a checkpoint file (bad magic)"));
    }
    let json_len = read_u64(input)? as usize;
    if json_len > 1 << 24 {
        return Err(format_err(format!(
            "config block of {json_len} bytes is implausible"
        )));
    }
    let mut json = vec![0u8; json_len];
    input.read_exact(&mut json)?;
    let config: ModelConfig = serde_json::from_slice(&json)?;
    config.validate()?;

    // Seed is irrelevant: every value is overwritten below.
    let mut params = init_params(&config, 0)?;
    let count = read_u32(input)? as usize;
    let mut tensors = params.tensors_mut();
    if count != tensors.len() {
        return Err(format_err(format!(
            "checkpoint has {count} tensors, config implies {}",
            tensors.len()
        )));
    }
    for t in tensors.iter_mut() {
        let name_len = read_u32(input)? as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name)?;
        if name != t.name().as_bytes() {
            return Err(format_err(format!(
                "expected tensor {}, found {}",
                t.name(),
                String::from_utf8_lossy(&name)
            )));
        }
        let rank = read_u32(input)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u64(input)? as usize);
        }
        if dims != t.shape() {
            return Err(format_err(format!(
                "tensor {} has shape {dims:?}, config implies {:?}",
                t.name(),
                t.shape()
            )));
        }
        let mut buf = [0u8; 8];
        for v in t.values.iter_mut() {
            input.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(format_err("trailing bytes after last tensor"));
    }
    drop(tensors);
    Ok((config, params))
}

/// Writes to a temporary sibling and renames, so a failed save never leaves
/// a partial checkpoint at `path`.
pub fn save_checkpoint(path: &Path, config: &ModelConfig, params: &ModelParams) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut out = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        write_checkpoint(&mut out, config, params)?;
        out.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn round_trip_is_bit_exact() {
        for v in Variant::ALL {
            let config = ModelConfig::for_variant(v, 5, 7, 3);
            let mut params = init_params(&config, 17).unwrap();
            params.fusion_logit.values[0] = -0.123456789;
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &config, &params).unwrap();
            let (c2, p2) = read_checkpoint(&mut buf.as_slice()).unwrap();
            assert_eq!(c2, config);
            let bits = |p: &ModelParams| {
                p.flat_values()
                    .iter()
                    .map(|x| x.to_bits())
                    .collect::<Vec<_>>()
            };
            assert_eq!(bits(&p2), bits(&params));
        }
    }

    #[test]
    fn corruption_detected() {
        let config = ModelConfig::for_variant(Variant::Ours, 3, 2, 2);
        let params = init_params(&config, 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &config, &params).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_checkpoint(&mut bad.as_slice()),
            Err(Error::Format(_))
        ));

        let truncated = &buf[..buf.len() - 3];
        assert!(read_checkpoint(&mut &truncated[..]).is_err());

        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_checkpoint(&mut extra.as_slice()).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let config = ModelConfig::for_variant(Variant::Ce, 4, 3, 3);
        let params = init_params(&config, 2).unwrap();
        save_checkpoint(&path, &config, &params).unwrap();
        assert!(!path.with_extension("tmp").exists());
        let (c, p) = load_checkpoint(&path).unwrap();
        assert_eq!((c, p), (config, params));
    }
}

//! Versioned binary checkpoint.
//!
//! ```text
//! "CNVS" | version u32 | vocab_size dim layers heads max_len ffn_dim flags (u32 each)
//!        | tensors as f32 LE in declared order | SHA-256 of everything before
//! ```
//!
//! `flags` bit 0 = unit normalization, bit 1 = latest mean over pre-norm rows.
//! The fingerprint of a checkpoint is the hex trailer.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bytes::{put_f32s, put_u32, seal, sha256, unseal, Reader};
use crate::error::{Error, Result};

use super::params::{EncoderConfig, EncoderParams, LatestMeanSource, ModelDims, Tensors};

pub const MAGIC: &[u8; 4] = b"CNVS";
pub const VERSION: u32 = 1;

fn body(params: &EncoderParams) -> Vec<u8> {
    let dims = params.dims();
    let mut out = Vec::with_capacity(64 + params.tensors.len() * 4);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    for v in [dims.vocab_size, dims.dim, dims.layers, dims.heads, dims.max_len, dims.ffn_dim] {
        put_u32(&mut out, v as u32);
    }
    let mut flags = 0u32;
    if params.config.normalize {
        flags |= 1;
    }
    if params.config.latest_mean == LatestMeanSource::PreNorm {
        flags |= 2;
    }
    put_u32(&mut out, flags);
    for (_, _, t) in params.tensors.named() {
        put_f32s(&mut out, t.iter().map(|&v| v as f32));
    }
    out
}

pub fn to_bytes(params: &EncoderParams) -> Vec<u8> {
    seal(body(params))
}

/// Hex SHA-256 identifying these exact parameters and config.
pub fn fingerprint(params: &EncoderParams) -> String {
    hex::encode(sha256(&body(params)))
}

pub fn from_bytes(bytes: &[u8]) -> Result<EncoderParams> {
    let (rest, _) = unseal(bytes, MAGIC, "checkpoint", VERSION)?;
    let mut r = Reader::new(rest, "checkpoint");
    let mut header = [0usize; 6];
    for h in header.iter_mut() {
        *h = r.u32()? as usize;
    }
    let dims = ModelDims {
        vocab_size: header[0],
        dim: header[1],
        layers: header[2],
        heads: header[3],
        max_len: header[4],
        ffn_dim: header[5],
    };
    dims.validate()?;
    let flags = r.u32()?;
    let config = EncoderConfig {
        dims,
        normalize: flags & 1 != 0,
        latest_mean: if flags & 2 != 0 {
            LatestMeanSource::PreNorm
        } else {
            LatestMeanSource::Output
        },
    };
    let mut tensors = Tensors::zeros(&dims);
    for (_, _, t) in tensors.named_mut() {
        let values = r.f32s(t.len())?;
        for (dst, v) in t.iter_mut().zip(values) {
            *dst = v as f64;
        }
    }
    if !r.is_empty() {
        return Err(Error::Shape("checkpoint has trailing bytes".into()));
    }
    let params = EncoderParams { config, tensors };
    params.validate()?;
    Ok(params)
}

/// Human-readable description written next to the binary checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub fingerprint: String,
    pub config: EncoderConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_hash: Option<String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn save(params: &EncoderParams, path: impl AsRef<Path>, vocab_hash: Option<&str>) -> Result<String> {
    let path = path.as_ref();
    let bytes = to_bytes(params);
    let fp = hex::encode(&bytes[bytes.len() - 32..]);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    let sidecar = Sidecar {
        format_version: VERSION,
        fingerprint: fp.clone(),
        config: params.config,
        vocab_hash: vocab_hash.map(str::to_string),
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))?;
    Ok(fp)
}

pub fn load(path: impl AsRef<Path>) -> Result<EncoderParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Reads the sidecar if present.
pub fn load_sidecar(path: impl AsRef<Path>) -> Result<Option<Sidecar>> {
    let side = sidecar_path(path.as_ref());
    if !side.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::Parse(format!("{}: {e}", side.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> EncoderParams {
        let mut cfg = EncoderConfig::new(ModelDims::with(12, 8, 1, 2, 16));
        cfg.latest_mean = LatestMeanSource::PreNorm;
        EncoderParams::init(cfg, 11).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = params();
        let bytes = to_bytes(&p);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, p);
        assert_eq!(to_bytes(&back), bytes);
        assert_eq!(fingerprint(&back), hex::encode(&bytes[bytes.len() - 32..]));
    }

    #[test]
    fn corruption_is_a_checksum_error() {
        let mut bytes = to_bytes(&params());
        let n = bytes.len();
        assert!(matches!(from_bytes(&bytes[..n - 7]), Err(Error::Checksum(_))));
        bytes[40] ^= 0x10;
        assert!(matches!(from_bytes(&bytes), Err(Error::Checksum(_))));
        assert!(matches!(from_bytes(&bytes[..2]), Err(Error::Checksum(_))));
    }

    #[test]
    fn version_and_magic_are_checked() {
        let mut body = to_bytes(&params());
        body.truncate(body.len() - 32);
        body[4..8].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(
            from_bytes(&seal(body.clone())),
            Err(Error::VersionMismatch { found: 9, expected: 1 })
        ));
        body[0] = b'X';
        assert!(matches!(from_bytes(&seal(body)), Err(Error::BadMagic(_))));
    }

    #[test]
    fn sidecar_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cnvs");
        let fp = save(&params(), &path, Some("abc")).unwrap();
        let side = load_sidecar(&path).unwrap().unwrap();
        assert_eq!(side.fingerprint, fp);
        assert_eq!(side.vocab_hash.as_deref(), Some("abc"));
        assert_eq!(load(&path).unwrap(), params());
    }
}

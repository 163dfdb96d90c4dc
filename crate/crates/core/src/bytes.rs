//! Little-endian framing helpers shared by the binary file formats.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub(crate) const CHECKSUM_LEN: usize = 32;

pub(crate) fn sha256(bytes: &[u8]) -> [u8; CHECKSUM_LEN] {
    Sha256::digest(bytes).into()
}

/// Appends the SHA-256 trailer of everything written so far.
pub(crate) fn seal(mut body: Vec<u8>) -> Vec<u8> {
    let sum = sha256(&body);
    body.extend_from_slice(&sum);
    body
}

/// Checks trailer, magic and version, in that order, so any damaged byte is
/// a checksum error and an intact file of another kind is a magic error.
/// Returns the body after the version word together with the full body.
pub(crate) fn unseal<'a>(
    bytes: &'a [u8],
    magic: &[u8; 4],
    kind: &'static str,
    version: u32,
) -> Result<(&'a [u8], &'a [u8])> {
    if bytes.len() < 8 + CHECKSUM_LEN {
        return Err(Error::Checksum(format!("{kind} file truncated")));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if sha256(body) != trailer {
        return Err(Error::Checksum(format!("{kind} checksum does not match contents")));
    }
    if &body[..4] != magic {
        return Err(Error::BadMagic(kind));
    }
    let found = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
    if found != version {
        return Err(Error::VersionMismatch {
            found,
            expected: version,
        });
    }
    Ok((&body[8..], body))
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    kind: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], kind: &'static str) -> Self {
        Self { buf, kind }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Checksum(format!("{} file ends early", self.kind)));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Shape("tensor too large".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

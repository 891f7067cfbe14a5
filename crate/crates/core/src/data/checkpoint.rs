//! Binary checkpoints.
//!
//! All integers little-endian:
//!
//! ```text
//! magic     4 bytes  "CTXH"
//! version   u32      1
//! header    u32 length + UTF-8 JSON {"model": ..., "network": HourglassConfig}
//! repeated until end of file:
//!   name    u32 length + UTF-8
//!   rank    u8
//!   dims    rank × u32
//!   data    product(dims) × f32
//! ```
//!
//! Values are always stored in single precision.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hourglass::{HourglassConfig, ModelKind, Network};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"CTXH";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelKind,
    network: HourglassConfig,
}

/// Writes `bytes` to `path` through a temporary sibling and a rename, so
/// readers never observe a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name =
        path.file_name().ok_or_else(|| Error::Input { path: path.to_owned(), message: "not a file path".into() })?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp: PathBuf = path.with_file_name(tmp_name);
    let mut file = fs::File::create(&tmp)?;
    file.write_all(bytes)?;
    file.sync_all()?;
    drop(file);
    fs::rename(&tmp, path)?;
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Serializes a header and named tensors with the given magic.
pub(crate) fn encode_archive<T: Real>(magic: &[u8; 4], header: &str, tensors: &[(&str, &Tensor<T>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, header);
    for (name, t) in tensors {
        put_str(&mut out, name);
        let s = t.shape();
        out.push(4);
        for d in [s.n, s.c, s.h, s.w] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format { offset: self.pos as u64, message: message.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated {what}")));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let start = self.pos;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::Format { offset: start as u64, message: format!("{what} is not UTF-8") })
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Header string, its byte offset and the named tensors.
pub(crate) type Archive = (String, u64, Vec<(String, Tensor<f32>)>);

/// Parses an archive written by [`encode_archive`].
pub(crate) fn decode_archive(magic: &[u8; 4], bytes: &[u8]) -> Result<Archive> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != magic {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic, expected {:?}", String::from_utf8_lossy(magic)),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let header_offset = r.pos as u64;
    let header = r.string("header")?;
    let mut tensors = Vec::new();
    while !r.done() {
        let name = r.string("parameter name")?;
        let rank_at = r.pos;
        let rank = r.take(1, "rank")?[0] as usize;
        if rank == 0 || rank > 4 {
            return Err(Error::Format { offset: rank_at as u64, message: format!("rank {rank} not in 1..=4") });
        }
        let mut dims = [1usize; 4];
        for d in &mut dims[4 - rank..] {
            *d = r.u32("dimension")? as usize;
        }
        let shape_at = r.pos;
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3])
            .map_err(|e| Error::Format { offset: shape_at as u64, message: e.to_string() })?;
        let len = shape.len();
        let bytes_needed = len.checked_mul(4).ok_or_else(|| r.fail("tensor too large"))?;
        let raw = r.take(bytes_needed, &format!("data of {name}"))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        tensors.push((name, Tensor::from_vec(shape, data)?));
    }
    Ok((header, header_offset, tensors))
}

pub fn encode_checkpoint<T: Real>(net: &Network<T>) -> Vec<u8> {
    let header = Header { model: net.kind(), network: net.config().clone() };
    let header = serde_json::to_string(&header).expect("header serializes");
    let tensors: Vec<(&str, &Tensor<T>)> = net.params().iter().map(|p| (p.name.as_str(), &p.value)).collect();
    encode_archive(MAGIC, &header, &tensors)
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Network<T>> {
    let (header, offset, tensors) = decode_archive(MAGIC, bytes)?;
    let header: Header =
        serde_json::from_str(&header).map_err(|e| Error::Format { offset, message: format!("header: {e}") })?;
    let mut named = HashMap::new();
    for (name, t) in tensors {
        if named.insert(name.clone(), t.cast::<T>()).is_some() {
            return Err(Error::Format { offset, message: format!("duplicate parameter {name}") });
        }
    }
    Network::from_parameters(header.network, header.model.is_contextual(), named)
        .map_err(|e| Error::Format { offset, message: e.to_string() })
}

pub fn save_checkpoint<T: Real>(net: &Network<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(net))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Network<T>> {
    let bytes = fs::read(path).map_err(|e| Error::Input { path: path.to_owned(), message: e.to_string() })?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hourglass::{build_contextual_unet, build_unet, Head};
    use crate::rng::RngState;

    fn net() -> Network<f32> {
        build_contextual_unet(&HourglassConfig::new(2, 3, 1, 2, Head::SoftmaxSegmentation), &RngState::new(2)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let net = net();
        save_checkpoint(&net, &path).unwrap();
        let back: Network<f32> = load_checkpoint(&path).unwrap();
        assert_eq!(back, net);
        for (a, b) in back.params().iter().zip(net.params()) {
            assert!(a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let plain: Network<f32> =
            build_unet(&HourglassConfig::new(1, 2, 1, 1, Head::LinearDensity), &RngState::new(1)).unwrap();
        save_checkpoint(&plain, &path).unwrap();
        assert_eq!(load_checkpoint::<f32>(&path).unwrap(), plain);
        assert!(!dir.path().join(".a.ckpt.tmp").exists());
    }

    #[test]
    fn layout_starts_with_magic_and_version() {
        let bytes = encode_checkpoint(&net());
        assert_eq!(&bytes[..4], b"CTXH");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[12..12 + len]).unwrap();
        assert_eq!(header["model"], "contextual-unet");
        let name_len = u32::from_le_bytes(bytes[12 + len..16 + len].try_into().unwrap()) as usize;
        assert_eq!(&bytes[16 + len..16 + len + name_len], b"enc0.conv1.weight");
        assert_eq!(bytes[16 + len + name_len], 4);
    }

    #[test]
    fn every_truncation_is_a_format_error() {
        let bytes = encode_checkpoint(&net());
        for cut in (0..bytes.len()).step_by(7) {
            match decode_checkpoint::<f32>(&bytes[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_checkpoint(&net());
        bytes[4] = 2;
        assert!(matches!(decode_checkpoint::<f32>(&bytes), Err(Error::UnsupportedVersion(2))));
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint::<f32>(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn lower_rank_dims_are_left_padded() {
        let t = Tensor::<f32>::from_vec(Shape::new(1, 1, 1, 3).unwrap(), vec![1.0, 2.0, 3.0]).unwrap();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"TEST");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        put_str(&mut bytes, "{}");
        put_str(&mut bytes, "v");
        bytes.push(1);
        bytes.extend_from_slice(&3u32.to_le_bytes());
        for v in [1.0f32, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let (_, _, tensors) = decode_archive(b"TEST", &bytes).unwrap();
        assert_eq!(tensors, vec![("v".to_owned(), t)]);
    }
}

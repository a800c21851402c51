//! Versioned binary container for named parameter tensors.
//!
//! Layout (all integers little-endian):
//!   magic "CTDGCKPT", format version u32,
//!   manifest entry count u32, then (key, value) length-prefixed UTF-8 pairs,
//!   tensor count u32, then per tensor: name, rows u64, cols u64, raw f64
//!   payload. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::CtdgError;

const MAGIC: &[u8; 8] = b"CTDGCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    /// Hyperparameters and run metadata as ordered key/value pairs.
    pub manifest: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn manifest_get(&self, key: &str) -> Option<&str> {
        self.manifest
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), CtdgError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.manifest.len() as u32).to_le_bytes())?;
        for (k, v) in &self.manifest {
            write_str(w, k)?;
            write_str(w, v)?;
        }
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            write_str(w, name)?;
            w.write_all(&(t.rows() as u64).to_le_bytes())?;
            w.write_all(&(t.cols() as u64).to_le_bytes())?;
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Checkpoint, CtdgError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CtdgError::Checkpoint("bad magic bytes".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(CtdgError::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let n_manifest = read_u32(r)? as usize;
        let mut manifest = Vec::with_capacity(n_manifest);
        for _ in 0..n_manifest {
            let k = read_str(r)?;
            let v = read_str(r)?;
            manifest.push((k, v));
        }
        let n_tensors = read_u32(r)? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name = read_str(r)?;
            let rows = read_u64(r)? as usize;
            let cols = read_u64(r)? as usize;
            let mut data = vec![0.0f64; rows * cols];
            let mut buf = [0u8; 8];
            for v in data.iter_mut() {
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            tensors.push((name, Tensor::from_vec(rows, cols, data)));
        }
        Ok(Checkpoint { manifest, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), CtdgError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CtdgError> {
        let mut r = BufReader::new(File::open(path)?);
        Checkpoint::read_from(&mut r)
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<(), CtdgError> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String, CtdgError> {
    let len = read_u32(r)? as usize;
    if len > 1 << 24 {
        return Err(CtdgError::Checkpoint("unreasonable string length".into()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| CtdgError::Checkpoint("invalid UTF-8".into()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CtdgError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CtdgError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = Checkpoint {
            manifest: vec![("d".into(), "50".into()), ("seed".into(), "3".into())],
            tensors: vec![
                ("w".into(), Tensor::from_vec(2, 3, vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5e300, 1e-300, 2.0])),
                ("b".into(), Tensor::zeros(1, 4)),
            ],
        };
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.manifest, ckpt.manifest);
        assert_eq!(back.tensors.len(), 2);
        for ((na, ta), (nb, tb)) in back.tensors.iter().zip(ckpt.tensors.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            for (x, y) in ta.data().iter().zip(tb.data().iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let buf = b"NOTACKPT\x01\x00\x00\x00".to_vec();
        assert!(Checkpoint::read_from(&mut buf.as_slice()).is_err());
    }
}

//! Binary checkpoint format.
//!
//! Layout: magic `ADDC`, `u32` version, `u64` epoch, then tensors until end of
//! file. Each tensor is a `u16` name length, the UTF-8 name, a `u8` rank,
//! `u32` dims and the values as `f32`. Everything is little-endian.

use std::collections::HashMap;
use std::path::Path;

use crate::diffcore::{OptState, ParamSet, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ADDC";
pub const VERSION: u32 = 1;

/// A named tensor table plus the epoch it was taken at.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub epoch: u64,
    tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(epoch: u64) -> Self {
        Checkpoint {
            epoch,
            tensors: Vec::new(),
        }
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::contract(format!("checkpoint has no tensor `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.iter().any(|(n, _)| n == name)
    }

    pub fn insert_params(&mut self, prefix: &str, params: &ParamSet) {
        for (name, t) in params.iter() {
            self.insert(format!("{prefix}{name}"), t.clone());
        }
    }

    pub fn load_params(&self, prefix: &str, params: &mut ParamSet) -> Result<()> {
        let index: HashMap<&str, &Tensor> = self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        params.load_from(prefix, |k| index.get(k).copied())
    }

    /// Stores a `u64` exactly as four 16-bit limbs.
    pub fn insert_u64(&mut self, name: &str, value: u64) {
        let limbs = (0..4).map(|i| ((value >> (16 * i)) & 0xffff) as f32).collect();
        self.insert(name, Tensor::vector(limbs));
    }

    pub fn get_u64(&self, name: &str) -> Result<u64> {
        let t = self.get(name)?;
        if t.numel() != 4 {
            return Err(Error::contract(format!("`{name}` is not a u64 record")));
        }
        Ok(t
            .data()
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &x)| acc | ((x as u64) << (16 * i))))
    }

    pub fn insert_optimizer(&mut self, prefix: &str, opt: &OptState) {
        self.insert_u64(&format!("{prefix}step"), opt.step);
        for (i, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
            self.insert(format!("{prefix}m{i}"), m.clone());
            self.insert(format!("{prefix}v{i}"), v.clone());
        }
    }

    pub fn load_optimizer(&self, prefix: &str, opt: &mut OptState) -> Result<()> {
        opt.step = self.get_u64(&format!("{prefix}step"))?;
        for i in 0..opt.m.len() {
            for (kind, slot) in [("m", &mut opt.m[i]), ("v", &mut opt.v[i])] {
                let src = self.get(&format!("{prefix}{kind}{i}"))?;
                if src.shape() != slot.shape() {
                    return Err(Error::contract(format!("optimizer moment `{prefix}{kind}{i}` has the wrong shape")));
                }
                *slot = src.clone();
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        for (name, t) in &self.tensors {
            let len = u16::try_from(name.len()).map_err(|_| Error::contract(format!("tensor name too long: {name}")))?;
            let rank = u8::try_from(t.shape().len()).map_err(|_| Error::contract("tensor rank above 255"))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(rank);
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| Error::contract("tensor dimension above u32"))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(r.corrupt(0, "bad magic bytes"));
        }
        let version = u32::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(r.corrupt(4, &format!("unsupported version {version}, expected {VERSION}")));
        }
        let epoch = u64::from_le_bytes(r.array()?);
        let mut ck = Checkpoint::new(epoch);
        while r.pos < bytes.len() {
            let start = r.pos;
            let len = u16::from_le_bytes(r.array()?) as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| r.corrupt(start + 2, "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(r.array()?) as usize);
            }
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| r.corrupt(start, "tensor size overflows"))?;
            let raw = r.take(count.checked_mul(4).ok_or_else(|| r.corrupt(start, "tensor size overflows"))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            ck.insert(name, Tensor::new(shape, data)?);
        }
        Ok(ck)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, offset: usize, msg: &str) -> Error {
        Error::Corrupt {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            msg: msg.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt(self.pos, &format!("truncated: needed {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }
}

/// Writes through a temporary file so a crash never leaves a partial
/// checkpoint under the final name.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = ck.to_bytes()?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new(7);
        ck.insert("a.w", Tensor::matrix(2, 3, vec![1.0, -2.5, 3.0, f32::MIN_POSITIVE, 0.0, -0.0]).unwrap());
        ck.insert("s", Tensor::scalar(4.0));
        ck.insert("e", Tensor::zeros(&[0, 5]));
        ck.insert_u64("count", u64::MAX - 12345);
        ck
    }

    #[test]
    fn roundtrip_bytes() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, Path::new("x")).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.get_u64("count").unwrap(), u64::MAX - 12345);
        assert_eq!(back.epoch, 7);
    }

    #[test]
    fn every_truncation_is_rejected_with_offset() {
        let bytes = sample().to_bytes().unwrap();
        let mut boundaries = vec![];
        let mut ck = Checkpoint::new(7);
        boundaries.push(ck.to_bytes().unwrap().len());
        for (n, t) in sample().tensors() {
            ck.insert(n.clone(), t.clone());
            boundaries.push(ck.to_bytes().unwrap().len());
        }
        for cut in 0..bytes.len() {
            let res = Checkpoint::from_bytes(&bytes[..cut], Path::new("x"));
            if boundaries.contains(&cut) {
                assert!(res.is_ok());
            } else {
                assert!(matches!(res, Err(Error::Corrupt { .. })), "cut {cut}");
            }
        }
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4] = 2;
        match Checkpoint::from_bytes(&bytes, Path::new("x")) {
            Err(Error::Corrupt { offset, msg, .. }) => {
                assert_eq!(offset, 4);
                assert!(msg.contains("version"));
            }
            other => panic!("{other:?}"),
        }
    }
}

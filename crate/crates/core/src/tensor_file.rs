//! Named-section binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DPTN"  version:u32  n_sections:u32
//! per section: name_len:u32 name:[u8]  ndims:u32  dims:[u64; ndims]  payload:[f32; Π dims]
//! ```
//!
//! Payloads are `f32`, so values written from `f64` are rounded once; reading
//! and re-writing a file is then lossless.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DPTN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: Vec<f32>,
}

impl Section {
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| f64::from(*v)).collect()
    }

    fn element_count(dims: &[u64]) -> Option<usize> {
        dims.iter()
            .try_fold(1u64, |acc, d| acc.checked_mul(*d))
            .and_then(|n| usize::try_from(n).ok())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorFile {
    sections: Vec<Section>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    /// Add a section, rounding `data` to `f32`.
    pub fn push(&mut self, name: impl Into<String>, dims: &[usize], data: &[f64]) -> Result<()> {
        let dims: Vec<u64> = dims.iter().map(|d| *d as u64).collect();
        let name = name.into();
        if Section::element_count(&dims) != Some(data.len()) {
            return Err(Error::Format(format!(
                "section '{name}': dims {dims:?} do not match {} values",
                data.len()
            )));
        }
        if self.sections.iter().any(|s| s.name == name) {
            return Err(Error::Format(format!("duplicate section '{name}'")));
        }
        self.sections.push(Section {
            name,
            dims,
            data: data.iter().map(|v| *v as f32).collect(),
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Format(format!("missing section '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.sections.iter().any(|s| s.name == name)
    }

    /// Section values with the expected dims checked.
    pub fn values(&self, name: &str, dims: &[usize]) -> Result<Vec<f64>> {
        let s = self.get(name)?;
        let want: Vec<u64> = dims.iter().map(|d| *d as u64).collect();
        if s.dims != want {
            return Err(Error::Format(format!(
                "section '{name}' has dims {:?}, expected {want:?}",
                s.dims
            )));
        }
        Ok(s.to_f64())
    }

    /// Single scalar stored as a one-element section.
    pub fn scalar(&self, name: &str) -> Result<f64> {
        Ok(self.values(name, &[1])?[0])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for s in &self.sections {
            out.extend_from_slice(&(s.name.len() as u32).to_le_bytes());
            out.extend_from_slice(s.name.as_bytes());
            out.extend_from_slice(&(s.dims.len() as u32).to_le_bytes());
            for d in &s.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &s.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let n = r.u32()?;
        let mut file = TensorFile::new();
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("section name is not UTF-8".into()))?;
            let ndims = r.u32()? as usize;
            let dims = (0..ndims).map(|_| r.u64()).collect::<Result<Vec<u64>>>()?;
            let count = Section::element_count(&dims)
                .ok_or_else(|| Error::Format(format!("section '{name}' is too large")))?;
            let payload = r.take(count.checked_mul(4).ok_or_else(|| Error::Format("payload overflow".into()))?)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if file.contains(&name) {
                return Err(Error::Format(format!("duplicate section '{name}'")));
            }
            file.sections.push(Section { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after last section".into()));
        }
        Ok(file)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated tensor file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> TensorFile {
        let mut f = TensorFile::new();
        f.push("a", &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        f.push("scalar", &[1], &[0.25]).unwrap();
        f.push("empty", &[0, 4], &[]).unwrap();
        f
    }

    #[test]
    fn round_trip() {
        let f = sample();
        let g = TensorFile::from_bytes(&f.to_bytes()).unwrap();
        assert_eq!(f, g);
        assert_eq!(g.values("a", &[2, 3]).unwrap()[5], 6.0);
        assert_eq!(g.scalar("scalar").unwrap(), 0.25);
        assert!(g.values("a", &[3, 2]).is_err());
        assert!(g.get("nope").is_err());
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"DPTN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        // first section: name_len 1, "a", ndims 2, dims 2 and 3, six floats
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1);
        assert_eq!(bytes[16], b'a');
        assert_eq!(f32::from_le_bytes(bytes[37..41].try_into().unwrap()), 1.0);
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(TensorFile::from_bytes(&bytes), Err(Error::Format(_))));

        let mut bytes = sample().to_bytes();
        bytes[4] = 2;
        assert!(matches!(TensorFile::from_bytes(&bytes), Err(Error::UnsupportedVersion(2))));

        let bytes = sample().to_bytes();
        for cut in [3, 11, 20, bytes.len() - 1] {
            assert!(matches!(TensorFile::from_bytes(&bytes[..cut]), Err(Error::Format(_))));
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(TensorFile::from_bytes(&long).is_err());
    }

    #[test]
    fn push_validates() {
        let mut f = TensorFile::new();
        assert!(f.push("x", &[2], &[1.0]).is_err());
        f.push("x", &[1], &[1.0]).unwrap();
        assert!(f.push("x", &[1], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn second_round_trip_is_lossless(v in prop::collection::vec(-1e6f64..1e6, 0..50)) {
            let mut f = TensorFile::new();
            f.push("v", &[v.len()], &v).unwrap();
            let once = TensorFile::from_bytes(&f.to_bytes()).unwrap();
            let mut again = TensorFile::new();
            again.push("v", &[v.len()], &once.get("v").unwrap().to_f64()).unwrap();
            prop_assert_eq!(once.to_bytes(), again.to_bytes());
        }
    }
}

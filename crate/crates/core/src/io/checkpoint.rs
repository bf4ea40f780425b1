//! `SQZG1` checkpoint format.
//!
//! ```text
//! magic "SQZG1" | u32 version | u32 section count
//! per section: u32 name length | name (utf-8) | u8 dtype | u32 ndim | u64 dims... | payload
//! ```
//!
//! All integers and scalars are little-endian. Dtype 0 is raw bytes, 1 is
//! `f32`, 2 is `f64`. The first section, `config`, holds the canonical run
//! configuration text.

use std::path::Path;

use crate::error::{Error, Result};
use crate::params::{ParamLayout, Params};
use crate::tensor::{Scalar, Tensor};

use super::atomic_write;

pub const MAGIC: &[u8; 5] = b"SQZG1";
pub const VERSION: u32 = 1;
pub const DTYPE_BYTES: u8 = 0;
pub const CONFIG_SECTION: &str = "config";

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub dtype: u8,
    pub shape: Vec<usize>,
    /// Little-endian payload exactly as stored.
    pub payload: Vec<u8>,
}

impl Section {
    pub fn from_tensor<T: Scalar>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let mut payload = Vec::with_capacity(t.numel() * T::byte_width());
        for &v in t.data() {
            v.write_le(&mut payload);
        }
        Section {
            name: name.into(),
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            payload,
        }
    }

    pub fn tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        if self.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "section `{}` has dtype {}, expected {} ({})",
                self.name,
                self.dtype,
                T::DTYPE,
                T::NAME
            )));
        }
        let data = self
            .payload
            .chunks_exact(T::byte_width())
            .map(T::read_le)
            .collect();
        Tensor::new(&self.shape, data)
    }
}

fn dtype_width(dtype: u8) -> Result<usize> {
    match dtype {
        DTYPE_BYTES => Ok(1),
        1 => Ok(4),
        2 => Ok(8),
        _ => Err(Error::Checkpoint(format!("unknown dtype tag {dtype}"))),
    }
}

/// Ordered named sections.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub sections: Vec<Section>,
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
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn with_config(config_text: &str) -> Self {
        let bytes = config_text.as_bytes().to_vec();
        Checkpoint {
            sections: vec![Section {
                name: CONFIG_SECTION.into(),
                dtype: DTYPE_BYTES,
                shape: vec![bytes.len()],
                payload: bytes,
            }],
        }
    }

    pub fn push(&mut self, section: Section) -> Result<()> {
        if self.get(&section.name).is_some() {
            return Err(Error::Checkpoint(format!(
                "duplicate section `{}`",
                section.name
            )));
        }
        self.sections.push(section);
        Ok(())
    }

    /// Adds every parameter as `{prefix}{name}`.
    pub fn push_params<T: Scalar>(&mut self, prefix: &str, params: &Params<T>) -> Result<()> {
        for (name, t) in params.iter() {
            self.push(Section::from_tensor(format!("{prefix}{name}"), t))?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn config_text(&self) -> Result<String> {
        let s = self
            .get(CONFIG_SECTION)
            .ok_or_else(|| Error::Checkpoint("no config section".into()))?;
        String::from_utf8(s.payload.clone())
            .map_err(|_| Error::Checkpoint("config is not utf-8".into()))
    }

    /// Reads the arrays of `layout` stored under `prefix`, checking names,
    /// shapes and dtype before any tensor is built.
    pub fn params<T: Scalar>(&self, prefix: &str, layout: &ParamLayout) -> Result<Params<T>> {
        let mut named = Vec::with_capacity(layout.len());
        for spec in layout.specs() {
            let key = format!("{prefix}{}", spec.name);
            let s = self
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing section `{key}`")))?;
            if s.shape != spec.shape {
                return Err(Error::Checkpoint(format!(
                    "section `{key}` has shape {:?}, config expects {:?}",
                    s.shape, spec.shape
                )));
            }
            named.push((spec.name.clone(), s.tensor::<T>()?));
        }
        let extra = self
            .sections
            .iter()
            .filter(|s| s.name.starts_with(prefix) && s.name != CONFIG_SECTION)
            .count();
        if extra != layout.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {extra} sections under `{prefix}`, config declares {}",
                layout.len()
            )));
        }
        Params::from_named(layout, named)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for s in &self.sections {
            out.extend_from_slice(&(s.name.len() as u32).to_le_bytes());
            out.extend_from_slice(s.name.as_bytes());
            out.push(s.dtype);
            out.extend_from_slice(&(s.shape.len() as u32).to_le_bytes());
            for &d in &s.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&s.payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic (not an SQZG1 file)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("section name is not utf-8".into()))?
                .to_string();
            let dtype = r.u8()?;
            let width = dtype_width(dtype)?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(width))
                .ok_or_else(|| Error::Checkpoint(format!("section `{name}` is too large")))?;
            let payload = r.take(numel)?.to_vec();
            ck.push(Section {
                name,
                dtype,
                shape,
                payload,
            })?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last section",
                bytes.len() - r.pos
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Init, ParamKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layout() -> ParamLayout {
        let mut l = ParamLayout::new();
        l.declare(
            "a.weight",
            &[2, 3],
            Init::Normal { std: 1.0 },
            ParamKind::DenseWeight,
        );
        l.declare("a.bias", &[2], Init::Const(0.5), ParamKind::DenseBias);
        l
    }

    #[test]
    fn byte_layout_of_a_tiny_file() {
        let mut ck = Checkpoint::new();
        ck.push(Section::from_tensor(
            "x",
            &Tensor::<f32>::from_f64(&[1], &[1.0]).unwrap(),
        ))
        .unwrap();
        let b = ck.to_bytes();
        let want: Vec<u8> = [
            &b"SQZG1"[..],
            &[1, 0, 0, 0],
            &[1, 0, 0, 0],
            &[1, 0, 0, 0],
            b"x",
            &[1],
            &[1, 0, 0, 0],
            &[1, 0, 0, 0, 0, 0, 0, 0],
            &1.0f32.to_le_bytes(),
        ]
        .concat();
        assert_eq!(b, want);
    }

    #[test]
    fn params_round_trip_bit_exactly() {
        let p: Params<f64> = Params::init(&layout(), &mut ChaCha8Rng::seed_from_u64(2));
        let mut ck = Checkpoint::with_config("seed = 2\n");
        ck.push_params("g.", &p).unwrap();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.params::<f64>("g.", &layout()).unwrap(), p);
        assert_eq!(back.config_text().unwrap(), "seed = 2\n");
    }

    #[test]
    fn mismatches_are_reported() {
        let p: Params<f64> = Params::init(&layout(), &mut ChaCha8Rng::seed_from_u64(2));
        let mut ck = Checkpoint::new();
        ck.push_params("g.", &p).unwrap();
        assert!(ck.params::<f32>("g.", &layout()).is_err());
        let mut other = ParamLayout::new();
        other.declare(
            "a.weight",
            &[3, 2],
            Init::Const(0.0),
            ParamKind::DenseWeight,
        );
        other.declare("a.bias", &[2], Init::Const(0.0), ParamKind::DenseBias);
        assert!(ck.params::<f64>("g.", &other).is_err());
        assert!(ck.params::<f64>("h.", &layout()).is_err());
        assert!(ck.push_params("g.", &p).is_err());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut ck = Checkpoint::with_config("x");
        ck.push(Section::from_tensor("t", &Tensor::<f64>::zeros(&[2, 2])))
            .unwrap();
        let b = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&b[..b.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(&[b.as_slice(), &[0]].concat()).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = b;
        bad[5] = 9;
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}

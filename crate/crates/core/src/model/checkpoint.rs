//! Binary checkpoint: `ULCK`, u32 version, length-prefixed config and vocabulary
//! blobs, then named tensors (shape header + little-endian f32 payload).

use std::fs;
use std::path::Path;

use super::config::ModelConfig;
use super::transformer::Model;
use crate::autodiff::Array;
use crate::error::{Error, Result};
use crate::text::Vocabulary;

pub const MAGIC: &[u8; 4] = b"ULCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub vocab: Vocabulary,
}

impl Checkpoint {
    pub fn new(model: Model<f32>, vocab: Vocabulary) -> Result<Self> {
        if model.config().vocab_size != vocab.len() {
            return Err(Error::InvalidArgument(format!(
                "model vocab_size {} != vocabulary size {}",
                model.config().vocab_size,
                vocab.len()
            )));
        }
        Ok(Self { model, vocab })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_blob(&mut out, self.model.config().to_text().as_bytes());
        put_blob(&mut out, self.vocab.to_text().as_bytes());
        let names = self.model.param_names();
        out.extend_from_slice(&(names.len() as u32).to_le_bytes());
        for (name, p) in names.iter().zip(self.model.params()) {
            put_blob(&mut out, name.as_bytes());
            out.extend_from_slice(&(p.shape().len() as u32).to_le_bytes());
            for &dim in p.shape() {
                out.extend_from_slice(&(dim as u32).to_le_bytes());
            }
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::IncompatibleCheckpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::IncompatibleCheckpoint(format!("unsupported version {version}")));
        }
        let incompatible = |e: Error| Error::IncompatibleCheckpoint(e.to_string());
        let config = ModelConfig::from_text(&r.string()?).map_err(incompatible)?;
        let vocab = Vocabulary::from_text(&r.string()?).map_err(incompatible)?;
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count);
        let expected = super::transformer::param_layout(&config);
        if count != expected.len() {
            return Err(Error::IncompatibleCheckpoint(format!("expected {} tensors, found {count}", expected.len())));
        }
        for (want, _) in &expected {
            let name = r.string()?;
            if &name != want {
                return Err(Error::IncompatibleCheckpoint(format!("expected tensor {want}, found {name}")));
            }
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(4).ok_or(Error::TruncatedCheckpoint)?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            params.push(Array::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::IncompatibleCheckpoint("trailing bytes".into()));
        }
        let model = Model::from_params(config, params).map_err(incompatible)?;
        Self::new(model, vocab).map_err(incompatible)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_blob(out: &mut Vec<u8>, blob: &[u8]) {
    out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
    out.extend_from_slice(blob);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::TruncatedCheckpoint)?;
        let s = self.bytes.get(self.pos..end).ok_or(Error::TruncatedCheckpoint)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::IncompatibleCheckpoint("invalid utf-8 blob".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let vocab = Vocabulary::from_tokens(["a", "b", "c"]).unwrap();
        let cfg = ModelConfig { vocab_size: vocab.len(), embed_dim: 8, layers: 1, heads: 2, ff_dim: 12, max_seq_len: 10, dropout: 0.0 };
        Checkpoint::new(Model::init_with_std(cfg, 11, 0.5).unwrap(), vocab).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupted_header_is_incompatible() {
        let mut bytes = sample().to_bytes();
        bytes[1] ^= 0xff;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().starts_with("incompatible checkpoint"), "{err}");
        let mut bytes = sample().to_bytes();
        bytes[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::IncompatibleCheckpoint(_))));
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = sample().to_bytes();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::TruncatedCheckpoint)), "cut {cut}");
        }
    }
}

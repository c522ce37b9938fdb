//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! "UCD1"                    magic
//! u32                       format version (1)
//! u32, bytes                header length, UTF-8 TOML header
//! u32                       array count
//! per array, in parameter order:
//!   u32, bytes              name length, UTF-8 name
//!   u8                      dtype tag (1 = f32)
//!   u32, u64 * rank         rank, extents
//!   f32 * product(extents)  payload
//! ```
//!
//! The header holds the model configuration and, optionally, the vocabulary
//! the model was trained with. Array names, order and shapes must match what
//! the configuration produces.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError, ModelParameters};
use crate::autodiff::Tensor;
use crate::icd10::{Code, Vocabulary};

pub const MAGIC: &[u8; 4] = b"UCD1";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    vocabulary: Vec<Code>,
    config: ModelConfig,
}

pub fn save_checkpoint(path: &Path, model: &Model, vocab: Option<&Vocabulary>) -> Result<(), ModelError> {
    std::fs::write(path, encode(model, vocab)?).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Option<Vocabulary>), ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}

pub fn encode(model: &Model, vocab: Option<&Vocabulary>) -> Result<Vec<u8>, ModelError> {
    let header = Header {
        vocabulary: vocab.map(|v| v.codes().to_vec()).unwrap_or_default(),
        config: model.config.clone(),
    };
    let text = toml::to_string(&header).map_err(|e| ModelError::Header(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, t) in model.params.names().iter().zip(model.params.tensors()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(ModelError::Truncated {
                offset: self.pos,
                needed: n,
            });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Model, Option<Vocabulary>), ModelError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(ModelError::NotACheckpoint);
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(ModelError::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|e| ModelError::Header(e.to_string()))?;
    let header: Header = toml::from_str(text).map_err(|e| ModelError::Header(e.to_string()))?;
    header.config.validate()?;
    let vocab = if header.vocabulary.is_empty() {
        None
    } else {
        let v = Vocabulary::build(header.vocabulary.iter().copied())?;
        if v.len() != header.vocabulary.len() || v.len() != header.config.vocab_size {
            return Err(ModelError::Header(format!(
                "vocabulary of {} codes does not match vocab_size {}",
                header.vocabulary.len(),
                header.config.vocab_size
            )));
        }
        Some(v)
    };

    // Expected layout, derived from the configuration.
    let expected = ModelParameters::init(&header.config, 0)?;
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "file has {count} arrays, configuration needs {}",
            expected.len()
        )));
    }
    let mut params = ModelParameters::empty();
    for (want_name, want) in expected.names().iter().zip(expected.tensors()) {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?).map_err(|e| ModelError::Header(e.to_string()))?;
        if name != want_name {
            return Err(ModelError::ShapeMismatch(format!("expected array {want_name}, found {name}")));
        }
        let dtype = r.take(1)?[0];
        if dtype != DTYPE_F32 {
            return Err(ModelError::Header(format!("array {name}: unknown dtype tag {dtype}")));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        if shape != want.shape() {
            return Err(ModelError::ShapeMismatch(format!(
                "array {name}: header says {shape:?}, configuration needs {:?}",
                want.shape()
            )));
        }
        let payload = r.take(want.len() * 4)?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        params.push(name, Tensor::new(&shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(ModelError::Header(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((
        Model {
            config: header.config,
            params,
        },
        vocab,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icd10::code;

    fn toy() -> (Model, Vocabulary) {
        let vocab = Vocabulary::build((0..12).map(|i| code(&format!("A{i:02}")))).unwrap();
        (Model::new(ModelConfig::toy(), 5).unwrap(), vocab)
    }

    #[test]
    fn round_trip_is_stable() {
        let (m, v) = toy();
        let bytes = encode(&m, Some(&v)).unwrap();
        let (back, vb) = decode(&bytes).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(vb.unwrap(), v);
        assert_eq!(encode(&back, Some(&v)).unwrap(), bytes);
        for (a, b) in m.params.tensors().iter().zip(back.params.tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!((*x as f32).to_bits(), (*y as f32).to_bits());
            }
        }
    }

    #[test]
    fn distinct_errors() {
        let (m, v) = toy();
        let bytes = encode(&m, Some(&v)).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(ModelError::NotACheckpoint)));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode(&bad), Err(ModelError::UnsupportedVersion { found: 9, .. })));

        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(ModelError::Truncated { .. })));

        // A config whose layout differs from the stored arrays.
        let mut other = m.clone();
        other.config.block_counts = [1, 1, 0];
        let mut forged = encode(&other, None).unwrap();
        let tail = encode(&m, None).unwrap();
        let header_end = |b: &[u8]| 12 + u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
        forged.truncate(header_end(&forged));
        forged.extend_from_slice(&tail[header_end(&tail)..]);
        assert!(matches!(decode(&forged), Err(ModelError::ShapeMismatch(_))));
    }

    #[test]
    fn untied_head_rejected_at_load() {
        let (m, _) = toy();
        let bytes = encode(&m, None).unwrap();
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&bytes[12..12 + len]).unwrap();
        let edited = text.replace("head_width = 8", "head_width = 16");
        assert_ne!(edited, text);
        let mut forged = bytes[..8].to_vec();
        forged.extend_from_slice(&(edited.len() as u32).to_le_bytes());
        forged.extend_from_slice(edited.as_bytes());
        forged.extend_from_slice(&bytes[12 + len..]);
        let err = decode(&forged).unwrap_err();
        assert!(matches!(err, ModelError::Config(_)), "{err}");
    }
}

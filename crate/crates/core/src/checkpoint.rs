//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "MCRFSA\r\n" | u32 version
//! u32 len | config (canonical JSON)
//! u32 len | model dims (JSON)
//! u32 count | { u32 len | token }*
//! f64 accuracy | f64 macro_f1 | f64 f1[3] | u32 best_epoch
//! u32 count | { u32 len | name | u8 trainable | u32 rank | u64 dim* | f64 value* }*
//! ```

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::classifier::Metrics;
use crate::config::RunConfig;
use crate::ingest::Vocabulary;
use crate::model::{Model, ModelDims};
use crate::numerics::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"MCRFSA\r\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("not a checkpoint (bad magic bytes)")]
    Magic,
    #[error("unsupported checkpoint format version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("truncated checkpoint at byte {0}")]
    Truncated(usize),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("vocabulary mismatch: checkpoint vocab hash {checkpoint}, corpus vocab hash {found}")]
    VocabMismatch { checkpoint: String, found: String },
}

/// Everything needed to rebuild a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub dims: ModelDims,
    pub vocab: Vocabulary,
    pub dev_metrics: Metrics,
    pub best_epoch: usize,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_str(&mut out, &self.config.canonical_json());
        put_str(&mut out, &serde_json::to_string(&self.dims).expect("dims serialize"));
        put_u32(&mut out, self.vocab.len() as u32);
        for t in self.vocab.tokens() {
            put_str(&mut out, t);
        }
        let m = &self.dev_metrics;
        for v in [m.accuracy, m.macro_f1, m.f1[0], m.f1[1], m.f1[2]] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_u32(&mut out, self.best_epoch as u32);
        put_u32(&mut out, self.params.len() as u32);
        for (_, p) in self.params.iter() {
            put_str(&mut out, &p.name);
            out.push(p.trainable as u8);
            put_u32(&mut out, p.tensor.shape().len() as u32);
            for &d in p.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.tensor.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let config = RunConfig::from_canonical_json(&r.string()?).map_err(|e| CheckpointError::Malformed(format!("config: {e}")))?;
        let dims: ModelDims = serde_json::from_str(&r.string()?).map_err(|e| CheckpointError::Malformed(format!("dims: {e}")))?;
        let n = r.u32()? as usize;
        let tokens = (0..n).map(|_| r.string()).collect::<Result<Vec<_>, _>>()?;
        let vocab = Vocabulary::from_id_list(tokens).ok_or_else(|| CheckpointError::Malformed("vocabulary".into()))?;
        let mut m = [0.0; 5];
        for v in &mut m {
            *v = r.f64()?;
        }
        let dev_metrics = Metrics {
            accuracy: m[0],
            macro_f1: m[1],
            f1: [m[2], m[3], m[4]],
        };
        let best_epoch = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = r.string()?;
            let trainable = r.take(1)?[0] != 0;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let len: usize = shape.iter().product();
            if len > r.remaining() / 8 {
                return Err(CheckpointError::Truncated(r.pos));
            }
            let values = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            let tensor = Tensor::new(shape, values).map_err(|e| CheckpointError::Malformed(format!("{name}: {e}")))?;
            let id = params.add(name, tensor);
            params.set_trainable(id, trainable);
        }
        if r.remaining() != 0 {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", r.remaining())));
        }
        if dims.vocab_size != vocab.len() {
            return Err(CheckpointError::Malformed("dims disagree with vocabulary".into()));
        }
        Ok(Self {
            config,
            dims,
            vocab,
            dev_metrics,
            best_epoch,
            params,
        })
    }

    /// Write to a sibling temp file, then rename, so a failed save leaves nothing behind.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |e: std::io::Error| CheckpointError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let tmp = path.with_extension("partial");
        let result = (|| {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
            std::fs::rename(&tmp, path)
        })();
        if result.is_err() {
            let _ = std::fs::remove_file(&tmp);
        }
        result.map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_bytes(&bytes)
    }

    /// Rebuild the model, taking every tensor from the checkpoint by name.
    pub fn model(&self) -> Result<Model, CheckpointError> {
        let words = Tensor::zeros(vec![self.dims.vocab_size, self.dims.word_dim]);
        let mut model = Model::new(self.dims.clone(), Some(words), &mut ChaCha8Rng::seed_from_u64(0))
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        if model.params.len() != self.params.len() {
            return Err(CheckpointError::Malformed(format!(
                "expected {} tensors, found {}",
                model.params.len(),
                self.params.len()
            )));
        }
        for (_, p) in model.params.iter_mut() {
            let saved = self
                .params
                .by_name(&p.name)
                .map_err(|_| CheckpointError::Malformed(format!("missing tensor {}", p.name)))?;
            if saved.tensor.shape() != p.tensor.shape() {
                return Err(CheckpointError::Malformed(format!("tensor {} has shape {:?}", p.name, saved.tensor.shape())));
            }
            p.tensor = saved.tensor.clone();
            p.trainable = saved.trainable;
        }
        Ok(model)
    }

    /// Fail unless `vocab` is the one the model was trained with.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<(), CheckpointError> {
        let (checkpoint, found) = (self.vocab.digest(), vocab.digest());
        if checkpoint != found {
            return Err(CheckpointError::VocabMismatch { checkpoint, found });
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| CheckpointError::Malformed(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;

    fn sample() -> Checkpoint {
        let cfg = RunConfig {
            hidden: 32,
            word_dim: 6,
            crf_heads: 2,
            ..RunConfig::default()
        };
        let vocab = Vocabulary::from_tokens(["good", "food", "the"]);
        let dims = ModelDims::from_config(&cfg, vocab.len(), 7);
        let model = Model::new(dims.clone(), None, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        Checkpoint {
            config: cfg,
            dims,
            vocab,
            dev_metrics: Metrics {
                accuracy: 0.5,
                macro_f1: 0.25,
                f1: [0.1, 0.2, 0.3],
            },
            best_epoch: 3,
            params: model.params,
        }
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.model().unwrap().params, c.params);
    }

    #[test]
    fn rejects_damage() {
        let bytes = sample().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Magic)));
        let mut bad = bytes;
        bad[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Version(_))));
    }

    #[test]
    fn vocab_mismatch_names_hash() {
        let c = sample();
        let other = Vocabulary::from_tokens(["bad"]);
        let err = c.check_vocab(&other).unwrap_err().to_string();
        assert!(err.contains(&c.vocab.digest()));
        assert!(c.check_vocab(&c.vocab.clone()).is_ok());
    }
}

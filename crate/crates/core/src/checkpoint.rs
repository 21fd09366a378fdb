//! Binary checkpoints: a JSON header followed by raw little-endian `f64` parameter values.
//!
//! Layout: the 8-byte magic `STRYCKPT`, a little-endian `u32` format version, a
//! little-endian `u64` header length, the UTF-8 JSON header, then every parameter's
//! values in header order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{CharVocabulary, Vocabulary};
use crate::error::{Error, Result};
use crate::models::{EpochRecord, Model, ModelConfig, TrainedModel};

const MAGIC: &[u8; 8] = b"STRYCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocabulary,
    chars: CharVocabulary,
    vocab_hash: String,
    char_vocab_hash: String,
    params: Vec<ParamEntry>,
    history: Vec<EpochRecord>,
    best_epoch: Option<usize>,
    best_dev_metric: f64,
}

fn format_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Serializes a trained model into checkpoint bytes.
pub fn to_bytes(trained: &TrainedModel) -> Result<Vec<u8>> {
    let m = &trained.model;
    let header = Header {
        config: m.config.clone(),
        vocab: m.vocab.clone(),
        chars: m.chars.clone(),
        vocab_hash: m.vocab.content_hash(),
        char_vocab_hash: m.chars.content_hash(),
        params: m
            .params
            .iter()
            .map(|(_, name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        history: trained.history.clone(),
        best_epoch: trained.best_epoch,
        best_dev_metric: trained.best_dev_metric,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * m.params.num_values());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, t) in m.params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save(path: impl AsRef<Path>, trained: &TrainedModel) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(trained)?;
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}

/// Parses checkpoint bytes; `path` is only used in error messages.
pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<TrainedModel> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(format_error(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(format_error(path, format!("unsupported checkpoint version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = 20usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| format_error(path, "truncated header"))?;
    let header: Header =
        serde_json::from_slice(&bytes[20..body]).map_err(|e| format_error(path, format!("bad header: {e}")))?;
    if header.vocab.content_hash() != header.vocab_hash || header.chars.content_hash() != header.char_vocab_hash {
        return Err(format_error(path, "vocabulary hash mismatch"));
    }
    let mut model = Model::new(header.config, header.vocab, header.chars)?;
    if header.params.len() != model.params.len() {
        return Err(format_error(path, "parameter count does not match the configuration"));
    }
    let mut offset = body;
    for entry in &header.params {
        let tensor = model
            .params
            .by_name_mut(&entry.name)
            .ok_or_else(|| format_error(path, format!("unknown parameter {}", entry.name)))?;
        if tensor.shape() != entry.shape.as_slice() {
            return Err(format_error(path, format!("shape mismatch for {}", entry.name)));
        }
        let n = tensor.len();
        let end = offset + 8 * n;
        if end > bytes.len() {
            return Err(format_error(path, "truncated parameter data"));
        }
        for (v, chunk) in tensor.data_mut().iter_mut().zip(bytes[offset..end].chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        offset = end;
    }
    if offset != bytes.len() {
        return Err(format_error(path, "trailing bytes after parameter data"));
    }
    Ok(TrainedModel {
        model,
        history: header.history,
        best_epoch: header.best_epoch,
        best_dev_metric: header.best_dev_metric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic::keyword_corpus, Task};
    use crate::models::Architecture;

    fn trained() -> TrainedModel {
        let mut cfg = ModelConfig::reduced(Architecture::CnnRnnBidirecChar, Task::Multi);
        cfg.embedding_dim = 6;
        cfg.filters_per_width = 3;
        cfg.lstm_hidden = 4;
        cfg.char_embedding_dim = 3;
        cfg.char_filters_per_width = 2;
        let stories = keyword_corpus(10, 1);
        TrainedModel {
            model: Model::from_training_texts(cfg, stories.iter().map(|s| s.text.as_str())).unwrap(),
            history: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.1 + 0.2,
                dev_metric: 2.0 / 3.0,
            }],
            best_epoch: Some(1),
            best_dev_metric: 2.0 / 3.0,
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        let t = trained();
        let bytes = to_bytes(&t).unwrap();
        let back = from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.model.config, t.model.config);
        assert_eq!(back.model.vocab, t.model.vocab);
        assert_eq!(back.history, t.history);
        for ((_, n1, a), (_, n2, b)) in t.model.params.iter().zip(back.model.params.iter()) {
            assert_eq!(n1, n2);
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let bytes = to_bytes(&trained()).unwrap();
        assert!(matches!(from_bytes(b"nope", Path::new("x")), Err(Error::Format { .. })));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 3], Path::new("x")), Err(Error::Format { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(from_bytes(&extra, Path::new("x")), Err(Error::Format { .. })));
    }
}

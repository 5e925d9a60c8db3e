//! Versioned checkpoint container.
//!
//! Layout: a UTF-8 header (magic, model config, manifest of array names and
//! shapes, both vocabularies with byte lengths) followed by every array as
//! raw little-endian `f64` in manifest order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::params::{shapes, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::numcore::Array;
use crate::textprep::Vocabulary;

const MAGIC: &str = "MLCONV-CHECKPOINT 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
}

fn perr(msg: impl Into<String>) -> Error {
    Error::Parse {
        line: 0,
        msg: msg.into(),
    }
}

impl Checkpoint {
    pub fn new(params: ModelParams, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> Result<Self> {
        if params.config.src_vocab != src_vocab.len() || params.config.tgt_vocab != tgt_vocab.len() {
            return Err(Error::Contract(format!(
                "model expects vocabularies of {}/{} entries, got {}/{}",
                params.config.src_vocab,
                params.config.tgt_vocab,
                src_vocab.len(),
                tgt_vocab.len()
            )));
        }
        Ok(Self {
            params,
            src_vocab,
            tgt_vocab,
        })
    }

    /// Name and shape of every stored array, one per line.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        self.params.weights.for_each(|name, a| {
            let dims: Vec<String> = a.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(out, "{name} {}", dims.join("x"));
        });
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let src = self.src_vocab.to_text();
        let tgt = self.tgt_vocab.to_text();
        let manifest = self.manifest();
        let mut header = String::new();
        let _ = writeln!(header, "{MAGIC}");
        let _ = writeln!(header, "config {}", self.params.config.to_kv());
        let _ = writeln!(header, "manifest {}", manifest.lines().count());
        header.push_str(&manifest);
        let _ = writeln!(header, "src_vocab {}", src.len());
        header.push_str(&src);
        let _ = writeln!(header, "tgt_vocab {}", tgt.len());
        header.push_str(&tgt);
        let _ = writeln!(header, "data {}", self.params.num_parameters() * 8);
        let mut bytes = header.into_bytes();
        self.params.weights.for_each(|_, a| {
            for v in a.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        });
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let next_line = |pos: &mut usize| -> Result<String> {
            let rest = &bytes[*pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| perr("truncated checkpoint header"))?;
            let line = std::str::from_utf8(&rest[..end])
                .map_err(|_| perr("header is not UTF-8"))?
                .to_string();
            *pos += end + 1;
            Ok(line)
        };
        if next_line(&mut pos)? != MAGIC {
            return Err(perr("not a checkpoint (bad magic line)"));
        }
        let cfg_line = next_line(&mut pos)?;
        let config = ModelConfig::from_kv(
            cfg_line
                .strip_prefix("config ")
                .ok_or_else(|| perr("missing config line"))?,
        )?;
        let count: usize = next_line(&mut pos)?
            .strip_prefix("manifest ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| perr("missing manifest count"))?;
        let mut listed = Vec::with_capacity(count);
        for _ in 0..count {
            listed.push(next_line(&mut pos)?);
        }
        let read_block = |pos: &mut usize, key: &str| -> Result<String> {
            let line = next_line(pos)?;
            let n: usize = line
                .strip_prefix(key)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| perr(format!("missing {key} block")))?;
            let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| perr("truncated block"))?;
            let text = std::str::from_utf8(&bytes[*pos..end])
                .map_err(|_| perr("vocabulary is not UTF-8"))?
                .to_string();
            *pos = end;
            Ok(text)
        };
        let src_vocab = Vocabulary::from_text(&read_block(&mut pos, "src_vocab ")?)?;
        let tgt_vocab = Vocabulary::from_text(&read_block(&mut pos, "tgt_vocab ")?)?;
        let data_len: usize = next_line(&mut pos)?
            .strip_prefix("data ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| perr("missing data block"))?;
        if bytes.len() - pos != data_len {
            return Err(perr(format!(
                "data block holds {} bytes, header says {data_len}",
                bytes.len() - pos
            )));
        }

        let expected = shapes(&config);
        let mut want = Vec::new();
        expected.for_each(|name, shape| {
            let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
            want.push(format!("{name} {}", dims.join("x")));
        });
        if want != listed {
            return Err(perr("manifest does not match the model configuration"));
        }
        let mut offset = pos;
        let mut failure = None;
        let weights = expected.map(|_, shape| {
            let n: usize = shape.iter().product();
            let end = offset + 8 * n;
            let data: Vec<f64> = bytes[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset = end;
            Array::new(shape.clone(), data).unwrap_or_else(|e| {
                failure = Some(e);
                Array::zeros(&[1])
            })
        });
        if let Some(e) = failure {
            return Err(e);
        }
        let params = ModelParams { config, weights };
        if !params.is_finite() {
            return Err(perr("checkpoint contains non-finite values"));
        }
        Checkpoint::new(params, src_vocab, tgt_vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&bytes)
    }
}

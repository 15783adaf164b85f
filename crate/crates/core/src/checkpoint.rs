//! Model container: a directory holding `manifest.json`, `weights.bin`
//! (little-endian f32 tensors concatenated in manifest order) and, for models
//! with a vocabulary, `vocab.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Matrix, Params};
use crate::text::Vocabulary;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const WEIGHTS: &str = "weights.bin";
pub const VOCAB: &str = "vocab.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: String,
    pub dtype: String,
    pub vocab_hash: Option<String>,
    pub tensors: Vec<TensorEntry>,
    /// Model hyperparameters needed to rebuild the architecture.
    #[serde(default)]
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub params: Params,
    pub vocab: Option<Vocabulary>,
    pub config: serde_json::Value,
}

fn err(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

impl Checkpoint {
    pub fn new(kind: &str, params: Params, vocab: Option<Vocabulary>, config: serde_json::Value) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            params,
            vocab,
            config,
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut tensors = Vec::with_capacity(self.params.len());
        let mut bytes = Vec::new();
        for (name, m) in self.params.iter() {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: [m.rows, m.cols],
            });
            for &x in &m.data {
                bytes.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            dtype: "f32".into(),
            vocab_hash: self.vocab.as_ref().map(Vocabulary::hash),
            tensors,
            config: self.config.clone(),
        };
        fs::write(dir.join(WEIGHTS), bytes)?;
        if let Some(v) = &self.vocab {
            fs::write(dir.join(VOCAB), v.to_text())?;
        }
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(MANIFEST);
        let text = fs::read_to_string(&manifest_path)
            .map_err(|e| err(&manifest_path, format!("cannot read manifest: {e}")))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| err(&manifest_path, format!("invalid manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(err(
                &manifest_path,
                format!("unsupported format version {}", manifest.format_version),
            ));
        }
        if manifest.dtype != "f32" {
            return Err(err(&manifest_path, format!("unsupported dtype {}", manifest.dtype)));
        }

        let weights_path = dir.join(WEIGHTS);
        let bytes = fs::read(&weights_path).map_err(|e| err(&weights_path, e.to_string()))?;
        let expected: usize = manifest.tensors.iter().map(|t| t.shape[0] * t.shape[1]).sum();
        if bytes.len() != expected * 4 {
            return Err(err(
                &weights_path,
                format!("expected {} bytes, found {}", expected * 4, bytes.len()),
            ));
        }
        let mut params = Params::new();
        let mut floats = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        for t in &manifest.tensors {
            let n = t.shape[0] * t.shape[1];
            let data: Vec<f64> = floats.by_ref().take(n).collect();
            params.add(&t.name, Matrix::from_vec(t.shape[0], t.shape[1], data));
        }

        let vocab = match &manifest.vocab_hash {
            None => None,
            Some(hash) => {
                let vocab_path = dir.join(VOCAB);
                let text = fs::read_to_string(&vocab_path).map_err(|e| err(&vocab_path, e.to_string()))?;
                let v = Vocabulary::from_text(&text)?;
                if &v.hash() != hash {
                    return Err(err(&vocab_path, "vocabulary hash does not match manifest"));
                }
                Some(v)
            }
        };
        Ok(Checkpoint {
            kind: manifest.kind,
            params,
            vocab,
            config: manifest.config,
        })
    }

    /// Fails unless the container holds a model of `kind`.
    pub fn expect_kind(self, kind: &str, dir: &Path) -> Result<Self> {
        if self.kind != kind {
            return Err(err(dir, format!("expected a `{kind}` model, found `{}`", self.kind)));
        }
        Ok(self)
    }
}

/// Required container files that are absent under `dir`.
pub fn missing_files(dir: &Path) -> Vec<PathBuf> {
    [MANIFEST, WEIGHTS]
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| !p.exists())
        .collect()
}

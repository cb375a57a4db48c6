use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::ZeroShotClassifier;
use crate::error::{Error, Result};
use crate::pseudo_label::{EmbeddingMatrix, Patch, PromptSet};
use crate::tensor::ByteReader;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"SFODEMB1";
pub const TEXT_EMBEDDINGS_FILE: &str = "text.emb";
pub const PATCH_EMBEDDINGS_FILE: &str = "patches.emb";

const FLAG_NORMALIZED: u32 = 1;
const FLAG_KEYS: u32 = 2;
const WHAT: &str = "embedding file";

/// Contents of one embedding file: a matrix plus optional row keys (class
/// names for text files, patch keys for image files).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub matrix: EmbeddingMatrix,
    pub keys: Option<Vec<String>>,
}

impl EmbeddingFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let m = &self.matrix;
        let mut flags = 0;
        if m.normalized {
            flags |= FLAG_NORMALIZED;
        }
        if let Some(keys) = &self.keys {
            if keys.len() != m.rows {
                return Err(Error::Shape(format!("{} keys for {} rows", keys.len(), m.rows)));
            }
            flags |= FLAG_KEYS;
        }
        let mut out = Vec::with_capacity(20 + 4 * m.data.len());
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&(m.rows as u32).to_le_bytes());
        out.extend_from_slice(&(m.dim as u32).to_le_bytes());
        out.extend_from_slice(&flags.to_le_bytes());
        for v in &m.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for k in self.keys.iter().flatten() {
            let len = u16::try_from(k.len()).map_err(|_| Error::Invalid(format!("key too long: {k}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(k.as_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, WHAT);
        if r.take(8).map_err(|_| Error::format(WHAT, "bad magic"))? != EMBEDDING_MAGIC {
            return Err(Error::format(WHAT, "bad magic"));
        }
        let rows = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let flags = r.u32()?;
        if flags & !(FLAG_NORMALIZED | FLAG_KEYS) != 0 {
            return Err(Error::format(WHAT, format!("unknown flags {flags:#x}")));
        }
        let n = rows
            .checked_mul(dim)
            .filter(|n| n.checked_mul(4).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| Error::format(WHAT, format!("truncated: {rows}x{dim} does not fit")))?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f32()?);
        }
        let keys = if flags & FLAG_KEYS != 0 {
            let mut keys = Vec::with_capacity(rows);
            for _ in 0..rows {
                let len = r.u16()? as usize;
                let s = std::str::from_utf8(r.take(len)?)
                    .map_err(|_| Error::format(WHAT, "key is not UTF-8"))?;
                keys.push(s.to_string());
            }
            Some(keys)
        } else {
            None
        };
        r.finish()?;
        let matrix = EmbeddingMatrix::new(rows, dim, data, flags & FLAG_NORMALIZED != 0)?;
        Ok(EmbeddingFile { matrix, keys })
    }
}

pub fn write_embedding_file(path: &Path, file: &EmbeddingFile) -> Result<()> {
    std::fs::write(path, file.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn read_embedding_file(path: &Path) -> Result<EmbeddingFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingFile::from_bytes(&bytes)
}

/// Plain-text form: a header line `rows dim normalized keyed`, then one
/// line per row of whitespace-separated values, preceded by the key when
/// `keyed` is 1. Values use the shortest representation that parses back to
/// the same `f32`, so the round trip is exact.
pub fn write_embedding_text(file: &EmbeddingFile) -> Result<String> {
    let m = &file.matrix;
    let mut s = String::new();
    let _ = writeln!(s, "{} {} {} {}", m.rows, m.dim, m.normalized as u8, file.keys.is_some() as u8);
    for i in 0..m.rows {
        let mut fields: Vec<String> = Vec::with_capacity(m.dim + 1);
        if let Some(keys) = &file.keys {
            let k = &keys[i];
            if k.is_empty() || k.chars().any(char::is_whitespace) {
                return Err(Error::Invalid(format!("key `{k}` cannot be written as text")));
            }
            fields.push(k.clone());
        }
        fields.extend(m.row(i).iter().map(|v| format!("{v:?}")));
        s.push_str(&fields.join(" "));
        s.push('\n');
    }
    Ok(s)
}

pub fn read_embedding_text(text: &str) -> Result<EmbeddingFile> {
    const WHAT_T: &str = "embedding text";
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<usize> = lines
        .next()
        .ok_or_else(|| Error::format(WHAT_T, "empty input"))?
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(WHAT_T, "header must be `rows dim normalized keyed`"))?;
    let [rows, dim, normalized, keyed] = header[..] else {
        return Err(Error::format(WHAT_T, "header must be `rows dim normalized keyed`"));
    };
    let mut keys = Vec::new();
    let mut data = Vec::with_capacity(rows * dim);
    for (i, line) in lines.enumerate() {
        let mut fields = line.split_whitespace();
        if keyed == 1 {
            keys.push(fields.next().unwrap_or_default().to_string());
        }
        let vals: Vec<f32> = fields
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(WHAT_T, format!("row {i}: bad number")))?;
        if vals.len() != dim {
            return Err(Error::format(WHAT_T, format!("row {i}: {} values, expected {dim}", vals.len())));
        }
        data.extend(vals);
    }
    if data.len() != rows * dim {
        return Err(Error::format(WHAT_T, format!("{} rows, header says {rows}", data.len() / dim.max(1))));
    }
    Ok(EmbeddingFile {
        matrix: EmbeddingMatrix::new(rows, dim, data, normalized == 1)?,
        keys: (keyed == 1).then_some(keys),
    })
}

/// Serves embeddings computed by an external model. Nothing is ever
/// synthesized: a patch whose key is absent is an error.
#[derive(Debug, Clone, PartialEq)]
pub struct FileEmbeddingClassifier {
    text: EmbeddingMatrix,
    patches: EmbeddingMatrix,
    index: HashMap<String, usize>,
}

impl FileEmbeddingClassifier {
    pub fn new(text: EmbeddingFile, patches: EmbeddingFile, class_names: &[String]) -> Result<Self> {
        if text.matrix.rows != class_names.len() {
            return Err(Error::ClassCount {
                in_file: text.matrix.rows,
                expected: class_names.len(),
            });
        }
        if let Some(keys) = &text.keys {
            if keys != class_names {
                return Err(Error::format(
                    WHAT,
                    format!("text classes {keys:?} differ from configured {class_names:?}"),
                ));
            }
        }
        if text.matrix.dim != patches.matrix.dim {
            return Err(Error::Shape(format!(
                "text embeddings have dim {}, patch embeddings {}",
                text.matrix.dim, patches.matrix.dim
            )));
        }
        let keys = patches
            .keys
            .ok_or_else(|| Error::format(WHAT, "patch embedding file has no keys"))?;
        let mut index = HashMap::with_capacity(keys.len());
        for (i, k) in keys.into_iter().enumerate() {
            if index.insert(k.clone(), i).is_some() {
                return Err(Error::format(WHAT, format!("duplicate key `{k}`")));
            }
        }
        Ok(FileEmbeddingClassifier {
            text: text.matrix,
            patches: patches.matrix,
            index,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.text.rows
    }
}

/// Loads `text.emb` and `patches.emb` from `dir`.
pub fn load_file_embeddings(dir: &Path, class_names: &[String]) -> Result<FileEmbeddingClassifier> {
    let text = read_embedding_file(&dir.join(TEXT_EMBEDDINGS_FILE))?;
    let patches = read_embedding_file(&dir.join(PATCH_EMBEDDINGS_FILE))?;
    FileEmbeddingClassifier::new(text, patches, class_names)
}

impl ZeroShotClassifier for FileEmbeddingClassifier {
    fn dim(&self) -> usize {
        self.text.dim
    }

    fn embed_images(&self, patches: &[Patch]) -> Result<EmbeddingMatrix> {
        let dim = self.patches.dim;
        let mut data = Vec::with_capacity(patches.len() * dim);
        for p in patches {
            let key = &p
                .origin
                .as_ref()
                .ok_or_else(|| Error::Invalid("file embeddings need patch keys".into()))?
                .key;
            let &i = self.index.get(key).ok_or_else(|| Error::MissingKey(key.clone()))?;
            data.extend_from_slice(self.patches.row(i));
        }
        EmbeddingMatrix::new(patches.len(), dim, data, self.patches.normalized)
    }

    fn text_embeddings(&self, prompts: &PromptSet) -> Result<EmbeddingMatrix> {
        if prompts.len() != self.text.rows {
            return Err(Error::ClassCount {
                in_file: self.text.rows,
                expected: prompts.len(),
            });
        }
        Ok(self.text.clone())
    }
}

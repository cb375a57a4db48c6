use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{corrupt_image_with, CorruptionKind, CorruptionSpec, SeverityTable};
use crate::error::{Error, Result};
use crate::imaging::Image;

pub const MANIFEST_FILE: &str = "manifest.tsv";
const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntryStatus {
    /// Corrupted image written.
    Ok,
    /// Non-image file copied byte for byte.
    Copied,
    Failed(String),
}

impl EntryStatus {
    fn as_field(&self) -> String {
        match self {
            EntryStatus::Ok => "ok".into(),
            EntryStatus::Copied => "copied".into(),
            EntryStatus::Failed(msg) => {
                let clean: String = msg.chars().map(|c| if c.is_control() { ' ' } else { c }).collect();
                format!("failed: {clean}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Output path relative to the destination root, `/`-separated.
    pub path: String,
    pub kind: CorruptionKind,
    pub severity: u8,
    pub seed: u64,
    /// Hex SHA-256 of the written bytes; `None` when nothing was written.
    pub sha256: Option<String>,
    pub status: EntryStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Tab-separated, one header line, entries sorted by path.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("path\tkind\tseverity\tseed\tsha256\tstatus\n");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.path,
                e.kind,
                e.severity,
                e.seed,
                e.sha256.as_deref().unwrap_or("-"),
                e.status.as_field()
            );
        }
        s
    }

    pub fn failures(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| matches!(e.status, EntryStatus::Failed(_)))
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for path in entries {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.starts_with('.') {
            continue;
        }
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

fn is_image(rel: &Path) -> bool {
    rel.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn slash_path(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `dst/<kind>/<relative path>` for every file under `src`: images
/// are corrupted and saved as PNG, everything else (annotations) is copied
/// unchanged. An unreadable image is recorded as failed and skipped. The
/// manifest is returned and written to `dst/manifest.tsv`.
pub fn generate_dataset(
    src: &Path,
    dst: &Path,
    kinds: &[CorruptionKind],
    severity: u8,
    seed: u64,
    table: &SeverityTable,
) -> Result<Manifest> {
    for &k in kinds {
        CorruptionSpec::new(k, severity, seed)?;
    }
    let mut files = Vec::new();
    collect_files(src, src, &mut files)?;
    let jobs: Vec<(CorruptionKind, &PathBuf)> = kinds.iter().flat_map(|&k| files.iter().map(move |f| (k, f))).collect();
    let results: Vec<Result<ManifestEntry>> = jobs
        .par_iter()
        .map(|&(kind, rel)| {
            let spec = CorruptionSpec { kind, severity, seed };
            let src_path = src.join(rel);
            let out_rel = if is_image(rel) { rel.with_extension("png") } else { rel.clone() };
            let out_path = dst.join(kind.name()).join(&out_rel);
            if let Some(parent) = out_path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let entry = |sha256, status| ManifestEntry {
                path: format!("{}/{}", kind.name(), slash_path(&out_rel)),
                kind,
                severity,
                seed,
                sha256,
                status,
            };
            if !is_image(rel) {
                let bytes = std::fs::read(&src_path).map_err(|e| Error::io(&src_path, e))?;
                std::fs::write(&out_path, &bytes).map_err(|e| Error::io(&out_path, e))?;
                return Ok(entry(Some(sha256_hex(&bytes)), EntryStatus::Copied));
            }
            let image = match Image::load(&src_path) {
                Ok(img) => img,
                Err(e) => return Ok(entry(None, EntryStatus::Failed(e.to_string()))),
            };
            let corrupted = match corrupt_image_with(&image, &spec, &slash_path(rel), table) {
                Ok(img) => img,
                Err(e) => return Ok(entry(None, EntryStatus::Failed(e.to_string()))),
            };
            let bytes = corrupted.save_png(&out_path)?;
            Ok(entry(Some(sha256_hex(&bytes)), EntryStatus::Ok))
        })
        .collect();
    let mut entries = results.into_iter().collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest { entries };
    std::fs::create_dir_all(dst).map_err(|e| Error::io(dst, e))?;
    let mpath = dst.join(MANIFEST_FILE);
    std::fs::write(&mpath, manifest.to_tsv()).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

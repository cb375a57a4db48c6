//! Per-image text files.
//!
//! Detection line: `class_id score cx cy w h theta`.
//! Ground-truth line: `class_id cx cy w h theta`, optionally followed by the
//! word `difficult`. Fields are separated by single spaces, lines end with
//! `\n`, numbers use the shortest decimal form that parses back to the same
//! `f64`. Blank lines and lines starting with `#` are skipped on reading.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::GtObject;
use crate::error::{Error, Result};
use crate::geometry::OrientedBox;
use crate::pseudo_label::PseudoLabel;

pub fn format_detections(dets: &[PseudoLabel]) -> String {
    let mut s = String::new();
    for d in dets {
        let b = d.bbox;
        let _ = writeln!(s, "{} {} {} {} {} {} {}", d.class_id, d.score, b.cx, b.cy, b.w, b.h, b.theta);
    }
    s
}

pub fn format_ground_truth(gts: &[GtObject]) -> String {
    let mut s = String::new();
    for g in gts {
        let b = g.bbox;
        let _ = write!(s, "{} {} {} {} {} {}", g.class_id, b.cx, b.cy, b.w, b.h, b.theta);
        s.push_str(if g.difficult { " difficult\n" } else { "\n" });
    }
    s
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn numbers(what: &str, line_no: usize, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .map_err(|_| Error::format(what, format!("line {line_no}: `{f}` is not a number")))
        })
        .collect()
}

fn class_id(what: &str, line_no: usize, f: &str) -> Result<usize> {
    f.parse()
        .map_err(|_| Error::format(what, format!("line {line_no}: `{f}` is not a class id")))
}

fn make_box(what: &str, line_no: usize, v: &[f64]) -> Result<OrientedBox> {
    OrientedBox::new(v[0], v[1], v[2], v[3], v[4]).map_err(|e| Error::format(what, format!("line {line_no}: {e}")))
}

pub fn parse_detections(text: &str) -> Result<Vec<PseudoLabel>> {
    const WHAT: &str = "detection file";
    content_lines(text)
        .map(|(n, line)| {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 7 {
                return Err(Error::format(WHAT, format!("line {n}: expected 7 fields, got {}", f.len())));
            }
            let v = numbers(WHAT, n, &f[1..])?;
            Ok(PseudoLabel {
                class_id: class_id(WHAT, n, f[0])?,
                score: v[0],
                bbox: make_box(WHAT, n, &v[1..])?,
            })
        })
        .collect()
}

pub fn parse_ground_truth(text: &str) -> Result<Vec<GtObject>> {
    const WHAT: &str = "ground-truth file";
    content_lines(text)
        .map(|(n, line)| {
            let mut f: Vec<&str> = line.split_whitespace().collect();
            let difficult = f.last() == Some(&"difficult");
            if difficult {
                f.pop();
            }
            if f.len() != 6 {
                return Err(Error::format(WHAT, format!("line {n}: expected 6 fields, got {}", f.len())));
            }
            let v = numbers(WHAT, n, &f[1..])?;
            Ok(GtObject {
                bbox: make_box(WHAT, n, &v)?,
                class_id: class_id(WHAT, n, f[0])?,
                difficult,
            })
        })
        .collect()
}

fn read_txt_dir<T>(dir: &Path, parse: impl Fn(&str) -> Result<T>) -> Result<BTreeMap<String, T>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let parsed = parse(&text).map_err(|e| match e {
            Error::Format { what, message } => Error::format(what, format!("{}: {message}", path.display())),
            other => other,
        })?;
        out.insert(stem, parsed);
    }
    Ok(out)
}

/// `<image_id>.txt` files in `dir`, keyed by image id.
pub fn read_detection_dir(dir: &Path) -> Result<BTreeMap<String, Vec<PseudoLabel>>> {
    read_txt_dir(dir, parse_detections)
}

pub fn read_ground_truth_dir(dir: &Path) -> Result<BTreeMap<String, Vec<GtObject>>> {
    read_txt_dir(dir, parse_ground_truth)
}

pub fn write_detection_dir(dir: &Path, dets: &BTreeMap<String, Vec<PseudoLabel>>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (id, d) in dets {
        let path = dir.join(format!("{id}.txt"));
        std::fs::write(&path, format_detections(d)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

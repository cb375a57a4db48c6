use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::EvalResult;
use crate::corrupt::CorruptionKind;
use crate::error::{Error, Result};

/// mAP per corruption kind for one or more methods, plus the mean over
/// kinds. Columns follow the canonical kind order.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionTable {
    pub kinds: Vec<CorruptionKind>,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub label: String,
    pub values: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.1}", 100.0 * x))
}

impl CorruptionTable {
    /// Aligned table with values in percent.
    pub fn text(&self) -> String {
        let mut header = vec!["Model".to_string()];
        header.extend(self.kinds.iter().map(|k| k.short_label().to_string()));
        header.push("mAP".into());
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut line = vec![r.label.clone()];
                line.extend(r.values.iter().map(|&v| cell(v)));
                line.push(cell(r.mean));
                line
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|c| std::iter::once(&header).chain(&body).map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        for line in std::iter::once(&header).chain(&body) {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (v, w))| if i == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect();
            s.push_str(cells.join("  ").trim_end());
            s.push('\n');
        }
        s
    }

    /// Tab-separated rows, values as fractions with six decimals and `NA`
    /// where undefined.
    pub fn tsv(&self) -> String {
        let mut s = String::from("method");
        for k in &self.kinds {
            let _ = write!(s, "\t{}", k.name());
        }
        s.push_str("\tmean\n");
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
        for r in &self.rows {
            s.push_str(&r.label);
            for &v in &r.values {
                let _ = write!(s, "\t{}", fmt(v));
            }
            let _ = writeln!(s, "\t{}", fmt(r.mean));
        }
        s
    }
}

/// Single-row table from per-kind evaluation results.
pub fn corruption_table(label: &str, results: &BTreeMap<String, EvalResult>) -> Result<CorruptionTable> {
    let row: BTreeMap<String, Option<f64>> = results.iter().map(|(k, r)| (k.clone(), r.map)).collect();
    corruption_table_rows(&[(label.to_string(), row)])
}

/// Multi-row table; the column set is the union of kinds over all rows.
pub fn corruption_table_rows(rows: &[(String, BTreeMap<String, Option<f64>>)]) -> Result<CorruptionTable> {
    if rows.iter().all(|(_, m)| m.is_empty()) {
        return Err(Error::Invalid("corruption table needs at least one result".into()));
    }
    let mut kinds: Vec<CorruptionKind> = Vec::new();
    for (_, m) in rows {
        for name in m.keys() {
            let k: CorruptionKind = name.parse()?;
            if !kinds.contains(&k) {
                kinds.push(k);
            }
        }
    }
    kinds.sort();
    let rows = rows
        .iter()
        .map(|(label, m)| {
            let values: Vec<Option<f64>> = kinds.iter().map(|k| m.get(k.name()).copied().flatten()).collect();
            let defined: Vec<f64> = values.iter().flatten().copied().collect();
            let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
            TableRow {
                label: label.clone(),
                values,
                mean,
            }
        })
        .collect();
    Ok(CorruptionTable { kinds, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(pairs: &[(&str, f64)]) -> BTreeMap<String, Option<f64>> {
        pairs.iter().map(|(k, v)| (k.to_string(), Some(*v))).collect()
    }

    #[test]
    fn means() {
        let t = corruption_table_rows(&[("m".into(), row(&[("fog", 0.3)]))]).unwrap();
        assert_eq!(t.rows[0].mean, Some(0.3));
        let t = corruption_table_rows(&[("m".into(), row(&[("fog", 0.2), ("snow", 0.4)]))]).unwrap();
        assert!((t.rows[0].mean.unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(t.kinds, vec![CorruptionKind::Snow, CorruptionKind::Fog]);
    }

    #[test]
    fn full_table_has_canonical_columns() {
        let pairs: Vec<(&str, f64)> = CorruptionKind::ALL.iter().rev().map(|k| (k.name(), 0.5)).collect();
        let t = corruption_table_rows(&[("a".into(), row(&pairs)), ("b".into(), row(&pairs))]).unwrap();
        assert_eq!(t.kinds, CorruptionKind::ALL.to_vec());
        let tsv = t.tsv();
        let first_data = tsv.lines().nth(1).unwrap();
        assert_eq!(first_data.split('\t').count(), 22);
        assert!(tsv.starts_with("method\tgaussian_noise\tshot_noise"));
        assert_eq!(t.text(), t.clone().text());
        assert_eq!(t.text().lines().count(), 3);
    }

    #[test]
    fn rejects_unknown_and_empty() {
        assert!(corruption_table_rows(&[("m".into(), row(&[("rain", 0.2)]))]).is_err());
        assert!(corruption_table_rows(&[("m".into(), BTreeMap::new())]).is_err());
    }
}

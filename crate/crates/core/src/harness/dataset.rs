//! Small CSV datasets.
//!
//! The header is `feature_0,...,feature_{d-1},target` for regression or
//! `feature_0,...,feature_{d-1},label` for classification. Values are decimal
//! floats (labels: non-negative integers). LF and CRLF line endings are both
//! accepted; blank lines are skipped.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Targets(Vec<f64>),
    Labels(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_dim: usize,
    /// Row-major `rows x feature_dim`.
    pub features: Vec<f64>,
    pub outputs: Column,
}

impl Dataset {
    pub fn len(&self) -> usize {
        match &self.outputs {
            Column::Targets(t) => t.len(),
            Column::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// Number of classes for labelled data (largest label plus one).
    pub fn classes(&self) -> Option<usize> {
        match &self.outputs {
            Column::Labels(l) => Some(l.iter().max().map_or(0, |&m| m + 1)),
            Column::Targets(_) => None,
        }
    }

    /// Rows `[start, end)` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let d = self.feature_dim;
        Self {
            feature_dim: d,
            features: self.features[start * d..end * d].to_vec(),
            outputs: match &self.outputs {
                Column::Targets(t) => Column::Targets(t[start..end].to_vec()),
                Column::Labels(l) => Column::Labels(l[start..end].to_vec()),
            },
        }
    }
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::input(format!("{}: not UTF-8: {e}", path.display())))?;
    parse_csv(&text).map_err(|e| match e {
        Error::Input(msg) => Error::input(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_csv(text: &str) -> Result<Dataset> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::input("line 1: empty dataset"))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let (last, features) = names.split_last().expect("split yields at least one field");
    for (i, name) in features.iter().enumerate() {
        if *name != format!("feature_{i}") {
            return Err(Error::input(format!("line 1: column {} is `{name}`, expected `feature_{i}`", i + 1)));
        }
    }
    if features.is_empty() {
        return Err(Error::input("line 1: no feature columns"));
    }
    let labelled = match *last {
        "target" => false,
        "label" => true,
        other => return Err(Error::input(format!("line 1: last column is `{other}`, expected `target` or `label`"))),
    };
    let d = features.len();
    let mut data = Vec::new();
    let mut targets = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 1 {
            return Err(Error::input(format!("line {lineno}: {} fields, expected {}", fields.len(), d + 1)));
        }
        for (col, f) in fields[..d].iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::input(format!("line {lineno}: column {} `{f}` is not a number", col + 1)))?;
            if !v.is_finite() {
                return Err(Error::input(format!("line {lineno}: column {} is not finite", col + 1)));
            }
            data.push(v);
        }
        let out = fields[d];
        if labelled {
            let l: usize = out
                .parse()
                .map_err(|_| Error::input(format!("line {lineno}: label `{out}` is not a non-negative integer")))?;
            labels.push(l);
        } else {
            let v: f64 =
                out.parse().map_err(|_| Error::input(format!("line {lineno}: target `{out}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::input(format!("line {lineno}: target is not finite")));
            }
            targets.push(v);
        }
    }
    let outputs = if labelled { Column::Labels(labels) } else { Column::Targets(targets) };
    let ds = Dataset { feature_dim: d, features: data, outputs };
    if ds.is_empty() {
        return Err(Error::input("dataset has a header but no rows"));
    }
    Ok(ds)
}

//! libsvm text format ingestion.
//!
//! Grammar per line: `label idx:val idx:val ...` with 1-based, strictly
//! increasing feature indices. Indices are converted to 0-based internally.
//! Malformed input is reported with line and column numbers.

use anyhow::{bail, Result};
use bilevel::nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseDataset {
    /// Rows of `(label, [(0-based index, value)])`.
    pub rows: Vec<(f64, Vec<(usize, f64)>)>,
    pub n_features: usize,
}

impl SparseDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Densify into a design matrix and label vector.
    pub fn to_dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let mut a = DMatrix::zeros(self.rows.len(), self.n_features);
        let mut b = DVector::zeros(self.rows.len());
        for (i, (label, feats)) in self.rows.iter().enumerate() {
            b[i] = *label;
            for (j, v) in feats {
                a[(i, *j)] = *v;
            }
        }
        (a, b)
    }

    /// Serialize back to libsvm text (1-based indices).
    #[cfg_attr(not(test), allow(dead_code))]
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (label, feats) in &self.rows {
            out.push_str(&label.to_string());
            for (j, v) in feats {
                out.push_str(&format!(" {}:{}", j + 1, v));
            }
            out.push('\n');
        }
        out
    }
}

/// Parse libsvm text. Empty input gives an empty dataset with 0 features.
pub fn parse_libsvm(text: &str) -> Result<SparseDataset> {
    let mut ds = SparseDataset::default();
    for (ln0, raw) in text.lines().enumerate() {
        let ln = ln0 + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut col = 1usize;
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("split_whitespace on nonempty line");
        let label: f64 = label_tok.parse().map_err(|_| {
            anyhow::anyhow!("line {ln}, col {col}: non-numeric label '{label_tok}'")
        })?;
        col += label_tok.len() + 1;

        let mut feats: Vec<(usize, f64)> = Vec::new();
        let mut prev_idx: Option<usize> = None;
        for tok in tokens {
            let Some((i_str, v_str)) = tok.split_once(':') else {
                bail!("line {ln}, col {col}: expected idx:val, got '{tok}'");
            };
            let idx: usize = i_str.parse().map_err(|_| {
                anyhow::anyhow!("line {ln}, col {col}: non-numeric index '{i_str}'")
            })?;
            if idx == 0 {
                bail!("line {ln}, col {col}: indices are 1-based, got 0");
            }
            let val: f64 = v_str.parse().map_err(|_| {
                anyhow::anyhow!(
                    "line {ln}, col {}: non-numeric value '{v_str}'",
                    col + i_str.len() + 1
                )
            })?;
            if let Some(p) = prev_idx {
                if idx <= p {
                    bail!("line {ln}, col {col}: indices not strictly increasing ({p} then {idx})");
                }
            }
            prev_idx = Some(idx);
            feats.push((idx - 1, val));
            ds.n_features = ds.n_features.max(idx);
            col += tok.len() + 1;
        }
        ds.rows.push((label, feats));
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basic_row() {
        let ds = parse_libsvm("1 1:0.5 3:2.0\n").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.rows[0].0, 1.0);
        assert_eq!(ds.rows[0].1, vec![(0, 0.5), (2, 2.0)]);
        assert!(ds.n_features >= 3);
    }

    #[test]
    fn empty_input_is_empty_dataset() {
        let ds = parse_libsvm("").unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.n_features, 0);
    }

    #[test]
    fn non_increasing_indices_are_rejected_with_line() {
        let err = parse_libsvm("1 3:1 2:4\n").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
        assert!(err.contains("not strictly increasing"), "{err}");
    }

    #[test]
    fn non_numeric_token_names_line_and_col() {
        let err = parse_libsvm("1 1:0.5\nx 1:1\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(err.contains("col 1"), "{err}");
    }

    #[test]
    fn dense_conversion() {
        let ds = parse_libsvm("1 2:3.0\n-1 1:0.5 2:1.5\n").unwrap();
        let (a, b) = ds.to_dense();
        assert_eq!(a.nrows(), 2);
        assert_eq!(a.ncols(), 2);
        assert_eq!(a[(0, 1)], 3.0);
        assert_eq!(a[(1, 0)], 0.5);
        assert_eq!(b[1], -1.0);
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(
            rows in proptest::collection::vec(
                (
                    -5.0f64..5.0,
                    proptest::collection::btree_map(1usize..40, -2.0f64..2.0, 0..8),
                ),
                0..10,
            )
        ) {
            let ds = SparseDataset {
                n_features: rows
                    .iter()
                    .flat_map(|(_, m)| m.keys().copied())
                    .max()
                    .unwrap_or(0),
                rows: rows
                    .into_iter()
                    .map(|(l, m)| (l, m.into_iter().map(|(i, v)| (i - 1, v)).collect()))
                    .collect(),
            };
            let text = ds.to_text();
            let parsed = parse_libsvm(&text).unwrap();
            prop_assert_eq!(ds, parsed);
        }
    }
}

//! Fixed maximally-separated prototype matrix.
//!
//! For `n` classes the matrix has shape `(n - 1) x n`. Its columns are unit
//! vectors whose pairwise dot products all equal `-1 / (n - 1)`: the vertices
//! of a regular simplex centred at the origin. Multiplying a fused embedding
//! by this matrix yields one logit per class.
//!
//! The matrix is built bottom-up from the `1 x 2` base `[1, -1]`:
//!
//! ```text
//! P_k = | 1   -1/k  ...  -1/k           |
//!       | 0   sqrt(1 - 1/k^2) * P_{k-1} |
//! ```

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::error::{invalid, shape, Result};

/// Immutable `(n_classes - 1) x n_classes` prototype matrix, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationMatrix {
    n_classes: usize,
    entries: Vec<f64>,
}

/// One score per class.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Builds the prototype matrix for `n_classes` classes.
pub fn build_separation_matrix(n_classes: usize) -> Result<SeparationMatrix> {
    if n_classes < 2 {
        return Err(invalid(format!(
            "separation matrix needs at least 2 classes, got {n_classes}"
        )));
    }

    // `prev` holds P_{k-1} with shape (k-1) x k.
    let mut prev: Vec<f64> = vec![1.0, -1.0];
    for k in 2..n_classes {
        let kf = k as f64;
        let cols = k + 1;
        let prev_cols = k;
        let scale = (1.0 - 1.0 / (kf * kf)).sqrt();
        let mut next = vec![0.0; k * cols];
        next[0] = 1.0;
        next[1..cols].fill(-1.0 / kf);
        for r in 1..k {
            for c in 1..cols {
                next[r * cols + c] = scale * prev[(r - 1) * prev_cols + (c - 1)];
            }
        }
        prev = next;
    }

    Ok(SeparationMatrix {
        n_classes,
        entries: prev,
    })
}

impl SeparationMatrix {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Number of rows, which is also the required fused-embedding length.
    pub fn rows(&self) -> usize {
        self.n_classes - 1
    }

    pub fn cols(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.n_classes + col]
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    /// Prototype of class `col`.
    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows()).map(|r| self.get(r, col)).collect()
    }

    /// Computes `P * fused`.
    pub fn class_logits(&self, fused: &[f64]) -> Result<Logits> {
        if fused.len() != self.rows() {
            return Err(shape(format!(
                "fused embedding has length {}, matrix expects {}",
                fused.len(),
                self.rows()
            )));
        }
        let cols = self.n_classes;
        let mut out = vec![0.0; cols];
        for (r, &m) in fused.iter().enumerate() {
            let row = &self.entries[r * cols..(r + 1) * cols];
            for (o, &p) in out.iter_mut().zip(row) {
                *o += p * m;
            }
        }
        Ok(Logits(out))
    }

    /// Pulls an upstream logit gradient back to the fused embedding: `P^T g`.
    pub fn backward(&self, upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.n_classes {
            return Err(shape(format!(
                "logit gradient has length {}, matrix has {} classes",
                upstream.len(),
                self.n_classes
            )));
        }
        let cols = self.n_classes;
        Ok((0..self.rows())
            .map(|r| {
                self.entries[r * cols..(r + 1) * cols]
                    .iter()
                    .zip(upstream)
                    .map(|(p, g)| p * g)
                    .sum()
            })
            .collect())
    }

    /// Checks the simplex invariants and reports every violation found.
    pub fn verify(&self, tolerance: f64) -> SimplexReport {
        verify_simplex(self, tolerance)
    }

    /// Writes the matrix as row-major CSV with round-trippable precision.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in 0..self.rows() {
            let row: Vec<String> = (0..self.cols())
                .map(|c| format!("{:?}", self.get(r, c)))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()?;
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn from_raw(n_classes: usize, entries: Vec<f64>) -> Self {
        assert_eq!(entries.len(), (n_classes - 1) * n_classes);
        Self { n_classes, entries }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ColumnNorm {
        column: usize,
        deviation: f64,
    },
    PairwiseDot {
        first: usize,
        second: usize,
        deviation: f64,
    },
    /// Component `row` of the sum of all columns is not zero.
    ColumnSum {
        row: usize,
        deviation: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ColumnNorm { column, deviation } => {
                write!(f, "column {column}: norm off by {deviation:e}")
            }
            Violation::PairwiseDot {
                first,
                second,
                deviation,
            } => write!(
                f,
                "columns {first},{second}: dot product off by {deviation:e}"
            ),
            Violation::ColumnSum { row, deviation } => {
                write!(f, "column sum component {row} is {deviation:e}")
            }
        }
    }
}

/// Result of [`verify_simplex`]; empty when the matrix is valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimplexReport {
    pub violations: Vec<Violation>,
}

impl SimplexReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn verify_simplex(matrix: &SeparationMatrix, tolerance: f64) -> SimplexReport {
    let n = matrix.cols();
    let target_dot = -1.0 / (n as f64 - 1.0);
    let columns: Vec<Vec<f64>> = (0..n).map(|c| matrix.column(c)).collect();
    let mut violations = Vec::new();

    for (c, col) in columns.iter().enumerate() {
        let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        let deviation = norm - 1.0;
        if deviation.abs() > tolerance {
            violations.push(Violation::ColumnNorm {
                column: c,
                deviation,
            });
        }
    }

    for a in 0..n {
        for b in (a + 1)..n {
            let dot: f64 = columns[a].iter().zip(&columns[b]).map(|(x, y)| x * y).sum();
            let deviation = dot - target_dot;
            if deviation.abs() > tolerance {
                violations.push(Violation::PairwiseDot {
                    first: a,
                    second: b,
                    deviation,
                });
            }
        }
    }

    for r in 0..matrix.rows() {
        let sum: f64 = (0..n).map(|c| matrix.get(r, c)).sum();
        if sum.abs() > tolerance {
            violations.push(Violation::ColumnSum {
                row: r,
                deviation: sum,
            });
        }
    }

    SimplexReport { violations }
}

use std::fmt;

use super::Schedule;
use crate::error::{Result, SarError};

/// Dense row-major boolean matrix used for attention masks.
#[derive(Clone, PartialEq, Eq)]
pub struct BoolMatrix {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl BoolMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        BoolMatrix {
            rows,
            cols,
            data: vec![false; rows * cols],
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        BoolMatrix {
            rows,
            cols,
            data: vec![true; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = BoolMatrix::new(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        BoolMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Column indices allowed in row `r`.
    pub fn allowed(&self, r: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(r).iter().enumerate().filter(|(_, &b)| b).map(|(c, _)| c)
    }

    /// First row with no allowed entry, if any.
    pub fn empty_row(&self) -> Option<usize> {
        (0..self.rows).find(|&r| !self.row(r).iter().any(|&b| b))
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }
}

impl fmt::Debug for BoolMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BoolMatrix {}x{}", self.rows, self.cols)?;
        for r in 0..self.rows {
            let line: String = self.row(r).iter().map(|&b| if b { '1' } else { '.' }).collect();
            writeln!(f, "  {line}")?;
        }
        Ok(())
    }
}

/// Attention masks for one schedule: the staged mask used along the chain
/// and the full-visibility mask used by the smoothing pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fdam {
    pub staged: BoolMatrix,
    pub smoothing: BoolMatrix,
}

impl Fdam {
    pub fn n(&self) -> usize {
        self.staged.rows()
    }

    /// Full-visibility rows for interior positions; the given rows attend to
    /// themselves only since their outputs are never read.
    pub fn smoothing_mask(n: usize) -> BoolMatrix {
        BoolMatrix::from_fn(n, n, |r, c| if r == 0 || r + 1 == n { r == c } else { true })
    }
}

/// Row `source(o_i)` of the staged mask allows exactly `deps(o_i)`; rows that
/// are never a source only allow themselves.
pub fn derive_fdam(schedule: &Schedule, n: usize) -> Result<Fdam> {
    if n != schedule.n_positions {
        return Err(SarError::invalid(format!(
            "mask size {n} does not match schedule with {} positions",
            schedule.n_positions
        )));
    }
    let mut staged = BoolMatrix::new(n, n);
    let mut used = vec![false; n];
    for &t in &schedule.order {
        let row = schedule.source[&t];
        if row >= n {
            return Err(SarError::invalid(format!("source row {row} out of range")));
        }
        if std::mem::replace(&mut used[row], true) {
            return Err(SarError::Internal(format!("source row {row} used by two targets")));
        }
        for &d in &schedule.deps[&t] {
            if d >= n {
                return Err(SarError::invalid(format!("dependency {d} out of range")));
            }
            staged.set(row, d, true);
        }
    }
    for (r, _) in used.iter().enumerate().filter(|(_, &u)| !u) {
        staged.set(r, r, true);
    }
    Ok(Fdam {
        staged,
        smoothing: Fdam::smoothing_mask(n),
    })
}

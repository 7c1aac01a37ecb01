//! Incrementally updated Cholesky factor of a Gram submatrix, used by the
//! path-following solvers whose active sets grow and shrink by one column.

/// Upper-triangular R with RᵀR = G_A for the current active set A.
///
/// Column `j` of R is stored as a vector of its `j + 1` leading entries.
#[derive(Debug, Clone, Default)]
pub struct GramCholesky {
    cols: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankDeficient {
    pub pivot_sq: f64,
}

impl GramCholesky {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    /// Appends a column. `cross[i]` is the Gram entry between the new column
    /// and active column `i`; `diag` is its squared norm.
    ///
    /// Fails without modifying the factor when the new pivot is not
    /// numerically positive relative to `diag`.
    pub fn push(&mut self, cross: &[f64], diag: f64) -> Result<(), RankDeficient> {
        let k = self.cols.len();
        assert_eq!(cross.len(), k, "cross-product length must equal active size");
        let mut r = cross.to_vec();
        // Solve Rᵀ r = cross (forward substitution).
        for i in 0..k {
            let col = &self.cols[i];
            let mut s = r[i];
            for (l, rl) in r.iter().take(i).enumerate() {
                s -= col[l] * rl;
            }
            r[i] = s / col[i];
        }
        let pivot_sq = diag - r.iter().map(|v| v * v).sum::<f64>();
        if !(pivot_sq > 1e-12 * diag.abs().max(f64::MIN_POSITIVE)) {
            return Err(RankDeficient { pivot_sq });
        }
        r.push(pivot_sq.sqrt());
        self.cols.push(r);
        Ok(())
    }

    /// Deletes active column `idx`, restoring triangular form with Givens
    /// rotations.
    pub fn remove(&mut self, idx: usize) {
        self.cols.remove(idx);
        let k = self.cols.len();
        for j in idx..k {
            let (a, b) = {
                let c = &self.cols[j];
                (c[j], c[j + 1])
            };
            let r = a.hypot(b);
            let (cs, sn) = if r == 0.0 { (1.0, 0.0) } else { (a / r, b / r) };
            for l in j..k {
                let col = &mut self.cols[l];
                let x = col[j];
                let y = col[j + 1];
                col[j] = cs * x + sn * y;
                col[j + 1] = -sn * x + cs * y;
            }
            self.cols[j].truncate(j + 1);
            self.cols[j][j] = r;
        }
    }

    /// Solves G_A x = rhs.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let k = self.cols.len();
        assert_eq!(rhs.len(), k);
        let mut y = rhs.to_vec();
        for i in 0..k {
            let col = &self.cols[i];
            let mut s = y[i];
            for l in 0..i {
                s -= col[l] * y[l];
            }
            y[i] = s / col[i];
        }
        for i in (0..k).rev() {
            let mut s = y[i];
            for l in i + 1..k {
                s -= self.cols[l][i] * y[l];
            }
            y[i] = s / self.cols[i][i];
        }
        y
    }

    pub fn clear(&mut self) {
        self.cols.clear();
    }
}

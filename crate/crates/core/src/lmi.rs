//! Affine matrix expressions `F0 + Σ x_k F_k` and block assembly, used to
//! write LMIs in the same shape they are derived on paper.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::sdp::LmiBlock;

#[derive(Debug, Clone)]
pub struct Affine {
    pub constant: DMatrix<f64>,
    pub terms: Vec<(usize, DMatrix<f64>)>,
}

impl Affine {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            constant: DMatrix::zeros(rows, cols),
            terms: Vec::new(),
        }
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        Self {
            constant: m,
            terms: Vec::new(),
        }
    }

    pub fn var(k: usize, coeff: DMatrix<f64>) -> Self {
        let constant = DMatrix::zeros(coeff.nrows(), coeff.ncols());
        Self {
            constant,
            terms: vec![(k, coeff)],
        }
    }

    /// Scalar variable times the `dim × dim` identity.
    pub fn scalar_identity(k: usize, dim: usize) -> Self {
        Self::var(k, DMatrix::identity(dim, dim))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    pub fn add(&self, other: &Affine) -> Affine {
        assert_eq!(self.shape(), other.shape(), "affine shapes differ");
        let mut out = self.clone();
        out.constant += &other.constant;
        out.terms.extend(other.terms.iter().cloned());
        out
    }

    pub fn scale(&self, f: f64) -> Affine {
        Affine {
            constant: &self.constant * f,
            terms: self.terms.iter().map(|(k, m)| (*k, m * f)).collect(),
        }
    }

    /// `m · self`
    pub fn lmul(&self, m: &DMatrix<f64>) -> Affine {
        Affine {
            constant: m * &self.constant,
            terms: self.terms.iter().map(|(k, t)| (*k, m * t)).collect(),
        }
    }

    /// `self · m`
    pub fn rmul(&self, m: &DMatrix<f64>) -> Affine {
        Affine {
            constant: &self.constant * m,
            terms: self.terms.iter().map(|(k, t)| (*k, t * m)).collect(),
        }
    }

    pub fn transpose(&self) -> Affine {
        Affine {
            constant: self.constant.transpose(),
            terms: self
                .terms
                .iter()
                .map(|(k, t)| (*k, t.transpose()))
                .collect(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (k, t) in &self.terms {
            m += t * x[*k];
        }
        m
    }

    /// Assembles a block matrix. Row heights come from the first column and
    /// column widths from the first row.
    pub fn blocks(grid: &[Vec<Affine>]) -> Affine {
        let heights: Vec<usize> = grid.iter().map(|row| row[0].shape().0).collect();
        let widths: Vec<usize> = grid[0].iter().map(|b| b.shape().1).collect();
        let (rows, cols) = (heights.iter().sum(), widths.iter().sum());
        let mut out = Affine::zeros(rows, cols);
        let mut r0 = 0;
        for (i, row) in grid.iter().enumerate() {
            assert_eq!(row.len(), widths.len(), "ragged block row");
            let mut c0 = 0;
            for (j, b) in row.iter().enumerate() {
                assert_eq!(
                    b.shape(),
                    (heights[i], widths[j]),
                    "block ({i}, {j}) has the wrong shape"
                );
                out.constant
                    .view_mut((r0, c0), b.shape())
                    .copy_from(&b.constant);
                for (k, t) in &b.terms {
                    let mut full = DMatrix::zeros(rows, cols);
                    full.view_mut((r0, c0), b.shape()).copy_from(t);
                    out.terms.push((*k, full));
                }
                c0 += widths[j];
            }
            r0 += heights[i];
        }
        out
    }

    /// Symmetric block built from its lower triangle (`grid[i][j]`, `j ≤ i`).
    pub fn symmetric_blocks(lower: &[Vec<Affine>]) -> Affine {
        let n = lower.len();
        let grid: Vec<Vec<Affine>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if j <= i {
                            lower[i][j].clone()
                        } else {
                            lower[j][i].transpose()
                        }
                    })
                    .collect()
            })
            .collect();
        Affine::blocks(&grid)
    }

    /// Converts to a solver block; terms of the same variable are merged and
    /// every matrix is symmetrized.
    pub fn into_lmi(self, label: impl Into<String>) -> LmiBlock {
        assert_eq!(
            self.constant.nrows(),
            self.constant.ncols(),
            "LMI must be square"
        );
        let sym = |m: &DMatrix<f64>| (m + m.transpose()) * 0.5;
        let mut merged: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
        for (k, t) in &self.terms {
            merged
                .entry(*k)
                .and_modify(|acc| *acc += t)
                .or_insert_with(|| t.clone());
        }
        LmiBlock {
            label: label.into(),
            constant: sym(&self.constant),
            terms: merged
                .into_iter()
                .filter(|(_, t)| t.iter().any(|v| *v != 0.0))
                .map(|(k, t)| (k, sym(&t)))
                .collect(),
        }
    }
}

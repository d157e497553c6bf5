use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::min_eigenvalue;

/// One upper-triangular position of a PSD block, tied to a scalar:
/// `X[row][col] = X[col][row] = coeff * u[var]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub row: usize,
    pub col: usize,
    pub var: usize,
    pub coeff: f64,
}

/// A PSD block. Positions without an entry are fixed at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdBlock {
    pub name: String,
    pub dim: usize,
    pub entries: Vec<BlockEntry>,
}

impl PsdBlock {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
            entries: Vec::new(),
        }
    }

    /// Adds an entry; `row`/`col` may be given in either order.
    pub fn push(&mut self, row: usize, col: usize, var: usize, coeff: f64) {
        let (row, col) = if row <= col { (row, col) } else { (col, row) };
        self.entries.push(BlockEntry { row, col, var, coeff });
    }

    pub fn matrix(&self, u: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for e in &self.entries {
            let v = e.coeff * u[e.var];
            m[(e.row, e.col)] = v;
            m[(e.col, e.row)] = v;
        }
        m
    }
}

/// Sparse affine row `sum_k coeffs[k] * u[vars[k]]` compared against `rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub name: String,
    pub vars: Vec<usize>,
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

impl LinearRow {
    pub fn new(name: impl Into<String>, terms: impl IntoIterator<Item = (usize, f64)>, rhs: f64) -> Self {
        let (vars, coeffs) = terms.into_iter().unzip();
        Self {
            name: name.into(),
            vars,
            coeffs,
            rhs,
        }
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        self.vars.iter().zip(&self.coeffs).map(|(&v, &c)| c * u[v]).sum()
    }

    pub fn nnz(&self) -> usize {
        self.vars.len()
    }
}

/// `minimize c.u + sum q_i u_{idx_i}^2` subject to `A u = b`, `G u <= h`
/// and every block matrix PSD.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SdpProblem {
    pub n_vars: usize,
    pub blocks: Vec<PsdBlock>,
    pub equalities: Vec<LinearRow>,
    pub inequalities: Vec<LinearRow>,
    pub linear_objective: Vec<(usize, f64)>,
    pub quadratic_objective: Vec<(usize, f64)>,
}

impl SdpProblem {
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let var_ok = |v: usize, what: &str| {
            if v >= self.n_vars {
                Err(Error::Input(format!("{what}: variable {v} out of range (n_vars = {})", self.n_vars)))
            } else {
                Ok(())
            }
        };
        let finite = |x: f64, what: &str| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(Error::Input(format!("{what}: non-finite coefficient {x}")))
            }
        };
        for b in &self.blocks {
            if b.dim == 0 {
                return Err(Error::Input(format!("block {} has dimension 0", b.name)));
            }
            let mut seen = vec![false; b.dim * b.dim];
            for e in &b.entries {
                if e.row > e.col || e.col >= b.dim {
                    return Err(Error::Input(format!(
                        "block {}: entry ({}, {}) outside upper triangle of dim {}",
                        b.name, e.row, e.col, b.dim
                    )));
                }
                let slot = &mut seen[e.row * b.dim + e.col];
                if *slot {
                    return Err(Error::Input(format!(
                        "block {}: position ({}, {}) assigned twice",
                        b.name, e.row, e.col
                    )));
                }
                *slot = true;
                var_ok(e.var, &b.name)?;
                finite(e.coeff, &b.name)?;
            }
        }
        for r in self.equalities.iter().chain(&self.inequalities) {
            if r.vars.len() != r.coeffs.len() {
                return Err(Error::Input(format!("row {}: ragged coefficient list", r.name)));
            }
            for (&v, &c) in r.vars.iter().zip(&r.coeffs) {
                var_ok(v, &r.name)?;
                finite(c, &r.name)?;
            }
            finite(r.rhs, &r.name)?;
        }
        for &(v, c) in &self.linear_objective {
            var_ok(v, "objective")?;
            finite(c, "objective")?;
        }
        for &(v, q) in &self.quadratic_objective {
            var_ok(v, "objective")?;
            if !(q >= 0.0 && q.is_finite()) {
                return Err(Error::Input(format!("quadratic weight {q} on u[{v}] must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn objective(&self, u: &[f64]) -> f64 {
        let lin: f64 = self.linear_objective.iter().map(|&(v, c)| c * u[v]).sum();
        let quad: f64 = self.quadratic_objective.iter().map(|&(v, q)| q * u[v] * u[v]).sum();
        lin + quad
    }

    /// Largest absolute equality violation and largest inequality excess.
    pub fn constraint_residuals(&self, u: &[f64]) -> (f64, f64) {
        let eq = self
            .equalities
            .iter()
            .map(|r| (r.eval(u) - r.rhs).abs())
            .fold(0.0, f64::max);
        let ineq = self
            .inequalities
            .iter()
            .map(|r| (r.eval(u) - r.rhs).max(0.0))
            .fold(0.0, f64::max);
        (eq, ineq)
    }

    /// Minimum eigenvalue over all blocks (`+inf` when there are none).
    pub fn min_block_eigenvalue(&self, u: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| min_eigenvalue(&b.matrix(u)))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn nnz(&self) -> usize {
        self.equalities.iter().chain(&self.inequalities).map(LinearRow::nnz).sum::<usize>()
            + self.blocks.iter().map(|b| b.entries.len()).sum::<usize>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Feasible,
    Infeasible,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpSolution {
    pub u: Vec<f64>,
    pub status: SolveStatus,
    /// `max(equality violation, inequality excess, negative block eigenvalue)`.
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub min_block_eigenvalue: f64,
    pub objective: f64,
    pub iterations: usize,
}

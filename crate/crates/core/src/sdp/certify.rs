use nalgebra::{DMatrix, SymmetricEigen};

use super::problem::{SdpProblem, SdpSolution};

/// Recomputes every residual of `sol.u` against `p` from scratch,
/// ignoring the diagnostics stored in `sol`.
pub fn certify(sol: &SdpSolution, p: &SdpProblem, tol: f64) -> bool {
    certify_point(&sol.u, p, tol)
}

pub fn certify_point(u: &[f64], p: &SdpProblem, tol: f64) -> bool {
    if u.len() != p.n_vars || u.iter().any(|v| !v.is_finite()) {
        return false;
    }
    for r in &p.equalities {
        let mut s = -r.rhs;
        for k in 0..r.vars.len() {
            s += r.coeffs[k] * u[r.vars[k]];
        }
        if s.abs() > tol {
            return false;
        }
    }
    for r in &p.inequalities {
        let mut s = -r.rhs;
        for k in 0..r.vars.len() {
            s += r.coeffs[k] * u[r.vars[k]];
        }
        if s > tol {
            return false;
        }
    }
    for b in &p.blocks {
        let mut m = DMatrix::<f64>::zeros(b.dim, b.dim);
        for e in &b.entries {
            m[(e.row, e.col)] = e.coeff * u[e.var];
            m[(e.col, e.row)] = e.coeff * u[e.var];
        }
        let eig = SymmetricEigen::new(m);
        if eig.eigenvalues.iter().any(|&l| l < -tol) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::admm::{solve, SolverOptions};
    use crate::sdp::problem::{LinearRow, PsdBlock, SolveStatus};

    fn problem() -> SdpProblem {
        let mut p = SdpProblem::new(3);
        let mut b = PsdBlock::new("X", 2);
        b.push(0, 0, 0, 1.0);
        b.push(0, 1, 1, 1.0);
        b.push(1, 1, 2, 1.0);
        p.blocks.push(b);
        p.equalities.push(LinearRow::new("x12", [(1, 1.0)], 1.0));
        p.equalities.push(LinearRow::new("x22", [(2, 1.0)], 2.0));
        p.linear_objective.push((0, 1.0));
        p
    }

    #[test]
    fn optimal_solutions_certify() {
        let p = problem();
        let tol = 1e-7;
        let s = solve(&p, &SolverOptions { tol, ..Default::default() }).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!(certify(&s, &p, tol));
    }

    #[test]
    fn violated_equality_rejected() {
        let p = problem();
        let tol = 1e-7;
        let mut s = solve(&p, &SolverOptions { tol, ..Default::default() }).unwrap();
        s.u[2] += 10.0 * tol;
        assert!(!certify(&s, &p, tol));
    }

    #[test]
    fn hand_built_point() {
        let p = problem();
        assert!(certify_point(&[1.0, 1.0, 2.0], &p, 1e-12));
        assert!(!certify_point(&[0.4, 1.0, 2.0], &p, 1e-12));
        assert!(!certify_point(&[1.0, 1.0], &p, 1e-12));
    }
}

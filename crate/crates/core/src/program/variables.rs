use crate::sos::{Polynomial, Var};

/// Indeterminates of the relaxation: selectors `w_j`, the free predictor
/// coordinates `v_0..v_d` (the extended coordinate `v_{d+1}` is the
/// constant `-1`), and the upper triangle of each symmetric `Pi_j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramVariables {
    pub m: usize,
    pub d: usize,
}

impl ProgramVariables {
    pub fn new(m: usize, d: usize) -> Self {
        Self { m, d }
    }

    /// Side length of each `Pi_j`, `d + 2`.
    pub fn dim(&self) -> usize {
        self.d + 2
    }

    pub fn pi_entries(&self) -> usize {
        self.dim() * (self.dim() + 1) / 2
    }

    pub fn count(&self) -> usize {
        self.m + self.d + 1 + self.m * self.pi_entries()
    }

    pub fn w(&self, j: usize) -> Var {
        j as Var
    }

    pub fn v(&self, a: usize) -> Var {
        (self.m + a) as Var
    }

    pub fn pi(&self, j: usize, a: usize, b: usize) -> Var {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        let n = self.dim();
        // Row-major offset of (a, b) within the upper triangle.
        let offset = a * n - a * (a + 1) / 2 + b;
        (self.m + self.d + 1 + j * self.pi_entries() + offset) as Var
    }

    pub fn w_vars(&self) -> Vec<Var> {
        (0..self.m).map(|j| self.w(j)).collect()
    }

    pub fn v_vars(&self) -> Vec<Var> {
        (0..=self.d).map(|a| self.v(a)).collect()
    }

    /// `{v} ∪ {w_j} ∪ {Pi_j}`, the support of term `j`'s block.
    pub fn term_vars(&self, j: usize) -> Vec<Var> {
        let mut out = self.v_vars();
        out.push(self.w(j));
        for a in 0..self.dim() {
            for b in a..self.dim() {
                out.push(self.pi(j, a, b));
            }
        }
        out.sort_unstable();
        out
    }

    pub fn all_vars(&self) -> Vec<Var> {
        (0..self.count() as Var).collect()
    }

    /// `(v, -1)` as polynomials.
    pub fn v_ext(&self) -> Vec<Polynomial> {
        let mut out: Vec<Polynomial> = self.v_vars().into_iter().map(Polynomial::var).collect();
        out.push(Polynomial::constant(-1.0));
        out
    }

    pub fn pi_matrix(&self, j: usize) -> Vec<Vec<Polynomial>> {
        let n = self.dim();
        (0..n)
            .map(|a| (0..n).map(|b| Polynomial::var(self.pi(j, a, b))).collect())
            .collect()
    }

    pub fn name(&self, var: Var) -> String {
        let var = var as usize;
        if var < self.m {
            return format!("w{var}");
        }
        let var = var - self.m;
        if var <= self.d {
            return format!("v{var}");
        }
        let var = var - self.d - 1;
        let (j, mut off) = (var / self.pi_entries(), var % self.pi_entries());
        let n = self.dim();
        for a in 0..n {
            if off < n - a {
                return format!("Pi{j}[{a},{}]", a + off);
            }
            off -= n - a;
        }
        unreachable!("variable id within range")
    }

    /// Values of every program variable for a concrete assignment.
    pub fn assignment(&self, w: &[f64], v: &[f64], pis: &[nalgebra::DMatrix<f64>]) -> Vec<f64> {
        let mut point = vec![0.0; self.count()];
        for j in 0..self.m {
            point[self.w(j) as usize] = w[j];
            for a in 0..self.dim() {
                for b in a..self.dim() {
                    point[self.pi(j, a, b) as usize] = pis[j][(a, b)];
                }
            }
        }
        for a in 0..=self.d {
            point[self.v(a) as usize] = v[a];
        }
        point
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn ids_are_a_bijection() {
        let pv = ProgramVariables::new(3, 2);
        let mut seen = BTreeSet::new();
        for j in 0..3 {
            assert!(seen.insert(pv.w(j)));
            for a in 0..4 {
                for b in a..4 {
                    assert!(seen.insert(pv.pi(j, a, b)));
                    assert_eq!(pv.pi(j, a, b), pv.pi(j, b, a));
                }
            }
        }
        for a in 0..3 {
            assert!(seen.insert(pv.v(a)));
        }
        assert_eq!(seen.len(), pv.count());
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), pv.all_vars());
    }

    #[test]
    fn names() {
        let pv = ProgramVariables::new(2, 1);
        assert_eq!(pv.name(pv.w(1)), "w1");
        assert_eq!(pv.name(pv.v(1)), "v1");
        assert_eq!(pv.name(pv.pi(1, 2, 0)), "Pi1[0,2]");
        assert_eq!(pv.name(pv.pi(0, 2, 2)), "Pi0[2,2]");
    }
}

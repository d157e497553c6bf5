use indexmap::IndexMap;
use nalgebra::DMatrix;

use super::monomial::{monomial_basis, Monomial, Var};
use super::polynomial::Polynomial;
use crate::error::{Error, Result};
use crate::linalg::min_eigenvalue;

/// Truncated moment sequence `u_alpha` for monomials of degree `<= ell`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector {
    pub ell: u32,
    pub vars: Vec<Var>,
    values: IndexMap<Monomial, f64>,
}

impl MomentVector {
    /// Wraps explicit moment values. `u_0` must equal 1.
    pub fn new(vars: Vec<Var>, ell: u32, values: IndexMap<Monomial, f64>) -> Result<Self> {
        match values.get(&Monomial::one()) {
            Some(&u0) if (u0 - 1.0).abs() <= 1e-9 => {}
            other => {
                return Err(Error::Input(format!(
                    "moment vector must have u_0 = 1, got {other:?}"
                )))
            }
        }
        let mut vars = vars;
        vars.sort_unstable();
        vars.dedup();
        Ok(Self { ell, vars, values })
    }

    /// Moments of the point mass at `point` (indexed by position in `vars`).
    pub fn dirac(vars: &[Var], point: &[f64], ell: u32) -> Self {
        Self::empirical(vars, std::slice::from_ref(&point.to_vec()), ell)
    }

    /// Moments of the uniform distribution over `points`.
    pub fn empirical(vars: &[Var], points: &[Vec<f64>], ell: u32) -> Self {
        let basis = monomial_basis(vars, ell);
        let mut sorted = vars.to_vec();
        sorted.sort_unstable();
        let pos = |v: Var| vars.iter().position(|&w| w == v).expect("variable in basis");
        let inv = 1.0 / points.len() as f64;
        let values = basis
            .into_iter()
            .map(|m| {
                let s: f64 = points.iter().map(|p| m.eval_with(|v| p[pos(v)])).sum();
                (m, s * inv)
            })
            .collect();
        Self {
            ell,
            vars: sorted,
            values,
        }
    }

    pub fn get(&self, m: &Monomial) -> Result<f64> {
        self.values
            .get(m)
            .copied()
            .ok_or_else(|| Error::MissingMoment(m.to_string()))
    }

    pub fn set(&mut self, m: Monomial, value: f64) {
        self.values.insert(m, value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.values.iter().map(|(m, &v)| (m, v))
    }
}

/// `M(u)` over an explicit basis: entry `(a, b)` is `u_{a+b}`.
pub fn moment_matrix_on(u: &MomentVector, basis: &[Monomial]) -> Result<DMatrix<f64>> {
    let n = basis.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = u.get(&basis[i].mul(&basis[j]))?;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// The degree-`ell` moment matrix over all variables of `u`, indexed by
/// monomials of degree at most `ell / 2`.
pub fn moment_matrix(u: &MomentVector, ell: u32) -> Result<DMatrix<f64>> {
    if ell > u.ell {
        return Err(Error::Degree(format!(
            "moment matrix of degree {ell} needs moments up to {ell}, have {}",
            u.ell
        )));
    }
    moment_matrix_on(u, &monomial_basis(&u.vars, ell / 2))
}

/// The degree-`ell` localizing matrix of `p`: entry `(a, b)` is
/// `sum_g p_g u_{a+b+g}` over the basis of degree `<= ell/2 - deg(p)`.
pub fn localizing_matrix(p: &Polynomial, u: &MomentVector, ell: u32) -> Result<DMatrix<f64>> {
    let t = p.degree();
    if t > ell / 2 {
        return Err(Error::Degree(format!(
            "localizing matrix of a degree-{t} shift needs ell >= {}, got {ell}",
            2 * t
        )));
    }
    let basis = monomial_basis(&u.vars, ell / 2 - t);
    localizing_matrix_on(p, u, &basis)
}

pub fn localizing_matrix_on(p: &Polynomial, u: &MomentVector, basis: &[Monomial]) -> Result<DMatrix<f64>> {
    let n = basis.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let ab = basis[i].mul(&basis[j]);
            let mut s = 0.0;
            for (g, c) in p.terms() {
                s += c * u.get(&ab.mul(g))?;
            }
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    Ok(m)
}

/// A level-`ell` pseudo-distribution, stored through its moments.
#[derive(Debug, Clone)]
pub struct PseudoDistribution {
    pub moments: MomentVector,
    pub basis: Vec<Monomial>,
    /// Minimum eigenvalue of the moment matrix over `basis`.
    pub min_eigenvalue: f64,
}

impl PseudoDistribution {
    /// Dense pseudo-distribution over all variables of `u`.
    pub fn new(moments: MomentVector) -> Result<Self> {
        let basis = monomial_basis(&moments.vars, moments.ell / 2);
        Self::with_basis(moments, basis)
    }

    pub fn with_basis(moments: MomentVector, basis: Vec<Monomial>) -> Result<Self> {
        let min_eigenvalue = min_eigenvalue(&moment_matrix_on(&moments, &basis)?);
        Ok(Self {
            moments,
            basis,
            min_eigenvalue,
        })
    }

    /// Skips the eigen-check; used for the large sparse relaxations where
    /// the solver already reports per-block eigenvalues.
    pub fn unchecked(moments: MomentVector, min_eigenvalue: f64) -> Self {
        Self {
            moments,
            basis: Vec::new(),
            min_eigenvalue,
        }
    }

    pub fn ell(&self) -> u32 {
        self.moments.ell
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eigenvalue >= -tol
    }

    pub fn expect(&self, f: &Polynomial) -> Result<f64> {
        pseudo_expectation(f, self)
    }
}

/// `E~[f] = sum_g f_g u_g`.
pub fn pseudo_expectation(f: &Polynomial, pd: &PseudoDistribution) -> Result<f64> {
    if f.degree() > pd.ell() {
        return Err(Error::Degree(format!(
            "pseudo-expectation of degree-{} polynomial under level-{} pseudo-distribution",
            f.degree(),
            pd.ell()
        )));
    }
    let mut s = 0.0;
    for (m, c) in f.terms() {
        s += c * pd.moments.get(m)?;
    }
    Ok(s)
}

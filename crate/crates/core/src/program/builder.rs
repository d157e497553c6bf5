//! Compiles the polynomial constraint system over `(w, v, Pi)` into an
//! [`SdpProblem`] over pseudo-moments.
//!
//! Polynomial equalities `h = 0` become the linear rows `E~[h m] = 0` for
//! every multiplier monomial `m` of degree `<= ell - deg h` supported by the
//! moment basis. Inequalities `p <= 0` become single rows `E~[p] <= 0`.

use std::collections::BTreeSet;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::variables::ProgramVariables;
use crate::error::{Error, Result};
use crate::linalg::sym_eigen_sorted;
use crate::model::ProblemParams;
use crate::preprocess::PreparedDataset;
use crate::sdp::{LinearRow, PsdBlock, SdpProblem};
use crate::sos::{monomial_basis, Monomial, MomentVector, Polynomial, Var};

/// Constraint families, in row-emission order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintId {
    Normalization,
    Centering,
    Regression,
    Budget,
    Booleanity,
    Subspace,
    Noise,
    ResidualMoment,
    Hypercontractivity,
    BoundedVariance,
    SecondMoment,
    FourthMoment,
    Idempotency,
    Trace,
}

impl ConstraintId {
    /// Position in the original ten-constraint list, if any.
    pub fn number(self) -> Option<u8> {
        use ConstraintId::*;
        Some(match self {
            Centering => 1,
            Regression => 2,
            Budget => 3,
            Booleanity => 4,
            Subspace => 5,
            Noise => 6,
            Hypercontractivity => 7,
            BoundedVariance => 8,
            SecondMoment => 9,
            FourthMoment => 10,
            _ => return None,
        })
    }

    pub fn from_number(n: u8) -> Option<Self> {
        use ConstraintId::*;
        [
            Centering,
            Regression,
            Budget,
            Booleanity,
            Subspace,
            Noise,
            Hypercontractivity,
            BoundedVariance,
            SecondMoment,
            FourthMoment,
        ]
        .get((n as usize).wrapping_sub(1))
        .copied()
    }

    pub fn label(self) -> &'static str {
        use ConstraintId::*;
        match self {
            Normalization => "normalization",
            Centering => "centering",
            Regression => "regression",
            Budget => "budget",
            Booleanity => "booleanity",
            Subspace => "subspace",
            Noise => "noise",
            ResidualMoment => "residual_moment",
            Hypercontractivity => "hypercontractivity",
            BoundedVariance => "bounded_variance",
            SecondMoment => "second_moment",
            FourthMoment => "fourth_moment",
            Idempotency => "idempotency",
            Trace => "trace",
        }
    }
}

/// How a constraint family is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Handling {
    /// Enforced on the data before compilation (centering).
    Preprocessing,
    /// Holds identically after substituting `eps_i = -<v, y'_i>`.
    Eliminated,
    Rows(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct RowKey {
    pub constraint: ConstraintId,
    pub term: Option<usize>,
    pub q: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RowRef {
    Eq(usize),
    Ineq(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sparsity {
    /// One moment block per term over `{v, w_j, Pi_j}` plus one over `w`.
    #[default]
    TermBlocks,
    /// A single moment matrix over every variable; small instances only.
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScale {
    /// `|sum_i eps_i| <= sigma / |I_j|`.
    #[default]
    Literal,
    /// `|sum_i eps_i| <= sigma`.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceRow {
    Off,
    /// `tr(Pi_j) = d + 1`.
    #[default]
    Hyperplane,
    Rank(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProgramOptions {
    pub sparsity: Sparsity,
    pub noise_two_sided: bool,
    pub noise_scale: NoiseScale,
    /// Adds `w_j (1/|I_j|) sum_i eps_i^2 <= w_j kappa sigma^2` when set.
    pub residual_moment_kappa: Option<f64>,
    /// Emit the subspace rows per sample instead of per basis vector of the
    /// term's data span.
    pub subspace_per_sample: bool,
    pub hypercontractivity: bool,
    pub bounded_variance: bool,
    pub idempotency: bool,
    pub trace: TraceRow,
    /// Size guard on the number of pseudo-moments.
    pub max_moments: usize,
}

impl Default for ProgramOptions {
    fn default() -> Self {
        Self {
            sparsity: Sparsity::TermBlocks,
            noise_two_sided: true,
            noise_scale: NoiseScale::Literal,
            residual_moment_kappa: Some(4.0),
            subspace_per_sample: false,
            hypercontractivity: true,
            bounded_variance: true,
            idempotency: true,
            trace: TraceRow::Hyperplane,
            max_moments: 200_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompiledProgram {
    pub problem: SdpProblem,
    pub vars: ProgramVariables,
    /// Scalar index of each pseudo-moment.
    pub moments: IndexMap<Monomial, usize>,
    pub rows: IndexMap<RowKey, Vec<RowRef>>,
    pub q_family: Vec<DMatrix<f64>>,
    pub ell: u32,
    pub term_sizes: Vec<usize>,
    /// `mu N'`, the budget right-hand side.
    pub mu_n: f64,
    pub n_prime: usize,
    pub options: ProgramOptions,
    pub block_bases: Vec<Vec<Monomial>>,
}

impl CompiledProgram {
    pub fn m(&self) -> usize {
        self.vars.m
    }

    pub fn index_of(&self, m: &Monomial) -> Option<usize> {
        self.moments.get(m).copied()
    }

    pub fn w_index(&self, j: usize) -> usize {
        self.moments[&Monomial::var(self.vars.w(j))]
    }

    /// `E~[f]` for a solved moment vector.
    pub fn expect(&self, u: &[f64], f: &Polynomial) -> Result<f64> {
        let mut s = 0.0;
        for (m, c) in f.terms() {
            let idx = self.index_of(m).ok_or_else(|| Error::MissingMoment(m.to_string()))?;
            s += c * u[idx];
        }
        Ok(s)
    }

    /// `w(I_j) = |I_j| w_j / (mu N')`.
    pub fn term_weight(&self, j: usize) -> Polynomial {
        Polynomial::var(self.vars.w(j)).scale(self.term_sizes[j] as f64 / self.mu_n)
    }

    /// Moment vector of the point mass at `point` (one value per program
    /// variable).
    pub fn dirac_moments(&self, point: &[f64]) -> Vec<f64> {
        self.moments
            .keys()
            .map(|m| m.eval_with(|v: Var| point[v as usize]))
            .collect()
    }

    /// Divides by `u_0`, which a first-order solver only pins to within its
    /// tolerance.
    pub fn moment_vector(&self, u: &[f64]) -> Result<MomentVector> {
        let u0 = self.moments.get(&Monomial::one()).map_or(1.0, |&i| u[i]);
        if !(u0 > 0.0) {
            return Err(Error::Input(format!("normalizing moment must be positive, got {u0}")));
        }
        let values = self.moments.iter().map(|(m, &i)| (m.clone(), u[i] / u0)).collect();
        MomentVector::new(self.vars.all_vars(), self.ell, values)
    }

    pub fn handling(&self, id: ConstraintId) -> Handling {
        match id {
            ConstraintId::Centering => Handling::Preprocessing,
            ConstraintId::Regression => Handling::Eliminated,
            _ => Handling::Rows(
                self.rows
                    .iter()
                    .filter(|(k, _)| k.constraint == id)
                    .map(|(_, r)| r.len())
                    .sum(),
            ),
        }
    }

    /// Largest violation per row group at moment vector `u`.
    pub fn row_residuals(&self, u: &[f64]) -> Vec<(RowKey, f64)> {
        self.rows
            .iter()
            .map(|(k, refs)| {
                let worst = refs
                    .iter()
                    .map(|r| match *r {
                        RowRef::Eq(i) => {
                            let row = &self.problem.equalities[i];
                            (row.eval(u) - row.rhs).abs()
                        }
                        RowRef::Ineq(i) => {
                            let row = &self.problem.inequalities[i];
                            (row.eval(u) - row.rhs).max(0.0)
                        }
                    })
                    .fold(0.0, f64::max);
                (*k, worst)
            })
            .collect()
    }

    pub fn max_residual(&self, u: &[f64]) -> f64 {
        self.row_residuals(u).into_iter().map(|(_, r)| r).fold(0.0, f64::max)
    }
}

/// Per-term data summaries that the rows are built from.
struct TermStats {
    size: usize,
    /// `sum_i y'_i y'_i^T`.
    scatter: DMatrix<f64>,
    sum: DVector<f64>,
    points: Vec<DVector<f64>>,
}

fn term_stats(pd: &PreparedDataset, j: usize) -> TermStats {
    let dim = pd.d + 2;
    let points: Vec<DVector<f64>> = pd.terms[j]
        .member_ids
        .iter()
        .map(|&i| pd.samples[i].as_vector())
        .collect();
    let mut scatter = DMatrix::zeros(dim, dim);
    let mut sum = DVector::zeros(dim);
    for p in &points {
        scatter += p * p.transpose();
        sum += p;
    }
    TermStats {
        size: points.len(),
        scatter,
        sum,
        points,
    }
}

fn term_suffix(key: RowKey) -> String {
    key.term.map(|j| format!(" for term {j}")).unwrap_or_default()
}

fn quad(q: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    (y.transpose() * q * y)[(0, 0)]
}

struct Builder<'a> {
    vars: &'a ProgramVariables,
    ell: u32,
    sparsity: Sparsity,
    moments: IndexMap<Monomial, usize>,
    problem: SdpProblem,
    rows: IndexMap<RowKey, Vec<RowRef>>,
}

impl Builder<'_> {
    fn register(&mut self, m: Monomial) -> usize {
        let next = self.moments.len();
        *self.moments.entry(m).or_insert(next)
    }

    fn add_block(&mut self, name: String, basis: &[Monomial]) {
        let mut block = PsdBlock::new(name, basis.len());
        for a in 0..basis.len() {
            for b in a..basis.len() {
                let idx = self.register(basis[a].mul(&basis[b]));
                block.push(a, b, idx, 1.0);
            }
        }
        self.problem.blocks.push(block);
    }

    fn linearize(&self, key: RowKey, p: &Polynomial) -> Result<(Vec<(usize, f64)>, f64)> {
        if p.degree() > self.ell {
            return Err(Error::Degree(format!(
                "{} row{} has degree {} > ell = {}",
                key.constraint.label(),
                term_suffix(key),
                p.degree(),
                self.ell
            )));
        }
        let mut terms = Vec::with_capacity(p.len());
        let mut constant = 0.0;
        for (m, c) in p.terms() {
            if m.is_one() {
                constant += c;
                continue;
            }
            let idx = self.moments.get(m).copied().ok_or_else(|| {
                Error::Input(format!(
                    "{} row{} uses moment {m} outside the moment basis",
                    key.constraint.label(),
                    term_suffix(key)
                ))
            })?;
            terms.push((idx, c));
        }
        Ok((terms, constant))
    }

    fn row_name(key: RowKey, k: usize) -> String {
        let mut s = key.constraint.label().to_string();
        if let Some(j) = key.term {
            s.push_str(&format!(".j{j}"));
        }
        if let Some(q) = key.q {
            s.push_str(&format!(".q{q}"));
        }
        format!("{s}.{k}")
    }

    fn equality(&mut self, key: RowKey, h: &Polynomial, multipliers: &[Monomial]) -> Result<()> {
        if h.degree() > self.ell {
            return Err(Error::Degree(format!(
                "{} constraint{} has degree {} > ell = {}",
                key.constraint.label(),
                term_suffix(key),
                h.degree(),
                self.ell
            )));
        }
        for m in multipliers {
            let (terms, constant) = self.linearize(key, &h.mul_monomial(m))?;
            let k = self.rows.get(&key).map_or(0, Vec::len);
            let idx = self.problem.equalities.len();
            self.problem
                .equalities
                .push(LinearRow::new(Self::row_name(key, k), terms, -constant));
            self.rows.entry(key).or_default().push(RowRef::Eq(idx));
        }
        Ok(())
    }

    /// `E~[p] <= 0`.
    fn inequality(&mut self, key: RowKey, p: &Polynomial) -> Result<()> {
        let (terms, constant) = self.linearize(key, p)?;
        let k = self.rows.get(&key).map_or(0, Vec::len);
        let idx = self.problem.inequalities.len();
        self.problem
            .inequalities
            .push(LinearRow::new(Self::row_name(key, k), terms, -constant));
        self.rows.entry(key).or_default().push(RowRef::Ineq(idx));
        Ok(())
    }

    /// Multiplier monomials of degree `<= max_degree` over `support` (or
    /// every variable in dense mode).
    fn multipliers(&self, support: &[Var], max_degree: i64) -> Vec<Monomial> {
        if max_degree < 0 {
            return Vec::new();
        }
        match self.sparsity {
            Sparsity::TermBlocks => monomial_basis(support, max_degree as u32),
            Sparsity::Dense => monomial_basis(&self.vars.all_vars(), max_degree as u32),
        }
    }
}

fn poly_matvec(m: &[Vec<Polynomial>], v: &[Polynomial]) -> Vec<Polynomial> {
    m.iter()
        .map(|row| {
            let mut s = Polynomial::zero();
            for (a, b) in row.iter().zip(v) {
                s = &s + &(a * b);
            }
            s
        })
        .collect()
}

fn key(constraint: ConstraintId, term: Option<usize>, q: Option<usize>) -> RowKey {
    RowKey { constraint, term, q }
}

/// Basis of the span of a term's points: orthonormal eigenvectors of the
/// scatter matrix with non-negligible eigenvalues.
fn span_basis(stats: &TermStats) -> Vec<DVector<f64>> {
    let (vals, vecs) = sym_eigen_sorted(&stats.scatter);
    let top = vals.iter().fold(0.0f64, |a, &b| a.max(b));
    (0..vals.len())
        .rev()
        .filter(|&k| vals[k] > 1e-10 * top.max(1e-300))
        .map(|k| vecs.column(k).into_owned())
        .collect()
}

pub fn build_program(
    pd: &PreparedDataset,
    params: &ProblemParams,
    q_family: &[DMatrix<f64>],
    ell: u32,
    opts: &ProgramOptions,
) -> Result<CompiledProgram> {
    let m = pd.m();
    let d = pd.d;
    let dim = d + 2;
    if m == 0 {
        return Err(Error::Input("no terms to build a program over".into()));
    }
    if ell % 2 != 0 || ell < 2 {
        return Err(Error::Degree(format!("ell must be a positive even integer, got {ell}")));
    }
    if let Some(q) = q_family.iter().find(|q| q.shape() != (dim, dim)) {
        return Err(Error::Input(format!(
            "test matrix of shape {:?}, expected {dim}x{dim}",
            q.shape()
        )));
    }
    let vars = ProgramVariables::new(m, d);
    let n_prime = pd.n_prime();
    let mu_n = params.mu * n_prime as f64;
    let stats: Vec<TermStats> = (0..m).map(|j| term_stats(pd, j)).collect();

    let mut b = Builder {
        vars: &vars,
        ell,
        sparsity: opts.sparsity,
        moments: IndexMap::new(),
        problem: SdpProblem::default(),
        rows: IndexMap::new(),
    };

    let half = ell / 2;
    let mut block_bases = Vec::new();
    match opts.sparsity {
        Sparsity::TermBlocks => {
            for j in 0..m {
                block_bases.push((format!("term{j}"), monomial_basis(&vars.term_vars(j), half)));
            }
            block_bases.push(("selectors".to_string(), monomial_basis(&vars.w_vars(), half)));
        }
        Sparsity::Dense => block_bases.push(("moments".to_string(), monomial_basis(&vars.all_vars(), half))),
    }
    let estimate: usize = block_bases.iter().map(|(_, bs)| bs.len() * (bs.len() + 1) / 2).sum();
    if estimate > 4 * opts.max_moments {
        return Err(Error::Size(format!(
            "moment blocks have {estimate} entries; limit is {}",
            4 * opts.max_moments
        )));
    }
    b.register(Monomial::one());
    for (name, basis) in &block_bases {
        b.add_block(name.clone(), basis);
    }
    if b.moments.len() > opts.max_moments {
        return Err(Error::Size(format!(
            "{} pseudo-moments exceed the limit of {}",
            b.moments.len(),
            opts.max_moments
        )));
    }
    b.problem.n_vars = b.moments.len();

    b.problem
        .equalities
        .push(LinearRow::new("normalization", [(0, 1.0)], 1.0));
    b.rows
        .insert(key(ConstraintId::Normalization, None, None), vec![RowRef::Eq(0)]);

    let w = |j: usize| Polynomial::var(vars.w(j));
    let ell_i = ell as i64;

    // Budget: sum_j |I_j| w_j = mu N'.
    let mut budget = Polynomial::constant(-mu_n);
    for j in 0..m {
        budget.add_scaled(&w(j), stats[j].size as f64);
    }
    let mults = b.multipliers(&vars.w_vars(), ell_i - 1);
    b.equality(key(ConstraintId::Budget, None, None), &budget, &mults)?;

    // Booleanity: w_j^2 = w_j.
    for j in 0..m {
        let h = &w(j).pow(2) - &w(j);
        let mut set: BTreeSet<Monomial> = b.multipliers(&vars.term_vars(j), ell_i - 2).into_iter().collect();
        if opts.sparsity == Sparsity::TermBlocks {
            set.extend(monomial_basis(&vars.w_vars(), (ell - 2).min(ell)));
        }
        let mults: Vec<Monomial> = set.into_iter().collect();
        b.equality(key(ConstraintId::Booleanity, Some(j), None), &h, &mults)?;
    }

    // Subspace: w_j (Pi_j - I)(I + e_last v_ext^T) y = 0 over the term's data.
    let v_ext = vars.v_ext();
    for j in 0..m {
        let pi = vars.pi_matrix(j);
        let columns: Vec<DVector<f64>> = if opts.subspace_per_sample {
            stats[j].points.clone()
        } else {
            span_basis(&stats[j])
        };
        let mults = b.multipliers(&vars.term_vars(j), ell_i - 3);
        for col in &columns {
            let mut proj: Vec<Polynomial> = col.iter().map(|&c| Polynomial::constant(c)).collect();
            let mut shift = Polynomial::zero();
            for (a, va) in v_ext.iter().enumerate() {
                shift.add_scaled(va, col[a]);
            }
            proj[dim - 1] = &proj[dim - 1] + &shift;
            let pi_proj = poly_matvec(&pi, &proj);
            for a in 0..dim {
                let h = &w(j) * &(&pi_proj[a] - &proj[a]);
                if !h.is_zero() {
                    b.equality(key(ConstraintId::Subspace, Some(j), None), &h, &mults)?;
                }
            }
        }
    }

    // Noise: +-w_j sum_i eps_i <= w_j rhs, with eps_i = -<v_ext, y'_i>.
    for j in 0..m {
        let rhs = match opts.noise_scale {
            NoiseScale::Literal => params.sigma / stats[j].size.max(1) as f64,
            NoiseScale::Sum => params.sigma,
        };
        let mut eps_sum = Polynomial::zero();
        for (a, va) in v_ext.iter().enumerate() {
            eps_sum.add_scaled(va, -stats[j].sum[a]);
        }
        let upper = &(&w(j) * &eps_sum) - &w(j).scale(rhs);
        b.inequality(key(ConstraintId::Noise, Some(j), None), &upper)?;
        if opts.noise_two_sided {
            let lower = &(&w(j) * &eps_sum).scale(-1.0) - &w(j).scale(rhs);
            b.inequality(key(ConstraintId::Noise, Some(j), None), &lower)?;
        }
    }

    // Residual second moment: w_j v_ext^T (S_j / |I_j|) v_ext <= w_j kappa sigma^2.
    if let Some(kappa) = opts.residual_moment_kappa {
        for j in 0..m {
            let n_j = stats[j].size.max(1) as f64;
            let mut form = Polynomial::zero();
            for a in 0..dim {
                for c in 0..dim {
                    let s = stats[j].scatter[(a, c)] / n_j;
                    if s != 0.0 {
                        form.add_scaled(&(&v_ext[a] * &v_ext[c]), s);
                    }
                }
            }
            let p = &w(j) * &(&form - &Polynomial::constant(kappa * params.sigma * params.sigma));
            b.inequality(key(ConstraintId::ResidualMoment, Some(j), None), &p)?;
        }
    }

    // Hypercontractivity, expanded in the data sums:
    // (w_j / mu N')[A2 - 2 A1 t + |I_j| t^2 - C A2] <= 0, t = tr(Q Pi_j).
    if opts.hypercontractivity {
        for j in 0..m {
            let pi = vars.pi_matrix(j);
            for (qi, q) in q_family.iter().enumerate() {
                let a: Vec<f64> = stats[j].points.iter().map(|y| quad(q, y)).collect();
                let a1: f64 = a.iter().sum();
                let a2: f64 = a.iter().map(|x| x * x).sum();
                let mut t = Polynomial::zero();
                for r in 0..dim {
                    for s in 0..dim {
                        if q[(r, s)] != 0.0 {
                            t.add_scaled(&pi[s][r], q[(r, s)]);
                        }
                    }
                }
                let inner = &(&Polynomial::constant((1.0 - params.c) * a2) - &t.scale(2.0 * a1))
                    + &(&t * &t).scale(stats[j].size as f64);
                let p = (&w(j) * &inner).scale(1.0 / mu_n);
                b.inequality(key(ConstraintId::Hypercontractivity, Some(j), Some(qi)), &p)?;
            }
        }
    }

    // Bounded variance: (1/mu N') w_j A2 <= C |Pi_j Q Pi_j|_F^2.
    if opts.bounded_variance {
        for j in 0..m {
            let pi = vars.pi_matrix(j);
            for (qi, q) in q_family.iter().enumerate() {
                let a2: f64 = stats[j].points.iter().map(|y| quad(q, y).powi(2)).sum();
                let pq: Vec<Vec<Polynomial>> = (0..dim)
                    .map(|r| {
                        (0..dim)
                            .map(|c| {
                                let mut s = Polynomial::zero();
                                for k in 0..dim {
                                    if q[(k, c)] != 0.0 {
                                        s.add_scaled(&pi[r][k], q[(k, c)]);
                                    }
                                }
                                s
                            })
                            .collect()
                    })
                    .collect();
                let mut fro = Polynomial::zero();
                for r in 0..dim {
                    for c in r..dim {
                        let mut e = Polynomial::zero();
                        for k in 0..dim {
                            e = &e + &(&pq[r][k] * &pi[k][c]);
                        }
                        fro.add_scaled(&(&e * &e), if r == c { 1.0 } else { 2.0 });
                    }
                }
                let p = &w(j).scale(a2 / mu_n) - &fro.scale(params.c);
                b.inequality(key(ConstraintId::BoundedVariance, Some(j), Some(qi)), &p)?;
            }
        }
    }

    // Coordinate moment bounds; with data constants these only act on w_j.
    for (id, power, bound) in [
        (ConstraintId::SecondMoment, 2, params.alpha),
        (ConstraintId::FourthMoment, 4, params.beta),
    ] {
        for j in 0..m {
            for r in 0..dim {
                let total: f64 = stats[j].points.iter().map(|y| y[r].powi(power)).sum();
                let p = w(j).scale(total - stats[j].size as f64 * bound);
                b.inequality(key(id, Some(j), None), &p)?;
            }
        }
    }

    // Projector side constraints.
    for j in 0..m {
        let support = vars.term_vars(j);
        let pi = vars.pi_matrix(j);
        if opts.idempotency {
            let mults = b.multipliers(&support, ell_i - 2);
            for r in 0..dim {
                for c in r..dim {
                    let mut h = pi[r][c].scale(-1.0);
                    for k in 0..dim {
                        h = &h + &(&pi[r][k] * &pi[k][c]);
                    }
                    b.equality(key(ConstraintId::Idempotency, Some(j), None), &h, &mults)?;
                }
            }
        }
        let rank = match opts.trace {
            TraceRow::Off => None,
            TraceRow::Hyperplane => Some(d + 1),
            TraceRow::Rank(r) => Some(r),
        };
        if let Some(r) = rank {
            let mut h = Polynomial::constant(-(r as f64));
            for a in 0..dim {
                h = &h + &pi[a][a];
            }
            let mults = b.multipliers(&support, ell_i - 1);
            b.equality(key(ConstraintId::Trace, Some(j), None), &h, &mults)?;
        }
    }

    let Builder {
        moments, problem, rows, ..
    } = b;
    Ok(CompiledProgram {
        problem,
        vars,
        moments,
        rows,
        q_family: q_family.to_vec(),
        ell,
        term_sizes: stats.iter().map(|s| s.size).collect(),
        mu_n,
        n_prime,
        options: opts.clone(),
        block_bases: block_bases.into_iter().map(|(_, bs)| bs).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Sample, Term};
    use crate::preprocess::{assign_and_duplicate, prepare, CenteringMode};
    use crate::program::{default_q_family, required_constants};
    use crate::synth::{generate, heterogeneous_spec, GroundTruth, SpecOptions};

    struct Instance {
        pd: PreparedDataset,
        gt: GroundTruth,
        planted: Vec<usize>,
        params: ProblemParams,
        q: Vec<DMatrix<f64>>,
    }

    fn planted_instance(seed: u64, sigma: f64, n_samples: usize) -> Instance {
        let opts = SpecOptions {
            noise_sigma: sigma,
            ..Default::default()
        };
        let spec = heterogeneous_spec(&opts, seed).unwrap();
        let (samples, gt) = generate(&spec, 4, n_samples, seed + 1).unwrap();
        let pd = prepare(&samples, 1, 1, CenteringMode::MeanZero).unwrap();
        let planted: Vec<usize> = gt.c_star.terms.iter().map(|t| pd.find_term(t).unwrap()).collect();
        let good: usize = planted.iter().map(|&j| pd.terms[j].weight()).sum();
        let mut params = ProblemParams {
            sigma,
            ..Default::default()
        };
        params.mu = good as f64 / pd.n_prime() as f64;
        let q = default_q_family(2, 2, seed);
        let req = required_constants(&pd, &planted, &gt.pi_star, &q, params.mu * pd.n_prime() as f64).unwrap();
        let params = req.apply(&params, 1.5);
        Instance {
            pd,
            gt,
            planted,
            params,
            q,
        }
    }

    fn planted_moments(inst: &Instance, cp: &CompiledProgram) -> Vec<f64> {
        let w: Vec<f64> = (0..inst.pd.m())
            .map(|j| if inst.planted.contains(&j) { 1.0 } else { 0.0 })
            .collect();
        let pis = vec![inst.gt.pi_star.clone(); inst.pd.m()];
        cp.dirac_moments(&cp.vars.assignment(&w, &inst.gt.v_star, &pis))
    }

    #[test]
    fn planted_point_satisfies_every_row() {
        for seed in 0..3 {
            let inst = planted_instance(seed, 0.0, 120);
            let cp = build_program(&inst.pd, &inst.params, &inst.q, 4, &ProgramOptions::default()).unwrap();
            let u = planted_moments(&inst, &cp);
            let worst = cp.max_residual(&u);
            assert!(worst <= 1e-9, "seed {seed}: residual {worst}");
            assert!(crate::sdp::certify::certify_point(&u, &cp.problem, 1e-8));
        }
    }

    #[test]
    fn budget_row_example() {
        let samples: Vec<Sample> = (0..10)
            .map(|i| Sample::new(vec![i < 5], vec![i as f64], 0.5 * i as f64))
            .collect();
        let terms = [
            Term::from_pairs(&[(0, true)]).unwrap(),
            Term::from_pairs(&[(0, false)]).unwrap(),
        ];
        let pd = assign_and_duplicate(&samples, &terms).unwrap();
        let params = ProblemParams {
            mu: 0.5,
            ..Default::default()
        };
        let q = default_q_family(1, 0, 0);
        let cp = build_program(&pd, &params, &q, 4, &ProgramOptions::default()).unwrap();
        let RowRef::Eq(i) = cp.rows[&key(ConstraintId::Budget, None, None)][0] else {
            panic!("budget must be an equality");
        };
        let row = &cp.problem.equalities[i];
        let coeffs: Vec<f64> = (0..2)
            .map(|j| {
                let idx = cp.w_index(j);
                row.vars.iter().zip(&row.coeffs).filter(|(v, _)| **v == idx).map(|(_, c)| *c).sum()
            })
            .collect();
        assert_eq!(coeffs, vec![5.0, 5.0]);
        assert_eq!(row.rhs, 5.0);
        assert_eq!(row.nnz(), 2);
    }

    #[test]
    fn booleanity_holds_on_binary_mixtures() {
        let inst = planted_instance(4, 0.0, 120);
        let cp = build_program(&inst.pd, &inst.params, &inst.q, 4, &ProgramOptions::default()).unwrap();
        // Average the point masses of several 0/1 selections; booleanity is
        // linear in the moments, so the mixture satisfies it as well.
        let m = inst.pd.m();
        let mut u = vec![0.0; cp.problem.n_vars];
        let patterns = 5;
        for p in 0..patterns {
            let w: Vec<f64> = (0..m).map(|j| ((j + p) % 3 == 0) as u8 as f64).collect();
            let pis = vec![DMatrix::identity(4, 4); m];
            let point = cp.dirac_moments(&cp.vars.assignment(&w, &[0.3, -0.2, 1.0], &pis));
            u.iter_mut().zip(point).for_each(|(a, b)| *a += b / patterns as f64);
        }
        for (k, r) in cp.row_residuals(&u) {
            if k.constraint == ConstraintId::Booleanity {
                assert!(r <= 1e-12, "{k:?} {r}");
            }
        }
    }

    #[test]
    fn degree_too_small_names_constraint() {
        let inst = planted_instance(0, 0.0, 60);
        let err = build_program(&inst.pd, &inst.params, &inst.q, 2, &ProgramOptions::default()).unwrap_err();
        match err {
            Error::Degree(msg) => assert!(msg.starts_with("subspace constraint for term 0"), "{msg}"),
            other => panic!("expected a degree error, got {other}"),
        }
    }

    #[test]
    fn every_constraint_is_handled() {
        let inst = planted_instance(1, 0.0, 120);
        let cp = build_program(&inst.pd, &inst.params, &inst.q, 4, &ProgramOptions::default()).unwrap();
        for id in 1..=10 {
            let c = ConstraintId::from_number(id).unwrap();
            match cp.handling(c) {
                Handling::Rows(n) => assert!(n >= 1, "{c:?} has no rows"),
                Handling::Preprocessing | Handling::Eliminated => assert!(id <= 2),
            }
        }
    }

    #[test]
    fn more_test_matrices_only_add_rows() {
        let inst = planted_instance(2, 0.0, 120);
        let small = build_program(&inst.pd, &inst.params, &inst.q[..4], 4, &ProgramOptions::default()).unwrap();
        let large = build_program(&inst.pd, &inst.params, &inst.q, 4, &ProgramOptions::default()).unwrap();
        assert!(large.problem.inequalities.len() > small.problem.inequalities.len());
        for k in small.rows.keys() {
            assert!(large.rows.contains_key(k), "{k:?} missing");
        }
        let u = planted_moments(&inst, &large);
        assert!(large.max_residual(&u) <= 1e-9);
    }

    #[test]
    fn dense_mode_contains_cross_moments() {
        let samples: Vec<Sample> = (0..8)
            .map(|i| Sample::new(vec![i % 2 == 0], vec![i as f64 * 0.1], 0.2 * i as f64 * 0.1))
            .collect();
        let terms = [Term::from_pairs(&[(0, true)]).unwrap()];
        let pd = assign_and_duplicate(&samples, &terms).unwrap();
        let params = ProblemParams {
            mu: 0.5,
            ..Default::default()
        };
        let opts = ProgramOptions {
            sparsity: Sparsity::Dense,
            ..Default::default()
        };
        let q = default_q_family(1, 0, 0);
        let cp = build_program(&pd, &params, &q, 4, &opts).unwrap();
        assert_eq!(cp.problem.blocks.len(), 1);
        // One term: 1 + 2 + 6 = 9 variables, degree-2 basis of 55 monomials.
        assert_eq!(cp.problem.blocks[0].dim, 55);
        let over = ProgramOptions {
            max_moments: 10,
            ..opts
        };
        assert!(matches!(build_program(&pd, &params, &q, 4, &over), Err(Error::Size(_))));
    }
}

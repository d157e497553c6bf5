//! Shared domain types: samples, conjunctive terms, k-DNF conditions,
//! problem parameters and planted ground truth.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observation: Boolean attributes `x`, predictors `y`, response `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<bool>,
    pub y: Vec<f64>,
    pub z: f64,
}

impl Sample {
    pub fn new(x: Vec<bool>, y: Vec<f64>, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn d(&self) -> usize {
        self.y.len()
    }

    pub fn extend(&self) -> ExtendedSample {
        ExtendedSample::from_sample(self)
    }
}

/// The `(d+2)`-dimensional working vector `[1, y, z]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedSample {
    pub y_ext: Vec<f64>,
}

impl ExtendedSample {
    pub fn from_sample(s: &Sample) -> Self {
        let mut y_ext = Vec::with_capacity(s.d() + 2);
        y_ext.push(1.0);
        y_ext.extend_from_slice(&s.y);
        y_ext.push(s.z);
        Self { y_ext }
    }

    /// Predictor dimension `d`.
    pub fn d(&self) -> usize {
        self.y_ext.len() - 2
    }

    /// Drops the intercept slot and the response, recovering `(y, z)`.
    pub fn split(&self) -> (&[f64], f64) {
        let d = self.d();
        (&self.y_ext[1..=d], self.y_ext[d + 1])
    }

    /// `[1, y]`, the regressor including the intercept slot.
    pub fn regressor(&self) -> &[f64] {
        &self.y_ext[..self.y_ext.len() - 1]
    }

    pub fn response(&self) -> f64 {
        self.y_ext[self.y_ext.len() - 1]
    }

    pub fn as_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.y_ext)
    }
}

/// A literal `x[attr] == value`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Literal {
    pub attr: usize,
    pub value: bool,
}

impl Literal {
    pub fn new(attr: usize, value: bool) -> Self {
        Self { attr, value }
    }
}

/// A conjunction of literals together with the sample indices it covers.
///
/// `member_ids` is empty until the term has been assigned samples by
/// preprocessing.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Term {
    pub literals: Vec<Literal>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub member_ids: Vec<usize>,
}

impl Term {
    pub fn new(literals: Vec<Literal>) -> Result<Self> {
        let mut seen: Vec<usize> = literals.iter().map(|l| l.attr).collect();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Input(format!(
                "term has repeated attribute indices: {literals:?}"
            )));
        }
        Ok(Self {
            literals,
            member_ids: Vec::new(),
        })
    }

    /// Builds a term from `(attr, polarity)` pairs.
    pub fn from_pairs(pairs: &[(usize, bool)]) -> Result<Self> {
        Self::new(pairs.iter().map(|&(a, v)| Literal::new(a, v)).collect())
    }

    pub fn width(&self) -> usize {
        self.literals.len()
    }

    /// `|I_j|`, the number of member samples.
    pub fn weight(&self) -> usize {
        self.member_ids.len()
    }

    pub fn evaluate(&self, x: &[bool]) -> Result<bool> {
        evaluate_term(self, x)
    }

    /// Terms compare equal as conditions when their literal sets agree.
    pub fn same_condition(&self, other: &Term) -> bool {
        let mut a = self.literals.clone();
        let mut b = other.literals.clone();
        a.sort();
        b.sort();
        a == b
    }
}

impl std::fmt::Display for Term {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.literals.is_empty() {
            return write!(f, "true");
        }
        let parts: Vec<String> = self
            .literals
            .iter()
            .map(|l| format!("x{}={}", l.attr, u8::from(l.value)))
            .collect();
        write!(f, "{}", parts.join(" & "))
    }
}

/// True iff every literal of `term` matches `x`.
pub fn evaluate_term(term: &Term, x: &[bool]) -> Result<bool> {
    let mut all = true;
    for lit in &term.literals {
        let bit = x.get(lit.attr).ok_or_else(|| {
            Error::Input(format!(
                "literal index {} out of range for {} attributes",
                lit.attr,
                x.len()
            ))
        })?;
        all &= *bit == lit.value;
    }
    Ok(all)
}

/// A disjunction of terms.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KDnf {
    pub terms: Vec<Term>,
}

impl KDnf {
    pub fn new(terms: Vec<Term>) -> Self {
        Self { terms }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Number of terms `t`.
    pub fn t(&self) -> usize {
        self.terms.len()
    }

    /// Largest term width.
    pub fn k(&self) -> usize {
        self.terms.iter().map(Term::width).max().unwrap_or(0)
    }

    pub fn evaluate(&self, x: &[bool]) -> Result<bool> {
        evaluate_dnf(self, x)
    }
}

impl std::fmt::Display for KDnf {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "false");
        }
        let parts: Vec<String> = self.terms.iter().map(|t| format!("({t})")).collect();
        write!(f, "{}", parts.join(" | "))
    }
}

/// OR over term evaluations; the empty DNF is false.
pub fn evaluate_dnf(c: &KDnf, x: &[bool]) -> Result<bool> {
    let mut any = false;
    // Evaluate every term so that bad indices are reported even after a hit.
    for term in &c.terms {
        any |= evaluate_term(term, x)?;
    }
    Ok(any)
}

/// Parameters of the conditional regression problem and its relaxation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProblemParams {
    /// Fraction of the (post-duplication) data the condition must cover.
    pub mu: f64,
    /// Per-term noise bound.
    pub sigma: f64,
    /// Hypercontractivity / bounded-variance constant.
    pub c: f64,
    /// Coordinatewise second-moment bound.
    pub alpha: f64,
    /// Coordinatewise fourth-moment bound.
    pub beta: f64,
    pub delta: f64,
    /// Cover accuracy parameter.
    pub gamma: f64,
    /// Conditional mean loss the cover is allowed per point.
    pub epsilon_target: f64,
    /// Relaxation degree.
    pub ell: usize,
    /// Hypercontractivity order; fixed at 2.
    pub h: usize,
}

impl Default for ProblemParams {
    fn default() -> Self {
        Self {
            mu: 0.3,
            sigma: 0.02,
            c: 8.0,
            alpha: 10.0,
            beta: 100.0,
            delta: 0.1,
            gamma: 0.1,
            epsilon_target: 0.004,
            ell: 4,
            h: 2,
        }
    }
}

impl ProblemParams {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::Input(format!("{name} must lie in (0,1), got {v}")))
            }
        };
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(Error::Input(format!("mu must lie in (0,1], got {}", self.mu)));
        }
        open_unit("delta", self.delta)?;
        open_unit("gamma", self.gamma)?;
        for (name, v) in [
            ("sigma", self.sigma),
            ("C", self.c),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("epsilon_target", self.epsilon_target),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Input(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.alpha < 1.0 {
            return Err(Error::Input(format!(
                "alpha bounds the intercept coordinate's second moment and must be >= 1, got {}",
                self.alpha
            )));
        }
        if self.ell < 4 || self.ell % 2 != 0 {
            return Err(Error::Input(format!(
                "relaxation degree must be even and >= 4, got {}",
                self.ell
            )));
        }
        if self.h != 2 {
            return Err(Error::Input(format!("hypercontractivity order is fixed at 2, got {}", self.h)));
        }
        Ok(())
    }
}

/// How the non-conditioned population is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutlierModel {
    /// Flip the slopes of the planted model for outlier responses.
    pub flip_slopes: bool,
    /// Outlier noise standard deviation as a multiple of the inlier noise.
    pub noise_multiplier: f64,
    /// Additive floor on the outlier noise standard deviation, so that
    /// noiseless instances still have a noisy outlier population.
    pub noise_floor: f64,
    /// Outlier predictors are drawn from `N(0, scale^2 I)`.
    pub predictor_scale: f64,
}

impl Default for OutlierModel {
    fn default() -> Self {
        Self {
            flip_slopes: true,
            noise_multiplier: 10.0,
            noise_floor: 0.0,
            predictor_scale: 1.0,
        }
    }
}

/// Ground-truth description of a planted instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub c_star: KDnf,
    /// Intercept followed by the `d` slopes.
    pub v_star: Vec<f64>,
    /// Dimension of the planted subspace in extended space.
    pub r: usize,
    /// One `d x d` covariance per planted term.
    pub per_term_covariances: Vec<DMatrix<f64>>,
    pub noise_sigma: f64,
    /// Fraction of the raw samples drawn from the conditioned population.
    pub inlier_fraction: f64,
    pub outlier_model: OutlierModel,
}

impl PlantedSpec {
    pub fn d(&self) -> usize {
        self.v_star.len() - 1
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let d = self.d();
        if self.per_term_covariances.len() != self.c_star.t() {
            return Err(Error::Input(format!(
                "{} covariances for {} planted terms",
                self.per_term_covariances.len(),
                self.c_star.t()
            )));
        }
        if self.r > d + 1 {
            return Err(Error::Input(format!("subspace dimension {} exceeds d+1 = {}", self.r, d + 1)));
        }
        for cov in &self.per_term_covariances {
            if cov.nrows() != d || cov.ncols() != d {
                return Err(Error::Input(format!(
                    "covariance is {}x{}, expected {d}x{d}",
                    cov.nrows(),
                    cov.ncols()
                )));
            }
        }
        for term in &self.c_star.terms {
            for lit in &term.literals {
                if lit.attr >= n {
                    return Err(Error::Input(format!(
                        "planted literal x{} out of range for n = {n}",
                        lit.attr
                    )));
                }
            }
        }
        if !(self.inlier_fraction > 0.0 && self.inlier_fraction <= 1.0) {
            return Err(Error::Input(format!(
                "inlier fraction must lie in (0,1], got {}",
                self.inlier_fraction
            )));
        }
        Ok(())
    }

    /// Extended normal `(v*, -1)` of the planted hyperplane.
    pub fn v_ext(&self) -> DVector<f64> {
        let mut v = self.v_star.clone();
        v.push(-1.0);
        DVector::from_vec(v)
    }

    /// Projector onto the planted hyperplane `<(v*, -1), .> = 0` in
    /// `(d+2)`-dimensional extended space.
    pub fn pi_star(&self) -> DMatrix<f64> {
        hyperplane_projector(&self.v_ext())
    }
}

/// `I - eta eta^T` for the unit normal `eta = normal / |normal|`.
pub fn hyperplane_projector(normal: &DVector<f64>) -> DMatrix<f64> {
    let dim = normal.len();
    let eta = normal / normal.norm();
    DMatrix::identity(dim, dim) - &eta * eta.transpose()
}

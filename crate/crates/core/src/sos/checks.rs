use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::monomial::{monomial_basis, Monomial, Var};
use super::moments::{moment_matrix_on, PseudoDistribution};
use super::polynomial::Polynomial;
use crate::error::{Error, Result};
use crate::linalg::sym_eigen_sorted;

pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InequalityKind {
    Square,
    CauchySchwarz,
    AlmostTriangle,
    AmGm,
    Holder,
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub kind: InequalityKind,
    pub trial: usize,
    /// The side that should be smaller.
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct InequalityReport {
    pub trials: usize,
    pub checks: usize,
    pub violations: Vec<Violation>,
}

impl InequalityReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    fn record(&mut self, kind: InequalityKind, trial: usize, lhs: f64, rhs: f64, tol: f64) {
        self.checks += 1;
        let scale = 1f64.max(lhs.abs()).max(rhs.abs());
        if !(lhs <= rhs + tol * scale) {
            self.violations.push(Violation { kind, trial, lhs, rhs });
        }
    }
}

fn random_poly(basis: &[Monomial], rng: &mut ChaCha8Rng) -> Polynomial {
    let mut p = Polynomial::zero();
    for m in basis {
        p.add_term(m.clone(), rng.sample(StandardNormal));
    }
    p
}

/// Spot-checks the SoS inequalities that every valid pseudo-distribution
/// of degree `>= 4` must satisfy, on `trials` random polynomials.
pub fn check_pseudo_inequalities(pd: &PseudoDistribution, trials: usize, rng_seed: u64) -> Result<InequalityReport> {
    check_pseudo_inequalities_with_tol(pd, trials, rng_seed, DEFAULT_TOL)
}

pub fn check_pseudo_inequalities_with_tol(
    pd: &PseudoDistribution,
    trials: usize,
    rng_seed: u64,
    tol: f64,
) -> Result<InequalityReport> {
    let ell = pd.ell();
    if ell < 4 {
        return Err(Error::Degree(format!("inequality checks need degree >= 4, got {ell}")));
    }
    let vars = &pd.moments.vars;
    let half = monomial_basis(vars, ell / 2);
    let linear: Vec<Monomial> = monomial_basis(vars, 1);
    let t = ell / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut report = InequalityReport {
        trials,
        ..Default::default()
    };

    // The least-eigenvalue direction of the moment matrix gives the
    // most-negative square, so indefinite moment matrices are always caught.
    let (vals, vecs) = sym_eigen_sorted(&moment_matrix_on(&pd.moments, &half)?);
    if !vals.is_empty() {
        let mut p = Polynomial::zero();
        for (k, m) in half.iter().enumerate() {
            p.add_term(m.clone(), vecs[(k, 0)]);
        }
        report.record(InequalityKind::Square, 0, 0.0, pd.expect(&(&p * &p))?, tol);
    }

    for trial in 0..trials {
        let f = random_poly(&half, &mut rng);
        let g = random_poly(&half, &mut rng);
        let ff = pd.expect(&(&f * &f))?;
        let gg = pd.expect(&(&g * &g))?;
        let fg = pd.expect(&(&f * &g))?;
        report.record(InequalityKind::Square, trial, 0.0, ff, tol);
        report.record(InequalityKind::CauchySchwarz, trial, fg * fg, ff * gg, tol);
        report.record(InequalityKind::AmGm, trial, fg, 0.5 * (ff + gg), tol);

        let a = random_poly(&linear, &mut rng);
        let b = random_poly(&linear, &mut rng);
        let lhs = pd.expect(&(&a + &b).pow(2 * t))?;
        let rhs = 4f64.powi(t as i32) * (pd.expect(&a.pow(2 * t))? + pd.expect(&b.pow(2 * t))?);
        report.record(InequalityKind::AlmostTriangle, trial, lhs, rhs, tol);

        // Four-factor AM-GM in even-power form: prod f_i <= (1/4) sum f_i^4.
        let fs: Vec<Polynomial> = (0..4).map(|_| random_poly(&linear, &mut rng)).collect();
        let prod = fs.iter().skip(1).fold(fs[0].clone(), |acc, f| &acc * f);
        let mut sum4 = Polynomial::zero();
        for f in &fs {
            sum4.add_scaled(&f.pow(4), 0.25);
        }
        report.record(InequalityKind::AmGm, trial, pd.expect(&prod)?, pd.expect(&sum4)?, tol);
    }
    Ok(report)
}

/// Checks `(1/n sum w_i f_i)^2 <= (1/n sum w_i)(1/n sum f_i^2)` for
/// random linear `f_i` in `xs`, assuming `pd` satisfies `w_i^2 = w_i`.
pub fn check_holder(
    pd: &PseudoDistribution,
    ws: &[Var],
    xs: &[Var],
    trials: usize,
    rng_seed: u64,
    tol: f64,
) -> Result<InequalityReport> {
    if pd.ell() < 4 {
        return Err(Error::Degree(format!("Hölder check needs degree >= 4, got {}", pd.ell())));
    }
    let linear = monomial_basis(xs, 1);
    let n = ws.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut report = InequalityReport {
        trials,
        ..Default::default()
    };
    for trial in 0..trials {
        let fs: Vec<Polynomial> = ws.iter().map(|_| random_poly(&linear, &mut rng)).collect();
        let mut wf = Polynomial::zero();
        let mut wsum = Polynomial::zero();
        let mut f2 = Polynomial::zero();
        for (&w, f) in ws.iter().zip(&fs) {
            let wp = Polynomial::var(w);
            wf.add_scaled(&(&wp * f), 1.0 / n);
            wsum.add_scaled(&wp, 1.0 / n);
            f2.add_scaled(&(f * f), 1.0 / n);
        }
        let lhs = pd.expect(&(&wf * &wf))?;
        let rhs = pd.expect(&(&wsum * &f2))?;
        report.record(InequalityKind::Holder, trial, lhs, rhs, tol);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sos::moments::MomentVector;

    fn gaussian_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    }

    #[test]
    fn empirical_gaussian_has_no_violations() {
        let u = MomentVector::empirical(&[0, 1], &gaussian_points(200, 2, 11), 4);
        let pd = PseudoDistribution::new(u).unwrap();
        let r = check_pseudo_inequalities(&pd, 100, 5).unwrap();
        assert!(r.is_clean(), "{:?}", r.violations);
        assert!(r.checks > 400);
    }

    #[test]
    fn point_mass_has_no_violations() {
        let pd = PseudoDistribution::new(MomentVector::dirac(&[0, 1], &[0.3, -1.7], 4)).unwrap();
        assert!(check_pseudo_inequalities(&pd, 50, 1).unwrap().is_clean());
    }

    #[test]
    fn corrupted_moment_is_reported() {
        let mut u = MomentVector::empirical(&[0, 1], &gaussian_points(200, 2, 11), 4);
        let m = Monomial::from_powers(&[(0, 4)]);
        let v = u.get(&m).unwrap();
        u.set(m, -v);
        let pd = PseudoDistribution::new(u).unwrap();
        assert!(pd.min_eigenvalue < 0.0);
        let r = check_pseudo_inequalities(&pd, 20, 2).unwrap();
        assert!(!r.is_clean());
    }

    #[test]
    fn low_degree_rejected() {
        let pd = PseudoDistribution::new(MomentVector::dirac(&[0], &[1.0], 2)).unwrap();
        assert!(matches!(check_pseudo_inequalities(&pd, 1, 0), Err(Error::Degree(_))));
    }

    #[test]
    fn holder_on_boolean_mixture() {
        // Variables: w0, w1 (boolean) and x2, x3.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vec<f64>> = (0..150)
            .map(|_| {
                vec![
                    f64::from(rng.random_bool(0.4) as u8),
                    f64::from(rng.random_bool(0.7) as u8),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                ]
            })
            .collect();
        let pd = PseudoDistribution::new(MomentVector::empirical(&[0, 1, 2, 3], &pts, 4)).unwrap();
        let r = check_holder(&pd, &[0, 1], &[2, 3], 50, 4, DEFAULT_TOL).unwrap();
        assert!(r.is_clean(), "{:?}", r.violations);
    }
}

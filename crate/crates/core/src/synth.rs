//! Planted instances: a hidden k-DNF whose terms share one linear model but
//! have different predictor covariances, plus an outlier population.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eigen_sorted;
use crate::model::{KDnf, OutlierModel, PlantedSpec, Sample, Term};

const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub v_star: Vec<f64>,
    pub c_star: KDnf,
    pub r: usize,
    pub noise_sigma: f64,
    pub pi_star: DMatrix<f64>,
    /// Projector onto the span of each planted term's noise-free extended
    /// population.
    pub per_term_pi: Vec<DMatrix<f64>>,
    pub per_term_covariances: Vec<DMatrix<f64>>,
    pub inlier_ids: Vec<usize>,
    /// Planted term of each inlier, aligned with `inlier_ids`.
    pub inlier_terms: Vec<usize>,
    /// Response noise drawn for every sample.
    pub noise: Vec<f64>,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Haar-distributed rotation from the QR factorization of a Gaussian matrix.
pub fn random_rotation(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..d {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    q
}

/// Lower-triangular factor `L` with `L L^T = cov`, falling back to an
/// eigen square root for singular covariances.
fn covariance_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = cov.clone().cholesky() {
        return ch.l();
    }
    let (vals, vecs) = sym_eigen_sorted(cov);
    let sqrt = DMatrix::from_diagonal(&vals.map(|l| l.max(0.0).sqrt()));
    vecs * sqrt
}

/// Second moment of `(1, y, <v*, (1, y)>)` for `y ~ N(0, cov)`.
pub fn population_second_moment(v_star: &[f64], cov: &DMatrix<f64>) -> DMatrix<f64> {
    let d = cov.nrows();
    let mut b = DMatrix::zeros(d + 2, d + 1);
    for a in 0..=d {
        b[(a, a)] = 1.0;
        b[(d + 1, a)] = v_star[a];
    }
    let mut inner = DMatrix::zeros(d + 1, d + 1);
    inner[(0, 0)] = 1.0;
    inner.view_mut((1, 1), (d, d)).copy_from(cov);
    &b * inner * b.transpose()
}

/// Orthogonal projector onto the range of a PSD matrix.
pub fn range_projector(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen_sorted(m);
    let top = vals.iter().fold(0.0f64, |a, &b| a.max(b));
    let n = m.nrows();
    let mut p = DMatrix::zeros(n, n);
    for k in 0..n {
        if vals[k] > 1e-10 * top {
            let q = vecs.column(k);
            p += q * q.transpose();
        }
    }
    p
}

fn satisfies_exactly(x: &[bool], terms: &[Term], j: usize) -> bool {
    terms
        .iter()
        .enumerate()
        .all(|(i, t)| t.literals.iter().all(|l| x[l.attr] == l.value) == (i == j))
}

fn draw_x(rng: &mut ChaCha8Rng, n: usize, accept: impl Fn(&[bool]) -> bool, what: &str) -> Result<Vec<bool>> {
    for _ in 0..MAX_REJECTIONS {
        let x: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        if accept(&x) {
            return Ok(x);
        }
    }
    Err(Error::Input(format!("no attribute vector found for {what}; literals may be contradictory")))
}

/// Draws `n_samples` raw samples over `n_attrs` Boolean attributes.
pub fn generate(spec: &PlantedSpec, n_attrs: usize, n_samples: usize, seed: u64) -> Result<(Vec<Sample>, GroundTruth)> {
    spec.validate(n_attrs)?;
    let d = spec.d();
    let t = spec.c_star.t();
    if t == 0 {
        return Err(Error::Input("planted condition has no terms".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors: Vec<DMatrix<f64>> = spec.per_term_covariances.iter().map(covariance_factor).collect();
    let n_in = ((spec.inlier_fraction * n_samples as f64).round() as usize).min(n_samples);
    let out = &spec.outlier_model;
    let mut v_out = spec.v_star.clone();
    if out.flip_slopes {
        v_out[1..].iter_mut().for_each(|s| *s = -*s);
    }
    let out_sigma = out.noise_multiplier * spec.noise_sigma + out.noise_floor;

    let mut samples = Vec::with_capacity(n_samples);
    let mut noise = Vec::with_capacity(n_samples);
    let mut inlier_ids = Vec::new();
    let mut inlier_terms = Vec::new();
    for i in 0..n_samples {
        if i < n_in {
            let j = rng.random_range(0..t);
            let x = draw_x(
                &mut rng,
                n_attrs,
                |x| satisfies_exactly(x, &spec.c_star.terms, j),
                &format!("planted term {}", spec.c_star.terms[j]),
            )?;
            let y = &factors[j] * gaussian_vec(&mut rng, d);
            let e = spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            let z = spec.v_star[0] + spec.v_star[1..].iter().zip(y.iter()).map(|(a, b)| a * b).sum::<f64>() + e;
            samples.push(Sample::new(x, y.iter().copied().collect(), z));
            noise.push(e);
            inlier_ids.push(i);
            inlier_terms.push(j);
        } else {
            let x = draw_x(
                &mut rng,
                n_attrs,
                |x| spec.c_star.terms.iter().all(|t| !t.literals.iter().all(|l| x[l.attr] == l.value)),
                "an outlier outside the planted condition",
            )?;
            let y = gaussian_vec(&mut rng, d) * out.predictor_scale;
            let e = out_sigma * rng.sample::<f64, _>(StandardNormal);
            let z = v_out[0] + v_out[1..].iter().zip(y.iter()).map(|(a, b)| a * b).sum::<f64>() + e;
            samples.push(Sample::new(x, y.iter().copied().collect(), z));
            noise.push(e);
        }
    }
    let per_term_pi = spec
        .per_term_covariances
        .iter()
        .map(|c| range_projector(&population_second_moment(&spec.v_star, c)))
        .collect();
    let gt = GroundTruth {
        v_star: spec.v_star.clone(),
        c_star: spec.c_star.clone(),
        r: spec.r,
        noise_sigma: spec.noise_sigma,
        pi_star: spec.pi_star(),
        per_term_pi,
        per_term_covariances: spec.per_term_covariances.clone(),
        inlier_ids,
        inlier_terms,
        noise,
    };
    Ok((samples, gt))
}

/// Knobs for [`heterogeneous_spec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecOptions {
    pub n_attrs: usize,
    pub d: usize,
    pub k: usize,
    pub planted_terms: usize,
    pub noise_sigma: f64,
    pub inlier_fraction: f64,
    /// Minimum spectral-norm distance between planted term covariances.
    pub spectral_gap: f64,
    /// Range of covariance eigenvalues.
    pub eigen_range: (f64, f64),
    /// Use `(I + s s^T)^{-1}` for every term and a zero intercept, so the
    /// extended population's second moment is exactly the planted projector.
    pub isotropic: bool,
    pub outlier_model: OutlierModel,
}

impl Default for SpecOptions {
    fn default() -> Self {
        Self {
            n_attrs: 4,
            d: 2,
            k: 1,
            planted_terms: 2,
            noise_sigma: 0.02,
            inlier_fraction: 0.3,
            spectral_gap: 0.5,
            eigen_range: (0.5, 2.0),
            isotropic: false,
            outlier_model: OutlierModel::default(),
        }
    }
}

/// Random planted specification: terms on disjoint attribute sets with
/// random polarities, slopes bounded away from zero, and per-term
/// covariances from random rotations and spectra.
pub fn heterogeneous_spec(opts: &SpecOptions, seed: u64) -> Result<PlantedSpec> {
    let (d, k, t) = (opts.d, opts.k, opts.planted_terms);
    if k == 0 || t * k > opts.n_attrs {
        return Err(Error::Input(format!(
            "{t} disjoint planted terms of width {k} need at least {} attributes, have {}",
            t * k,
            opts.n_attrs
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut terms = Vec::with_capacity(t);
    for j in 0..t {
        let pairs: Vec<(usize, bool)> = (0..k).map(|a| (j * k + a, rng.random_bool(0.5))).collect();
        terms.push(Term::from_pairs(&pairs)?);
    }
    let slopes: Vec<f64> = (0..d)
        .map(|_| {
            let mag = rng.random_range(0.5..1.5);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let intercept = if opts.isotropic { 0.0 } else { rng.random_range(-1.0..1.0) };
    let mut v_star = vec![intercept];
    v_star.extend(&slopes);

    let covariances = if opts.isotropic {
        let s = DVector::from_vec(slopes);
        let m = DMatrix::identity(d, d) + &s * s.transpose();
        let inv = m
            .try_inverse()
            .ok_or_else(|| Error::Consistency("I + s s^T is always invertible".into()))?;
        vec![inv; t]
    } else {
        heterogeneous_covariances(&mut rng, d, t, opts.spectral_gap, opts.eigen_range)?
    };
    Ok(PlantedSpec {
        c_star: KDnf::new(terms),
        v_star,
        r: d + 1,
        per_term_covariances: covariances,
        noise_sigma: opts.noise_sigma,
        inlier_fraction: opts.inlier_fraction,
        outlier_model: opts.outlier_model.clone(),
    })
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen_sorted(m);
    vals.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}

fn heterogeneous_covariances(
    rng: &mut ChaCha8Rng,
    d: usize,
    t: usize,
    gap: f64,
    (lo, hi): (f64, f64),
) -> Result<Vec<DMatrix<f64>>> {
    for _ in 0..MAX_REJECTIONS {
        let covs: Vec<DMatrix<f64>> = (0..t)
            .map(|_| {
                let r = random_rotation(rng, d);
                let spectrum = DVector::from_iterator(d, (0..d).map(|_| rng.random_range(lo..hi)));
                &r * DMatrix::from_diagonal(&spectrum) * r.transpose()
            })
            .collect();
        let ok = (0..t).all(|a| ((a + 1)..t).all(|b| spectral_norm(&(&covs[a] - &covs[b])) >= gap));
        if ok {
            return Ok(covs);
        }
    }
    Err(Error::Input(format!(
        "could not draw {t} covariances with pairwise gap {gap} and spectra in [{lo}, {hi}]"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceReport {
    pub distances: Vec<f64>,
    pub tol: f64,
    pub passed: bool,
}

/// Frobenius distance between each planted term's empirical second moment
/// of extended inliers (noise-free coordinates projected by the term's
/// projector) and its population value.
pub fn empirical_covariance_check(samples: &[Sample], gt: &GroundTruth, tol: f64) -> Result<CovarianceReport> {
    let t = gt.per_term_covariances.len();
    let mut sums: Vec<DMatrix<f64>> = gt
        .per_term_pi
        .iter()
        .map(|p| DMatrix::zeros(p.nrows(), p.ncols()))
        .collect();
    let mut counts = vec![0usize; t];
    for (&i, &j) in gt.inlier_ids.iter().zip(&gt.inlier_terms) {
        let y = samples[i].extend().as_vector();
        let p = &gt.per_term_pi[j] * y;
        sums[j] += &p * p.transpose();
        counts[j] += 1;
    }
    if let Some(j) = counts.iter().position(|&c| c < 500) {
        return Err(Error::Input(format!(
            "planted term {j} has {} inliers; the check needs at least 500",
            counts[j]
        )));
    }
    let distances: Vec<f64> = (0..t)
        .map(|j| {
            let emp = &sums[j] / counts[j] as f64;
            let pop = population_second_moment(&gt.v_star, &gt.per_term_covariances[j]);
            (emp - pop).norm()
        })
        .collect();
    let passed = distances.iter().all(|&x| x <= tol);
    Ok(CovarianceReport { distances, tol, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(sigma: f64, seed: u64) -> PlantedSpec {
        heterogeneous_spec(
            &SpecOptions {
                noise_sigma: sigma,
                ..Default::default()
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn noiseless_inliers_on_hyperplane() {
        let s = spec(0.0, 1);
        let (samples, gt) = generate(&s, 4, 300, 2).unwrap();
        let v = s.v_ext();
        for &i in &gt.inlier_ids {
            assert!(samples[i].extend().as_vector().dot(&v).abs() < 1e-12);
        }
    }

    #[test]
    fn inliers_within_noise_of_hyperplane() {
        let s = spec(0.05, 3);
        let (samples, gt) = generate(&s, 4, 400, 4).unwrap();
        let v = s.v_ext();
        for &i in &gt.inlier_ids {
            let dist = samples[i].extend().as_vector().dot(&v).abs() / v.norm();
            assert!(dist <= gt.noise[i].abs() / v.norm() + 1e-12);
        }
    }

    #[test]
    fn coverage_and_membership() {
        let s = spec(0.02, 5);
        let (samples, gt) = generate(&s, 4, 500, 6).unwrap();
        assert!(gt.inlier_ids.len() as f64 >= s.inlier_fraction * 500.0 - 0.5);
        for (i, smp) in samples.iter().enumerate() {
            let sat: Vec<bool> = s.c_star.terms.iter().map(|t| t.evaluate(&smp.x).unwrap()).collect();
            let hits = sat.iter().filter(|&&b| b).count();
            if gt.inlier_ids.contains(&i) {
                assert_eq!(hits, 1);
            } else {
                assert_eq!(hits, 0);
            }
        }
    }

    #[test]
    fn heterogeneity_gap() {
        for seed in 0..10 {
            let s = heterogeneous_spec(
                &SpecOptions {
                    planted_terms: 3,
                    n_attrs: 6,
                    spectral_gap: 0.5,
                    ..Default::default()
                },
                seed,
            )
            .unwrap();
            let c = &s.per_term_covariances;
            for a in 0..c.len() {
                for b in (a + 1)..c.len() {
                    assert!(spectral_norm(&(&c[a] - &c[b])) >= 0.5);
                }
            }
        }
    }

    #[test]
    fn isotropic_second_moment_is_projector() {
        let s = heterogeneous_spec(
            &SpecOptions {
                isotropic: true,
                ..Default::default()
            },
            9,
        )
        .unwrap();
        let m = population_second_moment(&s.v_star, &s.per_term_covariances[0]);
        // The intercept slot carries the constant 1, so compare the
        // predictor/response block with the projector's.
        let pi = s.pi_star();
        let block = m.view((1, 1), (3, 3)).into_owned();
        let expected = pi.view((1, 1), (3, 3)).into_owned();
        assert!((block - expected).norm() < 1e-12);
    }

    #[test]
    fn gaussian_terms_are_hypercontractive_with_c_8() {
        use crate::program::qfamily::default_q_family;
        for seed in 0..3 {
            let mut s = spec(0.02, 20 + seed);
            s.inlier_fraction = 1.0;
            let (samples, gt) = generate(&s, 4, 4400, 30 + seed).unwrap();
            let pi = &gt.pi_star;
            for term in 0..s.c_star.t() {
                let ys: Vec<DVector<f64>> = gt
                    .inlier_ids
                    .iter()
                    .zip(&gt.inlier_terms)
                    .filter(|&(_, &t)| t == term)
                    .map(|(&i, _)| samples[i].extend().as_vector())
                    .collect();
                assert!(ys.len() >= 2000, "term {term} has {} samples", ys.len());
                for q in default_q_family(s.d(), 8, seed) {
                    let t = (&q * pi).trace();
                    let (mut lhs, mut rhs) = (0.0, 0.0);
                    for y in &ys {
                        let a = (y.transpose() * &q * y)[(0, 0)];
                        lhs += (a - t).powi(2);
                        rhs += a * a;
                    }
                    assert!(lhs <= 8.0 * rhs, "seed {seed} term {term}: {lhs} > 8 * {rhs}");
                }
            }
        }
    }

    #[test]
    fn contradictory_literals_rejected() {
        let mut s = spec(0.0, 1);
        s.c_star = KDnf::new(vec![
            Term::from_pairs(&[(0, true)]).unwrap(),
            Term::from_pairs(&[(0, true), (1, true)]).unwrap(),
        ]);
        s.per_term_covariances.truncate(2);
        // Satisfying the second term always satisfies the first.
        let mut s2 = s.clone();
        s2.inlier_fraction = 1.0;
        assert!(matches!(generate(&s2, 4, 50, 1), Err(Error::Input(_))));
    }

    #[test]
    fn covariance_check_rate() {
        let s = spec(0.0, 11);
        let dist = |n: usize, seed: u64| {
            let mut s = s.clone();
            s.inlier_fraction = 1.0;
            let (samples, gt) = generate(&s, 4, n, seed).unwrap();
            let r = empirical_covariance_check(&samples, &gt, f64::INFINITY).unwrap();
            assert!(r.passed);
            r.distances.iter().sum::<f64>()
        };
        // Average over a few seeds to tame Monte-Carlo noise.
        let small: f64 = (0..6).map(|k| dist(2 * 2000, 100 + k)).sum();
        let large: f64 = (0..6).map(|k| dist(2 * 8000, 200 + k)).sum();
        let ratio = small / large;
        assert!((1.2..=3.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn rank_deficient_term_null_space() {
        let mut s = spec(0.0, 12);
        s.per_term_covariances[0] = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        s.inlier_fraction = 1.0;
        let (samples, gt) = generate(&s, 4, 2000, 3).unwrap();
        let pop = population_second_moment(&s.v_star, &s.per_term_covariances[0]);
        let (vals, vecs) = sym_eigen_sorted(&pop);
        let mut emp = DMatrix::zeros(4, 4);
        for (&i, &j) in gt.inlier_ids.iter().zip(&gt.inlier_terms) {
            if j == 0 {
                let y = samples[i].extend().as_vector();
                emp += &y * y.transpose();
            }
        }
        // Population null directions are null for the sample too.
        for k in 0..4 {
            if vals[k].abs() < 1e-12 {
                let q = vecs.column(k);
                assert!((q.transpose() * &emp * q)[(0, 0)].abs() < 1e-6);
            }
        }
    }

    #[test]
    fn term_means_shrink() {
        let mut ok = 0;
        for seed in 0..100 {
            let mut s = spec(0.02, seed);
            s.inlier_fraction = 1.0;
            let (samples, gt) = generate(&s, 4, 1000, seed + 1000).unwrap();
            let mut good = true;
            for j in 0..2 {
                let ys: Vec<&Sample> = gt
                    .inlier_ids
                    .iter()
                    .zip(&gt.inlier_terms)
                    .filter(|(_, &t)| t == j)
                    .map(|(&i, _)| &samples[i])
                    .collect();
                let mut mean = DVector::zeros(2);
                for s in &ys {
                    mean += DVector::from_column_slice(&s.y);
                }
                mean /= ys.len() as f64;
                let sigma_max = spectral_norm(&gt.per_term_covariances[j]).sqrt();
                if mean.norm() > 5.0 * sigma_max / (ys.len() as f64).sqrt() {
                    good = false;
                }
            }
            ok += good as usize;
        }
        assert!(ok >= 95, "{ok}");
    }
}

//! Smallest moment constants under which a given assignment satisfies the
//! data-dependent inequality rows.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProblemParams;
use crate::preprocess::PreparedDataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequiredConstants {
    /// Hypercontractivity and bounded-variance constant.
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl RequiredConstants {
    /// Raises `params` to `margin` times the requirement where needed.
    pub fn apply(&self, params: &ProblemParams, margin: f64) -> ProblemParams {
        let mut p = params.clone();
        p.c = p.c.max(margin * self.c);
        p.alpha = p.alpha.max(margin * self.alpha);
        p.beta = p.beta.max(margin * self.beta);
        p
    }
}

/// Constants needed for the terms in `selected`, each assigned projector
/// `pi`, at budget `mu_n = mu N'`.
pub fn required_constants(
    pd: &PreparedDataset,
    selected: &[usize],
    pi: &DMatrix<f64>,
    q_family: &[DMatrix<f64>],
    mu_n: f64,
) -> Result<RequiredConstants> {
    let dim = pd.d + 2;
    if pi.nrows() != dim || pi.ncols() != dim {
        return Err(Error::Input(format!("projector must be {dim}x{dim}")));
    }
    if !(mu_n > 0.0) {
        return Err(Error::Input("mu N' must be positive".into()));
    }
    let mut out = RequiredConstants {
        c: 0.0,
        alpha: 0.0,
        beta: 0.0,
    };
    for &j in selected {
        let term = pd
            .terms
            .get(j)
            .ok_or_else(|| Error::Input(format!("term {j} out of range")))?;
        let points: Vec<_> = term.member_ids.iter().map(|&i| pd.samples[i].as_vector()).collect();
        if points.is_empty() {
            continue;
        }
        let size = points.len() as f64;
        for q in q_family {
            let a: Vec<f64> = points.iter().map(|y| (y.transpose() * q * y)[(0, 0)]).collect();
            let a1: f64 = a.iter().sum();
            let a2: f64 = a.iter().map(|x| x * x).sum();
            if a2 == 0.0 {
                continue;
            }
            let t = (q * pi).trace();
            out.c = out.c.max((a2 - 2.0 * a1 * t + size * t * t) / a2);
            let fro = (pi * q * pi).norm_squared();
            let need = a2 / mu_n;
            if fro > 0.0 {
                out.c = out.c.max(need / fro);
            } else {
                out.c = f64::INFINITY;
            }
        }
        for r in 0..dim {
            let m2 = points.iter().map(|y| y[r].powi(2)).sum::<f64>() / size;
            let m4 = points.iter().map(|y| y[r].powi(4)).sum::<f64>() / size;
            out.alpha = out.alpha.max(m2);
            out.beta = out.beta.max(m4);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Sample, Term};
    use crate::preprocess::{assign_and_duplicate, extend_and_center, CenteringMode};

    fn dataset() -> PreparedDataset {
        let samples = vec![
            Sample::new(vec![true], vec![1.0], 2.0),
            Sample::new(vec![true], vec![-1.0], -2.0),
        ];
        let pd = assign_and_duplicate(&samples, &[Term::default()]).unwrap();
        extend_and_center(&pd, CenteringMode::MeanZero)
    }

    #[test]
    fn coordinate_moments() {
        let pd = dataset();
        let q = vec![DMatrix::identity(3, 3)];
        let r = required_constants(&pd, &[0], &DMatrix::identity(3, 3), &q, 1.0).unwrap();
        // Coordinates are 1, +-1, +-2.
        assert_eq!(r.alpha, 4.0);
        assert_eq!(r.beta, 16.0);
    }

    #[test]
    fn variance_ratio() {
        let pd = dataset();
        // Q = e0 e0^T gives y'^T Q y' = 1 on both points, so A2 = 2.
        let mut q = DMatrix::zeros(3, 3);
        q[(0, 0)] = 1.0;
        let pi = DMatrix::identity(3, 3);
        let r = required_constants(&pd, &[0], &pi, &[q], 0.5).unwrap();
        // Bounded variance needs A2 / mu N' = 4; hypercontractivity needs
        // (2 - 2*2*1 + 2*1) / 2 = 0.
        assert!((r.c - 4.0).abs() < 1e-12);
        let params = r.apply(&ProblemParams::default(), 2.0);
        assert_eq!(params.c, 8.0);
        assert_eq!(params.alpha, ProblemParams::default().alpha.max(2.0 * 4.0));
    }

    #[test]
    fn unselected_terms_need_nothing() {
        let pd = dataset();
        let q = vec![DMatrix::identity(3, 3)];
        let r = required_constants(&pd, &[], &DMatrix::identity(3, 3), &q, 1.0).unwrap();
        assert_eq!((r.c, r.alpha, r.beta), (0.0, 0.0, 0.0));
        assert!(required_constants(&pd, &[3], &DMatrix::identity(3, 3), &q, 1.0).is_err());
    }
}

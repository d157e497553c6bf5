use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Test matrices for the hypercontractivity and variance rows, in
/// dimension `d + 2`: `e_r e_r^T`, `(e_r e_s^T + e_s e_r^T)/sqrt(2)` for
/// `r < s`, then `count_random` random symmetric matrices. All have unit
/// Frobenius norm.
pub fn default_q_family(d: usize, count_random: usize, seed: u64) -> Vec<DMatrix<f64>> {
    let dim = d + 2;
    let mut out = Vec::new();
    for r in 0..dim {
        let mut q = DMatrix::zeros(dim, dim);
        q[(r, r)] = 1.0;
        out.push(q);
    }
    let off = std::f64::consts::FRAC_1_SQRT_2;
    for r in 0..dim {
        for s in (r + 1)..dim {
            let mut q = DMatrix::zeros(dim, dim);
            q[(r, s)] = off;
            q[(s, r)] = off;
            out.push(q);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..count_random {
        let mut q = DMatrix::zeros(dim, dim);
        for r in 0..dim {
            for s in r..dim {
                let v: f64 = rng.sample(StandardNormal);
                q[(r, s)] = v;
                q[(s, r)] = v;
            }
        }
        let norm = q.norm();
        out.push(q / norm);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_sizes() {
        assert_eq!(default_q_family(1, 0, 0).len(), 6);
        assert_eq!(default_q_family(2, 5, 0).len(), 15);
    }

    #[test]
    fn unit_norm_and_symmetric() {
        for q in default_q_family(2, 20, 7) {
            assert!((q.norm() - 1.0).abs() <= 1e-12);
            assert_eq!(q, q.transpose());
        }
    }

    #[test]
    fn seeded() {
        assert_eq!(default_q_family(2, 3, 1), default_q_family(2, 3, 1));
        assert_ne!(default_q_family(2, 3, 1), default_q_family(2, 3, 2));
    }
}

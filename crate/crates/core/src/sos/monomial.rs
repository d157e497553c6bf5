use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Identifier of an indeterminate.
pub type Var = u32;

/// A monomial stored sparsely as `(variable, exponent)` pairs sorted by
/// variable, exponents all positive.
///
/// Monomials are totally ordered by graded lexicographic order: lower total
/// degree first, then by the exponent of the lowest-index variable,
/// larger exponent first (`1 < x0 < x1 < x0^2 < x0 x1 < x1^2`).
#[derive(Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Monomial {
    powers: Vec<(Var, u32)>,
}

impl Monomial {
    pub fn one() -> Self {
        Self::default()
    }

    pub fn var(v: Var) -> Self {
        Self {
            powers: vec![(v, 1)],
        }
    }

    /// Builds a monomial from arbitrary `(var, exp)` pairs, merging
    /// repeated variables and dropping zero exponents.
    pub fn from_powers(pairs: &[(Var, u32)]) -> Self {
        let mut powers: Vec<(Var, u32)> = pairs.iter().copied().filter(|&(_, e)| e > 0).collect();
        powers.sort_unstable_by_key(|&(v, _)| v);
        let mut merged: Vec<(Var, u32)> = Vec::with_capacity(powers.len());
        for (v, e) in powers {
            match merged.last_mut() {
                Some((lv, le)) if *lv == v => *le += e,
                _ => merged.push((v, e)),
            }
        }
        Self { powers: merged }
    }

    /// Product of the given variables (with repetition).
    pub fn product(vars: &[Var]) -> Self {
        let pairs: Vec<(Var, u32)> = vars.iter().map(|&v| (v, 1)).collect();
        Self::from_powers(&pairs)
    }

    pub fn powers(&self) -> &[(Var, u32)] {
        &self.powers
    }

    pub fn degree(&self) -> u32 {
        self.powers.iter().map(|&(_, e)| e).sum()
    }

    pub fn is_one(&self) -> bool {
        self.powers.is_empty()
    }

    pub fn exponent(&self, v: Var) -> u32 {
        self.powers
            .binary_search_by_key(&v, |&(var, _)| var)
            .map_or(0, |i| self.powers[i].1)
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.powers.iter().map(|&(v, _)| v)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = Vec::with_capacity(self.powers.len() + other.powers.len());
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.powers, &other.powers);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                Ordering::Equal => {
                    out.push((a[i].0, a[i].1 + b[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Monomial { powers: out }
    }

    /// Evaluates at a point given by a variable lookup.
    pub fn eval_with(&self, value: impl Fn(Var) -> f64) -> f64 {
        self.powers
            .iter()
            .map(|&(v, e)| value(v).powi(e as i32))
            .product()
    }

    /// Evaluates at a dense point indexed by variable id.
    pub fn eval(&self, point: &[f64]) -> f64 {
        self.eval_with(|v| point[v as usize])
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| {
            // Walk both sparse exponent vectors in variable order; the first
            // variable where they differ decides, larger exponent first.
            let (a, b) = (&self.powers, &other.powers);
            let (mut i, mut j) = (0, 0);
            loop {
                match (a.get(i), b.get(j)) {
                    (None, None) => return Ordering::Equal,
                    (Some(_), None) => return Ordering::Less,
                    (None, Some(_)) => return Ordering::Greater,
                    (Some(&(va, ea)), Some(&(vb, eb))) => {
                        if va < vb {
                            return Ordering::Less;
                        }
                        if vb < va {
                            return Ordering::Greater;
                        }
                        if ea != eb {
                            return eb.cmp(&ea);
                        }
                        i += 1;
                        j += 1;
                    }
                }
            }
        })
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.powers.is_empty() {
            return write!(f, "1");
        }
        let parts: Vec<String> = self
            .powers
            .iter()
            .map(|&(v, e)| if e == 1 { format!("x{v}") } else { format!("x{v}^{e}") })
            .collect();
        write!(f, "{}", parts.join("*"))
    }
}

/// All monomials over `vars` of total degree at most `max_degree`, in
/// graded lexicographic order. There are `C(|vars| + max_degree, max_degree)`.
pub fn monomial_basis(vars: &[Var], max_degree: u32) -> Vec<Monomial> {
    let mut sorted: Vec<Var> = vars.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut out = Vec::new();
    let mut current = Vec::new();
    fn rec(vars: &[Var], start: usize, left: u32, current: &mut Vec<Var>, out: &mut Vec<Monomial>) {
        out.push(Monomial::product(current));
        if left == 0 {
            return;
        }
        for idx in start..vars.len() {
            current.push(vars[idx]);
            rec(vars, idx, left - 1, current, out);
            current.pop();
        }
    }
    rec(&sorted, 0, max_degree, &mut current, &mut out);
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binom(n: u64, k: u64) -> u64 {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn basis_examples() {
        let b = monomial_basis(&[0, 1], 1);
        assert_eq!(b, vec![Monomial::one(), Monomial::var(0), Monomial::var(1)]);
        let b = monomial_basis(&[0], 3);
        let expect: Vec<_> = (0..=3).map(|e| Monomial::from_powers(&[(0, e)])).collect();
        assert_eq!(b, expect);
        assert_eq!(monomial_basis(&[0, 1, 2], 2).len() as u64, binom(5, 2));
        assert_eq!(monomial_basis(&[3, 7, 9, 11], 3).len() as u64, binom(7, 3));
    }

    #[test]
    fn graded_lex_order() {
        let b = monomial_basis(&[0, 1], 2);
        let shown: Vec<String> = b.iter().map(|m| m.to_string()).collect();
        assert_eq!(shown, vec!["1", "x0", "x1", "x0^2", "x0*x1", "x1^2"]);
    }

    #[test]
    fn multiply_and_degree() {
        let a = Monomial::from_powers(&[(2, 1), (0, 2)]);
        let b = Monomial::from_powers(&[(1, 1), (2, 3)]);
        let c = a.mul(&b);
        assert_eq!(c, Monomial::from_powers(&[(0, 2), (1, 1), (2, 4)]));
        assert_eq!(c.degree(), 7);
        assert_eq!(c.exponent(2), 4);
        assert_eq!(c.exponent(5), 0);
        assert_eq!(Monomial::product(&[3, 1, 3]), Monomial::from_powers(&[(1, 1), (3, 2)]));
        assert!((c.eval(&[2.0, 3.0, 0.5]) - 4.0 * 3.0 * 0.0625).abs() < 1e-15);
    }
}

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use super::monomial::{Monomial, Var};

/// Sparse multivariate polynomial with real coefficients.
///
/// Zero coefficients are never stored, so the zero polynomial is the empty
/// map. Terms iterate in graded lexicographic order.
#[derive(Clone, PartialEq, Default)]
pub struct Polynomial {
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self::monomial(Monomial::one(), c)
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    pub fn var(v: Var) -> Self {
        Self::monomial(Monomial::var(v), 1.0)
    }

    pub fn monomial(m: Monomial, coeff: f64) -> Self {
        let mut p = Self::zero();
        p.add_term(m, coeff);
        p
    }

    /// Adds `coeff * m` in place.
    pub fn add_term(&mut self, m: Monomial, coeff: f64) {
        if coeff == 0.0 {
            return;
        }
        let entry = self.terms.entry(m);
        match entry {
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let v = *o.get() + coeff;
                if v == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = v;
                }
            }
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(coeff);
            }
        }
    }

    /// Adds `scale * other` in place.
    pub fn add_scaled(&mut self, other: &Polynomial, scale: f64) {
        if scale == 0.0 {
            return;
        }
        for (m, c) in &other.terms {
            self.add_term(m.clone(), scale * c);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; 0 for the zero polynomial.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        if s == 0.0 {
            return Polynomial::zero();
        }
        let mut out = Polynomial::zero();
        for (m, c) in &self.terms {
            out.add_term(m.clone(), c * s);
        }
        out
    }

    pub fn mul_monomial(&self, m: &Monomial) -> Polynomial {
        Polynomial {
            terms: self.terms.iter().map(|(k, &c)| (k.mul(m), c)).collect(),
        }
    }

    pub fn pow(&self, e: u32) -> Polynomial {
        let mut out = Polynomial::one();
        for _ in 0..e {
            out = &out * self;
        }
        out
    }

    pub fn eval_with(&self, value: impl Fn(Var) -> f64 + Copy) -> f64 {
        self.terms.iter().map(|(m, c)| c * m.eval_with(value)).sum()
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.eval_with(|v| point[v as usize])
    }

    /// Variables that appear with a nonzero coefficient.
    pub fn vars(&self) -> Vec<Var> {
        let mut vs: Vec<Var> = self.terms.keys().flat_map(|m| m.vars().collect::<Vec<_>>()).collect();
        vs.sort_unstable();
        vs.dedup();
        vs
    }

    /// Linear combination `sum_i coeffs[i] * polys[i]`.
    pub fn linear_combination<'a>(items: impl IntoIterator<Item = (f64, &'a Polynomial)>) -> Polynomial {
        let mut out = Polynomial::zero();
        for (c, p) in items {
            out.add_scaled(p, c);
        }
        out
    }
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self.terms.iter().map(|(m, c)| format!("{c}*{m}")).collect();
        write!(f, "{}", parts.join(" + "))
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        out.add_scaled(rhs, 1.0);
        out
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        out.add_scaled(rhs, -1.0);
        out
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &rhs.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        out
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $f:ident) => {
        impl $tr for Polynomial {
            type Output = Polynomial;
            fn $f(self, rhs: Polynomial) -> Polynomial {
                (&self).$f(&rhs)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        let x = Polynomial::var(0);
        let y = Polynomial::var(1);
        let p = &(&x + &y) * &(&x - &y);
        let q = &(&x * &x) - &(&y * &y);
        assert_eq!(p, q);
        assert_eq!(p.degree(), 2);
        assert!((&p - &q).is_zero());
        assert_eq!(Polynomial::zero().degree(), 0);
        let one_minus = &Polynomial::one() - &x.pow(2);
        assert_eq!(one_minus.coeff(&Monomial::one()), 1.0);
        assert_eq!(one_minus.coeff(&Monomial::from_powers(&[(0, 2)])), -1.0);
        assert!((one_minus.eval(&[0.5]) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn no_zero_coefficients() {
        let x = Polynomial::var(0);
        let mut p = x.clone();
        p.add_term(Monomial::var(0), -1.0);
        assert!(p.is_zero());
        assert_eq!(p.len(), 0);
        assert!(x.scale(0.0).is_zero());
    }
}

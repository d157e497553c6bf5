//! Term construction, point duplication for disjoint terms, pruning and
//! the extended/recentered working dataset.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{evaluate_term, ExtendedSample, Literal, Sample, Term};

/// How extended samples are centered before the relaxation is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenteringMode {
    /// Use `[1, y, z]` as is; the conditioned population is assumed mean zero.
    #[default]
    MeanZero,
    /// Subtract the mean of `(y, z)` over all term members.
    EmpiricalRecenter,
}

/// Samples after duplication, grouped into pairwise disjoint terms.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDataset {
    pub n: usize,
    pub d: usize,
    /// The raw input, indexed by original sample id.
    pub originals: Vec<Sample>,
    /// Duplicated extended samples; `terms[j].member_ids` index into this.
    pub samples: Vec<ExtendedSample>,
    /// Term owning each duplicated sample.
    pub sample_term: Vec<usize>,
    pub terms: Vec<Term>,
    /// Duplicated index -> original index.
    pub provenance: Vec<usize>,
    /// Original samples that satisfy no retained term.
    pub unassigned: Vec<usize>,
    pub centering: CenteringMode,
}

impl PreparedDataset {
    /// `N'`, the sample count after duplication.
    pub fn n_prime(&self) -> usize {
        self.samples.len()
    }

    /// Number of terms `m`.
    pub fn m(&self) -> usize {
        self.terms.len()
    }

    pub fn n_original(&self) -> usize {
        self.originals.len()
    }

    pub fn weights(&self) -> Vec<usize> {
        self.terms.iter().map(Term::weight).collect()
    }

    /// Index of the retained term whose literals equal `term`'s, if any.
    pub fn find_term(&self, term: &Term) -> Option<usize> {
        self.terms.iter().position(|t| t.same_condition(term))
    }

    /// `(N'_good, N')` for a designated set of original sample ids.
    pub fn good_counts(&self, good_original: &[usize]) -> (usize, usize) {
        let mut is_good = vec![false; self.n_original()];
        for &g in good_original {
            if g < is_good.len() {
                is_good[g] = true;
            }
        }
        let good = self.provenance.iter().filter(|&&o| is_good[o]).count();
        (good, self.n_prime())
    }

    /// Checks the structural invariants: disjoint terms, conserved weight,
    /// and the `N' <= m N` bound.
    pub fn check_invariants(&self) -> Result<()> {
        let mut owner = vec![usize::MAX; self.n_prime()];
        for (j, term) in self.terms.iter().enumerate() {
            for &i in &term.member_ids {
                if i >= owner.len() {
                    return Err(Error::Consistency(format!("term {j} lists sample {i} out of range")));
                }
                if owner[i] != usize::MAX {
                    return Err(Error::Consistency(format!(
                        "sample {i} belongs to terms {} and {j}",
                        owner[i]
                    )));
                }
                owner[i] = j;
            }
        }
        if owner.iter().any(|&o| o == usize::MAX) {
            return Err(Error::Consistency("duplicated sample without a term".into()));
        }
        if owner != self.sample_term {
            return Err(Error::Consistency("sample_term disagrees with member lists".into()));
        }
        let total: usize = self.weights().iter().sum();
        if total != self.n_prime() {
            return Err(Error::Consistency(format!("weights sum {total} != N' {}", self.n_prime())));
        }
        if self.n_prime() > self.m() * self.n_original() {
            return Err(Error::Consistency("N' exceeds m N".into()));
        }
        Ok(())
    }
}

/// All `(C(n,k) * 2^k)` width-`k` terms: attribute subsets in lexicographic
/// order, and for each subset the polarity settings counted in binary with
/// the first attribute as the most significant bit.
pub fn enumerate_terms(n: usize, k: usize) -> Result<Vec<Term>> {
    if k == 0 || k > n {
        return Err(Error::Input(format!("term width k = {k} must satisfy 1 <= k <= n = {n}")));
    }
    let mut out = Vec::new();
    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        for bits in 0..(1usize << k) {
            let literals = subset
                .iter()
                .enumerate()
                .map(|(pos, &attr)| Literal::new(attr, (bits >> (k - 1 - pos)) & 1 == 1))
                .collect();
            out.push(Term {
                literals,
                member_ids: Vec::new(),
            });
        }
        // Advance to the next k-subset in lexicographic order.
        let mut i = k;
        while i > 0 && subset[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        subset[i - 1] += 1;
        for j in i..k {
            subset[j] = subset[j - 1] + 1;
        }
    }
    Ok(out)
}

/// Copies every sample once into each term it satisfies, so that the
/// resulting terms are pairwise disjoint over duplicated indices.
pub fn assign_and_duplicate(samples: &[Sample], terms: &[Term]) -> Result<PreparedDataset> {
    let n = samples.first().map_or(0, Sample::n);
    let d = samples.first().map_or(0, Sample::d);
    for (i, s) in samples.iter().enumerate() {
        if s.n() != n || s.d() != d {
            return Err(Error::Input(format!(
                "sample {i} has shape ({}, {}), expected ({n}, {d})",
                s.n(),
                s.d()
            )));
        }
    }

    let mut out_terms = Vec::with_capacity(terms.len());
    let mut out_samples = Vec::new();
    let mut sample_term = Vec::new();
    let mut provenance = Vec::new();
    let mut hit = vec![false; samples.len()];
    for (j, term) in terms.iter().enumerate() {
        let mut members = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            if evaluate_term(term, &s.x)? {
                members.push(out_samples.len());
                out_samples.push(s.extend());
                sample_term.push(j);
                provenance.push(i);
                hit[i] = true;
            }
        }
        out_terms.push(Term {
            literals: term.literals.clone(),
            member_ids: members,
        });
    }
    let unassigned = (0..samples.len()).filter(|&i| !hit[i]).collect();
    Ok(PreparedDataset {
        n,
        d,
        originals: samples.to_vec(),
        samples: out_samples,
        sample_term,
        terms: out_terms,
        provenance,
        unassigned,
        centering: CenteringMode::MeanZero,
    })
}

/// Removes terms with fewer than `min_size` members, along with their
/// duplicated samples.
pub fn prune_small_terms(pd: &PreparedDataset, min_size: usize) -> PreparedDataset {
    let mut samples = Vec::new();
    let mut sample_term = Vec::new();
    let mut provenance = Vec::new();
    let mut terms = Vec::new();
    let mut hit = vec![false; pd.n_original()];
    for term in pd.terms.iter().filter(|t| t.weight() >= min_size) {
        let j = terms.len();
        let mut members = Vec::with_capacity(term.weight());
        for &i in &term.member_ids {
            members.push(samples.len());
            samples.push(pd.samples[i].clone());
            sample_term.push(j);
            provenance.push(pd.provenance[i]);
            hit[pd.provenance[i]] = true;
        }
        terms.push(Term {
            literals: term.literals.clone(),
            member_ids: members,
        });
    }
    let unassigned = (0..pd.n_original()).filter(|&i| !hit[i]).collect();
    PreparedDataset {
        n: pd.n,
        d: pd.d,
        originals: pd.originals.clone(),
        samples,
        sample_term,
        terms,
        provenance,
        unassigned,
        centering: pd.centering,
    }
}

/// Applies the centering mode. Coordinate 0 always stays exactly 1.
pub fn extend_and_center(pd: &PreparedDataset, mode: CenteringMode) -> PreparedDataset {
    let mut out = pd.clone();
    out.centering = mode;
    // Recenter from the raw values so the operation does not compound.
    for (e, &o) in out.samples.iter_mut().zip(&pd.provenance) {
        *e = pd.originals[o].extend();
    }
    if mode == CenteringMode::EmpiricalRecenter && !out.samples.is_empty() {
        let dim = pd.d + 2;
        let mut mean = vec![0.0; dim];
        for s in &out.samples {
            for (m, v) in mean.iter_mut().zip(&s.y_ext) {
                *m += v;
            }
        }
        let count = out.samples.len() as f64;
        for m in &mut mean {
            *m /= count;
        }
        for s in &mut out.samples {
            for (v, m) in s.y_ext.iter_mut().zip(&mean).skip(1) {
                *v -= m;
            }
            s.y_ext[0] = 1.0;
        }
    }
    out
}

/// Enumerate, duplicate, prune and center in one go.
pub fn prepare(
    samples: &[Sample],
    k: usize,
    min_size: usize,
    mode: CenteringMode,
) -> Result<PreparedDataset> {
    let n = samples.first().map_or(0, Sample::n);
    let terms = enumerate_terms(n, k)?;
    let pd = assign_and_duplicate(samples, &terms)?;
    let pd = prune_small_terms(&pd, min_size);
    Ok(extend_and_center(&pd, mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lit(a: usize, v: bool) -> Literal {
        Literal::new(a, v)
    }

    fn random_samples(rng: &mut ChaCha8Rng, count: usize, n: usize, d: usize) -> Vec<Sample> {
        (0..count)
            .map(|_| {
                Sample::new(
                    (0..n).map(|_| rng.random_bool(0.5)).collect(),
                    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect()
    }

    // Independent oracle: count (subset, polarity) pairs by brute force over
    // all 2^n attribute masks.
    fn brute_term_count(n: usize, k: usize) -> usize {
        (0u32..(1 << n))
            .filter(|mask| mask.count_ones() as usize == k)
            .map(|_| 1usize << k)
            .sum()
    }

    #[test]
    fn enumerate_small() {
        let t = enumerate_terms(2, 1).unwrap();
        let lits: Vec<_> = t.iter().map(|t| t.literals.clone()).collect();
        assert_eq!(
            lits,
            vec![
                vec![lit(0, false)],
                vec![lit(0, true)],
                vec![lit(1, false)],
                vec![lit(1, true)]
            ]
        );
        assert_eq!(enumerate_terms(3, 2).unwrap().len(), brute_term_count(3, 2));
        assert_eq!(brute_term_count(3, 2), 12);
        assert_eq!(enumerate_terms(4, 1).unwrap().len(), brute_term_count(4, 1));
        assert_eq!(brute_term_count(4, 1), 8);
        assert_eq!(enumerate_terms(5, 5).unwrap().len(), 32);
    }

    #[test]
    fn enumerate_rejects_wide_terms() {
        assert!(matches!(enumerate_terms(2, 3), Err(Error::Input(_))));
        assert!(matches!(enumerate_terms(2, 0), Err(Error::Input(_))));
    }

    #[test]
    fn enumerate_distinct_and_ordered() {
        let t = enumerate_terms(4, 2).unwrap();
        let key = |t: &Term| {
            let attrs: Vec<usize> = t.literals.iter().map(|l| l.attr).collect();
            let bits: Vec<bool> = t.literals.iter().map(|l| l.value).collect();
            (attrs, bits)
        };
        for w in t.windows(2) {
            assert!(key(&w[0]) < key(&w[1]));
        }
    }

    #[test]
    fn duplication_examples() {
        let a = Term::from_pairs(&[(0, true)]).unwrap();
        let b = Term::from_pairs(&[(1, true)]).unwrap();
        let samples = vec![
            Sample::new(vec![true, true], vec![0.0], 1.0),
            Sample::new(vec![true, false], vec![1.0], 2.0),
            Sample::new(vec![false, false], vec![2.0], 3.0),
        ];
        let pd = assign_and_duplicate(&samples, &[a, b]).unwrap();
        pd.check_invariants().unwrap();
        assert_eq!(pd.provenance, vec![0, 1, 0]);
        assert_eq!(pd.terms[0].member_ids, vec![0, 1]);
        assert_eq!(pd.terms[1].member_ids, vec![2]);
        assert_eq!(pd.unassigned, vec![2]);
        assert_eq!(pd.n_prime(), 3);
    }

    #[test]
    fn duplication_count_matches_memberships() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples = random_samples(&mut rng, 10, 3, 1);
        let terms = vec![
            Term::from_pairs(&[(0, true)]).unwrap(),
            Term::from_pairs(&[(1, true)]).unwrap(),
            Term::from_pairs(&[(0, false), (2, true)]).unwrap(),
            Term::from_pairs(&[(1, false), (2, false)]).unwrap(),
        ];
        let brute: usize = samples
            .iter()
            .map(|s| terms.iter().filter(|t| t.evaluate(&s.x).unwrap()).count())
            .sum();
        let pd = assign_and_duplicate(&samples, &terms).unwrap();
        assert_eq!(pd.n_prime(), brute);
        for s in &samples {
            assert!(terms.iter().filter(|t| t.evaluate(&s.x).unwrap()).count() <= 2);
        }
        assert!(pd.n_prime() <= 20);
    }

    #[test]
    fn prune_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples = random_samples(&mut rng, 19, 1, 1);
        // Three disjoint empty-literal-like terms built by hand.
        let mut pd = assign_and_duplicate(&samples, &[Term::default()]).unwrap();
        pd.terms = vec![
            Term { literals: vec![lit(0, true)], member_ids: (0..10).collect() },
            Term { literals: vec![lit(0, false)], member_ids: (10..12).collect() },
            Term { literals: vec![], member_ids: (12..19).collect() },
        ];
        pd.sample_term = (0..19).map(|i| if i < 10 { 0 } else if i < 12 { 1 } else { 2 }).collect();
        let pruned = prune_small_terms(&pd, 3);
        assert_eq!(pruned.weights(), vec![10, 7]);
        pruned.check_invariants().unwrap();
        assert_eq!(prune_small_terms(&pd, 0), pd);
        let empty = prune_small_terms(&pd, 11);
        assert_eq!(empty.m(), 0);
        assert_eq!(empty.n_prime(), 0);
        assert_eq!(empty.unassigned.len(), 19);
    }

    #[test]
    fn centering_examples() {
        let samples = vec![
            Sample::new(vec![true], vec![2.0], 3.0),
        ];
        let pd = assign_and_duplicate(&samples, &[Term::default()]).unwrap();
        let pd = extend_and_center(&pd, CenteringMode::MeanZero);
        assert_eq!(pd.samples[0].y_ext, vec![1.0, 2.0, 3.0]);

        let samples = vec![
            Sample::new(vec![true], vec![1.0], 2.0),
            Sample::new(vec![true], vec![3.0], 4.0),
        ];
        let pd = assign_and_duplicate(&samples, &[Term::default()]).unwrap();
        let pd = extend_and_center(&pd, CenteringMode::EmpiricalRecenter);
        assert_eq!(pd.samples[0].y_ext, vec![1.0, -1.0, -1.0]);
        assert_eq!(pd.samples[1].y_ext, vec![1.0, 1.0, 1.0]);
        // Recentering twice does not compound.
        let again = extend_and_center(&pd, CenteringMode::EmpiricalRecenter);
        assert_eq!(again.samples, pd.samples);
    }

    #[test]
    fn invariants_on_random_datasets() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let n = rng.random_range(2..6);
            let k = rng.random_range(1..=n.min(3));
            let count = rng.random_range(1..40);
            let samples = random_samples(&mut rng, count, n, 2);
            let terms = enumerate_terms(n, k).unwrap();
            let pd = assign_and_duplicate(&samples, &terms).unwrap();
            pd.check_invariants().unwrap();
            let members: usize = samples
                .iter()
                .map(|s| terms.iter().filter(|t| t.evaluate(&s.x).unwrap()).count())
                .sum();
            assert_eq!(pd.n_prime(), members);
            let good: Vec<usize> = (0..count).filter(|_| rng.random_bool(0.3)).collect();
            let (good_p, n_p) = pd.good_counts(&good);
            // N'_good / N' >= N_good / (m N), cross-multiplied to stay exact.
            assert!(good_p * pd.m() * count >= good.len() * n_p);
        }
    }
}

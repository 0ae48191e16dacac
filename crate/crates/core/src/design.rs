//! Fixed-size sampling designs with closed-form inclusion probabilities.
//!
//! Units are indexed `0..N`.

use std::collections::HashMap;

use itertools::Itertools;
use rand::Rng;

use crate::error::{Error, Result};

/// Default cap on the number of samples [`SamplingDesign::enumerate_samples`] will list.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// First- and second-order inclusion probabilities of a fixed-size design.
///
/// `second_order(k, k)` returns `first_order(k)`.
pub trait InclusionProbabilities: Sync {
    fn population_size(&self) -> usize;
    fn sample_size(&self) -> usize;
    fn first_order(&self, k: usize) -> f64;
    fn second_order(&self, k: usize, l: usize) -> f64;

    /// `pi_kl - pi_k pi_l`.
    fn delta(&self, k: usize, l: usize) -> f64 {
        self.second_order(k, l) - self.first_order(k) * self.first_order(l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignKind {
    Srswor,
    StratifiedSrswor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stratum {
    pub units: Vec<usize>,
    pub sample_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDesign {
    population_size: usize,
    sample_size: usize,
    strata: Option<Vec<Stratum>>,
    /// Stratum of each unit (all zeros without stratification).
    stratum_of: Vec<usize>,
}

impl SamplingDesign {
    /// Simple random sampling without replacement of `n` out of `population_size`.
    pub fn srswor(population_size: usize, n: usize) -> Result<Self> {
        if n == 0 || n > population_size {
            return Err(Error::Validation(format!(
                "sample size must satisfy 1 <= n <= N, got n = {n}, N = {population_size}"
            )));
        }
        Ok(Self {
            population_size,
            sample_size: n,
            strata: None,
            stratum_of: vec![0; population_size],
        })
    }

    /// SRSWOR within each stratum; strata must partition `0..population_size`.
    pub fn stratified(population_size: usize, strata: Vec<Stratum>) -> Result<Self> {
        if strata.is_empty() {
            return Err(Error::Validation("stratified design needs at least one stratum".into()));
        }
        let mut stratum_of = vec![usize::MAX; population_size];
        for (h, s) in strata.iter().enumerate() {
            if s.sample_size == 0 || s.sample_size > s.units.len() {
                return Err(Error::Validation(format!(
                    "stratum {h}: sample size must satisfy 1 <= n_h <= N_h, got n_h = {}, N_h = {}",
                    s.sample_size,
                    s.units.len()
                )));
            }
            for &k in &s.units {
                if k >= population_size {
                    return Err(Error::IndexOutOfRange {
                        index: k,
                        len: population_size,
                    });
                }
                if stratum_of[k] != usize::MAX {
                    return Err(Error::Validation(format!("unit {k} belongs to more than one stratum")));
                }
                stratum_of[k] = h;
            }
        }
        if let Some(k) = stratum_of.iter().position(|&h| h == usize::MAX) {
            return Err(Error::Validation(format!("unit {k} is not assigned to any stratum")));
        }
        let mut strata = strata;
        for s in &mut strata {
            s.units.sort_unstable();
        }
        Ok(Self {
            population_size,
            sample_size: strata.iter().map(|s| s.sample_size).sum(),
            strata: Some(strata),
            stratum_of,
        })
    }

    /// Strata from per-unit labels, in order of first appearance.
    ///
    /// Without an explicit allocation the total `n` is split proportionally
    /// to stratum sizes (largest remainder), with at least one unit per stratum.
    pub fn stratified_from_labels(labels: &[String], n: usize, allocation: Option<&[usize]>) -> Result<Self> {
        let mut order: Vec<&str> = Vec::new();
        let mut members: HashMap<&str, Vec<usize>> = HashMap::new();
        for (k, label) in labels.iter().enumerate() {
            let entry = members.entry(label.as_str()).or_insert_with(|| {
                order.push(label.as_str());
                Vec::new()
            });
            entry.push(k);
        }
        let sizes: Vec<usize> = order.iter().map(|l| members[l].len()).collect();
        let alloc = match allocation {
            Some(a) => {
                if a.len() != sizes.len() {
                    return Err(Error::DimensionMismatch {
                        context: "stratum allocation",
                        expected: sizes.len(),
                        actual: a.len(),
                    });
                }
                a.to_vec()
            }
            None => proportional_allocation(&sizes, n)?,
        };
        let strata = order
            .iter()
            .zip(alloc)
            .map(|(l, n_h)| Stratum {
                units: members[l].clone(),
                sample_size: n_h,
            })
            .collect();
        let design = Self::stratified(labels.len(), strata)?;
        if design.sample_size != n {
            return Err(Error::Validation(format!(
                "stratum allocation sums to {} but n = {n}",
                design.sample_size
            )));
        }
        Ok(design)
    }

    pub fn kind(&self) -> DesignKind {
        if self.strata.is_some() {
            DesignKind::StratifiedSrswor
        } else {
            DesignKind::Srswor
        }
    }

    pub fn strata(&self) -> Option<&[Stratum]> {
        self.strata.as_deref()
    }

    /// Same design with a different total sample size. Stratified designs are
    /// re-allocated proportionally.
    pub fn with_sample_size(&self, n: usize) -> Result<Self> {
        match &self.strata {
            None => Self::srswor(self.population_size, n),
            Some(strata) => {
                let sizes: Vec<usize> = strata.iter().map(|s| s.units.len()).collect();
                let alloc = proportional_allocation(&sizes, n)?;
                let strata = strata
                    .iter()
                    .zip(alloc)
                    .map(|(s, n_h)| Stratum {
                        units: s.units.clone(),
                        sample_size: n_h,
                    })
                    .collect();
                Self::stratified(self.population_size, strata)
            }
        }
    }

    fn check_unit(&self, k: usize) -> Result<()> {
        if k < self.population_size {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: k,
                len: self.population_size,
            })
        }
    }

    fn stratum_sizes(&self, k: usize) -> (f64, f64) {
        match &self.strata {
            None => (self.population_size as f64, self.sample_size as f64),
            Some(strata) => {
                let s = &strata[self.stratum_of[k]];
                (s.units.len() as f64, s.sample_size as f64)
            }
        }
    }

    pub fn first_order_prob(&self, k: usize) -> Result<f64> {
        self.check_unit(k)?;
        Ok(self.first_order(k))
    }

    pub fn second_order_prob(&self, k: usize, l: usize) -> Result<f64> {
        self.check_unit(k)?;
        self.check_unit(l)?;
        Ok(self.second_order(k, l))
    }

    /// Smallest first-order probability.
    pub fn min_first_order(&self) -> f64 {
        (0..self.population_size)
            .map(|k| self.first_order(k))
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest second-order probability over distinct pairs (1.0 when N = 1).
    pub fn min_second_order(&self) -> f64 {
        let within = |big_n: usize, n: usize| -> f64 {
            if big_n < 2 {
                f64::INFINITY
            } else {
                (n * (n - 1)) as f64 / (big_n * (big_n - 1)) as f64
            }
        };
        let m = match &self.strata {
            None => within(self.population_size, self.sample_size),
            Some(strata) => {
                let inner = strata
                    .iter()
                    .map(|s| within(s.units.len(), s.sample_size))
                    .fold(f64::INFINITY, f64::min);
                let firsts: Vec<f64> = strata
                    .iter()
                    .map(|s| s.sample_size as f64 / s.units.len() as f64)
                    .sorted_by(f64::total_cmp)
                    .collect();
                let across = if firsts.len() >= 2 {
                    firsts[0] * firsts[1]
                } else {
                    f64::INFINITY
                };
                inner.min(across)
            }
        };
        if m.is_finite() {
            m
        } else {
            1.0
        }
    }

    /// Checks that every pair of units can appear together in a sample.
    pub fn check_measurable(&self) -> Result<()> {
        let lambda_star = self.min_second_order();
        if lambda_star > 0.0 {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "design has pairs of units that are never sampled together (min pi_kl = {lambda_star})"
            )))
        }
    }

    /// Validates that a sample belongs to this design.
    pub fn check_sample(&self, sample: &Sample) -> Result<()> {
        if sample.population_size() != self.population_size {
            return Err(Error::DimensionMismatch {
                context: "sample population size vs design",
                expected: self.population_size,
                actual: sample.population_size(),
            });
        }
        if sample.len() != self.sample_size {
            return Err(Error::DimensionMismatch {
                context: "sample size vs design",
                expected: self.sample_size,
                actual: sample.len(),
            });
        }
        if let Some(strata) = &self.strata {
            let mut counts = vec![0usize; strata.len()];
            for &k in sample.indices() {
                counts[self.stratum_of[k]] += 1;
            }
            for (h, (c, s)) in counts.iter().zip(strata).enumerate() {
                if *c != s.sample_size {
                    return Err(Error::Validation(format!(
                        "sample has {c} units in stratum {h}, design requires {}",
                        s.sample_size
                    )));
                }
            }
        }
        Ok(())
    }

    /// Draws a sample by partial Fisher-Yates selection within each stratum.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        let mut indices = match &self.strata {
            None => partial_fisher_yates(rng, self.population_size, self.sample_size),
            Some(strata) => {
                let mut all = Vec::with_capacity(self.sample_size);
                for s in strata {
                    let picks = partial_fisher_yates(rng, s.units.len(), s.sample_size);
                    all.extend(picks.into_iter().map(|i| s.units[i]));
                }
                all
            }
        };
        indices.sort_unstable();
        Sample {
            indices,
            population_size: self.population_size,
        }
    }

    /// Number of distinct samples the design can produce (saturating).
    pub fn sample_count(&self) -> u128 {
        match &self.strata {
            None => binomial(self.population_size, self.sample_size),
            Some(strata) => strata
                .iter()
                .map(|s| binomial(s.units.len(), s.sample_size))
                .fold(1u128, |acc, c| acc.saturating_mul(c)),
        }
    }

    /// Every possible sample with its probability.
    pub fn enumerate_samples(&self, cap: u128) -> Result<Vec<(Sample, f64)>> {
        let required = self.sample_count();
        if required > cap {
            return Err(Error::EnumerationCap { required, cap });
        }
        let prob = 1.0 / required as f64;
        let samples: Vec<Vec<usize>> = match &self.strata {
            None => (0..self.population_size).combinations(self.sample_size).collect(),
            Some(strata) => strata
                .iter()
                .map(|s| s.units.iter().copied().combinations(s.sample_size).collect::<Vec<_>>())
                .multi_cartesian_product()
                .map(|parts| {
                    let mut v: Vec<usize> = parts.into_iter().flatten().collect();
                    v.sort_unstable();
                    v
                })
                .collect(),
        };
        Ok(samples
            .into_iter()
            .map(|indices| {
                (
                    Sample {
                        indices,
                        population_size: self.population_size,
                    },
                    prob,
                )
            })
            .collect())
    }
}

impl InclusionProbabilities for SamplingDesign {
    fn population_size(&self) -> usize {
        self.population_size
    }

    fn sample_size(&self) -> usize {
        self.sample_size
    }

    fn first_order(&self, k: usize) -> f64 {
        let (big_n, n) = self.stratum_sizes(k);
        n / big_n
    }

    fn second_order(&self, k: usize, l: usize) -> f64 {
        if k == l {
            return self.first_order(k);
        }
        if self.stratum_of[k] != self.stratum_of[l] {
            return self.first_order(k) * self.first_order(l);
        }
        let (big_n, n) = self.stratum_sizes(k);
        n * (n - 1.0) / (big_n * (big_n - 1.0))
    }
}

/// Sorted, distinct unit indices drawn from a population.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sample {
    indices: Vec<usize>,
    population_size: usize,
}

impl Sample {
    /// Accepts indices in any order; rejects duplicates and out-of-range units.
    pub fn new(mut indices: Vec<usize>, population_size: usize) -> Result<Self> {
        indices.sort_unstable();
        if let Some(w) = indices.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Validation(format!("unit {} appears twice in the sample", w[0])));
        }
        if let Some(&k) = indices.last() {
            if k >= population_size {
                return Err(Error::IndexOutOfRange {
                    index: k,
                    len: population_size,
                });
            }
        }
        if indices.is_empty() {
            return Err(Error::Validation("sample is empty".into()));
        }
        Ok(Self {
            indices,
            population_size,
        })
    }

    /// The whole population.
    pub fn census(population_size: usize) -> Self {
        Self {
            indices: (0..population_size).collect(),
            population_size,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn population_size(&self) -> usize {
        self.population_size
    }

    pub fn contains(&self, k: usize) -> bool {
        self.indices.binary_search(&k).is_ok()
    }
}

/// `n` distinct positions out of `0..len`, using only the swaps actually made.
fn partial_fisher_yates<R: Rng + ?Sized>(rng: &mut R, len: usize, n: usize) -> Vec<usize> {
    let mut displaced: HashMap<usize, usize> = HashMap::with_capacity(n);
    let mut picks = Vec::with_capacity(n);
    for i in 0..n {
        let j = rng.random_range(i as u64..len as u64) as usize;
        let at_i = displaced.get(&i).copied().unwrap_or(i);
        let at_j = displaced.get(&j).copied().unwrap_or(j);
        picks.push(at_j);
        displaced.insert(j, at_i);
    }
    picks
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        // c * (n - i) is divisible by (i + 1)
        c = match c.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    c
}

fn proportional_allocation(sizes: &[usize], n: usize) -> Result<Vec<usize>> {
    let total: usize = sizes.iter().sum();
    if n < sizes.len() || n > total {
        return Err(Error::Validation(format!(
            "cannot allocate n = {n} over {} strata of total size {total}",
            sizes.len()
        )));
    }
    let exact: Vec<f64> = sizes.iter().map(|&s| n as f64 * s as f64 / total as f64).collect();
    let mut alloc: Vec<usize> = exact.iter().map(|e| (e.floor() as usize).max(1)).collect();
    let mut assigned: usize = alloc.iter().sum();
    let by_remainder: Vec<usize> = (0..sizes.len())
        .sorted_by(|&a, &b| {
            let ra = exact[a] - alloc[a] as f64;
            let rb = exact[b] - alloc[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        })
        .collect();
    let mut cursor = 0;
    while assigned < n {
        let h = by_remainder[cursor % sizes.len()];
        if alloc[h] < sizes[h] {
            alloc[h] += 1;
            assigned += 1;
        }
        cursor += 1;
    }
    while assigned > n {
        let h = (0..sizes.len())
            .filter(|&h| alloc[h] > 1)
            .max_by(|&a, &b| (alloc[a] as f64 - exact[a]).total_cmp(&(alloc[b] as f64 - exact[b])))
            .ok_or_else(|| Error::Validation("allocation cannot satisfy one unit per stratum".into()))?;
        alloc[h] -= 1;
        assigned -= 1;
    }
    Ok(alloc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn two_by_two() -> SamplingDesign {
        SamplingDesign::stratified(
            4,
            vec![
                Stratum {
                    units: vec![0, 1],
                    sample_size: 1,
                },
                Stratum {
                    units: vec![2, 3],
                    sample_size: 1,
                },
            ],
        )
        .unwrap()
    }

    /// Probability-weighted membership counts over the enumerated samples.
    fn enumerated_pi(design: &SamplingDesign, k: usize, l: usize) -> f64 {
        design
            .enumerate_samples(DEFAULT_ENUMERATION_CAP)
            .unwrap()
            .iter()
            .filter(|(s, _)| s.contains(k) && s.contains(l))
            .map(|(_, p)| p)
            .sum()
    }

    #[test]
    fn srswor_first_order_matches_enumeration() {
        let d = SamplingDesign::srswor(4, 2).unwrap();
        assert_eq!(d.first_order_prob(3).unwrap(), 0.5);
        assert!((enumerated_pi(&d, 3, 3) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn census_probabilities() {
        let d = SamplingDesign::srswor(3, 3).unwrap();
        assert_eq!(d.first_order_prob(0).unwrap(), 1.0);
        assert_eq!(d.second_order_prob(0, 2).unwrap(), 1.0);
    }

    #[test]
    fn stratified_probabilities() {
        let d = two_by_two();
        assert_eq!(d.first_order_prob(0).unwrap(), 0.5);
        assert!((enumerated_pi(&d, 0, 0) - 0.5).abs() < 1e-15);
        assert_eq!(d.second_order_prob(0, 1).unwrap(), 0.0);
        assert_eq!(d.second_order_prob(0, 2).unwrap(), 0.25);
        assert!((enumerated_pi(&d, 0, 2) - 0.25).abs() < 1e-15);
        assert!(d.check_measurable().is_err());
    }

    #[test]
    fn srswor_second_order() {
        let d = SamplingDesign::srswor(4, 2).unwrap();
        assert!((d.second_order_prob(0, 1).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!((enumerated_pi(&d, 0, 1) - 1.0 / 6.0).abs() < 1e-15);
        let d = SamplingDesign::srswor(5, 3).unwrap();
        assert!((d.second_order_prob(1, 3).unwrap() - 0.3).abs() < 1e-15);
        assert!((enumerated_pi(&d, 1, 3) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn index_out_of_range() {
        let d = SamplingDesign::srswor(4, 2).unwrap();
        assert!(matches!(d.first_order_prob(4), Err(Error::IndexOutOfRange { .. })));
        assert!(d.second_order_prob(0, 9).is_err());
    }

    #[test]
    fn invalid_sizes_rejected() {
        assert!(SamplingDesign::srswor(4, 0).is_err());
        assert!(SamplingDesign::srswor(4, 5).is_err());
    }

    #[test]
    fn enumeration_counts() {
        let d = SamplingDesign::srswor(4, 2).unwrap();
        let all = d.enumerate_samples(DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(all.len(), 6);
        assert!(all.iter().all(|(_, p)| (p - 1.0 / 6.0).abs() < 1e-15));

        let census = SamplingDesign::srswor(3, 3).unwrap();
        let all = census.enumerate_samples(DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].0.indices(), &[0, 1, 2]);
        assert_eq!(all[0].1, 1.0);

        let all = two_by_two().enumerate_samples(DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(all.len(), 4);
        assert!(all.iter().all(|(_, p)| *p == 0.25));
    }

    #[test]
    fn enumeration_cap_refuses() {
        let d = SamplingDesign::srswor(40, 20).unwrap();
        match d.enumerate_samples(DEFAULT_ENUMERATION_CAP) {
            Err(Error::EnumerationCap { required, .. }) => assert_eq!(required, 137_846_528_820),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn census_draw_is_everything() {
        let d = SamplingDesign::srswor(7, 7).unwrap();
        let s = d.draw(&mut rng::stream(1, 0));
        assert_eq!(s.indices(), &[0, 1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn draw_is_deterministic() {
        let d = SamplingDesign::srswor(100, 10).unwrap();
        assert_eq!(d.draw(&mut rng::stream(5, 2)), d.draw(&mut rng::stream(5, 2)));
    }

    #[test]
    fn srswor_subsets_are_uniform() {
        let d = SamplingDesign::srswor(4, 2).unwrap();
        let mut rng = rng::stream(11, 0);
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        let draws = 60_000;
        for _ in 0..draws {
            *counts.entry(d.draw(&mut rng).indices().to_vec()).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for c in counts.values() {
            let f = *c as f64 / draws as f64;
            assert!((f - 1.0 / 6.0).abs() <= 0.01, "frequency {f}");
        }
    }

    #[test]
    fn stratified_draw_respects_allocation() {
        let labels: Vec<String> = (0..30).map(|k| if k % 3 == 0 { "a" } else { "b" }.to_string()).collect();
        let d = SamplingDesign::stratified_from_labels(&labels, 9, None).unwrap();
        let sizes: Vec<usize> = d.strata().unwrap().iter().map(|s| s.sample_size).collect();
        assert_eq!(sizes, vec![3, 6]);
        let s = d.draw(&mut rng::stream(3, 0));
        d.check_sample(&s).unwrap();
    }

    #[test]
    fn sample_rejects_duplicates() {
        assert!(Sample::new(vec![1, 1], 3).is_err());
        assert!(Sample::new(vec![3], 3).is_err());
        assert_eq!(Sample::new(vec![2, 0], 3).unwrap().indices(), &[0, 2]);
    }

    #[test]
    fn srswor_pairs_are_negatively_associated() {
        for (big_n, n) in [(5, 2), (10, 3), (8, 7)] {
            let d = SamplingDesign::srswor(big_n, n).unwrap();
            assert!(d.delta(0, 1) <= 0.0);
        }
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(8, 4), 70);
        assert_eq!(binomial(3, 5), 0);
    }
}

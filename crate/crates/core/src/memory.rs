//! Budgeted exemplar memory with herding selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::LabeledSample;
use crate::error::{Error, Result};

/// Greedy herding: the k-th pick minimises `‖μ − (f(x) + Σ_{j<k} f(pⱼ)) / k‖₂`
/// over not-yet-chosen rows, with ties going to the lowest index. `quota`
/// larger than the number of rows keeps all rows.
pub fn herding_select(features: &[Vec<f64>], quota: usize) -> Vec<usize> {
    let n = features.len();
    if n == 0 || quota == 0 {
        return Vec::new();
    }
    let dim = features[0].len();
    let mut mu = vec![0.0; dim];
    for f in features {
        mu.iter_mut().zip(f).for_each(|(m, v)| *m += v);
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);

    let quota = quota.min(n);
    let mut chosen = Vec::with_capacity(quota);
    let mut taken = vec![false; n];
    let mut running = vec![0.0; dim];
    for k in 1..=quota {
        let mut best: Option<(usize, f64)> = None;
        for (i, f) in features.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let dist: f64 = (0..dim)
                .map(|d| {
                    let r = mu[d] - (running[d] + f[d]) / k as f64;
                    r * r
                })
                .sum();
            if best.is_none_or(|(_, b)| dist < b) {
                best = Some((i, dist));
            }
        }
        let (i, _) = best.expect("quota ≤ n leaves a candidate");
        taken[i] = true;
        running.iter_mut().zip(&features[i]).for_each(|(r, v)| *r += v);
        chosen.push(i);
    }
    chosen
}

/// Per-class exemplar lists in herding rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarMemory {
    budget: usize,
    per_class: BTreeMap<usize, Vec<LabeledSample>>,
}

/// Reproducibility record of the memory content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryManifest {
    pub budget: usize,
    pub classes: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub class_id: usize,
    pub count: usize,
    /// Dataset sample ids, in herding rank order.
    pub source_ids: Vec<usize>,
}

impl ExemplarMemory {
    pub fn new(budget: usize) -> Self {
        Self {
            budget,
            per_class: BTreeMap::new(),
        }
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.per_class.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_class.keys().copied()
    }

    pub fn class(&self, c: usize) -> &[LabeledSample] {
        self.per_class.get(&c).map(Vec::as_slice).unwrap_or(&[])
    }

    /// All exemplars, class by class in rank order.
    pub fn iter(&self) -> impl Iterator<Item = &LabeledSample> {
        self.per_class.values().flatten()
    }

    /// Per-class quota `⌊B / seen_classes⌋`.
    pub fn quota(&self, seen_classes: usize) -> usize {
        self.budget / seen_classes.max(1)
    }

    /// Truncates every class to the quota for `seen_classes`, dropping the
    /// highest herding ranks first.
    pub fn rebalance(&mut self, seen_classes: usize) -> Result<()> {
        if seen_classes == 0 {
            return Err(Error::contract("rebalance needs at least one seen class"));
        }
        let q = self.quota(seen_classes);
        self.per_class.values_mut().for_each(|v| v.truncate(q));
        Ok(())
    }

    /// Selects exemplars for each class in `classes` by herding on
    /// `features(samples)` (one row per sample), then rebalances over
    /// `seen_classes`. Classes without samples are skipped with a warning.
    pub fn add_task_exemplars<F>(
        &mut self,
        samples: &[LabeledSample],
        classes: &[usize],
        seen_classes: usize,
        mut features: F,
    ) -> Result<()>
    where
        F: FnMut(&[&LabeledSample]) -> Result<Vec<Vec<f64>>>,
    {
        let q = self.quota(seen_classes);
        for &c in classes {
            let members: Vec<&LabeledSample> = samples.iter().filter(|s| s.label == c).collect();
            if members.is_empty() {
                log::warn!("class {c} has no samples; no exemplars selected");
                continue;
            }
            let feats = features(&members)?;
            if feats.len() != members.len() {
                return Err(Error::shape(format!(
                    "{} feature rows for {} samples",
                    feats.len(),
                    members.len()
                )));
            }
            let picked = herding_select(&feats, q);
            self.per_class
                .insert(c, picked.into_iter().map(|i| members[i].clone()).collect());
        }
        self.rebalance(seen_classes)
    }

    pub fn manifest(&self) -> MemoryManifest {
        MemoryManifest {
            budget: self.budget,
            classes: self
                .per_class
                .iter()
                .map(|(&c, v)| ManifestEntry {
                    class_id: c,
                    count: v.len(),
                    source_ids: v.iter().map(|s| s.id).collect(),
                })
                .collect(),
        }
    }

    /// Rebuilds a memory from a manifest, resolving sample ids with `lookup`.
    pub fn from_manifest<F>(manifest: &MemoryManifest, mut lookup: F) -> Result<Self>
    where
        F: FnMut(usize) -> Option<LabeledSample>,
    {
        let mut mem = Self::new(manifest.budget);
        for e in &manifest.classes {
            let samples = e
                .source_ids
                .iter()
                .map(|&id| lookup(id).ok_or_else(|| Error::Lookup(format!("sample id {id} not in dataset"))))
                .collect::<Result<Vec<_>>>()?;
            if samples.len() != e.count || samples.iter().any(|s| s.label != e.class_id) {
                return Err(Error::Format(format!("manifest entry for class {} is inconsistent", e.class_id)));
            }
            mem.per_class.insert(e.class_id, samples);
        }
        if mem.len() > mem.budget {
            return Err(Error::Format("manifest exceeds its budget".into()));
        }
        Ok(mem)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(id: usize, label: usize, v: f32) -> LabeledSample {
        LabeledSample {
            id,
            label,
            image: vec![v],
        }
    }

    /// Exhaustive greedy: recomputes each candidate mean from scratch.
    fn greedy_oracle(features: &[Vec<f64>], quota: usize) -> Vec<usize> {
        let n = features.len();
        let dim = features[0].len();
        let mu: Vec<f64> = (0..dim)
            .map(|d| features.iter().map(|f| f[d]).sum::<f64>() / n as f64)
            .collect();
        let mut chosen: Vec<usize> = Vec::new();
        for _ in 0..quota.min(n) {
            let mut scored: Vec<(f64, usize)> = (0..n)
                .filter(|i| !chosen.contains(i))
                .map(|i| {
                    let set: Vec<usize> = chosen.iter().copied().chain([i]).collect();
                    let dist = (0..dim)
                        .map(|d| {
                            let m = set.iter().map(|&j| features[j][d]).sum::<f64>() / set.len() as f64;
                            (mu[d] - m).powi(2)
                        })
                        .sum::<f64>();
                    (dist, i)
                })
                .collect();
            scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            chosen.push(scored[0].1);
        }
        chosen
    }

    #[test]
    fn herding_hand_examples() {
        let f = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert_eq!(herding_select(&f, 1), vec![1]);
        // residuals for the second pick: 0 → |1 − 0.5| = 0.5, 2 → |1 − 1.5| = 0.5
        assert_eq!(herding_select(&f, 2), vec![1, 0]);
        assert_eq!(herding_select(&f, 10), vec![1, 0, 2]);
    }

    #[test]
    fn herding_matches_oracle_on_random_instance() {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let f: Vec<Vec<f64>> = (0..8).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        assert_eq!(herding_select(&f, 4), greedy_oracle(&f, 4));
    }

    proptest! {
        #[test]
        fn herding_equals_exhaustive_greedy(
            rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 2), 1..=10),
            quota in 1usize..12,
        ) {
            prop_assert_eq!(herding_select(&rows, quota), greedy_oracle(&rows, quota));
        }

        #[test]
        fn herding_is_prefix_stable(
            rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 2..=10),
            q in 1usize..9,
        ) {
            let small = herding_select(&rows, q);
            let large = herding_select(&rows, q + 1);
            prop_assert_eq!(&large[..small.len()], &small[..]);
        }

        #[test]
        fn budget_never_exceeded(tasks in proptest::collection::vec(1usize..4, 1..5), budget in 1usize..30) {
            let mut mem = ExemplarMemory::new(budget);
            let mut seen = 0;
            let mut id = 0;
            for classes_in_task in tasks {
                let classes: Vec<usize> = (seen..seen + classes_in_task).collect();
                seen += classes_in_task;
                let samples: Vec<LabeledSample> = classes
                    .iter()
                    .flat_map(|&c| (0..7).map(move |k| (c, k)))
                    .map(|(c, k)| { id += 1; sample(id, c, k as f32) })
                    .collect();
                mem.add_task_exemplars(&samples, &classes, seen, |m| {
                    Ok(m.iter().map(|s| vec![s.image[0] as f64]).collect())
                }).unwrap();
                prop_assert!(mem.len() <= budget);
            }
        }
    }

    #[test]
    fn rebalance_quotas() {
        assert_eq!(ExemplarMemory::new(2000).quota(100), 20);
        let mut mem = ExemplarMemory::new(10);
        for c in 0..3 {
            mem.per_class.insert(c, (0..5).map(|k| sample(c * 10 + k, c, 0.0)).collect());
        }
        mem.per_class.insert(3, vec![sample(99, 3, 0.0), sample(98, 3, 0.0)]);
        mem.rebalance(3).unwrap();
        assert!(mem.per_class.values().take(3).all(|v| v.len() == 3));
        assert!(mem.len() <= 11);
        let mut mem2 = ExemplarMemory::new(10);
        mem2.per_class.insert(0, vec![sample(1, 0, 0.0), sample(2, 0, 0.0)]);
        mem2.rebalance(2).unwrap();
        assert_eq!(mem2.class(0).len(), 2);
        assert!(mem2.rebalance(0).is_err());
    }

    #[test]
    fn two_task_walkthrough_truncates_by_rank() {
        let feat = |m: &[&LabeledSample]| Ok(m.iter().map(|s| vec![s.image[0] as f64]).collect());
        let task1: Vec<LabeledSample> = (0..20).map(|i| sample(i, i % 2, (i * 7 % 11) as f32)).collect();
        let mut mem = ExemplarMemory::new(8);
        mem.add_task_exemplars(&task1, &[0, 1], 2, feat).unwrap();
        assert_eq!(mem.class(0).len(), 4);
        assert_eq!(mem.class(1).len(), 4);
        let before: Vec<usize> = mem.class(0).iter().map(|s| s.id).collect();

        let task2: Vec<LabeledSample> = (20..40).map(|i| sample(i, 2 + i % 2, i as f32)).collect();
        mem.add_task_exemplars(&task2, &[2, 3], 4, feat).unwrap();
        for c in 0..4 {
            assert_eq!(mem.class(c).len(), 2);
        }
        let after: Vec<usize> = mem.class(0).iter().map(|s| s.id).collect();
        assert_eq!(after, before[..2]);
    }

    #[test]
    fn empty_class_is_skipped() {
        let mut mem = ExemplarMemory::new(4);
        let s = vec![sample(0, 0, 1.0)];
        mem.add_task_exemplars(&s, &[0, 1], 2, |m| Ok(m.iter().map(|_| vec![0.0]).collect()))
            .unwrap();
        assert_eq!(mem.classes().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn manifest_round_trip() {
        let samples: Vec<LabeledSample> = (0..6).map(|i| sample(i, i % 2, i as f32)).collect();
        let mut mem = ExemplarMemory::new(4);
        mem.add_task_exemplars(&samples, &[0, 1], 2, |m| Ok(m.iter().map(|s| vec![s.image[0] as f64]).collect()))
            .unwrap();
        let man = mem.manifest();
        let back = ExemplarMemory::from_manifest(&man, |id| samples.iter().find(|s| s.id == id).cloned()).unwrap();
        assert_eq!(back, mem);
    }
}

//! Ranking metrics for next-item prediction: precision@K (hit rate) and
//! mean reciprocal rank@K, plus the deterministic rank rule they share.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// 1-based rank of `target` when all items are ordered by score descending,
/// ties broken by ascending item index.
///
/// Equivalent in counting form: one plus the number of items scoring
/// strictly higher, plus the number of equal-scoring items with a smaller
/// index. A non-finite target score is rejected; other non-finite scores
/// compare as "not higher" and therefore rank below the target.
pub fn rank_of_target<S: Scalar>(scores: &[S], target: usize) -> Result<usize> {
    if target >= scores.len() {
        return Err(Error::Bounds(format!(
            "target {target} out of range for {} scores",
            scores.len()
        )));
    }
    let t = scores[target].to_f64();
    if !t.is_finite() {
        return Err(Error::Numeric(format!("target score is not finite: {t}")));
    }
    let mut rank = 1usize;
    for (i, &s) in scores.iter().enumerate() {
        let v = s.to_f64();
        if v > t || (v == t && i < target) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// Evaluation summary: per-cutoff precision and MRR over a set of ranked
/// instances, with the instance count and wall-clock seconds it took.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// K → fraction of instances whose target ranked within the top K.
    pub precision: BTreeMap<usize, f64>,
    /// K → mean of 1/rank over instances with rank ≤ K (0 contribution otherwise).
    pub mrr: BTreeMap<usize, f64>,
    pub instances: usize,
    pub seconds: f64,
}

impl EvalReport {
    /// Aggregate a list of 1-based target ranks at the given cutoffs.
    pub fn from_ranks(ranks: &[usize], ks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::Input("no instances to evaluate".into()));
        }
        if ks.is_empty() {
            return Err(Error::Contract("at least one cutoff K is required".into()));
        }
        let n = ranks.len() as f64;
        let mut precision = BTreeMap::new();
        let mut mrr = BTreeMap::new();
        for &k in ks {
            if k == 0 {
                return Err(Error::Contract("cutoff K must be at least 1".into()));
            }
            let hits = ranks.iter().filter(|&&r| r <= k).count() as f64;
            let recip: f64 = ranks
                .iter()
                .map(|&r| if r <= k { 1.0 / r as f64 } else { 0.0 })
                .sum();
            precision.insert(k, hits / n);
            mrr.insert(k, recip / n);
        }
        Ok(Self { precision, mrr, instances: ranks.len(), seconds: 0.0 })
    }

    pub fn precision_at(&self, k: usize) -> Option<f64> {
        self.precision.get(&k).copied()
    }

    pub fn mrr_at(&self, k: usize) -> Option<f64> {
        self.mrr.get(&k).copied()
    }
}

impl fmt::Display for EvalReport {
    /// One `key=value` pair per line: instance count, then `p@K`/`mrr@K`
    /// for each cutoff ascending, then the wall-clock seconds.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "instances={}", self.instances)?;
        for (k, p) in &self.precision {
            writeln!(f, "p@{k}={p}")?;
            writeln!(f, "mrr@{k}={}", self.mrr[k])?;
        }
        write!(f, "seconds={}", self.seconds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force oracle: sort (score desc, index asc) and find the target.
    fn rank_by_sorting(scores: &[f64], target: usize) -> usize {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b))
        });
        1 + order.iter().position(|&i| i == target).unwrap()
    }

    #[test]
    fn rank_counts_strictly_higher_and_earlier_equal_scores() {
        let scores = [0.5, 0.7, 0.5, 0.2];
        assert_eq!(rank_of_target(&scores, 1).unwrap(), 1);
        assert_eq!(rank_of_target(&scores, 0).unwrap(), 2);
        assert_eq!(rank_of_target(&scores, 2).unwrap(), 3); // loses tie to index 0
        assert_eq!(rank_of_target(&scores, 3).unwrap(), 4);
    }

    #[test]
    fn rank_matches_sorting_oracle_on_random_vectors() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6021);
        for _ in 0..200 {
            let n = rng.gen_range(1..30);
            // Coarse grid forces plenty of ties.
            let scores: Vec<f64> =
                (0..n).map(|_| f64::from(rng.gen_range(-3i32..4))).collect();
            for target in 0..n {
                assert_eq!(
                    rank_of_target(&scores, target).unwrap(),
                    rank_by_sorting(&scores, target),
                    "scores {scores:?} target {target}"
                );
            }
        }
    }

    #[test]
    fn rank_rejects_bad_targets_and_non_finite_target_scores() {
        assert!(matches!(rank_of_target(&[1.0, 2.0], 2), Err(Error::Bounds(_))));
        assert!(matches!(
            rank_of_target(&[1.0, f64::NAN], 1),
            Err(Error::Numeric(_))
        ));
        // A NaN among the competitors never outranks the target.
        assert_eq!(rank_of_target(&[1.0, f64::NAN, 5.0], 0).unwrap(), 2);
    }

    #[test]
    fn four_instance_fixture_reports_exact_metrics() {
        let report = EvalReport::from_ranks(&[1, 4, 21, 2], &[20]).unwrap();
        assert_eq!(report.precision_at(20), Some(0.75));
        assert_eq!(report.mrr_at(20), Some(0.4375));
        assert_eq!(report.instances, 4);
    }

    #[test]
    fn perfect_ranks_give_unit_metrics_at_every_cutoff() {
        let report = EvalReport::from_ranks(&[1, 1, 1], &[1, 5, 20]).unwrap();
        for k in [1, 5, 20] {
            assert_eq!(report.precision_at(k), Some(1.0));
            assert_eq!(report.mrr_at(k), Some(1.0));
        }
    }

    #[test]
    fn cutoff_one_makes_precision_and_mrr_coincide() {
        let report = EvalReport::from_ranks(&[1, 3, 1, 7, 2], &[1]).unwrap();
        assert_eq!(report.precision_at(1), report.mrr_at(1));
    }

    #[test]
    fn metrics_are_bounded_and_monotone_in_k() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let ranks: Vec<usize> = (0..300).map(|_| rng.gen_range(1..60)).collect();
        let ks = [1, 2, 5, 10, 20, 50];
        let report = EvalReport::from_ranks(&ranks, &ks).unwrap();
        let mut prev_p = 0.0;
        let mut prev_m = 0.0;
        for &k in &ks {
            let p = report.precision_at(k).unwrap();
            let m = report.mrr_at(k).unwrap();
            assert!((0.0..=1.0).contains(&p));
            assert!(m <= p + 1e-15, "mrr@{k} {m} exceeds p@{k} {p}");
            assert!(p >= prev_p && m >= prev_m, "metrics must grow with K");
            prev_p = p;
            prev_m = m;
        }
    }

    #[test]
    fn display_emits_parseable_key_value_lines() {
        let mut report = EvalReport::from_ranks(&[1, 4, 21, 2], &[5, 20]).unwrap();
        report.seconds = 1.5;
        let text = report.to_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines,
            vec![
                "instances=4",
                "p@5=0.75",
                "mrr@5=0.4375",
                "p@20=0.75",
                "mrr@20=0.4375",
                "seconds=1.5"
            ]
        );
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(matches!(EvalReport::from_ranks(&[], &[20]), Err(Error::Input(_))));
        assert!(matches!(EvalReport::from_ranks(&[1], &[]), Err(Error::Contract(_))));
        assert!(matches!(EvalReport::from_ranks(&[1], &[0]), Err(Error::Contract(_))));
    }
}

//! Ranking metrics over scored candidate pools.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::data::{AnswerId, Bucket, BUCKET_COUNT};
use crate::error::{Error, Result};

/// A pool sorted by descending score, ties broken by ascending answer id.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedPool {
    pub question_id: String,
    pub ranked: Vec<(AnswerId, f64)>,
    pub ground_truth: BTreeSet<AnswerId>,
}

impl RankedPool {
    pub fn new(
        question_id: impl Into<String>,
        mut scores: Vec<(AnswerId, f64)>,
        ground_truth: BTreeSet<AnswerId>,
    ) -> Result<Self> {
        let question_id = question_id.into();
        if let Some((id, s)) = scores.iter().find(|(_, s)| !s.is_finite()) {
            return Err(Error::Invalid(format!(
                "question {question_id}: non-finite score {s} for answer {id}"
            )));
        }
        if ground_truth.is_empty() {
            return Err(Error::Invalid(format!("question {question_id} has no ground truth")));
        }
        if let Some(g) = ground_truth.iter().find(|g| !scores.iter().any(|(id, _)| id == *g)) {
            return Err(Error::Invalid(format!(
                "question {question_id}: ground truth {g} was not scored"
            )));
        }
        scores.sort_by(|(ia, sa), (ib, sb)| sb.total_cmp(sa).then_with(|| ia.cmp(ib)));
        Ok(RankedPool {
            question_id,
            ranked: scores,
            ground_truth,
        })
    }

    pub fn top(&self) -> &AnswerId {
        &self.ranked[0].0
    }

    pub fn is_hit(&self) -> bool {
        self.ground_truth.contains(self.top())
    }

    /// 1-based ranks of the ground-truth answers, ascending.
    pub fn relevant_ranks(&self) -> Vec<usize> {
        self.ranked
            .iter()
            .enumerate()
            .filter(|(_, (id, _))| self.ground_truth.contains(id))
            .map(|(i, _)| i + 1)
            .collect()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Fraction of questions whose top-ranked answer is correct. 0 for no pools.
pub fn top1_accuracy(pools: &[RankedPool]) -> f64 {
    mean(pools.iter().map(|p| if p.is_hit() { 1.0 } else { 0.0 }))
}

pub fn average_precision(pool: &RankedPool) -> f64 {
    let ranks = pool.relevant_ranks();
    mean(ranks.iter().enumerate().map(|(k, &r)| (k + 1) as f64 / r as f64))
}

pub fn mean_average_precision(pools: &[RankedPool]) -> f64 {
    mean(pools.iter().map(average_precision))
}

pub fn reciprocal_rank(pool: &RankedPool) -> f64 {
    1.0 / pool.relevant_ranks()[0] as f64
}

pub fn mrr(pools: &[RankedPool]) -> f64 {
    mean(pools.iter().map(reciprocal_rank))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    Top1,
    Map,
    Mrr,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Top1, Metric::Map, Metric::Mrr];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Top1 => "top1",
            Metric::Map => "map",
            Metric::Mrr => "mrr",
        }
    }

    pub fn compute(self, pools: &[RankedPool]) -> f64 {
        match self {
            Metric::Top1 => top1_accuracy(pools),
            Metric::Map => mean_average_precision(pools),
            Metric::Mrr => mrr(pools),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown metric {s:?} (expected top1, map or mrr)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub entries: Vec<(Metric, f64)>,
}

impl MetricReport {
    pub fn compute(pools: &[RankedPool], metrics: &[Metric]) -> Self {
        MetricReport {
            entries: metrics.iter().map(|&m| (m, m.compute(pools))).collect(),
        }
    }

    pub fn get(&self, metric: Metric) -> Option<f64> {
        self.entries.iter().find(|(m, _)| *m == metric).map(|(_, v)| *v)
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "metric\tvalue")?;
        for (m, v) in &self.entries {
            writeln!(f, "{m}\t{v:.6}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BucketRow {
    pub bucket: Bucket,
    pub count: usize,
    /// `None` when the bucket is empty.
    pub accuracy: Option<f64>,
}

/// Top-1 accuracy per length bucket; one row per bucket, empty ones included.
pub fn bucket_accuracy(pools: &[RankedPool], buckets: &[Bucket]) -> Result<Vec<BucketRow>> {
    if pools.len() != buckets.len() {
        return Err(Error::Invalid(format!(
            "{} pools but {} bucket labels",
            pools.len(),
            buckets.len()
        )));
    }
    let mut hits = [0usize; BUCKET_COUNT];
    let mut counts = [0usize; BUCKET_COUNT];
    for (p, b) in pools.iter().zip(buckets) {
        counts[b.index()] += 1;
        hits[b.index()] += p.is_hit() as usize;
    }
    Ok(Bucket::all()
        .map(|b| {
            let i = b.index();
            BucketRow {
                bucket: b,
                count: counts[i],
                accuracy: (counts[i] > 0).then(|| hits[i] as f64 / counts[i] as f64),
            }
        })
        .collect())
}

pub fn format_buckets(rows: &[BucketRow]) -> String {
    let mut out = String::from("bucket\tcount\taccuracy\n");
    for r in rows {
        let acc = r.accuracy.map_or_else(|| "-".to_string(), |a| format!("{a:.6}"));
        out.push_str(&format!("{}\t{}\t{}\n", r.bucket, r.count, acc));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pool(scores: &[(&str, f64)], gt: &[&str]) -> RankedPool {
        RankedPool::new(
            "q",
            scores.iter().map(|(id, s)| (AnswerId::from(*id), *s)).collect(),
            gt.iter().map(|g| AnswerId::from(*g)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn average_precision_hand_case() {
        // relevant at ranks 1 and 3
        let p = pool(&[("a", 0.9), ("b", 0.8), ("c", 0.7), ("d", 0.1)], &["a", "c"]);
        assert_eq!(p.relevant_ranks(), vec![1, 3]);
        assert!((average_precision(&p) - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(reciprocal_rank(&p), 1.0);
        assert!(p.is_hit());

        let miss = pool(&[("a", 0.1), ("b", 0.8)], &["a"]);
        assert_eq!(reciprocal_rank(&miss), 0.5);
        assert_eq!(top1_accuracy(&[p.clone(), miss.clone()]), 0.5);
        assert!((mrr(&[p, miss]) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn ties_break_by_answer_id() {
        let p = pool(&[("7", 0.5), ("3", 0.5), ("10", 0.5)], &["10"]);
        let order: Vec<&str> = p.ranked.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(order, vec!["3", "7", "10"]);
        assert!(!p.is_hit());
    }

    #[test]
    fn invalid_pools_rejected() {
        let err = RankedPool::new("q", vec![("a".into(), f64::NAN)], ["a".into()].into_iter().collect());
        assert!(err.is_err());
        let err = RankedPool::new("q", vec![("a".into(), 0.1)], ["b".into()].into_iter().collect());
        assert!(err.is_err());
    }

    #[test]
    fn reports_format() {
        let p = pool(&[("a", 0.9), ("b", 0.1)], &["a"]);
        let r = MetricReport::compute(std::slice::from_ref(&p), &Metric::ALL);
        assert_eq!(r.to_string(), "metric\tvalue\ntop1\t1.000000\nmap\t1.000000\nmrr\t1.000000\n");
        let rows = bucket_accuracy(&[p], &[Bucket::for_length(58.0)]).unwrap();
        assert_eq!(rows.len(), 11);
        assert_eq!(rows[2].count, 1);
        assert_eq!(rows[2].accuracy, Some(1.0));
        assert!(format_buckets(&rows).contains("≤60\t1\t1.000000\n"));
        assert!(format_buckets(&rows).contains("≤50\t0\t-\n"));
        assert_eq!("map".parse::<Metric>().unwrap(), Metric::Map);
        assert!("ndcg".parse::<Metric>().is_err());
    }

    proptest! {
        #[test]
        fn metric_bounds(
            scores in prop::collection::vec(-1.0f64..1.0, 1..20),
            gt_mask in prop::collection::vec(any::<bool>(), 20),
        ) {
            let n = scores.len();
            let mut gt: Vec<String> = (0..n).filter(|&i| gt_mask[i]).map(|i| i.to_string()).collect();
            if gt.is_empty() {
                gt.push("0".into());
            }
            let p = RankedPool::new(
                "q",
                scores.iter().enumerate().map(|(i, &s)| (AnswerId::new(i.to_string()), s)).collect(),
                gt.iter().map(|g| AnswerId::from(g.as_str())).collect(),
            ).unwrap();
            let ap = average_precision(&p);
            let rr = reciprocal_rank(&p);
            prop_assert!((0.0..=1.0).contains(&ap));
            prop_assert!((0.0..=1.0).contains(&rr));
            if gt.len() == 1 {
                prop_assert_eq!(ap, rr);
            }
            let top1 = top1_accuracy(std::slice::from_ref(&p));
            prop_assert_eq!(top1 == 1.0, rr == 1.0);
            prop_assert!(rr >= top1);
        }
    }
}

//! Answer scoring and reading-consumption statistics.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

/// Lowercase, drop punctuation and the articles a/an/the, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn f1_single(pred: &str, gold: &str) -> f64 {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return if pt.is_empty() && gt.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Token-overlap F1, maximised over the gold answers.
pub fn text_f1<S: AsRef<str>>(prediction: &str, golds: &[S]) -> f64 {
    golds
        .iter()
        .map(|g| f1_single(prediction, g.as_ref()))
        .fold(0.0, f64::max)
}

pub fn exact_match<S: AsRef<str>>(prediction: &str, golds: &[S]) -> f64 {
    let p = normalize_answer(prediction);
    if golds.iter().any(|g| normalize_answer(g.as_ref()) == p) {
        1.0
    } else {
        0.0
    }
}

/// `((L_max − answer_end) / L_c, L_max / L_c)`; the first ratio is negative
/// when the model settles before reaching the answer.
pub fn greediness_metrics(l_max: usize, answer_end: usize, l_c: usize) -> (f64, f64) {
    let lc = l_c as f64;
    ((l_max as f64 - answer_end as f64) / lc, l_max as f64 / lc)
}

/// `(F_e / F_c) · (L_c / L_e)`; `None` when `F_c` or `L_e` is zero.
pub fn efficiency(f_e: f64, f_c: f64, l_c_total: f64, l_e_total: f64) -> Option<f64> {
    if f_c <= 0.0 || l_e_total <= 0.0 {
        return None;
    }
    Some((f_e / f_c) * (l_c_total / l_e_total))
}

/// F1 after reading each prefix, and the earliest prefix reaching the best.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleStop {
    pub prefix_lengths: Vec<usize>,
    pub curve: Vec<f64>,
    pub l_max: usize,
    pub best_f1: f64,
}

/// Prefix lengths `stride, 2·stride, …` capped by and ending at `context_len`.
pub fn prefix_grid(context_len: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut out: Vec<usize> = (1..).map(|k| k * stride).take_while(|&l| l < context_len).collect();
    out.push(context_len);
    out
}

/// Evaluates `f1_at(prefix_len)` over [`prefix_grid`].
pub fn oracle_best_stop<E>(
    context_len: usize,
    stride: usize,
    mut f1_at: impl FnMut(usize) -> Result<f64, E>,
) -> Result<OracleStop, E> {
    let prefix_lengths = prefix_grid(context_len, stride);
    let curve = prefix_lengths
        .iter()
        .map(|&l| f1_at(l))
        .collect::<Result<Vec<_>, E>>()?;
    let best_f1 = curve.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let idx = curve.iter().position(|&f| f == best_f1).unwrap_or(0);
    Ok(OracleStop {
        l_max: prefix_lengths[idx],
        prefix_lengths,
        curve,
        best_f1,
    })
}

/// What one example consumed and scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumptionRecord {
    pub context_len: usize,
    /// `L_e`.
    pub consumed: usize,
    /// `L_max`.
    pub best_len: usize,
    pub answer_end: usize,
    pub f1_early: f64,
    pub f1_full: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadRatioRow {
    /// Context lengths in `[lo, hi)`.
    pub lo: usize,
    pub hi: usize,
    pub count: usize,
    pub mean_read_ratio: f64,
    pub mean_best_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumptionSummary {
    pub count: usize,
    pub bucket_width: usize,
    /// Count per bucket `[k·w, (k+1)·w)` of consumed tokens, keyed by `k·w`.
    pub hist_early: BTreeMap<usize, usize>,
    pub hist_best: BTreeMap<usize, usize>,
    pub hist_full: BTreeMap<usize, usize>,
    pub mean_read_ratio: f64,
    /// `1 − ΣL_e / ΣL_c`.
    pub saving: f64,
    pub f_e: f64,
    pub f_c: f64,
    pub total_context: usize,
    pub total_consumed: usize,
    pub efficiency: Option<f64>,
    pub read_ratio_by_length: Vec<ReadRatioRow>,
}

fn histogram(values: impl Iterator<Item = usize>, width: usize) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for v in values {
        *h.entry(v.saturating_sub(1) / width * width).or_default() += 1;
    }
    h
}

/// Aggregates per-example records; buckets are `bucket_width` tokens wide and
/// a length `l` falls in bucket `⌊(l − 1)/w⌋·w`, so a full first slice lands
/// in bucket 0.
pub fn consumption_report(records: &[ConsumptionRecord], bucket_width: usize) -> ConsumptionSummary {
    let w = bucket_width.max(1);
    let n = records.len();
    let mean = |f: &dyn Fn(&ConsumptionRecord) -> f64| {
        if n == 0 {
            0.0
        } else {
            records.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let total_context: usize = records.iter().map(|r| r.context_len).sum();
    let total_consumed: usize = records.iter().map(|r| r.consumed).sum();
    let f_e = mean(&|r| r.f1_early);
    let f_c = mean(&|r| r.f1_full);
    let mut by_len: BTreeMap<usize, Vec<&ConsumptionRecord>> = BTreeMap::new();
    for r in records {
        by_len.entry(r.context_len.saturating_sub(1) / w * w).or_default().push(r);
    }
    let read_ratio_by_length = by_len
        .into_iter()
        .map(|(lo, rs)| ReadRatioRow {
            lo: lo + 1,
            hi: lo + w + 1,
            count: rs.len(),
            mean_read_ratio: rs.iter().map(|r| r.consumed as f64 / r.context_len as f64).sum::<f64>() / rs.len() as f64,
            mean_best_ratio: rs.iter().map(|r| r.best_len as f64 / r.context_len as f64).sum::<f64>() / rs.len() as f64,
        })
        .collect();
    ConsumptionSummary {
        count: n,
        bucket_width: w,
        hist_early: histogram(records.iter().map(|r| r.consumed), w),
        hist_best: histogram(records.iter().map(|r| r.best_len), w),
        hist_full: histogram(records.iter().map(|r| r.context_len), w),
        mean_read_ratio: mean(&|r| r.consumed as f64 / r.context_len as f64),
        saving: if total_context == 0 {
            0.0
        } else {
            1.0 - total_consumed as f64 / total_context as f64
        },
        f_e,
        f_c,
        total_context,
        total_consumed,
        efficiency: efficiency(f_e, f_c, total_context as f64, total_consumed as f64),
        read_ratio_by_length,
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn f1_examples() {
        assert_eq!(text_f1("the cat", &["cat"]), 1.0);
        assert_eq!(text_f1("cat", &["dog"]), 0.0);
        assert_eq!(text_f1("x b", &["b c"]), 0.5);
        // "a" is an article and is dropped before counting
        assert_eq!(text_f1("a b", &["b c"]), 2.0 / 3.0);
        assert_eq!(text_f1("", &[""]), 1.0);
        assert_eq!(text_f1("", &["x"]), 0.0);
        assert_eq!(text_f1("x y", &["z", "y"]), 2.0 / 3.0);
        assert_eq!(exact_match("The  Cat!", &["cat"]), 1.0);
        assert_eq!(exact_match("cats", &["cat"]), 0.0);
    }

    #[test]
    fn greediness_examples() {
        assert_eq!(greediness_metrics(100, 49, 100), (0.51, 1.0));
        let (x, r) = greediness_metrics(50, 49, 100);
        assert!((x - 0.01).abs() < 1e-15 && r == 0.5);
        assert_eq!(greediness_metrics(100, 99, 100), (0.01, 1.0));
        assert!(greediness_metrics(10, 49, 100).0 < 0.0);
    }

    #[test]
    fn efficiency_examples() {
        assert_eq!(efficiency(0.6, 0.6, 10.0, 10.0), Some(1.0));
        assert!((efficiency(0.77, 0.78, 1.0, 0.92).unwrap() - 1.0731).abs() < 1e-4);
        assert_eq!(efficiency(0.0, 0.5, 1.0, 1.0), Some(0.0));
        assert_eq!(efficiency(0.5, 0.0, 1.0, 1.0), None);
    }

    #[test]
    fn oracle_examples() {
        let o = oracle_best_stop::<()>(40, 10, |_| Ok(0.7)).unwrap();
        assert_eq!(o.l_max, 10);
        let curve = [0.0, 0.5, 1.0, 1.0];
        let o = oracle_best_stop::<()>(40, 10, |l| Ok(curve[l / 10 - 1])).unwrap();
        assert_eq!((o.l_max, o.best_f1), (30, 1.0));
        assert_eq!(prefix_grid(25, 10), vec![10, 20, 25]);
        assert_eq!(prefix_grid(20, 10), vec![10, 20]);
        assert_eq!(prefix_grid(5, 10), vec![5]);
    }

    fn rec(lc: usize, le: usize, best: usize) -> ConsumptionRecord {
        ConsumptionRecord {
            context_len: lc,
            consumed: le,
            best_len: best,
            answer_end: 0,
            f1_early: 0.5,
            f1_full: 1.0,
        }
    }

    #[test]
    fn consumption_hand_tallies() {
        let rs = [rec(30, 10, 10), rec(30, 20, 10), rec(8, 8, 8)];
        let s = consumption_report(&rs, 10);
        assert_eq!(s.hist_early, BTreeMap::from([(0, 2), (10, 1)]));
        assert_eq!(s.hist_best, BTreeMap::from([(0, 3)]));
        assert_eq!(s.hist_full, BTreeMap::from([(0, 1), (20, 2)]));
        assert!((s.saving - (1.0 - 38.0 / 68.0)).abs() < 1e-15);
        assert!((s.mean_read_ratio - (1.0 / 3.0 + 2.0 / 3.0 + 1.0) / 3.0).abs() < 1e-15);
        assert_eq!(s.read_ratio_by_length.len(), 2);
        assert_eq!(s.read_ratio_by_length[0].mean_read_ratio, 1.0);
        assert_eq!(s.efficiency, Some(0.5 * 68.0 / 38.0));

        let all_first = consumption_report(&[rec(30, 10, 10), rec(50, 10, 10)], 10);
        assert_eq!(all_first.hist_early, BTreeMap::from([(0, 2)]));
        let never = consumption_report(&[rec(30, 30, 10), rec(50, 50, 10)], 10);
        assert_eq!(never.saving, 0.0);
    }

    #[test]
    fn mock_histogram_matches_direct_count() {
        let curves: Vec<Vec<f64>> = vec![
            vec![0.0, 0.5, 1.0, 1.0],
            vec![1.0, 1.0, 1.0, 1.0],
            vec![0.0, 0.0, 0.0, 0.2],
            vec![0.3, 0.9, 0.1, 0.9],
        ];
        let mut recs = Vec::new();
        let mut direct = BTreeMap::new();
        for c in &curves {
            let o = oracle_best_stop::<()>(40, 10, |l| Ok(c[l / 10 - 1])).unwrap();
            let best = c.iter().copied().fold(f64::MIN, f64::max);
            let k = c.iter().position(|&f| f == best).unwrap();
            *direct.entry(k * 10).or_insert(0) += 1;
            recs.push(rec(40, 40, o.l_max));
        }
        assert_eq!(consumption_report(&recs, 10).hist_best, direct);
    }

    proptest! {
        #[test]
        fn f1_symmetric_and_bounded(a in "[abc ]{0,12}", b in "[abc ]{0,12}") {
            let ab = text_f1(&a, &[&b]);
            let ba = text_f1(&b, &[&a]);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
            let mut pa: Vec<String> = normalize_answer(&a).split_whitespace().map(String::from).collect();
            let mut pb: Vec<String> = normalize_answer(&b).split_whitespace().map(String::from).collect();
            pa.sort();
            pb.sort();
            prop_assert_eq!(ab == 1.0, pa == pb);
        }

        #[test]
        fn histogram_counts_sum(lens in proptest::collection::vec((1usize..100, 0usize..100), 0..30)) {
            let recs: Vec<_> = lens.iter().map(|&(lc, k)| rec(lc, 1 + k % lc, 1 + (k * 7) % lc)).collect();
            let s = consumption_report(&recs, 7);
            prop_assert_eq!(s.hist_early.values().sum::<usize>(), recs.len());
            prop_assert_eq!(s.hist_best.values().sum::<usize>(), recs.len());
            prop_assert!(s.saving >= 0.0);
        }
    }
}

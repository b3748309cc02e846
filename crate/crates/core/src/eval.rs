//! Ranking accuracy and category diversity.
//!
//! All accuracy metrics are rank based: candidates are ordered by score,
//! descending, with ties kept in input order.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{truncate_history, ArticleIdx, Catalog, Impression};
use crate::model::ModelParams;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("impression has only one label class")]
    Degenerate,
    #[error("impression has no positive label")]
    NoPositive,
    #[error("no recommendations to measure")]
    EmptyRecommendations,
    #[error("labels and scores differ in length")]
    LengthMismatch,
    #[error("cutoff k must be at least 1")]
    InvalidK,
}

fn check(labels: &[bool], scores: &[f64]) -> Result<(), EvalError> {
    if labels.len() != scores.len() {
        return Err(EvalError::LengthMismatch);
    }
    Ok(())
}

/// Candidate positions by descending score; equal scores (including
/// `0.0` and `-0.0`) keep input order.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let key = |x: f64| if x == 0.0 { 0.0 } else { x };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| key(scores[b]).total_cmp(&key(scores[a])));
    order
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Uses mid-ranks, so it is exact against pairwise
/// counting.
pub fn auc(labels: &[bool], scores: &[f64]) -> Result<f64, EvalError> {
    check(labels, scores)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::Degenerate);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of 2 * rank over positives keeps mid-ranks integral.
    let mut doubled_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the mid-rank (i + j + 2) / 2
        let doubled_mid = (i + j + 2) as u64;
        let tied_pos = order[i..=j].iter().filter(|&&o| labels[o]).count() as u64;
        doubled_rank_sum += doubled_mid * tied_pos;
        i = j + 1;
    }
    let n_pos = n_pos as u64;
    let doubled_u = doubled_rank_sum - n_pos * (n_pos + 1);
    Ok(doubled_u as f64 / (2 * n_pos * n_neg as u64) as f64)
}

/// Reciprocal rank of the best-ranked positive.
pub fn mrr(labels: &[bool], scores: &[f64]) -> Result<f64, EvalError> {
    check(labels, scores)?;
    rank_order(scores)
        .iter()
        .position(|&i| labels[i])
        .map(|r| 1.0 / (r + 1) as f64)
        .ok_or(EvalError::NoPositive)
}

/// DCG@k with binary gains and `1 / log2(rank + 1)` discounts, divided by
/// the ideal DCG@k.
pub fn ndcg_at_k(labels: &[bool], scores: &[f64], k: usize) -> Result<f64, EvalError> {
    check(labels, scores)?;
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(EvalError::NoPositive);
    }
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = rank_order(scores)
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &i)| labels[i])
        .map(|(r, _)| discount(r + 1))
        .sum();
    let ideal: f64 = (1..=n_pos.min(k)).map(discount).sum();
    Ok(dcg / ideal)
}

/// Normalized entropy of a category distribution given as counts, with
/// `n_categories` as the size of the label space. A single-category label
/// space scores 0.
pub fn dctg_at_k(category_counts: &[usize], n_categories: usize) -> Result<f64, EvalError> {
    let total: usize = category_counts.iter().sum();
    if total == 0 {
        return Err(EvalError::EmptyRecommendations);
    }
    if n_categories < 2 {
        return Ok(0.0);
    }
    let entropy: f64 = category_counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    Ok(entropy / (n_categories as f64).ln())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub category: String,
    pub count: usize,
}

/// Category counts over all recommended slots, count descending then
/// category ascending.
pub fn category_frequencies(recommendations: &[Vec<ArticleIdx>], catalog: &Catalog) -> Vec<CategoryCount> {
    let mut counts = vec![0usize; catalog.category_count()];
    for list in recommendations {
        for &a in list {
            counts[catalog.category_index(a)] += 1;
        }
    }
    sort_counts(&counts, catalog)
}

fn sort_counts(counts: &[usize], catalog: &Catalog) -> Vec<CategoryCount> {
    let mut out: Vec<CategoryCount> = counts
        .iter()
        .zip(catalog.categories())
        .filter(|(&c, _)| c > 0)
        .map(|(&count, category)| CategoryCount {
            category: category.clone(),
            count,
        })
        .collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.category.cmp(&b.category)));
    out
}

/// `category \t count \t share` rows.
pub fn category_frequency_tsv(freqs: &[CategoryCount]) -> String {
    let total: usize = freqs.iter().map(|f| f.count).sum();
    let mut out = String::new();
    for f in freqs {
        let share = if total == 0 { 0.0 } else { f.count as f64 / total as f64 };
        let _ = writeln!(out, "{}\t{}\t{:.6}", f.category, f.count, share);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub mrr: f64,
    /// Keyed by cutoff.
    pub ndcg: BTreeMap<usize, f64>,
    /// Normalized category entropy over the pooled top-k slots of all
    /// impressions.
    pub dctg: BTreeMap<usize, f64>,
    /// Same entropy computed per impression and averaged.
    pub dctg_per_impression: BTreeMap<usize, f64>,
    /// Fraction of top-k slots taken by the supplied popular set, when one
    /// was supplied.
    pub popular_share: BTreeMap<usize, f64>,
    pub category_freq: BTreeMap<usize, Vec<CategoryCount>>,
    pub n_impressions: usize,
    pub skipped_auc: usize,
    pub skipped_no_positive: usize,
}

impl EvalReport {
    pub fn ndcg_at(&self, k: usize) -> f64 {
        self.ndcg.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn dctg_at(&self, k: usize) -> f64 {
        self.dctg.get(&k).copied().unwrap_or(f64::NAN)
    }
}

struct ImpressionResult {
    auc: Option<f64>,
    mrr: Option<f64>,
    ndcg: Vec<f64>,
    top: Vec<Vec<ArticleIdx>>,
}

/// Candidate scores for one impression.
pub fn score_impression(params: &ModelParams, impression: &Impression, max_history: usize) -> Vec<f64> {
    let user = params.encode_user(truncate_history(&impression.history, max_history));
    impression.candidates.iter().map(|c| params.score(&user, c.article)).collect()
}

/// Scores every impression and aggregates the report. `ks` are the
/// cutoffs for nDCG, diversity and category tables.
pub fn evaluate(
    params: &ModelParams,
    impressions: &[Impression],
    catalog: &Catalog,
    ks: &[usize],
    max_history: usize,
    popular: Option<&HashSet<ArticleIdx>>,
) -> Result<EvalReport, EvalError> {
    if ks.contains(&0) {
        return Err(EvalError::InvalidK);
    }
    if impressions.is_empty() {
        return Err(EvalError::EmptyRecommendations);
    }
    let one = |imp: &Impression| {
        let scores = score_impression(params, imp, max_history);
        let labels = imp.labels();
        let order = rank_order(&scores);
        ImpressionResult {
            auc: auc(&labels, &scores).ok(),
            mrr: mrr(&labels, &scores).ok(),
            ndcg: ks.iter().filter_map(|&k| ndcg_at_k(&labels, &scores, k).ok()).collect(),
            top: ks
                .iter()
                .map(|&k| order.iter().take(k).map(|&i| imp.candidates[i].article).collect())
                .collect(),
        }
    };
    #[cfg(feature = "parallel")]
    let results: Vec<ImpressionResult> = {
        use rayon::prelude::*;
        impressions.par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<ImpressionResult> = impressions.iter().map(one).collect();

    let n_cat = catalog.category_count();
    let mut auc_sum = 0.0;
    let mut auc_n = 0usize;
    let mut mrr_sum = 0.0;
    let mut rank_n = 0usize;
    let mut ndcg_sum = vec![0.0; ks.len()];
    let mut pooled = vec![vec![0usize; n_cat]; ks.len()];
    let mut per_imp = vec![0.0; ks.len()];
    let mut per_imp_n = vec![0usize; ks.len()];
    let mut popular_hits = vec![0usize; ks.len()];
    let mut slots = vec![0usize; ks.len()];

    for r in &results {
        if let Some(a) = r.auc {
            auc_sum += a;
            auc_n += 1;
        }
        if let Some(m) = r.mrr {
            mrr_sum += m;
            rank_n += 1;
            for (s, v) in ndcg_sum.iter_mut().zip(&r.ndcg) {
                *s += v;
            }
        }
        for (ki, top) in r.top.iter().enumerate() {
            let mut local = vec![0usize; n_cat];
            for &a in top {
                let c = catalog.category_index(a);
                pooled[ki][c] += 1;
                local[c] += 1;
                if popular.is_some_and(|p| p.contains(&a)) {
                    popular_hits[ki] += 1;
                }
            }
            slots[ki] += top.len();
            if let Ok(d) = dctg_at_k(&local, n_cat) {
                per_imp[ki] += d;
                per_imp_n[ki] += 1;
            }
        }
    }

    let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
    let mut report = EvalReport {
        auc: mean(auc_sum, auc_n),
        mrr: mean(mrr_sum, rank_n),
        ndcg: BTreeMap::new(),
        dctg: BTreeMap::new(),
        dctg_per_impression: BTreeMap::new(),
        popular_share: BTreeMap::new(),
        category_freq: BTreeMap::new(),
        n_impressions: impressions.len(),
        skipped_auc: impressions.len() - auc_n,
        skipped_no_positive: impressions.len() - rank_n,
    };
    for (ki, &k) in ks.iter().enumerate() {
        report.ndcg.insert(k, mean(ndcg_sum[ki], rank_n));
        report.dctg.insert(k, dctg_at_k(&pooled[ki], n_cat)?);
        report.dctg_per_impression.insert(k, mean(per_imp[ki], per_imp_n[ki]));
        if popular.is_some() {
            report.popular_share.insert(k, mean(popular_hits[ki] as f64, slots[ki]));
        }
        report.category_freq.insert(k, sort_counts(&pooled[ki], catalog));
    }
    Ok(report)
}

/// Top `fraction` of articles by total clicks in `impressions`, ties by id.
pub fn most_clicked(impressions: &[Impression], catalog: &Catalog, fraction: f64) -> HashSet<ArticleIdx> {
    let mut clicks = vec![0u64; catalog.len()];
    for imp in impressions {
        for a in imp.positives() {
            clicks[a.get()] += 1;
        }
    }
    let mut order: Vec<ArticleIdx> = catalog.indices().collect();
    order.sort_by(|&a, &b| clicks[b.get()].cmp(&clicks[a.get()]).then(catalog.id_rank(a).cmp(&catalog.id_rank(b))));
    let n = ((catalog.len() as f64) * fraction).ceil() as usize;
    order.into_iter().take(n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_cases() {
        assert_eq!(auc(&[true, false, false], &[0.9, 0.3, 0.5]).unwrap(), 1.0);
        assert_eq!(auc(&[true, false, false], &[0.4, 0.5, 0.3]).unwrap(), 0.5);
        assert_eq!(auc(&[true, false], &[0.5, 0.5]).unwrap(), 0.5);
        assert_eq!(auc(&[true, true], &[0.5, 0.1]), Err(EvalError::Degenerate));
    }

    #[test]
    fn mrr_cases() {
        assert_eq!(mrr(&[true, false], &[0.9, 0.1]).unwrap(), 1.0);
        assert_eq!(mrr(&[false, true, false], &[0.9, 0.5, 0.1]).unwrap(), 0.5);
        // tie keeps input order: the negative listed first wins the tie
        assert_eq!(mrr(&[false, true], &[0.5, 0.5]).unwrap(), 0.5);
        assert_eq!(mrr(&[false, false], &[0.5, 0.1]), Err(EvalError::NoPositive));
    }

    #[test]
    fn ndcg_cases() {
        assert!((ndcg_at_k(&[true, false, false], &[3.0, 2.0, 1.0], 5).unwrap() - 1.0).abs() < 1e-12);
        let labels = [false, false, true, false, false];
        let scores = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert!((ndcg_at_k(&labels, &scores, 5).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(ndcg_at_k(&labels, &scores, 2).unwrap(), 0.0);
    }

    #[test]
    fn dctg_cases() {
        assert!((dctg_at_k(&[3, 3, 3, 3], 4).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(dctg_at_k(&[7, 0, 0], 3).unwrap(), 0.0);
        assert!((dctg_at_k(&[5, 5, 0, 0], 4).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(dctg_at_k(&[4], 1).unwrap(), 0.0);
        assert_eq!(dctg_at_k(&[0, 0], 2), Err(EvalError::EmptyRecommendations));
    }

    #[test]
    fn frequency_table_order() {
        use crate::corpus::NewsArticle;
        let c = Catalog::from_articles(vec![
            NewsArticle::new("a", "sports"),
            NewsArticle::new("b", "finance"),
            NewsArticle::new("c", "sports"),
        ])
        .unwrap();
        let recs = vec![vec![ArticleIdx(0), ArticleIdx(1)], vec![ArticleIdx(2), ArticleIdx(1)]];
        let f = category_frequencies(&recs, &c);
        assert_eq!(f[0], CategoryCount { category: "finance".into(), count: 2 });
        assert_eq!(f[1], CategoryCount { category: "sports".into(), count: 2 });
        assert_eq!(category_frequency_tsv(&f), "finance\t2\t0.500000\nsports\t2\t0.500000\n");
    }
}

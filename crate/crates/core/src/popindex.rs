//! Time-bucketed click/view counters and "most popular at time t" queries.
//!
//! Every candidate appearance counts as one view of that article in the
//! bucket of the impression; a `-1` label also counts a click. Queries at
//! time `t` read only complete buckets strictly before `bucket_of(t)`, so
//! nothing logged in the bucket that contains `t` (or later) can leak into
//! the answer.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{bucket_of, ArticleIdx, BucketSpec, Catalog, Impression};

/// Counting window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopularityLogic {
    /// Everything accumulated before the query bucket.
    Acc,
    /// Only the bucket immediately before the query bucket.
    Ptb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopularityMetric {
    Clicks,
    ClickRatio,
    ClickVariation,
}

impl PopularityLogic {
    pub const ALL: [PopularityLogic; 2] = [PopularityLogic::Acc, PopularityLogic::Ptb];

    pub fn as_str(self) -> &'static str {
        match self {
            PopularityLogic::Acc => "acc",
            PopularityLogic::Ptb => "ptb",
        }
    }
}

impl PopularityMetric {
    pub const ALL: [PopularityMetric; 3] = [
        PopularityMetric::Clicks,
        PopularityMetric::ClickRatio,
        PopularityMetric::ClickVariation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PopularityMetric::Clicks => "clicks",
            PopularityMetric::ClickRatio => "click_ratio",
            PopularityMetric::ClickVariation => "click_variation",
        }
    }
}

impl fmt::Display for PopularityLogic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for PopularityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PopularityLogic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown popularity logic {s:?} (expected acc or ptb)"))
    }
}

impl FromStr for PopularityMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            format!("unknown popularity metric {s:?} (expected clicks, click_ratio or click_variation)")
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Cell {
    pub clicks: u64,
    pub views: u64,
}

/// Sparse `(bucket, article) -> (clicks, views)` tally. Shards can be
/// tallied independently and merged.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BucketStats {
    cells: HashMap<(i64, ArticleIdx), Cell>,
}

impl BucketStats {
    pub fn record(&mut self, bucket: i64, article: ArticleIdx, clicked: bool) {
        let cell = self.cells.entry((bucket, article)).or_default();
        cell.views += 1;
        cell.clicks += u64::from(clicked);
    }

    pub fn tally(impressions: &[Impression], spec: &BucketSpec) -> Self {
        let mut stats = Self::default();
        for imp in impressions {
            let bucket = bucket_of(imp.timestamp, spec);
            for c in &imp.candidates {
                stats.record(bucket, c.article, c.clicked);
            }
        }
        stats
    }

    #[cfg(feature = "parallel")]
    pub fn tally_parallel(impressions: &[Impression], spec: &BucketSpec) -> Self {
        use rayon::prelude::*;
        impressions
            .par_chunks(4096)
            .map(|chunk| Self::tally(chunk, spec))
            .reduce(Self::default, |mut a, b| {
                a.merge(b);
                a
            })
    }

    pub fn merge(&mut self, other: BucketStats) {
        for (key, cell) in other.cells {
            let mine = self.cells.entry(key).or_default();
            mine.clicks += cell.clicks;
            mine.views += cell.views;
        }
    }

    pub fn get(&self, bucket: i64, article: ArticleIdx) -> Cell {
        self.cells.get(&(bucket, article)).copied().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Non-empty cells ordered by bucket, then article id.
    pub fn rows(&self, catalog: &Catalog) -> Vec<(i64, ArticleIdx, Cell)> {
        let mut rows: Vec<_> = self.cells.iter().map(|(&(b, a), &c)| (b, a, c)).collect();
        rows.sort_by_key(|&(b, a, _)| (b, catalog.id_rank(a)));
        rows
    }

    /// `bucket \t article_id \t clicks \t views`, one row per non-empty cell.
    pub fn to_tsv(&self, catalog: &Catalog) -> String {
        let mut out = String::new();
        for (bucket, article, cell) in self.rows(catalog) {
            let _ = writeln!(
                out,
                "{bucket}\t{}\t{}\t{}",
                catalog.id(article),
                cell.clicks,
                cell.views
            );
        }
        out
    }
}

const NO_SLOT: u32 = u32::MAX;

/// Dense per-article bucket arrays with prefix sums over the observed
/// bucket range. Immutable once built.
#[derive(Debug, Clone)]
pub struct PopularityIndex {
    spec: BucketSpec,
    first_bucket: i64,
    n_buckets: usize,
    slot_of: Vec<u32>,
    articles: Vec<ArticleIdx>,
    id_rank: Vec<u32>,
    clicks: Vec<u32>,
    views: Vec<u32>,
    cum_clicks: Vec<u64>,
    cum_views: Vec<u64>,
    /// Running sum of |clicks(j) - clicks(j-1)|.
    cum_variation: Vec<u64>,
}

pub fn build_index(impressions: &[Impression], catalog: &Catalog, spec: BucketSpec) -> PopularityIndex {
    #[cfg(feature = "parallel")]
    let stats = BucketStats::tally_parallel(impressions, &spec);
    #[cfg(not(feature = "parallel"))]
    let stats = BucketStats::tally(impressions, &spec);
    PopularityIndex::from_stats(&stats, catalog, spec)
}

impl PopularityIndex {
    pub fn from_stats(stats: &BucketStats, catalog: &Catalog, spec: BucketSpec) -> Self {
        let (first_bucket, last_bucket) = stats
            .cells
            .keys()
            .fold((i64::MAX, i64::MIN), |(lo, hi), &(b, _)| (lo.min(b), hi.max(b)));
        let n_buckets = if stats.is_empty() {
            0
        } else {
            (last_bucket - first_bucket + 1) as usize
        };

        let mut articles: Vec<ArticleIdx> = stats.cells.keys().map(|&(_, a)| a).collect();
        articles.sort_unstable();
        articles.dedup();
        let mut slot_of = vec![NO_SLOT; catalog.len()];
        for (slot, a) in articles.iter().enumerate() {
            slot_of[a.get()] = slot as u32;
        }
        let id_rank = articles.iter().map(|&a| catalog.id_rank(a)).collect();

        let size = articles.len() * n_buckets;
        let mut clicks = vec![0u32; size];
        let mut views = vec![0u32; size];
        for (&(b, a), cell) in &stats.cells {
            let at = slot_of[a.get()] as usize * n_buckets + (b - first_bucket) as usize;
            clicks[at] = u32::try_from(cell.clicks).expect("click count fits in u32");
            views[at] = u32::try_from(cell.views).expect("view count fits in u32");
        }

        let mut cum_clicks = vec![0u64; size];
        let mut cum_views = vec![0u64; size];
        let mut cum_variation = vec![0u64; size];
        for slot in 0..articles.len() {
            let row = slot * n_buckets..(slot + 1) * n_buckets;
            let (mut c, mut v, mut var, mut prev) = (0u64, 0u64, 0u64, 0u64);
            for at in row {
                let now = u64::from(clicks[at]);
                c += now;
                v += u64::from(views[at]);
                var += now.abs_diff(prev);
                prev = now;
                cum_clicks[at] = c;
                cum_views[at] = v;
                cum_variation[at] = var;
            }
        }

        Self {
            spec,
            first_bucket,
            n_buckets,
            slot_of,
            articles,
            id_rank,
            clicks,
            views,
            cum_clicks,
            cum_views,
            cum_variation,
        }
    }

    pub fn spec(&self) -> &BucketSpec {
        &self.spec
    }

    /// Observed bucket range, inclusive. `None` for an empty index.
    pub fn bucket_range(&self) -> Option<(i64, i64)> {
        (self.n_buckets > 0).then(|| (self.first_bucket, self.first_bucket + self.n_buckets as i64 - 1))
    }

    /// Articles with at least one view, in catalog order.
    pub fn articles(&self) -> &[ArticleIdx] {
        &self.articles
    }

    fn slot(&self, article: ArticleIdx) -> Option<usize> {
        match self.slot_of.get(article.get()) {
            Some(&s) if s != NO_SLOT => Some(s as usize),
            _ => None,
        }
    }

    /// Offset of `bucket` within the dense range, clamped: `Err(true)` past
    /// the end, `Err(false)` before the start.
    fn offset(&self, bucket: i64) -> Result<usize, bool> {
        let rel = bucket - self.first_bucket;
        if self.n_buckets == 0 || rel < 0 {
            Err(false)
        } else if rel >= self.n_buckets as i64 {
            Err(true)
        } else {
            Ok(rel as usize)
        }
    }

    fn cell_in(&self, slot: usize, bucket: i64) -> Cell {
        match self.offset(bucket) {
            Ok(rel) => {
                let at = slot * self.n_buckets + rel;
                Cell {
                    clicks: u64::from(self.clicks[at]),
                    views: u64::from(self.views[at]),
                }
            }
            Err(_) => Cell::default(),
        }
    }

    /// Cumulative (clicks, views, variation) over buckets `<= bucket`.
    fn cumulative_through(&self, slot: usize, bucket: i64) -> (u64, u64, u64) {
        let row = slot * self.n_buckets;
        match self.offset(bucket) {
            Ok(rel) => (
                self.cum_clicks[row + rel],
                self.cum_views[row + rel],
                self.cum_variation[row + rel],
            ),
            Err(false) => (0, 0, 0),
            Err(true) => {
                let last = row + self.n_buckets - 1;
                // The drop back to zero right after the observed range.
                let tail = u64::from(self.clicks[last]);
                (self.cum_clicks[last], self.cum_views[last], self.cum_variation[last] + tail)
            }
        }
    }

    /// Raw counts of one `(bucket, article)` cell.
    pub fn cell(&self, article: ArticleIdx, bucket: i64) -> Cell {
        self.slot(article).map(|s| self.cell_in(s, bucket)).unwrap_or_default()
    }

    fn value_in_slot(&self, slot: usize, t: i64, logic: PopularityLogic, metric: PopularityMetric) -> f64 {
        let window = bucket_of(t, &self.spec) - 1;
        match logic {
            PopularityLogic::Acc => {
                let (clicks, views, variation) = self.cumulative_through(slot, window);
                match metric {
                    PopularityMetric::Clicks => clicks as f64,
                    PopularityMetric::ClickRatio => ratio(clicks, views),
                    PopularityMetric::ClickVariation => variation as f64,
                }
            }
            PopularityLogic::Ptb => {
                let cell = self.cell_in(slot, window);
                match metric {
                    PopularityMetric::Clicks => cell.clicks as f64,
                    PopularityMetric::ClickRatio => ratio(cell.clicks, cell.views),
                    PopularityMetric::ClickVariation => {
                        cell.clicks as f64 - self.cell_in(slot, window - 1).clicks as f64
                    }
                }
            }
        }
    }

    /// Popularity of `article` as seen at time `t`. Articles the index has
    /// never seen score 0.
    pub fn stat_value(&self, article: ArticleIdx, t: i64, logic: PopularityLogic, metric: PopularityMetric) -> f64 {
        self.slot(article)
            .map(|s| self.value_in_slot(s, t, logic, metric))
            .unwrap_or(0.0)
    }

    fn qualifying(
        &self,
        t: i64,
        logic: PopularityLogic,
        metric: PopularityMetric,
        exclude: &HashSet<ArticleIdx>,
    ) -> Vec<(f64, u32, ArticleIdx)> {
        (0..self.articles.len())
            .filter(|&s| !exclude.contains(&self.articles[s]))
            .filter_map(|s| {
                let v = self.value_in_slot(s, t, logic, metric);
                (v > 0.0).then_some((v, self.id_rank[s], self.articles[s]))
            })
            .collect()
    }

    /// Every article with a positive value at `t`, most popular first, ties
    /// by ascending article id.
    pub fn ranking(&self, t: i64, logic: PopularityLogic, metric: PopularityMetric) -> Vec<(ArticleIdx, f64)> {
        let mut all = self.qualifying(t, logic, metric, &HashSet::new());
        all.sort_unstable_by(rank_order);
        all.into_iter().map(|(v, _, a)| (a, v)).collect()
    }

    /// The `popk` most popular articles at `t` outside `exclude`. Only
    /// articles with a strictly positive value qualify, so the result may be
    /// shorter than `popk`.
    pub fn top_popk(
        &self,
        t: i64,
        popk: usize,
        logic: PopularityLogic,
        metric: PopularityMetric,
        exclude: &HashSet<ArticleIdx>,
    ) -> Vec<ArticleIdx> {
        if popk == 0 {
            return Vec::new();
        }
        let mut all = self.qualifying(t, logic, metric, exclude);
        if all.len() > popk {
            all.select_nth_unstable_by(popk - 1, rank_order);
            all.truncate(popk);
        }
        all.sort_unstable_by(rank_order);
        all.into_iter().map(|(_, _, a)| a).collect()
    }

    /// Snapshot in the `bucket \t article_id \t clicks \t views` layout.
    pub fn to_tsv(&self, catalog: &Catalog) -> String {
        let mut by_id: Vec<usize> = (0..self.articles.len()).collect();
        by_id.sort_unstable_by_key(|&s| self.id_rank[s]);
        let mut out = String::new();
        for rel in 0..self.n_buckets {
            for &s in &by_id {
                let at = s * self.n_buckets + rel;
                if self.views[at] > 0 {
                    let _ = writeln!(
                        out,
                        "{}\t{}\t{}\t{}",
                        self.first_bucket + rel as i64,
                        catalog.id(self.articles[s]),
                        self.clicks[at],
                        self.views[at]
                    );
                }
            }
        }
        out
    }
}

fn ratio(clicks: u64, views: u64) -> f64 {
    if views == 0 {
        0.0
    } else {
        clicks as f64 / views as f64
    }
}

fn rank_order(a: &(f64, u32, ArticleIdx), b: &(f64, u32, ArticleIdx)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

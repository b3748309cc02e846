//! Training-sample construction with popular-article substitution.
//!
//! For every clicked candidate the sampler draws `k` negatives from the
//! impression's non-clicked candidates, asks the popularity source for the
//! `popk` most popular articles at the impression's time, and overwrites
//! `popk` randomly chosen negative slots with them. With `popk = 0` this is
//! the usual impression-only negative sampler.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{bucket_of, ArticleIdx, Catalog, Impression};
use crate::popindex::{PopularityIndex, PopularityLogic, PopularityMetric};
use crate::rng::impression_stream;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SamplerError {
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("impression has no clicked candidate")]
    NoPositive,
    #[error("impression has no usable non-clicked candidate")]
    NoNegatives,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Negatives per positive.
    pub k: usize,
    /// How many of the `k` slots go to popular articles.
    pub popk: usize,
    pub logic: PopularityLogic,
    pub metric: PopularityMetric,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            k: 4,
            popk: 0,
            logic: PopularityLogic::Acc,
            metric: PopularityMetric::Clicks,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.k == 0 {
            return Err(SamplerError::InvalidConfig("k must be at least 1".into()));
        }
        if self.popk > self.k {
            return Err(SamplerError::InvalidConfig(format!(
                "popk ({}) must not exceed k ({})",
                self.popk, self.k
            )));
        }
        Ok(())
    }

    /// Slots left to impression negatives.
    pub fn k_prime(&self) -> usize {
        self.k - self.popk
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    FromImpression,
    FromPopK,
}

impl Provenance {
    pub fn flag(self) -> char {
        match self {
            Provenance::FromImpression => 'I',
            Provenance::FromPopK => 'P',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSample {
    pub impression_id: String,
    pub timestamp: i64,
    pub positive: ArticleIdx,
    pub negatives: Vec<ArticleIdx>,
    pub provenance: Vec<Provenance>,
    /// Full clicked history of the user at impression time.
    pub history: Vec<ArticleIdx>,
}

impl TrainingSample {
    pub fn popular_count(&self) -> usize {
        self.provenance.iter().filter(|&&p| p == Provenance::FromPopK).count()
    }
}

/// Anything that can answer "the `popk` most popular articles at `t`".
pub trait PopularSource {
    fn popular(
        &self,
        t: i64,
        popk: usize,
        logic: PopularityLogic,
        metric: PopularityMetric,
        exclude: &HashSet<ArticleIdx>,
    ) -> Vec<ArticleIdx>;
}

impl PopularSource for PopularityIndex {
    fn popular(
        &self,
        t: i64,
        popk: usize,
        logic: PopularityLogic,
        metric: PopularityMetric,
        exclude: &HashSet<ArticleIdx>,
    ) -> Vec<ArticleIdx> {
        self.top_popk(t, popk, logic, metric, exclude)
    }
}

type RankKey = (i64, PopularityLogic, PopularityMetric);

/// Memoizes the full ranking per query bucket. Every impression in the same
/// bucket shares one ranking, so a whole epoch costs one sort per bucket.
pub struct RankingCache<'a> {
    index: &'a PopularityIndex,
    rankings: Mutex<HashMap<RankKey, Arc<[ArticleIdx]>>>,
}

impl<'a> RankingCache<'a> {
    pub fn new(index: &'a PopularityIndex) -> Self {
        Self {
            index,
            rankings: Mutex::new(HashMap::new()),
        }
    }

    fn ranking(&self, t: i64, logic: PopularityLogic, metric: PopularityMetric) -> Arc<[ArticleIdx]> {
        let key = (bucket_of(t, self.index.spec()), logic, metric);
        if let Some(r) = self.rankings.lock().expect("ranking cache poisoned").get(&key) {
            return Arc::clone(r);
        }
        let ranked: Arc<[ArticleIdx]> = self
            .index
            .ranking(t, logic, metric)
            .into_iter()
            .map(|(a, _)| a)
            .collect();
        self.rankings
            .lock()
            .expect("ranking cache poisoned")
            .entry(key)
            .or_insert(ranked)
            .clone()
    }
}

impl PopularSource for RankingCache<'_> {
    fn popular(
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
        self.ranking(t, logic, metric)
            .iter()
            .filter(|a| !exclude.contains(a))
            .take(popk)
            .copied()
            .collect()
    }
}

/// One sample per clicked candidate of `impression`.
pub fn make_samples<S: PopularSource + ?Sized, R: Rng + ?Sized>(
    impression: &Impression,
    source: &S,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<TrainingSample>, SamplerError> {
    config.validate()?;
    let mut positives: Vec<ArticleIdx> = impression.positives().collect();
    dedup_in_order(&mut positives);
    if positives.is_empty() {
        return Err(SamplerError::NoPositive);
    }
    let history: HashSet<ArticleIdx> = impression.history.iter().copied().collect();

    let mut samples = Vec::with_capacity(positives.len());
    for &positive in &positives {
        let mut pool: Vec<ArticleIdx> = impression
            .negatives()
            .filter(|a| *a != positive && !history.contains(a))
            .collect();
        dedup_in_order(&mut pool);
        if pool.is_empty() {
            return Err(SamplerError::NoNegatives);
        }

        let mut negatives: Vec<ArticleIdx> = if pool.len() >= config.k {
            index::sample(rng, pool.len(), config.k).into_iter().map(|i| pool[i]).collect()
        } else {
            (0..config.k).map(|_| pool[rng.random_range(0..pool.len())]).collect()
        };
        let mut provenance = vec![Provenance::FromImpression; config.k];

        let mut exclude = history.clone();
        exclude.insert(positive);
        let popular = source.popular(impression.timestamp, config.popk, config.logic, config.metric, &exclude);
        substitute(&mut negatives, &mut provenance, &popular, rng);

        samples.push(TrainingSample {
            impression_id: impression.impression_id.clone(),
            timestamp: impression.timestamp,
            positive,
            negatives,
            provenance,
            history: impression.history.clone(),
        });
    }
    Ok(samples)
}

/// Writes `popular` into randomly chosen slots. A popular article that was
/// already drawn keeps its slot (which then counts as substituted); slots
/// holding a repeat of an earlier slot are overwritten before unique ones.
fn substitute<R: Rng + ?Sized>(
    negatives: &mut [ArticleIdx],
    provenance: &mut [Provenance],
    popular: &[ArticleIdx],
    rng: &mut R,
) {
    let mut pending = Vec::new();
    for &p in popular {
        match negatives
            .iter()
            .position(|&n| n == p)
            .filter(|&i| provenance[i] == Provenance::FromImpression)
        {
            Some(i) => provenance[i] = Provenance::FromPopK,
            None => pending.push(p),
        }
    }
    if pending.is_empty() {
        return;
    }
    let (mut repeats, mut unique): (Vec<usize>, Vec<usize>) = (0..negatives.len())
        .filter(|&i| provenance[i] == Provenance::FromImpression)
        .partition(|&i| negatives[..i].contains(&negatives[i]) || popular.contains(&negatives[i]));
    repeats.shuffle(rng);
    unique.shuffle(rng);
    for (slot, p) in repeats.into_iter().chain(unique).zip(pending) {
        negatives[slot] = p;
        provenance[slot] = Provenance::FromPopK;
    }
}

fn dedup_in_order(ids: &mut Vec<ArticleIdx>) {
    let mut seen = HashSet::with_capacity(ids.len());
    ids.retain(|a| seen.insert(*a));
}

#[derive(Debug, Clone, Default)]
pub struct EpochSamples {
    pub samples: Vec<TrainingSample>,
    pub skipped_no_positive: usize,
    pub skipped_no_negatives: usize,
}

/// Samples for a whole epoch. Each impression draws from its own stream
/// derived from `(seed, epoch, impression_id)`, so the output does not
/// depend on scheduling.
pub fn epoch_samples<S: PopularSource + Sync + ?Sized>(
    impressions: &[Impression],
    source: &S,
    config: &SamplerConfig,
    epoch: u32,
) -> Result<EpochSamples, SamplerError> {
    config.validate()?;
    let run = |imp: &Impression| {
        let mut rng = impression_stream(config.seed, epoch, &imp.impression_id);
        make_samples(imp, source, config, &mut rng)
    };
    #[cfg(feature = "parallel")]
    let results: Vec<_> = {
        use rayon::prelude::*;
        impressions.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = impressions.iter().map(run).collect();

    let mut out = EpochSamples::default();
    for r in results {
        match r {
            Ok(s) => out.samples.extend(s),
            Err(SamplerError::NoPositive) => out.skipped_no_positive += 1,
            Err(SamplerError::NoNegatives) => out.skipped_no_negatives += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// `impression_id \t positive \t neg_1 .. neg_k \t flags`, flags being one
/// `I` (impression) or `P` (popular) per negative.
pub fn samples_to_tsv(samples: &[TrainingSample], catalog: &Catalog) -> String {
    let mut out = String::new();
    for s in samples {
        let _ = write!(out, "{}\t{}", s.impression_id, catalog.id(s.positive));
        for &n in &s.negatives {
            let _ = write!(out, "\t{}", catalog.id(n));
        }
        let flags: String = s.provenance.iter().map(|p| p.flag()).collect();
        let _ = writeln!(out, "\t{flags}");
    }
    out
}

//! Synthetic popularity-biased click logs with known user preferences.
//!
//! Article `i` (0-based) has popularity weight `(i + 1)^-exponent` and
//! category `i mod n_categories`. Candidate lists are drawn without
//! replacement proportionally to those weights, so a positive exponent
//! produces a Zipf-like exposure skew. Each user prefers one category; a
//! click follows that preference with probability `preference_strength`
//! and otherwise follows popularity.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ArticleIdx, Candidate, Catalog, Impression, NewsArticle};
use crate::rng::{named_stream, StreamRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("infeasible synthetic config: {0}")]
    InfeasibleConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_articles: usize,
    pub n_categories: usize,
    pub n_impressions: usize,
    pub candidates_per_impression: usize,
    /// 0 gives uniform exposure.
    pub popularity_exponent: f64,
    /// Probability that a click goes to the preferred category when one is
    /// on offer.
    pub preference_strength: f64,
    /// Probability that a list lacking the preferred category gets one
    /// preferred article swapped in.
    pub forced_preference_rate: f64,
    /// Number of hourly buckets the timestamps spread over.
    pub horizon: u64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_articles: 500,
            n_categories: 10,
            n_impressions: 20_000,
            candidates_per_impression: 10,
            popularity_exponent: 1.2,
            preference_strength: 0.8,
            forced_preference_rate: 0.5,
            horizon: 168,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::InfeasibleConfig(m));
        if self.n_users == 0 || self.n_articles == 0 || self.n_categories == 0 || self.n_impressions == 0 || self.horizon == 0 {
            return fail("all counts must be at least 1".into());
        }
        if self.n_categories > self.n_articles {
            return fail(format!("{} categories but only {} articles", self.n_categories, self.n_articles));
        }
        if self.candidates_per_impression < 2 || self.candidates_per_impression > self.n_articles {
            return fail(format!(
                "candidates_per_impression must be in 2..={}, got {}",
                self.n_articles, self.candidates_per_impression
            ));
        }
        if !(self.popularity_exponent >= 0.0 && self.popularity_exponent.is_finite()) {
            return fail("popularity_exponent must be finite and >= 0".into());
        }
        for (name, p) in [
            ("preference_strength", self.preference_strength),
            ("forced_preference_rate", self.forced_preference_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Static popularity weight per article rank.
    pub fn weights(&self) -> Vec<f64> {
        (0..self.n_articles)
            .map(|i| ((i + 1) as f64).powf(-self.popularity_exponent))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Preferred category per user id.
    pub preferred: BTreeMap<String, String>,
    /// Popularity weight per article, in catalog order.
    pub popularity: Vec<f64>,
}

impl GroundTruth {
    /// The most popular `ceil(n/10)` articles by static weight.
    pub fn top_decile(&self) -> HashSet<ArticleIdx> {
        let mut order: Vec<usize> = (0..self.popularity.len()).collect();
        order.sort_by(|&a, &b| self.popularity[b].total_cmp(&self.popularity[a]).then(a.cmp(&b)));
        let n = self.popularity.len().div_ceil(10);
        order.into_iter().take(n).map(|i| ArticleIdx(i as u32)).collect()
    }

    /// `user_id \t preferred_category`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (user, cat) in &self.preferred {
            let _ = writeln!(out, "{user}\t{cat}");
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub catalog: Catalog,
    /// Chronological.
    pub impressions: Vec<Impression>,
    pub truth: GroundTruth,
}

impl SynthCorpus {
    /// Chronological split: the first `train_fraction` of impressions and
    /// the rest.
    pub fn split(&self, train_fraction: f64) -> (&[Impression], &[Impression]) {
        let cut = ((self.impressions.len() as f64) * train_fraction.clamp(0.0, 1.0)).round() as usize;
        self.impressions.split_at(cut)
    }
}

fn width(n: usize) -> usize {
    n.to_string().len()
}

/// Draws `n` distinct indices, each step proportional to weight among the
/// indices not yet drawn.
pub fn weighted_distinct<R: Rng + ?Sized>(dist: &WeightedIndex<f64>, n: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let i = dist.sample(rng);
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

pub fn generate_corpus(config: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    config.validate()?;
    let mut rng: StreamRng = named_stream(config.seed, "synth", 0);
    let weights = config.weights();

    let aw = width(config.n_articles);
    let cw = width(config.n_categories.saturating_sub(1));
    let category_name = |c: usize| format!("cat{c:0cw$}");
    let articles: Vec<NewsArticle> = (0..config.n_articles)
        .map(|i| {
            let cat = category_name(i % config.n_categories);
            let mut a = NewsArticle::new(format!("N{:0aw$}", i + 1), cat.clone());
            a.subcategory = Some(format!("{cat}-sub{}", (i / config.n_categories) % 3));
            a.title = vec![cat, "story".to_owned(), (i + 1).to_string()];
            a
        })
        .collect();
    let catalog = Catalog::from_articles(articles).expect("synthetic ids are unique");

    let exposure = WeightedIndex::new(&weights).expect("positive weights");
    let by_category: Vec<Vec<usize>> = (0..config.n_categories)
        .map(|c| (c..config.n_articles).step_by(config.n_categories).collect())
        .collect();
    let within_category: Vec<WeightedIndex<f64>> = by_category
        .iter()
        .map(|members| WeightedIndex::new(members.iter().map(|&i| weights[i])).expect("non-empty category"))
        .collect();

    let uw = width(config.n_users);
    let user_ids: Vec<String> = (0..config.n_users).map(|u| format!("U{:0uw$}", u + 1)).collect();
    let preferred: Vec<usize> = (0..config.n_users).map(|u| u % config.n_categories).collect();

    let span = (config.horizon * 3600) as i64;
    let mut events: Vec<(i64, usize)> = (0..config.n_impressions)
        .map(|_| (rng.random_range(0..span), rng.random_range(0..config.n_users)))
        .collect();
    events.sort();

    let iw = width(config.n_impressions);
    let mut histories: Vec<Vec<ArticleIdx>> = vec![Vec::new(); config.n_users];
    let mut impressions = Vec::with_capacity(config.n_impressions);
    for (n, &(timestamp, user)) in events.iter().enumerate() {
        let pref = preferred[user];
        let mut list = weighted_distinct(&exposure, config.candidates_per_impression, &mut rng);
        let has_pref = |list: &[usize]| list.iter().any(|&i| i % config.n_categories == pref);
        if !has_pref(&list) && rng.random_bool(config.forced_preference_rate) {
            let slot = rng.random_range(0..list.len());
            list[slot] = by_category[pref][within_category[pref].sample(&mut rng)];
        }

        let preferred_slots: Vec<usize> = (0..list.len()).filter(|&s| list[s] % config.n_categories == pref).collect();
        let clicked = if !preferred_slots.is_empty() && rng.random_bool(config.preference_strength) {
            preferred_slots[rng.random_range(0..preferred_slots.len())]
        } else {
            let local = WeightedIndex::new(list.iter().map(|&i| weights[i])).expect("positive weights");
            local.sample(&mut rng)
        };

        let candidates = list
            .iter()
            .enumerate()
            .map(|(s, &i)| Candidate {
                article: ArticleIdx(i as u32),
                clicked: s == clicked,
            })
            .collect();
        impressions.push(Impression {
            impression_id: format!("I{:0iw$}", n + 1),
            user_id: user_ids[user].clone(),
            timestamp,
            history: histories[user].clone(),
            candidates,
        });
        histories[user].push(ArticleIdx(list[clicked] as u32));
    }

    let truth = GroundTruth {
        preferred: user_ids
            .iter()
            .zip(&preferred)
            .map(|(u, &c)| (u.clone(), category_name(c)))
            .collect(),
        popularity: weights,
    };
    Ok(SynthCorpus {
        catalog,
        impressions,
        truth,
    })
}

/// Candidate appearances per article.
pub fn exposure_counts(impressions: &[Impression], n_articles: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n_articles];
    for imp in impressions {
        for c in &imp.candidates {
            counts[c.article.get()] += 1;
        }
    }
    counts
}

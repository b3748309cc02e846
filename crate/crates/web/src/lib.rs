//! WebAssembly bindings behind `www/index.html`. Every method returns a JSON
//! string so the page needs no generated type glue beyond the class itself.
//! Errors come back as plain strings.

use popk::corpus::{bucket_of, parse_behaviors_str, parse_news_str};
use popk::rng::impression_stream;
use popk::sampler::{make_samples, Provenance};
use popk::{
    build_index, generate_corpus, BucketSpec, Catalog, Impression, PopularityIndex, PopularityLogic,
    PopularityMetric, SamplerConfig, SynthConfig,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Ranked<'a> {
    id: &'a str,
    category: &'a str,
    value: f64,
}

#[derive(Serialize)]
struct Negative<'a> {
    id: &'a str,
    category: &'a str,
    popular: bool,
}

#[derive(Serialize)]
struct Sample<'a> {
    positive: &'a str,
    negatives: Vec<Negative<'a>>,
}

#[derive(Serialize)]
struct Preview<'a> {
    impression_id: &'a str,
    user_id: &'a str,
    bucket: i64,
    history: usize,
    candidates: usize,
    samples: Vec<Sample<'a>>,
}

#[derive(Serialize)]
struct CurvePoint {
    bucket: i64,
    clicks: u64,
    views: u64,
    /// Popularity as seen by a query just after this bucket closes.
    value: f64,
}

#[derive(Serialize)]
struct Summary {
    articles: usize,
    categories: usize,
    impressions: usize,
    first_bucket: i64,
    last_bucket: i64,
}

fn parse_logic(s: &str) -> Result<PopularityLogic, String> {
    s.parse()
}

fn parse_metric(s: &str) -> Result<PopularityMetric, String> {
    s.parse()
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("demo output serializes")
}

/// A corpus and its hourly popularity index, held by the page.
#[wasm_bindgen]
pub struct Demo {
    catalog: Catalog,
    impressions: Vec<Impression>,
    index: PopularityIndex,
}

#[wasm_bindgen]
impl Demo {
    /// Synthetic corpus over `hours` hourly buckets.
    pub fn synthetic(seed: u32, n_articles: usize, n_impressions: usize, hours: u32) -> Result<Demo, String> {
        let config = SynthConfig {
            n_articles,
            n_impressions,
            horizon: u64::from(hours),
            seed: u64::from(seed),
            ..SynthConfig::default()
        };
        let corpus = generate_corpus(&config).map_err(|e| e.to_string())?;
        Ok(Self::build(corpus.catalog, corpus.impressions))
    }

    /// Corpus pasted as news and behaviors TSV text.
    pub fn from_tsv(news: &str, behaviors: &str) -> Result<Demo, String> {
        let catalog = parse_news_str(news).map_err(|e| e.to_string())?;
        let parsed = parse_behaviors_str(behaviors, &catalog).map_err(|e| e.to_string())?;
        if parsed.impressions.is_empty() {
            return Err("no impressions".into());
        }
        Ok(Self::build(catalog, parsed.impressions))
    }

    fn build(catalog: Catalog, mut impressions: Vec<Impression>) -> Demo {
        impressions.sort_by_key(|i| i.timestamp);
        let index = build_index(&impressions, &catalog, BucketSpec::default());
        Demo {
            catalog,
            impressions,
            index,
        }
    }

    pub fn summary(&self) -> String {
        let (first_bucket, last_bucket) = self.index.bucket_range().unwrap_or((0, 0));
        json(&Summary {
            articles: self.catalog.len(),
            categories: self.catalog.category_count(),
            impressions: self.impressions.len(),
            first_bucket,
            last_bucket,
        })
    }

    /// The `n` most popular articles for a query made at the start of
    /// `bucket`, which sees only the buckets before it.
    pub fn ranking(&self, bucket: i64, logic: &str, metric: &str, n: usize) -> Result<String, String> {
        let (logic, metric) = (parse_logic(logic)?, parse_metric(metric)?);
        let t = self.index.spec().bucket_start(bucket);
        let top: Vec<Ranked> = self
            .index
            .ranking(t, logic, metric)
            .into_iter()
            .take(n)
            .map(|(a, value)| Ranked {
                id: self.catalog.id(a),
                category: self.catalog.category(a),
                value,
            })
            .collect();
        Ok(json(&top))
    }

    /// Training samples drawn for the impression at position `position`
    /// in time order.
    pub fn preview(
        &self,
        position: usize,
        k: usize,
        popk: usize,
        logic: &str,
        metric: &str,
        seed: u32,
    ) -> Result<String, String> {
        let seed = u64::from(seed);
        let imp = self
            .impressions
            .get(position)
            .ok_or_else(|| format!("impression {position} out of range"))?;
        let config = SamplerConfig {
            k,
            popk,
            logic: parse_logic(logic)?,
            metric: parse_metric(metric)?,
            seed,
        };
        let mut rng = impression_stream(seed, 0, &imp.impression_id);
        let samples = make_samples(imp, &self.index, &config, &mut rng).map_err(|e| e.to_string())?;
        let samples = samples
            .iter()
            .map(|s| Sample {
                positive: self.catalog.id(s.positive),
                negatives: s
                    .negatives
                    .iter()
                    .zip(&s.provenance)
                    .map(|(&a, &p)| Negative {
                        id: self.catalog.id(a),
                        category: self.catalog.category(a),
                        popular: p == Provenance::FromPopK,
                    })
                    .collect(),
            })
            .collect();
        Ok(json(&Preview {
            impression_id: &imp.impression_id,
            user_id: &imp.user_id,
            bucket: bucket_of(imp.timestamp, self.index.spec()),
            history: imp.history.len(),
            candidates: imp.candidates.len(),
            samples,
        }))
    }

    /// Per-bucket clicks and views of one article, with its popularity value
    /// under `logic`/`metric` after each bucket.
    pub fn curve(&self, article_id: &str, logic: &str, metric: &str) -> Result<String, String> {
        let (logic, metric) = (parse_logic(logic)?, parse_metric(metric)?);
        let article = self
            .catalog
            .lookup(article_id)
            .ok_or_else(|| format!("unknown article {article_id}"))?;
        let Some((first, last)) = self.index.bucket_range() else {
            return Ok("[]".into());
        };
        let spec = self.index.spec();
        let points: Vec<CurvePoint> = (first..=last)
            .map(|b| {
                let cell = self.index.cell(article, b);
                CurvePoint {
                    bucket: b,
                    clicks: cell.clicks,
                    views: cell.views,
                    value: self.index.stat_value(article, spec.bucket_start(b + 1), logic, metric),
                }
            })
            .collect();
        Ok(json(&points))
    }

    /// Article ids by descending total clicks, for the page's picker.
    pub fn most_clicked(&self, n: usize) -> String {
        let mut clicks = vec![0u64; self.catalog.len()];
        for imp in &self.impressions {
            for a in imp.positives() {
                clicks[a.get()] += 1;
            }
        }
        let mut order: Vec<_> = self.catalog.indices().collect();
        order.sort_by_key(|&a| (std::cmp::Reverse(clicks[a.get()]), self.catalog.id_rank(a)));
        let ids: Vec<&str> = order.into_iter().take(n).map(|a| self.catalog.id(a)).collect();
        json(&ids)
    }
}

//! News catalogs, impression logs and time buckets.
//!
//! Two tab-separated formats are read and written here:
//!
//! ```text
//! news:       article_id \t category \t subcategory [\t title [\t abstract [\t entities]]]
//! behaviors:  impression_id \t user_id \t time \t history \t candidates
//! ```
//!
//! `history` is a space-separated list of article ids (oldest first) and
//! `candidates` a space-separated list of `articleid-label` tokens with the
//! label being `0` or `1`. `time` is either an integer epoch second or an
//! ISO-8601 timestamp; both are normalized to epoch seconds in UTC.
//! Blank lines and lines starting with `#` are skipped.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Training-time history cap.
pub const DEFAULT_MAX_HISTORY: usize = 50;

/// One-hour buckets.
pub const DEFAULT_BUCKET_LENGTH: u64 = 3600;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed line {0}")]
    MalformedLine(usize),
    #[error("duplicate article id {0:?}")]
    DuplicateArticleId(String),
    #[error("file contains no records")]
    EmptyFile,
    #[error("unknown article id {0:?} on line {1}")]
    UnknownArticleId(String, usize),
    #[error("bad candidate label in token {0:?}")]
    BadLabel(String),
    #[error("bad timestamp {0:?}")]
    BadTimestamp(String),
    #[error("bucket length must be positive")]
    InvalidBucketLength,
}

/// Dense index of an article inside its [`Catalog`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ArticleIdx(pub u32);

impl ArticleIdx {
    #[inline]
    pub fn get(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewsArticle {
    pub article_id: String,
    pub category: String,
    pub subcategory: Option<String>,
    pub title: Vec<String>,
    pub abstract_text: Option<Vec<String>>,
    /// Parsed and stored; the embedding scorer does not read them.
    pub entities: Vec<String>,
}

impl NewsArticle {
    pub fn new(article_id: impl Into<String>, category: impl Into<String>) -> Self {
        Self {
            article_id: article_id.into(),
            category: category.into(),
            subcategory: None,
            title: Vec::new(),
            abstract_text: None,
            entities: Vec::new(),
        }
    }
}

/// Immutable article catalog with id lookup and category bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    articles: Vec<NewsArticle>,
    by_id: HashMap<String, ArticleIdx>,
    categories: Vec<String>,
    category_of: Vec<u32>,
    /// Position of each article in ascending `article_id` order; used for
    /// deterministic tie-breaking without string comparisons.
    id_rank: Vec<u32>,
}

impl Catalog {
    pub fn from_articles(articles: Vec<NewsArticle>) -> Result<Self, CorpusError> {
        if articles.is_empty() {
            return Err(CorpusError::EmptyFile);
        }
        let mut by_id = HashMap::with_capacity(articles.len());
        for (i, a) in articles.iter().enumerate() {
            if by_id.insert(a.article_id.clone(), ArticleIdx(i as u32)).is_some() {
                return Err(CorpusError::DuplicateArticleId(a.article_id.clone()));
            }
        }
        let mut categories: Vec<String> = articles.iter().map(|a| a.category.clone()).collect();
        categories.sort();
        categories.dedup();
        let category_of = articles
            .iter()
            .map(|a| categories.binary_search(&a.category).expect("category present") as u32)
            .collect();
        let mut order: Vec<usize> = (0..articles.len()).collect();
        order.sort_by(|&a, &b| articles[a].article_id.cmp(&articles[b].article_id));
        let mut id_rank = vec![0u32; articles.len()];
        for (rank, &i) in order.iter().enumerate() {
            id_rank[i] = rank as u32;
        }
        Ok(Self {
            articles,
            by_id,
            categories,
            category_of,
            id_rank,
        })
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn get(&self, idx: ArticleIdx) -> &NewsArticle {
        &self.articles[idx.get()]
    }

    pub fn lookup(&self, article_id: &str) -> Option<ArticleIdx> {
        self.by_id.get(article_id).copied()
    }

    pub fn id(&self, idx: ArticleIdx) -> &str {
        &self.articles[idx.get()].article_id
    }

    pub fn articles(&self) -> &[NewsArticle] {
        &self.articles
    }

    pub fn indices(&self) -> impl Iterator<Item = ArticleIdx> {
        (0..self.articles.len() as u32).map(ArticleIdx)
    }

    /// Number of distinct category labels.
    pub fn category_count(&self) -> usize {
        self.categories.len()
    }

    /// Distinct category labels in ascending order.
    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    /// Index into [`Catalog::categories`] of an article's category.
    pub fn category_index(&self, idx: ArticleIdx) -> usize {
        self.category_of[idx.get()] as usize
    }

    pub fn category(&self, idx: ArticleIdx) -> &str {
        &self.categories[self.category_index(idx)]
    }

    pub fn id_rank(&self, idx: ArticleIdx) -> u32 {
        self.id_rank[idx.get()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub article: ArticleIdx,
    pub clicked: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Impression {
    pub impression_id: String,
    pub user_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    /// Clicked articles, most recent last.
    pub history: Vec<ArticleIdx>,
    pub candidates: Vec<Candidate>,
}

impl Impression {
    pub fn positives(&self) -> impl Iterator<Item = ArticleIdx> + '_ {
        self.candidates.iter().filter(|c| c.clicked).map(|c| c.article)
    }

    pub fn negatives(&self) -> impl Iterator<Item = ArticleIdx> + '_ {
        self.candidates.iter().filter(|c| !c.clicked).map(|c| c.article)
    }

    pub fn labels(&self) -> Vec<bool> {
        self.candidates.iter().map(|c| c.clicked).collect()
    }
}

/// Most recent `max_history` entries of a history, order preserved.
pub fn truncate_history(history: &[ArticleIdx], max_history: usize) -> &[ArticleIdx] {
    &history[history.len().saturating_sub(max_history)..]
}

/// Parsed behaviors file.
#[derive(Debug, Clone, Default)]
pub struct Behaviors {
    pub impressions: Vec<Impression>,
    /// History ids that did not resolve in the catalog and were dropped.
    pub dropped_history_ids: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketSpec {
    /// Seconds per bucket.
    pub bucket_length: u64,
    /// Epoch second at which bucket 0 starts.
    #[serde(default)]
    pub origin: i64,
}

impl Default for BucketSpec {
    fn default() -> Self {
        Self {
            bucket_length: DEFAULT_BUCKET_LENGTH,
            origin: 0,
        }
    }
}

impl BucketSpec {
    pub fn new(bucket_length: u64) -> Result<Self, CorpusError> {
        let spec = Self {
            bucket_length,
            origin: 0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.bucket_length == 0 || self.bucket_length > i64::MAX as u64 {
            return Err(CorpusError::InvalidBucketLength);
        }
        Ok(())
    }

    /// First epoch second of a bucket.
    pub fn bucket_start(&self, bucket: i64) -> i64 {
        self.origin + bucket * self.bucket_length as i64
    }
}

/// Bucket containing `timestamp`; a timestamp on a boundary opens the next
/// bucket, so bucket `b` covers `[origin + b*L, origin + (b+1)*L)`.
pub fn bucket_of(timestamp: i64, spec: &BucketSpec) -> i64 {
    (timestamp - spec.origin).div_euclid(spec.bucket_length as i64)
}

fn read_file(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn tokens(field: &str) -> Vec<String> {
    field.split_whitespace().map(str::to_owned).collect()
}

fn non_empty(field: Option<&str>) -> Option<&str> {
    field.filter(|f| !f.trim().is_empty())
}

pub fn parse_news(path: &Path) -> Result<Catalog, CorpusError> {
    parse_news_str(&read_file(path)?)
}

pub fn parse_news_str(text: &str) -> Result<Catalog, CorpusError> {
    let mut articles = Vec::new();
    let mut seen: HashMap<&str, ()> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 || fields.len() > 6 {
            return Err(CorpusError::MalformedLine(line_no));
        }
        let id = fields[0].trim();
        let category = fields[1].trim();
        if id.is_empty() || category.is_empty() {
            return Err(CorpusError::MalformedLine(line_no));
        }
        if seen.insert(id, ()).is_some() {
            return Err(CorpusError::DuplicateArticleId(id.to_owned()));
        }
        articles.push(NewsArticle {
            article_id: id.to_owned(),
            category: category.to_owned(),
            subcategory: non_empty(Some(fields[2])).map(|s| s.trim().to_owned()),
            title: fields.get(3).map(|f| tokens(f)).unwrap_or_default(),
            abstract_text: non_empty(fields.get(4).copied()).map(tokens),
            entities: fields.get(5).map(|f| tokens(f)).unwrap_or_default(),
        });
    }
    Catalog::from_articles(articles)
}

/// Parses an epoch integer, an RFC 3339 timestamp, a zone-less ISO-8601
/// timestamp (read as UTC) or the MIND `m/d/Y h:M:S AM` form.
pub fn parse_timestamp(token: &str) -> Result<i64, CorpusError> {
    let token = token.trim();
    let bad = || CorpusError::BadTimestamp(token.to_owned());
    let ts = if let Ok(secs) = token.parse::<i64>() {
        secs
    } else if let Ok(dt) = DateTime::parse_from_rfc3339(token) {
        dt.timestamp()
    } else {
        const NAIVE: [&str; 4] = [
            "%Y-%m-%dT%H:%M:%S%.f",
            "%Y-%m-%d %H:%M:%S%.f",
            "%Y-%m-%dT%H:%M",
            "%m/%d/%Y %I:%M:%S %p",
        ];
        NAIVE
            .iter()
            .find_map(|fmt| NaiveDateTime::parse_from_str(token, fmt).ok())
            .ok_or_else(bad)?
            .and_utc()
            .timestamp()
    };
    if ts < 0 {
        return Err(bad());
    }
    Ok(ts)
}

/// RFC 3339 rendering in UTC, e.g. `2019-11-09T06:00:00Z`.
pub fn format_timestamp(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|dt| dt.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| ts.to_string())
}

fn parse_candidate(token: &str) -> Result<(&str, bool), CorpusError> {
    let bad = || CorpusError::BadLabel(token.to_owned());
    let (id, label) = token.rsplit_once('-').ok_or_else(bad)?;
    if id.is_empty() {
        return Err(bad());
    }
    match label {
        "0" => Ok((id, false)),
        "1" => Ok((id, true)),
        _ => Err(bad()),
    }
}

pub fn parse_behaviors(path: &Path, catalog: &Catalog) -> Result<Behaviors, CorpusError> {
    parse_behaviors_str(&read_file(path)?, catalog)
}

pub fn parse_behaviors_str(text: &str, catalog: &Catalog) -> Result<Behaviors, CorpusError> {
    let mut out = Behaviors::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(CorpusError::MalformedLine(line_no));
        }
        let timestamp = parse_timestamp(fields[2])?;
        let mut history = Vec::new();
        for id in fields[3].split_whitespace() {
            match catalog.lookup(id) {
                Some(idx) => history.push(idx),
                None => out.dropped_history_ids += 1,
            }
        }
        let mut candidates = Vec::new();
        for token in fields[4].split_whitespace() {
            let (id, clicked) = parse_candidate(token)?;
            let article = catalog
                .lookup(id)
                .ok_or_else(|| CorpusError::UnknownArticleId(id.to_owned(), line_no))?;
            candidates.push(Candidate { article, clicked });
        }
        if candidates.is_empty() {
            return Err(CorpusError::MalformedLine(line_no));
        }
        out.impressions.push(Impression {
            impression_id: fields[0].to_owned(),
            user_id: fields[1].to_owned(),
            timestamp,
            history,
            candidates,
        });
    }
    Ok(out)
}

pub fn news_to_tsv(catalog: &Catalog) -> String {
    let mut out = String::new();
    for a in catalog.articles() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            a.article_id,
            a.category,
            a.subcategory.as_deref().unwrap_or(""),
            a.title.join(" "),
            a.abstract_text.as_ref().map(|t| t.join(" ")).unwrap_or_default(),
            a.entities.join(" "),
        );
    }
    out
}

pub fn behaviors_to_tsv(impressions: &[Impression], catalog: &Catalog) -> String {
    let mut out = String::new();
    for imp in impressions {
        let history: Vec<&str> = imp.history.iter().map(|&a| catalog.id(a)).collect();
        let candidates: Vec<String> = imp
            .candidates
            .iter()
            .map(|c| format!("{}-{}", catalog.id(c.article), u8::from(c.clicked)))
            .collect();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            imp.impression_id,
            imp.user_id,
            imp.timestamp,
            history.join(" "),
            candidates.join(" "),
        );
    }
    out
}

/// Per-split counts in the `impressions / users` layout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSummary {
    pub impressions: usize,
    pub users: usize,
    pub first_timestamp: Option<i64>,
    pub last_timestamp: Option<i64>,
    pub dropped_history_ids: usize,
}

impl SplitSummary {
    pub fn of(behaviors: &Behaviors) -> Self {
        let mut users: Vec<&str> = behaviors.impressions.iter().map(|i| i.user_id.as_str()).collect();
        users.sort_unstable();
        users.dedup();
        Self {
            impressions: behaviors.impressions.len(),
            users: users.len(),
            first_timestamp: behaviors.impressions.iter().map(|i| i.timestamp).min(),
            last_timestamp: behaviors.impressions.iter().map(|i| i.timestamp).max(),
            dropped_history_ids: behaviors.dropped_history_ids,
        }
    }
}

impl std::fmt::Display for SplitSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} / {}", self.impressions, self.users)
    }
}

/// Article count per category, ascending by category.
pub fn category_histogram(catalog: &Catalog) -> BTreeMap<String, usize> {
    let mut hist = BTreeMap::new();
    for idx in catalog.indices() {
        *hist.entry(catalog.category(idx).to_owned()).or_insert(0) += 1;
    }
    hist
}

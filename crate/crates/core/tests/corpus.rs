use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use popk::corpus::{
    behaviors_to_tsv, news_to_tsv, parse_behaviors, parse_behaviors_str, parse_news, parse_news_str,
    truncate_history, Candidate, CorpusError,
};
use popk::{bucket_of, ArticleIdx, BucketSpec, Catalog, Impression, NewsArticle};
use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn write_temp(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

#[test]
fn two_article_file() {
    let f = write_temp("n1\tsports\tsoccer\tbig match\n\nn2\tfinance\tstocks\tmarkets up\tlong text\tQ1 Q2\n");
    let catalog = parse_news(f.path()).unwrap();
    assert_eq!(catalog.len(), 2);
    assert_eq!(catalog.category_count(), 2);
    let n2 = catalog.get(catalog.lookup("n2").unwrap());
    assert_eq!(n2.entities, vec!["Q1", "Q2"]);
    assert_eq!(n2.abstract_text.as_deref(), Some(&["long".to_owned(), "text".to_owned()][..]));
}

#[test]
fn news_errors() {
    assert!(matches!(
        parse_news_str("n1\ta\tx\nn1\tb\ty\n"),
        Err(CorpusError::DuplicateArticleId(id)) if id == "n1"
    ));
    assert!(matches!(parse_news_str("n1\ta\tx\nn2\tb\n"), Err(CorpusError::MalformedLine(2))));
    assert!(matches!(parse_news_str("\n\n"), Err(CorpusError::EmptyFile)));
    let missing = std::path::Path::new("/nonexistent/news.tsv");
    assert!(matches!(parse_news(missing), Err(CorpusError::Io { .. })));
}

#[test]
fn thousand_line_news_matches_line_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cats = ["sports", "finance", "lifestyle", "tv", "weather", "autos", "health"];
    let mut text = String::new();
    for i in 0..1000 {
        let cat = cats.choose(&mut rng).unwrap();
        let extra = rng.random_range(0..4);
        text.push_str(&format!("N{i}\t{cat}\tsub{}", rng.random_range(0..5)));
        for col in 0..extra {
            text.push_str(&format!("\tcol{col} w{}", rng.random_range(0..100)));
        }
        text.push('\n');
    }
    let f = write_temp(&text);
    let catalog = parse_news(f.path()).unwrap();

    let mut ids = BTreeSet::new();
    let mut categories = BTreeSet::new();
    for line in text.lines() {
        let mut parts = line.split('\t');
        ids.insert(parts.next().unwrap().to_owned());
        categories.insert(parts.next().unwrap().to_owned());
    }
    assert_eq!(catalog.len(), ids.len());
    assert_eq!(catalog.category_count(), categories.len());
    let parsed: BTreeSet<String> = catalog.categories().iter().cloned().collect();
    assert_eq!(parsed, categories);
    for id in &ids {
        assert!(catalog.lookup(id).is_some(), "{id}");
    }
}

fn small_catalog(n: usize) -> Catalog {
    Catalog::from_articles((0..n).map(|i| NewsArticle::new(format!("n{i}"), format!("c{}", i % 3))).collect()).unwrap()
}

#[test]
fn labelled_candidates_and_empty_history() {
    let catalog = Catalog::from_articles(vec![NewsArticle::new("n125", "a"), NewsArticle::new("n174", "b")]).unwrap();
    let parsed = parse_behaviors_str("i1\tu1\t100\t\tn125-0 n174-1\n", &catalog).unwrap();
    let imp = &parsed.impressions[0];
    assert!(imp.history.is_empty());
    assert_eq!(imp.positives().collect::<Vec<_>>(), vec![catalog.lookup("n174").unwrap()]);
    assert_eq!(imp.negatives().collect::<Vec<_>>(), vec![catalog.lookup("n125").unwrap()]);
}

#[test]
fn behaviors_errors() {
    let catalog = small_catalog(3);
    assert!(matches!(
        parse_behaviors_str("i1\tu1\t0\t\tn0-1 zz-0\n", &catalog),
        Err(CorpusError::UnknownArticleId(id, 1)) if id == "zz"
    ));
    assert!(matches!(parse_behaviors_str("i1\tu1\t0\t\tn0-2\n", &catalog), Err(CorpusError::BadLabel(_))));
    assert!(matches!(parse_behaviors_str("i1\tu1\t0\t\tn0\n", &catalog), Err(CorpusError::BadLabel(_))));
    assert!(matches!(
        parse_behaviors_str("i1\tu1\tyesterday\t\tn0-1\n", &catalog),
        Err(CorpusError::BadTimestamp(_))
    ));
    assert!(matches!(parse_behaviors_str("i1\tu1\t0\tn0\n", &catalog), Err(CorpusError::MalformedLine(1))));

    let lenient = parse_behaviors_str("i1\tu1\t0\tn0 gone n1 lost\tn2-1\n", &catalog).unwrap();
    assert_eq!(lenient.dropped_history_ids, 2);
    assert_eq!(lenient.impressions[0].history.len(), 2);
}

#[test]
fn timestamps_normalize_to_utc_epoch() {
    let catalog = small_catalog(1);
    let rows = [
        "i\tu\t1484611200\t\tn0-1",
        "i\tu\t2017-01-17T00:00:00Z\t\tn0-1",
        "i\tu\t2017-01-17T09:00:00+09:00\t\tn0-1",
        "i\tu\t2017-01-17T00:00:00\t\tn0-1",
        "i\tu\t1/17/2017 12:00:00 AM\t\tn0-1",
    ];
    for row in rows {
        let b = parse_behaviors_str(row, &catalog).unwrap();
        assert_eq!(b.impressions[0].timestamp, 1_484_611_200, "{row}");
    }
}

#[test]
fn five_hundred_rows_match_split_and_count() {
    let catalog = small_catalog(40);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut text = String::new();
    for i in 0..500 {
        let hist: Vec<String> = (0..rng.random_range(0..8)).map(|_| format!("n{}", rng.random_range(0..40))).collect();
        let cands: Vec<String> = (0..rng.random_range(1..12))
            .map(|_| format!("n{}-{}", rng.random_range(0..40), rng.random_range(0..2)))
            .collect();
        text.push_str(&format!(
            "I{i}\tU{}\t{}\t{}\t{}\n",
            rng.random_range(0..30),
            rng.random_range(0..1_000_000),
            hist.join(" "),
            cands.join(" ")
        ));
    }
    let f = write_temp(&text);
    let parsed = parse_behaviors(f.path(), &catalog).unwrap();
    assert_eq!(parsed.impressions.len(), 500);
    for (line, imp) in text.lines().zip(&parsed.impressions) {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 5);
        assert_eq!(imp.impression_id, fields[0]);
        assert_eq!(imp.user_id, fields[1]);
        assert_eq!(imp.timestamp, fields[2].parse::<i64>().unwrap());
        assert_eq!(imp.history.len(), fields[3].split(' ').filter(|s| !s.is_empty()).count());
        let tokens: Vec<&str> = fields[4].split(' ').collect();
        assert_eq!(imp.candidates.len(), tokens.len());
        let clicks = tokens.iter().filter(|t| t.ends_with("-1")).count();
        assert_eq!(imp.positives().count(), clicks);
    }
}

#[test]
fn bucket_boundaries() {
    let spec = BucketSpec::default();
    assert_eq!(bucket_of(7200, &spec), 2);
    assert_eq!(bucket_of(3599, &spec), 0);
    assert_eq!(bucket_of(3600, &spec), 1);
    assert!(BucketSpec::new(0).is_err());
}

#[test]
fn thousand_random_buckets_match_integer_division() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let len = rng.random_range(1..100_000u64);
        let ts = rng.random_range(0..4_000_000_000i64);
        let spec = BucketSpec::new(len).unwrap();
        assert_eq!(bucket_of(ts, &spec), ts / len as i64);
    }
}

fn token() -> impl Strategy<Value = String> {
    "[a-z0-9]{1,6}"
}

fn article_strategy() -> impl Strategy<Value = (String, Option<String>, Vec<String>, Option<Vec<String>>, Vec<String>)> {
    (
        token(),
        proptest::option::of(token()),
        proptest::collection::vec(token(), 0..4),
        proptest::option::of(proptest::collection::vec(token(), 1..4)),
        proptest::collection::vec(token(), 0..3),
    )
}

proptest! {
    #[test]
    fn news_and_behaviors_round_trip(
        fields in proptest::collection::vec(article_strategy(), 1..20),
        rows in proptest::collection::vec(
            (0u32..1000, 0i64..10_000_000, proptest::collection::vec(0usize..100, 0..6),
             proptest::collection::vec((0usize..100, any::<bool>()), 1..8)),
            0..30),
    ) {
        let articles: Vec<NewsArticle> = fields
            .into_iter()
            .enumerate()
            .map(|(i, (cat, sub, title, abs, ents))| NewsArticle {
                article_id: format!("N{i}"),
                category: cat,
                subcategory: sub,
                title,
                abstract_text: abs,
                entities: ents,
            })
            .collect();
        let n = articles.len();
        let catalog = Catalog::from_articles(articles).unwrap();
        let reparsed = parse_news_str(&news_to_tsv(&catalog)).unwrap();
        prop_assert_eq!(&reparsed, &catalog);

        let impressions: Vec<Impression> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (user, ts, hist, cands))| Impression {
                impression_id: format!("I{i}"),
                user_id: format!("U{user}"),
                timestamp: ts,
                history: hist.into_iter().map(|h| ArticleIdx((h % n) as u32)).collect(),
                candidates: cands
                    .into_iter()
                    .map(|(c, clicked)| Candidate { article: ArticleIdx((c % n) as u32), clicked })
                    .collect(),
            })
            .collect();
        let back = parse_behaviors_str(&behaviors_to_tsv(&impressions, &catalog), &catalog).unwrap();
        prop_assert_eq!(back.impressions, impressions);
        prop_assert_eq!(back.dropped_history_ids, 0);
    }

    #[test]
    fn bucket_of_is_monotone_and_half_open(a in 0i64..10_000_000_000, b in 0i64..10_000_000_000, len in 1u64..1_000_000) {
        let spec = BucketSpec::new(len).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(bucket_of(lo, &spec) <= bucket_of(hi, &spec));
        let bucket = bucket_of(a, &spec);
        prop_assert!(spec.bucket_start(bucket) <= a && a < spec.bucket_start(bucket + 1));
    }

    #[test]
    fn truncation_keeps_most_recent_in_order(raw in proptest::collection::vec(0u32..500, 0..200), max in 0usize..80) {
        let history: Vec<ArticleIdx> = raw.iter().map(|&r| ArticleIdx(r)).collect();
        let kept = truncate_history(&history, max);
        prop_assert!(kept.len() <= max);
        prop_assert_eq!(kept.len(), history.len().min(max));
        prop_assert_eq!(kept, &history[history.len() - kept.len()..]);
    }
}

#[test]
fn category_histogram_counts_articles() {
    let catalog = small_catalog(10);
    let hist = popk::corpus::category_histogram(&catalog);
    let mut oracle: HashMap<String, usize> = HashMap::new();
    for a in catalog.articles() {
        *oracle.entry(a.category.clone()).or_default() += 1;
    }
    assert_eq!(hist.len(), oracle.len());
    for (cat, n) in hist {
        assert_eq!(oracle[&cat], n);
    }
}

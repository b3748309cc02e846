mod common;

use std::collections::{HashMap, HashSet};

use popk::corpus::Candidate;
use popk::popindex::{BucketStats, Cell};
use popk::{bucket_of, build_index, ArticleIdx, BucketSpec, Catalog, Impression, NewsArticle, PopularityLogic, PopularityMetric};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: i64 = 3600;

/// Raw event list of `(timestamp, article, clicked)`.
fn events(impressions: &[Impression]) -> Vec<(i64, ArticleIdx, bool)> {
    impressions
        .iter()
        .flat_map(|imp| imp.candidates.iter().map(move |c| (imp.timestamp, c.article, c.clicked)))
        .collect()
}

/// Replays events from scratch for one query.
fn replay(events: &[(i64, ArticleIdx, bool)], article: ArticleIdx, t: i64, logic: PopularityLogic, metric: PopularityMetric) -> f64 {
    let w = t.div_euclid(H) - 1;
    let clicks_in = |b: i64| events.iter().filter(|e| e.1 == article && e.2 && e.0.div_euclid(H) == b).count() as i64;
    let views_in = |b: i64| events.iter().filter(|e| e.1 == article && e.0.div_euclid(H) == b).count() as i64;
    let ratio = |c: i64, v: i64| if v == 0 { 0.0 } else { c as f64 / v as f64 };
    let first = events.iter().map(|e| e.0.div_euclid(H)).min().unwrap_or(0);
    match (logic, metric) {
        (PopularityLogic::Acc, PopularityMetric::Clicks) => (first..=w).map(clicks_in).sum::<i64>() as f64,
        (PopularityLogic::Acc, PopularityMetric::ClickRatio) => {
            ratio((first..=w).map(clicks_in).sum(), (first..=w).map(views_in).sum())
        }
        (PopularityLogic::Acc, PopularityMetric::ClickVariation) => {
            (first..=w).map(|j| (clicks_in(j) - clicks_in(j - 1)).abs()).sum::<i64>() as f64
        }
        (PopularityLogic::Ptb, PopularityMetric::Clicks) => clicks_in(w) as f64,
        (PopularityLogic::Ptb, PopularityMetric::ClickRatio) => ratio(clicks_in(w), views_in(w)),
        (PopularityLogic::Ptb, PopularityMetric::ClickVariation) => (clicks_in(w) - clicks_in(w - 1)) as f64,
    }
}

fn all_modes() -> impl Iterator<Item = (PopularityLogic, PopularityMetric)> {
    PopularityLogic::ALL
        .into_iter()
        .flat_map(|l| PopularityMetric::ALL.into_iter().map(move |m| (l, m)))
}

fn one(id: &str, ts: i64, candidates: &[(ArticleIdx, bool)]) -> Impression {
    Impression {
        impression_id: id.to_owned(),
        user_id: "u".to_owned(),
        timestamp: ts,
        history: Vec::new(),
        candidates: candidates.iter().map(|&(article, clicked)| Candidate { article, clicked }).collect(),
    }
}

#[test]
fn single_click_and_single_view() {
    let catalog = common::catalog(2, 1, false);
    let (n1, n2) = (ArticleIdx(0), ArticleIdx(1));
    let index = build_index(&[one("i", 5 * H + 10, &[(n1, true), (n2, false)])], &catalog, BucketSpec::default());
    assert_eq!(index.cell(n1, 5), Cell { clicks: 1, views: 1 });
    assert_eq!(index.cell(n2, 5), Cell { clicks: 0, views: 1 });
    for logic in PopularityLogic::ALL {
        assert_eq!(index.stat_value(n2, 6 * H, logic, PopularityMetric::ClickRatio), 0.0);
        assert_eq!(index.stat_value(n1, 6 * H, logic, PopularityMetric::ClickRatio), 1.0);
    }
    // The open bucket is invisible.
    assert_eq!(index.stat_value(n1, 5 * H + 20, PopularityLogic::Acc, PopularityMetric::Clicks), 0.0);
}

#[test]
fn three_then_five_clicks() {
    let catalog = common::catalog(1, 1, false);
    let a = ArticleIdx(0);
    let mut imps = Vec::new();
    for (bucket, n) in [(0i64, 3), (1, 5)] {
        for i in 0..n {
            imps.push(one(&format!("{bucket}-{i}"), bucket * H + i, &[(a, true)]));
        }
    }
    let index = build_index(&imps, &catalog, BucketSpec::default());
    let at = 2 * H;
    assert_eq!(index.stat_value(a, at, PopularityLogic::Acc, PopularityMetric::Clicks), 8.0);
    assert_eq!(index.stat_value(a, at, PopularityLogic::Ptb, PopularityMetric::Clicks), 5.0);
    assert_eq!(index.stat_value(a, at, PopularityLogic::Ptb, PopularityMetric::ClickVariation), 2.0);
}

#[test]
fn zero_views_give_zero_ratio() {
    let catalog = common::catalog(3, 1, false);
    let index = build_index(&[one("i", 0, &[(ArticleIdx(0), true)])], &catalog, BucketSpec::default());
    for logic in PopularityLogic::ALL {
        assert_eq!(index.stat_value(ArticleIdx(2), 10 * H, logic, PopularityMetric::ClickRatio), 0.0);
    }
}

#[test]
fn worked_example_leaders() {
    let ids = ["n12", "n19", "n45", "n70", "n90", "n125", "n174"];
    let catalog = Catalog::from_articles(ids.iter().map(|id| NewsArticle::new(*id, "news")).collect()).unwrap();
    let id = |s: &str| catalog.lookup(s).unwrap();
    // 17 January 2017, 09:00 UTC.
    let t17 = 1_484_643_600;
    let mut imps = Vec::new();
    let clicks = [("n19", 9), ("n70", 7), ("n12", 2), ("n45", 1)];
    for (art, n) in clicks {
        for i in 0..n {
            let ts = t17 - 60 * (i + 1);
            imps.push(one(&format!("{art}-{i}"), ts, &[(id(art), true), (id("n90"), false)]));
        }
    }
    let index = build_index(&imps, &catalog, BucketSpec::default());
    for logic in PopularityLogic::ALL {
        let top = index.top_popk(t17, 2, logic, PopularityMetric::Clicks, &HashSet::new());
        assert_eq!(top, vec![id("n19"), id("n70")], "{logic}");
    }
}

#[test]
fn single_qualifier_returns_short_list() {
    let catalog = common::catalog(4, 2, false);
    let imp = one("i", 3 * H, &[(ArticleIdx(1), true), (ArticleIdx(2), false), (ArticleIdx(3), false)]);
    let index = build_index(&[imp], &catalog, BucketSpec::default());
    let top = index.top_popk(4 * H, 3, PopularityLogic::Acc, PopularityMetric::Clicks, &HashSet::new());
    assert_eq!(top, vec![ArticleIdx(1)]);
}

#[test]
fn two_thousand_impressions_match_full_scan_tally() {
    let mut rng = ChaCha8Rng::seed_from_u64(2000);
    let catalog = common::catalog(60, 5, true);
    let imps = common::impressions(&mut rng, 60, 2000, 48);
    let spec = BucketSpec::default();

    let mut oracle: HashMap<(i64, ArticleIdx), (u64, u64)> = HashMap::new();
    for imp in &imps {
        for c in &imp.candidates {
            let e = oracle.entry((imp.timestamp / H, c.article)).or_default();
            e.0 += u64::from(c.clicked);
            e.1 += 1;
        }
    }
    let stats = BucketStats::tally(&imps, &spec);
    let index = build_index(&imps, &catalog, spec);
    assert_eq!(stats.len(), oracle.len());
    for b in -1..50 {
        for a in catalog.indices() {
            let (clicks, views) = oracle.get(&(b, a)).copied().unwrap_or_default();
            let want = Cell { clicks, views };
            assert_eq!(stats.get(b, a), want);
            assert_eq!(index.cell(a, b), want);
            assert!(want.clicks <= want.views);
        }
    }
    #[cfg(feature = "parallel")]
    assert_eq!(BucketStats::tally_parallel(&imps, &spec), stats);

    let mut sharded = BucketStats::tally(&imps[..700], &spec);
    sharded.merge(BucketStats::tally(&imps[700..], &spec));
    assert_eq!(sharded, stats);
}

#[test]
fn snapshot_rows_are_bucket_then_id_ordered() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let catalog = common::catalog(30, 3, true);
    let imps = common::impressions(&mut rng, 30, 300, 6);
    let stats = BucketStats::tally(&imps, &BucketSpec::default());
    let tsv = stats.to_tsv(&catalog);
    let keys: Vec<(i64, String)> = tsv
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            assert_eq!(f.len(), 4);
            (f[0].parse().unwrap(), f[1].to_owned())
        })
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert_eq!(keys.len(), stats.len());
}

#[test]
fn hundred_random_queries_match_event_replay() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let catalog = common::catalog(40, 4, true);
    let imps = common::impressions(&mut rng, 40, 600, 10);
    let ev = events(&imps);
    let index = build_index(&imps, &catalog, BucketSpec::default());
    let modes: Vec<_> = all_modes().collect();
    for _ in 0..100 {
        let a = ArticleIdx(rng.random_range(0..40));
        let t = rng.random_range(0..14 * H);
        let (logic, metric) = modes[rng.random_range(0..modes.len())];
        assert_eq!(index.stat_value(a, t, logic, metric), replay(&ev, a, t, logic, metric), "{a:?} t={t} {logic}/{metric}");
    }
    // And every mode at every bucket for a couple of articles, past the end included.
    for a in [ArticleIdx(0), ArticleIdx(17)] {
        for b in 0..14 {
            for (logic, metric) in all_modes() {
                assert_eq!(index.stat_value(a, b * H + 1, logic, metric), replay(&ev, a, b * H + 1, logic, metric));
            }
        }
    }
}

fn full_sort(
    catalog: &Catalog,
    ev: &[(i64, ArticleIdx, bool)],
    t: i64,
    popk: usize,
    logic: PopularityLogic,
    metric: PopularityMetric,
    exclude: &HashSet<ArticleIdx>,
) -> Vec<ArticleIdx> {
    let mut scored: Vec<(f64, &str, ArticleIdx)> = catalog
        .indices()
        .filter(|a| !exclude.contains(a))
        .map(|a| (replay(ev, a, t, logic, metric), catalog.id(a), a))
        .filter(|s| s.0 > 0.0)
        .collect();
    scored.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(y.1)));
    scored.into_iter().take(popk).map(|s| s.2).collect()
}

#[test]
fn hundred_top_popk_queries_match_full_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let catalog = common::catalog(50, 5, true);
    let imps = common::impressions(&mut rng, 50, 400, 10);
    let ev = events(&imps);
    let index = build_index(&imps, &catalog, BucketSpec::default());
    let modes: Vec<_> = all_modes().collect();
    for _ in 0..100 {
        let t = rng.random_range(0..12 * H);
        let popk = rng.random_range(0..8);
        let (logic, metric) = modes[rng.random_range(0..modes.len())];
        let exclude: HashSet<ArticleIdx> = (0..rng.random_range(0..6)).map(|_| ArticleIdx(rng.random_range(0..50))).collect();
        let got = index.top_popk(t, popk, logic, metric, &exclude);
        assert_eq!(got, full_sort(&catalog, &ev, t, popk, logic, metric, &exclude), "t={t} {logic}/{metric}");
        let ranked: Vec<ArticleIdx> = index
            .ranking(t, logic, metric)
            .into_iter()
            .map(|(a, _)| a)
            .filter(|a| !exclude.contains(a))
            .take(popk)
            .collect();
        assert_eq!(got, ranked);
    }
}

fn small_log() -> impl Strategy<Value = Vec<(i64, u32, bool)>> {
    proptest::collection::vec((0i64..12 * H, 0u32..8, any::<bool>()), 1..120)
}

fn log_to_impressions(log: &[(i64, u32, bool)]) -> Vec<Impression> {
    log.iter()
        .enumerate()
        .map(|(i, &(ts, a, c))| one(&format!("e{i}"), ts, &[(ArticleIdx(a), c)]))
        .collect()
}

proptest! {
    #[test]
    fn acc_minus_previous_acc_is_ptb(log in small_log(), a in 0u32..8, b in 0i64..14) {
        let catalog = common::catalog(8, 2, true);
        let index = build_index(&log_to_impressions(&log), &catalog, BucketSpec::default());
        let a = ArticleIdx(a);
        let acc = |bucket: i64| index.stat_value(a, (bucket + 1) * H, PopularityLogic::Acc, PopularityMetric::Clicks);
        let ptb = index.stat_value(a, (b + 1) * H, PopularityLogic::Ptb, PopularityMetric::Clicks);
        prop_assert_eq!(acc(b) - acc(b - 1), ptb);
    }

    #[test]
    fn later_events_never_change_earlier_queries(log in small_log(), later in small_log(), t in 0i64..12 * H) {
        let catalog = common::catalog(8, 2, true);
        let before = build_index(&log_to_impressions(&log), &catalog, BucketSpec::default());
        let mut extended = log.clone();
        extended.extend(later.iter().map(|&(dt, a, c)| (t + dt, a, c)));
        let after = build_index(&log_to_impressions(&extended), &catalog, BucketSpec::default());
        for (logic, metric) in all_modes() {
            for a in catalog.indices() {
                prop_assert_eq!(before.stat_value(a, t, logic, metric), after.stat_value(a, t, logic, metric));
            }
            prop_assert_eq!(
                before.top_popk(t, 5, logic, metric, &HashSet::new()),
                after.top_popk(t, 5, logic, metric, &HashSet::new())
            );
        }
    }

    #[test]
    fn top_popk_is_distinct_disjoint_and_sorted(
        log in small_log(), t in 0i64..14 * H, popk in 0usize..10,
        excluded in proptest::collection::hash_set(0u32..8, 0..4),
    ) {
        let catalog = common::catalog(8, 2, true);
        let index = build_index(&log_to_impressions(&log), &catalog, BucketSpec::default());
        let exclude: HashSet<ArticleIdx> = excluded.into_iter().map(ArticleIdx).collect();
        for (logic, metric) in all_modes() {
            let top = index.top_popk(t, popk, logic, metric, &exclude);
            prop_assert!(top.len() <= popk);
            let distinct: HashSet<_> = top.iter().collect();
            prop_assert_eq!(distinct.len(), top.len());
            for pair in top.windows(2) {
                let (x, y) = (index.stat_value(pair[0], t, logic, metric), index.stat_value(pair[1], t, logic, metric));
                prop_assert!(x > y || (x == y && catalog.id(pair[0]) < catalog.id(pair[1])));
            }
            for a in &top {
                prop_assert!(!exclude.contains(a));
                prop_assert!(index.stat_value(*a, t, logic, metric) > 0.0);
            }
        }
    }

    #[test]
    fn accumulated_clicks_never_decrease(log in small_log(), a in 0u32..8, t1 in 0i64..14 * H, t2 in 0i64..14 * H) {
        let catalog = common::catalog(8, 2, true);
        let index = build_index(&log_to_impressions(&log), &catalog, BucketSpec::default());
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let v = |t| index.stat_value(ArticleIdx(a), t, PopularityLogic::Acc, PopularityMetric::Clicks);
        prop_assert!(v(lo) <= v(hi));
        prop_assert_eq!(bucket_of(lo, index.spec()) <= bucket_of(hi, index.spec()), true);
    }
}

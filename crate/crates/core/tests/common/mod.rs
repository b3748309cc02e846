#![allow(dead_code)]

use popk::corpus::Candidate;
use popk::{ArticleIdx, Catalog, Impression, NewsArticle};
use rand::Rng;

/// Ids are zero-padded so that id order equals index order only when
/// `shuffle_ids` is false.
pub fn catalog(n: usize, n_categories: usize, shuffle_ids: bool) -> Catalog {
    let articles = (0..n)
        .map(|i| {
            let id = if shuffle_ids {
                format!("a{}", (i * 7919) % 10_007)
            } else {
                format!("a{i:05}")
            };
            NewsArticle::new(id, format!("c{}", i % n_categories))
        })
        .collect();
    Catalog::from_articles(articles).unwrap()
}

/// Random impressions with distinct candidates, timestamps in
/// `[0, n_buckets * 3600)` and at least one click each.
pub fn impressions<R: Rng>(rng: &mut R, n_articles: usize, n: usize, n_buckets: i64) -> Vec<Impression> {
    (0..n)
        .map(|i| {
            let len = rng.random_range(2..=n_articles.min(8));
            let picks = rand::seq::index::sample(rng, n_articles, len);
            let mut candidates: Vec<Candidate> = picks
                .iter()
                .map(|a| Candidate {
                    article: ArticleIdx(a as u32),
                    clicked: rng.random_bool(0.25),
                })
                .collect();
            if !candidates.iter().any(|c| c.clicked) {
                candidates[0].clicked = true;
            }
            let history = (0..rng.random_range(0..6))
                .map(|_| ArticleIdx(rng.random_range(0..n_articles) as u32))
                .collect();
            Impression {
                impression_id: format!("imp{i}"),
                user_id: format!("u{}", rng.random_range(0..20)),
                timestamp: rng.random_range(0..n_buckets * 3600),
                history,
                candidates,
            }
        })
        .collect()
}

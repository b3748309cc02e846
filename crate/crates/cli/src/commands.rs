use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;

use popk::corpus::{
    behaviors_to_tsv, category_histogram, format_timestamp, news_to_tsv, parse_behaviors, parse_news, Behaviors,
    SplitSummary,
};
use popk::eval::{category_frequency_tsv, most_clicked};
use popk::model::{train, Checkpoint, TrainReport};
use popk::popindex::BucketStats;
use popk::sampler::{epoch_samples, samples_to_tsv, RankingCache};
use popk::{build_index, evaluate, generate_corpus, ArticleIdx, Catalog, EvalReport, PopularityIndex, SamplerConfig};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SubSeeds};
use crate::error::CliError;

/// A resolved config plus the values every output repeats.
pub struct Context {
    pub config: RunConfig,
    pub seeds: SubSeeds,
    pub fingerprint: String,
}

impl Context {
    pub fn new(mut config: RunConfig) -> Result<Self, CliError> {
        let seeds = config.resolve_seeds();
        config.validate()?;
        let fingerprint = config.fingerprint();
        // Unset inputs fall back to the files `synth` writes, after
        // fingerprinting so the output dir stays out of the hash.
        let dir = config.paths.out_dir.clone();
        let p = &mut config.paths;
        for (slot, name) in [(&mut p.news, "news.tsv"), (&mut p.train, "train.tsv"), (&mut p.test, "test.tsv")] {
            slot.get_or_insert_with(|| dir.join(name));
        }
        Ok(Self {
            config,
            seeds,
            fingerprint,
        })
    }

    /// Comment lines opening every text output.
    pub fn header(&self) -> String {
        format!(
            "# config_fingerprint={}\n# seeds seed={} sampler={} model={} synth={}\n",
            self.fingerprint, self.config.seed, self.seeds.sampler, self.seeds.model, self.seeds.synth
        )
    }

    fn write(&self, name: &str, body: &str) -> Result<(), CliError> {
        let dir = &self.config.paths.out_dir;
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(name);
        fs::write(&path, format!("{}{body}", self.header())).map_err(|e| CliError::io(&path, e))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let dir = &self.config.paths.out_dir;
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(name);
        let text = serde_json::to_string_pretty(value).expect("outputs serialize");
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }

    fn news(&self) -> Result<Catalog, CliError> {
        Ok(parse_news(self.config.require(&self.config.paths.news, "news")?)?)
    }

    fn split(&self, catalog: &Catalog, name: &str) -> Result<Behaviors, CliError> {
        let p = &self.config.paths;
        let path = match name {
            "train" => &p.train,
            "val" => &p.val,
            _ => &p.test,
        };
        Ok(parse_behaviors(self.config.require(path, name)?, catalog)?)
    }
}

pub fn ingest(ctx: &Context) -> Result<String, CliError> {
    let catalog = ctx.news()?;
    let p = &ctx.config.paths;
    let mut out = ctx.header();
    let _ = writeln!(out, "articles\t{}", catalog.len());
    let _ = writeln!(out, "categories\t{}", catalog.category_count());
    let _ = writeln!(out, "split\timpr / users\tfirst\tlast\tdropped_history_ids");
    let mut any = false;
    for (name, path) in [("train", &p.train), ("val", &p.val), ("test", &p.test)] {
        let Some(path) = path else { continue };
        any = true;
        let summary = SplitSummary::of(&parse_behaviors(path, &catalog)?);
        let when = |t: Option<i64>| t.map(format_timestamp).unwrap_or_else(|| "-".to_owned());
        let _ = writeln!(
            out,
            "{name}\t{summary}\t{}\t{}\t{}",
            when(summary.first_timestamp),
            when(summary.last_timestamp),
            summary.dropped_history_ids
        );
    }
    if !any {
        return Err(CliError::Validation("config names no behaviors split".into()));
    }
    let _ = writeln!(out, "category\tarticles");
    for (category, n) in category_histogram(&catalog) {
        let _ = writeln!(out, "{category}\t{n}");
    }
    Ok(out)
}

pub fn index(ctx: &Context) -> Result<String, CliError> {
    let catalog = ctx.news()?;
    let train = ctx.split(&catalog, "train")?;
    let stats = BucketStats::tally(&train.impressions, &ctx.config.bucket);
    ctx.write("index.tsv", &format!("bucket\tarticle_id\tclicks\tviews\n{}", stats.to_tsv(&catalog)))?;

    let index = PopularityIndex::from_stats(&stats, &catalog, ctx.config.bucket);
    let mut out = ctx.header();
    let _ = writeln!(out, "cells\t{}", stats.len());
    if let Some((first, last)) = index.bucket_range() {
        let _ = writeln!(out, "buckets\t{first}..={last}");
        let s = &ctx.config.sampler;
        let after = index.spec().bucket_start(last + 1);
        let top = index.top_popk(after, s.popk.max(5), s.logic, s.metric, &HashSet::new());
        let ids: Vec<&str> = top.iter().map(|&a| catalog.id(a)).collect();
        let _ = writeln!(out, "top_{}_{}_after_log\t{}", s.logic, s.metric, ids.join(" "));
    }
    Ok(out)
}

pub fn synth(ctx: &Context) -> Result<String, CliError> {
    let corpus = generate_corpus(&ctx.config.synth)?;
    let (train, test) = corpus.split(ctx.config.synth_train_fraction);
    ctx.write("news.tsv", &news_to_tsv(&corpus.catalog))?;
    ctx.write("train.tsv", &behaviors_to_tsv(train, &corpus.catalog))?;
    ctx.write("test.tsv", &behaviors_to_tsv(test, &corpus.catalog))?;
    ctx.write("truth.tsv", &corpus.truth.to_tsv())?;
    let mut out = ctx.header();
    let _ = writeln!(out, "articles\t{}", corpus.catalog.len());
    let _ = writeln!(out, "train\t{}", train.len());
    let _ = writeln!(out, "test\t{}", test.len());
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub config_fingerprint: String,
    pub sampler: SamplerConfig,
    pub checkpoint: Checkpoint,
}

fn fit(ctx: &Context, catalog: &Catalog, train_imps: &Behaviors, sampler: &SamplerConfig, cache: &RankingCache) -> Result<(Checkpoint, TrainReport), CliError> {
    let model = &ctx.config.model;
    let mut params = model.init_params(catalog.len());
    let report = train(&mut params, &train_imps.impressions, cache, sampler, model)?;
    Ok((Checkpoint::new(params, catalog, model.max_history), report))
}

pub fn train_cmd(ctx: &Context, dump_samples: bool) -> Result<String, CliError> {
    let catalog = ctx.news()?;
    let train_imps = ctx.split(&catalog, "train")?;
    let index = build_index(&train_imps.impressions, &catalog, ctx.config.bucket);
    let cache = RankingCache::new(&index);
    let sampler = ctx.config.sampler;
    if dump_samples {
        let drawn = epoch_samples(&train_imps.impressions, &cache, &sampler, 0)?;
        ctx.write("samples.tsv", &samples_to_tsv(&drawn.samples, &catalog))?;
    }
    let (checkpoint, report) = fit(ctx, &catalog, &train_imps, &sampler, &cache)?;

    let mut log = String::from("epoch\tloss\trunning_loss\tsamples\n");
    for (e, ((loss, running), n)) in report
        .epoch_loss
        .iter()
        .zip(&report.running_loss)
        .zip(&report.samples_per_epoch)
        .enumerate()
    {
        let _ = writeln!(log, "{}\t{loss:.6}\t{running:.6}\t{n}", e + 1);
    }
    ctx.write("train_log.tsv", &log)?;
    let path = ctx.config.model_path();
    let file = ModelFile {
        config_fingerprint: ctx.fingerprint.clone(),
        sampler,
        checkpoint,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(&path, serde_json::to_string(&file).expect("model serializes")).map_err(|e| CliError::io(&path, e))?;

    let mut out = ctx.header();
    out.push_str(&log);
    let _ = writeln!(
        out,
        "skipped\tno_positive={}\tno_negatives={}",
        report.skipped_no_positive, report.skipped_no_negatives
    );
    Ok(out)
}

fn popular_set(ctx: &Context, catalog: &Catalog) -> Result<Option<HashSet<ArticleIdx>>, CliError> {
    match &ctx.config.paths.train {
        Some(path) => {
            let train = parse_behaviors(path, catalog)?;
            Ok(Some(most_clicked(&train.impressions, catalog, ctx.config.popular_fraction)))
        }
        None => Ok(None),
    }
}

#[derive(Serialize)]
struct ReportFile<'a> {
    config_fingerprint: &'a str,
    config: &'a RunConfig,
    report: &'a EvalReport,
}

pub fn eval_cmd(ctx: &Context) -> Result<String, CliError> {
    let catalog = ctx.news()?;
    let test = ctx.split(&catalog, "test")?;
    let path = ctx.config.model_path();
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let checkpoint = Checkpoint::from_json(&serde_json::to_string(&file.checkpoint).expect("checkpoint serializes"))?;
    let params = checkpoint.params_for(&catalog);
    let popular = popular_set(ctx, &catalog)?;
    let ks = &ctx.config.eval_ks;
    let report = evaluate(&params, &test.impressions, &catalog, ks, checkpoint.max_history, popular.as_ref())?;
    if report.skipped_no_positive == report.n_impressions {
        return Err(CliError::Validation("no test impression has a positive candidate".into()));
    }

    ctx.write_json(
        "report.json",
        &ReportFile {
            config_fingerprint: &ctx.fingerprint,
            config: &ctx.config,
            report: &report,
        },
    )?;
    for (k, freqs) in &report.category_freq {
        ctx.write(&format!("category_freq_at_{k}.tsv"), &category_frequency_tsv(freqs))?;
    }

    let mut out = ctx.header();
    let _ = writeln!(out, "model_fingerprint\t{}", file.config_fingerprint);
    let _ = writeln!(out, "impressions\t{}", report.n_impressions);
    let _ = writeln!(out, "auc\t{:.6}", report.auc);
    let _ = writeln!(out, "mrr\t{:.6}", report.mrr);
    for &k in ks {
        let _ = writeln!(out, "ndcg@{k}\t{:.6}", report.ndcg_at(k));
        let _ = writeln!(out, "dctg@{k}\t{:.6}", report.dctg_at(k));
        if let Some(share) = report.popular_share.get(&k) {
            let _ = writeln!(out, "popular_share@{k}\t{share:.6}");
        }
    }
    let _ = writeln!(out, "skipped\tauc={}\tno_positive={}", report.skipped_auc, report.skipped_no_positive);
    Ok(out)
}

struct Cell {
    variant: String,
    sampler: SamplerConfig,
}

/// Baseline (popk = 0) first, then every logic x metric x popk > 0 cell.
fn sweep_cells(config: &RunConfig) -> Vec<Cell> {
    let base = SamplerConfig { popk: 0, ..config.sampler };
    let mut cells = vec![Cell { variant: "original".into(), sampler: base }];
    for &logic in &config.sweep.logics {
        for &metric in &config.sweep.metrics {
            for &popk in config.sweep.popk.iter().filter(|&&p| p > 0) {
                cells.push(Cell {
                    variant: format!("popk_{logic}_{metric}_{popk}"),
                    sampler: SamplerConfig { popk, logic, metric, ..base },
                });
            }
        }
    }
    cells
}

fn metric_row(report: &EvalReport, ks: &[usize]) -> Vec<f64> {
    let mut row = vec![report.auc, report.mrr];
    row.extend(ks.iter().map(|&k| report.ndcg_at(k)));
    row.extend(ks.iter().map(|&k| report.dctg_at(k)));
    row
}

/// Signed percent change of the best variant over the baseline.
fn increase(base: f64, best: Option<f64>) -> String {
    match best {
        None => "+0.00%".into(),
        Some(_) if base == 0.0 => "n/a".into(),
        Some(best) => format!("{:+.2}%", (best - base) / base * 100.0),
    }
}

pub fn sweep(ctx: &Context) -> Result<String, CliError> {
    let catalog = ctx.news()?;
    let train_imps = ctx.split(&catalog, "train")?;
    let test = ctx.split(&catalog, "test")?;
    let index = build_index(&train_imps.impressions, &catalog, ctx.config.bucket);
    let cache = RankingCache::new(&index);
    let cells = sweep_cells(&ctx.config);
    let ks = &ctx.config.eval_ks;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.config.jobs)
        .build()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let reports: Vec<Result<EvalReport, CliError>> = pool.install(|| {
        use rayon::prelude::*;
        cells
            .par_iter()
            .map(|cell| {
                let (checkpoint, _) = fit(ctx, &catalog, &train_imps, &cell.sampler, &cache)?;
                Ok(evaluate(&checkpoint.params, &test.impressions, &catalog, ks, checkpoint.max_history, None)?)
            })
            .collect()
    });

    let mut table = String::from("variant\tlogic\tmetric\tpopk\tauc\tmrr");
    for k in ks {
        let _ = write!(table, "\tndcg@{k}");
    }
    for k in ks {
        let _ = write!(table, "\tdctg@{k}");
    }
    table.push('\n');
    let mut rows = Vec::with_capacity(cells.len());
    for (cell, report) in cells.iter().zip(reports) {
        let row = metric_row(&report?, ks);
        let (logic, metric) = if cell.sampler.popk == 0 {
            ("-".to_owned(), "-".to_owned())
        } else {
            (cell.sampler.logic.to_string(), cell.sampler.metric.to_string())
        };
        let _ = write!(table, "{}\t{logic}\t{metric}\t{}", cell.variant, cell.sampler.popk);
        for v in &row {
            let _ = write!(table, "\t{v:.4}");
        }
        table.push('\n');
        rows.push(row);
    }
    let _ = write!(table, "increase_vs_original\t-\t-\t-");
    for col in 0..rows[0].len() {
        let best = rows[1..].iter().map(|r| r[col]).max_by(f64::total_cmp);
        let _ = write!(table, "\t{}", increase(rows[0][col], best));
    }
    table.push('\n');

    ctx.write("sweep.tsv", &table)?;
    Ok(format!("{}{table}", ctx.header()))
}

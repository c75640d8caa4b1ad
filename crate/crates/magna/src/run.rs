//! One function per command. Each validates its inputs, runs, and writes
//! its artifacts under the output directory.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use magna_core::analysis::{attention_discrepancy, spectrum_report, DiscrepancyReport, SpectrumReport};
use magna_core::net::NetworkConfig;
use magna_core::tasks::RankingMetrics;
use magna_core::trainer::{
    evaluate_kg, kg_graph, node_graph, rank_trials, sample_trials, train_kg, train_node_classifier, SearchSpace,
    TrainReport, Trained, TrialResult,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{read_json, RunConfig, TaskKind};
use crate::data::{load_edge_list, load_kg_dataset, load_node_dataset, uniform_attention, KgData};
use crate::error::{Error, Result};
use crate::output::{
    create_dir, num, opt, write_csv, write_json, write_text, Metrics, CHECKPOINT_FILE, CONFIG_FILE, HISTORY_FILE,
    METRICS_FILE, REPORT_FILE,
};

/// A finished training run and the metrics it wrote.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trained: Trained,
    pub metrics: Metrics,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    task: TaskKind,
    seed: u64,
    report: &'a TrainReport,
}

#[derive(Serialize)]
struct RankingFile {
    seed: u64,
    valid: RankingMetrics,
    test: RankingMetrics,
}

/// Trains on `cfg.data` in memory, without writing anything.
pub fn fit(cfg: &RunConfig) -> Result<Trained> {
    let started = Instant::now();
    let mut trained = match cfg.task {
        TaskKind::Node => {
            let data = load_node_dataset(&cfg.data)?;
            train_node_classifier(&data, cfg.network.clone(), &cfg.train)?
        }
        TaskKind::Kg => {
            let kg = load_kg_dataset(&cfg.data, cfg.kg_strict)?;
            train_kg(&kg.dataset, cfg.network.clone(), &cfg.train)?
        }
        TaskKind::Analyze => return Err(Error::Config("analyze runs do not train".into())),
    };
    trained.report.wall_seconds = Some(started.elapsed().as_secs_f64());
    Ok(trained)
}

fn metrics_of(cfg: &RunConfig, report: &TrainReport) -> Metrics {
    Metrics {
        task: cfg.task,
        seed: cfg.seed,
        best_epoch: report.best_epoch,
        val_metric: report.best_val,
        test_metric: report.test_metric,
        wall_seconds: None,
    }
}

/// Writes config snapshot, checkpoint, metrics, report and history of a
/// finished run into `out`.
pub fn write_run(cfg: &RunConfig, trained: &Trained, out: &Path) -> Result<Metrics> {
    create_dir(out)?;
    write_text(&out.join(CONFIG_FILE), &(cfg.snapshot() + "\n"))?;
    Checkpoint::new(cfg.task, cfg.seed, &trained.network, &trained.params).save(out.join(CHECKPOINT_FILE))?;
    let r = &trained.report;
    let metrics = metrics_of(cfg, r);
    write_json(&out.join(METRICS_FILE), &metrics)?;
    write_json(
        &out.join(REPORT_FILE),
        &ReportFile {
            task: cfg.task,
            seed: cfg.seed,
            report: r,
        },
    )?;
    write_csv(
        &out.join(HISTORY_FILE),
        cfg.seed,
        &["epoch", "train_loss", "val_metric"],
        r.train_loss
            .iter()
            .zip(&r.val_metric)
            .enumerate()
            .map(|(i, (l, v))| [(i + 1).to_string(), num(*l), num(*v)]),
    )?;
    if let Some(t) = &r.test_ranking {
        write_ranking_csv(&out.join("test_ranking.csv"), cfg.seed, &[("test", t)])?;
    }
    Ok(metrics)
}

/// `train-node` / `train-kg`: trains per `cfg` and writes into `cfg.out`.
pub fn train(cfg: &RunConfig) -> Result<RunOutput> {
    let trained = fit(cfg)?;
    let metrics = write_run(cfg, &trained, &cfg.out)?;
    Ok(RunOutput { trained, metrics })
}

fn write_ranking_csv(path: &Path, seed: u64, rows: &[(&str, &RankingMetrics)]) -> Result<()> {
    write_csv(
        path,
        seed,
        &["split", "mr", "mrr", "hits1", "hits3", "hits10"],
        rows.iter().map(|(name, m)| {
            [
                name.to_string(),
                num(m.mr),
                num(m.mrr),
                num(m.hits1),
                num(m.hits3),
                num(m.hits10),
            ]
        }),
    )
}

fn load_checkpoint(path: &Path, want: TaskKind) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.task != want {
        return Err(Error::Checkpoint(format!(
            "{} holds a {} model, expected {}",
            path.display(),
            ckpt.task.name(),
            want.name()
        )));
    }
    Ok(ckpt)
}

/// `eval-kg`: filtered ranking metrics of a checkpoint on the validation
/// and test triples.
pub fn eval_kg(data: &Path, checkpoint: &Path, out: &Path, strict: bool) -> Result<(RankingMetrics, RankingMetrics)> {
    let ckpt = load_checkpoint(checkpoint, TaskKind::Kg)?;
    let kg = load_kg_dataset(data, strict)?;
    let (net, params) = ckpt.restore()?;
    check_kg_layout(&ckpt, &kg)?;
    let (valid, _) = evaluate_kg(&net, &params, &kg.dataset, &kg.dataset.valid)?;
    let (test, _) = evaluate_kg(&net, &params, &kg.dataset, &kg.dataset.test)?;
    create_dir(out)?;
    write_json(
        &out.join("ranking.json"),
        &RankingFile {
            seed: ckpt.seed,
            valid,
            test,
        },
    )?;
    write_ranking_csv(
        &out.join("ranking.csv"),
        ckpt.seed,
        &[("valid", &valid), ("test", &test)],
    )?;
    Ok((valid, test))
}

fn check_kg_layout(ckpt: &Checkpoint, kg: &KgData) -> Result<()> {
    let want = magna_core::trainer::kg_model_spec(&kg.dataset, ckpt.spec.network.clone());
    if want != ckpt.spec {
        return Err(Error::Checkpoint("model layout does not match the dataset".into()));
    }
    Ok(())
}

/// Result row of one search trial; failed trials keep their error.
#[derive(Debug, Clone)]
pub struct SearchRow {
    pub result: TrialResult,
    pub error: Option<String>,
}

/// `search`: `trials` random configurations trained on up to `jobs`
/// threads, ranked by validation metric.
pub fn search(base: &RunConfig, space: &SearchSpace, trials: usize, jobs: usize, out: &Path) -> Result<Vec<SearchRow>> {
    if trials == 0 || jobs == 0 {
        return Err(Error::Config("--trials and --jobs must be at least 1".into()));
    }
    let sampled = sample_trials(space, &base.network, &base.train, trials, base.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let finished: Vec<(TrialResult, Option<String>)> = pool.install(|| {
        sampled
            .into_par_iter()
            .map(|trial| {
                let cfg = RunConfig {
                    network: trial.network.clone(),
                    train: trial.train.clone(),
                    ..base.clone()
                };
                match fit(&cfg) {
                    Ok(t) => (
                        TrialResult {
                            trial,
                            val_metric: t.report.best_val,
                            test_metric: t.report.test_metric,
                        },
                        None,
                    ),
                    Err(e) => (
                        TrialResult {
                            trial,
                            val_metric: f64::NEG_INFINITY,
                            test_metric: None,
                        },
                        Some(e.to_string()),
                    ),
                }
            })
            .collect()
    });
    let errors: BTreeMap<usize, String> = finished
        .iter()
        .filter_map(|(r, e)| e.clone().map(|e| (r.trial.index, e)))
        .collect();
    let ranked = rank_trials(finished.into_iter().map(|(r, _)| r).collect());
    let rows: Vec<SearchRow> = ranked
        .into_iter()
        .map(|result| SearchRow {
            error: errors.get(&result.trial.index).cloned(),
            result,
        })
        .collect();

    create_dir(out)?;
    write_text(&out.join(CONFIG_FILE), &(base.snapshot() + "\n"))?;
    write_json(&out.join("space.json"), space)?;
    let names: Vec<&str> = space.params.keys().map(String::as_str).collect();
    let mut header = vec!["rank", "trial", "val_metric", "test_metric", "status"];
    header.extend(&names);
    write_csv(
        &out.join("trials.csv"),
        base.seed,
        &header,
        rows.iter().enumerate().map(|(rank, row)| {
            let r = &row.result;
            let mut cells = vec![
                (rank + 1).to_string(),
                r.trial.index.to_string(),
                if row.error.is_some() {
                    String::new()
                } else {
                    num(r.val_metric)
                },
                opt(r.test_metric),
                row.error.clone().unwrap_or_else(|| "ok".into()),
            ];
            cells.extend(names.iter().map(|n| num(r.trial.values[*n])));
            cells
        }),
    )?;
    Ok(rows)
}

/// Reads a search space file.
pub fn read_space(path: &Path) -> Result<SearchSpace> {
    let space: SearchSpace = serde_json::from_value(read_json(path)?).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    space.validate()?;
    Ok(space)
}

/// `analyze spectrum`: eigenvalues of the uniform attention of an edge
/// list and of its diffusion, next to the closed forms.
pub fn analyze_spectrum(graph: &Path, alpha: f64, out: &Path, seed: u64) -> Result<SpectrumReport> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!("alpha must be in (0, 1], got {alpha}")));
    }
    let g = load_edge_list(graph)?;
    if let Some(i) = g.isolated_nodes().next() {
        return Err(Error::Config(format!("node {i} has no edges")));
    }
    let report = spectrum_report(&uniform_attention(&g)?, alpha)?;
    create_dir(out)?;
    write_csv(
        &out.join("spectrum.csv"),
        seed,
        &[
            "alpha",
            "lambda",
            "lambda_hat",
            "lambda_hat_predicted",
            "lambda_g",
            "lambda_hat_g",
            "ratio",
            "ratio_predicted",
        ],
        report.rows.iter().map(|r| {
            [
                num(alpha),
                num(r.lambda),
                num(r.lambda_hat),
                num(r.lambda_hat_predicted),
                num(r.lambda_g),
                num(r.lambda_hat_g),
                opt(r.ratio),
                opt(r.ratio_predicted),
            ]
        }),
    )?;
    #[derive(Serialize)]
    struct Summary<'a> {
        seed: u64,
        #[serde(flatten)]
        report: &'a SpectrumReport,
    }
    write_json(&out.join("spectrum.json"), &Summary { seed, report: &report })?;
    Ok(report)
}

/// `analyze discrepancy`: per-node attention discrepancy of one block and
/// head of a checkpoint (both indices 0-based).
pub fn analyze_discrepancy(
    data: &Path,
    checkpoint: &Path,
    layer: usize,
    head: usize,
    out: &Path,
) -> Result<DiscrepancyReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let (net, params) = ckpt.restore()?;
    let report = match ckpt.task {
        TaskKind::Node => {
            let d = load_node_dataset(data)?;
            if magna_core::trainer::node_model_spec(&d, ckpt.spec.network.clone()) != ckpt.spec {
                return Err(Error::Checkpoint("model layout does not match the dataset".into()));
            }
            attention_discrepancy(&net, &params, &node_graph(&d), Some(&d.features), layer, head)?
        }
        TaskKind::Kg => {
            let kg = load_kg_dataset(data, false)?;
            check_kg_layout(&ckpt, &kg)?;
            attention_discrepancy(&net, &params, &kg_graph(&kg.dataset), None, layer, head)?
        }
        TaskKind::Analyze => return Err(Error::Checkpoint("checkpoint has no trained task".into())),
    };
    create_dir(out)?;
    write_csv(
        &out.join("discrepancy.csv"),
        ckpt.seed,
        &["node", "delta"],
        report.values.iter().enumerate().map(|(i, v)| [i.to_string(), num(*v)]),
    )?;
    let h = &report.histogram;
    write_csv(
        &out.join("histogram.csv"),
        ckpt.seed,
        &["low", "high", "count"],
        h.counts
            .iter()
            .enumerate()
            .map(|(k, c)| [num(h.edges[k]), num(h.edges[k + 1]), c.to_string()]),
    )?;
    #[derive(Serialize)]
    struct Summary {
        seed: u64,
        layer: usize,
        head: usize,
        mean: f64,
    }
    write_json(
        &out.join("discrepancy.json"),
        &Summary {
            seed: ckpt.seed,
            layer,
            head,
            mean: report.mean,
        },
    )?;
    Ok(report)
}

pub const ABLATION_FLAGS: [&str; 3] = ["no_diffusion", "no_layernorm", "no_feedforward"];

/// One trained ablation variant.
#[derive(Debug, Clone)]
pub struct Variant {
    pub label: String,
    pub network: NetworkConfig,
    pub gat_equivalent: bool,
    pub metrics: Metrics,
}

fn set_flag(net: &mut NetworkConfig, flag: &str) -> Result<()> {
    match flag {
        "no_diffusion" => net.no_diffusion = true,
        "no_layernorm" => net.no_layernorm = true,
        "no_feedforward" => net.no_feedforward = true,
        other => {
            return Err(Error::Config(format!(
                "unknown ablation flag `{other}` (expected one of {})",
                ABLATION_FLAGS.join(", ")
            )))
        }
    }
    Ok(())
}

/// Variant configurations: the full model, each flag alone, and all flags
/// together when more than one is given.
pub fn ablation_variants(base: &NetworkConfig, flags: &[String]) -> Result<Vec<(String, NetworkConfig)>> {
    let mut full = base.clone();
    full.no_diffusion = false;
    full.no_layernorm = false;
    full.no_feedforward = false;
    let mut out = vec![("full".to_string(), full.clone())];
    let mut flags: Vec<&str> = flags.iter().map(|f| f.trim()).filter(|f| !f.is_empty()).collect();
    flags.dedup();
    for f in &flags {
        let mut n = full.clone();
        set_flag(&mut n, f)?;
        out.push((f.to_string(), n));
    }
    if flags.len() > 1 {
        let mut n = full;
        for f in &flags {
            set_flag(&mut n, f)?;
        }
        out.push((flags.join("+"), n));
    }
    Ok(out)
}

fn is_gat(n: &NetworkConfig) -> bool {
    n.no_diffusion && n.no_layernorm && n.no_feedforward
}

/// `ablate`: trains every variant with the same seed. Each variant's
/// artifacts go to `out/<label>/`; the table goes to `out/ablation.csv`.
pub fn ablate(base: &RunConfig, flags: &[String], out: &Path) -> Result<Vec<Variant>> {
    let mut variants = Vec::new();
    for (label, network) in ablation_variants(&base.network, flags)? {
        let cfg = RunConfig {
            network: network.clone(),
            out: out.join(&label),
            ..base.clone()
        };
        cfg.validate()?;
        let run = train(&cfg)?;
        variants.push(Variant {
            gat_equivalent: is_gat(&network),
            label,
            network,
            metrics: run.metrics,
        });
    }
    write_csv(
        &out.join("ablation.csv"),
        base.seed,
        &["variant", "gat_equivalent", "best_epoch", "val_metric", "test_metric"],
        variants.iter().map(|v| {
            [
                if v.gat_equivalent {
                    format!("{} (GAT)", v.label)
                } else {
                    v.label.clone()
                },
                v.gat_equivalent.to_string(),
                v.metrics.best_epoch.to_string(),
                num(v.metrics.val_metric),
                opt(v.metrics.test_metric),
            ]
        }),
    )?;
    Ok(variants)
}

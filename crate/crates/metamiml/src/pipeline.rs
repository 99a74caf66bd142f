//! End-to-end orchestration: walk → embed → project → split → meta-train →
//! adapt → evaluate, with one derived seed per stage. The CLI drives these
//! stages through files; tests drive them in memory. Either way a run is a
//! pure function of (network, params).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array1;
use rayon::prelude::*;

use crate::episodes::{build_tasks, split_source_target, Side, SplitSpec, Task};
use crate::error::{Error, Result};
use crate::hmin::{Hmin, LabelId, NodeId};
use crate::meta::{
    adapt_and_predict, meta_train, AttentionSign, GlobalPrior, MetaConfig, OuterChain,
    TargetPrediction, TrainHistory,
};
use crate::metrics::{aggregate, auprc, auroc, MetricLine};
use crate::projection::{make_projection, ProjectionMatrix, SparsityPolicy};
use crate::seed::derive_seed;
use crate::skipgram::{train_skipgram, EmbeddingTable, SgConfig};
use crate::tasklearner::OmegaParams;
use crate::walks::{generate_corpus, parse_metapath, MetaPath, WalkConfig, WalkCorpus};

/// Everything one experiment needs besides the network itself.
#[derive(Debug, Clone)]
pub struct PipelineParams {
    /// Meta-path display strings, e.g. "B-A0-B".
    pub metapaths: Vec<String>,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub window: usize,
    pub embed_dim: usize,
    pub embed_negatives: usize,
    pub embed_epochs: usize,
    pub embed_lr: f64,
    pub leaky_slope: f64,
    /// Projection output dimension k.
    pub proj_k: usize,
    pub proj_s: SparsityPolicy,
    /// Trunk widths; None defaults to k.
    pub h1: Option<usize>,
    pub h2: Option<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub batch: usize,
    pub meta_epochs: usize,
    /// Extra gradient steps at meta-test adaptation.
    pub adapt_steps: usize,
    pub attention_sign: AttentionSign,
    pub outer_chain: OuterChain,
    /// Source fraction for both the label and the bag split.
    pub ratio: f64,
    /// Query labels per task; clamped to each side's pool size minus one.
    pub query_labels: usize,
    pub repeats: usize,
    /// Fixed top-K for the report; None derives K from the truth.
    pub k_policy: Option<usize>,
    pub master_seed: u64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        // Walking l=40/w=10/window 4, batch 32, rates 0.005, one adaptation
        // step: the reference experimental setup.
        PipelineParams {
            metapaths: vec![],
            walk_length: 40,
            walks_per_node: 10,
            window: 4,
            embed_dim: 32,
            embed_negatives: 5,
            embed_epochs: 5,
            embed_lr: 0.025,
            leaky_slope: 0.01,
            proj_k: 32,
            proj_s: SparsityPolicy::SqrtN,
            h1: None,
            h2: None,
            alpha: 0.005,
            beta: 0.005,
            gamma: 0.005,
            batch: 32,
            meta_epochs: 20,
            adapt_steps: 1,
            attention_sign: AttentionSign::Negated,
            outer_chain: OuterChain::Identity,
            ratio: 0.8,
            query_labels: 5,
            repeats: 10,
            k_policy: None,
            master_seed: 0,
        }
    }
}

impl PipelineParams {
    pub fn sg_config(&self) -> SgConfig {
        SgConfig {
            window: self.window,
            negatives: self.embed_negatives,
            epochs: self.embed_epochs,
            learning_rate: self.embed_lr,
            leaky_slope: self.leaky_slope,
            dim: self.embed_dim,
            seed: derive_seed(self.master_seed, "embed"),
        }
    }

    pub fn walk_config(&self) -> WalkConfig {
        WalkConfig {
            num_walks: self.walks_per_node,
            walk_length: self.walk_length,
            seed: derive_seed(self.master_seed, "walks"),
        }
    }

    pub fn meta_config(&self, rep: usize) -> MetaConfig {
        MetaConfig {
            batch_size: self.batch,
            epochs: self.meta_epochs,
            attention_sign: self.attention_sign,
            outer_chain: self.outer_chain,
            track_step_descent: false,
            seed: derive_seed(self.master_seed, &format!("rep{rep}/train")),
        }
    }
}

pub fn parse_paths(g: &Hmin, params: &PipelineParams) -> Result<Vec<MetaPath>> {
    if params.metapaths.is_empty() {
        return Err(Error::InvalidConfig("no meta-paths configured".into()));
    }
    params
        .metapaths
        .iter()
        .map(|p| parse_metapath(p, g))
        .collect()
}

/// Stage: sample the walk corpus.
pub fn stage_walk(g: &Hmin, params: &PipelineParams) -> Result<WalkCorpus> {
    let paths = parse_paths(g, params)?;
    generate_corpus(g, paths, params.walk_config())
}

/// Stage: train one skip-gram table per meta-path. Paths train in parallel,
/// each from its own seeded stream.
pub fn stage_embed(g: &Hmin, corpus: &WalkCorpus, params: &PipelineParams) -> Result<Vec<EmbeddingTable>> {
    let sg = params.sg_config();
    (0..corpus.paths.len())
        .into_par_iter()
        .map(|p| train_skipgram(corpus, g, p, &sg).map(|r| r.table))
        .collect()
}

/// Stage: draw the shared sparse projection.
pub fn stage_project(g: &Hmin, params: &PipelineParams) -> Result<ProjectionMatrix> {
    let u = g.instance_dim() + params.embed_dim;
    let s = params.proj_s.resolve(g.bag_nodes().len());
    make_projection(u, params.proj_k, s, derive_seed(params.master_seed, "project"))
}

/// Fresh task-learner parameters for one repetition.
pub fn init_omega(g: &Hmin, params: &PipelineParams, rep: usize) -> OmegaParams {
    let k = params.proj_k;
    OmegaParams::init(
        k,
        params.h1.unwrap_or(k),
        params.h2.unwrap_or(k),
        g.num_labels(),
        params.leaky_slope,
        derive_seed(params.master_seed, &format!("rep{rep}/omega")),
    )
}

fn clamped_query_labels(requested: usize, pool: usize) -> usize {
    requested.min(pool.saturating_sub(1)).max(1)
}

/// Split and episode construction for one repetition.
pub fn stage_episodes(
    g: &Hmin,
    corpus: &WalkCorpus,
    params: &PipelineParams,
    rep: usize,
) -> Result<(SplitSpec, Vec<Task>, Vec<Task>)> {
    let split = split_source_target(
        g,
        params.ratio,
        derive_seed(params.master_seed, &format!("rep{rep}/split")),
    )?;
    let task_seed = derive_seed(params.master_seed, &format!("rep{rep}/episodes"));
    let q_src = clamped_query_labels(params.query_labels, split.source_labels.len());
    let q_tgt = clamped_query_labels(params.query_labels, split.target_labels.len());
    let source = build_tasks(g, corpus, &split, Side::Source, q_src, task_seed)?;
    let target = build_tasks(g, corpus, &split, Side::Target, q_tgt, task_seed)?;
    Ok((split, source, target))
}

/// Rebuild a repetition's target tasks from a stored split (same derived
/// seeds as [`stage_episodes`], so `adapt` reproduces `train`'s episodes).
pub fn target_tasks_for_split(
    g: &Hmin,
    corpus: &WalkCorpus,
    split: &SplitSpec,
    params: &PipelineParams,
    rep: usize,
) -> Result<Vec<Task>> {
    let task_seed = derive_seed(params.master_seed, &format!("rep{rep}/episodes"));
    let q_tgt = clamped_query_labels(params.query_labels, split.target_labels.len());
    build_tasks(g, corpus, split, Side::Target, q_tgt, task_seed)
}

/// One repetition's trained artifacts.
pub struct TrainedRep {
    pub split: SplitSpec,
    pub prior: GlobalPrior,
    pub history: TrainHistory,
    pub target_tasks: Vec<Task>,
}

/// Stage: meta-train a fresh prior on the repetition's source tasks.
pub fn stage_train(
    g: &Hmin,
    corpus: &WalkCorpus,
    tables: &[EmbeddingTable],
    proj: &ProjectionMatrix,
    params: &PipelineParams,
    rep: usize,
) -> Result<TrainedRep> {
    let (split, source_tasks, target_tasks) = stage_episodes(g, corpus, params, rep)?;
    let omega = init_omega(g, params, rep);
    let prior = GlobalPrior::new(
        tables.to_vec(),
        omega,
        params.alpha,
        params.beta,
        params.gamma,
    )?;
    let (prior, history) = meta_train(prior, g, proj, &source_tasks, &params.meta_config(rep))?;
    Ok(TrainedRep {
        split,
        prior,
        history,
        target_tasks,
    })
}

/// Stage: adapt every target task and collect its query predictions.
pub fn stage_adapt(
    g: &Hmin,
    proj: &ProjectionMatrix,
    prior: &GlobalPrior,
    target_tasks: &[Task],
    steps: usize,
    cfg: &MetaConfig,
) -> Result<Vec<TargetPrediction>> {
    target_tasks
        .par_iter()
        .map(|task| adapt_and_predict(prior, g, proj, task, steps, cfg))
        .collect()
}

/// Bag-level metrics of one repetition's target predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct RepMetrics {
    pub auroc: f64,
    pub auprc: f64,
    pub avg_f1: f64,
    pub one_minus_hl: f64,
    pub k: usize,
    /// Labels excluded from the AUROC macro (single-class columns).
    pub excluded: usize,
}

/// Assemble per-label score/truth vectors from per-task query predictions
/// and compute the four metrics. Each task contributes only its own query
/// labels; a label's column gathers the bags that queried it.
pub fn eval_predictions(preds: &[TargetPrediction], k_policy: Option<usize>) -> Result<RepMetrics> {
    if preds.is_empty() {
        return Err(Error::InvalidConfig("no predictions to evaluate".into()));
    }
    let mut per_label: BTreeMap<LabelId, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for p in preds {
        for (j, &l) in p.query_labels.iter().enumerate() {
            let slot = per_label.entry(l).or_default();
            slot.0.push(p.bag_scores[j]);
            slot.1.push(p.query_truth[j]);
        }
    }

    let mut aurocs = Vec::new();
    let mut auprcs = Vec::new();
    let mut excluded = 0usize;
    for (scores, truth) in per_label.values() {
        match auroc(scores, truth) {
            Some(v) => aurocs.push(v),
            None => excluded += 1,
        }
        if let Some(v) = auprc(scores, truth) {
            auprcs.push(v);
        }
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };

    // Top-K per task within its query subset (K clamped to the subset).
    let k = k_policy.unwrap_or_else(|| {
        let mean_pos =
            preds.iter().map(|p| p.query_truth.sum()).sum::<f64>() / preds.len() as f64;
        (mean_pos.round() as usize).max(1)
    });
    let mut confusion: BTreeMap<LabelId, (f64, f64, f64)> = BTreeMap::new();
    let mut cells = 0usize;
    let mut mismatches = 0usize;
    for p in preds {
        let qa = p.query_labels.len();
        let k_eff = k.min(qa);
        let mut order: Vec<usize> = (0..qa).collect();
        order.sort_by(|&a, &b| {
            p.bag_scores[b]
                .partial_cmp(&p.bag_scores[a])
                .unwrap()
                .then(p.query_labels[a].cmp(&p.query_labels[b]))
        });
        let mut predicted = vec![false; qa];
        for &j in order.iter().take(k_eff) {
            predicted[j] = true;
        }
        for (j, &was_predicted) in predicted.iter().enumerate() {
            let truth = p.query_truth[j] > 0.5;
            let slot = confusion.entry(p.query_labels[j]).or_default();
            match (was_predicted, truth) {
                (true, true) => slot.0 += 1.0,
                (true, false) => slot.1 += 1.0,
                (false, true) => slot.2 += 1.0,
                _ => {}
            }
            cells += 1;
            if was_predicted != truth {
                mismatches += 1;
            }
        }
    }
    let f1s: Vec<f64> = confusion
        .values()
        .filter(|(tp, fp, fnn)| tp + fp + fnn > 0.0)
        .map(|(tp, fp, fnn)| 2.0 * tp / (2.0 * tp + fp + fnn))
        .collect();

    Ok(RepMetrics {
        auroc: mean(&aurocs),
        auprc: mean(&auprcs),
        avg_f1: mean(&f1s),
        one_minus_hl: 1.0 - mismatches as f64 / cells as f64,
        k,
        excluded,
    })
}

/// Aggregate repetitions into the report format.
pub fn render_rep_report(reps: &[RepMetrics]) -> String {
    let collect = |f: fn(&RepMetrics) -> f64| reps.iter().map(f).collect::<Vec<f64>>();
    let k = reps.first().map(|r| r.k);
    let excluded = reps.iter().map(|r| r.excluded).max().unwrap_or(0);
    let lines: Vec<MetricLine> = [
        ("AUROC", collect(|r| r.auroc)),
        ("AUPRC", collect(|r| r.auprc)),
        ("AvgF1", collect(|r| r.avg_f1)),
        ("1-HL", collect(|r| r.one_minus_hl)),
    ]
    .into_iter()
    .map(|(name, values)| {
        let (mean, std) = aggregate(&values);
        MetricLine {
            metric: name.into(),
            mean,
            std,
            n_runs: values.len(),
            k,
            excluded_labels: excluded,
        }
    })
    .collect();
    crate::metrics::render_report(&lines)
}

/// Persist predictions as `PRED v1` TSV: one line per (bag, query label).
pub fn predictions_to_text(preds: &[TargetPrediction]) -> String {
    let mut s = String::from("PRED v1\nbag\tlabel\tscore\ttruth\n");
    for p in preds {
        for (j, l) in p.query_labels.iter().enumerate() {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}",
                p.bag.0, l.0, p.bag_scores[j], p.query_truth[j]
            );
        }
    }
    s
}

pub fn save_predictions(preds: &[TargetPrediction], path: &Path) -> Result<()> {
    std::fs::write(path, predictions_to_text(preds)).map_err(|e| Error::io(path, e))
}

/// Reload predictions; instance scores are not persisted, so they come back
/// empty.
pub fn load_predictions(path: &Path) -> Result<Vec<TargetPrediction>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text)
}

pub fn parse_predictions(text: &str) -> Result<Vec<TargetPrediction>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "PRED v1" => {}
        _ => {
            return Err(Error::MalformedHeader {
                line: 1,
                detail: "expected 'PRED v1'".into(),
            })
        }
    }
    let mut grouped: BTreeMap<u32, Vec<(u32, f64, f64)>> = BTreeMap::new();
    for (n, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with("bag\t") {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        let [bag, label, score, truth] = parts[..] else {
            return Err(Error::MalformedRecord {
                line: n + 1,
                detail: "expected 'bag<TAB>label<TAB>score<TAB>truth'".into(),
            });
        };
        let bad = |what: &str| Error::MalformedRecord {
            line: n + 1,
            detail: format!("bad {what}"),
        };
        let score: f64 = score.parse().map_err(|_| bad("score"))?;
        if !score.is_finite() {
            return Err(bad("score (not finite)"));
        }
        grouped.entry(bag.parse().map_err(|_| bad("bag id"))?).or_default().push((
            label.parse().map_err(|_| bad("label id"))?,
            score,
            truth.parse().map_err(|_| bad("truth"))?,
        ));
    }
    Ok(grouped
        .into_iter()
        .map(|(bag, rows)| TargetPrediction {
            bag: NodeId(bag),
            query_labels: rows.iter().map(|r| LabelId(r.0)).collect(),
            bag_scores: Array1::from_iter(rows.iter().map(|r| r.1)),
            instance_scores: ndarray::Array2::zeros((0, rows.len())),
            query_truth: Array1::from_iter(rows.iter().map(|r| r.2)),
            support_loss_trace: vec![],
        })
        .collect())
}

/// Full in-memory experiment: pretrain once, then repeat split/train/adapt
/// `repeats` times. Returns per-rep metrics and the last rep's artifacts.
pub struct ExperimentResult {
    pub reps: Vec<RepMetrics>,
    pub report: String,
    pub last_history: TrainHistory,
    pub last_predictions: Vec<TargetPrediction>,
}

pub fn run_experiment(g: &Hmin, params: &PipelineParams) -> Result<ExperimentResult> {
    let corpus = stage_walk(g, params)?;
    let tables = stage_embed(g, &corpus, params)?;
    let proj = stage_project(g, params)?;
    let mut reps = Vec::with_capacity(params.repeats);
    let mut last_history = TrainHistory::default();
    let mut last_predictions = Vec::new();
    for rep in 0..params.repeats.max(1) {
        let trained = stage_train(g, &corpus, &tables, &proj, params, rep)?;
        let preds = stage_adapt(
            g,
            &proj,
            &trained.prior,
            &trained.target_tasks,
            params.adapt_steps,
            &params.meta_config(rep),
        )?;
        reps.push(eval_predictions(&preds, params.k_policy)?);
        last_history = trained.history;
        last_predictions = preds;
    }
    let report = render_rep_report(&reps);
    Ok(ExperimentResult {
        reps,
        report,
        last_history,
        last_predictions,
    })
}

/// Sensitivity sweep over the projection dimension k: one full experiment
/// per value, one AUROC row per value.
pub fn sweep_k(g: &Hmin, params: &PipelineParams, values: &[usize]) -> Result<String> {
    let mut out = String::from("k\tauroc_mean\tauroc_std\tn_runs\n");
    for &k in values {
        let mut p = params.clone();
        p.proj_k = k;
        let result = run_experiment(g, &p)?;
        let (mean, std) = aggregate(&result.reps.iter().map(|r| r.auroc).collect::<Vec<_>>());
        let _ = writeln!(out, "{k}\t{mean:.4}\t{std:.4}\t{}", result.reps.len());
    }
    Ok(out)
}

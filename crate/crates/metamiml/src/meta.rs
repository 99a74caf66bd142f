//! Bilevel optimization: per-task inner adaptation with per-meta-path
//! attention, a first-order outer update of the shared prior, and fast
//! adaptation to target tasks.
//!
//! Per task the inner loop runs, in order: per-path support losses at the
//! prior ω; local embedding-row updates (rate α) through the projection
//! chain; attention weights from the per-path losses; fusion of the per-path
//! parameters and representations; and one gradient step (rate β) from the
//! re-initialized base ω ⊗ ω_fused on the fused representation. The outer
//! loop evaluates the query loss at the attention-combined adapted
//! parameters and applies its gradient to the prior (rate γ), touching only
//! the embedding rows of the batch's bags.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::episodes::Task;
use crate::error::{Error, Result};
use crate::hmin::{Hmin, NodeId};
use crate::projection::{project_bag, ProjectionMatrix};
use crate::seed::rng_for;
use crate::skipgram::EmbeddingTable;
use crate::tasklearner::{forward, task_loss, OmegaParams, TaskPrediction};

/// The shared prior φ = (per-path embedding tables, task-learner parameters)
/// plus the three learning rates.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalPrior {
    pub thetas: Vec<EmbeddingTable>,
    pub omega: OmegaParams,
    /// Context-learner local rate.
    pub alpha: f64,
    /// Task-learner local rate.
    pub beta: f64,
    /// Outer (meta) rate.
    pub gamma: f64,
}

impl GlobalPrior {
    pub fn new(
        thetas: Vec<EmbeddingTable>,
        omega: OmegaParams,
        alpha: f64,
        beta: f64,
        gamma: f64,
    ) -> Result<GlobalPrior> {
        if thetas.is_empty() {
            return Err(Error::InvalidConfig("prior needs at least one path table".into()));
        }
        if alpha < 0.0 || beta < 0.0 || gamma < 0.0 {
            return Err(Error::InvalidConfig("learning rates must be non-negative".into()));
        }
        let dim = thetas[0].dim;
        if thetas.iter().any(|t| t.dim != dim) {
            return Err(Error::ShapeMismatch("path tables disagree on d_l".into()));
        }
        Ok(GlobalPrior {
            thetas,
            omega,
            alpha,
            beta,
            gamma,
        })
    }

    pub fn num_paths(&self) -> usize {
        self.thetas.len()
    }

    pub fn context_dim(&self) -> usize {
        self.thetas[0].dim
    }

    /// Persist as one OMEGA checkpoint plus one SGEMB file per path.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.omega.save(&dir.join("omega.txt"))?;
        for (i, t) in self.thetas.iter().enumerate() {
            t.save(&dir.join(format!("theta_p{i}.emb")))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, num_paths: usize, alpha: f64, beta: f64, gamma: f64) -> Result<GlobalPrior> {
        let omega = OmegaParams::load(&dir.join("omega.txt"))?;
        let thetas = (0..num_paths)
            .map(|i| EmbeddingTable::load(&dir.join(format!("theta_p{i}.emb"))))
            .collect::<Result<Vec<_>>>()?;
        GlobalPrior::new(thetas, omega, alpha, beta, gamma)
    }
}

/// How attention turns per-path support losses into weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionSign {
    /// softmax(-loss): better-fitting paths get more weight.
    Negated,
    /// softmax(loss), the literal reading.
    Literal,
}

/// How the outer update maps d(query loss)/d(adapted ω) onto the prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OuterChain {
    /// Adapted-parameter gradients applied to the prior coordinates as-is.
    Identity,
    /// Multiply by the structural factor d(ω ⊗ ω_fused)/dω = 2ω before
    /// applying (still first-order: no derivative of the inner gradient).
    Elementwise,
}

#[derive(Debug, Clone)]
pub struct MetaConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub attention_sign: AttentionSign,
    pub outer_chain: OuterChain,
    /// Record per-meta-step query loss before and after the prior update
    /// (recomputed on the same batch). Costs a second pass per step.
    pub track_step_descent: bool,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            batch_size: 32,
            epochs: 20,
            attention_sign: AttentionSign::Negated,
            outer_chain: OuterChain::Identity,
            track_step_descent: false,
            seed: 0,
        }
    }
}

/// Per-path representation of one bag under the current prior.
#[derive(Debug, Clone)]
pub struct PathContext {
    /// n_i × k fused instance representation.
    pub xhat: Array2<f64>,
    /// σ'(pre) of the bag's context readout; routes gradients into the
    /// embedding row and bias.
    pub act_deriv: Array1<f64>,
}

/// Build every path's context for `bag` from the prior's tables.
pub fn build_path_contexts(
    prior: &GlobalPrior,
    g: &Hmin,
    proj: &ProjectionMatrix,
    bag: NodeId,
) -> Result<Vec<PathContext>> {
    let bag_rec = g
        .bag(bag)
        .ok_or_else(|| Error::InvalidConfig(format!("node {} has no bag record", bag.0)))?;
    prior
        .thetas
        .iter()
        .enumerate()
        .map(|(p, table)| {
            let (ctx, act_deriv) = table.bag_context_with_grad(bag)?;
            let projected = project_bag(bag, p, &bag_rec.instances, &ctx, proj)?;
            Ok(PathContext {
                xhat: projected.rows,
                act_deriv,
            })
        })
        .collect()
}

/// One local embedding update (the bag's row and the bias): the loss
/// gradient on the projected rows is routed through the projection's context
/// block and the readout activation. Only the bag's own row moves.
pub fn local_update_theta(
    table: &EmbeddingTable,
    bag: NodeId,
    alpha: f64,
    d_xhat: &Array2<f64>,
    proj: &ProjectionMatrix,
    act_deriv: &Array1<f64>,
    instance_dim: usize,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let row = table.row_of(bag)?;
    let w_row = table.w.row(row).to_owned();
    let bias = table.b.clone();
    if alpha == 0.0 {
        return Ok((w_row, bias));
    }
    let d_ctx = proj.backprop_block(d_xhat, instance_dim)?;
    if d_ctx.len() != act_deriv.len() {
        return Err(Error::ShapeMismatch(format!(
            "context gradient has {} entries, readout has {}",
            d_ctx.len(),
            act_deriv.len()
        )));
    }
    let g = &d_ctx * act_deriv;
    Ok((w_row - &(alpha * &g), bias - alpha * g))
}

/// Softmax attention over per-path support losses. Positive weights summing
/// to one; with the negated sign, a path's weight strictly decreases in its
/// own loss.
pub fn attention_weights(losses: &[f64], sign: AttentionSign) -> Result<Vec<f64>> {
    if losses.is_empty() {
        return Err(Error::InvalidConfig("attention needs at least one path".into()));
    }
    if losses.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attention input loss".into()));
    }
    let scored: Vec<f64> = match sign {
        AttentionSign::Negated => losses.iter().map(|&l| -l).collect(),
        AttentionSign::Literal => losses.to_vec(),
    };
    let max = scored.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scored.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|v| v / sum).collect())
}

fn combine_omegas(weights: &[f64], omegas: &[OmegaParams]) -> OmegaParams {
    let mut acc = omegas[0].zeros_like();
    for (w, o) in weights.iter().zip(omegas) {
        acc.scaled_add(*w, o);
    }
    acc
}

fn combine_xhats(weights: &[f64], contexts: &[PathContext]) -> Array2<f64> {
    let mut acc = Array2::zeros(contexts[0].xhat.dim());
    for (w, c) in weights.iter().zip(contexts) {
        acc.scaled_add(*w, &c.xhat);
    }
    acc
}

/// Everything the inner loop adapted for one task.
#[derive(Debug, Clone)]
pub struct TaskAdaptation {
    pub per_path: Vec<PathAdaptation>,
    /// Attention weights, one per path; positive, sum to one.
    pub attention: Vec<f64>,
    /// Attention-fused representation Σ_p a_p X̂_p.
    pub fused_xhat: Array2<f64>,
    /// Attention-fused adapted parameters Σ_p a_p ω_p (after the β step).
    pub fused_omega: OmegaParams,
    /// Support loss at the re-initialized base ω ⊗ ω_fused on the fused
    /// representation; the point the β step departs from.
    pub base_support_loss: f64,
}

#[derive(Debug, Clone)]
pub struct PathAdaptation {
    /// Support loss at the prior ω on this path's representation.
    pub support_loss: f64,
    /// Locally updated embedding row for the task's bag.
    pub theta_row: Array1<f64>,
    /// Locally updated readout bias.
    pub theta_bias: Array1<f64>,
    /// Locally updated task-learner parameters.
    pub omega: OmegaParams,
}

impl TaskAdaptation {
    pub fn mean_support_loss(&self) -> f64 {
        self.per_path.iter().map(|p| p.support_loss).sum::<f64>() / self.per_path.len() as f64
    }

    pub fn attention_entropy(&self) -> f64 {
        -self
            .attention
            .iter()
            .filter(|&&a| a > 0.0)
            .map(|&a| a * a.ln())
            .sum::<f64>()
    }
}

/// Run the inner loop for one task given its per-path contexts, with the
/// default (negated-loss) attention.
pub fn inner_adapt(
    prior: &GlobalPrior,
    proj: &ProjectionMatrix,
    task: &Task,
    contexts: &[PathContext],
) -> Result<TaskAdaptation> {
    inner_adapt_signed(prior, proj, task, contexts, AttentionSign::Negated)
}

/// Inner loop with an explicit attention sign.
pub fn inner_adapt_signed(
    prior: &GlobalPrior,
    proj: &ProjectionMatrix,
    task: &Task,
    contexts: &[PathContext],
    sign: AttentionSign,
) -> Result<TaskAdaptation> {
    if contexts.len() != prior.num_paths() {
        return Err(Error::ShapeMismatch(format!(
            "{} contexts for {} paths",
            contexts.len(),
            prior.num_paths()
        )));
    }
    let instance_dim = proj.input_dim() - prior.context_dim();
    let y = &task.support.y;
    let cols = &task.support.label_cols;

    // (1) init per-path copies; (2) per-path support losses at the prior.
    let mut support_losses = Vec::with_capacity(contexts.len());
    let mut theta_updates = Vec::with_capacity(contexts.len());
    for (p, ctx) in contexts.iter().enumerate() {
        let (loss, grads) = task_loss(&prior.omega, &ctx.xhat, y, cols)?;
        // (3) local θ update through the projection chain.
        let (row, bias) = local_update_theta(
            &prior.thetas[p],
            task.bag,
            prior.alpha,
            &grads.d_xhat,
            proj,
            &ctx.act_deriv,
            instance_dim,
        )?;
        support_losses.push(loss);
        theta_updates.push((row, bias));
    }

    // (4) attention over the per-path losses.
    let attention = attention_weights(&support_losses, sign)?;

    // (5) fuse the per-path parameters (still at the prior here) and the
    // representations.
    let pre_omegas: Vec<OmegaParams> = (0..contexts.len()).map(|_| prior.omega.clone()).collect();
    let omega_fused_pre = combine_omegas(&attention, &pre_omegas);
    let fused_xhat = combine_xhats(&attention, contexts);

    // (6) re-initialize to ω ⊗ ω_fused and take one gradient step from there
    // on the fused representation.
    let base = prior.omega.elementwise_mul(&omega_fused_pre)?;
    let (base_support_loss, base_grads) = task_loss(&base, &fused_xhat, y, cols)?;
    let adapted = if prior.beta == 0.0 {
        base.clone()
    } else {
        let mut o = base.clone();
        o.scaled_add(-prior.beta, &base_grads.d_omega);
        o
    };

    let per_path: Vec<PathAdaptation> = support_losses
        .iter()
        .zip(theta_updates)
        .map(|(&support_loss, (theta_row, theta_bias))| PathAdaptation {
            support_loss,
            theta_row,
            theta_bias,
            omega: adapted.clone(),
        })
        .collect();
    let omegas: Vec<OmegaParams> = per_path.iter().map(|p| p.omega.clone()).collect();
    let fused_omega = combine_omegas(&attention, &omegas);

    Ok(TaskAdaptation {
        per_path,
        attention,
        fused_xhat,
        fused_omega,
        base_support_loss,
    })
}

/// One epoch record of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_support_loss: f64,
    pub mean_query_loss: f64,
    pub mean_attention_entropy: f64,
}

/// Same-batch query loss before and after one outer update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub pre: f64,
    pub post: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

impl TrainHistory {
    /// Tab-separated, one record per epoch.
    pub fn to_text(&self) -> String {
        let mut s = String::from("epoch\tmean_support_loss\tmean_query_loss\tmean_attention_entropy\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}",
                e.epoch, e.mean_support_loss, e.mean_query_loss, e.mean_attention_entropy
            );
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

struct TaskOuterGrad {
    bag: NodeId,
    query_loss: f64,
    support_loss: f64,
    attention_entropy: f64,
    d_omega: OmegaParams,
    /// Per path: gradient for the bag's embedding row (and the bias).
    d_theta_rows: Vec<Array1<f64>>,
}

fn task_outer_grad(
    prior: &GlobalPrior,
    g: &Hmin,
    proj: &ProjectionMatrix,
    task: &Task,
    cfg: &MetaConfig,
) -> Result<TaskOuterGrad> {
    let contexts = build_path_contexts(prior, g, proj, task.bag)?;
    let adaptation = inner_adapt_signed(prior, proj, task, &contexts, cfg.attention_sign)?;
    if !adaptation.fused_omega.all_finite() {
        return Err(Error::Diverged {
            task: task.bag.0,
            detail: "adapted parameters overflowed".into(),
        });
    }
    let (query_loss, query_grads) = task_loss(
        &adaptation.fused_omega,
        &adaptation.fused_xhat,
        &task.query.y,
        &task.query.label_cols,
    )?;
    if !query_loss.is_finite() {
        return Err(Error::Diverged {
            task: task.bag.0,
            detail: "query loss is not finite".into(),
        });
    }
    let instance_dim = proj.input_dim() - prior.context_dim();
    let d_ctx = proj.backprop_block(&query_grads.d_xhat, instance_dim)?;
    let d_theta_rows = contexts
        .iter()
        .zip(&adaptation.attention)
        .map(|(ctx, &a)| (&d_ctx * &ctx.act_deriv) * a)
        .collect();
    Ok(TaskOuterGrad {
        bag: task.bag,
        query_loss,
        support_loss: adaptation.mean_support_loss(),
        attention_entropy: adaptation.attention_entropy(),
        d_omega: query_grads.d_omega,
        d_theta_rows,
    })
}

fn batch_query_loss(
    prior: &GlobalPrior,
    g: &Hmin,
    proj: &ProjectionMatrix,
    batch: &[&Task],
    cfg: &MetaConfig,
) -> Result<f64> {
    let losses: Vec<f64> = batch
        .par_iter()
        .map(|task| {
            let contexts = build_path_contexts(prior, g, proj, task.bag)?;
            let adaptation =
                inner_adapt_signed(prior, proj, task, &contexts, cfg.attention_sign)?;
            let (loss, _) = task_loss(
                &adaptation.fused_omega,
                &adaptation.fused_xhat,
                &task.query.y,
                &task.query.label_cols,
            )?;
            Ok(loss)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Meta-train the prior over the source tasks. Batches are processed in
/// parallel per task and reduced serially in task order, so the result is a
/// pure function of `(prior, tasks, cfg)` regardless of thread count.
pub fn meta_train(
    prior: GlobalPrior,
    g: &Hmin,
    proj: &ProjectionMatrix,
    tasks: &[Task],
    cfg: &MetaConfig,
) -> Result<(GlobalPrior, TrainHistory)> {
    if tasks.is_empty() {
        return Err(Error::InvalidConfig("meta_train needs at least one task".into()));
    }
    let mut prior = prior;
    let mut history = TrainHistory::default();
    let batch_size = cfg.batch_size.max(1);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..tasks.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &format!("meta/epoch{epoch}/shuffle")));

        let mut support_sum = 0.0;
        let mut query_sum = 0.0;
        let mut entropy_sum = 0.0;

        for chunk in order.chunks(batch_size) {
            let batch: Vec<&Task> = chunk.iter().map(|&i| &tasks[i]).collect();
            let grads: Vec<TaskOuterGrad> = batch
                .par_iter()
                .map(|task| task_outer_grad(&prior, g, proj, task, cfg))
                .collect::<Result<Vec<_>>>()?;

            let b = grads.len() as f64;
            let pre = grads.iter().map(|t| t.query_loss).sum::<f64>() / b;
            for t in &grads {
                support_sum += t.support_loss;
                query_sum += t.query_loss;
                entropy_sum += t.attention_entropy;
            }

            if prior.gamma != 0.0 {
                let mut mean_domega = grads[0].d_omega.zeros_like();
                for t in &grads {
                    mean_domega.scaled_add(1.0 / b, &t.d_omega);
                }
                if cfg.outer_chain == OuterChain::Elementwise {
                    mean_domega = prior.omega.elementwise_mul(&mean_domega)?;
                    mean_domega.scale(2.0);
                }
                prior.omega.scaled_add(-prior.gamma, &mean_domega);
                if !prior.omega.all_finite() {
                    return Err(Error::Diverged {
                        task: grads[0].bag.0,
                        detail: "task-learner prior overflowed".into(),
                    });
                }
                for t in &grads {
                    for (p, d_row) in t.d_theta_rows.iter().enumerate() {
                        let row = prior.thetas[p].row_of(t.bag)?;
                        let scale = prior.gamma / b;
                        {
                            let mut w_row = prior.thetas[p].w.row_mut(row);
                            w_row.scaled_add(-scale, d_row);
                        }
                        prior.thetas[p].b.scaled_add(-scale, d_row);
                        if prior.thetas[p].w.row(row).iter().any(|v| !v.is_finite()) {
                            return Err(Error::Diverged {
                                task: t.bag.0,
                                detail: "embedding row overflowed".into(),
                            });
                        }
                    }
                }
            }

            if cfg.track_step_descent {
                let post = batch_query_loss(&prior, g, proj, &batch, cfg)?;
                history.steps.push(StepRecord { pre, post });
            }
        }

        let n = tasks.len() as f64;
        history.epochs.push(EpochRecord {
            epoch,
            mean_support_loss: support_sum / n,
            mean_query_loss: query_sum / n,
            mean_attention_entropy: entropy_sum / n,
        });
    }
    Ok((prior, history))
}

/// Predictions for one target task's query side.
#[derive(Debug, Clone)]
pub struct TargetPrediction {
    pub bag: NodeId,
    /// Query label ids, aligned with `bag_scores` and `query_truth`.
    pub query_labels: Vec<crate::hmin::LabelId>,
    pub bag_scores: Array1<f64>,
    /// n_i × |query| instance scores.
    pub instance_scores: Array2<f64>,
    pub query_truth: Array1<f64>,
    /// Support loss before and after the extra adaptation steps.
    pub support_loss_trace: Vec<f64>,
}

/// Fast adaptation: run the inner loop once, then `steps` extra gradient
/// steps of ω on the target support loss, and predict the query side on the
/// fused representation. `steps = 0` predicts at the fused adapted prior.
pub fn adapt_and_predict(
    prior: &GlobalPrior,
    g: &Hmin,
    proj: &ProjectionMatrix,
    task: &Task,
    steps: usize,
    cfg: &MetaConfig,
) -> Result<TargetPrediction> {
    let contexts = build_path_contexts(prior, g, proj, task.bag)?;
    let adaptation = inner_adapt_signed(prior, proj, task, &contexts, cfg.attention_sign)?;
    let mut omega = adaptation.fused_omega.clone();
    let mut trace = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let (loss, grads) = task_loss(
            &omega,
            &adaptation.fused_xhat,
            &task.support.y,
            &task.support.label_cols,
        )?;
        trace.push(loss);
        omega.scaled_add(-prior.beta, &grads.d_omega);
        if !omega.all_finite() {
            return Err(Error::Diverged {
                task: task.bag.0,
                detail: "adaptation overflowed".into(),
            });
        }
    }
    let (final_loss, _) = task_loss(
        &omega,
        &adaptation.fused_xhat,
        &task.support.y,
        &task.support.label_cols,
    )?;
    trace.push(final_loss);
    let pred: TaskPrediction = forward(&omega, &adaptation.fused_xhat, &task.query.label_cols)?;
    Ok(TargetPrediction {
        bag: task.bag,
        query_labels: task.query.labels.clone(),
        bag_scores: pred.bag_scores,
        instance_scores: pred.instance_scores,
        query_truth: task.query.y.clone(),
        support_loss_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episodes::{build_tasks, split_source_target, Side};
    use crate::hmin::HminBuilder;
    use crate::projection::make_projection;
    use crate::skipgram::{train_skipgram, SgConfig};
    use crate::synth::{generate_synthetic, SynthConfig};
    use crate::walks::{generate_corpus, parse_metapath, WalkConfig};
    use ndarray::array;

    /// Small planted pipeline shared by the meta tests.
    struct Fixture {
        g: Hmin,
        proj: ProjectionMatrix,
        prior: GlobalPrior,
        source_tasks: Vec<Task>,
        target_tasks: Vec<Task>,
    }

    fn fixture(seed: u64, alpha: f64, beta: f64, gamma: f64) -> Fixture {
        let cfg = SynthConfig {
            num_bags: 18,
            aux_counts: vec![9, 9],
            num_labels: 6,
            communities: 3,
            instance_dim: 8,
            instances_per_bag: (3, 5),
            seed,
            ..SynthConfig::default()
        };
        let (g, _) = generate_synthetic(&cfg).unwrap();
        let paths: Vec<_> = cfg
            .default_metapaths()
            .iter()
            .map(|p| parse_metapath(p, &g).unwrap())
            .collect();
        let corpus = generate_corpus(
            &g,
            paths,
            WalkConfig {
                num_walks: 4,
                walk_length: 8,
                seed,
            },
        )
        .unwrap();
        let sg = SgConfig {
            dim: 6,
            epochs: 2,
            seed,
            ..SgConfig::default()
        };
        let thetas: Vec<EmbeddingTable> = (0..corpus.paths.len())
            .map(|p| train_skipgram(&corpus, &g, p, &sg).unwrap().table)
            .collect();
        let k = 8;
        let u = cfg.instance_dim + sg.dim;
        let proj = make_projection(u, k, 3.0, seed).unwrap();
        let omega = OmegaParams::init(k, k, k, cfg.num_labels, 0.01, seed);
        let prior = GlobalPrior::new(thetas, omega, alpha, beta, gamma).unwrap();
        let split = split_source_target(&g, 0.7, seed).unwrap();
        let source_tasks = build_tasks(&g, &corpus, &split, Side::Source, 2, seed).unwrap();
        let target_tasks = build_tasks(&g, &corpus, &split, Side::Target, 1, seed).unwrap();
        Fixture {
            g,
            proj,
            prior,
            source_tasks,
            target_tasks,
        }
    }

    #[test]
    fn attention_examples() {
        let w = attention_weights(&[0.4, 0.4, 0.4], AttentionSign::Negated).unwrap();
        for v in &w {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let w = attention_weights(&[0.1, 2.3], AttentionSign::Negated).unwrap();
        assert!((w[0] - 0.900).abs() < 1e-3, "got {w:?}");
        assert!((w[1] - 0.100).abs() < 1e-3);
        let w = attention_weights(&[7.0], AttentionSign::Negated).unwrap();
        assert_eq!(w, vec![1.0]);
        assert!(attention_weights(&[f64::NAN], AttentionSign::Negated).is_err());
    }

    #[test]
    fn attention_literal_flag_upweights_worse_path() {
        let lit = attention_weights(&[0.1, 2.3], AttentionSign::Literal).unwrap();
        assert!(lit[1] > lit[0]);
    }

    #[test]
    fn attention_is_simplex_and_monotone() {
        let mut rng = rng_for(3, "attn-prop");
        use rand::Rng;
        for _ in 0..200 {
            let n = rng.random_range(1..6);
            let losses: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 5.0).collect();
            let w = attention_weights(&losses, AttentionSign::Negated).unwrap();
            assert!(w.iter().all(|&v| v > 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let mut bumped = losses.clone();
            bumped[0] += 0.5;
            let w2 = attention_weights(&bumped, AttentionSign::Negated).unwrap();
            if n > 1 {
                assert!(w2[0] < w[0]);
            }
        }
    }

    #[test]
    fn zero_alpha_keeps_theta_rows() {
        let f = fixture(1, 0.0, 0.0, 0.0);
        let task = &f.source_tasks[0];
        let contexts = build_path_contexts(&f.prior, &f.g, &f.proj, task.bag).unwrap();
        let adaptation = inner_adapt(&f.prior, &f.proj, task, &contexts).unwrap();
        for (p, pa) in adaptation.per_path.iter().enumerate() {
            let row = f.prior.thetas[p].row_of(task.bag).unwrap();
            assert_eq!(pa.theta_row, f.prior.thetas[p].w.row(row).to_owned());
            assert_eq!(pa.theta_bias, f.prior.thetas[p].b);
        }
    }

    #[test]
    fn zero_gradient_keeps_theta_rows() {
        let f = fixture(2, 0.5, 0.0, 0.0);
        let task = &f.source_tasks[0];
        let contexts = build_path_contexts(&f.prior, &f.g, &f.proj, task.bag).unwrap();
        let zero = Array2::zeros(contexts[0].xhat.dim());
        let (row, bias) = local_update_theta(
            &f.prior.thetas[0],
            task.bag,
            0.5,
            &zero,
            &f.proj,
            &contexts[0].act_deriv,
            f.proj.input_dim() - f.prior.context_dim(),
        )
        .unwrap();
        let r = f.prior.thetas[0].row_of(task.bag).unwrap();
        assert_eq!(row, f.prior.thetas[0].w.row(r).to_owned());
        assert_eq!(bias, f.prior.thetas[0].b);
    }

    #[test]
    fn scalar_toy_chain_matches_closed_form() {
        // d = 0, d_l = k = 1, identity projection: x̂ = leaky(w0), and with
        // w0 > 0 the readout is the identity, so d x̂/dθ = 1. For the loss
        // (x̂ - 2)^2 one local step must equal θ - α·2(x̂-2).
        let mut b = HminBuilder::new();
        let t = b.add_type("B", true);
        b.add_node(0, t);
        b.add_bag(0, Array2::zeros((1, 0)), vec![]);
        let g = b.finish().unwrap();
        let sg = SgConfig {
            dim: 1,
            ..SgConfig::default()
        };
        let mut table = EmbeddingTable::init(&g, 0, &sg).unwrap();
        let w0 = 0.6;
        table.w[[0, 0]] = w0;
        table.b[0] = 0.0;
        let proj = ProjectionMatrix::identity(1);
        let (ctx, act) = table.bag_context_with_grad(NodeId(0)).unwrap();
        let bag_rec = g.bag(NodeId(0)).unwrap();
        let xhat = project_bag(NodeId(0), 0, &bag_rec.instances, &ctx, &proj)
            .unwrap()
            .rows;
        assert_eq!(xhat[[0, 0]], w0);
        let alpha = 0.05;
        let d_xhat = array![[2.0 * (xhat[[0, 0]] - 2.0)]];
        let (row, bias) =
            local_update_theta(&table, NodeId(0), alpha, &d_xhat, &proj, &act, 0).unwrap();
        let expected = w0 - alpha * 2.0 * (w0 - 2.0);
        assert!((row[0] - expected).abs() < 1e-10);
        assert!((bias[0] - (0.0 - alpha * 2.0 * (w0 - 2.0))).abs() < 1e-10);
    }

    #[test]
    fn all_ones_omega_is_a_fusion_fixed_point() {
        let mut f = fixture(3, 0.0, 0.0, 0.0);
        // Single path: drop the second table.
        f.prior.thetas.truncate(1);
        let mut ones = f.prior.omega.zeros_like();
        ones.w1.fill(1.0);
        ones.w2.fill(1.0);
        ones.wi.fill(1.0);
        ones.wb.fill(1.0);
        ones.b1.fill(1.0);
        ones.b2.fill(1.0);
        ones.bi.fill(1.0);
        ones.bb.fill(1.0);
        f.prior.omega = ones.clone();
        let task = &f.source_tasks[0];
        let contexts = build_path_contexts(&f.prior, &f.g, &f.proj, task.bag).unwrap();
        let adaptation = inner_adapt(&f.prior, &f.proj, task, &contexts[..1]).unwrap();
        assert_eq!(adaptation.attention, vec![1.0]);
        assert_eq!(adaptation.fused_omega, ones);
        assert_eq!(adaptation.per_path[0].omega, ones);
    }

    #[test]
    fn literal_attention_reverses_path_weighting() {
        let f = fixture(12, 0.005, 0.005, 0.0);
        let task = &f.source_tasks[0];
        let contexts = build_path_contexts(&f.prior, &f.g, &f.proj, task.bag).unwrap();
        let negated =
            inner_adapt_signed(&f.prior, &f.proj, task, &contexts, AttentionSign::Negated).unwrap();
        let literal =
            inner_adapt_signed(&f.prior, &f.proj, task, &contexts, AttentionSign::Literal).unwrap();
        let losses: Vec<f64> = negated.per_path.iter().map(|p| p.support_loss).collect();
        assert_eq!(
            losses,
            literal.per_path.iter().map(|p| p.support_loss).collect::<Vec<_>>()
        );
        // Whichever path the negated variant favors, the literal one demotes.
        let argmax = |w: &[f64]| {
            w.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        if losses[0] != losses[1] {
            assert_ne!(argmax(&negated.attention), argmax(&literal.attention));
        }
    }

    #[test]
    fn identical_contexts_fuse_to_themselves() {
        let f = fixture(4, 0.0, 0.0, 0.0);
        let task = &f.source_tasks[0];
        let contexts = build_path_contexts(&f.prior, &f.g, &f.proj, task.bag).unwrap();
        let duplicated = vec![contexts[0].clone(), contexts[0].clone()];
        let adaptation = inner_adapt(&f.prior, &f.proj, task, &duplicated).unwrap();
        let diff = (&adaptation.fused_xhat - &contexts[0].xhat)
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12);
        assert!((adaptation.attention[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn inner_beta_step_descends_from_base() {
        let f = fixture(5, 0.005, 1e-3, 0.0);
        let mut improved = 0;
        let mut total = 0;
        for task in f.source_tasks.iter().chain(&f.target_tasks).take(50) {
            let contexts = build_path_contexts(&f.prior, &f.g, &f.proj, task.bag).unwrap();
            let adaptation = inner_adapt(&f.prior, &f.proj, task, &contexts).unwrap();
            let (post, _) = task_loss(
                &adaptation.fused_omega,
                &adaptation.fused_xhat,
                &task.support.y,
                &task.support.label_cols,
            )
            .unwrap();
            total += 1;
            if post <= adaptation.base_support_loss {
                improved += 1;
            }
        }
        assert!(
            improved * 10 >= total * 9,
            "descent on {improved}/{total} tasks"
        );
    }

    #[test]
    fn zero_gamma_leaves_prior_bit_identical() {
        let f = fixture(6, 0.0, 0.0, 0.0);
        let cfg = MetaConfig {
            batch_size: 4,
            epochs: 5,
            seed: 6,
            ..MetaConfig::default()
        };
        let before = f.prior.clone();
        let (after, history) = meta_train(f.prior, &f.g, &f.proj, &f.source_tasks, &cfg).unwrap();
        assert_eq!(after.omega, before.omega);
        assert_eq!(after.thetas, before.thetas);
        assert_eq!(history.epochs.len(), 5);
    }

    #[test]
    fn same_seed_same_history() {
        let f = fixture(7, 0.005, 0.005, 0.005);
        let cfg = MetaConfig {
            batch_size: 4,
            epochs: 3,
            seed: 7,
            ..MetaConfig::default()
        };
        let (_, h1) = meta_train(f.prior.clone(), &f.g, &f.proj, &f.source_tasks, &cfg).unwrap();
        let (_, h2) = meta_train(f.prior, &f.g, &f.proj, &f.source_tasks, &cfg).unwrap();
        assert_eq!(h1, h2);
    }

    #[test]
    fn divergence_guard_names_the_task() {
        let f = fixture(8, 0.005, 1e305, 0.005);
        let cfg = MetaConfig {
            batch_size: 4,
            epochs: 2,
            seed: 8,
            ..MetaConfig::default()
        };
        match meta_train(f.prior, &f.g, &f.proj, &f.source_tasks, &cfg) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn adapt_steps_zero_predicts_at_fused_prior() {
        let f = fixture(9, 0.005, 0.005, 0.0);
        let task = &f.target_tasks[0];
        let cfg = MetaConfig::default();
        let pred = adapt_and_predict(&f.prior, &f.g, &f.proj, task, 0, &cfg).unwrap();
        let contexts = build_path_contexts(&f.prior, &f.g, &f.proj, task.bag).unwrap();
        let adaptation = inner_adapt(&f.prior, &f.proj, task, &contexts).unwrap();
        let direct = forward(
            &adaptation.fused_omega,
            &adaptation.fused_xhat,
            &task.query.label_cols,
        )
        .unwrap();
        assert_eq!(pred.bag_scores, direct.bag_scores);
        assert_eq!(pred.support_loss_trace.len(), 1);
    }

    #[test]
    fn extra_adaptation_steps_descend_support_loss() {
        let f = fixture(10, 0.005, 1e-3, 0.0);
        let mut improved = 0;
        let mut total = 0;
        let cfg = MetaConfig::default();
        for task in f.target_tasks.iter().chain(&f.source_tasks).take(50) {
            let pred = adapt_and_predict(&f.prior, &f.g, &f.proj, task, 1, &cfg).unwrap();
            total += 1;
            if pred.support_loss_trace[1] <= pred.support_loss_trace[0] {
                improved += 1;
            }
        }
        assert!(improved * 10 >= total * 9, "descent on {improved}/{total}");
    }

    #[test]
    fn meta_training_improves_seen_label_ranking() {
        // Source tasks' query labels receive outer updates, so the trained
        // prior must rank them clearly better than the untrained one. The
        // elementwise outer chain with a larger γ compensates for the
        // gradient shrinkage the ω ⊗ ω re-initialization introduces.
        use crate::pipeline::{
            eval_predictions, init_omega, stage_adapt, stage_embed, stage_episodes,
            stage_project, stage_walk, PipelineParams,
        };
        let cfg = SynthConfig {
            num_bags: 24,
            aux_counts: vec![12, 12],
            num_labels: 9,
            communities: 3,
            instance_dim: 12,
            instances_per_bag: (4, 6),
            seed: 11,
            ..SynthConfig::default()
        };
        let (g, _) = generate_synthetic(&cfg).unwrap();
        let params = PipelineParams {
            metapaths: cfg.default_metapaths(),
            walk_length: 10,
            walks_per_node: 6,
            embed_dim: 8,
            embed_epochs: 3,
            proj_k: 12,
            ratio: 2.0 / 3.0,
            query_labels: 2,
            master_seed: 7,
            ..PipelineParams::default()
        };
        let corpus = stage_walk(&g, &params).unwrap();
        let tables = stage_embed(&g, &corpus, &params).unwrap();
        let proj = stage_project(&g, &params).unwrap();
        let (_, source_tasks, _) = stage_episodes(&g, &corpus, &params, 0).unwrap();

        let omega = init_omega(&g, &params, 0);
        let prior = GlobalPrior::new(tables.clone(), omega, 0.005, 0.005, 0.2).unwrap();
        let cfg = MetaConfig {
            batch_size: 16,
            epochs: 40,
            outer_chain: OuterChain::Elementwise,
            seed: 42,
            ..MetaConfig::default()
        };
        let (trained, history) = meta_train(prior, &g, &proj, &source_tasks, &cfg).unwrap();
        let preds = stage_adapt(&g, &proj, &trained, &source_tasks, 1, &cfg).unwrap();
        let m = eval_predictions(&preds, None).unwrap();

        let omega0 = init_omega(&g, &params, 0);
        let prior0 = GlobalPrior::new(tables, omega0, 0.005, 0.005, 0.2).unwrap();
        let preds0 = stage_adapt(&g, &proj, &prior0, &source_tasks, 0, &cfg).unwrap();
        let m0 = eval_predictions(&preds0, None).unwrap();

        assert!(
            m.auroc >= m0.auroc + 0.05,
            "trained {:.4} vs untrained {:.4}",
            m.auroc,
            m0.auroc
        );
        let first = history.epochs.first().unwrap().mean_query_loss;
        let last = history.epochs.last().unwrap().mean_query_loss;
        assert!(last < first, "query loss {first:.4} -> {last:.4}");
    }

    #[test]
    fn history_text_is_tab_separated() {
        let history = TrainHistory {
            epochs: vec![EpochRecord {
                epoch: 0,
                mean_support_loss: 1.5,
                mean_query_loss: 2.5,
                mean_attention_entropy: 0.69,
            }],
            steps: vec![],
        };
        let text = history.to_text();
        assert!(text.contains("0\t1.5\t2.5\t0.69"));
    }

    #[test]
    fn prior_round_trips_through_checkpoint() {
        let f = fixture(11, 0.005, 0.005, 0.005);
        let dir = tempfile::tempdir().unwrap();
        f.prior.save(dir.path()).unwrap();
        let loaded = GlobalPrior::load(dir.path(), f.prior.num_paths(), 0.005, 0.005, 0.005).unwrap();
        assert_eq!(loaded.omega, f.prior.omega);
        for (a, b) in loaded.thetas.iter().zip(&f.prior.thetas) {
            assert_eq!(a.w, b.w);
            assert_eq!(a.b, b.b);
        }
    }

}

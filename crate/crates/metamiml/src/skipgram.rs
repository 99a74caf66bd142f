//! Per-meta-path skip-gram context learner.
//!
//! Trains negative-sampling skip-gram embeddings over one meta-path's walk
//! corpus (center table W, context table C, negatives drawn from the
//! unigram^{3/4} distribution restricted to the context node's type) and
//! reads out bag context vectors as `leaky_relu(W[bag] + b)`. The readout
//! exposes its activation derivative so local and outer updates can route
//! gradients into the bag's embedding row and the bias.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::hmin::{Hmin, NodeId};
use crate::seed::rng_for;
use crate::walks::WalkCorpus;

/// Skip-gram training parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SgConfig {
    /// Symmetric window radius for (center, context) pairs.
    pub window: usize,
    /// Negatives drawn per positive pair.
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Leaky-ReLU slope used at readout.
    pub leaky_slope: f64,
    /// Embedding dimension d_l.
    pub dim: usize,
    pub seed: u64,
}

impl Default for SgConfig {
    fn default() -> Self {
        SgConfig {
            window: 4,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            leaky_slope: 0.01,
            dim: 32,
            seed: 0,
        }
    }
}

impl SgConfig {
    fn check(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::InvalidConfig("window must be >= 1".into()));
        }
        if self.negatives < 1 {
            return Err(Error::InvalidConfig("negatives must be >= 1".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "leaky slope must lie in (0,1), got {}",
                self.leaky_slope
            )));
        }
        if self.dim == 0 {
            return Err(Error::InvalidConfig("embedding dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// Trained embedding parameters for one meta-path.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    /// Node ids in ascending order; row i of `w`/`c` belongs to node_ids[i].
    node_ids: Vec<NodeId>,
    /// Center embeddings, |V| × d_l.
    pub w: Array2<f64>,
    /// Context embeddings (negative-sampling dual table), |V| × d_l.
    pub c: Array2<f64>,
    /// Readout bias, length d_l.
    pub b: Array1<f64>,
    pub dim: usize,
    pub path_index: usize,
    pub leaky_slope: f64,
}

impl EmbeddingTable {
    /// Fresh table with word2vec-style initialization: W and C uniform in
    /// [-0.5/d_l, 0.5/d_l], bias zero. Deterministic under the seed.
    pub fn init(g: &Hmin, path_index: usize, cfg: &SgConfig) -> Result<EmbeddingTable> {
        cfg.check()?;
        let n = g.num_nodes();
        let node_ids: Vec<NodeId> = (0..n).map(|i| g.node_at(i)).collect();
        let mut rng = rng_for(cfg.seed, &format!("sg-init/path{path_index}"));
        let half = 0.5 / cfg.dim as f64;
        let mut draw = |rows: usize| {
            Array2::from_shape_fn((rows, cfg.dim), |_| rng.random::<f64>() * 2.0 * half - half)
        };
        let w = draw(n);
        let c = draw(n);
        Ok(EmbeddingTable {
            node_ids,
            w,
            c,
            b: Array1::zeros(cfg.dim),
            dim: cfg.dim,
            path_index,
            leaky_slope: cfg.leaky_slope,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn row_of(&self, node: NodeId) -> Result<usize> {
        self.node_ids
            .binary_search(&node)
            .map_err(|_| Error::UnknownNode(node.0))
    }

    /// Context vector X = `leaky_relu(W[node] + b)`. Pure in (table, node).
    pub fn bag_context(&self, node: NodeId) -> Result<Array1<f64>> {
        Ok(self.bag_context_with_grad(node)?.0)
    }

    /// Context vector plus the activation derivative σ'(pre), the diagonal
    /// of `dX/d(W[node])` (and equally dX/db).
    pub fn bag_context_with_grad(&self, node: NodeId) -> Result<(Array1<f64>, Array1<f64>)> {
        let row = self.row_of(node)?;
        let pre = &self.w.row(row) + &self.b;
        let slope = self.leaky_slope;
        let x = pre.mapv(|v| if v > 0.0 { v } else { slope * v });
        let deriv = pre.mapv(|v| if v > 0.0 { 1.0 } else { slope });
        Ok((x, deriv))
    }

    /// `SGEMB v1` text: header, one `<id> <W row>` line per node, a BIAS
    /// line, and a SLOPE line so the readout is self-contained.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "SGEMB v1 {} {} {}",
            self.node_ids.len(),
            self.dim,
            self.path_index
        );
        for (i, id) in self.node_ids.iter().enumerate() {
            let _ = write!(s, "{}", id.0);
            for v in self.w.row(i) {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        s.push_str("BIAS");
        for v in &self.b {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
        let _ = writeln!(s, "SLOPE {}", self.leaky_slope);
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Load W and b from an `SGEMB v1` file. The context table C is training
    /// state and is not persisted; a loaded table reads out and adapts but
    /// cannot resume skip-gram training.
    pub fn load(path: &Path) -> Result<EmbeddingTable> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<EmbeddingTable> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::MalformedHeader {
            line: 1,
            detail: "empty embedding file".into(),
        })?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let ["SGEMB", "v1", n, dim, path_index] = parts[..] else {
            return Err(Error::MalformedHeader {
                line: 1,
                detail: "expected 'SGEMB v1 <|V|> <d_l> <path>'".into(),
            });
        };
        let bad_header = |d: String| Error::MalformedHeader { line: 1, detail: d };
        let n: usize = n.parse().map_err(|_| bad_header(format!("bad |V| '{n}'")))?;
        let dim: usize = dim
            .parse()
            .map_err(|_| bad_header(format!("bad d_l '{dim}'")))?;
        let path_index: usize = path_index
            .parse()
            .map_err(|_| bad_header(format!("bad path '{path_index}'")))?;

        let mut node_ids = Vec::with_capacity(n);
        let mut w = Array2::zeros((n, dim));
        let mut b = Array1::zeros(dim);
        let mut slope = 0.01;
        let mut row = 0usize;
        for (ln, line) in lines {
            let lineno = ln + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut tok = line.split_whitespace();
            let first = tok.next().unwrap();
            let floats = |tok: std::str::SplitWhitespace<'_>| -> Result<Vec<f64>> {
                tok.map(|t| {
                    t.parse::<f64>().map_err(|_| Error::MalformedRecord {
                        line: lineno,
                        detail: format!("bad float '{t}'"),
                    })
                })
                .collect()
            };
            match first {
                "BIAS" => {
                    let vals = floats(tok)?;
                    if vals.len() != dim {
                        return Err(Error::DimensionMismatch {
                            line: lineno,
                            expected: dim,
                            got: vals.len(),
                        });
                    }
                    b = Array1::from_vec(vals);
                }
                "SLOPE" => {
                    slope = tok
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::MalformedRecord {
                            line: lineno,
                            detail: "bad SLOPE line".into(),
                        })?;
                }
                id => {
                    let id: u32 = id.parse().map_err(|_| Error::MalformedRecord {
                        line: lineno,
                        detail: format!("bad node id '{id}'"),
                    })?;
                    let vals = floats(tok)?;
                    if vals.len() != dim {
                        return Err(Error::DimensionMismatch {
                            line: lineno,
                            expected: dim,
                            got: vals.len(),
                        });
                    }
                    if row >= n {
                        return Err(Error::MalformedRecord {
                            line: lineno,
                            detail: "more node rows than declared".into(),
                        });
                    }
                    node_ids.push(NodeId(id));
                    for (j, v) in vals.into_iter().enumerate() {
                        w[[row, j]] = v;
                    }
                    row += 1;
                }
            }
        }
        if row != n {
            return Err(Error::MalformedRecord {
                line: 0,
                detail: format!("embedding file declares {n} nodes but has {row} rows"),
            });
        }
        let c = Array2::zeros((n, dim));
        Ok(EmbeddingTable {
            node_ids,
            w,
            c,
            b,
            dim,
            path_index,
            leaky_slope: slope,
        })
    }
}

/// All (center, context) index pairs of a walk within a symmetric window.
/// Centers advance left to right; contexts run left to right within each
/// window. A walk `[a,b,c]` with window 1 yields (a,b),(b,a),(b,c),(c,b).
pub fn window_pairs(walk_len: usize, window: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for center in 0..walk_len {
        let lo = center.saturating_sub(window);
        let hi = (center + window).min(walk_len.saturating_sub(1));
        for ctx in lo..=hi {
            if ctx != center {
                out.push((center, ctx));
            }
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// ln(sigmoid(x)) computed stably.
fn ln_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(1.0 + (-x).exp()).ln()
    } else {
        x - (1.0 + x.exp()).ln()
    }
}

/// Per-type cumulative unigram^{3/4} sampler.
struct NegativeSampler {
    /// For each node type: (dense node rows, cumulative weights).
    per_type: Vec<(Vec<usize>, Vec<f64>)>,
}

impl NegativeSampler {
    fn build(g: &Hmin, counts: &[u64]) -> NegativeSampler {
        let mut per_type = Vec::with_capacity(g.types().len());
        for t in 0..g.types().len() {
            let mut rows = Vec::new();
            let mut cum = Vec::new();
            let mut total = 0.0;
            for (row, &count) in counts.iter().enumerate() {
                if count == 0 {
                    continue;
                }
                let node = g.node_at(row);
                if g.node_type(node).unwrap().0 != t {
                    continue;
                }
                total += (count as f64).powf(0.75);
                rows.push(row);
                cum.push(total);
            }
            per_type.push((rows, cum));
        }
        NegativeSampler { per_type }
    }

    fn sample(&self, type_index: usize, rng: &mut impl Rng) -> Option<usize> {
        let (rows, cum) = &self.per_type[type_index];
        let total = *cum.last()?;
        let x = rng.random::<f64>() * total;
        let i = cum.partition_point(|&c| c <= x).min(rows.len() - 1);
        Some(rows[i])
    }
}

/// One trained table plus its per-epoch mean pair loss.
pub struct SgTrainResult {
    pub table: EmbeddingTable,
    /// Mean negative-sampling objective (-ln σ(pos) - Σ ln σ(-neg)) per
    /// training pair, one entry per epoch.
    pub epoch_loss: Vec<f64>,
}

/// Train a skip-gram table over `corpus`'s walks for meta-path `path_index`.
///
/// Updates are serialized in corpus order (no lock-free writes), so the
/// result is bit-identical for a given (corpus, config).
pub fn train_skipgram(
    corpus: &WalkCorpus,
    g: &Hmin,
    path_index: usize,
    cfg: &SgConfig,
) -> Result<SgTrainResult> {
    cfg.check()?;
    if path_index >= corpus.paths.len() || corpus.walks_for(path_index).is_empty() {
        return Err(Error::EmptyCorpusForPath(path_index));
    }
    let mut table = EmbeddingTable::init(g, path_index, cfg)?;

    // Dense-row form of the walks, plus occurrence counts for the sampler.
    let mut counts = vec![0u64; g.num_nodes()];
    let walks: Vec<Vec<usize>> = corpus
        .walks_for(path_index)
        .iter()
        .map(|walk| {
            walk.nodes
                .iter()
                .map(|&n| {
                    let row = g.index_of(n)?;
                    counts[row] += 1;
                    Ok(row)
                })
                .collect::<Result<Vec<usize>>>()
        })
        .collect::<Result<_>>()?;
    let sampler = NegativeSampler::build(g, &counts);
    let type_of_row: Vec<usize> = (0..g.num_nodes())
        .map(|row| g.node_type(g.node_at(row)).unwrap().0)
        .collect();

    let mut rng = rng_for(cfg.seed, &format!("sg-train/path{path_index}"));
    let lr = cfg.learning_rate;
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut center_grad = vec![0.0f64; cfg.dim];

    for _epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut pairs = 0usize;
        for walk in &walks {
            for (ci, xi) in window_pairs(walk.len(), cfg.window) {
                let center = walk[ci];
                let ctx = walk[xi];
                pairs += 1;
                center_grad.iter_mut().for_each(|v| *v = 0.0);

                let dot: f64 = (0..cfg.dim).map(|t| table.w[[center, t]] * table.c[[ctx, t]]).sum();
                loss_sum -= ln_sigmoid(dot);
                let gpos = sigmoid(dot) - 1.0;
                for (t, cg) in center_grad.iter_mut().enumerate() {
                    *cg += gpos * table.c[[ctx, t]];
                    table.c[[ctx, t]] -= lr * gpos * table.w[[center, t]];
                }

                for _ in 0..cfg.negatives {
                    let mut neg = None;
                    for _try in 0..3 {
                        match sampler.sample(type_of_row[ctx], &mut rng) {
                            Some(n) if n != ctx => {
                                neg = Some(n);
                                break;
                            }
                            Some(_) => continue,
                            None => break,
                        }
                    }
                    let Some(neg) = neg else { continue };
                    let dotn: f64 =
                        (0..cfg.dim).map(|t| table.w[[center, t]] * table.c[[neg, t]]).sum();
                    loss_sum -= ln_sigmoid(-dotn);
                    let gneg = sigmoid(dotn);
                    for (t, cg) in center_grad.iter_mut().enumerate() {
                        *cg += gneg * table.c[[neg, t]];
                        table.c[[neg, t]] -= lr * gneg * table.w[[center, t]];
                    }
                }

                for (t, cg) in center_grad.iter().enumerate() {
                    table.w[[center, t]] -= lr * cg;
                }
            }
        }
        epoch_loss.push(if pairs == 0 { 0.0 } else { loss_sum / pairs as f64 });
    }
    Ok(SgTrainResult { table, epoch_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walks::{generate_corpus, parse_metapath, WalkConfig};

    fn two_clique_graph() -> Hmin {
        // Two disjoint bag-aux cliques; walks never cross components.
        let mut text = String::from("HMIN v1\nT G BAG\nT D\nR gd G D\n");
        for id in [0u32, 1, 2, 10, 11, 12] {
            text += &format!("N {id} G\n");
        }
        for id in [5u32, 6, 15, 16] {
            text += &format!("N {id} D\n");
        }
        for b in [0u32, 1, 2] {
            for d in [5u32, 6] {
                text += &format!("E gd {b} {d}\n");
            }
        }
        for b in [10u32, 11, 12] {
            for d in [15u32, 16] {
                text += &format!("E gd {b} {d}\n");
            }
        }
        for b in [0u32, 1, 2, 10, 11, 12] {
            text += &format!("B {b} 1 1\n0\nY\n");
        }
        Hmin::parse(&text).unwrap()
    }

    fn toy_corpus(g: &Hmin, seed: u64) -> WalkCorpus {
        let p = parse_metapath("G-D-G", g).unwrap();
        generate_corpus(
            g,
            vec![p],
            WalkConfig {
                num_walks: 6,
                walk_length: 8,
                seed,
            },
        )
        .unwrap()
    }

    #[test]
    fn window_pair_enumeration() {
        // walk [a,b,c] with window 1
        assert_eq!(window_pairs(3, 1), vec![(0, 1), (1, 0), (1, 2), (2, 1)]);
        assert_eq!(window_pairs(1, 4), vec![]);
    }

    #[test]
    fn zero_epochs_is_initialization() {
        let g = two_clique_graph();
        let corpus = toy_corpus(&g, 4);
        let cfg = SgConfig {
            epochs: 0,
            dim: 8,
            seed: 21,
            ..SgConfig::default()
        };
        let trained = train_skipgram(&corpus, &g, 0, &cfg).unwrap();
        let init = EmbeddingTable::init(&g, 0, &cfg).unwrap();
        assert_eq!(trained.table, init);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let g = two_clique_graph();
        let corpus = toy_corpus(&g, 4);
        let cfg = SgConfig {
            epochs: 3,
            dim: 8,
            seed: 9,
            ..SgConfig::default()
        };
        let a = train_skipgram(&corpus, &g, 0, &cfg).unwrap();
        let b = train_skipgram(&corpus, &g, 0, &cfg).unwrap();
        assert_eq!(a.table, b.table);
        assert_eq!(a.epoch_loss, b.epoch_loss);
    }

    #[test]
    fn empty_corpus_for_path_rejected() {
        let g = two_clique_graph();
        let corpus = toy_corpus(&g, 4);
        assert!(matches!(
            train_skipgram(&corpus, &g, 1, &SgConfig::default()),
            Err(Error::EmptyCorpusForPath(1))
        ));
    }

    fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
        let na = a.dot(&a).sqrt();
        let nb = b.dot(&b).sqrt();
        a.dot(&b) / (na * nb)
    }

    #[test]
    fn components_separate_after_training() {
        let g = two_clique_graph();
        let corpus = toy_corpus(&g, 4);
        let cfg = SgConfig {
            epochs: 20,
            dim: 8,
            seed: 33,
            ..SgConfig::default()
        };
        let trained = train_skipgram(&corpus, &g, 0, &cfg).unwrap();
        let comp_a = [0u32, 1, 2, 5, 6];
        let comp_b = [10u32, 11, 12, 15, 16];
        let row = |id: u32| trained.table.row_of(NodeId(id)).unwrap();
        let mut within = Vec::new();
        let mut cross = Vec::new();
        for group in [&comp_a, &comp_b] {
            for i in 0..group.len() {
                for j in (i + 1)..group.len() {
                    within.push(cosine(
                        trained.table.w.row(row(group[i])),
                        trained.table.w.row(row(group[j])),
                    ));
                }
            }
        }
        for &a in &comp_a {
            for &b in &comp_b {
                cross.push(cosine(trained.table.w.row(row(a)), trained.table.w.row(row(b))));
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&within) > mean(&cross),
            "within {} vs cross {}",
            mean(&within),
            mean(&cross)
        );
    }

    #[test]
    fn loss_window_means_non_increasing() {
        let g = two_clique_graph();
        let corpus = toy_corpus(&g, 4);
        let cfg = SgConfig {
            epochs: 15,
            dim: 8,
            learning_rate: 1e-2,
            seed: 2,
            ..SgConfig::default()
        };
        let trained = train_skipgram(&corpus, &g, 0, &cfg).unwrap();
        let means: Vec<f64> = trained
            .epoch_loss
            .windows(5)
            .map(|w| w.iter().sum::<f64>() / 5.0)
            .collect();
        for pair in means.windows(2) {
            assert!(
                pair[1] <= pair[0],
                "5-epoch window means increased: {means:?}"
            );
        }
    }

    #[test]
    fn bag_context_is_leaky_relu_readout() {
        let g = two_clique_graph();
        let cfg = SgConfig {
            dim: 2,
            ..SgConfig::default()
        };
        let mut table = EmbeddingTable::init(&g, 0, &cfg).unwrap();
        let row = table.row_of(NodeId(0)).unwrap();
        table.w[[row, 0]] = -1.0;
        table.w[[row, 1]] = 2.0;
        table.b[0] = 0.0;
        table.b[1] = 0.0;
        let x = table.bag_context(NodeId(0)).unwrap();
        assert_eq!(x.as_slice().unwrap(), &[-0.01, 2.0]);

        table.w[[row, 0]] = 0.0;
        table.w[[row, 1]] = 0.0;
        let x = table.bag_context(NodeId(0)).unwrap();
        assert_eq!(x.as_slice().unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn bag_context_gradient_matches_finite_differences() {
        let g = two_clique_graph();
        let cfg = SgConfig {
            dim: 6,
            seed: 5,
            ..SgConfig::default()
        };
        let mut table = EmbeddingTable::init(&g, 0, &cfg).unwrap();
        let row = table.row_of(NodeId(1)).unwrap();
        // Keep pre-activations away from the kink.
        for t in 0..6 {
            table.w[[row, t]] = if t % 2 == 0 { 0.7 + t as f64 } else { -0.9 - t as f64 };
        }
        let (_, deriv) = table.bag_context_with_grad(NodeId(1)).unwrap();
        let h = 1e-5;
        for t in 0..6 {
            let orig = table.w[[row, t]];
            table.w[[row, t]] = orig + h;
            let plus = table.bag_context(NodeId(1)).unwrap()[t];
            table.w[[row, t]] = orig - h;
            let minus = table.bag_context(NodeId(1)).unwrap()[t];
            table.w[[row, t]] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let rel = (fd - deriv[t]).abs() / deriv[t].abs().max(1e-12);
            assert!(rel < 1e-6, "coord {t}: fd {fd} vs analytic {}", deriv[t]);
        }
    }

    #[test]
    fn embedding_round_trips_through_text() {
        let g = two_clique_graph();
        let corpus = toy_corpus(&g, 4);
        let cfg = SgConfig {
            epochs: 2,
            dim: 4,
            seed: 8,
            ..SgConfig::default()
        };
        let trained = train_skipgram(&corpus, &g, 0, &cfg).unwrap();
        let parsed = EmbeddingTable::parse(&trained.table.to_text()).unwrap();
        assert_eq!(parsed.w, trained.table.w);
        assert_eq!(parsed.b, trained.table.b);
        assert_eq!(parsed.leaky_slope, trained.table.leaky_slope);
        assert_eq!(parsed.to_text(), trained.table.to_text());
    }
}

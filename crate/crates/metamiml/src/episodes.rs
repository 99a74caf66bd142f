//! Source/target splitting and per-bag support/query task construction.
//!
//! Labels and bags are each partitioned at the configured ratio. One task is
//! built per bag: its query label subset is sampled from its side's label
//! pool, the support subset is the remainder, and the bag's direct graph
//! neighbors are split disjointly between the support and query sides.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::hmin::{Hmin, LabelId, NodeId};
use crate::seed::rng_for;
use crate::walks::WalkCorpus;

/// Disjoint, exhaustive partition of labels and bags.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub source_labels: Vec<LabelId>,
    pub target_labels: Vec<LabelId>,
    pub source_bags: Vec<NodeId>,
    pub target_bags: Vec<NodeId>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

impl SplitSpec {
    pub fn side_of_bag(&self, bag: NodeId) -> Option<Side> {
        if self.source_bags.binary_search(&bag).is_ok() {
            Some(Side::Source)
        } else if self.target_bags.binary_search(&bag).is_ok() {
            Some(Side::Target)
        } else {
            None
        }
    }

    pub fn label_pool(&self, side: Side) -> &[LabelId] {
        match side {
            Side::Source => &self.source_labels,
            Side::Target => &self.target_labels,
        }
    }

    pub fn bag_pool(&self, side: Side) -> &[NodeId] {
        match side {
            Side::Source => &self.source_bags,
            Side::Target => &self.target_bags,
        }
    }

    /// Split file: one line per entry, so experiments are auditable.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "SPLIT v1 seed={}", self.seed);
        for (tag, labels) in [("SL", &self.source_labels), ("TL", &self.target_labels)] {
            let _ = write!(s, "{tag}");
            for l in labels.iter() {
                let _ = write!(s, " {}", l.0);
            }
            s.push('\n');
        }
        for (tag, bags) in [("SB", &self.source_bags), ("TB", &self.target_bags)] {
            let _ = write!(s, "{tag}");
            for b in bags.iter() {
                let _ = write!(s, " {}", b.0);
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<SplitSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<SplitSpec> {
        let mut spec = SplitSpec {
            source_labels: vec![],
            target_labels: vec![],
            source_bags: vec![],
            target_bags: vec![],
            seed: 0,
        };
        for (n, line) in text.lines().enumerate() {
            let lineno = n + 1;
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("SPLIT") => {
                    for kv in tok {
                        if let Some(v) = kv.strip_prefix("seed=") {
                            spec.seed = v.parse().map_err(|_| Error::MalformedHeader {
                                line: lineno,
                                detail: format!("bad seed '{v}'"),
                            })?;
                        }
                    }
                }
                Some(tag @ ("SL" | "TL")) => {
                    let ids: std::result::Result<Vec<u32>, _> =
                        tok.map(|t| t.parse::<u32>()).collect();
                    let ids = ids.map_err(|_| Error::MalformedRecord {
                        line: lineno,
                        detail: "bad label id".into(),
                    })?;
                    let out = ids.into_iter().map(LabelId).collect();
                    if tag == "SL" {
                        spec.source_labels = out;
                    } else {
                        spec.target_labels = out;
                    }
                }
                Some(tag @ ("SB" | "TB")) => {
                    let ids: std::result::Result<Vec<u32>, _> =
                        tok.map(|t| t.parse::<u32>()).collect();
                    let ids = ids.map_err(|_| Error::MalformedRecord {
                        line: lineno,
                        detail: "bad bag id".into(),
                    })?;
                    let out = ids.into_iter().map(NodeId).collect();
                    if tag == "SB" {
                        spec.source_bags = out;
                    } else {
                        spec.target_bags = out;
                    }
                }
                Some(other) => {
                    return Err(Error::MalformedRecord {
                        line: lineno,
                        detail: format!("unknown split tag '{other}'"),
                    })
                }
                None => continue,
            }
        }
        Ok(spec)
    }
}

fn partition<T: Copy + Ord>(items: &[T], ratio: f64, rng: &mut impl Rng) -> (Vec<T>, Vec<T>) {
    let mut shuffled: Vec<T> = items.to_vec();
    shuffled.shuffle(rng);
    let n = items.len();
    let take = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let mut first: Vec<T> = shuffled[..take].to_vec();
    let mut second: Vec<T> = shuffled[take..].to_vec();
    first.sort();
    second.sort();
    (first, second)
}

/// Uniform random disjoint partition of labels and of bags at `ratio`
/// (the source fraction). Deterministic under `seed`.
pub fn split_source_target(g: &Hmin, ratio: f64, seed: u64) -> Result<SplitSpec> {
    if !(0.0 < ratio && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "split ratio must lie in (0,1), got {ratio}"
        )));
    }
    let labels: Vec<LabelId> = g.labels().iter().map(|(id, _)| *id).collect();
    let bags = g.bag_nodes();
    if labels.len() < 2 {
        return Err(Error::InvalidConfig(
            "need at least 2 labels to split".into(),
        ));
    }
    if bags.len() < 2 {
        return Err(Error::InvalidConfig("need at least 2 bags to split".into()));
    }
    let mut rng = rng_for(seed, "split/labels");
    let (source_labels, target_labels) = partition(&labels, ratio, &mut rng);
    let mut rng = rng_for(seed, "split/bags");
    let (source_bags, target_bags) = partition(&bags, ratio, &mut rng);
    Ok(SplitSpec {
        source_labels,
        target_labels,
        source_bags,
        target_bags,
        seed,
    })
}

/// One side (support or query) of a task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSide {
    /// Direct graph neighbors assigned to this side, sorted.
    pub direct_context: Vec<NodeId>,
    /// Per meta-path: distinct nodes reached from the bag in the walk corpus.
    pub path_contexts: Vec<Vec<NodeId>>,
    /// This side's label subset, sorted.
    pub labels: Vec<LabelId>,
    /// Column indices of `labels` in the network's label universe.
    pub label_cols: Vec<usize>,
    /// 0/1 indicator of the bag's membership in each subset label.
    pub y: Array1<f64>,
}

/// A per-bag episode: disjoint support/query label subsets and direct
/// contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub bag: NodeId,
    pub side: Side,
    pub support: TaskSide,
    pub query: TaskSide,
    /// Set when the bag has no graph neighbors at all; the task is still
    /// emitted with empty direct contexts.
    pub isolated: bool,
}

fn make_side(
    g: &Hmin,
    bag: NodeId,
    direct: Vec<NodeId>,
    path_contexts: Vec<Vec<NodeId>>,
    mut labels: Vec<LabelId>,
) -> Result<TaskSide> {
    labels.sort();
    let bag_rec = g
        .bag(bag)
        .ok_or_else(|| Error::InvalidConfig(format!("node {} has no bag record", bag.0)))?;
    let y = Array1::from_iter(
        labels
            .iter()
            .map(|&l| if bag_rec.has_label(l) { 1.0 } else { 0.0 }),
    );
    let label_cols = labels
        .iter()
        .map(|&l| {
            g.label_index(l)
                .ok_or_else(|| Error::InvalidConfig(format!("label {} not in universe", l.0)))
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(TaskSide {
        direct_context: direct,
        path_contexts,
        labels,
        label_cols,
        y,
    })
}

/// Build the task for one bag: `query_labels` labels sampled uniformly from
/// the bag's side pool form the query subset, the remainder the support
/// subset; direct neighbors alternate between sides by sorted position
/// (even → support, odd → query).
pub fn build_task(
    g: &Hmin,
    corpus: &WalkCorpus,
    bag: NodeId,
    split: &SplitSpec,
    query_labels: usize,
    seed: u64,
) -> Result<Task> {
    let side = split
        .side_of_bag(bag)
        .ok_or_else(|| Error::InvalidConfig(format!("bag {} is not in the split", bag.0)))?;
    let pool = split.label_pool(side);
    if query_labels == 0 || query_labels >= pool.len() {
        return Err(Error::InvalidConfig(format!(
            "query_labels must lie in [1, {}), got {query_labels}",
            pool.len()
        )));
    }
    let mut rng = rng_for(seed, &format!("task/bag{}", bag.0));
    let mut shuffled: Vec<LabelId> = pool.to_vec();
    shuffled.shuffle(&mut rng);
    let query_subset: Vec<LabelId> = shuffled[..query_labels].to_vec();
    let support_subset: Vec<LabelId> = shuffled[query_labels..].to_vec();

    let neighbors = g.neighbors(bag)?;
    let isolated = neighbors.is_empty();
    let mut support_dir = Vec::new();
    let mut query_dir = Vec::new();
    for (i, n) in neighbors.into_iter().enumerate() {
        if i % 2 == 0 {
            support_dir.push(n);
        } else {
            query_dir.push(n);
        }
    }
    let path_contexts: Vec<Vec<NodeId>> = (0..corpus.paths.len())
        .map(|p| corpus.reached_from(p, bag))
        .collect();

    Ok(Task {
        bag,
        side,
        support: make_side(g, bag, support_dir, path_contexts.clone(), support_subset)?,
        query: make_side(g, bag, query_dir, path_contexts, query_subset)?,
        isolated,
    })
}

/// One task per bag of `side`'s pool, each with its own derived RNG stream.
pub fn build_tasks(
    g: &Hmin,
    corpus: &WalkCorpus,
    split: &SplitSpec,
    side: Side,
    query_labels: usize,
    seed: u64,
) -> Result<Vec<Task>> {
    split
        .bag_pool(side)
        .iter()
        .map(|&bag| build_task(g, corpus, bag, split, query_labels, seed))
        .collect()
}

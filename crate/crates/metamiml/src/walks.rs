//! Meta-path parsing and meta-path-constrained random-walk corpora.
//!
//! A meta-path is a type sequence rooted at the bag type, e.g. `G-D-G`. A
//! walk from a bag follows the sequence and then keeps cycling through it
//! (after the last type the pattern restarts at index 1, so `G-D-G` walks
//! G,D,G,D,G,...). When no neighbor of the required type exists the walk
//! truncates.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hmin::{Hmin, NodeId, NodeTypeId};
use crate::seed::rng_for;

/// A bag-rooted type sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaPath {
    types: Vec<NodeTypeId>,
    display: String,
}

impl MetaPath {
    pub fn types(&self) -> &[NodeTypeId] {
        &self.types
    }

    pub fn display(&self) -> &str {
        &self.display
    }

    /// Node type expected at walk position `pos` (0 = the start bag). The
    /// pattern recycles from index 1 after its last element.
    pub fn type_at(&self, pos: usize) -> NodeTypeId {
        if pos == 0 {
            self.types[0]
        } else {
            let cycle = self.types.len() - 1;
            self.types[(pos - 1) % cycle + 1]
        }
    }
}

/// Parse a dash-separated type-name sequence against `g`'s schema.
pub fn parse_metapath(text: &str, g: &Hmin) -> Result<MetaPath> {
    let names: Vec<&str> = text.split('-').map(str::trim).collect();
    if names.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "meta-path '{text}' must have at least two types"
        )));
    }
    let mut types = Vec::with_capacity(names.len());
    for name in &names {
        types.push(
            g.type_by_name(name)
                .ok_or_else(|| Error::UnknownType(name.to_string()))?,
        );
    }
    let bag = g.bag_type();
    if types[0] != bag {
        return Err(Error::MetaPathNotBagRooted {
            bag: g.types()[bag.0].name.clone(),
            got: names[0].to_string(),
        });
    }
    for w in types.windows(2) {
        let connected = g.relations().iter().any(|r| {
            (r.type_a == w[0] && r.type_b == w[1]) || (r.type_a == w[1] && r.type_b == w[0])
        });
        if !connected {
            return Err(Error::MetaPathDisconnected {
                a: g.types()[w[0].0].name.clone(),
                b: g.types()[w[1].0].name.clone(),
                path: text.to_string(),
            });
        }
    }
    Ok(MetaPath {
        types,
        display: names.join("-"),
    })
}

/// One sampled walk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Walk {
    pub nodes: Vec<NodeId>,
    pub path_index: usize,
    pub start: NodeId,
}

/// Sample a single walk of at most `l` steps from `start` along `p`.
/// Each step picks uniformly among neighbors of the pattern's next type.
pub fn sample_walk(
    g: &Hmin,
    start: NodeId,
    p: &MetaPath,
    l: usize,
    rng: &mut impl Rng,
) -> Result<Walk> {
    if g.node_type(start)? != g.bag_type() {
        return Err(Error::StartNotBag(start.0));
    }
    let mut nodes = vec![start];
    let mut current = start;
    for pos in 1..=l {
        let want = p.type_at(pos);
        let candidates = g.neighbors_of_type(current, want)?;
        if candidates.is_empty() {
            break;
        }
        current = candidates[rng.random_range(0..candidates.len())];
        nodes.push(current);
    }
    Ok(Walk {
        nodes,
        path_index: 0,
        start,
    })
}

/// Generation parameters for a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkConfig {
    /// Walks started per bag node per meta-path.
    pub num_walks: usize,
    /// Maximum steps per walk (walk holds at most `walk_length + 1` nodes).
    pub walk_length: usize,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        // l=40, w=10 mirror the usual metapath2vec walking setup.
        WalkConfig {
            num_walks: 10,
            walk_length: 40,
            seed: 0,
        }
    }
}

/// All walks for a set of meta-paths, grouped by path.
#[derive(Debug, Clone)]
pub struct WalkCorpus {
    pub paths: Vec<MetaPath>,
    /// `walks_by_path[p]` holds num_walks walks per bag, in (bag, repeat) order.
    pub walks_by_path: Vec<Vec<Walk>>,
    pub config: WalkConfig,
}

impl WalkCorpus {
    pub fn walks_for(&self, path_index: usize) -> &[Walk] {
        &self.walks_by_path[path_index]
    }

    pub fn total_walks(&self) -> usize {
        self.walks_by_path.iter().map(Vec::len).sum()
    }

    /// Distinct non-start nodes reached from `bag` along path `p`, sorted.
    pub fn reached_from(&self, path_index: usize, bag: NodeId) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self.walks_by_path[path_index]
            .iter()
            .filter(|w| w.start == bag)
            .flat_map(|w| w.nodes.iter().copied().skip(1))
            .filter(|&n| n != bag)
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Serialize: header lines, then one walk per line prefixed `P<path_index>`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "WALKS v1 w={} l={} seed={}",
            self.config.num_walks, self.config.walk_length, self.config.seed
        );
        for (i, p) in self.paths.iter().enumerate() {
            let _ = writeln!(s, "M {} {}", i, p.display());
        }
        for (i, walks) in self.walks_by_path.iter().enumerate() {
            for w in walks {
                let _ = write!(s, "P{i}");
                for n in &w.nodes {
                    let _ = write!(s, " {}", n.0);
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Parse a corpus file; meta-paths are re-validated against `g`.
    pub fn load(path: &Path, g: &Hmin) -> Result<WalkCorpus> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, g)
    }

    pub fn parse(text: &str, g: &Hmin) -> Result<WalkCorpus> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::MalformedHeader {
            line: 1,
            detail: "empty corpus file".into(),
        })?;
        let mut config = WalkConfig::default();
        let mut tok = header.split_whitespace();
        if tok.next() != Some("WALKS") || tok.next() != Some("v1") {
            return Err(Error::MalformedHeader {
                line: 1,
                detail: "expected 'WALKS v1 ...'".into(),
            });
        }
        for kv in tok {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::MalformedHeader {
                line: 1,
                detail: format!("bad header field '{kv}'"),
            })?;
            let parse_err = |_| Error::MalformedHeader {
                line: 1,
                detail: format!("bad value in '{kv}'"),
            };
            match k {
                "w" => config.num_walks = v.parse().map_err(parse_err)?,
                "l" => config.walk_length = v.parse().map_err(parse_err)?,
                "seed" => config.seed = v.parse().map_err(parse_err)?,
                _ => {
                    return Err(Error::MalformedHeader {
                        line: 1,
                        detail: format!("unknown header field '{k}'"),
                    })
                }
            }
        }
        let mut paths: Vec<MetaPath> = Vec::new();
        let mut walks_by_path: Vec<Vec<Walk>> = Vec::new();
        for (n, line) in lines {
            let lineno = n + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("M ") {
                let (idx, display) =
                    rest.split_once(' ')
                        .ok_or_else(|| Error::MalformedRecord {
                            line: lineno,
                            detail: "M expects: M <index> <display>".into(),
                        })?;
                let idx: usize = idx.parse().map_err(|_| Error::MalformedRecord {
                    line: lineno,
                    detail: format!("bad path index '{idx}'"),
                })?;
                if idx != paths.len() {
                    return Err(Error::MalformedRecord {
                        line: lineno,
                        detail: format!("path index {idx} out of order"),
                    });
                }
                paths.push(parse_metapath(display, g)?);
                walks_by_path.push(Vec::new());
            } else if let Some(rest) = line.strip_prefix('P') {
                let mut tok = rest.split_whitespace();
                let idx: usize = tok
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::MalformedRecord {
                        line: lineno,
                        detail: "walk line expects P<path_index> <ids...>".into(),
                    })?;
                if idx >= paths.len() {
                    return Err(Error::MalformedRecord {
                        line: lineno,
                        detail: format!("walk references undeclared path {idx}"),
                    });
                }
                let mut nodes = Vec::new();
                for t in tok {
                    let id: u32 = t.parse().map_err(|_| Error::MalformedRecord {
                        line: lineno,
                        detail: format!("bad node id '{t}'"),
                    })?;
                    nodes.push(NodeId(id));
                }
                if nodes.is_empty() {
                    return Err(Error::MalformedRecord {
                        line: lineno,
                        detail: "walk has no nodes".into(),
                    });
                }
                let start = nodes[0];
                walks_by_path[idx].push(Walk {
                    nodes,
                    path_index: idx,
                    start,
                });
            } else {
                return Err(Error::MalformedRecord {
                    line: lineno,
                    detail: format!("unrecognized corpus line '{line}'"),
                });
            }
        }
        Ok(WalkCorpus {
            paths,
            walks_by_path,
            config,
        })
    }
}

/// Generate `cfg.num_walks` walks per bag node per meta-path.
///
/// Each (bag, path) pair draws from its own RNG stream derived from
/// `(seed, bag id, path index)`, so the corpus is a pure function of
/// `(g, paths, cfg)` regardless of how the pairs are scheduled.
pub fn generate_corpus(g: &Hmin, paths: Vec<MetaPath>, cfg: WalkConfig) -> Result<WalkCorpus> {
    if paths.is_empty() {
        return Err(Error::InvalidConfig("no meta-paths given".into()));
    }
    let bags = g.bag_nodes();
    let mut walks_by_path = Vec::with_capacity(paths.len());
    for (pi, p) in paths.iter().enumerate() {
        let per_bag: Vec<Vec<Walk>> = bags
            .par_iter()
            .map(|&bag| {
                let mut rng = rng_for(cfg.seed, &format!("walks/bag{}/path{}", bag.0, pi));
                let mut out = Vec::with_capacity(cfg.num_walks);
                for _ in 0..cfg.num_walks {
                    let mut w = sample_walk(g, bag, p, cfg.walk_length, &mut rng)
                        .expect("bag nodes are bag-typed");
                    w.path_index = pi;
                    out.push(w);
                }
                out
            })
            .collect();
        walks_by_path.push(per_bag.into_iter().flatten().collect());
    }
    Ok(WalkCorpus {
        paths,
        walks_by_path,
        config: cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmin::HminBuilder;
    use ndarray::Array2;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain_graph() -> Hmin {
        // g1 - d1, and a second component g2 with no neighbors.
        let text = "HMIN v1\nT G BAG\nT D\nR gd G D\nN 1 G\nN 2 D\nN 3 G\nE gd 1 2\nB 1 1 1\n0\nY\nB 3 1 1\n0\nY\n";
        Hmin::parse(text).unwrap()
    }

    #[test]
    fn parse_valid_path() {
        let g = chain_graph();
        let p = parse_metapath("G-D-G", &g).unwrap();
        assert_eq!(p.types().len(), 3);
        assert_eq!(p.display(), "G-D-G");
    }

    #[test]
    fn parse_rejects_single_type() {
        let g = chain_graph();
        assert!(matches!(
            parse_metapath("G", &g),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn parse_rejects_non_bag_start() {
        let g = chain_graph();
        assert!(matches!(
            parse_metapath("D-G-D", &g),
            Err(Error::MetaPathNotBagRooted { .. })
        ));
    }

    #[test]
    fn parse_rejects_unknown_type() {
        let g = chain_graph();
        assert!(matches!(
            parse_metapath("G-X-G", &g),
            Err(Error::UnknownType(t)) if t == "X"
        ));
    }

    #[test]
    fn parse_rejects_disconnected_pair() {
        let text = "HMIN v1\nT G BAG\nT D\nT M\nR gd G D\nN 1 G\nB 1 1 1\n0\nY\n";
        let g = Hmin::parse(text).unwrap();
        assert!(matches!(
            parse_metapath("G-M-G", &g),
            Err(Error::MetaPathDisconnected { .. })
        ));
    }

    #[test]
    fn cyclic_pattern_positions() {
        let g = chain_graph();
        let p = parse_metapath("G-D-G", &g).unwrap();
        let tg = g.type_by_name("G").unwrap();
        let td = g.type_by_name("D").unwrap();
        let got: Vec<_> = (0..6).map(|i| p.type_at(i)).collect();
        assert_eq!(got, vec![tg, td, tg, td, tg, td]);
    }

    #[test]
    fn single_choice_chain_alternates() {
        let g = chain_graph();
        let p = parse_metapath("G-D-G", &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = sample_walk(&g, NodeId(1), &p, 4, &mut rng).unwrap();
        assert_eq!(
            w.nodes,
            vec![NodeId(1), NodeId(2), NodeId(1), NodeId(2), NodeId(1)]
        );
    }

    #[test]
    fn dead_end_truncates_to_start() {
        let g = chain_graph();
        let p = parse_metapath("G-D-G", &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = sample_walk(&g, NodeId(3), &p, 4, &mut rng).unwrap();
        assert_eq!(w.nodes, vec![NodeId(3)]);
    }

    #[test]
    fn start_must_be_bag() {
        let g = chain_graph();
        let p = parse_metapath("G-D-G", &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_walk(&g, NodeId(2), &p, 4, &mut rng),
            Err(Error::StartNotBag(2))
        ));
    }

    #[test]
    fn two_choices_sampled_uniformly() {
        // Bag 1 connects to d-nodes 2 and 4.
        let text = "HMIN v1\nT G BAG\nT D\nR gd G D\nN 1 G\nN 2 D\nN 4 D\nE gd 1 2\nE gd 1 4\nB 1 1 1\n0\nY\n";
        let g = Hmin::parse(text).unwrap();
        let p = parse_metapath("G-D-G", &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut hits = 0usize;
        let n = 10_000;
        for _ in 0..n {
            let w = sample_walk(&g, NodeId(1), &p, 1, &mut rng).unwrap();
            if w.nodes[1] == NodeId(2) {
                hits += 1;
            }
        }
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.5).abs() <= 0.02, "freq {freq}");
    }

    fn star_graph() -> Hmin {
        let mut b = HminBuilder::new();
        let tg = b.add_type("G", true);
        let td = b.add_type("D", false);
        let r = b.add_relation("gd", tg, td);
        for id in 0..3u32 {
            b.add_node(id, tg);
            b.add_bag(id, Array2::zeros((1, 1)), vec![]);
        }
        for id in 10..14u32 {
            b.add_node(id, td);
        }
        for g_id in 0..3u32 {
            for d_id in 10..14u32 {
                b.add_edge(r, g_id, d_id);
            }
        }
        b.finish().unwrap()
    }

    #[test]
    fn corpus_counts_and_determinism() {
        let g = star_graph();
        let paths = vec![
            parse_metapath("G-D-G", &g).unwrap(),
            parse_metapath("G-D", &g).unwrap(),
        ];
        let cfg = WalkConfig {
            num_walks: 10,
            walk_length: 6,
            seed: 3,
        };
        let c1 = generate_corpus(&g, paths.clone(), cfg.clone()).unwrap();
        assert_eq!(c1.total_walks(), 3 * 2 * 10);
        let c2 = generate_corpus(&g, paths, cfg).unwrap();
        assert_eq!(c1.to_text(), c2.to_text());
    }

    #[test]
    fn default_config_matches_walking_setup() {
        let cfg = WalkConfig::default();
        assert_eq!(cfg.walk_length, 40);
        assert_eq!(cfg.num_walks, 10);
    }

    #[test]
    fn corpus_round_trips_through_text() {
        let g = star_graph();
        let paths = vec![parse_metapath("G-D-G", &g).unwrap()];
        let cfg = WalkConfig {
            num_walks: 4,
            walk_length: 5,
            seed: 9,
        };
        let c = generate_corpus(&g, paths, cfg).unwrap();
        let c2 = WalkCorpus::parse(&c.to_text(), &g).unwrap();
        assert_eq!(c.to_text(), c2.to_text());
    }

    #[test]
    fn walks_obey_type_pattern_and_adjacency() {
        let g = star_graph();
        let p = parse_metapath("G-D-G", &g).unwrap();
        let cfg = WalkConfig {
            num_walks: 20,
            walk_length: 9,
            seed: 1,
        };
        let c = generate_corpus(&g, vec![p.clone()], cfg).unwrap();
        for w in c.walks_for(0) {
            for (pos, &n) in w.nodes.iter().enumerate() {
                assert_eq!(g.node_type(n).unwrap(), p.type_at(pos));
            }
            for pair in w.nodes.windows(2) {
                let t = g.node_type(pair[1]).unwrap();
                assert!(g.neighbors_of_type(pair[0], t).unwrap().contains(&pair[1]));
            }
        }
    }
}

//! Planted-structure synthetic network generator.
//!
//! Bags and auxiliary nodes are assigned round-robin to communities. Edges
//! are drawn per (bag, aux) pair: probability 1-ε within a community, ε
//! across. Each community owns a disjoint label subset; a bag carries its
//! community's labels with small per-label flips. Instances are drawn from
//! per-label Gaussian centroids placed at scaled one-hot corners, cycling
//! through the bag's labels so every label is covered when n_i allows. The
//! manifest records all assignments plus a nearest-centroid oracle score,
//! giving end-to-end tests a learnability floor.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmin::{Hmin, HminBuilder, LabelId, NodeId};
use crate::metrics::macro_f1;
use crate::seed::rng_for;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_bags: usize,
    /// Node count per auxiliary type.
    pub aux_counts: Vec<usize>,
    /// Label universe size q.
    pub num_labels: usize,
    pub communities: usize,
    pub instance_dim: usize,
    /// Inclusive range for instances per bag.
    pub instances_per_bag: (usize, usize),
    /// Feature noise σ_f around each centroid.
    pub feature_noise: f64,
    /// Cross-community edge probability ε (within-community is 1-ε).
    pub cross_edge_prob: f64,
    /// Per-label membership flip probability.
    pub label_flip_prob: f64,
    /// Centroid magnitude; centroid for label l is scale · e_l.
    pub centroid_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_bags: 60,
            aux_counts: vec![40, 40],
            num_labels: 12,
            communities: 3,
            instance_dim: 16,
            instances_per_bag: (6, 10),
            feature_noise: 0.5,
            cross_edge_prob: 0.05,
            label_flip_prob: 0.02,
            centroid_scale: 2.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn check(&self) -> Result<()> {
        if self.communities == 0 || self.num_bags == 0 || self.num_labels == 0 {
            return Err(Error::InvalidConfig("counts must be positive".into()));
        }
        if self.aux_counts.is_empty() || self.aux_counts.contains(&0) {
            return Err(Error::InvalidConfig(
                "need at least one auxiliary type with a positive count".into(),
            ));
        }
        if self.num_labels < self.communities {
            return Err(Error::InvalidConfig(format!(
                "labels ({}) must be >= communities ({})",
                self.num_labels, self.communities
            )));
        }
        if self.num_labels > self.instance_dim {
            return Err(Error::InvalidConfig(format!(
                "one-hot centroids need instance_dim >= labels, got {} < {}",
                self.instance_dim, self.num_labels
            )));
        }
        if !(0.0..0.5).contains(&self.cross_edge_prob) {
            return Err(Error::InvalidConfig(format!(
                "cross-community edge probability must lie in [0, 0.5), got {}",
                self.cross_edge_prob
            )));
        }
        if self.instances_per_bag.0 == 0 || self.instances_per_bag.0 > self.instances_per_bag.1 {
            return Err(Error::InvalidConfig(
                "instances_per_bag must be a non-empty positive range".into(),
            ));
        }
        Ok(())
    }

    /// Bag-rooted two-hop meta-path through each auxiliary type.
    pub fn default_metapaths(&self) -> Vec<String> {
        (0..self.aux_counts.len())
            .map(|j| format!("B-A{j}-B"))
            .collect()
    }
}

/// Ground truth recorded at generation time; consumed by tests only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthManifest {
    /// Community of every node, indexed by node id.
    pub node_communities: Vec<usize>,
    /// Community owning each label.
    pub label_communities: Vec<usize>,
    pub centroid_scale: f64,
    /// Per bag: (node id, generating label of each instance).
    pub instance_labels: Vec<(u32, Vec<u32>)>,
    /// Macro-F1 of the nearest-centroid bag-label oracle on this data.
    pub oracle_macro_f1: f64,
    pub config: SynthConfig,
}

impl SynthManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<SynthManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("bad manifest: {e}")))
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller; u1 is kept away from zero.
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Labels owned by each community: label l belongs to community l mod c.
pub fn community_of_label(label: usize, communities: usize) -> usize {
    label % communities
}

/// Generate the network plus its ground-truth manifest. Same seed, same
/// bytes.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Hmin, SynthManifest)> {
    cfg.check()?;
    let c = cfg.communities;
    let mut builder = HminBuilder::new();
    let bag_type = builder.add_type("B", true);
    let aux_types: Vec<_> = (0..cfg.aux_counts.len())
        .map(|j| builder.add_type(&format!("A{j}"), false))
        .collect();
    let relations: Vec<_> = aux_types
        .iter()
        .enumerate()
        .map(|(j, &t)| builder.add_relation(&format!("r{j}"), bag_type, t))
        .collect();

    // Node ids: bags first, then each aux type's block.
    let mut node_communities = Vec::new();
    for b in 0..cfg.num_bags {
        builder.add_node(b as u32, bag_type);
        node_communities.push(b % c);
    }
    let mut next_id = cfg.num_bags as u32;
    let mut aux_ids: Vec<Vec<u32>> = Vec::new();
    for (j, &count) in cfg.aux_counts.iter().enumerate() {
        let mut ids = Vec::with_capacity(count);
        for a in 0..count {
            builder.add_node(next_id, aux_types[j]);
            node_communities.push(a % c);
            ids.push(next_id);
            next_id += 1;
        }
        aux_ids.push(ids);
    }

    for l in 0..cfg.num_labels {
        builder.add_label(l as u32, &format!("label{l}"));
    }
    let label_communities: Vec<usize> = (0..cfg.num_labels)
        .map(|l| community_of_label(l, c))
        .collect();

    // Edges per (bag, aux) pair.
    let mut rng = rng_for(cfg.seed, "synth/edges");
    for b in 0..cfg.num_bags {
        for (j, ids) in aux_ids.iter().enumerate() {
            for (a, &aux) in ids.iter().enumerate() {
                let within = b % c == a % c;
                let p = if within {
                    1.0 - cfg.cross_edge_prob
                } else {
                    cfg.cross_edge_prob
                };
                if rng.random::<f64>() < p {
                    builder.add_edge(relations[j], b as u32, aux);
                }
            }
        }
    }

    // Bag labels and instances.
    let mut rng = rng_for(cfg.seed, "synth/bags");
    let mut instance_labels: Vec<(u32, Vec<u32>)> = Vec::with_capacity(cfg.num_bags);
    let mut truths: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_bags);
    let mut preds: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_bags);
    for b in 0..cfg.num_bags {
        let community = b % c;
        let mut labels: Vec<u32> = Vec::new();
        for (l, &owner) in label_communities.iter().enumerate() {
            let mut member = owner == community;
            if rng.random::<f64>() < cfg.label_flip_prob {
                member = !member;
            }
            if member {
                labels.push(l as u32);
            }
        }
        // Generating labels cycle through the owned set so small bags still
        // cover every label; empty label sets fall back to community labels.
        let gen_pool: Vec<u32> = if labels.is_empty() {
            (0..cfg.num_labels as u32)
                .filter(|&l| label_communities[l as usize] == community)
                .collect()
        } else {
            labels.clone()
        };
        let (lo, hi) = cfg.instances_per_bag;
        let n_i = rng.random_range(lo..=hi);
        let mut rows = Array2::zeros((n_i, cfg.instance_dim));
        let mut gens = Vec::with_capacity(n_i);
        for i in 0..n_i {
            let gl = gen_pool[i % gen_pool.len()];
            gens.push(gl);
            for t in 0..cfg.instance_dim {
                let centroid = if t == gl as usize { cfg.centroid_scale } else { 0.0 };
                rows[[i, t]] = centroid + cfg.feature_noise * gaussian(&mut rng);
            }
        }

        // Nearest-centroid oracle: vote the closest centroid per instance,
        // predict the union of votes.
        let mut votes = vec![false; cfg.num_labels];
        for i in 0..n_i {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for l in 0..cfg.num_labels {
                let mut d2 = 0.0;
                for t in 0..cfg.instance_dim {
                    let centroid = if t == l { cfg.centroid_scale } else { 0.0 };
                    let diff = rows[[i, t]] - centroid;
                    d2 += diff * diff;
                }
                if d2 < best_d {
                    best_d = d2;
                    best = l;
                }
            }
            votes[best] = true;
        }
        truths.push(
            (0..cfg.num_labels)
                .map(|l| if labels.contains(&(l as u32)) { 1.0 } else { 0.0 })
                .collect(),
        );
        preds.push(votes.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect());

        builder.add_bag(b as u32, rows, labels.into_iter().map(LabelId).collect());
        instance_labels.push((b as u32, gens));
    }

    let truth = Array2::from_shape_vec(
        (cfg.num_bags, cfg.num_labels),
        truths.into_iter().flatten().collect(),
    )
    .unwrap();
    let pred = Array2::from_shape_vec(
        (cfg.num_bags, cfg.num_labels),
        preds.into_iter().flatten().collect(),
    )
    .unwrap();
    let oracle_macro_f1 = macro_f1(&pred, &truth);

    let g = builder.finish()?;
    let manifest = SynthManifest {
        node_communities,
        label_communities,
        centroid_scale: cfg.centroid_scale,
        instance_labels,
        oracle_macro_f1,
        config: cfg.clone(),
    };
    Ok((g, manifest))
}

/// Instance-level nearest-centroid accuracy against the manifest's
/// generating labels (1.0 exactly when feature noise is zero).
pub fn nearest_centroid_instance_accuracy(g: &Hmin, manifest: &SynthManifest) -> f64 {
    let cfg = &manifest.config;
    let mut correct = 0usize;
    let mut total = 0usize;
    for (bag_id, gens) in &manifest.instance_labels {
        let bag = g.bag(NodeId(*bag_id)).expect("manifest bag exists");
        for (i, &gl) in gens.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for l in 0..cfg.num_labels {
                let mut d2 = 0.0;
                for t in 0..cfg.instance_dim {
                    let centroid = if t == l { cfg.centroid_scale } else { 0.0 };
                    let diff = bag.instances[[i, t]] - centroid;
                    d2 += diff * diff;
                }
                if d2 < best_d {
                    best_d = d2;
                    best = l;
                }
            }
            if best == gl as usize {
                correct += 1;
            }
            total += 1;
        }
    }
    correct as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmin::NodeId;

    #[test]
    fn zero_cross_probability_means_no_cross_edges() {
        let cfg = SynthConfig {
            cross_edge_prob: 0.0,
            seed: 4,
            ..SynthConfig::default()
        };
        let (g, manifest) = generate_synthetic(&cfg).unwrap();
        for e in g.edges() {
            let cs = manifest.node_communities[e.src.0 as usize];
            let cd = manifest.node_communities[e.dst.0 as usize];
            assert_eq!(cs, cd, "cross-community edge {:?}", e);
        }
    }

    #[test]
    fn zero_noise_gives_perfect_instance_recovery() {
        let cfg = SynthConfig {
            feature_noise: 0.0,
            seed: 7,
            ..SynthConfig::default()
        };
        let (g, manifest) = generate_synthetic(&cfg).unwrap();
        assert_eq!(nearest_centroid_instance_accuracy(&g, &manifest), 1.0);
    }

    #[test]
    fn default_config_oracle_clears_learnability_floor() {
        let cfg = SynthConfig {
            seed: 11,
            ..SynthConfig::default()
        };
        let (_, manifest) = generate_synthetic(&cfg).unwrap();
        assert!(
            manifest.oracle_macro_f1 >= 0.9,
            "oracle macro-F1 {}",
            manifest.oracle_macro_f1
        );
    }

    #[test]
    fn generated_network_validates_cleanly() {
        let cfg = SynthConfig {
            seed: 3,
            ..SynthConfig::default()
        };
        let (g, _) = generate_synthetic(&cfg).unwrap();
        assert!(g.validate().is_empty());
        assert_eq!(g.bag_nodes().len(), cfg.num_bags);
        assert_eq!(g.num_labels(), cfg.num_labels);
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = SynthConfig {
            seed: 19,
            ..SynthConfig::default()
        };
        let (a, _) = generate_synthetic(&cfg).unwrap();
        let (b, _) = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn within_community_density_dominates() {
        let cfg = SynthConfig {
            seed: 23,
            ..SynthConfig::default()
        };
        let (g, manifest) = generate_synthetic(&cfg).unwrap();
        let mut within = (0usize, 0usize);
        let mut cross = (0usize, 0usize);
        for b in 0..cfg.num_bags as u32 {
            for a in cfg.num_bags as u32..g.num_nodes() as u32 {
                let same = manifest.node_communities[b as usize]
                    == manifest.node_communities[a as usize];
                let connected = g.neighbors(NodeId(b)).unwrap().contains(&NodeId(a));
                let slot = if same { &mut within } else { &mut cross };
                slot.1 += 1;
                if connected {
                    slot.0 += 1;
                }
            }
        }
        let dw = within.0 as f64 / within.1 as f64;
        let dc = cross.0 as f64 / cross.1 as f64;
        assert!(dw > dc, "within {dw} vs cross {dc}");
    }

    #[test]
    fn infeasible_configs_rejected() {
        let cfg = SynthConfig {
            num_labels: 2,
            communities: 3,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(&cfg).is_err());
        let cfg = SynthConfig {
            cross_edge_prob: 0.6,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(&cfg).is_err());
        let cfg = SynthConfig {
            num_labels: 20,
            instance_dim: 16,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn manifest_round_trips_through_json() {
        let cfg = SynthConfig {
            num_bags: 6,
            aux_counts: vec![4],
            seed: 2,
            ..SynthConfig::default()
        };
        let (_, manifest) = generate_synthetic(&cfg).unwrap();
        let parsed: SynthManifest = serde_json::from_str(&manifest.to_json()).unwrap();
        assert_eq!(parsed.node_communities, manifest.node_communities);
        assert_eq!(parsed.oracle_macro_f1, manifest.oracle_macro_f1);
    }
}

//! Flat dotted-key config file: `key = value` lines, `#` comments, unknown
//! keys are hard errors. The effective config (defaults merged with the
//! file) is re-rendered canonically so equal configs hash equal.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

use metamiml::meta::{AttentionSign, OuterChain};
use metamiml::pipeline::PipelineParams;
use metamiml::projection::SparsityPolicy;
use metamiml::synth::SynthConfig;

/// Everything a run can configure. `paths` empty means "derive two-hop
/// bag-X-bag paths from the graph schema".
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub paths: Vec<String>,
    pub pipeline: PipelineParams,
    pub synth: SynthConfig,
    /// Fixed top-K for reports; None derives K from the truth.
    pub metrics_k: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => raw[..i].trim(),
                None => raw.trim(),
            };
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {}: expected 'key = value', got '{line}'", n + 1);
            };
            cfg.set(key.trim(), value.trim())
                .with_context(|| format!("config line {}", n + 1))?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| anyhow::anyhow!("bad value '{value}' for key '{key}'"))
        }
        let p = &mut self.pipeline;
        match key {
            "paths" => {
                self.paths = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            "seed" => p.master_seed = num(key, value)?,
            "walk.length" => p.walk_length = num(key, value)?,
            "walk.num" => p.walks_per_node = num(key, value)?,
            "walk.window" => p.window = num(key, value)?,
            "embed.dim" => p.embed_dim = num(key, value)?,
            "embed.negatives" => p.embed_negatives = num(key, value)?,
            "embed.epochs" => p.embed_epochs = num(key, value)?,
            "embed.lr" => p.embed_lr = num(key, value)?,
            "embed.slope" => p.leaky_slope = num(key, value)?,
            "project.k" => p.proj_k = num(key, value)?,
            "project.s" => {
                p.proj_s = match value {
                    "sqrt_n" => SparsityPolicy::SqrtN,
                    "n_over_log_n" => SparsityPolicy::NOverLogN,
                    v => SparsityPolicy::Fixed(num::<f64>(key, v)?),
                }
            }
            "task.h1" => p.h1 = parse_auto(key, value)?,
            "task.h2" => p.h2 = parse_auto(key, value)?,
            "meta.alpha" => p.alpha = num(key, value)?,
            "meta.beta" => p.beta = num(key, value)?,
            "meta.gamma" => p.gamma = num(key, value)?,
            "meta.batch" => p.batch = num(key, value)?,
            "meta.epochs" => p.meta_epochs = num(key, value)?,
            "meta.steps" => p.adapt_steps = num(key, value)?,
            "meta.attention" => {
                p.attention_sign = match value {
                    "negated" => AttentionSign::Negated,
                    "literal" => AttentionSign::Literal,
                    v => bail!("bad value '{v}' for meta.attention (negated|literal)"),
                }
            }
            "meta.outer_chain" => {
                p.outer_chain = match value {
                    "identity" => OuterChain::Identity,
                    "elementwise" => OuterChain::Elementwise,
                    v => bail!("bad value '{v}' for meta.outer_chain (identity|elementwise)"),
                }
            }
            "episodes.ratio" => p.ratio = num(key, value)?,
            "episodes.query_labels" => p.query_labels = num(key, value)?,
            "episodes.repeats" => p.repeats = num(key, value)?,
            "metrics.k" => {
                self.metrics_k = parse_auto(key, value)?;
            }
            "synth.bags" => self.synth.num_bags = num(key, value)?,
            "synth.aux" => {
                self.synth.aux_counts = value
                    .split(',')
                    .map(|v| num::<usize>(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "synth.labels" => self.synth.num_labels = num(key, value)?,
            "synth.communities" => self.synth.communities = num(key, value)?,
            "synth.dim" => self.synth.instance_dim = num(key, value)?,
            "synth.instances" => {
                let Some((lo, hi)) = value.split_once(',') else {
                    bail!("synth.instances expects 'lo,hi'");
                };
                self.synth.instances_per_bag = (num(key, lo.trim())?, num(key, hi.trim())?);
            }
            "synth.noise" => self.synth.feature_noise = num(key, value)?,
            "synth.cross_edge" => self.synth.cross_edge_prob = num(key, value)?,
            "synth.flip" => self.synth.label_flip_prob = num(key, value)?,
            "synth.centroid_scale" => self.synth.centroid_scale = num(key, value)?,
            other => bail!("unknown config key '{other}'"),
        }
        Ok(())
    }

    /// Canonical rendering of the effective config; hashed into manifests
    /// and written into the run directory.
    pub fn render(&self) -> String {
        let p = &self.pipeline;
        let mut s = String::new();
        let _ = writeln!(s, "paths = {}", self.paths.join(","));
        let _ = writeln!(s, "seed = {}", p.master_seed);
        let _ = writeln!(s, "walk.length = {}", p.walk_length);
        let _ = writeln!(s, "walk.num = {}", p.walks_per_node);
        let _ = writeln!(s, "walk.window = {}", p.window);
        let _ = writeln!(s, "embed.dim = {}", p.embed_dim);
        let _ = writeln!(s, "embed.negatives = {}", p.embed_negatives);
        let _ = writeln!(s, "embed.epochs = {}", p.embed_epochs);
        let _ = writeln!(s, "embed.lr = {}", p.embed_lr);
        let _ = writeln!(s, "embed.slope = {}", p.leaky_slope);
        let _ = writeln!(s, "project.k = {}", p.proj_k);
        let _ = writeln!(
            s,
            "project.s = {}",
            match p.proj_s {
                SparsityPolicy::SqrtN => "sqrt_n".to_string(),
                SparsityPolicy::NOverLogN => "n_over_log_n".to_string(),
                SparsityPolicy::Fixed(v) => v.to_string(),
            }
        );
        let _ = writeln!(s, "task.h1 = {}", render_auto(p.h1));
        let _ = writeln!(s, "task.h2 = {}", render_auto(p.h2));
        let _ = writeln!(s, "meta.alpha = {}", p.alpha);
        let _ = writeln!(s, "meta.beta = {}", p.beta);
        let _ = writeln!(s, "meta.gamma = {}", p.gamma);
        let _ = writeln!(s, "meta.batch = {}", p.batch);
        let _ = writeln!(s, "meta.epochs = {}", p.meta_epochs);
        let _ = writeln!(s, "meta.steps = {}", p.adapt_steps);
        let _ = writeln!(
            s,
            "meta.attention = {}",
            match p.attention_sign {
                AttentionSign::Negated => "negated",
                AttentionSign::Literal => "literal",
            }
        );
        let _ = writeln!(
            s,
            "meta.outer_chain = {}",
            match p.outer_chain {
                OuterChain::Identity => "identity",
                OuterChain::Elementwise => "elementwise",
            }
        );
        let _ = writeln!(s, "episodes.ratio = {}", p.ratio);
        let _ = writeln!(s, "episodes.query_labels = {}", p.query_labels);
        let _ = writeln!(s, "episodes.repeats = {}", p.repeats);
        let _ = writeln!(s, "metrics.k = {}", render_auto(self.metrics_k));
        let sy = &self.synth;
        let _ = writeln!(s, "synth.bags = {}", sy.num_bags);
        let _ = writeln!(
            s,
            "synth.aux = {}",
            sy.aux_counts
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        let _ = writeln!(s, "synth.labels = {}", sy.num_labels);
        let _ = writeln!(s, "synth.communities = {}", sy.communities);
        let _ = writeln!(s, "synth.dim = {}", sy.instance_dim);
        let _ = writeln!(
            s,
            "synth.instances = {},{}",
            sy.instances_per_bag.0, sy.instances_per_bag.1
        );
        let _ = writeln!(s, "synth.noise = {}", sy.feature_noise);
        let _ = writeln!(s, "synth.cross_edge = {}", sy.cross_edge_prob);
        let _ = writeln!(s, "synth.flip = {}", sy.label_flip_prob);
        let _ = writeln!(s, "synth.centroid_scale = {}", sy.centroid_scale);
        s
    }
}

fn parse_auto(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "auto" {
        Ok(None)
    } else {
        value
            .parse()
            .map(Some)
            .map_err(|_| anyhow::anyhow!("bad value '{value}' for key '{key}' (auto or integer)"))
    }
}

fn render_auto(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "auto".into())
}

//! Batch pipeline driver. Each subcommand consumes and produces documented
//! text artifacts inside a run directory, so stages are independently
//! re-runnable and a run is reproducible byte for byte from its config and
//! seed.
//!
//! Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical divergence.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use config::RunConfig;
use metamiml::hmin::Hmin;
use metamiml::meta::GlobalPrior;
use metamiml::pipeline::{
    self, eval_predictions, load_predictions, render_rep_report, save_predictions, stage_adapt,
    stage_embed, stage_project, stage_train, stage_walk, target_tasks_for_split,
};
use metamiml::projection::ProjectionMatrix;
use metamiml::seed::fnv1a64;
use metamiml::skipgram::EmbeddingTable;
use metamiml::synth::generate_synthetic;
use metamiml::walks::WalkCorpus;

#[derive(Parser)]
#[command(
    name = "metamiml",
    about = "Meta-learning pipeline for multi-instance multi-label bags on heterogeneous networks",
    version
)]
struct Cli {
    /// Worker threads (0 = all cores). Results are identical at any count.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted synthetic network and its ground-truth manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample the meta-path walk corpus.
    Walk {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train per-meta-path skip-gram embeddings over the corpus.
    Embed {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Split source/target and meta-train the prior (one sub-run per repeat).
    Train {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Adapt every target task and write its query predictions.
    Adapt {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Extra gradient steps on the target support loss.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Aggregate rep*/predictions.tsv into report.txt.
    Eval {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Re-render report.txt from stored predictions and print it.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Sensitivity sweep: full experiment per value of a parameter.
    Sweep {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Parameter to sweep; `k` (projection dimension) is supported.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    use metamiml::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::Diverged { .. }) => 4,
        Some(
            E::InvalidConfig(_)
            | E::UnknownType(_)
            | E::MetaPathNotBagRooted { .. }
            | E::MetaPathDisconnected { .. },
        ) => 2,
        Some(_) => 3,
        // Config-file parsing and CLI usage problems.
        None => 2,
    }
}

/// Precedence: explicit --config, else the run directory's own
/// config.effective.txt (so later stages inherit what earlier stages ran
/// with), else defaults. --seed overrides whatever was loaded.
fn load_config(path: &Option<PathBuf>, seed: Option<u64>, out: &Path) -> Result<RunConfig> {
    let inherited = out.join("config.effective.txt");
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None if inherited.exists() => RunConfig::load(&inherited)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.pipeline.master_seed = s;
    }
    cfg.synth.seed = metamiml::seed::derive_seed(cfg.pipeline.master_seed, "synth");
    Ok(cfg)
}

/// Default meta-paths: one two-hop bag-X-bag path per type adjacent to the
/// bag type.
fn resolve_paths(cfg: &mut RunConfig, g: &Hmin) -> Result<()> {
    if !cfg.paths.is_empty() {
        cfg.pipeline.metapaths = cfg.paths.clone();
        return Ok(());
    }
    let bag = g.bag_type();
    let bag_name = &g.types()[bag.0].name;
    let mut paths = Vec::new();
    for (i, t) in g.types().iter().enumerate() {
        if i == bag.0 {
            continue;
        }
        let connected = g.relations().iter().any(|r| {
            (r.type_a == bag && r.type_b.0 == i) || (r.type_b == bag && r.type_a.0 == i)
        });
        if connected {
            paths.push(format!("{bag_name}-{}-{bag_name}", t.name));
        }
    }
    if paths.is_empty() {
        bail!(metamiml::Error::InvalidConfig(
            "no meta-paths configured and none derivable from the schema".into()
        ));
    }
    cfg.paths = paths.clone();
    cfg.pipeline.metapaths = paths;
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { out, config, seed } => {
            let cfg = load_config(&config, seed, &out)?;
            std::fs::create_dir_all(&out)?;
            let (g, manifest) = generate_synthetic(&cfg.synth)?;
            g.save(&out.join("graph.hmin"))?;
            manifest.save(&out.join("synth_manifest.json"))?;
            finish_run(&out, &cfg, &["graph.hmin", "synth_manifest.json"])?;
            println!(
                "wrote {} nodes, {} edges, {} bags (oracle macro-F1 {:.4})",
                g.num_nodes(),
                g.num_edges(),
                g.bags().len(),
                manifest.oracle_macro_f1
            );
            Ok(())
        }
        Command::Walk {
            graph,
            out,
            config,
            seed,
        } => {
            let mut cfg = load_config(&config, seed, &out)?;
            std::fs::create_dir_all(&out)?;
            let g = Hmin::load(&graph)?;
            resolve_paths(&mut cfg, &g)?;
            let corpus = stage_walk(&g, &cfg.pipeline)?;
            corpus.save(&out.join("walks.txt"))?;
            finish_run(&out, &cfg, &["walks.txt"])?;
            println!(
                "wrote {} walks over {} paths",
                corpus.total_walks(),
                corpus.paths.len()
            );
            Ok(())
        }
        Command::Embed {
            graph,
            out,
            config,
            seed,
        } => {
            let mut cfg = load_config(&config, seed, &out)?;
            let g = Hmin::load(&graph)?;
            resolve_paths(&mut cfg, &g)?;
            let corpus = WalkCorpus::load(&out.join("walks.txt"), &g)?;
            let tables = stage_embed(&g, &corpus, &cfg.pipeline)?;
            let mut produced = Vec::new();
            for (i, t) in tables.iter().enumerate() {
                let name = format!("emb_p{i}.emb");
                t.save(&out.join(&name))?;
                produced.push(name);
            }
            let names: Vec<&str> = produced.iter().map(String::as_str).collect();
            finish_run(&out, &cfg, &names)?;
            println!(
                "trained {} embedding tables (d_l = {})",
                tables.len(),
                cfg.pipeline.embed_dim
            );
            Ok(())
        }
        Command::Train {
            graph,
            out,
            config,
            seed,
            repeats,
        } => {
            let mut cfg = load_config(&config, seed, &out)?;
            if let Some(r) = repeats {
                cfg.pipeline.repeats = r;
            }
            let g = Hmin::load(&graph)?;
            resolve_paths(&mut cfg, &g)?;
            let corpus = WalkCorpus::load(&out.join("walks.txt"), &g)?;
            let tables = load_tables(&out, corpus.paths.len())?;
            let proj = stage_project(&g, &cfg.pipeline)?;
            proj.save(&out.join("proj.txt"))?;
            let mut produced = vec!["proj.txt".to_string()];
            for rep in 0..cfg.pipeline.repeats.max(1) {
                let trained = stage_train(&g, &corpus, &tables, &proj, &cfg.pipeline, rep)?;
                let rep_dir = out.join(format!("rep{rep}"));
                std::fs::create_dir_all(&rep_dir)?;
                trained.split.save(&rep_dir.join("split.txt"))?;
                trained.prior.save(&rep_dir)?;
                trained.history.save(&rep_dir.join("history.tsv"))?;
                for name in ["split.txt", "omega.txt", "history.tsv"] {
                    produced.push(format!("rep{rep}/{name}"));
                }
                for p in 0..corpus.paths.len() {
                    produced.push(format!("rep{rep}/theta_p{p}.emb"));
                }
                println!(
                    "rep {rep}: trained over {} source tasks, final query loss {:.6}",
                    trained.split.source_bags.len(),
                    trained
                        .history
                        .epochs
                        .last()
                        .map(|e| e.mean_query_loss)
                        .unwrap_or(f64::NAN)
                );
            }
            let names: Vec<&str> = produced.iter().map(String::as_str).collect();
            finish_run(&out, &cfg, &names)?;
            Ok(())
        }
        Command::Adapt {
            graph,
            out,
            config,
            seed,
            steps,
            repeats,
        } => {
            let mut cfg = load_config(&config, seed, &out)?;
            if let Some(r) = repeats {
                cfg.pipeline.repeats = r;
            }
            if let Some(s) = steps {
                cfg.pipeline.adapt_steps = s;
            }
            let g = Hmin::load(&graph)?;
            resolve_paths(&mut cfg, &g)?;
            let corpus = WalkCorpus::load(&out.join("walks.txt"), &g)?;
            let proj = ProjectionMatrix::load(&out.join("proj.txt"))?;
            let mut produced = Vec::new();
            for rep in 0..cfg.pipeline.repeats.max(1) {
                let rep_dir = out.join(format!("rep{rep}"));
                let split = metamiml::episodes::SplitSpec::load(&rep_dir.join("split.txt"))?;
                let prior = GlobalPrior::load(
                    &rep_dir,
                    corpus.paths.len(),
                    cfg.pipeline.alpha,
                    cfg.pipeline.beta,
                    cfg.pipeline.gamma,
                )?;
                let tasks = target_tasks_for_split(&g, &corpus, &split, &cfg.pipeline, rep)?;
                let preds = stage_adapt(
                    &g,
                    &proj,
                    &prior,
                    &tasks,
                    cfg.pipeline.adapt_steps,
                    &cfg.pipeline.meta_config(rep),
                )?;
                save_predictions(&preds, &rep_dir.join("predictions.tsv"))?;
                produced.push(format!("rep{rep}/predictions.tsv"));
                println!(
                    "rep {rep}: adapted {} target tasks ({} steps)",
                    tasks.len(),
                    cfg.pipeline.adapt_steps
                );
            }
            let names: Vec<&str> = produced.iter().map(String::as_str).collect();
            finish_run(&out, &cfg, &names)?;
            Ok(())
        }
        Command::Eval { out, config } => {
            let cfg = load_config(&config, None, &out)?;
            let report = build_report(&out, &cfg)?;
            std::fs::write(out.join("report.txt"), &report)?;
            finish_run(&out, &cfg, &["report.txt"])?;
            print!("{report}");
            Ok(())
        }
        Command::Report { out, config } => {
            let cfg = load_config(&config, None, &out)?;
            let report = build_report(&out, &cfg)?;
            let on_disk = out.join("report.txt");
            if on_disk.exists() {
                let existing = std::fs::read_to_string(&on_disk)?;
                if existing != report {
                    bail!(metamiml::Error::InvalidConfig(
                        "stored report.txt does not match its artifacts; re-run eval".into()
                    ));
                }
            } else {
                std::fs::write(&on_disk, &report)?;
            }
            print!("{report}");
            Ok(())
        }
        Command::Sweep {
            graph,
            out,
            config,
            seed,
            param,
            values,
        } => {
            let mut cfg = load_config(&config, seed, &out)?;
            if param != "k" {
                bail!(metamiml::Error::InvalidConfig(format!(
                    "unsupported sweep parameter '{param}' (supported: k)"
                )));
            }
            let values: Vec<usize> = values
                .split(',')
                .map(|v| {
                    v.trim().parse().map_err(|_| {
                        anyhow::anyhow!(metamiml::Error::InvalidConfig(format!(
                            "bad sweep value '{v}'"
                        )))
                    })
                })
                .collect::<Result<_>>()?;
            std::fs::create_dir_all(&out)?;
            let g = Hmin::load(&graph)?;
            resolve_paths(&mut cfg, &g)?;
            let report = pipeline::sweep_k(&g, &cfg.pipeline, &values)?;
            std::fs::write(out.join("sweep.tsv"), &report)?;
            finish_run(&out, &cfg, &["sweep.tsv"])?;
            print!("{report}");
            Ok(())
        }
    }
}

fn load_tables(out: &Path, num_paths: usize) -> Result<Vec<EmbeddingTable>> {
    (0..num_paths)
        .map(|i| Ok(EmbeddingTable::load(&out.join(format!("emb_p{i}.emb")))?))
        .collect()
}

fn build_report(out: &Path, cfg: &RunConfig) -> Result<String> {
    let mut reps = Vec::new();
    for rep in 0.. {
        let path = out.join(format!("rep{rep}")).join("predictions.tsv");
        if !path.exists() {
            break;
        }
        let preds = load_predictions(&path)?;
        reps.push(eval_predictions(&preds, cfg.metrics_k)?);
    }
    if reps.is_empty() {
        bail!(metamiml::Error::InvalidConfig(format!(
            "no rep*/predictions.tsv under {}; run adapt first",
            out.display()
        )));
    }
    Ok(render_rep_report(&reps))
}

/// Write the effective config and upsert the run manifest: the config hash,
/// the master seed, and an FNV-1a64 checksum per produced file. Contains no
/// timestamps, so identical runs produce identical manifests.
fn finish_run(out: &Path, cfg: &RunConfig, produced: &[&str]) -> Result<()> {
    let rendered = cfg.render();
    std::fs::write(out.join("config.effective.txt"), &rendered)?;

    let manifest_path = out.join("manifest.txt");
    let mut entries: std::collections::BTreeMap<String, String> = std::collections::BTreeMap::new();
    if manifest_path.exists() {
        for line in std::fs::read_to_string(&manifest_path)?.lines() {
            let mut tok = line.split_whitespace();
            if tok.next() == Some("file") {
                if let (Some(name), Some(hash)) = (tok.next(), tok.next()) {
                    entries.insert(name.to_string(), hash.to_string());
                }
            }
        }
    }
    for name in produced.iter().copied().chain(["config.effective.txt"]) {
        let bytes = std::fs::read(out.join(name))
            .with_context(|| format!("hashing produced file {name}"))?;
        entries.insert(name.to_string(), format!("{:016x}", fnv1a64(&bytes)));
    }
    let mut text = String::from("MANIFEST v1\n");
    let _ = writeln!(text, "config_hash {:016x}", fnv1a64(rendered.as_bytes()));
    let _ = writeln!(text, "seed {}", cfg.pipeline.master_seed);
    for (name, hash) in &entries {
        let _ = writeln!(text, "file {name} {hash}");
    }
    std::fs::write(manifest_path, text)?;
    Ok(())
}

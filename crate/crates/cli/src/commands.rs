use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use dnaformer_core::channel::{self, generate_corpus, read_truth, DESIGNS_FILE, READS_FILE, TRUTH_FILE};
use dnaformer_core::cluster::{
    build_prefix_index, choose_prefix_length, pseudo_cluster, read_clusters, write_clusters, CLUSTERS_FILE, STATS_FILE,
    UNASSIGNED_FILE,
};
use dnaformer_core::embed::embed_reads;
use dnaformer_core::eval::{distance_histograms, evaluate, plurality_vote, ClusterResult, ReportFile};
use dnaformer_core::model::{load_checkpoint, reconstruct};
use dnaformer_core::seq::{read_sequences, write_sequences};
use dnaformer_core::train::{self, checkpoint_name, TrainOptions, LOG_FILE};
use dnaformer_core::{EmbedConfig, EmbeddedCluster, ErrorModel, EvalReport, ModelConfig, TrainConfig};

use crate::manifest::RunManifest;
use crate::{ClusterArgs, EvalArgs, GenerateArgs, GlobalArgs, ReportArgs, TrainArgs};

pub const PREDICTIONS_FILE: &str = "predictions.txt";
pub const BASELINE_PREDICTIONS_FILE: &str = "baseline_predictions.txt";
pub const REPORT_FILE: &str = "report.json";
pub const HISTOGRAM_FILE: &str = "histogram_model.csv";
pub const BASELINE_HISTOGRAM_FILE: &str = "histogram_baseline.csv";
pub const MARKDOWN_FILE: &str = "report.md";

/// A required input file does not exist (exit code 2).
#[derive(Debug, thiserror::Error)]
#[error("{what} not found: {}", path.display())]
pub struct MissingInput {
    pub what: &'static str,
    pub path: PathBuf,
}

fn read_input(what: &'static str, path: &Path) -> Result<Vec<u8>> {
    if !path.is_file() {
        return Err(MissingInput {
            what,
            path: path.to_path_buf(),
        }
        .into());
    }
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn require(what: &'static str, path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(MissingInput {
            what,
            path: path.to_path_buf(),
        }
        .into())
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn generate(g: &GlobalArgs, a: &GenerateArgs) -> Result<()> {
    let Some(config) = &g.config else {
        bail!(MissingInput {
            what: "error-model config (--config)",
            path: PathBuf::new(),
        });
    };
    let bytes = read_input("error-model config", config)?;
    let model = ErrorModel::from_json(std::str::from_utf8(&bytes).context("config is not UTF-8")?)?;
    if a.n == 0 {
        bail!("--n must be at least 1");
    }
    let seed = g.seed.unwrap_or(0);
    let prefix = choose_prefix_length(a.n, a.margin).min(model.label_length);

    let mut m = RunManifest::new("generate").with_config(&bytes);
    m.seed = Some(seed);
    m.inputs.push(config.clone());
    create_dir(&a.out)?;
    let corpus = m.time("simulate", || generate_corpus(&model, a.n, Some(prefix), seed))?;
    m.time("write", || corpus.write(&a.out))?;
    log::info!(
        "{} designs, {} reads written to {}",
        corpus.designs.len(),
        corpus.reads.len(),
        a.out.display()
    );
    m.outputs = [DESIGNS_FILE, READS_FILE, TRUTH_FILE]
        .iter()
        .map(|f| a.out.join(f))
        .collect();
    m.write(&a.out)
}

pub fn cluster(a: &ClusterArgs) -> Result<()> {
    require("designs file", &a.designs)?;
    require("reads file", &a.reads)?;
    let mut m = RunManifest::new("cluster");
    m.inputs = vec![a.designs.clone(), a.reads.clone()];
    let (designs, reads) = m.time("read", || -> Result<_> {
        Ok((read_sequences(&a.designs)?, read_sequences(&a.reads)?))
    })?;
    let truth = match &a.truth {
        Some(p) => {
            require("truth file", p)?;
            m.inputs.push(p.clone());
            let t = read_truth(p)?;
            if t.len() != reads.len() {
                bail!("truth has {} rows but there are {} reads", t.len(), reads.len());
            }
            Some(t)
        }
        None => None,
    };
    if designs.is_empty() {
        bail!("designs file is empty");
    }
    let prefix = choose_prefix_length(designs.len(), a.margin);
    let index = m.time("index", || build_prefix_index(&designs, prefix))?;
    let clustering = m.time("assign", || pseudo_cluster(&index, &reads, truth.as_deref()));

    create_dir(&a.out)?;
    write_clusters(&a.out, &clustering, &reads)?;
    let stats = serde_json::to_string_pretty(&clustering.stats)?;
    fs::write(a.out.join(STATS_FILE), stats + "\n")?;
    log::info!(
        "{} reads: {} assigned, {} unassigned, {} empty clusters",
        clustering.stats.reads,
        clustering.stats.assigned,
        clustering.stats.unassigned,
        clustering.stats.empty_clusters
    );
    m.outputs = [CLUSTERS_FILE, UNASSIGNED_FILE, STATS_FILE]
        .iter()
        .map(|f| a.out.join(f))
        .collect();
    m.write(&a.out)
}

/// Training config file: `{"train": {...}, "model": {...}}`. A missing
/// `model` is the default network sized for the channel's label length.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub train: TrainConfig,
    pub model: Option<ModelConfig>,
}

pub fn train(g: &GlobalArgs, a: &TrainArgs) -> Result<()> {
    let (bytes, mut file) = match &g.config {
        Some(p) => {
            let bytes = read_input("training config", p)?;
            let file: TrainFile = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", p.display()))?;
            (Some(bytes), file)
        }
        None => (None, TrainFile::default()),
    };
    let channel = channel::load_error_model(&{
        require("error model", &a.error_model)?;
        a.error_model.clone()
    })?;

    let cfg = &mut file.train;
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { cfg.$field = v; } )* };
    }
    set!(
        epochs,
        clusters_per_epoch,
        batch_size,
        lr_max,
        lr_min,
        lambda_ce,
        lambda_hamming
    );
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if g.deterministic {
        cfg.deterministic = true;
    }
    let model_cfg = file.model.clone().unwrap_or_else(|| ModelConfig {
        input_len: channel.label_length + cfg.deviation,
        output_len: channel.label_length,
        seed: cfg.seed,
        ..ModelConfig::default()
    });

    let mut m = RunManifest::new("train");
    if let Some(b) = &bytes {
        m = m.with_config(b);
    }
    m.seed = Some(cfg.seed);
    m.inputs.extend(g.config.clone());
    m.inputs.push(a.error_model.clone());
    let resume = match &a.resume {
        Some(p) => {
            require("resume checkpoint", p)?;
            m.inputs.push(p.clone());
            Some(load_checkpoint::<f32>(p)?)
        }
        None => None,
    };
    let first_epoch = resume.as_ref().and_then(|c| c.train_state).map_or(0, |s| s.epochs_done);
    let opts = TrainOptions {
        out_dir: Some(a.out.clone()),
        resume,
    };
    let outcome = m.time("train", || train::train(&file.train, &model_cfg, &channel, opts))?;
    m.outputs = (first_epoch..file.train.epochs)
        .map(|e| a.out.join(checkpoint_name(e + 1)))
        .collect();
    m.outputs.push(a.out.join(LOG_FILE));
    if let Some(last) = outcome.log.last() {
        log::info!(
            "finished epoch {}: val failure {:.4}",
            last.epoch,
            last.val_failure_rate
        );
    }
    m.write(&a.out)
}

fn write_report_outputs(
    out: &Path,
    name: &str,
    hist_name: &str,
    predictions: &[dnaformer_core::DnaSequence],
    embedded: &[EmbeddedCluster],
    designs: &[dnaformer_core::DnaSequence],
    reads_per_design: &[usize],
) -> Result<(EvalReport, usize, usize)> {
    write_sequences(&out.join(name), predictions)?;
    let results: Vec<ClusterResult> = predictions
        .iter()
        .zip(embedded)
        .enumerate()
        .map(|(i, (p, e))| ClusterResult {
            cluster: i,
            prediction: p.clone(),
            copies_used: e.t_used,
        })
        .collect();
    let ev = evaluate(&results, designs, reads_per_design)?;
    let hist = distance_histograms(&ev.wrong_pairs);
    hist.write_csv(&out.join(hist_name))?;
    Ok((ev.report, hist.length_mismatches(), hist.invariant_violations()))
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    if a.checkpoint.is_none() && !a.baseline {
        bail!("nothing to evaluate: pass --checkpoint and/or --baseline");
    }
    require("clusters file", &a.clusters)?;
    require("designs file", &a.designs)?;
    require("truth file", &a.truth)?;
    let mut m = RunManifest::new("eval");
    m.inputs = vec![a.clusters.clone(), a.designs.clone(), a.truth.clone()];

    let params = match &a.checkpoint {
        Some(p) => {
            require("checkpoint", p)?;
            m.inputs.push(p.clone());
            Some(load_checkpoint::<f32>(p)?.params)
        }
        None => None,
    };
    let designs = read_sequences(&a.designs)?;
    if designs.is_empty() {
        bail!("designs file is empty");
    }
    let mut reads_per_design = vec![0; designs.len()];
    for c in read_truth(&a.truth)? {
        *reads_per_design
            .get_mut(c)
            .ok_or(dnaformer_core::Error::UnknownClusterId(c))? += 1;
    }
    let clusters = read_clusters(&a.clusters, designs.len())?;

    let embed = match &params {
        Some(p) => {
            let c = &p.config;
            if c.input_len < c.output_len {
                bail!("checkpoint input length {} is shorter than its output", c.input_len);
            }
            EmbedConfig {
                label_length: c.output_len,
                deviation: c.input_len - c.output_len,
                max_copies: a.max_copies,
            }
        }
        None => EmbedConfig {
            label_length: designs[0].len(),
            deviation: a.deviation,
            max_copies: a.max_copies,
        },
    };
    embed.validate()?;
    if let Some(d) = designs.iter().find(|d| d.len() != embed.label_length) {
        bail!(
            "design length {} does not match the model output length {}",
            d.len(),
            embed.label_length
        );
    }
    let embedded: Vec<EmbeddedCluster> = m.time("embed", || clusters.iter().map(|c| embed_reads(c, &embed)).collect());

    create_dir(&a.out)?;
    let mut file = ReportFile {
        model: None,
        baseline: None,
        length_mismatches: 0,
        hamming_edit_violations: 0,
    };
    let mut outputs = Vec::new();
    if let Some(params) = &params {
        let start = Instant::now();
        let pred = reconstruct(params, &embedded)?;
        let secs = start.elapsed();
        m.record("reconstruct", secs);
        eprintln!(
            "model: reconstructed {} clusters in {:.3} s ({:.1} clusters/s)",
            pred.len(),
            secs.as_secs_f64(),
            pred.len() as f64 / secs.as_secs_f64().max(1e-12)
        );
        let (report, lm, iv) = write_report_outputs(
            &a.out,
            PREDICTIONS_FILE,
            HISTOGRAM_FILE,
            &pred,
            &embedded,
            &designs,
            &reads_per_design,
        )?;
        file.model = Some(report);
        file.length_mismatches += lm;
        file.hamming_edit_violations += iv;
        outputs.extend([PREDICTIONS_FILE, HISTOGRAM_FILE]);
    }
    if a.baseline {
        let start = Instant::now();
        let pred: Vec<_> = embedded.iter().map(|e| plurality_vote(e, embed.label_length)).collect();
        let secs = start.elapsed();
        m.record("baseline", secs);
        eprintln!(
            "baseline: reconstructed {} clusters in {:.3} s ({:.1} clusters/s)",
            pred.len(),
            secs.as_secs_f64(),
            pred.len() as f64 / secs.as_secs_f64().max(1e-12)
        );
        let (report, lm, iv) = write_report_outputs(
            &a.out,
            BASELINE_PREDICTIONS_FILE,
            BASELINE_HISTOGRAM_FILE,
            &pred,
            &embedded,
            &designs,
            &reads_per_design,
        )?;
        file.baseline = Some(report);
        file.length_mismatches += lm;
        file.hamming_edit_violations += iv;
        outputs.extend([BASELINE_PREDICTIONS_FILE, BASELINE_HISTOGRAM_FILE]);
    }
    fs::write(a.out.join(REPORT_FILE), serde_json::to_string_pretty(&file)? + "\n")?;
    outputs.push(REPORT_FILE);
    m.outputs = outputs.iter().map(|f| a.out.join(f)).collect();
    m.write(&a.out)?;
    if file.hamming_edit_violations > 0 {
        bail!(
            "{} wrong predictions have edit distance above Hamming distance",
            file.hamming_edit_violations
        );
    }
    Ok(())
}

fn report_rows(out: &mut String, name: &str, r: &EvalReport) {
    let _ = writeln!(
        out,
        "| {name} | {} | {} | {} | {} | {} | {:.4}% | {:.4}% |",
        r.tested_clusters,
        r.missing_clusters,
        r.empty_clusters_wrong_pseudo,
        r.wrong_predictions,
        r.correct_predictions,
        100.0 * r.success_rate_existing,
        100.0 * r.total_success_rate,
    );
}

pub fn render_markdown(file: &ReportFile) -> String {
    let mut out = String::from("# Reconstruction report\n\n");
    out.push_str("| method | tested | missing | empty | wrong | correct | success (existing) | success (total) |\n");
    out.push_str("|---|---|---|---|---|---|---|---|\n");
    if let Some(r) = &file.model {
        report_rows(&mut out, "model", r);
    }
    if let Some(r) = &file.baseline {
        report_rows(&mut out, "plurality vote", r);
    }
    let _ = writeln!(
        out,
        "\nWrong predictions with a length mismatch: {}\n\nHamming/edit invariant violations: {}",
        file.length_mismatches, file.hamming_edit_violations
    );
    out
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let bytes = read_input("report", &a.input)?;
    let file: ReportFile = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", a.input.display()))?;
    create_dir(&a.out)?;
    let mut m = RunManifest::new("report");
    m.inputs.push(a.input.clone());
    fs::write(a.out.join(MARKDOWN_FILE), render_markdown(&file))?;
    m.outputs.push(a.out.join(MARKDOWN_FILE));
    m.write(&a.out)
}

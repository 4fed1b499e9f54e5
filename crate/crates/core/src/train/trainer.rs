use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::{LossValues, LossWeights};
use super::schedule::cosine_lr;
use crate::channel::{EccScheme, ErrorModel, Sdg};
use crate::embed::{embed_reads, EmbedConfig, EmbeddedCluster};
use crate::error::{Error, Result};
use crate::model::{self, save_checkpoint, Checkpoint, ModelConfig, ModelParams, TrainState};
use crate::rng;
use crate::seq::DnaSequence;

pub const LOG_FILE: &str = "train_log.csv";
const LOG_HEADER: &str = "epoch,step,lr,loss,ce,hamming_metric,val_failure_rate";

/// Second data source. The share of batches drawn from it rises linearly
/// from 0 in the first epoch to 1 in the last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlendConfig {
    pub source_b: ErrorModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_ce: f64,
    pub lambda_hamming: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clusters_per_epoch: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Held-out synthetic clusters scored after every epoch.
    pub val_clusters: usize,
    /// Gradient reductions are always summed in a fixed order; the flag is
    /// kept so configurations state the requirement explicitly.
    pub deterministic: bool,
    pub blend: Option<BlendConfig>,
    pub ecc: EccScheme,
    /// Length slack and copy cap of the embedding; the label length comes
    /// from the channel model.
    pub deviation: usize,
    pub max_copies: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_ce: 1.0,
            lambda_hamming: 1.0,
            batch_size: 128,
            epochs: 10,
            clusters_per_epoch: 50_000,
            lr_max: 3.141e-5,
            lr_min: 3.141e-7,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            val_clusters: 1000,
            deterministic: true,
            blend: None,
            ecc: EccScheme::Identity,
            deviation: 8,
            max_copies: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lambda_ce >= 0.0 && self.lambda_hamming >= 0.0) {
            return fail(format!(
                "loss weights must be non-negative (lambda_ce {}, lambda_hamming {})",
                self.lambda_ce, self.lambda_hamming
            ));
        }
        if !(self.lr_min > 0.0 && self.lr_max >= self.lr_min) {
            return fail(format!("need lr_max ({}) >= lr_min ({}) > 0", self.lr_max, self.lr_min));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.clusters_per_epoch == 0 {
            return fail("batch_size, epochs and clusters_per_epoch must be >= 1".into());
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return fail("Adam constants must satisfy 0 <= beta < 1 and eps > 0".into());
        }
        if self.max_copies == 0 {
            return fail("max_copies must be >= 1".into());
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            ce: self.lambda_ce,
            hamming: self.lambda_hamming,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn embed_config(&self, label_length: usize) -> EmbedConfig {
        EmbedConfig {
            label_length,
            deviation: self.deviation,
            max_copies: self.max_copies,
        }
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.clusters_per_epoch.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self) -> u64 {
        (self.epochs * self.batches_per_epoch()) as u64
    }
}

/// Whether batch `i` of an epoch with blend fraction `f` comes from the
/// second source. Over `n` batches exactly `floor(n * f)` are selected,
/// spread evenly.
pub fn blend_uses_source_b(i: usize, fraction: f64) -> bool {
    ((i + 1) as f64 * fraction).floor() > (i as f64 * fraction).floor()
}

fn blend_fraction(epoch: usize, epochs: usize) -> f64 {
    if epochs <= 1 {
        0.0
    } else {
        epoch as f64 / (epochs - 1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub ce: f64,
    pub hamming_metric: f64,
    pub val_failure_rate: f64,
}

pub fn write_log_csv(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{:e},{},{},{},{}\n",
            r.epoch, r.step, r.lr, r.loss, r.ce, r.hamming_metric, r.val_failure_rate
        ));
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

pub fn read_log_csv(path: &Path) -> Result<Vec<LogRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return Err(Error::Parse {
            what: path.display().to_string(),
            reason: "unexpected training log header".into(),
        });
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let bad = || Error::Parse {
                what: path.display().to_string(),
                reason: format!("bad log row `{line}`"),
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(LogRow {
                epoch: f[0].parse().map_err(|_| bad())?,
                step: f[1].parse().map_err(|_| bad())?,
                lr: num(f[2])?,
                loss: num(f[3])?,
                ce: num(f[4])?,
                hamming_metric: num(f[5])?,
                val_failure_rate: num(f[6])?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Directory for per-epoch checkpoints and the training log.
    pub out_dir: Option<PathBuf>,
    /// Continue from this checkpoint (parameters, Adam moments, counters).
    pub resume: Option<Checkpoint<f32>>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
    pub log: Vec<LogRow>,
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.ckpt")
}

struct Prepared {
    input: Vec<f32>,
    labels: Vec<u8>,
}

fn prepare(clusters: &[(DnaSequence, EmbeddedCluster)]) -> Prepared {
    let mut input = Vec::new();
    let mut labels = Vec::new();
    for (design, e) in clusters {
        input.extend(e.counts.iter().flatten().map(|&v| v as f32));
        labels.extend_from_slice(design.codes());
    }
    Prepared { input, labels }
}

fn sample_clusters(sdg: &Sdg<'_>, seed: u64, n: usize, embed: &EmbedConfig) -> Vec<(DnaSequence, EmbeddedCluster)> {
    let clusters = sdg.batch(&mut rng::stream(seed, "sdg", 0), n);
    let mut shuffle = rng::stream(seed, "shuffle", 0);
    clusters
        .into_iter()
        .map(|c| {
            let reads = c.shuffled_reads(&mut shuffle);
            (c.design, embed_reads(&reads, embed))
        })
        .collect()
}

fn failure_rate(params: &ModelParams<f32>, val: &[(DnaSequence, EmbeddedCluster)]) -> Result<f64> {
    if val.is_empty() {
        return Ok(0.0);
    }
    let embedded: Vec<EmbeddedCluster> = val.iter().map(|(_, e)| e.clone()).collect();
    let pred = model::reconstruct(params, &embedded)?;
    let wrong = pred.iter().zip(val).filter(|(p, (d, _))| *p != d).count();
    Ok(wrong as f64 / val.len() as f64)
}

/// Trains a fresh (or resumed) model on synthetic clusters drawn from
/// `channel`, with new data every epoch.
pub fn train(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    channel: &ErrorModel,
    opts: TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    channel.validate()?;
    let label_len = channel.label_length;
    let embed = cfg.embed_config(label_len);
    embed.validate()?;
    if model_cfg.input_len != embed.input_len() || model_cfg.output_len != label_len {
        return Err(Error::InvalidConfig(format!(
            "model lengths {}→{} do not match embedding {}→{}",
            model_cfg.input_len,
            model_cfg.output_len,
            embed.input_len(),
            label_len
        )));
    }
    cfg.ecc.payload_len(label_len)?;
    if let Some(b) = &cfg.blend {
        b.source_b.validate()?;
        if b.source_b.label_length != label_len {
            return Err(Error::InvalidConfig("blend source has a different label length".into()));
        }
    }

    let (mut params, mut adam, state) = match opts.resume {
        Some(ck) => {
            if ck.params.config != *model_cfg {
                return Err(Error::Checkpoint(
                    "resume checkpoint has a different model config".into(),
                ));
            }
            let n = ck.params.len();
            let adam = ck.adam.unwrap_or_else(|| AdamState::new(n));
            (ck.params, adam, ck.train_state.unwrap_or_default())
        }
        None => {
            let p = ModelParams::<f32>::init(model_cfg.clone())?;
            let n = p.len();
            (p, AdamState::new(n), TrainState::default())
        }
    };

    let mut log = Vec::new();
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOG_FILE);
        if state.epochs_done > 0 && path.exists() {
            log = read_log_csv(&path)?;
            log.truncate(state.epochs_done);
        }
    }

    let sdg_a = Sdg {
        ecc: cfg.ecc,
        ..Sdg::new(channel)
    };
    let sdg_b = cfg.blend.as_ref().map(|b| Sdg {
        ecc: cfg.ecc,
        ..Sdg::new(&b.source_b)
    });
    // Validation follows the distribution training ends on.
    let val_sdg = sdg_b.unwrap_or(sdg_a);
    let val = sample_clusters(
        &val_sdg,
        rng::derive_u64(cfg.seed, "validation", 0),
        cfg.val_clusters,
        &embed,
    );

    let weights = cfg.loss_weights();
    let adam_cfg = cfg.adam();
    let total = cfg.total_steps();
    let per_epoch = cfg.batches_per_epoch();
    let mut step = state.step;
    let mut checkpoints = Vec::new();

    for epoch in state.epochs_done..cfg.epochs {
        let fraction = blend_fraction(epoch, cfg.epochs);
        let mut sum = LossValues::default();
        let mut lr = cosine_lr(step, total, cfg.lr_max, cfg.lr_min);
        for i in 0..per_epoch {
            let size = cfg.batch_size.min(cfg.clusters_per_epoch - i * cfg.batch_size);
            let batch_seed = rng::derive_u64(cfg.seed, "batch", (epoch * per_epoch + i) as u64);
            let sdg = match &sdg_b {
                Some(b) if blend_uses_source_b(i, fraction) => b,
                _ => &sdg_a,
            };
            let data = prepare(&sample_clusters(sdg, batch_seed, size, &embed));
            let diverged = |source: Error| Error::Diverged {
                epoch,
                batch: i,
                batch_seed,
                source: Box::new(source),
            };
            let (values, grads) =
                model::loss_and_grad(&params, &data.input, size, &data.labels, weights).map_err(diverged)?;
            lr = cosine_lr(step, total, cfg.lr_max, cfg.lr_min);
            adam_step(&mut params.data, &grads, &mut adam, lr, &adam_cfg, Some(&params.layout)).map_err(diverged)?;
            step += 1;
            sum = sum.add(&values.scale(size as f64));
            if (i + 1) % 50 == 0 {
                log::debug!(
                    "epoch {} batch {}/{} loss {:.5} ham {:.5}",
                    epoch + 1,
                    i + 1,
                    per_epoch,
                    values.loss,
                    values.hamming_metric
                );
            }
        }
        let mean = sum.scale(1.0 / cfg.clusters_per_epoch as f64);
        let val_failure_rate = failure_rate(&params, &val)?;
        let row = LogRow {
            epoch: epoch + 1,
            step,
            lr,
            loss: mean.loss,
            ce: mean.ce,
            hamming_metric: mean.hamming_metric,
            val_failure_rate,
        };
        log::info!(
            "epoch {} step {} lr {:.3e} loss {:.5} ce {:.5} hamming {:.5} val_failure {:.4}",
            row.epoch,
            row.step,
            row.lr,
            row.loss,
            row.ce,
            row.hamming_metric,
            row.val_failure_rate
        );
        log.push(row);
        if let Some(dir) = &opts.out_dir {
            let path = dir.join(checkpoint_name(epoch + 1));
            let ck = Checkpoint {
                params,
                adam: Some(adam),
                train_state: Some(TrainState {
                    epochs_done: epoch + 1,
                    step,
                }),
            };
            save_checkpoint(&path, &ck)?;
            params = ck.params;
            adam = ck.adam.unwrap();
            write_log_csv(&dir.join(LOG_FILE), &log)?;
            checkpoints.push(path);
        }
    }
    Ok(TrainOutcome {
        params,
        adam,
        log,
        checkpoints,
    })
}

use dnaformer_core::channel::{generate_corpus, ErrorModel};
use dnaformer_core::cluster::{build_prefix_index, choose_prefix_length, pseudo_cluster, DEFAULT_MARGIN};
use dnaformer_core::embed::{embed_reads, EmbedConfig};
use dnaformer_core::eval::{evaluate, plurality_vote, ClusterResult, Outcome};
use dnaformer_core::model::{load_checkpoint, ModelConfig};
use dnaformer_core::train::{read_log_csv, train, BlendConfig, TrainConfig, TrainOptions, LOG_FILE};

fn small_model(l: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        input_len: l + 8,
        output_len: l,
        d_model: 16,
        kernel_sizes: vec![3, 5],
        depth_multiplier: 2,
        n_blocks: 1,
        n_heads: 2,
        d_ff: 32,
        seed,
    }
}

#[test]
fn read_statistics_follow_the_channel() {
    let (p_sub, p_del, p_ins, l) = (0.04, 0.02, 0.01, 100);
    let mut m = ErrorModel::uniform(p_sub, p_del, p_ins, l);
    m.copies_min = 5;
    m.copies_max = 5;
    let c = generate_corpus(&m, 2000, None, 17).unwrap();
    let n = c.reads.len() as f64;
    let mean_len = c.reads.iter().map(|r| r.len()).sum::<usize>() as f64 / n;
    // Deletions remove L·p_del symbols, insertions add (L+1)·p_ins.
    let expected = l as f64 * (1.0 - p_del) + (l + 1) as f64 * p_ins;
    assert!((mean_len - expected).abs() < 0.05, "{mean_len} vs {expected}");
    let dels = c.tallies.iter().map(|t| t.deletions as f64).sum::<f64>() / n;
    assert!((dels - l as f64 * p_del).abs() < 0.05, "{dels}");
    let subs = c.tallies.iter().map(|t| t.substitutions as f64).sum::<f64>() / n;
    assert!((subs - l as f64 * (1.0 - p_del) * p_sub).abs() < 0.1, "{subs}");
}

#[test]
fn noiseless_pipeline_with_plurality_vote_is_perfect() {
    let mut m = ErrorModel::noiseless(60);
    m.copies_min = 1;
    m.copies_max = 3;
    let n = 500;
    let prefix = choose_prefix_length(n, DEFAULT_MARGIN);
    let mut c = generate_corpus(&m, n, Some(prefix), 2).unwrap();
    // Drop every read of every seventh design so some designs are missing.
    let keep: Vec<bool> = c.truth.iter().map(|&t| t % 7 != 0).collect();
    let mut k = keep.iter();
    c.reads.retain(|_| *k.next().unwrap());
    c.truth.retain(|t| t % 7 != 0);
    let index = build_prefix_index(&c.designs, prefix).unwrap();
    let clustering = pseudo_cluster(&index, &c.reads, Some(&c.truth));
    let cfg = EmbedConfig {
        label_length: 60,
        ..EmbedConfig::default()
    };
    let results: Vec<ClusterResult> = (0..n)
        .map(|i| {
            let e = embed_reads(clustering.cluster_reads(&c.reads, i), &cfg);
            ClusterResult {
                cluster: i,
                prediction: plurality_vote(&e, 60),
                copies_used: e.t_used,
            }
        })
        .collect();
    let ev = evaluate(&results, &c.designs, &c.reads_per_design()).unwrap();
    let missing = c.reads_per_design().iter().filter(|&&k| k == 0).count();
    assert_eq!(missing, n.div_ceil(7));
    assert_eq!(ev.report.missing_clusters, missing);
    assert_eq!(ev.report.correct_predictions, n - missing);
    assert_eq!(ev.report.failure_rate, 0.0);
    assert!(ev
        .outcomes
        .iter()
        .all(|o| matches!(o, Outcome::Correct | Outcome::Missing)));
}

#[test]
fn zero_noise_training_reaches_zero_validation_failure() {
    let mut m = ErrorModel::noiseless(16);
    m.copies_min = 1;
    m.copies_max = 4;
    let cfg = TrainConfig {
        epochs: 3,
        clusters_per_epoch: 2048,
        batch_size: 32,
        val_clusters: 128,
        lr_max: 1e-2,
        lr_min: 1e-4,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let out = train(
        &cfg,
        &small_model(16, 4),
        &m,
        TrainOptions {
            out_dir: Some(dir.path().to_path_buf()),
            resume: None,
        },
    )
    .unwrap();
    assert_eq!(out.log.len(), 3);
    assert_eq!(out.log.last().unwrap().val_failure_rate, 0.0, "{:?}", out.log);
    assert_eq!(read_log_csv(&dir.path().join(LOG_FILE)).unwrap(), out.log);
    assert_eq!(out.checkpoints.len(), 3);
    let ck = load_checkpoint::<f32>(out.checkpoints.last().unwrap()).unwrap();
    assert_eq!(ck.params.data, out.params.data);
    assert_eq!(ck.adam.unwrap().step, 3 * 64);
}

#[test]
fn blended_training_runs_and_differs_from_single_source() {
    let a = ErrorModel::uniform(0.02, 0.0, 0.0, 12);
    let b = ErrorModel::uniform(0.0, 0.02, 0.02, 12);
    let base = TrainConfig {
        epochs: 3,
        clusters_per_epoch: 64,
        batch_size: 16,
        val_clusters: 16,
        ..TrainConfig::default()
    };
    let blended = TrainConfig {
        blend: Some(BlendConfig { source_b: b }),
        ..base.clone()
    };
    let model = small_model(12, 1);
    let plain = train(&base, &model, &a, TrainOptions::default()).unwrap();
    let mixed = train(&blended, &model, &a, TrainOptions::default()).unwrap();
    // The first epoch draws only from source A in both runs.
    assert_eq!(plain.log[0].loss, mixed.log[0].loss);
    assert_ne!(plain.params.data, mixed.params.data);

    let mismatched = TrainConfig {
        blend: Some(BlendConfig {
            source_b: ErrorModel::noiseless(13),
        }),
        ..base
    };
    assert!(train(&mismatched, &model, &a, TrainOptions::default()).is_err());
}

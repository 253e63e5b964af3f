//! One quick pass over the whole library pipeline: corpus -> vocabulary ->
//! pretraining -> sampling -> oracle fine-tuning -> metric report. Fails
//! fast and in one place when a cross-module seam breaks; the acceptance
//! suite covers the quantitative claims.

use molgen::metrics;
use molgen::model::ModelConfig;
use molgen::oracle::lookup;
use molgen::pretrain::{build_vocab, pretrain, TrainConfig};
use molgen::rl::{finetune, RLConfig, StopReason};
use molgen::sample::{sample, SampleConfig};
use molgen::smiles::is_valid;

#[test]
fn corpus_to_report() {
    let dir = tempfile::tempdir().unwrap();
    let motifs = ["C1CC1", "C1CCC1", "CC", "CCC", "CC(C)C", "CCCC"];
    let corpus: String = (0..120)
        .map(|i| motifs[i % motifs.len()])
        .collect::<Vec<_>>()
        .join("\n")
        + "\n";
    let corpus_path = dir.path().join("corpus.smi");
    std::fs::write(&corpus_path, &corpus).unwrap();

    let vocab = build_vocab(&corpus_path).unwrap();
    assert_eq!(vocab.size(), 8, "specials + C 1 ( )");

    let model_cfg = ModelConfig {
        vocab_size: vocab.size(),
        max_len: 12,
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        d_ff: 32,
        dropout_rate: 0.1,
    };
    let train_cfg = TrainConfig {
        batch_size: 16,
        max_steps: 400,
        peak_lr: 1e-3,
        warmup_steps: 20,
        seed: 3,
        validation_fraction: 0.2,
        checkpoint_interval: 200,
    };
    let trained = pretrain(&corpus_path, &vocab, &model_cfg, &train_cfg, dir.path(), None).unwrap();
    assert_eq!(trained.checkpoint.step, 400);
    assert_eq!(trained.dropped_long, 0);
    assert!(trained.checkpoint_path.exists());

    let batch = sample(
        &trained.checkpoint,
        &SampleConfig {
            temperature: 1.0,
            greedy: false,
            max_len: 11,
            batch_size: 100,
            seed: 14,
        },
    )
    .unwrap();
    let valid = (0..100)
        .filter(|&i| batch.terminated[i] && is_valid(&batch.decoded[i]))
        .count();
    assert!(valid >= 50, "only {valid}/100 valid after pretraining");

    let spec = lookup("ring_presence").unwrap();
    let rl_cfg = RLConfig {
        sigma: 60.0,
        batch_size: 8,
        max_steps: 10,
        lr: 5e-4,
        replay_capacity: 20,
        replay_sample: 2,
        oracle_budget: 200,
        seed: 21,
    };
    let tuned = finetune(&trained.checkpoint, &spec, &rl_cfg).unwrap();
    assert_eq!(tuned.stop, StopReason::MaxSteps);
    assert_eq!(tuned.records.len(), 10);
    assert!(!tuned.ledger.entries().is_empty());

    let report = metrics::report(&tuned.ledger, "ring_presence").unwrap();
    assert_eq!(report.n_calls, tuned.ledger.entries().len());
    assert!(report.final_top1 >= report.final_top10);
    assert!((0.0..=1.0).contains(&report.auc_top1));
    assert_eq!(
        report.length.short_count + report.length.long_count,
        report.n_calls
    );
}

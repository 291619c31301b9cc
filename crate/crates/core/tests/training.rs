//! Training-loop contracts: determinism, loss identities, learning on the
//! synthetic corpus, early stopping, and checkpoint reproducibility.

mod common;

use common::{model_for, synth_fixture, Fixture};
use stamp_core::corpus::TrainBatcher;
use stamp_core::evaluator::{evaluate_examples, EvalConfig};
use stamp_core::map::{MapConfig, MapHead};
use stamp_core::model::{read_checkpoint, Model};
use stamp_core::sap::{PruneConfig, Strategy};
use stamp_core::trainer::{run_training, RunSetup, StopReason, TrainConfig, Trainer};

fn quick_eval() -> EvalConfig {
    EvalConfig {
        beam_width: 10,
        top_k: 10,
        recall_ks: vec![10],
        hit_ks: vec![],
        max_users: Some(20),
        chunk: 16,
    }
}

fn train_cfg(max_steps: usize, eval_interval: usize, patience: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        weight_decay: 1e-4,
        batch_size: 8,
        max_steps,
        eval_interval_steps: eval_interval,
        early_stop_patience: patience,
        seed,
        deterministic: true,
    }
}

fn run_steps(fx: &Fixture, model: &mut Model, head: Option<&mut MapHead>, prune: PruneConfig, cfg: TrainConfig, steps: usize) -> Vec<stamp_core::trainer::StepRecord> {
    let mut batcher = TrainBatcher::new(&fx.ds, &fx.splits.train, 6, fx.layout, cfg.batch_size, cfg.seed).unwrap();
    let mut trainer = Trainer::new(model, head, prune, cfg).unwrap();
    (0..steps)
        .map(|_| trainer.train_step(&batcher.next_batch().unwrap()).unwrap())
        .collect()
}

#[test]
fn same_seed_same_records() {
    let fx = synth_fixture(60, 80, 8, 3, 60);
    let mk = || model_for(&fx, 2, 16, 4, 32, 61);
    let cfg = train_cfg(50, 1000, 10, 7);
    let mut m1 = mk();
    let mut m2 = mk();
    let r1 = run_steps(&fx, &mut m1, None, PruneConfig::none(), cfg, 30);
    let r2 = run_steps(&fx, &mut m2, None, PruneConfig::none(), cfg, 30);
    for (a, b) in r1.iter().zip(r2.iter()) {
        assert_eq!(a.l_ntp.to_bits(), b.l_ntp.to_bits());
        assert_eq!(a.l_total.to_bits(), b.l_total.to_bits());
    }
    assert_eq!(m1.params.flatten(), m2.params.flatten());
}

#[test]
fn step_record_loss_identity() {
    let fx = synth_fixture(60, 80, 8, 3, 62);
    let mut model = model_for(&fx, 2, 16, 4, 32, 63);
    let mut head = MapHead::new(
        MapConfig { lambda: 0.3, fusion_hidden: 16, enabled: true },
        16,
        64,
    )
    .unwrap();
    let prune = PruneConfig {
        alpha: 0.5,
        l_prune: 1,
        window_w: 6,
        strategy: Strategy::Sap,
    };
    let records = run_steps(&fx, &mut model, Some(&mut head), prune, train_cfg(40, 1000, 10, 8), 40);
    for r in &records {
        assert!(
            (r.l_total - (r.l_ntp + 0.3 * r.l_map)).abs() <= 1e-12,
            "step {}: {} vs {} + 0.3*{}",
            r.step,
            r.l_total,
            r.l_ntp,
            r.l_map
        );
        assert!(r.l_map >= 0.0 && r.l_map.is_finite());
    }
}

#[test]
fn plain_ntp_training_reduces_loss() {
    let fx = synth_fixture(120, 200, 16, 3, 65);
    let mut model = model_for(&fx, 2, 24, 4, 48, 66);
    let records = run_steps(&fx, &mut model, None, PruneConfig::none(), train_cfg(200, 10_000, 10, 9), 200);
    let head_mean: f64 = records[..20].iter().map(|r| r.l_ntp).sum::<f64>() / 20.0;
    let tail_mean: f64 = records[180..].iter().map(|r| r.l_ntp).sum::<f64>() / 20.0;
    assert!(
        tail_mean < head_mean * 0.8,
        "loss did not fall: {} -> {}",
        head_mean,
        tail_mean
    );
}

#[test]
fn lambda_zero_trajectory_matches_disabled_head() {
    let fx = synth_fixture(60, 80, 8, 3, 67);
    let cfg = train_cfg(50, 1000, 10, 11);
    let mut with_head = model_for(&fx, 2, 16, 4, 32, 68);
    let mut head = MapHead::new(
        MapConfig { lambda: 0.0, fusion_hidden: 16, enabled: true },
        16,
        69,
    )
    .unwrap();
    let r_head = run_steps(&fx, &mut with_head, Some(&mut head), PruneConfig::none(), cfg, 50);
    let mut without = model_for(&fx, 2, 16, 4, 32, 68);
    let r_plain = run_steps(&fx, &mut without, None, PruneConfig::none(), cfg, 50);
    for (a, b) in r_head.iter().zip(r_plain.iter()) {
        assert_eq!(a.l_ntp.to_bits(), b.l_ntp.to_bits(), "step {}", a.step);
        assert_eq!(a.l_total.to_bits(), b.l_total.to_bits(), "step {}", a.step);
    }
    assert_eq!(with_head.params.flatten(), without.params.flatten());
}

#[test]
fn early_stop_fires_after_patience_intervals() {
    let fx = synth_fixture(60, 80, 8, 3, 70);
    let mut model = model_for(&fx, 1, 16, 4, 32, 71);
    let mut head = None;
    // Learning rate 0 keeps the validation metric constant: the first
    // evaluation sets the best, the second shows no improvement, and with
    // patience 1 the run stops after exactly two evaluations.
    let cfg = TrainConfig {
        learning_rate: 1e-30,
        eval_interval_steps: 5,
        early_stop_patience: 1,
        max_steps: 100,
        ..train_cfg(100, 5, 1, 12)
    };
    let setup = RunSetup {
        ds: &fx.ds,
        splits: &fx.splits,
        trie: &fx.trie,
        layout: fx.layout,
        window_items: 6,
        eval: quick_eval(),
    };
    let out = run_training(&mut model, &mut head, PruneConfig::none(), cfg, &setup).unwrap();
    assert_eq!(out.stop, StopReason::EarlyStop);
    assert_eq!(out.records.len(), 10); // two evaluation intervals
    assert_eq!(out.best_step, 5);
}

#[test]
fn max_steps_below_one_interval_stops_at_max_steps() {
    let fx = synth_fixture(60, 80, 8, 3, 72);
    let mut model = model_for(&fx, 1, 16, 4, 32, 73);
    let mut head = None;
    let cfg = TrainConfig {
        max_steps: 3,
        eval_interval_steps: 100,
        ..train_cfg(3, 100, 10, 13)
    };
    let setup = RunSetup {
        ds: &fx.ds,
        splits: &fx.splits,
        trie: &fx.trie,
        layout: fx.layout,
        window_items: 6,
        eval: quick_eval(),
    };
    let out = run_training(&mut model, &mut head, PruneConfig::none(), cfg, &setup).unwrap();
    assert_eq!(out.stop, StopReason::MaxSteps);
    assert_eq!(out.records.len(), 3);
}

#[test]
fn checkpoint_reload_reproduces_validation_metric() {
    let fx = synth_fixture(80, 100, 8, 3, 74);
    let mut model = model_for(&fx, 2, 16, 4, 32, 75);
    let _ = run_steps(&fx, &mut model, None, PruneConfig::none(), train_cfg(30, 1000, 10, 14), 30);
    let eval = quick_eval();
    let before = evaluate_examples(
        &model,
        PruneConfig::none(),
        &fx.ds,
        &fx.splits.val[..20],
        &fx.trie,
        fx.layout,
        6,
        &eval,
    )
    .unwrap();
    let mut buf = Vec::new();
    model.save_checkpoint(&mut buf, None).unwrap();
    let (restored, head) = read_checkpoint(buf.as_slice()).unwrap().into_model().unwrap();
    assert!(head.is_none());
    let after = evaluate_examples(
        &restored,
        PruneConfig::none(),
        &fx.ds,
        &fx.splits.val[..20],
        &fx.trie,
        fx.layout,
        6,
        &eval,
    )
    .unwrap();
    assert_eq!(before.recall_at, after.recall_at);
    assert_eq!(before.ndcg_at, after.ndcg_at);
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let fx = synth_fixture(60, 80, 8, 3, 76);
    let mut model = model_for(&fx, 1, 16, 4, 32, 77);
    // Poison one parameter so the loss goes non-finite.
    model.params.entries[0].data[0] = f64::NAN;
    let cfg = train_cfg(5, 1000, 10, 15);
    let mut batcher = TrainBatcher::new(&fx.ds, &fx.splits.train, 6, fx.layout, 8, 15).unwrap();
    let mut trainer = Trainer::new(&mut model, None, PruneConfig::none(), cfg).unwrap();
    let err = trainer.train_step(&batcher.next_batch().unwrap()).unwrap_err();
    let msg = format!("{}", err);
    assert!(msg.contains("step 1"), "{}", msg);
    assert!(msg.contains("ntp"), "{}", msg);
}

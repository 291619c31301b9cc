//! Manual probe of desk-scale step timing; run with --ignored.

mod common;

use common::synth_fixture;
use stamp_core::model::{Model, ModelConfig};
use stamp_core::sap::{PruneConfig, Strategy};
use stamp_core::trainer::{TrainConfig, Trainer};

#[test]
#[ignore]
fn desk_scale_step_timing() {
    let fx = synth_fixture(600, 2000, 256, 3, 1);
    let cfg = ModelConfig::desk_default(fx.layout.vocab_size());
    let train = TrainConfig {
        batch_size: 32,
        deterministic: true,
        ..TrainConfig::default()
    };
    for (name, prune) in [
        ("base", PruneConfig::none()),
        (
            "sap13",
            PruneConfig {
                alpha: 1.0 / 3.0,
                l_prune: 1,
                window_w: 6,
                strategy: Strategy::Sap,
            },
        ),
    ] {
        let mut model = Model::new(cfg, 3).unwrap();
        let mut batcher = stamp_core::corpus::TrainBatcher::new(
            &fx.ds,
            &fx.splits.train,
            40,
            fx.layout,
            train.batch_size,
            train.seed,
        )
        .unwrap();
        let mut trainer = Trainer::new(&mut model, None, prune, train).unwrap();
        let mut wall = Vec::new();
        let mut peak = 0u64;
        for _ in 0..12 {
            let r = trainer.train_step(&batcher.next_batch().unwrap()).unwrap();
            wall.push(r.wall_millis);
            peak = peak.max(r.high_water_bytes);
        }
        let tail = &wall[4..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        println!(
            "{}: mean {:.1} ms/step (min {:.1}), peak {:.1} MB",
            name,
            mean,
            tail.iter().cloned().fold(f64::INFINITY, f64::min),
            peak as f64 / 1e6
        );
    }
}

#[test]
#[ignore]
fn phase_timing() {
    use stamp_core::kernel::Graph;
    use stamp_core::model::{nll_loss, ForwardOpts, Phase};
    use std::time::Instant;
    let fx = synth_fixture(600, 2000, 256, 3, 1);
    let cfg = ModelConfig::desk_default(fx.layout.vocab_size());
    let model = Model::new(cfg, 3).unwrap();
    let mut batcher = stamp_core::corpus::TrainBatcher::new(&fx.ds, &fx.splits.train, 40, fx.layout, 32, 42).unwrap();
    stamp_core::kernel::set_deterministic(true);
    for round in 0..4 {
        let batch = batcher.next_batch().unwrap();
        let t0 = Instant::now();
        let mut g = Graph::new();
        let trace = model.forward(&mut g, &batch, ForwardOpts { phase: Phase::Train, hook: None, retain_probs: &[], rng: None }).unwrap();
        let l = nll_loss(&mut g, &trace, &batch).unwrap();
        let t1 = Instant::now();
        g.backward(l).unwrap();
        let t2 = Instant::now();
        drop(g);
        let t3 = Instant::now();
        println!("round {}: fwd {:.0} ms, bwd {:.0} ms, drop {:.0} ms", round,
            (t1-t0).as_secs_f64()*1e3, (t2-t1).as_secs_f64()*1e3, (t3-t2).as_secs_f64()*1e3);
    }
}

//! Pruning-path contracts on the backbone: keep-all identities, causality,
//! protected-window survival, and the attention-FLOP scaling law.

mod common;

use common::{model_for, synth_fixture, train_batch, Fixture};
use stamp_core::corpus::Example;
use stamp_core::kernel::Graph;
use stamp_core::model::{ForwardOpts, Model, Phase};
use stamp_core::sap::{IdentityHook, PruneConfig, SapHook, Strategy};

fn forward_logits(model: &Model, fx: &Fixture, hook: Option<&dyn stamp_core::model::PruneHook>, n: usize) -> (Vec<f64>, stamp_core::model::ForwardTrace, Graph) {
    let batch = train_batch(fx, n, 6);
    let mut g = Graph::new();
    let trace = model
        .forward(
            &mut g,
            &batch,
            ForwardOpts {
                phase: Phase::Eval,
                hook,
                retain_probs: &[],
                rng: None,
            },
        )
        .unwrap();
    let logits = g.value(trace.logits).to_vec();
    (logits, trace, g)
}

#[test]
fn identity_hook_is_bitwise_noop() {
    let fx = synth_fixture(40, 60, 8, 3, 5);
    let model = model_for(&fx, 3, 16, 4, 32, 9);
    let (base, base_trace, _gb) = forward_logits(&model, &fx, None, 6);
    let hook = IdentityHook { l_prune: 1 };
    let (hooked, trace, _gh) = forward_logits(&model, &fx, Some(&hook), 6);
    assert_eq!(trace.seq_len, base_trace.seq_len);
    assert_eq!(base.len(), hooked.len());
    for (a, b) in base.iter().zip(hooked.iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn alpha_one_matches_hookless_path_bitwise() {
    let fx = synth_fixture(40, 60, 8, 3, 6);
    let model = model_for(&fx, 3, 16, 4, 32, 10);
    let (base, base_trace, _gb) = forward_logits(&model, &fx, None, 6);
    let hook = SapHook {
        cfg: PruneConfig {
            alpha: 1.0,
            l_prune: 1,
            window_w: 3,
            strategy: Strategy::Sap,
        },
    };
    let (pruned, trace, _gp) = forward_logits(&model, &fx, Some(&hook), 6);
    let vocab = model.cfg.vocab_size;
    // At alpha = 1 the hook keeps every valid token, so both runs cover the
    // same positions and must agree bitwise at every one of them. (Padding
    // rows are unspecified garbage in both runs and masked everywhere.)
    assert_eq!(trace.seq_len, base_trace.seq_len);
    assert_eq!(trace.kept, base_trace.kept);
    assert_eq!(pruned.len(), base.len());
    for b in 0..trace.batch {
        for (sp, sb) in trace.valid_slots(b).iter().zip(base_trace.valid_slots(b).iter()) {
            let got = &pruned[(b * trace.seq_len + sp) * vocab..(b * trace.seq_len + sp + 1) * vocab];
            let want = &base[(b * base_trace.seq_len + sb) * vocab..(b * base_trace.seq_len + sb + 1) * vocab];
            for (x, y) in got.iter().zip(want.iter()) {
                assert_eq!(x.to_bits(), y.to_bits(), "seq {} slot {}", b, sp);
            }
        }
    }
}

#[test]
fn hook_keeping_last_w_shrinks_attention_shapes() {
    let fx = synth_fixture(40, 60, 8, 3, 7);
    let model = model_for(&fx, 3, 16, 4, 32, 11);
    let w = 5;
    let hook = SapHook {
        cfg: PruneConfig {
            // alpha small enough that the budget clamps to the window
            alpha: 1e-9,
            l_prune: 1,
            window_w: w,
            strategy: Strategy::Sap,
        },
    };
    let (_, trace, g) = forward_logits(&model, &fx, Some(&hook), 6);
    assert_eq!(trace.seq_len, w);
    assert_eq!(g.shape(trace.logits)[0], trace.batch * w);
    for b in 0..trace.batch {
        assert_eq!(trace.kept[b].len(), w);
    }
}

#[test]
fn perturbing_a_token_never_touches_earlier_logits() {
    let fx = synth_fixture(40, 60, 8, 3, 8);
    let model = model_for(&fx, 2, 16, 4, 32, 12);
    let mut batch = train_batch(&fx, 4, 6);
    let mut g = Graph::new();
    let trace = model
        .forward(&mut g, &batch, ForwardOpts::default())
        .unwrap();
    let base = g.value(trace.logits).to_vec();
    let vocab = model.cfg.vocab_size;

    // Perturb a mid-history valid token of sequence 2 (original slot p).
    let b = 2;
    let rank = trace.kept[b].len() / 2;
    let p = trace.kept[b][rank];
    let old = batch.input_ids[b * batch.width + p];
    batch.input_ids[b * batch.width + p] = if old == 2 { 3 } else { 2 };

    let mut g2 = Graph::new();
    let trace2 = model
        .forward(&mut g2, &batch, ForwardOpts::default())
        .unwrap();
    let new = g2.value(trace2.logits).to_vec();
    // Same validity pattern, so both traces share the compacted layout.
    assert_eq!(trace2.kept, trace.kept);
    assert_eq!(trace2.seq_len, trace.seq_len);
    let slots = trace.valid_slots(b);
    let mut saw_diff = false;
    for (slot, &orig) in slots.iter().zip(trace.kept[b].iter()) {
        let a = &base[(b * trace.seq_len + slot) * vocab..(b * trace.seq_len + slot + 1) * vocab];
        let bn = &new[(b * trace.seq_len + slot) * vocab..(b * trace.seq_len + slot + 1) * vocab];
        if orig < p {
            for (x, y) in a.iter().zip(bn.iter()) {
                assert_eq!(x.to_bits(), y.to_bits(), "original {} before perturbed {}", orig, p);
            }
        } else if orig == p {
            saw_diff = a.iter().zip(bn.iter()).any(|(x, y)| x != y);
        }
    }
    assert!(saw_diff, "perturbation had no effect at the perturbed position");
}

#[test]
fn final_positions_survive_every_strategy() {
    let fx = synth_fixture(60, 80, 8, 3, 9);
    let model = model_for(&fx, 3, 16, 4, 32, 13);
    for strategy in [
        Strategy::Sap,
        Strategy::L2,
        Strategy::AttentionOnly,
        Strategy::MaxPool,
        Strategy::AvgPool,
    ] {
        let hook = SapHook {
            cfg: PruneConfig {
                alpha: 0.4,
                l_prune: 1,
                window_w: 4,
                strategy,
            },
        };
        let (_, trace, _g) = forward_logits(&model, &fx, Some(&hook), 8);
        // The last depth*1 original positions must appear in the kept map
        // (teacher-forced prefix plus final history token).
        let batch = train_batch(&fx, 8, 6);
        for b in 0..trace.batch {
            let orig_valid: Vec<usize> = (0..batch.width)
                .filter(|&i| batch.valid[b * batch.width + i])
                .collect();
            let last3 = &orig_valid[orig_valid.len() - 3..];
            for target in last3 {
                assert!(
                    trace.kept[b].contains(target),
                    "{}: position {} lost by {:?}",
                    b,
                    target,
                    strategy
                );
            }
            // Usable prediction rows exist.
            trace.prediction_rows(3).unwrap();
        }
    }
}

#[test]
fn pooled_and_selected_variants_share_compressed_length() {
    let fx = synth_fixture(60, 80, 8, 3, 10);
    let model = model_for(&fx, 3, 16, 4, 32, 14);
    let mut lengths = Vec::new();
    for strategy in [
        Strategy::Sap,
        Strategy::L2,
        Strategy::AttentionOnly,
        Strategy::MaxPool,
        Strategy::AvgPool,
    ] {
        let hook = SapHook {
            cfg: PruneConfig {
                alpha: 1.0 / 3.0,
                l_prune: 1,
                window_w: 4,
                strategy,
            },
        };
        let (_, trace, _g) = forward_logits(&model, &fx, Some(&hook), 8);
        lengths.push(trace.seq_len);
    }
    assert!(
        lengths.windows(2).all(|w| w[0] == w[1]),
        "compressed lengths diverge: {:?}",
        lengths
    );
}

#[test]
fn attention_macs_scale_as_budget_squared() {
    // Uniform-length sequences (same history length) so the per-sequence
    // budget is constant and the alpha^2 prediction is exact up to the
    // causal-triangle correction.
    let fx = synth_fixture(400, 120, 8, 3, 11);
    let model = model_for(&fx, 4, 16, 4, 32, 15);
    let window_items = 40;

    // Examples whose prefix is exactly 19 items.
    let chosen: Vec<Example> = fx
        .splits
        .test
        .iter()
        .filter(|e| e.target_pos == 19)
        .take(8)
        .copied()
        .collect();
    assert!(chosen.len() >= 4, "need enough length-20 histories");
    let seqs: Vec<_> = chosen
        .iter()
        .map(|ex| stamp_core::corpus::serialize_example(&fx.ds, ex, window_items, &fx.layout).unwrap())
        .collect();
    let batch = stamp_core::corpus::build_train_batch(&seqs, &fx.layout).unwrap();

    let n_valid = 1 + 19 * 3 + 2; // BOS + history + teacher-forced prefix
    let alpha = 1.0 / 3.0;
    let cfg = PruneConfig {
        alpha,
        l_prune: 1,
        window_w: 6,
        strategy: Strategy::Sap,
    };
    let budget = cfg.budget(n_valid);

    let run = |hook: Option<&dyn stamp_core::model::PruneHook>| {
        let mut g = Graph::new();
        let trace = model
            .forward(
                &mut g,
                &batch,
                ForwardOpts {
                    phase: Phase::Eval,
                    hook,
                    retain_probs: &[],
                    rng: None,
                },
            )
            .unwrap();
        trace.attn_macs.clone()
    };
    let base = run(None);
    let hook = SapHook { cfg };
    let pruned = run(Some(&hook));

    let tail = |macs: &[u64]| macs[cfg.l_prune..].iter().sum::<u64>() as f64;
    let measured = tail(&pruned) / tail(&base);
    let predicted = (budget as f64 / n_valid as f64).powi(2);
    assert!(
        (measured / predicted - 1.0).abs() < 0.05,
        "measured {} predicted {}",
        measured,
        predicted
    );
    // Layers at or before l_prune are untouched.
    assert_eq!(base[0], pruned[0]);
}

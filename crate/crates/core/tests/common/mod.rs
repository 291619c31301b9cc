//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use stamp_core::corpus::{
    build_train_batch, generate_synthetic, serialize_example, split_leave_one_out, build_trie,
    InteractionDataset, SidTrie, Splits, SynthConfig, TokenBatch, VocabLayout,
};
use stamp_core::model::{Model, ModelConfig};
use stamp_core::quantizer::{encode, fit};
use std::collections::BTreeMap;

pub fn tiny_config(layers: usize, d: usize, heads: usize, d_ff: usize, vocab: usize) -> ModelConfig {
    ModelConfig {
        n_layers: layers,
        d_model: d,
        n_heads: heads,
        d_ff,
        vocab_size: vocab,
        dropout_rate: 0.0,
        max_positions: 160,
    }
}

pub struct Fixture {
    pub ds: InteractionDataset,
    pub splits: Splits,
    pub trie: SidTrie,
    pub layout: VocabLayout,
}

/// Synthetic dataset quantized into SIDs, split, with its prefix trie.
pub fn synth_fixture(n_users: usize, n_items: usize, v_c: usize, depth: usize, seed: u64) -> Fixture {
    let cfg = SynthConfig {
        n_users,
        n_items,
        d_emb: 12,
        n_latent_clusters: 4,
        seed,
    };
    let (emb, raw) = generate_synthetic(&cfg).unwrap();
    let cb = fit(&emb, cfg.d_emb, depth, v_c, seed ^ 1, 25).unwrap();
    let mut catalog = BTreeMap::new();
    for item in 0..n_items as u64 {
        let e = &emb[item as usize * cfg.d_emb..(item as usize + 1) * cfg.d_emb];
        catalog.insert(item, encode(e, &cb, item));
    }
    let (ds, _) = InteractionDataset::from_parts(raw, catalog).unwrap();
    let splits = split_leave_one_out(&ds);
    let trie = build_trie(&ds.catalog).unwrap();
    Fixture {
        ds,
        splits,
        trie,
        layout: VocabLayout::new(depth, v_c),
    }
}

/// Training batch over the first `n` train examples.
pub fn train_batch(fx: &Fixture, n: usize, window_items: usize) -> TokenBatch {
    let seqs: Vec<_> = fx.splits.train[..n]
        .iter()
        .map(|ex| serialize_example(&fx.ds, ex, window_items, &fx.layout).unwrap())
        .collect();
    build_train_batch(&seqs, &fx.layout).unwrap()
}

pub fn model_for(fx: &Fixture, layers: usize, d: usize, heads: usize, d_ff: usize, seed: u64) -> Model {
    Model::new(tiny_config(layers, d, heads, d_ff, fx.layout.vocab_size()), seed).unwrap()
}

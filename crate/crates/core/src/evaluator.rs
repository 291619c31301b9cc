//! Constrained generation and measurement: level-synchronous beam search
//! over the SID prefix trie, leave-one-out ranking metrics, efficiency
//! aggregation over step logs, and attention-heatmap export.

use crate::corpus::{
    build_generation_batch, serialize, Example, InteractionDataset, SidTrie, TokenSequence,
    VocabLayout,
};
use crate::error::{Error, Result};
use crate::kernel::Graph;
use crate::model::{ForwardOpts, ForwardTrace, Model, Phase, PruneHook};
use crate::sap::{PruneConfig, SapHook};
use crate::trainer::StepRecord;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

/// A partial code path plus its accumulated log probability.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub prefix: Vec<usize>,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub ndcg_at: BTreeMap<usize, f64>,
    pub hit_at: BTreeMap<usize, f64>,
    pub mean_step_millis: f64,
    pub peak_bytes: u64,
    pub speedup_vs_base: Option<f64>,
    pub reduction_vs_base: Option<f64>,
}

impl MetricsReport {
    pub fn empty() -> Self {
        MetricsReport {
            recall_at: BTreeMap::new(),
            ndcg_at: BTreeMap::new(),
            hit_at: BTreeMap::new(),
            mean_step_millis: 0.0,
            peak_bytes: 0,
            speedup_vs_base: None,
            reduction_vs_base: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub beam_width: usize,
    pub top_k: usize,
    /// K values for Recall@K and NDCG@K.
    pub recall_ks: Vec<usize>,
    /// K values for Hit@K.
    pub hit_ks: Vec<usize>,
    /// Cap on evaluated users (prefix of the split) for cheap validation.
    pub max_users: Option<usize>,
    /// Sequences per generation forward pass.
    pub chunk: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            beam_width: 20,
            top_k: 10,
            recall_ks: vec![5, 10],
            hit_ks: vec![20, 100],
            max_users: None,
            chunk: 32,
        }
    }
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln();
    row.iter().map(|&x| x - lse).collect()
}

/// Level-synchronous constrained beam search over many users at once.
/// Candidates at each level are restricted to the trie's children of the
/// current prefix; hypotheses rank by log probability with lexicographic
/// code tie-breaking. Returns the top `top_k` completed codes per user.
#[allow(clippy::too_many_arguments)]
pub fn beam_search_many(
    model: &Model,
    prune: PruneConfig,
    windows: &[TokenSequence],
    trie: &SidTrie,
    layout: VocabLayout,
    beam_width: usize,
    top_k: usize,
    chunk: usize,
) -> Result<Vec<Vec<(Vec<usize>, f64)>>> {
    if beam_width < top_k || beam_width == 0 {
        return Err(Error::Contract(format!(
            "beam_width {} must be >= top_k {}",
            beam_width, top_k
        )));
    }
    if trie.children(&[])?.is_empty() {
        return Err(Error::Catalog("trie has no first-level codes".into()));
    }
    let hook = SapHook::for_config(&prune);
    let depth = trie.depth();
    let chunk = chunk.max(1);

    let mut beams: Vec<Vec<BeamHypothesis>> = windows
        .iter()
        .map(|_| vec![BeamHypothesis { prefix: Vec::new(), log_prob: 0.0 }])
        .collect();

    for level in 0..depth {
        // Flatten (user, beam) tasks for batched forwards.
        let mut tasks: Vec<(usize, usize)> = Vec::new();
        for (u, ub) in beams.iter().enumerate() {
            for bi in 0..ub.len() {
                tasks.push((u, bi));
            }
        }
        let prefixes: Vec<Vec<usize>> = tasks
            .iter()
            .map(|&(u, bi)| {
                beams[u][bi]
                    .prefix
                    .iter()
                    .enumerate()
                    .map(|(lvl, &c)| layout.token_for(lvl, c))
                    .collect()
            })
            .collect();

        let mut next_logprobs: Vec<Vec<f64>> = Vec::with_capacity(tasks.len());
        for task_chunk in tasks.chunks(chunk) {
            let ws: Vec<&TokenSequence> =
                task_chunk.iter().map(|&(u, _)| &windows[u]).collect();
            let ps: Vec<&[usize]> = task_chunk
                .iter()
                .enumerate()
                .map(|(i, _)| prefixes[next_logprobs.len() + i].as_slice())
                .collect();
            let batch = build_generation_batch(&ws, &ps)?;
            let mut g = Graph::new();
            let trace = model.forward(
                &mut g,
                &batch,
                ForwardOpts {
                    phase: Phase::Eval,
                    hook: hook.as_ref().map(|h| h as &dyn PruneHook),
                    retain_probs: &[],
                    rng: None,
                },
            )?;
            let vocab = model.cfg.vocab_size;
            let logits = g.value(trace.logits);
            for b in 0..batch.seqs {
                let slot = *trace
                    .valid_slots(b)
                    .last()
                    .ok_or_else(|| Error::Contract("sequence with no valid slots".into()))?;
                let row = &logits[(b * trace.seq_len + slot) * vocab
                    ..(b * trace.seq_len + slot + 1) * vocab];
                let lp = log_softmax(row);
                if lp.iter().any(|v| v.is_nan()) {
                    return Err(Error::Numeric(
                        "non-finite logits during generation".into(),
                    ));
                }
                next_logprobs.push(lp);
            }
        }

        // Expand and keep the best beam_width per user.
        let mut next_beams: Vec<Vec<BeamHypothesis>> =
            windows.iter().map(|_| Vec::new()).collect();
        for (t, &(u, bi)) in tasks.iter().enumerate() {
            let hyp = &beams[u][bi];
            for child in trie.children(&hyp.prefix)? {
                let token = layout.token_for(level, child);
                let mut prefix = hyp.prefix.clone();
                prefix.push(child);
                next_beams[u].push(BeamHypothesis {
                    prefix,
                    log_prob: hyp.log_prob + next_logprobs[t][token],
                });
            }
        }
        for ub in next_beams.iter_mut() {
            ub.sort_by(|a, b| {
                b.log_prob
                    .total_cmp(&a.log_prob)
                    .then_with(|| a.prefix.cmp(&b.prefix))
            });
            ub.truncate(beam_width);
        }
        beams = next_beams;
    }

    Ok(beams
        .into_iter()
        .map(|ub| {
            ub.into_iter()
                .take(top_k)
                .map(|h| (h.prefix, h.log_prob))
                .collect()
        })
        .collect())
}

/// Single-user constrained beam search (the batched path with one window).
pub fn beam_search(
    model: &Model,
    prune: PruneConfig,
    window: &TokenSequence,
    trie: &SidTrie,
    layout: VocabLayout,
    beam_width: usize,
    top_k: usize,
) -> Result<Vec<(Vec<usize>, f64)>> {
    Ok(beam_search_many(
        model,
        prune,
        std::slice::from_ref(window),
        trie,
        layout,
        beam_width,
        top_k,
        beam_width,
    )?
    .pop()
    .expect("one user in, one ranking out"))
}

// ---------------------------------------------------------------------------
// Ranking metrics (single held-out target per user)
// ---------------------------------------------------------------------------

/// 1-based rank of the target code in the ranked list, if present.
pub fn rank_of(ranked: &[(Vec<usize>, f64)], target: &[usize]) -> Option<usize> {
    ranked.iter().position(|(c, _)| c == target).map(|p| p + 1)
}

pub fn recall_at_k(ranked: &[(Vec<usize>, f64)], target: &[usize], k: usize) -> f64 {
    match rank_of(ranked, target) {
        Some(r) if r <= k => 1.0,
        _ => 0.0,
    }
}

pub fn hit_at_k(ranked: &[(Vec<usize>, f64)], target: &[usize], k: usize) -> f64 {
    recall_at_k(ranked, target, k)
}

pub fn ndcg_at_k(ranked: &[(Vec<usize>, f64)], target: &[usize], k: usize) -> f64 {
    match rank_of(ranked, target) {
        Some(r) if r <= k => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    }
}

/// Generate for every example and average the ranking metrics.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_examples(
    model: &Model,
    prune: PruneConfig,
    ds: &InteractionDataset,
    examples: &[Example],
    trie: &SidTrie,
    layout: VocabLayout,
    window_items: usize,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    if examples.is_empty() {
        return Err(Error::Data("no examples to evaluate".into()));
    }
    let needed_k = cfg
        .recall_ks
        .iter()
        .chain(cfg.hit_ks.iter())
        .copied()
        .chain(std::iter::once(cfg.top_k))
        .max()
        .unwrap_or(cfg.top_k);
    if cfg.beam_width < needed_k {
        return Err(Error::Config(format!(
            "beam_width {} cannot rank the largest requested K {}",
            cfg.beam_width, needed_k
        )));
    }
    let mut windows = Vec::with_capacity(examples.len());
    let mut targets = Vec::with_capacity(examples.len());
    for ex in examples {
        let hist = &ds.histories[ex.user];
        windows.push(serialize(&hist[..ex.target_pos], &ds.catalog, window_items, &layout)?);
        targets.push(
            ds.catalog
                .get(&hist[ex.target_pos])
                .ok_or_else(|| Error::Catalog(format!("target item {} missing", hist[ex.target_pos])))?
                .codes
                .clone(),
        );
    }
    let ranked = beam_search_many(
        model, prune, &windows, trie, layout, cfg.beam_width, needed_k, cfg.chunk,
    )?;

    let n = examples.len() as f64;
    let mut report = MetricsReport::empty();
    for &k in &cfg.recall_ks {
        let recall: f64 = ranked
            .iter()
            .zip(targets.iter())
            .map(|(r, t)| recall_at_k(r, t, k))
            .sum::<f64>()
            / n;
        let ndcg: f64 = ranked
            .iter()
            .zip(targets.iter())
            .map(|(r, t)| ndcg_at_k(r, t, k))
            .sum::<f64>()
            / n;
        report.recall_at.insert(k, recall);
        report.ndcg_at.insert(k, ndcg);
    }
    for &k in &cfg.hit_ks {
        let hit: f64 = ranked
            .iter()
            .zip(targets.iter())
            .map(|(r, t)| hit_at_k(r, t, k))
            .sum::<f64>()
            / n;
        report.hit_at.insert(k, hit);
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Efficiency aggregation
// ---------------------------------------------------------------------------

/// Steps before this index are treated as warm-up and excluded.
pub const STEADY_STATE_FROM: usize = 100;

/// Speedup = mean base wall time / mean variant wall time over the steady
/// window; reduction = 1 - variant peak bytes / base peak bytes.
pub fn aggregate_efficiency(
    variant: &[StepRecord],
    base: &[StepRecord],
) -> Result<(f64, f64)> {
    fn steady(log: &[StepRecord]) -> Result<&[StepRecord]> {
        if log.len() < STEADY_STATE_FROM + 100 {
            return Err(Error::Measurement(format!(
                "need at least {} steps ({} warm-up + 100 steady), got {}",
                STEADY_STATE_FROM + 100,
                STEADY_STATE_FROM,
                log.len()
            )));
        }
        Ok(&log[STEADY_STATE_FROM..])
    }
    let v = steady(variant)?;
    let b = steady(base)?;
    let mean_wall = |log: &[StepRecord]| log.iter().map(|r| r.wall_millis).sum::<f64>() / log.len() as f64;
    let peak = |log: &[StepRecord]| log.iter().map(|r| r.high_water_bytes).max().unwrap_or(0);
    let speedup = mean_wall(b) / mean_wall(v);
    let reduction = 1.0 - peak(v) as f64 / peak(b) as f64;
    Ok((speedup, reduction))
}

// ---------------------------------------------------------------------------
// Attention heatmap export
// ---------------------------------------------------------------------------

/// Write one CSV per requested (1-based) layer: the head-averaged
/// query-by-key probability matrix of the first sequence in the trace.
pub fn dump_attention(trace: &ForwardTrace, layers: &[usize], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(layers.len());
    for &l in layers {
        let probs = trace.probs.get(&l).ok_or_else(|| {
            Error::Contract(format!("attention probabilities of layer {} were not retained", l))
        })?;
        let seq = probs.sequence(0);
        let mean = seq.head_mean();
        let path = dir.join(format!("attention_layer{}.csv", l));
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        for q in 0..seq.nq {
            let row: Vec<String> = (0..seq.nk)
                .map(|k| format!("{}", mean[q * seq.nk + k]))
                .collect();
            writeln!(f, "{}", row.join(","))?;
        }
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranked(codes: &[&[usize]]) -> Vec<(Vec<usize>, f64)> {
        codes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.to_vec(), -(i as f64)))
            .collect()
    }

    #[test]
    fn metrics_rank_one() {
        let r = ranked(&[&[1, 2], &[3, 4]]);
        assert_eq!(recall_at_k(&r, &[1, 2], 5), 1.0);
        assert_eq!(ndcg_at_k(&r, &[1, 2], 5), 1.0);
        assert_eq!(hit_at_k(&r, &[1, 2], 1), 1.0);
    }

    #[test]
    fn metrics_rank_three() {
        let r = ranked(&[&[0], &[1], &[2], &[3]]);
        let n = ndcg_at_k(&r, &[2], 5);
        assert!((n - 0.5).abs() < 1e-12, "ndcg {}", n); // 1/log2(4)
        assert_eq!(recall_at_k(&r, &[2], 2), 0.0);
        assert_eq!(recall_at_k(&r, &[2], 3), 1.0);
    }

    #[test]
    fn metrics_absent_target() {
        let r = ranked(&[&[0], &[1]]);
        assert_eq!(recall_at_k(&r, &[9], 2), 0.0);
        assert_eq!(ndcg_at_k(&r, &[9], 2), 0.0);
        assert_eq!(hit_at_k(&r, &[9], 2), 0.0);
    }

    #[test]
    fn metric_monotone_in_k() {
        let r = ranked(&[&[0], &[1], &[2], &[3], &[4]]);
        for target in [[0usize], [2], [4], [7]] {
            let mut prev = 0.0;
            for k in 1..=5 {
                let v = recall_at_k(&r, &target, k);
                assert!(v >= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn efficiency_identical_logs() {
        let log: Vec<StepRecord> = (0..200)
            .map(|i| StepRecord {
                step: i + 1,
                l_ntp: 1.0,
                l_map: 0.0,
                l_total: 1.0,
                wall_millis: 10.0,
                high_water_bytes: 1000,
            })
            .collect();
        let (s, r) = aggregate_efficiency(&log, &log).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(r.abs() < 1e-12);
    }

    #[test]
    fn efficiency_spec_arithmetic() {
        let mk = |wall: f64| -> Vec<StepRecord> {
            (0..200)
                .map(|i| StepRecord {
                    step: i + 1,
                    l_ntp: 1.0,
                    l_map: 0.0,
                    l_total: 1.0,
                    wall_millis: wall,
                    high_water_bytes: 100,
                })
                .collect()
        };
        let (s, _) = aggregate_efficiency(&mk(145.0), &mk(200.0)).unwrap();
        assert!((s - 200.0 / 145.0).abs() < 1e-12);
        assert!(s > 1.37 && s < 1.39);
    }

    #[test]
    fn efficiency_needs_enough_steps() {
        let log: Vec<StepRecord> = (0..150)
            .map(|i| StepRecord {
                step: i + 1,
                l_ntp: 1.0,
                l_map: 0.0,
                l_total: 1.0,
                wall_millis: 10.0,
                high_water_bytes: 1,
            })
            .collect();
        assert!(matches!(
            aggregate_efficiency(&log, &log),
            Err(Error::Measurement(_))
        ));
    }
}

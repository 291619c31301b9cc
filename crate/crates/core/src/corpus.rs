//! Interaction data: synthetic generation, CSV ingestion with 5-core
//! filtering, leave-one-out splitting, SID serialization of histories into
//! fixed token windows, batching, and the valid-code prefix trie used by
//! constrained decoding.

use crate::error::{Error, Result};
use crate::kernel::DetRng;
use crate::quantizer::SidCode;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

pub const PAD: usize = 0;
pub const BOS: usize = 1;

/// Maps (level, codeword) pairs onto disjoint token-id ranges, after the
/// PAD and BOS specials. A token id therefore identifies both its level
/// and its codeword.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabLayout {
    pub depth: usize,
    pub v_c: usize,
}

impl VocabLayout {
    pub fn new(depth: usize, v_c: usize) -> Self {
        VocabLayout { depth, v_c }
    }

    pub fn vocab_size(&self) -> usize {
        2 + self.depth * self.v_c
    }

    pub fn token_for(&self, level: usize, code: usize) -> usize {
        debug_assert!(level < self.depth && code < self.v_c);
        2 + level * self.v_c + code
    }

    /// Inverse of `token_for`; `None` for PAD/BOS.
    pub fn split_token(&self, token: usize) -> Option<(usize, usize)> {
        if token < 2 || token >= self.vocab_size() {
            return None;
        }
        let t = token - 2;
        Some((t / self.v_c, t % self.v_c))
    }
}

/// Users and their chronological item histories, before SID codes exist.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawInteractions {
    pub users: Vec<u64>,
    pub histories: Vec<Vec<u64>>,
}

impl RawInteractions {
    pub fn n_interactions(&self) -> usize {
        self.histories.iter().map(|h| h.len()).sum()
    }
}

/// Interaction histories plus the item -> SID catalog.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InteractionDataset {
    pub users: Vec<u64>,
    pub histories: Vec<Vec<u64>>,
    pub catalog: BTreeMap<u64, SidCode>,
}

impl InteractionDataset {
    /// Assemble a dataset, dropping histories shorter than 3 (returned as a
    /// count) and verifying that every referenced item has a catalog entry.
    pub fn from_parts(
        raw: RawInteractions,
        catalog: BTreeMap<u64, SidCode>,
    ) -> Result<(Self, usize)> {
        let mut users = Vec::new();
        let mut histories = Vec::new();
        let mut dropped = 0;
        for (u, h) in raw.users.into_iter().zip(raw.histories.into_iter()) {
            if h.len() < 3 {
                dropped += 1;
                continue;
            }
            for item in &h {
                if !catalog.contains_key(item) {
                    return Err(Error::Catalog(format!(
                        "item {} referenced by user {} has no catalog entry",
                        item, u
                    )));
                }
            }
            users.push(u);
            histories.push(h);
        }
        Ok((InteractionDataset { users, histories, catalog }, dropped))
    }

    pub fn n_interactions(&self) -> usize {
        self.histories.iter().map(|h| h.len()).sum()
    }

    /// Fraction of catalog items whose code is shared with another item.
    pub fn collision_rate(&self) -> f64 {
        if self.catalog.is_empty() {
            return 0.0;
        }
        let mut counts: HashMap<&[usize], usize> = HashMap::new();
        for code in self.catalog.values() {
            *counts.entry(code.codes.as_slice()).or_insert(0) += 1;
        }
        let collided: usize = counts.values().filter(|&&c| c > 1).map(|&c| c).sum();
        collided as f64 / self.catalog.len() as f64
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            n_users: self.users.len(),
            n_items: self.catalog.len(),
            n_interactions: self.n_interactions(),
            collision_rate: self.collision_rate(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
    pub collision_rate: f64,
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

pub const SYNTH_CONCENTRATION: f64 = 0.9;
pub const SYNTH_MIN_HISTORY: usize = 5;
pub const SYNTH_MAX_HISTORY: usize = 20;
const CLUSTER_SPREAD: f64 = 6.0;
const ITEM_NOISE: f64 = 0.6;
const POPULARITY_EXP: f64 = 1.1;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub d_emb: usize,
    pub n_latent_clusters: usize,
    pub seed: u64,
}

/// Cluster-centered Gaussian item embeddings plus Markovian user histories:
/// each user has a preferred cluster; the next item stays in the current
/// item's cluster with probability [`SYNTH_CONCENTRATION`], otherwise the
/// cluster is redrawn from the user's preference mixture. Items within a
/// cluster are sampled with a popularity skew. Deterministic per seed.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Vec<f64>, RawInteractions)> {
    if cfg.n_latent_clusters == 0 || cfg.n_items < cfg.n_latent_clusters {
        return Err(Error::Config(format!(
            "need n_items >= n_latent_clusters >= 1, got {} and {}",
            cfg.n_items, cfg.n_latent_clusters
        )));
    }
    let mut rng = DetRng::new(cfg.seed);
    let c = cfg.n_latent_clusters;

    let mut centers = Vec::with_capacity(c);
    for _ in 0..c {
        centers.push(rng.normal_vec(cfg.d_emb, CLUSTER_SPREAD));
    }

    // Item i belongs to cluster i % c; embeddings are center + noise.
    let mut embeddings = Vec::with_capacity(cfg.n_items * cfg.d_emb);
    let mut cluster_items: Vec<Vec<usize>> = vec![Vec::new(); c];
    for item in 0..cfg.n_items {
        let cl = item % c;
        cluster_items[cl].push(item);
        let center = &centers[cl];
        for j in 0..cfg.d_emb {
            embeddings.push(center[j] + rng.normal() * ITEM_NOISE);
        }
    }

    // Popularity weights within each cluster (Zipf-like by rank).
    let cluster_weights: Vec<Vec<f64>> = cluster_items
        .iter()
        .map(|items| {
            let w: Vec<f64> = (0..items.len())
                .map(|r| 1.0 / ((r + 1) as f64).powf(POPULARITY_EXP))
                .collect();
            w
        })
        .collect();

    let sample_item = |cl: usize, rng: &mut DetRng| -> u64 {
        let weights = &cluster_weights[cl];
        let total: f64 = weights.iter().sum();
        let mut thr = rng.uniform() * total;
        for (rank, &w) in weights.iter().enumerate() {
            thr -= w;
            if thr <= 0.0 {
                return cluster_items[cl][rank] as u64;
            }
        }
        cluster_items[cl][cluster_items[cl].len() - 1] as u64
    };

    let mut users = Vec::with_capacity(cfg.n_users);
    let mut histories = Vec::with_capacity(cfg.n_users);
    for u in 0..cfg.n_users {
        let preferred = rng.below(c);
        let mixture_draw = |rng: &mut DetRng| -> usize {
            if c == 1 || rng.uniform() < SYNTH_CONCENTRATION {
                preferred
            } else {
                // uniform over the other clusters
                let mut other = rng.below(c - 1);
                if other >= preferred {
                    other += 1;
                }
                other
            }
        };
        let len = SYNTH_MIN_HISTORY + rng.below(SYNTH_MAX_HISTORY - SYNTH_MIN_HISTORY + 1);
        let mut hist = Vec::with_capacity(len);
        let mut current_cluster = mixture_draw(&mut rng);
        for _ in 0..len {
            let item = sample_item(current_cluster, &mut rng);
            hist.push(item);
            current_cluster = if rng.uniform() < SYNTH_CONCENTRATION {
                current_cluster
            } else {
                mixture_draw(&mut rng)
            };
        }
        users.push(u as u64);
        histories.push(hist);
    }

    Ok((embeddings, RawInteractions { users, histories }))
}

/// Synthetic embeddings for an externally ingested item set (CSV data has
/// no content features at desk scale).
pub fn synthetic_item_embeddings(
    item_ids: &[u64],
    d_emb: usize,
    n_latent_clusters: usize,
    seed: u64,
) -> Vec<f64> {
    let mut rng = DetRng::new(seed);
    let c = n_latent_clusters.max(1);
    let mut centers = Vec::with_capacity(c);
    for _ in 0..c {
        centers.push(rng.normal_vec(d_emb, CLUSTER_SPREAD));
    }
    let mut out = Vec::with_capacity(item_ids.len() * d_emb);
    for (idx, _) in item_ids.iter().enumerate() {
        let center = &centers[idx % c];
        for j in 0..d_emb {
            out.push(center[j] + rng.normal() * ITEM_NOISE);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

/// Parse `user_id,item_id,timestamp` rows (header auto-detected), group by
/// user, sort by timestamp (ties keep input order), then apply the 5-core
/// filter iteratively until both user and item counts stabilize.
pub fn ingest_csv_reader<R: BufRead>(reader: R) -> Result<RawInteractions> {
    let mut rows: Vec<(u64, u64, i64, usize)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 3 comma-separated fields, got {}", fields.len()),
            });
        }
        let parsed = (
            fields[0].parse::<u64>(),
            fields[1].parse::<u64>(),
            fields[2].parse::<i64>(),
        );
        match parsed {
            (Ok(u), Ok(i), Ok(t)) => rows.push((u, i, t, rows.len())),
            _ if idx == 0 => continue, // header row
            _ => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("non-numeric row '{}'", trimmed),
                })
            }
        }
    }

    // 5-core: drop users/items with fewer than five interactions until a
    // fixpoint is reached.
    loop {
        let mut user_counts: HashMap<u64, usize> = HashMap::new();
        let mut item_counts: HashMap<u64, usize> = HashMap::new();
        for (u, i, _, _) in &rows {
            *user_counts.entry(*u).or_insert(0) += 1;
            *item_counts.entry(*i).or_insert(0) += 1;
        }
        let before = rows.len();
        rows.retain(|(u, i, _, _)| user_counts[u] >= 5 && item_counts[i] >= 5);
        if rows.len() == before {
            break;
        }
    }
    if rows.is_empty() {
        return Err(Error::Data("no interactions survive the 5-core filter".into()));
    }

    let mut per_user: BTreeMap<u64, Vec<(i64, usize, u64)>> = BTreeMap::new();
    for (u, i, t, order) in rows {
        per_user.entry(u).or_default().push((t, order, i));
    }
    let mut users = Vec::new();
    let mut histories = Vec::new();
    for (u, mut events) in per_user {
        events.sort_by_key(|&(t, order, _)| (t, order));
        users.push(u);
        histories.push(events.into_iter().map(|(_, _, i)| i).collect());
    }
    Ok(RawInteractions { users, histories })
}

pub fn ingest_csv(path: &std::path::Path) -> Result<RawInteractions> {
    let file = std::fs::File::open(path)?;
    ingest_csv_reader(std::io::BufReader::new(file))
}

// ---------------------------------------------------------------------------
// Leave-one-out split
// ---------------------------------------------------------------------------

/// One supervised example: predict `history[target_pos]` from the prefix
/// before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Example {
    pub user: usize,
    pub target_pos: usize,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
    /// Histories too short to split (length < 3).
    pub skipped: usize,
}

/// Last interaction held out for test, penultimate for validation; the
/// remaining prefix positions become training targets.
pub fn split_leave_one_out(ds: &InteractionDataset) -> Splits {
    let mut splits = Splits {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        skipped: 0,
    };
    for (user, hist) in ds.histories.iter().enumerate() {
        let t = hist.len();
        if t < 3 {
            splits.skipped += 1;
            continue;
        }
        splits.test.push(Example { user, target_pos: t - 1 });
        splits.val.push(Example { user, target_pos: t - 2 });
        for pos in 1..t - 2 {
            splits.train.push(Example { user, target_pos: pos });
        }
    }
    splits
}

// ---------------------------------------------------------------------------
// Serialization into token windows
// ---------------------------------------------------------------------------

/// A serialized, left-padded history window plus the target SID tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    /// Fixed-width window: PAD* BOS item tokens (level-major per item).
    pub input_ids: Vec<usize>,
    /// True on non-PAD slots.
    pub attn_valid: Vec<bool>,
    /// The L target tokens (level-offset ids) of the next item.
    pub target_ids: Vec<usize>,
    /// Original slot indices, 0..window_len.
    pub positions: Vec<usize>,
}

impl TokenSequence {
    pub fn window_len(&self) -> usize {
        self.input_ids.len()
    }
}

pub fn window_len(window_items: usize, layout: &VocabLayout) -> usize {
    1 + window_items * layout.depth
}

/// Serialize the most recent `window_items` items of a history into a
/// fixed window: BOS, then each item expanded to its L code tokens in
/// level order, left-padded so content is right-aligned.
pub fn serialize(
    history: &[u64],
    catalog: &BTreeMap<u64, SidCode>,
    window_items: usize,
    layout: &VocabLayout,
) -> Result<TokenSequence> {
    if window_items == 0 {
        return Err(Error::Config("window_items must be >= 1".into()));
    }
    let total = window_len(window_items, layout);
    let kept = if history.len() > window_items {
        &history[history.len() - window_items..]
    } else {
        history
    };
    let mut content = Vec::with_capacity(1 + kept.len() * layout.depth);
    content.push(BOS);
    for item in kept {
        let code = catalog
            .get(item)
            .ok_or_else(|| Error::Catalog(format!("item {} not in catalog", item)))?;
        for (level, &c) in code.codes.iter().enumerate() {
            content.push(layout.token_for(level, c));
        }
    }
    let pad = total - content.len();
    let mut input_ids = vec![PAD; pad];
    input_ids.extend_from_slice(&content);
    let mut attn_valid = vec![false; pad];
    attn_valid.extend(std::iter::repeat(true).take(content.len()));
    Ok(TokenSequence {
        input_ids,
        attn_valid,
        target_ids: Vec::new(),
        positions: (0..total).collect(),
    })
}

/// Serialize one split example: the window over the prefix plus the target
/// item's tokens.
pub fn serialize_example(
    ds: &InteractionDataset,
    ex: &Example,
    window_items: usize,
    layout: &VocabLayout,
) -> Result<TokenSequence> {
    let hist = &ds.histories[ex.user];
    let target_item = hist[ex.target_pos];
    let mut seq = serialize(&hist[..ex.target_pos], &ds.catalog, window_items, layout)?;
    let code = ds
        .catalog
        .get(&target_item)
        .ok_or_else(|| Error::Catalog(format!("target item {} not in catalog", target_item)))?;
    seq.target_ids = code
        .codes
        .iter()
        .enumerate()
        .map(|(level, &c)| layout.token_for(level, c))
        .collect();
    Ok(seq)
}

/// Recover the SID codes of the occupied slots of a window, in order.
pub fn deserialize_window(seq: &TokenSequence, layout: &VocabLayout) -> Result<Vec<Vec<usize>>> {
    let mut items = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for (&tok, &valid) in seq.input_ids.iter().zip(seq.attn_valid.iter()) {
        if !valid || tok == BOS {
            continue;
        }
        let (level, code) = layout
            .split_token(tok)
            .ok_or_else(|| Error::Range(format!("token {} outside code ranges", tok)))?;
        if level != current.len() {
            return Err(Error::Contract(format!(
                "level {} token found where level {} expected",
                level,
                current.len()
            )));
        }
        current.push(code);
        if current.len() == layout.depth {
            items.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        return Err(Error::Contract("window ends mid-item".into()));
    }
    Ok(items)
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Model-ready batch: fixed-width rows of token ids with validity flags,
/// positions, and per-sequence target tokens. During training the width is
/// the window plus the first L-1 target tokens (teacher forcing).
#[derive(Debug, Clone)]
pub struct TokenBatch {
    pub seqs: usize,
    pub width: usize,
    pub input_ids: Vec<usize>,
    pub valid: Vec<bool>,
    pub positions: Vec<usize>,
    /// Per sequence: the L target tokens.
    pub targets: Vec<Vec<usize>>,
}

/// Assemble a training batch: each window is extended with its first L-1
/// target tokens so the final L positions predict the L target tokens.
pub fn build_train_batch(seqs: &[TokenSequence], layout: &VocabLayout) -> Result<TokenBatch> {
    if seqs.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let wlen = seqs[0].window_len();
    let depth = layout.depth;
    let width = wlen + depth - 1;
    let mut batch = TokenBatch {
        seqs: seqs.len(),
        width,
        input_ids: Vec::with_capacity(seqs.len() * width),
        valid: Vec::with_capacity(seqs.len() * width),
        positions: Vec::with_capacity(seqs.len() * width),
        targets: Vec::with_capacity(seqs.len()),
    };
    for seq in seqs {
        if seq.window_len() != wlen {
            return Err(Error::Dim("mixed window lengths in one batch".into()));
        }
        if seq.target_ids.len() != depth {
            return Err(Error::Contract(format!(
                "sequence carries {} target tokens, want {}",
                seq.target_ids.len(),
                depth
            )));
        }
        batch.input_ids.extend_from_slice(&seq.input_ids);
        batch.input_ids.extend_from_slice(&seq.target_ids[..depth - 1]);
        batch.valid.extend_from_slice(&seq.attn_valid);
        batch.valid.extend(std::iter::repeat(true).take(depth - 1));
        batch.positions.extend_from_slice(&seq.positions);
        batch.positions.extend(wlen..wlen + depth - 1);
        batch.targets.push(seq.target_ids.clone());
    }
    Ok(batch)
}

/// Assemble a generation batch: each window extended with an arbitrary
/// per-sequence prefix of already-generated tokens.
pub fn build_generation_batch(
    windows: &[&TokenSequence],
    prefixes: &[&[usize]],
) -> Result<TokenBatch> {
    if windows.is_empty() || windows.len() != prefixes.len() {
        return Err(Error::Data("generation batch inputs misaligned".into()));
    }
    let wlen = windows[0].window_len();
    let plen = prefixes[0].len();
    let width = wlen + plen;
    let mut batch = TokenBatch {
        seqs: windows.len(),
        width,
        input_ids: Vec::with_capacity(windows.len() * width),
        valid: Vec::with_capacity(windows.len() * width),
        positions: Vec::with_capacity(windows.len() * width),
        targets: Vec::new(),
    };
    for (seq, prefix) in windows.iter().zip(prefixes.iter()) {
        if seq.window_len() != wlen || prefix.len() != plen {
            return Err(Error::Dim("mixed widths in one generation batch".into()));
        }
        batch.input_ids.extend_from_slice(&seq.input_ids);
        batch.input_ids.extend_from_slice(prefix);
        batch.valid.extend_from_slice(&seq.attn_valid);
        batch.valid.extend(std::iter::repeat(true).take(plen));
        batch.positions.extend_from_slice(&seq.positions);
        batch.positions.extend(wlen..wlen + plen);
    }
    Ok(batch)
}

/// Cycles over training examples, reshuffling each epoch; deterministic
/// per seed.
pub struct TrainBatcher<'a> {
    ds: &'a InteractionDataset,
    examples: Vec<Example>,
    window_items: usize,
    layout: VocabLayout,
    batch_size: usize,
    rng: DetRng,
    cursor: usize,
}

impl<'a> TrainBatcher<'a> {
    pub fn new(
        ds: &'a InteractionDataset,
        train: &[Example],
        window_items: usize,
        layout: VocabLayout,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("no training examples".into()));
        }
        let mut b = TrainBatcher {
            ds,
            examples: train.to_vec(),
            window_items,
            layout,
            batch_size,
            rng: DetRng::new(seed),
            cursor: 0,
        };
        b.rng.shuffle(&mut b.examples);
        Ok(b)
    }

    pub fn next_batch(&mut self) -> Result<TokenBatch> {
        let mut seqs = Vec::with_capacity(self.batch_size);
        for _ in 0..self.batch_size {
            if self.cursor >= self.examples.len() {
                self.rng.shuffle(&mut self.examples);
                self.cursor = 0;
            }
            let ex = self.examples[self.cursor];
            self.cursor += 1;
            seqs.push(serialize_example(self.ds, &ex, self.window_items, &self.layout)?);
        }
        build_train_batch(&seqs, &self.layout)
    }
}

// ---------------------------------------------------------------------------
// Prefix trie
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: BTreeMap<usize, TrieNode>,
    items: Vec<u64>,
}

/// Depth-L prefix trie over the catalog's codes; leaves carry the item ids
/// sharing that code.
#[derive(Debug, Clone)]
pub struct SidTrie {
    depth: usize,
    root: TrieNode,
}

pub fn build_trie(catalog: &BTreeMap<u64, SidCode>) -> Result<SidTrie> {
    let mut iter = catalog.values();
    let first = iter
        .next()
        .ok_or_else(|| Error::Catalog("cannot build a trie over an empty catalog".into()))?;
    let depth = first.codes.len();
    let mut root = TrieNode::default();
    for code in catalog.values() {
        if code.codes.len() != depth {
            return Err(Error::Contract(format!(
                "mixed code depths in catalog: {} vs {}",
                code.codes.len(),
                depth
            )));
        }
        let mut node = &mut root;
        for &c in &code.codes {
            node = node.children.entry(c).or_default();
        }
        node.items.push(code.item_id);
    }
    Ok(SidTrie { depth, root })
}

impl SidTrie {
    pub fn depth(&self) -> usize {
        self.depth
    }

    fn descend(&self, prefix: &[usize]) -> Option<&TrieNode> {
        let mut node = &self.root;
        for c in prefix {
            node = node.children.get(c)?;
        }
        Some(node)
    }

    /// Valid next codewords after `prefix`, in ascending order.
    pub fn children(&self, prefix: &[usize]) -> Result<Vec<usize>> {
        if prefix.len() >= self.depth {
            return Err(Error::Range(format!(
                "prefix of length {} in a depth-{} trie",
                prefix.len(),
                self.depth
            )));
        }
        Ok(self
            .descend(prefix)
            .map(|n| n.children.keys().copied().collect())
            .unwrap_or_default())
    }

    /// Item ids stored at a complete code path.
    pub fn items_at(&self, code: &[usize]) -> &[u64] {
        if code.len() != self.depth {
            return &[];
        }
        self.descend(code).map(|n| n.items.as_slice()).unwrap_or(&[])
    }

    /// Every depth-L path in the trie, lexicographically.
    pub fn paths(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut stack = Vec::new();
        fn walk(node: &TrieNode, depth: usize, stack: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if depth == 0 {
                out.push(stack.clone());
                return;
            }
            for (&c, child) in &node.children {
                stack.push(c);
                walk(child, depth - 1, stack, out);
                stack.pop();
            }
        }
        walk(&self.root, self.depth, &mut stack, &mut out);
        out
    }
}

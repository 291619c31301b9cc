//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Graph`] is a Wengert list: ops append nodes whose inputs always have
//! smaller ids, so the reverse sweep is a plain reverse iteration, no
//! explicit topological sort. Values are computed eagerly at op creation;
//! `backward` accumulates gradients into every node that requires them
//! (and keeps accumulating across repeated calls).
//!
//! The attention op is fused: it materializes the post-softmax probability
//! tensor because the pruning stage consumes it, and its accumulation
//! order over keys is fixed by original index so that masked entries
//! contribute exactly nothing.

use super::alloc::Buf;
use super::linalg::gemm;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Post-softmax attention probabilities for a single sequence,
/// `[head_count, nq, nk]` row-major. Masked entries are exactly zero and
/// every unmasked query row sums to one.
#[derive(Debug, Clone)]
pub struct AttentionProbs {
    pub head_count: usize,
    pub nq: usize,
    pub nk: usize,
    pub values: Vec<f64>,
}

impl AttentionProbs {
    pub fn at(&self, h: usize, q: usize, k: usize) -> f64 {
        self.values[(h * self.nq + q) * self.nk + k]
    }

    /// Head-averaged `nq x nk` matrix.
    pub fn head_mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.nq * self.nk];
        for h in 0..self.head_count {
            for i in 0..self.nq * self.nk {
                out[i] += self.values[h * self.nq * self.nk + i];
            }
        }
        let inv = 1.0 / self.head_count as f64;
        for o in out.iter_mut() {
            *o *= inv;
        }
        out
    }
}

/// Batched attention probabilities as stored by the fused op,
/// `[batch, heads, nq, nk]`.
#[derive(Debug, Clone)]
pub struct AttentionProbsBatch {
    pub batch: usize,
    pub heads: usize,
    pub nq: usize,
    pub nk: usize,
    pub values: Vec<f64>,
}

impl AttentionProbsBatch {
    pub fn sequence(&self, b: usize) -> AttentionProbs {
        let per = self.heads * self.nq * self.nk;
        AttentionProbs {
            head_count: self.heads,
            nq: self.nq,
            nk: self.nk,
            values: self.values[b * per..(b + 1) * per].to_vec(),
        }
    }
}

pub(crate) struct AttentionOp {
    q: Var,
    k: Var,
    v: Var,
    batch: usize,
    heads: usize,
    nq: usize,
    nk: usize,
    dh: usize,
    /// batch*nq*nk, nonzero = may attend.
    mask: Vec<u8>,
    /// batch*heads*nq*nk, saved for backward and for the pruning stage.
    probs: Buf,
}

enum Op {
    Leaf,
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        c: f64,
    },
    /// a + alpha * b
    AddScaled {
        a: Var,
        b: Var,
        alpha: f64,
    },
    Matmul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
        m: usize,
        kdim: usize,
        n: usize,
    },
    AddRowBias {
        a: Var,
        bias: Var,
        rows: usize,
        cols: usize,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
        width: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        rows: usize,
        cols: usize,
        mean: Buf,
        rstd: Buf,
    },
    Relu {
        x: Var,
    },
    Silu {
        x: Var,
    },
    Dropout {
        x: Var,
        keep: Vec<u8>,
        scale: f64,
    },
    /// Row gather; `SENTINEL_ROW` produces a zero row and routes no gradient.
    GatherRows {
        x: Var,
        idx: Vec<usize>,
        cols: usize,
    },
    ConcatCols {
        a: Var,
        b: Var,
        rows: usize,
        ca: usize,
        cb: usize,
    },
    Attention(Box<AttentionOp>),
    /// Elementwise max over consecutive row groups; `argmax` saves a row id
    /// per output cell. Empty groups produce a zero row.
    MaxPoolRows {
        x: Var,
        groups: Vec<(usize, usize)>,
        cols: usize,
        argmax: Vec<u32>,
    },
    /// Mean over consecutive row groups; empty groups produce a zero row.
    AvgPoolRows {
        x: Var,
        groups: Vec<(usize, usize)>,
        cols: usize,
    },
    /// Per-row negative log-likelihood; rows with target `IGNORE_ROW`
    /// contribute exactly zero. Saves softmax rows of the active targets.
    Nll {
        logits: Var,
        vocab: usize,
        targets: Vec<usize>,
        probs: Vec<(usize, Buf)>,
    },
    Sum {
        x: Var,
    },
}

/// Gather index that yields an all-zero row instead of copying a source row.
pub const SENTINEL_ROW: usize = usize::MAX;
/// Target id marking a row as excluded from the NLL.
pub const IGNORE_ROW: usize = usize::MAX;

/// Computation graph; create one per forward/backward pass.
#[derive(Default)]
pub struct Graph {
    shapes: Vec<Vec<usize>>,
    data: Vec<Buf>,
    ops: Vec<Op>,
    requires: Vec<bool>,
    grads: Vec<Option<Buf>>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.shapes[v.0]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.data[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    fn push(&mut self, shape: Vec<usize>, data: Buf, requires: bool, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.shapes.push(shape);
        self.data.push(data);
        self.ops.push(op);
        self.requires.push(requires);
        self.grads.push(None);
        Var(self.ops.len() - 1)
    }

    pub fn leaf(&mut self, shape: &[usize], data: Buf, requires_grad: bool) -> Var {
        self.push(shape.to_vec(), data, requires_grad, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(&[1], Buf::from_vec(vec![value]), false)
    }

    fn check_same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.shapes[a.0] != self.shapes[b.0] {
            return Err(Error::Dim(format!(
                "elementwise op on shapes {:?} vs {:?}",
                self.shapes[a.0], self.shapes[b.0]
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b)?;
        let data: Vec<f64> = self.data[a.0]
            .iter()
            .zip(self.data[b.0].iter())
            .map(|(x, y)| x + y)
            .collect();
        let req = self.requires[a.0] || self.requires[b.0];
        Ok(self.push(self.shapes[a.0].clone(), Buf::from_vec(data), req, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b)?;
        let data: Vec<f64> = self.data[a.0]
            .iter()
            .zip(self.data[b.0].iter())
            .map(|(x, y)| x * y)
            .collect();
        let req = self.requires[a.0] || self.requires[b.0];
        Ok(self.push(self.shapes[a.0].clone(), Buf::from_vec(data), req, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data: Vec<f64> = self.data[a.0].iter().map(|x| x * c).collect();
        let req = self.requires[a.0];
        self.push(self.shapes[a.0].clone(), Buf::from_vec(data), req, Op::Scale { a, c })
    }

    /// a + alpha * b
    pub fn add_scaled(&mut self, a: Var, b: Var, alpha: f64) -> Result<Var> {
        self.check_same_shape(a, b)?;
        let data: Vec<f64> = self.data[a.0]
            .iter()
            .zip(self.data[b.0].iter())
            .map(|(x, y)| x + alpha * y)
            .collect();
        let req = self.requires[a.0] || self.requires[b.0];
        Ok(self.push(
            self.shapes[a.0].clone(),
            Buf::from_vec(data),
            req,
            Op::AddScaled { a, b, alpha },
        ))
    }

    /// Matrix product of the logical (post-transpose) operands:
    /// `[m,k] . [k,n]`. With `ta` the stored `a` is `[k,m]`; with `tb` the
    /// stored `b` is `[n,k]`.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let sa = &self.shapes[a.0];
        let sb = &self.shapes[b.0];
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::Dim("matmul expects 2-d operands".into()));
        }
        let (m, ka) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (kb, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if ka != kb {
            return Err(Error::Dim(format!(
                "matmul inner dims {} vs {} (shapes {:?} x {:?}, ta={}, tb={})",
                ka, kb, sa, sb, ta, tb
            )));
        }
        let mut out = Buf::zeros(m * n);
        gemm(m, ka, n, 1.0, &self.data[a.0], ta, &self.data[b.0], tb, 0.0, &mut out);
        let req = self.requires[a.0] || self.requires[b.0];
        Ok(self.push(
            vec![m, n],
            out,
            req,
            Op::Matmul { a, b, ta, tb, m, kdim: ka, n },
        ))
    }

    /// `[rows, cols] + [cols]`, broadcast over rows.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let sa = self.shapes[a.0].clone();
        if sa.len() != 2 || self.shapes[bias.0] != vec![sa[1]] {
            return Err(Error::Dim(format!(
                "bias shape {:?} does not broadcast over {:?}",
                self.shapes[bias.0], sa
            )));
        }
        let (rows, cols) = (sa[0], sa[1]);
        let mut out = Buf::zeros(rows * cols);
        {
            let x = &self.data[a.0];
            let bv = &self.data[bias.0];
            for r in 0..rows {
                for c in 0..cols {
                    out[r * cols + c] = x[r * cols + c] + bv[c];
                }
            }
        }
        let req = self.requires[a.0] || self.requires[bias.0];
        Ok(self.push(vec![rows, cols], out, req, Op::AddRowBias { a, bias, rows, cols }))
    }

    /// Row lookup into `table` (`[vocab, width]`) for each id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let st = self.shapes[table.0].clone();
        if st.len() != 2 {
            return Err(Error::Dim("embedding table must be 2-d".into()));
        }
        let (vocab, width) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::Range(format!("token id {} >= vocab {}", bad, vocab)));
        }
        let mut out = Buf::zeros(ids.len() * width);
        {
            let t = &self.data[table.0];
            for (r, &id) in ids.iter().enumerate() {
                out[r * width..(r + 1) * width].copy_from_slice(&t[id * width..(id + 1) * width]);
            }
        }
        let req = self.requires[table.0];
        Ok(self.push(
            vec![ids.len(), width],
            out,
            req,
            Op::Embedding { table, ids: ids.to_vec(), width },
        ))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let sx = self.shapes[x.0].clone();
        if sx.len() != 2 {
            return Err(Error::Dim("layer_norm expects 2-d input".into()));
        }
        let (rows, cols) = (sx[0], sx[1]);
        if self.shapes[gamma.0] != vec![cols] || self.shapes[beta.0] != vec![cols] {
            return Err(Error::Dim("layer_norm scale/shift must be [cols]".into()));
        }
        let mut out = Buf::zeros(rows * cols);
        let mut mean = Buf::zeros(rows);
        let mut rstd = Buf::zeros(rows);
        {
            let xd = &self.data[x.0];
            let g = &self.data[gamma.0];
            let bta = &self.data[beta.0];
            let inv_n = 1.0 / cols as f64;
            for r in 0..rows {
                let row = &xd[r * cols..(r + 1) * cols];
                let mu = row.iter().sum::<f64>() * inv_n;
                let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() * inv_n;
                let rs = 1.0 / (var + eps).sqrt();
                mean[r] = mu;
                rstd[r] = rs;
                for c in 0..cols {
                    out[r * cols + c] = (row[c] - mu) * rs * g[c] + bta[c];
                }
            }
        }
        let req = self.requires[x.0] || self.requires[gamma.0] || self.requires[beta.0];
        Ok(self.push(
            vec![rows, cols],
            out,
            req,
            Op::LayerNorm { x, gamma, beta, rows, cols, mean, rstd },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.data[x.0].iter().map(|v| v.max(0.0)).collect();
        let req = self.requires[x.0];
        self.push(self.shapes[x.0].clone(), Buf::from_vec(data), req, Op::Relu { x })
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.data[x.0]
            .iter()
            .map(|&v| v / (1.0 + (-v).exp()))
            .collect();
        let req = self.requires[x.0];
        self.push(self.shapes[x.0].clone(), Buf::from_vec(data), req, Op::Silu { x })
    }

    /// Inverted dropout: kept entries scale by 1/(1-rate). The caller is
    /// responsible for skipping this op entirely in deterministic or eval
    /// mode; the keep mask is drawn here.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut super::rng::DetRng) -> Var {
        debug_assert!((0.0..1.0).contains(&rate));
        let n = self.data[x.0].len();
        let mut keep = vec![0u8; n];
        for k in keep.iter_mut() {
            *k = (rng.uniform() >= rate) as u8;
        }
        let scale = 1.0 / (1.0 - rate);
        let data: Vec<f64> = self.data[x.0]
            .iter()
            .zip(keep.iter())
            .map(|(&v, &k)| if k != 0 { v * scale } else { 0.0 })
            .collect();
        let req = self.requires[x.0];
        self.push(
            self.shapes[x.0].clone(),
            Buf::from_vec(data),
            req,
            Op::Dropout { x, keep, scale },
        )
    }

    /// Gather rows of a 2-d tensor in the given order. Indices must name
    /// valid rows or be [`SENTINEL_ROW`], which emits a zero row. Gradients
    /// scatter back additively; dropped rows receive exactly zero.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let sx = self.shapes[x.0].clone();
        if sx.len() != 2 {
            return Err(Error::Dim("gather_rows expects 2-d input".into()));
        }
        let (rows, cols) = (sx[0], sx[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i != SENTINEL_ROW && i >= rows) {
            return Err(Error::Range(format!("gather index {} >= rows {}", bad, rows)));
        }
        let mut out = Buf::zeros(idx.len() * cols);
        {
            let xd = &self.data[x.0];
            for (r, &i) in idx.iter().enumerate() {
                if i != SENTINEL_ROW {
                    out[r * cols..(r + 1) * cols].copy_from_slice(&xd[i * cols..(i + 1) * cols]);
                }
            }
        }
        let req = self.requires[x.0];
        Ok(self.push(
            vec![idx.len(), cols],
            out,
            req,
            Op::GatherRows { x, idx: idx.to_vec(), cols },
        ))
    }

    /// Column-wise concatenation of two row-aligned 2-d tensors.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shapes[a.0].clone();
        let sb = self.shapes[b.0].clone();
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::Dim(format!(
                "concat_cols on shapes {:?} vs {:?}",
                sa, sb
            )));
        }
        let (rows, ca, cb) = (sa[0], sa[1], sb[1]);
        let mut out = Buf::zeros(rows * (ca + cb));
        {
            let ad = &self.data[a.0];
            let bd = &self.data[b.0];
            for r in 0..rows {
                out[r * (ca + cb)..r * (ca + cb) + ca].copy_from_slice(&ad[r * ca..(r + 1) * ca]);
                out[r * (ca + cb) + ca..(r + 1) * (ca + cb)]
                    .copy_from_slice(&bd[r * cb..(r + 1) * cb]);
            }
        }
        let req = self.requires[a.0] || self.requires[b.0];
        Ok(self.push(vec![rows, ca + cb], out, req, Op::ConcatCols { a, b, rows, ca, cb }))
    }

    /// Fused multi-head scaled dot-product attention over a batch.
    ///
    /// `q`,`k`,`v` are `[batch*nq, heads*dh]` / `[batch*nk, heads*dh]`;
    /// `mask` is `[batch, nq, nk]` with nonzero = may attend. Fully masked
    /// query rows produce zero probabilities and zero output. Returns the
    /// output node and the id under which the probabilities are retained.
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        mask: &[u8],
        batch: usize,
        heads: usize,
        nq: usize,
        nk: usize,
    ) -> Result<(Var, AttnId)> {
        let d = heads
            * match self.shapes[q.0].as_slice() {
                [r, c] if *r == batch * nq && *c % heads == 0 => *c / heads,
                s => {
                    return Err(Error::Dim(format!(
                        "attention q shape {:?} not [batch*nq, heads*dh]",
                        s
                    )))
                }
            };
        let dh = d / heads;
        if dh == 0 {
            return Err(Error::Dim("attention head width must be positive".into()));
        }
        for (name, var, rows) in [("k", k, batch * nk), ("v", v, batch * nk)] {
            if self.shapes[var.0] != vec![rows, d] {
                return Err(Error::Dim(format!(
                    "attention {} shape {:?}, want [{}, {}]",
                    name, self.shapes[var.0], rows, d
                )));
            }
        }
        if mask.len() != batch * nq * nk {
            return Err(Error::Dim(format!(
                "attention mask len {}, want {}",
                mask.len(),
                batch * nq * nk
            )));
        }

        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let mut out = Buf::zeros(batch * nq * d);
        let mut probs = Buf::zeros(batch * heads * nq * nk);
        {
            let qd = &self.data[q.0];
            let kd = &self.data[k.0];
            let vd = &self.data[v.0];
            let mut scores = vec![0.0f64; nk];
            for b in 0..batch {
                for h in 0..heads {
                    let hoff = h * dh;
                    for qi in 0..nq {
                        let mrow = &mask[(b * nq + qi) * nk..(b * nq + qi + 1) * nk];
                        let qrow = &qd[(b * nq + qi) * d + hoff..(b * nq + qi) * d + hoff + dh];
                        let mut mx = f64::NEG_INFINITY;
                        for ki in 0..nk {
                            if mrow[ki] != 0 {
                                let krow = &kd[(b * nk + ki) * d + hoff..(b * nk + ki) * d + hoff + dh];
                                let s = super::linalg::dot(qrow, krow) * inv_sqrt;
                                scores[ki] = s;
                                if s > mx {
                                    mx = s;
                                }
                            }
                        }
                        if mx == f64::NEG_INFINITY {
                            continue; // fully masked query: zero probs, zero output
                        }
                        let prow =
                            &mut probs[((b * heads + h) * nq + qi) * nk..((b * heads + h) * nq + qi + 1) * nk];
                        let mut denom = 0.0;
                        for ki in 0..nk {
                            if mrow[ki] != 0 {
                                let e = (scores[ki] - mx).exp();
                                prow[ki] = e;
                                denom += e;
                            }
                        }
                        let inv_denom = 1.0 / denom;
                        let orow = &mut out[(b * nq + qi) * d + hoff..(b * nq + qi) * d + hoff + dh];
                        for ki in 0..nk {
                            if mrow[ki] != 0 {
                                let p = prow[ki] * inv_denom;
                                prow[ki] = p;
                                let vrow =
                                    &vd[(b * nk + ki) * d + hoff..(b * nk + ki) * d + hoff + dh];
                                for (o, &vv) in orow.iter_mut().zip(vrow.iter()) {
                                    *o += p * vv;
                                }
                            }
                        }
                    }
                }
            }
        }
        let req = self.requires[q.0] || self.requires[k.0] || self.requires[v.0];
        let node = self.push(
            vec![batch * nq, d],
            out,
            req,
            Op::Attention(Box::new(AttentionOp {
                q,
                k,
                v,
                batch,
                heads,
                nq,
                nk,
                dh,
                mask: mask.to_vec(),
                probs,
            })),
        );
        Ok((node, AttnId(node.0)))
    }

    /// Raw probabilities saved by an attention op, `[batch, heads, nq, nk]`.
    pub fn attention_probs(&self, id: AttnId) -> AttentionProbsBatch {
        match &self.ops[id.0] {
            Op::Attention(op) => AttentionProbsBatch {
                batch: op.batch,
                heads: op.heads,
                nq: op.nq,
                nk: op.nk,
                values: op.probs.to_vec(),
            },
            _ => unreachable!("AttnId always points at an attention op"),
        }
    }

    /// Borrow the saved probabilities without copying.
    pub fn attention_probs_raw(&self, id: AttnId) -> (&[f64], usize, usize, usize, usize) {
        match &self.ops[id.0] {
            Op::Attention(op) => (&op.probs, op.batch, op.heads, op.nq, op.nk),
            _ => unreachable!("AttnId always points at an attention op"),
        }
    }

    /// Multiply–accumulate count of the scores and mixing stages of one
    /// attention op, counting only unmasked query/key pairs.
    pub fn attention_macs(&self, id: AttnId) -> u64 {
        match &self.ops[id.0] {
            Op::Attention(op) => {
                let pairs: u64 = op.mask.iter().map(|&m| (m != 0) as u64).sum();
                pairs * op.heads as u64 * op.dh as u64 * 2
            }
            _ => unreachable!("AttnId always points at an attention op"),
        }
    }

    /// Pool row groups by elementwise max or mean. Each `(start, end)`
    /// half-open range names rows of `x`; `start == end` yields a zero row.
    pub fn pool_rows(&mut self, x: Var, groups: &[(usize, usize)], max_mode: bool) -> Result<Var> {
        let sx = self.shapes[x.0].clone();
        if sx.len() != 2 {
            return Err(Error::Dim("pool_rows expects 2-d input".into()));
        }
        let (rows, cols) = (sx[0], sx[1]);
        for &(s, e) in groups {
            if s > e || e > rows {
                return Err(Error::Range(format!(
                    "pool group {}..{} outside 0..{}",
                    s, e, rows
                )));
            }
        }
        let mut out = Buf::zeros(groups.len() * cols);
        let mut argmax = vec![0u32; if max_mode { groups.len() * cols } else { 0 }];
        {
            let xd = &self.data[x.0];
            for (r, &(s, e)) in groups.iter().enumerate() {
                if s == e {
                    continue;
                }
                let orow = &mut out[r * cols..(r + 1) * cols];
                if max_mode {
                    let arow = &mut argmax[r * cols..(r + 1) * cols];
                    orow.copy_from_slice(&xd[s * cols..(s + 1) * cols]);
                    for a in arow.iter_mut() {
                        *a = s as u32;
                    }
                    for src in s + 1..e {
                        for c in 0..cols {
                            let v = xd[src * cols + c];
                            if v > orow[c] {
                                orow[c] = v;
                                arow[c] = src as u32;
                            }
                        }
                    }
                } else {
                    for src in s..e {
                        for c in 0..cols {
                            orow[c] += xd[src * cols + c];
                        }
                    }
                    let inv = 1.0 / (e - s) as f64;
                    for o in orow.iter_mut() {
                        *o *= inv;
                    }
                }
            }
        }
        let req = self.requires[x.0];
        let op = if max_mode {
            Op::MaxPoolRows { x, groups: groups.to_vec(), cols, argmax }
        } else {
            Op::AvgPoolRows { x, groups: groups.to_vec(), cols }
        };
        Ok(self.push(vec![groups.len(), cols], out, req, op))
    }

    /// Per-row negative log-likelihood of `targets` under softmax(logits).
    /// Rows whose target is [`IGNORE_ROW`] contribute exactly zero.
    pub fn nll_rows(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let sl = self.shapes[logits.0].clone();
        if sl.len() != 2 {
            return Err(Error::Dim("nll expects 2-d logits".into()));
        }
        let (rows, vocab) = (sl[0], sl[1]);
        if targets.len() != rows {
            return Err(Error::Dim(format!(
                "nll targets len {} vs rows {}",
                targets.len(),
                rows
            )));
        }
        if !targets.iter().any(|&t| t != IGNORE_ROW) {
            return Err(Error::Contract("nll has no valid target positions".into()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t != IGNORE_ROW && t >= vocab) {
            return Err(Error::Range(format!("nll target {} >= vocab {}", bad, vocab)));
        }
        let mut out = Buf::zeros(rows);
        let mut saved = Vec::new();
        {
            let ld = &self.data[logits.0];
            for (r, &t) in targets.iter().enumerate() {
                if t == IGNORE_ROW {
                    continue;
                }
                let row = &ld[r * vocab..(r + 1) * vocab];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut p = Buf::zeros(vocab);
                let mut denom = 0.0;
                for (pp, &l) in p.iter_mut().zip(row.iter()) {
                    let e = (l - mx).exp();
                    *pp = e;
                    denom += e;
                }
                let inv = 1.0 / denom;
                for pp in p.iter_mut() {
                    *pp *= inv;
                }
                out[r] = denom.ln() + mx - row[t];
                saved.push((r, p));
            }
        }
        let req = self.requires[logits.0];
        Ok(self.push(
            vec![rows],
            out,
            req,
            Op::Nll { logits, vocab, targets: targets.to_vec(), probs: saved },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.data[x.0].iter().sum();
        let req = self.requires[x.0];
        self.push(vec![1], Buf::from_vec(vec![total]), req, Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.data[x.0].len();
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Populate gradients of every `requires_grad` node reachable from the
    /// scalar `loss`. Repeated calls accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.data[loss.0].len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shapes[loss.0]
            )));
        }
        if !self.data[loss.0][0].is_finite() {
            return Err(Error::Numeric(format!(
                "backward on non-finite loss {}",
                self.data[loss.0][0]
            )));
        }
        // Gradients of this pass flow through `pass`; each node's result is
        // merged into the persistent accumulators as soon as the node has
        // been processed, so repeated backward calls add up.
        let mut pass: Vec<Option<Buf>> = (0..self.ops.len()).map(|_| None).collect();
        if self.requires[loss.0] {
            pass[loss.0] = Some(Buf::from_vec(vec![1.0]));
        }
        for i in (0..=loss.0).rev() {
            if !self.requires[i] || pass[i].is_none() {
                continue;
            }
            let g = pass[i].take().expect("checked above");
            self.backprop_node(i, &g, &mut pass);
            match &mut self.grads[i] {
                Some(acc) => {
                    for (a, c) in acc.iter_mut().zip(g.iter()) {
                        *a += c;
                    }
                }
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn accumulate(&self, pass: &mut [Option<Buf>], v: Var, contribution: &[f64]) {
        if !self.requires[v.0] {
            return;
        }
        let slot = &mut pass[v.0];
        match slot {
            Some(buf) => {
                for (g, c) in buf.iter_mut().zip(contribution.iter()) {
                    *g += c;
                }
            }
            None => *slot = Some(Buf::from_slice(contribution)),
        }
    }

    fn accumulate_fn(&self, pass: &mut [Option<Buf>], v: Var, fill: impl FnOnce(&mut [f64])) {
        if !self.requires[v.0] {
            return;
        }
        if pass[v.0].is_none() {
            pass[v.0] = Some(Buf::zeros(self.data[v.0].len()));
        }
        let mut buf = pass[v.0].take().expect("just ensured");
        fill(&mut buf);
        pass[v.0] = Some(buf);
    }

    fn backprop_node(&mut self, i: usize, g: &Buf, pass: &mut [Option<Buf>]) {
        // Detach the op to work around aliasing; reattach afterwards.
        let op = std::mem::replace(&mut self.ops[i], Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                self.accumulate(pass, *a, g);
                self.accumulate(pass, *b, g);
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                if self.requires[a.0] {
                    let contrib: Vec<f64> = g
                        .iter()
                        .zip(self.data[b.0].iter())
                        .map(|(gg, bb)| gg * bb)
                        .collect();
                    self.accumulate(pass, a, &contrib);
                }
                if self.requires[b.0] {
                    let contrib: Vec<f64> = g
                        .iter()
                        .zip(self.data[a.0].iter())
                        .map(|(gg, aa)| gg * aa)
                        .collect();
                    self.accumulate(pass, b, &contrib);
                }
            }
            Op::Scale { a, c } => {
                if self.requires[a.0] {
                    let contrib: Vec<f64> = g.iter().map(|gg| gg * c).collect();
                    self.accumulate(pass, *a, &contrib);
                }
            }
            Op::AddScaled { a, b, alpha } => {
                self.accumulate(pass, *a, g);
                if self.requires[b.0] {
                    let contrib: Vec<f64> = g.iter().map(|gg| gg * alpha).collect();
                    self.accumulate(pass, *b, &contrib);
                }
            }
            Op::Matmul { a, b, ta, tb, m, kdim, n } => {
                self.backprop_matmul(*a, *b, *ta, *tb, *m, *kdim, *n, g, pass);
            }
            Op::AddRowBias { a, bias, rows, cols } => {
                self.accumulate(pass, *a, g);
                if self.requires[bias.0] {
                    let mut contrib = vec![0.0; *cols];
                    for r in 0..*rows {
                        for c in 0..*cols {
                            contrib[c] += g[r * cols + c];
                        }
                    }
                    self.accumulate(pass, *bias, &contrib);
                }
            }
            Op::Embedding { table, ids, width } => {
                if self.requires[table.0] {
                    let (ids, width) = (ids.clone(), *width);
                    self.accumulate_fn(pass, *table, |tg| {
                        for (r, &id) in ids.iter().enumerate() {
                            for c in 0..width {
                                tg[id * width + c] += g[r * width + c];
                            }
                        }
                    });
                }
            }
            Op::LayerNorm { x, gamma, beta, rows, cols, mean, rstd } => {
                let (rows, cols) = (*rows, *cols);
                let inv_n = 1.0 / cols as f64;
                if self.requires[beta.0] {
                    let mut contrib = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            contrib[c] += g[r * cols + c];
                        }
                    }
                    self.accumulate(pass, *beta, &contrib);
                }
                if self.requires[gamma.0] {
                    let xd = &self.data[x.0];
                    let mut contrib = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            let xhat = (xd[r * cols + c] - mean[r]) * rstd[r];
                            contrib[c] += g[r * cols + c] * xhat;
                        }
                    }
                    self.accumulate(pass, *gamma, &contrib);
                }
                if self.requires[x.0] {
                    let xd = &self.data[x.0];
                    let gm = &self.data[gamma.0];
                    let mut contrib = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for c in 0..cols {
                            let xhat = (xd[r * cols + c] - mean[r]) * rstd[r];
                            let dxhat = g[r * cols + c] * gm[c];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                        }
                        for c in 0..cols {
                            let xhat = (xd[r * cols + c] - mean[r]) * rstd[r];
                            let dxhat = g[r * cols + c] * gm[c];
                            contrib[r * cols + c] =
                                rstd[r] * (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
                        }
                    }
                    self.accumulate(pass, *x, &contrib);
                }
            }
            Op::Relu { x } => {
                if self.requires[x.0] {
                    let contrib: Vec<f64> = g
                        .iter()
                        .zip(self.data[x.0].iter())
                        .map(|(gg, &xx)| if xx > 0.0 { *gg } else { 0.0 })
                        .collect();
                    self.accumulate(pass, *x, &contrib);
                }
            }
            Op::Silu { x } => {
                if self.requires[x.0] {
                    let contrib: Vec<f64> = g
                        .iter()
                        .zip(self.data[x.0].iter())
                        .map(|(gg, &xx)| {
                            let s = 1.0 / (1.0 + (-xx).exp());
                            gg * s * (1.0 + xx * (1.0 - s))
                        })
                        .collect();
                    self.accumulate(pass, *x, &contrib);
                }
            }
            Op::Dropout { x, keep, scale } => {
                if self.requires[x.0] {
                    let contrib: Vec<f64> = g
                        .iter()
                        .zip(keep.iter())
                        .map(|(gg, &k)| if k != 0 { gg * scale } else { 0.0 })
                        .collect();
                    self.accumulate(pass, *x, &contrib);
                }
            }
            Op::GatherRows { x, idx, cols } => {
                if self.requires[x.0] {
                    let (idx, cols) = (idx.clone(), *cols);
                    self.accumulate_fn(pass, *x, |xg| {
                        for (r, &i) in idx.iter().enumerate() {
                            if i != SENTINEL_ROW {
                                for c in 0..cols {
                                    xg[i * cols + c] += g[r * cols + c];
                                }
                            }
                        }
                    });
                }
            }
            Op::ConcatCols { a, b, rows, ca, cb } => {
                let (rows, ca, cb) = (*rows, *ca, *cb);
                if self.requires[a.0] {
                    let mut contrib = vec![0.0; rows * ca];
                    for r in 0..rows {
                        contrib[r * ca..(r + 1) * ca]
                            .copy_from_slice(&g[r * (ca + cb)..r * (ca + cb) + ca]);
                    }
                    self.accumulate(pass, *a, &contrib);
                }
                if self.requires[b.0] {
                    let mut contrib = vec![0.0; rows * cb];
                    for r in 0..rows {
                        contrib[r * cb..(r + 1) * cb]
                            .copy_from_slice(&g[r * (ca + cb) + ca..(r + 1) * (ca + cb)]);
                    }
                    self.accumulate(pass, *b, &contrib);
                }
            }
            Op::Attention(at) => {
                self.backprop_attention(at, g, pass);
            }
            Op::MaxPoolRows { x, groups, cols, argmax } => {
                if self.requires[x.0] {
                    let (groups, cols) = (groups.clone(), *cols);
                    let argmax = argmax.clone();
                    self.accumulate_fn(pass, *x, |xg| {
                        for (r, &(s, e)) in groups.iter().enumerate() {
                            if s == e {
                                continue;
                            }
                            for c in 0..cols {
                                let src = argmax[r * cols + c] as usize;
                                xg[src * cols + c] += g[r * cols + c];
                            }
                        }
                    });
                }
            }
            Op::AvgPoolRows { x, groups, cols } => {
                if self.requires[x.0] {
                    let (groups, cols) = (groups.clone(), *cols);
                    self.accumulate_fn(pass, *x, |xg| {
                        for (r, &(s, e)) in groups.iter().enumerate() {
                            if s == e {
                                continue;
                            }
                            let inv = 1.0 / (e - s) as f64;
                            for src in s..e {
                                for c in 0..cols {
                                    xg[src * cols + c] += g[r * cols + c] * inv;
                                }
                            }
                        }
                    });
                }
            }
            Op::Nll { logits, vocab, targets, probs } => {
                if self.requires[logits.0] {
                    let vocab = *vocab;
                    self.accumulate_fn(pass, *logits, |acc| {
                        for (r, p) in probs.iter() {
                            let gr = g[*r];
                            let target = targets[*r];
                            let arow = &mut acc[r * vocab..(r + 1) * vocab];
                            for (c, (av, &pp)) in arow.iter_mut().zip(p.iter()).enumerate() {
                                let indicator = (c == target) as u64 as f64;
                                *av += gr * (pp - indicator);
                            }
                        }
                    });
                }
            }
            Op::Sum { x } => {
                if self.requires[x.0] {
                    let contrib = vec![g[0]; self.data[x.0].len()];
                    self.accumulate(pass, *x, &contrib);
                }
            }
        }
        self.ops[i] = op;
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_matmul(
        &mut self,
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
        m: usize,
        kdim: usize,
        n: usize,
        g: &Buf,
        pass: &mut [Option<Buf>],
    ) {
        // GEMM straight into the accumulator (beta = 1) to avoid a zeroed
        // temporary plus an extra add pass per operand.
        if self.requires[a.0] {
            let bd = &self.data[b.0];
            self.accumulate_fn(pass, a, |acc| {
                if !ta {
                    // dA[m,k] = dC . B'^T
                    gemm(m, n, kdim, 1.0, g, false, bd, !tb, 1.0, acc);
                } else {
                    // stored a is [k,m]: dA_stored = B' . dC^T
                    gemm(kdim, n, m, 1.0, bd, tb, g, true, 1.0, acc);
                }
            });
        }
        if self.requires[b.0] {
            let ad = &self.data[a.0];
            self.accumulate_fn(pass, b, |acc| {
                if !tb {
                    // dB[k,n] = A'^T . dC
                    gemm(kdim, m, n, 1.0, ad, !ta, g, false, 1.0, acc);
                } else {
                    // stored b is [n,k]: dB_stored = dC^T . A'
                    gemm(n, m, kdim, 1.0, g, true, ad, ta, 1.0, acc);
                }
            });
        }
    }

    fn backprop_attention(&mut self, at: &AttentionOp, g: &Buf, pass: &mut [Option<Buf>]) {
        let d = at.heads * at.dh;
        let need_q = self.requires[at.q.0];
        let need_k = self.requires[at.k.0];
        let need_v = self.requires[at.v.0];
        if !(need_q || need_k || need_v) {
            return;
        }
        let inv_sqrt = 1.0 / (at.dh as f64).sqrt();
        let mut dq = vec![0.0; self.data[at.q.0].len()];
        let mut dk = vec![0.0; self.data[at.k.0].len()];
        let mut dv = vec![0.0; self.data[at.v.0].len()];
        {
            let qd = &self.data[at.q.0];
            let kd = &self.data[at.k.0];
            let vd = &self.data[at.v.0];
            let mut dprobs = vec![0.0f64; at.nk];
            for b in 0..at.batch {
                for h in 0..at.heads {
                    let hoff = h * at.dh;
                    for qi in 0..at.nq {
                        let mrow = &at.mask[(b * at.nq + qi) * at.nk..(b * at.nq + qi + 1) * at.nk];
                        let prow = &at.probs
                            [((b * at.heads + h) * at.nq + qi) * at.nk..((b * at.heads + h) * at.nq + qi + 1) * at.nk];
                        let grow = &g[(b * at.nq + qi) * d + hoff..(b * at.nq + qi) * d + hoff + at.dh];
                        // d_probs and the softmax-jacobian dot product
                        let mut pdot = 0.0;
                        for ki in 0..at.nk {
                            if mrow[ki] != 0 {
                                let vrow = &vd
                                    [(b * at.nk + ki) * d + hoff..(b * at.nk + ki) * d + hoff + at.dh];
                                let dp = super::linalg::dot(grow, vrow);
                                dprobs[ki] = dp;
                                pdot += prow[ki] * dp;
                            }
                        }
                        let qrow_base = (b * at.nq + qi) * d + hoff;
                        for ki in 0..at.nk {
                            if mrow[ki] == 0 {
                                continue;
                            }
                            let p = prow[ki];
                            let ds = p * (dprobs[ki] - pdot) * inv_sqrt;
                            let krow_base = (b * at.nk + ki) * d + hoff;
                            if need_q {
                                for c in 0..at.dh {
                                    dq[qrow_base + c] += ds * kd[krow_base + c];
                                }
                            }
                            if need_k {
                                for c in 0..at.dh {
                                    dk[krow_base + c] += ds * qd[qrow_base + c];
                                }
                            }
                            if need_v {
                                for c in 0..at.dh {
                                    dv[krow_base + c] += p * grow[c];
                                }
                            }
                        }
                    }
                }
            }
        }
        if need_q {
            self.accumulate(pass, at.q, &dq);
        }
        if need_k {
            self.accumulate(pass, at.k, &dk);
        }
        if need_v {
            self.accumulate(pass, at.v, &dv);
        }
    }
}

/// Identifier of an attention op inside a graph; lets callers read back the
/// retained probabilities and the op's FLOP count.
#[derive(Debug, Clone, Copy)]
pub struct AttnId(usize);

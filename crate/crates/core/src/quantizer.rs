//! Residual-quantization tokenizer: a stack of k-means codebooks fitted on
//! successive residuals maps continuous item embeddings to discrete
//! L-level codes over a shared vocabulary.

use crate::error::{Error, Result};
use crate::kernel::DetRng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// The L discrete codewords identifying one item.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SidCode {
    pub codes: Vec<usize>,
    pub item_id: u64,
}

/// Stack of per-level codebooks; level j quantizes the residual left by
/// levels `0..j`. All levels share the codeword count and embedding width.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Codebooks {
    /// `levels[j]` is row-major `[v_c, d_emb]`.
    pub levels: Vec<Vec<f64>>,
    pub v_c: usize,
    pub d_emb: usize,
}

impl Codebooks {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    fn centroid(&self, level: usize, code: usize) -> &[f64] {
        &self.levels[level][code * self.d_emb..(code + 1) * self.d_emb]
    }

    fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Config("codebooks must have at least one level".into()));
        }
        for (j, lvl) in self.levels.iter().enumerate() {
            if lvl.len() != self.v_c * self.d_emb {
                return Err(Error::Dim(format!(
                    "codebook level {} has {} values, want {}",
                    j,
                    lvl.len(),
                    self.v_c * self.d_emb
                )));
            }
            if lvl.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite centroid at level {}", j)));
            }
        }
        Ok(())
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid by squared distance; ties break to the lowest index.
fn nearest(cb: &[f64], d: usize, v_c: usize, point: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for c in 0..v_c {
        let dd = dist_sq(&cb[c * d..(c + 1) * d], point);
        if dd < best_d {
            best_d = dd;
            best = c;
        }
    }
    best
}

/// One k-means fit with k-means++ seeding and farthest-point reseeding of
/// empty clusters. The returned centroids are the means of the final
/// assignment, which is what keeps per-level residual energy from growing.
fn kmeans(points: &[f64], m: usize, d: usize, k: usize, max_iters: usize, rng: &mut DetRng) -> Vec<f64> {
    let mut centroids = vec![0.0f64; k * d];

    // k-means++ seeding.
    let first = rng.below(m);
    centroids[..d].copy_from_slice(&points[first * d..(first + 1) * d]);
    let mut min_d: Vec<f64> = (0..m)
        .map(|i| dist_sq(&points[i * d..(i + 1) * d], &centroids[..d]))
        .collect();
    for c in 1..k {
        let total: f64 = min_d.iter().sum();
        let pick = if total > 0.0 {
            let mut threshold = rng.uniform() * total;
            let mut chosen = m - 1;
            for (i, &w) in min_d.iter().enumerate() {
                threshold -= w;
                if threshold <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.below(m)
        };
        centroids[c * d..(c + 1) * d].copy_from_slice(&points[pick * d..(pick + 1) * d]);
        for i in 0..m {
            let dd = dist_sq(&points[i * d..(i + 1) * d], &centroids[c * d..(c + 1) * d]);
            if dd < min_d[i] {
                min_d[i] = dd;
            }
        }
    }

    let mut assign = vec![0usize; m];
    let mut prev = vec![usize::MAX; m];
    for _ in 0..max_iters.max(1) {
        for (i, a) in assign.iter_mut().enumerate() {
            *a = nearest(&centroids, d, k, &points[i * d..(i + 1) * d]);
        }
        let stable = assign == prev;

        // Means of the current assignment (always recomputed so the final
        // centroids are means of the final assignment even on the last
        // iteration).
        let mut sums = vec![0.0f64; k * d];
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for j in 0..d {
                sums[a * d + j] += points[i * d + j];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centroids[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
            }
        }
        // Reseed empty clusters from the point farthest from its centroid.
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..m)
                    .max_by(|&a, &b| {
                        let da = dist_sq(&points[a * d..(a + 1) * d], &centroids[assign[a] * d..(assign[a] + 1) * d]);
                        let db = dist_sq(&points[b * d..(b + 1) * d], &centroids[assign[b] * d..(assign[b] + 1) * d]);
                        da.partial_cmp(&db).expect("finite distances")
                    })
                    .expect("m >= 1");
                centroids[c * d..(c + 1) * d].copy_from_slice(&points[far * d..(far + 1) * d]);
            }
        }
        if stable {
            break;
        }
        prev.copy_from_slice(&assign);
    }
    centroids
}

/// Fit an L-level residual quantizer on `embeddings` (`[m, d_emb]` row-major).
pub fn fit(
    embeddings: &[f64],
    d_emb: usize,
    depth: usize,
    v_c: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Codebooks> {
    if d_emb == 0 || embeddings.len() % d_emb != 0 {
        return Err(Error::Dim(format!(
            "embeddings length {} not a multiple of width {}",
            embeddings.len(),
            d_emb
        )));
    }
    let m = embeddings.len() / d_emb;
    if depth == 0 {
        return Err(Error::Config("quantization depth must be >= 1".into()));
    }
    if m < v_c {
        return Err(Error::Data(format!(
            "{} points cannot seed {} centroids",
            m, v_c
        )));
    }
    let mut rng = DetRng::new(seed);
    let mut residuals = embeddings.to_vec();
    let mut levels = Vec::with_capacity(depth);
    for _ in 0..depth {
        let centroids = kmeans(&residuals, m, d_emb, v_c, max_iters, &mut rng);
        for i in 0..m {
            let point = &mut residuals[i * d_emb..(i + 1) * d_emb];
            let c = nearest(&centroids, d_emb, v_c, point);
            for (p, cv) in point.iter_mut().zip(centroids[c * d_emb..(c + 1) * d_emb].iter()) {
                *p -= cv;
            }
        }
        levels.push(centroids);
    }
    let cb = Codebooks { levels, v_c, d_emb };
    cb.validate()?;
    Ok(cb)
}

/// Greedy per-level nearest-centroid assignment on the running residual.
pub fn encode(embedding: &[f64], cb: &Codebooks, item_id: u64) -> SidCode {
    debug_assert_eq!(embedding.len(), cb.d_emb);
    let mut residual = embedding.to_vec();
    let mut codes = Vec::with_capacity(cb.depth());
    for level in 0..cb.depth() {
        let c = nearest(&cb.levels[level], cb.d_emb, cb.v_c, &residual);
        for (r, cv) in residual.iter_mut().zip(cb.centroid(level, c).iter()) {
            *r -= cv;
        }
        codes.push(c);
    }
    SidCode { codes, item_id }
}

/// Sum of the selected centroids across levels.
pub fn decode(code: &SidCode, cb: &Codebooks) -> Result<Vec<f64>> {
    if code.codes.len() != cb.depth() {
        return Err(Error::Range(format!(
            "code depth {} vs codebook depth {}",
            code.codes.len(),
            cb.depth()
        )));
    }
    let mut out = vec![0.0; cb.d_emb];
    for (level, &c) in code.codes.iter().enumerate() {
        if c >= cb.v_c {
            return Err(Error::Range(format!(
                "code {} at level {} exceeds vocabulary {}",
                c, level, cb.v_c
            )));
        }
        for (o, cv) in out.iter_mut().zip(cb.centroid(level, c).iter()) {
            *o += cv;
        }
    }
    Ok(out)
}

/// Mean squared residual after quantizing every row with the first
/// `levels` levels (`levels = 0` gives the raw energy).
pub fn mean_residual_energy(embeddings: &[f64], cb: &Codebooks, levels: usize) -> f64 {
    let m = embeddings.len() / cb.d_emb;
    let mut total = 0.0;
    for i in 0..m {
        let mut residual = embeddings[i * cb.d_emb..(i + 1) * cb.d_emb].to_vec();
        for level in 0..levels {
            let c = nearest(&cb.levels[level], cb.d_emb, cb.v_c, &residual);
            for (r, cv) in residual.iter_mut().zip(cb.centroid(level, c).iter()) {
                *r -= cv;
            }
        }
        total += residual.iter().map(|v| v * v).sum::<f64>();
    }
    total / m as f64
}

#[derive(Serialize, Deserialize)]
struct CodebookFile {
    version: u32,
    l: usize,
    v_c: usize,
    d_emb: usize,
    levels: Vec<Vec<f64>>,
}

const CODEBOOK_VERSION: u32 = 1;

pub fn save_codebooks<W: Write>(cb: &Codebooks, w: W) -> Result<()> {
    let file = CodebookFile {
        version: CODEBOOK_VERSION,
        l: cb.depth(),
        v_c: cb.v_c,
        d_emb: cb.d_emb,
        levels: cb.levels.clone(),
    };
    serde_json::to_writer(w, &file)?;
    Ok(())
}

pub fn load_codebooks<R: Read>(r: R) -> Result<Codebooks> {
    let file: CodebookFile = serde_json::from_reader(r)?;
    if file.version != CODEBOOK_VERSION {
        return Err(Error::Config(format!(
            "unsupported codebook file version {}",
            file.version
        )));
    }
    if file.levels.len() != file.l {
        return Err(Error::Dim(format!(
            "codebook file declares {} levels but carries {}",
            file.l,
            file.levels.len()
        )));
    }
    let cb = Codebooks {
        levels: file.levels,
        v_c: file.v_c,
        d_emb: file.d_emb,
    };
    cb.validate()?;
    Ok(cb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_cover_when_points_equal_centroids() {
        // One point per centroid: zero total residual, centroids are a
        // permutation of the inputs.
        let pts = vec![0.0, 0.0, 10.0, 0.0, 0.0, 10.0, -7.0, 3.0];
        let cb = fit(&pts, 2, 1, 4, 42, 50).unwrap();
        assert!(mean_residual_energy(&pts, &cb, 1) < 1e-24);
        for i in 0..4 {
            let p = &pts[i * 2..(i + 1) * 2];
            let hit = (0..4).any(|c| dist_sq(cb.centroid(0, c), p) < 1e-24);
            assert!(hit, "input {:?} not a centroid", p);
        }
    }

    #[test]
    fn two_blobs_recovered() {
        let mut rng = DetRng::new(42);
        let mut pts = Vec::new();
        let mut mean_a = [0.0; 4];
        let mut mean_b = [0.0; 4];
        for i in 0..40 {
            let center = if i % 2 == 0 { 5.0 } else { -5.0 };
            let mut p = [0.0; 4];
            for (j, pj) in p.iter_mut().enumerate() {
                *pj = center + 0.05 * rng.normal();
                if i % 2 == 0 {
                    mean_a[j] += *pj / 20.0;
                } else {
                    mean_b[j] += *pj / 20.0;
                }
            }
            pts.extend_from_slice(&p);
        }
        let cb = fit(&pts, 4, 1, 2, 42, 100).unwrap();
        // Each centroid within 0.1 of one blob mean.
        for c in 0..2 {
            let da = dist_sq(cb.centroid(0, c), &mean_a).sqrt();
            let db = dist_sq(cb.centroid(0, c), &mean_b).sqrt();
            assert!(da.min(db) < 0.1, "centroid {} off by {}", c, da.min(db));
        }
        let d0 = dist_sq(cb.centroid(0, 0), cb.centroid(0, 1)).sqrt();
        assert!(d0 > 5.0, "centroids collapsed");
    }

    #[test]
    fn residual_energy_non_increasing() {
        let mut rng = DetRng::new(7);
        let pts: Vec<f64> = (0..64 * 6).map(|_| rng.normal() * 3.0).collect();
        let cb = fit(&pts, 6, 4, 8, 7, 25).unwrap();
        let mut prev = mean_residual_energy(&pts, &cb, 0);
        for level in 1..=4 {
            let e = mean_residual_energy(&pts, &cb, level);
            assert!(
                e <= prev + 1e-12,
                "energy grew at level {}: {} -> {}",
                level,
                prev,
                e
            );
            prev = e;
        }
    }

    #[test]
    fn encode_matches_centroid_exactly() {
        let pts = vec![1.0, 2.0, -3.0, 4.0, 0.5, -0.5, 8.0, 8.0, -2.0, 1.0, 3.0, 3.0];
        let cb = fit(&pts, 2, 1, 3, 1, 50).unwrap();
        let target = cb.centroid(0, 2).to_vec();
        let code = encode(&target, &cb, 99);
        assert_eq!(code.codes, vec![2]);
        assert_eq!(code.item_id, 99);
    }

    #[test]
    fn all_zero_centroids_tie_break_to_lowest() {
        let cb = Codebooks {
            levels: vec![vec![0.0; 4 * 2]; 2],
            v_c: 4,
            d_emb: 2,
        };
        let code = encode(&[3.0, -1.0], &cb, 0);
        assert_eq!(code.codes, vec![0, 0]);
    }

    #[test]
    fn decode_is_centroid_sum() {
        let cb = Codebooks {
            levels: vec![vec![1.0, 2.0, 3.0, 4.0], vec![0.5, 0.5, -1.0, -1.0]],
            v_c: 2,
            d_emb: 2,
        };
        let code = SidCode { codes: vec![1, 0], item_id: 5 };
        assert_eq!(decode(&code, &cb).unwrap(), vec![3.5, 4.5]);
        let bad = SidCode { codes: vec![2, 0], item_id: 5 };
        assert!(matches!(decode(&bad, &cb), Err(Error::Range(_))));
    }

    #[test]
    fn encode_decode_idempotent_on_separated_codebooks() {
        // Centroids far apart relative to the residual bound: re-encoding
        // a decoded point must return the same code.
        let mut rng = DetRng::new(3);
        let mut levels = Vec::new();
        for level in 0..3 {
            let scale = 100.0 / (10.0f64).powi(level as i32);
            let cb: Vec<f64> = (0..4 * 3).map(|_| rng.normal() * scale).collect();
            levels.push(cb);
        }
        let cb = Codebooks { levels, v_c: 4, d_emb: 3 };
        for item in 0..32u64 {
            let code = SidCode {
                codes: vec![(item % 4) as usize, ((item / 4) % 4) as usize, ((item / 16) % 4) as usize],
                item_id: item,
            };
            let point = decode(&code, &cb).unwrap();
            let re = encode(&point, &cb, item);
            assert_eq!(re.codes, code.codes, "item {}", item);
        }
    }

    #[test]
    fn fewer_points_than_centroids_is_an_error() {
        let pts = vec![0.0; 2 * 3];
        assert!(matches!(fit(&pts, 3, 1, 5, 0, 10), Err(Error::Data(_))));
    }

    #[test]
    fn codebook_file_round_trip() {
        let pts: Vec<f64> = (0..32).map(|i| i as f64 * 0.7 - 3.0).collect();
        let cb = fit(&pts, 4, 2, 3, 11, 20).unwrap();
        let mut buf = Vec::new();
        save_codebooks(&cb, &mut buf).unwrap();
        let back = load_codebooks(buf.as_slice()).unwrap();
        assert_eq!(back.v_c, cb.v_c);
        assert_eq!(back.d_emb, cb.d_emb);
        assert_eq!(back.levels, cb.levels);
        // Header fields are readable as written.
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["l"], 2);
        assert_eq!(v["v_c"], 3);
        assert_eq!(v["d_emb"], 4);
    }
}

//! Gazetteer embeddings: each token's matches are embedded as type+span
//! rows, contextualized with scaled dot-product self-attention, passed
//! through a position-wise GELU feed-forward, and max-pooled into one
//! vector. Trained end-to-end, so the exact backward pass lives here too.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{softmax_inplace, Mat};
use crate::matcher::{SpanTag, TokenMatchSet, N_SPAN_TAGS};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("parameter checkpoint version mismatch: expected {expected}, found {found}")]
    Version { expected: u32, found: u32 },
    #[error("parameter checkpoint shape mismatch: {0}")]
    Shape(String),
    #[error("failed to decode parameter checkpoint")]
    Decode(#[from] serde_json::Error),
    #[error("io error")]
    Io(#[from] std::io::Error),
}

const PARAMS_VERSION: u32 = 1;

/// Trainable parameters: type embeddings `G`, span-tag embeddings `S`, and
/// the feed-forward `W`, `b`. All rows have width `dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazEmbeddingParams {
    pub g: Mat,
    pub s: Mat,
    pub w: Mat,
    pub b: Vec<f64>,
    pub dim: usize,
}

impl GazEmbeddingParams {
    /// Seeded init, uniform in (-sqrt(3/d), sqrt(3/d)) per entry.
    pub fn new_seeded<R: Rng>(n_types: usize, dim: usize, rng: &mut R) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        let bound = (3.0 / dim as f64).sqrt();
        let mut fill = |rows: usize, cols: usize| {
            let mut m = Mat::zeros(rows, cols);
            for v in m.data.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
            m
        };
        let g = fill(n_types, dim);
        let s = fill(N_SPAN_TAGS, dim);
        let w = fill(dim, dim);
        let b = (0..dim).map(|_| rng.gen_range(-bound..bound)).collect();
        GazEmbeddingParams { g, s, w, b, dim }
    }

    pub fn n_types(&self) -> usize {
        self.g.rows
    }

    /// Shape-checked JSON checkpoint with a version tag.
    pub fn save<W: Write>(&self, sink: W) -> Result<(), EmbeddingError> {
        let blob = ParamsBlob {
            version: PARAMS_VERSION,
            n_types: self.g.rows,
            n_tags: self.s.rows,
            dim: self.dim,
            params: self.clone(),
        };
        serde_json::to_writer(sink, &blob)?;
        Ok(())
    }

    pub fn load<R: BufRead>(source: R) -> Result<Self, EmbeddingError> {
        let blob: ParamsBlob = serde_json::from_reader(source)?;
        if blob.version != PARAMS_VERSION {
            return Err(EmbeddingError::Version {
                expected: PARAMS_VERSION,
                found: blob.version,
            });
        }
        let p = &blob.params;
        let consistent = p.g.rows == blob.n_types
            && p.g.cols == blob.dim
            && p.s.rows == blob.n_tags
            && p.s.rows == N_SPAN_TAGS
            && p.s.cols == blob.dim
            && p.w.rows == blob.dim
            && p.w.cols == blob.dim
            && p.b.len() == blob.dim
            && p.dim == blob.dim;
        if !consistent {
            return Err(EmbeddingError::Shape(format!(
                "header ({}, {}, {}) does not match payload",
                blob.n_types, blob.n_tags, blob.dim
            )));
        }
        Ok(blob.params)
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsBlob {
    version: u32,
    n_types: usize,
    n_tags: usize,
    dim: usize,
    params: GazEmbeddingParams,
}

/// Ablation switches for the embedding computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GazEmbedConfig {
    /// Replace self-attention with the identity when false.
    pub self_attention: bool,
    /// Collapse all span tags onto one shared row when false.
    pub span_encoding: bool,
}

impl Default for GazEmbedConfig {
    fn default() -> Self {
        GazEmbedConfig {
            self_attention: true,
            span_encoding: true,
        }
    }
}

/// Span-tag row used when span encoding is ablated.
const SHARED_TAG_ROW: usize = 0;

/// Tanh-approximation GELU.
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044715;
    0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh())
}

/// d gelu / dx for the tanh approximation.
pub fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    const A: f64 = 0.044715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
}

/// Everything the backward pass needs from one token's forward run.
#[derive(Debug, Clone)]
pub struct GazForwardCache {
    /// (type row in G, tag row in S) per match, post span-collapse.
    pub rows: Vec<(usize, usize)>,
    /// Match embeddings, one row per match.
    pub e: Mat,
    /// Row-stochastic attention weights; `None` when attention is ablated.
    pub attn: Option<Mat>,
    /// Attention output (equals `e` under the identity ablation).
    pub a: Mat,
    /// Feed-forward pre-activation.
    pub pre: Mat,
    /// GELU outputs.
    pub h: Mat,
    /// Row index winning the max-pool per output column.
    pub argmax: Vec<usize>,
}

/// Compute one token's gazetteer embedding. Empty match sets short-circuit
/// to the zero vector with no cache.
///
/// Panics if a type id is outside the parameter table: that is a
/// dictionary/parameters mismatch, not a recoverable input condition.
pub fn forward_token(
    matches: &TokenMatchSet,
    params: &GazEmbeddingParams,
    config: &GazEmbedConfig,
) -> (Vec<f64>, Option<GazForwardCache>) {
    let d = params.dim;
    let m = matches.len();
    if m == 0 {
        return (vec![0.0; d], None);
    }

    let rows: Vec<(usize, usize)> = matches
        .pairs()
        .iter()
        .map(|&(ty, tag)| {
            assert!(
                ty < params.g.rows,
                "type id {ty} out of range for {} gazetteer types",
                params.g.rows
            );
            let tag_row = if config.span_encoding {
                tag.index()
            } else {
                SHARED_TAG_ROW
            };
            (ty, tag_row)
        })
        .collect();

    let mut e = Mat::zeros(m, d);
    for (j, &(ty, tag)) in rows.iter().enumerate() {
        let row = e.row_mut(j);
        for (k, v) in row.iter_mut().enumerate() {
            *v = params.g.at(ty, k) + params.s.at(tag, k);
        }
    }

    let (attn, a) = if config.self_attention {
        let scale = 1.0 / (d as f64).sqrt();
        let mut p = Mat::zeros(m, m);
        for r in 0..m {
            for c in 0..m {
                *p.at_mut(r, c) = crate::linalg::dot(e.row(r), e.row(c)) * scale;
            }
            softmax_inplace(p.row_mut(r));
        }
        let mut a = Mat::zeros(m, d);
        for r in 0..m {
            for c in 0..m {
                let weight = p.at(r, c);
                crate::linalg::axpy(a.row_mut(r), e.row(c), weight);
            }
        }
        (Some(p), a)
    } else {
        (None, e.clone())
    };

    let mut pre = Mat::zeros(m, d);
    let mut h = Mat::zeros(m, d);
    for j in 0..m {
        let z = params.w.matvec(a.row(j));
        for k in 0..d {
            let v = z[k] + params.b[k];
            *pre.at_mut(j, k) = v;
            *h.at_mut(j, k) = gelu(v);
        }
    }

    let mut out = vec![0.0; d];
    let mut argmax = vec![0usize; d];
    for k in 0..d {
        let mut best = f64::NEG_INFINITY;
        let mut best_j = 0;
        for j in 0..m {
            let v = h.at(j, k);
            if v > best {
                best = v;
                best_j = j;
            }
        }
        out[k] = best;
        argmax[k] = best_j;
    }

    let cache = GazForwardCache {
        rows,
        e,
        attn,
        a,
        pre,
        h,
        argmax,
    };
    (out, cache.into())
}

/// Token-wise embedding of a whole sentence; row `i` of the output is the
/// embedding of token `i`.
pub fn forward_sentence(
    match_sets: &[TokenMatchSet],
    params: &GazEmbeddingParams,
    config: &GazEmbedConfig,
) -> (Mat, Vec<Option<GazForwardCache>>) {
    let mut out = Mat::zeros(match_sets.len(), params.dim);
    let mut caches = Vec::with_capacity(match_sets.len());
    for (i, matches) in match_sets.iter().enumerate() {
        let (row, cache) = forward_token(matches, params, config);
        out.row_mut(i).copy_from_slice(&row);
        caches.push(cache);
    }
    (out, caches)
}

/// Accumulated gradients for the embedding parameters. `G`/`S` gradients
/// stay sparse per touched row.
#[derive(Debug, Clone)]
pub struct GazGradients {
    pub g_rows: BTreeMap<usize, Vec<f64>>,
    pub s_rows: BTreeMap<usize, Vec<f64>>,
    pub w: Mat,
    pub b: Vec<f64>,
    dim: usize,
}

impl GazGradients {
    pub fn zeros_like(params: &GazEmbeddingParams) -> Self {
        GazGradients {
            g_rows: BTreeMap::new(),
            s_rows: BTreeMap::new(),
            w: Mat::zeros(params.w.rows, params.w.cols),
            b: vec![0.0; params.b.len()],
            dim: params.dim,
        }
    }

    fn add_g_row(&mut self, row: usize, grad: &[f64]) {
        let acc = self
            .g_rows
            .entry(row)
            .or_insert_with(|| vec![0.0; self.dim]);
        crate::linalg::axpy(acc, grad, 1.0);
    }

    fn add_s_row(&mut self, row: usize, grad: &[f64]) {
        let acc = self
            .s_rows
            .entry(row)
            .or_insert_with(|| vec![0.0; self.dim]);
        crate::linalg::axpy(acc, grad, 1.0);
    }
}

/// Exact reverse-mode gradients for one token, from the pooled output back
/// through the feed-forward, the attention, and the embedding lookups.
///
/// `cache` must come from the matching [`forward_token`] call.
pub fn backward_token(
    grad_out: &[f64],
    cache: &GazForwardCache,
    params: &GazEmbeddingParams,
    grads: &mut GazGradients,
) {
    let d = params.dim;
    let m = cache.e.rows;
    assert_eq!(grad_out.len(), d, "gradient/parameter dimension mismatch");
    assert_eq!(cache.e.cols, d, "cache/parameter dimension mismatch");

    // Max-pool routes each output column's gradient to its argmax row.
    let mut dh = Mat::zeros(m, d);
    for k in 0..d {
        *dh.at_mut(cache.argmax[k], k) = grad_out[k];
    }

    // GELU and the affine feed-forward, position-wise per row.
    let mut da = Mat::zeros(m, d);
    for j in 0..m {
        let mut dpre = vec![0.0; d];
        for k in 0..d {
            dpre[k] = dh.at(j, k) * gelu_grad(cache.pre.at(j, k));
        }
        grads.w.add_outer(&dpre, cache.a.row(j));
        crate::linalg::axpy(&mut grads.b, &dpre, 1.0);
        let back = params.w.matvec_transposed(&dpre);
        da.row_mut(j).copy_from_slice(&back);
    }

    // Attention: A = P E with P = softmax(E E^T / sqrt(d)) row-wise, and E
    // feeding both the scores and the values.
    let mut de = Mat::zeros(m, d);
    match &cache.attn {
        Some(p) => {
            let scale = 1.0 / (d as f64).sqrt();
            // value path: dE[c] += sum_r P[r][c] dA[r]
            for r in 0..m {
                for c in 0..m {
                    crate::linalg::axpy(de.row_mut(c), da.row(r), p.at(r, c));
                }
            }
            // score path through the softmax Jacobian
            let mut dz = Mat::zeros(m, m);
            for r in 0..m {
                let mut dp = vec![0.0; m];
                for c in 0..m {
                    dp[c] = crate::linalg::dot(da.row(r), cache.e.row(c));
                }
                let p_row = p.row(r);
                let inner = crate::linalg::dot(&dp, p_row);
                for c in 0..m {
                    *dz.at_mut(r, c) = p_row[c] * (dp[c] - inner);
                }
            }
            // Z = E E^T * scale  =>  dE += (dZ + dZ^T) E * scale
            for r in 0..m {
                for c in 0..m {
                    let coeff = (dz.at(r, c) + dz.at(c, r)) * scale;
                    crate::linalg::axpy(de.row_mut(r), cache.e.row(c), coeff);
                }
            }
        }
        None => {
            for j in 0..m {
                crate::linalg::axpy(de.row_mut(j), da.row(j), 1.0);
            }
        }
    }

    // E rows are sums of one G row and one S row.
    for (j, &(ty, tag)) in cache.rows.iter().enumerate() {
        grads.add_g_row(ty, de.row(j));
        grads.add_s_row(tag, de.row(j));
    }
}

/// Whole-vector gazetteer dropout: each row is zeroed independently with
/// probability `rate`; survivors are not rescaled. Returns the dropped-row
/// mask so the backward pass can gate gradients the same way.
pub fn apply_gazetteer_dropout<R: Rng>(rows: &mut Mat, rate: f64, rng: &mut R) -> Vec<bool> {
    assert!(
        (0.0..1.0).contains(&rate),
        "gazetteer dropout rate must be in [0, 1), got {rate}"
    );
    let mut dropped = vec![false; rows.rows];
    if rate == 0.0 {
        return dropped;
    }
    for (i, flag) in dropped.iter_mut().enumerate() {
        if rng.gen_bool(rate) {
            *flag = true;
            rows.row_mut(i).fill(0.0);
        }
    }
    dropped
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params_for_test(n_types: usize, dim: usize, seed: u64) -> GazEmbeddingParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GazEmbeddingParams::new_seeded(n_types, dim, &mut rng)
    }

    fn set(pairs: &[(usize, SpanTag)]) -> TokenMatchSet {
        TokenMatchSet::new(pairs.to_vec(), 6)
    }

    #[test]
    fn gelu_fixed_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(10.0) - 10.0).abs() < 1e-6);
        // independent evaluation of the defining formula at x = 1:
        // 0.5 * (1 + tanh(sqrt(2/pi) * 1.044715))
        let expected = 0.5 * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * 1.044715_f64).tanh());
        assert!((gelu(1.0) - expected).abs() < 1e-15);
        assert!((gelu(1.0) - 0.8412).abs() < 1e-4);
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        let h = 1e-6;
        for &x in &[-3.0, -0.7, 0.0, 0.4, 1.3, 5.0] {
            let numeric = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - numeric).abs() < 1e-8, "x = {x}");
        }
    }

    #[test]
    fn empty_match_set_embeds_to_zero() {
        let params = params_for_test(3, 8, 1);
        let (out, cache) = forward_token(&set(&[]), &params, &GazEmbedConfig::default());
        assert_eq!(out, vec![0.0; 8]);
        assert!(cache.is_none());
    }

    #[test]
    fn single_match_collapses_to_feed_forward() {
        let params = params_for_test(4, 6, 2);
        let matches = set(&[(2, SpanTag::Unit)]);
        let (out, cache) = forward_token(&matches, &params, &GazEmbedConfig::default());
        let cache = cache.unwrap();
        // softmax over one element is 1, so A = E and the whole token is
        // GELU(W (G[2] + S[U]) + b)
        let tag = SpanTag::Unit.index();
        let e: Vec<f64> = (0..6)
            .map(|k| params.g.at(2, k) + params.s.at(tag, k))
            .collect();
        let z = params.w.matvec(&e);
        for k in 0..6 {
            let expected = gelu(z[k] + params.b[k]);
            assert!((out[k] - expected).abs() < 1e-12);
        }
        assert!((cache.attn.as_ref().unwrap().at(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_match_hand_computed_oracle() {
        // d = 2, m = 2, hand-set parameters; expectations computed scalar
        // by scalar through the four equations.
        let params = GazEmbeddingParams {
            g: Mat::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            s: Mat::from_rows(vec![
                vec![0.5, -0.5], // B
                vec![0.0, 0.0],  // I
                vec![0.0, 0.0],  // L
                vec![0.0, 0.0],  // U
                vec![0.0, 0.0],  // S
            ]),
            w: Mat::from_rows(vec![vec![1.0, 2.0], vec![-1.0, 0.5]]),
            b: vec![0.1, -0.2],
            dim: 2,
        };
        let matches = set(&[(0, SpanTag::Begin), (1, SpanTag::Begin)]);
        let (out, _) = forward_token(&matches, &params, &GazEmbedConfig::default());

        // E = [[1.5, -0.5], [0.5, 0.5]]
        let e = [[1.5, -0.5], [0.5, 0.5]];
        let scale = 1.0 / 2.0_f64.sqrt();
        // raw scores Z = E E^T * scale
        let z = [
            [
                (e[0][0] * e[0][0] + e[0][1] * e[0][1]) * scale,
                (e[0][0] * e[1][0] + e[0][1] * e[1][1]) * scale,
            ],
            [
                (e[1][0] * e[0][0] + e[1][1] * e[0][1]) * scale,
                (e[1][0] * e[1][0] + e[1][1] * e[1][1]) * scale,
            ],
        ];
        let softmax_row = |row: [f64; 2]| {
            let m = row[0].max(row[1]);
            let ex = [(row[0] - m).exp(), (row[1] - m).exp()];
            let s = ex[0] + ex[1];
            [ex[0] / s, ex[1] / s]
        };
        let p = [softmax_row(z[0]), softmax_row(z[1])];
        let a = [
            [
                p[0][0] * e[0][0] + p[0][1] * e[1][0],
                p[0][0] * e[0][1] + p[0][1] * e[1][1],
            ],
            [
                p[1][0] * e[0][0] + p[1][1] * e[1][0],
                p[1][0] * e[0][1] + p[1][1] * e[1][1],
            ],
        ];
        let w = [[1.0, 2.0], [-1.0, 0.5]];
        let b = [0.1, -0.2];
        let mut h = [[0.0; 2]; 2];
        for j in 0..2 {
            for k in 0..2 {
                h[j][k] = gelu(w[k][0] * a[j][0] + w[k][1] * a[j][1] + b[k]);
            }
        }
        let expected = [h[0][0].max(h[1][0]), h[0][1].max(h[1][1])];
        assert!((out[0] - expected[0]).abs() < 1e-12);
        assert!((out[1] - expected[1]).abs() < 1e-12);
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let params = params_for_test(6, 16, 3);
        let matches = set(&[
            (0, SpanTag::Begin),
            (3, SpanTag::Begin),
            (5, SpanTag::Begin),
        ]);
        let (_, cache) = forward_token(&matches, &params, &GazEmbedConfig::default());
        let attn = cache.unwrap().attn.unwrap();
        for r in 0..attn.rows {
            let sum: f64 = attn.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sentence_rows_are_independent_tokens() {
        let params = params_for_test(4, 8, 4);
        let sets = vec![
            set(&[]),
            set(&[(1, SpanTag::Unit)]),
            set(&[(0, SpanTag::Begin), (2, SpanTag::Begin)]),
        ];
        let cfg = GazEmbedConfig::default();
        let (mat, caches) = forward_sentence(&sets, &params, &cfg);
        assert_eq!(mat.rows, 3);
        assert!(mat.row(0).iter().all(|&v| v == 0.0));
        assert!(caches[0].is_none() && caches[1].is_some());
        for (i, s) in sets.iter().enumerate() {
            let (row, _) = forward_token(s, &params, &cfg);
            assert_eq!(mat.row(i), &row[..]);
        }

        // permuting the sentence permutes the rows identically
        let perm = vec![sets[2].clone(), sets[0].clone(), sets[1].clone()];
        let (mat2, _) = forward_sentence(&perm, &params, &cfg);
        assert_eq!(mat2.row(0), mat.row(2));
        assert_eq!(mat2.row(1), mat.row(0));
        assert_eq!(mat2.row(2), mat.row(1));
    }

    #[test]
    fn permutation_of_matches_leaves_embedding_unchanged() {
        let params = params_for_test(8, 16, 5);
        let cfg = GazEmbedConfig::default();
        let pairs = [
            (0, SpanTag::Single),
            (3, SpanTag::Single),
            (5, SpanTag::Single),
            (7, SpanTag::Single),
        ];
        let (base, _) = forward_token(&set(&pairs), &params, &cfg);
        let mut permuted = pairs;
        permuted.rotate_left(2);
        permuted.swap(0, 1);
        let (out, _) = forward_token(&set(&permuted), &params, &cfg);
        for (a, b) in base.iter().zip(&out) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradients() {
        let params = params_for_test(4, 8, 6);
        let matches = set(&[(1, SpanTag::Begin), (2, SpanTag::Last)]);
        let (_, cache) = forward_token(&matches, &params, &GazEmbedConfig::default());
        let mut grads = GazGradients::zeros_like(&params);
        backward_token(&vec![0.0; 8], &cache.unwrap(), &params, &mut grads);
        assert!(grads.w.data.iter().all(|&v| v == 0.0));
        assert!(grads.b.iter().all(|&v| v == 0.0));
        assert!(grads
            .g_rows
            .values()
            .all(|row| row.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn single_match_gradient_matches_closed_form() {
        // m = 1: out = gelu(W e + b), e = G[t] + S[tag]; with probe vector
        // v the closed-form gradients are
        //   d/db_k    = v_k gelu'(pre_k)
        //   d/dW_kl   = v_k gelu'(pre_k) e_l
        //   d/de_l    = sum_k v_k gelu'(pre_k) W_kl (split to G and S rows)
        let params = params_for_test(3, 5, 7);
        let cfg = GazEmbedConfig::default();
        let matches = set(&[(1, SpanTag::Unit)]);
        let (_, cache) = forward_token(&matches, &params, &cfg);
        let cache = cache.unwrap();
        let v: Vec<f64> = (0..5).map(|k| 0.3 + 0.1 * k as f64).collect();
        let mut grads = GazGradients::zeros_like(&params);
        backward_token(&v, &cache, &params, &mut grads);

        let e: Vec<f64> = (0..5)
            .map(|k| params.g.at(1, k) + params.s.at(SpanTag::Unit.index(), k))
            .collect();
        let pre: Vec<f64> = {
            let z = params.w.matvec(&e);
            (0..5).map(|k| z[k] + params.b[k]).collect()
        };
        for k in 0..5 {
            let db = v[k] * gelu_grad(pre[k]);
            assert!((grads.b[k] - db).abs() < 1e-12);
            for l in 0..5 {
                let dw = db * e[l];
                assert!((grads.w.at(k, l) - dw).abs() < 1e-12);
            }
        }
        let dg = grads.g_rows.get(&1).unwrap();
        let ds = grads.s_rows.get(&SpanTag::Unit.index()).unwrap();
        for l in 0..5 {
            let de: f64 = (0..5).map(|k| v[k] * gelu_grad(pre[k]) * params.w.at(k, l)).sum();
            assert!((dg[l] - de).abs() < 1e-12);
            assert!((ds[l] - de).abs() < 1e-12);
        }
    }

    #[test]
    fn span_collapse_uses_one_shared_row() {
        let params = params_for_test(4, 8, 8);
        let cfg = GazEmbedConfig {
            span_encoding: false,
            ..GazEmbedConfig::default()
        };
        let a = set(&[(1, SpanTag::Begin)]);
        let b = set(&[(1, SpanTag::Single)]);
        let (out_a, _) = forward_token(&a, &params, &cfg);
        let (out_b, _) = forward_token(&b, &params, &cfg);
        assert_eq!(out_a, out_b);
    }

    #[test]
    fn identity_attention_skips_contextualization() {
        let params = params_for_test(4, 8, 9);
        let cfg = GazEmbedConfig {
            self_attention: false,
            ..GazEmbedConfig::default()
        };
        let matches = set(&[(0, SpanTag::Begin), (3, SpanTag::Begin)]);
        let (_, cache) = forward_token(&matches, &params, &cfg);
        let cache = cache.unwrap();
        assert!(cache.attn.is_none());
        assert_eq!(cache.a, cache.e);
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let mut rows = Mat::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let before = rows.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dropped = apply_gazetteer_dropout(&mut rows, 0.0, &mut rng);
        assert_eq!(rows, before);
        assert!(dropped.iter().all(|&d| !d));
    }

    #[test]
    fn dropout_near_one_zeroes_everything() {
        let mut rows = Mat::from_rows(vec![vec![1.0; 4]; 50]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dropped = apply_gazetteer_dropout(&mut rows, 0.999_999_999, &mut rng);
        assert!(dropped.iter().all(|&d| d));
        assert!(rows.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    #[should_panic(expected = "dropout rate")]
    fn dropout_rejects_rate_one() {
        let mut rows = Mat::zeros(1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        apply_gazetteer_dropout(&mut rows, 1.0, &mut rng);
    }

    #[test]
    fn params_checkpoint_round_trips() {
        let params = params_for_test(7, 12, 10);
        let mut buf = Vec::new();
        params.save(&mut buf).unwrap();
        let loaded = GazEmbeddingParams::load(&buf[..]).unwrap();
        assert_eq!(params, loaded);
    }

    #[test]
    fn params_checkpoint_rejects_wrong_version() {
        let params = params_for_test(2, 4, 11);
        let mut buf = Vec::new();
        params.save(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replacen(
            "\"version\":1",
            "\"version\":9",
            1,
        );
        match GazEmbeddingParams::load(text.as_bytes()) {
            Err(EmbeddingError::Version { found: 9, .. }) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        // No NaN/inf leaks even with extreme parameter magnitudes.
        #[test]
        fn forward_stays_finite_under_extreme_params(
            seed in 0u64..1000,
            magnitude in 1.0f64..1e3,
            m in 1usize..5,
        ) {
            let mut params = params_for_test(6, 8, seed);
            for v in params.g.data.iter_mut() { *v *= magnitude; }
            for v in params.w.data.iter_mut() { *v *= magnitude; }
            let pairs: Vec<(usize, SpanTag)> =
                (0..m).map(|i| (i % 6, SpanTag::Single)).collect();
            let (out, _) = forward_token(&set(&pairs), &params, &GazEmbedConfig::default());
            prop_assert!(out.iter().all(|v| v.is_finite()));
        }
    }
}

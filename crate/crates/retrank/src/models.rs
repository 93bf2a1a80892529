//! Parametric scorers with analytic gradients.
//!
//! Two concrete kinds share one flat parameter layout:
//!
//! * **Retriever**: a two-tower similarity model with a tied item table;
//!   the context embedding is the arithmetic mean of the history items'
//!   embeddings and the score is its inner product with the item embedding.
//! * **Ranker**: a joint interaction scorer, a one-hidden-layer logistic
//!   network over `[context ; item ; context * item]`. It cannot be
//!   factorized into separate towers, which is the point.
//!
//! Parameters live in a single `Vec<f64>` so that SGD, checkpointing, and
//! finite-difference checks all address coordinates the same way. Gradients
//! are sparse over that coordinate space: only the parameters actually
//! touched by a scored (item, context) pair appear.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::dataset::Context;
use crate::numeric::logistic;
use crate::{Error, Result};

/// Which scorer a parameter block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Retriever,
    Ranker,
}

/// Sparse gradient over flat parameter coordinates, backed by a dense
/// accumulator plus a touched-coordinate set so repeated accumulation stays
/// cheap and deterministic.
#[derive(Debug, Clone)]
pub struct GradMap {
    dense: Vec<f64>,
    touched: Vec<usize>,
    marked: Vec<bool>,
}

impl GradMap {
    pub fn new(param_len: usize) -> Self {
        GradMap {
            dense: vec![0.0; param_len],
            touched: Vec::new(),
            marked: vec![false; param_len],
        }
    }

    #[inline]
    pub fn add(&mut self, idx: usize, value: f64) {
        if !self.marked[idx] {
            self.marked[idx] = true;
            self.touched.push(idx);
        }
        self.dense[idx] += value;
    }

    /// Partial for a coordinate; zero when untouched.
    pub fn get(&self, idx: usize) -> f64 {
        self.dense[idx]
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.marked[idx]
    }

    pub fn len(&self) -> usize {
        self.touched.len()
    }

    pub fn is_empty(&self) -> bool {
        self.touched.is_empty()
    }

    pub fn param_len(&self) -> usize {
        self.dense.len()
    }

    /// Touched (coordinate, partial) pairs in ascending coordinate order.
    pub fn entries(&self) -> Vec<(usize, f64)> {
        let mut idxs = self.touched.clone();
        idxs.sort_unstable();
        idxs.into_iter().map(|i| (i, self.dense[i])).collect()
    }

    pub fn scale(&mut self, factor: f64) {
        for &i in &self.touched {
            self.dense[i] *= factor;
        }
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &GradMap, factor: f64) {
        for &i in &other.touched {
            self.add(i, factor * other.dense[i]);
        }
    }

    pub fn clear(&mut self) {
        for &i in &self.touched {
            self.dense[i] = 0.0;
            self.marked[i] = false;
        }
        self.touched.clear();
    }

    /// Largest absolute partial; zero for an empty map.
    pub fn max_abs(&self) -> f64 {
        self.touched
            .iter()
            .map(|&i| self.dense[i].abs())
            .fold(0.0, f64::max)
    }
}

/// A score together with its sparse parameter gradient.
#[derive(Debug, Clone)]
pub struct ScoreAndGrad {
    pub score: f64,
    pub gradient: GradMap,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"RRCK";
const CHECKPOINT_VERSION: u32 = 1;

/// Flat parameter block for one scorer.
///
/// Layout (all row-major, f64):
/// * retriever: `emb[num_items][dim]`
/// * ranker: `emb[num_items][dim]`, `w1[hidden][3*dim]`, `b1[hidden]`,
///   `w2[hidden]`, `b2`
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    kind: ModelKind,
    num_items: usize,
    dim: usize,
    hidden: usize,
    seed: u64,
    values: Vec<f64>,
}

impl ScorerParams {
    /// Seeded retriever with i.i.d. uniform entries in [-1/sqrt(d), 1/sqrt(d)].
    pub fn new_retriever(num_items: usize, dim: usize, seed: u64) -> Self {
        assert!(dim >= 1 && num_items >= 1);
        let mut p = ScorerParams {
            kind: ModelKind::Retriever,
            num_items,
            dim,
            hidden: 0,
            seed,
            values: vec![0.0; num_items * dim],
        };
        p.init(seed);
        p
    }

    /// Seeded ranker; `hidden` is the hidden-layer width (default 2*dim).
    pub fn new_ranker(num_items: usize, dim: usize, hidden: usize, seed: u64) -> Self {
        assert!(dim >= 1 && num_items >= 1 && hidden >= 1);
        let len = num_items * dim + hidden * 3 * dim + hidden + hidden + 1;
        let mut p = ScorerParams {
            kind: ModelKind::Ranker,
            num_items,
            dim,
            hidden,
            seed,
            values: vec![0.0; len],
        };
        p.init(seed);
        p
    }

    fn init(&mut self, seed: u64) {
        let bound = 1.0 / (self.dim as f64).sqrt();
        let mut rng = crate::rng::stream(seed, 0x494e4954); // "INIT"
        for v in self.values.iter_mut() {
            *v = rng.random_range(-bound..bound);
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to the flat parameters (SGD steps, perturbations).
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn param_len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    fn emb(&self, item: usize) -> &[f64] {
        let off = item * self.dim;
        &self.values[off..off + self.dim]
    }

    #[inline]
    fn w1_off(&self) -> usize {
        self.num_items * self.dim
    }

    #[inline]
    fn b1_off(&self) -> usize {
        self.w1_off() + self.hidden * 3 * self.dim
    }

    #[inline]
    fn w2_off(&self) -> usize {
        self.b1_off() + self.hidden
    }

    #[inline]
    fn b2_off(&self) -> usize {
        self.w2_off() + self.hidden
    }

    /// Mean of the history items' embeddings.
    pub fn context_embedding(&self, ctx: &Context) -> Vec<f64> {
        assert!(!ctx.history.is_empty(), "context history must be non-empty");
        let mut mean = vec![0.0; self.dim];
        for &h in ctx.history {
            let e = self.emb(h);
            for (m, v) in mean.iter_mut().zip(e) {
                *m += v;
            }
        }
        let inv = 1.0 / ctx.history.len() as f64;
        for m in mean.iter_mut() {
            *m *= inv;
        }
        mean
    }

    /// Score one item in a context.
    pub fn score(&self, item: usize, ctx: &Context) -> f64 {
        let ctx_emb = self.context_embedding(ctx);
        self.score_with_ctx_emb(item, &ctx_emb)
    }

    fn score_with_ctx_emb(&self, item: usize, ctx_emb: &[f64]) -> f64 {
        match self.kind {
            ModelKind::Retriever => self
                .emb(item)
                .iter()
                .zip(ctx_emb)
                .map(|(a, b)| a * b)
                .sum(),
            ModelKind::Ranker => self.ranker_forward(item, ctx_emb).score,
        }
    }

    /// Score many items under one context, computing the context embedding
    /// once. Pointwise equal to repeated `score` calls.
    pub fn score_many(&self, items: &[usize], ctx: &Context) -> Vec<f64> {
        let ctx_emb = self.context_embedding(ctx);
        items
            .iter()
            .map(|&i| self.score_with_ctx_emb(i, &ctx_emb))
            .collect()
    }

    /// Score every catalog item.
    pub fn score_all(&self, ctx: &Context) -> Vec<f64> {
        let ctx_emb = self.context_embedding(ctx);
        (0..self.num_items)
            .map(|i| self.score_with_ctx_emb(i, &ctx_emb))
            .collect()
    }

    fn ranker_forward(&self, item: usize, ctx_emb: &[f64]) -> RankerForward {
        let d = self.dim;
        let item_emb = self.emb(item);
        // z = [ctx ; item ; ctx * item]
        let mut z = Vec::with_capacity(3 * d);
        z.extend_from_slice(ctx_emb);
        z.extend_from_slice(item_emb);
        for k in 0..d {
            z.push(ctx_emb[k] * item_emb[k]);
        }
        let w1 = self.w1_off();
        let b1 = self.b1_off();
        let w2 = self.w2_off();
        let mut activations = Vec::with_capacity(self.hidden);
        let mut score = self.values[self.b2_off()];
        for j in 0..self.hidden {
            let row = &self.values[w1 + j * 3 * d..w1 + (j + 1) * 3 * d];
            let mut a = self.values[b1 + j];
            for (w, zv) in row.iter().zip(&z) {
                a += w * zv;
            }
            let u = logistic(a);
            activations.push(u);
            score += self.values[w2 + j] * u;
        }
        RankerForward {
            score,
            z,
            activations,
        }
    }

    /// Add `scale * d(score)/d(params)` for one (item, context) pair into `out`.
    pub fn accumulate_score_grad(
        &self,
        item: usize,
        ctx: &Context,
        scale: f64,
        out: &mut GradMap,
    ) {
        let ctx_emb = self.context_embedding(ctx);
        let d = self.dim;
        let inv_h = 1.0 / ctx.history.len() as f64;
        match self.kind {
            ModelKind::Retriever => {
                // d/d(item emb) = ctx mean; d/d(history emb) = item emb / H.
                for k in 0..d {
                    out.add(item * d + k, scale * ctx_emb[k]);
                }
                let item_emb: Vec<f64> = self.emb(item).to_vec();
                for &h in ctx.history {
                    for k in 0..d {
                        out.add(h * d + k, scale * item_emb[k] * inv_h);
                    }
                }
            }
            ModelKind::Ranker => {
                let fwd = self.ranker_forward(item, &ctx_emb);
                let w1 = self.w1_off();
                let b1 = self.b1_off();
                let w2 = self.w2_off();
                let mut g_z = vec![0.0; 3 * d];
                for j in 0..self.hidden {
                    let u = fwd.activations[j];
                    let pre = self.values[w2 + j] * u * (1.0 - u);
                    out.add(w2 + j, scale * u);
                    out.add(b1 + j, scale * pre);
                    let row = w1 + j * 3 * d;
                    for k in 0..3 * d {
                        out.add(row + k, scale * pre * fwd.z[k]);
                        g_z[k] += pre * self.values[row + k];
                    }
                }
                out.add(self.b2_off(), scale);
                let item_emb: Vec<f64> = self.emb(item).to_vec();
                for k in 0..d {
                    // z = [c ; e ; c*e]: e gets blocks 2 and 3, c gets 1 and 3.
                    out.add(item * d + k, scale * (g_z[d + k] + g_z[2 * d + k] * ctx_emb[k]));
                }
                for &h in ctx.history {
                    for k in 0..d {
                        let gc = g_z[k] + g_z[2 * d + k] * item_emb[k];
                        out.add(h * d + k, scale * gc * inv_h);
                    }
                }
            }
        }
    }

    /// Score plus exact analytic gradient for one (item, context) pair.
    pub fn score_with_grad(&self, item: usize, ctx: &Context) -> ScoreAndGrad {
        let mut gradient = GradMap::new(self.param_len());
        self.accumulate_score_grad(item, ctx, 1.0, &mut gradient);
        ScoreAndGrad {
            score: self.score(item, ctx),
            gradient,
        }
    }

    /// Serialize to the versioned checkpoint layout (see module docs in the
    /// README): magic, version, kind, num_items, dim, hidden, seed, then the
    /// flat parameters as little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(44 + self.values.len() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(match self.kind {
            ModelKind::Retriever => 0,
            ModelKind::Ranker => 1,
        });
        out.extend_from_slice(&[0u8; 3]);
        out.extend_from_slice(&(self.num_items as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.extend_from_slice(&(self.hidden as u64).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 44 {
            return Err(err("truncated header"));
        }
        if &bytes[0..4] != CHECKPOINT_MAGIC {
            return Err(err("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = match bytes[8] {
            0 => ModelKind::Retriever,
            1 => ModelKind::Ranker,
            k => return Err(Error::Checkpoint(format!("unknown model kind {k}"))),
        };
        let read_u64 = |off: usize| u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        let num_items = read_u64(12) as usize;
        let dim = read_u64(20) as usize;
        let hidden = read_u64(28) as usize;
        let seed = read_u64(36);
        let expected = match kind {
            ModelKind::Retriever => num_items * dim,
            ModelKind::Ranker => num_items * dim + hidden * 3 * dim + 2 * hidden + 1,
        };
        let body = &bytes[44..];
        if body.len() != expected * 8 {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter bytes, found {}",
                expected * 8,
                body.len()
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(ScorerParams {
            kind,
            num_items,
            dim,
            hidden,
            seed,
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct RankerForward {
    score: f64,
    z: Vec<f64>,
    activations: Vec<f64>,
}

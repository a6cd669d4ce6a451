//! Neural mutual-information discriminator and redundancy masks.
//!
//! `T(s, r)` is a small ReLU MLP trained to separate co-located feature pairs
//! from randomly recombined ones with the logistic (GAN-style) loss
//!
//! ```text
//! L = -mean_joint log σ(T) - mean_marginal log(1 - σ(T))
//! ```
//!
//! At the optimum `T*(s, r) = ln p(s, r) / (p(s) p(r))`, which is why the raw
//! score works as a per-cell redundancy measure and why plugging `T` into the
//! Donsker–Varadhan form recovers the mutual information itself.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{FeatureGrid, Grid, Mask};

pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];
const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    inp: usize,
    out: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Dense {
    fn zeros(inp: usize, out: usize) -> Self {
        Self {
            inp,
            out,
            w: vec![0.0; inp * out],
            b: vec![0.0; out],
        }
    }

    fn forward(&self, x: &[f64], y: &mut Vec<f64>, relu: bool) {
        y.clear();
        for o in 0..self.out {
            let row = &self.w[o * self.inp..(o + 1) * self.inp];
            let z = self.b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            y.push(if relu { z.max(0.0) } else { z });
        }
    }
}

/// MLP `2c -> hidden... -> 1`, ReLU hidden units, raw scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    layers: Vec<Dense>,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dims_of(input_dim: usize, hidden: &[usize]) -> Vec<usize> {
    let mut dims = vec![input_dim];
    dims.extend_from_slice(hidden);
    dims.push(1);
    dims
}

impl Discriminator {
    /// He-uniform weights, zero biases.
    pub fn new(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut d = Self::zeros(input_dim, hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut d.layers {
            let bound = (6.0 / layer.inp as f64).sqrt();
            for w in &mut layer.w {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(d)
    }

    /// All parameters zero, so `T ≡ 0`.
    pub fn zeros(input_dim: usize, hidden: &[usize]) -> Result<Self> {
        if input_dim == 0 || !input_dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "discriminator input must be 2c > 0, got {input_dim}"
            )));
        }
        if hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden layer of width 0".into()));
        }
        let dims = dims_of(input_dim, hidden);
        Ok(Self {
            layers: dims.windows(2).map(|p| Dense::zeros(p[0], p[1])).collect(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inp
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.layers.iter().map(|l| l.inp).collect();
        d.push(1);
        d
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters flattened layer by layer, weights (row-major) then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            p.extend_from_slice(&l.w);
            p.extend_from_slice(&l.b);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", self.num_params()),
                got: format!("{}", p.len()),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// `T(x)` for one concatenated `(s, r)` input.
    pub fn score(&self, x: &[f64]) -> f64 {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            l.forward(&cur, &mut next, i != last);
            std::mem::swap(&mut cur, &mut next);
        }
        cur[0]
    }

    pub fn score_pair(&self, s: &[f64], r: &[f64]) -> f64 {
        let mut x = Vec::with_capacity(s.len() + r.len());
        x.extend_from_slice(s);
        x.extend_from_slice(r);
        self.score(&x)
    }

    fn check_batch(&self, batch: &PairBatch) -> Result<()> {
        if batch.dim != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("pair dim {}", self.input_dim()),
                got: format!("{}", batch.dim),
            });
        }
        if batch.num_joint() == 0 || batch.num_marginal() == 0 {
            return Err(Error::Empty("joint or marginal pairs"));
        }
        Ok(())
    }

    /// Logistic loss on the batch.
    pub fn loss(&self, batch: &PairBatch) -> Result<f64> {
        self.check_batch(batch)?;
        let j = mean(batch.joint_rows().map(|x| softplus(-self.score(x))));
        let m = mean(batch.marginal_rows().map(|x| softplus(self.score(x))));
        Ok(j + m)
    }

    /// Loss and its gradient with respect to [`Self::params`].
    pub fn loss_and_gradient(&self, batch: &PairBatch) -> Result<(f64, Vec<f64>)> {
        self.check_batch(batch)?;
        let nj = batch.num_joint() as f64;
        let nm = batch.num_marginal() as f64;
        // (row, is_joint) jobs in fixed chunks, reduced in order for determinism
        let jobs: Vec<(usize, bool)> = (0..batch.num_joint())
            .map(|i| (i, true))
            .chain((0..batch.num_marginal()).map(|i| (i, false)))
            .collect();
        let partials: Vec<(f64, Vec<f64>)> = jobs
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut g = vec![0.0; self.num_params()];
                let mut loss = 0.0;
                let mut acts = Vec::new();
                for &(i, joint) in chunk {
                    let x = if joint { batch.joint_row(i) } else { batch.marginal_row(i) };
                    let t = self.forward_cached(x, &mut acts);
                    let dt = if joint {
                        loss += softplus(-t) / nj;
                        (sigmoid(t) - 1.0) / nj
                    } else {
                        loss += softplus(t) / nm;
                        sigmoid(t) / nm
                    };
                    self.backward(&acts, dt, &mut g);
                }
                (loss, g)
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.num_params()];
        for (l, g) in partials {
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        Ok((loss, grad))
    }

    fn forward_cached(&self, x: &[f64], acts: &mut Vec<Vec<f64>>) -> f64 {
        acts.resize(self.layers.len() + 1, Vec::new());
        acts[0].clear();
        acts[0].extend_from_slice(x);
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let (head, tail) = acts.split_at_mut(i + 1);
            l.forward(&head[i], &mut tail[0], i != last);
        }
        acts[self.layers.len()][0]
    }

    fn backward(&self, acts: &[Vec<f64>], dt: f64, grad: &mut [f64]) {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.w.len() + l.b.len();
        }
        let mut delta = vec![dt];
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            let a = &acts[li];
            let g = &mut grad[offsets[li]..offsets[li] + l.w.len() + l.b.len()];
            for o in 0..l.out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (gw, &ai) in g[o * l.inp..(o + 1) * l.inp].iter_mut().zip(a) {
                    *gw += d * ai;
                }
                g[l.w.len() + o] += d;
            }
            if li > 0 {
                let mut prev = vec![0.0; l.inp];
                for o in 0..l.out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, &w) in prev.iter_mut().zip(&l.w[o * l.inp..(o + 1) * l.inp]) {
                        *p += d * w;
                    }
                }
                for (p, &ai) in prev.iter_mut().zip(a) {
                    if ai <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    /// One full-batch gradient step; returns the loss before the step.
    pub fn train_step(&mut self, batch: &PairBatch, lr: f64) -> Result<f64> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {lr}")));
        }
        let (loss, grad) = self.loss_and_gradient(batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("discriminator loss {loss}")));
        }
        let mut off = 0;
        for (li, l) in self.layers.iter_mut().enumerate() {
            for p in l.w.iter_mut().chain(l.b.iter_mut()) {
                *p -= lr * grad[off];
                off += 1;
                if !p.is_finite() {
                    return Err(Error::NonFinite(format!("discriminator layer {li} parameter after step")));
                }
            }
        }
        Ok(loss)
    }

    /// Runs `steps` gradient steps and returns the loss history.
    pub fn train(&mut self, batch: &PairBatch, steps: usize, lr: f64) -> Result<Vec<f64>> {
        (0..steps).map(|_| self.train_step(batch, lr)).collect()
    }

    /// Jensen–Shannon-type bound `2 ln 2 - L`, zero for `T ≡ 0`.
    ///
    /// A diagnostic score, not an unbiased MI estimate: it saturates at
    /// `2 JSD <= 2 ln 2` however large the true MI is.
    pub fn mi_lower_bound(&self, batch: &PairBatch) -> Result<f64> {
        Ok(2.0 * std::f64::consts::LN_2 - self.loss(batch)?)
    }

    /// Donsker–Varadhan value `mean_joint T - ln mean_marginal e^T` in nats.
    pub fn mi_estimate(&self, batch: &PairBatch) -> Result<f64> {
        self.check_batch(batch)?;
        let tj = mean(batch.joint_rows().map(|x| self.score(x)));
        let tm: Vec<f64> = batch.marginal_rows().map(|x| self.score(x)).collect();
        let mx = tm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + (tm.iter().map(|t| (t - mx).exp()).sum::<f64>() / tm.len() as f64).ln();
        Ok(tj - lse)
    }

    /// Text checkpoint: dims line, then per layer one line of weights
    /// (row-major) and one line of biases, 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::from("rdcomm-discriminator\ndims");
        for d in self.dims() {
            s.push_str(&format!(" {d}"));
        }
        s.push('\n');
        for l in &self.layers {
            for v in [&l.w, &l.b] {
                let line: Vec<String> = v.iter().map(|x| format!("{x:.16e}")).collect();
                s.push_str(&line.join(" "));
                s.push('\n');
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let bad = |m: &str| Error::Malformed(format!("discriminator checkpoint: {m}"));
        if lines.next() != Some("rdcomm-discriminator") {
            return Err(bad("missing header"));
        }
        let dims_line = lines.next().ok_or_else(|| bad("missing dims"))?;
        let mut toks = dims_line.split_whitespace();
        if toks.next() != Some("dims") {
            return Err(bad("missing dims"));
        }
        let dims: Vec<usize> = toks
            .map(|t| t.parse().map_err(|_| bad("bad dim")))
            .collect::<Result<_>>()?;
        if dims.len() < 2 || dims.last() != Some(&1) {
            return Err(bad("output width must be 1"));
        }
        let mut d = Self::zeros(dims[0], &dims[1..dims.len() - 1])?;
        for l in &mut d.layers {
            for v in [&mut l.w, &mut l.b] {
                let line = lines.next().ok_or_else(|| bad("truncated"))?;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| bad("bad number")))
                    .collect::<Result<_>>()?;
                if vals.len() != v.len() || vals.iter().any(|x| !x.is_finite()) {
                    return Err(bad("wrong parameter count or non-finite value"));
                }
                v.copy_from_slice(&vals);
            }
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(bad("trailing data"));
        }
        Ok(d)
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Co-located pairs and recombined pairs, each row `s ‖ r`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    dim: usize,
    joint: Vec<f64>,
    marginal: Vec<f64>,
}

impl PairBatch {
    /// Rows given explicitly as concatenated `(s, r)` vectors.
    pub fn new(joint: &[Vec<f64>], marginal: &[Vec<f64>]) -> Result<Self> {
        let dim = joint
            .first()
            .or(marginal.first())
            .map(Vec::len)
            .ok_or(Error::Empty("pair batch"))?;
        let mut b = Self {
            dim,
            joint: Vec::new(),
            marginal: Vec::new(),
        };
        for (rows, out) in [(joint, &mut b.joint), (marginal, &mut b.marginal)] {
            for r in rows {
                if r.len() != dim {
                    return Err(Error::ShapeMismatch {
                        expected: format!("pair dim {dim}"),
                        got: format!("{}", r.len()),
                    });
                }
                out.extend_from_slice(r);
            }
        }
        Ok(b)
    }

    /// Joint rows `s_i ‖ r_i`; marginal rows `s_i ‖ r_π(i)` for a random
    /// permutation `π` of the batch.
    pub fn from_pairs<R: Rng + ?Sized>(s: &[Vec<f64>], r: &[Vec<f64>], rng: &mut R) -> Result<Self> {
        if s.len() != r.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} receiver vectors", s.len()),
                got: format!("{}", r.len()),
            });
        }
        if s.is_empty() {
            return Err(Error::Empty("pair batch"));
        }
        let mut perm: Vec<usize> = (0..r.len()).collect();
        perm.shuffle(rng);
        let cat = |a: &[f64], b: &[f64]| [a, b].concat();
        let joint: Vec<Vec<f64>> = s.iter().zip(r).map(|(a, b)| cat(a, b)).collect();
        let marginal: Vec<Vec<f64>> = s.iter().zip(&perm).map(|(a, &j)| cat(a, &r[j])).collect();
        Self::new(&joint, &marginal)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_joint(&self) -> usize {
        self.joint.len() / self.dim
    }

    pub fn num_marginal(&self) -> usize {
        self.marginal.len() / self.dim
    }

    pub fn joint_row(&self, i: usize) -> &[f64] {
        &self.joint[i * self.dim..(i + 1) * self.dim]
    }

    pub fn marginal_row(&self, i: usize) -> &[f64] {
        &self.marginal[i * self.dim..(i + 1) * self.dim]
    }

    pub fn joint_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.joint.chunks_exact(self.dim)
    }

    pub fn marginal_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.marginal.chunks_exact(self.dim)
    }
}

/// Per-cell score `T(abstract_uv, local_uv)`; higher means more redundant.
pub fn redundancy_map(d: &Discriminator, abstract_grid: &FeatureGrid, local: &FeatureGrid) -> Result<Grid<f64>> {
    abstract_grid.check_same_shape(local)?;
    if 2 * local.channels() != d.input_dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} channels", d.input_dim() / 2),
            got: format!("{}", local.channels()),
        });
    }
    let scores: Vec<f64> = (0..local.num_cells())
        .into_par_iter()
        .map(|i| d.score_pair(abstract_grid.cell_at(i), local.cell_at(i)))
        .collect();
    Grid::from_vec(local.height(), local.width(), scores)
}

/// `M_MI = 1[R < τ]`.
pub fn select_mask(rmap: &Grid<f64>, tau_mi: f64) -> Mask {
    rmap.map(|&r| r < tau_mi)
}

//! Two-layer (base + residual) vector quantization of feature grids.
//!
//! Each cell vector `x` is projected with `f_in`, snapped to the nearest base
//! embedding, and the leftover `f_in(x) - base[i]` is snapped to the nearest
//! residual embedding. The reconstruction is `f_out(base[i] + res[j])`.
//! Codebooks are fitted with k-means++ seeded Lloyd iterations. Ties in every
//! nearest-neighbour search go to the lowest index.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{FeatureGrid, Grid};

/// `n × d` embedding table with per-embedding confidence and occurrence mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    embeddings: Vec<f64>,
    pub conf_freq: Vec<f64>,
    pub occ_freq: Vec<f64>,
}

impl Codebook {
    pub fn new(dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("codebook rows"));
        }
        let mut embeddings = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::ShapeMismatch {
                    expected: format!("rows of length {dim}"),
                    got: format!("row of length {}", r.len()),
                });
            }
            if r.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("codebook row".into()));
            }
            embeddings.extend_from_slice(r);
        }
        Ok(Self {
            dim,
            embeddings,
            conf_freq: vec![0.0; rows.len()],
            occ_freq: vec![0.0; rows.len()],
        })
    }

    pub fn len(&self) -> usize {
        self.conf_freq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conf_freq.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.embeddings.chunks_exact(self.dim)
    }

    /// Index of the nearest row; the lowest index wins ties.
    pub fn nearest(&self, x: &[f64]) -> usize {
        nearest(&self.embeddings, self.dim, x).0
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(flat: &[f64], dim: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, row) in flat.chunks_exact(dim).enumerate() {
        let d = sq_dist(row, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Affine map `y = M x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    in_dim: usize,
    out_dim: usize,
    matrix: Vec<f64>,
    bias: Vec<f64>,
    identity: bool,
}

impl Projection {
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        Self {
            in_dim: dim,
            out_dim: dim,
            matrix,
            bias: vec![0.0; dim],
            identity: true,
        }
    }

    pub fn affine(in_dim: usize, out_dim: usize, matrix: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if matrix.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{out_dim}x{in_dim} matrix and {out_dim} bias"),
                got: format!("{} matrix entries and {} bias", matrix.len(), bias.len()),
            });
        }
        Ok(Self {
            in_dim,
            out_dim,
            matrix,
            bias,
            identity: false,
        })
    }

    /// A random orthogonal `f_in` and its exact inverse `f_out`.
    pub fn random_orthogonal_pair<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> (Self, Self) {
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(dim);
        while q.len() < dim {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            for u in &q {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-6 {
                q.push(v.into_iter().map(|a| a / norm).collect());
            }
        }
        let bias: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let forward: Vec<f64> = q.iter().flatten().copied().collect();
        let mut back = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                back[i * dim + j] = q[j][i];
            }
        }
        let back_bias: Vec<f64> = (0..dim)
            .map(|i| -(0..dim).map(|j| back[i * dim + j] * bias[j]).sum::<f64>())
            .collect();
        (
            Self::affine(dim, dim, forward, bias).expect("square shapes"),
            Self::affine(dim, dim, back, back_bias).expect("square shapes"),
        )
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        if self.identity {
            return x.to_vec();
        }
        (0..self.out_dim)
            .map(|i| {
                let row = &self.matrix[i * self.in_dim..(i + 1) * self.in_dim];
                row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.bias[i]
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionKind {
    Identity,
    RandomOrthogonal,
}

/// Base and residual codebooks with their projections.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredCodebook {
    pub base: Codebook,
    pub res: Codebook,
    pub proj_in: Projection,
    pub proj_out: Projection,
}

/// Per-cell base and residual indices.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexGrid {
    pub base: Grid<usize>,
    pub res: Grid<usize>,
}

impl IndexGrid {
    pub fn height(&self) -> usize {
        self.base.height()
    }

    pub fn width(&self) -> usize {
        self.base.width()
    }
}

impl LayeredCodebook {
    pub fn new(base: Codebook, res: Codebook, proj_in: Projection, proj_out: Projection) -> Result<Self> {
        if base.dim() != res.dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("residual dimension {}", base.dim()),
                got: format!("{}", res.dim()),
            });
        }
        if proj_in.out_dim() != base.dim()
            || proj_out.in_dim() != base.dim()
            || proj_in.in_dim() != proj_out.out_dim()
        {
            return Err(Error::ShapeMismatch {
                expected: format!("projections {0}->{1}->{0}", proj_in.in_dim(), base.dim()),
                got: format!(
                    "{}->{} and {}->{}",
                    proj_in.in_dim(),
                    proj_in.out_dim(),
                    proj_out.in_dim(),
                    proj_out.out_dim()
                ),
            });
        }
        Ok(Self {
            base,
            res,
            proj_in,
            proj_out,
        })
    }

    /// Channel count of the feature grids this codebook accepts.
    pub fn channels(&self) -> usize {
        self.proj_in.in_dim()
    }

    fn check_channels(&self, grid: &FeatureGrid) -> Result<()> {
        if grid.channels() != self.channels() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} channels", self.channels()),
                got: format!("{} channels", grid.channels()),
            });
        }
        Ok(())
    }

    /// Quantizes one cell vector, returning `(base_idx, res_idx)`.
    pub fn encode_cell(&self, x: &[f64]) -> (usize, usize) {
        let y = self.proj_in.apply(x);
        let b = self.base.nearest(&y);
        let r: Vec<f64> = y.iter().zip(self.base.row(b)).map(|(a, c)| a - c).collect();
        (b, self.res.nearest(&r))
    }

    pub fn decode_cell(&self, base_idx: usize, res_idx: usize) -> Vec<f64> {
        let sum: Vec<f64> = self
            .base
            .row(base_idx)
            .iter()
            .zip(self.res.row(res_idx))
            .map(|(a, b)| a + b)
            .collect();
        self.proj_out.apply(&sum)
    }

    pub fn decode_base(&self, base_idx: usize) -> Vec<f64> {
        self.proj_out.apply(self.base.row(base_idx))
    }

    /// Layered quantization of every cell. Returns indices and the reconstruction.
    pub fn quantize(&self, grid: &FeatureGrid) -> Result<(IndexGrid, FeatureGrid)> {
        self.check_channels(grid)?;
        let (h, w, c) = (grid.height(), grid.width(), grid.channels());
        let mut base = Vec::with_capacity(h * w);
        let mut res = Vec::with_capacity(h * w);
        let mut recon = FeatureGrid::zeros(h, w, c);
        for i in 0..h * w {
            let (b, r) = self.encode_cell(grid.cell_at(i));
            recon.cell_at_mut(i).copy_from_slice(&self.decode_cell(b, r));
            base.push(b);
            res.push(r);
        }
        Ok((
            IndexGrid {
                base: Grid::from_vec(h, w, base)?,
                res: Grid::from_vec(h, w, res)?,
            },
            recon,
        ))
    }

    /// Reconstruction using the base layer alone.
    pub fn quantize_base_only(&self, grid: &FeatureGrid) -> Result<FeatureGrid> {
        self.check_channels(grid)?;
        let mut out = FeatureGrid::zeros(grid.height(), grid.width(), grid.channels());
        for i in 0..grid.num_cells() {
            let b = self.base.nearest(&self.proj_in.apply(grid.cell_at(i)));
            out.cell_at_mut(i).copy_from_slice(&self.decode_base(b));
        }
        Ok(out)
    }

    /// Adds confidence mass and occurrence counts for the cells in `idx`.
    pub fn accumulate_conf_freq(&mut self, idx: &IndexGrid, conf: &Grid<f64>) -> Result<()> {
        if !idx.base.same_shape(conf) || !idx.res.same_shape(conf) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", idx.height(), idx.width()),
                got: format!("{}x{}", conf.height(), conf.width()),
            });
        }
        for ((&b, &r), &c) in idx.base.cells().iter().zip(idx.res.cells()).zip(conf.cells()) {
            self.accumulate_cell(b, r, c)?;
        }
        Ok(())
    }

    /// Adds one cell's confidence to embeddings `b` and `r`.
    pub fn accumulate_cell(&mut self, b: usize, r: usize, conf: f64) -> Result<()> {
        if b >= self.base.len() || r >= self.res.len() {
            return Err(Error::SymbolOutsideCode {
                symbol: b.max(r),
                size: self.base.len().min(self.res.len()),
            });
        }
        self.base.conf_freq[b] += conf;
        self.base.occ_freq[b] += 1.0;
        self.res.conf_freq[r] += conf;
        self.res.occ_freq[r] += 1.0;
        Ok(())
    }

    /// Text serialization; floats carry 17 significant digits so the round trip is exact.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "rdcomm-codebook n={} d={} n_base={} n_res={} c={}",
            self.base.len() + self.res.len(),
            self.base.dim(),
            self.base.len(),
            self.res.len(),
            self.channels()
        );
        for (name, p) in [("proj_in", &self.proj_in), ("proj_out", &self.proj_out)] {
            if p.is_identity() {
                let _ = writeln!(out, "{name} identity");
            } else {
                let _ = writeln!(out, "{name} affine {} {}", p.in_dim, p.out_dim);
                for row in p.matrix.chunks_exact(p.in_dim) {
                    push_floats(&mut out, row);
                }
                push_floats(&mut out, &p.bias);
            }
        }
        for (name, cb) in [("base", &self.base), ("res", &self.res)] {
            let _ = writeln!(out, "{name}");
            for row in cb.rows() {
                push_floats(&mut out, row);
            }
            push_floats(&mut out, &cb.conf_freq);
            push_floats(&mut out, &cb.occ_freq);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let (ln, header) = lines.next("header")?;
        let mut toks = header.split_whitespace();
        if toks.next() != Some("rdcomm-codebook") {
            return Err(Error::Parse {
                line: ln,
                msg: "missing rdcomm-codebook header".into(),
            });
        }
        let mut fields = std::collections::HashMap::new();
        for tok in toks {
            let (k, v) = tok.split_once('=').ok_or_else(|| Error::Parse {
                line: ln,
                msg: format!("bad header field `{tok}`"),
            })?;
            let v: usize = v.parse().map_err(|e| Error::Parse {
                line: ln,
                msg: format!("`{k}`: {e}"),
            })?;
            fields.insert(k.to_string(), v);
        }
        let get = |k: &str| {
            fields.get(k).copied().ok_or_else(|| Error::Parse {
                line: ln,
                msg: format!("header lacks `{k}`"),
            })
        };
        let (d, n_base, n_res, c) = (get("d")?, get("n_base")?, get("n_res")?, get("c")?);
        let proj_in = read_projection(&mut lines, "proj_in", c)?;
        let proj_out = read_projection(&mut lines, "proj_out", d)?;
        let mut books = Vec::new();
        for (name, n) in [("base", n_base), ("res", n_res)] {
            let (ln, tag) = lines.next(name)?;
            if tag != name {
                return Err(Error::Parse {
                    line: ln,
                    msg: format!("expected `{name}` section"),
                });
            }
            let mut rows = Vec::with_capacity(n);
            for _ in 0..n {
                rows.push(lines.floats(name, d)?);
            }
            let mut cb = Codebook::new(d, &rows)?;
            cb.conf_freq = lines.floats(name, n)?;
            cb.occ_freq = lines.floats(name, n)?;
            books.push(cb);
        }
        let res = books.pop().expect("two sections");
        let base = books.pop().expect("two sections");
        LayeredCodebook::new(base, res, proj_in, proj_out)
    }
}

/// Line cursor shared by the text formats.
pub(crate) struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
        }
    }

    pub(crate) fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l.trim()))
            .ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("unexpected end of input reading {what}"),
            })
    }

    pub(crate) fn floats(&mut self, what: &str, expect: usize) -> Result<Vec<f64>> {
        let (ln, line) = self.next(what)?;
        parse_floats(ln, line, expect)
    }
}

fn read_projection(lines: &mut Lines<'_>, name: &str, dim_in: usize) -> Result<Projection> {
    let (ln, line) = lines.next(name)?;
    let toks: Vec<&str> = line.split_whitespace().collect();
    match toks.as_slice() {
        [n, "identity"] if *n == name => Ok(Projection::identity(dim_in)),
        [n, "affine", i, o] if *n == name => {
            let parse = |s: &str| {
                s.parse::<usize>().map_err(|e| Error::Parse {
                    line: ln,
                    msg: e.to_string(),
                })
            };
            let (i, o) = (parse(i)?, parse(o)?);
            let mut matrix = Vec::with_capacity(i * o);
            for _ in 0..o {
                matrix.extend(lines.floats(name, i)?);
            }
            let bias = lines.floats(name, o)?;
            Projection::affine(i, o, matrix, bias)
        }
        _ => Err(Error::Parse {
            line: ln,
            msg: format!("expected `{name}` projection"),
        }),
    }
}

pub(crate) fn push_floats(out: &mut String, xs: &[f64]) {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.16e}")).collect();
    out.push_str(&parts.join(" "));
    out.push('\n');
}

pub(crate) fn parse_floats(line: usize, s: &str, expect: usize) -> Result<Vec<f64>> {
    let v = s
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|e| Error::Parse {
                line,
                msg: format!("`{t}`: {e}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if v.len() != expect {
        return Err(Error::Parse {
            line,
            msg: format!("expected {expect} values, got {}", v.len()),
        });
    }
    Ok(v)
}

/// Result of a Lloyd run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster SSE after each assignment step.
    pub sse_history: Vec<f64>,
}

impl KMeansFit {
    pub fn final_sse(&self) -> f64 {
        *self.sse_history.last().unwrap_or(&0.0)
    }
}

/// k-means++ seeding.
pub fn kmeans_pp_init<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd iterations from the given centroids. An emptied cluster is re-seeded
/// at the point currently farthest from its own centroid.
pub fn lloyd(points: &[Vec<f64>], init: Vec<Vec<f64>>, max_iters: usize) -> KMeansFit {
    let k = init.len();
    let dim = init.first().map_or(0, Vec::len);
    let mut flat: Vec<f64> = init.into_iter().flatten().collect();
    let mut assignments = vec![usize::MAX; points.len()];
    let mut dists = vec![0.0; points.len()];
    let mut sse_history = Vec::new();
    for iter in 0..=max_iters {
        let mut changed = false;
        let mut sse = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (a, d) = nearest(&flat, dim, p);
            changed |= assignments[i] != a;
            assignments[i] = a;
            dists[i] = d;
            sse += d;
        }
        sse_history.push(sse);
        if !changed || iter == max_iters {
            break;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            sums[a * dim..(a + 1) * dim]
                .iter_mut()
                .zip(p)
                .for_each(|(s, x)| *s += x);
        }
        let mut taken = vec![false; points.len()];
        for c in 0..k {
            let row = &mut flat[c * dim..(c + 1) * dim];
            if counts[c] > 0 {
                let n = counts[c] as f64;
                row.iter_mut()
                    .zip(&sums[c * dim..(c + 1) * dim])
                    .for_each(|(r, s)| *r = s / n);
            } else {
                let far = (0..points.len())
                    .filter(|&i| !taken[i])
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if dists[b] >= dists[i] => Some(b),
                        _ => Some(i),
                    });
                if let Some(i) = far {
                    taken[i] = true;
                    row.copy_from_slice(&points[i]);
                }
            }
        }
    }
    KMeansFit {
        centroids: flat.chunks_exact(dim.max(1)).map(<[f64]>::to_vec).collect(),
        assignments,
        sse_history,
    }
}

/// k-means++ followed by Lloyd.
pub fn kmeans<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, iters: usize, rng: &mut R) -> Result<KMeansFit> {
    if points.is_empty() {
        return Err(Error::Empty("k-means input"));
    }
    if k == 0 || k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={}",
            points.len()
        )));
    }
    let init = kmeans_pp_init(points, k, rng);
    Ok(lloyd(points, init, iters))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VqTrainConfig {
    pub n_base: usize,
    pub n_res: usize,
    pub iters: usize,
    pub seed: u64,
    pub projection: ProjectionKind,
}

impl VqTrainConfig {
    pub fn new(n_base: usize, n_res: usize, iters: usize, seed: u64) -> Self {
        Self {
            n_base,
            n_res,
            iters,
            seed,
            projection: ProjectionKind::Identity,
        }
    }
}

/// Fits base centroids on projected features, then residual centroids on what
/// the base layer leaves over.
pub fn train_codebooks(features: &[Vec<f64>], cfg: &VqTrainConfig) -> Result<LayeredCodebook> {
    let first = features.first().ok_or(Error::Empty("training features"))?;
    let c = first.len();
    if features.iter().any(|f| f.len() != c) {
        return Err(Error::InvalidArgument("training features differ in length".into()));
    }
    if cfg.n_base == 0 || cfg.n_base > cfg.n_res || cfg.n_res > features.len() {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= n_base ({}) <= n_res ({}) <= {} features",
            cfg.n_base,
            cfg.n_res,
            features.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (proj_in, proj_out) = match cfg.projection {
        ProjectionKind::Identity => (Projection::identity(c), Projection::identity(c)),
        ProjectionKind::RandomOrthogonal => {
            let mut prng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_9a7e);
            Projection::random_orthogonal_pair(c, &mut prng)
        }
    };
    let projected: Vec<Vec<f64>> = features.iter().map(|f| proj_in.apply(f)).collect();
    let base_fit = kmeans(&projected, cfg.n_base, cfg.iters, &mut rng)?;
    let residuals: Vec<Vec<f64>> = projected
        .iter()
        .map(|p| {
            let b = nearest_row(&base_fit.centroids, p);
            p.iter().zip(&base_fit.centroids[b]).map(|(x, y)| x - y).collect()
        })
        .collect();
    let res_fit = kmeans(&residuals, cfg.n_res, cfg.iters, &mut rng)?;
    LayeredCodebook::new(
        Codebook::new(c, &base_fit.centroids)?,
        Codebook::new(c, &res_fit.centroids)?,
        proj_in,
        proj_out,
    )
}

fn nearest_row(rows: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, r) in rows.iter().enumerate() {
        let d = sq_dist(r, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

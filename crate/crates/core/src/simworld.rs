//! Synthetic multi-agent BEV occupancy worlds.
//!
//! Ground truth is a `h × w` label grid (class 0 is background) with
//! axis-aligned rectangular objects. Each agent observes the cells inside its
//! field of view through a symmetric flip channel: a cell of class `y` is
//! reported correctly with probability `1 - ε_y` and as each of the other
//! `K - 1` classes with probability `ε_y / (K - 1)`. Because the channel and
//! the per-cell prior are known, every posterior below is exact.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{FeatureGrid, Grid, Mask};
use crate::infotheory::entropy_nats;

pub type Labels = Grid<usize>;
/// Observed class per cell, `None` outside the field of view.
pub type Observation = Grid<Option<usize>>;
pub type Posterior = Grid<Vec<f64>>;

/// Field of view of one agent.
#[derive(Debug, Clone, PartialEq)]
pub enum Fov {
    Full,
    /// Rows `u0..u1`, columns `v0..v1` (half-open).
    Rect { u0: usize, v0: usize, u1: usize, v1: usize },
    /// Cells within `radius` of `(cu, cv)` whose bearing lies in
    /// `[start_deg, start_deg + span_deg)`; bearing 0 points along +v,
    /// 90 along -u. The centre cell is always visible.
    Sector {
        cu: usize,
        cv: usize,
        radius: f64,
        start_deg: f64,
        span_deg: f64,
    },
}

impl Fov {
    pub fn mask(&self, h: usize, w: usize) -> Result<Mask> {
        match *self {
            Fov::Full => Ok(Grid::filled(h, w, true)),
            Fov::Rect { u0, v0, u1, v1 } => {
                if u0 > u1 || v0 > v1 || u1 > h || v1 > w {
                    return Err(Error::InvalidArgument(format!("fov {self} outside {h}x{w} grid")));
                }
                Ok(Grid::from_fn(h, w, |u, v| (u0..u1).contains(&u) && (v0..v1).contains(&v)))
            }
            Fov::Sector {
                cu,
                cv,
                radius,
                start_deg,
                span_deg,
            } => {
                if cu >= h || cv >= w || !(radius >= 0.0) || !(0.0..=360.0).contains(&span_deg) || !start_deg.is_finite() {
                    return Err(Error::InvalidArgument(format!("fov {self} invalid for {h}x{w} grid")));
                }
                Ok(Grid::from_fn(h, w, |u, v| {
                    let du = cu as f64 - u as f64;
                    let dv = v as f64 - cv as f64;
                    if du == 0.0 && dv == 0.0 {
                        return true;
                    }
                    if du.hypot(dv) > radius {
                        return false;
                    }
                    let bearing = du.atan2(dv) * 180.0 / PI;
                    (bearing - start_deg).rem_euclid(360.0) < span_deg
                }))
            }
        }
    }

    /// Parses `full`, `rect u0 v0 u1 v1` or `sector cu cv radius start span`.
    pub fn parse(s: &str) -> Result<Self> {
        let toks: Vec<&str> = s.split_whitespace().collect();
        let bad = || Error::InvalidArgument(format!("bad fov '{s}'"));
        let int = |t: &str| t.parse::<usize>().map_err(|_| bad());
        let real = |t: &str| t.parse::<f64>().map_err(|_| bad());
        match toks.as_slice() {
            ["full"] => Ok(Fov::Full),
            ["rect", a, b, c, d] => Ok(Fov::Rect {
                u0: int(a)?,
                v0: int(b)?,
                u1: int(c)?,
                v1: int(d)?,
            }),
            ["sector", a, b, r, st, sp] => Ok(Fov::Sector {
                cu: int(a)?,
                cv: int(b)?,
                radius: real(r)?,
                start_deg: real(st)?,
                span_deg: real(sp)?,
            }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Fov {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fov::Full => write!(f, "full"),
            Fov::Rect { u0, v0, u1, v1 } => write!(f, "rect {u0} {v0} {u1} {v1}"),
            Fov::Sector {
                cu,
                cv,
                radius,
                start_deg,
                span_deg,
            } => write!(f, "sector {cu} {cv} {radius} {start_deg} {span_deg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub h: usize,
    pub w: usize,
    /// Class count including background.
    pub k: usize,
    pub fovs: Vec<Fov>,
    /// Flip probability per true class.
    pub noise: Vec<f64>,
    /// Target fraction of object cells.
    pub density: f64,
    pub max_object_size: usize,
    pub seed: u64,
}

impl WorldConfig {
    /// Two agents with overlapping left/right views and uniform noise.
    pub fn two_agent(h: usize, w: usize, k: usize, noise: f64, density: f64, seed: u64) -> Self {
        let split = w * 3 / 5;
        Self {
            h,
            w,
            k,
            fovs: vec![
                Fov::Rect { u0: 0, v0: 0, u1: h, v1: split },
                Fov::Rect { u0: 0, v0: w - split, u1: h, v1: w },
            ],
            noise: vec![noise; k],
            density,
            max_object_size: 4.min(h).min(w).max(1),
            seed,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.fovs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.h == 0 || self.w == 0 || self.h > u16::MAX as usize || self.w > u16::MAX as usize {
            return bad(format!("grid {}x{} must be 1..=65535 per side", self.h, self.w));
        }
        if self.k < 2 {
            return bad(format!("k = {} must be >= 2", self.k));
        }
        if !(2..=5).contains(&self.n_agents()) {
            return bad(format!("{} agents, expected 2..=5", self.n_agents()));
        }
        if self.noise.len() != self.k {
            return bad(format!("{} noise levels for {} classes", self.noise.len(), self.k));
        }
        if let Some(e) = self.noise.iter().find(|e| !(0.0..0.5).contains(*e)) {
            return bad(format!("noise {e} outside [0, 0.5)"));
        }
        if !(0.0..=1.0).contains(&self.density) {
            return bad(format!("density {} outside [0, 1]", self.density));
        }
        if self.max_object_size == 0 {
            return bad("max_object_size must be >= 1".into());
        }
        for f in &self.fovs {
            f.mask(self.h, self.w)?;
        }
        Ok(())
    }

    /// Per-cell class prior: background `1 - density`, objects share the rest.
    pub fn prior(&self) -> Vec<f64> {
        let obj = self.density / (self.k - 1) as f64;
        let mut p = vec![obj; self.k];
        p[0] = 1.0 - self.density;
        p
    }

    /// `P(obs | y)`.
    pub fn likelihood(&self, obs: usize, y: usize) -> f64 {
        let e = self.noise[y];
        if obs == y {
            1.0 - e
        } else {
            e / (self.k - 1) as f64
        }
    }

    /// Channel rows `P(obs | y)` for building joint tables.
    pub fn channel(&self) -> Vec<Vec<f64>> {
        (0..self.k).map(|y| (0..self.k).map(|o| self.likelihood(o, y)).collect()).collect()
    }

    pub fn channels(&self) -> usize {
        2 * self.k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub cfg: WorldConfig,
    pub truth: Labels,
    pub fov_masks: Vec<Mask>,
    pub observations: Vec<Observation>,
}

impl World {
    pub fn features(&self, agent: usize) -> FeatureGrid {
        extract_features(&self.observations[agent], self.cfg.k)
    }
}

/// Draws an observation of class `y` through the flip channel.
pub fn observe_cell<R: Rng + ?Sized>(y: usize, cfg: &WorldConfig, rng: &mut R) -> usize {
    if rng.random::<f64>() < cfg.noise[y] {
        let wrong = rng.random_range(0..cfg.k - 1);
        if wrong >= y {
            wrong + 1
        } else {
            wrong
        }
    } else {
        y
    }
}

/// Deterministic world from `cfg.seed`.
pub fn generate(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (h, w) = (cfg.h, cfg.w);
    let mut truth = Grid::filled(h, w, 0usize);
    let target = (cfg.density * (h * w) as f64).ceil() as usize;
    let mut covered = 0;
    let mut attempts = 0;
    while covered < target && attempts < 100 * h * w {
        attempts += 1;
        let class = rng.random_range(1..cfg.k);
        let sh = rng.random_range(1..=cfg.max_object_size.min(h));
        let sw = rng.random_range(1..=cfg.max_object_size.min(w));
        let u0 = rng.random_range(0..=h - sh);
        let v0 = rng.random_range(0..=w - sw);
        for u in u0..u0 + sh {
            for v in v0..v0 + sw {
                let c = truth.get_mut(u, v);
                if *c == 0 {
                    covered += 1;
                }
                *c = class;
            }
        }
    }
    let fov_masks = cfg.fovs.iter().map(|f| f.mask(h, w)).collect::<Result<Vec<_>>>()?;
    let observations = fov_masks
        .iter()
        .map(|m| {
            let cells = truth
                .cells()
                .iter()
                .zip(m.cells())
                .map(|(&y, &seen)| seen.then(|| observe_cell(y, cfg, &mut rng)))
                .collect();
            Grid::from_vec(h, w, cells)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(World {
        cfg: cfg.clone(),
        truth,
        fov_masks,
        observations,
    })
}

/// `c = 2K` features: one-hot observed class, then the 3×3 histogram of
/// observed classes around the cell divided by 9. Unobserved cells are zero.
pub fn extract_features(obs: &Observation, k: usize) -> FeatureGrid {
    let (h, w) = (obs.height(), obs.width());
    let mut f = FeatureGrid::zeros(h, w, 2 * k);
    for u in 0..h {
        for v in 0..w {
            let Some(cls) = *obs.get(u, v) else { continue };
            let cell = f.cell_mut(u, v);
            cell[cls] = 1.0;
            for nu in u.saturating_sub(1)..(u + 2).min(h) {
                for nv in v.saturating_sub(1)..(v + 2).min(w) {
                    if let Some(c) = *obs.get(nu, nv) {
                        cell[k + c] += 1.0 / 9.0;
                    }
                }
            }
        }
    }
    f
}

fn normalize(p: &mut [f64]) {
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
}

fn check_channels(f: &FeatureGrid, cfg: &WorldConfig) -> Result<()> {
    if f.channels() != cfg.channels() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} channels", cfg.channels()),
            got: format!("{}", f.channels()),
        });
    }
    Ok(())
}

/// Posterior from (possibly fused or reconstructed) features: the prior times
/// `P(obs = k | y)^v_k` over the one-hot channels, `v_k` clamped to `[0, 1]`.
///
/// Exact for a single observation; for max-fused features it multiplies the
/// likelihoods of every distinct class reported.
pub fn posterior_from_features(f: &FeatureGrid, cfg: &WorldConfig) -> Result<Posterior> {
    check_channels(f, cfg)?;
    let prior = cfg.prior();
    let logl: Vec<Vec<f64>> = (0..cfg.k)
        .map(|o| (0..cfg.k).map(|y| cfg.likelihood(o, y).ln()).collect())
        .collect();
    let cells = f
        .cells()
        .map(|x| {
            let mut lp: Vec<f64> = prior.iter().map(|p| p.ln()).collect();
            for (o, &v) in x[..cfg.k].iter().enumerate() {
                let v = v.clamp(0.0, 1.0);
                if v > 0.0 {
                    for y in 0..cfg.k {
                        lp[y] += v * logl[o][y];
                    }
                }
            }
            let m = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut p: Vec<f64> = lp.iter().map(|l| (l - m).exp()).collect();
            normalize(&mut p);
            p
        })
        .collect();
    Grid::from_vec(f.height(), f.width(), cells)
}

/// Exact posterior given any number of agents' observations of each cell.
pub fn posterior_from_observations(obs: &[&Observation], cfg: &WorldConfig) -> Result<Posterior> {
    let (h, w) = (cfg.h, cfg.w);
    if let Some(o) = obs.iter().find(|o| o.height() != h || o.width() != w) {
        return Err(Error::ShapeMismatch {
            expected: format!("{h}x{w}"),
            got: format!("{}x{}", o.height(), o.width()),
        });
    }
    let prior = cfg.prior();
    Ok(Grid::from_fn(h, w, |u, v| {
        let mut p = prior.clone();
        for o in obs {
            if let Some(c) = *o.get(u, v) {
                for (y, py) in p.iter_mut().enumerate() {
                    *py *= cfg.likelihood(c, y);
                }
            }
        }
        normalize(&mut p);
        p
    }))
}

/// `1 - P(background | features)` on cells carrying features, 0 elsewhere.
pub fn confidence(f: &FeatureGrid, cfg: &WorldConfig) -> Result<Grid<f64>> {
    let post = posterior_from_features(f, cfg)?;
    let cells = (0..f.num_cells())
        .map(|i| {
            if f.is_zero_cell(i) {
                0.0
            } else {
                (1.0 - post.cells()[i][0]).clamp(0.0, 1.0)
            }
        })
        .collect();
    Grid::from_vec(f.height(), f.width(), cells)
}

/// Cell-wise, channel-wise maximum.
pub fn fuse(local: &FeatureGrid, received: &FeatureGrid) -> Result<FeatureGrid> {
    local.check_same_shape(received)?;
    let data = local
        .as_slice()
        .iter()
        .zip(received.as_slice())
        .map(|(a, b)| a.max(*b))
        .collect();
    FeatureGrid::from_vec(local.height(), local.width(), local.channels(), data)
}

/// Fills each all-zero cell that touches nonzero cells (8-neighbourhood)
/// with half the mean of those neighbours. Nonzero cells are unchanged.
pub fn smooth(sparse: &FeatureGrid) -> FeatureGrid {
    let (h, w, c) = (sparse.height(), sparse.width(), sparse.channels());
    let mut out = sparse.clone();
    let mut acc = vec![0.0; c];
    for u in 0..h {
        for v in 0..w {
            if !sparse.is_zero_cell(u * w + v) {
                continue;
            }
            acc.fill(0.0);
            let mut n = 0usize;
            for nu in u.saturating_sub(1)..(u + 2).min(h) {
                for nv in v.saturating_sub(1)..(v + 2).min(w) {
                    if (nu, nv) != (u, v) && !sparse.is_zero_cell(nu * w + nv) {
                        n += 1;
                        for (a, x) in acc.iter_mut().zip(sparse.cell(nu, nv)) {
                            *a += x;
                        }
                    }
                }
            }
            if n > 0 {
                for (o, a) in out.cell_mut(u, v).iter_mut().zip(&acc) {
                    *o = 0.5 * a / n as f64;
                }
            }
        }
    }
    out
}

/// Per-cell argmax, ties to the lower class.
pub fn decode_labels(post: &Posterior) -> Labels {
    post.map(|p| {
        let mut best = 0;
        for (i, &x) in p.iter().enumerate() {
            if x > p[best] {
                best = i;
            }
        }
        best
    })
}

/// Mean posterior entropy in nats.
pub fn mean_entropy(post: &Posterior) -> f64 {
    post.cells().iter().map(|p| entropy_nats(p)).sum::<f64>() / post.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    /// `None` for classes absent from both prediction and truth.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

pub fn score_iou(pred: &Labels, gt: &Labels, k: usize) -> Result<IouReport> {
    if !pred.same_shape(gt) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", gt.height(), gt.width()),
            got: format!("{}x{}", pred.height(), pred.width()),
        });
    }
    let mut inter = vec![0usize; k];
    let mut union = vec![0usize; k];
    for (&p, &g) in pred.cells().iter().zip(gt.cells()) {
        if p >= k || g >= k {
            return Err(Error::SymbolOutOfRange {
                axis: "class".into(),
                symbol: p.max(g),
                size: k,
            });
        }
        if p == g {
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[g] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = (0..k)
        .map(|c| (union[c] > 0).then(|| inter[c] as f64 / union[c] as f64))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if present.is_empty() {
        1.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(IouReport { per_class, mean })
}

/// Text snapshot: `labels h w`, then one row of symbols per line with `-`
/// for unobserved cells.
pub fn grid_to_text(g: &Grid<Option<usize>>) -> String {
    let mut s = format!("labels {} {}\n", g.height(), g.width());
    for u in 0..g.height() {
        let row: Vec<String> = (0..g.width())
            .map(|v| g.get(u, v).map_or_else(|| "-".to_string(), |c| c.to_string()))
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn labels_to_text(g: &Labels) -> String {
    grid_to_text(&g.map(|&c| Some(c)))
}

pub fn grid_from_text(text: &str) -> Result<Grid<Option<usize>>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty()).enumerate();
    let perr = |line: usize, msg: &str| Error::Parse {
        line: line + 1,
        msg: msg.to_string(),
    };
    let (_, header) = lines.next().ok_or_else(|| perr(0, "empty snapshot"))?;
    let hdr: Vec<&str> = header.split_whitespace().collect();
    let (h, w) = match hdr.as_slice() {
        ["labels", h, w] => (
            h.parse::<usize>().map_err(|_| perr(0, "bad height"))?,
            w.parse::<usize>().map_err(|_| perr(0, "bad width"))?,
        ),
        _ => return Err(perr(0, "expected 'labels h w'")),
    };
    let mut cells = Vec::with_capacity(h * w);
    for (i, line) in lines {
        let row: Vec<Option<usize>> = line
            .split_whitespace()
            .map(|t| {
                if t == "-" {
                    Ok(None)
                } else {
                    t.parse().map(Some).map_err(|_| perr(i, "bad label"))
                }
            })
            .collect::<Result<_>>()?;
        if row.len() != w {
            return Err(perr(i, "row width mismatch"));
        }
        cells.extend(row);
    }
    Grid::from_vec(h, w, cells)
}

pub fn labels_from_text(text: &str) -> Result<Labels> {
    let g = grid_from_text(text)?;
    if g.cells().iter().any(Option::is_none) {
        return Err(Error::Malformed("label snapshot contains unobserved cells".into()));
    }
    Ok(g.map(|c| c.expect("checked above")))
}

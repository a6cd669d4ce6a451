//! Collaboration rounds, staged training and threshold sweeps.
//!
//! A directed round from sender `s` to receiver `r`:
//!
//! 1. `s` quantizes its features with the layered codebook.
//! 2. Cells with confidence `C > τ_c` form `M_c`; their base-layer
//!    reconstruction is the abstract handed to `r` first.
//! 3. `r` scores redundancy `T(abstract, F_r)` per cell and keeps `R < τ_MI`.
//! 4. `s` sends base ‖ residual indices on `M_c ∧ M_MI`.
//! 5. `r` decodes, smooths the sparse reconstruction, max-fuses it into its
//!    own features and predicts the posterior argmax.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::entropy_coder::{self, CodePair, CoderVariant, EncodedMessage};
use crate::error::{Error, Result};
use crate::grid::{FeatureGrid, Grid, Mask};
use crate::mi_estimator::{self, Discriminator, PairBatch};
use crate::simworld::{self, IouReport, World, WorldConfig};
use crate::vq_codec::{self, IndexGrid, LayeredCodebook, ProjectionKind, VqTrainConfig};

/// Bits per raw feature value in the uncompressed baseline.
pub const RAW_BITS_PER_VALUE: u64 = 32;

/// Which cells a sender transmits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Selector {
    /// Confidence mask and redundancy mask, with abstract pre-handing.
    Mi,
    /// Confidence mask only.
    ConfidenceOnly,
    /// Every cell.
    None,
}

impl Selector {
    pub const ALL: [Selector; 3] = [Selector::Mi, Selector::ConfidenceOnly, Selector::None];

    pub fn name(self) -> &'static str {
        match self {
            Selector::Mi => "mi",
            Selector::ConfidenceOnly => "confidence_only",
            Selector::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which directed messages a round contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundMode {
    /// Every ordered pair `s != r`; each receiver fuses all its messages.
    AllPairs,
    /// One message. With `receiver_local == false` the receiver starts from
    /// an empty feature grid, so the prediction rests on the message alone.
    Directed {
        sender: usize,
        receiver: usize,
        receiver_local: bool,
    },
}

impl RoundMode {
    fn pairs(self, n_agents: usize) -> Result<Vec<(usize, usize)>> {
        match self {
            RoundMode::AllPairs => Ok((0..n_agents)
                .flat_map(|r| (0..n_agents).filter(move |&s| s != r).map(move |s| (s, r)))
                .collect()),
            RoundMode::Directed { sender, receiver, .. } => {
                if sender >= n_agents || receiver >= n_agents || sender == receiver {
                    return Err(Error::InvalidArgument(format!(
                        "directed pair {sender}->{receiver} invalid for {n_agents} agents"
                    )));
                }
                Ok(vec![(sender, receiver)])
            }
        }
    }

    fn receivers(self, n_agents: usize) -> Vec<usize> {
        match self {
            RoundMode::AllPairs => (0..n_agents).collect(),
            RoundMode::Directed { receiver, .. } => vec![receiver],
        }
    }

    fn local_info(self) -> bool {
        match self {
            RoundMode::AllPairs => true,
            RoundMode::Directed { receiver_local, .. } => receiver_local,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub world: WorldConfig,
    /// One training world per seed.
    pub train_seeds: Vec<u64>,
    pub n_base: usize,
    pub n_res: usize,
    pub vq_iters: usize,
    pub projection: ProjectionKind,
    pub disc_hidden: Vec<usize>,
    pub disc_steps: usize,
    pub disc_lr: f64,
    pub disc_max_pairs: usize,
    /// Confidence thresholds drawn per training scene for the discriminator.
    pub tau_c_grid: Vec<f64>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(world: WorldConfig, train_seeds: Vec<u64>, seed: u64) -> Self {
        Self {
            world,
            train_seeds,
            n_base: 16,
            n_res: 64,
            vq_iters: 30,
            projection: ProjectionKind::Identity,
            disc_hidden: mi_estimator::DEFAULT_HIDDEN.to_vec(),
            disc_steps: 200,
            disc_lr: 0.2,
            disc_max_pairs: 2000,
            tau_c_grid: vec![0.1, 0.3, 0.5],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        if self.train_seeds.is_empty() {
            return Err(Error::Empty("training seeds"));
        }
        if self.tau_c_grid.is_empty() || self.tau_c_grid.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("training tau_c grid must be nonempty and finite".into()));
        }
        if !(self.disc_lr > 0.0) || self.disc_max_pairs == 0 {
            return Err(Error::InvalidArgument("discriminator lr and max_pairs must be positive".into()));
        }
        Ok(())
    }
}

/// Everything a round needs from training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub codebook: LayeredCodebook,
    pub discriminator: Discriminator,
    /// Confidence threshold drawn for each training scene, in scene order.
    pub tau_c_draws: Vec<f64>,
    pub disc_loss: Vec<f64>,
}

impl TrainedModel {
    pub fn codes(&self, variant: CoderVariant) -> Result<CodePair> {
        CodePair::from_codebook(&self.codebook, variant)
    }
}

/// Stage-by-stage training with ordering checks.
#[derive(Debug)]
pub struct Trainer<'a> {
    cfg: &'a TrainConfig,
    worlds: Vec<World>,
    codebook: Option<LayeredCodebook>,
    frequencies_done: bool,
    discriminator: Option<(Discriminator, Vec<f64>, Vec<f64>)>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let worlds = cfg
            .train_seeds
            .iter()
            .map(|&s| simworld::generate(&WorldConfig { seed: s, ..cfg.world.clone() }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            worlds,
            codebook: None,
            frequencies_done: false,
            discriminator: None,
        })
    }

    pub fn worlds(&self) -> &[World] {
        &self.worlds
    }

    /// Stage 2a: k-means codebooks on every agent's features.
    pub fn fit_codebooks(&mut self) -> Result<()> {
        let feats: Vec<Vec<f64>> = self
            .worlds
            .iter()
            .flat_map(|w| (0..w.cfg.n_agents()).map(move |a| w.features(a)))
            .flat_map(|f| f.cells().map(<[f64]>::to_vec).collect::<Vec<_>>())
            .collect();
        let vq = VqTrainConfig {
            n_base: self.cfg.n_base,
            n_res: self.cfg.n_res,
            iters: self.cfg.vq_iters,
            seed: self.cfg.seed,
            projection: self.cfg.projection,
        };
        self.codebook = Some(vq_codec::train_codebooks(&feats, &vq)?);
        self.frequencies_done = false;
        Ok(())
    }

    /// Stage 2b: confidence and occurrence frequencies over observed cells.
    pub fn accumulate_frequencies(&mut self) -> Result<()> {
        let cb = self
            .codebook
            .as_mut()
            .ok_or(Error::StageOrder("frequencies need trained codebooks"))?;
        for w in &self.worlds {
            for a in 0..w.cfg.n_agents() {
                let f = w.features(a);
                let (idx, _) = cb.quantize(&f)?;
                let conf = simworld::confidence(&f, &w.cfg)?;
                for (i, &seen) in w.fov_masks[a].cells().iter().enumerate() {
                    if seen {
                        cb.accumulate_cell(idx.base.cells()[i], idx.res.cells()[i], conf.cells()[i])?;
                    }
                }
            }
        }
        self.frequencies_done = true;
        Ok(())
    }

    /// Entropy codes; only valid once frequencies have been accumulated.
    pub fn build_codes(&self, variant: CoderVariant) -> Result<CodePair> {
        let cb = self
            .codebook
            .as_ref()
            .ok_or(Error::StageOrder("codes need trained codebooks"))?;
        if !self.frequencies_done {
            return Err(Error::StageOrder("codes built before confidence frequencies were accumulated"));
        }
        CodePair::from_codebook(cb, variant)
    }

    /// Stage 3: discriminator on co-located (abstract, receiver) pairs versus
    /// shuffled ones, one random `τ_c` draw per training scene.
    pub fn train_discriminator(&mut self) -> Result<()> {
        let cb = self
            .codebook
            .as_ref()
            .ok_or(Error::StageOrder("discriminator needs trained codebooks"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0xd15c_0000);
        let mut s_rows = Vec::new();
        let mut r_rows = Vec::new();
        let mut draws = Vec::with_capacity(self.worlds.len());
        for w in &self.worlds {
            let tau = self.cfg.tau_c_grid[rng.random_range(0..self.cfg.tau_c_grid.len())];
            draws.push(tau);
            let feats: Vec<FeatureGrid> = (0..w.cfg.n_agents()).map(|a| w.features(a)).collect();
            for s in 0..feats.len() {
                let conf = simworld::confidence(&feats[s], &w.cfg)?;
                let (idx, _) = cb.quantize(&feats[s])?;
                for r in (0..feats.len()).filter(|&r| r != s) {
                    for i in 0..feats[s].num_cells() {
                        if conf.cells()[i] > tau {
                            s_rows.push(cb.decode_base(idx.base.cells()[i]));
                            r_rows.push(feats[r].cell_at(i).to_vec());
                        }
                    }
                }
            }
        }
        if s_rows.is_empty() {
            return Err(Error::Empty("discriminator training pairs"));
        }
        let mut order: Vec<usize> = (0..s_rows.len()).collect();
        order.shuffle(&mut rng);
        order.truncate(self.cfg.disc_max_pairs);
        order.sort_unstable();
        let s_sel: Vec<Vec<f64>> = order.iter().map(|&i| s_rows[i].clone()).collect();
        let r_sel: Vec<Vec<f64>> = order.iter().map(|&i| r_rows[i].clone()).collect();
        let batch = PairBatch::from_pairs(&s_sel, &r_sel, &mut rng)?;
        let mut d = Discriminator::new(2 * cb.channels(), &self.cfg.disc_hidden, self.cfg.seed)?;
        let losses = d.train(&batch, self.cfg.disc_steps, self.cfg.disc_lr)?;
        self.discriminator = Some((d, draws, losses));
        Ok(())
    }

    pub fn finish(self) -> Result<TrainedModel> {
        if !self.frequencies_done {
            return Err(Error::StageOrder("training finished before confidence frequencies were accumulated"));
        }
        let codebook = self.codebook.ok_or(Error::StageOrder("codebooks not trained"))?;
        let (discriminator, tau_c_draws, disc_loss) =
            self.discriminator.ok_or(Error::StageOrder("discriminator not trained"))?;
        Ok(TrainedModel {
            codebook,
            discriminator,
            tau_c_draws,
            disc_loss,
        })
    }
}

/// Runs all three stages.
pub fn train_all(cfg: &TrainConfig) -> Result<TrainedModel> {
    let mut t = Trainer::new(cfg)?;
    t.fit_codebooks()?;
    t.accumulate_frequencies()?;
    t.train_discriminator()?;
    t.finish()
}

/// Outcome of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub seed: u64,
    pub tau_c: f64,
    pub tau_mi: f64,
    pub coder: CoderVariant,
    pub selector: Selector,
    pub n_messages: usize,
    pub cells: usize,
    pub total_bits: u64,
    pub payload_bits: u64,
    pub abstract_bits: u64,
    pub mask_bits: u64,
    /// `total_bits / (messages · h · w)`.
    pub bpp: f64,
    /// Same without mask overhead.
    pub bpp_payload: f64,
    pub mean_iou: f64,
    pub per_class_iou: Vec<Option<f64>>,
    /// Mean posterior entropy increase over full feature sharing, nats.
    pub distortion_nats: f64,
    /// Serialized messages in pair order.
    pub bitstreams: Vec<Vec<u8>>,
}

impl RoundResult {
    pub fn abstract_fraction(&self) -> f64 {
        if self.total_bits == 0 {
            0.0
        } else {
            self.abstract_bits as f64 / self.total_bits as f64
        }
    }
}

/// Reference points for a world.
#[derive(Debug, Clone, PartialEq)]
pub struct Baselines {
    pub no_collab: IouReport,
    pub full_share: IouReport,
    /// Raw features at 32 bits per value, per message.
    pub uncompressed_bits: u64,
}

/// Per-world quantities shared by every threshold setting.
#[derive(Debug, Clone)]
pub struct PreparedWorld {
    pub world: World,
    features: Vec<FeatureGrid>,
    indices: Vec<IndexGrid>,
    confidence: Vec<Grid<f64>>,
    full_share: Vec<(FeatureGrid, simworld::Posterior)>,
}

impl PreparedWorld {
    pub fn new(world: World, model: &TrainedModel, mode: RoundMode) -> Result<Self> {
        let n = world.cfg.n_agents();
        let features: Vec<FeatureGrid> = (0..n).map(|a| world.features(a)).collect();
        let mut indices = Vec::with_capacity(n);
        let mut confidence = Vec::with_capacity(n);
        for f in &features {
            indices.push(model.codebook.quantize(f)?.0);
            confidence.push(simworld::confidence(f, &world.cfg)?);
        }
        let pairs = mode.pairs(n)?;
        let mut full_share = Vec::new();
        for r in mode.receivers(n) {
            let mut fused = start_features(&features[r], mode);
            for &(s, _) in pairs.iter().filter(|p| p.1 == r) {
                fused = simworld::fuse(&fused, &features[s])?;
            }
            let post = simworld::posterior_from_features(&fused, &world.cfg)?;
            full_share.push((fused, post));
        }
        Ok(Self {
            world,
            features,
            indices,
            confidence,
            full_share,
        })
    }

    pub fn baselines(&self, mode: RoundMode) -> Result<Baselines> {
        let cfg = &self.world.cfg;
        let receivers = mode.receivers(cfg.n_agents());
        let mut local_pred = Vec::new();
        let mut full_pred = Vec::new();
        for (j, &r) in receivers.iter().enumerate() {
            let local = start_features(&self.features[r], mode);
            local_pred.push(simworld::decode_labels(&simworld::posterior_from_features(&local, cfg)?));
            full_pred.push(simworld::decode_labels(&self.full_share[j].1));
        }
        let cells = (cfg.h * cfg.w) as u64;
        Ok(Baselines {
            no_collab: pooled_iou(&local_pred, &self.world, receivers.len())?,
            full_share: pooled_iou(&full_pred, &self.world, receivers.len())?,
            uncompressed_bits: cells * cfg.channels() as u64 * RAW_BITS_PER_VALUE,
        })
    }
}

fn start_features(local: &FeatureGrid, mode: RoundMode) -> FeatureGrid {
    if mode.local_info() {
        local.clone()
    } else {
        FeatureGrid::zeros(local.height(), local.width(), local.channels())
    }
}

fn pooled_iou(preds: &[simworld::Labels], world: &World, n: usize) -> Result<IouReport> {
    let (h, w) = (world.cfg.h, world.cfg.w);
    let pred: Vec<usize> = preds.iter().flat_map(|p| p.cells().iter().copied()).collect();
    let truth: Vec<usize> = (0..n).flat_map(|_| world.truth.cells().iter().copied()).collect();
    simworld::score_iou(
        &Grid::from_vec(n * h, w, pred)?,
        &Grid::from_vec(n * h, w, truth)?,
        world.cfg.k,
    )
}

/// Threshold and variant settings of one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundSettings {
    pub tau_c: f64,
    pub tau_mi: f64,
    pub coder: CoderVariant,
    pub selector: Selector,
    pub mode: RoundMode,
}

/// One message from `s` to `r`, round-tripped through its byte encoding.
fn send(
    prep: &PreparedWorld,
    model: &TrainedModel,
    codes: &CodePair,
    s: usize,
    local_r: &FeatureGrid,
    set: &RoundSettings,
) -> Result<(EncodedMessage, Vec<u8>, FeatureGrid)> {
    let cb = &model.codebook;
    let idx = &prep.indices[s];
    let (h, w) = (idx.height(), idx.width());
    let conf_mask: Mask = match set.selector {
        Selector::None => Grid::filled(h, w, true),
        _ => prep.confidence[s].map(|&c| c > set.tau_c),
    };
    let msg = match set.selector {
        Selector::Mi => {
            let mut abstract_grid = FeatureGrid::zeros(h, w, cb.channels());
            for (i, &keep) in conf_mask.cells().iter().enumerate() {
                if keep {
                    abstract_grid
                        .cell_at_mut(i)
                        .copy_from_slice(&cb.decode_base(idx.base.cells()[i]));
                }
            }
            let rmap = mi_estimator::redundancy_map(&model.discriminator, &abstract_grid, local_r)?;
            let redund = mi_estimator::select_mask(&rmap, set.tau_mi);
            entropy_coder::encode(idx, &conf_mask, &redund, codes)?
        }
        _ => entropy_coder::encode_without_abstract(idx, &conf_mask, &conf_mask, codes)?,
    };
    let bytes = msg.to_bytes()?;
    let received = EncodedMessage::from_bytes(&bytes)?;
    let partial = entropy_coder::decode(&received, codes)?;
    let mut recon = FeatureGrid::zeros(h, w, cb.channels());
    for i in 0..h * w {
        if let (Some(b), Some(r)) = (partial.base.cells()[i], partial.res.cells()[i]) {
            recon.cell_at_mut(i).copy_from_slice(&cb.decode_cell(b, r));
        }
    }
    Ok((msg, bytes, recon))
}

/// Executes one collaboration round on a prepared world.
pub fn run_round_prepared(
    prep: &PreparedWorld,
    model: &TrainedModel,
    codes: &CodePair,
    set: &RoundSettings,
) -> Result<RoundResult> {
    if codes.variant != set.coder {
        return Err(Error::InvalidArgument(format!(
            "code tables are {} but round asks for {}",
            codes.variant.name(),
            set.coder.name()
        )));
    }
    if model.codebook.channels() != prep.world.cfg.channels() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} channels", prep.world.cfg.channels()),
            got: format!("codebook for {} channels", model.codebook.channels()),
        });
    }
    if !set.tau_c.is_finite() || set.tau_mi.is_nan() {
        return Err(Error::InvalidArgument("tau_c must be finite and tau_mi not NaN".into()));
    }
    let cfg = &prep.world.cfg;
    let n = cfg.n_agents();
    let pairs = set.mode.pairs(n)?;
    let receivers = set.mode.receivers(n);
    let (mut payload, mut abstract_bits, mut mask) = (0u64, 0u64, 0u64);
    let mut bitstreams = Vec::with_capacity(pairs.len());
    let mut preds = Vec::with_capacity(receivers.len());
    let mut dist = 0.0;
    for (j, &r) in receivers.iter().enumerate() {
        let local = start_features(&prep.features[r], set.mode);
        let mut fused = local.clone();
        for &(s, _) in pairs.iter().filter(|p| p.1 == r) {
            let (msg, bytes, recon) = send(prep, model, codes, s, &local, set)?;
            payload += msg.payload_bits() as u64;
            abstract_bits += msg.abstract_bits() as u64;
            mask += msg.mask_bits() as u64;
            bitstreams.push(bytes);
            fused = simworld::fuse(&fused, &simworld::smooth(&recon))?;
        }
        let post = simworld::posterior_from_features(&fused, cfg)?;
        dist += simworld::mean_entropy(&post) - simworld::mean_entropy(&prep.full_share[j].1);
        preds.push(simworld::decode_labels(&post));
    }
    let iou = pooled_iou(&preds, &prep.world, receivers.len())?;
    let total = payload + abstract_bits + mask;
    let denom = (pairs.len() * cfg.h * cfg.w) as f64;
    Ok(RoundResult {
        seed: cfg.seed,
        tau_c: set.tau_c,
        tau_mi: set.tau_mi,
        coder: set.coder,
        selector: set.selector,
        n_messages: pairs.len(),
        cells: cfg.h * cfg.w,
        total_bits: total,
        payload_bits: payload,
        abstract_bits,
        mask_bits: mask,
        bpp: total as f64 / denom,
        bpp_payload: (payload + abstract_bits) as f64 / denom,
        mean_iou: iou.mean,
        per_class_iou: iou.per_class,
        distortion_nats: dist / receivers.len() as f64,
        bitstreams,
    })
}

/// Generates the world for `cfg` and runs one round on it.
pub fn run_round(cfg: &WorldConfig, model: &TrainedModel, set: &RoundSettings) -> Result<RoundResult> {
    let world = simworld::generate(cfg)?;
    let prep = PreparedWorld::new(world, model, set.mode)?;
    run_round_prepared(&prep, model, &model.codes(set.coder)?, set)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// World template; its seed is replaced by each sweep seed.
    pub world: WorldConfig,
    pub tau_c: Vec<f64>,
    pub tau_mi: Vec<f64>,
    pub seeds: Vec<u64>,
    pub coder: CoderVariant,
    pub selector: Selector,
    pub mode: RoundMode,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        if self.tau_c.is_empty() || self.tau_mi.is_empty() || self.seeds.is_empty() {
            return Err(Error::Empty("sweep grid"));
        }
        if self.tau_c.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("tau_c values must be finite".into()));
        }
        if self.tau_mi.iter().any(|t| t.is_nan()) {
            return Err(Error::InvalidArgument("tau_mi values must not be NaN".into()));
        }
        Ok(())
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

/// Per-threshold aggregate over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub tau_c: f64,
    pub tau_mi: f64,
    pub total_bits: Stat,
    pub bpp: Stat,
    pub bpp_payload: Stat,
    pub mean_iou: Stat,
    pub abstract_fraction: Stat,
    pub distortion_nats: Stat,
    /// Not dominated in (mean bpp, mean IoU) by another point of the sweep.
    pub pareto: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Ordered by `(tau_c, tau_mi, seed)` grid position.
    pub rounds: Vec<RoundResult>,
    pub points: Vec<SweepPoint>,
}

/// Indices of points not dominated under "fewer bits, higher score".
pub fn pareto_flags(points: &[(f64, f64)]) -> Vec<bool> {
    points
        .iter()
        .map(|&(b, s)| {
            !points
                .iter()
                .any(|&(b2, s2)| b2 <= b && s2 >= s && (b2 < b || s2 > s))
        })
        .collect()
}

/// Every `(tau_c, tau_mi, seed)` combination, parallel over seeds.
pub fn run_sweep(cfg: &SweepConfig, model: &TrainedModel) -> Result<SweepResult> {
    cfg.validate()?;
    let codes = model.codes(cfg.coder)?;
    let per_seed: Vec<Vec<RoundResult>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let world = simworld::generate(&WorldConfig { seed, ..cfg.world.clone() })?;
            let prep = PreparedWorld::new(world, model, cfg.mode)?;
            let mut out = Vec::with_capacity(cfg.tau_c.len() * cfg.tau_mi.len());
            for &tau_c in &cfg.tau_c {
                for &tau_mi in &cfg.tau_mi {
                    let set = RoundSettings {
                        tau_c,
                        tau_mi,
                        coder: cfg.coder,
                        selector: cfg.selector,
                        mode: cfg.mode,
                    };
                    out.push(run_round_prepared(&prep, model, &codes, &set)?);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let n_thr = cfg.tau_c.len() * cfg.tau_mi.len();
    let mut rounds = Vec::with_capacity(n_thr * cfg.seeds.len());
    let mut points = Vec::with_capacity(n_thr);
    for t in 0..n_thr {
        let group: Vec<&RoundResult> = per_seed.iter().map(|v| &v[t]).collect();
        let stat = |f: &dyn Fn(&RoundResult) -> f64| Stat::of(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
        points.push(SweepPoint {
            tau_c: group[0].tau_c,
            tau_mi: group[0].tau_mi,
            total_bits: stat(&|r| r.total_bits as f64),
            bpp: stat(&|r| r.bpp),
            bpp_payload: stat(&|r| r.bpp_payload),
            mean_iou: stat(&|r| r.mean_iou),
            abstract_fraction: stat(&|r| r.abstract_fraction()),
            distortion_nats: stat(&|r| r.distortion_nats),
            pareto: false,
        });
        rounds.extend(group.into_iter().cloned());
    }
    let flags = pareto_flags(&points.iter().map(|p| (p.bpp.mean, p.mean_iou.mean)).collect::<Vec<_>>());
    for (p, f) in points.iter_mut().zip(flags) {
        p.pareto = f;
    }
    Ok(SweepResult { rounds, points })
}

pub fn rounds_csv_header(k: usize) -> String {
    let mut h = String::from(
        "seed,tau_c,tau_mi,coder,selector,total_bits,payload_bits,abstract_bits,mask_bits,bpp,mean_iou",
    );
    for c in 0..k {
        h.push_str(&format!(",iou_class_{c}"));
    }
    h.push_str(",distortion_nats");
    h
}

/// One row per round, `nan` for classes absent from prediction and truth.
pub fn rounds_csv(rounds: &[RoundResult], k: usize) -> String {
    let mut out = rounds_csv_header(k);
    out.push('\n');
    for r in rounds {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.tau_c,
            r.tau_mi,
            r.coder.name(),
            r.selector.name(),
            r.total_bits,
            r.payload_bits,
            r.abstract_bits,
            r.mask_bits,
            r.bpp,
            r.mean_iou
        ));
        for c in 0..k {
            match r.per_class_iou.get(c).copied().flatten() {
                Some(v) => out.push_str(&format!(",{v}")),
                None => out.push_str(",nan"),
            }
        }
        out.push_str(&format!(",{}\n", r.distortion_nats));
    }
    out
}

pub const SUMMARY_CSV_HEADER: &str = "tau_c,tau_mi,coder,selector,n_seeds,total_bits_mean,total_bits_std,bpp_mean,bpp_std,bpp_payload_mean,bpp_payload_std,mean_iou_mean,mean_iou_std,abstract_fraction_mean,abstract_fraction_std,distortion_nats_mean,distortion_nats_std,pareto";

pub fn summary_csv(points: &[SweepPoint], coder: CoderVariant, selector: Selector, n_seeds: usize) -> String {
    let mut out = String::from(SUMMARY_CSV_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!("{},{},{},{},{}", p.tau_c, p.tau_mi, coder.name(), selector.name(), n_seeds));
        for s in [p.total_bits, p.bpp, p.bpp_payload, p.mean_iou, p.abstract_fraction, p.distortion_nats] {
            out.push_str(&format!(",{},{}", s.mean, s.std));
        }
        out.push_str(&format!(",{}\n", u8::from(p.pareto)));
    }
    out
}

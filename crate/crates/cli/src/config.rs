//! Run configuration in a line-oriented `[section] key = value` format.
//!
//! ```text
//! # comments start with '#'
//! [run]
//! seed = 7
//!
//! [world]
//! h = 32
//! w = 32
//! fov = rect 0 0 32 19      # repeat once per agent
//! fov = rect 0 13 32 32
//!
//! [sweep]
//! tau_c = 0.1, 0.3, 0.5
//! tau_mi = 0.25, inf
//! seeds = 0..20             # half-open range, or a comma list
//! ```
//!
//! Every key is optional. Unknown sections and keys, repeated keys other than
//! `fov`, and values that fail validation are rejected with the offending key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rdcomm_core::entropy_coder::CoderVariant;
use rdcomm_core::pipeline::{RoundMode, Selector, SweepConfig, TrainConfig};
use rdcomm_core::simworld::{Fov, WorldConfig};
use rdcomm_core::vq_codec::ProjectionKind;

use crate::error::{CliError, CliResult};

const KEYS: &[(&str, &[&str])] = &[
    ("run", &["seed"]),
    ("world", &["h", "w", "k", "noise", "density", "max_object_size", "fov"]),
    ("codebook", &["n_base", "n_res", "iters", "projection", "train_seeds"]),
    ("discriminator", &["hidden", "steps", "lr", "max_pairs", "tau_c_grid"]),
    ("sweep", &["tau_c", "tau_mi", "seeds", "coder", "selector", "mode", "model"]),
    ("verify", &["tables", "draws"]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub tables: usize,
    pub draws: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    /// Directory holding a trained model for `sweep`; trained in-process when absent.
    pub model: Option<PathBuf>,
    pub verify: VerifyConfig,
}

struct Entry {
    line: usize,
    value: String,
}

struct Raw {
    entries: BTreeMap<String, Vec<Entry>>,
}

impl Raw {
    fn parse(text: &str) -> CliResult<Self> {
        let mut entries: BTreeMap<String, Vec<Entry>> = BTreeMap::new();
        let mut section: Option<&str> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(name) = body.strip_prefix('[').and_then(|b| b.strip_suffix(']')) {
                let name = name.trim();
                section = Some(
                    KEYS.iter()
                        .find(|(s, _)| *s == name)
                        .map(|(s, _)| *s)
                        .ok_or_else(|| CliError::key(name, Some(line), "unknown section"))?,
                );
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                return Err(CliError::key(body, Some(line), "expected `key = value`"));
            };
            let key = key.trim();
            let sec = section.ok_or_else(|| CliError::key(key, Some(line), "key outside any section"))?;
            let full = format!("{sec}.{key}");
            let known = KEYS.iter().any(|(s, ks)| *s == sec && ks.contains(&key));
            if !known {
                return Err(CliError::key(full, Some(line), "unknown key"));
            }
            let slot = entries.entry(full.clone()).or_default();
            if !slot.is_empty() && full != "world.fov" {
                return Err(CliError::key(full, Some(line), "key given twice"));
            }
            slot.push(Entry {
                line,
                value: value.trim().to_string(),
            });
        }
        Ok(Self { entries })
    }

    fn one(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key).and_then(|v| v.first())
    }

    fn get<T>(&self, key: &str, default: T, parse: impl Fn(&str) -> Option<T>) -> CliResult<T> {
        match self.one(key) {
            None => Ok(default),
            Some(e) => parse(&e.value).ok_or_else(|| CliError::key(key, Some(e.line), format!("bad value `{}`", e.value))),
        }
    }
}

fn list<T>(s: &str, item: impl Fn(&str) -> Option<T>) -> Option<Vec<T>> {
    let out: Option<Vec<T>> = s.split(',').map(|t| item(t.trim())).collect();
    out.filter(|v| !v.is_empty())
}

fn real(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|x| !x.is_nan())
}

/// `a..b` (half-open) or a comma list of integers.
pub fn parse_seeds(s: &str) -> Option<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (a.trim().parse::<u64>().ok()?, b.trim().parse::<u64>().ok()?);
        return (a < b).then(|| (a..b).collect());
    }
    list(s, |t| t.parse().ok())
}

fn parse_mode(s: &str) -> Option<RoundMode> {
    let toks: Vec<&str> = s.split_whitespace().collect();
    match toks.as_slice() {
        ["all_pairs"] => Some(RoundMode::AllPairs),
        ["directed", s, r] | ["directed", s, r, "local"] => Some(RoundMode::Directed {
            sender: s.parse().ok()?,
            receiver: r.parse().ok()?,
            receiver_local: toks.len() == 4,
        }),
        ["directed", s, r, "blind"] => Some(RoundMode::Directed {
            sender: s.parse().ok()?,
            receiver: r.parse().ok()?,
            receiver_local: false,
        }),
        _ => None,
    }
}

fn parse_projection(s: &str) -> Option<ProjectionKind> {
    match s {
        "identity" => Some(ProjectionKind::Identity),
        "random_orthogonal" => Some(ProjectionKind::RandomOrthogonal),
        _ => None,
    }
}

impl RunConfig {
    /// Parses config text. Relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> CliResult<Self> {
        let raw = Raw::parse(text)?;
        let seed = raw.get("run.seed", 0, |s| s.parse().ok())?;

        let h = raw.get("world.h", 32, |s| s.parse().ok())?;
        let w = raw.get("world.w", 32, |s| s.parse().ok())?;
        let k = raw.get("world.k", 4, |s| s.parse().ok())?;
        let density = raw.get("world.density", 0.3, real)?;
        let mut world = WorldConfig::two_agent(h, w, k, 0.1, density, seed);
        world.max_object_size = raw.get("world.max_object_size", world.max_object_size, |s| s.parse().ok())?;
        if let Some(fovs) = raw.entries.get("world.fov") {
            world.fovs = fovs
                .iter()
                .map(|e| Fov::parse(&e.value).map_err(|err| CliError::key("world.fov", Some(e.line), err.to_string())))
                .collect::<CliResult<_>>()?;
        }
        let noise = raw.get("world.noise", vec![0.1], |s| list(s, real))?;
        world.noise = match noise.len() {
            1 => vec![noise[0]; k],
            n if n == k => noise,
            n => {
                let line = raw.one("world.noise").map(|e| e.line);
                return Err(CliError::key("world.noise", line, format!("{n} values for k = {k}")));
            }
        };
        world
            .validate()
            .map_err(|e| CliError::key("world", None, e.to_string()))?;

        let train_seeds = raw.get("codebook.train_seeds", (1000..1008).collect(), parse_seeds)?;
        let mut train = TrainConfig::new(world.clone(), train_seeds, seed);
        train.n_base = raw.get("codebook.n_base", 8, |s| s.parse().ok())?;
        train.n_res = raw.get("codebook.n_res", 16, |s| s.parse().ok())?;
        train.vq_iters = raw.get("codebook.iters", train.vq_iters, |s| s.parse().ok())?;
        train.projection = raw.get("codebook.projection", train.projection, parse_projection)?;
        train.disc_hidden = raw.get("discriminator.hidden", train.disc_hidden.clone(), |s| {
            list(s, |t| t.parse().ok().filter(|&n: &usize| n > 0))
        })?;
        train.disc_steps = raw.get("discriminator.steps", train.disc_steps, |s| s.parse().ok())?;
        train.disc_lr = raw.get("discriminator.lr", train.disc_lr, real)?;
        train.disc_max_pairs = raw.get("discriminator.max_pairs", train.disc_max_pairs, |s| s.parse().ok())?;
        train.tau_c_grid = raw.get("discriminator.tau_c_grid", train.tau_c_grid.clone(), |s| list(s, real))?;
        train
            .validate()
            .map_err(|e| CliError::key("discriminator", None, e.to_string()))?;
        if train.n_base == 0 || train.n_base > train.n_res {
            let line = raw.one("codebook.n_base").or(raw.one("codebook.n_res")).map(|e| e.line);
            return Err(CliError::key("codebook.n_base", line, "need 1 <= n_base <= n_res"));
        }

        let sweep = SweepConfig {
            world: world.clone(),
            tau_c: raw.get("sweep.tau_c", vec![0.5], |s| list(s, |t| real(t).filter(|x| x.is_finite())))?,
            tau_mi: raw.get("sweep.tau_mi", vec![f64::INFINITY], |s| list(s, real))?,
            seeds: raw.get("sweep.seeds", (0..20).collect(), parse_seeds)?,
            coder: raw.get("sweep.coder", CoderVariant::TaskEntropy, CoderVariant::parse)?,
            selector: raw.get("sweep.selector", Selector::Mi, Selector::parse)?,
            mode: raw.get("sweep.mode", RoundMode::AllPairs, parse_mode)?,
        };
        sweep
            .validate()
            .map_err(|e| CliError::key("sweep", None, e.to_string()))?;
        let model = match raw.one("sweep.model") {
            None => None,
            Some(e) => {
                let p = base_dir.join(&e.value);
                if !p.is_dir() {
                    return Err(CliError::key("sweep.model", Some(e.line), format!("no model directory at {}", p.display())));
                }
                Some(p)
            }
        };

        let verify = VerifyConfig {
            tables: raw.get("verify.tables", 50, |s| s.parse().ok().filter(|&n: &usize| n > 0))?,
            draws: raw.get("verify.draws", 1_000_000, |s| s.parse().ok().filter(|&n: &usize| n > 0))?,
        };
        Ok(Self {
            seed,
            world,
            train,
            sweep,
            model,
            verify,
        })
    }

    /// Replaces the master seed everywhere it was used as a default.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.world.seed = seed;
        self.train.seed = seed;
        self.train.world.seed = seed;
        self
    }
}

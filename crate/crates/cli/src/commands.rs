//! Subcommand implementations. Each writes its artifacts plus `manifest.txt`
//! into the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rdcomm_core::mi_estimator::Discriminator;
use rdcomm_core::pipeline::{self, PreparedWorld, RoundResult, TrainedModel};
use rdcomm_core::simworld::{self, WorldConfig};
use rdcomm_core::vq_codec::LayeredCodebook;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::verify;

pub const BITSTREAM_MAGIC: &[u8; 4] = b"RDBS";

/// Where the effective configuration came from, for the manifest.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub command: &'static str,
    pub config_sha256: String,
    pub seed: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Output {
    dir: PathBuf,
    artifacts: Vec<(String, String)>,
}

impl Output {
    fn create(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.artifacts.push((name.to_string(), sha256_hex(bytes)));
        Ok(())
    }

    fn finish(mut self, prov: &Provenance, extra: &[(&str, String)]) -> CliResult<()> {
        let mut m = String::from("rdcomm-manifest 1\n");
        let _ = writeln!(m, "command = {}", prov.command);
        let _ = writeln!(m, "tool_version = {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(m, "core_version = {}", rdcomm_core::VERSION);
        let _ = writeln!(m, "config_sha256 = {}", prov.config_sha256);
        let _ = writeln!(m, "seed = {}", prov.seed);
        for (k, v) in extra {
            let _ = writeln!(m, "{k} = {v}");
        }
        self.artifacts.sort();
        for (name, hash) in &self.artifacts {
            let _ = writeln!(m, "artifact {name} sha256={hash}");
        }
        fs::write(self.dir.join("manifest.txt"), m)?;
        Ok(())
    }
}

/// Writes the generated world: truth labels and one observation per agent.
pub fn gen_world(cfg: &RunConfig, out: &Path, prov: &Provenance) -> CliResult<()> {
    let world = simworld::generate(&cfg.world)?;
    let mut o = Output::create(out)?;
    o.write("truth.txt", simworld::labels_to_text(&world.truth).as_bytes())?;
    for (a, obs) in world.observations.iter().enumerate() {
        o.write(&format!("obs_{a}.txt"), simworld::grid_to_text(obs).as_bytes())?;
    }
    let mut fovs = String::new();
    for f in &cfg.world.fovs {
        let _ = writeln!(fovs, "{f}");
    }
    o.write("fovs.txt", fovs.as_bytes())?;
    o.finish(prov, &[("agents", world.observations.len().to_string())])
}

fn write_model(o: &mut Output, model: &TrainedModel, train_seeds: &[u64]) -> CliResult<()> {
    o.write("codebook.txt", model.codebook.to_text().as_bytes())?;
    o.write("discriminator.txt", model.discriminator.to_text().as_bytes())?;
    let mut loss = String::from("step,loss\n");
    for (i, l) in model.disc_loss.iter().enumerate() {
        let _ = writeln!(loss, "{i},{l}");
    }
    o.write("training.csv", loss.as_bytes())?;
    let mut draws = String::from("scene_seed,tau_c\n");
    for (s, t) in train_seeds.iter().zip(&model.tau_c_draws) {
        let _ = writeln!(draws, "{s},{t}");
    }
    o.write("tau_draws.csv", draws.as_bytes())
}

fn csv_column(text: &str, file: &str, col: usize) -> CliResult<Vec<f64>> {
    text.lines()
        .skip(1)
        .map(|l| {
            l.split(',')
                .nth(col)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| CliError::Runtime(format!("{file}: bad row `{l}`")))
        })
        .collect()
}

/// Loads a model directory written by `train`.
pub fn load_model(dir: &Path) -> CliResult<TrainedModel> {
    let read = |name: &str| {
        fs::read_to_string(dir.join(name)).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.join(name).display())))
    };
    Ok(TrainedModel {
        codebook: LayeredCodebook::from_text(&read("codebook.txt")?)?,
        discriminator: Discriminator::from_text(&read("discriminator.txt")?)?,
        tau_c_draws: csv_column(&read("tau_draws.csv")?, "tau_draws.csv", 1)?,
        disc_loss: csv_column(&read("training.csv")?, "training.csv", 1)?,
    })
}

pub fn train(cfg: &RunConfig, out: &Path, prov: &Provenance) -> CliResult<()> {
    let model = pipeline::train_all(&cfg.train)?;
    let mut o = Output::create(out)?;
    write_model(&mut o, &model, &cfg.train.train_seeds)?;
    o.finish(
        prov,
        &[
            ("n_base", cfg.train.n_base.to_string()),
            ("n_res", cfg.train.n_res.to_string()),
            ("train_scenes", cfg.train.train_seeds.len().to_string()),
        ],
    )
}

/// Length-prefixed message records, little endian:
/// `RDBS`, version byte, record count (u32), then per record
/// seed (u64), tau_c (f64), tau_mi (f64), message index (u32), length (u32), bytes.
pub fn bitstreams_bin(rounds: &[RoundResult]) -> Vec<u8> {
    let mut out = BITSTREAM_MAGIC.to_vec();
    out.push(1);
    let n: usize = rounds.iter().map(|r| r.bitstreams.len()).sum();
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for r in rounds {
        for (i, b) in r.bitstreams.iter().enumerate() {
            out.extend_from_slice(&r.seed.to_le_bytes());
            out.extend_from_slice(&r.tau_c.to_le_bytes());
            out.extend_from_slice(&r.tau_mi.to_le_bytes());
            out.extend_from_slice(&(i as u32).to_le_bytes());
            out.extend_from_slice(&(b.len() as u32).to_le_bytes());
            out.extend_from_slice(b);
        }
    }
    out
}

pub fn sweep(cfg: &RunConfig, out: &Path, prov: &Provenance) -> CliResult<()> {
    let mut o = Output::create(out)?;
    let model = match &cfg.model {
        Some(dir) => load_model(dir)?,
        None => {
            let m = pipeline::train_all(&cfg.train)?;
            write_model(&mut o, &m, &cfg.train.train_seeds)?;
            m
        }
    };
    let sc = &cfg.sweep;
    let res = pipeline::run_sweep(sc, &model)?;
    let k = sc.world.k;
    o.write("rounds.csv", pipeline::rounds_csv(&res.rounds, k).as_bytes())?;
    o.write(
        "summary.csv",
        pipeline::summary_csv(&res.points, sc.coder, sc.selector, sc.seeds.len()).as_bytes(),
    )?;
    o.write("bitstreams.bin", &bitstreams_bin(&res.rounds))?;
    let mut base = String::from("seed,no_collab_iou,full_share_iou,uncompressed_bits\n");
    for &seed in &sc.seeds {
        let world = simworld::generate(&WorldConfig { seed, ..sc.world.clone() })?;
        let b = PreparedWorld::new(world, &model, sc.mode)?.baselines(sc.mode)?;
        let _ = writeln!(base, "{seed},{},{},{}", b.no_collab.mean, b.full_share.mean, b.uncompressed_bits);
    }
    o.write("baselines.csv", base.as_bytes())?;
    o.finish(
        prov,
        &[
            ("coder", sc.coder.name().to_string()),
            ("selector", sc.selector.name().to_string()),
            ("rounds", res.rounds.len().to_string()),
        ],
    )
}

/// Runs the theory suites; fails with a check error if any check fails.
pub fn verify_theory(cfg: &RunConfig, out: &Path, prov: &Provenance) -> CliResult<Vec<verify::Check>> {
    let checks = verify::run_all(&cfg.verify, cfg.seed)?;
    let mut o = Output::create(out)?;
    o.write("verify_report.csv", verify::report_csv(&checks).as_bytes())?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
    o.finish(
        prov,
        &[
            ("checks", checks.len().to_string()),
            ("failed", failed.len().to_string()),
        ],
    )?;
    if failed.is_empty() {
        Ok(checks)
    } else {
        Err(CliError::Check(format!("failed checks: {}", failed.join(" "))))
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| CliError::Runtime(format!("{}: empty file", path.display())))?
            .split(',')
            .map(str::to_string)
            .collect();
        let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        if rows.iter().any(|r| r.len() != header.len()) {
            return Err(CliError::Runtime(format!("{}: ragged rows", path.display())));
        }
        Ok(Self { header, rows })
    }

    fn col(&self, name: &str) -> CliResult<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Runtime(format!("missing column {name}")))
    }

    fn num(&self, row: &[String], col: usize) -> CliResult<f64> {
        row[col]
            .parse()
            .map_err(|_| CliError::Runtime(format!("non-numeric value `{}`", row[col])))
    }
}

pub const RATE_ACCURACY_HEADER: &str = "seed,tau_c,tau_mi,coder,selector,bpp,bpp_payload,mean_iou,abstract_fraction";
pub const PARETO_HEADER: &str = "tau_c,tau_mi,bpp_mean,bpp_std,bpp_payload_mean,mean_iou_mean,mean_iou_std";

/// Plot-ready curves from a sweep directory: one row per round, plus the
/// Pareto front of the per-threshold means sorted by rate.
pub fn export(results: &Path, out: &Path, prov: &Provenance) -> CliResult<()> {
    let rounds = Table::read(&results.join("rounds.csv"))?;
    let summary = Table::read(&results.join("summary.csv"))?;
    let mut rate = format!("{RATE_ACCURACY_HEADER}\n");
    let c = |n: &str| rounds.col(n);
    let (seed, tc, tm, coder, sel) = (c("seed")?, c("tau_c")?, c("tau_mi")?, c("coder")?, c("selector")?);
    let (total, payload, abs, bpp, iou) = (c("total_bits")?, c("payload_bits")?, c("abstract_bits")?, c("bpp")?, c("mean_iou")?);
    for r in &rounds.rows {
        let t = rounds.num(r, total)?;
        let sent = rounds.num(r, payload)? + rounds.num(r, abs)?;
        let b = rounds.num(r, bpp)?;
        let (bpp_payload, frac) = if t > 0.0 { (b * sent / t, rounds.num(r, abs)? / t) } else { (0.0, 0.0) };
        let _ = writeln!(
            rate,
            "{},{},{},{},{},{},{},{},{}",
            r[seed], r[tc], r[tm], r[coder], r[sel], r[bpp], bpp_payload, r[iou], frac
        );
    }
    let s = |n: &str| summary.col(n);
    let (stc, stm, bm, bs, bpm, im, is, par) = (
        s("tau_c")?,
        s("tau_mi")?,
        s("bpp_mean")?,
        s("bpp_std")?,
        s("bpp_payload_mean")?,
        s("mean_iou_mean")?,
        s("mean_iou_std")?,
        s("pareto")?,
    );
    let mut front: Vec<&Vec<String>> = summary.rows.iter().filter(|r| r[par] == "1").collect();
    let mut keyed = Vec::with_capacity(front.len());
    for r in front.drain(..) {
        keyed.push((summary.num(r, bm)?, r));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut pareto = format!("{PARETO_HEADER}\n");
    for (_, r) in keyed {
        let _ = writeln!(pareto, "{},{},{},{},{},{},{}", r[stc], r[stm], r[bm], r[bs], r[bpm], r[im], r[is]);
    }
    let mut o = Output::create(out)?;
    o.write("rate_accuracy.csv", rate.as_bytes())?;
    o.write("pareto_front.csv", pareto.as_bytes())?;
    o.finish(prov, &[("rows", rounds.rows.len().to_string())])
}

//! Theory self-checks run by `rdcomm verify-theory`.

use std::f64::consts::{FRAC_2_PI, LN_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdcomm_core::bayes_risk::{
    self, monte_carlo, CellPosterior, RegressionKey, RiskParams,
};
use rdcomm_core::infotheory::entropy_nats;
use rdcomm_core::rd_oracle;
use rdcomm_core::{Axis, JointTable, Result, Units};

use crate::config::VerifyConfig;

/// One check: passes when `error <= tolerance`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: &'static str,
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }

    pub fn margin(&self) -> f64 {
        self.tolerance - self.error
    }
}

pub const REPORT_HEADER: &str = "suite,check,status,error,tolerance,margin";

pub fn report_csv(checks: &[Check]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for c in checks {
        out.push_str(&format!(
            "{},{},{},{:e},{:e},{:e}\n",
            c.suite,
            c.name,
            if c.passed() { "pass" } else { "fail" },
            c.error,
            c.tolerance,
            c.margin()
        ));
    }
    out
}

fn random_source(rng: &mut ChaCha8Rng) -> Result<JointTable> {
    let axes = vec![
        Axis::new("Y", rng.random_range(2..=4)),
        Axis::new("X_s", rng.random_range(2..=4)),
        Axis::new("X_r", rng.random_range(2..=4)),
    ];
    JointTable::random(axes, rng)
}

fn random_channel(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            let r: Vec<f64> = (0..cols).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = r.iter().sum();
            r.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

/// Entropy identities over random three-way tables.
pub fn infotheory_suite(cfg: &VerifyConfig, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut chain, mut decomp, mut dpi, mut units) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..cfg.tables {
        let t = random_source(&mut rng)?;
        let nats = |q: rdcomm_core::InfoQuantity| q.nats();
        let h_all = nats(t.joint_entropy(&["Y", "X_s", "X_r"], Units::Nats)?);
        let parts = nats(t.entropy("X_r", Units::Nats)?)
            + nats(t.conditional_entropy("X_s", &["X_r"], Units::Nats)?)
            + nats(t.conditional_entropy("Y", &["X_s", "X_r"], Units::Nats)?);
        chain = chain.max((h_all - parts).abs());

        let cmi = t.conditional_mi("Y", "X_s", &["X_r"], Units::Nats)?.value;
        let rhs = t.entropy("X_s", Units::Nats)?.value
            - t.conditional_entropy("X_s", &["Y"], Units::Nats)?.value
            - t.interaction_information("Y", "X_s", "X_r", Units::Nats)?.value;
        decomp = decomp.max((cmi - rhs).abs());

        let xs = t.axis_size("X_s")?;
        let z = rng.random_range(1..=4);
        let tz = t.with_channel("X_s", "Z", &random_channel(xs, z, &mut rng))?;
        let excess = tz.mutual_information("Y", "Z", Units::Nats)?.value
            - tz.mutual_information("Y", "X_s", Units::Nats)?.value;
        dpi = dpi.max(excess);

        let bits = t.mutual_information("Y", "X_s", Units::Bits)?.value;
        let n = t.mutual_information("Y", "X_s", Units::Nats)?.value;
        units = units.max((bits * LN_2 - n).abs());
    }
    Ok(vec![
        Check { suite: "infotheory", name: "chain_rule", error: chain, tolerance: 1e-10 },
        Check { suite: "infotheory", name: "decomposition_identity", error: decomp, tolerance: 1e-10 },
        Check { suite: "infotheory", name: "data_processing", error: dpi.max(0.0), tolerance: 1e-12 },
        Check { suite: "infotheory", name: "unit_conversion", error: units, tolerance: 1e-12 },
    ])
}

fn rel(est: f64, truth: f64) -> f64 {
    ((est - truth) / truth).abs()
}

/// Closed-form risks against sampling estimates.
pub fn bayes_risk_suite(cfg: &VerifyConfig, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb4e5);
    let t = JointTable::random(vec![Axis::new("Y", 4), Axis::new("X", 3)], &mut rng)?;
    let ce = monte_carlo::ce_risk(&t, "Y", &["X"], cfg.draws, &mut rng)?;
    let ce_truth = bayes_risk::bayes_risk_ce(&t, "Y", &["X"])?;

    let sigma = 1.7;
    let g = monte_carlo::l1_gaussian(sigma, cfg.draws, &mut rng);
    let b = 0.8;
    let l = monte_carlo::l1_laplace(b, cfg.draws, &mut rng);
    let from_entropy = bayes_risk::laplace_risk_from_entropy(bayes_risk::laplace_entropy(b));

    let cells = vec![
        CellPosterior::classes(vec![0.7, 0.2, 0.1]).with_sigma(0.5),
        CellPosterior::classes(vec![0.25, 0.25, 0.5]).with_sigma(1.5),
    ];
    let params = RiskParams::centerpoint([1.0, 0.5, 0.25], 3.0);
    let composite = bayes_risk::bayes_risk_centerpoint(&cells, &params)?;
    let mut assembled: f64 = cells.iter().map(|c| entropy_nats(&c.class_pmf)).sum();
    let mut reg = 0.0;
    for key in RegressionKey::ALL {
        let mean_sigma = cells.iter().map(|c| c.reg_sigma[&key]).sum::<f64>() / cells.len() as f64;
        reg += params.lambda(key) * bayes_risk::bayes_risk_l1_gaussian(mean_sigma)?;
    }
    assembled += params.n_obj_mean * reg;

    Ok(vec![
        Check { suite: "bayes_risk", name: "ce_vs_conditional_entropy", error: rel(ce.mean, ce_truth), tolerance: 0.01 },
        Check { suite: "bayes_risk", name: "gaussian_l1", error: rel(g.mean, FRAC_2_PI.sqrt() * sigma), tolerance: 0.01 },
        Check { suite: "bayes_risk", name: "laplace_l1", error: rel(l.mean, bayes_risk::bayes_risk_l1_laplace(b)?), tolerance: 0.01 },
        Check { suite: "bayes_risk", name: "laplace_entropy_form", error: rel(from_entropy, b), tolerance: 1e-12 },
        Check { suite: "bayes_risk", name: "centerpoint_assembly", error: (composite - assembled).abs(), tolerance: 0.0 },
    ])
}

/// Minimal-rate bound against exhaustive encoder enumeration.
pub fn rd_oracle_suite(cfg: &VerifyConfig, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0dd);
    let mut worst = 0.0f64;
    for _ in 0..cfg.tables {
        let src = random_source(&mut rng)?;
        let xs = src.axis_size("X_s")?;
        for z in 1..=xs.min(4) {
            for p in rd_oracle::enumerate_frontier(&src, z)? {
                worst = worst.max(p.bound_bits - p.rate_bits);
            }
        }
    }

    let src = rd_oracle::constructed_source(&[0.5, 0.3, 0.2], &[0.6, 0.4], &[0.7, 0.3])?;
    let points = rd_oracle::enumerate_frontier(&src, 3)?;
    let best = rd_oracle::best_encoder(&points, 1e-12)
        .ok_or(rdcomm_core::Error::Empty("zero-distortion encoders"))?;
    let bound = rd_oracle::theoretical_bound(&src, 0.0)?;
    Ok(vec![
        Check { suite: "rd_oracle", name: "bound_soundness", error: worst.max(0.0), tolerance: 1e-9 },
        Check { suite: "rd_oracle", name: "bound_tightness", error: (best.rate_bits - bound).abs(), tolerance: 1e-9 },
        Check { suite: "rd_oracle", name: "pragmatic_relevant", error: best.cond_h_z_given_y.abs(), tolerance: 1e-9 },
        Check { suite: "rd_oracle", name: "redundancy_less", error: best.mi_z_xr.abs(), tolerance: 1e-9 },
    ])
}

pub fn run_all(cfg: &VerifyConfig, seed: u64) -> Result<Vec<Check>> {
    let mut checks = infotheory_suite(cfg, seed)?;
    checks.extend(bayes_risk_suite(cfg, seed)?);
    checks.extend(rd_oracle_suite(cfg, seed)?);
    Ok(checks)
}

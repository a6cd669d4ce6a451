//! Bayes risks of the task losses and the pragmatic distortion built from them.
//!
//! All risks are in nats. Closed forms:
//!
//! * cross entropy: `H(target | given)`
//! * L1 under a Gaussian posterior: `sqrt(2/pi) * sigma`
//! * L1 under a Laplace posterior: `b`, equivalently `exp(H - 1) / 2` with `H = ln(2b) + 1`
//! * CenterPoint: `sum_cells H(class) + N_obj * sqrt(2/pi) * (l2 s_loc + l3 s_size + l4 s_ori)`
//!
//! The [`monte_carlo`] submodule estimates the same quantities by sampling and
//! is used as an independent check.

use std::collections::BTreeMap;
use std::f64::consts::{E, FRAC_2_PI};

use crate::error::{Error, Result};
use crate::grid::FeatureGrid;
use crate::infotheory::{entropy_nats, JointTable, Units};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossFamily {
    CrossEntropy,
    L1Gaussian,
    L1Laplace,
    CenterPoint,
}

/// Regression targets of a center-based detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RegressionKey {
    Loc,
    Size,
    Ori,
}

impl RegressionKey {
    pub const ALL: [RegressionKey; 3] = [RegressionKey::Loc, RegressionKey::Size, RegressionKey::Ori];

    /// Axis name carrying this regression target in a joint table.
    pub fn axis_name(self) -> &'static str {
        match self {
            RegressionKey::Loc => "Y_loc",
            RegressionKey::Size => "Y_size",
            RegressionKey::Ori => "Y_ori",
        }
    }

    fn lambda_index(self) -> usize {
        match self {
            RegressionKey::Loc => 0,
            RegressionKey::Size => 1,
            RegressionKey::Ori => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskParams {
    pub loss_family: LossFamily,
    /// Weights for (loc, size, ori); the classification weight is fixed to 1.
    pub lambdas: [f64; 3],
    pub n_obj_mean: f64,
    pub regression_keys: Vec<RegressionKey>,
}

impl RiskParams {
    pub fn segmentation() -> Self {
        Self {
            loss_family: LossFamily::CrossEntropy,
            lambdas: [0.0; 3],
            n_obj_mean: 0.0,
            regression_keys: Vec::new(),
        }
    }

    pub fn centerpoint(lambdas: [f64; 3], n_obj_mean: f64) -> Self {
        Self {
            loss_family: LossFamily::CenterPoint,
            lambdas,
            n_obj_mean,
            regression_keys: RegressionKey::ALL.to_vec(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidArgument(format!("lambdas {:?}", self.lambdas)));
        }
        if !self.n_obj_mean.is_finite() || self.n_obj_mean < 0.0 {
            return Err(Error::InvalidArgument(format!("n_obj_mean {}", self.n_obj_mean)));
        }
        Ok(())
    }

    pub fn lambda(&self, key: RegressionKey) -> f64 {
        self.lambdas[key.lambda_index()]
    }
}

/// Per-cell posterior summary used by the CenterPoint risk.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CellPosterior {
    pub class_pmf: Vec<f64>,
    pub reg_entropy: BTreeMap<RegressionKey, f64>,
    pub reg_sigma: BTreeMap<RegressionKey, f64>,
    pub reg_b: BTreeMap<RegressionKey, f64>,
}

impl CellPosterior {
    pub fn classes(class_pmf: Vec<f64>) -> Self {
        Self {
            class_pmf,
            ..Default::default()
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        for k in RegressionKey::ALL {
            self.reg_sigma.insert(k, sigma);
        }
        self
    }
}

/// Cross-entropy Bayes risk, `H(target | given)` in nats.
pub fn bayes_risk_ce(table: &JointTable, target: &str, given: &[&str]) -> Result<f64> {
    Ok(table.conditional_entropy(target, given, Units::Nats)?.value)
}

/// L1 risk of the posterior median under a Gaussian posterior.
pub fn bayes_risk_l1_gaussian(sigma: f64) -> Result<f64> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    Ok(FRAC_2_PI.sqrt() * sigma)
}

/// L1 risk of the posterior median under a Laplace posterior with scale `b`.
pub fn bayes_risk_l1_laplace(b: f64) -> Result<f64> {
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::InvalidArgument(format!("laplace scale must be > 0, got {b}")));
    }
    Ok(b)
}

/// Differential entropy of Laplace(0, b) in nats.
pub fn laplace_entropy(b: f64) -> f64 {
    (2.0 * b).ln() + 1.0
}

/// The Laplace L1 risk expressed through the posterior entropy: `exp(H - 1) / 2`.
pub fn laplace_risk_from_entropy(h_nats: f64) -> f64 {
    0.5 * (h_nats - 1.0).exp()
}

/// CenterPoint composite risk over a set of cells.
///
/// The per-key sigma entering the regression term is the mean over cells.
pub fn bayes_risk_centerpoint(cells: &[CellPosterior], params: &RiskParams) -> Result<f64> {
    if params.loss_family != LossFamily::CenterPoint {
        return Err(Error::InvalidArgument("risk params are not CenterPoint".into()));
    }
    params.validate()?;
    if cells.is_empty() {
        return Err(Error::Empty("cell list"));
    }
    let mut class_risk = 0.0;
    for cell in cells {
        let total: f64 = cell.class_pmf.iter().sum();
        if cell.class_pmf.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "class pmf not normalized (sum {total})"
            )));
        }
        class_risk += entropy_nats(&cell.class_pmf);
    }
    let mut reg = 0.0;
    for &key in &params.regression_keys {
        let mut sum = 0.0;
        for cell in cells {
            let s = *cell.reg_sigma.get(&key).ok_or_else(|| {
                Error::InvalidArgument(format!("cell is missing regression key {key:?}"))
            })?;
            sum += s;
        }
        reg += params.lambda(key) * bayes_risk_l1_gaussian(sum / cells.len() as f64)?;
    }
    Ok(class_risk + params.n_obj_mean * reg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Segmentation,
    Detection,
}

/// Increase in Bayes risk for `Y` when the receiver sees `Z` instead of `X_s`,
/// conditioned on its own `X_r`. Axes `Y`, `X_s`, `X_r`, `Z` must be present;
/// detection additionally reads the `Y_loc`/`Y_size`/`Y_ori` axes named by
/// `params.regression_keys`.
pub fn pragmatic_distortion(table: &JointTable, task: Task, params: &RiskParams) -> Result<f64> {
    for axis in ["Y", "X_s", "X_r", "Z"] {
        table.axis_index(axis)?;
    }
    let with_z = table.conditional_entropy("Y", &["Z", "X_r"], Units::Nats)?.value;
    let with_xs = table.conditional_entropy("Y", &["X_s", "X_r"], Units::Nats)?.value;
    let mut d = with_z - with_xs;
    if task == Task::Detection {
        params.validate()?;
        let mut reg = 0.0;
        for &key in &params.regression_keys {
            let axis = key.axis_name();
            let hz = table.conditional_entropy(axis, &["Z", "X_r"], Units::Nats)?.value;
            let hx = table.conditional_entropy(axis, &["X_s", "X_r"], Units::Nats)?.value;
            reg += params.lambda(key) * ((hz - 1.0).exp() - (hx - 1.0).exp());
        }
        d += 0.5 * reg;
    }
    Ok(d)
}

/// Mean pragmatic distortion over independent per-cell tables.
pub fn mean_pragmatic_distortion(cells: &[JointTable], task: Task, params: &RiskParams) -> Result<f64> {
    if cells.is_empty() {
        return Err(Error::Empty("cell tables"));
    }
    let mut total = 0.0;
    for t in cells {
        total += pragmatic_distortion(t, task, params)?;
    }
    Ok(total / cells.len() as f64)
}

/// Mean squared error between two feature grids.
pub fn reconstruction_distortion(a: &FeatureGrid, b: &FeatureGrid) -> Result<f64> {
    a.check_same_shape(b)?;
    let n = a.as_slice().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sse: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sse / n as f64)
}

/// `exp(h1 - 1) - exp(h2 - 1)`; bounded below by `(h1 - h2) / e` when `h1 >= h2 >= 0`.
pub fn exp_entropy_gap(h1: f64, h2: f64) -> f64 {
    (h1 - 1.0).exp() - (h2 - 1.0).exp()
}

/// `(h1 - h2) / e`, the first-order lower bound of [`exp_entropy_gap`].
pub fn exp_entropy_gap_linear(h1: f64, h2: f64) -> f64 {
    (h1 - h2) / E
}

/// Sampling estimators of the same risks, with standard errors.
pub mod monte_carlo {
    use rand::Rng;
    use rand_distr::{Distribution, Exp1, StandardNormal};

    use crate::error::{Error, Result};
    use crate::infotheory::JointTable;

    /// Sample mean and its standard error.
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Estimate {
        pub mean: f64,
        pub std_err: f64,
    }

    struct Welford {
        n: u64,
        mean: f64,
        m2: f64,
    }

    impl Welford {
        fn new() -> Self {
            Self { n: 0, mean: 0.0, m2: 0.0 }
        }

        fn push(&mut self, x: f64) {
            self.n += 1;
            let d = x - self.mean;
            self.mean += d / self.n as f64;
            self.m2 += d * (x - self.mean);
        }

        fn finish(self) -> Estimate {
            let var = if self.n > 1 { self.m2 / (self.n - 1) as f64 } else { 0.0 };
            Estimate {
                mean: self.mean,
                std_err: (var / self.n.max(1) as f64).sqrt(),
            }
        }
    }

    /// Average log loss of the exact posterior predictor `p(target | given)`.
    pub fn ce_risk<R: Rng + ?Sized>(
        table: &JointTable,
        target: &str,
        given: &[&str],
        draws: usize,
        rng: &mut R,
    ) -> Result<Estimate> {
        if draws == 0 {
            return Err(Error::Empty("draw count"));
        }
        let ti = table.axis_index(target)?;
        let gi: Vec<usize> = given.iter().map(|g| table.axis_index(g)).collect::<Result<_>>()?;
        let mut names = vec![target];
        names.extend_from_slice(given);
        let joint = table.marginal(&names)?;
        let cond = table.marginal(given)?;
        let sub_size: usize = gi.iter().map(|&i| table.axes()[i].size).product();
        let mut acc = Welford::new();
        for s in table.sample(draws, rng) {
            let mut g = 0;
            for &i in &gi {
                g = g * table.axes()[i].size + s[i];
            }
            let p_joint = joint[s[ti] * sub_size + g];
            let p_given = if given.is_empty() { 1.0 } else { cond[g] };
            acc.push(-(p_joint / p_given).ln());
        }
        Ok(acc.finish())
    }

    /// `E|Y - mu|` for `Y ~ N(mu, sigma^2)` predicted by its median.
    pub fn l1_gaussian<R: Rng + ?Sized>(sigma: f64, draws: usize, rng: &mut R) -> Estimate {
        let mut acc = Welford::new();
        for _ in 0..draws {
            let z: f64 = StandardNormal.sample(rng);
            acc.push((sigma * z).abs());
        }
        acc.finish()
    }

    /// `E|Y - mu|` for `Y ~ Laplace(mu, b)`, sampled as a difference of exponentials.
    pub fn l1_laplace<R: Rng + ?Sized>(b: f64, draws: usize, rng: &mut R) -> Estimate {
        let mut acc = Welford::new();
        for _ in 0..draws {
            let e1: f64 = Exp1.sample(rng);
            let e2: f64 = Exp1.sample(rng);
            acc.push((b * (e1 - e2)).abs());
        }
        acc.finish()
    }

    /// Mean-absolute-deviation risk of a constant predictor `c` under `N(0, sigma^2)`;
    /// used to confirm the median is the minimizer.
    pub fn l1_gaussian_at<R: Rng + ?Sized>(sigma: f64, c: f64, draws: usize, rng: &mut R) -> Estimate {
        let mut acc = Welford::new();
        for _ in 0..draws {
            let z: f64 = StandardNormal.sample(rng);
            acc.push((sigma * z - c).abs());
        }
        acc.finish()
    }
}

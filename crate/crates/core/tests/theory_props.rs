//! Information identities, distortion properties and bound soundness on
//! random joint tables, checked against brute-force sums in this file.

use std::collections::HashMap;
use std::f64::consts::LN_2;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdcomm_core::bayes_risk::{exp_entropy_gap, exp_entropy_gap_linear, pragmatic_distortion, RiskParams, Task};
use rdcomm_core::rd_oracle::{enumerate_frontier, markov_residuals, theoretical_bound, EncoderSpec};
use rdcomm_core::{Axis, JointTable, Units};

fn table(seed: u64, sizes: &[(&str, usize)]) -> JointTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    JointTable::random(sizes.iter().map(|&(n, s)| Axis::new(n, s)).collect(), &mut rng).unwrap()
}

fn source(seed: u64, y: usize, xs: usize, xr: usize) -> JointTable {
    table(seed, &[("Y", y), ("X_s", xs), ("X_r", xr)])
}

/// Entropy of the marginal over `names`, summed atom by atom.
fn brute_h(t: &JointTable, names: &[&str]) -> f64 {
    let idx: Vec<usize> = names.iter().map(|n| t.axis_index(n).unwrap()).collect();
    let mut m: HashMap<Vec<usize>, f64> = HashMap::new();
    for (flat, &p) in t.pmf().iter().enumerate() {
        let sym = t.symbols_of(flat);
        *m.entry(idx.iter().map(|&i| sym[i]).collect()).or_default() += p;
    }
    m.values().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

fn brute_cmi(t: &JointTable, a: &str, b: &str, c: &[&str]) -> f64 {
    let with = |extra: &[&str]| {
        let mut v: Vec<&str> = c.to_vec();
        v.extend_from_slice(extra);
        brute_h(t, &v)
    };
    with(&[a]) + with(&[b]) - with(&[a, b]) - with(&[])
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

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn chain_rule(seed in any::<u64>(), a in 1usize..5, b in 1usize..5) {
        let t = table(seed, &[("A", a), ("B", b)]);
        let hab = t.joint_entropy(&["A", "B"], Units::Nats).unwrap().value;
        let ha = t.entropy("A", Units::Nats).unwrap().value;
        let hba = t.conditional_entropy("B", &["A"], Units::Nats).unwrap().value;
        prop_assert!((hab - ha - hba).abs() < 1e-10);
        prop_assert!((hab - brute_h(&t, &["A", "B"])).abs() < 1e-10);
    }

    #[test]
    fn decomposition_identity(seed in any::<u64>(), y in 1usize..5, xs in 1usize..5, xr in 1usize..5) {
        let t = source(seed, y, xs, xr);
        let cmi = t.conditional_mi("Y", "X_s", &["X_r"], Units::Nats).unwrap().value;
        let rhs = t.entropy("X_s", Units::Nats).unwrap().value
            - t.conditional_entropy("X_s", &["Y"], Units::Nats).unwrap().value
            - t.interaction_information("Y", "X_s", "X_r", Units::Nats).unwrap().value;
        prop_assert!((cmi - rhs).abs() < 1e-10);
        prop_assert!((cmi - brute_cmi(&t, "Y", "X_s", &["X_r"])).abs() < 1e-10);
    }

    #[test]
    fn data_processing(seed in any::<u64>(), z in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = source(seed, 3, 4, 2);
        let t = t.with_channel("X_s", "Z", &random_channel(4, z, &mut rng)).unwrap();
        let iyz = t.mutual_information("Y", "Z", Units::Nats).unwrap().value;
        let iyx = t.mutual_information("Y", "X_s", Units::Nats).unwrap().value;
        prop_assert!(iyz <= iyx + 1e-10);
    }

    #[test]
    fn unit_conversion(seed in any::<u64>(), n in 1usize..9) {
        let t = table(seed, &[("A", n)]);
        let bits = t.entropy("A", Units::Bits).unwrap();
        let nats = t.entropy("A", Units::Nats).unwrap();
        prop_assert!((bits.value * LN_2 - nats.value).abs() < 1e-12);
        prop_assert!((bits.nats() - nats.value).abs() < 1e-12);
    }

    #[test]
    fn distortion_nonnegative_and_identity(seed in any::<u64>(), z in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let t = source(seed, 3, 4, 3)
            .with_channel("X_s", "Z", &random_channel(4, z, &mut rng))
            .unwrap();
        let d = pragmatic_distortion(&t, Task::Segmentation, &RiskParams::segmentation()).unwrap();
        prop_assert!(d >= -1e-10);
        let identity = brute_cmi(&t, "Y", "X_s", &["X_r"]) - brute_cmi(&t, "Y", "Z", &["X_r"]);
        prop_assert!((d - identity).abs() < 1e-10);
    }

    #[test]
    fn first_order_gap(h2 in 0.0f64..5.0, gap in 0.0f64..5.0) {
        let h1 = h2 + gap;
        prop_assert!(exp_entropy_gap(h1, h2) >= exp_entropy_gap_linear(h1, h2) - 1e-12);
    }

    #[test]
    fn bound_monotone_in_delta(seed in any::<u64>(), d1 in 0.0f64..2.0, d2 in 0.0f64..2.0) {
        let t = source(seed, 3, 3, 3);
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(theoretical_bound(&t, hi).unwrap() <= theoretical_bound(&t, lo).unwrap());
    }
}

#[test]
fn bound_soundness_on_enumerated_encoders() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..50u64 {
        let (y, xs, xr) = (rng.random_range(2..=4), rng.random_range(2..=4), rng.random_range(2..=4));
        let t = source(1000 + i, y, xs, xr);
        let cmi_bits = brute_cmi(&t, "Y", "X_s", &["X_r"]) / LN_2;
        for z in 1..=xs.min(4) {
            for p in enumerate_frontier(&t, z).unwrap() {
                let bound = (cmi_bits - p.distortion_nats / LN_2).max(0.0);
                assert!(p.rate_bits >= bound - 1e-9, "source {i} z {z} encoder {}", p.encoder_id);
                let enc = EncoderSpec::from_index(p.encoder_id, xs, z);
                let (zr, zy) = markov_residuals(&t, &enc).unwrap();
                assert!(zr.abs() < 1e-10 && zy.abs() < 1e-10);
            }
        }
    }
}

//! Exhaustive rate-distortion checks on small alphabets.
//!
//! A source is a [`JointTable`] over axes `Y`, `X_s`, `X_r`. An encoder reads
//! only `X_s` and emits `Z`; appending `Z` through the encoder's channel gives
//! the composite table every quantity here is computed on. For a message `Z`
//! the rate is `I(X_s; Z)` in bits and the distortion is the segmentation
//! pragmatic distortion `H(Y | Z, X_r) - H(Y | X_s, X_r)` in nats. The lower
//! bound on rate at distortion `d` is `max(0, I(Y; X_s | X_r) - d)`.

use std::f64::consts::LN_2;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::bayes_risk::{pragmatic_distortion, RiskParams, Task};
use crate::error::{Error, Result};
use crate::infotheory::{Axis, JointTable, Units};

/// Largest sender alphabet accepted by [`enumerate_frontier`].
pub const MAX_SOURCE_SYMBOLS: usize = 6;
/// Largest encoder count accepted by [`enumerate_frontier`].
pub const MAX_ENCODERS: u64 = 46_656;

const PARETO_TOL: f64 = 1e-12;

/// An encoder `p(Z | X_s)`.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderSpec {
    /// `map[x]` is the message emitted for sender symbol `x`.
    Deterministic { map: Vec<usize>, z_size: usize },
    /// Row-stochastic `channel[x][z]`.
    Stochastic { channel: Vec<Vec<f64>> },
}

impl EncoderSpec {
    /// Decodes an enumeration index as a base-`z_size` digit string, least
    /// significant digit for `X_s = 0`.
    pub fn from_index(mut id: u64, x_size: usize, z_size: usize) -> Self {
        let mut map = Vec::with_capacity(x_size);
        for _ in 0..x_size {
            map.push((id % z_size as u64) as usize);
            id /= z_size as u64;
        }
        EncoderSpec::Deterministic { map, z_size }
    }

    pub fn identity(x_size: usize) -> Self {
        EncoderSpec::Deterministic {
            map: (0..x_size).collect(),
            z_size: x_size,
        }
    }

    pub fn constant(x_size: usize) -> Self {
        EncoderSpec::Deterministic {
            map: vec![0; x_size],
            z_size: 1,
        }
    }

    fn validate(&self, x_size: usize) -> Result<()> {
        match self {
            EncoderSpec::Deterministic { map, z_size } => {
                if map.len() != x_size {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{x_size} encoder entries"),
                        got: format!("{}", map.len()),
                    });
                }
                if let Some(&z) = map.iter().find(|&&z| z >= *z_size) {
                    return Err(Error::SymbolOutOfRange {
                        axis: "Z".into(),
                        symbol: z,
                        size: *z_size,
                    });
                }
            }
            EncoderSpec::Stochastic { channel } => {
                if channel.len() != x_size {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{x_size} channel rows"),
                        got: format!("{}", channel.len()),
                    });
                }
            }
        }
        Ok(())
    }

    /// Composite table with the message appended as axis `Z`.
    pub fn apply(&self, source: &JointTable) -> Result<JointTable> {
        let x_size = source.axis_size("X_s")?;
        self.validate(x_size)?;
        match self {
            EncoderSpec::Deterministic { map, z_size } => source.with_function("X_s", "Z", map, *z_size),
            EncoderSpec::Stochastic { channel } => source.with_channel("X_s", "Z", channel),
        }
    }
}

/// One encoder's position in the rate-distortion plane plus condition diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RDPoint {
    pub encoder_id: u64,
    /// `I(X_s; Z)`.
    pub rate_bits: f64,
    pub distortion_nats: f64,
    /// `H(Z | Y)`; zero for a pragmatic-relevant message.
    pub cond_h_z_given_y: f64,
    /// `I(Z; X_r)`; zero for a redundancy-less message.
    pub mi_z_xr: f64,
    /// Lower bound on rate at the achieved distortion.
    pub bound_bits: f64,
    pub pareto: bool,
}

fn check_source(source: &JointTable) -> Result<()> {
    for axis in ["Y", "X_s", "X_r"] {
        source.axis_index(axis)?;
    }
    Ok(())
}

/// `max(0, I(Y; X_s | X_r) - delta)` in bits, with `delta` given in nats.
pub fn theoretical_bound(source: &JointTable, delta_nats: f64) -> Result<f64> {
    if !(delta_nats >= 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be >= 0, got {delta_nats}")));
    }
    check_source(source)?;
    let cmi = source.conditional_mi("Y", "X_s", &["X_r"], Units::Bits)?.value;
    Ok((cmi - delta_nats / LN_2).max(0.0))
}

fn point_for(source: &JointTable, enc: &EncoderSpec, encoder_id: u64) -> Result<RDPoint> {
    let t = enc.apply(source)?;
    let distortion_nats = pragmatic_distortion(&t, Task::Segmentation, &RiskParams::segmentation())?;
    let rate_bits = t.mutual_information("X_s", "Z", Units::Bits)?.value;
    let cond_h_z_given_y = t.conditional_entropy("Z", &["Y"], Units::Bits)?.value;
    let mi_z_xr = t.mutual_information("Z", "X_r", Units::Bits)?.value;
    Ok(RDPoint {
        encoder_id,
        rate_bits,
        distortion_nats,
        cond_h_z_given_y,
        mi_z_xr,
        bound_bits: theoretical_bound(source, distortion_nats.max(0.0))?,
        pareto: false,
    })
}

/// Evaluates every deterministic encoder `X_s -> Z` with `|Z| = z_size`.
///
/// Points come back in encoder-index order with the Pareto-minimal subset
/// (lowest rate for its distortion and vice versa) flagged.
pub fn enumerate_frontier(source: &JointTable, z_size: usize) -> Result<Vec<RDPoint>> {
    check_source(source)?;
    let x_size = source.axis_size("X_s")?;
    if x_size > MAX_SOURCE_SYMBOLS {
        return Err(Error::AlphabetTooLarge(format!(
            "|X_s| = {x_size} exceeds {MAX_SOURCE_SYMBOLS}"
        )));
    }
    if z_size == 0 || z_size > x_size {
        return Err(Error::AlphabetTooLarge(format!(
            "message alphabet {z_size} must be in 1..={x_size}"
        )));
    }
    let count = (z_size as u64).pow(x_size as u32);
    if count > MAX_ENCODERS {
        return Err(Error::AlphabetTooLarge(format!("{count} encoders")));
    }
    let mut points = (0..count)
        .into_par_iter()
        .map(|id| point_for(source, &EncoderSpec::from_index(id, x_size, z_size), id))
        .collect::<Result<Vec<_>>>()?;
    flag_pareto(&mut points);
    Ok(points)
}

fn flag_pareto(points: &mut [RDPoint]) {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .rate_bits
            .total_cmp(&points[b].rate_bits)
            .then(points[a].distortion_nats.total_cmp(&points[b].distortion_nats))
    });
    let mut best_below = f64::INFINITY;
    let mut i = 0;
    while i < order.len() {
        let rate = points[order[i]].rate_bits;
        let mut j = i;
        while j < order.len() && points[order[j]].rate_bits <= rate + PARETO_TOL {
            j += 1;
        }
        let group_min = order[i..j]
            .iter()
            .map(|&k| points[k].distortion_nats)
            .fold(f64::INFINITY, f64::min);
        if group_min < best_below - PARETO_TOL {
            for &k in &order[i..j] {
                points[k].pareto = points[k].distortion_nats <= group_min + PARETO_TOL;
            }
            best_below = group_min;
        }
        i = j;
    }
}

/// Diagnostics for one encoder, all in bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionReport {
    pub rate_bits: f64,
    pub distortion_nats: f64,
    pub h_z_given_y: f64,
    pub mi_z_xr: f64,
    pub bound_bits: f64,
    /// `rate - bound(achieved distortion)`; nonnegative for a sound bound.
    pub gap_to_bound: f64,
}

pub fn check_conditions(source: &JointTable, enc: &EncoderSpec) -> Result<ConditionReport> {
    check_source(source)?;
    let p = point_for(source, enc, 0)?;
    Ok(ConditionReport {
        rate_bits: p.rate_bits,
        distortion_nats: p.distortion_nats,
        h_z_given_y: p.cond_h_z_given_y,
        mi_z_xr: p.mi_z_xr,
        bound_bits: p.bound_bits,
        gap_to_bound: p.rate_bits - p.bound_bits,
    })
}

/// `(I(Z; X_r | X_s), I(Z; Y | X_s))` in bits; both vanish for any encoder that
/// reads only `X_s`.
pub fn markov_residuals(source: &JointTable, enc: &EncoderSpec) -> Result<(f64, f64)> {
    let t = enc.apply(source)?;
    Ok((
        t.conditional_mi("Z", "X_r", &["X_s"], Units::Bits)?.value,
        t.conditional_mi("Z", "Y", &["X_s"], Units::Bits)?.value,
    ))
}

/// Source with `X_s = (Y, N)` packed as `y * |N| + n`, and `X_r` independent of both.
pub fn constructed_source(p_y: &[f64], p_noise: &[f64], p_r: &[f64]) -> Result<JointTable> {
    let (ny, nn, nr) = (p_y.len(), p_noise.len(), p_r.len());
    let nx = ny * nn;
    let mut pmf = vec![0.0; ny * nx * nr];
    for y in 0..ny {
        for n in 0..nn {
            let xs = y * nn + n;
            for r in 0..nr {
                pmf[(y * nx + xs) * nr + r] = p_y[y] * p_noise[n] * p_r[r];
            }
        }
    }
    JointTable::new(
        vec![Axis::new("Y", ny), Axis::new("X_s", nx), Axis::new("X_r", nr)],
        pmf,
    )
}

/// Encoder of [`constructed_source`] that keeps only the `Y` component.
pub fn target_component_encoder(ny: usize, nn: usize) -> EncoderSpec {
    EncoderSpec::Deterministic {
        map: (0..ny * nn).map(|x| x / nn).collect(),
        z_size: ny,
    }
}

/// Lowest-rate encoder among those with distortion at most `delta_nats`.
pub fn best_encoder(points: &[RDPoint], delta_nats: f64) -> Option<&RDPoint> {
    points
        .iter()
        .filter(|p| p.distortion_nats <= delta_nats)
        .min_by(|a, b| a.rate_bits.total_cmp(&b.rate_bits).then(a.encoder_id.cmp(&b.encoder_id)))
}

pub const FRONTIER_CSV_HEADER: &str =
    "encoder_id,rate_bits,distortion_nats,h_z_given_y,mi_z_xr,bound_bits,pareto_flag";

pub fn frontier_csv(points: &[RDPoint]) -> String {
    let mut out = String::from(FRONTIER_CSV_HEADER);
    out.push('\n');
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.encoder_id,
            p.rate_bits,
            p.distortion_nats,
            p.cond_h_z_given_y,
            p.mi_z_xr,
            p.bound_bits,
            u8::from(p.pareto)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn xor_triple() -> JointTable {
        let mut pmf = vec![0.0; 8];
        for xs in 0..2 {
            for xr in 0..2 {
                pmf[(xs ^ xr) * 4 + xs * 2 + xr] = 0.25;
            }
        }
        JointTable::new(
            vec![Axis::new("Y", 2), Axis::new("X_s", 2), Axis::new("X_r", 2)],
            pmf,
        )
        .unwrap()
    }

    fn random_source(seed: u64) -> JointTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        JointTable::random(
            vec![Axis::new("Y", 3), Axis::new("X_s", 4), Axis::new("X_r", 2)],
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn identity_and_constant_encoders() {
        let src = random_source(1);
        let pts = enumerate_frontier(&src, 4).unwrap();
        let hx = src.entropy("X_s", Units::Bits).unwrap().value;
        // identity map [0,1,2,3] has index 0 + 1*4 + 2*16 + 3*64
        let id = pts.iter().find(|p| p.encoder_id == 4 + 32 + 192).unwrap();
        assert!((id.rate_bits - hx).abs() < 1e-12);
        assert!(id.distortion_nats.abs() < 1e-12);
        let constant = &pts[0];
        let cmi = src.conditional_mi("Y", "X_s", &["X_r"], Units::Nats).unwrap().value;
        assert!(constant.rate_bits.abs() < 1e-12);
        assert!((constant.distortion_nats - cmi).abs() < 1e-12);
        assert!(constant.pareto);
        assert!(id.pareto || pts.iter().any(|p| p.pareto && p.distortion_nats.abs() < 1e-12));
    }

    #[test]
    fn copy_source_reaches_one_bit_lossless() {
        // X_s = Y uniform binary, X_r independent
        let mut pmf = vec![0.0; 8];
        for y in 0..2 {
            for r in 0..2 {
                pmf[(y * 2 + y) * 2 + r] = 0.25;
            }
        }
        let src = JointTable::new(
            vec![Axis::new("Y", 2), Axis::new("X_s", 2), Axis::new("X_r", 2)],
            pmf,
        )
        .unwrap();
        let pts = enumerate_frontier(&src, 2).unwrap();
        assert!(pts
            .iter()
            .any(|p| (p.rate_bits - 1.0).abs() < 1e-12 && p.distortion_nats.abs() < 1e-12));
    }

    #[test]
    fn bound_examples() {
        let t = xor_triple();
        assert!((theoretical_bound(&t, 0.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(theoretical_bound(&t, LN_2).unwrap(), 0.0);
        assert_eq!(theoretical_bound(&t, 5.0).unwrap(), 0.0);
        assert!(theoretical_bound(&t, -1.0).is_err());
        // X_r = X_s
        let mut pmf = vec![0.0; 8];
        for y in 0..2 {
            for x in 0..2 {
                pmf[(y * 2 + x) * 2 + x] = 0.25;
            }
        }
        let same = JointTable::new(
            vec![Axis::new("Y", 2), Axis::new("X_s", 2), Axis::new("X_r", 2)],
            pmf,
        )
        .unwrap();
        assert!(theoretical_bound(&same, 0.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn constructed_source_conditions() {
        let src = constructed_source(&[0.3, 0.7], &[0.5, 0.25, 0.25], &[0.6, 0.4]).unwrap();
        let enc = target_component_encoder(2, 3);
        let rep = check_conditions(&src, &enc).unwrap();
        assert!(rep.h_z_given_y.abs() < 1e-12);
        assert!(rep.mi_z_xr.abs() < 1e-12);
        assert!(rep.gap_to_bound.abs() < 1e-9);
        assert!(rep.distortion_nats.abs() < 1e-12);
        let (a, b) = markov_residuals(&src, &enc).unwrap();
        assert!(a.abs() < 1e-10 && b.abs() < 1e-10);
    }

    #[test]
    fn stochastic_encoder_accepted() {
        let src = xor_triple();
        let enc = EncoderSpec::Stochastic {
            channel: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
        };
        let rep = check_conditions(&src, &enc).unwrap();
        assert!(rep.gap_to_bound >= -1e-9);
        let bad = EncoderSpec::Stochastic {
            channel: vec![vec![0.9, 0.2], vec![0.2, 0.8]],
        };
        assert!(check_conditions(&src, &bad).is_err());
    }

    #[test]
    fn size_guard() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let big = JointTable::random(
            vec![Axis::new("Y", 2), Axis::new("X_s", 7), Axis::new("X_r", 2)],
            &mut rng,
        )
        .unwrap();
        assert!(matches!(enumerate_frontier(&big, 2), Err(Error::AlphabetTooLarge(_))));
        let src = random_source(4);
        assert!(matches!(enumerate_frontier(&src, 5), Err(Error::AlphabetTooLarge(_))));
    }

    #[test]
    fn pareto_flags_are_nondominated() {
        let pts = enumerate_frontier(&random_source(9), 3).unwrap();
        for p in pts.iter().filter(|p| p.pareto) {
            assert!(!pts.iter().any(|q| q.rate_bits < p.rate_bits - 1e-9
                && q.distortion_nats < p.distortion_nats - 1e-9));
        }
        // every non-flagged point is dominated (weakly) by some flagged one
        for p in pts.iter().filter(|p| !p.pareto) {
            assert!(pts.iter().any(|q| q.pareto
                && q.rate_bits <= p.rate_bits + 1e-9
                && q.distortion_nats <= p.distortion_nats + 1e-9));
        }
        let csv = frontier_csv(&pts);
        assert_eq!(csv.lines().count(), pts.len() + 1);
    }
}

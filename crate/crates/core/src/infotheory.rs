//! Exact information measures over finite joint distributions.
//!
//! A [`JointTable`] holds a pmf over the product of named finite alphabets.
//! Every measure is computed by marginalizing onto the requested axes and
//! summing `-p log p`, with `0 log 0 = 0`. Entries below [`ZERO_CUTOFF`] are
//! treated as exact zeros inside logarithms.
//!
//! | function | quantity |
//! |----------|----------|
//! | [`JointTable::entropy`] | H(A) |
//! | [`JointTable::conditional_entropy`] | H(A \| B, ...) |
//! | [`JointTable::mutual_information`] | I(A; B) |
//! | [`JointTable::conditional_mi`] | I(A; B \| C, ...) |
//! | [`JointTable::interaction_information`] | I(A; B; C) = I(A;B) - I(A;B\|C) |

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};

/// Probabilities below this are treated as zero inside logarithms.
pub const ZERO_CUTOFF: f64 = 1e-15;

/// Normalization tolerance accepted on construction (the table is then renormalized).
const SUM_TOLERANCE: f64 = 1e-9;

/// Unit of an information quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Units {
    Bits,
    Nats,
}

/// A real-valued information quantity with an explicit unit tag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoQuantity {
    pub value: f64,
    pub units: Units,
}

impl InfoQuantity {
    pub fn from_nats(nats: f64, units: Units) -> Self {
        let value = match units {
            Units::Nats => nats,
            Units::Bits => nats / std::f64::consts::LN_2,
        };
        Self { value, units }
    }

    pub fn bits(self) -> f64 {
        match self.units {
            Units::Bits => self.value,
            Units::Nats => self.value / std::f64::consts::LN_2,
        }
    }

    pub fn nats(self) -> f64 {
        match self.units {
            Units::Nats => self.value,
            Units::Bits => self.value * std::f64::consts::LN_2,
        }
    }
}

/// A named finite alphabet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Axis {
    pub name: String,
    pub size: usize,
}

impl Axis {
    pub fn new(name: impl Into<String>, size: usize) -> Self {
        Self {
            name: name.into(),
            size,
        }
    }
}

/// Shannon entropy in nats of an (unnormalized-safe) probability vector.
pub fn entropy_nats(pmf: &[f64]) -> f64 {
    pmf.iter()
        .filter(|&&p| p > ZERO_CUTOFF)
        .map(|&p| -p * p.ln())
        .sum()
}

/// Exact joint pmf over named axes. The first axis varies slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    axes: Vec<Axis>,
    pmf: Vec<f64>,
}

impl JointTable {
    pub fn new(axes: Vec<Axis>, pmf: Vec<f64>) -> Result<Self> {
        validate_axes(&axes)?;
        let len: usize = axes.iter().map(|a| a.size).product();
        if pmf.len() != len {
            return Err(Error::InvalidTable(format!(
                "pmf has {} entries, axes need {len}",
                pmf.len()
            )));
        }
        if let Some(p) = pmf.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidTable(format!("entry {p} is not a probability")));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidTable(format!("entries sum to {total}")));
        }
        let pmf = pmf.into_iter().map(|p| p / total).collect();
        Ok(Self { axes, pmf })
    }

    /// Samples a table from Dirichlet(1, ..., 1) over the flattened product alphabet.
    pub fn random<R: Rng + ?Sized>(axes: Vec<Axis>, rng: &mut R) -> Result<Self> {
        validate_axes(&axes)?;
        let len: usize = axes.iter().map(|a| a.size).product();
        let draws: Vec<f64> = (0..len).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        Ok(Self {
            axes,
            pmf: draws.into_iter().map(|x| x / total).collect(),
        })
    }

    /// Product of independent marginals, in axis order.
    pub fn independent(marginals: &[(&str, &[f64])]) -> Result<Self> {
        let mut axes = Vec::new();
        let mut pmf = vec![1.0];
        for (name, m) in marginals {
            axes.push(Axis::new(*name, m.len()));
            pmf = pmf
                .iter()
                .flat_map(|&p| m.iter().map(move |&q| p * q))
                .collect();
        }
        Self::new(axes, pmf)
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn axis_index(&self, name: &str) -> Result<usize> {
        self.axes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAxis(name.to_string()))
    }

    pub fn axis_size(&self, name: &str) -> Result<usize> {
        Ok(self.axes[self.axis_index(name)?].size)
    }

    pub fn has_axis(&self, name: &str) -> bool {
        self.axes.iter().any(|a| a.name == name)
    }

    fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.axes.len()];
        for i in (0..self.axes.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.axes[i + 1].size;
        }
        strides
    }

    /// Decodes a flat index into per-axis symbols.
    pub fn symbols_of(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.axes.len()];
        for (i, axis) in self.axes.iter().enumerate().rev() {
            out[i] = flat % axis.size;
            flat /= axis.size;
        }
        out
    }

    pub fn flat_index(&self, symbols: &[usize]) -> Result<usize> {
        if symbols.len() != self.axes.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} symbols, got {}",
                self.axes.len(),
                symbols.len()
            )));
        }
        let mut flat = 0;
        for (axis, &s) in self.axes.iter().zip(symbols) {
            if s >= axis.size {
                return Err(Error::SymbolOutOfRange {
                    axis: axis.name.clone(),
                    symbol: s,
                    size: axis.size,
                });
            }
            flat = flat * axis.size + s;
        }
        Ok(flat)
    }

    /// Marginal pmf over the named axes, in the order given.
    pub fn marginal(&self, names: &[&str]) -> Result<Vec<f64>> {
        let idx = self.resolve_distinct(names)?;
        let strides = self.strides();
        let sizes: Vec<usize> = idx.iter().map(|&i| self.axes[i].size).collect();
        let len: usize = sizes.iter().product();
        let mut out = vec![0.0; len];
        for (flat, &p) in self.pmf.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let mut sub = 0;
            for (&ai, &size) in idx.iter().zip(&sizes) {
                sub = sub * size + (flat / strides[ai]) % self.axes[ai].size;
            }
            out[sub] += p;
        }
        Ok(out)
    }

    /// Marginal table over the named axes.
    pub fn marginal_table(&self, names: &[&str]) -> Result<JointTable> {
        let pmf = self.marginal(names)?;
        let axes = names
            .iter()
            .map(|n| Ok(self.axes[self.axis_index(n)?].clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(JointTable { axes, pmf })
    }

    fn resolve_distinct(&self, names: &[&str]) -> Result<Vec<usize>> {
        let mut idx = Vec::with_capacity(names.len());
        for n in names {
            let i = self.axis_index(n)?;
            if idx.contains(&i) {
                return Err(Error::DuplicateAxis(n.to_string()));
            }
            idx.push(i);
        }
        Ok(idx)
    }

    fn joint_entropy_nats(&self, names: &[&str]) -> Result<f64> {
        if names.is_empty() {
            return Ok(0.0);
        }
        Ok(entropy_nats(&self.marginal(names)?))
    }

    /// Joint entropy H(names...).
    pub fn joint_entropy(&self, names: &[&str], units: Units) -> Result<InfoQuantity> {
        Ok(InfoQuantity::from_nats(self.joint_entropy_nats(names)?, units))
    }

    /// H(axis).
    pub fn entropy(&self, axis: &str, units: Units) -> Result<InfoQuantity> {
        self.joint_entropy(&[axis], units)
    }

    /// H(target | given) = H(target, given) - H(given).
    pub fn conditional_entropy(
        &self,
        target: &str,
        given: &[&str],
        units: Units,
    ) -> Result<InfoQuantity> {
        Ok(InfoQuantity::from_nats(
            self.cond_entropy_multi(&[target], given)?,
            units,
        ))
    }

    fn cond_entropy_multi(&self, targets: &[&str], given: &[&str]) -> Result<f64> {
        let mut all: Vec<&str> = targets.to_vec();
        all.extend_from_slice(given);
        // resolves names and rejects collisions between target and given
        self.resolve_distinct(&all)?;
        let h = self.joint_entropy_nats(&all)? - self.joint_entropy_nats(given)?;
        Ok(h)
    }

    /// I(a; b) = H(a) + H(b) - H(a, b).
    pub fn mutual_information(&self, a: &str, b: &str, units: Units) -> Result<InfoQuantity> {
        self.resolve_distinct(&[a, b])?;
        let nats = self.joint_entropy_nats(&[a])? + self.joint_entropy_nats(&[b])?
            - self.joint_entropy_nats(&[a, b])?;
        Ok(InfoQuantity::from_nats(nats, units))
    }

    /// I(a; b | given) = H(a | given) - H(a | b, given).
    pub fn conditional_mi(
        &self,
        a: &str,
        b: &str,
        given: &[&str],
        units: Units,
    ) -> Result<InfoQuantity> {
        let mut with_b = vec![b];
        with_b.extend_from_slice(given);
        self.resolve_distinct(&[&[a][..], &with_b].concat())?;
        let nats = self.cond_entropy_multi(&[a], given)? - self.cond_entropy_multi(&[a], &with_b)?;
        Ok(InfoQuantity::from_nats(nats, units))
    }

    /// I(a; b; c) = I(a; b) - I(a; b | c). Negative values indicate synergy.
    pub fn interaction_information(
        &self,
        a: &str,
        b: &str,
        c: &str,
        units: Units,
    ) -> Result<InfoQuantity> {
        let nats = self.mutual_information(a, b, Units::Nats)?.value
            - self.conditional_mi(a, b, &[c], Units::Nats)?.value;
        Ok(InfoQuantity::from_nats(nats, units))
    }

    /// Appends an axis `name` generated from `source` through the row-stochastic
    /// `channel[source_symbol][new_symbol]`.
    pub fn with_channel(&self, source: &str, name: &str, channel: &[Vec<f64>]) -> Result<JointTable> {
        if self.has_axis(name) {
            return Err(Error::DuplicateAxis(name.to_string()));
        }
        let si = self.axis_index(source)?;
        let src_size = self.axes[si].size;
        if channel.len() != src_size {
            return Err(Error::ShapeMismatch {
                expected: format!("{src_size} channel rows"),
                got: format!("{} rows", channel.len()),
            });
        }
        let out_size = channel.first().map_or(0, Vec::len);
        if out_size == 0 {
            return Err(Error::EmptyAxis(name.to_string()));
        }
        for row in channel {
            if row.len() != out_size {
                return Err(Error::InvalidArgument("ragged channel matrix".into()));
            }
            let s: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "channel row is not a distribution (sum {s})"
                )));
            }
        }
        let stride = self.strides()[si];
        let mut pmf = Vec::with_capacity(self.pmf.len() * out_size);
        for (flat, &p) in self.pmf.iter().enumerate() {
            let x = (flat / stride) % src_size;
            pmf.extend(channel[x].iter().map(|&q| p * q));
        }
        let mut axes = self.axes.clone();
        axes.push(Axis::new(name, out_size));
        Ok(JointTable { axes, pmf })
    }

    /// Appends a deterministic function of `source` as a new axis.
    pub fn with_function(&self, source: &str, name: &str, map: &[usize], out_size: usize) -> Result<JointTable> {
        let rows = map
            .iter()
            .map(|&z| {
                if z >= out_size {
                    return Err(Error::SymbolOutOfRange {
                        axis: name.to_string(),
                        symbol: z,
                        size: out_size,
                    });
                }
                let mut row = vec![0.0; out_size];
                row[z] = 1.0;
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        self.with_channel(source, name, &rows)
    }

    /// Draws `n` iid symbol tuples.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<usize>> {
        let mut cdf = Vec::with_capacity(self.pmf.len());
        let mut acc = 0.0;
        for &p in &self.pmf {
            acc += p;
            cdf.push(acc);
        }
        (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * acc;
                let flat = cdf.partition_point(|&c| c <= u).min(self.pmf.len() - 1);
                self.symbols_of(flat)
            })
            .collect()
    }

    pub fn l1_distance(&self, other: &JointTable) -> Result<f64> {
        if self.axes != other.axes {
            return Err(Error::InvalidArgument("tables have different axes".into()));
        }
        Ok(self
            .pmf
            .iter()
            .zip(&other.pmf)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }

    /// Renders the fixture text format: a header of `name:size` tokens, then one
    /// line per nonzero atom with its symbols and probability.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = self
            .axes
            .iter()
            .map(|a| format!("{}:{}", a.name, a.size))
            .collect();
        out.push_str(&header.join(" "));
        out.push('\n');
        for (flat, &p) in self.pmf.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for s in self.symbols_of(flat) {
                let _ = write!(out, "{s} ");
            }
            let _ = writeln!(out, "{p:.17e}");
        }
        out
    }

    /// Parses the fixture text format. Blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines.next().ok_or(Error::Empty("joint table text"))?;
        let axes = header
            .split_whitespace()
            .map(|tok| {
                let (name, size) = tok.split_once(':').ok_or_else(|| Error::Parse {
                    line: hline,
                    msg: format!("expected name:size, got `{tok}`"),
                })?;
                let size = size.parse::<usize>().map_err(|e| Error::Parse {
                    line: hline,
                    msg: format!("axis size `{size}`: {e}"),
                })?;
                Ok(Axis::new(name, size))
            })
            .collect::<Result<Vec<_>>>()?;
        validate_axes(&axes)?;
        let len: usize = axes.iter().map(|a| a.size).product();
        let mut pmf = vec![0.0; len];
        let mut seen = HashMap::new();
        let probe = JointTable {
            axes: axes.clone(),
            pmf: Vec::new(),
        };
        for (line, body) in lines {
            let toks: Vec<&str> = body.split_whitespace().collect();
            if toks.len() != axes.len() + 1 {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {} fields, got {}", axes.len() + 1, toks.len()),
                });
            }
            let symbols = toks[..axes.len()]
                .iter()
                .map(|t| {
                    t.parse::<usize>().map_err(|e| Error::Parse {
                        line,
                        msg: format!("symbol `{t}`: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let p = toks[axes.len()].parse::<f64>().map_err(|e| Error::Parse {
                line,
                msg: format!("probability: {e}"),
            })?;
            let flat = probe.flat_index(&symbols)?;
            if let Some(prev) = seen.insert(flat, line) {
                return Err(Error::Parse {
                    line,
                    msg: format!("atom already given on line {prev}"),
                });
            }
            pmf[flat] = p;
        }
        Self::new(axes, pmf)
    }
}

fn validate_axes(axes: &[Axis]) -> Result<()> {
    for (i, a) in axes.iter().enumerate() {
        if a.size == 0 {
            return Err(Error::EmptyAxis(a.name.clone()));
        }
        if axes[..i].iter().any(|b| b.name == a.name) {
            return Err(Error::DuplicateAxis(a.name.clone()));
        }
    }
    if axes.is_empty() {
        return Err(Error::InvalidTable("no axes".into()));
    }
    Ok(())
}

/// Empirical joint table from observed symbol tuples.
pub fn plugin_from_samples(samples: &[Vec<usize>], axes: Vec<Axis>) -> Result<JointTable> {
    if samples.is_empty() {
        return Err(Error::Empty("sample list"));
    }
    validate_axes(&axes)?;
    let len: usize = axes.iter().map(|a| a.size).product();
    let probe = JointTable {
        axes,
        pmf: Vec::new(),
    };
    let mut counts = vec![0u64; len];
    for s in samples {
        counts[probe.flat_index(s)?] += 1;
    }
    let n = samples.len() as f64;
    Ok(JointTable {
        axes: probe.axes,
        pmf: counts.into_iter().map(|c| c as f64 / n).collect(),
    })
}

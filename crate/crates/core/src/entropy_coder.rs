//! Canonical Huffman codes over codebook indices and the message bitstream.
//!
//! Codes are built once from accumulated per-embedding weights (confidence
//! mass for task-entropy coding, occurrence counts for the classic baseline)
//! and never adapted while coding. Codewords are canonical: sorted by
//! `(length, symbol)`, so equal weights always give identical bits.
//!
//! A message carries, in raster order and MSB-first:
//!
//! ```text
//! "RDCM" | version u8 | h u16 | w u16 | code id u8
//! | conf mask (h*w bits) | redundancy mask (h*w bits)
//! | base length u32 | base payload | full length u32 | full payload | zero pad
//! ```
//!
//! The base payload codes `D_base` on every confidence-selected cell. The full
//! payload codes `D_base || D_res` on cells selected by both masks.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};
use crate::vq_codec::{IndexGrid, LayeredCodebook};

pub const MAGIC: &[u8; 4] = b"RDCM";
pub const VERSION: u8 = 1;
const MAX_CODE_LEN: usize = 64;

/// `ceil(log2 n)`, with one bit for a single-symbol alphabet.
pub fn fixed_length_bits(n_symbols: usize) -> usize {
    if n_symbols <= 1 {
        1
    } else {
        (usize::BITS - (n_symbols - 1).leading_zeros()) as usize
    }
}

/// Canonical prefix code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixCode {
    lengths: Vec<u8>,
    codewords: Vec<u64>,
    // canonical decode tables, indexed by length
    first_code: Vec<u64>,
    first_index: Vec<usize>,
    count: Vec<usize>,
    sorted: Vec<usize>,
}

#[derive(Clone, Copy, PartialEq)]
struct HeapKey(f64, usize);

impl Eq for HeapKey {}

impl PartialOrd for HeapKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Huffman code for the given nonnegative weights.
///
/// Zero-weight symbols stay encodable: they share one zero-weight leaf of the
/// Huffman tree, expanded into a balanced subtree, so they receive the longest
/// codewords without breaking the Kraft inequality.
pub fn build_code(weights: &[f64]) -> Result<PrefixCode> {
    if weights.is_empty() {
        return Err(Error::Empty("symbol weights"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidArgument("weights must be finite and >= 0".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroWeights);
    }
    let n = weights.len();
    let zeros: Vec<usize> = (0..n).filter(|&i| weights[i] == 0.0).collect();
    // leaves: positive symbols by index, then the zero group as id n
    let mut parent: Vec<usize> = Vec::new();
    let mut heap = BinaryHeap::new();
    let mut leaf_node = vec![usize::MAX; n + 1];
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            leaf_node[i] = parent.len();
            heap.push(Reverse((HeapKey(w / total, i), parent.len())));
            parent.push(usize::MAX);
        }
    }
    if !zeros.is_empty() {
        leaf_node[n] = parent.len();
        heap.push(Reverse((HeapKey(0.0, n), parent.len())));
        parent.push(usize::MAX);
    }
    let mut next_tie = n + 1;
    while heap.len() > 1 {
        let Reverse((HeapKey(wa, _), a)) = heap.pop().expect("len > 1");
        let Reverse((HeapKey(wb, _), b)) = heap.pop().expect("len > 1");
        let node = parent.len();
        parent.push(usize::MAX);
        parent[a] = node;
        parent[b] = node;
        heap.push(Reverse((HeapKey(wa + wb, next_tie), node)));
        next_tie += 1;
    }
    let depth = |mut node: usize| {
        let mut d = 0usize;
        while parent[node] != usize::MAX {
            node = parent[node];
            d += 1;
        }
        d.max(1)
    };
    let mut lengths = vec![0usize; n];
    for i in 0..n {
        if weights[i] > 0.0 {
            lengths[i] = depth(leaf_node[i]);
        }
    }
    if !zeros.is_empty() {
        let group_depth = depth(leaf_node[n]);
        let extra = if zeros.len() == 1 { 0 } else { fixed_length_bits(zeros.len()) };
        for &i in &zeros {
            lengths[i] = group_depth + extra;
        }
    }
    PrefixCode::from_lengths(&lengths)
}

impl PrefixCode {
    /// Canonical code from codeword lengths; fails if the lengths violate Kraft.
    pub fn from_lengths(lengths: &[usize]) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::Empty("code lengths"));
        }
        if let Some(&l) = lengths.iter().find(|&&l| l > MAX_CODE_LEN) {
            return Err(Error::CodeTooLong(l));
        }
        if lengths.contains(&0) {
            return Err(Error::InvalidArgument("codeword length 0".into()));
        }
        let max_len = *lengths.iter().max().expect("nonempty");
        // Kraft check in units of 2^-max_len, saturating for 64-bit lengths
        let kraft: f64 = lengths.iter().map(|&l| (-(l as f64)).exp2()).sum();
        if kraft > 1.0 + 1e-12 {
            return Err(Error::InvalidArgument(format!("Kraft sum {kraft} exceeds 1")));
        }
        let mut sorted: Vec<usize> = (0..lengths.len()).collect();
        sorted.sort_by_key(|&i| (lengths[i], i));
        let mut codewords = vec![0u64; lengths.len()];
        let mut first_code = vec![0u64; max_len + 1];
        let mut first_index = vec![0usize; max_len + 1];
        let mut count = vec![0usize; max_len + 1];
        let mut code: u64 = 0;
        let mut prev_len = lengths[sorted[0]];
        for (pos, &sym) in sorted.iter().enumerate() {
            let l = lengths[sym];
            if pos > 0 {
                code += 1;
                code <<= l - prev_len;
            }
            if count[l] == 0 {
                first_code[l] = code;
                first_index[l] = pos;
            }
            count[l] += 1;
            codewords[sym] = code;
            prev_len = l;
        }
        Ok(Self {
            lengths: lengths.iter().map(|&l| l as u8).collect(),
            codewords,
            first_code,
            first_index,
            count,
            sorted,
        })
    }

    /// Fixed-length code with `ceil(log2 n)` bits per symbol.
    pub fn fixed(n_symbols: usize) -> Result<Self> {
        Self::from_lengths(&vec![fixed_length_bits(n_symbols); n_symbols])
    }

    pub fn num_symbols(&self) -> usize {
        self.lengths.len()
    }

    pub fn length(&self, symbol: usize) -> usize {
        self.lengths[symbol] as usize
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.lengths.iter().map(|&l| l as usize).collect()
    }

    /// `(bits, length)` of a symbol's codeword, right-aligned in `bits`.
    pub fn codeword(&self, symbol: usize) -> (u64, usize) {
        (self.codewords[symbol], self.lengths[symbol] as usize)
    }

    /// Codeword rendered as a `0`/`1` string.
    pub fn codeword_string(&self, symbol: usize) -> String {
        let (bits, len) = self.codeword(symbol);
        (0..len)
            .rev()
            .map(|i| if (bits >> i) & 1 == 1 { '1' } else { '0' })
            .collect()
    }

    pub fn kraft_sum(&self) -> f64 {
        self.lengths.iter().map(|&l| (-f64::from(l)).exp2()).sum()
    }

    /// Mean codeword length under the normalized weights.
    pub fn expected_length(&self, weights: &[f64]) -> f64 {
        let total: f64 = weights.iter().sum();
        weights
            .iter()
            .zip(&self.lengths)
            .map(|(w, &l)| w * f64::from(l))
            .sum::<f64>()
            / total
    }

    fn check(&self, symbol: usize) -> Result<()> {
        if symbol >= self.lengths.len() {
            return Err(Error::SymbolOutsideCode {
                symbol,
                size: self.lengths.len(),
            });
        }
        Ok(())
    }

    pub fn write(&self, symbol: usize, out: &mut BitWriter) -> Result<()> {
        self.check(symbol)?;
        let (bits, len) = self.codeword(symbol);
        out.push_bits(bits, len);
        Ok(())
    }

    pub fn read(&self, input: &mut BitReader<'_>, what: &'static str) -> Result<usize> {
        let mut code: u64 = 0;
        for len in 1..self.count.len() {
            code = (code << 1) | u64::from(input.read_bit().map_err(|_| Error::Truncated(what))?);
            if self.count[len] > 0 {
                let offset = code.wrapping_sub(self.first_code[len]);
                if code >= self.first_code[len] && (offset as usize) < self.count[len] {
                    return Ok(self.sorted[self.first_index[len] + offset as usize]);
                }
            }
        }
        Err(Error::InvalidCodeword(what))
    }
}

/// MSB-first bit accumulator.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BitWriter {
    bytes: Vec<u8>,
    len: usize,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push_bit(&mut self, bit: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.last_mut().expect("byte pushed above");
            *last |= 0x80 >> (self.len % 8);
        }
        self.len += 1;
    }

    /// Writes the low `n` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u64, n: usize) {
        for i in (0..n).rev() {
            self.push_bit((value >> i) & 1 == 1);
        }
    }

    pub fn append(&mut self, other: &BitWriter) {
        let mut r = BitReader::new(&other.bytes, other.len);
        while let Ok(b) = r.read_bit() {
            self.push_bit(b);
        }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn reader(&self) -> BitReader<'_> {
        BitReader::new(&self.bytes, self.len)
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

/// MSB-first bit cursor over a byte slice with an explicit bit limit.
#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    limit: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8], limit: usize) -> Self {
        Self {
            bytes,
            pos: 0,
            limit: limit.min(bytes.len() * 8),
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.limit - self.pos
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        if self.pos >= self.limit {
            return Err(Error::Truncated("bit read past end"));
        }
        let bit = (self.bytes[self.pos / 8] >> (7 - self.pos % 8)) & 1 == 1;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_bits(&mut self, n: usize) -> Result<u64> {
        let mut v = 0u64;
        for _ in 0..n {
            v = (v << 1) | u64::from(self.read_bit()?);
        }
        Ok(v)
    }
}

/// Which weights a code pair was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CoderVariant {
    /// Huffman weighted by confidence frequency.
    TaskEntropy,
    /// Huffman weighted by occurrence frequency.
    Occurrence,
    /// `ceil(log2 n)` bits per index.
    Fixed,
}

impl CoderVariant {
    pub const ALL: [CoderVariant; 3] = [CoderVariant::TaskEntropy, CoderVariant::Occurrence, CoderVariant::Fixed];

    pub fn id(self) -> u8 {
        match self {
            CoderVariant::TaskEntropy => 0,
            CoderVariant::Occurrence => 1,
            CoderVariant::Fixed => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            CoderVariant::TaskEntropy => "task_entropy",
            CoderVariant::Occurrence => "occurrence",
            CoderVariant::Fixed => "fixed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

/// Codes for the base and residual index streams.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodePair {
    pub variant: CoderVariant,
    pub base: PrefixCode,
    pub res: PrefixCode,
}

impl CodePair {
    /// Builds both codes from a codebook's accumulated frequencies.
    pub fn from_codebook(cb: &LayeredCodebook, variant: CoderVariant) -> Result<Self> {
        let (base, res) = match variant {
            CoderVariant::TaskEntropy => (build_code(&cb.base.conf_freq)?, build_code(&cb.res.conf_freq)?),
            CoderVariant::Occurrence => (build_code(&cb.base.occ_freq)?, build_code(&cb.res.occ_freq)?),
            CoderVariant::Fixed => (PrefixCode::fixed(cb.base.len())?, PrefixCode::fixed(cb.res.len())?),
        };
        Ok(Self { variant, base, res })
    }
}

/// One directed message: masks plus the two payloads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedMessage {
    pub h: usize,
    pub w: usize,
    pub code_id: u8,
    pub conf_mask: Mask,
    pub redund_mask: Mask,
    pub base_payload: BitWriter,
    pub full_payload: BitWriter,
}

impl EncodedMessage {
    pub fn mask_bits(&self) -> usize {
        2 * self.h * self.w
    }

    /// Bits of `D_base` on confidence-selected cells.
    pub fn abstract_bits(&self) -> usize {
        self.base_payload.len()
    }

    /// Bits of `D_base || D_res` on cells selected by both masks.
    pub fn payload_bits(&self) -> usize {
        self.full_payload.len()
    }

    pub fn total_bits(&self) -> usize {
        self.payload_bits() + self.abstract_bits() + self.mask_bits()
    }

    pub fn total_bits_without_masks(&self) -> usize {
        self.payload_bits() + self.abstract_bits()
    }

    /// Serializes to the `RDCM` bitstream.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.h > u16::MAX as usize || self.w > u16::MAX as usize {
            return Err(Error::InvalidArgument("grid larger than 65535 cells per side".into()));
        }
        let mut out = BitWriter::new();
        for &b in MAGIC {
            out.push_bits(u64::from(b), 8);
        }
        out.push_bits(u64::from(VERSION), 8);
        out.push_bits(self.h as u64, 16);
        out.push_bits(self.w as u64, 16);
        out.push_bits(u64::from(self.code_id), 8);
        for mask in [&self.conf_mask, &self.redund_mask] {
            for &b in mask.cells() {
                out.push_bit(b);
            }
        }
        for payload in [&self.base_payload, &self.full_payload] {
            let len = u32::try_from(payload.len())
                .map_err(|_| Error::InvalidArgument("payload exceeds u32 bits".into()))?;
            out.push_bits(u64::from(len), 32);
            out.append(payload);
        }
        Ok(out.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BitReader::new(bytes, bytes.len() * 8);
        let trunc = |_| Error::Truncated("message header");
        for &b in MAGIC {
            if r.read_bits(8).map_err(trunc)? != u64::from(b) {
                return Err(Error::Malformed("bad magic".into()));
            }
        }
        let version = r.read_bits(8).map_err(trunc)?;
        if version != u64::from(VERSION) {
            return Err(Error::Malformed(format!("unsupported version {version}")));
        }
        let h = r.read_bits(16).map_err(trunc)? as usize;
        let w = r.read_bits(16).map_err(trunc)? as usize;
        let code_id = r.read_bits(8).map_err(trunc)? as u8;
        let mut masks = Vec::with_capacity(2);
        for _ in 0..2 {
            let cells = (0..h * w)
                .map(|_| r.read_bit().map_err(|_| Error::Truncated("mask bitmap")))
                .collect::<Result<Vec<_>>>()?;
            masks.push(Grid::from_vec(h, w, cells)?);
        }
        let mut payloads = Vec::with_capacity(2);
        for _ in 0..2 {
            let len = r.read_bits(32).map_err(|_| Error::Truncated("payload length"))? as usize;
            if len > r.remaining() {
                return Err(Error::Truncated("payload"));
            }
            let mut p = BitWriter::new();
            for _ in 0..len {
                p.push_bit(r.read_bit()?);
            }
            payloads.push(p);
        }
        if r.remaining() >= 8 || (0..r.remaining()).any(|_| r.read_bit() == Ok(true)) {
            return Err(Error::Malformed("nonzero trailing bits".into()));
        }
        let full_payload = payloads.pop().expect("two payloads");
        let base_payload = payloads.pop().expect("two payloads");
        let redund_mask = masks.pop().expect("two masks");
        let conf_mask = masks.pop().expect("two masks");
        Ok(Self {
            h,
            w,
            code_id,
            conf_mask,
            redund_mask,
            base_payload,
            full_payload,
        })
    }
}

/// Receiver-side indices: `None` where nothing was sent.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialIndexGrid {
    pub base: Grid<Option<usize>>,
    pub res: Grid<Option<usize>>,
}

/// Codes the selected cells of `idx` in raster order.
pub fn encode(idx: &IndexGrid, conf_mask: &Mask, redund_mask: &Mask, codes: &CodePair) -> Result<EncodedMessage> {
    encode_inner(idx, conf_mask, redund_mask, codes, true)
}

/// Like [`encode`] but with an empty base payload, for senders that do not
/// pre-hand an abstract. Every confidence-selected cell must also be selected
/// by `redund_mask`.
pub fn encode_without_abstract(
    idx: &IndexGrid,
    conf_mask: &Mask,
    redund_mask: &Mask,
    codes: &CodePair,
) -> Result<EncodedMessage> {
    if conf_mask.cells().iter().zip(redund_mask.cells()).any(|(&c, &r)| c && !r) {
        return Err(Error::InvalidArgument(
            "without an abstract every confidence-selected cell must be sent in full".into(),
        ));
    }
    encode_inner(idx, conf_mask, redund_mask, codes, false)
}

fn encode_inner(
    idx: &IndexGrid,
    conf_mask: &Mask,
    redund_mask: &Mask,
    codes: &CodePair,
    with_abstract: bool,
) -> Result<EncodedMessage> {
    let (h, w) = (idx.height(), idx.width());
    for m in [conf_mask, redund_mask] {
        if !idx.base.same_shape(m) {
            return Err(Error::ShapeMismatch {
                expected: format!("{h}x{w} mask"),
                got: format!("{}x{}", m.height(), m.width()),
            });
        }
    }
    let mut base_payload = BitWriter::new();
    let mut full_payload = BitWriter::new();
    for i in 0..h * w {
        if !conf_mask.cells()[i] {
            continue;
        }
        let b = idx.base.cells()[i];
        if with_abstract {
            codes.base.write(b, &mut base_payload)?;
        }
        if redund_mask.cells()[i] {
            codes.base.write(b, &mut full_payload)?;
            codes.res.write(idx.res.cells()[i], &mut full_payload)?;
        }
    }
    Ok(EncodedMessage {
        h,
        w,
        code_id: codes.variant.id(),
        conf_mask: conf_mask.clone(),
        redund_mask: redund_mask.clone(),
        base_payload,
        full_payload,
    })
}

/// Inverse of [`encode`] and [`encode_without_abstract`]. Both payloads must
/// be consumed exactly. An empty base payload with a nonempty confidence mask
/// marks a message sent without abstract.
pub fn decode(msg: &EncodedMessage, codes: &CodePair) -> Result<PartialIndexGrid> {
    if msg.code_id != codes.variant.id() {
        return Err(Error::Malformed(format!(
            "message coded with table {} but decoder holds {}",
            msg.code_id,
            codes.variant.id()
        )));
    }
    let n = msg.h * msg.w;
    let mut base = vec![None; n];
    let mut res = vec![None; n];
    let with_abstract = !msg.base_payload.is_empty() || msg.conf_mask.count_selected() == 0;
    let mut abs = msg.base_payload.reader();
    let mut full = msg.full_payload.reader();
    for i in 0..n {
        if !msg.conf_mask.cells()[i] {
            continue;
        }
        let abstract_b = if with_abstract {
            Some(codes.base.read(&mut abs, "base")?)
        } else {
            None
        };
        if msg.redund_mask.cells()[i] {
            let b = codes.base.read(&mut full, "full")?;
            if abstract_b.is_some_and(|a| a != b) {
                return Err(Error::Malformed(format!("base index mismatch at cell {i}")));
            }
            base[i] = Some(b);
            res[i] = Some(codes.res.read(&mut full, "full")?);
        } else if abstract_b.is_none() {
            return Err(Error::Malformed(format!("cell {i} selected without abstract or payload")));
        } else {
            base[i] = abstract_b;
        }
    }
    if abs.remaining() != 0 || full.remaining() != 0 {
        return Err(Error::Malformed("payload has unread bits".into()));
    }
    Ok(PartialIndexGrid {
        base: Grid::from_vec(msg.h, msg.w, base)?,
        res: Grid::from_vec(msg.h, msg.w, res)?,
    })
}

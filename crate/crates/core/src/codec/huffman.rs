//! Canonical Huffman coding over `u64` symbols.
//!
//! Only code lengths are stored. Codes are assigned in (length, symbol) order,
//! and bits are written most-significant first within each byte.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use crate::error::{Error, Result};

pub const MAX_CODE_LEN: u8 = 64;

/// Canonical codebook: `(symbol, length)` sorted by length, then symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    entries: Vec<(u64, u8)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Code {
    pub bits: u64,
    pub len: u8,
}

impl Code {
    /// The code as a string of '0' / '1'.
    pub fn to_bit_string(&self) -> String {
        (0..self.len)
            .rev()
            .map(|i| if (self.bits >> i) & 1 == 1 { '1' } else { '0' })
            .collect()
    }
}

impl Codebook {
    /// Validates and canonicalizes `(symbol, length)` pairs.
    pub fn from_lengths(mut entries: Vec<(u64, u8)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Integrity("empty codebook".into()));
        }
        entries.sort_by_key(|&(s, l)| (l, s));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Integrity(format!("symbol {} listed twice", w[0].0)));
            }
        }
        if entries.iter().any(|&(_, l)| l == 0 || l > MAX_CODE_LEN) {
            return Err(Error::Integrity("code length outside 1..=64".into()));
        }
        // Kraft sum must not exceed 1; computed exactly in units of 2^-64.
        let mut kraft: u128 = 0;
        for &(_, l) in &entries {
            kraft += 1u128 << (64 - l);
        }
        if kraft > 1u128 << 64 {
            return Err(Error::Integrity("code lengths violate the Kraft inequality".into()));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(u64, u8)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Canonical code assignment.
    pub fn codes(&self) -> Vec<(u64, Code)> {
        let mut out = Vec::with_capacity(self.entries.len());
        let mut code: u64 = 0;
        let mut prev_len = self.entries[0].1;
        for (i, &(sym, len)) in self.entries.iter().enumerate() {
            if i > 0 {
                code = (code + 1) << (len - prev_len);
            }
            prev_len = len;
            out.push((sym, Code { bits: code, len }));
        }
        out
    }

    pub fn code_map(&self) -> BTreeMap<u64, Code> {
        self.codes().into_iter().collect()
    }
}

/// Code lengths from symbol frequencies. Deterministic: ties in the merge
/// heap are resolved by creation order, leaves first in symbol order.
pub fn code_lengths(freqs: &BTreeMap<u64, u64>) -> Result<Vec<(u64, u8)>> {
    match freqs.len() {
        0 => return Err(Error::Config("cannot build a code for zero symbols".into())),
        1 => return Ok(vec![(*freqs.keys().next().expect("one key"), 1)]),
        _ => {}
    }
    // Nodes: leaves 0..n, internal nodes appended; parent links give depths.
    let symbols: Vec<u64> = freqs.keys().copied().collect();
    let mut parent: Vec<usize> = vec![usize::MAX; symbols.len()];
    let mut heap: BinaryHeap<Reverse<(u128, usize)>> = freqs
        .values()
        .enumerate()
        .map(|(i, &f)| Reverse((u128::from(f), i)))
        .collect();
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().expect("len > 1");
        let Reverse((wb, b)) = heap.pop().expect("len > 1");
        let id = parent.len();
        parent.push(usize::MAX);
        parent[a] = id;
        parent[b] = id;
        heap.push(Reverse((wa + wb, id)));
    }
    let mut depth = vec![0u32; parent.len()];
    for node in (0..parent.len()).rev() {
        if parent[node] != usize::MAX {
            depth[node] = depth[parent[node]] + 1;
        }
    }
    let mut out = Vec::with_capacity(symbols.len());
    for (i, &sym) in symbols.iter().enumerate() {
        if depth[i] > u32::from(MAX_CODE_LEN) {
            return Err(Error::Config(format!("code length {} exceeds 64 bits", depth[i])));
        }
        out.push((sym, depth[i] as u8));
    }
    Ok(out)
}

/// MSB-first bit writer.
#[derive(Default)]
pub(crate) struct BitWriter {
    bytes: Vec<u8>,
    bits: u64,
}

impl BitWriter {
    pub fn push(&mut self, code: Code) {
        for i in (0..code.len).rev() {
            let bit = (code.bits >> i) & 1;
            let pos = (self.bits % 8) as u8;
            if pos == 0 {
                self.bytes.push(0);
            }
            if bit == 1 {
                *self.bytes.last_mut().expect("pushed above") |= 0x80 >> pos;
            }
            self.bits += 1;
        }
    }

    pub fn finish(self) -> (Vec<u8>, u64) {
        (self.bytes, self.bits)
    }
}

/// Table-driven canonical decoder.
pub(crate) struct Decoder {
    /// Per length: first canonical code, number of codes, index of the first symbol.
    first: Vec<u64>,
    count: Vec<u64>,
    offset: Vec<usize>,
    symbols: Vec<u64>,
    max_len: u8,
}

impl Decoder {
    pub fn new(book: &Codebook) -> Self {
        let max_len = book.entries.last().expect("non-empty").1;
        let n = max_len as usize + 1;
        let mut first = vec![0u64; n];
        let mut count = vec![0u64; n];
        let mut offset = vec![0usize; n];
        let codes = book.codes();
        for (i, (_, code)) in codes.iter().enumerate().rev() {
            let l = code.len as usize;
            first[l] = code.bits;
            offset[l] = i;
            count[l] += 1;
        }
        Self {
            first,
            count,
            offset,
            symbols: book.entries.iter().map(|&(s, _)| s).collect(),
            max_len,
        }
    }

    /// Decodes exactly `n` symbols from the first `bit_len` bits of `bytes`.
    pub fn decode(&self, bytes: &[u8], bit_len: u64, n: usize) -> Result<Vec<u64>> {
        if bytes.len() as u64 * 8 < bit_len {
            return Err(Error::Integrity("payload shorter than its declared bit length".into()));
        }
        let mut out = Vec::with_capacity(n);
        let mut pos: u64 = 0;
        while out.len() < n {
            let mut code: u64 = 0;
            let mut len: usize = 0;
            loop {
                if pos >= bit_len {
                    return Err(Error::Integrity(format!(
                        "payload ended after {} of {n} symbols",
                        out.len()
                    )));
                }
                let bit = (bytes[(pos / 8) as usize] >> (7 - pos % 8)) & 1;
                pos += 1;
                code = (code << 1) | u64::from(bit);
                len += 1;
                if len > self.max_len as usize {
                    return Err(Error::Integrity(format!("no code matches at bit {pos}")));
                }
                if self.count[len] > 0 && code >= self.first[len] && code - self.first[len] < self.count[len] {
                    out.push(self.symbols[self.offset[len] + (code - self.first[len]) as usize]);
                    break;
                }
            }
        }
        if pos != bit_len {
            return Err(Error::Integrity(format!(
                "{} trailing payload bits after the last symbol",
                bit_len - pos
            )));
        }
        Ok(out)
    }
}

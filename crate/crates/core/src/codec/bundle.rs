//! The `WSNT` bundle: every task mask of a run, packed into per-weight
//! symbols and Huffman-coded.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "WSNT"  version:u8  tasks:u8
//! layers:u32   { numel:u64 } * layers
//! entries:u16  { symbol:u64 codelen:u8 } * entries
//! payload_bits:u64  payload bytes (ceil(bits / 8))
//! crc32:u32    CRC-32 of the payload bytes
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::huffman::{code_lengths, BitWriter, Codebook, Decoder};
use super::pack::{pack_layers, unpack_symbols, MAX_TASKS};
use crate::error::{Error, Result};
use crate::mask::{BitMask, TaskMask};

pub const MAGIC: &[u8; 4] = b"WSNT";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedTicketBundle {
    pub num_tasks: u8,
    pub layer_numels: Vec<u64>,
    pub codebook: Codebook,
    pub payload_bits: u64,
    pub payload: Vec<u8>,
    pub checksum: u32,
}

impl EncodedTicketBundle {
    /// Bits per uncompressed symbol; equal to the task count.
    pub fn symbol_width(&self) -> u8 {
        self.num_tasks
    }

    pub fn numel(&self) -> u64 {
        self.layer_numels.iter().sum()
    }

    /// `1 - payload_bits / (T * numel)`.
    pub fn compression_rate(&self) -> f64 {
        let raw = f64::from(self.num_tasks) * self.numel() as f64;
        if raw == 0.0 {
            0.0
        } else {
            1.0 - self.payload_bits as f64 / raw
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let entries = u16::try_from(self.codebook.len())
            .map_err(|_| Error::Range(format!("{} codebook entries exceed u16", self.codebook.len())))?;
        let mut out = Vec::with_capacity(32 + self.payload.len() + 9 * self.codebook.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.num_tasks);
        out.extend_from_slice(&(self.layer_numels.len() as u32).to_le_bytes());
        for &n in &self.layer_numels {
            out.extend_from_slice(&n.to_le_bytes());
        }
        out.extend_from_slice(&entries.to_le_bytes());
        for &(sym, len) in self.codebook.entries() {
            out.extend_from_slice(&sym.to_le_bytes());
            out.push(len);
        }
        out.extend_from_slice(&self.payload_bits.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out.extend_from_slice(&self.checksum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Integrity("bad magic, expected WSNT".into()));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::Integrity(format!("unsupported bundle version {version}")));
        }
        let num_tasks = r.u8()?;
        if num_tasks == 0 || num_tasks as usize > MAX_TASKS {
            return Err(Error::Integrity(format!("task count {num_tasks} outside 1..=64")));
        }
        let layers = r.u32()? as usize;
        let mut layer_numels = Vec::with_capacity(layers.min(1 << 16));
        for _ in 0..layers {
            layer_numels.push(r.u64()?);
        }
        let entries = r.u16()? as usize;
        let mut book = Vec::with_capacity(entries);
        for _ in 0..entries {
            let sym = r.u64()?;
            let len = r.u8()?;
            if num_tasks < 64 && sym >> num_tasks != 0 {
                return Err(Error::Integrity(format!("codebook symbol {sym} wider than {num_tasks} bits")));
            }
            book.push((sym, len));
        }
        let codebook = Codebook::from_lengths(book)?;
        let payload_bits = r.u64()?;
        let payload_len = usize::try_from(payload_bits.div_ceil(8))
            .map_err(|_| Error::Integrity("payload length overflows".into()))?;
        let payload = r.take(payload_len)?.to_vec();
        let checksum = r.u32()?;
        if r.pos != bytes.len() {
            return Err(Error::Integrity(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let bundle = Self {
            num_tasks,
            layer_numels,
            codebook,
            payload_bits,
            payload,
            checksum,
        };
        bundle.verify_checksum()?;
        Ok(bundle)
    }

    pub fn verify_checksum(&self) -> Result<()> {
        let actual = crc32fast::hash(&self.payload);
        if actual != self.checksum {
            return Err(Error::Integrity(format!(
                "checksum mismatch: stored {:08x}, computed {actual:08x}",
                self.checksum
            )));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Integrity(format!("truncated bundle: needed {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Huffman-codes a symbol stream of `width`-bit symbols as one layer.
pub fn huffman_encode(symbols: &[u64], width: u8) -> Result<EncodedTicketBundle> {
    encode_with_layers(symbols, width, vec![symbols.len() as u64])
}

fn encode_with_layers(symbols: &[u64], width: u8, layer_numels: Vec<u64>) -> Result<EncodedTicketBundle> {
    if symbols.is_empty() {
        return Err(Error::Config("cannot encode an empty symbol stream".into()));
    }
    if width == 0 || width as usize > MAX_TASKS {
        return Err(Error::Range(format!("symbol width {width} outside 1..=64")));
    }
    if width < 64 {
        if let Some(bad) = symbols.iter().find(|&&s| s >> width != 0) {
            return Err(Error::Range(format!("symbol {bad} wider than {width} bits")));
        }
    }
    let mut freqs: BTreeMap<u64, u64> = BTreeMap::new();
    for &s in symbols {
        *freqs.entry(s).or_default() += 1;
    }
    let codebook = Codebook::from_lengths(code_lengths(&freqs)?)?;
    let map = codebook.code_map();
    let mut writer = BitWriter::default();
    for s in symbols {
        writer.push(map[s]);
    }
    let (payload, payload_bits) = writer.finish();
    let checksum = crc32fast::hash(&payload);
    Ok(EncodedTicketBundle {
        num_tasks: width,
        layer_numels,
        codebook,
        payload_bits,
        payload,
        checksum,
    })
}

/// Verifies the checksum and decodes every symbol.
pub fn huffman_decode(bundle: &EncodedTicketBundle) -> Result<Vec<u64>> {
    bundle.verify_checksum()?;
    let n = usize::try_from(bundle.numel()).map_err(|_| Error::Integrity("symbol count overflows".into()))?;
    Decoder::new(&bundle.codebook).decode(&bundle.payload, bundle.payload_bits, n)
}

/// Packs and encodes the masks of tasks `1..=T`.
pub fn encode_masks(masks: &[TaskMask]) -> Result<EncodedTicketBundle> {
    let layers: Vec<&[BitMask]> = masks.iter().map(|m| m.layers.as_slice()).collect();
    encode_mask_layers(&layers)
}

pub fn encode_mask_layers(masks: &[&[BitMask]]) -> Result<EncodedTicketBundle> {
    let symbols = pack_layers(masks)?;
    let numels = masks[0].iter().map(|m| m.len() as u64).collect();
    encode_with_layers(&symbols, masks.len() as u8, numels)
}

/// Decodes per-task masks, reshaping layer `l` to `shapes[l]`.
pub fn decode_masks(bundle: &EncodedTicketBundle, shapes: &[(usize, usize)]) -> Result<Vec<Vec<BitMask>>> {
    let numels: Vec<u64> = shapes.iter().map(|&(r, c)| (r * c) as u64).collect();
    if numels != bundle.layer_numels {
        return Err(Error::dim(
            "decode_masks",
            format!("{:?}", bundle.layer_numels),
            format!("{numels:?}"),
        ));
    }
    let symbols = huffman_decode(bundle)?;
    unpack_symbols(&symbols, bundle.num_tasks as usize, shapes)
}

/// Decodes with every layer as a `1 x numel` row.
pub fn decode_masks_flat(bundle: &EncodedTicketBundle) -> Result<Vec<Vec<BitMask>>> {
    let shapes: Vec<(usize, usize)> = bundle.layer_numels.iter().map(|&n| (1, n as usize)).collect();
    decode_masks(bundle, &shapes)
}

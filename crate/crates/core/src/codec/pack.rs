use crate::error::{Error, Result};
use crate::mask::{BitMask, TaskMask};

pub const MAX_TASKS: usize = 64;

/// One symbol per weight: bit `T - t` of symbol `j` is `m_t[j]`, so task 1 is
/// the most significant bit. Layers are concatenated in order.
pub fn pack_symbols(masks: &[TaskMask]) -> Result<Vec<u64>> {
    let layers: Vec<&[BitMask]> = masks.iter().map(|m| m.layers.as_slice()).collect();
    pack_layers(&layers)
}

pub fn pack_layers(masks: &[&[BitMask]]) -> Result<Vec<u64>> {
    let t = masks.len();
    if t == 0 || t > MAX_TASKS {
        return Err(Error::Range(format!("task count {t} outside 1..={MAX_TASKS}")));
    }
    let shapes: Vec<(usize, usize)> = masks[0].iter().map(BitMask::shape).collect();
    for m in &masks[1..] {
        let s: Vec<(usize, usize)> = m.iter().map(BitMask::shape).collect();
        if s != shapes {
            return Err(Error::dim("pack_symbols", format!("{shapes:?}"), format!("{s:?}")));
        }
    }
    let numel: usize = shapes.iter().map(|(r, c)| r * c).sum();
    let mut symbols = vec![0u64; numel];
    for (ti, task) in masks.iter().enumerate() {
        let bit = 1u64 << (t - 1 - ti);
        let mut offset = 0;
        for layer in task.iter() {
            for i in layer.iter_ones() {
                symbols[offset + i] |= bit;
            }
            offset += layer.len();
        }
    }
    Ok(symbols)
}

/// Inverse of [`pack_layers`]: per task, one mask per `(rows, cols)` shape.
pub fn unpack_symbols(symbols: &[u64], num_tasks: usize, shapes: &[(usize, usize)]) -> Result<Vec<Vec<BitMask>>> {
    if num_tasks == 0 || num_tasks > MAX_TASKS {
        return Err(Error::Range(format!("task count {num_tasks} outside 1..={MAX_TASKS}")));
    }
    let numel: usize = shapes.iter().map(|(r, c)| r * c).sum();
    if numel != symbols.len() {
        return Err(Error::dim("unpack_symbols", numel, symbols.len()));
    }
    if num_tasks < 64 {
        if let Some(bad) = symbols.iter().find(|&&s| s >> num_tasks != 0) {
            return Err(Error::Range(format!("symbol {bad} wider than {num_tasks} bits")));
        }
    }
    let mut out: Vec<Vec<BitMask>> = (0..num_tasks)
        .map(|_| shapes.iter().map(|&(r, c)| BitMask::zeros(r, c)).collect())
        .collect();
    let mut offset = 0;
    for (l, &(r, c)) in shapes.iter().enumerate() {
        for (i, &sym) in symbols[offset..offset + r * c].iter().enumerate() {
            if sym == 0 {
                continue;
            }
            for (ti, task) in out.iter_mut().enumerate() {
                if (sym >> (num_tasks - 1 - ti)) & 1 == 1 {
                    task[l].set(i, true);
                }
            }
        }
        offset += r * c;
    }
    Ok(out)
}

use ndarray::Array2;

use crate::error::{Error, Result};

/// Dense row-major bit matrix backed by `u64` words.
///
/// Bits beyond `rows * cols` in the last word are always zero, so word-wise
/// popcounts and comparisons are exact.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    rows: usize,
    cols: usize,
    words: Vec<u64>,
}

impl std::fmt::Debug for BitMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BitMask({}x{}, ones={})", self.rows, self.cols, self.count_ones())
    }
}

#[inline]
fn word_count(len: usize) -> usize {
    len.div_ceil(64)
}

impl BitMask {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            words: vec![0; word_count(rows * cols)],
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        let mut m = Self::zeros(rows, cols);
        m.words.iter_mut().for_each(|w| *w = !0);
        m.clear_tail();
        m
    }

    pub fn from_bools(rows: usize, cols: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::dim("BitMask::from_bools", rows * cols, bits.len()));
        }
        let mut m = Self::zeros(rows, cols);
        for (i, &b) in bits.iter().enumerate() {
            if b {
                m.set(i, true);
            }
        }
        Ok(m)
    }

    /// Builds a mask from raw words; stray bits past the end are rejected.
    pub fn from_words(rows: usize, cols: usize, words: Vec<u64>) -> Result<Self> {
        let m = Self { rows, cols, words };
        if m.words.len() != word_count(rows * cols) {
            return Err(Error::dim("BitMask::from_words", word_count(rows * cols), m.words.len()));
        }
        let mut check = m.clone();
        check.clear_tail();
        if check != m {
            return Err(Error::Integrity("bits set past the end of the mask".into()));
        }
        Ok(m)
    }

    fn clear_tail(&mut self) {
        let len = self.len();
        let rem = len % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, index: usize) -> bool {
        debug_assert!(index < self.len());
        (self.words[index / 64] >> (index % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, index: usize, value: bool) {
        debug_assert!(index < self.len());
        let bit = 1u64 << (index % 64);
        if value {
            self.words[index / 64] |= bit;
        } else {
            self.words[index / 64] &= !bit;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn check_same_shape(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(
                context,
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, context: &'static str, f: impl Fn(u64, u64) -> u64) -> Result<Self> {
        self.check_same_shape(other, context)?;
        let mut out = Self {
            rows: self.rows,
            cols: self.cols,
            words: self.words.iter().zip(&other.words).map(|(&a, &b)| f(a, b)).collect(),
        };
        out.clear_tail();
        Ok(out)
    }

    pub fn or(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "BitMask::or", |a, b| a | b)
    }

    pub fn and(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "BitMask::and", |a, b| a & b)
    }

    /// `self AND NOT other`.
    pub fn and_not(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "BitMask::and_not", |a, b| a & !b)
    }

    pub fn not(&self) -> Self {
        let mut out = Self {
            rows: self.rows,
            cols: self.cols,
            words: self.words.iter().map(|w| !w).collect(),
        };
        out.clear_tail();
        out
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut rest = w;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let tz = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(wi * 64 + tz)
            })
        })
    }

    /// 0.0 / 1.0 matrix with the mask's shape.
    pub fn to_f64(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        let flat = out.as_slice_mut().expect("fresh array is contiguous");
        for i in self.iter_ones() {
            flat[i] = 1.0;
        }
        out
    }
}

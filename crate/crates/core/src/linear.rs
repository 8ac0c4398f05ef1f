//! Linear-counting bitmap for distinct-flow estimation.

use crate::error::Saturated;
use crate::flow::{table_index, FlowKey};

pub const DEFAULT_LC_SIZE: usize = 65536;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LinearCounter {
    words: Vec<u64>,
    m: usize,
    seed: u32,
    set: usize,
}

impl LinearCounter {
    pub fn new(m: usize, seed: u32) -> Self {
        assert!(m >= 1, "linear counter needs at least one cell");
        LinearCounter {
            words: vec![0; m.div_ceil(64)],
            m,
            seed,
            set: 0,
        }
    }

    pub fn cells(&self) -> usize {
        self.m
    }

    pub fn set_cells(&self) -> usize {
        self.set
    }

    pub fn zero_cells(&self) -> usize {
        self.m - self.set
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn is_set(&self, cell: usize) -> bool {
        self.words[cell / 64] >> (cell % 64) & 1 == 1
    }

    #[inline]
    pub fn cell_of(&self, key: &FlowKey) -> usize {
        table_index(key, self.seed, self.m)
    }

    #[inline]
    pub fn record(&mut self, key: &FlowKey) {
        let cell = self.cell_of(key);
        let word = &mut self.words[cell / 64];
        let bit = 1u64 << (cell % 64);
        if *word & bit == 0 {
            *word |= bit;
            self.set += 1;
        }
    }

    /// `-m ln(V/m)` with `V` the number of zero cells.
    pub fn estimate(&self) -> Result<f64, Saturated> {
        linear_estimate(self.m, self.zero_cells())
    }
}

/// The linear-counting estimator for `zero` empty cells out of `m`.
pub fn linear_estimate(m: usize, zero: usize) -> Result<f64, Saturated> {
    if zero == 0 {
        return Err(Saturated);
    }
    if zero == m {
        return Ok(0.0);
    }
    let m = m as f64;
    Ok(-m * (zero as f64 / m).ln())
}

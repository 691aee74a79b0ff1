use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Operation classes tracked by the counters, one per column of the kernel
/// cost table plus a fallback tally for out-of-range table lookups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    /// `e^x` and `2^x` share one column.
    Exp,
    Square,
    Sqrt,
    Shift,
    Lut,
    /// Lookup-table input out of range; the exact log path was used instead.
    LutFallback,
}

/// Per-scope operation tally.
///
/// A counter is owned by whoever runs the measurement and threaded through the
/// kernels by `&mut`; there is no global counter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounter {
    pub add: u64,
    pub sub: u64,
    pub mul: u64,
    pub div: u64,
    pub exp: u64,
    pub square: u64,
    pub sqrt: u64,
    pub shift: u64,
    pub lut: u64,
    #[serde(default)]
    pub lut_fallback: u64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn record(&mut self, op: Op, n: u64) {
        if cfg!(feature = "op-counters") {
            let slot = match op {
                Op::Add => &mut self.add,
                Op::Sub => &mut self.sub,
                Op::Mul => &mut self.mul,
                Op::Div => &mut self.div,
                Op::Exp => &mut self.exp,
                Op::Square => &mut self.square,
                Op::Sqrt => &mut self.sqrt,
                Op::Shift => &mut self.shift,
                Op::Lut => &mut self.lut,
                Op::LutFallback => &mut self.lut_fallback,
            };
            *slot += n;
        }
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    pub fn get(&self, op: Op) -> u64 {
        match op {
            Op::Add => self.add,
            Op::Sub => self.sub,
            Op::Mul => self.mul,
            Op::Div => self.div,
            Op::Exp => self.exp,
            Op::Square => self.square,
            Op::Sqrt => self.sqrt,
            Op::Shift => self.shift,
            Op::Lut => self.lut,
            Op::LutFallback => self.lut_fallback,
        }
    }

    /// No multiplications, divisions, exponentials, squares or square roots.
    pub fn is_multiplier_free(&self) -> bool {
        self.mul == 0 && self.div == 0 && self.exp == 0 && self.square == 0 && self.sqrt == 0
    }

    /// Counts compared on the table columns only (fallback tally ignored).
    pub fn same_table_counts(&self, other: &Self) -> bool {
        let strip = |c: &Self| Self {
            lut_fallback: 0,
            ..*c
        };
        strip(self) == strip(other)
    }
}

impl AddAssign for OpCounter {
    fn add_assign(&mut self, rhs: Self) {
        self.add += rhs.add;
        self.sub += rhs.sub;
        self.mul += rhs.mul;
        self.div += rhs.div;
        self.exp += rhs.exp;
        self.square += rhs.square;
        self.sqrt += rhs.sqrt;
        self.shift += rhs.shift;
        self.lut += rhs.lut;
        self.lut_fallback += rhs.lut_fallback;
    }
}

/// Whether this build carries operation counters.
pub const fn counters_enabled() -> bool {
    cfg!(feature = "op-counters")
}

/// Runs `f` against a fresh counter and returns what it recorded.
pub fn measure<T>(f: impl FnOnce(&mut OpCounter) -> Result<T>) -> Result<(T, OpCounter)> {
    if !counters_enabled() {
        return Err(Error::Unsupported(
            "operation counters are compiled out (feature `op-counters`)".into(),
        ));
    }
    let mut ops = OpCounter::new();
    let out = f(&mut ops)?;
    Ok((out, ops))
}

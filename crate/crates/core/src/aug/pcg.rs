//! PCG-XSH-RR 64/32, the decoder behind augmentation replay.

use crate::error::{Error, Result};

/// Generator state: a 64-bit LCG accumulator plus an odd stream increment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PcgState {
    state: u64,
    increment: u64,
}

impl PcgState {
    pub const MULTIPLIER: u64 = 6364136223846793005;

    /// Reference seeding (`pcg32_srandom_r`): the stream selector picks the
    /// increment, then the initial state is folded in between two steps.
    pub fn new(initstate: u64, stream: u64) -> Self {
        let mut rng = PcgState {
            state: 0,
            increment: (stream << 1) | 1,
        };
        rng.step();
        rng.state = rng.state.wrapping_add(initstate);
        rng.step();
        rng
    }

    /// Raw constructor. `None` when the increment is even.
    pub fn from_parts(state: u64, increment: u64) -> Option<Self> {
        (increment & 1 == 1).then_some(PcgState { state, increment })
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn increment(&self) -> u64 {
        self.increment
    }

    #[inline]
    fn step(&mut self) {
        self.state = self
            .state
            .wrapping_mul(Self::MULTIPLIER)
            .wrapping_add(self.increment);
    }

    /// Advances and returns the next output.
    #[inline]
    pub fn next_u32(&mut self) -> u32 {
        let old = self.state;
        self.step();
        let xorshifted = (((old >> 18) ^ old) >> 27) as u32;
        let rot = (old >> 59) as u32;
        xorshifted.rotate_right(rot)
    }

    /// `[0, 1)` sample with 32 bits of resolution.
    #[inline]
    pub fn unit(&mut self) -> f64 {
        unit_from(self.next_u32())
    }

    /// `(0, 1)` sample, safe as a logarithm argument.
    #[inline]
    pub fn unit_open(&mut self) -> f64 {
        (self.next_u32() as f64 + 0.5) * TWO_POW_NEG_32
    }

    /// One draw mapped into `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidRange { lo, hi });
        }
        Ok(scale_into(self.next_u32(), lo, hi))
    }

    /// One draw mapped onto `0..n` by multiply-shift.
    pub fn choice(&mut self, n: u32) -> Result<u32> {
        if n == 0 {
            return Err(Error::EmptyChoice);
        }
        Ok(bounded(self.next_u32(), n))
    }
}

/// Functional form of [`PcgState::next_u32`].
pub fn pcg_next_u32(mut state: PcgState) -> (PcgState, u32) {
    let out = state.next_u32();
    (state, out)
}

const TWO_POW_NEG_32: f64 = 1.0 / 4_294_967_296.0;

#[inline]
pub(crate) fn unit_from(draw: u32) -> f64 {
    draw as f64 * TWO_POW_NEG_32
}

/// Fixed-point scaling of a draw into `[lo, hi)`; results that round up to
/// `hi` are pulled back to `lo`.
#[inline]
pub(crate) fn scale_into(draw: u32, lo: f64, hi: f64) -> f64 {
    let v = lo + (hi - lo) * unit_from(draw);
    if v >= hi {
        lo
    } else {
        v
    }
}

#[inline]
pub(crate) fn bounded(draw: u32, n: u32) -> u32 {
    ((draw as u64 * n as u64) >> 32) as u32
}

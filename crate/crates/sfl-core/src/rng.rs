//! Deterministic random sampling for cascade perturbation draws.
//!
//! The generator is SplitMix64: a 64-bit counter stream through a fixed
//! avalanche mix. It is chosen for reproducibility, not cryptography; the
//! same seed yields the same draw sequence on every platform and thread
//! count, and the test suite freezes reference outputs for seeds 0 and 42.
//!
//! Extended-precision uniforms are assembled from whole 64-bit words, most
//! significant word first, so widening the precision refines a draw instead
//! of reshuffling it.

use rug::{Float, Integer};

use crate::bigscale::{BigReal, MIN_PRECISION};

/// SplitMix64 stream over a 64-bit state.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in [0, 1) at the given precision.
    ///
    /// Consumes ceil(precision / 64) words; the assembled integer times
    /// 2^(-64k) is exact at 64k bits and is then rounded to `precision`.
    pub fn unit_real(&mut self, precision: u32) -> BigReal {
        let p = precision.max(MIN_PRECISION);
        let words = p.div_ceil(64);
        let mut n = Integer::new();
        for _ in 0..words {
            n <<= 64;
            n += self.next_u64();
        }
        let exact = Float::with_val(64 * words, n) << -(64 * words as i32);
        BigReal::from_float(Float::with_val(p, exact))
    }

    /// Uniform draw in [low, high): low + u * (high - low) with u from
    /// [`Self::unit_real`] at the wider of the two endpoint precisions.
    ///
    /// Requires low < high; callers validate their windows first.
    pub fn draw_in(&mut self, low: &BigReal, high: &BigReal) -> BigReal {
        debug_assert!(low < high, "draw_in needs a nonempty window");
        let p = low.prec().max(high.prec());
        let u = self.unit_real(p);
        low.add(&u.mul(&high.sub(low)))
    }
}

/// Stable per-task seed for indexed parallel work: seed XOR task index.
///
/// Each task then owns an independent SplitMix64 stream, so results do not
/// depend on scheduling order or worker count.
pub fn task_seed(seed: u64, index: u64) -> u64 {
    seed ^ index
}

//! Counter-based Gaussian noise streams.
//!
//! Vacuum fields are drawn from keyed, stateless streams: the value of any
//! grid cell is a pure function of (master seed, realization index, field
//! lane, cell index). Realizations can therefore be generated in any order
//! and on any number of workers with bit-identical results, and the first
//! N realizations of a larger ensemble coincide with a smaller run.
//!
//! The mixer is the splitmix64 finalizer over a Weyl sequence; each cell
//! consumes two counters, turned into one complex Gaussian sample via
//! Box-Muller.

use crate::grid::{Field2D, SimGrid};
use num_complex::Complex64 as C64;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const KEY_TAG: u64 = 0xA076_1D64_78BD_642F;

/// splitmix64 finalizer: bijective avalanche mix of one word.
fn mix(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    z
}

/// Which vacuum lane a stream feeds. The two lanes of one realization must
/// be independent, so the lane index is part of the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseLane {
    IdlerVacuum = 0,
    SignalVacuum = 1,
}

/// Fully determined noise stream identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub master_seed: u64,
    pub realization: u64,
    pub lane: NoiseLane,
}

impl StreamKey {
    fn base(self) -> u64 {
        let mut h = mix(self.master_seed ^ KEY_TAG);
        h = mix(h.wrapping_add(self.realization.wrapping_mul(GOLDEN)));
        mix(h ^ (self.lane as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93))
    }
}

/// Uniform in (0, 1]: never returns 0, so ln() is always finite.
fn unit_open_at_zero(v: u64) -> f64 {
    ((v >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in [0, 1).
fn unit_open_at_one(v: u64) -> f64 {
    (v >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// One complex Gaussian sample for counter `cell`: re and im are
/// independent N(0, std^2).
pub fn complex_gaussian(key: StreamKey, cell: u64, std: f64) -> C64 {
    let base = key.base();
    let v1 = mix(base.wrapping_add((2 * cell).wrapping_mul(GOLDEN)));
    let v2 = mix(base.wrapping_add((2 * cell + 1).wrapping_mul(GOLDEN)));
    let u1 = unit_open_at_zero(v1);
    let u2 = unit_open_at_one(v2);
    let r = (-2.0 * u1.ln()).sqrt() * std;
    let theta = 2.0 * std::f64::consts::PI * u2;
    C64::new(r * theta.cos(), r * theta.sin())
}

/// One real Gaussian sample N(0, std^2) for counter `cell`.
pub fn real_gaussian(key: StreamKey, cell: u64, std: f64) -> f64 {
    complex_gaussian(key, cell, std).re
}

/// Fills a whole grid with the stream's samples, cell counter = row-major
/// index.
pub fn gaussian_field(key: StreamKey, grid: &SimGrid, std: f64) -> Field2D {
    let mut field = Field2D::zeros(grid);
    for (i, v) in field.data.iter_mut().enumerate() {
        *v = complex_gaussian(key, i as u64, std);
    }
    field
}

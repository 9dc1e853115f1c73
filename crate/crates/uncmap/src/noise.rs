//! Deterministic, index-addressable noise streams.
//!
//! Every draw is a pure function of `(seed, stream, a, b, c)`, so values do
//! not depend on evaluation order, platform, or how work is partitioned
//! across threads. Monte-Carlo sampling indexes the stream by
//! `(pixel, class, sample)`, which makes per-pixel parallelism safe and
//! keeps results bit-identical across runs.
//!
//! The generator is a splitmix64 chain over the index tuple followed by a
//! Box-Muller transform for Gaussian draws. Two 64-bit words are derived per
//! index, so consumption is fixed and random access is O(1).

/// Independent noise domains. Mixed into the stream so that, for example,
/// logit noise in a generated scene never aliases the Monte-Carlo draws used
/// to score it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Reparameterized Monte-Carlo logit samples.
    McSample = 1,
    /// Scene-generation perturbations of the logit means.
    MuNoise = 2,
    /// Candidate-trajectory shape/amplitude draws.
    CandidateShape = 3,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix(state: u64) -> u64 {
    let mut z = state.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix(seed: u64, stream: Stream, a: u64, b: u64, c: u64) -> u64 {
    let mut h = splitmix(seed);
    h = splitmix(h ^ (stream as u64));
    h = splitmix(h ^ a);
    h = splitmix(h ^ b);
    h = splitmix(h ^ c)
    ;
    h
}

/// Map the high 53 bits to (0, 1]. The +1 keeps the value away from zero so
/// it is always a valid argument to `ln`.
fn unit_open_closed(x: u64) -> f64 {
    ((x >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

/// Map the high 53 bits to [0, 1).
fn unit_closed_open(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

/// Uniform draw in [0, 1) at the given index.
pub fn uniform(seed: u64, stream: Stream, a: u64, b: u64, c: u64) -> f64 {
    unit_closed_open(mix(seed, stream, a, b, c))
}

/// Standard normal draw at the given index (Box-Muller).
pub fn standard_normal(seed: u64, stream: Stream, a: u64, b: u64, c: u64) -> f64 {
    let h = mix(seed, stream, a, b, c);
    let u1 = unit_open_closed(h);
    let u2 = unit_closed_open(splitmix(h ^ GOLDEN));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

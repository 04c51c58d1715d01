//! Reproducible random-number streams for parallel Monte Carlo.
//!
//! Every random quantity in a simulation is a pure function of a
//! [`StreamKey`] = (experiment seed, replica index, step index, substream
//! tag), so replicas can be scheduled concurrently in any order and any
//! draw can be replayed bit-exactly.  The construction:
//!
//! * the 64-bit experiment seed is expanded to a 256-bit ChaCha key by
//!   SplitMix64;
//! * the ChaCha stream id is `replica << 2 | substream`, giving each replica
//!   three independent substreams: Gaussian increments (`GaussW`), the
//!   auxiliary sign matrix of the second-order scheme (`AuxV`), and the
//!   initial state (`Init`);
//! * the position inside a stream is the step index times the fixed number
//!   of 32-bit words a step consumes (two words per `u64`; `GaussW` consumes
//!   `d` u64 per step, `AuxV` exactly one).
//!
//! Because consumption per step is fixed, a sequential pass over a replica
//! ([`ReplicaStreams`]) produces the identical values as random access via
//! [`gaussian_increment`] — there is a contract test for this — while paying
//! no per-step reseek cost.
//!
//! Uniform-to-Gaussian conversion uses Wichura's PPND16 rational
//! approximation of the inverse normal CDF (absolute accuracy near 1e-15,
//! checked against an independent implementation), applied to
//! `u = (x >> 11) * 2^-53 + 2^-54 ∈ (0, 1)`.  All draws are generated in
//! `f64` and then converted to the target scalar type, so `f32` and `f64`
//! simulations consume identical underlying streams.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Real;

/// Substream tag within a replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Substream {
    /// Gaussian increments driving both the state and the weight process.
    GaussW,
    /// Sign matrix V of the second-order scheme.
    AuxV,
    /// Initial state of the replica.
    Init,
}

impl Substream {
    fn code(self) -> u64 {
        match self {
            Substream::GaussW => 0,
            Substream::AuxV => 1,
            Substream::Init => 2,
        }
    }
}

/// Addresses one step's draw within one replica of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub replica: u64,
    pub step: u64,
    pub substream: Substream,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn chacha_key(seed: u64) -> [u8; 32] {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

/// A ChaCha stream positioned at word 0 of the given replica substream.
pub fn stream_rng(seed: u64, replica: u64, substream: Substream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(chacha_key(seed));
    rng.set_stream((replica << 2) | substream.code());
    rng
}

const INV_2_53: f64 = 1.110_223_024_625_156_5e-16; // 2^-53
const INV_2_54: f64 = 5.551_115_123_125_783e-17; // 2^-54

/// Map a raw 64-bit word to the open interval (0, 1), using the top 53 bits.
#[inline]
fn u64_to_open01(x: u64) -> f64 {
    let u = (x >> 11) as f64 * INV_2_53 + INV_2_54;
    if u >= 1.0 {
        // A single top code point rounds up to 1.0 under ties-to-even; fold
        // it to the largest double below 1 to keep the quantile finite.
        1.0 - INV_2_53
    } else {
        u
    }
}

/// Inverse of the standard normal CDF (Wichura's PPND16 approximation).
/// Requires `p` in the open interval (0, 1).
#[allow(clippy::excessive_precision)]
pub fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = q
            * (((((((2.509_080_928_730_122_6727e3 * r + 3.343_057_558_358_812_8105e4) * r
                + 6.726_577_092_700_870_0853e4)
                * r
                + 4.592_195_393_154_987_1457e4)
                * r
                + 1.373_169_376_550_946_1125e4)
                * r
                + 1.971_590_950_306_551_4427e3)
                * r
                + 1.331_416_678_917_843_7745e2)
                * r
                + 3.387_132_872_796_366_6080e0);
        let den = ((((((5.226_495_278_852_854_5610e3 * r + 2.872_908_573_572_194_2674e4) * r
            + 3.930_789_580_009_271_0610e4)
            * r
            + 2.121_379_430_158_659_5867e4)
            * r
            + 5.394_196_021_424_751_1077e3)
            * r
            + 6.871_870_074_920_579_0830e2)
            * r
            + 4.231_333_070_160_091_1252e1)
            * r
            + 1.0;
        return num / den;
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414_0764e-4 * r + 2.272_384_498_926_918_458_33e-2)
            * r
            + 2.417_807_251_774_506_1177e-1)
            * r
            + 1.270_458_252_452_368_382_58e0)
            * r
            + 3.647_848_324_763_204_605_04e0)
            * r
            + 5.769_497_221_460_691_4055e0)
            * r
            + 4.630_337_846_156_545_2959e0)
            * r
            + 1.423_437_110_749_683_577_34e0;
        let den = ((((((1.050_750_071_644_416_843_24e-9 * r
            + 5.475_938_084_995_344_946e-4)
            * r
            + 1.519_866_656_361_645_719_66e-2)
            * r
            + 1.481_039_764_274_800_7459e-1)
            * r
            + 6.897_673_349_851_000_0455e-1)
            * r
            + 1.676_384_830_183_803_8494e0)
            * r
            + 2.053_191_626_637_758_821_87e0)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_132_65e-7 * r
            + 2.711_555_568_743_487_578_15e-5)
            * r
            + 1.242_660_947_388_078_4386e-3)
            * r
            + 2.653_218_952_657_612_3093e-2)
            * r
            + 2.965_605_718_285_048_9123e-1)
            * r
            + 1.784_826_539_917_291_3358e0)
            * r
            + 5.463_784_911_164_114_3699e0)
            * r
            + 6.657_904_643_501_103_7772e0;
        let den = ((((((2.044_263_103_389_939_785_64e-15 * r
            + 1.421_511_758_316_445_8887e-7)
            * r
            + 1.846_318_317_510_054_6818e-5)
            * r
            + 7.868_691_311_456_132_591e-4)
            * r
            + 1.487_536_129_085_061_485_25e-2)
            * r
            + 1.369_298_809_227_358_0531e-1)
            * r
            + 5.998_322_065_558_879_3769e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Standard normal deviate from one raw 64-bit word.
#[inline]
pub fn standard_normal_from_u64(x: u64) -> f64 {
    inverse_normal_cdf(u64_to_open01(x))
}

/// Number of 32-bit stream words one step consumes in the `GaussW` substream.
#[inline]
fn gauss_words_per_step(dim: usize) -> u128 {
    2 * dim as u128
}

/// Keyed one-shot draw of the `d` Gaussian increments of a step, each
/// distributed N(0, h).  `key.substream` must be `GaussW`.
pub fn gaussian_increment<T: Real>(key: &StreamKey, h: f64, out: &mut [T]) {
    debug_assert_eq!(key.substream, Substream::GaussW);
    let d = out.len();
    let mut rng = stream_rng(key.seed, key.replica, Substream::GaussW);
    rng.set_word_pos(key.step as u128 * gauss_words_per_step(d));
    let sqrt_h = h.sqrt();
    for o in out.iter_mut() {
        *o = T::of(standard_normal_from_u64(rng.next_u64()) * sqrt_h);
    }
}

/// Keyed one-shot draw of the auxiliary matrix V of a step (row-major
/// `d x d`): diagonal entries are `-h`; strictly lower-triangular entries are
/// independent signs `±h` consuming `d(d-1)/2` bits of one 64-bit word
/// (LSB-first, row-major); upper-triangular entries are the negatives of
/// their transposes.  For `d = 1` the matrix is deterministic and no stream
/// word is consumed.  `key.substream` must be `AuxV`.
pub fn sample_v<T: Real>(key: &StreamKey, h: f64, d: usize, out: &mut [T]) {
    debug_assert_eq!(key.substream, Substream::AuxV);
    debug_assert!(d * (d - 1) / 2 <= 64, "sign bits must fit one word");
    debug_assert_eq!(out.len(), d * d);
    let hh = T::of(h);
    for i in 0..d {
        out[i * d + i] = -hh;
    }
    if d == 1 {
        return;
    }
    let mut rng = stream_rng(key.seed, key.replica, Substream::AuxV);
    rng.set_word_pos(key.step as u128 * 2);
    let bits = rng.next_u64();
    let mut k = 0u32;
    for i in 1..d {
        for j in 0..i {
            let v = if (bits >> k) & 1 == 1 { hh } else { -hh };
            out[i * d + j] = v;
            out[j * d + i] = -v;
            k += 1;
        }
    }
}

/// Uniform initial state in `[0, 1)^d` from the replica's `Init` substream.
pub fn initial_point<T: Real>(seed: u64, replica: u64, out: &mut [T]) {
    let mut rng = stream_rng(seed, replica, Substream::Init);
    for o in out.iter_mut() {
        *o = T::of(u64_to_open01(rng.next_u64()));
    }
}

/// Sequential per-replica stream front-end for the hot loop: draws the same
/// values as the keyed one-shot functions, in step order, without reseeking.
pub struct ReplicaStreams {
    gauss: ChaCha8Rng,
    aux: ChaCha8Rng,
}

impl ReplicaStreams {
    pub fn new(seed: u64, replica: u64) -> Self {
        ReplicaStreams {
            gauss: stream_rng(seed, replica, Substream::GaussW),
            aux: stream_rng(seed, replica, Substream::AuxV),
        }
    }

    /// Fill `out` with the next step's Gaussian increments, each N(0, h).
    #[inline]
    pub fn next_gaussian_increment<T: Real>(&mut self, sqrt_h: f64, out: &mut [T]) {
        for o in out.iter_mut() {
            *o = T::of(standard_normal_from_u64(self.gauss.next_u64()) * sqrt_h);
        }
    }

    /// Fill `out` (row-major `d x d`) with the next step's V matrix.
    /// Consumes one word of the auxiliary stream for `d >= 2`, none for
    /// `d = 1`.
    #[inline]
    pub fn next_v<T: Real>(&mut self, h: f64, d: usize, out: &mut [T]) {
        let hh = T::of(h);
        for i in 0..d {
            out[i * d + i] = -hh;
        }
        if d == 1 {
            return;
        }
        let bits = self.aux.next_u64();
        let mut k = 0u32;
        for i in 1..d {
            for j in 0..i {
                let v = if (bits >> k) & 1 == 1 { hh } else { -hh };
                out[i * d + j] = v;
                out[j * d + i] = -v;
                k += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Reference pairs (raw u64, standard normal) computed independently and
    /// cross-checked against a second inverse-CDF implementation.
    const NORMAL_REFS: &[(u64, f64)] = &[
        (0, -8.292361075813595),
        (1, -8.292361075813595), // low 11 bits discarded
        (4503599627370496, -3.48710410411437),
        (9007199254740991, -3.2971933456919955),
        (9223372036854775808, 0.0),
        (1234567890123456789, -1.4990829319923495),
        (98765432109876543, -2.552080755012269),
        (u64::MAX, 8.209536151601386), // top code point, clamped into (0,1)
    ];

    #[test]
    fn normal_transform_matches_references() {
        for &(x, want) in NORMAL_REFS {
            let got = standard_normal_from_u64(x);
            assert!(
                (got - want).abs() <= 1e-13 * want.abs().max(1.0),
                "u64={x}: got {got}, want {want}"
            );
        }
    }

    #[test]
    fn inverse_cdf_canonical_quantiles() {
        assert!((inverse_normal_cdf(0.975) - 1.959963984540054).abs() < 1e-12);
        assert!((inverse_normal_cdf(0.1) - (-1.2815515655446004)).abs() < 1e-12);
        assert!((inverse_normal_cdf(1e-9) - (-5.9978070150076865)).abs() < 1e-12);
        assert_eq!(inverse_normal_cdf(0.5), 0.0);
        // Antisymmetry about 1/2.
        for &p in &[0.01, 0.2, 0.4999, 0.123456] {
            let a = inverse_normal_cdf(p);
            let b = inverse_normal_cdf(1.0 - p);
            assert!((a + b).abs() < 1e-13, "p={p}");
        }
    }

    #[test]
    fn keyed_draws_are_deterministic() {
        let key = StreamKey {
            seed: 42,
            replica: 7,
            step: 1234,
            substream: Substream::GaussW,
        };
        let mut a = [0.0f64; 2];
        let mut b = [0.0f64; 2];
        gaussian_increment(&key, 0.01, &mut a);
        gaussian_increment(&key, 0.01, &mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn substreams_and_replicas_separate() {
        let base = StreamKey {
            seed: 3,
            replica: 5,
            step: 9,
            substream: Substream::GaussW,
        };
        let mut g = [0.0f64; 1];
        gaussian_increment(&base, 1.0, &mut g);

        let mut other_replica = [0.0f64; 1];
        gaussian_increment(
            &StreamKey {
                replica: 6,
                ..base
            },
            1.0,
            &mut other_replica,
        );
        assert_ne!(g, other_replica);

        let mut other_step = [0.0f64; 1];
        gaussian_increment(&StreamKey { step: 10, ..base }, 1.0, &mut other_step);
        assert_ne!(g, other_step);

        let mut other_seed = [0.0f64; 1];
        gaussian_increment(&StreamKey { seed: 4, ..base }, 1.0, &mut other_seed);
        assert_ne!(g, other_seed);
    }

    #[test]
    fn sequential_stream_matches_keyed_access() {
        let (seed, replica, d, h) = (11u64, 13u64, 2usize, 0.05f64);
        let mut seq = ReplicaStreams::new(seed, replica);
        let sqrt_h = h.sqrt();
        for step in 0..200u64 {
            let mut from_seq = [0.0f64; 2];
            seq.next_gaussian_increment(sqrt_h, &mut from_seq);
            let mut from_key = [0.0f64; 2];
            gaussian_increment(
                &StreamKey {
                    seed,
                    replica,
                    step,
                    substream: Substream::GaussW,
                },
                h,
                &mut from_key,
            );
            assert_eq!(from_seq, from_key, "step {step}");

            let mut v_seq = [0.0f64; 4];
            seq.next_v(h, d, &mut v_seq);
            let mut v_key = [0.0f64; 4];
            sample_v(
                &StreamKey {
                    seed,
                    replica,
                    step,
                    substream: Substream::AuxV,
                },
                h,
                d,
                &mut v_key,
            );
            assert_eq!(v_seq, v_key, "step {step}");
        }
    }

    #[test]
    fn v_matrix_structure() {
        let h = 0.03;
        let mut v1 = [0.0f64; 1];
        sample_v(
            &StreamKey {
                seed: 0,
                replica: 0,
                step: 0,
                substream: Substream::AuxV,
            },
            h,
            1,
            &mut v1,
        );
        assert_eq!(v1, [-h]);

        for step in 0..50 {
            let mut v = [0.0f64; 9];
            sample_v(
                &StreamKey {
                    seed: 1,
                    replica: 2,
                    step,
                    substream: Substream::AuxV,
                },
                h,
                3,
                &mut v,
            );
            for i in 0..3 {
                assert_eq!(v[i * 3 + i], -h);
                for j in 0..i {
                    assert_eq!(v[i * 3 + j].abs(), h);
                    assert_eq!(v[j * 3 + i], -v[i * 3 + j]);
                }
            }
        }
    }

    #[test]
    fn f32_draws_match_f64_stream() {
        let key = StreamKey {
            seed: 9,
            replica: 1,
            step: 3,
            substream: Substream::GaussW,
        };
        let mut a64 = [0.0f64; 2];
        let mut a32 = [0.0f32; 2];
        gaussian_increment(&key, 0.01, &mut a64);
        gaussian_increment(&key, 0.01, &mut a32);
        for i in 0..2 {
            assert_eq!(a32[i], a64[i] as f32);
        }
    }

    #[test]
    fn initial_point_in_unit_cube_and_deterministic() {
        let mut a = [0.0f64; 2];
        let mut b = [0.0f64; 2];
        initial_point(5, 77, &mut a);
        initial_point(5, 77, &mut b);
        assert_eq!(a, b);
        for &c in &a {
            assert!((0.0..1.0).contains(&c));
        }
        let mut other = [0.0f64; 2];
        initial_point(5, 78, &mut other);
        assert_ne!(a, other);
    }
}

//! Mid-value selection over three `f32` signals.
//!
//! Two selectors are provided: the nearest-to-mean rule, which breaks down
//! when a large value absorbs the two small ones during the sum, and the
//! comparison-only `max(min(a, b), min(max(a, b), c))` form. Every operation
//! here stays in `f32`; nothing is widened to `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("triple component `{component}` is not finite (bits {bits:#010x})")]
pub struct NonFiniteInput {
    pub component: char,
    pub bits: u32,
}

/// Three finite single-precision values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f32; 3]", into = "[f32; 3]")]
pub struct Triple32 {
    a: f32,
    b: f32,
    c: f32,
}

impl Triple32 {
    pub fn new(a: f32, b: f32, c: f32) -> Result<Self, NonFiniteInput> {
        for (component, v) in [('a', a), ('b', b), ('c', c)] {
            if !v.is_finite() {
                return Err(NonFiniteInput {
                    component,
                    bits: v.to_bits(),
                });
            }
        }
        Ok(Self { a, b, c })
    }

    pub fn from_bits(a: u32, b: u32, c: u32) -> Result<Self, NonFiniteInput> {
        Self::new(f32::from_bits(a), f32::from_bits(b), f32::from_bits(c))
    }

    /// The redundant-signal triple exposing the absorption bug:
    /// a = 1.813356e+24, b = 2.328307e-10, c = 1.999512, taken from their
    /// exact binary encodings.
    pub fn absorption_case() -> Self {
        Self::from_bits(ABSORPTION_BITS[0], ABSORPTION_BITS[1], ABSORPTION_BITS[2])
            .expect("constant triple is finite")
    }

    pub fn a(&self) -> f32 {
        self.a
    }

    pub fn b(&self) -> f32 {
        self.b
    }

    pub fn c(&self) -> f32 {
        self.c
    }

    pub fn values(&self) -> [f32; 3] {
        [self.a, self.b, self.c]
    }
}

impl TryFrom<[f32; 3]> for Triple32 {
    type Error = NonFiniteInput;

    fn try_from(v: [f32; 3]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1], v[2])
    }
}

impl From<Triple32> for [f32; 3] {
    fn from(t: Triple32) -> Self {
        t.values()
    }
}

/// Bit patterns of the absorption triple (a, b, c).
pub const ABSORPTION_BITS: [u32; 3] = [0x67BF_FF1A, 0x2F80_0002, 0x3FFF_F000];

/// Sum of the three components, left to right, in `f32`.
pub fn sum32(t: &Triple32) -> f32 {
    (t.a + t.b) + t.c
}

/// Arithmetic mean computed in `f32`.
pub fn mean32(t: &Triple32) -> f32 {
    sum32(t) / 3.0f32
}

/// Picks the component closest to the `f32` mean; ties go to the earliest
/// component in (a, b, c) order.
pub fn mid_by_mean(t: &Triple32) -> f32 {
    let mu = mean32(t);
    let mut best = t.a;
    let mut best_dist = (t.a - mu).abs();
    for v in [t.b, t.c] {
        let d = (v - mu).abs();
        if d < best_dist {
            best = v;
            best_dist = d;
        }
    }
    best
}

/// Comparison-only median: `max(min(a, b), min(max(a, b), c))`.
pub fn mid_by_minmax(t: &Triple32) -> f32 {
    let lo = t.a.min(t.b);
    let hi = t.a.max(t.b);
    lo.max(hi.min(t.c))
}

/// How candidate triples are drawn by [`divergence_search_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    /// Uniform biased exponent over all finite normal values, random sign
    /// and mantissa, so magnitudes spread across the whole range.
    ExponentStratified,
    /// Uniform draws from `[lo, hi]`.
    Interval { lo: f32, hi: f32 },
}

/// Samples `count` triples with exponent-stratified magnitudes and returns
/// the ones where the two selectors disagree.
pub fn divergence_search(count: usize, seed: u64) -> Vec<Triple32> {
    divergence_search_with(count, seed, Sampling::ExponentStratified)
}

pub fn divergence_search_with(count: usize, seed: u64, sampling: Sampling) -> Vec<Triple32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..count).map(|_| {
        let mut draw = || match sampling {
            Sampling::ExponentStratified => {
                let sign: u32 = rng.gen_range(0..=1);
                let exponent: u32 = rng.gen_range(1..=254);
                let mantissa: u32 = rng.gen_range(0..(1 << 23));
                f32::from_bits((sign << 31) | (exponent << 23) | mantissa)
            }
            Sampling::Interval { lo, hi } => rng.gen_range(lo..=hi),
        };
        let (a, b, c) = (draw(), draw(), draw());
        Triple32::new(a, b, c).expect("sampled values are finite")
    });
    divergences(samples)
}

/// Filters `samples` down to the triples where the selectors disagree.
pub fn divergences(samples: impl IntoIterator<Item = Triple32>) -> Vec<Triple32> {
    samples
        .into_iter()
        .filter(|t| mid_by_mean(t) != mid_by_minmax(t))
        .collect()
}

/// Binary rendering grouped by byte, e.g. `01100111 10111111 11111111 00011010`.
pub fn bits_grouped(v: f32) -> String {
    let raw = format!("{:032b}", v.to_bits());
    raw.as_bytes()
        .chunks(8)
        .map(|c| std::str::from_utf8(c).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Distance in units in the last place between two finite values of the
/// same sign.
pub fn ulp_distance(x: f32, y: f32) -> u32 {
    let key = |v: f32| {
        let b = v.to_bits() as i64;
        if b & 0x8000_0000 != 0 {
            -(b & 0x7FFF_FFFF)
        } else {
            b
        }
    };
    (key(x) - key(y)).unsigned_abs() as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sort_middle(t: &Triple32) -> f32 {
        let mut v = t.values();
        v.sort_by(|x, y| x.partial_cmp(y).unwrap());
        v[1]
    }

    #[test]
    fn absorption_case_selects_b_by_mean_and_c_by_minmax() {
        let t = Triple32::absorption_case();
        assert_eq!(mid_by_mean(&t).to_bits(), t.b().to_bits());
        assert_eq!(mid_by_minmax(&t).to_bits(), t.c().to_bits());
    }

    #[test]
    fn absorption_sum_equals_a() {
        let t = Triple32::absorption_case();
        assert_eq!(sum32(&t).to_bits(), t.a().to_bits());
    }

    #[test]
    fn binary_renderings_match_reference_patterns() {
        let t = Triple32::absorption_case();
        assert_eq!(bits_grouped(t.a()), "01100111 10111111 11111111 00011010");
        assert_eq!(bits_grouped(t.b()), "00101111 10000000 00000000 00000010");
        assert_eq!(bits_grouped(t.c()), "00111111 11111111 11110000 00000000");
    }

    #[test]
    fn decimal_literals_also_reproduce_the_bug() {
        let t = Triple32::new(1.813356e24, 2.328307e-10, 1.999512).unwrap();
        assert_eq!(mid_by_mean(&t), t.b());
        assert_eq!(mid_by_minmax(&t), t.c());
    }

    #[test]
    fn trivial_triples() {
        let ones = Triple32::new(1.0, 1.0, 1.0).unwrap();
        assert_eq!(mid_by_mean(&ones), 1.0);
        let ordered = Triple32::new(1.0, 2.0, 3.0).unwrap();
        assert_eq!(mid_by_mean(&ordered), 2.0);
        let perm = Triple32::new(3.0, 1.0, 2.0).unwrap();
        assert_eq!(mid_by_minmax(&perm), 2.0);
    }

    #[test]
    fn tie_goes_to_earliest_component() {
        // mean 1.0: a and c are both at distance 1
        let t = Triple32::new(0.0, 3.0, -0.0).unwrap();
        assert_eq!(mid_by_mean(&t).to_bits(), 0.0f32.to_bits());
        let t = Triple32::new(-0.0, 3.0, 0.0).unwrap();
        assert_eq!(mid_by_mean(&t).to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn non_finite_rejected() {
        let err = Triple32::new(1.0, f32::NAN, 2.0).unwrap_err();
        assert_eq!(err.component, 'b');
        assert!(Triple32::new(f32::INFINITY, 0.0, 0.0).is_err());
    }

    #[test]
    fn divergence_search_is_deterministic_and_finds_spread_cases() {
        let first = divergence_search(20_000, 7);
        let second = divergence_search(20_000, 7);
        assert_eq!(first, second);
        assert!(!first.is_empty());
        let spread = first.iter().any(|t| {
            let mags: Vec<i32> = t
                .values()
                .iter()
                .map(|v| ((v.to_bits() >> 23) & 0xFF) as i32)
                .collect();
            mags.iter().max().unwrap() - mags.iter().min().unwrap() > 40
        });
        assert!(spread);
    }

    #[test]
    fn absorption_case_survives_the_filter() {
        let mut samples = vec![Triple32::new(1.0, 2.0, 3.0).unwrap()];
        samples.push(Triple32::absorption_case());
        let found = divergences(samples);
        assert_eq!(found, vec![Triple32::absorption_case()]);
    }

    #[test]
    fn ulp_distance_counts_representable_steps() {
        let x = 1.0f32;
        let y = f32::from_bits(x.to_bits() + 3);
        assert_eq!(ulp_distance(x, y), 3);
        assert_eq!(ulp_distance(y, x), 3);
    }

    proptest! {
        #[test]
        fn minmax_matches_sort_middle(a in any::<u32>(), b in any::<u32>(), c in any::<u32>()) {
            if let Ok(t) = Triple32::from_bits(a, b, c) {
                prop_assert_eq!(mid_by_minmax(&t), sort_middle(&t));
            }
        }

        #[test]
        fn minmax_is_permutation_invariant(a in -1e30f32..1e30, b in -1e30f32..1e30, c in -1e30f32..1e30) {
            let base = mid_by_minmax(&Triple32::new(a, b, c).unwrap());
            for (x, y, z) in [(a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)] {
                prop_assert_eq!(mid_by_minmax(&Triple32::new(x, y, z).unwrap()), base);
            }
        }
    }
}

//! Component sequence generation: maximal-length LFSR sequences with
//! two-valued cyclic autocorrelation, plus the measured correlation
//! profile the 2D pilot construction relies on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// LFSR specification. `taps` is the full polynomial coefficient mask over
/// GF(2) including the x^degree and constant terms, e.g. degree 6 with
/// taps 0x43 for x^6 + x + 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MSequenceSpec {
    pub degree: u32,
    pub taps: u64,
    pub seed_state: u64,
}

impl MSequenceSpec {
    pub fn new(degree: u32, taps: u64, seed_state: u64) -> Self {
        Self { degree, taps, seed_state }
    }

    /// Default primitive polynomial for a degree, with an index selecting
    /// among distinct primitive polynomials (0 or 1).
    pub fn default_for_degree(degree: u32, which: usize) -> Result<Self> {
        // Two primitive polynomials per degree; primitivity is re-verified
        // by period measurement in generate().
        const PRIMARY: [(u32, u64); 9] = [
            (2, 0x7),   // x^2+x+1
            (3, 0xb),   // x^3+x+1
            (4, 0x13),  // x^4+x+1
            (5, 0x25),  // x^5+x^2+1
            (6, 0x43),  // x^6+x+1
            (7, 0x89),  // x^7+x^3+1
            (8, 0x11d), // x^8+x^4+x^3+x^2+1
            (9, 0x211), // x^9+x^4+1
            (10, 0x409), // x^10+x^3+1
        ];
        const ALTERNATE: [(u32, u64); 9] = [
            (2, 0x7),   // only one primitive polynomial of degree 2
            (3, 0xd),   // x^3+x^2+1
            (4, 0x19),  // x^4+x^3+1
            (5, 0x29),  // x^5+x^3+1
            (6, 0x61),  // x^6+x^5+1
            (7, 0x83),  // x^7+x+1
            (8, 0x187), // x^8+x^7+x^2+x+1
            (9, 0x221), // x^9+x^5+1
            (10, 0x481), // x^10+x^7+1
        ];
        let table = if which == 0 { &PRIMARY } else { &ALTERNATE };
        table
            .iter()
            .find(|(d, _)| *d == degree)
            .map(|&(d, taps)| Self::new(d, taps, 1))
            .ok_or(Error::BadDegree(degree))
    }
}

/// A +/-1-valued sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct BipolarSequence<T> {
    values: Vec<T>,
}

impl<T: Scalar> BipolarSequence<T> {
    pub fn from_values(values: Vec<T>) -> Self {
        assert!(values.iter().all(|v| *v == T::one() || *v == -T::one()), "entries must be +/-1");
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn at_mod(&self, idx: i64) -> T {
        let n = self.values.len() as i64;
        self.values[idx.rem_euclid(n) as usize]
    }

    /// Cyclically extend by appending -1 chips until `target` length.
    ///
    /// Power-of-two grid dimensions cannot equal an m-sequence period
    /// 2^k - 1, so the base block uses the sequence extended by one chip;
    /// appending -1 keeps the sequence sum away from zero so the pilot
    /// spectrum has no exactly-dead bin.
    pub fn extended_to(&self, target: usize) -> Result<Self> {
        if target < self.values.len() {
            return Err(Error::SequenceLength { got: self.values.len(), required: target });
        }
        let mut values = self.values.clone();
        values.resize(target, -T::one());
        Ok(Self { values })
    }
}

/// Run the Fibonacci LFSR for `spec` and return the bipolar sequence of
/// one full period, mapping bit 0 -> +1 and 1 -> -1.
///
/// Primitivity is enforced empirically: if the state does not return to
/// the seed in exactly 2^degree - 1 steps the taps are rejected.
pub fn generate_mseq<T: Scalar>(spec: &MSequenceSpec) -> Result<BipolarSequence<T>> {
    if spec.degree < 2 || spec.degree > 31 {
        return Err(Error::BadDegree(spec.degree));
    }
    let mask = (1u64 << spec.degree) - 1;
    let seed = spec.seed_state & mask;
    if seed == 0 {
        return Err(Error::ZeroSeed);
    }
    let feedback_taps = spec.taps & mask; // drop the x^degree term
    let expected = (1u64 << spec.degree) - 1;

    let mut bits = Vec::with_capacity(expected as usize);
    let mut state = seed;
    let mut period = 0u64;
    loop {
        bits.push((state & 1) as u8);
        let fb = ((state & feedback_taps).count_ones() & 1) as u64;
        state = (state >> 1) | (fb << (spec.degree - 1));
        period += 1;
        if state == seed || period > expected {
            break;
        }
    }
    if period != expected {
        return Err(Error::NonPrimitivePolynomial {
            degree: spec.degree,
            taps: spec.taps,
            period,
            expected,
        });
    }
    let values = bits.iter().map(|&b| if b == 0 { T::one() } else { -T::one() }).collect();
    Ok(BipolarSequence { values })
}

/// Normalized cyclic autocorrelation (1/len) sum s[n] s[(n-shift) mod len].
pub fn cyclic_autocorr<T: Scalar>(s: &BipolarSequence<T>, shift: i64) -> T {
    let n = s.len();
    let mut acc = T::zero();
    for i in 0..n {
        acc = acc + s.at_mod(i as i64) * s.at_mod(i as i64 - shift);
    }
    acc / T::cast(n as f64)
}

/// Normalized cyclic cross-correlation of equal-length sequences.
pub fn cyclic_crosscorr<T: Scalar>(a: &BipolarSequence<T>, b: &BipolarSequence<T>, shift: i64) -> T {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut acc = T::zero();
    for i in 0..n {
        acc = acc + a.at_mod(i as i64) * b.at_mod(i as i64 - shift);
    }
    acc / T::cast(n as f64)
}

/// Measured correlation extremes of a component sequence pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationProfile<T> {
    /// Normalized zero-shift peak, 1.0 for bipolar sequences.
    pub peak: T,
    /// Largest normalized off-peak autocorrelation magnitude over both
    /// sequences (epsilon_a, epsilon_b).
    pub max_offpeak_abs: T,
    /// Largest normalized cross-correlation magnitude over all shifts;
    /// zero when the lengths differ (cross-shifts undefined across axes).
    pub cross_max_abs: T,
}

/// Exhaustive scan over all cyclic shifts of both sequences.
pub fn profile<T: Scalar>(a: &BipolarSequence<T>, b: &BipolarSequence<T>) -> CorrelationProfile<T> {
    let mut max_offpeak = T::zero();
    for s in [a, b] {
        for shift in 1..s.len() {
            let c = cyclic_autocorr(s, shift as i64).abs();
            if c > max_offpeak {
                max_offpeak = c;
            }
        }
    }
    let mut cross = T::zero();
    if a.len() == b.len() {
        for shift in 0..a.len() {
            let c = cyclic_crosscorr(a, b, shift as i64).abs();
            if c > cross {
                cross = c;
            }
        }
    }
    CorrelationProfile { peak: T::one(), max_offpeak_abs: max_offpeak, cross_max_abs: cross }
}

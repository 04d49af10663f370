//! 2D delay-Doppler pilot: rank-1 base block from two component
//! sequences, cyclic tiling for the time-frequency comb, and shifted
//! local replicas for the detector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{AxisDomain, ComplexGrid};
use crate::scalar::Scalar;
use crate::sequences::{generate_mseq, BipolarSequence, MSequenceSpec};

/// Pilot construction parameters.
///
/// `seq_delay` builds the delay-axis sequence b of length M/d_f,
/// `seq_doppler` builds the Doppler-axis sequence a of length N/d_t;
/// when the target length is one more than the LFSR period the sequence
/// is cyclically extended by a single -1 chip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotSpec {
    pub seq_delay: MSequenceSpec,
    pub seq_doppler: MSequenceSpec,
    pub d_f: usize,
    pub d_t: usize,
    /// Pilot-to-data per-element power ratio; applied as an amplitude
    /// factor sqrt(power_scale) on the DD pilot.
    pub power_scale: f64,
}

impl PilotSpec {
    /// Pick component sequences from the frame geometry: the delay axis
    /// needs length M/d_f and the Doppler axis N/d_t, each of which must
    /// be 2^k (extended sequence) or 2^k - 1 (plain m-sequence). The two
    /// axes use distinct primitive polynomials.
    pub fn auto(m: usize, n: usize, d_f: usize, d_t: usize, power_scale: f64) -> Result<Self> {
        if d_f == 0 || m % d_f != 0 {
            return Err(Error::Divisibility { what: "d_f", value: d_f, dim: "M", dim_value: m });
        }
        if d_t == 0 || n % d_t != 0 {
            return Err(Error::Divisibility { what: "d_t", value: d_t, dim: "N", dim_value: n });
        }
        let degree_for = |len: usize| -> Result<u32> {
            (2..=31u32)
                .find(|&deg| {
                    let period = (1u64 << deg) - 1;
                    len as u64 == period || len as u64 == period + 1
                })
                .ok_or(Error::NoSequenceForLength(len))
        };
        let seq_delay = MSequenceSpec::default_for_degree(degree_for(m / d_f)?, 0)?;
        let seq_doppler = MSequenceSpec::default_for_degree(degree_for(n / d_t)?, 1)?;
        Ok(Self { seq_delay, seq_doppler, d_f, d_t, power_scale })
    }
}

/// Assembled pilot: base block, tiled DD grid, TF transform, comb mask.
#[derive(Debug, Clone)]
pub struct Pilot2D<T> {
    base_block: ComplexGrid<T>,
    full_dd: ComplexGrid<T>,
    tf: ComplexGrid<T>,
    occupied_tf_mask: Vec<bool>,
    d_f: usize,
    d_t: usize,
    power_scale: f64,
    seq_delay: Vec<T>,
    seq_doppler: Vec<T>,
}

/// Outer product of cyclically shifted component sequences:
/// block(l, k) = b[(l - p) mod P] * a[(k - q) mod Q].
pub fn build_base_block<T: Scalar>(
    a: &BipolarSequence<T>,
    b: &BipolarSequence<T>,
    q: i64,
    p: i64,
) -> ComplexGrid<T> {
    ComplexGrid::from_fn(b.len(), a.len(), AxisDomain::DelayDoppler, |l, k| {
        let v = b.at_mod(l as i64 - p) * a.at_mod(k as i64 - q);
        num_complex::Complex::new(v, T::zero())
    })
}

fn component_sequence<T: Scalar>(spec: &MSequenceSpec, target_len: usize) -> Result<BipolarSequence<T>> {
    let s = generate_mseq(spec)?;
    if s.len() == target_len {
        Ok(s)
    } else if s.len() + 1 == target_len {
        s.extended_to(target_len)
    } else {
        Err(Error::SequenceLength { got: s.len(), required: target_len })
    }
}

impl<T: Scalar> Pilot2D<T> {
    /// Build the pilot for an M x N frame.
    pub fn assemble(spec: &PilotSpec, m: usize, n: usize) -> Result<Self> {
        if spec.d_f == 0 || m % spec.d_f != 0 {
            return Err(Error::Divisibility { what: "d_f", value: spec.d_f, dim: "M", dim_value: m });
        }
        if spec.d_t == 0 || n % spec.d_t != 0 {
            return Err(Error::Divisibility { what: "d_t", value: spec.d_t, dim: "N", dim_value: n });
        }
        if spec.power_scale <= 0.0 {
            return Err(Error::NonPositivePower(spec.power_scale));
        }
        let b = component_sequence::<T>(&spec.seq_delay, m / spec.d_f)?;
        let a = component_sequence::<T>(&spec.seq_doppler, n / spec.d_t)?;
        let base_block = build_base_block(&a, &b, 0, 0);
        Self::from_base_block(base_block, a.values().to_vec(), b.values().to_vec(), spec.d_f, spec.d_t, spec.power_scale, m, n)
    }

    /// Build directly from arbitrary component sequences (test hook and
    /// extension point; `assemble` is the configured path).
    pub fn from_sequences(
        a: &BipolarSequence<T>,
        b: &BipolarSequence<T>,
        d_f: usize,
        d_t: usize,
        power_scale: f64,
    ) -> Result<Self> {
        let m = b.len() * d_f;
        let n = a.len() * d_t;
        let base_block = build_base_block(a, b, 0, 0);
        Self::from_base_block(base_block, a.values().to_vec(), b.values().to_vec(), d_f, d_t, power_scale, m, n)
    }

    fn from_base_block(
        base_block: ComplexGrid<T>,
        seq_doppler: Vec<T>,
        seq_delay: Vec<T>,
        d_f: usize,
        d_t: usize,
        power_scale: f64,
        m: usize,
        n: usize,
    ) -> Result<Self> {
        if power_scale <= 0.0 {
            return Err(Error::NonPositivePower(power_scale));
        }
        let (bm, bn) = (base_block.rows(), base_block.cols());
        let amp = T::cast(power_scale.sqrt());
        let full_dd = ComplexGrid::from_fn(m, n, AxisDomain::DelayDoppler, |l, k| {
            base_block.at(l % bm, k % bn) * amp
        });
        let tf = full_dd.isfft()?;
        let thresh = T::cast(1e-9) * tf.max_abs();
        let occupied_tf_mask = tf.data().iter().map(|v| v.norm() > thresh).collect();
        Ok(Self { base_block, full_dd, tf, occupied_tf_mask, d_f, d_t, power_scale, seq_delay, seq_doppler })
    }

    /// Conventional comb DMRS baseline: a flat pilot on the same comb with
    /// the same total power as the unified pilot of equal parameters.
    pub fn conventional_comb(m: usize, n: usize, d_f: usize, d_t: usize, power_scale: f64) -> Result<Self> {
        if d_f == 0 || m % d_f != 0 {
            return Err(Error::Divisibility { what: "d_f", value: d_f, dim: "M", dim_value: m });
        }
        if d_t == 0 || n % d_t != 0 {
            return Err(Error::Divisibility { what: "d_t", value: d_t, dim: "N", dim_value: n });
        }
        if power_scale <= 0.0 {
            return Err(Error::NonPositivePower(power_scale));
        }
        // Total TF pilot energy M*N*power_scale spread evenly over the
        // M*N/(d_f*d_t) comb positions.
        let amp = T::cast((power_scale * d_f as f64 * d_t as f64).sqrt());
        let tf = ComplexGrid::from_fn(m, n, AxisDomain::TimeFrequency, |l, k| {
            if l % d_f == 0 && k % d_t == 0 {
                num_complex::Complex::new(amp, T::zero())
            } else {
                num_complex::Complex::new(T::zero(), T::zero())
            }
        });
        let full_dd = tf.sfft()?;
        let occupied_tf_mask = tf.data().iter().map(|v| v.norm() > T::zero()).collect();
        Ok(Self {
            base_block: full_dd.clone(),
            full_dd,
            tf,
            occupied_tf_mask,
            d_f,
            d_t,
            power_scale,
            seq_delay: Vec::new(),
            seq_doppler: Vec::new(),
        })
    }

    pub fn base_block(&self) -> &ComplexGrid<T> {
        &self.base_block
    }

    pub fn full_dd(&self) -> &ComplexGrid<T> {
        &self.full_dd
    }

    pub fn tf(&self) -> &ComplexGrid<T> {
        &self.tf
    }

    /// Row-major boolean mask of TF resource elements carrying pilot.
    pub fn occupied_tf_mask(&self) -> &[bool] {
        &self.occupied_tf_mask
    }

    pub fn rows(&self) -> usize {
        self.full_dd.rows()
    }

    pub fn cols(&self) -> usize {
        self.full_dd.cols()
    }

    pub fn d_f(&self) -> usize {
        self.d_f
    }

    pub fn d_t(&self) -> usize {
        self.d_t
    }

    pub fn power_scale(&self) -> f64 {
        self.power_scale
    }

    /// Delay-axis component sequence values (scaled tiling factor excluded).
    pub fn seq_delay(&self) -> &[T] {
        &self.seq_delay
    }

    pub fn seq_doppler(&self) -> &[T] {
        &self.seq_doppler
    }

    /// Unambiguous detection window (delay bins, Doppler bins).
    pub fn window(&self) -> (usize, usize) {
        (self.rows() / self.d_f, self.cols() / self.d_t)
    }

    /// Cyclic-shifted replica within the unambiguous window.
    pub fn local_replica(&self, l: i64, k: i64) -> Result<ComplexGrid<T>> {
        let (wl, wk) = self.window();
        if l < 0 || l >= wl as i64 || k < 0 || k >= wk as i64 {
            return Err(Error::OutsideWindow { l, k, wl, wk });
        }
        Ok(self.full_dd.cyclic_shift(l, k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequences::cyclic_autocorr;

    fn mseq(degree: u32, which: usize) -> BipolarSequence<f64> {
        generate_mseq(&MSequenceSpec::default_for_degree(degree, which).unwrap()).unwrap()
    }

    #[test]
    fn base_block_outer_product_with_scalar() {
        let a = BipolarSequence::from_values(vec![1.0f64]);
        let b = BipolarSequence::from_values(vec![1.0f64, -1.0]);
        let blk = build_base_block(&a, &b, 0, 0);
        assert_eq!((blk.rows(), blk.cols()), (2, 1));
        assert_eq!(blk.at(0, 0).re, 1.0);
        assert_eq!(blk.at(1, 0).re, -1.0);
    }

    #[test]
    fn base_block_shift_equals_cyclic_shift() {
        let a = mseq(3, 0);
        let b = mseq(3, 1);
        let base = build_base_block(&a, &b, 0, 0);
        for q in 0..a.len() as i64 {
            for p in 0..b.len() as i64 {
                let direct = build_base_block(&a, &b, q, p);
                let shifted = base.cyclic_shift(p, q);
                let diff: f64 = direct
                    .data()
                    .iter()
                    .zip(shifted.data())
                    .map(|(x, y)| (x - y).norm())
                    .fold(0.0, f64::max);
                assert!(diff < 1e-15, "q={q} p={p}");
            }
        }
    }

    #[test]
    fn base_block_correlation_matches_eq3_profile() {
        // Brute force over all (q,p) for degree-3 x degree-3 components.
        let a = mseq(3, 0);
        let b = mseq(3, 1);
        let base = build_base_block(&a, &b, 0, 0);
        let qp = (a.len() * b.len()) as f64;
        for q in 0..a.len() as i64 {
            for p in 0..b.len() as i64 {
                let shifted = build_base_block(&a, &b, q, p);
                let c = base.inner_product(&shifted).unwrap().re / qp;
                let eps_q = cyclic_autocorr(&a, q);
                let eps_p = cyclic_autocorr(&b, p);
                let expected = eps_q * eps_p;
                assert!((c - expected).abs() < 1e-12, "q={q} p={p}: {c} vs {expected}");
                if q == 0 && p == 0 {
                    assert!((c - 1.0).abs() < 1e-12);
                } else {
                    assert!(c.abs() < 1.0 / 7.0 + 1e-9);
                }
            }
        }
    }

    #[test]
    fn base_block_is_rank_one() {
        let a = mseq(4, 0);
        let b = mseq(3, 0);
        let blk = build_base_block(&a, &b, 2, 1);
        for l in 0..blk.rows() - 1 {
            for k in 0..blk.cols() - 1 {
                let minor = blk.at(l, k) * blk.at(l + 1, k + 1) - blk.at(l, k + 1) * blk.at(l + 1, k);
                assert!(minor.norm() < 1e-12);
            }
        }
    }

    fn test_pilot(d_f: usize, d_t: usize, power_scale: f64) -> Pilot2D<f64> {
        let a = mseq(3, 0); // len 7
        let b = mseq(3, 1); // len 7
        Pilot2D::from_sequences(&a, &b, d_f, d_t, power_scale).unwrap()
    }

    #[test]
    fn comb_on_even_rows_for_df2() {
        // M=8, N=4, d_f=2, d_t=1: nonzeros only on even subcarrier rows.
        let a = BipolarSequence::from_values(vec![1.0f64, -1.0, 1.0, 1.0]);
        let b = BipolarSequence::from_values(vec![1.0f64, 1.0, -1.0, -1.0]);
        let p = Pilot2D::from_sequences(&a, &b, 2, 1, 1.0).unwrap();
        assert_eq!((p.rows(), p.cols()), (8, 4));
        for l in 0..8 {
            for k in 0..4 {
                let occ = p.occupied_tf_mask()[l * 4 + k];
                if l % 2 == 1 {
                    assert!(!occ, "odd row {l} occupied");
                }
            }
        }
        let occupied = p.occupied_tf_mask().iter().filter(|b| **b).count();
        assert!(occupied <= 8 * 4 / 2);
    }

    #[test]
    fn full_density_mask_is_all_true() {
        let p = test_pilot(1, 1, 1.0);
        assert!(p.occupied_tf_mask().iter().all(|b| *b));
    }

    #[test]
    fn power_scale_is_a_power_ratio() {
        let p = test_pilot(2, 1, 0.2);
        let mn = (p.rows() * p.cols()) as f64;
        let e = p.full_dd().frobenius_norm().powi(2) / mn;
        assert!((e - 0.2).abs() < 1e-12);
    }

    #[test]
    fn tiling_comb_duality() {
        for (d_f, d_t) in [(1usize, 1usize), (2, 1), (2, 2), (4, 1)] {
            let p = test_pilot(d_f, d_t, 0.5);
            let occupied = p.occupied_tf_mask().iter().filter(|b| **b).count();
            assert_eq!(occupied, p.rows() * p.cols() / (d_f * d_t), "d_f={d_f} d_t={d_t}");
            let back = p.tf().sfft().unwrap();
            let diff: f64 = back
                .data()
                .iter()
                .zip(p.full_dd().data())
                .map(|(x, y)| (x - y).norm())
                .fold(0.0, f64::max);
            assert!(diff < 1e-12);
        }
    }

    #[test]
    fn replica_self_product_is_mn_power_scale() {
        let p = test_pilot(2, 1, 0.2);
        let r = p.local_replica(3, 2).unwrap();
        let ip = r.inner_product(&r).unwrap().re;
        let expected = (p.rows() * p.cols()) as f64 * 0.2;
        assert!((ip - expected).abs() < 1e-9);
    }

    #[test]
    fn replica_zero_shift_is_full_dd() {
        let p = test_pilot(2, 1, 0.2);
        let r = p.local_replica(0, 0).unwrap();
        assert_eq!(r.data(), p.full_dd().data());
    }

    #[test]
    fn replica_outside_window_rejected() {
        let p = test_pilot(2, 1, 0.2);
        let (wl, wk) = p.window();
        assert!(p.local_replica(wl as i64, 0).is_err());
        assert!(p.local_replica(0, wk as i64).is_err());
        assert!(p.local_replica(-1, 0).is_err());
    }

    #[test]
    fn replica_quasi_orthogonality() {
        let p = test_pilot(2, 1, 1.0);
        let (wl, wk) = p.window();
        let base = p.local_replica(0, 0).unwrap();
        let mn = (p.rows() * p.cols()) as f64;
        let a = mseq(3, 0);
        let b = mseq(3, 1);
        let prof = crate::sequences::profile(&a, &b);
        let eps = prof
            .max_offpeak_abs
            .max(prof.max_offpeak_abs * prof.max_offpeak_abs);
        for l in 0..wl as i64 {
            for k in 0..wk as i64 {
                if (l, k) == (0, 0) {
                    continue;
                }
                let c = base.inner_product(&p.local_replica(l, k).unwrap()).unwrap().norm() / mn;
                assert!(c <= eps + 1e-9, "({l},{k}): {c} > {eps}");
            }
        }
    }

    #[test]
    fn assemble_rejects_bad_divisors() {
        let spec = PilotSpec {
            seq_delay: MSequenceSpec::default_for_degree(3, 0).unwrap(),
            seq_doppler: MSequenceSpec::default_for_degree(3, 1).unwrap(),
            d_f: 3,
            d_t: 1,
            power_scale: 0.2,
        };
        assert!(Pilot2D::<f64>::assemble(&spec, 64, 8).is_err());
    }

    #[test]
    fn assemble_extends_to_power_of_two() {
        let spec = PilotSpec {
            seq_delay: MSequenceSpec::default_for_degree(5, 0).unwrap(),
            seq_doppler: MSequenceSpec::default_for_degree(6, 1).unwrap(),
            d_f: 2,
            d_t: 1,
            power_scale: 0.2,
        };
        let p = Pilot2D::<f64>::assemble(&spec, 64, 64).unwrap();
        assert_eq!((p.rows(), p.cols()), (64, 64));
        assert_eq!(p.window(), (32, 64));
        let occupied = p.occupied_tf_mask().iter().filter(|b| **b).count();
        assert_eq!(occupied, 64 * 64 / 2);
    }

    #[test]
    fn conventional_comb_matches_unified_energy() {
        let spec = PilotSpec {
            seq_delay: MSequenceSpec::default_for_degree(5, 0).unwrap(),
            seq_doppler: MSequenceSpec::default_for_degree(4, 1).unwrap(),
            d_f: 2,
            d_t: 1,
            power_scale: 1.0,
        };
        let unified = Pilot2D::<f64>::assemble(&spec, 64, 16).unwrap();
        let conv = Pilot2D::<f64>::conventional_comb(64, 16, 2, 1, 1.0).unwrap();
        let eu = unified.tf().frobenius_norm();
        let ec = conv.tf().frobenius_norm();
        assert!((eu - ec).abs() / eu < 1e-12);
        assert_eq!(unified.occupied_tf_mask(), conv.occupied_tf_mask());
    }
}

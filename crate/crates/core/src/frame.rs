//! Transmitter chain: data mapping onto the off-comb TF resources, pilot
//! implanting, per-symbol IDFT, cyclic prefix, and sample serialization.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{AxisDomain, ComplexGrid, Direction};
use crate::pilot::{Pilot2D, PilotSpec};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Qpsk,
    Qam16,
}

impl Modulation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Qpsk => 2,
            Modulation::Qam16 => 4,
        }
    }

    /// Gray-mapped unit-average-power constellation point. QPSK maps
    /// (b0,b1) -> ((1-2b0) + j(1-2b1))/sqrt(2); 16QAM uses the standard
    /// two-bits-per-axis Gray mapping with levels {±1, ±3}/sqrt(10),
    /// I from (b0,b2) and Q from (b1,b3).
    pub fn map<T: Scalar>(self, bits: &[bool]) -> Complex<T> {
        let sgn = |b: bool| if b { -1.0 } else { 1.0 };
        match self {
            Modulation::Qpsk => {
                let s = 0.5f64.sqrt();
                Complex::new(T::cast(sgn(bits[0]) * s), T::cast(sgn(bits[1]) * s))
            }
            Modulation::Qam16 => {
                let s = 0.1f64.sqrt();
                let i = sgn(bits[0]) * (2.0 - sgn(bits[2]));
                let q = sgn(bits[1]) * (2.0 - sgn(bits[3]));
                Complex::new(T::cast(i * s), T::cast(q * s))
            }
        }
    }

    /// Minimum-distance hard decision, inverse of `map`. Boundary ties
    /// break toward bit 0 (the lower Gray index).
    pub fn demap<T: Scalar>(self, v: Complex<T>, out: &mut Vec<bool>) {
        match self {
            Modulation::Qpsk => {
                out.push(v.re < T::zero());
                out.push(v.im < T::zero());
            }
            Modulation::Qam16 => {
                let t = T::cast(2.0 * 0.1f64.sqrt());
                out.push(v.re < T::zero());
                out.push(v.im < T::zero());
                out.push(v.re.abs() > t);
                out.push(v.im.abs() > t);
            }
        }
    }
}

/// Frame numerology and pilot parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    /// Subcarrier / delay-bin count.
    pub m: usize,
    /// OFDM-symbol / Doppler-bin count.
    pub n: usize,
    /// Subcarrier spacing in Hz.
    pub delta_f: f64,
    /// Cyclic prefix length in samples.
    pub cp_len: usize,
    /// Carrier frequency in Hz.
    pub carrier_hz: f64,
    pub pilot: PilotSpec,
    pub modulation: Modulation,
}

impl FrameConfig {
    /// Samples per CP-extended OFDM symbol.
    pub fn symbol_len(&self) -> usize {
        self.m + self.cp_len
    }

    /// Samples per frame.
    pub fn frame_len(&self) -> usize {
        self.n * self.symbol_len()
    }

    pub fn data_positions(&self, mask: &[bool]) -> usize {
        mask.iter().filter(|occupied| !**occupied).count()
    }

    /// Payload size in bits for a given pilot comb mask.
    pub fn payload_bits(&self, mask: &[bool]) -> usize {
        self.data_positions(mask) * self.modulation.bits_per_symbol()
    }
}

/// One modulated frame.
#[derive(Debug, Clone)]
pub struct TxFrame<T> {
    pub data_tf: ComplexGrid<T>,
    pub x_tf: ComplexGrid<T>,
    pub samples: Vec<Complex<T>>,
    pub payload_bits: Vec<bool>,
}

/// Map payload bits onto the unmasked TF positions in column-major order
/// (down each OFDM symbol, then across symbols). Masked positions stay 0.
pub fn map_data<T: Scalar>(
    bits: &[bool],
    mask: &[bool],
    m: usize,
    n: usize,
    modulation: Modulation,
) -> Result<ComplexGrid<T>> {
    assert_eq!(mask.len(), m * n);
    let bps = modulation.bits_per_symbol();
    let positions = mask.iter().filter(|occupied| !**occupied).count();
    if positions == 0 {
        return Err(Error::NoDataCapacity);
    }
    if bits.len() != positions * bps {
        return Err(Error::BitCount {
            got: bits.len(),
            required: positions * bps,
            positions,
            bits_per_symbol: bps,
        });
    }
    let mut grid = ComplexGrid::zeros(m, n, AxisDomain::TimeFrequency);
    let mut next = 0usize;
    for k in 0..n {
        for l in 0..m {
            if !mask[l * n + k] {
                grid.set(l, k, modulation.map(&bits[next..next + bps]));
                next += bps;
            }
        }
    }
    Ok(grid)
}

/// Implant the pilot, convert to time-delay samples, append per-symbol
/// cyclic prefixes, and serialize.
pub fn modulate<T: Scalar>(
    cfg: &FrameConfig,
    pilot: &Pilot2D<T>,
    data_tf: &ComplexGrid<T>,
    payload_bits: Vec<bool>,
) -> Result<TxFrame<T>> {
    let x_tf = pilot.tf().add(data_tf)?;
    let samples = tf_to_samples(cfg, &x_tf);
    Ok(TxFrame { data_tf: data_tf.clone(), x_tf, samples, payload_bits })
}

/// Per-symbol IDFT of a time-frequency grid plus cyclic prefixes.
pub fn tf_to_samples<T: Scalar>(cfg: &FrameConfig, x_tf: &ComplexGrid<T>) -> Vec<Complex<T>> {
    let td = x_tf.dft_cols(Direction::Inverse); // TimeFrequency -> TimeDelay
    let mut samples = Vec::with_capacity(cfg.frame_len());
    for k in 0..cfg.n {
        for l in cfg.m - cfg.cp_len..cfg.m {
            samples.push(td.at(l, k));
        }
        for l in 0..cfg.m {
            samples.push(td.at(l, k));
        }
    }
    samples
}

/// CP stripping and per-symbol DFT under perfect synchronization; the
/// exact inverse of [`modulate`] over an identity channel.
pub fn demodulate_frame_sync<T: Scalar>(samples: &[Complex<T>], cfg: &FrameConfig) -> Result<ComplexGrid<T>> {
    if samples.len() != cfg.frame_len() {
        return Err(Error::SampleLength { got: samples.len(), expected: cfg.frame_len() });
    }
    let sym = cfg.symbol_len();
    let td = ComplexGrid::from_fn(cfg.m, cfg.n, AxisDomain::TimeDelay, |l, k| {
        samples[k * sym + cfg.cp_len + l]
    });
    Ok(td.dft_cols(Direction::Forward))
}

/// Serialize samples as interleaved little-endian f32 (I,Q) pairs.
pub fn write_samples_f32le<T: Scalar>(samples: &[Complex<T>], w: &mut impl std::io::Write) -> Result<()> {
    for s in samples {
        w.write_all(&(s.re.as_f64() as f32).to_le_bytes())?;
        w.write_all(&(s.im.as_f64() as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Deterministic payload bits from an RNG.
pub fn random_bits(count: usize, rng: &mut impl rand::Rng) -> Vec<bool> {
    (0..count).map(|_| rng.gen::<bool>()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cplx;
    use crate::sequences::MSequenceSpec;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn test_cfg(m: usize, n: usize) -> FrameConfig {
        FrameConfig {
            m,
            n,
            delta_f: 60e3,
            cp_len: m / 8,
            carrier_hz: 6e9,
            pilot: PilotSpec {
                seq_delay: MSequenceSpec::default_for_degree(3, 0).unwrap(),
                seq_doppler: MSequenceSpec::default_for_degree(3, 1).unwrap(),
                d_f: 2,
                d_t: 1,
                power_scale: 0.2,
            },
            modulation: Modulation::Qpsk,
        }
    }

    fn test_pilot(cfg: &FrameConfig) -> Pilot2D<f64> {
        Pilot2D::assemble(&cfg.pilot, cfg.m, cfg.n).unwrap()
    }

    #[test]
    fn qpsk_all_zero_bits() {
        let v: Complex<f64> = Modulation::Qpsk.map(&[false, false]);
        let s = 0.5f64.sqrt();
        assert!((v - cplx::<f64>(s, s)).norm() < 1e-15);
    }

    #[test]
    fn qam16_gray_map_round_trip() {
        for idx in 0..16usize {
            let bits: Vec<bool> = (0..4).map(|b| (idx >> b) & 1 == 1).collect();
            let v: Complex<f64> = Modulation::Qam16.map(&bits);
            let mut out = Vec::new();
            Modulation::Qam16.demap(v, &mut out);
            assert_eq!(out, bits, "constellation index {idx}");
        }
    }

    #[test]
    fn constellations_have_unit_average_power() {
        for modu in [Modulation::Qpsk, Modulation::Qam16] {
            let bps = modu.bits_per_symbol();
            let mut total = 0.0;
            let count = 1usize << bps;
            for idx in 0..count {
                let bits: Vec<bool> = (0..bps).map(|b| (idx >> b) & 1 == 1).collect();
                total += modu.map::<f64>(&bits).norm_sqr();
            }
            assert!((total / count as f64 - 1.0).abs() < 1e-12, "{modu:?}");
        }
    }

    #[test]
    fn map_data_mean_power_near_one() {
        let cfg = test_cfg(16, 8);
        let pilot = test_pilot(&cfg);
        let mut rng = StdRng::seed_from_u64(1);
        let mut total = 0.0;
        let mut count = 0usize;
        for _ in 0..200 {
            let bits = random_bits(cfg.payload_bits(pilot.occupied_tf_mask()), &mut rng);
            let d = map_data::<f64>(&bits, pilot.occupied_tf_mask(), cfg.m, cfg.n, cfg.modulation).unwrap();
            for (v, occ) in d.data().iter().zip(pilot.occupied_tf_mask()) {
                if !occ {
                    total += v.norm_sqr();
                    count += 1;
                }
            }
        }
        assert!((total / count as f64 - 1.0).abs() < 0.01);
    }

    #[test]
    fn map_data_rejects_full_comb() {
        let mask = vec![true; 4 * 4];
        assert!(matches!(
            map_data::<f64>(&[], &mask, 4, 4, Modulation::Qpsk),
            Err(Error::NoDataCapacity)
        ));
    }

    #[test]
    fn map_data_rejects_bit_count_mismatch() {
        let mask = vec![false; 4];
        assert!(map_data::<f64>(&[true; 3], &mask, 2, 2, Modulation::Qpsk).is_err());
    }

    #[test]
    fn cp_prepends_last_samples() {
        // B_cp on [s0,s1,s2,s3] with L_cp=1 -> [s3,s0,s1,s2,s3].
        let cfg = FrameConfig { cp_len: 1, ..test_cfg(4, 1) };
        // Pilot amplitude vanishingly small so only the crafted data shows.
        let pilot = Pilot2D::conventional_comb(4, 1, 1, 1, 1e-300).unwrap();
        // Craft x_tf so the time-delay column is [s0..s3]: use forward DFT.
        let td = ComplexGrid::from_fn(4, 1, AxisDomain::TimeDelay, |l, _| cplx(l as f64 + 1.0, 0.0));
        let x = td.dft_cols(Direction::Forward);
        let frame = modulate(&cfg, &pilot, &x, vec![]).unwrap();
        let got: Vec<f64> = frame.samples.iter().map(|c| c.re).collect();
        let want = [4.0, 1.0, 2.0, 3.0, 4.0];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-9, "{got:?}");
        }
    }

    #[test]
    fn modulate_demodulate_round_trip() {
        let cfg = test_cfg(16, 8);
        let pilot = test_pilot(&cfg);
        let mut rng = StdRng::seed_from_u64(7);
        let bits = random_bits(cfg.payload_bits(pilot.occupied_tf_mask()), &mut rng);
        let d = map_data::<f64>(&bits, pilot.occupied_tf_mask(), cfg.m, cfg.n, cfg.modulation).unwrap();
        let frame = modulate(&cfg, &pilot, &d, bits).unwrap();
        assert_eq!(frame.samples.len(), cfg.frame_len());
        let back = demodulate_frame_sync(&frame.samples, &cfg).unwrap();
        let diff: f64 = back
            .data()
            .iter()
            .zip(frame.x_tf.data())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12);
        let n1 = back.frobenius_norm();
        let n2 = frame.x_tf.frobenius_norm();
        assert!((n1 - n2).abs() / n2 < 1e-12);
    }

    #[test]
    fn demodulate_rejects_truncated_input() {
        let cfg = test_cfg(16, 8);
        let samples = vec![cplx::<f64>(0.0, 0.0); cfg.frame_len() - 1];
        assert!(demodulate_frame_sync(&samples, &cfg).is_err());
    }

    #[test]
    fn pilot_and_data_are_orthogonal() {
        let cfg = test_cfg(16, 8);
        let pilot = test_pilot(&cfg);
        let mut rng = StdRng::seed_from_u64(3);
        let bits = random_bits(cfg.payload_bits(pilot.occupied_tf_mask()), &mut rng);
        let d = map_data::<f64>(&bits, pilot.occupied_tf_mask(), cfg.m, cfg.n, cfg.modulation).unwrap();
        let ip = pilot.tf().inner_product(&d).unwrap();
        assert_eq!(ip.norm(), 0.0);
    }

    #[test]
    fn sfft_of_comb_recovers_pilot() {
        // With data only off-comb, sfft of x_tf restricted to comb
        // positions reproduces the DD pilot.
        let cfg = test_cfg(16, 8);
        let pilot = test_pilot(&cfg);
        let mut rng = StdRng::seed_from_u64(4);
        let bits = random_bits(cfg.payload_bits(pilot.occupied_tf_mask()), &mut rng);
        let d = map_data::<f64>(&bits, pilot.occupied_tf_mask(), cfg.m, cfg.n, cfg.modulation).unwrap();
        let frame = modulate(&cfg, &pilot, &d, bits).unwrap();
        let mut comb_only = ComplexGrid::zeros(cfg.m, cfg.n, AxisDomain::TimeFrequency);
        for l in 0..cfg.m {
            for k in 0..cfg.n {
                if pilot.occupied_tf_mask()[l * cfg.n + k] {
                    comb_only.set(l, k, frame.x_tf.at(l, k));
                }
            }
        }
        let dd = comb_only.sfft().unwrap();
        let diff: f64 = dd
            .data()
            .iter()
            .zip(pilot.full_dd().data())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }

    #[test]
    fn cp_energy_accounting() {
        let cfg = test_cfg(16, 8);
        let pilot = test_pilot(&cfg);
        let zeros = ComplexGrid::zeros(cfg.m, cfg.n, AxisDomain::TimeFrequency);
        let frame = modulate(&cfg, &pilot, &zeros, vec![]).unwrap();
        let sample_energy: f64 = frame.samples.iter().map(|s| s.norm_sqr()).sum();
        let tf_energy = pilot.tf().frobenius_norm().powi(2);
        let expected = tf_energy * (cfg.m + cfg.cp_len) as f64 / cfg.m as f64;
        // The rank-1 pilot has constant magnitude along each time-delay
        // column, so the CP duplicates energy exactly proportionally.
        assert!((sample_energy - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn sequence_pilot_papr_not_worse_than_impulse_pilot() {
        // Impulse DD pilot of equal energy concentrates time power; the
        // spread pilot should not have larger PAPR on average.
        let cfg = test_cfg(16, 8);
        let pilot = test_pilot(&cfg);
        let mut rng = StdRng::seed_from_u64(9);
        let papr = |samples: &[Complex<f64>]| {
            let peak = samples.iter().map(|s| s.norm_sqr()).fold(0.0, f64::max);
            let mean = samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len() as f64;
            peak / mean
        };
        // Impulse pilot with the same DD energy.
        let energy = pilot.full_dd().frobenius_norm();
        let mut imp = ComplexGrid::zeros(cfg.m, cfg.n, AxisDomain::DelayDoppler);
        imp.set(0, 0, cplx(energy, 0.0));
        let imp_tf = imp.isfft().unwrap();

        let mut seq_total = 0.0;
        let mut imp_total = 0.0;
        for _ in 0..100 {
            let bits = random_bits(cfg.payload_bits(pilot.occupied_tf_mask()), &mut rng);
            let d = map_data::<f64>(&bits, pilot.occupied_tf_mask(), cfg.m, cfg.n, cfg.modulation).unwrap();
            let f_seq = modulate(&cfg, &pilot, &d, vec![]).unwrap();
            seq_total += papr(&f_seq.samples);
            let x_imp = imp_tf.add(&d).unwrap();
            let td = x_imp.dft_cols(Direction::Inverse);
            let mut imp_samples = Vec::new();
            for k in 0..cfg.n {
                for l in cfg.m - cfg.cp_len..cfg.m {
                    imp_samples.push(td.at(l, k));
                }
                for l in 0..cfg.m {
                    imp_samples.push(td.at(l, k));
                }
            }
            imp_total += papr(&imp_samples);
        }
        assert!(seq_total <= imp_total, "sequence PAPR {seq_total} vs impulse {imp_total}");
    }
}

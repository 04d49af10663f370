//! Physical-unit conversions and headline metrics.

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Grid-to-physical conversion parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Numerology {
    pub delta_f: f64,
    pub m: usize,
    pub n: usize,
    pub carrier_hz: f64,
}

impl Numerology {
    pub fn delay_resolution_s(&self) -> f64 {
        1.0 / (self.m as f64 * self.delta_f)
    }

    pub fn doppler_resolution_hz(&self) -> f64 {
        self.delta_f / self.n as f64
    }

    /// Two-way (monostatic radar) range per delay tap.
    pub fn range_per_tap_m(&self) -> f64 {
        SPEED_OF_LIGHT * self.delay_resolution_s() / 2.0
    }

    /// Two-way radial velocity per Doppler bin.
    pub fn velocity_per_bin_mps(&self) -> f64 {
        SPEED_OF_LIGHT * self.doppler_resolution_hz() / (2.0 * self.carrier_hz)
    }

    pub fn doppler_hz_to_bins(&self, hz: f64) -> f64 {
        hz / self.doppler_resolution_hz()
    }

    /// Two-way Doppler in Hz for a reflector moving at `v` m/s.
    pub fn velocity_to_doppler_hz(&self, v: f64) -> f64 {
        2.0 * v * self.carrier_hz / SPEED_OF_LIGHT
    }
}

/// (range m, radial velocity m/s) for a detected (delay tap, Doppler bin)
/// pair; Doppler may carry its fractional part.
pub fn bins_to_physical(l: f64, k_plus_kappa: f64, num: &Numerology) -> (f64, f64) {
    (l * num.range_per_tap_m(), k_plus_kappa * num.velocity_per_bin_mps())
}

pub fn physical_to_bins(range_m: f64, velocity_mps: f64, num: &Numerology) -> (f64, f64) {
    (range_m / num.range_per_tap_m(), velocity_mps / num.velocity_per_bin_mps())
}

/// One target association: estimates matched to truths by delay tap, then
/// nearest Doppler; unmatched truths are misses.
#[derive(Debug, Clone, PartialEq)]
pub struct Association {
    /// (truth index, estimate index) pairs.
    pub pairs: Vec<(usize, usize)>,
    pub missed_truths: Vec<usize>,
    pub spurious_estimates: Vec<usize>,
}

/// Match (delay tap, Doppler bins) estimates against ground truth:
/// same delay tap first, nearest Doppler among candidates, greedy in
/// truth order; each estimate used at most once.
pub fn associate_targets(
    truth: &[(usize, f64)],
    est: &[(usize, f64)],
) -> Association {
    let mut used = vec![false; est.len()];
    let mut pairs = Vec::new();
    let mut missed = Vec::new();
    for (ti, &(tl, tk)) in truth.iter().enumerate() {
        let best = est
            .iter()
            .enumerate()
            .filter(|(ei, &(el, _))| !used[*ei] && el == tl)
            .min_by(|(_, a), (_, b)| {
                (a.1 - tk).abs().partial_cmp(&(b.1 - tk).abs()).unwrap()
            })
            .map(|(ei, _)| ei);
        match best {
            Some(ei) => {
                used[ei] = true;
                pairs.push((ti, ei));
            }
            None => missed.push(ti),
        }
    }
    let spurious = (0..est.len()).filter(|&ei| !used[ei]).collect();
    Association { pairs, missed_truths: missed, spurious_estimates: spurious }
}

/// Mean relative Doppler error (1/n)·Σ|(D̂−D)/D| over associated pairs.
/// Truths with |D| below the guard are excluded (counted in the second
/// return value); no usable pair -> NaN.
pub fn doppler_error_rate(truth: &[f64], est: &[f64]) -> (f64, usize) {
    assert_eq!(truth.len(), est.len());
    let mut acc = 0.0;
    let mut count = 0usize;
    let mut excluded = 0usize;
    for (&d, &dh) in truth.iter().zip(est) {
        if d.abs() < 1e-6 {
            excluded += 1;
            continue;
        }
        acc += ((dh - d) / d).abs();
        count += 1;
    }
    if count == 0 {
        (f64::NAN, excluded)
    } else {
        (acc / count as f64, excluded)
    }
}

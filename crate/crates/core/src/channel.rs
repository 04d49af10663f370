//! Doubly dispersive channel simulated two independent ways: the direct
//! delay-Doppler twisted convolution with fractional-Doppler dispersion,
//! and the equivalent time-domain channel applied to the sample stream.
//! The two implementations cross-validate each other.

use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::frame::FrameConfig;
use crate::grid::{AxisDomain, ComplexGrid};
use crate::scalar::Scalar;

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelPath {
    pub delay_tap: usize,
    pub doppler_tap: i64,
    /// Off-grid Doppler fraction, |kappa| < 0.5 bin.
    pub frac_doppler: f64,
    pub gain: Complex<f64>,
}

impl ChannelPath {
    pub fn doppler_bins(&self) -> f64 {
        self.doppler_tap as f64 + self.frac_doppler
    }
}

/// A channel draw: paths, noise level, and the inter-Doppler-interference
/// truncation window used by the DD-plane model.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub paths: Vec<ChannelPath>,
    /// Complex noise variance per sample, relative to unit data power.
    pub noise_var: f64,
    /// IDI window N_i; q runs over -N_i..=N_i.
    pub idi_span: usize,
}

impl ChannelRealization {
    pub fn noiseless(paths: Vec<ChannelPath>, idi_span: usize) -> Self {
        Self { paths, noise_var: 0.0, idi_span }
    }

    pub fn snr_db(paths: Vec<ChannelPath>, snr_db: f64, idi_span: usize) -> Self {
        Self { paths, noise_var: 10f64.powf(-snr_db / 10.0), idi_span }
    }
}

/// Dirichlet-style IDI kernel: beta(q) = (e^{j2pi(-q-kappa)} - 1) /
/// (e^{j(2pi/N)(-q-kappa)} - 1), with the removable singularity at
/// (-q-kappa) = 0 mod N returning N.
pub fn beta_kernel(q: i64, kappa: f64, n: usize) -> Complex<f64> {
    let x = -(q as f64) - kappa;
    let nf = n as f64;
    // Distance of x from the nearest multiple of N.
    let wrapped = x - (x / nf).round() * nf;
    if wrapped.abs() < 1e-12 {
        return Complex::new(nf, 0.0);
    }
    let num = Complex::from_polar(1.0, 2.0 * std::f64::consts::PI * x) - 1.0;
    let den = Complex::from_polar(1.0, 2.0 * std::f64::consts::PI * x / nf) - 1.0;
    num / den
}

fn add_noise<T: Scalar>(grid: &mut ComplexGrid<T>, noise_var: f64, rng: &mut impl Rng) {
    if noise_var <= 0.0 {
        return;
    }
    let sigma = (noise_var / 2.0).sqrt();
    for v in grid.data_mut() {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *v = *v + Complex::new(T::cast(re * sigma), T::cast(im * sigma));
    }
}

/// DD-plane twisted convolution with fractional Doppler:
///
/// r[l,k] = sum_i sum_q h_i (beta_i(q)/N) x[(l-l_i)_M, (k-k_i+q)_N]
///          e^{j2pi (Lcp+l-l_i)(k_i+kappa_i) / (N(M+Lcp))} + w[l,k]
///
/// The beta(q)/N weight applies on every delay row: the per-symbol cyclic
/// prefix absorbs the delay wrap, so the reduced-amplitude pre-delay
/// region of CP-free OTFS does not arise here.  This is the exact dual of
/// [`apply_time`] once the IDI window covers all q.
pub fn apply_dd<T: Scalar>(
    tx_dd: &ComplexGrid<T>,
    ch: &ChannelRealization,
    cfg: &FrameConfig,
    rng: &mut impl Rng,
) -> Result<ComplexGrid<T>> {
    let (m, n) = (cfg.m as i64, cfg.n as i64);
    let cp = cfg.cp_len as f64;
    let mut out = ComplexGrid::zeros(cfg.m, cfg.n, AxisDomain::DelayDoppler);
    for path in &ch.paths {
        if path.delay_tap >= cfg.cp_len {
            return Err(Error::DelayExceedsCp { tap: path.delay_tap, cp_len: cfg.cp_len });
        }
        let li = path.delay_tap as i64;
        let ki = path.doppler_tap;
        let kappa = path.frac_doppler;
        let span = if kappa == 0.0 { 0 } else { ch.idi_span as i64 };
        // beta is N-periodic in q, so a window wider than N consecutive
        // values would double-count shifts; span = N/2 is already exact.
        let hi = span.min(n - 1 - span);
        for q in -span..=hi {
            // With the SFFT sign convention used here the IDI weight is
            // the conjugate of the canonical Dirichlet kernel.
            let alpha = beta_kernel(q, kappa, cfg.n).conj() / cfg.n as f64;
            for l in 0..m {
                let phase = 2.0 * std::f64::consts::PI * (cp + (l - li) as f64)
                    * (ki as f64 + kappa)
                    / (cfg.n as f64 * (cfg.m as f64 + cp));
                let w = path.gain * alpha * Complex::from_polar(1.0, phase);
                let w_t: Complex<T> = Complex::new(T::cast(w.re), T::cast(w.im));
                let src_l = (l - li).rem_euclid(m) as usize;
                for k in 0..n {
                    let shift_k = (k - ki + q).rem_euclid(n) as usize;
                    let contrib = w_t * tx_dd.at(src_l, shift_k);
                    let cur = out.at(l as usize, k as usize);
                    out.set(l as usize, k as usize, cur + contrib);
                }
            }
        }
    }
    add_noise(&mut out, ch.noise_var, rng);
    Ok(out)
}

/// Integer-only model: q = 0 and kappa = 0 regardless of the realization.
pub fn apply_integer_dd<T: Scalar>(
    tx_dd: &ComplexGrid<T>,
    ch: &ChannelRealization,
    cfg: &FrameConfig,
    rng: &mut impl Rng,
) -> Result<ComplexGrid<T>> {
    let integer = ChannelRealization {
        paths: ch
            .paths
            .iter()
            .map(|p| ChannelPath { frac_doppler: 0.0, ..*p })
            .collect(),
        noise_var: ch.noise_var,
        idi_span: 0,
    };
    apply_dd(tx_dd, &integer, cfg, rng)
}

/// Equivalent time-domain channel: per-symbol cyclic delay within each
/// CP-extended block and a Doppler phase ramp continuous over the global
/// sample index (CP samples included).
pub fn apply_time<T: Scalar>(
    samples: &[Complex<T>],
    ch: &ChannelRealization,
    cfg: &FrameConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Complex<T>>> {
    if samples.len() != cfg.frame_len() {
        return Err(Error::SampleLength { got: samples.len(), expected: cfg.frame_len() });
    }
    let sym = cfg.symbol_len() as i64;
    let mut out = vec![Complex::new(T::zero(), T::zero()); samples.len()];
    for path in &ch.paths {
        if path.delay_tap >= cfg.cp_len {
            return Err(Error::DelayExceedsCp { tap: path.delay_tap, cp_len: cfg.cp_len });
        }
        let li = path.delay_tap as i64;
        let nu = path.doppler_tap as f64 + path.frac_doppler;
        let rate = 2.0 * std::f64::consts::PI * nu / (cfg.n as f64 * cfg.symbol_len() as f64);
        for b in 0..cfg.n as i64 {
            for mi in 0..sym {
                let src_in_block = (mi - li).rem_euclid(sym);
                let n_src = b * sym + src_in_block;
                let w = path.gain * Complex::from_polar(1.0, rate * n_src as f64);
                let w_t: Complex<T> = Complex::new(T::cast(w.re), T::cast(w.im));
                out[(b * sym + mi) as usize] =
                    out[(b * sym + mi) as usize] + w_t * samples[n_src as usize];
            }
        }
    }
    if ch.noise_var > 0.0 {
        let sigma = (ch.noise_var / 2.0).sqrt();
        for v in &mut out {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *v = *v + Complex::new(T::cast(re * sigma), T::cast(im * sigma));
        }
    }
    Ok(out)
}

/// Draw sensing targets: Doppler uniform on (0, max_doppler_bins) split
/// into integer tap and fractional part, delay taps uniform integers,
/// gains complex Gaussian with unit variance.
pub fn random_targets(
    count: usize,
    max_doppler_bins: f64,
    max_delay_tap: usize,
    doppler_half_window: f64,
    rng: &mut impl Rng,
) -> Result<Vec<ChannelPath>> {
    assert!(count >= 1);
    if max_doppler_bins > doppler_half_window {
        return Err(Error::DopplerWindow {
            max_doppler: max_doppler_bins,
            half_window: doppler_half_window,
        });
    }
    let mut paths = Vec::with_capacity(count);
    for _ in 0..count {
        let nu = if max_doppler_bins > 0.0 { rng.gen_range(0.0..max_doppler_bins) } else { 0.0 };
        let tap = nu.round() as i64;
        let mut kappa = nu - tap as f64;
        // Keep strictly inside (-0.5, 0.5).
        kappa = kappa.clamp(-0.4999999, 0.4999999);
        let delay = rng.gen_range(0..=max_delay_tap);
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        paths.push(ChannelPath {
            delay_tap: delay,
            doppler_tap: tap,
            frac_doppler: kappa,
            gain: Complex::new(re, im) * (0.5f64).sqrt(),
        });
    }
    Ok(paths)
}

/// 3GPP Extended Vehicular A power-delay profile: (delay ns, power dB).
pub const EVA_PDP: [(f64, f64); 9] = [
    (0.0, 0.0),
    (30.0, -1.5),
    (150.0, -1.4),
    (310.0, -3.6),
    (370.0, -0.6),
    (710.0, -9.1),
    (1090.0, -7.0),
    (1730.0, -12.0),
    (2510.0, -16.9),
];

/// EVA channel resampled to the nearest delay tap at rate M*delta_f, with
/// Rayleigh tap gains normalized to unit total power and per-tap Doppler
/// drawn uniform in (-max_doppler_bins, max_doppler_bins).
pub fn eva_channel(
    cfg: &FrameConfig,
    max_doppler_bins: f64,
    snr_db: f64,
    idi_span: usize,
    rng: &mut impl Rng,
) -> ChannelRealization {
    let sample_rate = cfg.m as f64 * cfg.delta_f;
    // Merge PDP entries that land on the same tap.
    let mut tap_power: Vec<(usize, f64)> = Vec::new();
    for (delay_ns, power_db) in EVA_PDP {
        let tap = (delay_ns * 1e-9 * sample_rate).round() as usize;
        let p = 10f64.powf(power_db / 10.0);
        match tap_power.iter_mut().find(|(t, _)| *t == tap) {
            Some((_, acc)) => *acc += p,
            None => tap_power.push((tap, p)),
        }
    }
    let total: f64 = tap_power.iter().map(|(_, p)| p).sum();
    let paths = tap_power
        .into_iter()
        .map(|(tap, p)| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            let gain = Complex::new(re, im) * (p / total / 2.0).sqrt();
            let nu = if max_doppler_bins > 0.0 {
                rng.gen_range(-max_doppler_bins..max_doppler_bins)
            } else {
                0.0
            };
            let doppler_tap = nu.round() as i64;
            ChannelPath {
                delay_tap: tap,
                doppler_tap,
                frac_doppler: nu - doppler_tap as f64,
                gain,
            }
        })
        .collect();
    ChannelRealization::snr_db(paths, snr_db, idi_span)
}

//! Experiment runner: declarative sweep configs, seeded Monte-Carlo
//! execution over a worker pool, CSV emission with per-point flushing,
//! and self-contained SVG charts.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{apply_time, eva_channel, ChannelPath, ChannelRealization};
use crate::commsrx::{demap_frame, equalize_mmse, estimate_channel, genie_estimate, nmse};
use crate::error::{Error, Result};
use crate::frame::{
    demodulate_frame_sync, map_data, modulate, random_bits, FrameConfig, Modulation,
};
use crate::metrics::{associate_targets, Numerology};
use crate::pilot::{Pilot2D, PilotSpec};
use crate::sensing::{CorrelationSurface, DetectionResult, Detector, DetectorOpts};

const KMH_TO_MPS: f64 = 1.0 / 3.6;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    SensingSweep,
    CommsSweep,
    Demo3Targets,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::SensingSweep => "sensing_sweep",
            Scenario::CommsSweep => "comms_sweep",
            Scenario::Demo3Targets => "demo3_targets",
        }
    }
}

/// Frame numerology defaults (60 kHz spacing, 6 GHz carrier, 64
/// subcarriers by 16 symbols, 16QAM, pilot at 0.2 of the data power on a
/// spacing-2 subcarrier comb).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaseConfig {
    pub m: usize,
    pub n: usize,
    pub delta_f: f64,
    pub carrier_hz: f64,
    /// Cyclic-prefix length; when omitted, M/2 for sensing scenarios
    /// (delay window up to M/d_f) and M/4 for the comms sweep.
    pub cp_len: Option<usize>,
    pub modulation: Modulation,
    pub d_f: usize,
    pub d_t: usize,
    pub pilot_power: f64,
}

impl Default for BaseConfig {
    fn default() -> Self {
        Self {
            m: 64,
            n: 16,
            delta_f: 60e3,
            carrier_hz: 6e9,
            cp_len: None,
            modulation: Modulation::Qam16,
            d_f: 2,
            d_t: 1,
            pilot_power: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub gamma: f64,
    pub delta_kappa: f64,
    pub n_j: usize,
    pub idi_span: usize,
    pub fractional: bool,
    pub phase_compensation: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        let o = DetectorOpts::default();
        Self {
            gamma: o.gamma_rel,
            delta_kappa: o.delta_kappa,
            n_j: o.n_j,
            idi_span: o.model_idi_span,
            fractional: o.fractional,
            phase_compensation: o.phase_compensation,
        }
    }
}

impl DetectorConfig {
    pub fn opts(&self) -> DetectorOpts {
        DetectorOpts {
            gamma_rel: self.gamma,
            delta_kappa: self.delta_kappa,
            n_j: self.n_j,
            model_idi_span: self.idi_span,
            fractional: self.fractional,
            phase_compensation: self.phase_compensation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Doppler-axis lengths swept by the sensing scenario (M stays fixed).
    pub n_values: Vec<usize>,
    /// SNR grid in dB; when omitted, {10,14,18,20} for sensing and
    /// 0..=32 step 4 for the comms sweep.
    pub snr_db: Option<Vec<f64>>,
    /// Sensing targets per trial.
    pub targets: usize,
    /// Largest sensing delay tap (inclusive).
    pub max_delay_tap: usize,
    /// Largest target radial speed in km/h; the two-way Doppler of a
    /// reflector at this speed bounds the uniform Doppler draw.
    pub target_speed_kmh: f64,
    /// Mobile speed for the comms fading channel in km/h (one-way Doppler).
    pub comm_speed_kmh: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_values: vec![64, 128, 256, 512],
            snr_db: None,
            targets: 3,
            max_delay_tap: 20,
            target_speed_kmh: 500.0,
            comm_speed_kmh: 120.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub master_seed: u64,
    pub trials: usize,
    pub out_dir: PathBuf,
    pub base: BaseConfig,
    pub detector: DetectorConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            scenario: Scenario::CommsSweep,
            master_seed: 1,
            trials: 200,
            out_dir: PathBuf::from("out"),
            base: BaseConfig::default(),
            detector: DetectorConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn snr_grid(&self) -> Vec<f64> {
        match (&self.sweep.snr_db, self.scenario) {
            (Some(v), _) => v.clone(),
            (None, Scenario::CommsSweep) => (0..=8).map(|i| 4.0 * i as f64).collect(),
            (None, _) => vec![10.0, 14.0, 18.0, 20.0],
        }
    }

    fn resolved_cp(&self, sensing: bool) -> usize {
        self.base.cp_len.unwrap_or(if sensing { self.base.m / 2 } else { self.base.m / 4 })
    }

    /// Frame numerology for a sensing run with the given Doppler-axis
    /// length.
    pub fn sensing_frame_config(&self, n: usize) -> Result<FrameConfig> {
        let b = &self.base;
        Ok(FrameConfig {
            m: b.m,
            n,
            delta_f: b.delta_f,
            cp_len: self.resolved_cp(true),
            carrier_hz: b.carrier_hz,
            pilot: PilotSpec::auto(b.m, n, b.d_f, b.d_t, b.pilot_power)?,
            modulation: b.modulation,
        })
    }

    pub fn comms_frame_config(&self) -> Result<FrameConfig> {
        let b = &self.base;
        Ok(FrameConfig {
            m: b.m,
            n: b.n,
            delta_f: b.delta_f,
            cp_len: self.resolved_cp(false),
            carrier_hz: b.carrier_hz,
            pilot: PilotSpec::auto(b.m, b.n, b.d_f, b.d_t, b.pilot_power)?,
            modulation: b.modulation,
        })
    }

    /// Check the declared invariants; returns advisory warnings (such as
    /// non-power-of-two FFT sizes, which are accepted but slower).
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        let b = &self.base;
        if b.d_f == 0 || b.m % b.d_f != 0 {
            return Err(Error::Divisibility {
                what: "d_f",
                value: b.d_f,
                dim: "M",
                dim_value: b.m,
            });
        }
        if b.pilot_power <= 0.0 {
            return Err(Error::NonPositivePower(b.pilot_power));
        }
        let dims: Vec<usize> = match self.scenario {
            Scenario::SensingSweep => self.sweep.n_values.clone(),
            Scenario::CommsSweep => vec![b.n],
            Scenario::Demo3Targets => vec![b.m],
        };
        for &n in &dims {
            if b.d_t == 0 || n % b.d_t != 0 {
                return Err(Error::Divisibility {
                    what: "d_t",
                    value: b.d_t,
                    dim: "N",
                    dim_value: n,
                });
            }
            if !n.is_power_of_two() {
                warnings.push(format!(
                    "N = {n} is not a power of two; FFTs fall back to slower mixed-radix plans"
                ));
            }
        }
        if !b.m.is_power_of_two() {
            warnings.push(format!(
                "M = {} is not a power of two; FFTs fall back to slower mixed-radix plans",
                b.m
            ));
        }
        if self.scenario == Scenario::SensingSweep {
            if self.sweep.n_values.is_empty() {
                return Err(Error::Config("sweep.n_values must not be empty".into()));
            }
            if self.sweep.targets == 0 {
                return Err(Error::Config("sweep.targets must be >= 1".into()));
            }
            let cp = self.resolved_cp(true);
            if self.sweep.max_delay_tap >= cp {
                return Err(Error::Config(format!(
                    "sweep.max_delay_tap = {} must stay below the cyclic prefix length {}",
                    self.sweep.max_delay_tap, cp
                )));
            }
            if self.sweep.max_delay_tap >= b.m / b.d_f {
                return Err(Error::Config(format!(
                    "sweep.max_delay_tap = {} exceeds the unambiguous delay window M/d_f = {}",
                    self.sweep.max_delay_tap,
                    b.m / b.d_f
                )));
            }
            // Peak two-way Doppler must fit the unambiguous Doppler window
            // at the smallest swept N.
            let hz = two_way_doppler_hz(self.sweep.target_speed_kmh, b.carrier_hz);
            for &n in &self.sweep.n_values {
                let bins = hz * n as f64 / b.delta_f;
                let half = (n / b.d_t) as f64 / 2.0;
                if bins > half {
                    return Err(Error::DopplerWindow { max_doppler: bins, half_window: half });
                }
            }
        }
        Ok(warnings)
    }
}

/// Two-way (monostatic) Doppler shift of a reflector at `speed_kmh`.
pub fn two_way_doppler_hz(speed_kmh: f64, carrier_hz: f64) -> f64 {
    2.0 * speed_kmh * KMH_TO_MPS * carrier_hz / crate::metrics::SPEED_OF_LIGHT
}

/// Parse a TOML experiment config; unknown keys and type errors are
/// rejected with the line and column of the offending entry. An empty
/// file yields the full default spec.
pub fn parse_config(text: &str) -> Result<ExperimentSpec> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn parse_config_file(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path)?;
    parse_config(&text)
}

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Streams keep the independent random inputs of one trial decoupled so
/// that, e.g., the target draw of trial t is identical at every sweep
/// point (paired comparisons across N and SNR).
#[derive(Debug, Clone, Copy)]
pub enum SeedStream {
    /// Sensing target geometry; indexed by trial only.
    Targets,
    /// Sensing payload and noise; indexed by (sweep point, trial).
    SensingNoise,
    /// Comms fading realization; indexed by trial only.
    CommsChannel,
    /// Comms payload bits; indexed by (sweep point, trial).
    CommsData,
    /// Comms receiver noise; indexed by (sweep point, trial). Derived
    /// once per trial and replayed identically for both pilot arms.
    CommsNoise,
    /// Demo payload and noise.
    Demo,
}

impl SeedStream {
    fn code(self) -> u64 {
        match self {
            SeedStream::Targets => 1,
            SeedStream::SensingNoise => 2,
            SeedStream::CommsChannel => 3,
            SeedStream::CommsData => 4,
            SeedStream::CommsNoise => 5,
            SeedStream::Demo => 6,
        }
    }
}

/// Counter-based seed derivation: the RNG for any (stream, index) pair
/// depends only on those values and the master seed, never on scheduling.
pub fn derive_rng(master_seed: u64, stream: SeedStream, index: u64) -> ChaCha8Rng {
    let mut s = splitmix64(master_seed ^ splitmix64(stream.code() ^ splitmix64(index)));
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

fn point_index(point: usize, trial: usize) -> u64 {
    ((point as u64) << 32) | trial as u64
}

// ---------------------------------------------------------------------------
// Sensing sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingPoint {
    pub n: usize,
    pub snr_db: f64,
    pub err_integer_mean: f64,
    pub err_integer_std: f64,
    pub err_refined_mean: f64,
    pub err_refined_std: f64,
    pub trials: usize,
    /// Trials that produced at least one truth-estimate association.
    pub used_trials: usize,
    pub matched: usize,
    pub missed: usize,
    pub spurious: usize,
}

struct SensingTrial {
    err_integer: Option<f64>,
    err_refined: Option<f64>,
    matched: usize,
    missed: usize,
    spurious: usize,
}

/// One physical target, drawn independently of the sweep point so the
/// same scene is observed at every (N, SNR).
#[derive(Debug, Clone, Copy)]
struct PhysicalTarget {
    delay_tap: usize,
    doppler_hz: f64,
    gain: Complex<f64>,
}

fn draw_targets(spec: &ExperimentSpec, trial: usize) -> Vec<PhysicalTarget> {
    let mut rng = derive_rng(spec.master_seed, SeedStream::Targets, trial as u64);
    let max_hz = two_way_doppler_hz(spec.sweep.target_speed_kmh, spec.base.carrier_hz);
    (0..spec.sweep.targets)
        .map(|_| {
            let delay_tap = rng.gen_range(0..=spec.sweep.max_delay_tap);
            let doppler_hz = rng.gen_range(0.0..max_hz);
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            PhysicalTarget { delay_tap, doppler_hz, gain: Complex::new(re, im) * 0.5f64.sqrt() }
        })
        .collect()
}

fn targets_to_paths(targets: &[PhysicalTarget], doppler_res_hz: f64) -> Vec<ChannelPath> {
    targets
        .iter()
        .map(|t| {
            let bins = t.doppler_hz / doppler_res_hz;
            let tap = bins.round() as i64;
            ChannelPath {
                delay_tap: t.delay_tap,
                doppler_tap: tap,
                frac_doppler: (bins - tap as f64).clamp(-0.499_999_9, 0.499_999_9),
                gain: t.gain,
            }
        })
        .collect()
}

fn sensing_trial(
    spec: &ExperimentSpec,
    det: &Detector<f64>,
    snr_db: f64,
    point: usize,
    trial: usize,
) -> Result<SensingTrial> {
    let cfg = det.cfg();
    let num = Numerology {
        delta_f: cfg.delta_f,
        m: cfg.m,
        n: cfg.n,
        carrier_hz: cfg.carrier_hz,
    };
    let targets = draw_targets(spec, trial);
    let paths = targets_to_paths(&targets, num.doppler_resolution_hz());
    let truth_bins: Vec<(usize, f64)> = targets
        .iter()
        .map(|t| (t.delay_tap, t.doppler_hz / num.doppler_resolution_hz()))
        .collect();
    let ch = ChannelRealization::snr_db(paths, snr_db, 0);

    let mut rng =
        derive_rng(spec.master_seed, SeedStream::SensingNoise, point_index(point, trial));
    let mask = det.pilot().occupied_tf_mask();
    let bits = random_bits(cfg.payload_bits(mask), &mut rng);
    let data_tf = map_data::<f64>(&bits, mask, cfg.m, cfg.n, cfg.modulation)?;
    let tx = modulate(cfg, det.pilot(), &data_tf, bits)?;
    let y = apply_time(&tx.samples, &ch, cfg, &mut rng)?;
    let r = demodulate_frame_sync(&y, cfg)?.sfft()?;

    let detections = det.detect(&r)?;
    let est_bins: Vec<(usize, f64)> =
        detections.iter().map(|d| (d.delay_tap, d.doppler_bins())).collect();
    let assoc = associate_targets(&truth_bins, &est_bins);

    let mut int_acc = 0.0;
    let mut ref_acc = 0.0;
    let mut count = 0usize;
    for &(ti, ei) in &assoc.pairs {
        let truth = truth_bins[ti].1;
        if truth.abs() < 1e-6 {
            continue;
        }
        int_acc += ((detections[ei].doppler_tap as f64 - truth) / truth).abs();
        ref_acc += ((detections[ei].doppler_bins() - truth) / truth).abs();
        count += 1;
    }
    Ok(SensingTrial {
        err_integer: (count > 0).then(|| int_acc / count as f64),
        err_refined: (count > 0).then(|| ref_acc / count as f64),
        matched: assoc.pairs.len(),
        missed: assoc.missed_truths.len(),
        spurious: assoc.spurious_estimates.len(),
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
        / (values.len() - 1) as f64;
    (mean, var.sqrt())
}

/// Run the sensing sweep; `sink` receives each aggregated point as soon
/// as it completes (CSV flushing), and the full table is returned.
pub fn run_sensing_sweep(
    spec: &ExperimentSpec,
    mut sink: impl FnMut(&SensingPoint) -> Result<()>,
) -> Result<Vec<SensingPoint>> {
    let snrs = spec.snr_grid();
    let mut rows = Vec::new();
    for (ni, &n) in spec.sweep.n_values.iter().enumerate() {
        let cfg = spec.sensing_frame_config(n)?;
        // One detector per N: its fractional model cache is shared by
        // every SNR point and trial at this pilot size.
        let det = Detector::<f64>::new(cfg, spec.detector.opts())?;
        for (si, &snr_db) in snrs.iter().enumerate() {
            let point = ni * snrs.len() + si;
            let trials: Vec<SensingTrial> = (0..spec.trials)
                .into_par_iter()
                .map(|t| sensing_trial(spec, &det, snr_db, point, t))
                .collect::<Result<Vec<_>>>()?;
            let ints: Vec<f64> = trials.iter().filter_map(|t| t.err_integer).collect();
            let refs: Vec<f64> = trials.iter().filter_map(|t| t.err_refined).collect();
            let (im, is) = mean_std(&ints);
            let (rm, rs) = mean_std(&refs);
            let row = SensingPoint {
                n,
                snr_db,
                err_integer_mean: im,
                err_integer_std: is,
                err_refined_mean: rm,
                err_refined_std: rs,
                trials: spec.trials,
                used_trials: ints.len(),
                matched: trials.iter().map(|t| t.matched).sum(),
                missed: trials.iter().map(|t| t.missed).sum(),
                spurious: trials.iter().map(|t| t.spurious).sum(),
            };
            sink(&row)?;
            rows.push(row);
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Comms sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommsPoint {
    pub snr_db: f64,
    pub ber_unified: f64,
    pub ber_conventional: f64,
    /// Mean channel-estimate NMSE (linear) against the exact per-symbol
    /// diagonal channel.
    pub nmse_unified: f64,
    pub nmse_conventional: f64,
    pub trials: usize,
}

impl CommsPoint {
    pub fn nmse_unified_db(&self) -> f64 {
        10.0 * self.nmse_unified.log10()
    }

    pub fn nmse_conventional_db(&self) -> f64 {
        10.0 * self.nmse_conventional.log10()
    }
}

struct CommsTrial {
    bit_errors_unified: usize,
    bit_errors_conventional: usize,
    bits: usize,
    nmse_unified: f64,
    nmse_conventional: f64,
}

fn comms_arm(
    cfg: &FrameConfig,
    pilot: &Pilot2D<f64>,
    ch: &ChannelRealization,
    bits: &[bool],
    noise_rng: &mut ChaCha8Rng,
) -> Result<(usize, f64)> {
    let mask = pilot.occupied_tf_mask();
    let data_tf = map_data::<f64>(bits, mask, cfg.m, cfg.n, cfg.modulation)?;
    let tx = modulate(cfg, pilot, &data_tf, bits.to_vec())?;
    let y = apply_time(&tx.samples, ch, cfg, noise_rng)?;
    let y_tf = demodulate_frame_sync(&y, cfg)?;
    let est = estimate_channel(&y_tf, pilot, ch.noise_var)?;
    let genie = genie_estimate::<f64>(ch, cfg)?;
    let x_hat = equalize_mmse(&y_tf, &est)?;
    let rx_bits = demap_frame(&x_hat, mask, cfg.modulation);
    let errors = bits.iter().zip(&rx_bits).filter(|(a, b)| a != b).count();
    Ok((errors, nmse(&est.h_tf, &genie.h_tf)?))
}

fn comms_trial(
    spec: &ExperimentSpec,
    cfg: &FrameConfig,
    unified: &Pilot2D<f64>,
    conventional: &Pilot2D<f64>,
    snr_db: f64,
    point: usize,
    trial: usize,
) -> Result<CommsTrial> {
    let doppler_hz =
        spec.sweep.comm_speed_kmh * KMH_TO_MPS * cfg.carrier_hz / crate::metrics::SPEED_OF_LIGHT;
    let max_bins = doppler_hz * cfg.n as f64 / cfg.delta_f;
    let mut ch_rng = derive_rng(spec.master_seed, SeedStream::CommsChannel, trial as u64);
    let ch = eva_channel(cfg, max_bins, snr_db, 0, &mut ch_rng);

    let mut data_rng =
        derive_rng(spec.master_seed, SeedStream::CommsData, point_index(point, trial));
    let bits = random_bits(cfg.payload_bits(unified.occupied_tf_mask()), &mut data_rng);

    // The same noise stream is replayed for both arms: the comparison
    // differs only in the pilot waveform.
    let noise_idx = point_index(point, trial);
    let mut rng_u = derive_rng(spec.master_seed, SeedStream::CommsNoise, noise_idx);
    let mut rng_c = derive_rng(spec.master_seed, SeedStream::CommsNoise, noise_idx);
    let (errs_u, nmse_u) = comms_arm(cfg, unified, &ch, &bits, &mut rng_u)?;
    let (errs_c, nmse_c) = comms_arm(cfg, conventional, &ch, &bits, &mut rng_c)?;
    Ok(CommsTrial {
        bit_errors_unified: errs_u,
        bit_errors_conventional: errs_c,
        bits: bits.len(),
        nmse_unified: nmse_u,
        nmse_conventional: nmse_c,
    })
}

/// Run the comms sweep: unified delay-Doppler pilot versus a flat comb
/// DMRS of equal power on the same resources, paired per trial.
pub fn run_comms_sweep(
    spec: &ExperimentSpec,
    mut sink: impl FnMut(&CommsPoint) -> Result<()>,
) -> Result<Vec<CommsPoint>> {
    let cfg = spec.comms_frame_config()?;
    let unified = Pilot2D::<f64>::assemble(&cfg.pilot, cfg.m, cfg.n)?;
    let conventional = Pilot2D::<f64>::conventional_comb(
        cfg.m,
        cfg.n,
        cfg.pilot.d_f,
        cfg.pilot.d_t,
        cfg.pilot.power_scale,
    )?;
    let snrs = spec.snr_grid();
    let mut rows = Vec::new();
    for (point, &snr_db) in snrs.iter().enumerate() {
        let trials: Vec<CommsTrial> = (0..spec.trials)
            .into_par_iter()
            .map(|t| comms_trial(spec, &cfg, &unified, &conventional, snr_db, point, t))
            .collect::<Result<Vec<_>>>()?;
        let bits: usize = trials.iter().map(|t| t.bits).sum();
        let row = CommsPoint {
            snr_db,
            ber_unified: trials.iter().map(|t| t.bit_errors_unified).sum::<usize>() as f64
                / bits as f64,
            ber_conventional: trials.iter().map(|t| t.bit_errors_conventional).sum::<usize>()
                as f64
                / bits as f64,
            nmse_unified: trials.iter().map(|t| t.nmse_unified).sum::<f64>()
                / trials.len() as f64,
            nmse_conventional: trials.iter().map(|t| t.nmse_conventional).sum::<f64>()
                / trials.len() as f64,
            trials: spec.trials,
        };
        sink(&row)?;
        rows.push(row);
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Three-target demo
// ---------------------------------------------------------------------------

/// The fixed three-target scene: delay taps {0, 9, 20}, Doppler
/// {-21.7875, 0.9816, 22.5537} bins, complex gains as listed.
pub fn demo3_paths() -> Vec<ChannelPath> {
    let split = |bins: f64, gain: Complex<f64>, delay_tap: usize| {
        let tap = bins.round() as i64;
        ChannelPath { delay_tap, doppler_tap: tap, frac_doppler: bins - tap as f64, gain }
    };
    vec![
        split(-21.7875, Complex::new(0.2352, 0.3241), 0),
        split(0.9816, Complex::new(0.1336, 0.7132), 9),
        split(22.5537, Complex::new(0.5972, 0.3935), 20),
    ]
}

#[derive(Debug, Clone)]
pub struct DemoOutput {
    pub detections: Vec<DetectionResult>,
    pub surface: CorrelationSurface,
    pub truth: Vec<ChannelPath>,
}

/// One 64x64 frame at 18 dB SNR carrying 16QAM payload over the fixed
/// three-target scene, detected by the full two-stage pipeline.
pub fn run_demo3(spec: &ExperimentSpec) -> Result<DemoOutput> {
    let base = BaseConfig { n: spec.base.m, ..spec.base.clone() };
    let demo_spec = ExperimentSpec { base, ..spec.clone() };
    let cfg = demo_spec.sensing_frame_config(demo_spec.base.n)?;
    let det = Detector::<f64>::new(cfg, demo_spec.detector.opts())?;
    let cfg = det.cfg();

    let truth = demo3_paths();
    let ch = ChannelRealization::snr_db(truth.clone(), 18.0, 0);
    let mut rng = derive_rng(spec.master_seed, SeedStream::Demo, 0);
    let mask = det.pilot().occupied_tf_mask();
    let bits = random_bits(cfg.payload_bits(mask), &mut rng);
    let data_tf = map_data::<f64>(&bits, mask, cfg.m, cfg.n, cfg.modulation)?;
    let tx = modulate(cfg, det.pilot(), &data_tf, bits)?;
    let y = apply_time(&tx.samples, &ch, cfg, &mut rng)?;
    let r = demodulate_frame_sync(&y, cfg)?.sfft()?;
    Ok(DemoOutput { detections: det.detect(&r)?, surface: det.surface(&r)?, truth })
}

// ---------------------------------------------------------------------------
// Artifact emission
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct RunArtifacts {
    pub files: Vec<PathBuf>,
}

struct CsvSink {
    file: fs::File,
}

impl CsvSink {
    fn create(path: &Path, header: &str) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut file = fs::File::create(path)?;
        writeln!(file, "{header}")?;
        file.flush()?;
        Ok(Self { file })
    }

    fn row(&mut self, line: &str) -> Result<()> {
        writeln!(self.file, "{line}")?;
        self.file.flush()?;
        Ok(())
    }
}

/// Execute the configured scenario, writing CSV tables (flushed per
/// sweep point) and SVG charts into `out_dir`.
pub fn run(spec: &ExperimentSpec) -> Result<RunArtifacts> {
    spec.validate()?;
    fs::create_dir_all(&spec.out_dir)?;
    let mut artifacts = RunArtifacts::default();
    match spec.scenario {
        Scenario::SensingSweep => run_sensing_artifacts(spec, &mut artifacts)?,
        Scenario::CommsSweep => run_comms_artifacts(spec, &mut artifacts)?,
        Scenario::Demo3Targets => run_demo_artifacts(spec, &mut artifacts)?,
    }
    Ok(artifacts)
}

fn run_sensing_artifacts(spec: &ExperimentSpec, artifacts: &mut RunArtifacts) -> Result<()> {
    let csv_path = spec.out_dir.join("sensing_sweep.csv");
    let mut sink = CsvSink::create(
        &csv_path,
        "n,snr_db,err_integer_mean,err_integer_std,err_refined_mean,err_refined_std,trials,used_trials,matched,missed,spurious",
    )?;
    let rows = run_sensing_sweep(spec, |r| {
        sink.row(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.n,
            r.snr_db,
            r.err_integer_mean,
            r.err_integer_std,
            r.err_refined_mean,
            r.err_refined_std,
            r.trials,
            r.used_trials,
            r.matched,
            r.missed,
            r.spurious
        ))
    })?;
    artifacts.files.push(csv_path);

    let snrs = spec.snr_grid();
    let mut series = Vec::new();
    for (si, &snr) in snrs.iter().enumerate() {
        let pick = |f: fn(&SensingPoint) -> f64| -> Vec<(f64, f64)> {
            rows.iter()
                .filter(|r| r.snr_db == snr)
                .map(|r| (r.n as f64, f(r)))
                .collect()
        };
        let color = PALETTE[si % PALETTE.len()];
        series.push(Series {
            label: format!("refined, {snr} dB"),
            color,
            dashed: false,
            points: pick(|r| r.err_refined_mean),
        });
        series.push(Series {
            label: format!("integer, {snr} dB"),
            color,
            dashed: true,
            points: pick(|r| r.err_integer_mean),
        });
    }
    let svg_path = spec.out_dir.join("sensing_sweep_n.svg");
    fs::write(
        &svg_path,
        line_chart_svg(
            "Doppler error rate vs pilot size",
            "N (Doppler bins)",
            "mean Doppler error rate",
            true,
            &series,
        ),
    )?;
    artifacts.files.push(svg_path);
    Ok(())
}

fn run_comms_artifacts(spec: &ExperimentSpec, artifacts: &mut RunArtifacts) -> Result<()> {
    let csv_path = spec.out_dir.join("comms_sweep.csv");
    let mut sink = CsvSink::create(
        &csv_path,
        "snr_db,ber_unified,ber_conventional,nmse_unified_db,nmse_conventional_db,trials",
    )?;
    let rows = run_comms_sweep(spec, |r| {
        sink.row(&format!(
            "{},{},{},{},{},{}",
            r.snr_db,
            r.ber_unified,
            r.ber_conventional,
            r.nmse_unified_db(),
            r.nmse_conventional_db(),
            r.trials
        ))
    })?;
    artifacts.files.push(csv_path);

    let ber_series = vec![
        Series {
            label: "unified DD pilot".into(),
            color: PALETTE[0],
            dashed: false,
            points: rows.iter().map(|r| (r.snr_db, r.ber_unified)).collect(),
        },
        Series {
            label: "conventional comb".into(),
            color: PALETTE[1],
            dashed: true,
            points: rows.iter().map(|r| (r.snr_db, r.ber_conventional)).collect(),
        },
    ];
    let svg_ber = spec.out_dir.join("comms_sweep_snr_db.svg");
    fs::write(
        &svg_ber,
        line_chart_svg("Bit error rate vs SNR", "SNR (dB)", "BER", true, &ber_series),
    )?;
    artifacts.files.push(svg_ber);

    let nmse_series = vec![
        Series {
            label: "unified DD pilot".into(),
            color: PALETTE[0],
            dashed: false,
            points: rows.iter().map(|r| (r.snr_db, r.nmse_unified_db())).collect(),
        },
        Series {
            label: "conventional comb".into(),
            color: PALETTE[1],
            dashed: true,
            points: rows.iter().map(|r| (r.snr_db, r.nmse_conventional_db())).collect(),
        },
    ];
    let svg_nmse = spec.out_dir.join("comms_sweep_nmse_db.svg");
    fs::write(
        &svg_nmse,
        line_chart_svg(
            "Channel estimation NMSE vs SNR",
            "SNR (dB)",
            "NMSE (dB)",
            false,
            &nmse_series,
        ),
    )?;
    artifacts.files.push(svg_nmse);
    Ok(())
}

fn run_demo_artifacts(spec: &ExperimentSpec, artifacts: &mut RunArtifacts) -> Result<()> {
    let out = run_demo3(spec)?;

    let det_path = spec.out_dir.join("demo3_targets_detections.csv");
    let mut sink = CsvSink::create(
        &det_path,
        "rank,delay_tap,doppler_tap,frac_doppler,doppler_bins,peak_mag,est_range_m,est_doppler_hz",
    )?;
    for (i, d) in out.detections.iter().enumerate() {
        sink.row(&format!(
            "{},{},{},{},{},{},{},{}",
            i,
            d.delay_tap,
            d.doppler_tap,
            d.frac_doppler,
            d.doppler_bins(),
            d.peak_mag,
            d.est_range_m,
            d.est_doppler_hz
        ))?;
    }
    artifacts.files.push(det_path);

    let surf_path = spec.out_dir.join("demo3_targets_surface.csv");
    let mut sink = CsvSink::create(&surf_path, "delay_tap,doppler_bin,value")?;
    let (wl, wk) = out.surface.dims();
    for l in 0..wl {
        for j in 0..wk {
            sink.row(&format!(
                "{},{},{}",
                l,
                out.surface.signed_doppler(j),
                out.surface.at(l, j)
            ))?;
        }
    }
    artifacts.files.push(surf_path);

    let svg_path = spec.out_dir.join("demo3_targets_surface.svg");
    fs::write(&svg_path, surface_heatmap_svg(&out.surface))?;
    artifacts.files.push(svg_path);
    Ok(())
}

// ---------------------------------------------------------------------------
// SVG charts
// ---------------------------------------------------------------------------

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Series {
    label: String,
    color: &'static str,
    dashed: bool,
    points: Vec<(f64, f64)>,
}

/// Minimal self-contained line chart; log_y plots log10 of the values
/// (non-positive points are dropped).
fn line_chart_svg(
    title: &str,
    x_label: &str,
    y_label: &str,
    log_y: bool,
    series: &[Series],
) -> String {
    let (w, h) = (760.0, 480.0);
    let (ml, mr, mt, mb) = (70.0, 160.0, 40.0, 55.0);
    let map_y = |v: f64| if log_y { v.log10() } else { v };
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|&(_, y)| y.is_finite() && (!log_y || y > 0.0))
        .collect();
    let (mut x0, mut x1) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(x, _)| (a.min(x), b.max(x)));
    let (mut y0, mut y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(_, y)| {
        (a.min(map_y(y)), b.max(map_y(y)))
    });
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let py = |y: f64| h - mb - (map_y(y) - y0) / (y1 - y0) * (h - mt - mb);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{title}</text>\n",
        (ml + w - mr) / 2.0
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{0}\" stroke=\"black\"/>\n",
        h - mb,
        w - mr
    ));
    // Ticks: 5 per axis.
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let xp = px(fx);
        svg.push_str(&format!(
            "<line x1=\"{xp}\" y1=\"{0}\" x2=\"{xp}\" y2=\"{1}\" stroke=\"black\"/>\n<text x=\"{xp}\" y=\"{2}\" text-anchor=\"middle\">{fx:.4}</text>\n",
            h - mb,
            h - mb + 5.0,
            h - mb + 20.0
        ));
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let yp = h - mb - (fy - y0) / (y1 - y0) * (h - mt - mb);
        let label = if log_y { format!("1e{fy:.2}") } else { format!("{fy:.3}") };
        svg.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{yp}\" x2=\"{ml}\" y2=\"{yp}\" stroke=\"black\"/>\n<text x=\"{1}\" y=\"{2}\" text-anchor=\"end\">{label}</text>\n",
            ml - 5.0,
            ml - 8.0,
            yp + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>\n",
        (ml + w - mr) / 2.0,
        h - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {0})\">{y_label}</text>\n",
        (mt + h - mb) / 2.0
    ));
    // Series polylines and legend.
    for (i, s) in series.iter().enumerate() {
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|&&(_, y)| y.is_finite() && (!log_y || y > 0.0))
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let dash = if s.dashed { " stroke-dasharray=\"6,4\"" } else { "" };
        if !path.is_empty() {
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.8\"{dash} points=\"{}\"/>\n",
                s.color,
                path.join(" ")
            ));
            for p in &path {
                let (xs, ys) = p.split_once(',').unwrap();
                svg.push_str(&format!(
                    "<circle cx=\"{xs}\" cy=\"{ys}\" r=\"2.6\" fill=\"{}\"/>\n",
                    s.color
                ));
            }
        }
        let ly = mt + 16.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{ly}\" x2=\"{1}\" y2=\"{ly}\" stroke=\"{2}\" stroke-width=\"1.8\"{dash}/>\n<text x=\"{3}\" y=\"{4}\">{5}</text>\n",
            w - mr + 10.0,
            w - mr + 34.0,
            s.color,
            w - mr + 40.0,
            ly + 4.0,
            s.label
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Grayscale heatmap of a correlation surface, delay down and signed
/// Doppler (window order) across.
fn surface_heatmap_svg(surface: &CorrelationSurface) -> String {
    let (wl, wk) = surface.dims();
    let cell = 8.0;
    let (ml, mt) = (40.0, 30.0);
    let (w, h) = (ml + wk as f64 * cell + 20.0, mt + wl as f64 * cell + 40.0);
    let max = surface.max().max(1e-300);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n<text x=\"{ml}\" y=\"18\">correlation surface (delay down, Doppler across; hypothesis order 0..+, -..-1)</text>\n"
    );
    for l in 0..wl {
        for j in 0..wk {
            let v = (surface.at(l, j) / max).clamp(0.0, 1.0);
            let shade = (255.0 * (1.0 - v)).round() as u8;
            svg.push_str(&format!(
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},{shade})\"/>\n",
                ml + j as f64 * cell,
                mt + l as f64 * cell
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_table_defaults() {
        let spec = parse_config("").unwrap();
        assert_eq!(spec, ExperimentSpec::default());
        assert_eq!(spec.base.m, 64);
        assert_eq!(spec.base.n, 16);
        assert_eq!(spec.base.delta_f, 60e3);
        assert_eq!(spec.base.carrier_hz, 6e9);
        assert_eq!(spec.base.modulation, Modulation::Qam16);
        assert_eq!(spec.base.pilot_power, 0.2);
        assert!(spec.validate().unwrap().is_empty());
    }

    #[test]
    fn unknown_key_rejected_with_location() {
        let err = parse_config("scenario = \"comms_sweep\"\n\n[base]\nm = 64\nnn = 16\n")
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("nn"), "{msg}");
        assert!(msg.contains("line 5"), "{msg}");
    }

    #[test]
    fn divisibility_violation_names_invariant() {
        let spec = parse_config("[base]\nd_f = 3\n").unwrap();
        let msg = spec.validate().unwrap_err().to_string();
        assert!(msg.contains("d_f = 3"), "{msg}");
        assert!(msg.contains("does not divide"), "{msg}");
    }

    #[test]
    fn non_power_of_two_accepted_with_warning() {
        let spec = parse_config("[base]\nn = 100\nd_t = 1\n").unwrap();
        let warnings = spec.validate().unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("100"));
    }

    #[test]
    fn zero_trials_rejected() {
        let spec = parse_config("trials = 0\n").unwrap();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn excess_doppler_rejected() {
        let spec = parse_config(
            "scenario = \"sensing_sweep\"\n[sweep]\nn_values = [64]\ntarget_speed_kmh = 20000.0\n",
        )
        .unwrap();
        assert!(matches!(spec.validate(), Err(Error::DopplerWindow { .. })));
    }

    #[test]
    fn seed_derivation_is_stream_and_index_separated() {
        let a = derive_rng(7, SeedStream::Targets, 0).gen::<u64>();
        let b = derive_rng(7, SeedStream::Targets, 1).gen::<u64>();
        let c = derive_rng(7, SeedStream::SensingNoise, 0).gen::<u64>();
        let d = derive_rng(7, SeedStream::Targets, 0).gen::<u64>();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, d);
    }

    #[test]
    fn target_draw_is_pairing_invariant() {
        let spec = ExperimentSpec::default();
        let a = draw_targets(&spec, 5);
        let b = draw_targets(&spec, 5);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.delay_tap, y.delay_tap);
            assert_eq!(x.doppler_hz, y.doppler_hz);
            assert_eq!(x.gain, y.gain);
        }
    }

    #[test]
    fn demo3_paths_quantize_to_expected_bins() {
        let paths = demo3_paths();
        assert_eq!(
            paths.iter().map(|p| p.delay_tap).collect::<Vec<_>>(),
            vec![0, 9, 20]
        );
        assert_eq!(
            paths.iter().map(|p| p.doppler_tap).collect::<Vec<_>>(),
            vec![-22, 1, 23]
        );
        for p in &paths {
            assert!(p.frac_doppler.abs() < 0.5);
        }
    }

    #[test]
    fn demo3_detects_three_targets() {
        let spec = ExperimentSpec {
            scenario: Scenario::Demo3Targets,
            ..ExperimentSpec::default()
        };
        let out = run_demo3(&spec).unwrap();
        assert_eq!(out.detections.len(), 3);
        let mut delays: Vec<usize> = out.detections.iter().map(|d| d.delay_tap).collect();
        delays.sort_unstable();
        assert_eq!(delays, vec![0, 9, 20]);
        let mut taps: Vec<i64> = out.detections.iter().map(|d| d.doppler_tap).collect();
        taps.sort_unstable();
        assert_eq!(taps, vec![-22, 1, 23]);
        // Refined Doppler within one search step of the truth.
        for d in &out.detections {
            let truth = out
                .truth
                .iter()
                .find(|p| p.delay_tap == d.delay_tap)
                .unwrap();
            assert!(
                (d.doppler_bins() - truth.doppler_bins()).abs() <= 0.02,
                "tap {}: {} vs {}",
                d.delay_tap,
                d.doppler_bins(),
                truth.doppler_bins()
            );
        }
    }

    #[test]
    fn comms_point_runs_and_pairs_arms() {
        let spec = ExperimentSpec {
            trials: 8,
            sweep: SweepConfig { snr_db: Some(vec![30.0]), ..SweepConfig::default() },
            ..ExperimentSpec::default()
        };
        let rows = run_comms_sweep(&spec, |_| Ok(())).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].ber_unified < 0.2);
        assert!(rows[0].nmse_unified < 1.0);
        assert!(rows[0].nmse_conventional < 1.0);
    }

    #[test]
    fn sensing_point_runs_and_refines() {
        let spec = ExperimentSpec {
            scenario: Scenario::SensingSweep,
            trials: 6,
            sweep: SweepConfig {
                n_values: vec![64],
                snr_db: Some(vec![20.0]),
                ..SweepConfig::default()
            },
            ..ExperimentSpec::default()
        };
        let rows = run_sensing_sweep(&spec, |_| Ok(())).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert!(r.used_trials >= 5, "used {}", r.used_trials);
        assert!(r.err_refined_mean <= r.err_integer_mean);
        assert!(r.err_refined_mean.is_finite());
    }

    #[test]
    fn run_writes_deterministic_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ExperimentSpec {
            scenario: Scenario::Demo3Targets,
            out_dir: dir.path().join("a"),
            ..ExperimentSpec::default()
        };
        let first = run(&spec).unwrap();
        assert!(!first.files.is_empty());
        let again = ExperimentSpec { out_dir: dir.path().join("b"), ..spec };
        let second = run(&again).unwrap();
        for (fa, fb) in first.files.iter().zip(&second.files) {
            assert_eq!(fs::read(fa).unwrap(), fs::read(fb).unwrap(), "{fa:?} vs {fb:?}");
        }
    }
}

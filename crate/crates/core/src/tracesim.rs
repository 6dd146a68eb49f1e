//! Synthetic dual-polarization intensity traces.
//!
//! Three event classes are emitted under two system profiles. The profiles
//! share the class-conditional structure (band ordering, energy ordering)
//! while their marginal feature distributions drift apart with the shift
//! strength: gain, DC offset, band stretch and noise floor all move from an
//! identity reference toward a maximal preset.
//!
//! The perturbation model is band-limited Gaussian noise shaped by a
//! two-pole resonator, gated by a seeded on/off renewal process. The trace is
//! reported as the two channel intensities `I1 = (C + dS)/2` and
//! `I2 = (C - dS)/2` with white measurement noise per channel.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::util::derive_seed;

/// Carrier constant: `I1 + I2 = CARRIER` before measurement noise.
pub const CARRIER: f64 = 1.0;

/// White-noise std on each intensity channel for the reference profile.
pub const REFERENCE_NOISE_FLOOR: f64 = 0.01;

/// Maximal shifted profile (shift strength 1): gain, DC offset, band scale
/// and the noise-floor multiple of [`REFERENCE_NOISE_FLOOR`].
pub const MAX_SHIFT_GAIN: f64 = 2.5;
pub const MAX_SHIFT_DC_OFFSET: f64 = 0.15;
pub const MAX_SHIFT_BAND_SCALE: f64 = 1.6;
pub const MAX_SHIFT_NOISE_MULT: f64 = 3.0;

/// Mean on+off cycle length of the burst renewal process, in samples.
const BURST_CYCLE_SAMPLES: f64 = 2000.0;

/// Event classes with stable integer codes shared by every module and file
/// format: rlx = 0, eav = 1, sbd = 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventClass {
    Rlx,
    Eav,
    Sbd,
}

impl EventClass {
    pub const ALL: [EventClass; 3] = [EventClass::Rlx, EventClass::Eav, EventClass::Sbd];

    pub fn code(self) -> u8 {
        match self {
            EventClass::Rlx => 0,
            EventClass::Eav => 1,
            EventClass::Sbd => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(EventClass::Rlx),
            1 => Ok(EventClass::Eav),
            2 => Ok(EventClass::Sbd),
            other => Err(Error::invalid(format!("unknown event code {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EventClass::Rlx => "rlx",
            EventClass::Eav => "eav",
            EventClass::Sbd => "sbd",
        }
    }
}

/// Measurement-system profile. `system_id` is 1 or 2; the remaining fields
/// control how that system distorts the shared event signatures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemProfile {
    pub system_id: u8,
    /// Multiplier on the perturbation amplitude of dS.
    pub gain: f64,
    /// Additive bias on dS, applied inside the burst gate.
    pub dc_offset: f64,
    /// Multiplicative stretch of every event's characteristic band.
    pub band_scale: f64,
    /// Std of the white measurement noise on each of I1, I2.
    pub noise_floor: f64,
    pub sample_interval_ms: f64,
}

impl SystemProfile {
    pub fn sample_rate_hz(&self) -> f64 {
        1000.0 / self.sample_interval_ms
    }

    pub fn nyquist_hz(&self) -> f64 {
        self.sample_rate_hz() / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.system_id == 1 || self.system_id == 2) {
            return Err(Error::invalid(format!(
                "system_id must be 1 or 2, got {}",
                self.system_id
            )));
        }
        if !(self.gain.is_finite() && self.gain > 0.0) {
            return Err(Error::invalid(format!("gain must be > 0, got {}", self.gain)));
        }
        if !(self.band_scale.is_finite() && self.band_scale > 0.0) {
            return Err(Error::invalid(format!(
                "band_scale must be > 0, got {}",
                self.band_scale
            )));
        }
        if !(self.noise_floor.is_finite() && self.noise_floor >= 0.0) {
            return Err(Error::invalid(format!(
                "noise_floor must be >= 0, got {}",
                self.noise_floor
            )));
        }
        if !self.dc_offset.is_finite() {
            return Err(Error::invalid("dc_offset must be finite"));
        }
        if !(self.sample_interval_ms.is_finite() && self.sample_interval_ms > 0.0) {
            return Err(Error::invalid("sample_interval_ms must be > 0"));
        }
        Ok(())
    }
}

/// Spectral signature of one event class: a band-limited oscillation at
/// `center_freq_hz` with the given RMS amplitude, active for a `burstiness`
/// fraction of the time (1.0 = continuous).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventSignatureSpec {
    pub center_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub amplitude: f64,
    pub burstiness: f64,
}

impl EventSignatureSpec {
    pub fn validate(&self, profile: &SystemProfile) -> Result<()> {
        let fields = [
            self.center_freq_hz,
            self.bandwidth_hz,
            self.amplitude,
            self.burstiness,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("event signature has non-finite fields"));
        }
        if self.center_freq_hz <= 0.0 || self.bandwidth_hz <= 0.0 {
            return Err(Error::invalid("center_freq_hz and bandwidth_hz must be > 0"));
        }
        if self.amplitude < 0.0 {
            return Err(Error::invalid("amplitude must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.burstiness) {
            return Err(Error::invalid("burstiness must be in [0,1]"));
        }
        let scaled = self.center_freq_hz * profile.band_scale;
        if scaled >= profile.nyquist_hz() {
            return Err(Error::invalid(format!(
                "scaled center frequency {scaled} Hz exceeds Nyquist {} Hz",
                profile.nyquist_hz()
            )));
        }
        Ok(())
    }
}

/// Per-class signature specs for the three event classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpecs {
    pub rlx: EventSignatureSpec,
    pub eav: EventSignatureSpec,
    pub sbd: EventSignatureSpec,
}

impl ClassSpecs {
    pub fn get(&self, event: EventClass) -> &EventSignatureSpec {
        match event {
            EventClass::Rlx => &self.rlx,
            EventClass::Eav => &self.eav,
            EventClass::Sbd => &self.sbd,
        }
    }

    /// Amplitude ordering rlx < sbd < eav and band ordering rlx < sbd < eav.
    pub fn validate(&self) -> Result<()> {
        if !(self.rlx.amplitude < self.sbd.amplitude && self.sbd.amplitude < self.eav.amplitude) {
            return Err(Error::invalid(
                "amplitude ordering amplitude(rlx) < amplitude(sbd) < amplitude(eav) violated",
            ));
        }
        if !(self.rlx.center_freq_hz < self.sbd.center_freq_hz
            && self.sbd.center_freq_hz < self.eav.center_freq_hz)
        {
            return Err(Error::invalid(
                "band ordering center(rlx) < center(sbd) < center(eav) violated",
            ));
        }
        Ok(())
    }
}

impl Default for ClassSpecs {
    fn default() -> Self {
        ClassSpecs {
            rlx: EventSignatureSpec {
                center_freq_hz: 40.0,
                bandwidth_hz: 30.0,
                amplitude: 0.02,
                burstiness: 1.0,
            },
            sbd: EventSignatureSpec {
                center_freq_hz: 90.0,
                bandwidth_hz: 40.0,
                amplitude: 0.15,
                burstiness: 0.9,
            },
            eav: EventSignatureSpec {
                center_freq_hz: 320.0,
                bandwidth_hz: 120.0,
                amplitude: 0.35,
                burstiness: 0.6,
            },
        }
    }
}

/// Dual-channel intensity time series with its generation metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarimetricTrace {
    pub i1: Vec<f64>,
    pub i2: Vec<f64>,
    pub event: EventClass,
    pub system_id: u8,
    pub seed: u64,
    pub sample_interval_ms: f64,
}

impl PolarimetricTrace {
    pub fn len(&self) -> usize {
        self.i1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i1.is_empty()
    }
}

/// Minimum trace length: two full featurizer segments after differencing.
pub const MIN_TRACE_SAMPLES: usize = 1000;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// Band-limited unit-RMS signal: white Gaussian noise through a two-pole
/// resonator at `center_hz` with half-power bandwidth `bandwidth_hz`.
fn resonator_signal(
    n: usize,
    center_hz: f64,
    bandwidth_hz: f64,
    sample_rate_hz: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let omega = 2.0 * std::f64::consts::PI * center_hz / sample_rate_hz;
    let r = (-std::f64::consts::PI * bandwidth_hz / sample_rate_hz)
        .exp()
        .min(0.9999);
    let a1 = 2.0 * r * omega.cos();
    let a2 = -r * r;
    let mut out = vec![0.0; n];
    let (mut y1, mut y2) = (0.0, 0.0);
    for slot in out.iter_mut() {
        let x = gaussian(rng);
        let y = a1 * y1 + a2 * y2 + x;
        *slot = y;
        y2 = y1;
        y1 = y;
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        for v in &mut out {
            *v /= rms;
        }
    }
    out
}

/// On/off mask from a renewal process with exponential dwell times whose duty
/// cycle equals `burstiness`. Starts in the on state.
fn burst_mask(n: usize, burstiness: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if burstiness >= 1.0 {
        return vec![1.0; n];
    }
    if burstiness <= 0.0 {
        return vec![0.0; n];
    }
    let mean_on = burstiness * BURST_CYCLE_SAMPLES;
    let mean_off = (1.0 - burstiness) * BURST_CYCLE_SAMPLES;
    let mut mask = vec![0.0; n];
    let mut pos = 0usize;
    let mut on = true;
    while pos < n {
        let mean = if on { mean_on } else { mean_off };
        let u: f64 = rng.random();
        let dwell = (-mean * (1.0 - u).ln()).ceil().max(1.0) as usize;
        let end = (pos + dwell).min(n);
        if on {
            for v in &mut mask[pos..end] {
                *v = 1.0;
            }
        }
        pos = end;
        on = !on;
    }
    mask
}

/// Generate one trace. Deterministic given all inputs and `seed`.
pub fn synth_trace(
    profile: &SystemProfile,
    spec: &EventSignatureSpec,
    event: EventClass,
    n_samples: usize,
    seed: u64,
) -> Result<PolarimetricTrace> {
    profile.validate()?;
    spec.validate(profile)?;
    if n_samples < MIN_TRACE_SAMPLES {
        return Err(Error::invalid(format!(
            "n_samples must be >= {MIN_TRACE_SAMPLES}, got {n_samples}"
        )));
    }

    let mut signal_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut burst_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));

    let signal = resonator_signal(
        n_samples,
        spec.center_freq_hz * profile.band_scale,
        spec.bandwidth_hz * profile.band_scale,
        profile.sample_rate_hz(),
        &mut signal_rng,
    );
    let mask = burst_mask(n_samples, spec.burstiness, &mut burst_rng);

    let amp = profile.gain * spec.amplitude;
    let mut i1 = Vec::with_capacity(n_samples);
    let mut i2 = Vec::with_capacity(n_samples);
    for t in 0..n_samples {
        // The DC offset rides inside the gate so that intermittent events
        // carry it as step transients rather than a constant bias.
        let ds = mask[t] * (amp * signal[t] + profile.dc_offset);
        let n1 = profile.noise_floor * gaussian(&mut noise_rng);
        let n2 = profile.noise_floor * gaussian(&mut noise_rng);
        i1.push((CARRIER + ds) / 2.0 + n1);
        i2.push((CARRIER - ds) / 2.0 + n2);
    }

    Ok(PolarimetricTrace {
        i1,
        i2,
        event,
        system_id: profile.system_id,
        seed,
        sample_interval_ms: profile.sample_interval_ms,
    })
}

/// Build the (reference, shifted) profile pair for a given shift strength.
///
/// Strength 0 gives two identical reference profiles (apart from the system
/// id); strength 1 gives the maximal preset. Parameters interpolate linearly
/// in between, and the class-band ordering is preserved at every strength
/// because both profiles stretch all bands by one shared factor.
pub fn make_shift_pair(shift_strength: f64, _seed: u64) -> Result<(SystemProfile, SystemProfile)> {
    if !shift_strength.is_finite() || !(0.0..=1.0).contains(&shift_strength) {
        return Err(Error::invalid(format!(
            "shift_strength must be in [0,1], got {shift_strength}"
        )));
    }
    let s = shift_strength;
    let reference = SystemProfile {
        system_id: 1,
        gain: 1.0,
        dc_offset: 0.0,
        band_scale: 1.0,
        noise_floor: REFERENCE_NOISE_FLOOR,
        sample_interval_ms: 0.5,
    };
    let shifted = SystemProfile {
        system_id: 2,
        gain: 1.0 + s * (MAX_SHIFT_GAIN - 1.0),
        dc_offset: s * MAX_SHIFT_DC_OFFSET,
        band_scale: 1.0 + s * (MAX_SHIFT_BAND_SCALE - 1.0),
        noise_floor: REFERENCE_NOISE_FLOOR * (1.0 + s * (MAX_SHIFT_NOISE_MULT - 1.0)),
        sample_interval_ms: 0.5,
    };
    Ok((reference, shifted))
}

/// Generate the 2 systems x 3 events corpus. Per-trace seeds derive from the
/// master seed and the (system, event) index, so the corpus is reproducible
/// and individual traces can be regenerated in isolation.
pub fn generate_corpus(
    pair: &(SystemProfile, SystemProfile),
    specs: &ClassSpecs,
    n_samples_per_event: usize,
    seed: u64,
) -> Result<Vec<PolarimetricTrace>> {
    specs.validate()?;
    let mut traces = Vec::with_capacity(6);
    for profile in [&pair.0, &pair.1] {
        for event in EventClass::ALL {
            let tag = profile.system_id as u64 * 16 + event.code() as u64;
            let trace_seed = derive_seed(seed, tag);
            traces.push(synth_trace(
                profile,
                specs.get(event),
                event,
                n_samples_per_event,
                trace_seed,
            )?);
        }
    }
    Ok(traces)
}

#[derive(Serialize, Deserialize)]
struct TraceHeader {
    kind: String,
    system_id: u8,
    event: u8,
    seed: u64,
    sample_interval_ms: f64,
    length: usize,
}

/// Write a trace as a binary container: JSON header, then i1 and i2 as
/// little-endian f64 arrays.
pub fn save_trace(trace: &PolarimetricTrace, path: &Path) -> Result<()> {
    let header = TraceHeader {
        kind: "trace".to_string(),
        system_id: trace.system_id,
        event: trace.event.code(),
        seed: trace.seed,
        sample_interval_ms: trace.sample_interval_ms,
        length: trace.len(),
    };
    let mut payload = Vec::with_capacity(trace.len() * 2);
    payload.extend_from_slice(&trace.i1);
    payload.extend_from_slice(&trace.i2);
    container::write_file(path, &header, &payload)
}

pub fn load_trace(path: &Path) -> Result<PolarimetricTrace> {
    let (header, payload): (TraceHeader, Vec<f64>) = container::read_file(path)?;
    if header.kind != "trace" {
        return Err(Error::MalformedFile {
            path: path.display().to_string(),
            reason: format!("expected kind `trace`, got `{}`", header.kind),
        });
    }
    if payload.len() != header.length * 2 {
        return Err(Error::MalformedFile {
            path: path.display().to_string(),
            reason: format!(
                "payload has {} values, header promises {}",
                payload.len(),
                header.length * 2
            ),
        });
    }
    let (i1, i2) = payload.split_at(header.length);
    Ok(PolarimetricTrace {
        i1: i1.to_vec(),
        i2: i2.to_vec(),
        event: EventClass::from_code(header.event)?,
        system_id: header.system_id,
        seed: header.seed,
        sample_interval_ms: header.sample_interval_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurizer;

    fn reference_profile() -> SystemProfile {
        SystemProfile {
            system_id: 1,
            gain: 1.0,
            dc_offset: 0.0,
            band_scale: 1.0,
            noise_floor: 0.0,
            sample_interval_ms: 0.5,
        }
    }

    #[test]
    fn zero_perturbation_gives_flat_half_intensities() {
        let profile = reference_profile();
        let spec = EventSignatureSpec {
            center_freq_hz: 40.0,
            bandwidth_hz: 30.0,
            amplitude: 0.0,
            burstiness: 1.0,
        };
        let trace = synth_trace(&profile, &spec, EventClass::Rlx, 1000, 7).unwrap();
        assert!(trace.i1.iter().all(|&v| v == 0.5));
        assert!(trace.i2.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn identical_inputs_give_bit_identical_traces() {
        let (p1, _) = make_shift_pair(0.7, 3).unwrap();
        let specs = ClassSpecs::default();
        let a = synth_trace(&p1, &specs.eav, EventClass::Eav, 2000, 99).unwrap();
        let b = synth_trace(&p1, &specs.eav, EventClass::Eav, 2000, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let (p1, _) = make_shift_pair(0.0, 3).unwrap();
        let specs = ClassSpecs::default();
        let a = synth_trace(&p1, &specs.eav, EventClass::Eav, 2000, 1).unwrap();
        let b = synth_trace(&p1, &specs.eav, EventClass::Eav, 2000, 2).unwrap();
        assert_ne!(a.i1, b.i1);
    }

    #[test]
    fn rejects_short_traces_and_bad_specs() {
        let profile = reference_profile();
        let specs = ClassSpecs::default();
        assert!(synth_trace(&profile, &specs.rlx, EventClass::Rlx, 999, 0).is_err());
        let bad = EventSignatureSpec {
            center_freq_hz: f64::NAN,
            ..specs.rlx
        };
        assert!(synth_trace(&profile, &bad, EventClass::Rlx, 2000, 0).is_err());
        let above_nyquist = EventSignatureSpec {
            center_freq_hz: 1200.0,
            ..specs.rlx
        };
        assert!(synth_trace(&profile, &above_nyquist, EventClass::Rlx, 2000, 0).is_err());
    }

    /// The spectral peak of a 200 Hz signature lands within +-2 bins of
    /// bin round(200 / (2000/512)) = 51 after featurization.
    #[test]
    fn spectral_peak_lands_on_expected_bin() {
        let profile = reference_profile();
        let spec = EventSignatureSpec {
            center_freq_hz: 200.0,
            bandwidth_hz: 30.0,
            amplitude: 0.2,
            burstiness: 1.0,
        };
        let trace = synth_trace(&profile, &spec, EventClass::Eav, 100_000, 11).unwrap();
        let sig = featurizer::featurize_trace(&trace).unwrap();
        // Mean spectrum over rows, argmax over positive-frequency bins.
        let mut mean_spec = vec![0.0; featurizer::FFT_SIZE];
        for r in 0..sig.rows {
            for (m, v) in mean_spec.iter_mut().zip(sig.row(r)) {
                *m += v;
            }
        }
        let peak_bin = (1..=256)
            .max_by(|&a, &b| mean_spec[a].partial_cmp(&mean_spec[b]).unwrap())
            .unwrap();
        let expected = (200.0f64 / (2000.0 / 512.0)).round() as i64;
        assert_eq!(expected, 51);
        assert!(
            (peak_bin as i64 - expected).abs() <= 2,
            "peak bin {peak_bin}, expected within 2 of {expected}"
        );
    }

    #[test]
    fn shift_pair_endpoints() {
        let (p1, p2) = make_shift_pair(0.0, 5).unwrap();
        assert_eq!(p1.system_id, 1);
        assert_eq!(p2.system_id, 2);
        assert_eq!(p1.gain, p2.gain);
        assert_eq!(p1.dc_offset, p2.dc_offset);
        assert_eq!(p1.band_scale, p2.band_scale);
        assert_eq!(p1.noise_floor, p2.noise_floor);

        let (_, p2) = make_shift_pair(1.0, 5).unwrap();
        assert_eq!(p2.gain, MAX_SHIFT_GAIN);
        assert_eq!(p2.dc_offset, MAX_SHIFT_DC_OFFSET);
        assert_eq!(p2.band_scale, MAX_SHIFT_BAND_SCALE);
        assert_eq!(p2.noise_floor, REFERENCE_NOISE_FLOOR * MAX_SHIFT_NOISE_MULT);

        assert!(make_shift_pair(-0.1, 0).is_err());
        assert!(make_shift_pair(1.1, 0).is_err());
        assert!(make_shift_pair(f64::NAN, 0).is_err());
    }

    #[test]
    fn band_and_amplitude_ordering_hold_at_every_strength() {
        let specs = ClassSpecs::default();
        for k in 0..=10 {
            let s = k as f64 / 10.0;
            let (p1, p2) = make_shift_pair(s, 0).unwrap();
            for p in [&p1, &p2] {
                let centers = [
                    specs.rlx.center_freq_hz * p.band_scale,
                    specs.sbd.center_freq_hz * p.band_scale,
                    specs.eav.center_freq_hz * p.band_scale,
                ];
                assert!(centers[0] < centers[1] && centers[1] < centers[2]);
                assert!(specs.rlx.amplitude < specs.sbd.amplitude);
                assert!(specs.sbd.amplitude < specs.eav.amplitude);
            }
        }
    }

    #[test]
    fn corpus_is_deterministic_and_complete() {
        let pair = make_shift_pair(1.0, 0).unwrap();
        let specs = ClassSpecs::default();
        let a = generate_corpus(&pair, &specs, 1500, 42).unwrap();
        let b = generate_corpus(&pair, &specs, 1500, 42).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a, b);
        let mut keys: Vec<(u8, u8)> = a.iter().map(|t| (t.system_id, t.event.code())).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            vec![(1, 0), (1, 1), (1, 2), (2, 0), (2, 1), (2, 2)]
        );
    }

    #[test]
    fn burst_mask_duty_cycle_approximates_burstiness() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mask = burst_mask(200_000, 0.6, &mut rng);
        let duty = mask.iter().sum::<f64>() / mask.len() as f64;
        assert!((duty - 0.6).abs() < 0.08, "duty {duty}");
    }

    #[test]
    fn trace_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, _) = make_shift_pair(0.3, 0).unwrap();
        let specs = ClassSpecs::default();
        let trace = synth_trace(&p1, &specs.sbd, EventClass::Sbd, 1200, 8).unwrap();
        let path = dir.path().join("trace.bin");
        save_trace(&trace, &path).unwrap();
        let loaded = load_trace(&path).unwrap();
        assert_eq!(trace, loaded);
    }

    /// Parseval at the trace level: with no noise and continuous bursts the
    /// total spectral power of a segment equals 512x the windowed energy.
    #[test]
    fn segment_energy_matches_spectrum_total() {
        let profile = reference_profile();
        let spec = EventSignatureSpec {
            center_freq_hz: 120.0,
            bandwidth_hz: 50.0,
            amplitude: 0.3,
            burstiness: 1.0,
        };
        let trace = synth_trace(&profile, &spec, EventClass::Sbd, 2000, 21).unwrap();
        let ds = featurizer::delta_s(&trace);
        let np = featurizer::npsv(&ds).unwrap();
        let window = featurizer::hamming_window(featurizer::SEGMENT_LEN).unwrap();
        let segment = &np[0..featurizer::SEGMENT_LEN];
        let spectrum = featurizer::power_spectrum(segment).unwrap();
        let windowed_energy: f64 = segment
            .iter()
            .zip(&window)
            .map(|(x, w)| (x * w) * (x * w))
            .sum();
        let total: f64 = spectrum.iter().sum();
        let rel = (total - 512.0 * windowed_energy).abs() / (512.0 * windowed_energy);
        assert!(rel < 1e-9, "relative error {rel}");
    }
}

//! Spectral featurization of polarimetric traces.
//!
//! Pipeline: dS = I1 - I2, NPSV = first difference of dS, non-overlapping
//! 500-sample segments, 500-point Hamming window, zero-pad to 512, 512-point
//! FFT, two-sided power spectrum. One trace becomes a T x 512 matrix.

use std::path::Path;
use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::tracesim::{EventClass, PolarimetricTrace};

/// Segment length in NPSV samples.
pub const SEGMENT_LEN: usize = 500;
/// FFT size; segments are zero-padded from [`SEGMENT_LEN`] to this.
pub const FFT_SIZE: usize = 512;

/// NPSV series with the metadata of its source trace.
#[derive(Debug, Clone, PartialEq)]
pub struct NpsvSeries {
    pub values: Vec<f64>,
    pub event: EventClass,
    pub system_id: u8,
    pub seed: u64,
}

impl NpsvSeries {
    pub fn from_trace(trace: &PolarimetricTrace) -> Result<Self> {
        let ds = delta_s(trace);
        Ok(NpsvSeries {
            values: npsv(&ds)?,
            event: trace.event,
            system_id: trace.system_id,
            seed: trace.seed,
        })
    }
}

/// Per-segment power spectra of one trace: row-major `rows x 512`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSignature {
    pub rows: usize,
    pub data: Vec<f64>,
    pub event: EventClass,
    pub system_id: u8,
}

impl SpectralSignature {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * FFT_SIZE..(r + 1) * FFT_SIZE]
    }

    pub fn row_energy(&self, r: usize) -> f64 {
        self.row(r).iter().sum()
    }
}

/// dS(t) = I1(t) - I2(t).
pub fn delta_s(trace: &PolarimetricTrace) -> Vec<f64> {
    trace
        .i1
        .iter()
        .zip(&trace.i2)
        .map(|(a, b)| a - b)
        .collect()
}

/// NPSV_t = dS(t+1) - dS(t); output length is `len(ds) - 1`.
pub fn npsv(ds: &[f64]) -> Result<Vec<f64>> {
    if ds.len() < 2 {
        return Err(Error::invalid(format!(
            "NPSV needs at least 2 samples, got {}",
            ds.len()
        )));
    }
    Ok(ds.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Hamming window w[k] = 0.54 - 0.46 cos(2 pi k / (n - 1)).
pub fn hamming_window(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::invalid(format!("window length must be >= 2, got {n}")));
    }
    Ok((0..n)
        .map(|k| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * k as f64 / (n as f64 - 1.0)).cos())
        .collect())
}

fn segment_spectrum(
    segment: &[f64],
    window: &[f64],
    fft: &Arc<dyn Fft<f64>>,
    out: &mut [f64],
) {
    let mut buffer = vec![Complex::new(0.0, 0.0); FFT_SIZE];
    for ((slot, x), w) in buffer.iter_mut().zip(segment).zip(window) {
        slot.re = x * w;
    }
    fft.process(&mut buffer);
    for (o, c) in out.iter_mut().zip(&buffer) {
        *o = c.norm_sqr();
    }
}

/// Two-sided 512-bin power spectrum of one 500-sample segment.
pub fn power_spectrum(segment: &[f64]) -> Result<Vec<f64>> {
    if segment.len() != SEGMENT_LEN {
        return Err(Error::shape(
            format!("segment of {SEGMENT_LEN}"),
            format!("{}", segment.len()),
        ));
    }
    if segment.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("segment contains non-finite values"));
    }
    let window = hamming_window(SEGMENT_LEN)?;
    let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
    let mut out = vec![0.0; FFT_SIZE];
    segment_spectrum(segment, &window, &fft, &mut out);
    Ok(out)
}

/// Number of full segments an NPSV series of the given length yields.
/// The trailing partial segment is dropped.
pub fn segment_count(npsv_len: usize) -> usize {
    npsv_len / SEGMENT_LEN
}

/// Featurize one trace into its spectral signature.
pub fn featurize_trace(trace: &PolarimetricTrace) -> Result<SpectralSignature> {
    let series = NpsvSeries::from_trace(trace)?;
    let rows = segment_count(series.values.len());
    if rows == 0 {
        return Err(Error::invalid(format!(
            "trace of {} samples yields no full {SEGMENT_LEN}-sample segment",
            trace.len()
        )));
    }
    let window = hamming_window(SEGMENT_LEN)?;
    let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
    let mut data = vec![0.0; rows * FFT_SIZE];
    for r in 0..rows {
        let segment = &series.values[r * SEGMENT_LEN..(r + 1) * SEGMENT_LEN];
        segment_spectrum(
            segment,
            &window,
            &fft,
            &mut data[r * FFT_SIZE..(r + 1) * FFT_SIZE],
        );
    }
    Ok(SpectralSignature {
        rows,
        data,
        event: series.event,
        system_id: series.system_id,
    })
}

#[derive(Serialize, Deserialize)]
struct FeatureHeader {
    kind: String,
    rows: usize,
    cols: usize,
    event: u8,
    system_id: u8,
}

pub fn save_signature(sig: &SpectralSignature, path: &Path) -> Result<()> {
    let header = FeatureHeader {
        kind: "features".to_string(),
        rows: sig.rows,
        cols: FFT_SIZE,
        event: sig.event.code(),
        system_id: sig.system_id,
    };
    container::write_file(path, &header, &sig.data)
}

pub fn load_signature(path: &Path) -> Result<SpectralSignature> {
    let (header, data): (FeatureHeader, Vec<f64>) = container::read_file(path)?;
    if header.kind != "features" || header.cols != FFT_SIZE {
        return Err(Error::MalformedFile {
            path: path.display().to_string(),
            reason: "not a feature container".to_string(),
        });
    }
    if data.len() != header.rows * header.cols {
        return Err(Error::MalformedFile {
            path: path.display().to_string(),
            reason: format!(
                "payload has {} values, header promises {}",
                data.len(),
                header.rows * header.cols
            ),
        });
    }
    Ok(SpectralSignature {
        rows: header.rows,
        data,
        event: EventClass::from_code(header.event)?,
        system_id: header.system_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracesim::{synth_trace, ClassSpecs, EventClass, SystemProfile};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_trace(i1: Vec<f64>, i2: Vec<f64>) -> PolarimetricTrace {
        PolarimetricTrace {
            i1,
            i2,
            event: EventClass::Rlx,
            system_id: 1,
            seed: 0,
            sample_interval_ms: 0.5,
        }
    }

    #[test]
    fn delta_s_subtracts_channels() {
        let t = toy_trace(vec![0.7, 0.6], vec![0.3, 0.4]);
        let ds = delta_s(&t);
        assert!((ds[0] - 0.4).abs() < 1e-15 && (ds[1] - 0.2).abs() < 1e-15);
        let sym = toy_trace(vec![0.5; 4], vec![0.5; 4]);
        assert!(delta_s(&sym).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_s_round_trips_against_i2() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let i1: Vec<f64> = (0..256).map(|_| rng.random::<f64>()).collect();
        let i2: Vec<f64> = (0..256).map(|_| rng.random::<f64>()).collect();
        let t = toy_trace(i1.clone(), i2.clone());
        let ds = delta_s(&t);
        for k in 0..ds.len() {
            assert!((ds[k] + i2[k] - i1[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn npsv_is_first_difference() {
        assert_eq!(npsv(&[0.0, 1.0, 3.0]).unwrap(), vec![1.0, 2.0]);
        assert!(npsv(&[1.0]).is_err());
        // Constant dS -> stable polarization state, all-zero NPSV.
        assert!(npsv(&[2.5; 100]).unwrap().iter().all(|&v| v == 0.0));
        // Strictly increasing dS -> all-positive NPSV.
        let increasing: Vec<f64> = (0..50).map(|k| (k as f64).sqrt()).collect();
        assert!(npsv(&increasing).unwrap().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn hamming_window_endpoints_center_and_symmetry() {
        for n in [2usize, 17, 500, 512] {
            let w = hamming_window(n).unwrap();
            assert!((w[0] - 0.08).abs() < 1e-15);
            for k in 0..n {
                assert!((w[k] - w[n - 1 - k]).abs() < 1e-15);
            }
        }
        let w = hamming_window(501).unwrap();
        assert!((w[250] - 1.0).abs() < 1e-15);
        assert!(hamming_window(1).is_err());
    }

    #[test]
    fn power_spectrum_of_zero_segment_is_zero() {
        let spec = power_spectrum(&vec![0.0; SEGMENT_LEN]).unwrap();
        assert!(spec.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn power_spectrum_rejects_wrong_length_and_non_finite() {
        assert!(power_spectrum(&vec![0.0; 499]).is_err());
        assert!(power_spectrum(&vec![0.0; 512]).is_err());
        let mut seg = vec![0.0; SEGMENT_LEN];
        seg[3] = f64::NAN;
        assert!(power_spectrum(&seg).is_err());
    }

    #[test]
    fn real_input_spectrum_is_conjugate_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seg: Vec<f64> = (0..SEGMENT_LEN).map(|_| rng.random::<f64>() - 0.5).collect();
        let spec = power_spectrum(&seg).unwrap();
        for k in 1..FFT_SIZE {
            let a = spec[k];
            let b = spec[FFT_SIZE - k];
            let scale = a.abs().max(b.abs()).max(1e-30);
            assert!((a - b).abs() / scale < 1e-9, "bin {k}: {a} vs {b}");
        }
    }

    #[test]
    fn parseval_holds_on_windowed_zero_padded_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let seg: Vec<f64> = (0..SEGMENT_LEN).map(|_| rng.random::<f64>() - 0.5).collect();
            let window = hamming_window(SEGMENT_LEN).unwrap();
            let time_energy: f64 = seg
                .iter()
                .zip(&window)
                .map(|(x, w)| (x * w) * (x * w))
                .sum();
            let total: f64 = power_spectrum(&seg).unwrap().iter().sum();
            let rel = (total - 512.0 * time_energy).abs() / (512.0 * time_energy);
            assert!(rel < 1e-9);
        }
    }

    #[test]
    fn npsv_path_is_invariant_to_constant_offset() {
        // Integer-valued series make the constant shift exact in f64, so the
        // invariance holds bit-for-bit.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let base: Vec<f64> = (0..1001).map(|_| rng.random_range(0..1000) as f64).collect();
        let shifted: Vec<f64> = base.iter().map(|v| v + 37.0).collect();
        let a = npsv(&base).unwrap();
        let b = npsv(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        // Arbitrary offsets agree to float rounding.
        let base: Vec<f64> = (0..1001).map(|_| rng.random::<f64>()).collect();
        let shifted: Vec<f64> = base.iter().map(|v| v + 3.75).collect();
        let a = npsv(&base).unwrap();
        let b = npsv(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn featurize_counts_segments_by_floor_division() {
        // NPSV consumes one sample, so 2.4M samples yield 4,799 segments,
        // not the nominal 4,800 of an undifferenced series.
        assert_eq!(segment_count(2_400_000 - 1), 4_799);
        assert_eq!(segment_count(1000), 2);
        assert_eq!(segment_count(250_000 - 1), 499);
        assert_eq!(segment_count(250_001 - 1), 500);
        assert_eq!(segment_count(499), 0);
    }

    #[test]
    fn featurize_trace_shapes_and_determinism() {
        let profile = SystemProfile {
            system_id: 1,
            gain: 1.0,
            dc_offset: 0.0,
            band_scale: 1.0,
            noise_floor: 0.005,
            sample_interval_ms: 0.5,
        };
        let specs = ClassSpecs::default();
        // 1001 samples -> 1000 NPSV values -> exactly 2 rows.
        let trace = synth_trace(&profile, &specs.sbd, EventClass::Sbd, 1001, 13).unwrap();
        let sig = featurize_trace(&trace).unwrap();
        assert_eq!(sig.rows, 2);
        assert_eq!(sig.data.len(), 2 * FFT_SIZE);
        let sig2 = featurize_trace(&trace).unwrap();
        assert_eq!(sig, sig2);
        assert!(sig.data.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn signature_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let profile = SystemProfile {
            system_id: 2,
            gain: 1.5,
            dc_offset: 0.1,
            band_scale: 1.2,
            noise_floor: 0.01,
            sample_interval_ms: 0.5,
        };
        let specs = ClassSpecs::default();
        let trace = synth_trace(&profile, &specs.eav, EventClass::Eav, 1501, 3).unwrap();
        let sig = featurize_trace(&trace).unwrap();
        let path = dir.path().join("sig.bin");
        save_signature(&sig, &path).unwrap();
        assert_eq!(load_signature(&path).unwrap(), sig);
    }
}

//! Preprocessing: activity filtering, stratified splitting and z-score
//! normalization, plus the per-domain row views the evaluation scenarios
//! select from.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::featurizer::SpectralSignature;
use crate::util::{derive_seed, quantile};

/// Row-labeled feature matrix: `n x cols` features, an event code and a
/// domain code per row, and the source signature id each row came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Vec<f64>,
    pub cols: usize,
    pub y: Vec<u8>,
    pub d: Vec<u8>,
    pub provenance: Vec<u32>,
    pub source_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(cols: usize) -> Self {
        LabeledDataset {
            features: Vec::new(),
            cols,
            y: Vec::new(),
            d: Vec::new(),
            provenance: Vec::new(),
            source_names: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.features[r * self.cols..(r + 1) * self.cols]
    }

    /// Append all rows of a signature under the given domain code.
    pub fn push_signature(&mut self, sig: &SpectralSignature, domain: u8, source_name: &str) {
        let source_id = self.source_names.len() as u32;
        self.source_names.push(source_name.to_string());
        for r in 0..sig.rows {
            self.features.extend_from_slice(sig.row(r));
            self.y.push(sig.event.code());
            self.d.push(domain);
            self.provenance.push(source_id);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_rows();
        if self.features.len() != n * self.cols
            || self.d.len() != n
            || self.provenance.len() != n
        {
            return Err(Error::shape(
                format!("{n} rows x {} cols with aligned labels", self.cols),
                format!(
                    "features {} / y {} / d {} / provenance {}",
                    self.features.len(),
                    self.y.len(),
                    self.d.len(),
                    self.provenance.len()
                ),
            ));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite features"));
        }
        Ok(())
    }

    /// Row indices (in dataset order) of the given split list restricted to
    /// one domain.
    pub fn filter_domain<'a>(&self, rows: &'a [usize], domain: u8) -> Vec<usize> {
        rows.iter().copied().filter(|&r| self.d[r] == domain).collect()
    }
}

/// Disjoint, jointly exhaustive row-index lists for train/val/test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Per-(event, domain) counts in train/val/test order, keyed "y{y}d{d}".
    pub stratum_counts: BTreeMap<String, [usize; 3]>,
}

impl SplitManifest {
    pub fn split_rows(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Feature-wise normalization statistics fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub fitted_rows: usize,
}

/// Std floor protecting zero-variance bins.
pub const STD_FLOOR: f64 = 1e-12;

/// Retain the rows of `sig` whose total spectral energy exceeds the
/// `q`-quantile energy of the same-system relaxed baseline. Row order is
/// preserved; an empty result is allowed.
pub fn activity_filter(
    sig: &SpectralSignature,
    baseline: &SpectralSignature,
    q: f64,
) -> Result<SpectralSignature> {
    if !(0.0 < q && q < 1.0) {
        return Err(Error::invalid(format!("quantile must be in (0,1), got {q}")));
    }
    if baseline.rows == 0 {
        return Err(Error::invalid("activity filter baseline has no rows"));
    }
    if sig.system_id != baseline.system_id {
        return Err(Error::invalid(format!(
            "activity filter baseline from system {} applied to system {}",
            baseline.system_id, sig.system_id
        )));
    }
    let baseline_energies: Vec<f64> = (0..baseline.rows).map(|r| baseline.row_energy(r)).collect();
    let threshold = quantile(&baseline_energies, q);
    let mut data = Vec::new();
    let mut rows = 0;
    for r in 0..sig.rows {
        if sig.row_energy(r) > threshold {
            data.extend_from_slice(sig.row(r));
            rows += 1;
        }
    }
    Ok(SpectralSignature {
        rows,
        data,
        event: sig.event,
        system_id: sig.system_id,
    })
}

/// Per-stratum allocation: the test share is rounded off first, then the
/// validation share from the remainder (round half up at both stages). This
/// two-stage rule is what reproduces the reference split table.
fn allocate(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let n_test = ((n as f64 * ratios[2]).round() as usize).min(n);
    let rem = n - n_test;
    let val_share = ratios[1] / (ratios[0] + ratios[1]);
    let n_val = ((rem as f64 * val_share).round() as usize).min(rem);
    [rem - n_val, n_val, n_test]
}

/// Stratified split on the joint (event, domain) key. Within each stratum
/// the rows are shuffled by a per-stratum seed derived from `seed` and
/// allocated by [`allocate`]; the resulting manifests are pure functions of
/// (dataset labels, ratios, seed).
pub fn stratified_split(ds: &LabeledDataset, ratios: [f64; 3], seed: u64) -> Result<SplitManifest> {
    ds.validate()?;
    if ratios.iter().any(|r| *r <= 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }

    let mut strata: BTreeMap<(u8, u8), Vec<usize>> = BTreeMap::new();
    for r in 0..ds.n_rows() {
        strata.entry((ds.y[r], ds.d[r])).or_default().push(r);
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut stratum_counts = BTreeMap::new();
    for ((y, d), mut rows) in strata {
        if rows.len() < 3 {
            return Err(Error::StratumTooSmall {
                stratum: format!("y{y}d{d}"),
                rows: rows.len(),
                min: 3,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, y as u64 * 8 + d as u64));
        rows.shuffle(&mut rng);
        let counts = allocate(rows.len(), ratios);
        train.extend_from_slice(&rows[..counts[0]]);
        val.extend_from_slice(&rows[counts[0]..counts[0] + counts[1]]);
        test.extend_from_slice(&rows[counts[0] + counts[1]..]);
        stratum_counts.insert(format!("y{y}d{d}"), counts);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();

    Ok(SplitManifest {
        seed,
        ratios,
        train,
        val,
        test,
        stratum_counts,
    })
}

/// Fit per-feature mean and population std over the given training rows,
/// flooring std at [`STD_FLOOR`].
pub fn zscore_fit(ds: &LabeledDataset, train_rows: &[usize]) -> Result<NormStats> {
    if train_rows.is_empty() {
        return Err(Error::invalid("cannot fit normalization on zero rows"));
    }
    let cols = ds.cols;
    let n = train_rows.len() as f64;
    let mut mean = vec![0.0; cols];
    for &r in train_rows {
        for (m, v) in mean.iter_mut().zip(ds.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; cols];
    for &r in train_rows {
        for ((s, v), m) in var.iter_mut().zip(ds.row(r)).zip(&mean) {
            let c = v - m;
            *s += c * c;
        }
    }
    let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
    Ok(NormStats {
        mean,
        std,
        fitted_rows: train_rows.len(),
    })
}

/// Apply stats to every row of a dataset, producing a normalized copy.
pub fn zscore_apply(stats: &NormStats, ds: &LabeledDataset) -> Result<LabeledDataset> {
    if stats.mean.len() != ds.cols || stats.std.len() != ds.cols {
        return Err(Error::shape(
            format!("stats of width {}", ds.cols),
            format!("{}", stats.mean.len()),
        ));
    }
    let mut out = ds.clone();
    for r in 0..ds.n_rows() {
        let row = &mut out.features[r * ds.cols..(r + 1) * ds.cols];
        for (k, v) in row.iter_mut().enumerate() {
            *v = (*v - stats.mean[k]) / stats.std[k];
        }
    }
    Ok(out)
}

/// Per-domain row views over the shared split manifest: `views[split][domain]`
/// without re-splitting or duplicating rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainViews {
    pub train: [Vec<usize>; 2],
    pub val: [Vec<usize>; 2],
    pub test: [Vec<usize>; 2],
}

pub fn domain_views(ds: &LabeledDataset, manifest: &SplitManifest) -> DomainViews {
    DomainViews {
        train: [
            ds.filter_domain(&manifest.train, 0),
            ds.filter_domain(&manifest.train, 1),
        ],
        val: [
            ds.filter_domain(&manifest.val, 0),
            ds.filter_domain(&manifest.val, 1),
        ],
        test: [
            ds.filter_domain(&manifest.test, 0),
            ds.filter_domain(&manifest.test, 1),
        ],
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    kind: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct DatasetSidecar {
    y: Vec<u8>,
    d: Vec<u8>,
    provenance: Vec<u32>,
    source_names: Vec<String>,
}

/// Save a dataset as the feature container plus a JSON label sidecar at
/// `<path>` and `<path>.labels.json`.
pub fn save_dataset(ds: &LabeledDataset, path: &Path) -> Result<()> {
    ds.validate()?;
    let header = DatasetHeader {
        kind: "dataset".to_string(),
        rows: ds.n_rows(),
        cols: ds.cols,
    };
    container::write_file(path, &header, &ds.features)?;
    let sidecar = DatasetSidecar {
        y: ds.y.clone(),
        d: ds.d.clone(),
        provenance: ds.provenance.clone(),
        source_names: ds.source_names.clone(),
    };
    let sidecar_path = path.with_extension("labels.json");
    std::fs::write(sidecar_path, serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let (header, features): (DatasetHeader, Vec<f64>) = container::read_file(path)?;
    if header.kind != "dataset" {
        return Err(Error::MalformedFile {
            path: path.display().to_string(),
            reason: "not a dataset container".to_string(),
        });
    }
    let sidecar_path = path.with_extension("labels.json");
    let sidecar: DatasetSidecar = serde_json::from_slice(&std::fs::read(&sidecar_path)?)?;
    let ds = LabeledDataset {
        features,
        cols: header.cols,
        y: sidecar.y,
        d: sidecar.d,
        provenance: sidecar.provenance,
        source_names: sidecar.source_names,
    };
    ds.validate()?;
    Ok(ds)
}

//! Datasets, the hypercube-Gaussian generator, standardization and the
//! owner / shadow / evaluation partition.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::seed;

/// How a label column is turned into binary targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelRule {
    /// Values must already be 0 or 1.
    Binary,
    /// 1 iff the raw score is strictly above the column median.
    MedianThreshold,
}

/// Parameters of the two-cluster hypercube generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub d: usize,
    pub n_per_class: usize,
    pub seed: u64,
    pub class_separation: f64,
}

impl SyntheticSpec {
    pub fn new(d: usize, n_per_class: usize, seed: u64) -> Self {
        SyntheticSpec { d, n_per_class, seed, class_separation: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::invalid("d", "must be at least 1"));
        }
        if self.n_per_class == 0 {
            return Err(Error::invalid("n_per_class", "must be at least 1"));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(Error::invalid("class_separation", "must be positive and finite"));
        }
        Ok(())
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    Synthetic {
        spec: SyntheticSpec,
        /// Class centers, index = label.
        vertices: [Vec<f64>; 2],
    },
    File {
        path: String,
        label_column: String,
        label_rule: LabelRule,
    },
    Inline,
}

/// Row-major feature matrix with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<u8>,
    d: usize,
    feature_names: Vec<String>,
    standardized: bool,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<u8>, d: usize) -> Result<Self> {
        let names = (0..d).map(|j| format!("x{j}")).collect();
        Self::with_names(features, labels, names, Provenance::Inline)
    }

    pub fn with_names(
        features: Vec<f64>,
        labels: Vec<u8>,
        feature_names: Vec<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        let d = feature_names.len();
        if d == 0 {
            return Err(Error::invalid("d", "dataset needs at least one feature"));
        }
        if features.len() != labels.len() * d {
            return Err(Error::DimensionMismatch { expected: labels.len() * d, found: features.len() });
        }
        if let Some((row, &v)) = labels.iter().enumerate().find(|(_, &l)| l > 1) {
            return Err(Error::NonBinaryLabel { row, value: f64::from(v) });
        }
        Ok(Dataset { features, labels, d, feature_names, standardized: false, provenance })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.d)
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        [self.n() - ones, ones]
    }

    /// Copy of the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.d);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            features.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        Dataset {
            features,
            labels,
            d: self.d,
            feature_names: self.feature_names.clone(),
            standardized: self.standardized,
            provenance: self.provenance.clone(),
        }
    }
}

/// Two distinct random vertices of `{±s}^d`, unit-variance Gaussian clouds
/// around each. Rows are ordered class 0 then class 1.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let s = spec.class_separation;
    let vertex = |rng: &mut seed::Rng| -> Vec<f64> {
        (0..spec.d).map(|_| if rng.random::<bool>() { s } else { -s }).collect()
    };
    let v0 = vertex(&mut rng);
    let mut v1 = vertex(&mut rng);
    while v1 == v0 {
        // Only reachable for tiny d.
        v1 = vertex(&mut rng);
    }

    let n = 2 * spec.n_per_class;
    let mut features = Vec::with_capacity(n * spec.d);
    let mut labels = Vec::with_capacity(n);
    for (label, center) in [(0u8, &v0), (1u8, &v1)] {
        for _ in 0..spec.n_per_class {
            for &c in center.iter() {
                let noise: f64 = StandardNormal.sample(&mut rng);
                features.push(c + noise);
            }
            labels.push(label);
        }
    }
    let names = (0..spec.d).map(|j| format!("x{j}")).collect();
    Dataset::with_names(
        features,
        labels,
        names,
        Provenance::Synthetic { spec: *spec, vertices: [v0, v1] },
    )
}

/// Median of a slice; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Turn a raw label column into 0/1 targets.
///
/// Under [`LabelRule::MedianThreshold`] ties with the median go to class 0.
pub fn apply_label_rule(raw: &[f64], rule: LabelRule) -> Result<Vec<u8>> {
    match rule {
        LabelRule::Binary => raw
            .iter()
            .enumerate()
            .map(|(row, &v)| match v {
                v if v == 0.0 => Ok(0),
                v if v == 1.0 => Ok(1),
                value => Err(Error::NonBinaryLabel { row, value }),
            })
            .collect(),
        LabelRule::MedianThreshold => {
            let m = median(raw).ok_or(Error::Empty("label column"))?;
            Ok(raw.iter().map(|&v| u8::from(v > m)).collect())
        }
    }
}

/// Per-column affine map to zero mean and unit (population) variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Always `"population"`: variance divides by n.
    pub variance_convention: String,
}

impl ScalerParams {
    pub fn transform_row(&self, row: &[f64], out: &mut [f64]) {
        for ((o, &x), (&m, &s)) in out.iter_mut().zip(row).zip(self.mean.iter().zip(&self.std)) {
            *o = (x - m) / s;
        }
    }

    pub fn inverse_row(&self, row: &[f64], out: &mut [f64]) {
        for ((o, &z), (&m, &s)) in out.iter_mut().zip(row).zip(self.mean.iter().zip(&self.std)) {
            *o = z * s + m;
        }
    }

    pub fn transform(&self, data: &Dataset) -> Result<Dataset> {
        crate::error::check_dim(self.mean.len(), data.d())?;
        let mut out = data.clone();
        for (src, dst) in data.features.chunks_exact(data.d).zip(out.features.chunks_exact_mut(data.d)) {
            self.transform_row(src, dst);
        }
        out.standardized = true;
        Ok(out)
    }

    pub fn inverse(&self, data: &Dataset) -> Result<Dataset> {
        crate::error::check_dim(self.mean.len(), data.d())?;
        let mut out = data.clone();
        for (src, dst) in data.features.chunks_exact(data.d).zip(out.features.chunks_exact_mut(data.d)) {
            self.inverse_row(src, dst);
        }
        out.standardized = false;
        Ok(out)
    }
}

/// Fit a scaler on `data` and apply it.
pub fn standardize(data: &Dataset) -> Result<(Dataset, ScalerParams)> {
    let n = data.n();
    if n < 2 {
        return Err(Error::invalid("n", "standardization needs at least 2 rows"));
    }
    let d = data.d();
    let mut mean = alloc::vec![0.0; d];
    for row in data.rows() {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = alloc::vec![0.0; d];
    for row in data.rows() {
        for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let mut std = Vec::with_capacity(d);
    for (j, v) in var.into_iter().enumerate() {
        let s = sqrt(v / n as f64);
        if !(s > 1e-12 * (1.0 + mean[j].abs())) {
            return Err(Error::ZeroVariance { column: data.feature_names[j].clone() });
        }
        std.push(s);
    }
    let params = ScalerParams { mean, std, variance_convention: String::from("population") };
    let scaled = params.transform(data)?;
    Ok((scaled, params))
}

/// Owner training set, adversary shadow pool and held-out evaluation data.
#[derive(Debug, Clone)]
pub struct SplitBundle {
    pub owner_train: Dataset,
    pub shadow_pool: Dataset,
    /// Rows of `owner_train` eligible as MEMBER evaluation points.
    pub eval_in: Vec<usize>,
    pub eval_out: Dataset,
    pub seed: u64,
    /// Source-row indices of each part, for disjointness audits.
    pub owner_rows: Vec<usize>,
    pub shadow_rows: Vec<usize>,
    pub eval_out_rows: Vec<usize>,
}

/// Uniformly random disjoint partition of `data`.
pub fn split(data: &Dataset, owner_n: usize, shadow_n: usize, eval_out_n: usize, seed: u64) -> Result<SplitBundle> {
    let requested = owner_n + shadow_n + eval_out_n;
    if requested > data.n() {
        return Err(Error::SplitTooLarge { requested, available: data.n() });
    }
    let mut order: Vec<usize> = (0..data.n()).collect();
    order.shuffle(&mut seed::rng(seed));
    let owner_rows = order[..owner_n].to_vec();
    let shadow_rows = order[owner_n..owner_n + shadow_n].to_vec();
    let eval_out_rows = order[owner_n + shadow_n..requested].to_vec();
    Ok(SplitBundle {
        owner_train: data.subset(&owner_rows),
        shadow_pool: data.subset(&shadow_rows),
        eval_in: (0..owner_n).collect(),
        eval_out: data.subset(&eval_out_rows),
        seed,
        owner_rows,
        shadow_rows,
        eval_out_rows,
    })
}

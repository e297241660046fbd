//! Datasets, client partitioning and the planted-subspace generator.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::linalg::{random_basis, Basis, DenseMatrix};
use crate::rng::{self, Domain};

/// Samples are the columns of `features`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: DenseMatrix,
    /// `0` normal, `1` anomaly.
    pub labels: Option<Vec<u8>>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: DenseMatrix, labels: Option<Vec<u8>>, feature_names: Vec<String>) -> Result<Self> {
        if feature_names.len() != features.rows() {
            return Err(Error::DimensionMismatch {
                op: "Dataset feature_names",
                expected: (features.rows(), 1),
                found: (feature_names.len(), 1),
            });
        }
        if let Some(l) = &labels {
            if l.len() != features.cols() {
                return Err(Error::DimensionMismatch {
                    op: "Dataset labels",
                    expected: (features.cols(), 1),
                    found: (l.len(), 1),
                });
            }
            if l.iter().any(|&v| v > 1) {
                return Err(Error::InvalidArgument("labels must be 0 or 1"));
            }
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Self {
            features,
            labels,
            feature_names,
        })
    }

    /// Names `f0, f1, …`.
    pub fn unnamed(features: DenseMatrix, labels: Option<Vec<u8>>) -> Result<Self> {
        let names = (0..features.rows()).map(|i| alloc::format!("f{i}")).collect();
        Self::new(features, labels, names)
    }

    pub fn dim(&self) -> usize {
        self.features.rows()
    }

    pub fn len(&self) -> usize {
        self.features.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// The samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_columns(indices),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            feature_names: self.feature_names.clone(),
        }
    }
}

/// One simulated client's local data.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientDataset {
    pub id: usize,
    pub features: DenseMatrix,
}

impl ClientDataset {
    pub fn new(id: usize, features: DenseMatrix) -> Self {
        Self { id, features }
    }

    pub fn dim(&self) -> usize {
        self.features.rows()
    }

    pub fn len(&self) -> usize {
        self.features.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PartitionStrategy {
    /// Sort by one feature and cut into contiguous equal-size blocks, so that
    /// clients see systematically different traffic.
    #[default]
    GroupedQuantile,
    /// Seeded shuffle, then equal split.
    UniformShards,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PartitionSpec {
    pub n_clients: usize,
    /// Required by [`PartitionStrategy::GroupedQuantile`].
    pub group_feature: Option<String>,
    pub strategy: PartitionStrategy,
}

/// Sample indices assigned to each client. Block sizes differ by at most one;
/// the first `n mod n_clients` blocks get the extra sample.
pub fn partition_indices(ds: &Dataset, spec: &PartitionSpec, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = ds.len();
    if spec.n_clients == 0 {
        return Err(Error::InvalidArgument("n_clients must be at least 1"));
    }
    if n < spec.n_clients {
        return Err(Error::TooFewSamples {
            needed: spec.n_clients,
            found: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    match spec.strategy {
        PartitionStrategy::GroupedQuantile => {
            let feature = spec
                .group_feature
                .as_deref()
                .and_then(|name| ds.feature_index(name))
                .ok_or(Error::InvalidArgument("group_feature is not a column of the dataset"))?;
            let row = ds.features.row(feature);
            // Stable sort keeps ties in input order.
            order.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
        }
        PartitionStrategy::UniformShards => {
            let mut stream = rng::keyed(seed, Domain::Partition, 0, 0);
            order.shuffle(&mut stream);
        }
    }
    let base = n / spec.n_clients;
    let extra = n % spec.n_clients;
    let mut blocks = Vec::with_capacity(spec.n_clients);
    let mut start = 0;
    for j in 0..spec.n_clients {
        let size = base + usize::from(j < extra);
        let mut block = order[start..start + size].to_vec();
        if spec.strategy == PartitionStrategy::UniformShards {
            block.sort_unstable();
        }
        blocks.push(block);
        start += size;
    }
    Ok(blocks)
}

/// Splits `ds` into `spec.n_clients` nonempty, disjoint clients with ids
/// `0..n_clients`. Labels are ignored.
pub fn partition(ds: &Dataset, spec: &PartitionSpec, seed: u64) -> Result<Vec<ClientDataset>> {
    Ok(partition_indices(ds, spec, seed)?
        .into_iter()
        .enumerate()
        .map(|(id, idx)| ClientDataset::new(id, ds.features.select_columns(&idx)))
        .collect())
}

/// All client samples side by side, in client order.
pub fn pool(clients: &[ClientDataset]) -> Result<DenseMatrix> {
    let parts: Vec<&DenseMatrix> = clients.iter().map(|c| &c.features).collect();
    DenseMatrix::hstack(&parts)
}

/// Parameters of the planted-subspace generator.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SynthConfig {
    pub d: usize,
    pub k: usize,
    pub n_per_client: usize,
    pub n_clients: usize,
    pub n_test: usize,
    pub noise_sigma: f64,
    pub anomaly_fraction: f64,
    pub anomaly_scale: f64,
    pub seed: u64,
    /// Standard deviation of each latent coordinate; all ones when `None`.
    pub latent_scales: Option<Vec<f64>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            d: 20,
            k: 3,
            n_per_client: 200,
            n_clients: 5,
            n_test: 400,
            noise_sigma: 0.01,
            anomaly_fraction: 0.2,
            anomaly_scale: 10.0,
            seed: 0,
            latent_scales: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub clients: Vec<ClientDataset>,
    pub test: Dataset,
    pub planted: Basis,
}

/// Normal samples are `planted · diag(scales) · g + σ·ε` with standard
/// Gaussian `g` and `ε`. Anomalies are normal samples shifted by
/// `anomaly_scale` along a random unit direction orthogonal to the planted
/// subspace. Only the test set contains anomalies.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthData> {
    if cfg.k == 0 || cfg.k >= cfg.d {
        return Err(Error::InvalidArgument("synthetic rank must satisfy 0 < k < d"));
    }
    if !(0.0..1.0).contains(&cfg.anomaly_fraction) {
        return Err(Error::InvalidArgument("anomaly_fraction must be in [0, 1)"));
    }
    if cfg.n_clients == 0 || cfg.n_per_client == 0 {
        return Err(Error::InvalidArgument("synthetic clients need at least one sample"));
    }
    if !(cfg.noise_sigma >= 0.0) || !cfg.anomaly_scale.is_finite() {
        return Err(Error::InvalidArgument(
            "noise_sigma and anomaly_scale must be finite, sigma nonnegative",
        ));
    }
    let scales: Vec<f64> = match &cfg.latent_scales {
        Some(s) if s.len() != cfg.k => {
            return Err(Error::DimensionMismatch {
                op: "latent_scales",
                expected: (cfg.k, 1),
                found: (s.len(), 1),
            })
        }
        Some(s) => s.clone(),
        None => alloc::vec![1.0; cfg.k],
    };

    let planted = random_basis(&mut rng::keyed(cfg.seed, Domain::Synthetic, 0, 0), cfg.d, cfg.k)?;
    let mixing = planted.matrix().matmul(&DenseMatrix::diag(&scales))?;
    let normals = |major: u64, minor: u64, n: usize| -> Result<DenseMatrix> {
        let mut stream = rng::keyed(cfg.seed, Domain::Synthetic, major, minor);
        let g = rng::gaussian_matrix(&mut stream, cfg.k, n);
        let eps = rng::gaussian_matrix(&mut stream, cfg.d, n);
        let mut x = mixing.matmul(&g)?;
        x.axpy(cfg.noise_sigma, &eps)?;
        Ok(x)
    };

    let clients = (0..cfg.n_clients)
        .map(|i| Ok(ClientDataset::new(i, normals(1, i as u64, cfg.n_per_client)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut test = normals(2, 0, cfg.n_test)?;
    let n_anom = libm::round(cfg.anomaly_fraction * cfg.n_test as f64) as usize;
    let mut stream = rng::keyed(cfg.seed, Domain::Synthetic, 3, 0);
    let mut positions: Vec<usize> = rand::seq::index::sample(&mut stream, cfg.n_test, n_anom).into_vec();
    positions.sort_unstable();
    let mut labels = alloc::vec![0u8; cfg.n_test];
    for &j in &positions {
        let raw = DenseMatrix::column_vector(&rng::gaussian_vec(&mut stream, cfg.d));
        let off = planted.reject(&raw)?;
        let unit = off.scale(1.0 / off.frobenius_norm());
        let mut x = test.column(j);
        for (xi, ui) in x.iter_mut().zip(unit.as_slice()) {
            *xi += cfg.anomaly_scale * ui;
        }
        test.set_column(j, &x);
        labels[j] = 1;
    }
    let test = Dataset::unnamed(test, Some(labels))?;
    Ok(SynthData { clients, test, planted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::chordal_distance;
    use crate::pca::{fit_centralized, PcaModel};
    use alloc::vec;

    fn ramp(n: usize) -> Dataset {
        let x = DenseMatrix::from_fn(2, n, |i, j| if i == 0 { (j + 1) as f64 } else { (n - j) as f64 });
        Dataset::new(x, None, vec!["count".into(), "other".into()]).unwrap()
    }

    fn grouped(n_clients: usize) -> PartitionSpec {
        PartitionSpec {
            n_clients,
            group_feature: Some("count".into()),
            strategy: PartitionStrategy::GroupedQuantile,
        }
    }

    #[test]
    fn quantile_blocks_are_contiguous() {
        // Reverse the ramp so sorting actually has work to do.
        let ds = ramp(100).select(&(0..100).rev().collect::<Vec<_>>());
        let clients = partition(&ds, &grouped(10), 0).unwrap();
        for (j, c) in clients.iter().enumerate() {
            let values: Vec<f64> = c.features.row(0).to_vec();
            let expected: Vec<f64> = (10 * j + 1..=10 * j + 10).map(|v| v as f64).collect();
            assert_eq!(values, expected);
            assert_eq!(c.id, j);
        }
    }

    #[test]
    fn single_client_gets_everything() {
        let ds = ramp(7);
        let clients = partition(&ds, &grouped(1), 0).unwrap();
        assert_eq!(clients.len(), 1);
        assert_eq!(clients[0].features, ds.features);
    }

    #[test]
    fn block_sizes_differ_by_at_most_one() {
        let blocks = partition_indices(&ramp(23), &grouped(5), 0).unwrap();
        let sizes: Vec<usize> = blocks.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![5, 5, 5, 4, 4]);
    }

    #[test]
    fn uniform_shards_are_seeded() {
        let spec = PartitionSpec {
            n_clients: 4,
            group_feature: None,
            strategy: PartitionStrategy::UniformShards,
        };
        let ds = ramp(40);
        let a = partition_indices(&ds, &spec, 9).unwrap();
        assert_eq!(a, partition_indices(&ds, &spec, 9).unwrap());
        assert_ne!(a, partition_indices(&ds, &spec, 10).unwrap());
        let mut all: Vec<usize> = a.concat();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn partition_errors() {
        assert!(matches!(
            partition(&ramp(3), &grouped(4), 0),
            Err(Error::TooFewSamples { needed: 4, found: 3 })
        ));
        let mut spec = grouped(2);
        spec.group_feature = Some("missing".into());
        assert!(partition(&ramp(4), &spec, 0).is_err());
    }

    #[test]
    fn noiseless_normals_lie_in_the_planted_span() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            anomaly_fraction: 0.0,
            ..SynthConfig::default()
        };
        let data = synth_generate(&cfg).unwrap();
        let model = PcaModel::new(data.planted.clone());
        for j in 0..data.test.len() {
            assert!(model.reconstruction_error(&data.test.features.column(j)).unwrap() < 1e-20);
        }
        assert!(data.test.labels.unwrap().iter().all(|&l| l == 0));
    }

    #[test]
    fn anomalies_stand_out_under_the_planted_basis() {
        let data = synth_generate(&SynthConfig::default()).unwrap();
        let model = PcaModel::new(data.planted.clone());
        let labels = data.test.labels.as_ref().unwrap();
        let mut normal = Vec::new();
        let mut anomalous = Vec::new();
        for (j, &label) in labels.iter().enumerate() {
            let s = model.reconstruction_error(&data.test.features.column(j)).unwrap();
            if label == 1 {
                anomalous.push(s)
            } else {
                normal.push(s)
            }
        }
        assert_eq!(anomalous.len(), 80);
        let median = |v: &mut Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        assert!(median(&mut anomalous) >= 10.0 * median(&mut normal));
    }

    #[test]
    fn pooled_normals_recover_the_planted_subspace() {
        let cfg = SynthConfig {
            d: 20,
            k: 3,
            n_per_client: 1000,
            n_clients: 1,
            noise_sigma: 1e-3,
            ..SynthConfig::default()
        };
        let data = synth_generate(&cfg).unwrap();
        let model = fit_centralized(&pool(&data.clients).unwrap(), 3).unwrap();
        assert!(chordal_distance(&model.basis, &data.planted).unwrap() < 0.05);
    }

    #[test]
    fn generator_rejects_bad_configs() {
        let bad = [
            SynthConfig {
                k: 20,
                ..SynthConfig::default()
            },
            SynthConfig {
                anomaly_fraction: 1.0,
                ..SynthConfig::default()
            },
            SynthConfig {
                latent_scales: Some(vec![1.0]),
                ..SynthConfig::default()
            },
        ];
        for cfg in &bad {
            assert!(synth_generate(cfg).is_err());
        }
    }
}

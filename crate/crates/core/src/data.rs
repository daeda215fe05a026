//! Datasets, client partitions and label-flipping attacks.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Binary class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Neg,
    Pos,
}

impl Label {
    pub fn value(self) -> f64 {
        match self {
            Label::Neg => -1.0,
            Label::Pos => 1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Neg => Label::Pos,
            Label::Pos => Label::Neg,
        }
    }

    pub fn from_value(v: f64) -> Option<Self> {
        if v == 1.0 {
            Some(Label::Pos)
        } else if v == -1.0 {
            Some(Label::Neg)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub features: Vec<f64>,
    pub label: Label,
}

impl DataPoint {
    pub fn y(&self) -> f64 {
        self.label.value()
    }
}

/// A non-empty, dimension-consistent collection of labelled points.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<DataPoint>,
    dim: usize,
}

impl Dataset {
    pub fn new(points: Vec<DataPoint>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::Dataset("dataset is empty".into()));
        };
        let dim = first.features.len();
        if dim == 0 {
            return Err(Error::Dataset("feature dimension must be at least 1".into()));
        }
        if let Some(i) = points.iter().position(|p| p.features.len() != dim) {
            return Err(Error::Dataset(format!(
                "point {i} has {} features, expected {dim}",
                points[i].features.len()
            )));
        }
        if points.iter().any(|p| p.features.iter().any(|x| !x.is_finite())) {
            return Err(Error::Dataset("non-finite feature value".into()));
        }
        Ok(Self { points, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[DataPoint] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &DataPoint {
        &self.points[i]
    }

    /// Applies a feature map to every point. The map must preserve the dimension
    /// across points (it may change it globally).
    pub fn map_features(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        Self::new(
            self.points
                .iter()
                .map(|p| DataPoint {
                    features: f(&p.features),
                    label: p.label,
                })
                .collect(),
        )
    }

    /// Parses the label-first CSV format. `skip_header` drops the first line.
    pub fn from_csv_reader<R: Read>(reader: R, skip_header: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(skip_header)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut points = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut fields = rec.iter();
            let label = fields
                .next()
                .and_then(|s| match s {
                    "1" | "+1" => Some(Label::Pos),
                    "-1" => Some(Label::Neg),
                    _ => None,
                })
                .ok_or_else(|| Error::Dataset(format!("row {row}: label must be -1 or +1")))?;
            let features = fields
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Dataset(format!("row {row}: bad feature value `{s}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            points.push(DataPoint { features, label });
        }
        Self::new(points)
    }

    pub fn read_csv(path: &Path, skip_header: bool) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file, skip_header)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for p in &self.points {
            let mut row = Vec::with_capacity(self.dim + 1);
            row.push(if p.label == Label::Pos { "+1".to_string() } else { "-1".to_string() });
            row.extend(p.features.iter().map(|x| format!("{x:?}")));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Indices of the training set owned by one client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientPartition {
    pub client_id: u32,
    pub sample_indices: Vec<usize>,
}

impl ClientPartition {
    pub fn len(&self) -> usize {
        self.sample_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_indices.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PartitionKind {
    Iid,
    LabelShards { k: usize },
    Dirichlet { beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionScheme {
    pub kind: PartitionKind,
    pub seed: u64,
}

impl PartitionScheme {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            PartitionKind::LabelShards { k: 0 } => {
                Err(Error::Domain("label-shards requires k >= 1".into()))
            }
            PartitionKind::Dirichlet { beta } if !(beta > 0.0 && beta.is_finite()) => {
                Err(Error::Domain("dirichlet requires beta > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Splits `dataset` into `n_clients` disjoint partitions covering every index.
pub fn partition(
    dataset: &Dataset,
    n_clients: usize,
    scheme: &PartitionScheme,
) -> Result<Vec<ClientPartition>> {
    scheme.validate()?;
    if n_clients == 0 || n_clients > dataset.len() {
        return Err(Error::InfeasiblePartition {
            points: dataset.len(),
            clients: n_clients,
        });
    }
    if n_clients == 1 && !matches!(scheme.kind, PartitionKind::LabelShards { .. }) {
        return Ok(vec![ClientPartition {
            client_id: 0,
            sample_indices: (0..dataset.len()).collect(),
        }]);
    }
    let mut rng = RngStream::new(scheme.seed, crate::rng::Purpose::Partition).rng();
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); n_clients];

    match scheme.kind {
        PartitionKind::Iid => {
            let mut idx: Vec<usize> = (0..dataset.len()).collect();
            idx.shuffle(&mut rng);
            for (j, i) in idx.into_iter().enumerate() {
                buckets[j % n_clients].push(i);
            }
        }
        PartitionKind::LabelShards { k } => {
            let by_label = indices_by_label(dataset);
            let n_labels = by_label.len();
            // client order is shuffled, then labels are dealt round-robin so each
            // label gets ceil/floor(n_clients / n_labels) owners
            let mut clients: Vec<usize> = (0..n_clients).collect();
            clients.shuffle(&mut rng);
            let mut owners: Vec<Vec<usize>> = vec![Vec::new(); n_labels];
            for (pos, &c) in clients.iter().enumerate() {
                for j in 0..k.min(n_labels) {
                    owners[(pos + j) % n_labels].push(c);
                }
            }
            for (mut idx, owners) in by_label.into_iter().zip(owners) {
                idx.shuffle(&mut rng);
                if owners.is_empty() {
                    return Err(Error::InfeasiblePartition {
                        points: dataset.len(),
                        clients: n_clients,
                    });
                }
                for (j, i) in idx.into_iter().enumerate() {
                    buckets[owners[j % owners.len()]].push(i);
                }
            }
        }
        PartitionKind::Dirichlet { beta } => {
            let gamma = Gamma::new(beta, 1.0).map_err(|e| Error::Domain(e.to_string()))?;
            for mut idx in indices_by_label(dataset) {
                idx.shuffle(&mut rng);
                let draws: Vec<f64> = (0..n_clients).map(|_| gamma.sample(&mut rng)).collect();
                let total: f64 = draws.iter().sum();
                let props: Vec<f64> = if total > 0.0 {
                    draws.iter().map(|g| g / total).collect()
                } else {
                    vec![1.0 / n_clients as f64; n_clients]
                };
                let mut start = 0usize;
                let mut acc = 0.0;
                for (c, p) in props.iter().enumerate() {
                    acc += p;
                    let end = if c + 1 == n_clients {
                        idx.len()
                    } else {
                        ((acc * idx.len() as f64).round() as usize).clamp(start, idx.len())
                    };
                    buckets[c].extend_from_slice(&idx[start..end]);
                    start = end;
                }
            }
            // Dirichlet draws can starve a client; hand it one point from the largest.
            while let Some(empty) = buckets.iter().position(|b| b.is_empty()) {
                let donor = (0..n_clients)
                    .max_by_key(|&c| (buckets[c].len(), std::cmp::Reverse(c)))
                    .expect("n_clients >= 1");
                let moved = buckets[donor].pop().expect("donor has at least two points");
                buckets[empty].push(moved);
            }
        }
    }

    Ok(buckets
        .into_iter()
        .enumerate()
        .map(|(c, mut idx)| {
            idx.sort_unstable();
            ClientPartition {
                client_id: c as u32,
                sample_indices: idx,
            }
        })
        .collect())
}

fn indices_by_label(dataset: &Dataset) -> Vec<Vec<usize>> {
    let labels: BTreeSet<Label> = dataset.points().iter().map(|p| p.label).collect();
    labels
        .into_iter()
        .map(|l| {
            dataset
                .points()
                .iter()
                .enumerate()
                .filter(|(_, p)| p.label == l)
                .map(|(i, _)| i)
                .collect()
        })
        .collect()
}

/// Returns a copy of `dataset` in which `floor(flip_fraction * |partition|)`
/// labels of the partition, chosen by `stream`, are negated.
pub fn poison_labels(
    partition: &ClientPartition,
    dataset: &Dataset,
    flip_fraction: f64,
    stream: &RngStream,
) -> Result<Dataset> {
    let chosen = poisoned_indices(partition, flip_fraction, stream)?;
    let mut points = dataset.points.clone();
    for i in chosen {
        points[i].label = points[i].label.flipped();
    }
    Ok(Dataset {
        points,
        dim: dataset.dim,
    })
}

/// The indices [`poison_labels`] would flip.
pub fn poisoned_indices(
    partition: &ClientPartition,
    flip_fraction: f64,
    stream: &RngStream,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&flip_fraction) {
        return Err(Error::Domain(format!("flip fraction {flip_fraction} outside [0, 1]")));
    }
    let count = (flip_fraction * partition.len() as f64).floor() as usize;
    let mut idx = partition.sample_indices.clone();
    let mut rng = stream.rng();
    let (chosen, _) = idx.partial_shuffle(&mut rng, count);
    let mut chosen = chosen.to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Two unit-variance Gaussian clusters whose means lie `separation` apart along
/// the all-ones diagonal. Labels alternate +1, -1, ... so classes are balanced.
pub fn synth_gaussian(n: usize, d: usize, separation: f64, stream: &RngStream) -> Result<Dataset> {
    if n < 2 || d == 0 || !(separation > 0.0) {
        return Err(Error::Domain(format!(
            "synth_gaussian needs n >= 2, d >= 1, separation > 0 (got n={n}, d={d}, separation={separation})"
        )));
    }
    let mut rng = stream.rng();
    let offset = 0.5 * separation / (d as f64).sqrt();
    let points = (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Pos } else { Label::Neg };
            let features = (0..d)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    label.value() * offset + z
                })
                .collect();
            DataPoint { features, label }
        })
        .collect();
    Dataset::new(points)
}

//! Synthetic classification datasets and non-IID partitioning.
//!
//! Data heterogeneity across nodes is induced by drawing per-class node
//! proportions from a Dirichlet distribution: small concentration values
//! give each node a skewed class mix, large values approach a uniform split.

use std::collections::BTreeMap;
use std::io;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::derive_rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("cannot partition {examples} examples across {nodes} nodes")]
    TooFewExamples { examples: usize, nodes: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// One labeled example.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
}

/// A labeled dataset with a fixed class count.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.examples.first().map_or(0, |e| e.features.len())
    }

    /// Per-class example counts.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.num_classes];
        for e in &self.examples {
            hist[e.label] += 1;
        }
        hist
    }

    /// Shannon entropy (nats) of the class histogram.
    pub fn class_entropy(&self) -> f64 {
        let hist = self.class_histogram();
        let total: usize = hist.iter().sum();
        if total == 0 {
            return 0.0;
        }
        hist.iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total as f64;
                -p * p.ln()
            })
            .sum()
    }
}

/// How to split a dataset across nodes.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub num_nodes: usize,
    pub alpha: f64,
    pub seed: u64,
}

/// Generate a Gaussian-cluster classification dataset.
///
/// Each class gets a mean drawn once from a standard normal; examples are the
/// mean plus isotropic noise of the given spread. Examples are emitted in
/// class order, `examples_per_class` at a time, deterministically per seed.
pub fn generate_synthetic_dataset(
    num_classes: usize,
    examples_per_class: usize,
    feature_dim: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if num_classes < 1 || examples_per_class < 1 || feature_dim < 1 {
        return Err(DataError::InvalidArgument(
            "num_classes, examples_per_class, and feature_dim must be >= 1".into(),
        ));
    }
    if !(cluster_spread > 0.0) {
        return Err(DataError::InvalidArgument(
            "cluster_spread must be > 0".into(),
        ));
    }

    let mut rng = derive_rng(seed, 0, "synthetic-data");
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let noise = Normal::new(0.0, cluster_spread).expect("valid normal");

    let mut examples = Vec::with_capacity(num_classes * examples_per_class);
    for class in 0..num_classes {
        let mean: Vec<f64> = (0..feature_dim).map(|_| std_normal.sample(&mut rng)).collect();
        for _ in 0..examples_per_class {
            let features = mean.iter().map(|m| m + noise.sample(&mut rng)).collect();
            examples.push(Example {
                features,
                label: class,
            });
        }
    }
    Ok(Dataset {
        examples,
        num_classes,
    })
}

/// Split a class-blocked dataset into train and test parts, taking the last
/// `test_per_class` examples of each class block as the held-out test set.
pub fn split_train_test(dataset: &Dataset, test_per_class: usize) -> Result<(Dataset, Dataset), DataError> {
    let mut by_class: BTreeMap<usize, Vec<&Example>> = BTreeMap::new();
    for e in &dataset.examples {
        by_class.entry(e.label).or_default().push(e);
    }
    for (class, examples) in &by_class {
        if examples.len() <= test_per_class {
            return Err(DataError::InvalidArgument(format!(
                "class {class} has {} examples, needs more than test_per_class={test_per_class}",
                examples.len()
            )));
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for examples in by_class.values() {
        let cut = examples.len() - test_per_class;
        train.extend(examples[..cut].iter().map(|&e| e.clone()));
        test.extend(examples[cut..].iter().map(|&e| e.clone()));
    }
    Ok((
        Dataset {
            examples: train,
            num_classes: dataset.num_classes,
        },
        Dataset {
            examples: test,
            num_classes: dataset.num_classes,
        },
    ))
}

/// Draw symmetric Dirichlet proportions via normalized Gamma draws.
fn dirichlet_proportions<R: Rng>(alpha: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.iter().map(|d| d / sum).collect()
    } else {
        // All draws underflowed (tiny alpha): the limit distribution puts all
        // mass on a single coordinate.
        let winner = rng.random_range(0..n);
        let mut p = vec![0.0; n];
        p[winner] = 1.0;
        p
    }
}

/// Apportion `total` items by proportions using largest-remainder rounding.
/// Ties on the fractional part go to the lower index.
fn largest_remainder_counts(proportions: &[f64], total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let remaining = total.saturating_sub(assigned);

    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(remaining) {
        counts[i] += 1;
    }
    debug_assert_eq!(counts.iter().sum::<usize>(), total);
    counts
}

/// Partition a dataset across `spec.num_nodes` shards with Dirichlet class skew.
///
/// For every class, node proportions are drawn from Dirichlet(alpha) and the
/// class's examples are dealt out by largest-remainder rounding, so the shards
/// are disjoint and their union is exactly the input. Nodes that end up empty
/// are repaired by taking one example from the currently largest shard.
pub fn dirichlet_partition(dataset: &Dataset, spec: &PartitionSpec) -> Result<Vec<Dataset>, DataError> {
    let n = spec.num_nodes;
    if n < 2 {
        return Err(DataError::InvalidArgument("num_nodes must be >= 2".into()));
    }
    if !(spec.alpha > 0.0) {
        return Err(DataError::InvalidArgument("alpha must be > 0".into()));
    }
    if dataset.len() < n {
        return Err(DataError::TooFewExamples {
            examples: dataset.len(),
            nodes: n,
        });
    }
    let hist = dataset.class_histogram();
    if hist.iter().any(|&c| c == 0) {
        return Err(DataError::InvalidArgument(
            "every class needs at least one example".into(),
        ));
    }

    let mut by_class: Vec<Vec<&Example>> = vec![Vec::new(); dataset.num_classes];
    for e in &dataset.examples {
        by_class[e.label].push(e);
    }

    let mut rng = derive_rng(spec.seed, 0, "dirichlet-partition");
    let mut shards: Vec<Vec<Example>> = vec![Vec::new(); n];
    for class_examples in &by_class {
        let proportions = dirichlet_proportions(spec.alpha, n, &mut rng);
        let counts = largest_remainder_counts(&proportions, class_examples.len());
        let mut offset = 0;
        for (node, &count) in counts.iter().enumerate() {
            shards[node].extend(class_examples[offset..offset + count].iter().map(|&e| e.clone()));
            offset += count;
        }
    }

    // Empty-shard repair: every node must be able to train.
    loop {
        let Some(empty) = shards.iter().position(|s| s.is_empty()) else {
            break;
        };
        let largest = (0..n)
            .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
            .expect("n >= 2");
        let donated = shards[largest].pop().expect("largest shard is non-empty");
        shards[empty].push(donated);
    }

    Ok(shards
        .into_iter()
        .map(|examples| Dataset {
            examples,
            num_classes: dataset.num_classes,
        })
        .collect())
}

/// Write a dataset as CSV: feature columns, then the integer label column.
pub fn write_dataset_csv<W: io::Write>(dataset: &Dataset, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let dim = dataset.feature_dim();
    let mut header: Vec<String> = (0..dim).map(|i| format!("f{i}")).collect();
    header.push("label".to_string());
    w.write_record(&header)?;
    for e in &dataset.examples {
        let mut row: Vec<String> = e.features.iter().map(|v| format!("{v}")).collect();
        row.push(e.label.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a dataset written by [`write_dataset_csv`]. The class count is
/// inferred as `max(label) + 1`.
pub fn read_dataset_csv<R: io::Read>(reader: R) -> Result<Dataset, DataError> {
    let mut r = csv::Reader::from_reader(reader);
    let mut examples = Vec::new();
    let mut max_label = 0usize;
    for record in r.records() {
        let record = record?;
        let fields: Vec<&str> = record.iter().collect();
        if fields.len() < 2 {
            return Err(DataError::InvalidArgument(
                "csv row needs at least one feature and a label".into(),
            ));
        }
        let (feature_fields, label_field) = fields.split_at(fields.len() - 1);
        let features = feature_fields
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| DataError::InvalidArgument(format!("bad feature {f:?}: {e}")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let label = label_field[0]
            .parse::<usize>()
            .map_err(|e| DataError::InvalidArgument(format!("bad label {:?}: {e}", label_field[0])))?;
        max_label = max_label.max(label);
        examples.push(Example { features, label });
    }
    if examples.is_empty() {
        return Err(DataError::InvalidArgument("empty dataset csv".into()));
    }
    Ok(Dataset {
        examples,
        num_classes: max_label + 1,
    })
}

//! Seeded synthetic datasets for desk-scale experiments.

use diffcore::{Rng, Tensor};

use super::{Dataset, Graph};
use crate::error::{PasError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Erdos-Renyi graphs; the label marks whether the sum of feature
    /// channel 0 over nodes exceeds the dataset median.
    FeatureSum,
    /// Stochastic block model; class 0 has 2 communities, class 1 has 4.
    PlantedClusters,
}

impl std::str::FromStr for SyntheticKind {
    type Err = PasError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature-sum" => Ok(SyntheticKind::FeatureSum),
            "planted-clusters" => Ok(SyntheticKind::PlantedClusters),
            other => Err(PasError::InvalidArgument(format!(
                "unknown synthetic kind `{other}` (expected `feature-sum` or `planted-clusters`)"
            ))),
        }
    }
}

pub fn gen_synthetic(kind: SyntheticKind, count: usize, seed: u64) -> Result<Dataset> {
    match kind {
        SyntheticKind::FeatureSum => gen_feature_sum(count, seed),
        SyntheticKind::PlantedClusters => gen_planted_clusters(count, seed),
    }
}

fn erdos_renyi(rng: &mut Rng, n: usize, p: f64) -> Tensor {
    let mut adj = Tensor::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.uniform() < p {
                adj.set(i, j, 1.0);
                adj.set(j, i, 1.0);
            }
        }
    }
    adj
}

/// Erdos-Renyi(n in [15, 25], p = 0.2) graphs with uniform(0,1)^4 node
/// features; label 1 iff the channel-0 sum exceeds the dataset median, so
/// an even count is balanced by construction.
pub fn gen_feature_sum(count: usize, seed: u64) -> Result<Dataset> {
    if count < 2 {
        return Err(PasError::InvalidArgument(
            "feature-sum needs at least 2 graphs".into(),
        ));
    }
    let mut rng = Rng::from_seed(seed);
    let mut raw: Vec<(Tensor, Tensor, f64)> = Vec::with_capacity(count);
    for _ in 0..count {
        let n = 15 + rng.below(11); // 15..=25
        let adj = erdos_renyi(&mut rng, n, 0.2);
        let mut feat = Tensor::zeros(n, 4);
        for i in 0..n {
            for j in 0..4 {
                feat.set(i, j, rng.uniform());
            }
        }
        let sum: f64 = (0..n).map(|i| feat.get(i, 0)).sum();
        raw.push((adj, feat, sum));
    }
    let mut sums: Vec<f64> = raw.iter().map(|(_, _, s)| *s).collect();
    sums.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if count % 2 == 0 {
        0.5 * (sums[count / 2 - 1] + sums[count / 2])
    } else {
        sums[count / 2]
    };
    let graphs = raw
        .into_iter()
        .map(|(adj, feat, sum)| Graph::new(adj, feat, usize::from(sum > median)))
        .collect();
    Dataset::new("feature-sum", graphs)
}

/// 24-node stochastic block models with constant features; class 0 graphs
/// have 2 equal communities, class 1 graphs have 4 (intra-community edge
/// probability 0.8, inter 0.05). Classes alternate, so an even count is
/// balanced.
pub fn gen_planted_clusters(count: usize, seed: u64) -> Result<Dataset> {
    if count < 2 {
        return Err(PasError::InvalidArgument(
            "planted-clusters needs at least 2 graphs".into(),
        ));
    }
    let n = 24;
    let mut rng = Rng::from_seed(seed);
    let mut graphs = Vec::with_capacity(count);
    for g in 0..count {
        let label = g % 2;
        let communities = if label == 0 { 2 } else { 4 };
        let size = n / communities;
        let mut adj = Tensor::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let p = if i / size == j / size { 0.8 } else { 0.05 };
                if rng.uniform() < p {
                    adj.set(i, j, 1.0);
                    adj.set(j, i, 1.0);
                }
            }
        }
        graphs.push(Graph::new(adj, Tensor::full(n, 1, 1.0), label));
    }
    Dataset::new("planted-clusters", graphs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_sum_median_split_is_balanced() {
        let ds = gen_feature_sum(200, 7).unwrap();
        let counts = ds.class_counts();
        assert_eq!(counts, vec![100, 100]);
        assert!(ds.graphs.iter().all(|g| (15..=25).contains(&g.node_count())));
        assert_eq!(ds.feat_dim, 4);
    }

    #[test]
    fn planted_clusters_all_24_nodes() {
        let ds = gen_planted_clusters(40, 3).unwrap();
        assert!(ds.graphs.iter().all(|g| g.node_count() == 24));
        assert_eq!(ds.class_counts(), vec![20, 20]);
        assert_eq!(ds.feat_dim, 1);
    }

    #[test]
    fn same_seed_identical_dataset() {
        let a = gen_feature_sum(50, 99).unwrap();
        let b = gen_feature_sum(50, 99).unwrap();
        assert_eq!(a.graphs, b.graphs);
        let c = gen_planted_clusters(20, 5).unwrap();
        let d = gen_planted_clusters(20, 5).unwrap();
        assert_eq!(c.graphs, d.graphs);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(gen_feature_sum(1, 0).is_err());
        assert!("nonsense".parse::<SyntheticKind>().is_err());
    }
}

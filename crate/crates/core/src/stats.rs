//! Vote distribution over action clusters and the uncertainty statistics
//! derived from it (entropy in nats, top-1/top-2 margin, normalized entropy).

use serde::{Deserialize, Serialize};

use crate::cluster::ActionCluster;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("no valid candidates")]
    NoValidCandidates,
    #[error("cannot average an empty sequence of steps")]
    EmptySequence,
}

/// Clusters with their vote counts; `p(a) = count / denominator`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteDistribution {
    clusters: Vec<ActionCluster>,
    denominator: usize,
}

pub fn build_distribution(clusters: Vec<ActionCluster>) -> Result<VoteDistribution, StatsError> {
    if clusters.is_empty() {
        return Err(StatsError::NoValidCandidates);
    }
    let denominator = clusters.iter().map(|c| c.count).sum();
    Ok(VoteDistribution { clusters, denominator })
}

impl VoteDistribution {
    pub fn clusters(&self) -> &[ActionCluster] {
        &self.clusters
    }

    pub fn into_clusters(self) -> Vec<ActionCluster> {
        self.clusters
    }

    pub fn denominator(&self) -> usize {
        self.denominator
    }

    pub fn counts(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.count).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.denominator as f64;
        self.clusters.iter().map(|c| c.count as f64 / n).collect()
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

/// Per-step uncertainty summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyStats {
    pub entropy: f64,
    pub normalized_entropy: f64,
    pub margin: f64,
    pub top1: usize,
    pub top2: Option<usize>,
}

/// Shannon entropy (natural log) of the vote distribution.
pub fn entropy(dist: &VoteDistribution) -> f64 {
    entropy_from_counts(&dist.counts())
}

/// `p(top1) - p(top2)`, with `p(top2) = 0` for a single cluster.
pub fn margin(dist: &VoteDistribution) -> f64 {
    margin_from_counts(&dist.counts())
}

/// Entropy divided by `ln(n_sampled)`; zero when `n_sampled <= 1`.
pub fn normalized_entropy(dist: &VoteDistribution, n_sampled: usize) -> f64 {
    normalize_entropy(entropy(dist), n_sampled)
}

pub fn normalize_entropy(entropy: f64, n_sampled: usize) -> f64 {
    if n_sampled <= 1 {
        return 0.0;
    }
    (entropy / (n_sampled as f64).ln()).clamp(0.0, 1.0)
}

pub fn entropy_from_counts(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    // -1 * 1 * ln(1) is -0.0
    h.max(0.0)
}

pub fn margin_from_counts(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let (top1, top2) = top_two(counts);
    let second = top2.map_or(0, |i| counts[i]);
    (counts[top1] - second) as f64 / total as f64
}

/// Indices of the largest and second-largest counts; ties go to the lower index.
pub fn top_two(counts: &[usize]) -> (usize, Option<usize>) {
    let mut top1 = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[top1] {
            top1 = i;
        }
    }
    let mut top2: Option<usize> = None;
    for (i, &c) in counts.iter().enumerate() {
        if i == top1 {
            continue;
        }
        if top2.is_none_or(|j| c > counts[j]) {
            top2 = Some(i);
        }
    }
    (top1, top2)
}

/// All statistics for one step. Normalization uses the distribution's own
/// denominator (the number of parsed candidates).
pub fn uncertainty(dist: &VoteDistribution) -> UncertaintyStats {
    let counts = dist.counts();
    let h = entropy_from_counts(&counts);
    let (top1, top2) = top_two(&counts);
    UncertaintyStats {
        entropy: h,
        normalized_entropy: normalize_entropy(h, dist.denominator),
        margin: margin_from_counts(&counts),
        top1,
        top2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskAverages {
    pub mean_entropy: f64,
    pub mean_margin: f64,
}

pub fn task_averages(per_step: &[UncertaintyStats]) -> Result<TaskAverages, StatsError> {
    if per_step.is_empty() {
        return Err(StatsError::EmptySequence);
    }
    let n = per_step.len() as f64;
    Ok(TaskAverages {
        mean_entropy: per_step.iter().map(|s| s.entropy).sum::<f64>() / n,
        mean_margin: per_step.iter().map(|s| s.margin).sum::<f64>() / n,
    })
}

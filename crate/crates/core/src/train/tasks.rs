use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scene::Dataset;

pub const KMEANS_ITERATIONS: usize = 50;

/// Captures grouped by lighting, split into disjoint support and query sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LightTask {
    pub id: usize,
    pub members: Vec<usize>,
    pub support: Vec<usize>,
    pub query: Vec<usize>,
}

/// Partitions the captures of `dataset` by light position.
pub fn partition_tasks(dataset: &Dataset, num_tasks: usize, support_fraction: f64, seed: u64) -> Result<Vec<LightTask>> {
    let lights: Vec<Vector3<f64>> = dataset.captures.iter().map(|c| c.light.position).collect();
    partition_lights(&lights, num_tasks, support_fraction, seed)
}

/// k-means over `lights`, then a seeded support/query split per cluster.
/// Clusters with fewer than two captures merge into the nearest cluster.
pub fn partition_lights(lights: &[Vector3<f64>], num_tasks: usize, support_fraction: f64, seed: u64) -> Result<Vec<LightTask>> {
    let n = lights.len();
    if n < 2 {
        return Err(Error::invalid("task partitioning needs at least 2 captures"));
    }
    if num_tasks == 0 || num_tasks > n {
        return Err(Error::invalid(format!("num_tasks must lie in 1..={n}, got {num_tasks}")));
    }
    if !(support_fraction > 0.0 && support_fraction < 1.0) {
        return Err(Error::invalid("support_fraction must lie in (0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut centers: Vec<Vector3<f64>> = order[..num_tasks].iter().map(|&i| lights[i]).collect();
    let mut assign = vec![0usize; n];
    for _ in 0..KMEANS_ITERATIONS {
        for (i, l) in lights.iter().enumerate() {
            assign[i] = nearest(&centers, l);
        }
        for (k, c) in centers.iter_mut().enumerate() {
            let members: Vec<&Vector3<f64>> = lights.iter().zip(&assign).filter(|(_, &a)| a == k).map(|(l, _)| l).collect();
            if !members.is_empty() {
                *c = members.iter().fold(Vector3::zeros(), |s, l| s + *l) / members.len() as f64;
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = (0..num_tasks)
        .map(|k| (0..n).filter(|&i| assign[i] == k).collect())
        .collect();
    loop {
        let Some(small) = (0..clusters.len()).find(|&k| clusters[k].len() < 2) else {
            break;
        };
        let members = std::mem::take(&mut clusters[small]);
        let live: Vec<usize> = (0..clusters.len()).filter(|&k| k != small).collect();
        if !members.is_empty() {
            let target = live[nearest(
                &live.iter().map(|&k| centers[k]).collect::<Vec<_>>(),
                &centers[small],
            )];
            clusters[target].extend(members);
            clusters[target].sort_unstable();
        }
        clusters.remove(small);
        centers.remove(small);
    }
    Ok(clusters
        .into_iter()
        .enumerate()
        .map(|(id, members)| {
            let mut shuffled = members.clone();
            shuffled.shuffle(&mut rng);
            let size = members.len();
            let take = ((support_fraction * size as f64).ceil() as usize).clamp(1, size - 1);
            let mut support = shuffled[..take].to_vec();
            let mut query = shuffled[take..].to_vec();
            support.sort_unstable();
            query.sort_unstable();
            LightTask {
                id,
                members,
                support,
                query,
            }
        })
        .collect())
}

fn nearest(centers: &[Vector3<f64>], p: &Vector3<f64>) -> usize {
    let mut best = usize::MAX;
    let mut dist = f64::INFINITY;
    for (k, c) in centers.iter().enumerate() {
        let d = (c - p).norm_squared();
        if d < dist {
            dist = d;
            best = k;
        }
    }
    best
}

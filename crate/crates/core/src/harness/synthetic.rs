use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Sample};
use crate::error::{Error, Result};

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// Isotropic Gaussian clusters with well-separated centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub clusters: usize,
    pub dim: usize,
    pub per_cluster: usize,
    /// Minimum center distance in units of `sigma`.
    pub separation: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            clusters: 11,
            dim: 16,
            per_cluster: 100,
            separation: 6.0,
            sigma: 1.0,
            seed: 0,
        }
    }
}

/// Centers lie on the sphere of radius `separation·sigma` and are placed by
/// rejection sampling so that every pair is at least `separation·sigma`
/// apart (an angle of at least 60°). Fails when the placement budget runs out.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    generate_with_centers(spec).map(|(ds, _)| ds)
}

/// Same as [`generate_synthetic`], also returning the cluster centers.
pub fn generate_with_centers(spec: &SyntheticSpec) -> Result<(Dataset, Vec<Vec<f64>>)> {
    if spec.clusters < 2 || spec.dim == 0 || spec.per_cluster == 0 {
        return Err(Error::Config(
            "synthetic data needs at least 2 clusters, dim >= 1 and per_cluster >= 1".into(),
        ));
    }
    if !(spec.separation > 0.0) || !(spec.sigma > 0.0) {
        return Err(Error::Config("separation and sigma must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let min_dist = spec.separation * spec.sigma;
    let radius = min_dist;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.clusters);
    for c in 0..spec.clusters {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let candidate = random_direction(&mut rng, spec.dim)
                .into_iter()
                .map(|v| v * radius)
                .collect::<Vec<_>>();
            if centers.iter().all(|other| distance(other, &candidate) >= min_dist) {
                centers.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Config(format!(
                "cannot place {} clusters in {} dimensions at separation {} (placed {c})",
                spec.clusters, spec.dim, spec.separation
            )));
        }
    }

    let width = (spec.clusters - 1).to_string().len();
    let mut samples = Vec::with_capacity(spec.clusters * spec.per_cluster);
    for (c, center) in centers.iter().enumerate() {
        let label = format!("c{c:0width$}");
        for _ in 0..spec.per_cluster {
            let features = center
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + spec.sigma * z
                })
                .collect();
            samples.push(Sample {
                id: samples.len(),
                label: label.clone(),
                features,
            });
        }
    }
    Ok((Dataset::new(samples)?, centers))
}

fn random_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    UnitSphere,
    Gaussian,
    /// Regular grid on `[-1, 1]^d`, first `n` points in lexicographic order.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub n: usize,
    /// Input dimension; must match the network when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d0: Option<usize>,
    pub distribution: Distribution,
    #[serde(default)]
    pub seed: u64,
}

pub fn generate(n: usize, d: usize, distribution: Distribution, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match distribution {
        Distribution::Gaussian => (0..n)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect(),
        Distribution::UnitSphere => (0..n)
            .map(|_| loop {
                let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    break x.iter().map(|v| v / norm).collect();
                }
            })
            .collect(),
        Distribution::Grid => {
            let mut k = 1usize;
            while k.pow(d as u32) < n {
                k += 1;
            }
            let coord = |i: usize| if k == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (k - 1) as f64 };
            (0..n)
                .map(|idx| {
                    let mut rem = idx;
                    let mut x = vec![0.0; d];
                    for slot in x.iter_mut().rev() {
                        *slot = coord(rem % k);
                        rem /= k;
                    }
                    x
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_points_have_unit_norm() {
        for x in generate(20, 3, Distribution::UnitSphere, 4) {
            let n: f64 = x.iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_is_regular() {
        let g = generate(9, 2, Distribution::Grid, 0);
        assert_eq!(g[0], vec![-1.0, -1.0]);
        assert_eq!(g[4], vec![0.0, 0.0]);
        assert_eq!(g[8], vec![1.0, 1.0]);
        assert_eq!(generate(5, 2, Distribution::Grid, 0).len(), 5);
    }

    #[test]
    fn seeded() {
        assert_eq!(generate(4, 2, Distribution::Gaussian, 1), generate(4, 2, Distribution::Gaussian, 1));
        assert_ne!(generate(4, 2, Distribution::Gaussian, 1), generate(4, 2, Distribution::Gaussian, 2));
    }
}

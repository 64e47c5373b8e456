//! Shared helpers for the unit tests: seeded data generation and
//! process-wide m-tables so each test binary builds them once.

use crate::data::Dataset;
use crate::families::PoissonLogModel;
use crate::mloss::{GridConfig, LossSpec, MTable};
use nalgebra::{DMatrix, DVector};
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Normal, Poisson};
use std::sync::OnceLock;

pub(crate) fn square_table() -> &'static MTable {
    static TABLE: OnceLock<MTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        MTable::build(LossSpec::Square, &PoissonLogModel, &GridConfig::default()).unwrap()
    })
}

pub(crate) fn bisquare_table() -> &'static MTable {
    static TABLE: OnceLock<MTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        MTable::build(
            LossSpec::bisquare(crate::mloss::DEFAULT_TUNING_CONSTANT).unwrap(),
            &PoissonLogModel,
            &GridConfig::default(),
        )
        .unwrap()
    })
}

/// Poisson regression data with an intercept column and standard normal
/// covariates, deterministic per seed.
pub(crate) fn random_poisson_dataset(seed: u64, n: usize, p: usize, beta0: &[f64]) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { normal.sample(&mut rng) });
    let beta = DVector::from_column_slice(beta0);
    let y: Vec<u64> = (0..n)
        .map(|i| {
            let mu: f64 = x.row(i).transpose().dot(&beta).exp();
            let draw: f64 = Poisson::new(mu.max(1e-12)).unwrap().sample(&mut rng);
            draw as u64
        })
        .collect();
    Dataset::new(x, y).unwrap()
}

/// Replace the first `count` rows by identical `(x0, y0)` outliers.
pub(crate) fn plant_outliers(data: &Dataset, count: usize, x0: &[f64], y0: u64) -> Dataset {
    let mut x = data.x().clone();
    let mut y = data.y().to_vec();
    for i in 0..count {
        for (j, &v) in x0.iter().enumerate() {
            x[(i, j)] = v;
        }
        y[i] = y0;
    }
    Dataset::new(x, y).unwrap()
}

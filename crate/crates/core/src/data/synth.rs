use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{Error, Result};

const NOISE_STD: f64 = 0.3;

/// Class-conditional Gaussian blobs clamped to `[0, 1]`.
///
/// Sample `i` has label `i % num_classes`. When `d >= num_classes` class `c`
/// is centred on the indicator of coordinates `j` with `j % num_classes == c`;
/// otherwise the centres are seeded random binary vectors.
pub fn synth_dataset(num_classes: usize, d: usize, n: usize, seed: u64) -> Result<Dataset> {
    if num_classes == 0 || d == 0 || n == 0 {
        return Err(Error::InvalidConfig(format!(
            "synthetic dataset needs positive sizes, got classes={num_classes} d={d} n={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..num_classes)
        .map(|c| {
            (0..d)
                .map(|j| {
                    if d >= num_classes {
                        f64::from(u8::from(j % num_classes == c))
                    } else {
                        f64::from(u8::from(rng.gen_bool(0.5)))
                    }
                })
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    let labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    let mut inputs = Array2::zeros((n, d));
    for (mut row, &y) in inputs.outer_iter_mut().zip(&labels) {
        for (x, &mu) in row.iter_mut().zip(&centres[y]) {
            *x = (mu + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    Dataset::new(inputs, labels, num_classes)
}

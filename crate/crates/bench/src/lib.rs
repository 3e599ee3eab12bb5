//! Shared inputs for the benchmarks.

use beerla::imagery::{render_beer_lambert, Geometry, RawImage};
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two-stain render with 30%-sparse densities.
pub fn two_stain_image(size: usize, seed: u64) -> RawImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Geometry::new(3, size, size);
    let stains = array![[0.65, 0.07], [0.70, 0.99], [0.29, 0.11]];
    let dens = Array2::from_shape_fn((g.pixels(), 2), |_| {
        if rng.gen_bool(0.3) {
            rng.gen_range(0.2..1.5)
        } else {
            0.0
        }
    });
    let x0 = Array1::from_vec(vec![-0.02, -0.04, -0.03]);
    render_beer_lambert(x0.view(), stains.view(), dens.view(), g).unwrap()
}

pub fn random_vector(n: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..2.0))
}

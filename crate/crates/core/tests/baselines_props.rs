use beerla::baselines::lab::rgb_to_lab;
use beerla::baselines::macenko::{macenko_estimate, macenko_normalize};
use beerla::baselines::reinhard::{mean_std, reinhard_normalize, reinhard_transfer_lab};
use beerla::baselines::sparse_nmf::{sparse_nmf_decompose, sparse_nmf_decompose_seeded, sparse_nmf_objective};
use beerla::baselines::angle_degrees;
use beerla::imagery::{render_beer_lambert, to_optical_density, Geometry, RawImage};
use ndarray::{array, Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit(v: [f64; 3]) -> Array1<f64> {
    let a = Array1::from_vec(v.to_vec());
    let n = a.dot(&a).sqrt();
    a / n
}

fn stain_pair() -> Array2<f64> {
    let (h, e) = (unit([0.65, 0.70, 0.29]), unit([0.07, 0.99, 0.11]));
    let mut s = Array2::zeros((3, 2));
    s.column_mut(0).assign(&h);
    s.column_mut(1).assign(&e);
    s
}

/// Thirds of pure stain 1, pure stain 2 and mixtures, plus some white pixels.
fn spread_densities(rng: &mut ChaCha8Rng, p: usize) -> Array2<f64> {
    let mut d = Array2::zeros((p, 2));
    for j in 0..p {
        let (a, b) = match j % 10 {
            0 => (0.0, 0.0),
            1..=3 => (rng.gen_range(0.3..1.5), 0.0),
            4..=6 => (0.0, rng.gen_range(0.3..1.5)),
            _ => (rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0)),
        };
        d[[j, 0]] = a;
        d[[j, 1]] = b;
    }
    d
}

fn render(stains: &Array2<f64>, dens: &Array2<f64>, w: usize, h: usize) -> RawImage {
    let g = Geometry::new(3, w, h);
    render_beer_lambert(Array1::zeros(3).view(), stains.view(), dens.view(), g).unwrap()
}

fn min_angle_up_to_swap(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, t0: ArrayView1<'_, f64>, t1: ArrayView1<'_, f64>) -> f64 {
    let straight = angle_degrees(a, t0).max(angle_degrees(b, t1));
    let swapped = angle_degrees(a, t1).max(angle_degrees(b, t0));
    straight.min(swapped)
}

#[test]
fn macenko_recovers_two_known_stains() {
    let truth = stain_pair();
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = render(&truth, &spread_densities(&mut rng, 40 * 40), 40, 40);
        let basis = macenko_estimate(&img).unwrap();
        basis.validate().unwrap();
        let err = min_angle_up_to_swap(
            basis.stains.column(0),
            basis.stains.column(1),
            truth.column(0),
            truth.column(1),
        );
        assert!(err <= 2.0, "seed {seed}: {err} degrees");
    }
}

#[test]
fn macenko_on_a_single_stain_returns_it_twice() {
    let truth = stain_pair();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dens = Array2::from_shape_fn((900, 2), |(_, k)| if k == 0 { rng.gen_range(0.2..1.5) } else { 0.0 });
    let img = render(&truth, &dens, 30, 30);
    let basis = macenko_estimate(&img).unwrap();
    for k in 0..2 {
        assert!(angle_degrees(basis.stains.column(k), truth.column(0)) <= 2.0);
    }
}

fn shuffled(img: &RawImage, seed: u64) -> RawImage {
    let mut order: Vec<usize> = (0..img.geometry().pixels()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    RawImage::new(img.geometry(), img.data().select(Axis(1), &order)).unwrap()
}

#[test]
fn macenko_ignores_pixel_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = render(&stain_pair(), &spread_densities(&mut rng, 1024), 32, 32);
    let a = macenko_estimate(&img).unwrap();
    let b = macenko_estimate(&shuffled(&img, 9)).unwrap();
    for (u, v) in a.stains.iter().zip(b.stains.iter()) {
        assert!((u - v).abs() <= 1e-6);
    }
    for (u, v) in a.max_densities.iter().zip(&b.max_densities) {
        assert!((u - v).abs() <= 1e-6);
    }
}

#[test]
fn macenko_normalization_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = render(&stain_pair(), &spread_densities(&mut rng, 1024), 32, 32);
    let checks = [
        (img.clone(), "self template"),
        // Same basis and density scales, different pixels.
        (shuffled(&img, 1), "template rendered from the same basis"),
    ];
    for (template, what) in checks {
        let out = macenko_normalize(&img, &template).unwrap();
        for (j, (a, b)) in out.data().iter().zip(img.data().iter()).enumerate() {
            assert!((a - b).abs() <= 2.0 / 255.0, "{what}: entry {j} {a} vs {b}");
        }
    }
    let out = macenko_normalize(&img, &img).unwrap();
    for j in (0..1024).step_by(10) {
        assert!(out.pixel(j).iter().all(|&v| v >= 1.0 - 1.0 / 255.0));
    }
}

fn textured(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RawImage {
    let g = Geometry::new(3, w, h);
    let base: [f64; 3] = [rng.gen_range(0.3..0.8), rng.gen_range(0.3..0.8), rng.gen_range(0.3..0.8)];
    let data = Array2::from_shape_fn((3, g.pixels()), |(c, _)| {
        (base[c] + rng.gen_range(-0.2..0.2)).clamp(0.01, 1.0)
    });
    RawImage::new(g, data).unwrap()
}

#[test]
fn reinhard_matches_template_statistics_before_clamping() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let src = textured(&mut rng, 17, 13);
        let tpl = textured(&mut rng, 11, 19);
        let lab = reinhard_transfer_lab(&src, &tpl).unwrap();
        let tpl_lab = rgb_to_lab(tpl.data());
        for c in 0..3 {
            let (m, s) = mean_std(lab.row(c));
            let (mt, st) = mean_std(tpl_lab.row(c));
            assert!((m - mt).abs() <= 1e-3 && (s - st).abs() <= 1e-3);
        }
    }
}

#[test]
fn reinhard_is_idempotent_on_its_own_template() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let img = textured(&mut rng, 20, 20);
    let out = reinhard_normalize(&img, &img).unwrap();
    for (a, b) in out.data().iter().zip(img.data().iter()) {
        assert!((a - b).abs() <= 1.0 / 255.0);
    }
}

#[test]
fn sparse_nmf_fits_exact_low_rank_data() {
    let truth = array![[0.6, 0.1], [0.7, 0.9], [0.3, 0.4]];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // Half the entries zero: pure-stain pixels pin down the factorization.
    // Fully dense densities admit a family of exact nonnegative factorizations
    // and the fit creeps along it (about 4e-3 after 200 iterations).
    let dens = Array2::from_shape_fn((400, 2), |_| {
        if rng.gen_bool(0.5) {
            rng.gen_range(0.1..1.2)
        } else {
            0.0
        }
    });
    let img = render(&truth, &dens, 20, 20);
    let x = to_optical_density(&img);
    let res = sparse_nmf_decompose(&x, 2, 0.0, 200).unwrap();
    let rel = res.relative_residual(&x);
    assert!(rel <= 1e-3, "relative residual {rel}");
    res.basis.validate().unwrap();
}

#[test]
fn sparse_nmf_trace_is_monotone_on_random_inputs() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = to_optical_density(&textured(&mut rng, 9, 7));
        let lambda = rng.gen_range(0.0..0.5);
        let res = sparse_nmf_decompose_seeded(&x, 3, lambda, 40, seed).unwrap();
        for w in res.objective_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-7));
        }
        let last = sparse_nmf_objective(
            res.x0.view(),
            res.basis.stains.view(),
            res.densities.view(),
            x.data(),
            lambda,
        );
        assert!((last - res.objective_trace[40]).abs() <= 1e-12 * last.max(1.0));
        res.basis.validate().unwrap();
    }
}

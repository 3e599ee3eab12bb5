use beerla::{prox_density_column, prox_spectrum_column, safe_step_size, ProxThresholds};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn composite(v: &[f64], d: &[f64], l1: f64, l2: f64) -> f64 {
    let fit: f64 = v.iter().zip(d).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum();
    let n1: f64 = v.iter().map(|x| x.abs()).sum();
    let n2: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    fit + l1 * n1 + l2 * n2
}

/// Exhaustive grid over `[0, hi]^2`.
fn grid_min_2d(d: &[f64], l1: f64, l2: f64, hi: f64, step: f64) -> f64 {
    let n = (hi / step).round() as usize;
    let mut best = f64::INFINITY;
    for i in 0..=n {
        for j in 0..=n {
            let v = [i as f64 * step, j as f64 * step];
            best = best.min(composite(&v, d, l1, l2));
        }
    }
    best
}

/// Pattern search on the nonnegative orthant from several starts: coordinate,
/// radial and random directions, the step halved whenever a sweep makes no
/// progress. Independent of the closed-form operators.
fn search_min(d: &[f64], l1: f64, l2: f64, rng: &mut ChaCha8Rng) -> f64 {
    let n = d.len();
    let mut starts = vec![vec![0.0; n], d.iter().map(|x| x.max(0.0)).collect::<Vec<_>>()];
    for _ in 0..2 {
        starts.push((0..n).map(|_| rng.gen_range(0.0..3.0)).collect());
    }
    let mut best = f64::INFINITY;
    let mut cand = vec![0.0; n];
    for mut v in starts {
        let mut f = composite(&v, d, l1, l2);
        let mut step = 1.0;
        let mut sweeps = 0;
        while step > 1e-9 && sweeps < 4000 {
            sweeps += 1;
            let mut improved = false;
            let mut dirs: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..n).map(|k| if k == i { 1.0 } else { 0.0 }).collect())
                .collect();
            let r = norm(&v);
            if r > 0.0 {
                dirs.push(v.iter().map(|x| x / r).collect());
            }
            // Descent direction of the terms other than the l2 norm; lets the
            // search leave the kink at 0.
            let g: Vec<f64> = (0..n).map(|k| d[k] - l1 - v[k]).collect();
            let gn = norm(&g);
            if gn > 0.0 {
                dirs.push(g.iter().map(|x| x / gn).collect());
            }
            let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let un = norm(&u);
            dirs.push(u.iter().map(|x| x / un).collect());
            for dir in &dirs {
                for sign in [1.0, -1.0] {
                    for k in 0..n {
                        cand[k] = (v[k] + sign * step * dir[k]).max(0.0);
                    }
                    let g = composite(&cand, d, l1, l2);
                    if g < f {
                        f = g;
                        v.copy_from_slice(&cand);
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        f = f.min(polish(&mut v, d, l1, l2));
        best = best.min(f);
    }
    best
}

/// Backtracking projected gradient on the smooth part (valid away from 0).
fn polish(v: &mut [f64], d: &[f64], l1: f64, l2: f64) -> f64 {
    let n = v.len();
    let mut f = composite(v, d, l1, l2);
    let mut cand = vec![0.0; n];
    let mut t = 1.0;
    for _ in 0..2000 {
        let r = norm(v);
        if r == 0.0 || t < 1e-14 {
            break;
        }
        let grad: Vec<f64> = (0..n).map(|k| v[k] - d[k] + l1 + l2 * v[k] / r).collect();
        loop {
            for k in 0..n {
                cand[k] = (v[k] - t * grad[k]).max(0.0);
            }
            let g = composite(&cand, d, l1, l2);
            if g <= f {
                f = g;
                v.copy_from_slice(&cand);
                t = (t * 2.0).min(1e3);
                break;
            }
            t *= 0.5;
            if t < 1e-14 {
                break;
            }
        }
    }
    f
}

#[test]
fn density_prox_beats_dense_grid_in_two_dimensions() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..6 {
        let d = [rng.gen_range(-1.0..2.0), rng.gen_range(-1.0..2.0)];
        let (l1, l2) = (rng.gen_range(0.0..0.8), rng.gen_range(0.0..0.8));
        let out = prox_density_column(Array1::from_vec(d.to_vec()).view(), ProxThresholds::new(l1, l2));
        let got = composite(out.as_slice().unwrap(), &d, l1, l2);
        let grid = grid_min_2d(&d, l1, l2, 2.0, 1e-3);
        assert!(got <= grid + 1e-6, "prox {got} grid {grid} at d={d:?}");
        // The grid is fine enough to land within O(step) of the optimum.
        assert!(grid - got < 5e-3);
    }
}

#[test]
fn density_prox_matches_search_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let n = rng.gen_range(2..=8);
        let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..3.0)).collect();
        let (l1, l2) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..2.0));
        let out = prox_density_column(Array1::from_vec(d.clone()).view(), ProxThresholds::new(l1, l2));
        let got = composite(out.as_slice().unwrap(), &d, l1, l2);
        let oracle = search_min(&d, l1, l2, &mut rng);
        assert!(got <= oracle + 1e-6, "prox {got} oracle {oracle}");
        // Sanity check that the search itself gets close.
        assert!(oracle <= got + 1e-6, "oracle failed to approach {got}: {oracle}");
    }
}

#[test]
fn spectrum_prox_matches_search_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..300 {
        let n = rng.gen_range(2..=8);
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..3.0)).collect();
        let theta = rng.gen_range(0.0..3.0);
        let out = prox_spectrum_column(Array1::from_vec(s.clone()).view(), theta);
        let got = composite(out.as_slice().unwrap(), &s, 0.0, theta);
        let oracle = search_min(&s, 0.0, theta, &mut rng);
        assert!(got <= oracle + 1e-6, "prox {got} oracle {oracle}");
    }
}

#[test]
fn step_size_is_inverse_sum_of_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let m = Array2::from_shape_fn((rng.gen_range(1..6), rng.gen_range(1..6)), |_| rng.gen_range(-2.0..2.0));
        let mut sum = 0.0;
        for v in m.iter() {
            sum += v * v;
        }
        let tau = safe_step_size(m.view(), 1e-8);
        assert!((tau - 1.0 / sum).abs() <= 1e-12 * (1.0 / sum));
    }
    assert_eq!(safe_step_size(Array2::<f64>::zeros((3, 2)).view(), 1e-8), 1e8);
    assert_eq!(safe_step_size(Array2::<f64>::eye(3).view(), 1e-8), 1.0 / 3.0);
}

fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, 1..10)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn outputs_nonnegative_and_no_longer_than_positive_part(
        d in vec_strategy(), l1 in 0.0f64..3.0, l2 in 0.0f64..3.0
    ) {
        let pos: Vec<f64> = d.iter().map(|x| x.max(0.0)).collect();
        let a = prox_density_column(Array1::from_vec(d.clone()).view(), ProxThresholds::new(l1, l2));
        let b = prox_spectrum_column(Array1::from_vec(d.clone()).view(), l2);
        prop_assert!(a.iter().chain(b.iter()).all(|&v| v >= 0.0));
        prop_assert!(norm(a.as_slice().unwrap()) <= norm(&pos) + 1e-12);
        prop_assert!(norm(b.as_slice().unwrap()) <= norm(&pos) + 1e-12);
    }

    #[test]
    fn killed_exactly_when_shrunk_norm_below_threshold(
        d in vec_strategy(), l1 in 0.0f64..3.0, l2 in 0.0f64..3.0
    ) {
        let shrunk: Vec<f64> = d.iter().map(|x| (x - l1).max(0.0)).collect();
        let a = prox_density_column(Array1::from_vec(d.clone()).view(), ProxThresholds::new(l1, l2));
        let zero = a.iter().all(|&v| v == 0.0);
        prop_assert_eq!(zero, norm(&shrunk) <= l2);
    }

    #[test]
    fn larger_thresholds_never_grow_entries(
        d in vec_strategy(), l1 in 0.0f64..2.0, l2 in 0.0f64..2.0, e1 in 0.0f64..1.0, e2 in 0.0f64..1.0
    ) {
        let dv = Array1::from_vec(d);
        let base = prox_density_column(dv.view(), ProxThresholds::new(l1, l2));
        let more = prox_density_column(dv.view(), ProxThresholds::new(l1 + e1, l2 + e2));
        for (m, b) in more.iter().zip(base.iter()) {
            prop_assert!(*m <= *b + 1e-12);
        }
        let sb = prox_spectrum_column(dv.view(), l2);
        let sm = prox_spectrum_column(dv.view(), l2 + e2);
        for (m, b) in sm.iter().zip(sb.iter()) {
            prop_assert!(*m <= *b + 1e-12);
        }
    }
}

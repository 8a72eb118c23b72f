use apfree::aps::{greedy_free_set, progression_density, triple_correlation, CountMethod, PointSet};
use apfree::field::Cube;
use apfree::funcspace::DenseFunction;
use apfree::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::oracle::{naive_is_free, naive_lambda};
use crate::Outcome;

const CONFIGS: [(u32, usize); 11] = [(3, 1), (3, 2), (3, 3), (3, 4), (3, 5), (3, 6), (5, 1), (5, 2), (5, 3), (5, 4), (5, 5)];

/// A greedy free set in random order, thinned at random half the time.
fn random_free_set(cube: Cube, rng: &mut ChaCha8Rng) -> PointSet {
    let mut order: Vec<usize> = (0..cube.size()).collect();
    order.shuffle(rng);
    let mut set = greedy_free_set(cube, order);
    if rng.gen_bool(0.5) {
        for i in set.indices() {
            if rng.gen_bool(0.3) {
                set.remove(i);
            }
        }
    }
    set
}

pub fn free_set_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let (p, n) = CONFIGS[k % CONFIGS.len()];
        let cube = Cube::new(p, n).unwrap();
        let set = random_free_set(cube, &mut rng);
        let members: Vec<bool> = (0..cube.size()).map(|i| set.contains(i)).collect();
        ensure!(naive_is_free(&members, p, n), "set {k} (p={p}, n={n}) is not free");
        let f = set.to_function();
        let expected = set.density() / 3f64.powi(n as i32);
        let direct = triple_correlation(&f, &f, &f, CountMethod::Direct).map_err(|e| e.to_string())?;
        let by_count = progression_density(&set);
        let naive = naive_lambda(f.values(), f.values(), f.values(), p, n);
        for (label, v) in [("direct", direct), ("count", by_count.into()), ("oracle", naive)] {
            let dev = (v - Complex64::from(expected)).norm();
            ensure!(dev <= 1e-12, "set {k} (p={p}, n={n}): {label} Λ = {v}, expected {expected}");
            worst = worst.max(dev);
        }
    }
    Ok(format!("50 free sets, max |Λ − 3^-n μ| = {worst:.1e}"))
}

fn random_bounded(cube: Cube, rng: &mut ChaCha8Rng) -> DenseFunction {
    let values = (0..cube.size())
        .map(|_| Complex64::from_polar(rng.gen::<f64>().sqrt(), rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect();
    DenseFunction::from_complex(cube, values).unwrap()
}

pub fn dual_path() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let configs: Vec<(u32, usize)> = [3, 5].iter().flat_map(|&p| (1..=4).map(move |n| (p, n))).collect();
    let mut worst: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for k in 0..100 {
        let (p, n) = configs[k % configs.len()];
        let cube = Cube::new(p, n).unwrap();
        let (f, g, h) = (random_bounded(cube, &mut rng), random_bounded(cube, &mut rng), random_bounded(cube, &mut rng));
        let direct = triple_correlation(&f, &g, &h, CountMethod::Direct).map_err(|e| e.to_string())?;
        let fourier = triple_correlation(&f, &g, &h, CountMethod::Fourier).map_err(|e| e.to_string())?;
        let naive = naive_lambda(f.values(), g.values(), h.values(), p, n);
        let dev = (direct - fourier).norm();
        ensure!(dev <= 1e-8, "triple {k} (p={p}, n={n}): direct {direct} vs Fourier {fourier}");
        let dev_oracle = (direct - naive).norm().max((fourier - naive).norm());
        ensure!(dev_oracle <= 1e-8, "triple {k} (p={p}, n={n}): oracle {naive} vs direct {direct}, Fourier {fourier}");
        worst = worst.max(dev);
        worst_oracle = worst_oracle.max(dev_oracle);
    }
    Ok(format!("100 triples, max |direct − Fourier| = {worst:.1e}, max deviation from oracle = {worst_oracle:.1e}"))
}

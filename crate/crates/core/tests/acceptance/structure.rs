use apfree::aps::greedy_free_set;
use apfree::field::{Cube, FiniteAbelianGroup};
use apfree::structure::{product_closure_under_basis_change, restrict_z, BasisChangedView, ProductFunction, SpecialBasis};
use apfree::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::oracle::{digits, index_of, max_diff, naive_is_free};
use crate::Outcome;

/// `M(x, z) = Σ x_j v_j + Σ z_k u_k` from the basis columns.
fn basis_map(b: &SpecialBasis, x: &[u32], z: &[u32]) -> Vec<u32> {
    let p = b.p();
    let mut y = vec![0u32; b.n()];
    for (k, &c) in x.iter().chain(z).enumerate() {
        for (yi, ci) in y.iter_mut().zip(b.column(k)) {
            *yi = (*yi + c * ci) % p;
        }
    }
    y
}

fn random_shape(rng: &mut ChaCha8Rng) -> (u32, usize, usize) {
    let p = *[3u32, 5].choose(rng).unwrap();
    let n = if p == 3 { rng.gen_range(2..=5) } else { rng.gen_range(2..=4) };
    (p, n, rng.gen_range(1..=n))
}

pub fn preservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut nonempty = 0;
    for t in 0..1000 {
        let (p, n, n_prime) = random_shape(&mut rng);
        let cube = Cube::new(p, n).unwrap();
        let mut order: Vec<usize> = (0..cube.size()).collect();
        order.shuffle(&mut rng);
        let set = greedy_free_set(cube, order);
        let f = set.to_function();
        let members: Vec<bool> = (0..cube.size()).map(|i| set.contains(i)).collect();
        ensure!(naive_is_free(&members, p, n), "trial {t}: greedy set is not free");
        let basis = SpecialBasis::random(p, n, n_prime, &mut rng).map_err(|e| e.to_string())?;
        let z: Vec<u32> = (0..n - n_prime).map(|_| rng.gen_range(0..p)).collect();
        let view = BasisChangedView::new(basis.clone(), f).map_err(|e| e.to_string())?;
        let g = restrict_z(&view, &z).map_err(|e| e.to_string())?;
        let small = Cube::new(p, n_prime).unwrap();
        let expected: Vec<bool> = (0..small.size()).map(|i| members[index_of(&basis_map(&basis, &digits(i, p, n_prime), &z), p)]).collect();
        let got: Vec<bool> = g.values().iter().map(|v| v.re != 0.0).collect();
        ensure!(got == expected, "trial {t}: restriction differs from f(M(x, z))");
        ensure!(naive_is_free(&got, p, n_prime), "trial {t}: restriction to n' = {n_prime} contains a progression");
        nonempty += usize::from(got.iter().any(|&b| b));
    }

    let mut worst: f64 = 0.0;
    for t in 0..200 {
        let (p, n, n_prime) = random_shape(&mut rng);
        let r = *[2u64, 3, 4, u64::from(p), 2 * u64::from(p)].choose(&mut rng).unwrap();
        let group = FiniteAbelianGroup::cyclic(r).unwrap();
        let exponents: Vec<Vec<u32>> = (0..n).map(|_| (0..p).map(|_| rng.gen_range(0..r as u32)).collect()).collect();
        let scalar = Complex64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU));
        let pf = ProductFunction::from_exponents(group, p, scalar, exponents.clone()).map_err(|e| e.to_string())?;
        let basis = SpecialBasis::random(p, n, n_prime, &mut rng).map_err(|e| e.to_string())?;
        let z: Vec<u32> = (0..n - n_prime).map(|_| rng.gen_range(0..p)).collect();
        let closed = product_closure_under_basis_change(&pf, &basis, &z).map_err(|e| e.to_string())?;
        let small = Cube::new(p, n_prime).unwrap();
        let expected: Vec<Complex64> = (0..small.size())
            .map(|i| {
                let y = basis_map(&basis, &digits(i, p, n_prime), &z);
                let k: u64 = y.iter().zip(&exponents).map(|(&s, e)| u64::from(e[s as usize])).sum();
                scalar * Complex64::from_polar(1.0, std::f64::consts::TAU * (k % r) as f64 / r as f64)
            })
            .collect();
        let dev = max_diff(closed.materialize().values(), &expected);
        ensure!(dev <= 1e-10, "closure trial {t} (p={p}, n={n}, n'={n_prime}, r={r}): off by {dev:.2e}");
        worst = worst.max(dev);
    }
    Ok(format!("1000 restrictions free ({nonempty} nonempty); 200 closures, max deviation {worst:.1e}"))
}

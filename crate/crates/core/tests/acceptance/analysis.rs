use apfree::chains::{correlation_lower_bound_check, MarkovChain};
use apfree::field::Cube;
use apfree::funcspace::{efron_stein_part, fourier_transform, inverse_fourier_transform, mask_to_subset, DenseFunction};
use apfree::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::oracle::{
    circulant_lambda2, digits, inclusion_exclusion_parts, inner, max_diff, naive_dft, naive_difference_operator, norm, ZERO,
};
use crate::Outcome;

const TOL: f64 = 1e-9;

fn random_function(cube: Cube, k: usize, rng: &mut ChaCha8Rng) -> DenseFunction {
    let size = cube.size();
    match k % 3 {
        0 => DenseFunction::from_bools(cube, &(0..size).map(|_| rng.gen_bool(0.4)).collect::<Vec<_>>()).unwrap(),
        1 => DenseFunction::from_real(cube, (0..size).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
        _ => DenseFunction::from_complex(cube, (0..size).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect())
            .unwrap(),
    }
}

/// Which `S` a Fourier index belongs to: the support of `α`.
fn support_mask(index: usize, p: u32, n: usize) -> usize {
    digits(index, p, n).iter().enumerate().filter(|(_, &d)| d != 0).map(|(i, _)| 1 << i).sum()
}

pub fn decompositions() -> Outcome {
    let configs: Vec<(u32, usize)> = (1..=6).map(|n| (3, n)).chain((1..=5).map(|n| (5, n))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = [0.0f64; 5];
    let mut dft_checked = 0;
    for &(p, n) in &configs {
        let cube = Cube::new(p, n).unwrap();
        let masks = 1usize << n;
        for k in 0..100 {
            let f = random_function(cube, k, &mut rng);
            let fv = f.values();
            let coeffs = fourier_transform(&f).map_err(|e| e.to_string())?;
            if cube.size() <= 729 || k < 3 {
                let dev = max_diff(&coeffs, &naive_dft(fv, p, n));
                ensure!(dev <= TOL, "p={p} n={n} #{k}: Fourier transform is {dev:.2e} off the direct sum");
                dft_checked += 1;
            }
            // Parseval
            let energy: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
            let dev = (energy - norm(fv).powi(2)).abs();
            ensure!(dev <= TOL, "p={p} n={n} #{k}: Parseval off by {dev:.2e}");
            worst[0] = worst[0].max(dev);

            let oracle_parts = inclusion_exclusion_parts(fv, p, n);
            let parts: Vec<Vec<Complex64>> = (0..masks)
                .map(|m| efron_stein_part(&f, &mask_to_subset(m as u64, n)).map(|e| e.part.into_values()))
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            // reconstruction
            let mut sum = vec![ZERO; cube.size()];
            for part in &parts {
                for (s, v) in sum.iter_mut().zip(part) {
                    *s += v;
                }
            }
            let dev = max_diff(&sum, fv);
            ensure!(dev <= TOL, "p={p} n={n} #{k}: parts sum to something {dev:.2e} away from f");
            worst[1] = worst[1].max(dev);
            // orthogonality
            for a in 0..masks {
                for b in (a + 1)..masks {
                    let dev = inner(&parts[a], &parts[b]).norm();
                    ensure!(dev <= TOL, "p={p} n={n} #{k}: parts {a:b} and {b:b} have inner product {dev:.2e}");
                    worst[2] = worst[2].max(dev);
                }
            }
            // inclusion–exclusion and Fourier grouping
            for m in 0..masks {
                let dev = max_diff(&parts[m], &oracle_parts[m]);
                ensure!(dev <= TOL, "p={p} n={n} #{k}: part {m:b} differs from inclusion–exclusion by {dev:.2e}");
                worst[3] = worst[3].max(dev);
                let masked: Vec<Complex64> =
                    coeffs.iter().enumerate().map(|(i, &c)| if support_mask(i, p, n) == m { c } else { ZERO }).collect();
                let grouped = inverse_fourier_transform(cube, &masked).map_err(|e| e.to_string())?;
                let dev = max_diff(&grouped, &oracle_parts[m]);
                ensure!(dev <= TOL, "p={p} n={n} #{k}: Fourier grouping of {m:b} differs by {dev:.2e}");
                worst[4] = worst[4].max(dev);
            }
        }
    }
    Ok(format!(
        "{} functions; max deviations: Parseval {:.1e}, reconstruction {:.1e}, orthogonality {:.1e}, \
         inclusion–exclusion {:.1e}, Fourier grouping {:.1e}; {dft_checked} transforms checked against the direct sum",
        configs.len() * 100,
        worst[0],
        worst[1],
        worst[2],
        worst[3],
        worst[4]
    ))
}

pub fn spectral_bound() -> Outcome {
    let chain = MarkovChain::ap_difference_chain(5).map_err(|e| e.to_string())?;
    let lambda2 = chain.second_eigenvalue();
    let golden = (1.0 + 5f64.sqrt()) / 2.0 / 3.0;
    let oracle = circulant_lambda2(5);
    ensure!((lambda2 - golden).abs() <= 1e-8, "λ₂ = {lambda2}, expected {golden}");
    ensure!((oracle - golden).abs() <= 1e-12, "circulant oracle gives {oracle}, expected {golden}");

    let (p, n) = (5u32, 4usize);
    let cube = Cube::new(p, n).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut min_slack = f64::INFINITY;
    for k in 0..50 {
        let (df, dg) = (rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9));
        let f = DenseFunction::from_bools(cube, &(0..cube.size()).map(|_| rng.gen_bool(df)).collect::<Vec<_>>()).unwrap();
        let g = DenseFunction::from_bools(cube, &(0..cube.size()).map(|_| rng.gen_bool(dg)).collect::<Vec<_>>()).unwrap();
        let (fv, gv) = (f.values(), g.values());
        let alpha = fv.iter().map(|v| v.re).sum::<f64>() / cube.size() as f64;
        let beta = gv.iter().map(|v| v.re).sum::<f64>() / cube.size() as f64;
        let correlation = inner(fv, &naive_difference_operator(gv, p, n)).re;
        let lhs = (correlation - alpha * beta).abs();
        let (fp, gp) = (inclusion_exclusion_parts(fv, p, n), inclusion_exclusion_parts(gv, p, n));
        let rhs: f64 = (1..1usize << n)
            .map(|m| oracle.powi(m.count_ones() as i32) * norm(&fp[m]) * norm(&gp[m]))
            .sum();
        ensure!(lhs <= rhs + 1e-9, "pair {k}: |⟨f,Tg⟩ − αβ| = {lhs} exceeds the spectral sum {rhs}");
        min_slack = min_slack.min(rhs - lhs);
        let report = correlation_lower_bound_check(&f, &g, &chain, 2).map_err(|e| e.to_string())?;
        ensure!(report.chain_holds(1e-9), "pair {k}: library inequality chain fails: {report:?}");
        ensure!((report.spectral_bound - rhs).abs() <= 1e-9, "pair {k}: library spectral sum {} vs oracle {rhs}", report.spectral_bound);
        ensure!(
            (report.inner - correlation).abs() <= 1e-9,
            "pair {k}: library ⟨f,Tg⟩ = {} vs oracle {correlation}",
            report.inner
        );
    }
    Ok(format!("λ₂ = {lambda2:.12} (oracle {oracle:.12}); 50 pairs, min slack {min_slack:.3e}"))
}

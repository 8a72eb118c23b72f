use std::f64::consts::E;

use apfree::field::Cube;
use apfree::funcspace::{
    restriction_correlation_event, restriction_correlation_event_exact, restriction_second_moment, DenseFunction,
};
use apfree::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::oracle::{digits, inclusion_exclusion_parts, index_of, norm, pow};
use crate::Outcome;

/// `E_{I,y}[Z²]` with `Z` the mean of `f` restricted to `(I, y)`, listing
/// every assignment of "alive" or a fixed letter to each coordinate.
fn exhaustive_second_moment(f: &[Complex64], p: u32, n: usize, keep: f64) -> f64 {
    let radix = p + 1;
    let mut total = 0.0;
    for r in 0..pow(radix, n) {
        let slots = digits(r, radix, n);
        let alive: Vec<usize> = (0..n).filter(|&i| slots[i] == p).collect();
        let prob: f64 = slots.iter().map(|&s| if s == p { keep } else { (1.0 - keep) / f64::from(p) }).product();
        let mut x: Vec<u32> = slots.iter().map(|&s| if s == p { 0 } else { s }).collect();
        let fibre = pow(p, alive.len());
        let mut mean = Complex64::new(0.0, 0.0);
        for j in 0..fibre {
            for (k, &c) in alive.iter().enumerate() {
                x[c] = (j / pow(p, k) % p as usize) as u32;
            }
            mean += f[index_of(&x, p)];
        }
        total += prob * (mean / fibre as f64).norm_sqr();
    }
    total
}

struct Example {
    label: String,
    f: DenseFunction,
}

fn examples(cube: Cube) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut out = vec![Example {
        label: "1[Σx = 0]".into(),
        f: DenseFunction::boolean_from_fn(cube, |x| x.iter().sum::<u32>() % 3 == 0),
    }];
    for k in 0..12 {
        let density = [0.1, 0.3, 0.5][k % 3];
        let bits: Vec<bool> = (0..cube.size()).map(|_| rng.gen_bool(density)).collect();
        out.push(Example { label: format!("random #{k}"), f: DenseFunction::from_bools(cube, &bits).unwrap() });
    }
    out
}

pub fn lemmas() -> Outcome {
    let (p, n) = (3u32, 4usize);
    let cube = Cube::new(p, n).unwrap();
    let mut min_margin = f64::INFINITY;
    let mut worst_identity: f64 = 0.0;
    // keep rate 1/d: the per-level factor (1 − 1/d)^d drops below 1/e
    let mut naive_rate_failures = Vec::new();
    for ex in examples(cube) {
        let fv = ex.f.values();
        let parts = inclusion_exclusion_parts(fv, p, n);
        let weights: Vec<f64> = parts.iter().map(|part| norm(part).powi(2)).collect();
        let alpha = fv.iter().map(|v| v.re).sum::<f64>() / cube.size() as f64;
        for d in 1..=n {
            let xi: f64 = (1..1usize << n).filter(|m| m.count_ones() as usize <= d).map(|m| weights[m]).sum();
            for (keep, checked) in [(1.0 / (2.0 * d as f64), true), (1.0 / d as f64, false)] {
                let moment = exhaustive_second_moment(fv, p, n, keep);
                let library = restriction_second_moment(&ex.f, keep).map_err(|e| e.to_string())?;
                let identity: f64 = (0..1usize << n).map(|m| weights[m] * (1.0 - keep).powi(m.count_ones() as i32)).sum();
                let dev = (moment - library).abs().max((moment - identity).abs());
                ensure!(dev <= 1e-9, "{} d={d} q={keep}: enumeration {moment}, library {library}, level identity {identity}", ex.label);
                worst_identity = worst_identity.max(dev);
                let margin = moment - (alpha * alpha + xi / E);
                if checked {
                    ensure!(margin >= -1e-9, "{} d={d}: E[Z²] = {moment} < α² + ξ/e = {}", ex.label, alpha * alpha + xi / E);
                    min_margin = min_margin.min(margin);
                } else if margin < -1e-9 {
                    naive_rate_failures.push(format!("{} d={d} by {:.3}", ex.label, -margin));
                }
            }
        }
    }

    // event probability on characters of F_3^6
    let (p, n) = (3u32, 6usize);
    let cube = Cube::new(p, n).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let trials = 10_000;
    let mut cases = 0;
    let mut min_event_margin = f64::INFINITY;
    for d in 1..=3usize {
        for s in 1..=d {
            let mut alpha = vec![0u32; n];
            for i in rand::seq::index::sample(&mut rng, n, s) {
                alpha[i] = rng.gen_range(1..p);
            }
            let g = DenseFunction::character(cube, &alpha).unwrap();
            let xi = 1.0;
            let est = restriction_correlation_event(&g, d, xi, trials, 900 + cases).map_err(|e| e.to_string())?;
            ensure!(
                est.probability >= est.bound - 3.0 * est.stderr,
                "χ_{alpha:?} d={d}: probability {} below ξ/(2e) − 3σ = {}",
                est.probability,
                est.bound - 3.0 * est.stderr
            );
            ensure!((est.bound - xi / (2.0 * E)).abs() <= 1e-15, "reported bound {} is not ξ/(2e)", est.bound);
            // the restricted mean has modulus 1 exactly when the support is fixed
            let exact = (1.0 - 1.0 / (2.0 * d as f64)).powi(s as i32);
            let library_exact = restriction_correlation_event_exact(&g, d, xi).map_err(|e| e.to_string())?;
            ensure!((library_exact - exact).abs() <= 1e-12, "χ_{alpha:?} d={d}: exact probability {library_exact}, expected {exact}");
            let sigma = (exact * (1.0 - exact) / f64::from(trials)).sqrt();
            ensure!(
                (est.probability - exact).abs() <= 5.0 * sigma,
                "χ_{alpha:?} d={d}: estimate {} is more than 5σ from {exact}",
                est.probability
            );
            min_event_margin = min_event_margin.min(est.probability - est.bound);
            cases += 1;
        }
    }
    let naive = if naive_rate_failures.is_empty() {
        "none".to_string()
    } else {
        format!("{} (e.g. {})", naive_rate_failures.len(), naive_rate_failures[0])
    };
    Ok(format!(
        "second moment: identity within {worst_identity:.1e}, min E[Z²] − α² − ξ/e = {min_margin:.3e} at keep 1/(2d); \
         shortfalls at keep 1/d: {naive}; event: {cases} characters, min P − ξ/(2e) = {min_event_margin:.3}"
    ))
}

//! Executable property suites behind `apfree verify`.
//!
//! Each property maps one seeded trial to a deviation; it passes when the
//! worst deviation is within its tolerance. Fixed properties ignore the
//! trial count and run once.

use std::f64::consts::TAU;

use apfree::aps::{
    ap_distribution, count_progressions, extremal_search, greedy_free_set, is_restricted_ap_free, pairwise_connected,
    restricted_ap_distribution, triple_correlation_direct, triple_correlation_fourier, Freeness, PointSet, SearchMode,
};
use apfree::chains::{circulant_second_eigenvalue, correlation_lower_bound_check, MarkovChain};
use apfree::embeddings::{count_embeddings_mod, universal_finite_embedding, verify_certificate, z_embedding, ZOutcome};
use apfree::field::{root_index, root_of_unity, Cube, FiniteAbelianGroup, PrimeField};
use apfree::funcspace::{
    efron_stein_part, fourier_transform, level_weight, level_weights_by_fourier, level_weights_by_parts, mask_to_subset, restrict,
    restriction_second_moment, restriction_second_moment_by_levels, sample_random_restriction, DenseFunction, LevelMode,
};
use apfree::increment::{increment_step, lambda_check, pair_correlation_parts, planted_instance, IncrementConfig, StepOutcome};
use apfree::io::{decode_function, encode_function};
use apfree::rng::{stream_id, stream_rng, StreamRng};
use apfree::structure::{product_closure_under_basis_change, restrict_z, BasisChangedView, ProductFunction, SpecialBasis};
use apfree::{Complex64, Result};
use clap::ValueEnum;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Core,
    Funcspace,
    Chains,
    Aps,
    Embeddings,
    Structure,
    Increment,
    All,
}

#[derive(Debug, Serialize)]
pub struct PropertyResult {
    pub id: &'static str,
    pub suite: Suite,
    pub trials: u32,
    pub worst_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub trials: u32,
    pub seed: u64,
    pub fault_injected: bool,
    pub properties: Vec<PropertyResult>,
    pub passed: bool,
}

struct Property {
    id: &'static str,
    suite: Suite,
    tolerance: f64,
    fixed: bool,
    check: fn(&mut StreamRng) -> Result<f64>,
}

const fn prop(id: &'static str, suite: Suite, tolerance: f64, check: fn(&mut StreamRng) -> Result<f64>) -> Property {
    Property { id, suite, tolerance, fixed: false, check }
}

const fn fixed(id: &'static str, suite: Suite, tolerance: f64, check: fn(&mut StreamRng) -> Result<f64>) -> Property {
    Property { id, suite, tolerance, fixed: true, check }
}

const PROPERTIES: &[Property] = &[
    prop("core.index_roundtrip", Suite::Core, 0.0, index_roundtrip),
    prop("core.field_inverse", Suite::Core, 0.0, field_inverse),
    prop("core.roots_of_unity", Suite::Core, 1e-12, roots_of_unity),
    prop("core.stream_reproducible", Suite::Core, 0.0, stream_reproducible),
    prop("core.file_roundtrip", Suite::Core, 0.0, file_roundtrip),
    prop("funcspace.parseval", Suite::Funcspace, 1e-9, parseval),
    prop("funcspace.efron_stein_reconstruction", Suite::Funcspace, 1e-9, efron_stein_reconstruction),
    prop("funcspace.part_orthogonality", Suite::Funcspace, 1e-9, part_orthogonality),
    prop("funcspace.level_weights_agree", Suite::Funcspace, 1e-9, level_weights_agree),
    prop("funcspace.restricted_low_weight_bounded", Suite::Funcspace, 1e-9, restricted_low_weight_bounded),
    prop("funcspace.second_moment_by_levels", Suite::Funcspace, 1e-9, second_moment_by_levels),
    fixed("chains.lambda2_p5", Suite::Chains, 1e-8, lambda2_p5),
    fixed("chains.circulant_oracle", Suite::Chains, 1e-8, circulant_oracle),
    prop("chains.correlation_chain", Suite::Chains, 0.0, correlation_chain),
    prop("chains.constants_fixed", Suite::Chains, 1e-12, constants_fixed),
    prop("aps.free_count_identity", Suite::Aps, 1e-12, free_count_identity),
    prop("aps.count_routes_agree", Suite::Aps, 1e-8, count_routes_agree),
    prop("aps.witness_is_progression", Suite::Aps, 0.0, witness_is_progression),
    fixed("aps.extremal_values", Suite::Aps, 0.0, extremal_values),
    fixed("aps.pairwise_connected", Suite::Aps, 0.0, connectivity),
    fixed("embeddings.ap_none_over_z", Suite::Embeddings, 0.0, ap_none_over_z),
    fixed("embeddings.universal_group_z5", Suite::Embeddings, 0.0, universal_group_z5),
    fixed("embeddings.snf_vs_enumeration", Suite::Embeddings, 0.0, snf_vs_enumeration),
    fixed("embeddings.two_difference_certificate", Suite::Embeddings, 0.0, two_difference_certificate),
    prop("structure.z_restriction_free", Suite::Structure, 0.0, z_restriction_free),
    prop("structure.product_closure", Suite::Structure, 1e-10, product_closure),
    prop("increment.w_two_ways", Suite::Increment, 1e-9, w_two_ways),
    prop("increment.lambda_identity", Suite::Increment, 1e-12, lambda_identity),
    fixed("increment.planted_step", Suite::Increment, 0.0, planted_step),
];

pub fn run_suite(suite: Suite, trials: u32, seed: u64, inject_fault: bool) -> Result<SuiteReport> {
    let mut properties = Vec::new();
    for (k, prop) in PROPERTIES.iter().enumerate() {
        if suite != Suite::All && prop.suite != suite {
            continue;
        }
        let runs = if prop.fixed { 1 } else { trials };
        // a negated zero tolerance still has to reject a zero deviation
        let tolerance = if inject_fault { -prop.tolerance.max(f64::EPSILON) } else { prop.tolerance };
        let mut worst = 0f64;
        let mut error = None;
        for t in 0..runs {
            let mut rng = stream_rng(seed, stream_id(k as u32, t));
            match (prop.check)(&mut rng) {
                Ok(d) => worst = worst.max(if d.is_nan() { f64::INFINITY } else { d }),
                Err(e) => {
                    worst = f64::INFINITY;
                    error = Some(e.to_string());
                    break;
                }
            }
        }
        properties.push(PropertyResult {
            id: prop.id,
            suite: prop.suite,
            trials: runs,
            worst_deviation: worst,
            tolerance,
            passed: worst <= tolerance,
            error,
        });
    }
    let passed = properties.iter().all(|p| p.passed);
    Ok(SuiteReport { suite, trials, seed, fault_injected: inject_fault, properties, passed })
}

fn flag(ok: bool) -> f64 {
    if ok {
        0.0
    } else {
        1.0
    }
}

fn random_cube(rng: &mut StreamRng, choices: &[(u32, usize)]) -> Cube {
    let &(p, max_n) = choices.choose(rng).expect("nonempty choices");
    Cube::new(p, rng.gen_range(1..=max_n)).expect("small cube")
}

fn random_complex(rng: &mut StreamRng, cube: Cube) -> DenseFunction {
    let v = draws(cube, || Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    DenseFunction::from_complex(cube, v).expect("shape matches")
}

/// Takes the draws up front since the constructors want `Fn`.
fn draws<T>(cube: Cube, mut draw: impl FnMut() -> T) -> Vec<T> {
    (0..cube.size()).map(|_| draw()).collect()
}

fn random_boolean(rng: &mut StreamRng, cube: Cube, density: f64) -> DenseFunction {
    DenseFunction::from_bools(cube, &draws(cube, || rng.gen_bool(density))).expect("shape matches")
}

fn random_one_bounded(rng: &mut StreamRng, cube: Cube) -> DenseFunction {
    let v = draws(cube, || Complex64::from_polar(rng.gen::<f64>().sqrt(), TAU * rng.gen::<f64>()));
    DenseFunction::from_complex(cube, v).expect("shape matches")
}

fn random_free(rng: &mut StreamRng, cube: Cube) -> PointSet {
    let mut order: Vec<usize> = (0..cube.size()).collect();
    order.shuffle(rng);
    let keep = rng.gen_range(1..=cube.size());
    greedy_free_set(cube, order.into_iter().take(keep))
}

fn index_roundtrip(rng: &mut StreamRng) -> Result<f64> {
    let cube = random_cube(rng, &[(3, 5), (5, 4), (7, 3)]);
    let i = rng.gen_range(0..cube.size());
    Ok(flag(cube.encode(&cube.decode(i)) == i))
}

fn field_inverse(rng: &mut StreamRng) -> Result<f64> {
    let p = *[3u32, 5, 7, 11, 13, 97].choose(rng).expect("nonempty");
    let f = PrimeField::new(p)?;
    let a = rng.gen_range(1..p);
    Ok(flag(f.mul(a, f.inv(a)) == 1 && f.add(a, f.neg(a)) == 0))
}

fn roots_of_unity(rng: &mut StreamRng) -> Result<f64> {
    let r = rng.gen_range(2..16u64);
    let k = rng.gen_range(0..r);
    let w = root_of_unity(k, r);
    let power = (0..r).fold(Complex64::new(1.0, 0.0), |acc, _| acc * w);
    if root_index(w, r) != Some(k) {
        return Ok(1.0);
    }
    Ok((power - 1.0).norm())
}

fn stream_reproducible(rng: &mut StreamRng) -> Result<f64> {
    let (seed, stream) = (rng.gen::<u64>(), rng.gen::<u64>());
    let a: Vec<u64> = (0..8).map({
        let mut r = stream_rng(seed, stream);
        move |_| r.gen()
    }).collect();
    let b: Vec<u64> = (0..8).map({
        let mut r = stream_rng(seed, stream);
        move |_| r.gen()
    }).collect();
    let c: Vec<u64> = (0..8).map({
        let mut r = stream_rng(seed, stream ^ 1);
        move |_| r.gen()
    }).collect();
    Ok(flag(a == b && a != c))
}

fn file_roundtrip(rng: &mut StreamRng) -> Result<f64> {
    let cube = random_cube(rng, &[(3, 4), (5, 3)]);
    let f = match rng.gen_range(0..3) {
        0 => random_boolean(rng, cube, 0.5),
        1 => DenseFunction::from_real(cube, draws(cube, || rng.gen_range(-2.0..2.0)))?,
        _ => random_complex(rng, cube),
    };
    let bytes = encode_function(&f)?;
    Ok(flag(encode_function(&decode_function(&bytes)?)? == bytes))
}

fn parseval(rng: &mut StreamRng) -> Result<f64> {
    let f = {
        let cube = random_cube(rng, &[(3, 6), (5, 5)]);
        random_complex(rng, cube)
    };
    let coeffs = fourier_transform(&f)?;
    Ok((coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>() - f.norm_sq()).abs())
}

fn efron_stein_reconstruction(rng: &mut StreamRng) -> Result<f64> {
    let f = {
        let cube = random_cube(rng, &[(3, 5), (5, 4)]);
        random_complex(rng, cube)
    };
    let mut sum = vec![Complex64::new(0.0, 0.0); f.cube().size()];
    for mask in 0..1u64 << f.n() {
        let part = efron_stein_part(&f, &mask_to_subset(mask, f.n()))?;
        for (s, v) in sum.iter_mut().zip(part.part.values()) {
            *s += v;
        }
    }
    Ok(sum.iter().zip(f.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max))
}

fn part_orthogonality(rng: &mut StreamRng) -> Result<f64> {
    let f = {
        let cube = random_cube(rng, &[(3, 4), (5, 3)]);
        random_complex(rng, cube)
    };
    let parts = (0..1u64 << f.n())
        .map(|m| efron_stein_part(&f, &mask_to_subset(m, f.n())))
        .collect::<Result<Vec<_>>>()?;
    let mut worst = 0f64;
    for (i, a) in parts.iter().enumerate() {
        for b in &parts[i + 1..] {
            worst = worst.max(a.part.inner(&b.part)?.norm());
        }
    }
    Ok(worst)
}

fn level_weights_agree(rng: &mut StreamRng) -> Result<f64> {
    let f = {
        let cube = random_cube(rng, &[(3, 5), (5, 4)]);
        random_complex(rng, cube)
    };
    let a = level_weights_by_fourier(&f)?;
    let b = level_weights_by_parts(&f)?;
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

fn restricted_low_weight_bounded(rng: &mut StreamRng) -> Result<f64> {
    let f = {
        let cube = random_cube(rng, &[(3, 5), (5, 4)]);
        random_one_bounded(rng, cube)
    };
    let r = sample_random_restriction(f.n(), rng.gen_range(0.1..0.9), f.measure(), rng.gen(), 0)?;
    let g = restrict(&f, &r)?;
    let d = rng.gen_range(0..=g.n());
    Ok((level_weight(&g, d, LevelMode::AtMost)? - 1.0).max(0.0))
}

fn second_moment_by_levels(rng: &mut StreamRng) -> Result<f64> {
    let f = {
        let cube = random_cube(rng, &[(3, 5), (5, 4)]);
        random_complex(rng, cube)
    };
    let q = rng.gen_range(0.05..0.95);
    Ok((restriction_second_moment(&f, q)? - restriction_second_moment_by_levels(&f, q)?).abs())
}

fn lambda2_p5(_: &mut StreamRng) -> Result<f64> {
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    Ok((MarkovChain::ap_difference_chain(5)?.second_eigenvalue() - golden / 3.0).abs())
}

fn circulant_oracle(_: &mut StreamRng) -> Result<f64> {
    let mut worst = 0f64;
    for p in [3, 5, 7, 11, 13] {
        worst = worst.max((MarkovChain::ap_difference_chain(p)?.second_eigenvalue() - circulant_second_eigenvalue(p)).abs());
    }
    Ok(worst)
}

fn correlation_chain(rng: &mut StreamRng) -> Result<f64> {
    let cube = Cube::new(5, rng.gen_range(1..=3))?;
    let (a, b) = (rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9));
    let f = random_boolean(rng, cube, a);
    let g = random_boolean(rng, cube, b);
    let d = rng.gen_range(0..=cube.n);
    let rep = correlation_lower_bound_check(&f, &g, &MarkovChain::ap_difference_chain(5)?, d)?;
    Ok(flag(rep.chain_holds(1e-9)))
}

fn constants_fixed(rng: &mut StreamRng) -> Result<f64> {
    let cube = random_cube(rng, &[(3, 5), (5, 4), (7, 3)]);
    let one = DenseFunction::constant(cube, 1.0);
    let t = MarkovChain::ap_difference_chain(cube.p)?.apply_tensor(&one)?;
    Ok(t.values().iter().map(|v| (v - 1.0).norm()).fold(0.0, f64::max))
}

fn free_count_identity(rng: &mut StreamRng) -> Result<f64> {
    let set = {
        let cube = random_cube(rng, &[(3, 4), (5, 3)]);
        random_free(rng, cube)
    };
    let f = set.to_function();
    let lambda = triple_correlation_direct(&f, &f, &f)?;
    Ok((lambda - set.density() / 3f64.powi(f.n() as i32)).norm())
}

fn count_routes_agree(rng: &mut StreamRng) -> Result<f64> {
    let cube = random_cube(rng, &[(3, 4), (5, 3)]);
    let (f, g, h) = (random_one_bounded(rng, cube), random_one_bounded(rng, cube), random_one_bounded(rng, cube));
    Ok((triple_correlation_direct(&f, &g, &h)? - triple_correlation_fourier(&f, &g, &h)?).norm())
}

fn witness_is_progression(rng: &mut StreamRng) -> Result<f64> {
    let cube = random_cube(rng, &[(3, 3), (5, 2)]);
    let density = rng.gen_range(0.2..0.7);
    let set = PointSet::from_function(&random_boolean(rng, cube, density))?;
    let p = cube.p;
    let progressions = count_progressions(&set) as usize;
    Ok(match is_restricted_ap_free(&set) {
        Freeness::Free => flag(progressions == set.len()),
        Freeness::Witness { x, a } => {
            let step = |k: u32| -> Vec<u32> { x.iter().zip(&a).map(|(&xi, &ai)| (xi + k * ai) % p).collect() };
            let restricted = a.iter().all(|&ai| ai <= 2) && a.iter().any(|&ai| ai != 0);
            flag(restricted && (0..3).all(|k| set.contains(cube.encode(&step(k)))) && progressions > set.len())
        }
    })
}

fn extremal_values(_: &mut StreamRng) -> Result<f64> {
    let mut bad = 0;
    for (p, n, want) in [(3, 1, 2), (3, 2, 4), (5, 1, 2)] {
        let e = extremal_search(p, n, SearchMode::Exhaustive, u64::MAX)?;
        let b = extremal_search(p, n, SearchMode::BranchBound, u64::MAX)?;
        if e.size != want || !e.optimal || b.size != want || !b.optimal {
            bad += 1;
        }
    }
    Ok(f64::from(bad))
}

fn connectivity(_: &mut StreamRng) -> Result<f64> {
    let mut ok = true;
    for p in [5, 7, 11, 13] {
        ok &= pairwise_connected(&restricted_ap_distribution(p)?.support())?.iter().all(|&(_, c)| c);
    }
    Ok(flag(ok))
}

fn ap_none_over_z(_: &mut StreamRng) -> Result<f64> {
    let mut ok = true;
    for p in [5, 7] {
        ok &= z_embedding(&restricted_ap_distribution(p)?.support())?.is_none_nontrivial();
    }
    Ok(flag(ok))
}

fn universal_group_z5(_: &mut StreamRng) -> Result<f64> {
    let s = restricted_ap_distribution(5)?.support();
    let u = universal_finite_embedding(&s)?;
    let check = verify_certificate(&u.combined, &s)?;
    Ok(flag(u.group == FiniteAbelianGroup::cyclic(5)? && check.valid && !check.trivial))
}

fn snf_vs_enumeration(_: &mut StreamRng) -> Result<f64> {
    let mut bad = 0;
    for s in [restricted_ap_distribution(5)?.support(), ap_distribution(5, &[0, 1])?.support()] {
        let u = universal_finite_embedding(&s)?;
        for m in 2..=10 {
            if count_embeddings_mod(&s, m)? != u.predicted_count_mod(m) {
                bad += 1;
            }
        }
    }
    Ok(f64::from(bad))
}

fn two_difference_certificate(_: &mut StreamRng) -> Result<f64> {
    let s = ap_distribution(5, &[0, 1])?.support();
    Ok(match z_embedding(&s)?.outcome {
        ZOutcome::Certificate { certificate } => {
            let c = verify_certificate(&certificate, &s)?;
            flag(c.valid && !c.trivial)
        }
        ZOutcome::NoneNontrivial => 1.0,
    })
}

fn random_basis_and_z(rng: &mut StreamRng, p: u32, n: usize) -> Result<(SpecialBasis, Vec<u32>)> {
    let n_prime = rng.gen_range(1..=n);
    let basis = SpecialBasis::random(p, n, n_prime, rng)?;
    let z = (0..n - n_prime).map(|_| rng.gen_range(0..p)).collect();
    Ok((basis, z))
}

fn z_restriction_free(rng: &mut StreamRng) -> Result<f64> {
    let cube = random_cube(rng, &[(3, 4), (5, 3)]);
    let set = random_free(rng, cube);
    let (basis, z) = random_basis_and_z(rng, cube.p, cube.n)?;
    let g = restrict_z(&BasisChangedView::new(basis, set.to_function())?, &z)?;
    Ok(flag(is_restricted_ap_free(&PointSet::from_function(&g)?).is_free()))
}

fn product_closure(rng: &mut StreamRng) -> Result<f64> {
    let cube = random_cube(rng, &[(3, 4), (5, 4)]);
    let r = *[2u64, 3, 5].choose(rng).expect("nonempty");
    let exps = (0..cube.n).map(|_| (0..cube.p).map(|_| rng.gen_range(0..r as u32)).collect()).collect();
    let scalar = Complex64::from_polar(1.0, TAU * rng.gen::<f64>());
    let pf = ProductFunction::from_exponents(FiniteAbelianGroup::cyclic(r)?, cube.p, scalar, exps)?;
    let (basis, z) = random_basis_and_z(rng, cube.p, cube.n)?;
    let direct = restrict_z(&BasisChangedView::new(basis.clone(), pf.materialize())?, &z)?;
    let closed = product_closure_under_basis_change(&pf, &basis, &z)?.materialize();
    direct.max_distance(&closed)
}

fn w_two_ways(rng: &mut StreamRng) -> Result<f64> {
    let cube = random_cube(rng, &[(3, 5), (5, 4)]);
    let density = rng.gen_range(0.05..0.95);
    let w = pair_correlation_parts(&random_boolean(rng, cube, density))?;
    Ok((w.direct - w.operator).abs())
}

fn lambda_identity(rng: &mut StreamRng) -> Result<f64> {
    let set = {
        let cube = random_cube(rng, &[(3, 4), (5, 3)]);
        random_free(rng, cube)
    };
    let f = set.to_function();
    let check = lambda_check(&f, pair_correlation_parts(&f)?.direct)?;
    Ok((check.lambda - check.identity).abs())
}

/// Stuck is an allowed outcome; advanced steps must be valid and at least
/// one instance must advance.
fn planted_step(_: &mut StreamRng) -> Result<f64> {
    let mut bad = 0;
    let mut advanced = 0;
    for seed in [1u64, 2, 3] {
        let inst = planted_instance(6, seed)?;
        let cfg = IncrementConfig { keep_prob: 0.5, samples: 32, seed, ..IncrementConfig::default() };
        if let StepOutcome::Advanced(rep) = increment_step(&inst.f, &cfg)? {
            advanced += 1;
            let free = is_restricted_ap_free(&PointSet::from_function(&rep.g)?).is_free();
            let replayed = rep.trace.replay(&inst.f)?.values() == rep.g.values();
            if !(free && replayed && rep.gain > 0.0) {
                bad += 1;
            }
        }
    }
    Ok(f64::from(bad) + flag(advanced > 0))
}

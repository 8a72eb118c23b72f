use std::fs;
use std::path::PathBuf;

use apfree::aps::PointSet;
use apfree::field::Cube;
use apfree::funcspace::DenseFunction;
use apfree::increment::{increment_step, planted_instance, IncrementConfig, IncrementTrace, StepKind, StepOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::oracle::{naive_is_free, pruned_is_free};
use crate::Outcome;

pub const CORPUS_DIMS: [usize; 10] = [8, 8, 8, 9, 9, 9, 10, 10, 10, 10];

fn golden_path(k: usize) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("planted_{k}.jsonl"))
}

fn bits(f: &DenseFunction) -> Vec<bool> {
    f.values().iter().map(|v| v.re != 0.0).collect()
}

fn density(b: &[bool]) -> f64 {
    b.iter().filter(|&&x| x).count() as f64 / b.len() as f64
}

/// The pruned oracle must agree with brute force before it is trusted at `5^10`.
fn calibrate_oracle() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let mut free = 0;
    for t in 0..60 {
        let (p, n) = [(3u32, 3usize), (3, 4), (5, 2), (5, 3)][t % 4];
        let size = Cube::new(p, n).unwrap().size();
        let density = [0.05, 0.15, 0.3][t % 3];
        let members: Vec<bool> = (0..size).map(|_| rng.gen_bool(density)).collect();
        let (a, b) = (naive_is_free(&members, p, n), pruned_is_free(&members, p, n));
        ensure!(a == b, "oracles disagree on calibration set {t}: brute force {a}, pruned {b}");
        free += usize::from(a);
    }
    Ok(free)
}

pub fn regression() -> Outcome {
    let calibrated_free = calibrate_oracle()?;
    let bless = std::env::var_os("APFREE_BLESS").is_some();
    let mut summary = Vec::new();
    let mut checked_outputs = 0;
    for (k, &n) in CORPUS_DIMS.iter().enumerate() {
        let instance = planted_instance(n, 100 + k as u64).map_err(|e| e.to_string())?;
        let f = instance.f;
        ensure!(pruned_is_free(&bits(&f), 5, n), "instance {k}: planted set is not free");
        let cfg = IncrementConfig { keep_prob: 0.5, samples: 256, seed: k as u64, ..IncrementConfig::default() };
        let report = match increment_step(&f, &cfg).map_err(|e| e.to_string())? {
            StepOutcome::Advanced(r) => r,
            StepOutcome::Stuck(d) => return Err(format!("instance {k} (n={n}) got stuck: {}", serde_json::to_string(&d).unwrap())),
        };
        let g = &report.g;
        let gain = density(&bits(g)) - density(&bits(&f));
        ensure!(gain >= 0.01, "instance {k}: gain {gain:.4} < 0.01");
        ensure!(g.n() as f64 >= n as f64 / 5.0, "instance {k}: n'' = {} < n/5", g.n());
        ensure!(pruned_is_free(&bits(g), 5, g.n()), "instance {k}: output contains a progression");

        let text = report.trace.to_jsonl();
        let path = golden_path(k);
        if bless {
            fs::create_dir_all(path.parent().unwrap()).map_err(|e| e.to_string())?;
            fs::write(&path, &text).map_err(|e| e.to_string())?;
        }
        let golden = fs::read_to_string(&path).map_err(|e| format!("{}: {e} (bless with APFREE_BLESS=1)", path.display()))?;
        ensure!(text == golden, "instance {k}: trace differs from {}", path.display());

        // every prefix that ends on a complete operation
        let trace = IncrementTrace::from_jsonl(&golden).map_err(|e| e.to_string())?;
        for len in 1..=trace.steps.len() {
            if matches!(trace.steps[len - 1].step, StepKind::BasisChange { .. }) {
                continue;
            }
            let prefix = IncrementTrace { steps: trace.steps[..len].to_vec() };
            let out = prefix.replay(&f).map_err(|e| format!("instance {k}, prefix {len}: {e}"))?;
            ensure!(pruned_is_free(&bits(&out), 5, out.n()), "instance {k}: output after step {len} contains a progression");
            checked_outputs += 1;
            if len == trace.steps.len() {
                ensure!(out == *g, "instance {k}: replaying the golden trace does not reproduce g");
            }
        }
        let members = PointSet::from_function(g).map_err(|e| e.to_string())?;
        summary.push(format!("n={n}→{} +{gain:.3} ({:?}, |g|={})", g.n(), report.branch, members.len()));
    }
    Ok(format!(
        "{}{}; {checked_outputs} intermediate outputs free; pruned oracle calibrated on 60 sets ({calibrated_free} free)",
        if bless { "blessed; " } else { "" },
        summary.join(", ")
    ))
}

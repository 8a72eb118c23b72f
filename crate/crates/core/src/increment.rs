//! The density increment step for restricted 3-AP free sets and its
//! iteration driver.
//!
//! A step takes a free boolean `f` and produces a free `g` on fewer
//! coordinates through a recorded sequence of restrictions and special
//! basis changes. The branches mirror the two ways a free set can fail to
//! look random: low `W = E[f(x+a) f(x+2a)]`, which forces low-level Fourier
//! weight, or a large `Λ(f − α, f, f)`, which forces correlation with a
//! product function that the block construction then cancels.

use std::f64::consts::E;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aps::{count_progressions, greedy_free_set, is_restricted_ap_free, triple_correlation_direct, Freeness, PointSet, AP_DIFFERENCES};
use crate::chains::MarkovChain;
use crate::error::{Error, Result};
use crate::field::Cube;
use crate::funcspace::{
    centered_low_weight, restrict, restriction_bump_search, sample_random_restriction, BumpSearch, BumpSearchOptions, DenseFunction,
    Restriction,
};
use crate::rng::{derive_seed, stream_id, stream_rng};
use crate::structure::{
    apply_transforms, best_character_correlation, restrict_z, robustify_correlation, transform_product, BasisChangedView,
    ProductFunction, RobustifyOutcome, RobustifyParams, SpecialBasis, Transform,
};

/// Engine thresholds. Every field must be present in JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncrementConfig {
    /// Degree cap `d` for the low-weight branch.
    pub degree: usize,
    /// Correlation floor `ε` for `|⟨f − α, P⟩|`.
    pub epsilon: f64,
    /// Floor `ε'` after a random restriction.
    pub epsilon_prime: f64,
    /// Density slack `η` allowed by a random restriction.
    pub eta: f64,
    /// Bump target `β`.
    pub beta: f64,
    pub delta: f64,
    /// Robustify iteration cap `N`.
    pub iterations: usize,
    pub samples: u32,
    /// Block size `r = |H|`; equals `p` for `H = Z_p`.
    pub block_size: u32,
    /// Keep probability for random restrictions.
    pub keep_prob: f64,
    /// Fraction of blocks with vanishing shifts that makes `z` good.
    pub good_block_fraction: f64,
    /// A step may keep as few as `⌈(1 − loss)·n⌉` coordinates.
    pub max_dimension_loss: f64,
    pub seed: u64,
    #[serde(default = "default_differences")]
    pub differences: Vec<u32>,
}

fn default_differences() -> Vec<u32> {
    AP_DIFFERENCES.to_vec()
}

impl Default for IncrementConfig {
    fn default() -> Self {
        Self {
            degree: 8,
            epsilon: 0.05,
            epsilon_prime: 0.02,
            eta: 0.01,
            beta: 0.01,
            delta: 0.1,
            iterations: 8,
            samples: 64,
            block_size: 5,
            keep_prob: 1.0 / 16.0,
            good_block_fraction: 0.5,
            max_dimension_loss: 0.8,
            seed: 0,
            differences: default_differences(),
        }
    }
}

impl IncrementConfig {
    pub fn validate(&self, p: u32) -> Result<()> {
        if self.differences != AP_DIFFERENCES {
            return Err(Error::InvalidParameter(format!(
                "the increment engine only supports differences {{0,1,2}}, got {:?}: with {{0,1}} the progression \
                 distribution embeds into Z and the cancellation argument fails",
                self.differences
            )));
        }
        let open = [
            ("epsilon", self.epsilon),
            ("epsilon_prime", self.epsilon_prime),
            ("eta", self.eta),
            ("beta", self.beta),
            ("delta", self.delta),
            ("keep_prob", self.keep_prob),
            ("max_dimension_loss", self.max_dimension_loss),
        ];
        for (name, v) in open {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidParameter(format!("{name} = {v} not in (0,1)")));
            }
        }
        if !(self.good_block_fraction > 0.0 && self.good_block_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!("good_block_fraction = {} not in (0,1]", self.good_block_fraction)));
        }
        if self.degree == 0 || self.iterations == 0 || self.samples == 0 {
            return Err(Error::InvalidParameter("degree, iterations and samples must be positive".into()));
        }
        if self.block_size != p {
            return Err(Error::InvalidParameter(format!("block_size {} must equal |Z_p| = {p}", self.block_size)));
        }
        Ok(())
    }

    pub fn dimension_floor(&self, n: usize) -> usize {
        (((1.0 - self.max_dimension_loss) * n as f64).ceil() as usize).max(1)
    }

    fn robustify_params(&self, epsilon: f64) -> RobustifyParams {
        RobustifyParams {
            epsilon,
            delta: self.delta,
            beta: self.beta,
            max_iters: self.iterations,
            basis_samples: self.samples,
            seed: derive_seed(self.seed, 0x0B57),
            ..RobustifyParams::default()
        }
    }
}

/// The existence argument's constants next to the values actually used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaperConstants {
    pub formulas: Vec<String>,
    pub epsilon_prime_formula_value: f64,
}

impl PaperConstants {
    pub fn new(cfg: &IncrementConfig) -> Self {
        Self {
            formulas: vec![
                "η = min(β₀²/1000, δ¹⁰⁰/100)".into(),
                "ε' = δ/√(2e)".into(),
                "γ = (p^{-100r} r^{-10p})^{4/(δε)}".into(),
                "β₀ = (εδ/8)^{10N}".into(),
                "α' = γ".into(),
            ],
            epsilon_prime_formula_value: cfg.delta / (2.0 * E).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepKind {
    RandomRestriction { restriction: Restriction },
    BasisChange { basis: SpecialBasis },
    ZRestriction { z: Vec<u32> },
    /// Coordinates left out of every block; they are fixed through `z`.
    CoordinateDrop { coordinates: Vec<usize> },
}

impl StepKind {
    fn transform(&self) -> Option<Transform> {
        match self {
            StepKind::RandomRestriction { restriction } => Some(Transform::Restrict { restriction: restriction.clone() }),
            StepKind::BasisChange { basis } => Some(Transform::BasisChange { basis: basis.clone() }),
            StepKind::ZRestriction { z } => Some(Transform::ZRestriction { z: z.clone() }),
            StepKind::CoordinateDrop { .. } => None,
        }
    }

    fn from_transform(t: &Transform) -> Self {
        match t {
            Transform::Restrict { restriction } => StepKind::RandomRestriction { restriction: restriction.clone() },
            Transform::BasisChange { basis } => StepKind::BasisChange { basis: basis.clone() },
            Transform::ZRestriction { z } => StepKind::ZRestriction { z: z.clone() },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    LowWeight,
    RestrictionSample,
    RobustifyBump,
    Pigeonhole,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub n: usize,
    pub density: f64,
    /// `|⟨f − α, P⟩|` for the tracked product, when there is one.
    pub correlation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub branch: Branch,
    pub step: StepKind,
    pub before: Snapshot,
    pub after: Snapshot,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IncrementTrace {
    pub steps: Vec<TraceStep>,
}

impl IncrementTrace {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("trace steps serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let steps = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("trace line {}: {e}", i + 1))))
            .collect::<Result<_>>()?;
        Ok(Self { steps })
    }

    /// Applies the recorded steps to `f`, checking every snapshot.
    pub fn replay(&self, f: &DenseFunction) -> Result<DenseFunction> {
        let mut cur = f.clone();
        let mut pending: Option<SpecialBasis> = None;
        for (i, s) in self.steps.iter().enumerate() {
            if snapshot_shape(&cur) != (s.before.n, s.before.density) {
                return Err(Error::Consistency(format!("trace step {}: input does not match the recorded snapshot", i + 1)));
            }
            cur = match (&s.step, pending.take()) {
                (StepKind::ZRestriction { z }, Some(basis)) => restrict_z(&BasisChangedView::new(basis, cur)?, z)?,
                (StepKind::BasisChange { basis }, None) if next_is_z(&self.steps, i) => {
                    pending = Some(basis.clone());
                    cur
                }
                (step, None) => match step.transform() {
                    Some(t) => apply_transforms(&cur, &[t])?,
                    None => cur,
                },
                (_, Some(_)) => return Err(Error::Consistency("basis change not followed by its z-restriction".into())),
            };
            let shape = if pending.is_some() { (s.after.n, s.before.density) } else { snapshot_shape(&cur) };
            if shape != (s.after.n, s.after.density) {
                return Err(Error::Consistency(format!(
                    "trace step {}: replay gives n = {}, density = {} but the trace records n = {}, density = {}",
                    i + 1,
                    shape.0,
                    shape.1,
                    s.after.n,
                    s.after.density
                )));
            }
        }
        Ok(cur)
    }
}

fn next_is_z(steps: &[TraceStep], i: usize) -> bool {
    matches!(steps.get(i + 1).map(|s| &s.step), Some(StepKind::ZRestriction { .. }))
}

fn snapshot_shape(f: &DenseFunction) -> (usize, f64) {
    (f.n(), density(f))
}

fn density(f: &DenseFunction) -> f64 {
    f.support_size() as f64 / f.cube().size() as f64
}

/// Builds trace steps while applying them, carrying an optional product.
struct TraceBuilder {
    alpha: f64,
    current: DenseFunction,
    product: Option<ProductFunction>,
    pending: Option<SpecialBasis>,
    steps: Vec<TraceStep>,
}

impl TraceBuilder {
    fn new(f: &DenseFunction, product: Option<ProductFunction>) -> Self {
        Self { alpha: density(f), current: f.clone(), product, pending: None, steps: Vec::new() }
    }

    fn correlation(&self) -> Result<Option<f64>> {
        match &self.product {
            Some(pf) if self.pending.is_none() => Ok(Some(pf.correlation(&self.current.minus_constant(self.alpha.into()))?.norm())),
            _ => Ok(None),
        }
    }

    fn snapshot(&self) -> Result<Snapshot> {
        Ok(Snapshot { n: self.current.n(), density: density(&self.current), correlation: self.correlation()? })
    }

    fn push(&mut self, branch: Branch, step: StepKind) -> Result<()> {
        let before = self.snapshot()?;
        let mut after_n = None;
        match (&step, self.pending.take()) {
            (StepKind::BasisChange { basis }, None) => {
                after_n = Some(self.current.n());
                self.pending = Some(basis.clone());
            }
            (StepKind::ZRestriction { z }, Some(basis)) => {
                let view = BasisChangedView::new(basis.clone(), self.current.clone())?;
                self.current = restrict_z(&view, z)?;
                let ops = [Transform::BasisChange { basis }, Transform::ZRestriction { z: z.clone() }];
                self.product = self.product.take().map(|pf| transform_product(&pf, &ops)).transpose()?;
            }
            (StepKind::CoordinateDrop { .. }, pending) => self.pending = pending,
            (other, None) => {
                let t = other.transform().expect("restriction steps carry a transform");
                self.current = apply_transforms(&self.current, std::slice::from_ref(&t))?;
                self.product = self.product.take().map(|pf| transform_product(&pf, &[t])).transpose()?;
            }
            (_, Some(_)) => return Err(Error::Consistency("basis change not followed by its z-restriction".into())),
        }
        let mut after = self.snapshot()?;
        if let Some(n) = after_n {
            after.n = n;
        }
        self.steps.push(TraceStep { branch, step, before, after });
        Ok(())
    }
}

/// `W = E_{x,a}[f(x+a) f(x+2a)]` computed two ways.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelation {
    /// Box sums over `y + {0,1,2}` along each coordinate.
    pub direct: f64,
    /// `⟨f, T^{⊗n} f⟩` for the progression-difference chain.
    pub operator: f64,
}

pub const W_AGREEMENT_TOL: f64 = 1e-9;

pub fn pair_correlation_parts(f: &DenseFunction) -> Result<PairCorrelation> {
    if !f.is_boolean() {
        return Err(Error::Precondition("W is defined for boolean functions".into()));
    }
    let cube = f.cube();
    let p = cube.p as usize;
    // substituting y = x + a gives E_{y,a}[f(y) f(y+a)]
    let mut avg: Vec<f64> = f.values().iter().map(|v| v.re).collect();
    for i in 0..cube.n {
        let stride = cube.stride(i);
        let block = stride * p;
        let mut next = vec![0.0; avg.len()];
        for base in (0..avg.len()).step_by(block) {
            for off in 0..stride {
                for s in 0..p {
                    let at = |t: usize| avg[base + off + ((s + t) % p) * stride];
                    next[base + off + s * stride] = (at(0) + at(1) + at(2)) / 3.0;
                }
            }
        }
        avg = next;
    }
    let size = cube.size() as f64;
    let direct = f.values().iter().zip(&avg).map(|(v, a)| v.re * a).sum::<f64>() / size;
    let chain = MarkovChain::ap_difference_chain(cube.p)?;
    let operator = f.inner(&chain.apply_tensor(f)?)?.re;
    Ok(PairCorrelation { direct, operator })
}

pub fn pair_correlation_w(f: &DenseFunction) -> Result<f64> {
    let w = pair_correlation_parts(f)?;
    if (w.direct - w.operator).abs() > W_AGREEMENT_TOL {
        return Err(Error::Consistency(format!("W computed as {} and {}", w.direct, w.operator)));
    }
    Ok(w.direct)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LowWeightOutcome {
    /// `W ≤ α²/100` and the bump search ran.
    Bump { w: f64, low_weight: f64, alpha4: f64, search: BumpSearch },
    /// `W ≤ α²/100` but `W_{≤d}[f − α]` vanished, so there is nothing to search.
    NoWeight { w: f64 },
    Pass { w: f64, threshold: f64 },
}

pub fn low_weight_branch(f: &DenseFunction, cfg: &IncrementConfig) -> Result<LowWeightOutcome> {
    let alpha = checked_alpha(f)?;
    let w = pair_correlation_w(f)?;
    let threshold = alpha * alpha / 100.0;
    if w > threshold {
        return Ok(LowWeightOutcome::Pass { w, threshold });
    }
    let d = cfg.degree.min(f.n());
    let low_weight = centered_low_weight(f, d)?;
    if low_weight <= 0.0 {
        return Ok(LowWeightOutcome::NoWeight { w });
    }
    let opts = BumpSearchOptions { seed: derive_seed(cfg.seed, 0x10E), samples: cfg.samples, ..BumpSearchOptions::default() };
    let search = restriction_bump_search(f, d, low_weight, &opts)?;
    Ok(LowWeightOutcome::Bump { w, low_weight, alpha4: alpha.powi(4), search })
}

fn checked_alpha(f: &DenseFunction) -> Result<f64> {
    if f.support_size() == 0 {
        return Err(Error::Precondition("the engine needs a nonempty set".into()));
    }
    let alpha = density(f);
    if alpha >= 1.0 {
        return Err(Error::Precondition("the engine needs a set that is not the whole cube".into()));
    }
    Ok(alpha)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundStatus {
    Holds,
    BelowSizeFloor,
}

/// `|Λ(f − α, f, f)|` against the identity `|3^{-n}α − αW|` and the bound
/// `α³/200`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaCheck {
    pub lambda: f64,
    pub identity: f64,
    pub bound: f64,
    pub status: BoundStatus,
}

pub const LAMBDA_IDENTITY_TOL: f64 = 1e-12;
const DIRECT_LAMBDA_LIMIT: f64 = 2e7;

pub fn lambda_check(f: &DenseFunction, w: f64) -> Result<LambdaCheck> {
    let alpha = density(f);
    let cube = f.cube();
    let three_n = 3f64.powi(cube.n as i32);
    let lambda = if cube.size() as f64 * three_n <= DIRECT_LAMBDA_LIMIT {
        triple_correlation_direct(&f.minus_constant(alpha.into()), f, f)?.norm()
    } else {
        let set = PointSet::from_function(f)?;
        let full = count_progressions(&set) as f64 / (cube.size() as f64 * three_n);
        (full - alpha * w).abs()
    };
    let identity = (alpha / three_n - alpha * w).abs();
    if (lambda - identity).abs() > LAMBDA_IDENTITY_TOL {
        return Err(Error::Consistency(format!("Λ(f − α, f, f) = {lambda} but the identity gives {identity}")));
    }
    let bound = alpha.powi(3) / 200.0;
    let status = if 1.0 / three_n <= alpha * alpha / 200.0 && alpha <= 0.5 { BoundStatus::Holds } else { BoundStatus::BelowSizeFloor };
    if status == BoundStatus::Holds && w >= alpha * alpha / 100.0 && lambda + LAMBDA_IDENTITY_TOL < bound {
        return Err(Error::Consistency(format!("|Λ(f − α, f, f)| = {lambda} below α³/200 = {bound}")));
    }
    Ok(LambdaCheck { lambda, identity, bound, status })
}

/// A restriction sampled on the way, kept as a possible output.
#[derive(Clone, Debug)]
pub struct SampledRestriction {
    pub restriction: Restriction,
    pub function: DenseFunction,
}

#[derive(Clone, Debug)]
pub struct CorrelationBranch {
    pub lambda: LambdaCheck,
    pub frequency: Vec<u32>,
    pub initial_correlation: f64,
    /// Restriction, restricted function and product once the correlation
    /// floor is met; `None` means the branch failed.
    pub found: Option<(Option<Restriction>, DenseFunction, ProductFunction, f64)>,
    pub attempts: u32,
    pub samples: Vec<SampledRestriction>,
}

const STREAM_RESTRICTION: u32 = 0x031;

/// Finds a character correlating with `f − α`, restricting at random when
/// the correlation is below `ε`.
pub fn correlation_branch(f: &DenseFunction, cfg: &IncrementConfig, w: f64) -> Result<CorrelationBranch> {
    let alpha = checked_alpha(f)?;
    let lambda = lambda_check(f, w)?;
    let centered = f.minus_constant(alpha.into());
    let (frequency, initial_correlation) = best_character_correlation(&centered)?;
    let chi = ProductFunction::character(f.p(), &frequency)?;
    let mut out = CorrelationBranch { lambda, frequency, initial_correlation, found: None, attempts: 0, samples: Vec::new() };
    if initial_correlation >= cfg.epsilon {
        out.found = Some((None, f.clone(), chi, initial_correlation));
        return Ok(out);
    }
    let seed = derive_seed(cfg.seed, 0x31);
    for k in 0..cfg.samples {
        out.attempts += 1;
        let r = sample_random_restriction(f.n(), cfg.keep_prob, f.measure(), seed, stream_id(STREAM_RESTRICTION, k))?;
        if r.alive_count() == 0 {
            continue;
        }
        let fr = restrict(f, &r)?;
        let pr = chi.restrict(&r)?;
        let c = pr.correlation(&fr.minus_constant(alpha.into()))?.norm();
        let ok = c >= cfg.epsilon_prime && density(&fr) >= alpha - cfg.eta;
        out.samples.push(SampledRestriction { restriction: r.clone(), function: fr.clone() });
        if ok {
            out.found = Some((Some(r), fr, pr, c));
            break;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct PigeonholeResult {
    pub g: DenseFunction,
    pub steps: Vec<StepKind>,
    pub blocks: usize,
    pub good_blocks: usize,
    pub z_draws: u64,
    pub fallback: bool,
    pub constant: Complex64,
}

const STREAM_PIGEON: u32 = 0x919E;
pub const CONSTANCY_TOL: f64 = 1e-9;

/// Cancels `P` on blocks of `r` coordinates sharing one factor table.
pub fn pigeonhole_block_step(f: &DenseFunction, pf: &ProductFunction, cfg: &IncrementConfig) -> Result<PigeonholeResult> {
    if !f.is_boolean() {
        return Err(Error::Precondition("pigeonhole step needs a boolean function".into()));
    }
    let (p, n) = (f.p(), f.n());
    if pf.p() != p || pf.n() != n {
        return Err(Error::ShapeMismatch("product and function differ in shape".into()));
    }
    let r = pf.order() as usize;
    if r != cfg.block_size as usize {
        return Err(Error::InvalidParameter(format!("product over a group of order {r}, block size {}", cfg.block_size)));
    }
    let norm = pf.normalized();
    let mut classes: Vec<(Vec<u32>, Vec<usize>)> = Vec::new();
    for (i, table) in norm.exponents().iter().enumerate() {
        match classes.iter_mut().find(|(t, _)| t == table) {
            Some((_, members)) => members.push(i),
            None => classes.push((table.clone(), vec![i])),
        }
    }
    let (_, class) = classes
        .iter()
        .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.1[0].cmp(&a.1[0])))
        .expect("n ≥ 1");
    if class.len() < r {
        return Err(Error::Precondition(format!("largest class has {} coordinates, fewer than r = {r}", class.len())));
    }
    let keep = class.len() - class.len() % r;
    let dropped = class[keep..].to_vec();
    let blocks: Vec<Vec<usize>> = class[..keep].chunks(r).map(<[usize]>::to_vec).collect();
    let basis = SpecialBasis::with_standard_completion(p, n, blocks.clone())?;
    let need = ((cfg.good_block_fraction * blocks.len() as f64).ceil() as usize).max(1);
    let good_of = |z: &[u32]| -> Result<Vec<bool>> {
        let h = basis.shifts(z)?;
        Ok(blocks.iter().map(|b| b.iter().all(|&i| h[i] == 0)).collect())
    };
    let zlen = n - blocks.len();
    let budget = (p as u64).pow(r as u32) * 16;
    let mut rng = stream_rng(derive_seed(cfg.seed, 0x919E), stream_id(STREAM_PIGEON, 0));
    let mut chosen = None;
    let mut draws = 0;
    while draws < budget {
        draws += 1;
        let z: Vec<u32> = (0..zlen).map(|_| rng.gen_range(0..p)).collect();
        let good = good_of(&z)?;
        if good.iter().filter(|&&g| g).count() >= need {
            chosen = Some((z, good));
            break;
        }
    }
    let fallback = chosen.is_none();
    let (z, good) = match chosen {
        Some(c) => c,
        None => {
            let z = vec![0; zlen];
            let good = good_of(&z)?;
            (z, good)
        }
    };
    if good.iter().filter(|&&g| g).count() < need {
        return Err(Error::Precondition("no good z within the sample budget".into()));
    }
    let view = BasisChangedView::new(basis.clone(), f.clone())?;
    let fz = restrict_z(&view, &z)?;
    let pz = crate::structure::product_closure_under_basis_change(pf, &basis, &z)?;
    let bad: Vec<usize> = (0..blocks.len()).filter(|&j| !good[j]).collect();
    let mut best: Option<(Restriction, DenseFunction)> = None;
    let tries = if bad.is_empty() { 1 } else { cfg.samples };
    for _ in 0..tries {
        let slots = (0..blocks.len()).map(|j| if good[j] { None } else { Some(rng.gen_range(0..p)) }).collect();
        let res = Restriction::new(slots);
        let g = restrict(&fz, &res)?;
        if best.as_ref().is_none_or(|(_, b)| density(&g) > density(b)) {
            best = Some((res, g));
        }
    }
    let (res, g) = best.expect("at least one z' draw");
    let q = pz.restrict(&res)?.materialize();
    let constant = q.value(0);
    if q.values().iter().any(|v| (v - constant).norm() > CONSTANCY_TOL) {
        return Err(Error::Consistency("product is not constant after the block restriction".into()));
    }
    let mut steps = Vec::new();
    if !dropped.is_empty() {
        steps.push(StepKind::CoordinateDrop { coordinates: dropped });
    }
    steps.push(StepKind::BasisChange { basis });
    steps.push(StepKind::ZRestriction { z });
    steps.push(StepKind::RandomRestriction { restriction: res });
    Ok(PigeonholeResult { good_blocks: g.n(), g, steps, blocks: blocks.len(), z_draws: draws, fallback, constant })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub branch: Branch,
    pub n: usize,
    pub density: f64,
    pub gain: f64,
    pub eligible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n: usize,
    pub alpha: f64,
    pub w: f64,
    pub low_weight_threshold: f64,
    pub low_weight: Option<LowWeightOutcome>,
    pub lambda: Option<LambdaCheck>,
    pub frequency: Option<Vec<u32>>,
    pub initial_correlation: Option<f64>,
    pub restriction_attempts: u32,
    pub correlation_found: bool,
    pub robustify: Option<String>,
    pub max_collapse_frequency: Option<f64>,
    pub pigeonhole: Option<String>,
    pub dimension_floor: usize,
    pub candidates: Vec<CandidateSummary>,
    pub constants: PaperConstants,
}

#[derive(Clone, Debug)]
pub struct StepReport {
    pub g: DenseFunction,
    pub branch: Branch,
    pub gain: f64,
    pub trace: IncrementTrace,
    pub diagnostics: Diagnostics,
}

#[derive(Clone, Debug)]
pub enum StepOutcome {
    Advanced(Box<StepReport>),
    Stuck(Box<Diagnostics>),
}

struct Candidate {
    branch: Branch,
    steps: Vec<StepKind>,
    product: Option<ProductFunction>,
    g: DenseFunction,
}

fn require_free(f: &DenseFunction) -> Result<()> {
    match is_restricted_ap_free(&PointSet::from_function(f)?) {
        Freeness::Free => Ok(()),
        Freeness::Witness { x, a } => Err(Error::NotFree { x, a }),
    }
}

/// One density increment step.
pub fn increment_step(f: &DenseFunction, cfg: &IncrementConfig) -> Result<StepOutcome> {
    if !f.is_boolean() || !f.measure().is_uniform() {
        return Err(Error::Precondition("the engine needs a boolean function under the uniform measure".into()));
    }
    cfg.validate(f.p())?;
    let alpha = checked_alpha(f)?;
    require_free(f)?;
    let n = f.n();
    let floor = cfg.dimension_floor(n);
    let w = pair_correlation_w(f)?;
    let mut diag = Diagnostics {
        n,
        alpha,
        w,
        low_weight_threshold: alpha * alpha / 100.0,
        low_weight: None,
        lambda: None,
        frequency: None,
        initial_correlation: None,
        restriction_attempts: 0,
        correlation_found: false,
        robustify: None,
        max_collapse_frequency: None,
        pigeonhole: None,
        dimension_floor: floor,
        candidates: Vec::new(),
        constants: PaperConstants::new(cfg),
    };
    let mut candidates: Vec<Candidate> = Vec::new();

    let low = low_weight_branch(f, cfg)?;
    if let LowWeightOutcome::Bump { search, .. } = &low {
        if let Some(r) = &search.restriction {
            candidates.push(Candidate {
                branch: Branch::LowWeight,
                steps: vec![StepKind::RandomRestriction { restriction: r.clone() }],
                product: None,
                g: restrict(f, r)?,
            });
        }
    }
    let passed = matches!(low, LowWeightOutcome::Pass { .. });
    diag.low_weight = Some(low);

    if passed {
        let cb = correlation_branch(f, cfg, w)?;
        diag.lambda = Some(cb.lambda.clone());
        diag.frequency = Some(cb.frequency.clone());
        diag.initial_correlation = Some(cb.initial_correlation);
        diag.restriction_attempts = cb.attempts;
        diag.correlation_found = cb.found.is_some();
        let chi = ProductFunction::character(f.p(), &cb.frequency)?;
        for s in &cb.samples {
            candidates.push(Candidate {
                branch: Branch::RestrictionSample,
                steps: vec![StepKind::RandomRestriction { restriction: s.restriction.clone() }],
                product: Some(chi.clone()),
                g: s.function.clone(),
            });
        }
        if let Some((res, fp, pp, corr)) = cb.found {
            let prefix: Vec<StepKind> = res.into_iter().map(|r| StepKind::RandomRestriction { restriction: r }).collect();
            let eps = if prefix.is_empty() { cfg.epsilon } else { cfg.epsilon_prime };
            let report = robustify_correlation(&fp.minus_constant(alpha.into()), &pp, &cfg.robustify_params(eps.min(corr)))?;
            diag.robustify = Some(report.outcome_name().into());
            diag.max_collapse_frequency = Some(report.max_collapse_frequency);
            match report.outcome {
                RobustifyOutcome::DensityBump { transforms, .. } => {
                    let mut steps = prefix.clone();
                    steps.extend(transforms.iter().map(StepKind::from_transform));
                    candidates.push(Candidate {
                        branch: Branch::RobustifyBump,
                        steps,
                        product: Some(chi.clone()),
                        g: apply_transforms(&fp, &transforms)?,
                    });
                }
                RobustifyOutcome::RobustPair { transforms, product, .. } => {
                    let fr = apply_transforms(&fp, &transforms)?;
                    match pigeonhole_block_step(&fr, &product, cfg) {
                        Ok(ph) => {
                            diag.pigeonhole = Some(format!(
                                "{} of {} blocks good after {} z draws{}",
                                ph.good_blocks,
                                ph.blocks,
                                ph.z_draws,
                                if ph.fallback { ", z = 0 fallback" } else { "" }
                            ));
                            let mut steps = prefix.clone();
                            steps.extend(transforms.iter().map(StepKind::from_transform));
                            steps.extend(ph.steps);
                            candidates.push(Candidate { branch: Branch::Pigeonhole, steps, product: Some(chi.clone()), g: ph.g });
                        }
                        Err(e) => diag.pigeonhole = Some(format!("failed: {e}")),
                    }
                }
                RobustifyOutcome::Exhausted => {}
            }
        }
    }

    let mut best: Option<usize> = None;
    for (k, c) in candidates.iter().enumerate() {
        let gain = density(&c.g) - alpha;
        let eligible = c.g.n() >= floor && gain > 0.0;
        diag.candidates.push(CandidateSummary { branch: c.branch, n: c.g.n(), density: density(&c.g), gain, eligible });
        if eligible && best.is_none_or(|b| gain > density(&candidates[b].g) - alpha) {
            best = Some(k);
        }
    }
    let Some(k) = best else {
        return Ok(StepOutcome::Stuck(Box::new(diag)));
    };
    let chosen = candidates.swap_remove(k);
    let mut tb = TraceBuilder::new(f, chosen.product);
    for s in chosen.steps {
        tb.push(chosen.branch, s)?;
    }
    if tb.current.values() != chosen.g.values() {
        return Err(Error::Consistency("trace does not reproduce the selected output".into()));
    }
    require_free(&tb.current).map_err(|e| Error::Consistency(format!("increment output is not free: {e}")))?;
    let trace = IncrementTrace { steps: tb.steps };
    if trace.replay(f)?.values() != chosen.g.values() {
        return Err(Error::Consistency("trace replay differs from the output".into()));
    }
    Ok(StepOutcome::Advanced(Box::new(StepReport {
        gain: density(&chosen.g) - alpha,
        g: chosen.g,
        branch: chosen.branch,
        trace,
        diagnostics: diag,
    })))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Termination {
    DensityThreshold,
    Stuck,
    DimensionFloor,
    MaxIterations,
}

/// The union bound at density `≥ 0.99`: at most 3% of the `(x, a)` pairs
/// miss the set in some position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndgameCheck {
    pub n: usize,
    pub density: f64,
    pub lambda: f64,
    pub union_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub branch: Branch,
    pub n_before: usize,
    pub n_after: usize,
    pub density_before: f64,
    pub density_after: f64,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub g: DenseFunction,
    pub trace: IncrementTrace,
    pub iterations: Vec<IterationSummary>,
    pub termination: Termination,
    pub stuck: Option<Box<Diagnostics>>,
    pub endgame: Option<EndgameCheck>,
}

pub const ENDGAME_DENSITY: f64 = 0.99;
pub const ENDGAME_LAMBDA: f64 = 0.97;
const ENDGAME_MIN_N: usize = 10;

/// Iterates [`increment_step`] until the density reaches 0.99, the engine is
/// stuck, the dimension bottoms out or `max_iters` steps were taken.
pub fn increment_run(f: &DenseFunction, cfg: &IncrementConfig, max_iters: usize) -> Result<RunReport> {
    let mut cur = f.clone();
    let mut trace = IncrementTrace::default();
    let mut iterations = Vec::new();
    let mut step_cfg = cfg.clone();
    for it in 0..max_iters {
        let alpha = density(&cur);
        if alpha >= ENDGAME_DENSITY {
            let endgame = endgame_check(&cur)?;
            return Ok(RunReport { g: cur, trace, iterations, termination: Termination::DensityThreshold, stuck: None, endgame });
        }
        if cur.n() < 2 {
            return Ok(RunReport { g: cur, trace, iterations, termination: Termination::DimensionFloor, stuck: None, endgame: None });
        }
        step_cfg.seed = derive_seed(cfg.seed, it as u64);
        match increment_step(&cur, &step_cfg)? {
            StepOutcome::Advanced(rep) => {
                let after = density(&rep.g);
                if after <= alpha {
                    return Err(Error::Consistency("accepted step did not increase the density".into()));
                }
                iterations.push(IterationSummary {
                    iteration: it,
                    branch: rep.branch,
                    n_before: cur.n(),
                    n_after: rep.g.n(),
                    density_before: alpha,
                    density_after: after,
                });
                trace.steps.extend(rep.trace.steps);
                cur = rep.g;
            }
            StepOutcome::Stuck(d) => {
                return Ok(RunReport { g: cur, trace, iterations, termination: Termination::Stuck, stuck: Some(d), endgame: None });
            }
        }
    }
    let termination = if density(&cur) >= ENDGAME_DENSITY { Termination::DensityThreshold } else { Termination::MaxIterations };
    let endgame = if termination == Termination::DensityThreshold { endgame_check(&cur)? } else { None };
    Ok(RunReport { g: cur, trace, iterations, termination, stuck: None, endgame })
}

fn endgame_check(f: &DenseFunction) -> Result<Option<EndgameCheck>> {
    if f.n() < ENDGAME_MIN_N {
        return Ok(None);
    }
    let set = PointSet::from_function(f)?;
    let cube = f.cube();
    let all = count_progressions(&set) as f64 / (cube.size() as f64 * 3f64.powi(cube.n as i32));
    let check = EndgameCheck { n: f.n(), density: set.density(), lambda: all, union_bound: 1.0 - 3.0 * (1.0 - set.density()) };
    if all >= ENDGAME_LAMBDA {
        return Err(Error::Consistency(format!(
            "density {} on n = {} forces Λ = {all} ≥ {ENDGAME_LAMBDA}, so the set holds a nontrivial progression",
            check.density, check.n
        )));
    }
    Ok(Some(check))
}

/// A free set correlated with a known character.
#[derive(Clone, Debug)]
pub struct PlantedInstance {
    pub f: DenseFunction,
    pub beta: Vec<u32>,
}

/// Builds a product of free pieces on a random coordinate partition of
/// `F_5^n`: pairs `{c(x + y) ∈ S}` with `|S| = 2`, which are free because
/// `c(a_1 + a_2) ≠ 0` for nonzero `a ∈ {0,1,2}^2`, and one greedy free
/// piece inside `{γ·x ∈ S}` on the remaining two or three coordinates. The
/// product of free sets is free, and the set correlates with `χ_β` where
/// `β` collects the `c` and `γ`.
pub fn planted_instance(n: usize, seed: u64) -> Result<PlantedInstance> {
    let p = 5u32;
    if n < 2 {
        return Err(Error::InvalidParameter("planted instances need n ≥ 2".into()));
    }
    let cube = Cube::new(p, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords: Vec<usize> = (0..n).collect();
    coords.shuffle(&mut rng);
    let tail = if n.is_multiple_of(2) { 2 } else { 3 }.min(n);
    let pairs: Vec<[usize; 2]> = coords[..n - tail].chunks(2).map(|c| [c[0], c[1]]).collect();
    let rest = coords[n - tail..].to_vec();
    let mut beta = vec![0u32; n];
    let mut pieces: Vec<(Vec<usize>, Vec<bool>)> = Vec::new();
    for pair in &pairs {
        let c = rng.gen_range(1..p);
        let s = two_subset(&mut rng, p);
        beta[pair[0]] = c;
        beta[pair[1]] = c;
        let table = (0..p * p).map(|i| s.contains(&(c * (i % p + i / p) % p))).collect();
        pieces.push((pair.to_vec(), table));
    }
    let sub = Cube::new(p, rest.len())?;
    let gamma: Vec<u32> = (0..rest.len()).map(|_| rng.gen_range(1..p)).collect();
    let s = two_subset(&mut rng, p);
    let mut order: Vec<usize> = (0..sub.size())
        .filter(|&i| {
            let x = sub.decode(i);
            let dot: u32 = x.iter().zip(&gamma).map(|(a, b)| a * b).sum();
            s.contains(&(dot % p))
        })
        .collect();
    order.shuffle(&mut rng);
    let greedy = greedy_free_set(sub, order);
    for (&i, &g) in rest.iter().zip(&gamma) {
        beta[i] = g;
    }
    pieces.push((rest, (0..sub.size()).map(|i| greedy.contains(i)).collect()));
    let shift: Vec<u32> = (0..n).map(|_| rng.gen_range(0..p)).collect();
    let f = DenseFunction::boolean_from_fn(cube, |x| {
        pieces.iter().all(|(cs, table)| {
            let idx = cs.iter().rev().fold(0usize, |acc, &i| acc * p as usize + ((x[i] + shift[i]) % p) as usize);
            table[idx]
        })
    });
    Ok(PlantedInstance { f, beta })
}

fn two_subset<R: Rng + ?Sized>(rng: &mut R, p: u32) -> [u32; 2] {
    let a = rng.gen_range(0..p);
    [a, (a + 1) % p]
}

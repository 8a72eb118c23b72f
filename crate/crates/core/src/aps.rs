//! Restricted 3-term progressions `x, x+a, x+2a` with `a ∈ {0,1,2}^n`.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{is_prime, Cube};
use crate::funcspace::{fourier_transform, DenseFunction, Kind};

/// The supported differences of the progression model.
pub const AP_DIFFERENCES: [u32; 3] = [0, 1, 2];

/// A finite set of k-tuples over alphabets `[0, s_1) × … × [0, s_k)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Support {
    pub alphabets: Vec<u32>,
    pub atoms: Vec<Vec<u32>>,
}

impl Support {
    pub fn new(alphabets: Vec<u32>, atoms: Vec<Vec<u32>>) -> Result<Self> {
        let s = Self { alphabets, atoms };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphabets.len() < 2 {
            return Err(Error::InvalidParameter("a support needs at least two coordinates".into()));
        }
        if self.alphabets.contains(&0) {
            return Err(Error::InvalidParameter("alphabets must be nonempty".into()));
        }
        if self.atoms.is_empty() {
            return Err(Error::InvalidParameter("support is empty".into()));
        }
        for atom in &self.atoms {
            if atom.len() != self.alphabets.len() {
                return Err(Error::ShapeMismatch(format!(
                    "atom {:?} has arity {}, expected {}",
                    atom,
                    atom.len(),
                    self.alphabets.len()
                )));
            }
            for (&letter, &size) in atom.iter().zip(&self.alphabets) {
                if letter >= size {
                    return Err(Error::OutOfRange { value: u64::from(letter), bound: u64::from(size) });
                }
            }
        }
        Ok(())
    }

    pub fn arity(&self) -> usize {
        self.alphabets.len()
    }

    /// The full product `Σ_1 × … × Σ_k`.
    pub fn full(alphabets: Vec<u32>) -> Result<Self> {
        let mut atoms = vec![vec![]];
        for &s in &alphabets {
            atoms = atoms
                .into_iter()
                .flat_map(|prefix: Vec<u32>| {
                    (0..s).map(move |c| {
                        let mut a = prefix.clone();
                        a.push(c);
                        a
                    })
                })
                .collect();
        }
        Self::new(alphabets, atoms)
    }

    /// Applies a letter permutation to every coordinate.
    pub fn relabel(&self, maps: &[Vec<u32>]) -> Result<Self> {
        let atoms = self
            .atoms
            .iter()
            .map(|atom| atom.iter().enumerate().map(|(i, &c)| maps[i][c as usize]).collect())
            .collect();
        Self::new(self.alphabets.clone(), atoms)
    }
}

/// A probability distribution on `Σ × Γ × Φ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripleDistribution {
    alphabets: [u32; 3],
    atoms: Vec<([u32; 3], f64)>,
}

impl TripleDistribution {
    /// Duplicate atoms have their masses merged.
    pub fn new(alphabets: [u32; 3], atoms: Vec<([u32; 3], f64)>) -> Result<Self> {
        let mut merged: BTreeMap<[u32; 3], f64> = BTreeMap::new();
        for (atom, q) in atoms {
            if !(q > 0.0) {
                return Err(Error::InvalidParameter(format!("atom {atom:?} has mass {q}")));
            }
            for (&c, &s) in atom.iter().zip(&alphabets) {
                if c >= s {
                    return Err(Error::OutOfRange { value: u64::from(c), bound: u64::from(s) });
                }
            }
            *merged.entry(atom).or_default() += q;
        }
        let total: f64 = merged.values().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("masses sum to {total}")));
        }
        Ok(Self { alphabets, atoms: merged.into_iter().collect() })
    }

    pub fn alphabets(&self) -> [u32; 3] {
        self.alphabets
    }

    pub fn atoms(&self) -> &[([u32; 3], f64)] {
        &self.atoms
    }

    pub fn probability(&self, atom: [u32; 3]) -> f64 {
        self.atoms.iter().find(|(a, _)| *a == atom).map_or(0.0, |(_, q)| *q)
    }

    pub fn marginal(&self, coord: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.alphabets[coord] as usize];
        for (atom, q) in &self.atoms {
            m[atom[coord] as usize] += q;
        }
        m
    }

    pub fn support(&self) -> Support {
        Support {
            alphabets: self.alphabets.to_vec(),
            atoms: self.atoms.iter().map(|(a, _)| a.to_vec()).collect(),
        }
    }
}

/// The law of `(x, x+a, x+2a)` with `x` uniform on `F_p` and `a` uniform on `diffs`.
pub fn ap_distribution(p: u32, diffs: &[u32]) -> Result<TripleDistribution> {
    if p < 3 || !is_prime(u64::from(p)) {
        return Err(Error::NotPrime(u64::from(p)));
    }
    if diffs.is_empty() {
        return Err(Error::InvalidParameter("difference set is empty".into()));
    }
    let q = 1.0 / (f64::from(p) * diffs.len() as f64);
    let atoms = (0..p)
        .flat_map(|x| diffs.iter().map(move |&a| ([x, (x + a) % p, (x + 2 * a) % p], q)))
        .collect();
    TripleDistribution::new([p, p, p], atoms)
}

pub fn restricted_ap_distribution(p: u32) -> Result<TripleDistribution> {
    ap_distribution(p, &AP_DIFFERENCES)
}

/// For each pair `i < j`, whether the bipartite graph on `Σ_i ⊔ Σ_j` with an
/// edge for every projected atom is connected.
pub fn pairwise_connected(support: &Support) -> Result<Vec<((usize, usize), bool)>> {
    support.validate()?;
    let k = support.arity();
    let mut out = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            let si = support.alphabets[i] as usize;
            let sj = support.alphabets[j] as usize;
            let mut uf = UnionFind::new(si + sj);
            for atom in &support.atoms {
                uf.union(atom[i] as usize, si + atom[j] as usize);
            }
            out.push(((i, j), uf.components() == 1));
        }
    }
    Ok(out)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }

    fn components(&mut self) -> usize {
        (0..self.parent.len()).filter(|&x| self.find(x) == x).count()
    }
}

/// A subset of `F_p^n` as a bitset over encoded indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PointSet {
    cube: Cube,
    bits: Vec<u64>,
}

impl PointSet {
    pub fn empty(cube: Cube) -> Self {
        Self { cube, bits: vec![0; cube.size().div_ceil(64)] }
    }

    pub fn from_indices(cube: Cube, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut s = Self::empty(cube);
        for i in indices {
            if i >= cube.size() {
                return Err(Error::OutOfRange { value: i as u64, bound: cube.size() as u64 });
            }
            s.insert(i);
        }
        Ok(s)
    }

    pub fn from_points(cube: Cube, points: &[Vec<u32>]) -> Result<Self> {
        let mut s = Self::empty(cube);
        for x in points {
            if x.len() != cube.n || x.iter().any(|&c| c >= cube.p) {
                return Err(Error::ShapeMismatch(format!("point {x:?} is not in F_{}^{}", cube.p, cube.n)));
            }
            s.insert(cube.encode(x));
        }
        Ok(s)
    }

    pub fn from_function(f: &DenseFunction) -> Result<Self> {
        if f.kind() != Kind::Boolean {
            return Err(Error::Precondition("point sets come from boolean functions".into()));
        }
        let mut s = Self::empty(f.cube());
        for (i, v) in f.values().iter().enumerate() {
            if v.re == 1.0 {
                s.insert(i);
            }
        }
        Ok(s)
    }

    pub fn to_function(&self) -> DenseFunction {
        let bits: Vec<bool> = (0..self.cube.size()).map(|i| self.contains(i)).collect();
        DenseFunction::from_bools(self.cube, &bits).expect("bitset matches its cube")
    }

    pub fn cube(&self) -> Cube {
        self.cube
    }

    pub fn contains(&self, i: usize) -> bool {
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn insert(&mut self, i: usize) {
        self.bits[i / 64] |= 1 << (i % 64);
    }

    pub fn remove(&mut self, i: usize) {
        self.bits[i / 64] &= !(1 << (i % 64));
    }

    pub fn len(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    pub fn density(&self) -> f64 {
        self.len() as f64 / self.cube.size() as f64
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.cube.size()).filter(|&i| self.contains(i)).collect()
    }
}

/// Occupancy of every aligned block: `levels[l][b]` says whether some
/// member has index in `[b·p^l, (b+1)·p^l)`.
struct Pyramid {
    p: usize,
    levels: Vec<Vec<bool>>,
}

impl Pyramid {
    fn new(set: &PointSet) -> Self {
        let p = set.cube.p as usize;
        let mut levels = vec![(0..set.cube.size()).map(|i| set.contains(i)).collect::<Vec<bool>>()];
        for _ in 0..set.cube.n {
            let prev = levels.last().unwrap();
            levels.push(prev.chunks(p).map(|c| c.iter().any(|&b| b)).collect());
        }
        Self { p, levels }
    }
}

/// Depth-first walk over `a` from the top coordinate down, pruning as soon
/// as the block holding `x+a` or `x+2a` is empty. Visits `a` in increasing
/// index order.
struct ApWalk<'a> {
    pyr: &'a Pyramid,
    x: &'a [u32],
    a: Vec<u32>,
}

impl<'a> ApWalk<'a> {
    fn new(pyr: &'a Pyramid, x: &'a [u32]) -> Self {
        Self { pyr, x, a: vec![0; x.len()] }
    }

    /// First non-zero `a` completing a progression from `x`.
    fn first_witness(&mut self) -> Option<Vec<u32>> {
        let n = self.x.len();
        self.search(n, 0, 0, false).then(|| self.a.clone())
    }

    fn search(&mut self, level: usize, by: usize, bz: usize, nonzero: bool) -> bool {
        if level == 0 {
            return nonzero;
        }
        let i = level - 1;
        let p = self.pyr.p as u32;
        for a in AP_DIFFERENCES {
            let y = ((self.x[i] + a) % p) as usize;
            let z = ((self.x[i] + 2 * a) % p) as usize;
            let (cy, cz) = (by * self.pyr.p + y, bz * self.pyr.p + z);
            let occ = &self.pyr.levels[i];
            if occ[cy] && occ[cz] {
                self.a[i] = a;
                if self.search(i, cy, cz, nonzero || a != 0) {
                    return true;
                }
            }
        }
        self.a[i] = 0;
        false
    }

    /// Number of `a` (including zero) with `x+a, x+2a` in the set.
    fn count(&self, level: usize, by: usize, bz: usize) -> u64 {
        if level == 0 {
            return 1;
        }
        let i = level - 1;
        let p = self.pyr.p as u32;
        let occ = &self.pyr.levels[i];
        AP_DIFFERENCES
            .iter()
            .map(|&a| {
                let cy = by * self.pyr.p + ((self.x[i] + a) % p) as usize;
                let cz = bz * self.pyr.p + ((self.x[i] + 2 * a) % p) as usize;
                if occ[cy] && occ[cz] {
                    self.count(i, cy, cz)
                } else {
                    0
                }
            })
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Freeness {
    Free,
    Witness { x: Vec<u32>, a: Vec<u32> },
}

impl Freeness {
    pub fn is_free(&self) -> bool {
        matches!(self, Freeness::Free)
    }
}

/// Checks for a progression `x, x+a, x+2a` inside `set` with `a ≠ 0`.
///
/// The witness minimizes `index(x)` first and `index(a)` second.
pub fn is_restricted_ap_free(set: &PointSet) -> Freeness {
    let pyr = Pyramid::new(set);
    let cube = set.cube;
    let members = set.indices();
    let hit = members.par_iter().find_map_first(|&xi| {
        let x = cube.decode(xi);
        ApWalk::new(&pyr, &x).first_witness().map(|a| (x, a))
    });
    match hit {
        Some((x, a)) => Freeness::Witness { x, a },
        None => Freeness::Free,
    }
}

/// Number of pairs `(x, a)`, `a ∈ {0,1,2}^n` including zero, with the whole
/// progression inside `set`.
pub fn count_progressions(set: &PointSet) -> u64 {
    let pyr = Pyramid::new(set);
    let cube = set.cube;
    set.indices()
        .par_iter()
        .map(|&xi| {
            let x = cube.decode(xi);
            ApWalk::new(&pyr, &x).count(cube.n, 0, 0)
        })
        .sum()
}

/// `Λ(1_A, 1_A, 1_A)` from the progression count.
pub fn progression_density(set: &PointSet) -> f64 {
    let c = set.cube;
    count_progressions(set) as f64 / (c.size() as f64 * 3f64.powi(c.n as i32))
}

/// A free set grown one point at a time.
///
/// Keeps member counts for every aligned block so that the test "does
/// adding `v` complete a progression" is a pruned walk over `a` for each of
/// the three positions `v` can take.
#[derive(Clone, Debug)]
pub struct FreeSetBuilder {
    set: PointSet,
    counts: Vec<Vec<u32>>,
}

impl FreeSetBuilder {
    pub fn new(cube: Cube) -> Self {
        let p = cube.p as usize;
        let counts = (0..=cube.n).map(|l| vec![0; cube.size() / p.pow(l as u32)]).collect();
        Self { set: PointSet::empty(cube), counts }
    }

    pub fn set(&self) -> &PointSet {
        &self.set
    }

    pub fn into_set(self) -> PointSet {
        self.set
    }

    /// Whether `set ∪ {v}` contains a progression through `v`.
    pub fn would_complete(&self, v: usize) -> bool {
        let cube = self.set.cube;
        let x = cube.decode(v);
        let p = cube.p;
        // v sits first, middle or last: the other two points are v + c·a
        [(1, 2), (p - 1, 1), (p - 2, p - 1)]
            .into_iter()
            .any(|(c1, c2)| self.walk(&x, c1, c2, cube.n, 0, 0, false))
    }

    /// Inserts `v` if the set stays free; returns whether it did.
    pub fn try_insert(&mut self, v: usize) -> bool {
        if self.set.contains(v) || self.would_complete(v) {
            return false;
        }
        self.set.insert(v);
        let p = self.set.cube.p as usize;
        let mut b = v;
        for level in &mut self.counts {
            level[b] += 1;
            b /= p;
        }
        true
    }

    #[allow(clippy::too_many_arguments)]
    fn walk(&self, x: &[u32], c1: u32, c2: u32, level: usize, by: usize, bz: usize, nonzero: bool) -> bool {
        if level == 0 {
            return nonzero;
        }
        let i = level - 1;
        let p = self.set.cube.p;
        let occ = &self.counts[i];
        AP_DIFFERENCES.iter().any(|&a| {
            let cy = by * p as usize + ((x[i] + c1 * a) % p) as usize;
            let cz = bz * p as usize + ((x[i] + c2 * a) % p) as usize;
            occ[cy] > 0 && occ[cz] > 0 && self.walk(x, c1, c2, i, cy, cz, nonzero || a != 0)
        })
    }
}

/// Greedy free set: visits `order` and keeps every point that does not
/// complete a progression.
pub fn greedy_free_set(cube: Cube, order: impl IntoIterator<Item = usize>) -> PointSet {
    let mut b = FreeSetBuilder::new(cube);
    for v in order {
        b.try_insert(v);
    }
    b.into_set()
}

fn check_triple(f: &DenseFunction, g: &DenseFunction, h: &DenseFunction) -> Result<Cube> {
    if f.cube() != g.cube() || f.cube() != h.cube() {
        return Err(Error::ShapeMismatch("the three functions live on different cubes".into()));
    }
    Ok(f.cube())
}

/// `E_{x, a}[f(x) g(x+a) h(x+2a)]` summed over every `(x, a)`.
pub fn triple_correlation_direct(f: &DenseFunction, g: &DenseFunction, h: &DenseFunction) -> Result<Complex64> {
    let cube = check_triple(f, g, h)?;
    let p = cube.p;
    let n = cube.n;
    let (gv, hv) = (g.values(), h.values());
    // ordered reduction keeps the result independent of the thread count
    let total: Complex64 = (0..cube.size())
        .into_par_iter()
        .map(|xi| {
            let fx = f.value(xi);
            if fx == Complex64::new(0.0, 0.0) {
                return fx;
            }
            let x = cube.decode(xi);
            // signed index offsets of x+a and x+2a per coordinate and difference
            let mut dy = vec![[0isize; 3]; n];
            let mut dz = vec![[0isize; 3]; n];
            for i in 0..n {
                let s = cube.stride(i) as isize;
                for (k, &a) in AP_DIFFERENCES.iter().enumerate() {
                    dy[i][k] = (((x[i] + a) % p) as isize - x[i] as isize) * s;
                    dz[i][k] = (((x[i] + 2 * a) % p) as isize - x[i] as isize) * s;
                }
            }
            fx * sum_over_differences(0, xi as isize, xi as isize, &dy, &dz, gv, hv)
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total / (cube.size() as f64 * 3f64.powi(n as i32)))
}

fn sum_over_differences(
    i: usize,
    y: isize,
    z: isize,
    dy: &[[isize; 3]],
    dz: &[[isize; 3]],
    g: &[Complex64],
    h: &[Complex64],
) -> Complex64 {
    if i == dy.len() {
        return g[y as usize] * h[z as usize];
    }
    (0..3).map(|k| sum_over_differences(i + 1, y + dy[i][k], z + dz[i][k], dy, dz, g, h)).sum()
}

/// `Σ_{β,γ} f̂(−β−γ) ĝ(β) ĥ(γ) ∏_i Ŝ(β_i + 2γ_i)`, `Ŝ(t) = (1 + ω^t + ω^{2t})/3`.
pub fn triple_correlation_fourier(f: &DenseFunction, g: &DenseFunction, h: &DenseFunction) -> Result<Complex64> {
    let cube = check_triple(f, g, h)?;
    let (ff, gf, hf) = (fourier_transform(f)?, fourier_transform(g)?, fourier_transform(h)?);
    let p = cube.p as usize;
    let s_hat: Vec<Complex64> = (0..p)
        .map(|t| {
            (0..3usize)
                .map(|a| Complex64::from_polar(1.0, TAU * ((a * t) % p) as f64 / p as f64))
                .sum::<Complex64>()
                / 3.0
        })
        .collect();
    let total: Complex64 = (0..cube.size())
        .into_par_iter()
        .map(|gamma_idx| {
            let hg = hf[gamma_idx];
            if hg.norm_sqr() == 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            let gamma = cube.decode(gamma_idx);
            hg * sum_over_beta(0, 0, 0, Complex64::new(1.0, 0.0), &gamma, cube, &s_hat, &ff, &gf)
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn sum_over_beta(
    i: usize,
    f_idx: usize,
    b_idx: usize,
    weight: Complex64,
    gamma: &[u32],
    cube: Cube,
    s_hat: &[Complex64],
    ff: &[Complex64],
    gf: &[Complex64],
) -> Complex64 {
    if i == cube.n {
        return weight * ff[f_idx] * gf[b_idx];
    }
    let p = cube.p as usize;
    let s = cube.stride(i);
    let c = gamma[i] as usize;
    (0..p)
        .map(|b| {
            let minus = (2 * p - b - c) % p;
            let w = weight * s_hat[(b + 2 * c) % p];
            sum_over_beta(i + 1, f_idx + minus * s, b_idx + b * s, w, gamma, cube, s_hat, ff, gf)
        })
        .sum()
}

/// Agreement slack between the two counting routes.
pub const COUNT_AGREEMENT_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountMethod {
    Direct,
    Fourier,
    Both,
}

/// Runs the requested route; `Both` fails with a consistency error when the
/// two disagree by more than [`COUNT_AGREEMENT_TOL`].
pub fn triple_correlation(
    f: &DenseFunction,
    g: &DenseFunction,
    h: &DenseFunction,
    method: CountMethod,
) -> Result<Complex64> {
    match method {
        CountMethod::Direct => triple_correlation_direct(f, g, h),
        CountMethod::Fourier => triple_correlation_fourier(f, g, h),
        CountMethod::Both => {
            let a = triple_correlation_direct(f, g, h)?;
            let b = triple_correlation_fourier(f, g, h)?;
            if (a - b).norm() > COUNT_AGREEMENT_TOL {
                return Err(Error::Consistency(format!("direct {a} and Fourier {b} disagree")));
            }
            Ok(a)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Exhaustive,
    BranchBound,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtremalReport {
    pub p: u32,
    pub n: usize,
    pub size: usize,
    pub set: Vec<usize>,
    pub optimal: bool,
    pub nodes_explored: u64,
}

/// Every forbidden triple `{x, x+a, x+2a}`, `a ≠ 0`, as sorted index triples.
pub fn forbidden_triples(cube: Cube) -> Vec<[usize; 3]> {
    let dcube = Cube { p: 3, n: cube.n };
    let mut out = Vec::new();
    for xi in 0..cube.size() {
        let x = cube.decode(xi);
        for ai in 1..dcube.size() {
            let a = dcube.decode(ai);
            let y: Vec<u32> = x.iter().zip(&a).map(|(&u, &d)| (u + d) % cube.p).collect();
            let z: Vec<u32> = x.iter().zip(&a).map(|(&u, &d)| (u + 2 * d) % cube.p).collect();
            let mut t = [xi, cube.encode(&y), cube.encode(&z)];
            t.sort_unstable();
            out.push(t);
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

struct Hypergraph {
    /// triples through each vertex, as the other two vertices
    incident: Vec<Vec<(usize, usize)>>,
}

impl Hypergraph {
    fn new(cube: Cube) -> Self {
        let mut incident = vec![Vec::new(); cube.size()];
        for [a, b, c] in forbidden_triples(cube) {
            incident[a].push((b, c));
            incident[b].push((a, c));
            incident[c].push((a, b));
        }
        Self { incident }
    }
}

struct Search<'a> {
    hg: &'a Hypergraph,
    order: Vec<usize>,
    chosen: Vec<bool>,
    /// number of triples that would be completed by adding the vertex
    blocked: Vec<u32>,
    current: Vec<usize>,
    best: Vec<usize>,
    nodes: u64,
    budget: u64,
    exhausted_budget: bool,
    use_bound: bool,
}

impl Search<'_> {
    fn include(&mut self, v: usize) {
        self.chosen[v] = true;
        self.current.push(v);
        for &(a, b) in &self.hg.incident[v] {
            if self.chosen[a] {
                self.blocked[b] += 1;
            }
            if self.chosen[b] {
                self.blocked[a] += 1;
            }
        }
    }

    fn exclude(&mut self, v: usize) {
        self.current.pop();
        for &(a, b) in &self.hg.incident[v] {
            if self.chosen[a] {
                self.blocked[b] -= 1;
            }
            if self.chosen[b] {
                self.blocked[a] -= 1;
            }
        }
        self.chosen[v] = false;
    }

    fn run(&mut self, k: usize) {
        if self.exhausted_budget {
            return;
        }
        self.nodes += 1;
        if self.nodes > self.budget {
            self.exhausted_budget = true;
            return;
        }
        if self.current.len() > self.best.len() {
            self.best = self.current.clone();
        }
        if k == self.order.len() {
            return;
        }
        if self.use_bound {
            let free = self.order[k..].iter().filter(|&&v| self.blocked[v] == 0).count();
            if self.current.len() + free <= self.best.len() {
                return;
            }
        }
        let v = self.order[k];
        if self.blocked[v] == 0 {
            self.include(v);
            self.run(k + 1);
            self.exclude(v);
        }
        self.run(k + 1);
    }
}

/// Largest restricted-3-AP-free subset of `F_p^n` found within `budget` nodes.
///
/// Exhaustive mode walks every free set in index order; branch-and-bound
/// orders vertices by hypergraph degree (ties by index), starts from the
/// greedy solution, and prunes with the count of still-addable vertices.
pub fn extremal_search(p: u32, n: usize, mode: SearchMode, budget: u64) -> Result<ExtremalReport> {
    let cube = Cube::new(p, n)?;
    if mode == SearchMode::Exhaustive && cube.size() > 25 {
        return Err(Error::Precondition(format!("exhaustive search needs p^n ≤ 25, got {}", cube.size())));
    }
    if cube.size() > 1 << 16 {
        return Err(Error::InvalidParameter("search is limited to 2^16 points".into()));
    }
    let hg = Hypergraph::new(cube);
    let order: Vec<usize> = match mode {
        SearchMode::Exhaustive => (0..cube.size()).collect(),
        SearchMode::BranchBound => {
            let mut o: Vec<usize> = (0..cube.size()).collect();
            o.sort_by_key(|&v| (std::cmp::Reverse(hg.incident[v].len()), v));
            o
        }
    };
    let mut search = Search {
        hg: &hg,
        order: order.clone(),
        chosen: vec![false; cube.size()],
        blocked: vec![0; cube.size()],
        current: Vec::new(),
        best: Vec::new(),
        nodes: 0,
        budget,
        exhausted_budget: false,
        use_bound: mode == SearchMode::BranchBound,
    };
    if mode == SearchMode::BranchBound {
        for &v in &order {
            if search.blocked[v] == 0 {
                search.include(v);
            }
        }
        search.best = search.current.clone();
        for &v in order.iter().rev() {
            if search.chosen[v] {
                search.exclude(v);
            }
        }
    }
    search.run(0);
    let mut set = search.best;
    set.sort_unstable();
    Ok(ExtremalReport {
        p,
        n,
        size: set.len(),
        set,
        optimal: !search.exhausted_budget,
        nodes_explored: search.nodes,
    })
}

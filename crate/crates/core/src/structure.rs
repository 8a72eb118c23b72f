//! Product functions, specialized bases and correlation search.
//!
//! A [`ProductFunction`] stores each factor as a table of exponents `k` with
//! value `e^{2πik/r}`, `r = |H|`, so products stay exact roots of unity.
//! A [`SpecialBasis`] describes the change of variables
//! `w = Σ x_j v_j + Σ z_k u_k`, where the `v_j` are 0/1 vectors with disjoint
//! supports.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aps::{is_restricted_ap_free, PointSet};
use crate::error::{Error, Result};
use crate::field::{root_index, root_of_unity, Cube, FiniteAbelianGroup, PrimeField};
use crate::funcspace::{fourier_transform, odometer_step, restrict, DenseFunction, Kind, Restriction};
use crate::rng::{stream_id, stream_rng};

const UNIT_TOL: f64 = 1e-9;

/// `c · ∏ f_i(x_i)` with every factor valued in `|H|`-th roots of unity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProductFunctionJson", into = "ProductFunctionJson")]
pub struct ProductFunction {
    group: FiniteAbelianGroup,
    p: u32,
    scalar: Complex64,
    exponents: Vec<Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
struct ProductFunctionJson {
    group: Vec<u64>,
    scalar: [f64; 2],
    factors: Vec<Vec<[f64; 2]>>,
}

impl TryFrom<ProductFunctionJson> for ProductFunction {
    type Error = Error;

    fn try_from(j: ProductFunctionJson) -> Result<Self> {
        let group = FiniteAbelianGroup::new(j.group)?;
        let p = j
            .factors
            .first()
            .map(|f| f.len() as u32)
            .ok_or_else(|| Error::Format("a product function needs at least one factor".into()))?;
        let factors = j
            .factors
            .iter()
            .map(|f| f.iter().map(|&[re, im]| Complex64::new(re, im)).collect())
            .collect();
        Self::new(group, p, Complex64::new(j.scalar[0], j.scalar[1]), factors)
    }
}

impl From<ProductFunction> for ProductFunctionJson {
    fn from(pf: ProductFunction) -> Self {
        let r = pf.order();
        Self {
            group: pf.group.cyclic_orders().to_vec(),
            scalar: [pf.scalar.re, pf.scalar.im],
            factors: pf
                .exponents
                .iter()
                .map(|f| {
                    f.iter()
                        .map(|&k| {
                            let v = root_of_unity(u64::from(k), r);
                            [v.re, v.im]
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

impl ProductFunction {
    /// Validates complex factor tables against the group order.
    pub fn new(group: FiniteAbelianGroup, p: u32, scalar: Complex64, factors: Vec<Vec<Complex64>>) -> Result<Self> {
        let r = group.order();
        let exponents = factors
            .iter()
            .map(|f| {
                f.iter()
                    .map(|&v| {
                        root_index(v, r)
                            .map(|k| k as u32)
                            .ok_or_else(|| Error::NotRootOfUnity { value: format!("{v}"), order: r })
                    })
                    .collect::<Result<Vec<u32>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_exponents(group, p, scalar, exponents)
    }

    pub fn from_exponents(group: FiniteAbelianGroup, p: u32, scalar: Complex64, exponents: Vec<Vec<u32>>) -> Result<Self> {
        PrimeField::new(p)?;
        if (scalar.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidParameter(format!("scalar {scalar} is not a unit")));
        }
        let r = group.order();
        for f in &exponents {
            if f.len() != p as usize {
                return Err(Error::ShapeMismatch(format!("factor has {} letters, expected {p}", f.len())));
            }
            if let Some(&k) = f.iter().find(|&&k| u64::from(k) >= r) {
                return Err(Error::OutOfRange { value: u64::from(k), bound: r });
            }
        }
        Ok(Self { group, p, scalar, exponents })
    }

    pub fn constant(group: FiniteAbelianGroup, p: u32, n: usize) -> Result<Self> {
        Self::from_exponents(group, p, Complex64::new(1.0, 0.0), vec![vec![0; p as usize]; n])
    }

    /// `χ_α` as a product over `Z_p`.
    pub fn character(p: u32, alpha: &[u32]) -> Result<Self> {
        let exponents = alpha.iter().map(|&a| (0..p).map(|s| (a % p) * s % p).collect()).collect();
        Self::from_exponents(FiniteAbelianGroup::cyclic(u64::from(p))?, p, Complex64::new(1.0, 0.0), exponents)
    }

    pub fn group(&self) -> &FiniteAbelianGroup {
        &self.group
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn n(&self) -> usize {
        self.exponents.len()
    }

    /// `r = |H|`.
    pub fn order(&self) -> u64 {
        self.group.order()
    }

    pub fn scalar(&self) -> Complex64 {
        self.scalar
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    pub fn factor_value(&self, i: usize, s: u32) -> Complex64 {
        root_of_unity(u64::from(self.exponents[i][s as usize]), self.order())
    }

    pub fn eval(&self, x: &[u32]) -> Complex64 {
        let r = self.order();
        let k: u64 = x.iter().zip(&self.exponents).map(|(&s, f)| u64::from(f[s as usize])).sum();
        self.scalar * root_of_unity(k % r, r)
    }

    /// Exponent of `∏ f_i(x_i)` at every point.
    fn exponent_table(&self) -> Vec<u32> {
        let r = self.order() as u32;
        let mut table = vec![0u32];
        for f in &self.exponents {
            let len = table.len();
            let mut next = Vec::with_capacity(len * self.p as usize);
            for &k in f {
                next.extend(table[..len].iter().map(|&t| (t + k) % r));
            }
            table = next;
        }
        table
    }

    pub fn materialize(&self) -> DenseFunction {
        let r = self.order();
        let cube = Cube { p: self.p, n: self.n() };
        let roots: Vec<Complex64> = (0..r).map(|k| self.scalar * root_of_unity(k, r)).collect();
        let values = self.exponent_table().into_iter().map(|k| roots[k as usize]).collect();
        DenseFunction::from_complex(cube, values).expect("table matches the cube")
    }

    /// Rewrites the factors so that `f_i(0) = 1`, moving constants into the
    /// scalar.
    pub fn normalized(&self) -> Self {
        let r = self.order();
        let mut shift = 0u64;
        let exponents = self
            .exponents
            .iter()
            .map(|f| {
                let k0 = f[0];
                shift += u64::from(k0);
                f.iter().map(|&k| (k + r as u32 - k0) % r as u32).collect()
            })
            .collect();
        Self {
            group: self.group.clone(),
            p: self.p,
            scalar: self.scalar * root_of_unity(shift % r, r),
            exponents,
        }
    }

    /// Fixes the coordinates assigned by `res`; the constant factors move
    /// into the scalar.
    pub fn restrict(&self, res: &Restriction) -> Result<Self> {
        if res.n() != self.n() {
            return Err(Error::ShapeMismatch(format!("restriction on {} coordinates, product on {}", res.n(), self.n())));
        }
        let r = self.order();
        let mut shift = 0u64;
        let mut exponents = Vec::new();
        for (f, slot) in self.exponents.iter().zip(res.slots()) {
            match slot {
                None => exponents.push(f.clone()),
                Some(v) if *v < self.p => shift += u64::from(f[*v as usize]),
                Some(v) => return Err(Error::OutOfRange { value: u64::from(*v), bound: u64::from(self.p) }),
            }
        }
        Ok(Self {
            group: self.group.clone(),
            p: self.p,
            scalar: self.scalar * root_of_unity(shift % r, r),
            exponents,
        })
    }

    pub fn conj(&self) -> Self {
        let r = self.order() as u32;
        Self {
            group: self.group.clone(),
            p: self.p,
            scalar: self.scalar.conj(),
            exponents: self.exponents.iter().map(|f| f.iter().map(|&k| (r - k) % r).collect()).collect(),
        }
    }

    /// `⟨f, P⟩ = E[f · conj(P)]`.
    pub fn correlation(&self, f: &DenseFunction) -> Result<Complex64> {
        if f.cube() != (Cube { p: self.p, n: self.n() }) {
            return Err(Error::ShapeMismatch("function and product live on different cubes".into()));
        }
        f.inner(&self.materialize())
    }
}

/// `n'` disjoint 0/1 vectors `v_j` plus completion vectors `u_k` forming a
/// basis of `F_p^n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SpecialBasisRaw")]
pub struct SpecialBasis {
    p: u32,
    n: usize,
    supports: Vec<Vec<usize>>,
    completion: Vec<Vec<u32>>,
}

#[derive(Deserialize)]
struct SpecialBasisRaw {
    p: u32,
    n: usize,
    supports: Vec<Vec<usize>>,
    completion: Vec<Vec<u32>>,
}

impl TryFrom<SpecialBasisRaw> for SpecialBasis {
    type Error = Error;

    fn try_from(raw: SpecialBasisRaw) -> Result<Self> {
        Self::new(raw.p, raw.n, raw.supports, raw.completion)
    }
}

impl SpecialBasis {
    pub fn new(p: u32, n: usize, supports: Vec<Vec<usize>>, completion: Vec<Vec<u32>>) -> Result<Self> {
        let field = PrimeField::new(p)?;
        let mut seen = vec![false; n];
        let mut supports = supports;
        for s in &mut supports {
            s.sort_unstable();
            if s.is_empty() {
                return Err(Error::InvalidParameter("v vectors must be nonzero".into()));
            }
            for &i in s.iter() {
                if i >= n {
                    return Err(Error::OutOfRange { value: i as u64, bound: n as u64 });
                }
                if seen[i] {
                    return Err(Error::InvalidParameter(format!("coordinate {i} lies in two v supports")));
                }
                seen[i] = true;
            }
        }
        if supports.len() + completion.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} v vectors and {} u vectors do not make {n}",
                supports.len(),
                completion.len()
            )));
        }
        for u in &completion {
            if u.len() != n {
                return Err(Error::ShapeMismatch(format!("completion vector of length {}", u.len())));
            }
            if let Some(&c) = u.iter().find(|&&c| c >= p) {
                return Err(Error::OutOfRange { value: u64::from(c), bound: u64::from(p) });
            }
        }
        let basis = Self { p, n, supports, completion };
        if rank_mod(field, (0..n).map(|k| basis.column(k)).collect()) != n {
            return Err(Error::InvalidParameter("basis vectors are linearly dependent".into()));
        }
        Ok(basis)
    }

    /// Extends the `v` vectors with standard basis vectors taken in index
    /// order, keeping each one that raises the rank.
    pub fn with_standard_completion(p: u32, n: usize, supports: Vec<Vec<usize>>) -> Result<Self> {
        let field = PrimeField::new(p)?;
        let mut rows: Vec<Vec<u32>> = supports.iter().map(|s| indicator(n, s)).collect();
        let mut rank = rank_mod(field, rows.clone());
        let mut completion = Vec::new();
        for i in 0..n {
            if rank == n {
                break;
            }
            let mut e = vec![0u32; n];
            e[i] = 1;
            rows.push(e.clone());
            let next = rank_mod(field, rows.clone());
            if next > rank {
                rank = next;
                completion.push(e);
            } else {
                rows.pop();
            }
        }
        Self::new(p, n, supports, completion)
    }

    /// `v_j = e_j` for `j < n'`, `u_k = e_{n'+k}`.
    pub fn identity(p: u32, n: usize, n_prime: usize) -> Result<Self> {
        if n_prime > n {
            return Err(Error::OutOfRange { value: n_prime as u64, bound: n as u64 + 1 });
        }
        let supports = (0..n_prime).map(|j| vec![j]).collect();
        let completion = (n_prime..n)
            .map(|k| {
                let mut e = vec![0u32; n];
                e[k] = 1;
                e
            })
            .collect();
        Self::new(p, n, supports, completion)
    }

    /// A random basis with `n'` blocks. Each coordinate joins a random block
    /// or none; the completion is the standard one plus random multiples of
    /// earlier columns, which keeps it invertible.
    pub fn random<R: Rng + ?Sized>(p: u32, n: usize, n_prime: usize, rng: &mut R) -> Result<Self> {
        if n_prime == 0 || n_prime > n {
            return Err(Error::OutOfRange { value: n_prime as u64, bound: n as u64 + 1 });
        }
        let mut coords: Vec<usize> = (0..n).collect();
        coords.shuffle(rng);
        let mut supports: Vec<Vec<usize>> = coords[..n_prime].iter().map(|&i| vec![i]).collect();
        for &i in &coords[n_prime..] {
            if rng.gen_bool(0.5) {
                let j = rng.gen_range(0..n_prime);
                supports[j].push(i);
            }
        }
        let standard = Self::with_standard_completion(p, n, supports)?;
        let mut completion = standard.completion.clone();
        for k in 0..completion.len() {
            let mut u = completion[k].clone();
            for vj in &standard.supports {
                let c = rng.gen_range(0..p);
                for &i in vj {
                    u[i] = (u[i] + c) % p;
                }
            }
            for earlier in &standard.completion[..k] {
                let c = rng.gen_range(0..p);
                for (ui, &e) in u.iter_mut().zip(earlier) {
                    *ui = (*ui + c * e) % p;
                }
            }
            completion[k] = u;
        }
        Self::new(p, n, standard.supports, completion)
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `n'`, the number of `v` vectors.
    pub fn n_prime(&self) -> usize {
        self.supports.len()
    }

    pub fn supports(&self) -> &[Vec<usize>] {
        &self.supports
    }

    pub fn completion(&self) -> &[Vec<u32>] {
        &self.completion
    }

    /// Column `k` of `M_{u,v}`: `v_k` for `k < n'`, then the `u` vectors.
    pub fn column(&self, k: usize) -> Vec<u32> {
        if k < self.supports.len() {
            indicator(self.n, &self.supports[k])
        } else {
            self.completion[k - self.supports.len()].clone()
        }
    }

    /// The shift `L(z) = Σ z_k u_k`.
    pub fn shifts(&self, z: &[u32]) -> Result<Vec<u32>> {
        if z.len() != self.completion.len() {
            return Err(Error::ShapeMismatch(format!("z has length {}, expected {}", z.len(), self.completion.len())));
        }
        let mut w = vec![0u32; self.n];
        for (&zk, u) in z.iter().zip(&self.completion) {
            if zk >= self.p {
                return Err(Error::OutOfRange { value: u64::from(zk), bound: u64::from(self.p) });
            }
            for (wi, &ui) in w.iter_mut().zip(u) {
                *wi = (*wi + zk * ui) % self.p;
            }
        }
        Ok(w)
    }

    /// `M_{u,v}(x, z) = Σ x_j v_j + Σ z_k u_k`.
    pub fn map(&self, x: &[u32], z: &[u32]) -> Result<Vec<u32>> {
        if x.len() != self.n_prime() {
            return Err(Error::ShapeMismatch(format!("x has length {}, expected {}", x.len(), self.n_prime())));
        }
        let mut w = self.shifts(z)?;
        for (&xj, s) in x.iter().zip(&self.supports) {
            for &i in s {
                w[i] = (w[i] + xj) % self.p;
            }
        }
        Ok(w)
    }
}

fn indicator(n: usize, support: &[usize]) -> Vec<u32> {
    let mut v = vec![0u32; n];
    for &i in support {
        v[i] = 1;
    }
    v
}

fn rank_mod(field: PrimeField, mut rows: Vec<Vec<u32>>) -> usize {
    let cols = rows.first().map_or(0, Vec::len);
    let mut rank = 0;
    for c in 0..cols {
        let Some(pivot) = (rank..rows.len()).find(|&r| rows[r][c] != 0) else {
            continue;
        };
        rows.swap(rank, pivot);
        let inv = field.inv(rows[rank][c]);
        let pivot_row: Vec<u32> = rows[rank].iter().map(|&x| field.mul(x, inv)).collect();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != rank && row[c] != 0 {
                let m = row[c];
                for (x, &y) in row.iter_mut().zip(&pivot_row) {
                    *x = field.sub(*x, field.mul(m, y));
                }
            }
        }
        rows[rank] = pivot_row;
        rank += 1;
    }
    rank
}

/// Reads `f(offset + Σ_k x_k col_k)` for every `x`, in encoding order of `x`.
/// Columns are sparse `(coordinate, coefficient)` lists.
fn affine_gather(f: &DenseFunction, cols: &[Vec<(usize, u32)>], offset: &[u32]) -> Vec<Complex64> {
    let cube = f.cube();
    let p = cube.p;
    let strides: Vec<usize> = (0..cube.n).map(|i| cube.stride(i)).collect();
    let mut w = offset.to_vec();
    let mut src = cube.encode(&w);
    let size = (p as usize).pow(cols.len() as u32);
    let mut digits = vec![0u32; cols.len()];
    let mut out = Vec::with_capacity(size);
    for _ in 0..size {
        out.push(f.values()[src]);
        let changed = odometer_step(&mut digits, p);
        // each changed digit moved by +1 mod p, including wrap-around
        for col in &cols[..changed.min(cols.len())] {
            for &(i, c) in col {
                let next = (w[i] + c) % p;
                src = src + next as usize * strides[i] - w[i] as usize * strides[i];
                w[i] = next;
            }
        }
    }
    out
}

fn sparse(col: &[u32]) -> Vec<(usize, u32)> {
    col.iter().enumerate().filter(|(_, &c)| c != 0).map(|(i, &c)| (i, c)).collect()
}

fn check_basis(f: &DenseFunction, b: &SpecialBasis) -> Result<()> {
    if f.p() != b.p || f.n() != b.n {
        return Err(Error::ShapeMismatch(format!(
            "basis for F_{}^{} applied to F_{}^{}",
            b.p,
            b.n,
            f.p(),
            f.n()
        )));
    }
    if !f.measure().is_uniform() {
        return Err(Error::Precondition("a change of basis needs the uniform measure".into()));
    }
    Ok(())
}

/// `f^♯(x, z) = f(M_{u,v}(x, z))` on `F_p^n`, with the `x` coordinates first.
pub fn apply_basis_change(f: &DenseFunction, b: &SpecialBasis) -> Result<DenseFunction> {
    check_basis(f, b)?;
    let cols: Vec<_> = (0..b.n).map(|k| sparse(&b.column(k))).collect();
    let values = affine_gather(f, &cols, &vec![0; b.n]);
    DenseFunction::new(f.cube(), f.kind(), values, f.measure().clone())
}

/// A source function seen through a special basis.
#[derive(Clone, Debug)]
pub struct BasisChangedView {
    pub basis: SpecialBasis,
    pub source: DenseFunction,
    pub z: Option<Vec<u32>>,
}

impl BasisChangedView {
    pub fn new(basis: SpecialBasis, source: DenseFunction) -> Result<Self> {
        check_basis(&source, &basis)?;
        Ok(Self { basis, source, z: None })
    }

    pub fn with_z(mut self, z: Vec<u32>) -> Result<Self> {
        self.basis.shifts(&z)?;
        self.z = Some(z);
        Ok(self)
    }

    /// The restriction for the stored `z`.
    pub fn evaluate(&self) -> Result<DenseFunction> {
        let z = self.z.as_ref().ok_or_else(|| Error::Precondition("no z assignment set".into()))?;
        restrict_z(self, z)
    }
}

const FREENESS_ASSERT_LIMIT: usize = 4096;

/// `x ↦ f(M(x, z))` on `F_p^{n'}`.
pub fn restrict_z(view: &BasisChangedView, z: &[u32]) -> Result<DenseFunction> {
    let b = &view.basis;
    let f = &view.source;
    let offset = b.shifts(z)?;
    let cols: Vec<_> = b.supports.iter().map(|s| s.iter().map(|&i| (i, 1)).collect()).collect();
    let values = affine_gather(f, &cols, &offset);
    let out = DenseFunction::new(Cube { p: b.p, n: b.n_prime() }, f.kind(), values, f.measure().clone())?;
    #[cfg(debug_assertions)]
    if f.kind() == Kind::Boolean && f.cube().size() <= FREENESS_ASSERT_LIMIT {
        let src_free = is_restricted_ap_free(&PointSet::from_function(f)?).is_free();
        debug_assert!(
            !src_free || is_restricted_ap_free(&PointSet::from_function(&out)?).is_free(),
            "restricting the z-part of a free set produced a progression"
        );
    }
    Ok(out)
}

/// The product form of `x ↦ P(M(x, z))`: factor `j` is
/// `∏_{i ∈ supp v_j} f_i(x_j + L_i(z))` and the scalar absorbs the
/// coordinates outside every support.
pub fn product_closure_under_basis_change(pf: &ProductFunction, b: &SpecialBasis, z: &[u32]) -> Result<ProductFunction> {
    if pf.p != b.p || pf.n() != b.n {
        return Err(Error::ShapeMismatch("basis and product function differ in shape".into()));
    }
    let shift = b.shifts(z)?;
    let r = pf.order();
    let ru = r as u32;
    let p = pf.p;
    let mut covered = vec![false; b.n];
    let exponents = b
        .supports
        .iter()
        .map(|s| {
            (0..p)
                .map(|x| {
                    s.iter().fold(0u32, |acc, &i| {
                        covered[i] = true;
                        (acc + pf.exponents[i][((x + shift[i]) % p) as usize]) % ru
                    })
                })
                .collect()
        })
        .collect();
    let rest: u64 = (0..b.n)
        .filter(|&i| !covered[i])
        .map(|i| u64::from(pf.exponents[i][shift[i] as usize]))
        .sum();
    Ok(ProductFunction {
        group: pf.group.clone(),
        p,
        scalar: pf.scalar * root_of_unity(rest % r, r),
        exponents,
    })
}

const TIE_TOL: f64 = 1e-12;

/// `argmax_α |\hat f(α)|`, ties broken towards the lexicographically
/// smallest `α = (α_1, ..., α_n)`.
pub fn best_character_correlation(f: &DenseFunction) -> Result<(Vec<u32>, f64)> {
    let coeffs = fourier_transform(f)?;
    let cube = f.cube();
    let mut best = (0usize, coeffs[0].norm());
    let mut best_alpha = cube.decode(0);
    let mut alpha = vec![0u32; cube.n];
    for (idx, c) in coeffs.iter().enumerate() {
        let v = c.norm();
        if v > best.1 + TIE_TOL || ((v - best.1).abs() <= TIE_TOL && lex_less(&alpha, &best_alpha)) {
            best = (idx, v);
            best_alpha.clone_from(&alpha);
        }
        odometer_step(&mut alpha, cube.p);
    }
    Ok((best_alpha, best.1))
}

fn lex_less(a: &[u32], b: &[u32]) -> bool {
    a.iter().zip(b).find(|(x, y)| x != y).is_some_and(|(x, y)| x < y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AscentOptions {
    pub restarts: u32,
    pub seed: u64,
    pub max_sweeps: u32,
    /// Starting point for restart 0; the other restarts start at random.
    pub initial: Option<ProductFunction>,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self { restarts: 8, seed: 0, max_sweeps: 200, initial: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AscentResult {
    /// Scalar chosen so that `⟨f, P⟩` is real and nonnegative.
    pub product: ProductFunction,
    pub correlation: f64,
    pub restart: u32,
    /// `|⟨f, P⟩|` at the start and after each accepted update of the
    /// winning restart.
    pub trace: Vec<f64>,
    pub finals: Vec<f64>,
}

const ASCENT_MIN_GAIN: f64 = 1e-10;
const STREAM_ASCENT: u32 = 0xA5CE;

/// Coordinate ascent over `P(H)` for `|⟨f, P⟩|`.
pub fn product_ascent_search(f: &DenseFunction, group: &FiniteAbelianGroup, restarts: u32, seed: u64) -> Result<AscentResult> {
    product_ascent_search_with(f, group, &AscentOptions { restarts, seed, ..AscentOptions::default() })
}

pub fn product_ascent_search_with(f: &DenseFunction, group: &FiniteAbelianGroup, opts: &AscentOptions) -> Result<AscentResult> {
    if !f.measure().is_uniform() {
        return Err(Error::Precondition("product search needs the uniform measure".into()));
    }
    if opts.restarts == 0 {
        return Err(Error::InvalidParameter("at least one restart is needed".into()));
    }
    let r = group.order();
    let (p, n) = (f.p(), f.n());
    if let Some(init) = &opts.initial {
        if init.order() != r || init.p != p || init.n() != n {
            return Err(Error::ShapeMismatch("initial product does not match the search".into()));
        }
    }
    let runs: Vec<(Vec<Vec<u32>>, Complex64, Vec<f64>)> = (0..opts.restarts)
        .into_par_iter()
        .map(|k| {
            let start = match (&opts.initial, k) {
                (Some(init), 0) => init.exponents.clone(),
                _ => {
                    let mut rng = stream_rng(opts.seed, stream_id(STREAM_ASCENT, k));
                    (0..n).map(|_| (0..p).map(|_| rng.gen_range(0..r as u32)).collect()).collect()
                }
            };
            ascend(f, r as u32, start, opts.max_sweeps)
        })
        .collect();
    let finals: Vec<f64> = runs.iter().map(|(_, c, _)| c.norm()).collect();
    let mut win = 0;
    for (k, &v) in finals.iter().enumerate() {
        if v > finals[win] {
            win = k;
        }
    }
    let (exponents, corr, trace) = runs.into_iter().nth(win).expect("at least one restart");
    let scalar = if corr.norm() > 0.0 { corr / corr.norm() } else { Complex64::new(1.0, 0.0) };
    let product = ProductFunction { group: group.clone(), p, scalar, exponents };
    Ok(AscentResult { product, correlation: finals[win], restart: win as u32, trace, finals })
}

/// Runs ascent from `exps`; returns the factors, `⟨f, ∏ f_i⟩` and the trace.
fn ascend(f: &DenseFunction, r: u32, mut exps: Vec<Vec<u32>>, max_sweeps: u32) -> (Vec<Vec<u32>>, Complex64, Vec<f64>) {
    let cube = f.cube();
    let (p, n) = (cube.p as usize, cube.n);
    let size = cube.size() as f64;
    let roots: Vec<Complex64> = (0..r).map(|k| root_of_unity(u64::from(k), u64::from(r))).collect();
    // h = f · conj(∏ f_i)
    let fresh = |exps: &Vec<Vec<u32>>| -> Vec<Complex64> {
        let mut digits = vec![0u32; n];
        f.values()
            .iter()
            .map(|&v| {
                let k = digits.iter().zip(exps).map(|(&s, e)| e[s as usize]).sum::<u32>() % r;
                odometer_step(&mut digits, cube.p);
                v * roots[k as usize].conj()
            })
            .collect()
    };
    let mut h = fresh(&exps);
    let mut current = (h.iter().sum::<Complex64>() / size).norm();
    let mut trace = vec![current];
    for _ in 0..max_sweeps {
        let mut improved = false;
        for i in 0..n {
            let stride = cube.stride(i);
            let mut marg = vec![Complex64::new(0.0, 0.0); p];
            for (idx, v) in h.iter().enumerate() {
                marg[(idx / stride) % p] += v;
            }
            let g: Vec<Complex64> = (0..p).map(|s| marg[s] / size * roots[exps[i][s] as usize]).collect();
            let (cand, value) = best_factor(&g, r);
            if value > current + ASCENT_MIN_GAIN {
                let fix: Vec<Complex64> = (0..p)
                    .map(|s| roots[((exps[i][s] + r - cand[s]) % r) as usize])
                    .collect();
                for (idx, v) in h.iter_mut().enumerate() {
                    *v *= fix[(idx / stride) % p];
                }
                exps[i] = cand;
                current = value;
                trace.push(current);
                improved = true;
            }
        }
        if !improved {
            break;
        }
        h = fresh(&exps);
    }
    let corr = h.iter().sum::<Complex64>() / size;
    (exps, corr, trace)
}

/// Nearest root index to `angle`, ties to the smaller argument.
fn nearest_root(angle: f64, r: u32) -> u32 {
    let t = angle.rem_euclid(TAU) * f64::from(r) / TAU;
    let lo = t.floor();
    let k = if t - lo <= 0.5 { lo as u32 } else { lo as u32 + 1 };
    k % r
}

/// Maximizes `|Σ_s conj(ω^{k_s}) g_s|` over `k ∈ [0, r)^p` by sweeping the
/// rotation `θ` across every breakpoint where some rounding changes.
fn best_factor(g: &[Complex64], r: u32) -> (Vec<u32>, f64) {
    let eval = |k: &[u32]| -> f64 {
        g.iter()
            .zip(k)
            .map(|(&gs, &ks)| gs * root_of_unity(u64::from(ks), u64::from(r)).conj())
            .sum::<Complex64>()
            .norm()
    };
    let mut breaks: Vec<f64> = Vec::new();
    for gs in g.iter().filter(|gs| gs.norm() > 0.0) {
        for k in 0..r {
            breaks.push((gs.arg() - (2.0 * f64::from(k) + 1.0) * PI / f64::from(r)).rem_euclid(TAU));
        }
    }
    if breaks.is_empty() {
        let zero = vec![0; g.len()];
        return (zero, 0.0);
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let mut best: Option<(Vec<u32>, f64)> = None;
    for (j, &lo) in breaks.iter().enumerate() {
        let hi = if j + 1 < breaks.len() { breaks[j + 1] } else { breaks[0] + TAU };
        let theta = 0.5 * (lo + hi);
        let k: Vec<u32> = g
            .iter()
            .map(|gs| if gs.norm() > 0.0 { nearest_root(gs.arg() - theta, r) } else { 0 })
            .collect();
        let v = eval(&k);
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((k, v));
        }
    }
    best.expect("nonempty breakpoints")
}

/// An operation in a sequence of restrictions and basis changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Transform {
    Restrict { restriction: Restriction },
    BasisChange { basis: SpecialBasis },
    /// Fixes the trailing `z.len()` coordinates, the `z`-part after a basis
    /// change.
    ZRestriction { z: Vec<u32> },
}

fn trailing_restriction(n: usize, z: &[u32]) -> Result<Restriction> {
    if z.len() > n {
        return Err(Error::ShapeMismatch(format!("z of length {} on {n} coordinates", z.len())));
    }
    let mut slots = vec![None; n - z.len()];
    slots.extend(z.iter().map(|&v| Some(v)));
    Ok(Restriction::new(slots))
}

/// Applies `ops` in order. A basis change followed by a z-restriction is
/// evaluated fibre-wise without building the full `f^♯`.
pub fn apply_transforms(f: &DenseFunction, ops: &[Transform]) -> Result<DenseFunction> {
    let mut cur = f.clone();
    let mut k = 0;
    while k < ops.len() {
        match (&ops[k], ops.get(k + 1)) {
            (Transform::BasisChange { basis }, Some(Transform::ZRestriction { z })) => {
                let view = BasisChangedView::new(basis.clone(), cur)?;
                cur = restrict_z(&view, z)?;
                k += 2;
            }
            (Transform::BasisChange { basis }, _) => {
                cur = apply_basis_change(&cur, basis)?;
                k += 1;
            }
            (Transform::ZRestriction { z }, _) => {
                cur = restrict(&cur, &trailing_restriction(cur.n(), z)?)?;
                k += 1;
            }
            (Transform::Restrict { restriction }, _) => {
                cur = restrict(&cur, restriction)?;
                k += 1;
            }
        }
    }
    Ok(cur)
}

/// Carries a product function through `ops`. Every basis change must be
/// followed by its z-restriction, where closure applies.
pub fn transform_product(pf: &ProductFunction, ops: &[Transform]) -> Result<ProductFunction> {
    let mut cur = pf.clone();
    let mut k = 0;
    while k < ops.len() {
        match (&ops[k], ops.get(k + 1)) {
            (Transform::BasisChange { basis }, Some(Transform::ZRestriction { z })) => {
                cur = product_closure_under_basis_change(&cur, basis, z)?;
                k += 2;
            }
            (Transform::BasisChange { .. }, _) => {
                return Err(Error::Precondition("a product is only closed under a basis change with its z-part fixed".into()));
            }
            (Transform::ZRestriction { z }, _) => {
                cur = cur.restrict(&trailing_restriction(cur.n(), z)?)?;
                k += 1;
            }
            (Transform::Restrict { restriction }, _) => {
                cur = cur.restrict(restriction)?;
                k += 1;
            }
        }
    }
    Ok(cur)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustifyParams {
    pub epsilon: f64,
    pub delta: f64,
    pub beta: f64,
    pub max_iters: usize,
    pub basis_samples: u32,
    pub z_samples: u32,
    pub zprime_samples: u32,
    /// Largest `n'` drawn for a sampled basis.
    pub max_inner_dim: usize,
    pub seed: u64,
}

impl Default for RobustifyParams {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            delta: 0.1,
            beta: 0.01,
            max_iters: 8,
            basis_samples: 32,
            z_samples: 4,
            zprime_samples: 4,
            max_inner_dim: 6,
            seed: 0,
        }
    }
}

impl RobustifyParams {
    fn validate(&self) -> Result<()> {
        for (name, v) in [("epsilon", self.epsilon), ("delta", self.delta), ("beta", self.beta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidParameter(format!("{name} = {v} not in (0,1)")));
            }
        }
        if self.max_iters == 0 || self.basis_samples == 0 || self.z_samples == 0 || self.zprime_samples == 0 {
            return Err(Error::InvalidParameter("iteration and sample counts must be positive".into()));
        }
        if self.max_inner_dim == 0 {
            return Err(Error::InvalidParameter("max_inner_dim must be positive".into()));
        }
        Ok(())
    }

    /// `E[f] − β^{1 − 2j/N}`, the density floor for `f_j`.
    pub fn density_floor(&self, base: f64, j: usize) -> f64 {
        base - self.beta.powf(1.0 - 2.0 * j as f64 / self.max_iters as f64)
    }
}

/// The thresholds demanded by the existence argument, for reference only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConstants {
    pub iterations: f64,
    pub log10_gamma: f64,
    pub formulas: Vec<String>,
}

impl ReferenceConstants {
    pub fn new(params: &RobustifyParams, p: u32, r: u64) -> Self {
        let iterations = 4.0 / (params.delta * params.epsilon);
        let log10_gamma =
            iterations * (-100.0 * r as f64 * f64::from(p).log10() - 10.0 * f64::from(p) * (r as f64).log10());
        Self {
            iterations,
            log10_gamma,
            formulas: vec![
                "N = 4/(δε)".into(),
                "γ = (p^{-100r} r^{-10p})^{4/(δε)}".into(),
                "β₀ = (εδ/8)^{10N}".into(),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustStep {
    pub iteration: usize,
    pub n_before: usize,
    pub n_after: usize,
    pub inner_dim: usize,
    pub correlation_before: f64,
    pub correlation_after: f64,
    pub density_after: f64,
    pub density_floor: f64,
    pub collapse_frequency: f64,
}

#[derive(Clone, Debug)]
pub enum RobustifyOutcome {
    DensityBump { transforms: Vec<Transform>, function: DenseFunction, gain: f64 },
    RobustPair { transforms: Vec<Transform>, function: DenseFunction, product: ProductFunction, correlation: f64 },
    Exhausted,
}

#[derive(Clone, Debug)]
pub struct RobustifyReport {
    pub outcome: RobustifyOutcome,
    pub steps: Vec<RobustStep>,
    /// Sampled bases in the final round, and the largest collapse
    /// frequency among them: the statistical certificate.
    pub bases_sampled: u32,
    pub max_collapse_frequency: f64,
    pub reference: ReferenceConstants,
}

impl RobustifyReport {
    pub fn outcome_name(&self) -> &'static str {
        match self.outcome {
            RobustifyOutcome::DensityBump { .. } => "density_bump",
            RobustifyOutcome::RobustPair { .. } => "robust_pair",
            RobustifyOutcome::Exhausted => "exhausted",
        }
    }
}

/// One sampled `(basis, z, z')` configuration.
struct Config {
    ops: [Transform; 3],
    function: DenseFunction,
    product: ProductFunction,
    correlation: f64,
    density: f64,
}

struct BasisRound {
    inner_dim: usize,
    collapses: u32,
    total: u32,
    configs: Vec<Config>,
}

const STREAM_ROBUST: u32 = 0x0B57;

fn random_point<R: Rng + ?Sized>(rng: &mut R, p: u32, len: usize) -> Vec<u32> {
    (0..len).map(|_| rng.gen_range(0..p)).collect()
}

fn restriction_outside(alive: &[bool], zp: &[u32]) -> Restriction {
    Restriction::new(alive.iter().zip(zp).map(|(&a, &v)| if a { None } else { Some(v) }).collect())
}

fn collapse_count(fz: &DenseFunction, pz: &ProductFunction, alive: &[bool], probes: &[Vec<u32>], limit: f64) -> Result<u32> {
    let mut hits = 0;
    for zp in probes {
        let res = restriction_outside(alive, zp);
        let y = pz.restrict(&res)?.correlation(&restrict(fz, &res)?)?.norm();
        if y <= limit {
            hits += 1;
        }
    }
    Ok(hits)
}

/// Greedy adversary: drops coordinates while the number of probe `z'`
/// with collapsed correlation grows. Depends on `z` only.
fn adversary_set(fz: &DenseFunction, pz: &ProductFunction, probes: &[Vec<u32>], limit: f64) -> Result<Vec<bool>> {
    let m = fz.n();
    let mut alive = vec![true; m];
    let mut score = collapse_count(fz, pz, &alive, probes, limit)?;
    loop {
        let live = alive.iter().filter(|&&a| a).count();
        if live <= 1 {
            break;
        }
        let mut best: Option<(usize, u32)> = None;
        let live_coords: Vec<usize> = (0..m).filter(|&i| alive[i]).collect();
        for i in live_coords {
            alive[i] = false;
            let s = collapse_count(fz, pz, &alive, probes, limit)?;
            alive[i] = true;
            if s > score && best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        match best {
            Some((i, s)) => {
                alive[i] = false;
                score = s;
            }
            None => break,
        }
    }
    Ok(alive)
}

fn sample_round(
    f: &DenseFunction,
    pf: &ProductFunction,
    params: &RobustifyParams,
    iteration: usize,
    sample: u32,
) -> Result<BasisRound> {
    let n = f.n();
    let p = f.p();
    let counter = (iteration as u32) << 20 | sample;
    let mut rng = stream_rng(params.seed, stream_id(STREAM_ROBUST, counter));
    let inner_dim = rng.gen_range(1..=n.min(params.max_inner_dim));
    let basis = SpecialBasis::random(p, n, inner_dim, &mut rng)?;
    let view = BasisChangedView::new(basis.clone(), f.clone())?;
    let limit = params.epsilon / 2.0;
    let mut round = BasisRound { inner_dim, collapses: 0, total: 0, configs: Vec::new() };
    for _ in 0..params.z_samples {
        let z = random_point(&mut rng, p, n - inner_dim);
        let fz = restrict_z(&view, &z)?;
        let pz = product_closure_under_basis_change(pf, &basis, &z)?;
        let probes: Vec<Vec<u32>> = (0..params.zprime_samples).map(|_| random_point(&mut rng, p, inner_dim)).collect();
        let alive = adversary_set(&fz, &pz, &probes, limit)?;
        for _ in 0..params.zprime_samples {
            let zp = random_point(&mut rng, p, inner_dim);
            let res = restriction_outside(&alive, &zp);
            let g = restrict(&fz, &res)?;
            let q = pz.restrict(&res)?;
            let correlation = q.correlation(&g)?.norm();
            round.total += 1;
            if correlation <= limit {
                round.collapses += 1;
            }
            round.configs.push(Config {
                ops: [
                    Transform::BasisChange { basis: basis.clone() },
                    Transform::ZRestriction { z: z.clone() },
                    Transform::Restrict { restriction: res },
                ],
                density: g.mean().re,
                function: g,
                product: q,
                correlation,
            });
        }
    }
    Ok(round)
}

/// The iterative loop behind the robust-correlation dichotomy, run on
/// sampled bases.
///
/// Each round samples bases, `z` and `z'`. A round whose collapse frequency
/// exceeds `δ` must offer a configuration with correlation at least
/// `εδ/4` higher that respects the density floor; it becomes the next pair.
/// If no sampled basis collapses, the current pair is returned as robust;
/// a step whose density reaches `E[f] + β` ends the loop as a bump.
pub fn robustify_correlation(f: &DenseFunction, pf: &ProductFunction, params: &RobustifyParams) -> Result<RobustifyReport> {
    params.validate()?;
    if f.kind() == Kind::Complex || f.values().iter().any(|v| v.im != 0.0 || v.re.abs() > 1.0 + 1e-12) {
        return Err(Error::Precondition("f must be real-valued in [-1, 1]".into()));
    }
    let start = pf.correlation(f)?.norm();
    if start < params.epsilon {
        return Err(Error::Precondition(format!("|⟨f, P⟩| = {start} is below ε = {}", params.epsilon)));
    }
    let base = f.mean().re;
    let reference = ReferenceConstants::new(params, f.p(), pf.order());
    let step_gain = params.epsilon * params.delta / 4.0;
    let mut cur_f = f.clone();
    let mut cur_p = pf.clone();
    let mut ops: Vec<Transform> = Vec::new();
    let mut steps = Vec::new();
    let mut corr = start;
    for j in 1..=params.max_iters {
        let rounds: Vec<BasisRound> = (0..params.basis_samples)
            .into_par_iter()
            .map(|s| sample_round(&cur_f, &cur_p, params, j, s))
            .collect::<Result<_>>()?;
        let floor = params.density_floor(base, j + 1);
        let mut max_freq: f64 = 0.0;
        let mut accepted = None;
        for round in rounds {
            let freq = f64::from(round.collapses) / f64::from(round.total);
            max_freq = max_freq.max(freq);
            if freq > params.delta && accepted.is_none() {
                accepted = round
                    .configs
                    .into_iter()
                    .filter(|c| c.correlation >= corr + step_gain && c.density >= floor)
                    .max_by(|a, b| a.correlation.total_cmp(&b.correlation))
                    .map(|c| (c, round.inner_dim, freq));
            }
        }
        match accepted {
            Some((c, inner_dim, freq)) => {
                if c.density >= base + params.beta {
                    ops.extend(c.ops);
                    return Ok(RobustifyReport {
                        outcome: RobustifyOutcome::DensityBump { transforms: ops, gain: c.density - base, function: c.function },
                        steps,
                        bases_sampled: params.basis_samples,
                        max_collapse_frequency: max_freq,
                        reference,
                    });
                }
                steps.push(RobustStep {
                    iteration: j,
                    n_before: cur_f.n(),
                    n_after: c.function.n(),
                    inner_dim,
                    correlation_before: corr,
                    correlation_after: c.correlation,
                    density_after: c.density,
                    density_floor: floor,
                    collapse_frequency: freq,
                });
                corr = c.correlation;
                ops.extend(c.ops);
                cur_f = c.function;
                cur_p = c.product;
            }
            None if max_freq <= params.delta => {
                return Ok(RobustifyReport {
                    outcome: RobustifyOutcome::RobustPair { transforms: ops, function: cur_f, product: cur_p, correlation: corr },
                    steps,
                    bases_sampled: params.basis_samples,
                    max_collapse_frequency: max_freq,
                    reference,
                });
            }
            None => {
                return Ok(RobustifyReport {
                    outcome: RobustifyOutcome::Exhausted,
                    steps,
                    bases_sampled: params.basis_samples,
                    max_collapse_frequency: max_freq,
                    reference,
                });
            }
        }
    }
    Ok(RobustifyReport {
        outcome: RobustifyOutcome::Exhausted,
        steps,
        bases_sampled: params.basis_samples,
        max_collapse_frequency: 0.0,
        reference,
    })
}

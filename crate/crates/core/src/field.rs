//! Prime fields, the index encoding of `F_p^n`, and finite Abelian groups.
//!
//! Points of `F_p^n` are stored by their little-endian base-`p` index:
//! `index(x) = x_0 + x_1 p + ... + x_{n-1} p^{n-1}`. Coordinate `0` is the
//! least significant digit, so the fibre along any coordinate is a strided
//! slice of a value table. The binary file format depends on this order.

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A prime modulus `p >= 3`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrimeField {
    p: u32,
}

impl PrimeField {
    pub fn new(p: u32) -> Result<Self> {
        if p < 3 || !is_prime(u64::from(p)) {
            return Err(Error::NotPrime(u64::from(p)));
        }
        Ok(Self { p })
    }

    pub fn p(self) -> u32 {
        self.p
    }

    pub fn add(self, a: u32, b: u32) -> u32 {
        ((u64::from(a) + u64::from(b)) % u64::from(self.p)) as u32
    }

    pub fn sub(self, a: u32, b: u32) -> u32 {
        ((u64::from(a) + u64::from(self.p) - u64::from(b) % u64::from(self.p)) % u64::from(self.p)) as u32
    }

    pub fn mul(self, a: u32, b: u32) -> u32 {
        ((u64::from(a) * u64::from(b)) % u64::from(self.p)) as u32
    }

    pub fn neg(self, a: u32) -> u32 {
        (self.p - a % self.p) % self.p
    }

    /// Multiplicative inverse by Fermat; `a` must be non-zero mod `p`.
    pub fn inv(self, a: u32) -> u32 {
        debug_assert!(!a.is_multiple_of(self.p));
        let mut base = u64::from(a % self.p);
        let mut exp = self.p - 2;
        let modulus = u64::from(self.p);
        let mut acc = 1u64;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = acc * base % modulus;
            }
            base = base * base % modulus;
            exp >>= 1;
        }
        acc as u32
    }
}

/// Trial division.
pub fn is_prime(m: u64) -> bool {
    if m < 2 {
        return false;
    }
    let mut d = 2u64;
    while d * d <= m {
        if m.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// The shape of `F_p^n` together with its index encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cube {
    pub p: u32,
    pub n: usize,
}

impl Cube {
    /// Validates that `p` is prime and that `p^n` fits in memory addressing.
    pub fn new(p: u32, n: usize) -> Result<Self> {
        PrimeField::new(p)?;
        let cube = Self { p, n };
        cube.checked_size()
            .ok_or_else(|| Error::InvalidParameter(format!("{p}^{n} overflows the index type")))?;
        Ok(cube)
    }

    fn checked_size(&self) -> Option<usize> {
        (self.p as usize).checked_pow(self.n as u32)
    }

    pub fn size(&self) -> usize {
        (self.p as usize).pow(self.n as u32)
    }

    pub fn field(&self) -> PrimeField {
        PrimeField { p: self.p }
    }

    /// `p^i`, the index stride of coordinate `i`.
    pub fn stride(&self, i: usize) -> usize {
        (self.p as usize).pow(i as u32)
    }

    pub fn encode(&self, coords: &[u32]) -> usize {
        debug_assert_eq!(coords.len(), self.n);
        coords
            .iter()
            .rev()
            .fold(0usize, |acc, &c| acc * self.p as usize + c as usize)
    }

    pub fn decode(&self, index: usize) -> Vec<u32> {
        let mut out = vec![0u32; self.n];
        self.decode_into(index, &mut out);
        out
    }

    pub fn decode_into(&self, mut index: usize, out: &mut [u32]) {
        let p = self.p as usize;
        for c in out.iter_mut() {
            *c = (index % p) as u32;
            index /= p;
        }
    }
}

/// A point of `F_p^n`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FpPoint {
    p: u32,
    coords: Vec<u32>,
}

impl FpPoint {
    pub fn new(p: u32, coords: Vec<u32>) -> Result<Self> {
        PrimeField::new(p)?;
        if let Some(&c) = coords.iter().find(|&&c| c >= p) {
            return Err(Error::OutOfRange { value: u64::from(c), bound: u64::from(p) });
        }
        Ok(Self { p, coords })
    }

    pub fn from_index(p: u32, n: usize, index: usize) -> Result<Self> {
        let cube = Cube::new(p, n)?;
        if index >= cube.size() {
            return Err(Error::OutOfRange { value: index as u64, bound: cube.size() as u64 });
        }
        Ok(Self { p, coords: cube.decode(index) })
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn coords(&self) -> &[u32] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// Little-endian base-`p` index of a point.
pub fn encode_point(x: &FpPoint) -> usize {
    Cube { p: x.p, n: x.coords.len() }.encode(&x.coords)
}

/// A common difference `a ∈ {0,1,2}^n`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RestrictedDifference {
    coords: Vec<u32>,
}

impl RestrictedDifference {
    pub fn new(coords: Vec<u32>) -> Result<Self> {
        if let Some(&c) = coords.iter().find(|&&c| c > 2) {
            return Err(Error::OutOfRange { value: u64::from(c), bound: 3 });
        }
        Ok(Self { coords })
    }

    /// Like [`RestrictedDifference::new`] but rejects the zero difference.
    pub fn nonzero(coords: Vec<u32>) -> Result<Self> {
        let d = Self::new(coords)?;
        if d.is_zero() {
            return Err(Error::InvalidParameter("common difference must be non-zero".into()));
        }
        Ok(d)
    }

    pub fn coords(&self) -> &[u32] {
        &self.coords
    }

    pub fn is_zero(&self) -> bool {
        self.coords.iter().all(|&c| c == 0)
    }

    /// Base-3 little-endian index, used to order witnesses.
    pub fn index(&self) -> usize {
        self.coords.iter().rev().fold(0usize, |acc, &c| acc * 3 + c as usize)
    }
}

/// `Z_{m_1} × ... × Z_{m_k}` with every `m_j >= 2`. The empty product is the
/// trivial group.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FiniteAbelianGroup {
    cyclic_orders: Vec<u64>,
}

impl FiniteAbelianGroup {
    pub fn new(cyclic_orders: Vec<u64>) -> Result<Self> {
        if let Some(&m) = cyclic_orders.iter().find(|&&m| m < 2) {
            return Err(Error::InvalidParameter(format!("cyclic factor of order {m}")));
        }
        Ok(Self { cyclic_orders })
    }

    pub fn cyclic(m: u64) -> Result<Self> {
        Self::new(vec![m])
    }

    pub fn cyclic_orders(&self) -> &[u64] {
        &self.cyclic_orders
    }

    pub fn rank(&self) -> usize {
        self.cyclic_orders.len()
    }

    pub fn order(&self) -> u64 {
        self.cyclic_orders.iter().product()
    }

    pub fn contains(&self, h: &[u64]) -> bool {
        h.len() == self.cyclic_orders.len()
            && h.iter().zip(&self.cyclic_orders).all(|(&x, &m)| x < m)
    }

    fn check(&self, h: &[u64]) -> Result<()> {
        if self.contains(h) {
            Ok(())
        } else {
            Err(Error::GroupMismatch(format!("{h:?} is not an element of Z{:?}", self.cyclic_orders)))
        }
    }

    pub fn zero(&self) -> Vec<u64> {
        vec![0; self.cyclic_orders.len()]
    }

    pub fn add(&self, g: &[u64], h: &[u64]) -> Result<Vec<u64>> {
        self.check(g)?;
        self.check(h)?;
        Ok(g.iter()
            .zip(h)
            .zip(&self.cyclic_orders)
            .map(|((&a, &b), &m)| (a + b) % m)
            .collect())
    }

    pub fn neg(&self, g: &[u64]) -> Result<Vec<u64>> {
        self.check(g)?;
        Ok(g.iter().zip(&self.cyclic_orders).map(|(&a, &m)| (m - a) % m).collect())
    }

    /// Reduces an arbitrary integer vector into the group.
    pub fn reduce(&self, v: &[i64]) -> Result<Vec<u64>> {
        if v.len() != self.rank() {
            return Err(Error::GroupMismatch(format!(
                "vector of length {} for a group of rank {}",
                v.len(),
                self.rank()
            )));
        }
        Ok(v.iter()
            .zip(&self.cyclic_orders)
            .map(|(&a, &m)| a.rem_euclid(m as i64) as u64)
            .collect())
    }

    /// All elements in mixed-radix order, first factor fastest.
    pub fn elements(&self) -> Vec<Vec<u64>> {
        let total = self.order() as usize;
        let mut out = Vec::with_capacity(total);
        let mut cur = self.zero();
        for _ in 0..total {
            out.push(cur.clone());
            for (c, &m) in cur.iter_mut().zip(&self.cyclic_orders) {
                *c += 1;
                if *c < m {
                    break;
                }
                *c = 0;
            }
        }
        out
    }

    /// The dual group: one character per exponent tuple.
    pub fn characters(&self) -> Vec<GroupCharacter> {
        self.elements()
            .into_iter()
            .map(|exponents| GroupCharacter { group: self.clone(), exponents })
            .collect()
    }
}

/// `χ(h) = exp(2πi Σ_j a_j h_j / m_j)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupCharacter {
    group: FiniteAbelianGroup,
    exponents: Vec<u64>,
}

impl GroupCharacter {
    pub fn new(group: FiniteAbelianGroup, exponents: Vec<u64>) -> Result<Self> {
        group.check(&exponents)?;
        Ok(Self { group, exponents })
    }

    pub fn group(&self) -> &FiniteAbelianGroup {
        &self.group
    }

    pub fn exponents(&self) -> &[u64] {
        &self.exponents
    }

    pub fn is_principal(&self) -> bool {
        self.exponents.iter().all(|&a| a == 0)
    }

    pub fn eval(&self, h: &[u64]) -> Result<Complex64> {
        self.group.check(h)?;
        let phase: f64 = self
            .exponents
            .iter()
            .zip(h)
            .zip(self.group.cyclic_orders())
            .map(|((&a, &x), &m)| ((a * x) % m) as f64 / m as f64)
            .sum();
        Ok(Complex64::from_polar(1.0, TAU * phase))
    }
}

/// `char_eval` in free-function form.
pub fn char_eval(chi: &GroupCharacter, h: &[u64]) -> Result<Complex64> {
    chi.eval(h)
}

/// `e^{2πi k / r}`.
pub fn root_of_unity(k: u64, r: u64) -> Complex64 {
    Complex64::from_polar(1.0, TAU * (k % r) as f64 / r as f64)
}

const ROOT_TOL: f64 = 1e-9;

/// Returns the exponent `k ∈ [0, r)` with `v ≈ e^{2πik/r}`, if any.
pub fn root_index(v: Complex64, r: u64) -> Option<u64> {
    let k = ((v.arg() / TAU) * r as f64).round().rem_euclid(r as f64) as u64 % r;
    ((v - root_of_unity(k, r)).norm() <= ROOT_TOL).then_some(k)
}

/// Pointwise `r`-th power test for a function valued in `r`-th roots of
/// unity. Values outside that set are rejected, so valid input always
/// yields `true`.
pub fn char_power_trivial(values: &[Complex64], r: u64) -> Result<bool> {
    if r == 0 {
        return Err(Error::InvalidParameter("group order must be positive".into()));
    }
    for &v in values {
        if (v.powu(r as u32) - 1.0).norm() > ROOT_TOL {
            return Err(Error::NotRootOfUnity { value: format!("{v}"), order: r });
        }
    }
    Ok(true)
}

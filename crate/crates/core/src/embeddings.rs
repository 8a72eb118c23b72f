//! Abelian embeddings of a finite support, decided in exact arithmetic.
//!
//! An embedding of a support `P ⊆ Σ_1 × … × Σ_k` into an Abelian group `H`
//! is a family of maps `σ_i : Σ_i → H` with `Σ_i σ_i(v_i) = 0` for every
//! `v ∈ P`. The unknowns are the values `σ_i(c)`, one column per
//! (coordinate, letter) pair, and every atom contributes one linear relation.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::aps::Support;
use crate::error::{Error, Result};
use crate::field::FiniteAbelianGroup;

/// The integer relation matrix of a support.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationLattice {
    alphabets: Vec<u32>,
    offsets: Vec<usize>,
    rows: Vec<Vec<i64>>,
}

impl RelationLattice {
    pub fn new(support: &Support) -> Result<Self> {
        support.validate()?;
        let mut offsets = Vec::with_capacity(support.arity());
        let mut cols = 0usize;
        for &s in &support.alphabets {
            offsets.push(cols);
            cols += s as usize;
        }
        let rows = support
            .atoms
            .iter()
            .map(|atom| {
                let mut row = vec![0i64; cols];
                for (i, &c) in atom.iter().enumerate() {
                    row[offsets[i] + c as usize] += 1;
                }
                row
            })
            .collect();
        Ok(Self { alphabets: support.alphabets.clone(), offsets, rows })
    }

    pub fn rows(&self) -> &[Vec<i64>] {
        &self.rows
    }

    pub fn cols(&self) -> usize {
        self.alphabets.iter().map(|&s| s as usize).sum()
    }

    pub fn arity(&self) -> usize {
        self.alphabets.len()
    }

    /// Column of letter `c` in coordinate `i`.
    pub fn column(&self, i: usize, c: u32) -> usize {
        self.offsets[i] + c as usize
    }

    /// Dimension of the constant solutions `(c_1, …, c_k)` with `Σ c_i = 0`.
    pub fn trivial_dim(&self) -> usize {
        self.arity() - 1
    }

    fn big_rows(&self) -> Vec<Vec<BigInt>> {
        self.rows.iter().map(|r| r.iter().map(|&v| BigInt::from(v)).collect()).collect()
    }

    /// Splits a flat column vector into per-coordinate tables.
    fn split<T: Clone>(&self, v: &[T]) -> Vec<Vec<T>> {
        self.offsets
            .iter()
            .zip(&self.alphabets)
            .map(|(&o, &s)| v[o..o + s as usize].to_vec())
            .collect()
    }
}

/// Reduced row echelon form over `Q`, computed without fractions: every row
/// is kept primitive and pivot columns are cleared above and below.
fn fraction_free_rref(mut a: Vec<Vec<BigInt>>, cols: usize) -> (Vec<Vec<BigInt>>, Vec<usize>) {
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        let Some(pr) = (r..a.len()).find(|&i| !a[i][c].is_zero()) else {
            continue;
        };
        a.swap(r, pr);
        for i in 0..a.len() {
            if i == r || a[i][c].is_zero() {
                continue;
            }
            let g = a[r][c].gcd(&a[i][c]);
            let mr = &a[i][c] / &g;
            let mi = &a[r][c] / &g;
            let pivot_row = a[r].clone();
            for (x, y) in a[i].iter_mut().zip(&pivot_row) {
                *x = &*x * &mi - y * &mr;
            }
            make_primitive(&mut a[i]);
        }
        make_primitive(&mut a[r]);
        if a[r][c].is_negative() {
            for x in a[r].iter_mut() {
                *x = -&*x;
            }
        }
        pivots.push(c);
        r += 1;
        if r == a.len() {
            break;
        }
    }
    a.truncate(r);
    (a, pivots)
}

fn make_primitive(row: &mut [BigInt]) {
    let g = row.iter().fold(BigInt::zero(), |g, x| g.gcd(x));
    if !g.is_zero() && !g.is_one() {
        for x in row.iter_mut() {
            *x = &*x / &g;
        }
    }
}

/// A basis of the rational kernel with integer entries, one vector per
/// free column.
fn integer_kernel(rref: &[Vec<BigInt>], pivots: &[usize], cols: usize) -> Vec<Vec<BigInt>> {
    let lcm = rref
        .iter()
        .zip(pivots)
        .fold(BigInt::one(), |l, (row, &c)| l.lcm(&row[c]));
    (0..cols)
        .filter(|c| !pivots.contains(c))
        .map(|free| {
            let mut v = vec![BigInt::zero(); cols];
            v[free] = lcm.clone();
            for (row, &pc) in rref.iter().zip(pivots) {
                v[pc] = -(&row[free] * &lcm) / &row[pc];
            }
            make_primitive(&mut v);
            v
        })
        .collect()
}

fn rank_mod(rows: &[Vec<i64>], cols: usize, q: u64) -> usize {
    let mut a: Vec<Vec<u64>> = rows.iter().map(|r| r.iter().map(|&v| v.rem_euclid(q as i64) as u64).collect()).collect();
    let mut rank = 0;
    for c in 0..cols {
        let Some(pr) = (rank..a.len()).find(|&i| a[i][c] != 0) else {
            continue;
        };
        a.swap(rank, pr);
        let inv = pow_mod(a[rank][c], q - 2, q);
        for x in a[rank].iter_mut() {
            *x = mul_mod(*x, inv, q);
        }
        for i in 0..a.len() {
            if i != rank && a[i][c] != 0 {
                let f = a[i][c];
                let pivot_row = a[rank].clone();
                for (x, y) in a[i].iter_mut().zip(&pivot_row) {
                    *x = (*x + q - mul_mod(f, *y, q)) % q;
                }
            }
        }
        rank += 1;
    }
    rank
}

fn mul_mod(a: u64, b: u64, q: u64) -> u64 {
    (u128::from(a) * u128::from(b) % u128::from(q)) as u64
}

fn pow_mod(mut b: u64, mut e: u64, q: u64) -> u64 {
    let mut r = 1;
    while e > 0 {
        if e & 1 == 1 {
            r = mul_mod(r, b, q);
        }
        b = mul_mod(b, b, q);
        e >>= 1;
    }
    r
}

/// Primes used for the modular rank cross-check.
pub const RANK_PRIMES: [u64; 3] = [2_147_483_647, 2_147_483_629, 2_147_483_587];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Target {
    Integers,
    Finite { cyclic_orders: Vec<u64> },
}

/// `maps[i][c]` is the image of letter `c` of coordinate `i`, a vector of
/// length 1 for `Z` and of the group's rank otherwise.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingCertificate {
    pub target: Target,
    pub maps: Vec<Vec<Vec<i64>>>,
    pub trivial: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertificateCheck {
    pub valid: bool,
    pub trivial: bool,
}

/// Checks every relation exactly and classifies triviality.
pub fn verify_certificate(cert: &EmbeddingCertificate, support: &Support) -> Result<CertificateCheck> {
    support.validate()?;
    if cert.maps.len() != support.arity() {
        return Err(Error::ShapeMismatch(format!(
            "certificate has {} maps for arity {}",
            cert.maps.len(),
            support.arity()
        )));
    }
    let orders: Vec<Option<u64>> = match &cert.target {
        Target::Integers => vec![None],
        Target::Finite { cyclic_orders } => {
            FiniteAbelianGroup::new(cyclic_orders.clone())?;
            cyclic_orders.iter().map(|&m| Some(m)).collect()
        }
    };
    for (i, table) in cert.maps.iter().enumerate() {
        if table.len() != support.alphabets[i] as usize {
            return Err(Error::ShapeMismatch(format!("map {i} covers {} letters", table.len())));
        }
        if table.iter().any(|v| v.len() != orders.len()) {
            return Err(Error::ShapeMismatch(format!("map {i} has values of the wrong rank")));
        }
    }
    let reduce = |x: i128, m: Option<u64>| m.map_or(x, |m| x.rem_euclid(i128::from(m)));
    let valid = support.atoms.iter().all(|atom| {
        (0..orders.len()).all(|j| {
            let s: i128 = atom.iter().enumerate().map(|(i, &c)| i128::from(cert.maps[i][c as usize][j])).sum();
            reduce(s, orders[j]) == 0
        })
    });
    let trivial = cert.maps.iter().all(|table| {
        table.iter().all(|v| v.iter().zip(&table[0]).zip(&orders).all(|((&a, &b), &m)| {
            reduce(i128::from(a) - i128::from(b), m) == 0
        }))
    });
    Ok(CertificateCheck { valid, trivial })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ZOutcome {
    Certificate { certificate: EmbeddingCertificate },
    NoneNontrivial,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZEmbeddingReport {
    pub outcome: ZOutcome,
    pub kernel_dim: usize,
    pub trivial_dim: usize,
    pub rational_rank: usize,
    /// `(prime, rank of the relation matrix modulo it)`.
    pub modular_ranks: Vec<(u64, usize)>,
}

impl ZEmbeddingReport {
    pub fn is_none_nontrivial(&self) -> bool {
        matches!(self.outcome, ZOutcome::NoneNontrivial)
    }
}

fn to_i64_table(lattice: &RelationLattice, v: &[BigInt]) -> Result<Vec<Vec<Vec<i64>>>> {
    let flat = v
        .iter()
        .map(|x| x.to_i64().ok_or_else(|| Error::Consistency(format!("certificate entry {x} exceeds 64 bits"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(lattice.split(&flat).into_iter().map(|t| t.into_iter().map(|x| vec![x]).collect()).collect())
}

/// Decides whether the support embeds non-trivially into `(Z, +)`.
///
/// The kernel is computed over `Q`; its dimension is compared with the
/// `k − 1` constant solutions, and the rank is cross-checked modulo
/// [`RANK_PRIMES`] (a modular rank can only drop, never exceed, the
/// rational one).
pub fn z_embedding(support: &Support) -> Result<ZEmbeddingReport> {
    let lattice = RelationLattice::new(support)?;
    let cols = lattice.cols();
    let (rref, pivots) = fraction_free_rref(lattice.big_rows(), cols);
    let kernel = integer_kernel(&rref, &pivots, cols);
    let rows = lattice.big_rows();
    for v in &kernel {
        for row in &rows {
            let s: BigInt = row.iter().zip(v).map(|(a, b)| a * b).sum();
            if !s.is_zero() {
                return Err(Error::Consistency("kernel vector violates a relation".into()));
            }
        }
    }
    let modular_ranks: Vec<(u64, usize)> =
        RANK_PRIMES.iter().map(|&q| (q, rank_mod(lattice.rows(), cols, q))).collect();
    if modular_ranks.iter().any(|&(_, r)| r > pivots.len()) {
        return Err(Error::Consistency("modular rank exceeds rational rank".into()));
    }
    let trivial_dim = lattice.trivial_dim();
    let outcome = if kernel.len() > trivial_dim {
        // some basis vector is non-constant on a block, or the kernel would
        // fit in the constants
        let v = kernel
            .iter()
            .find(|v| lattice.split(v).iter().any(|t| t.iter().any(|x| x != &t[0])))
            .ok_or_else(|| Error::Consistency("kernel exceeds constants but every basis vector is constant".into()))?;
        let certificate = EmbeddingCertificate { target: Target::Integers, maps: to_i64_table(&lattice, v)?, trivial: false };
        let check = verify_certificate(&certificate, support)?;
        if !check.valid || check.trivial {
            return Err(Error::Consistency("emitted Z-certificate failed verification".into()));
        }
        ZOutcome::Certificate { certificate }
    } else {
        ZOutcome::NoneNontrivial
    };
    Ok(ZEmbeddingReport {
        outcome,
        kernel_dim: kernel.len(),
        trivial_dim,
        rational_rank: pivots.len(),
        modular_ranks,
    })
}

/// `D = P · M · Q` with `D` diagonal, `d_1 | d_2 | …`, `P` and `Q` unimodular.
#[derive(Clone, Debug)]
pub struct SmithForm {
    pub diagonal: Vec<BigInt>,
    pub q: Vec<Vec<BigInt>>,
}

pub fn smith_normal_form(m: &[Vec<i64>], cols: usize) -> SmithForm {
    let mut a: Vec<Vec<BigInt>> = m.iter().map(|r| r.iter().map(|&v| BigInt::from(v)).collect()).collect();
    let rows = a.len();
    let mut q: Vec<Vec<BigInt>> =
        (0..cols).map(|i| (0..cols).map(|j| if i == j { BigInt::one() } else { BigInt::zero() }).collect()).collect();
    let swap_cols = |a: &mut Vec<Vec<BigInt>>, q: &mut Vec<Vec<BigInt>>, i: usize, j: usize| {
        for row in a.iter_mut().chain(q.iter_mut()) {
            row.swap(i, j);
        }
    };
    // col_j -= f * col_t in both a and q
    let sub_col = |a: &mut Vec<Vec<BigInt>>, q: &mut Vec<Vec<BigInt>>, j: usize, t: usize, f: &BigInt| {
        for row in a.iter_mut().chain(q.iter_mut()) {
            let v = &row[t] * f;
            row[j] -= v;
        }
    };
    let mut diagonal = Vec::new();
    for t in 0..rows.min(cols) {
        // smallest non-zero entry of the trailing block becomes the pivot
        let mut best: Option<(usize, usize)> = None;
        for i in t..rows {
            for j in t..cols {
                if !a[i][j].is_zero() && best.is_none_or(|(bi, bj)| a[i][j].abs() < a[bi][bj].abs()) {
                    best = Some((i, j));
                }
            }
        }
        let Some((pi, pj)) = best else { break };
        a.swap(t, pi);
        swap_cols(&mut a, &mut q, t, pj);
        loop {
            let mut clean = true;
            for i in (t + 1)..rows {
                if !a[i][t].is_zero() {
                    let f = a[i][t].div_floor(&a[t][t]);
                    let pivot_row = a[t].clone();
                    for (x, y) in a[i].iter_mut().zip(&pivot_row) {
                        *x -= y * &f;
                    }
                    clean &= a[i][t].is_zero();
                }
            }
            for j in (t + 1)..cols {
                if !a[t][j].is_zero() {
                    let f = a[t][j].div_floor(&a[t][t]);
                    sub_col(&mut a, &mut q, j, t, &f);
                    clean &= a[t][j].is_zero();
                }
            }
            if !clean {
                let mut best = (t, t);
                for i in t..rows {
                    if !a[i][t].is_zero() && a[i][t].abs() < a[best.0][best.1].abs() {
                        best = (i, t);
                    }
                }
                for j in t..cols {
                    if !a[t][j].is_zero() && a[t][j].abs() < a[best.0][best.1].abs() {
                        best = (t, j);
                    }
                }
                a.swap(t, best.0);
                swap_cols(&mut a, &mut q, t, best.1);
                continue;
            }
            // enforce divisibility of the trailing block by the pivot
            let bad = ((t + 1)..rows).find(|&i| ((t + 1)..cols).any(|j| !(&a[i][j] % &a[t][t]).is_zero()));
            match bad {
                Some(i) => {
                    let row = a[i].clone();
                    for (x, y) in a[t].iter_mut().zip(&row) {
                        *x += y;
                    }
                }
                None => break,
            }
        }
        diagonal.push(a[t][t].abs());
    }
    SmithForm { diagonal, q }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniversalEmbedding {
    /// The torsion of the solution group, in invariant-factor form.
    pub group: FiniteAbelianGroup,
    /// Rank of the free part of the solution group, trivial solutions included.
    pub free_rank: usize,
    pub trivial_dim: usize,
    /// One generator per cyclic factor, each into `Z_{d_i}`.
    pub generators: Vec<EmbeddingCertificate>,
    /// All generators at once, into the whole group.
    pub combined: EmbeddingCertificate,
}

impl UniversalEmbedding {
    /// The number of embeddings into `Z_m` this group predicts:
    /// `m^{free_rank} · ∏ gcd(d_i, m)`.
    pub fn predicted_count_mod(&self, m: u64) -> u64 {
        let torsion: u64 = self.group.cyclic_orders().iter().map(|&d| d.gcd(&m)).product();
        m.pow(self.free_rank as u32) * torsion
    }
}

/// The finite Abelian group through which every finite-group embedding of
/// the support factors, modulo trivial embeddings.
///
/// With `D = P M Q`, substituting `v = Q w` turns the relations into
/// `d_i w_i = 0`; the generator for factor `i` sends letter column `c` to
/// `Q[c][i] mod d_i`.
pub fn universal_finite_embedding(support: &Support) -> Result<UniversalEmbedding> {
    let lattice = RelationLattice::new(support)?;
    let cols = lattice.cols();
    let snf = smith_normal_form(lattice.rows(), cols);
    let rank = snf.diagonal.len();
    let mut factors = Vec::new();
    let mut generators = Vec::new();
    for (i, d) in snf.diagonal.iter().enumerate() {
        if d <= &BigInt::one() {
            continue;
        }
        let m = d.to_u64().ok_or_else(|| Error::Consistency(format!("invariant factor {d} exceeds 64 bits")))?;
        let flat: Vec<i64> = (0..cols)
            .map(|c| (snf.q[c][i].mod_floor(d)).to_i64().expect("reduced below a 64-bit modulus"))
            .collect();
        let maps = lattice.split(&flat).into_iter().map(|t| t.into_iter().map(|x| vec![x]).collect()).collect();
        let cert = EmbeddingCertificate { target: Target::Finite { cyclic_orders: vec![m] }, maps, trivial: false };
        let check = verify_certificate(&cert, support)?;
        if !check.valid {
            return Err(Error::Consistency(format!("generator into Z_{m} failed verification")));
        }
        let cert = EmbeddingCertificate { trivial: check.trivial, ..cert };
        factors.push(m);
        generators.push(cert);
    }
    let maps = (0..support.arity())
        .map(|i| {
            (0..support.alphabets[i] as usize)
                .map(|c| generators.iter().map(|g| g.maps[i][c][0]).collect())
                .collect()
        })
        .collect();
    let combined = EmbeddingCertificate {
        target: Target::Finite { cyclic_orders: factors.clone() },
        maps,
        trivial: generators.iter().all(|g| g.trivial),
    };
    if !factors.is_empty() {
        let check = verify_certificate(&combined, support)?;
        if !check.valid || check.trivial != combined.trivial {
            return Err(Error::Consistency("combined certificate failed verification".into()));
        }
    }
    Ok(UniversalEmbedding {
        group: FiniteAbelianGroup::new(factors)?,
        free_rank: cols - rank,
        trivial_dim: lattice.trivial_dim(),
        generators,
        combined,
    })
}

/// Number of embeddings into `Z_m`, trivial ones included, by backtracking
/// with forced values.
///
/// The first letter of every coordinate but the last is pinned to zero;
/// each solution is one of `m^{k-1}` translates of a pinned one.
pub fn count_embeddings_mod(support: &Support, m: u64) -> Result<u64> {
    if m < 2 {
        return Err(Error::InvalidParameter(format!("modulus {m} must be at least 2")));
    }
    let lattice = RelationLattice::new(support)?;
    let m = i64::try_from(m).map_err(|_| Error::InvalidParameter("modulus too large".into()))?;
    let rels: Vec<Vec<usize>> = support
        .atoms
        .iter()
        .map(|a| a.iter().enumerate().map(|(i, &c)| lattice.column(i, c)).collect())
        .collect();
    let mut vals = vec![None; lattice.cols()];
    for i in 0..lattice.arity() - 1 {
        vals[lattice.column(i, 0)] = Some(0);
    }
    fn go(vals: &mut Vec<Option<i64>>, rels: &[Vec<usize>], m: i64) -> u64 {
        let mut forced = None;
        for r in rels {
            let mut unknown = None;
            let mut missing = 0;
            let mut known = 0;
            for &c in r {
                match vals[c] {
                    Some(v) => known += v,
                    None => {
                        missing += 1;
                        unknown = Some(c);
                    }
                }
            }
            if missing == 0 && known.rem_euclid(m) != 0 {
                return 0;
            }
            if missing == 1 && forced.is_none() {
                forced = Some((unknown.unwrap(), (-known).rem_euclid(m)));
            }
        }
        if let Some((c, v)) = forced {
            vals[c] = Some(v);
            let out = go(vals, rels, m);
            vals[c] = None;
            return out;
        }
        // branch where the most relations become forcing
        let score = |c: usize| {
            rels.iter()
                .filter(|r| r.contains(&c) && r.iter().filter(|&&d| vals[d].is_none()).count() == 2)
                .count()
        };
        let Some(c) = (0..vals.len()).filter(|&c| vals[c].is_none()).max_by_key(|&c| (score(c), std::cmp::Reverse(c))) else {
            return 1;
        };
        let mut total = 0;
        for x in 0..m {
            vals[c] = Some(x);
            total += go(vals, rels, m);
        }
        vals[c] = None;
        total
    }
    Ok(go(&mut vals, &rels, m) * (m as u64).pow(lattice.arity() as u32 - 1))
}

//! Brute-force reference computations, written without the library's
//! algorithms so they can serve as independent checks.

use std::f64::consts::TAU;

use apfree::Complex64;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

pub fn pow(p: u32, n: usize) -> usize {
    (p as usize).pow(n as u32)
}

pub fn digits(mut index: usize, p: u32, n: usize) -> Vec<u32> {
    let mut out = vec![0; n];
    for d in out.iter_mut() {
        *d = (index % p as usize) as u32;
        index /= p as usize;
    }
    out
}

pub fn index_of(x: &[u32], p: u32) -> usize {
    x.iter().rev().fold(0, |acc, &d| acc * p as usize + d as usize)
}

pub fn omega(k: u64, p: u32) -> Complex64 {
    Complex64::from_polar(1.0, TAU * (k % u64::from(p)) as f64 / f64::from(p))
}

/// Every nonzero `a ∈ {0,1,2}^n`.
pub fn nonzero_differences(n: usize) -> impl Iterator<Item = Vec<u32>> {
    (1..3usize.pow(n as u32)).map(move |i| digits(i, 3, n))
}

fn shift(x: &[u32], a: &[u32], k: u32, p: u32) -> Vec<u32> {
    x.iter().zip(a).map(|(&xi, &ai)| (xi + k * ai) % p).collect()
}

/// Tries every `x ∈ A` against every nonzero restricted difference.
pub fn naive_is_free(members: &[bool], p: u32, n: usize) -> bool {
    let diffs: Vec<Vec<u32>> = nonzero_differences(n).collect();
    (0..members.len()).filter(|&i| members[i]).all(|i| {
        let x = digits(i, p, n);
        diffs.iter().all(|a| !(members[index_of(&shift(&x, a, 1, p), p)] && members[index_of(&shift(&x, a, 2, p), p)]))
    })
}

/// A pruned search for a restricted progression, fast enough for `5^10`.
///
/// Coordinates are fixed from the most significant down; a branch dies as
/// soon as one of the three partial points has no completion in `A`.
pub fn pruned_is_free(members: &[bool], p: u32, n: usize) -> bool {
    let pu = p as usize;
    // occupied[k][q]: some member has index / p^k == q
    let mut occupied = vec![members.to_vec()];
    for k in 1..=n {
        let prev = &occupied[k - 1];
        let next = (0..pow(p, n - k)).map(|q| (0..pu).any(|s| prev[q * pu + s])).collect();
        occupied.push(next);
    }
    fn walk(occ: &[Vec<bool>], p: usize, k: usize, q: [usize; 3], nonzero: bool) -> bool {
        if k == 0 {
            return nonzero;
        }
        let level = &occ[k - 1];
        for s in 0..p {
            let x = q[0] * p + s;
            if !level[x] {
                continue;
            }
            for a in 0..3 {
                let y = q[1] * p + (s + a) % p;
                let z = q[2] * p + (s + 2 * a) % p;
                if level[y] && level[z] && walk(occ, p, k - 1, [x, y, z], nonzero || a != 0) {
                    return true;
                }
            }
        }
        false
    }
    !walk(&occupied, pu, n, [0, 0, 0], false)
}

/// `E_{x, a ∈ {0,1,2}^n}[f(x) g(x+a) h(x+2a)]` term by term.
pub fn naive_lambda(f: &[Complex64], g: &[Complex64], h: &[Complex64], p: u32, n: usize) -> Complex64 {
    let diffs: Vec<Vec<u32>> = (0..3usize.pow(n as u32)).map(|i| digits(i, 3, n)).collect();
    let mut acc = ZERO;
    for (i, &fx) in f.iter().enumerate() {
        let x = digits(i, p, n);
        for a in &diffs {
            acc += fx * g[index_of(&shift(&x, a, 1, p), p)] * h[index_of(&shift(&x, a, 2, p), p)];
        }
    }
    acc / (f.len() * diffs.len()) as f64
}

/// `f̂(α) = p^{-n} Σ_x f(x) ω^{-α·x}` from the definition.
pub fn naive_dft(f: &[Complex64], p: u32, n: usize) -> Vec<Complex64> {
    let size = f.len();
    let roots: Vec<Complex64> = (0..p).map(|k| omega(u64::from(k), p).conj()).collect();
    let points: Vec<Vec<u32>> = (0..size).map(|i| digits(i, p, n)).collect();
    points
        .iter()
        .map(|alpha| {
            let mut acc = ZERO;
            for (x, &fx) in points.iter().zip(f) {
                let dot: u32 = alpha.iter().zip(x).map(|(a, b)| a * b).sum();
                acc += fx * roots[(dot % p) as usize];
            }
            acc / size as f64
        })
        .collect()
}

/// `E_{⊆T} f` for every `T`, indexed by bitmask: the average of `f` over
/// the coordinates outside `T`, built by averaging out one more coordinate
/// of a larger `T` at a time.
pub fn conditional_expectations(f: &[Complex64], p: u32, n: usize) -> Vec<Vec<Complex64>> {
    let full = (1usize << n) - 1;
    let mut out: Vec<Vec<Complex64>> = vec![Vec::new(); full + 1];
    out[full] = f.to_vec();
    for t in (0..full).rev() {
        let i = (0..n).find(|&i| t >> i & 1 == 0).expect("t misses a coordinate");
        let src = &out[t | 1 << i];
        let stride = pow(p, i);
        let avg = (0..f.len())
            .map(|x| {
                let base = x - (x / stride % p as usize) * stride;
                (0..p as usize).map(|s| src[base + s * stride]).sum::<Complex64>() / f64::from(p)
            })
            .collect();
        out[t] = avg;
    }
    out
}

/// `f^{=S} = Σ_{T⊆S} (−1)^{|S∖T|} E_{⊆T} f` for every `S`.
pub fn inclusion_exclusion_parts(f: &[Complex64], p: u32, n: usize) -> Vec<Vec<Complex64>> {
    let cond = conditional_expectations(f, p, n);
    (0..1usize << n)
        .map(|s| {
            let mut part = vec![ZERO; f.len()];
            // submasks of s, including s and 0
            let mut t = s;
            loop {
                let sign = if (s & !t).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                for (v, c) in part.iter_mut().zip(&cond[t]) {
                    *v += c * sign;
                }
                if t == 0 {
                    break;
                }
                t = (t - 1) & s;
            }
            part
        })
        .collect()
}

pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum::<Complex64>() / a.len() as f64
}

pub fn norm(a: &[Complex64]) -> f64 {
    inner(a, a).re.sqrt()
}

pub fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// `(T^{⊗n} g)(x) = E_{a ∈ {0,1,2}^n} g(x + a)`.
pub fn naive_difference_operator(g: &[Complex64], p: u32, n: usize) -> Vec<Complex64> {
    let diffs: Vec<Vec<u32>> = (0..3usize.pow(n as u32)).map(|i| digits(i, 3, n)).collect();
    (0..g.len())
        .map(|i| {
            let x = digits(i, p, n);
            diffs.iter().map(|a| g[index_of(&shift(&x, a, 1, p), p)]).sum::<Complex64>() / diffs.len() as f64
        })
        .collect()
}

/// `max_{t≠0} |1 + ω^t + ω^{2t}| / 3`, the eigenvalues of a circulant.
pub fn circulant_lambda2(p: u32) -> f64 {
    (1..p)
        .map(|t| (0..3u64).map(|a| omega(a * u64::from(t), p)).sum::<Complex64>().norm() / 3.0)
        .fold(0.0, f64::max)
}

/// Rank of an integer matrix modulo a prime by Gaussian elimination.
pub fn rank_mod(rows: &[Vec<i64>], cols: usize, q: i64) -> usize {
    let mut m: Vec<Vec<i64>> = rows.iter().map(|r| r.iter().map(|&v| v.rem_euclid(q)).collect()).collect();
    let inv = |a: i64| {
        let (mut r, mut e, mut b) = (1i64, q - 2, a);
        while e > 0 {
            if e & 1 == 1 {
                r = (r as i128 * b as i128 % q as i128) as i64;
            }
            b = (b as i128 * b as i128 % q as i128) as i64;
            e >>= 1;
        }
        r
    };
    let mut rank = 0;
    for c in 0..cols {
        let Some(piv) = (rank..m.len()).find(|&r| m[r][c] != 0) else { continue };
        m.swap(rank, piv);
        let iv = inv(m[rank][c]);
        for r in 0..m.len() {
            if r != rank && m[r][c] != 0 {
                let factor = (m[r][c] as i128 * iv as i128 % q as i128) as i64;
                for k in 0..cols {
                    let v = (m[r][k] as i128 - factor as i128 * m[rank][k] as i128).rem_euclid(q as i128);
                    m[r][k] = v as i64;
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Embeddings of a support into `Z_m`, counted by depth-first search with
/// the first letter of every coordinate but the last pinned to zero.
pub fn count_embeddings(alphabets: &[u32], atoms: &[Vec<u32>], m: u64) -> u64 {
    let offsets: Vec<usize> = alphabets.iter().scan(0, |acc, &s| {
        let o = *acc;
        *acc += s as usize;
        Some(o)
    }).collect();
    let vars = alphabets.iter().sum::<u32>() as usize;
    let rels: Vec<Vec<usize>> = atoms.iter().map(|a| a.iter().enumerate().map(|(i, &c)| offsets[i] + c as usize).collect()).collect();
    let mut vals: Vec<Option<u64>> = vec![None; vars];
    for &o in &offsets[..offsets.len() - 1] {
        vals[o] = Some(0);
    }
    // fills in letters forced by a relation with one unknown; false on a violated relation
    fn propagate(rels: &[Vec<usize>], vals: &mut [Option<u64>], m: u64) -> bool {
        loop {
            let mut changed = false;
            for r in rels {
                let unknown: Vec<usize> = r.iter().copied().filter(|&v| vals[v].is_none()).collect();
                let known: u64 = r.iter().filter_map(|&v| vals[v]).sum::<u64>() % m;
                match unknown.as_slice() {
                    [] if known != 0 => return false,
                    [v] => {
                        vals[*v] = Some((m - known) % m);
                        changed = true;
                    }
                    _ => {}
                }
            }
            if !changed {
                return true;
            }
        }
    }
    fn dfs(rels: &[Vec<usize>], mut vals: Vec<Option<u64>>, m: u64) -> u64 {
        if !propagate(rels, &mut vals, m) {
            return 0;
        }
        let Some(v) = vals.iter().position(Option::is_none) else { return 1 };
        (0..m)
            .map(|c| {
                let mut next = vals.clone();
                next[v] = Some(c);
                dfs(rels, next, m)
            })
            .sum()
    }
    let pinned = dfs(&rels, vals, m);
    pinned * m.pow(alphabets.len() as u32 - 1)
}

/// Breadth-first connectivity of the bipartite graph between coordinates
/// `i` and `j` of a support.
pub fn bipartite_connected(alphabets: &[u32], atoms: &[Vec<u32>], i: usize, j: usize) -> bool {
    let (si, sj) = (alphabets[i] as usize, alphabets[j] as usize);
    let mut adj = vec![Vec::new(); si + sj];
    for a in atoms {
        let (u, v) = (a[i] as usize, si + a[j] as usize);
        adj[u].push(v);
        adj[v].push(u);
    }
    let mut seen = vec![false; si + sj];
    let mut queue = std::collections::VecDeque::from([0]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen.iter().all(|&s| s)
}

/// Largest free subset by include/exclude search over the points in index
/// order, with forbidden triples listed from the definition.
pub fn max_free_size(p: u32, n: usize) -> usize {
    let size = pow(p, n);
    let mut triples_at: Vec<Vec<[usize; 2]>> = vec![Vec::new(); size];
    for i in 0..size {
        let x = digits(i, p, n);
        for a in nonzero_differences(n) {
            let mut t = [i, index_of(&shift(&x, &a, 1, p), p), index_of(&shift(&x, &a, 2, p), p)];
            t.sort_unstable();
            // each triple is recorded at its largest point
            if !triples_at[t[2]].contains(&[t[0], t[1]]) {
                triples_at[t[2]].push([t[0], t[1]]);
            }
        }
    }
    fn go(k: usize, size: usize, chosen: &mut Vec<bool>, count: usize, best: &mut usize, triples_at: &[Vec<[usize; 2]>]) {
        if count + (size - k) <= *best {
            return;
        }
        if k == size {
            *best = count;
            return;
        }
        if triples_at[k].iter().all(|&[a, b]| !(chosen[a] && chosen[b])) {
            chosen[k] = true;
            go(k + 1, size, chosen, count + 1, best, triples_at);
            chosen[k] = false;
        }
        go(k + 1, size, chosen, count, best, triples_at);
    }
    let mut best = 0;
    go(0, size, &mut vec![false; size], 0, &mut best, &triples_at);
    best
}

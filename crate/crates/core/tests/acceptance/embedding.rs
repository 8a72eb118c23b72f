use apfree::aps::{ap_distribution, pairwise_connected, restricted_ap_distribution, Support};
use apfree::embeddings::{
    count_embeddings_mod, universal_finite_embedding, verify_certificate, z_embedding, EmbeddingCertificate, Target, ZOutcome,
};

use crate::oracle::{bipartite_connected, count_embeddings, rank_mod};
use crate::Outcome;

fn ap_support(p: u32) -> Support {
    restricted_ap_distribution(p).unwrap().support()
}

/// One row `e_{σ(x)} + e_{γ(y)} + e_{φ(z)}` per atom.
fn relation_rows(s: &Support) -> (Vec<Vec<i64>>, usize) {
    let offsets: Vec<usize> = s.alphabets.iter().scan(0, |acc, &a| {
        let o = *acc;
        *acc += a as usize;
        Some(o)
    }).collect();
    let cols = s.alphabets.iter().sum::<u32>() as usize;
    let rows = s
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
    (rows, cols)
}

/// Checks every relation of a certificate directly, component by component.
fn certificate_holds(cert: &EmbeddingCertificate, s: &Support) -> Result<bool, String> {
    let moduli: Vec<Option<i128>> = match &cert.target {
        Target::Integers => vec![None],
        Target::Finite { cyclic_orders } => cyclic_orders.iter().map(|&m| Some(i128::from(m))).collect(),
    };
    ensure!(cert.maps.len() == s.alphabets.len(), "certificate arity {} for a support of arity {}", cert.maps.len(), s.alphabets.len());
    for atom in &s.atoms {
        for (j, m) in moduli.iter().enumerate() {
            let sum: i128 = atom.iter().enumerate().map(|(i, &c)| i128::from(cert.maps[i][c as usize][j])).sum();
            let reduced = m.map_or(sum, |m| sum.rem_euclid(m));
            if reduced != 0 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn is_constant(cert: &EmbeddingCertificate, modulus: impl Fn(usize) -> Option<i128>) -> bool {
    cert.maps.iter().all(|table| {
        table.iter().all(|v| {
            v.iter().zip(&table[0]).enumerate().all(|(j, (&a, &b))| {
                let d = i128::from(a) - i128::from(b);
                modulus(j).map_or(d, |m| d.rem_euclid(m)) == 0
            })
        })
    })
}

pub fn detector() -> Outcome {
    let mut verified = 0;
    // (a) no nontrivial integer embedding of the progression support
    for p in [5u32, 7] {
        let s = ap_support(p);
        let report = z_embedding(&s).map_err(|e| e.to_string())?;
        ensure!(report.is_none_nontrivial(), "p={p}: expected no nontrivial Z-embedding, got {:?}", report.outcome);
        let (rows, cols) = relation_rows(&s);
        let kernel = cols - rank_mod(&rows, cols, 1_000_000_007);
        ensure!(kernel == 2, "p={p}: oracle kernel dimension modulo a prime is {kernel}, constants span 2");
        ensure!(report.kernel_dim == 2, "p={p}: library kernel dimension {}", report.kernel_dim);
    }
    // (b) the universal finite group is Z_5
    let s5 = ap_support(5);
    let universal = universal_finite_embedding(&s5).map_err(|e| e.to_string())?;
    ensure!(universal.group.cyclic_orders() == [5], "universal group for p=5 has invariant factors {:?}", universal.group.cyclic_orders());
    let mut counts = Vec::new();
    for m in 2..=10u64 {
        let oracle = count_embeddings(&s5.alphabets, &s5.atoms, m);
        let library = count_embeddings_mod(&s5, m).map_err(|e| e.to_string())?;
        let predicted = universal.predicted_count_mod(m);
        let from_z5 = m * m * if m % 5 == 0 { 5 } else { 1 };
        ensure!(
            oracle == library && oracle == predicted && oracle == from_z5,
            "Z_{m}: oracle {oracle}, library {library}, predicted {predicted}, Z_5 with translations {from_z5}"
        );
        counts.push(oracle);
    }
    // (c) differences {0, 1} admit an integer embedding
    let s01 = ap_distribution(5, &[0, 1]).unwrap().support();
    let report = z_embedding(&s01).map_err(|e| e.to_string())?;
    let ZOutcome::Certificate { certificate } = &report.outcome else {
        return Err("differences {0,1}: no Z-certificate".into());
    };
    ensure!(certificate_holds(certificate, &s01)?, "differences {{0,1}}: certificate violates a relation");
    ensure!(!is_constant(certificate, |_| None), "differences {{0,1}}: certificate is constant");
    verified += 1;
    // (d) every emitted certificate
    let mut emitted: Vec<(EmbeddingCertificate, Support)> = vec![(certificate.clone(), s01.clone())];
    for s in [ap_support(5), ap_support(7), s01.clone()] {
        let u = universal_finite_embedding(&s).map_err(|e| e.to_string())?;
        emitted.extend(u.generators.iter().map(|g| (g.clone(), s.clone())));
        if !u.group.cyclic_orders().is_empty() {
            emitted.push((u.combined.clone(), s.clone()));
        }
    }
    for (cert, s) in &emitted[1..] {
        ensure!(certificate_holds(cert, s)?, "certificate into {:?} violates a relation", cert.target);
        let orders: Vec<i128> = match &cert.target {
            Target::Finite { cyclic_orders } => cyclic_orders.iter().map(|&m| i128::from(m)).collect(),
            Target::Integers => Vec::new(),
        };
        let trivial = is_constant(cert, |j| orders.get(j).copied());
        ensure!(trivial == cert.trivial, "certificate into {:?} misreports triviality", cert.target);
        verified += 1;
    }
    for (cert, s) in &emitted {
        let check = verify_certificate(cert, s).map_err(|e| e.to_string())?;
        ensure!(check.valid, "library rejects an emitted certificate into {:?}", cert.target);
    }
    Ok(format!(
        "p=5,7 have no nontrivial Z-embedding; universal group Z_5 with Z_m counts {counts:?} for m=2..10; \
         {verified} certificates verified"
    ))
}

pub fn connectivity() -> Outcome {
    for p in [5u32, 7, 11, 13] {
        let s = ap_support(p);
        let pairs = pairwise_connected(&s).map_err(|e| e.to_string())?;
        ensure!(pairs.len() == 3, "p={p}: {} pairs reported", pairs.len());
        for ((i, j), connected) in pairs {
            let oracle = bipartite_connected(&s.alphabets, &s.atoms, i, j);
            ensure!(connected && oracle, "p={p}: pair ({i},{j}) library {connected}, oracle {oracle}");
        }
    }
    Ok("every coordinate pair connected for p = 5, 7, 11, 13".into())
}

use apfree::aps::{extremal_search, PointSet, SearchMode};
use apfree::field::Cube;

use crate::oracle::{max_free_size, naive_is_free};
use crate::Outcome;

const BUDGET: u64 = 50_000_000;

fn check_witness(p: u32, n: usize, set: &[usize], size: usize) -> Result<(), String> {
    let cube = Cube::new(p, n).unwrap();
    let members = PointSet::from_indices(cube, set.iter().copied()).map_err(|e| e.to_string())?;
    ensure!(members.len() == size, "p={p} n={n}: witness has {} points, reported {size}", members.len());
    let bits: Vec<bool> = (0..cube.size()).map(|i| members.contains(i)).collect();
    ensure!(naive_is_free(&bits, p, n), "p={p} n={n}: witness is not free");
    Ok(())
}

pub fn agreement() -> Outcome {
    for (p, n, expected) in [(3u32, 1usize, 2usize), (3, 2, 4), (5, 1, 2)] {
        let r = extremal_search(p, n, SearchMode::Exhaustive, BUDGET).map_err(|e| e.to_string())?;
        ensure!(r.optimal && r.size == expected, "p={p} n={n}: exhaustive gives {} (optimal {}), expected {expected}", r.size, r.optimal);
        check_witness(p, n, &r.set, r.size)?;
    }
    let mut rows = Vec::new();
    // every cube with at most 25 points runs both ways
    for (p, n) in [(3u32, 1usize), (3, 2), (5, 1), (5, 2), (7, 1), (11, 1), (13, 1), (17, 1), (19, 1), (23, 1)] {
        let ex = extremal_search(p, n, SearchMode::Exhaustive, BUDGET).map_err(|e| e.to_string())?;
        let bb = extremal_search(p, n, SearchMode::BranchBound, BUDGET).map_err(|e| e.to_string())?;
        let oracle = max_free_size(p, n);
        ensure!(ex.optimal && bb.optimal, "p={p} n={n}: optimality flags exhaustive {}, branch-and-bound {}", ex.optimal, bb.optimal);
        ensure!(
            ex.size == bb.size && ex.size == oracle,
            "p={p} n={n}: exhaustive {}, branch-and-bound {}, oracle {oracle}",
            ex.size,
            bb.size
        );
        check_witness(p, n, &ex.set, ex.size)?;
        check_witness(p, n, &bb.set, bb.size)?;
        rows.push(format!("{p}^{n}:{oracle}"));
    }
    // beyond the exhaustive limit, branch-and-bound against the oracle
    let bb = extremal_search(3, 3, SearchMode::BranchBound, BUDGET).map_err(|e| e.to_string())?;
    check_witness(3, 3, &bb.set, bb.size)?;
    let oracle = max_free_size(3, 3);
    ensure!(bb.optimal && bb.size == oracle, "3^3: branch-and-bound {} (optimal {}), oracle {oracle}", bb.size, bb.optimal);
    rows.push(format!("3^3:{oracle}"));
    Ok(format!("maxima {}", rows.join(" ")))
}

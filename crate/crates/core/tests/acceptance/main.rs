//! End-to-end acceptance checks, one line of output per criterion.
//!
//! Run with `cargo test -p apfree --test acceptance`. Set `APFREE_BLESS=1`
//! to rewrite the golden increment traces.

/// Turns a failed check into an `Err` carrying the formatted message.
macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        match $cond {
            true => {}
            false => return Err(format!($($msg)+)),
        }
    };
}

mod analysis;
mod counting;
mod embedding;
mod extremal;
mod increment;
mod oracle;
mod restriction;
mod structure;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

const CRITERIA: &[Criterion] = &[
    Criterion { id: 1, name: "free-set count identity", limit: Duration::from_secs(30), run: counting::free_set_identity },
    Criterion { id: 2, name: "dual-path counting", limit: Duration::from_secs(60), run: counting::dual_path },
    Criterion { id: 3, name: "decomposition suite", limit: Duration::from_secs(120), run: analysis::decompositions },
    Criterion { id: 4, name: "spectral bound", limit: Duration::from_secs(120), run: analysis::spectral_bound },
    Criterion { id: 5, name: "embedding detector", limit: Duration::from_secs(5), run: embedding::detector },
    Criterion { id: 6, name: "connectivity", limit: Duration::from_secs(1), run: embedding::connectivity },
    Criterion { id: 7, name: "structure preservation", limit: Duration::from_secs(120), run: structure::preservation },
    Criterion { id: 8, name: "restriction lemmas", limit: Duration::from_secs(120), run: restriction::lemmas },
    Criterion { id: 9, name: "increment regression", limit: Duration::from_secs(300), run: increment::regression },
    Criterion { id: 10, name: "extremal oracle agreement", limit: Duration::from_secs(60), run: extremal::agreement },
];

fn main() -> ExitCode {
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in CRITERIA.iter().filter(|c| filter.is_empty() || filter.contains(&c.id)) {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(_) if elapsed > c.limit => Err(format!("took {:.1}s, limit {}s", elapsed.as_secs_f64(), c.limit.as_secs())),
            o => o,
        };
        let (status, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {:>2} {status} [{:>6.2}s] {}: {detail}", c.id, elapsed.as_secs_f64(), c.name);
        failed += usize::from(outcome.is_err());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

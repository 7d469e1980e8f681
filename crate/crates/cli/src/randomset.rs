use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use condopt::random_sets::{exhaustive_reciprocality, integrand_roundtrip, random_reciprocality, FiniteNormalIntegrand};
use condopt::report::{CheckEntry, CheckReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::output::{out_dir, text_file};

const ROUNDTRIP_BUDGET: u128 = 1_000_000;

/// Exhaustive sweep over small random sets, `instances` seeded random sets
/// and as many random integrand roundtrips. `Ok(false)` on any failure.
pub fn run(seed: u64, instances: usize, out: Option<&Path>) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reports = [
        exhaustive_reciprocality(2, 3, 12)?,
        random_reciprocality(&mut rng, instances, 5, 5)?,
        roundtrips(&mut rng, instances)?,
    ];
    let passed = reports.iter().all(CheckReport::all_passed);
    let mut s = format!("seed={seed}\n");
    for r in &reports {
        write!(s, "{r}")?;
    }
    writeln!(s, "randomset: {}", if passed { "PASS" } else { "FAIL" })?;
    if let Some(dir) = out {
        out_dir(dir)?;
        text_file(&dir.join("randomset.txt"), &s)?;
    }
    print!("{s}");
    Ok(passed)
}

fn roundtrips(rng: &mut ChaCha8Rng, n: usize) -> Result<CheckReport> {
    let mut report = CheckReport::new(format!("normal integrand roundtrips, {n} random tables"));
    let mut entry = CheckEntry::new("epigraph", "integrand -> epigraph selections -> integrand is the identity");
    for _ in 0..n {
        let samples = rng.gen_range(1..=3);
        let points = rng.gen_range(1..=3);
        let table = (0..samples)
            .map(|_| {
                let mut row: Vec<f64> = (0..points)
                    .map(|_| match rng.gen_range(0..4) {
                        0 => f64::INFINITY,
                        k => k as f64 - 2.0,
                    })
                    .collect();
                // at least one finite entry per row
                row[rng.gen_range(0..points)] = rng.gen_range(-1.0..1.0);
                row
            })
            .collect();
        let r = integrand_roundtrip(&FiniteNormalIntegrand::new(table)?, ROUNDTRIP_BUDGET)?;
        let failure = r
            .failures()
            .next()
            .map(|f| format!("{}: {}", f.label, f.witness.clone().unwrap_or_default()));
        match failure {
            None => entry.pass(),
            Some(f) => entry.fail(f),
        }
    }
    report.push(entry);
    Ok(report)
}

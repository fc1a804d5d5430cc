//! Grid search for the simulation's OoD offset `r`.
//!
//! Usage: `calibrate-offset [r_min r_max step [n_seeds]]` (defaults 6 12 0.5 5).
//! Prints the squared AUROC error against the reference anchors per
//! candidate and the minimizer.

use std::time::Instant;

use oodkit::simulation::{calibrate_offset, SimConfig};

fn main() {
    let args: Vec<f64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("numeric argument"))
        .collect();
    let (lo, hi, step) = match args.as_slice() {
        [lo, hi, step, ..] => (*lo, *hi, *step),
        _ => (6.0, 12.0, 0.5),
    };
    let seeds = args.get(3).map_or(5, |&n| n as u64);
    let grid: Vec<f64> = (0..)
        .map(|i| lo + step * i as f64)
        .take_while(|&r| r <= hi + 1e-9)
        .collect();
    let base = SimConfig {
        seeds: (0..seeds).collect(),
        ..SimConfig::default()
    };

    let mut best = (f64::NAN, f64::INFINITY);
    for &r in &grid {
        let start = Instant::now();
        let (_, sse) = calibrate_offset(&base, &[r]).expect("sweep")[0];
        println!("r = {r:5.2}  sse = {sse:10.3}  ({:.1}s)", start.elapsed().as_secs_f64());
        if sse < best.1 {
            best = (r, sse);
        }
    }
    println!("best r = {} (sse {:.3})", best.0, best.1);
}

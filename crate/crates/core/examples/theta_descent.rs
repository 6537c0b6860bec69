//! Descent on the theta-neuron spike cost with the default settings.
//!
//! `cargo run --release --example theta_descent -- [seed]`

use mindisp::costs::spike_cost;
use mindisp::descent::{run_descent, DescentConfig};
use mindisp::models::{theta_model, ThetaParams};
use mindisp::sde::{EnsembleControl, TimeGrid};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map_or(Ok(0), |s| s.parse())?;
    let model = theta_model(ThetaParams::default())?;
    let grid = TimeGrid::per_unit_time(6.0, 20, 5)?;
    let cfg = DescentConfig::new(4, seed);
    let u0 = EnsembleControl::zeros_on(&grid, 4);
    let report = run_descent(&model, &grid, &spike_cost(1)?, &cfg, &u0, |it| {
        eprintln!("{} {:.4}", it.iteration, it.cost);
    })?;
    println!(
        "best {:.4} at iteration {}",
        report.best_cost, report.best_iteration
    );
    Ok(())
}

//! Scratch probe: iteration diagnostics for one stalling solve.

use arblearn::storage::{solve_dispatch, CostCoeffs, StorageSpec, DEFAULT_TOL};

fn main() {
    let spec = StorageSpec {
        horizon: 6,
        power_limit_mw: 0.9168018818404423,
        capacity_mwh: 1.9209871367265796,
        efficiency: 0.8949435457441359,
        initial_soc_mwh: 1.0218701687363358,
        cost: CostCoeffs::zero(),
        step_hours: 1.0,
    };
    let reward = [
        83.65062541164143,
        92.75127436181944,
        51.02615813187459,
        51.026154824995835,
        90.0522999620172,
        57.583387104837605,
    ];
    println!("{:?}", solve_dispatch(&reward, &spec, DEFAULT_TOL).map(|s| s.objective));
}

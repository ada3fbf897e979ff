use std::time::Instant;
use quantcc::alm::{alm_solve, AlmConfig};
use quantcc::problems::make_portfolio;
use quantcc::trust_region::{SampleSchedule, TrParams};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let rho_max: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1e4);
    let seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1);
    let max_outer: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(14);
    let started = Instant::now();
    let (problem, oracle) = make_portfolio(50, 0.05).unwrap();
    let config = AlmConfig {
        validation_samples: 10_000,
        rho_max,
        max_outer,
        trust_region: TrParams {
            samples: SampleSchedule::Fixed(10_000),
            ..TrParams::default()
        },
        seed,
        ..AlmConfig::default()
    };
    let result = alm_solve(&problem, &problem.x0, &config).unwrap();
    for row in &result.outer_trace {
        println!(
            "k={:2} t={:+.5} g0={:+.6} sigma={:.2e} rho={:.0e} inner={:4} delta={:.1e}",
            row.iteration, -row.objective, row.g0, row.sigma, row.rho,
            row.inner_iterations, row.delta_final
        );
    }
    let t = result.x[50];
    let opt = oracle.optimal_objective.unwrap();
    println!("status={:?} time={:.1}s t={t:.5} gap%={:.4}",
        result.status, started.elapsed().as_secs_f64(), (opt - t)/opt*100.0);
}

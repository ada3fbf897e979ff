use nalgebra::DVector;
use quantcc::alm::{alm_solve, AlmConfig, AlmStatus};
use quantcc::merit::MeritParams;
use quantcc::problems::make_portfolio;
use quantcc::trust_region::{tr_minimize, SampleSchedule, TrParams};

fn main() {
    // Reproduce the state around outer iteration 4: run 3 outers, then run
    // the 4th inner solve manually and dump its trace.
    let (problem, _) = make_portfolio(50, 0.05).unwrap();
    let tr = TrParams { samples: SampleSchedule::Fixed(10_000), ..TrParams::default() };
    let config = AlmConfig {
        validation_samples: 10_000,
        max_outer: 3,
        trust_region: tr,
        seed: 1,
        ..AlmConfig::default()
    };
    let r3 = alm_solve(&problem, &problem.x0, &config).unwrap();
    assert_eq!(r3.status, AlmStatus::MaxOuter);
    let x: DVector<f64> = r3.x.clone();
    let params: MeritParams = r3.params.clone();
    println!("rho={} mu0={} |mu|={}", params.rho, params.mu[0], params.mu.norm());
    let mut tr4 = tr;
    tr4.delta_init = 0.1;
    let result = tr_minimize(&problem, &x, &params, 1e-5, 424242, &tr4).unwrap();
    println!("inner iterations: {}", result.trace.len());
    let mut accepts = 0;
    for (i, row) in result.trace.iter().enumerate() {
        if row.accepted { accepts += 1; }
        if i < 80 || i % 50 == 0 {
            println!(
                "it={:4} delta={:.2e} pred={:.2e} ratio={:>8} acc={} |g|={:.2e} merit={:.6}",
                row.iteration, row.delta, row.model_decrease,
                row.ratio.map_or("-".to_string(), |r| format!("{r:.2}")),
                row.accepted as u8, row.grad_norm, row.merit
            );
        }
    }
    println!("accept rate {:.2}", accepts as f64 / result.trace.len() as f64);
}

//! Trains one physics-constrained network on the benchmark population with a
//! shortened schedule and reports test metrics.
use sorbfit::acceptance::Benchmark;
use sorbfit::eval::{point_metrics, physics_metrics, RowContext};
use sorbfit::pinn::{self, ArchSpec, Network, TrainSchedule};

fn main() {
    let b = Benchmark::build(42).expect("benchmark");
    let net = Network::new(&ArchSpec::new(b.train.x.ncols(), 42)).unwrap();
    println!("{} parameters", net.param_count());
    let schedule = TrainSchedule::default().scale_epochs(0.05);
    let out = pinn::train(net, &b.train, &b.val, &schedule, 42).expect("training");
    println!("epochs per phase {:?}, best validation loss {:.5}", out.phase_epochs, out.best_val);
    let pred = out.net.predict(&b.test.x, &b.test.pt).unwrap();
    let pm = point_metrics(&b.test.y, &pred, b.train.x.ncols()).unwrap();
    let pressure = b.test.pressures();
    let temperature = b.test.pt.column(1).to_vec();
    let ctx = RowContext {
        sample_key: &b.test.sample_key,
        lithology: &b.test.lithology,
        pressure: &pressure,
        temperature: &temperature,
    };
    let phys = physics_metrics(&pred, &ctx, &b.qmax).unwrap();
    println!("test r2 {:.4}, rmse {:.4}; negative {:.3}, monotonicity {:.4}", pm.r2, pm.rmse, phys.negative_rate, phys.monotonicity_score.unwrap_or(f64::NAN));
}

//! Trains a small ensemble, calibrates its spread on validation and checks
//! test coverage.
use sorbfit::acceptance::Benchmark;
use sorbfit::pinn::TrainSchedule;
use sorbfit::uq::{calibrate_temperature, coverage, predict_ensemble, train_ensemble, EnsembleSpec};

fn main() {
    let b = Benchmark::build(42).expect("benchmark");
    let mut spec = EnsembleSpec::default();
    spec.members.truncate(3);
    let schedule = TrainSchedule::default().scale_epochs(0.03);
    let nets: Vec<_> = train_ensemble(&spec, &b.train, &b.val, &schedule)
        .expect("ensemble")
        .into_iter()
        .map(|o| o.net)
        .collect();
    let val = predict_ensemble(&nets, &b.val.x, &b.val.pt).unwrap();
    let cal = calibrate_temperature(&val, &b.val.y, 0.95).unwrap();
    let test = predict_ensemble(&nets, &b.test.x, &b.test.pt).unwrap();
    println!("tau {:.3} after {} iterations", cal.tau, cal.iterations);
    for level in [0.68, 0.95, 0.99] {
        println!(
            "  {level}: test coverage {:.3} raw, {:.3} calibrated",
            coverage(&test, &b.test.y, 1.0, level),
            coverage(&test, &b.test.y, cal.tau, level)
        );
    }
}

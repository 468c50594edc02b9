//! Scores a perturbed set of predictions with the full metric battery.
use sorbfit::data::{Lithology, QmaxTable};
use sorbfit::eval::{evaluate, RowContext};
use sorbfit::isotherm::{eval, FunctionalForm};

fn main() {
    let pressures: Vec<f64> = (1..=20).map(|i| i as f64 * 10.0).collect();
    let y: Vec<f64> = pressures.iter().map(|&p| eval(FunctionalForm::Langmuir, &[0.1, 0.03], p, 298.15).unwrap()).collect();
    let pred: Vec<f64> = y.iter().enumerate().map(|(i, q)| q * (1.0 + 0.03 * ((i as f64) * 1.7).sin())).collect();
    let sigma = vec![0.003; y.len()];
    let keys = vec!["shale_001".to_string(); y.len()];
    let liths = vec![Lithology::Shale; y.len()];
    let temps = vec![298.15; y.len()];
    let ctx = RowContext { sample_key: &keys, lithology: &liths, pressure: &pressures, temperature: &temps };
    let report = evaluate(&y, &pred, Some(&sigma), &ctx, &QmaxTable::default(), 1).unwrap();
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
}

//! Fits the individual forms to one noisy Langmuir isotherm, ranks them and
//! bootstraps the winner.
use sorbfit::fit::{bootstrap_ci, fit_forms, select_best_model};
use sorbfit::isotherm::{eval, FunctionalForm, Point};
use sorbfit::seed;
use rand_distr::{Distribution, Normal};

fn main() {
    let mut rng = seed::rng(3);
    let noise = Normal::new(0.0, 0.002).unwrap();
    let t = 298.15;
    let data: Vec<Point> = [1.0, 3.0, 6.0, 10.0, 20.0, 35.0, 50.0, 75.0, 100.0, 140.0, 180.0]
        .iter()
        .map(|&p| {
            let q = eval(FunctionalForm::Langmuir, &[0.12, 0.04], p, t).unwrap();
            Point::new(p, t, q + noise.sample(&mut rng))
        })
        .collect();
    let fits: Vec<_> = fit_forms(&data, &FunctionalForm::INDIVIDUAL, "demo", 42).into_iter().flatten().collect();
    let ranked = select_best_model(&fits).expect("at least one fit");
    println!("{:<24} {:>10} {:>9} {:>8}", "form", "AIC", "r2", "physics");
    for m in &ranked {
        println!("{:<24} {:>10.2} {:>9.5} {:>8.2}", m.form.to_string(), m.aic, m.r2, m.physics.score);
    }
    let best = &ranked[0];
    let cis = bootstrap_ci(&data, best.form, 200, 7).expect("bootstrap");
    println!("\n95% bootstrap intervals for {} ({}/{} refits):", best.form, cis.n_success, cis.n_boot);
    for iv in &cis.intervals {
        println!("  {:<4} {:.5} [{:.5}, {:.5}]", iv.name, iv.estimate, iv.lo, iv.hi);
    }
}

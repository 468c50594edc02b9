//! Lists the form registry and evaluates each form at the centre of its
//! parameter bounds.
use sorbfit::isotherm::{eval, registry, FunctionalForm};

fn main() {
    println!("{:<22} {:<14} {:>12} {:>12}", "form", "category", "q(10 bar)", "q(100 bar)");
    for info in registry() {
        let form: FunctionalForm = info.id.parse().expect("registry ids parse");
        let centre: Vec<f64> = info
            .parameters
            .iter()
            .map(|p| if p.low > 0.0 { (p.low * p.high).sqrt() } else { 0.5 * (p.low + p.high) })
            .collect();
        let q = |p: f64| match eval(form, &centre, p, 298.15) {
            Ok(v) => format!("{v:.5}"),
            Err(e) => e.to_string(),
        };
        println!("{:<22} {:<14} {:>12} {:>12}", info.id, format!("{:?}", info.category), q(10.0), q(100.0));
    }
}

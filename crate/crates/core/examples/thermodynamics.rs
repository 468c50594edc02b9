//! Van't Hoff regression, Gibbs classification and isosteric heat for a
//! Langmuir sorbent with a known enthalpy.
use sorbfit::isotherm::{FunctionalForm, ParamVector};
use sorbfit::thermo::{classify_gibbs, isosteric_heat, vant_hoff};
use sorbfit::GAS_CONSTANT;

fn main() {
    let (dh, ds) = (-12.0e3, -40.0);
    let temps = [273.15, 298.15, 323.15, 348.15];
    let k = |t: f64| (-dh / (GAS_CONSTANT * t) + ds / GAS_CONSTANT).exp();
    let k_by_t: Vec<(f64, f64)> = temps.iter().map(|&t| (t, k(t))).collect();
    let th = vant_hoff(&k_by_t).expect("van't hoff");
    println!("dH {:.4} kJ/mol, dS {:.4} J/(mol K), r2 {:.6}", th.dh, th.ds, th.r2_fit);
    for (t, g) in &th.dg_at {
        println!("  T {t} K: dG {g:.3} kJ/mol ({:?})", classify_gibbs(*g));
    }
    let models: Vec<(f64, ParamVector)> = temps
        .iter()
        .map(|&t| (t, ParamVector::new(FunctionalForm::Langmuir, vec![0.15, k(t)]).unwrap()))
        .collect();
    let curve = isosteric_heat(&models, &[0.01, 0.03, 0.05, 0.07]).expect("isosteric heat");
    print!("{}", curve.to_csv());
}

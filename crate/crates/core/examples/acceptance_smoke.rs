//! Runs the cheap acceptance criteria at smoke scale.
use sorbfit::acceptance::{a10_loss_arithmetic, a1_closed_forms, a4_thermodynamics, a6_gradients, ReproduceConfig, Scale};

fn main() {
    let cfg = ReproduceConfig { seed: 42, scale: Scale::Smoke };
    for r in [a1_closed_forms(&cfg), a4_thermodynamics(&cfg), a6_gradients(&cfg), a10_loss_arithmetic(&cfg)] {
        println!("{}", r.line());
    }
}

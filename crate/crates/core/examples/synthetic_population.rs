//! Generates each preset population and summarises it per lithology.
use std::collections::BTreeMap;

use sorbfit::stats;
use sorbfit::synth::{gen_population, PopulationSpec, PRESETS};

fn main() {
    for name in PRESETS {
        let spec = PopulationSpec { seed: 42, ..PopulationSpec::preset(name).unwrap() };
        let pop = gen_population(&spec).expect("population");
        println!("{name}: {} samples, {} isotherm rows", pop.properties.len(), pop.isotherms.len());
        let mut by_lith: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &pop.isotherms {
            by_lith.entry(r.lithology.to_string()).or_default().push(r.uptake);
        }
        for (l, q) in by_lith {
            let s = stats::sorted_copy(&q);
            println!("  {l:<6} median uptake {:.4}, max {:.4} mmol/g", stats::quantile_sorted(&s, 0.5), s[s.len() - 1]);
        }
    }
}

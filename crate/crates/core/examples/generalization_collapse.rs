//! Individual fits against pooled per-lithology fits as sample heterogeneity grows.
use sorbfit::acceptance::{collapse_level, HETEROGENEITY_LEVELS};

fn main() {
    println!("{:>13} {:>14} {:>15} {:>8}", "heterogeneity", "individual r2", "best pooled r2", "gap");
    for h in HETEROGENEITY_LEVELS {
        let l = collapse_level(h, 10, 42).expect("collapse study");
        println!("{:>13} {:>14.4} {:>15.4} {:>8.3}", h, l.individual_mean_r2, l.pooled_max(), l.gap());
        for (lith, r2) in &l.pooled_r2 {
            println!("{:>30} {:>10.4}", lith, r2);
        }
    }
}

//! Ridge and random-forest baselines with k-fold cross-validation on
//! engineered features.
use sorbfit::baselines::{cross_validate, ModelSpec};
use sorbfit::data::match_samples;
use sorbfit::features::{FeaturePipeline, PipelineConfig};
use sorbfit::synth::{gen_population, PopulationSpec};

fn main() {
    let pop = gen_population(&PopulationSpec { n_per_lithology: 15, ..PopulationSpec::default() }).unwrap();
    let records = match_samples(&pop.properties, &pop.isotherms).unwrap();
    let (pipe, _, _) = FeaturePipeline::fit(&records, &PipelineConfig { select_k: 20, seed: 1 }).unwrap();
    let x: Vec<Vec<f64>> = records.iter().map(|r| pipe.transform(r).unwrap()).collect();
    let y: Vec<f64> = records.iter().map(|r| r.measurement.unwrap().uptake).collect();
    for spec in [ModelSpec::Linear { alpha: 1e-3 }, ModelSpec::Forest { n_estimators: 30, max_depth: 8 }] {
        let cv = cross_validate(spec, &x, &y, 5, 42).unwrap();
        println!("{spec:?}: r2 {:.4} +/- {:.4}, rmse {:.4}", cv.mean_r2, cv.std_r2, cv.mean_rmse);
    }
}

//! Fits the feature pipeline on a training split and transforms a test record.
use sorbfit::data::{match_samples, samples_of, stratified_split, Partition};
use sorbfit::features::{FeaturePipeline, PipelineConfig};
use sorbfit::synth::{gen_population, PopulationSpec};

fn main() {
    let pop = gen_population(&PopulationSpec::default()).unwrap();
    let records = match_samples(&pop.properties, &pop.isotherms).unwrap();
    let split = stratified_split(&samples_of(&records), (0.7, 0.15, 0.15), 42).unwrap();
    let part = |p| records.iter().filter(|r| split.of(&r.sample_key) == Some(p)).cloned().collect::<Vec<_>>();
    let (train, test) = (part(Partition::Train), part(Partition::Test));
    let (pipe, report, _) = FeaturePipeline::fit(&train, &PipelineConfig { select_k: 15, seed: 42 }).unwrap();
    println!(
        "catalog {} columns, {} selected, {} training rows excluded as outliers, {} winsorized",
        report.catalog_size, report.n_selected, report.n_excluded, report.n_winsorized
    );
    let row = pipe.transform(&test[0]).unwrap();
    for (name, v) in pipe.selected_names().iter().zip(&row) {
        println!("  {name:<32} {v:>9.4}");
    }
}

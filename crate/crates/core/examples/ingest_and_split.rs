//! Writes a synthetic population to CSV, ingests it back with a corrupted
//! row, assesses quality and makes the stratified split.
use sorbfit::data::{
    assess_quality, ingest_isotherms, ingest_properties, match_samples, samples_of, stratified_split, write_isotherms,
    write_properties, Partition,
};
use sorbfit::synth::{gen_population, PopulationSpec};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let pop = gen_population(&PopulationSpec::default()).unwrap();
    let iso = dir.path().join("isotherms.csv");
    let props = dir.path().join("properties.csv");
    write_isotherms(&iso, &pop.isotherms).unwrap();
    write_properties(&props, &pop.properties).unwrap();
    let mut text = std::fs::read_to_string(&iso).unwrap();
    text.push_str("coal_001,coal,-5,298.15,0.1\n");
    std::fs::write(&iso, text).unwrap();

    let isos = ingest_isotherms(&iso).unwrap();
    let props = ingest_properties(&props).unwrap();
    for r in &isos.rejects {
        println!("rejected line {}: {}", r.line, r.reason);
    }
    let records = match_samples(&props.records, &isos.records).unwrap();
    let q = assess_quality(&records);
    println!("{} records, {} flagged, {} monotonicity violations", records.len(), q.excluded_count, q.monotonicity_violations.len());
    let split = stratified_split(&samples_of(&records), (0.7, 0.15, 0.15), 42).unwrap();
    for p in [Partition::Train, Partition::Validation, Partition::Test] {
        println!("{p:?}: {} samples", split.partition.values().filter(|x| **x == p).count());
    }
}

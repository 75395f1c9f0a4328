//! Writes a small synthetic dataset and prints its manifest.
//!
//! `cargo run --example synthetic_dataset -- /tmp/synthetic`

use std::path::PathBuf;

use strokepred::synth::{generate_dataset, SyntheticSpec};

fn main() -> strokepred::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("strokepred_synth"));
    let spec = SyntheticSpec { n_cases: 10, ..Default::default() };
    let manifest = generate_dataset(&spec, &out)?;
    println!("{} cases in {}", manifest.cases.len(), out.display());
    for e in &manifest.cases {
        let outcome = if e.success { "reperfused" } else { "not reperfused" };
        println!("  {}  {outcome:<15} lesion {} voxels", e.case_id, e.lesion_voxels);
    }
    println!("train {:?}", manifest.train);
    println!("held out {:?}", manifest.validation);
    Ok(())
}

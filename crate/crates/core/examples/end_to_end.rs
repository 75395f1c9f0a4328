//! The whole pipeline at toy scale: synthetic data, RBM features, predictor, held-out metrics.
//!
//! `cargo run --release --example end_to_end`

use strokepred::metrics::{format_summary, summarize};
use strokepred::pipeline::{run_all, synthesize, PipelineConfig};

fn main() -> strokepred::Result<()> {
    let dir = std::env::temp_dir().join("strokepred_end_to_end");
    let cfg = PipelineConfig::parse_text(&format!(
        "dataset = {}\nout = {}\ncommon_dims = 64,64,8\nsynth_cases = 12\nsynth_dims = 64,64,8\n\
         rbm_hidden = 32\nrbm_lr = 0.001\nrbm_epochs = 3\nrbm_patches_per_case = 200\n\
         rf_trees = 10\nselect_max_rows = 5000\n\
         net_widths = 8,16\nnet_blocks = 1,1\nnet_recurrent_hidden = 4\n\
         epochs = 2\nlr = 0.001\npatch_size = 32\npatches_per_subject = 10\n",
        dir.join("data").display(),
        dir.join("out").display()
    ))?;
    synthesize(&cfg)?;
    let reports = run_all(&cfg)?;
    print!("{}", format_summary(&summarize(&reports)));
    println!("artifacts in {}", dir.join("out").display());
    Ok(())
}

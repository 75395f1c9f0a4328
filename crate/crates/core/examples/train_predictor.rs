//! Trains a small predictor on the six raw maps of synthetic cases and scores a held-out case.

use strokepred::metrics::evaluate_case;
use strokepred::nn::{predict_volume, train_predictor, ChannelNorm, NetworkSpec, PredictorCase, TrainConfig};
use strokepred::pipeline::postprocess_mask;
use strokepred::synth::{generate_case, SyntheticSpec};
use strokepred::volume::{preprocess_case_to, MapKind, Volume};

fn main() -> strokepred::Result<()> {
    let spec = SyntheticSpec::default();
    let mut cases = Vec::new();
    for i in 0..7 {
        let p = preprocess_case_to(&generate_case(&spec, i)?, spec.dims)?;
        cases.push(PredictorCase { case_id: p.case_id, channels: p.maps, gt: p.gt });
    }
    let refs: Vec<&[Volume]> = cases.iter().map(|c| c.channels.as_slice()).collect();
    let norm = ChannelNorm::fit(&refs)?;
    for c in &mut cases {
        norm.apply(&mut c.channels)?;
    }
    let test = cases.pop().expect("seven cases");
    let validation = cases.split_off(5);

    let net = NetworkSpec { in_channels: 6, widths: vec![8, 16], blocks: vec![1, 1], recurrent_hidden: vec![4], recurrent: true };
    let cfg = TrainConfig { patch_size: 32, patches_per_subject: 20, epochs: 3, lr: 1e-3, ..Default::default() };
    let trained = train_predictor(&net, &cases, &validation, &cfg)?;
    for e in &trained.history.epochs {
        println!("epoch {}: train {:.4} validation {:.4}", e.epoch, e.train_loss, e.validation_loss);
    }

    let inputs: Vec<&Volume> = test.channels.iter().collect();
    let prob = predict_volume(&trained.network, &trained.params, &inputs)?;
    let binary: Vec<f32> = prob.data().iter().map(|&p| (p >= 0.5) as u8 as f32).collect();
    let mask = postprocess_mask(&Volume::new(prob.dims(), prob.spacing(), MapKind::Mask, binary)?, 250)?;
    let r = evaluate_case(&test.case_id, &mask, test.gt.as_ref().expect("synthetic gt"))?;
    println!("{}: dice {:.3} precision {:.3} recall {:.3}", r.case_id, r.dice, r.precision.value, r.recall.value);
    Ok(())
}

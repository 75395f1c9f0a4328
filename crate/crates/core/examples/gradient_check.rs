//! Central finite differences against backpropagation through the whole network in f64.

use std::time::Instant;

use strokepred::nn::gradcheck::{max_relative_error, numeric_gradient, rand_tensor, KINK_MARGIN};
use strokepred::nn::{batch_soft_dice, Network, NetworkSpec, Parameters, Tensor};

fn main() -> strokepred::Result<()> {
    let spec = NetworkSpec {
        in_channels: 2,
        widths: vec![4, 8, 16],
        blocks: vec![2, 1, 1],
        recurrent_hidden: vec![4, 2],
        recurrent: true,
    };
    let (net, mut p) = Network::build::<f64>(&spec, 1)?;
    let x = rand_tensor(1, 2, 12, 12, 2);
    net.smooth_point(&mut p, &x, KINK_MARGIN, 3)?;
    let g: Vec<f64> = (0..144).map(|i| (i % 4 == 0) as u8 as f64).collect();

    let start = Instant::now();
    let (y, cache) = net.forward_cached(&p, &x)?;
    let loss = batch_soft_dice(&y.data, &g, 1)?;
    let analytic = net.backward(&p, cache, &Tensor { data: loss.grad, ..y })?;
    let numeric = numeric_gradient(&p.data, |v| {
        let q = Parameters { entries: p.entries.clone(), data: v.to_vec() };
        batch_soft_dice(&net.forward(&q, &x).expect("forward").data, &g, 1).expect("loss").loss
    });
    for e in &p.entries {
        let r = e.range();
        println!("{:<20} {:>6} params  max rel err {:.2e}", e.name, r.len(), max_relative_error(&analytic[r.clone()], &numeric[r]));
    }
    println!(
        "overall {:.2e} over {} parameters in {:.1}s",
        max_relative_error(&analytic, &numeric),
        p.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

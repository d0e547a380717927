//! Folds batchnorm into the convolutions of a spiking and a formal model and
//! measures how far the fused outputs drift from the unfused ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikepose::model::{fuse_bn, S2E2Model, Variant};
use spikepose::numcore::Tensor;

fn frames(steps: usize, n: usize, hw: usize, rng: &mut ChaCha8Rng) -> Vec<Tensor<f32>> {
    (0..steps)
        .map(|_| {
            let mut data = vec![0.0f32; n * 2 * hw * hw];
            for px in 0..n * hw * hw {
                let (b, rest) = (px / (hw * hw), px % (hw * hw));
                match rng.random_range(0..8) {
                    0 => data[b * 2 * hw * hw + rest] = 1.0,
                    1 => data[b * 2 * hw * hw + hw * hw + rest] = 1.0,
                    _ => {}
                }
            }
            Tensor::from_vec(&[n, 2, hw, hw], data).expect("consistent shape")
        })
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for v in [Variant::ReluBn, Variant::PlifCosBn] {
        let mut model = S2E2Model::<f32>::build(&v.config().reduced(4), 1)?;
        // nontrivial running statistics, as after training
        for block in model.blocks_mut() {
            if let Some(bn) = &mut block.bn {
                bn.running_mean.iter_mut().for_each(|m| *m = rng.random_range(-0.2..0.2));
                bn.running_var.iter_mut().for_each(|s| *s = rng.random_range(0.5..1.5));
            }
        }
        model.set_training(false);
        let fused = fuse_bn(&model)?;
        let input = frames(10, 2, 64, &mut rng);
        let a = model.predict_sequence(&input)?;
        let b = fused.predict_sequence(&input)?;
        let worst = a
            .iter()
            .zip(&b)
            .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()))
            .fold(0.0f32, f32::max);
        println!(
            "{:<18} {} blocks, max |fused - unfused| = {worst:.2e}",
            v.config().label(),
            fused.blocks().count()
        );
    }
    Ok(())
}

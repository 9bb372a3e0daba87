// Temporary benchmark for tuning mapper training defaults.

use ptal::mapper::{mapper_loss, mapper_loss_grad, mask_accuracy, simulate_pairs, MapperTrainConfig};
use ptal::mat::Matrix;
use ptal::nn::{adam_step, AdamState};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use std::time::Instant;

#[test]
#[ignore]
fn bench_mapper_training_grid() {
    let t_s = 64;
    let pairs = simulate_pairs(100_000, t_s, 7);
    let holdout = simulate_pairs(10_000, t_s, 7 + 0x0ff5e7);

    for batch in [16usize, 32] {
        let cfg = MapperTrainConfig { t_s, min_accuracy: 0.0, ..Default::default() };
        let mut net = ptal::mapper::mapper_network(&cfg).unwrap();
        let mut adam = AdamState::new(cfg.lr, net.param_count());
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut rng = StdRng::seed_from_u64(99);
        let mut grads = vec![0.0; net.param_count()];
        let start = Instant::now();
        for epoch in 0..100usize {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut nb = 0.0;
            for chunk in order.chunks(batch) {
                let b = chunk.len();
                let mut input = Matrix::zeros(b, 2);
                for (r, &i) in chunk.iter().enumerate() {
                    input.set(r, 0, pairs[i].input.center);
                    input.set(r, 1, pairs[i].input.length);
                }
                let trace = net.forward_trace(&input).unwrap();
                let pred = trace.last().unwrap();
                let mut up = Matrix::zeros(b, t_s);
                for (r, &i) in chunk.iter().enumerate() {
                    total += mapper_loss(pred.row(r), &pairs[i].target);
                    mapper_loss_grad(pred.row(r), &pairs[i].target, up.row_mut(r));
                }
                nb += b as f64;
                let s = 1.0 / b as f64;
                for g in up.data_mut() {
                    *g *= s;
                }
                net.backward_into(&trace, &up, &mut grads).unwrap();
                adam_step(&mut adam, net.params_mut(), &grads).unwrap();
            }
            if (epoch + 1) % 10 == 0 {
                let acc = mask_accuracy(&net, &holdout).unwrap();
                eprintln!(
                    "batch {batch} epoch {}: loss {:.4} acc {:.5} elapsed {:.0}s",
                    epoch + 1,
                    total / nb,
                    acc,
                    start.elapsed().as_secs_f64()
                );
                if acc >= 0.995 {
                    break;
                }
            }
        }
    }
}

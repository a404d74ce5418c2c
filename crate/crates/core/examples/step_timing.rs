use std::sync::Arc;
use std::time::Instant;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uhinet::datapipe::TrainingExample;
use uhinet::numerics::Tensor;
use uhinet::unet::{build_unet, Trainer, UNetConfig};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut t = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
    };
    let ex: Vec<TrainingExample> = (0..32)
        .map(|_| TrainingExample {
            patch_id: 0,
            date: NaiveDate::from_ymd_opt(2020, 7, 1).unwrap(),
            hour: 0,
            spatial: Arc::new(t(&[32, 32, 3])),
            met: t(&[3, 5]),
            target: t(&[32, 32, 1]),
        })
        .collect();
    for base in [32usize, 16, 8] {
        let cfg = UNetConfig { base_channels: base, ..Default::default() };
        let model = build_unet(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut tr = Trainer::new(model);
        let batch: Vec<&TrainingExample> = ex.iter().collect();
        tr.step(&batch).unwrap();
        let start = Instant::now();
        for _ in 0..3 {
            tr.step(&batch).unwrap();
        }
        println!("base {base}: {:.3} s per batch-32 step", start.elapsed().as_secs_f64() / 3.0);
    }
}

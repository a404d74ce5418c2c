//! Central-difference checks of every taped layer op and of the full model,
//! all in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uhinet::numerics::{finite_diff_check, GradTape, Padding, ParamId, Tensor, Var};
use uhinet::unet::{build_unet, UNetConfig, UNetModel};
use uhinet::Result;

pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
const EPS: f64 = 1e-6;

pub struct OpCheck {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub coords: usize,
}

type Build = fn(&mut GradTape<f64>, &[Var]) -> Result<Var>;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn forward(build: Build, params: &[Tensor<f64>], target: Option<&Tensor<f64>>) -> (GradTape<f64>, Var, Var) {
    let mut tape = GradTape::new();
    let vars: Vec<Var> = params
        .iter()
        .enumerate()
        .map(|(i, p)| tape.param(ParamId(i), p.clone()))
        .collect();
    let out = build(&mut tape, &vars).unwrap();
    let t = match target {
        Some(t) => tape.input(t.clone()),
        None => out,
    };
    (tape, out, t)
}

/// Loss is the MSE between the op output and a fixed random target.
fn check(name: &'static str, shapes: &[&[usize]], build: Build, seed: u64) -> OpCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<Tensor<f64>> = shapes.iter().map(|s| random(s, &mut rng)).collect();
    let (tape, out, _) = forward(build, &params, None);
    let target = random(tape.value(out).shape(), &mut rng);

    let (mut tape, out, t) = forward(build, &params, Some(&target));
    let loss = tape.mse(out, t).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<f64> = (0..params.len())
        .flat_map(|i| grads.param(ParamId(i)).unwrap().data().to_vec())
        .collect();
    let flat: Vec<f64> = params.iter().flat_map(|p| p.data().to_vec()).collect();

    let f = |theta: &[f64]| {
        let mut at = 0;
        let ps: Vec<Tensor<f64>> = shapes
            .iter()
            .map(|s| {
                let n: usize = s.iter().product();
                at += n;
                Tensor::new(s.to_vec(), theta[at - n..at].to_vec()).unwrap()
            })
            .collect();
        let (mut tape, out, t) = forward(build, &ps, Some(&target));
        let l = tape.mse(out, t).unwrap();
        tape.value(l).data()[0]
    };
    let report = finite_diff_check(f, &flat, &analytic, EPS, None).unwrap();
    OpCheck {
        name,
        max_rel_error: report.max_rel_error,
        coords: flat.len(),
    }
}

pub fn layer_checks() -> Vec<OpCheck> {
    vec![
        check("conv2d same", &[&[2, 5, 5, 2], &[3, 3, 2, 3], &[3]], |t, v| t.conv2d(v[0], v[1], v[2], 1, Padding::Same), 1),
        check("conv2d valid", &[&[1, 6, 6, 2], &[3, 3, 2, 2], &[2]], |t, v| t.conv2d(v[0], v[1], v[2], 1, Padding::Valid), 2),
        check("conv2d stride 2", &[&[1, 6, 6, 2], &[3, 3, 2, 2], &[2]], |t, v| t.conv2d(v[0], v[1], v[2], 2, Padding::Same), 3),
        check(
            "conv2d transpose stride 2",
            &[&[2, 3, 3, 2], &[2, 2, 2, 3], &[3]],
            |t, v| t.conv2d_transpose(v[0], v[1], v[2], 2),
            4,
        ),
        check(
            "conv2d transpose stride 1",
            &[&[1, 4, 4, 2], &[3, 3, 2, 2], &[2]],
            |t, v| t.conv2d_transpose(v[0], v[1], v[2], 1),
            5,
        ),
        check("relu", &[&[3, 4, 4, 2]], |t, v| Ok(t.relu(v[0])), 6),
        check("max pool", &[&[2, 4, 4, 3]], |t, v| t.max_pool2(v[0]), 7),
        check(
            "dropout",
            &[&[2, 4, 4, 2]],
            |t, v| t.dropout(v[0], 0.3, &mut ChaCha8Rng::seed_from_u64(11), true),
            8,
        ),
        check("dense", &[&[3, 6], &[6, 4], &[4]], |t, v| t.dense(v[0], v[1], v[2]), 9),
        check("concat", &[&[2, 3, 3, 2], &[2, 3, 3, 1]], |t, v| t.concat_last(v[0], v[1]), 10),
        check("reshape", &[&[2, 3, 4]], |t, v| t.reshape(v[0], &[6, 4]), 11),
    ]
}

/// Full model with dropout on, a fixed dropout stream and a sample of
/// coordinates covering every parameter tensor.
pub fn model_check() -> OpCheck {
    let cfg = UNetConfig {
        input_size: 16,
        depth: 2,
        base_channels: 4,
        dropout_rate: 0.2,
        batch_size: 2,
        ..UNetConfig::default()
    };
    let mut model = build_unet(cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap().cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for p in model.params_mut() {
        if p.rank() == 1 {
            p.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
    }
    let x = random(&[2, 16, 16, 3], &mut rng);
    let m = random(&[2, 3, 5], &mut rng);
    let t = random(&[2, 16, 16, 1], &mut rng);
    let (_, grads) = model.loss_and_grads(&x, &m, &t, true, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
    let flat: Vec<f64> = model.params().iter().flat_map(|p| p.data().to_vec()).collect();
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
    let shapes: Vec<Vec<usize>> = model.params().iter().map(|p| p.shape().to_vec()).collect();
    let mut coords = Vec::new();
    let mut start = 0;
    for p in model.params() {
        coords.push(start + rng.random_range(0..p.len()));
        start += p.len();
    }
    while coords.len() < 60 {
        coords.push(rng.random_range(0..flat.len()));
    }
    let loss = |theta: &[f64]| {
        let mut at = 0;
        let params = shapes
            .iter()
            .map(|s| {
                let n: usize = s.iter().product();
                at += n;
                Tensor::new(s.clone(), theta[at - n..at].to_vec()).unwrap()
            })
            .collect();
        let probe = UNetModel::from_params(model.config().clone(), params).unwrap();
        probe.loss_and_grads(&x, &m, &t, true, &mut ChaCha8Rng::seed_from_u64(77)).unwrap().0
    };
    let report = finite_diff_check(loss, &flat, &analytic, EPS, Some(&coords)).unwrap();
    OpCheck {
        name: "full model",
        max_rel_error: report.max_rel_error,
        coords: coords.len(),
    }
}

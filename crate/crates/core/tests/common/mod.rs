#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wavecast::autograd::{Result, Tape, Tensor, Var};
use wavecast::transformer::{TransformerConfig, TransformerModel};

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Magnitude below which the relative error is measured against this floor
/// instead, so that gradients that are zero up to rounding still compare.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Uniform on `[-hi, -lo] ∪ [lo, hi]`; keeps samples away from kinks at 0.
pub fn away_from_zero(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(lo..hi);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Central difference of `f` at `x` along coordinate `i`.
pub fn central_diff(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
    let mut xp = x.to_vec();
    xp[i] = x[i] + FD_STEP;
    let up = f(&xp);
    xp[i] = x[i] - FD_STEP;
    let down = f(&xp);
    (up - down) / (2.0 * FD_STEP)
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Panics with the worst coordinate if any relative error exceeds the tolerance.
pub fn assert_grad_close(what: &str, analytic: &[f64], numeric: &[f64]) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: gradient length");
    let worst = analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .map(|(i, (&a, &n))| (i, a, n, rel_err(a, n)))
        .max_by(|x, y| x.3.total_cmp(&y.3));
    if let Some((i, a, n, e)) = worst {
        assert!(e <= REL_TOL, "{what}: coordinate {i}: analytic {a} vs numeric {n} (rel {e:e})");
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub const POINTS: u64 = 20;

/// Scalar probe `sum(op(inputs) * w)` with fixed random `w`, so every output
/// element contributes a distinct weight to the gradient.
fn probe(build: &impl Fn(&mut Tape, &[Var]) -> Result<Var>, inputs: &[Tensor], w: Option<&Tensor>) -> (Tape, Var, Vec<Var>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars).expect("forward");
    let loss = match w {
        Some(w) => {
            let wv = tape.constant(w.clone());
            let m = tape.mul(out, wv).expect("probe weights");
            tape.sum(m).expect("sum")
        }
        None => out,
    };
    (tape, loss, vars)
}

pub fn check_op(
    name: &str,
    inputs: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) {
    for point in 0..POINTS {
        let mut r = rng(point * 7919 + name.len() as u64);
        let xs = inputs(&mut r);
        let shape = {
            let (tape, out, _) = probe(&build, &xs, None);
            tape.value(out).shape().to_vec()
        };
        let w = random_tensor(&mut r, &shape, -1.0, 1.0);

        let (mut tape, loss, vars) = probe(&build, &xs, Some(&w));
        let grads = tape.backward(loss).expect("backward");
        for (k, x) in xs.iter().enumerate() {
            let analytic = grads.get_or_zero(&tape, vars[k]);
            let mut f = |data: &[f64]| {
                let mut moved = xs.clone();
                moved[k] = Tensor::new(x.shape(), data.to_vec()).unwrap();
                let (tape, loss, _) = probe(&build, &moved, Some(&w));
                tape.value(loss).item()
            };
            let numeric: Vec<f64> = (0..x.len()).map(|i| central_diff(&mut f, x.data(), i)).collect();
            assert_grad_close(&format!("{name} point {point} input {k}"), &analytic, &numeric);
        }
    }
}

/// Every parameter tensor of the default model, dropout off, at `POINTS`
/// random initialisations.
pub fn check_full_transformer() {
    let config = TransformerConfig::default();
    for point in 0..POINTS {
        let mut r = rng(10_000 + point);
        let mut model = TransformerModel::new(config.clone(), point).unwrap();
        let windows: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..config.input_len).map(|_| r.random_range(-2.0..2.0)).collect())
            .collect();
        let windows: Vec<&[f64]> = windows.iter().map(Vec::as_slice).collect();
        let targets: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();

        let analytic = model.gradients(&windows, &targets, false).unwrap();
        let ids: Vec<_> = model.params().ids().collect();
        for (pi, id) in ids.into_iter().enumerate() {
            let n = model.params().value(id).len();
            // every parameter tensor, a few random coordinates of each
            let coords: Vec<usize> = if n <= 6 { (0..n).collect() } else { (0..6).map(|_| r.random_range(0..n)).collect() };
            let mut a = Vec::new();
            let mut num = Vec::new();
            for i in coords {
                let x0 = model.params().value(id).data()[i];
                let mut loss_at = |x: f64| {
                    model.params_mut().value_mut(id).data_mut()[i] = x;
                    let (tape, loss) = model.loss_tape(&windows, &targets, false).unwrap();
                    tape.value(loss).item()
                };
                let d = (loss_at(x0 + FD_STEP) - loss_at(x0 - FD_STEP)) / (2.0 * FD_STEP);
                loss_at(x0);
                a.push(analytic[pi][i]);
                num.push(d);
            }
            let name = model.params().get(id).name.clone();
            assert_grad_close(&format!("model point {point} param {name}"), &a, &num);
        }
    }
}

pub fn grad_matmul() {
    check_op(
        "matmul",
        |r| vec![random_tensor(r, &[3, 4], -1.0, 1.0), random_tensor(r, &[4, 2], -1.0, 1.0)],
        |t, v| t.matmul(v[0], v[1]),
    );
}

pub fn grad_elementwise() {
    let two = |r: &mut ChaCha8Rng| vec![random_tensor(r, &[2, 3], -2.0, 2.0), random_tensor(r, &[2, 3], -2.0, 2.0)];
    check_op("add", two, |t, v| t.add(v[0], v[1]));
    check_op("mul", two, |t, v| t.mul(v[0], v[1]));
    check_op("scale", |r| vec![random_tensor(r, &[5], -2.0, 2.0)], |t, v| t.scale(v[0], -0.37));
    check_op("relu", |r| vec![away_from_zero(r, &[4, 3], 0.05, 2.0)], |t, v| t.relu(v[0]));
}

pub fn grad_row_broadcasts() {
    let inputs = |r: &mut ChaCha8Rng| vec![random_tensor(r, &[4, 3], -2.0, 2.0), random_tensor(r, &[3], -2.0, 2.0)];
    check_op("add_row", inputs, |t, v| t.add_row(v[0], v[1]));
    check_op("mul_row", inputs, |t, v| t.mul_row(v[0], v[1]));
    let lin = |r: &mut ChaCha8Rng| {
        vec![
            random_tensor(r, &[5, 3], -1.0, 1.0),
            random_tensor(r, &[3, 2], -1.0, 1.0),
            random_tensor(r, &[2], -1.0, 1.0),
        ]
    };
    check_op("linear", lin, |t, v| t.linear(v[0], v[1], v[2]));
}

pub fn grad_softmax_and_layer_norm() {
    for axis in [0, 1] {
        check_op("softmax", |r| vec![random_tensor(r, &[3, 4], -3.0, 3.0)], move |t, v| t.softmax(v[0], axis));
    }
    check_op("layer_norm", |r| vec![random_tensor(r, &[3, 5], -2.0, 2.0)], |t, v| t.layer_norm(v[0], 1, 1e-5));
    check_op("layer_norm axis 0", |r| vec![random_tensor(r, &[4, 2], -2.0, 2.0)], |t, v| {
        t.layer_norm(v[0], 0, 1e-5)
    });
}

pub fn grad_dropout_with_fixed_mask() {
    check_op("dropout", |r| vec![random_tensor(r, &[6, 4], -2.0, 2.0)], |t, v| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(5);
        t.dropout(v[0], 0.3, true, &mut mask_rng)
    });
}

pub fn grad_shape_ops() {
    let pair = |r: &mut ChaCha8Rng| vec![random_tensor(r, &[2, 3], -1.0, 1.0), random_tensor(r, &[2, 3], -1.0, 1.0)];
    check_op("concat rows", pair, |t, v| t.concat(v, 0));
    check_op("concat cols", pair, |t, v| t.concat(v, 1));
    check_op("transpose", |r| vec![random_tensor(r, &[2, 5], -1.0, 1.0)], |t, v| t.transpose(v[0]));
    check_op("reshape", |r| vec![random_tensor(r, &[2, 6], -1.0, 1.0)], |t, v| t.reshape(v[0], &[3, 4]));
    check_op("sum", |r| vec![random_tensor(r, &[3, 3], -1.0, 1.0)], |t, v| t.sum(v[0]));
}

pub fn grad_mse_loss() {
    let target = Tensor::new(&[4, 1], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
    check_op("mse", |r| vec![random_tensor(r, &[4, 1], -2.0, 2.0)], move |t, v| t.mse_loss(v[0], &target));
}

pub fn grad_fused_attention() {
    let qkv = |lq: usize, lk: usize| {
        move |r: &mut ChaCha8Rng| {
            vec![
                random_tensor(r, &[2 * lq, 4], -1.5, 1.5),
                random_tensor(r, &[2 * lk, 4], -1.5, 1.5),
                random_tensor(r, &[2 * lk, 4], -1.5, 1.5),
            ]
        }
    };
    check_op("attention", qkv(3, 5), |t, v| t.multi_head_attention(v[0], v[1], v[2], 2, 2, None));
    let visible: Vec<bool> = (0..3 * 5).map(|i| (i % 5) <= (i / 5) + 1).collect();
    check_op("masked attention", qkv(3, 5), move |t, v| {
        t.multi_head_attention(v[0], v[1], v[2], 2, 2, Some(&visible))
    });
    check_op("self attention one head", qkv(4, 4), |t, v| t.multi_head_attention(v[0], v[0], v[2], 2, 1, None));
}

/// Every tape op against central differences.
pub fn check_every_op() {
    grad_matmul();
    grad_elementwise();
    grad_row_broadcasts();
    grad_softmax_and_layer_norm();
    grad_dropout_with_fixed_mask();
    grad_shape_ops();
    grad_mse_loss();
    grad_fused_attention();
}

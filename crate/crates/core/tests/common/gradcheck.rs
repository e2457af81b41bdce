//! Central finite-difference oracle for tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajcql::autodiff::{Tape, Tensor, TensorError, Var};

pub const FD_STEP: f64 = 1e-5;

pub type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Largest relative error ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖) over all inputs.
pub fn max_relative_error(inputs: &[Tensor], build: &Build) -> f64 {
    let mut tape = Tape::with_finite_checks(true);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = build(&mut tape, &vars).expect("forward");
    let grads = tape.backward(loss).expect("backward");

    let eval = |values: &[Tensor]| -> f64 {
        let mut t = Tape::with_finite_checks(true);
        let vs: Vec<Var> = values.iter().map(|v| t.input(v.clone())).collect();
        let l = build(&mut t, &vs).expect("forward");
        t.value(l).item()
    };

    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = grads
            .get(vars[i])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let mut numeric = vec![0.0; input.numel()];
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            numeric[j] = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = norm(&analytic).max(norm(&numeric)).max(1e-8);
        worst = worst.max(diff / scale);
    }
    worst
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Reduces an arbitrary-shape output to a scalar with fixed random weights,
/// so every output element contributes a distinct cotangent.
pub fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var, TensorError> {
    let shape = tape.value(y).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random_tensor(&mut rng, &shape, -1.0, 1.0));
    let p = tape.mul(y, w)?;
    tape.sum_all(p)
}

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub build: Box<Build>,
}

fn case(name: &'static str, inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Result<Var, TensorError> + 'static) -> OpCase {
    OpCase {
        name,
        inputs,
        build: Box::new(build),
    }
}

/// Every differentiable op on three random configurations each.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    let shapes = [[2usize, 3], [4, 5], [3, 9]];
    for (c, s) in shapes.iter().enumerate() {
        let r = &mut rng;
        let sd = seed + c as u64;
        let a = random_tensor(r, s, -2.0, 2.0);
        let b = random_tensor(r, s, -2.0, 2.0);
        cases.push(case("add", vec![a.clone(), b.clone()], move |t, v| {
            let y = t.add(v[0], v[1])?;
            weighted_sum(t, y, sd)
        }));
        cases.push(case("sub", vec![a.clone(), b.clone()], move |t, v| {
            let y = t.sub(v[0], v[1])?;
            weighted_sum(t, y, sd)
        }));
        cases.push(case("mul", vec![a.clone(), b.clone()], move |t, v| {
            let y = t.mul(v[0], v[1])?;
            weighted_sum(t, y, sd)
        }));
        cases.push(case("minimum", vec![a.clone(), b.clone()], move |t, v| {
            let y = t.minimum(v[0], v[1])?;
            weighted_sum(t, y, sd)
        }));
        cases.push(case("scale", vec![a.clone()], move |t, v| {
            let y = t.scale(v[0], -1.7)?;
            let y = t.add_scalar(y, 0.3)?;
            weighted_sum(t, y, sd)
        }));
        // keep away from the kink at zero
        let shifted = Tensor::new(
            a.shape().to_vec(),
            a.data().iter().map(|x| if x.abs() < 0.05 { x + 0.2 } else { *x }).collect(),
        )
        .unwrap();
        cases.push(case("relu", vec![shifted], move |t, v| {
            let y = t.relu(v[0])?;
            weighted_sum(t, y, sd)
        }));
        cases.push(case("tanh", vec![a.clone()], move |t, v| {
            let y = t.tanh(v[0])?;
            weighted_sum(t, y, sd)
        }));
        cases.push(case("sigmoid", vec![a.clone()], move |t, v| {
            let y = t.sigmoid(v[0])?;
            weighted_sum(t, y, sd)
        }));
        cases.push(case("exp", vec![a.clone()], move |t, v| {
            let y = t.exp(v[0])?;
            weighted_sum(t, y, sd)
        }));
        cases.push(case("log", vec![random_tensor(r, s, 0.5, 3.0)], move |t, v| {
            let y = t.log(v[0])?;
            weighted_sum(t, y, sd)
        }));
        cases.push(case("add_row", vec![a.clone(), random_tensor(r, &[1, s[1]], -1.0, 1.0)], move |t, v| {
            let y = t.add_row(v[0], v[1])?;
            weighted_sum(t, y, sd)
        }));
        cases.push(case("matmul", vec![a.clone(), random_tensor(r, &[s[1], 4], -1.0, 1.0)], move |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y, sd)
        }));
        cases.push(case("transpose", vec![a.clone()], move |t, v| {
            let y = t.transpose(v[0])?;
            weighted_sum(t, y, sd)
        }));
        let (rows, cols) = (s[0], s[1]);
        cases.push(case("reshape", vec![a.clone()], move |t, v| {
            let y = t.reshape(v[0], vec![cols, rows])?;
            weighted_sum(t, y, sd)
        }));
        cases.push(case("softmax", vec![a.clone()], move |t, v| {
            let y = t.softmax(v[0])?;
            weighted_sum(t, y, sd)
        }));
        cases.push(case("log_softmax", vec![a.clone()], move |t, v| {
            let y = t.log_softmax(v[0])?;
            weighted_sum(t, y, sd)
        }));
        let mask: Vec<bool> = (0..cols).map(|j| j % 3 != 1).collect();
        cases.push(case("masked_softmax", vec![a.clone()], move |t, v| {
            let y = t.masked_softmax(v[0], &mask)?;
            weighted_sum(t, y, sd)
        }));
        cases.push(case(
            "layer_norm",
            vec![a.clone(), random_tensor(r, &[1, cols], 0.5, 1.5), random_tensor(r, &[1, cols], -0.5, 0.5)],
            move |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
                weighted_sum(t, y, sd)
            },
        ));
        cases.push(case("logsumexp", vec![a.clone()], move |t, v| {
            let y = t.logsumexp(v[0])?;
            weighted_sum(t, y, sd)
        }));
        let idx: Vec<usize> = (0..rows).map(|i| (i * 7 + 1) % cols).collect();
        cases.push(case("gather", vec![a.clone()], move |t, v| {
            let y = t.gather(v[0], &idx)?;
            weighted_sum(t, y, sd)
        }));
        cases.push(case("concat_cols", vec![a.clone(), random_tensor(r, &[rows, 2], -1.0, 1.0)], move |t, v| {
            let y = t.concat_cols(&[v[0], v[1], v[0]])?;
            weighted_sum(t, y, sd)
        }));
        cases.push(case("slice_cols", vec![a.clone()], move |t, v| {
            let y = t.slice_cols(v[0], 1, cols - 1)?;
            weighted_sum(t, y, sd)
        }));
        let sel: Vec<usize> = vec![rows - 1, 0, rows - 1];
        cases.push(case("select_rows", vec![a.clone()], move |t, v| {
            let y = t.select_rows(v[0], &sel)?;
            weighted_sum(t, y, sd)
        }));
        cases.push(case("concat_rows", vec![a.clone(), b.clone()], move |t, v| {
            let y = t.concat_rows(&[v[0], v[1]])?;
            weighted_sum(t, y, sd)
        }));
        cases.push(case("sum_all", vec![a.clone()], move |t, v| {
            let y = t.sum_all(v[0])?;
            t.mul(y, y)
        }));
        cases.push(case("mean_all", vec![a.clone()], move |t, v| {
            let y = t.mean_all(v[0])?;
            t.mul(y, y)
        }));
        cases.push(case("sum_rows", vec![a.clone()], move |t, v| {
            let y = t.sum_rows(v[0])?;
            weighted_sum(t, y, sd)
        }));
        let targets: Vec<usize> = (0..rows).map(|i| (i * 5 + 2) % cols).collect();
        cases.push(case("cross_entropy", vec![a.clone()], move |t, v| t.cross_entropy(v[0], &targets)));
        cases.push(case("mse", vec![a.clone(), b.clone()], move |t, v| t.mse(v[0], v[1])));
    }

    let conv_cfgs = [
        // (batch, in_ch, hw, out_ch, kernel, stride, padding)
        (1usize, 1usize, 5usize, 2usize, 3usize, 1usize, 0usize),
        (2, 3, 6, 2, 3, 2, 1),
        (2, 4, 8, 3, 3, 2, 1),
    ];
    for (c, &(n, ci, hw, co, k, st, pad)) in conv_cfgs.iter().enumerate() {
        let sd = seed + 100 + c as u64;
        let x = random_tensor(&mut rng, &[n, ci, hw, hw], -1.0, 1.0);
        let w = random_tensor(&mut rng, &[co, ci, k, k], -0.5, 0.5);
        let b = random_tensor(&mut rng, &[1, co], -0.5, 0.5);
        cases.push(case("conv2d", vec![x.clone(), w, b], move |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], st, pad)?;
            weighted_sum(t, y, sd)
        }));
        // distinct values keep the argmax away from ties
        let distinct = Tensor::new(
            x.shape().to_vec(),
            (0..x.numel()).map(|i| ((i * 37) % 101) as f64 * 0.05 - 2.0).collect(),
        )
        .unwrap();
        cases.push(case("max_pool2d", vec![distinct], move |t, v| {
            let y = t.max_pool2d(v[0], 2, 2)?;
            weighted_sum(t, y, sd)
        }));
    }

    let attn_cfgs = [(1usize, 3usize, 2usize), (3, 4, 4), (2, 5, 3)];
    for (c, &(nq, nk, d)) in attn_cfgs.iter().enumerate() {
        let sd = seed + 200 + c as u64;
        let q = random_tensor(&mut rng, &[nq, d], -1.0, 1.0);
        let k = random_tensor(&mut rng, &[nk, d], -1.0, 1.0);
        let v = random_tensor(&mut rng, &[nk, d], -1.0, 1.0);
        let valid: Vec<bool> = (0..nk).map(|j| j + 1 < nk || nk == 1).collect();
        cases.push(case("masked_attention", vec![q, k, v], move |t, vs| {
            let y = trajcql::autodiff::nn::masked_attention(t, vs[0], vs[1], vs[2], &valid)?;
            weighted_sum(t, y, sd)
        }));
    }
    cases
}

/// The training objectives as functions of their tape inputs, on three random
/// batch shapes each.
pub fn loss_cases(seed: u64) -> Vec<OpCase> {
    use trajcql::cql::losses::{bc_loss, critic_loss, direction_norms, magnitude_loss, policy_loss};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    for n in [1usize, 3, 6] {
        let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(0..9)).collect();
        let q = random_tensor(&mut rng, &[n, 9], -2.0, 2.0);
        let y = random_tensor(&mut rng, &[n, 1], -1.0, 1.0);
        let acts = actions.clone();
        cases.push(case("critic_loss", vec![q, y], move |t, v| Ok(critic_loss(t, v[0], &acts, v[1], 0.37)?.loss)));

        let logits = random_tensor(&mut rng, &[n, 9], -2.0, 2.0);
        let min_q = random_tensor(&mut rng, &[n, 9], -1.0, 1.0);
        cases.push(case("policy_loss", vec![logits.clone()], move |t, v| {
            let q = t.constant(min_q.clone());
            policy_loss(t, v[0], q, 0.2)
        }));
        let acts = actions.clone();
        cases.push(case("bc_loss", vec![logits.clone()], move |t, v| bc_loss(t, v[0], &acts)));

        let mag = random_tensor(&mut rng, &[n, 1], 0.0, 0.05);
        let norms: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
        let expert: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.05)).collect();
        cases.push(case("magnitude_loss", vec![mag.clone()], move |t, v| magnitude_loss(t, v[0], &norms, &expert, 1.3)));

        // actor objective as trained: policy + BC + magnitude with the
        // direction norm taken from the (detached) current policy
        let q = random_tensor(&mut rng, &[n, 9], -1.0, 1.0);
        let expert: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.05)).collect();
        let probs: Vec<f64> = logits.data().chunks(9).flat_map(super::scalar_losses::softmax).collect();
        let norms = direction_norms(&probs);
        cases.push(case("actor_objective", vec![logits, mag], move |t, v| {
            let qc = t.constant(q.clone());
            let pl = policy_loss(t, v[0], qc, 0.2)?;
            let bc = bc_loss(t, v[0], &actions)?;
            let ml = magnitude_loss(t, v[1], &norms, &expert, 1.0)?;
            let s = t.add(pl, bc)?;
            t.add(s, ml)
        }));
    }
    cases
}

//! Acceptance checks that are cheap enough to also run from the per-module
//! test targets. Each returns an outcome instead of panicking so the
//! acceptance target can print one line per criterion.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajcql::autodiff::{Tape, Tensor};
use trajcql::cql::losses::{bc_loss, bellman_targets, critic_loss, direction_norms, log_softmax_rows, magnitude_loss, policy_loss, soft_values};
use trajcql::cql::Trainer;
use trajcql::geom::{DenseSample, PixelPoint, SplineModel};
use trajcql::metrics::{ade, fde, frechet, wilcoxon_signed_rank};
use trajcql::model::TrajModel;
use trajcql::reward::{step_reward, RewardConfig};

use super::fixtures::{fixture, tiny_config};
use super::gradcheck::{loss_cases, max_relative_error, op_cases};
use super::oracles::{ade_loop, fde_loop, frechet_brute, wilcoxon_enumerate, DenseSpline};
use super::scalar_losses as scalar;

pub const GRAD_REL_TOL: f64 = 1e-4;
pub const GRAD_SUITE_SECS: f64 = 60.0;
pub const LOSS_TOL: f64 = 1e-9;
pub const CLOSED_FORM_TOL: f64 = 1e-9;
pub const FRECHET_TOL: f64 = 1e-12;
pub const SPLINE_TOL: f64 = 1e-9;
pub const NATURAL_END_TOL: f64 = 1e-6;
pub const MASK_TOL: f64 = 1e-9;

#[derive(Debug)]
pub struct Outcome {
    pub id: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(id: &'static str, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            id,
            pass,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!("{} criterion {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.id, self.detail)
    }
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

pub fn autodiff_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, "");
    let mut count = 0;
    for case in op_cases(11).into_iter().chain(loss_cases(12)) {
        let e = max_relative_error(&case.inputs, case.build.as_ref());
        count += 1;
        if e > worst.0 || e.is_nan() {
            worst = (e, case.name);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst.0 <= GRAD_REL_TOL && secs < GRAD_SUITE_SECS;
    Outcome::new(
        "1",
        pass,
        format!(
            "{count} finite-difference cases, worst relative error {:.2e} ({}), {secs:.2} s (limits {GRAD_REL_TOL:e}, {GRAD_SUITE_SECS} s)",
            worst.0, worst.1
        ),
    )
}

/// Largest absolute difference between each tape loss and its scalar
/// recomputation, over `batches` random batches.
pub fn loss_oracle_errors(seed: u64, batches: usize) -> [(&'static str, f64); 5] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [("critic", 0.0f64), ("soft_value", 0.0), ("policy", 0.0), ("bc", 0.0), ("magnitude", 0.0)];
    let bump = |i: usize, e: f64, w: &mut [(&str, f64); 5]| w[i].1 = w[i].1.max(if e.is_nan() { f64::INFINITY } else { e });
    for _ in 0..batches {
        let n = rng.gen_range(1..12);
        let alpha = rng.gen_range(0.0..0.5);
        let alpha_cql = rng.gen_range(0.0..2.0);
        let gamma = rng.gen_range(0.5..1.0);
        let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(0..9)).collect();
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dones: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        let q = rand_tensor(&mut rng, n, 9, -3.0, 3.0);
        let next_logits = rand_tensor(&mut rng, n, 9, -3.0, 3.0);
        let q1t = rand_tensor(&mut rng, n, 9, -3.0, 3.0);
        let q2t = rand_tensor(&mut rng, n, 9, -3.0, 3.0);

        // soft value and Bellman target
        let probs_next: Vec<f64> = rows(&next_logits).iter().flat_map(|r| scalar::softmax(r)).collect();
        let min_t: Vec<f64> = q1t.data().iter().zip(q2t.data()).map(|(a, b)| a.min(*b)).collect();
        let v = soft_values(&probs_next, &log_softmax_rows(next_logits.data()), &min_t, alpha);
        let y = bellman_targets(&rewards, &dones, &v, gamma);
        let mut y_oracle = Vec::with_capacity(n);
        for i in 0..n {
            let vo = scalar::soft_value(next_logits.row(i), q1t.row(i), q2t.row(i), alpha);
            bump(1, (vo - v[i]).abs(), &mut worst);
            y_oracle.push(scalar::target(rewards[i], dones[i], gamma, vo));
            bump(1, (y_oracle[i] - y[i]).abs(), &mut worst);
        }

        let mut tape = Tape::new();
        let qv = tape.input(q.clone());
        let yv = tape.constant(Tensor::new(vec![n, 1], y.clone()).unwrap());
        let c = critic_loss(&mut tape, qv, &actions, yv, alpha_cql).unwrap();
        let (l, b, p) = scalar::critic(&rows(&q), &actions, &y_oracle, alpha_cql);
        for (var, want) in [(c.loss, l), (c.bellman, b), (c.penalty, p)] {
            bump(0, (tape.value(var).item() - want).abs(), &mut worst);
        }

        let logits = rand_tensor(&mut rng, n, 9, -3.0, 3.0);
        let min_q = rand_tensor(&mut rng, n, 9, -3.0, 3.0);
        let lv = tape.input(logits.clone());
        let mq = tape.constant(min_q.clone());
        let pl = policy_loss(&mut tape, lv, mq, alpha).unwrap();
        bump(2, (tape.value(pl).item() - scalar::policy(&rows(&logits), &rows(&min_q), alpha)).abs(), &mut worst);
        let bc = bc_loss(&mut tape, lv, &actions).unwrap();
        bump(3, (tape.value(bc).item() - scalar::bc(&rows(&logits), &actions)).abs(), &mut worst);

        let probs: Vec<Vec<f64>> = rows(&logits).iter().map(|r| scalar::softmax(r)).collect();
        let mags: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.05)).collect();
        let expert: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.05)).collect();
        let lambda = rng.gen_range(0.1..2.0);
        let flat: Vec<f64> = probs.iter().flatten().copied().collect();
        let mv = tape.input(Tensor::new(vec![n, 1], mags.clone()).unwrap());
        let ml = magnitude_loss(&mut tape, mv, &direction_norms(&flat), &expert, lambda).unwrap();
        bump(4, (tape.value(ml).item() - scalar::magnitude(&mags, &probs, &expert, lambda)).abs(), &mut worst);
    }
    worst
}

pub fn loss_oracle_equivalence() -> Outcome {
    let worst = loss_oracle_errors(21, 50);
    let pass = worst.iter().all(|(_, e)| *e <= LOSS_TOL);
    let detail: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    Outcome::new("2", pass, format!("50 random batches, max |tape − scalar|: {} (limit {LOSS_TOL:e})", detail.join(", ")))
}

fn keyframe_at(x: f64) -> DenseSample {
    DenseSample {
        frame: 0,
        point: PixelPoint::new(x, 0.5),
        confidence: 1.0,
        is_keyframe: true,
    }
}

/// `(name, got, want)` for every closed-form substitution.
pub fn closed_forms() -> Vec<(&'static str, f64, f64)> {
    let cfg = RewardConfig::default();
    let ln9 = 9f64.ln();
    let r0 = step_reward(PixelPoint::new(0.5, 0.5), &keyframe_at(0.5), false, &cfg).total;
    let r_tau = step_reward(PixelPoint::new(0.52, 0.5), &keyframe_at(0.5), false, &cfg).total;
    let r_final = step_reward(PixelPoint::new(0.5, 0.5), &keyframe_at(0.5), true, &cfg).total;

    let uniform = vec![1.0 / 9.0; 9];
    let v = soft_values(&uniform, &log_softmax_rows(&[0.0; 9]), &[0.0; 9], 0.2)[0];

    let mut tape = Tape::new();
    let q = tape.constant(Tensor::zeros(vec![4, 9]));
    let y = bellman_targets(&[0.0; 4], &[true; 4], &[123.0; 4], 0.95);
    let yv = tape.constant(Tensor::new(vec![4, 1], y).unwrap());
    let c = critic_loss(&mut tape, q, &[0, 3, 8, 5], yv, 0.01).unwrap();
    let logits = tape.constant(Tensor::zeros(vec![3, 9]));
    let bc = bc_loss(&mut tape, logits, &[0, 4, 8]).unwrap();
    let zq = tape.constant(Tensor::zeros(vec![3, 9]));
    let pl = policy_loss(&mut tape, logits, zq, 0.2).unwrap();
    vec![
        ("reward keyframe d=0", r0, 0.49),
        ("reward keyframe d=tau", r_tau, -0.01),
        ("reward final d=0", r_final, 0.99),
        ("soft value uniform", v, 0.2 * ln9),
        ("critic bellman Q=0 r=0 d=1", tape.value(c.bellman).item(), 0.0),
        ("critic loss Q=0", tape.value(c.loss).item(), 0.01 * ln9),
        ("bc uniform", tape.value(bc).item(), ln9),
        ("policy uniform Q=0", tape.value(pl).item(), -0.2 * ln9),
    ]
}

pub fn closed_form_checks() -> Outcome {
    let checks = closed_forms();
    let worst = checks.iter().map(|(_, g, w)| (g - w).abs()).fold(0.0, f64::max);
    let bad: Vec<&str> = checks.iter().filter(|(_, g, w)| (g - w).abs() > CLOSED_FORM_TOL).map(|c| c.0).collect();
    Outcome::new(
        "3",
        bad.is_empty(),
        format!("{} substitutions, worst error {worst:.1e} (limit {CLOSED_FORM_TOL:e}){}", checks.len(), if bad.is_empty() { String::new() } else { format!(", failing: {bad:?}") }),
    )
}

fn rand_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, f64)> {
    (0..n).map(|_| (rng.gen_range(0.0..1264.0), rng.gen_range(0.0..902.0))).collect()
}

/// Worst deviations (fréchet, ade, fde, wilcoxon p, wilcoxon statistic).
pub fn metric_oracle_errors(seed: u64, pairs: usize) -> [f64; 5] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = [0.0f64; 5];
    for _ in 0..pairs {
        let (n, m) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let a = rand_points(&mut rng, n);
        let b = rand_points(&mut rng, m);
        w[0] = w[0].max((frechet(&a, &b).unwrap() - frechet_brute(&a, &b)).abs());
        let b = rand_points(&mut rng, n);
        w[1] = w[1].max((ade(&a, &b).unwrap() - ade_loop(&a, &b)).abs());
        w[2] = w[2].max((fde(&a, &b).unwrap() - fde_loop(&a, &b)).abs());
    }
    for n in 5..=10 {
        for rep in 0..20 {
            // integer-valued samples so ties and zero differences occur
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 + if rep % 2 == 0 { 0.5 } else { 0.0 }).collect();
            let Ok(r) = wilcoxon_signed_rank(&a, &b) else { continue };
            let (stat, p) = wilcoxon_enumerate(&a, &b);
            w[3] = w[3].max((r.p_value - p).abs());
            w[4] = w[4].max((r.statistic - stat).abs());
        }
    }
    w
}

pub fn metrics_oracle() -> Outcome {
    let w = metric_oracle_errors(31, 200);
    let pass = w[0] <= FRECHET_TOL && w[1] <= 1e-9 && w[2] <= 1e-12 && w[3] <= 1e-12 && w[4] == 0.0;
    Outcome::new(
        "4",
        pass,
        format!(
            "200 pairs: fréchet vs enumeration {:.1e}, ADE vs loop {:.1e}, FDE vs loop {:.1e}; Wilcoxon n=5..10 vs sign enumeration: p {:.1e}, W {:.1e}",
            w[0], w[1], w[2], w[3], w[4]
        ),
    )
}

/// Worst deviations (affine reproduction, dense-solve agreement, end second derivative).
pub fn spline_errors(seed: u64, inputs: usize) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = [0.0f64; 3];
    for _ in 0..inputs {
        let mut frame = rng.gen_range(0..50i64);
        let mut knots = Vec::with_capacity(9);
        for _ in 0..9 {
            knots.push((frame, rng.gen_range(0.0..1.0)));
            frame += rng.gen_range(1..15);
        }
        let s = SplineModel::fit(&knots).unwrap();
        let t: Vec<f64> = knots.iter().map(|k| k.0 as f64).collect();
        let y: Vec<f64> = knots.iter().map(|k| k.1).collect();
        let d = DenseSpline::fit(&t, &y);
        let (lo, hi) = (t[0], t[8]);
        for j in 0..=200 {
            let x = lo + (hi - lo) * j as f64 / 200.0;
            w[1] = w[1].max((s.eval(x) - d.eval(x)).abs());
        }
        w[2] = w[2].max(s.second_derivative(lo).abs()).max(s.second_derivative(hi).abs());

        let (slope, icpt) = (rng.gen_range(-0.05..0.05), rng.gen_range(0.0..1.0));
        let affine: Vec<(i64, f64)> = knots.iter().map(|k| (k.0, icpt + slope * (k.0 as f64 - lo))).collect();
        let sa = SplineModel::fit(&affine).unwrap();
        for j in 0..=100 {
            let x = lo + (hi - lo) * j as f64 / 100.0;
            w[0] = w[0].max((sa.eval(x) - (icpt + slope * (x - lo))).abs());
        }
    }
    w
}

pub fn spline_fidelity() -> Outcome {
    let w = spline_errors(41, 100);
    let pass = w[0] <= SPLINE_TOL && w[1] <= SPLINE_TOL && w[2] <= NATURAL_END_TOL;
    Outcome::new(
        "5",
        pass,
        format!("100 random 9-knot inputs: affine {:.1e}, dense solve {:.1e} (limit {SPLINE_TOL:e}); end second derivative {:.1e} (limit {NATURAL_END_TOL:e})", w[0], w[1], w[2]),
    )
}

pub struct RoutingNorms {
    pub critic_on_encoder: f64,
    pub actor_on_encoder: f64,
    pub critic_on_critics: f64,
    pub actor_on_critics: f64,
}

pub fn routing_norms(seed: u64) -> RoutingNorms {
    let f = fixture(tiny_config(12, 1));
    let model = TrajModel::new(f.cfg.model.clone()).unwrap();
    let trainer = Trainer::new(model, f.cfg.train.clone()).unwrap();
    let batch: Vec<usize> = (0..f.train.len().min(4)).collect();
    let g = trainer.batch_gradients(&f.train, &batch, seed).unwrap();
    let enc = trainer.model.encoder_params();
    let crit = trainer.model.critic_params();
    RoutingNorms {
        critic_on_encoder: g.critic.norm_of(&enc).abs(),
        actor_on_encoder: g.actor.norm_of(&enc).abs(),
        critic_on_critics: g.critic.norm_of(&crit).abs(),
        actor_on_critics: g.actor.norm_of(&crit).abs(),
    }
}

pub fn gradient_routing() -> Outcome {
    let r = routing_norms(5);
    let pass = r.critic_on_encoder == 0.0 && r.actor_on_encoder > 0.0;
    Outcome::new(
        "6",
        pass,
        format!(
            "‖∇enc critic‖ = {:e} (must be exactly 0), ‖∇enc actor+magnitude‖ = {:.3e} (must be > 0); ‖∇critic critic‖ = {:.3e}, ‖∇critic actor‖ = {:e}",
            r.critic_on_encoder, r.actor_on_encoder, r.critic_on_critics, r.actor_on_critics
        ),
    )
}

/// Worst |Δz_c| over padding, mutation of masked frames and mixed-length batching.
pub fn masking_deviation() -> f64 {
    let f = fixture(tiny_config(8, 1));
    let model = TrajModel::new(f.cfg.model.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let z = |clips: &[&trajcql::encoders::ObservationClip]| {
        let mut tape = Tape::new();
        let v = model.encode_clips(&mut tape, clips).unwrap();
        tape.value(v).clone()
    };
    let mut worst = 0.0f64;
    for clip in f.train.clips.iter().take(4) {
        let base = z(&[clip]);
        for extra in [1usize, 3] {
            let padded = clip.padded(extra);
            let zp = z(&[&padded]);
            let mut mutated = padded.clone();
            for i in clip.len()..mutated.len() {
                for v in mutated.frame_mut(i) {
                    *v = rng.gen_range(-50.0..50.0);
                }
            }
            let zm = z(&[&mutated]);
            for other in [&zp, &zm] {
                worst = worst.max(base.data().iter().zip(other.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            }
        }
        // batched with a longer clip, which pads this one internally
        let long = f.train.clips.iter().max_by_key(|c| c.len()).unwrap().padded(2);
        let zb = z(&[clip, &long]);
        worst = worst.max(base.row(0).iter().zip(zb.row(0)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    worst
}

pub fn masking_contract() -> Outcome {
    let d = masking_deviation();
    Outcome::new("10", d <= MASK_TOL, format!("max |Δz_c| under padding, masked mutation and batching = {d:.1e} (limit {MASK_TOL:e})"))
}

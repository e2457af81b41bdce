//! Critic, policy, behaviour-cloning and magnitude objectives on the tape.

use crate::actions::{mix_directions, NUM_ACTIONS};
use crate::autodiff::{Tape, Tensor, TensorError, Var};

/// Scalar parts of one critic head's loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticTerms {
    pub loss: Var,
    pub bellman: Var,
    pub penalty: Var,
}

/// `mean (Q(s,a) − y)² + α_cql · mean[logsumexp_a Q(s,a) − Q(s,a_exp)]`.
pub fn critic_loss(tape: &mut Tape, q: Var, actions: &[usize], y: Var, alpha_cql: f64) -> Result<CriticTerms, TensorError> {
    let q_a = tape.gather(q, actions)?;
    let diff = tape.sub(q_a, y)?;
    let sq = tape.mul(diff, diff)?;
    let bellman = tape.mean_all(sq)?;
    let lse = tape.logsumexp(q)?;
    let gap = tape.sub(lse, q_a)?;
    let penalty = tape.mean_all(gap)?;
    let scaled = tape.scale(penalty, alpha_cql)?;
    let loss = tape.add(bellman, scaled)?;
    Ok(CriticTerms { loss, bellman, penalty })
}

/// Soft state value `Σ_a π(a)·(min Q_tgt(a) − α·log π(a))` per row.
///
/// `probs`, `log_probs` and `min_q` are row-major `n × 9`.
pub fn soft_values(probs: &[f64], log_probs: &[f64], min_q: &[f64], alpha: f64) -> Vec<f64> {
    probs
        .chunks(NUM_ACTIONS)
        .zip(log_probs.chunks(NUM_ACTIONS))
        .zip(min_q.chunks(NUM_ACTIONS))
        .map(|((p, lp), q)| (0..NUM_ACTIONS).map(|a| p[a] * (q[a] - alpha * lp[a])).sum())
        .collect()
}

/// `y = r + γ(1 − d)·V(s′)`.
pub fn bellman_targets(rewards: &[f64], dones: &[bool], next_values: &[f64], gamma: f64) -> Vec<f64> {
    rewards
        .iter()
        .zip(dones)
        .zip(next_values)
        .map(|((r, d), v)| r + if *d { 0.0 } else { gamma * v })
        .collect()
}

/// `mean_s Σ_a π(a|s)·(α·log π(a|s) − min Q(s,a))`, with `min_q` held constant.
pub fn policy_loss(tape: &mut Tape, logits: Var, min_q: Var, alpha: f64) -> Result<Var, TensorError> {
    let log_p = tape.log_softmax(logits)?;
    let p = tape.softmax(logits)?;
    let ent = tape.scale(log_p, alpha)?;
    let inner = tape.sub(ent, min_q)?;
    let weighted = tape.mul(p, inner)?;
    let per_state = tape.sum_rows(weighted)?;
    tape.mean_all(per_state)
}

/// Mean cross-entropy of the policy logits against expert actions.
pub fn bc_loss(tape: &mut Tape, logits: Var, actions: &[usize]) -> Result<Var, TensorError> {
    tape.cross_entropy(logits, actions)
}

/// `λ · mean[(m̂·‖d̂‖ − L)²]` where `‖d̂‖` (per row) and the expert length `L`
/// are constants.
pub fn magnitude_loss(tape: &mut Tape, magnitude: Var, dir_norms: &[f64], expert: &[f64], lambda: f64) -> Result<Var, TensorError> {
    let n = dir_norms.len();
    let norms = tape.constant(Tensor::new(vec![n, 1], dir_norms.to_vec())?);
    let target = tape.constant(Tensor::new(vec![n, 1], expert.to_vec())?);
    let step = tape.mul(magnitude, norms)?;
    let err = tape.mse(step, target)?;
    tape.scale(err, lambda)
}

/// `‖Σ_a π(a)·u_a‖` for each row of `probs`.
pub fn direction_norms(probs: &[f64]) -> Vec<f64> {
    probs
        .chunks(NUM_ACTIONS)
        .map(|p| {
            let (x, y) = mix_directions(p);
            x.hypot(y)
        })
        .collect()
}

/// Row-wise log-softmax of a row-major `n × 9` slice.
pub fn log_softmax_rows(logits: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(NUM_ACTIONS) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| v - lse));
    }
    out
}

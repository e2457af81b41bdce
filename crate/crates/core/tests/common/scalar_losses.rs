//! Straight-line scalar recomputations of the training losses.
//!
//! Every function works on plain nested vectors and loops; nothing here calls
//! into the tape or the library's loss helpers.

use std::f64::consts::FRAC_PI_4;

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    for &v in row {
        if v > m {
            m = v;
        }
    }
    let mut s = 0.0;
    for &v in row {
        s += (v - m).exp();
    }
    let lse = m + s.ln();
    row.iter().map(|v| v - lse).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    log_softmax(row).iter().map(|v| v.exp()).collect()
}

pub fn logsumexp(row: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &v in row {
        m = m.max(v);
    }
    let mut s = 0.0;
    for &v in row {
        s += (v - m).exp();
    }
    m + s.ln()
}

/// Soft value of one next state: Σ_a π(a)·(min(Q1t, Q2t)(a) − α·log π(a)).
pub fn soft_value(next_logits: &[f64], q1t: &[f64], q2t: &[f64], alpha: f64) -> f64 {
    let lp = log_softmax(next_logits);
    let mut v = 0.0;
    for a in 0..next_logits.len() {
        let q = if q1t[a] < q2t[a] { q1t[a] } else { q2t[a] };
        v += lp[a].exp() * (q - alpha * lp[a]);
    }
    v
}

pub fn target(reward: f64, done: bool, gamma: f64, v_next: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * v_next
    }
}

/// One critic head: (loss, bellman, penalty).
pub fn critic(q: &[Vec<f64>], actions: &[usize], y: &[f64], alpha_cql: f64) -> (f64, f64, f64) {
    let n = q.len() as f64;
    let mut bellman = 0.0;
    let mut penalty = 0.0;
    for i in 0..q.len() {
        let qa = q[i][actions[i]];
        bellman += (qa - y[i]) * (qa - y[i]);
        penalty += logsumexp(&q[i]) - qa;
    }
    bellman /= n;
    penalty /= n;
    (bellman + alpha_cql * penalty, bellman, penalty)
}

pub fn policy(logits: &[Vec<f64>], min_q: &[Vec<f64>], alpha: f64) -> f64 {
    let mut total = 0.0;
    for (row, q) in logits.iter().zip(min_q) {
        let lp = log_softmax(row);
        for a in 0..row.len() {
            total += lp[a].exp() * (alpha * lp[a] - q[a]);
        }
    }
    total / logits.len() as f64
}

pub fn bc(logits: &[Vec<f64>], actions: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &a) in logits.iter().zip(actions) {
        total -= log_softmax(row)[a];
    }
    total / logits.len() as f64
}

/// Norm of Σ_a π(a)·u_a with u_a = (sin((a)π/4), −cos((a)π/4)) for zero-based
/// a < 8 and u_8 = 0.
pub fn direction_norm(probs: &[f64]) -> f64 {
    let (mut x, mut y) = (0.0, 0.0);
    for (a, p) in probs.iter().enumerate().take(8) {
        let ang = a as f64 * FRAC_PI_4;
        x += p * ang.sin();
        y -= p * ang.cos();
    }
    (x * x + y * y).sqrt()
}

pub fn magnitude(mags: &[f64], probs: &[Vec<f64>], expert: &[f64], lambda: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..mags.len() {
        let e = mags[i] * direction_norm(&probs[i]) - expert[i];
        total += e * e;
    }
    lambda * total / mags.len() as f64
}

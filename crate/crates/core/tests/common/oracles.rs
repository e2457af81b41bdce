//! Independent reference implementations used as test oracles.

pub type Point = (f64, f64);

fn dist(a: Point, b: Point) -> f64 {
    ((a.0 - b.0) * (a.0 - b.0) + (a.1 - b.1) * (a.1 - b.1)).sqrt()
}

/// Discrete Fréchet distance by exhaustive enumeration of monotone couplings.
/// A coupling walks from (0,0) to (n−1,m−1) advancing one or both indices.
pub fn frechet_brute(a: &[Point], b: &[Point]) -> f64 {
    fn walk(a: &[Point], b: &[Point], i: usize, j: usize, worst: f64, best: &mut f64) {
        let worst = worst.max(dist(a[i], b[j]));
        if worst >= *best {
            return;
        }
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = worst;
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, worst, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, worst, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, worst, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

pub fn ade_loop(pred: &[Point], gt: &[Point]) -> f64 {
    let mut s = 0.0;
    for i in 0..pred.len() {
        s += dist(pred[i], gt[i]);
    }
    s / pred.len() as f64
}

pub fn fde_loop(pred: &[Point], gt: &[Point]) -> f64 {
    dist(pred[pred.len() - 1], gt[gt.len() - 1])
}

/// Two-sided exact Wilcoxon p-value by enumerating every sign assignment of
/// the observed midranks. Returns (statistic, p).
pub fn wilcoxon_enumerate(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let n = d.len();
    let mut ranks = vec![0.0; n];
    for i in 0..n {
        let (mut below, mut equal) = (0usize, 0usize);
        for j in 0..n {
            if d[j].abs() < d[i].abs() {
                below += 1;
            } else if d[j].abs() == d[i].abs() {
                equal += 1;
            }
        }
        ranks[i] = below as f64 + (equal as f64 + 1.0) / 2.0;
    }
    let w_plus: f64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| ranks[i]).sum();
    let total: f64 = ranks.iter().sum();
    let w = w_plus.min(total - w_plus);
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let t: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if t <= w + 1e-9 {
            hits += 1;
        }
    }
    let p = (2.0 * hits as f64 / (1u64 << n) as f64).min(1.0);
    (w, p)
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x
}

/// Natural cubic spline through `(t, y)` via the full second-derivative
/// system, evaluated in the textbook two-sided form.
pub struct DenseSpline {
    t: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl DenseSpline {
    pub fn fit(t: &[f64], y: &[f64]) -> Self {
        let n = t.len();
        let mut a = vec![vec![0.0; n]; n];
        let mut rhs = vec![0.0; n];
        a[0][0] = 1.0;
        a[n - 1][n - 1] = 1.0;
        for i in 1..n - 1 {
            let h0 = t[i] - t[i - 1];
            let h1 = t[i + 1] - t[i];
            a[i][i - 1] = h0;
            a[i][i] = 2.0 * (h0 + h1);
            a[i][i + 1] = h1;
            rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
        }
        Self {
            t: t.to_vec(),
            y: y.to_vec(),
            m: dense_solve(a, rhs),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.t.len();
        let mut i = 0;
        while i + 2 < n && x > self.t[i + 1] {
            i += 1;
        }
        let h = self.t[i + 1] - self.t[i];
        let l = self.t[i + 1] - x;
        let r = x - self.t[i];
        self.m[i] * l * l * l / (6.0 * h)
            + self.m[i + 1] * r * r * r / (6.0 * h)
            + (self.y[i] / h - self.m[i] * h / 6.0) * l
            + (self.y[i + 1] / h - self.m[i + 1] * h / 6.0) * r
    }
}

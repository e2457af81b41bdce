//! Natural cubic splines over integer frame indices.

use super::GeomError;

/// One coordinate channel of a natural cubic spline.
///
/// Interval `i` stores `a + b·u + c·u² + d·u³` with `u = t − knots[i]`,
/// so evaluating at a knot returns its value exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct SplineModel {
    knots: Vec<f64>,
    values: Vec<f64>,
    coeffs: Vec<[f64; 4]>,
}

impl SplineModel {
    /// Fits through `(frame, value)` pairs with zero second derivative at both ends.
    pub fn fit(points: &[(i64, f64)]) -> Result<Self, GeomError> {
        if points.len() < 2 {
            return Err(GeomError::TooFewKnots(points.len()));
        }
        for w in points.windows(2) {
            if w[1].0 == w[0].0 {
                return Err(GeomError::DuplicateKnot(w[0].0));
            }
            if w[1].0 < w[0].0 {
                return Err(GeomError::UnsortedKnots(w[1].0));
            }
        }
        if let Some(p) = points.iter().find(|p| !p.1.is_finite()) {
            return Err(GeomError::NonFinite(p.0));
        }
        let x: Vec<f64> = points.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = points.iter().map(|p| p.1).collect();
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();

        // Second derivatives at the knots; M[0] = M[n-1] = 0.
        let mut m = vec![0.0; n];
        if n > 2 {
            let inner = n - 2;
            let mut diag = vec![0.0; inner];
            let mut upper = vec![0.0; inner];
            let mut rhs = vec![0.0; inner];
            for i in 0..inner {
                let k = i + 1;
                diag[i] = 2.0 * (h[k - 1] + h[k]);
                upper[i] = h[k];
                rhs[i] = 6.0 * ((y[k + 1] - y[k]) / h[k] - (y[k] - y[k - 1]) / h[k - 1]);
            }
            // Thomas algorithm; the sub-diagonal entry for row i is h[i].
            for i in 1..inner {
                let w = h[i] / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[inner] = rhs[inner - 1] / diag[inner - 1];
            for i in (0..inner - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }

        let coeffs = (0..n - 1)
            .map(|i| {
                let hi = h[i];
                [
                    y[i],
                    (y[i + 1] - y[i]) / hi - hi * (2.0 * m[i] + m[i + 1]) / 6.0,
                    m[i] / 2.0,
                    (m[i + 1] - m[i]) / (6.0 * hi),
                ]
            })
            .collect();
        Ok(Self {
            knots: x,
            values: y,
            coeffs,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// First and last knot.
    pub fn span(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    fn interval(&self, t: f64) -> usize {
        let last = self.coeffs.len() - 1;
        match self.knots.partition_point(|k| *k <= t) {
            0 => 0,
            p => (p - 1).min(last),
        }
    }

    /// Value at `t`. Outside the knot range the boundary cubic is continued.
    pub fn eval(&self, t: f64) -> f64 {
        if t == self.knots[self.knots.len() - 1] {
            return self.values[self.values.len() - 1];
        }
        let i = self.interval(t);
        let [a, b, c, d] = self.coeffs[i];
        let u = t - self.knots[i];
        a + u * (b + u * (c + u * d))
    }

    pub fn second_derivative(&self, t: f64) -> f64 {
        let i = self.interval(t);
        let [_, _, c, d] = self.coeffs[i];
        2.0 * c + 6.0 * d * (t - self.knots[i])
    }
}

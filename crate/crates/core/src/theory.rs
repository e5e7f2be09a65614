//! Closed-form constants of the two-type branching process that describes
//! the local neighbourhood of a vertex, and its mean matrix `e^{Qt}`.
//!
//! Type order is always (red, blue): red particles are vertices reached over
//! a cycle edge, blue ones over a shortcut.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("rho must be finite and > 0, got {0}")]
    NonPositiveRho(f64),
    #[error("time must be finite and >= 0, got {0}")]
    NegativeTime(f64),
}

/// A 2x2 matrix, row-major, rows indexed by parent type (red first).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn mul(&self, o: &Mat2) -> Mat2 {
        let a = &self.0;
        let b = &o.0;
        Mat2([
            [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
            [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
        ])
    }

    /// `self * v` for a column vector.
    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        let a = &self.0;
        [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
    }

    /// `v * self` for a row vector.
    pub fn left_apply(&self, v: [f64; 2]) -> [f64; 2] {
        let a = &self.0;
        [v[0] * a[0][0] + v[1] * a[1][0], v[0] * a[0][1] + v[1] * a[1][1]]
    }

    pub fn row(&self, i: usize) -> [f64; 2] {
        self.0[i]
    }

    pub fn max_abs_diff(&self, o: &Mat2) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                m = m.max((self.0[i][j] - o.0[i][j]).abs());
            }
        }
        m
    }
}

/// Everything the limit theory derives from `rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConstants {
    pub rho: f64,
    /// Malthusian rate, the largest root of `x^2 + (1 - rho) x - 2 rho`.
    pub lambda: f64,
    pub lambda2: f64,
    /// Stationary type distribution `(pi_R, pi_B)`, the left eigenvector.
    pub pi: [f64; 2],
    /// Right eigenvector `(u_R, u_B)` with `pi . u = 1`.
    pub u: [f64; 2],
    /// Additive constant of the typical-distance limit.
    pub c: f64,
    pub q: Mat2,
}

/// JSON shape printed by the `constants` subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantsReport {
    pub rho: f64,
    pub lambda: f64,
    pub lambda2: f64,
    #[serde(rename = "pi_R")]
    pub pi_r: f64,
    #[serde(rename = "pi_B")]
    pub pi_b: f64,
    #[serde(rename = "u_R")]
    pub u_r: f64,
    #[serde(rename = "u_B")]
    pub u_b: f64,
    pub c: f64,
    pub c_ihrg: f64,
}

pub fn constants(rho: f64) -> Result<ModelConstants, TheoryError> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(TheoryError::NonPositiveRho(rho));
    }
    let disc = (rho * rho + 6.0 * rho + 1.0).sqrt();
    let mut lambda = (rho - 1.0 + disc) / 2.0;
    // One Newton step on p(x) = x^2 + (1 - rho) x - 2 rho.
    let p = lambda * lambda + (1.0 - rho) * lambda - 2.0 * rho;
    lambda -= p / (2.0 * lambda + 1.0 - rho);
    // Product of the roots is -2 rho; avoids cancellation in rho - 1 - disc.
    let lambda2 = -2.0 * rho / lambda;

    let pi_r = 2.0 / (lambda + 2.0);
    let pi_b = lambda / (lambda + 2.0);
    let u_b = 1.0 / (pi_r * rho / lambda + pi_b);
    let u_r = rho * u_b / lambda;
    let c = (1.0 - pi_r * pi_r / 2.0).ln() - (lambda * (lambda + 1.0)).ln();

    Ok(ModelConstants {
        rho,
        lambda,
        lambda2,
        pi: [pi_r, pi_b],
        u: [u_r, u_b],
        c,
        q: Mat2([[0.0, rho], [2.0, rho - 1.0]]),
    })
}

impl ModelConstants {
    pub fn pi_r(&self) -> f64 {
        self.pi[0]
    }

    pub fn pi_b(&self) -> f64 {
        self.pi[1]
    }

    /// `1 - pi_R^2 / 2`, the total collision intensity factor.
    pub fn collision_factor(&self) -> f64 {
        1.0 - self.pi[0] * self.pi[0] / 2.0
    }

    /// Observation time `log n / (2 lambda)` at which each tree holds order `sqrt(n)` vertices.
    pub fn t_n(&self, n: usize) -> f64 {
        (n as f64).ln() / (2.0 * self.lambda)
    }

    /// `x(t) = (1 - pi_R^2/2) e^{lambda t} / (lambda (lambda + 1))`.
    pub fn epidemic_x(&self, t: f64) -> f64 {
        self.collision_factor() * (self.lambda * t).exp() / (self.lambda * (self.lambda + 1.0))
    }

    /// Inverse of [`Self::epidemic_x`].
    pub fn epidemic_t(&self, x: f64) -> f64 {
        (x * self.lambda * (self.lambda + 1.0) / self.collision_factor()).ln() / self.lambda
    }

    pub fn report(&self) -> ConstantsReport {
        ConstantsReport {
            rho: self.rho,
            lambda: self.lambda,
            lambda2: self.lambda2,
            pi_r: self.pi[0],
            pi_b: self.pi[1],
            u_r: self.u[0],
            u_b: self.u[1],
            c: self.c,
            c_ihrg: ihrg_constant(self),
        }
    }
}

/// Mean matrix `M(t) = e^{Qt}`, with `M_{r,q}(t)` the expected number of
/// alive type-`q` particles at time `t` from one type-`r` ancestor.
///
/// Uses the spectral split `e^{Qt} = e^{lambda t} u pi + e^{lambda2 t} (I - u pi)`,
/// valid because the eigenvalues are distinct and `pi . u = 1`.
pub fn mean_matrix(k: &ModelConstants, t: f64) -> Result<Mat2, TheoryError> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(TheoryError::NegativeTime(t));
    }
    let e1 = (k.lambda * t).exp();
    let e2 = (k.lambda2 * t).exp();
    let mut m = [[0.0; 2]; 2];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let p1 = k.u[i] * k.pi[j];
            let id = if i == j { 1.0 } else { 0.0 };
            *cell = e1 * p1 + e2 * (id - p1);
        }
    }
    Ok(Mat2(m))
}

/// The additive distance constant of the inhomogeneous random graph whose
/// neighbourhoods follow the same branching process; differs from `c`.
pub fn ihrg_constant(k: &ModelConstants) -> f64 {
    let (rho, l) = (k.rho, k.lambda);
    ((rho + 2.0) * (2.0 * rho + l * l) / (rho * (l + 2.0).powi(2) * l * (l + 1.0))).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const GRID: [f64; 6] = [0.1, 0.5, 1.0, 2.0, 5.0, 10.0];

    /// Bisection on p(x) over [max(0, rho - 1), rho + 2]; independent of the
    /// quadratic formula.
    fn lambda_by_bisection(rho: f64) -> f64 {
        let p = |x: f64| x * x + (1.0 - rho) * x - 2.0 * rho;
        let (mut lo, mut hi) = (0.0_f64.max(rho - 1.0), rho + 2.0);
        assert!(p(lo) < 0.0 && p(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if p(mid) < 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    /// Scaling-and-squaring Taylor exponential.
    fn expm_oracle(q: &Mat2, t: f64) -> Mat2 {
        let s = 20;
        let scale = t / f64::from(1u32 << s);
        let a = Mat2([
            [q.0[0][0] * scale, q.0[0][1] * scale],
            [q.0[1][0] * scale, q.0[1][1] * scale],
        ]);
        let mut term = Mat2::IDENTITY;
        let mut sum = Mat2::IDENTITY;
        for k in 1..20 {
            term = term.mul(&a);
            let f = 1.0 / k as f64;
            term = Mat2([
                [term.0[0][0] * f, term.0[0][1] * f],
                [term.0[1][0] * f, term.0[1][1] * f],
            ]);
            for i in 0..2 {
                for j in 0..2 {
                    sum.0[i][j] += term.0[i][j];
                }
            }
        }
        for _ in 0..s {
            sum = sum.mul(&sum);
        }
        sum
    }

    #[test]
    fn rho_one_values() {
        let k = constants(1.0).unwrap();
        assert_abs_diff_eq!(k.lambda, 2f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(k.lambda2, -(2f64.sqrt()), epsilon = 1e-14);
        assert_abs_diff_eq!(k.pi[0], 0.585_786_4, epsilon = 1e-7);
        assert_abs_diff_eq!(k.pi[1], 0.414_213_6, epsilon = 1e-7);
        assert_abs_diff_eq!(k.u[1], 1.207_106_8, epsilon = 1e-7);
        assert_abs_diff_eq!(k.u[0], 0.853_553_4, epsilon = 1e-7);
        // Direct evaluation: ln(1 - pi_R^2/2) - ln(lambda (lambda + 1)) with lambda = sqrt 2.
        assert_abs_diff_eq!(k.c, -1.416_173_583_759_113, epsilon = 1e-12);
    }

    #[test]
    fn eigen_identities_on_grid() {
        for rho in GRID {
            let k = constants(rho).unwrap();
            let l = k.lambda;
            assert!((l * l + (1.0 - rho) * l - 2.0 * rho).abs() < 1e-12, "rho {rho}");
            assert_abs_diff_eq!(l, lambda_by_bisection(rho), epsilon = 1e-12);
            let piq = k.q.left_apply(k.pi);
            let qu = k.q.apply(k.u);
            for i in 0..2 {
                assert!((piq[i] - l * k.pi[i]).abs() < 1e-12);
                assert!((qu[i] - l * k.u[i]).abs() < 1e-12);
            }
            assert!((k.pi[0] * k.u[0] + k.pi[1] * k.u[1] - 1.0).abs() < 1e-12);
            assert!((k.pi[0] + k.pi[1] - 1.0).abs() < 1e-15);
            assert!(l > 0.0 && k.lambda2 < 0.0 && 2.0 * k.lambda2 < l);
            assert!(l > rho - 1.0);
        }
    }

    #[test]
    fn lambda_over_rho_tends_to_one() {
        let k = constants(1e3).unwrap();
        assert!((k.lambda / 1e3 - 1.0).abs() < 0.01);
    }

    #[test]
    fn rejects_non_positive_rho() {
        assert_eq!(constants(0.0), Err(TheoryError::NonPositiveRho(0.0)));
        assert!(constants(-1.0).is_err());
        assert!(constants(f64::NAN).is_err());
    }

    #[test]
    fn mean_matrix_identity_and_semigroup() {
        let k = constants(1.0).unwrap();
        assert!(mean_matrix(&k, 0.0).unwrap().max_abs_diff(&Mat2::IDENTITY) < 1e-15);
        let m1 = mean_matrix(&k, 1.0).unwrap();
        let m2 = mean_matrix(&k, 2.0).unwrap();
        let sq = m1.mul(&m1);
        for i in 0..2 {
            for j in 0..2 {
                assert!((sq.0[i][j] - m2.0[i][j]).abs() <= 1e-9 * m2.0[i][j].abs().max(1.0));
            }
        }
        assert!(mean_matrix(&k, -1.0).is_err());
    }

    #[test]
    fn mean_matrix_matches_series_oracle() {
        for rho in [0.5, 1.0, 2.0] {
            let k = constants(rho).unwrap();
            for t in [0.3, 1.0, 2.5] {
                let m = mean_matrix(&k, t).unwrap();
                let o = expm_oracle(&k.q, t);
                for i in 0..2 {
                    for j in 0..2 {
                        let rel = (m.0[i][j] - o.0[i][j]).abs() / o.0[i][j].abs().max(1.0);
                        assert!(rel < 1e-9, "rho {rho} t {t} ({i},{j}): {} vs {}", m.0[i][j], o.0[i][j]);
                    }
                }
            }
        }
    }

    #[test]
    fn row_sums_grow_at_malthusian_rate() {
        let k = constants(2.0).unwrap();
        // At t = 20 the rate is off by exactly ln(u_r)/t up to e^{(lambda2 - lambda) t}.
        let t = 20.0;
        let m = mean_matrix(&k, t).unwrap();
        for i in 0..2 {
            let s = m.0[i][0] + m.0[i][1];
            assert!((s.ln() / t - k.lambda - k.u[i].ln() / t).abs() < 1e-12);
        }
        let t = 200.0;
        let m = mean_matrix(&k, t).unwrap();
        for i in 0..2 {
            let s = m.0[i][0] + m.0[i][1];
            assert!((s.ln() / t - k.lambda).abs() < 1e-3);
        }
    }

    #[test]
    fn ihrg_constant_differs_and_is_finite() {
        let k = constants(1.0).unwrap();
        let l = 2f64.sqrt();
        let direct = (3.0 * (2.0 + l * l) / ((l + 2.0).powi(2) * l * (l + 1.0))).ln();
        assert_abs_diff_eq!(ihrg_constant(&k), direct, epsilon = 1e-14);
        assert!((ihrg_constant(&k) - k.c).abs() > 1e-3);
        for rho in [0.5, 1.0, 2.0, 5.0] {
            assert!(ihrg_constant(&constants(rho).unwrap()).is_finite());
        }
    }

    #[test]
    fn epidemic_x_inverts() {
        let k = constants(2.0).unwrap();
        for t in [-2.0, 0.0, 1.3] {
            assert_abs_diff_eq!(k.epidemic_t(k.epidemic_x(t)), t, epsilon = 1e-12);
        }
    }
}

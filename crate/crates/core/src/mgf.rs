//! Fixed-point solver for the moment generating functions
//! `M_q(theta) = E[exp(-theta W^(q))]` of the martingale limits, and the
//! epidemic curve `f(t) = 1 - M_B(x(t))` built from them.
//!
//! With `J_q(theta) = int_0^1 M_q(theta w^lambda) dw` (the MGF of the limit
//! of a type-q particle that still has its Exp(1) lifetime ahead) the
//! system reads
//!
//! ```text
//! M_R = J_R   * exp(rho (J_B - 1))
//! M_B = J_R^2 * exp(rho (J_B - 1))
//! ```
//!
//! The iteration carries values and exact derivatives on the grid and
//! interpolates with monotone cubic Hermite pieces. The system is invariant
//! under `M(theta) -> M(c theta)`; the iteration keeps the slope at 0 fixed,
//! so the start `exp(-theta (lambda+1) u_q)` pins the scale to the limit of
//! a root that dies at time 0.

use std::io::{self, Write};
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::f17;
use crate::theory::ModelConstants;

#[derive(Debug, Error, PartialEq)]
pub enum MgfError {
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("no convergence after {iterations} iterations, residual history {history:?}")]
    NoConvergence { iterations: usize, history: Vec<f64> },
    #[error("iteration diverged at step {0}")]
    Diverged(usize),
    #[error("x(t) = {x} exceeds theta_max = {theta_max}; f is only available for t <= {t_max}")]
    OutOfRange { x: f64, theta_max: f64, t_max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub theta_max: f64,
    pub grid_points: usize,
    pub quad_nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            theta_max: 10.0,
            grid_points: 512,
            quad_nodes: 64,
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), MgfError> {
        let bad = |m: &str| Err(MgfError::InvalidConfig(m.into()));
        if !(self.theta_max.is_finite() && self.theta_max > 1.0) {
            return bad("theta_max must be finite and > 1");
        }
        if self.grid_points < 16 {
            return bad("grid_points must be >= 16");
        }
        if self.quad_nodes < 2 {
            return bad("quad_nodes must be >= 2");
        }
        if !(self.tol > 0.0 && self.tol < 1e-6) {
            return bad("tol must lie in (0, 1e-6)");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        Ok(())
    }
}

/// Smallest positive grid point.
const THETA_MIN: f64 = 1e-6;

fn make_grid(cfg: &SolverConfig) -> Vec<f64> {
    let n_geo = cfg.grid_points / 4;
    let n_lin = cfg.grid_points - n_geo - 1;
    let mut g = Vec::with_capacity(cfg.grid_points);
    g.push(0.0);
    let ratio = (1.0 / THETA_MIN).ln() / (n_geo - 1) as f64;
    for i in 0..n_geo {
        g.push((THETA_MIN.ln() + ratio * i as f64).exp());
    }
    let last = g.len() - 1;
    g[last] = 1.0;
    let h = (cfg.theta_max - 1.0) / n_lin as f64;
    for i in 1..=n_lin {
        g.push(1.0 + h * i as f64);
    }
    let last = g.len() - 1;
    g[last] = cfg.theta_max;
    g
}

/// Monotone cubic Hermite interpolant of values `y` with slopes `d`.
#[derive(Debug, Clone, PartialEq)]
struct Hermite {
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Hermite {
    /// Applies the Fritsch-Carlson limiter to the supplied slopes.
    fn new(x: &[f64], y: Vec<f64>, mut d: Vec<f64>) -> Self {
        let n = x.len();
        for i in 0..n - 1 {
            let delta = (y[i + 1] - y[i]) / (x[i + 1] - x[i]);
            if delta == 0.0 {
                d[i] = 0.0;
                d[i + 1] = 0.0;
                continue;
            }
            let a = (d[i] / delta).max(0.0);
            let b = (d[i + 1] / delta).max(0.0);
            d[i] = a * delta;
            d[i + 1] = b * delta;
            let s = a * a + b * b;
            if s > 9.0 {
                let tau = 3.0 / s.sqrt();
                d[i] = tau * a * delta;
                d[i + 1] = tau * b * delta;
            }
        }
        Self { y, d }
    }

    #[inline]
    fn locate(x: &[f64], t: f64) -> usize {
        let i = x.partition_point(|&v| v <= t);
        i.clamp(1, x.len() - 1) - 1
    }

    /// Value and derivative at `t`, clamped to the grid range.
    #[inline]
    fn eval(&self, x: &[f64], t: f64) -> (f64, f64) {
        let t = t.clamp(x[0], x[x.len() - 1]);
        let i = Self::locate(x, t);
        let h = x[i + 1] - x[i];
        let s = (t - x[i]) / h;
        let (y0, y1, m0, m1) = (self.y[i], self.y[i + 1], self.d[i] * h, self.d[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        let v = (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * m1;
        let dv = ((6.0 * s2 - 6.0 * s) * y0 + (3.0 * s2 - 4.0 * s + 1.0) * m0 + (-6.0 * s2 + 6.0 * s) * y1 + (3.0 * s2 - 2.0 * s) * m1) / h;
        (v, dv)
    }
}

/// Quadrature for `int_0^1 g(w^lambda) dw` after `w = v^p`, which makes the
/// integrand smooth enough at 0 for Gauss-Legendre.
#[derive(Debug, Clone)]
struct Quad {
    /// `w^lambda` at each node.
    wl: Vec<f64>,
    weight: Vec<f64>,
}

impl Quad {
    fn new(lambda: f64, nodes: usize) -> Self {
        let p = (4.0 / lambda).ceil().clamp(1.0, 32.0);
        let gl = GaussLegendre::new(NonZeroUsize::new(nodes).expect("nodes > 0"));
        let mut wl = Vec::with_capacity(nodes);
        let mut weight = Vec::with_capacity(nodes);
        for &(x, a) in gl.as_node_weight_pairs() {
            let v = 0.5 * (x + 1.0);
            let w = v.powf(p);
            wl.push(w.powf(lambda));
            weight.push(0.5 * a * p * v.powf(p - 1.0));
        }
        Self { wl, weight }
    }
}

#[derive(Debug, Clone)]
pub struct MgfTable {
    pub theta: Vec<f64>,
    pub m_r: Vec<f64>,
    pub m_b: Vec<f64>,
    /// Derivatives `M_q'` on the grid.
    pub dm_r: Vec<f64>,
    pub dm_b: Vec<f64>,
    pub residual: f64,
    pub history: Vec<f64>,
    pub constants: ModelConstants,
    interp: [Hermite; 2],
    quad: Quad,
}

/// `(J_R, J_B, J_R', J_B')` at `theta`.
fn j_values(theta: f64, x: &[f64], interp: &[Hermite; 2], quad: &Quad) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (wl, a) in quad.wl.iter().zip(&quad.weight) {
        let y = theta * wl;
        let (vr, dr) = interp[0].eval(x, y);
        let (vb, db) = interp[1].eval(x, y);
        out[0] += a * vr;
        out[1] += a * vb;
        out[2] += a * wl * dr;
        out[3] += a * wl * db;
    }
    out
}

pub fn solve(k: &ModelConstants, cfg: &SolverConfig) -> Result<MgfTable, MgfError> {
    cfg.validate()?;
    let x = make_grid(cfg);
    let quad = Quad::new(k.lambda, cfg.quad_nodes);
    let rho = k.rho;
    let mean = [(k.lambda + 1.0) * k.u[0], (k.lambda + 1.0) * k.u[1]];
    let mut m: [Vec<f64>; 2] = [
        x.iter().map(|&t| (-t * mean[0]).exp()).collect(),
        x.iter().map(|&t| (-t * mean[1]).exp()).collect(),
    ];
    let mut d: [Vec<f64>; 2] = [
        m[0].iter().map(|v| -mean[0] * v).collect(),
        m[1].iter().map(|v| -mean[1] * v).collect(),
    ];
    let mut history = Vec::new();
    for it in 0..cfg.max_iter {
        let interp = [
            Hermite::new(&x, m[0].clone(), d[0].clone()),
            Hermite::new(&x, m[1].clone(), d[1].clone()),
        ];
        let mut nm = [vec![0.0; x.len()], vec![0.0; x.len()]];
        let mut nd = [vec![0.0; x.len()], vec![0.0; x.len()]];
        for (i, &t) in x.iter().enumerate() {
            let [jr, jb, djr, djb] = j_values(t, &x, &interp, &quad);
            let e = (rho * (jb - 1.0)).exp();
            let de = e * rho * djb;
            nm[0][i] = jr * e;
            nd[0][i] = djr * e + jr * de;
            nm[1][i] = jr * jr * e;
            nd[1][i] = 2.0 * jr * djr * e + jr * jr * de;
        }
        // Exact at 0.
        nm[0][0] = 1.0;
        nm[1][0] = 1.0;
        let mut res: f64 = 0.0;
        for q in 0..2 {
            for i in 0..x.len() {
                res = res.max((nm[q][i] - m[q][i]).abs());
            }
        }
        if !res.is_finite() || res > 1e3 {
            return Err(MgfError::Diverged(it));
        }
        history.push(res);
        m = nm;
        d = nd;
        if res < cfg.tol {
            let interp = [
                Hermite::new(&x, m[0].clone(), d[0].clone()),
                Hermite::new(&x, m[1].clone(), d[1].clone()),
            ];
            let [m_r, m_b] = m;
            let [dm_r, dm_b] = d;
            return Ok(MgfTable {
                theta: x,
                m_r,
                m_b,
                dm_r,
                dm_b,
                residual: res,
                history,
                constants: *k,
                interp,
                quad,
            });
        }
    }
    Err(MgfError::NoConvergence {
        iterations: cfg.max_iter,
        history,
    })
}

impl MgfTable {
    pub fn theta_max(&self) -> f64 {
        self.theta[self.theta.len() - 1]
    }

    fn type_index(blue: bool) -> usize {
        usize::from(blue)
    }

    /// `M_R(theta)` by interpolation, `theta` clamped to the grid.
    pub fn m_r_at(&self, theta: f64) -> f64 {
        self.interp[0].eval(&self.theta, theta).0
    }

    pub fn m_b_at(&self, theta: f64) -> f64 {
        self.interp[1].eval(&self.theta, theta).0
    }

    /// `-M_q'(0+)`, the mean of `W^(q)`.
    pub fn mean(&self, blue: bool) -> f64 {
        let q = Self::type_index(blue);
        -[&self.dm_r, &self.dm_b][q][0]
    }

    /// `J_q(theta)`, the MGF of the limit started from a living type-q
    /// particle.
    pub fn j_at(&self, blue: bool, theta: f64) -> f64 {
        let j = j_values(theta, &self.theta, &self.interp, &self.quad);
        j[Self::type_index(blue)]
    }

    /// `-J_q'(0+) = -M_q'(0+) / (lambda + 1)`.
    pub fn living_mean(&self, blue: bool) -> f64 {
        let j = j_values(0.0, &self.theta, &self.interp, &self.quad);
        -j[2 + Self::type_index(blue)]
    }

    /// Largest `t` with `x(t) <= theta_max`.
    pub fn t_max(&self) -> f64 {
        self.constants.epidemic_t(self.theta_max())
    }

    /// `f(t) = 1 - M_B(x(t))`.
    pub fn f_curve(&self, t: f64) -> Result<f64, MgfError> {
        self.f_shifted(t, 1.0)
    }

    /// `f(t + log(w) / lambda) = 1 - M_B(w x(t))`.
    pub fn f_shifted(&self, t: f64, w: f64) -> Result<f64, MgfError> {
        let x = w * self.constants.epidemic_x(t);
        if x > self.theta_max() {
            return Err(MgfError::OutOfRange {
                x,
                theta_max: self.theta_max(),
                t_max: self.t_max(),
            });
        }
        Ok(1.0 - self.m_b_at(x))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "theta,M_R,M_B")?;
        for i in 0..self.theta.len() {
            writeln!(w, "{},{},{}", f17(self.theta[i]), f17(self.m_r[i]), f17(self.m_b[i]))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::constants;

    #[test]
    fn hermite_reproduces_cubics() {
        let x: Vec<f64> = (0..11).map(|i| f64::from(i) * 0.3).collect();
        let f = |t: f64| 2.0 - t + 0.1 * t * t;
        let df = |t: f64| -1.0 + 0.2 * t;
        let h = Hermite::new(&x, x.iter().map(|&t| f(t)).collect(), x.iter().map(|&t| df(t)).collect());
        for t in [0.05, 0.77, 1.5, 2.99] {
            let (v, dv) = h.eval(&x, t);
            assert!((v - f(t)).abs() < 1e-13);
            assert!((dv - df(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn limiter_keeps_monotone() {
        let x = vec![0.0, 1.0, 2.0, 3.0];
        let y = vec![1.0, 0.9, 0.1, 0.0];
        // Deliberately bad slopes.
        let h = Hermite::new(&x, y, vec![5.0, -3.0, -3.0, 5.0]);
        let mut prev = f64::INFINITY;
        for i in 0..=300 {
            let (v, _) = h.eval(&x, f64::from(i) * 0.01);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn quadrature_of_power() {
        for lambda in [0.6, 1.414, 2.56, 9.0] {
            let q = Quad::new(lambda, 64);
            let s: f64 = q.wl.iter().zip(&q.weight).map(|(a, b)| a * b).sum();
            assert!((s - 1.0 / (lambda + 1.0)).abs() < 1e-13, "{lambda}");
            let one: f64 = q.weight.iter().sum();
            assert!((one - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let c = SolverConfig { tol: 1e-3, ..Default::default() };
        assert!(c.validate().is_err());
        let c = SolverConfig { theta_max: 0.5, ..Default::default() };
        assert!(matches!(solve(&constants(1.0).unwrap(), &c), Err(MgfError::InvalidConfig(_))));
    }

    #[test]
    fn grid_shape() {
        let g = make_grid(&SolverConfig::default());
        assert_eq!(g.len(), 512);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 10.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(g.contains(&1.0));
    }

    #[test]
    fn solution_properties() {
        let k = constants(1.0).unwrap();
        let t = solve(&k, &SolverConfig::default()).unwrap();
        assert!(t.residual < 1e-10);
        assert_eq!(t.m_r[0], 1.0);
        assert_eq!(t.m_b[0], 1.0);
        assert!(t.m_b.windows(2).all(|w| w[1] < w[0]));
        assert!(t.m_r.windows(2).all(|w| w[1] < w[0]));
        assert!(t.m_b.iter().all(|&v| v > 0.0 && v <= 1.0));
        assert!((t.mean(true) - (k.lambda + 1.0) * k.u[1]).abs() < 1e-3);
        assert!((t.mean(false) - (k.lambda + 1.0) * k.u[0]).abs() < 1e-3);
        assert!((t.living_mean(true) - k.u[1]).abs() < 1e-3);
        // Numerical slope from the grid values.
        let h = t.theta[1];
        assert!(((1.0 - t.m_b[1]) / h - t.mean(true)).abs() < 1e-3);
    }

    #[test]
    fn residual_satisfies_the_system() {
        let k = constants(2.0).unwrap();
        let t = solve(&k, &SolverConfig::default()).unwrap();
        for &th in &[0.3, 1.7, 6.2] {
            let jr = t.j_at(false, th);
            let jb = t.j_at(true, th);
            let e = (k.rho * (jb - 1.0)).exp();
            assert!((t.m_r_at(th) - jr * e).abs() < 1e-7);
            assert!((t.m_b_at(th) - jr * jr * e).abs() < 1e-7);
        }
    }

    #[test]
    fn f_curve_shape() {
        let k = constants(2.0).unwrap();
        let t = solve(&k, &SolverConfig { theta_max: 200.0, grid_points: 1024, ..Default::default() }).unwrap();
        assert!(t.f_curve(-20.0).unwrap() < 1e-6);
        assert!(t.f_curve(t.t_max()).unwrap() > 0.99);
        let mut prev = 0.0;
        for i in 0..100 {
            let f = t.f_curve(-4.0 + 0.06 * f64::from(i)).unwrap();
            assert!(f >= prev);
            prev = f;
        }
        assert!(t.f_shifted(0.0, 2.0).unwrap() >= t.f_shifted(0.0, 1.0).unwrap());
        assert!(matches!(t.f_curve(t.t_max() + 1.0), Err(MgfError::OutOfRange { .. })));
    }
}

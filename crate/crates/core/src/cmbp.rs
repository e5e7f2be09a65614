//! Count-based simulation of the two-type continuous-time branching process
//! that describes shortest-weight trees locally.
//!
//! Every particle lives an Exp(1) time. A red particle leaves 1 red and
//! Poi(rho) blue children, a blue one 2 red and Poi(rho) blue. Lifetimes are
//! exchangeable, so only the type counts are tracked: the next death comes
//! after Exp(1)/A and hits a red particle with probability A_R/A.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::fpp::Color;
use crate::rng::{self, SimRng};
use crate::theory::ModelConstants;

/// Hard cap on the number of splits in one trajectory.
pub const MAX_SPLITS: usize = 100_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum CmbpError {
    #[error("rho must be finite and > 0, got {0}")]
    InvalidRho(f64),
    #[error("invalid stop condition: {0}")]
    InvalidStop(String),
    #[error("trajectory would exceed {MAX_SPLITS} splits")]
    TooManySplits,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BpStop {
    AtTime(f64),
    AtSplits(usize),
}

/// Poi(rho) by sequential inversion for small rho, rand_distr above 10.
#[derive(Debug, Clone)]
pub struct PoissonSampler {
    rho: f64,
    exp_neg: f64,
    large: Option<Poisson<f64>>,
}

impl PoissonSampler {
    pub fn new(rho: f64) -> Result<Self, CmbpError> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(CmbpError::InvalidRho(rho));
        }
        let large = if rho > 10.0 {
            Some(Poisson::new(rho).map_err(|_| CmbpError::InvalidRho(rho))?)
        } else {
            None
        };
        Ok(Self {
            rho,
            exp_neg: (-rho).exp(),
            large,
        })
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if let Some(p) = &self.large {
            return p.sample(rng) as u64;
        }
        let u: f64 = rng.random();
        let mut k = 0u64;
        let mut p = self.exp_neg;
        let mut cdf = p;
        while u >= cdf {
            k += 1;
            p *= self.rho / k as f64;
            cdf += p;
            // Guards the tail against rounding in cdf.
            if p == 0.0 {
                break;
            }
        }
        k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Split {
    /// Split time `T_i`.
    pub t: f64,
    pub parent: Color,
    pub d_r: u32,
    pub d_b: u32,
    /// Alive count `S_i` right after the split.
    pub alive: u64,
}

impl Split {
    /// Offspring count `D_i`.
    pub fn offspring(&self) -> u64 {
        u64::from(self.d_r) + u64::from(self.d_b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpTrajectory {
    pub root: Color,
    pub splits: Vec<Split>,
    pub a_r: u64,
    pub a_b: u64,
    pub t_end: f64,
}

impl BpTrajectory {
    pub fn alive(&self) -> u64 {
        self.a_r + self.a_b
    }

    /// Dead particles per type among the first `m` splits, `[red, blue]`.
    pub fn dead_counts(&self, m: usize) -> [u64; 2] {
        let mut c = [0u64; 2];
        for s in &self.splits[..m.min(self.splits.len())] {
            c[s.parent.index()] += 1;
        }
        c
    }
}

#[inline]
fn children<R: Rng + ?Sized>(parent: Color, pois: &PoissonSampler, rng: &mut R) -> (u64, u64) {
    let red = match parent {
        Color::Red => 1,
        Color::Blue => 2,
    };
    (red, pois.sample(rng))
}

/// Simulates one trajectory with its full split log. The root dies at time
/// 0 and its offspring are drawn at once.
pub fn simulate(rho: f64, root: Color, stop: BpStop, seed: u64) -> Result<BpTrajectory, CmbpError> {
    let mut rng = rng::stream(seed, "cmbp/simulate", &[]);
    simulate_with(rho, root, stop, &mut rng)
}

pub fn simulate_with(rho: f64, root: Color, stop: BpStop, rng: &mut SimRng) -> Result<BpTrajectory, CmbpError> {
    let pois = PoissonSampler::new(rho)?;
    match stop {
        BpStop::AtTime(t) if !(t.is_finite() && t >= 0.0) => {
            return Err(CmbpError::InvalidStop(format!("time {t}")));
        }
        BpStop::AtSplits(0) => return Err(CmbpError::InvalidStop("zero splits".into())),
        BpStop::AtSplits(m) if m > MAX_SPLITS => return Err(CmbpError::TooManySplits),
        _ => {}
    }
    let mut splits = Vec::new();
    let (r, b) = children(root, &pois, rng);
    let (mut a_r, mut a_b) = (r, b);
    splits.push(Split {
        t: 0.0,
        parent: root,
        d_r: r as u32,
        d_b: b as u32,
        alive: a_r + a_b,
    });
    let mut t = 0.0;
    loop {
        if let BpStop::AtSplits(m) = stop {
            if splits.len() >= m {
                break;
            }
        }
        let a = a_r + a_b;
        let dt = rng::exp1(rng) / a as f64;
        if let BpStop::AtTime(end) = stop {
            if t + dt > end {
                t = end;
                break;
            }
        }
        t += dt;
        let parent = if rng.random_range(0..a) < a_r { Color::Red } else { Color::Blue };
        match parent {
            Color::Red => a_r -= 1,
            Color::Blue => a_b -= 1,
        }
        let (r, b) = children(parent, &pois, rng);
        a_r += r;
        a_b += b;
        splits.push(Split {
            t,
            parent,
            d_r: r as u32,
            d_b: b as u32,
            alive: a_r + a_b,
        });
        if splits.len() > MAX_SPLITS {
            return Err(CmbpError::TooManySplits);
        }
    }
    Ok(BpTrajectory {
        root,
        splits,
        a_r,
        a_b,
        t_end: t,
    })
}

/// Alive counts `(A_R, A_B)` at time `t_end` for a root that dies at 0,
/// without a split log.
pub fn alive_at<R: Rng + ?Sized>(pois: &PoissonSampler, root: Color, t_end: f64, rng: &mut R) -> (u64, u64) {
    let start = children(root, pois, rng);
    alive_from(pois, start, t_end, rng)
}

/// Alive counts at `t_end` started from `start` living particles, each with
/// a fresh Exp(1) lifetime.
pub fn alive_from<R: Rng + ?Sized>(pois: &PoissonSampler, start: (u64, u64), t_end: f64, rng: &mut R) -> (u64, u64) {
    let (mut a_r, mut a_b) = start;
    let mut t = 0.0;
    loop {
        let a = a_r + a_b;
        if a == 0 {
            return (0, 0);
        }
        t += rng::exp1(rng) / a as f64;
        if t > t_end {
            return (a_r, a_b);
        }
        // A red death leaves its one red child in place.
        if rng.random_range(0..a) >= a_r {
            a_b -= 1;
            a_r += 2;
        }
        a_b += pois.sample(rng);
    }
}

/// `W_t = e^{-lambda t} (A_R u_R + A_B u_B)` at the end of the trajectory.
pub fn martingale_w(traj: &BpTrajectory, k: &ModelConstants) -> f64 {
    w_from_counts(traj.a_r, traj.a_b, traj.t_end, k)
}

pub fn w_from_counts(a_r: u64, a_b: u64, t: f64, k: &ModelConstants) -> f64 {
    (-k.lambda * t).exp() * (a_r as f64 * k.u[0] + a_b as f64 * k.u[1])
}

/// Default W horizon, `10 / lambda`.
pub fn default_horizon(k: &ModelConstants) -> f64 {
    10.0 / k.lambda
}

/// How the root of a W sample starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RootStart {
    /// The root dies at time 0, as in the exploration of a graph. This is
    /// the W of the distance and epidemic limits, with mean `(lambda+1) u`.
    Immediate,
    /// The root lives an Exp(1) time, so `A(0) = e_root` and the mean is `u`.
    Living,
}

/// `reps` independent draws of `W_T`, replication `i` using its own stream.
pub fn sample_w(
    k: &ModelConstants,
    root: Color,
    start: RootStart,
    horizon: f64,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>, CmbpError> {
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(CmbpError::InvalidStop(format!("horizon {horizon}")));
    }
    let pois = PoissonSampler::new(k.rho)?;
    let tag = match (root, start) {
        (Color::Red, RootStart::Immediate) => "cmbp/w/red",
        (Color::Blue, RootStart::Immediate) => "cmbp/w/blue",
        (Color::Red, RootStart::Living) => "cmbp/w/red/living",
        (Color::Blue, RootStart::Living) => "cmbp/w/blue/living",
    };
    Ok((0..reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, tag, &[i as u64]);
            let (a_r, a_b) = match start {
                RootStart::Immediate => alive_at(&pois, root, horizon, &mut rng),
                RootStart::Living => {
                    let s = match root {
                        Color::Red => (1, 0),
                        Color::Blue => (0, 1),
                    };
                    alive_from(&pois, s, horizon, &mut rng)
                }
            };
            w_from_counts(a_r, a_b, horizon, k)
        })
        .collect())
}

/// `sum_{i <= k} D_i / S_i`, the mean generation after `k` splits.
pub fn expected_generation(traj: &BpTrajectory, k: usize) -> f64 {
    traj.splits[..k.min(traj.splits.len())]
        .iter()
        .map(|s| s.offspring() as f64 / s.alive as f64)
        .sum()
}

/// Draws `G_k = sum_{i <= k} L_i` with independent `L_i ~ Bernoulli(D_i / S_i)`:
/// the generation of a uniformly chosen alive particle after split `k`.
pub fn generation_sample<R: Rng + ?Sized>(traj: &BpTrajectory, k: usize, rng: &mut R) -> u64 {
    let mut g = 0;
    for s in &traj.splits[..k.min(traj.splits.len())] {
        let p = s.offspring() as f64 / s.alive as f64;
        if rng.random::<f64>() < p {
            g += 1;
        }
    }
    g
}

//! Training algorithms: SGD and Adam under cosine annealing, L-BFGS with a
//! strong Wolfe line search, and Gauss–Newton steps solved matrix-free by CG.
//!
//! Parameters and gradients live in the working precision `T`; step sizes,
//! line-search brackets and tolerances are binary64 control values.

mod lbfgs;
mod line_search;
mod ngd;

pub use lbfgs::{Lbfgs, LbfgsConfig};
pub use line_search::{strong_wolfe, LineSearchResult, WolfeConfig};
pub use ngd::{ngd_step, NgdConfig};

use crate::error::Result;
use crate::linalg::{dot, LinearOperator};
use crate::precision::{Real, ScalarKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Lbfgs,
    Ngd,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "SGD",
            OptimizerKind::Adam => "Adam",
            OptimizerKind::Lbfgs => "L-BFGS",
            OptimizerKind::Ngd => "NGD",
        })
    }
}

/// A differentiable training objective.
pub trait Objective<T: Real> {
    /// Loss (widened to binary64) and gradient at `x`.
    fn eval(&mut self, x: &[T]) -> Result<(f64, Vec<T>)>;

    /// Gauss–Newton approximation of the Hessian at `x`, applied matrix-free.
    /// Objectives that are not sums of squares return `None`.
    fn gauss_newton<'a>(&'a mut self, _x: &[T]) -> Result<Option<Box<dyn LinearOperator<T> + 'a>>> {
        Ok(None)
    }
}

/// Outcome of one optimizer step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    /// Loss at the start of the step.
    pub loss: f64,
    pub evaluations: usize,
    pub line_search_failed: bool,
    pub fallback: bool,
}

/// `η_t = η_min + ½(η₀ − η_min)(1 + cos(tπ/T_max))`, constant after `T_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub eta0: f64,
    pub eta_min: f64,
    pub t_max: usize,
}

impl CosineSchedule {
    pub fn lr(&self, t: usize) -> f64 {
        if t >= self.t_max {
            return self.eta_min;
        }
        let phase = std::f64::consts::PI * t as f64 / self.t_max as f64;
        self.eta_min + 0.5 * (self.eta0 - self.eta_min) * (1.0 + phase.cos())
    }

    /// Defaults for Adam and SGD in the given precision.
    pub fn for_precision(kind: ScalarKind) -> Self {
        CosineSchedule { eta0: 1e-3, eta_min: adam_eta_min(kind), t_max: 5000 }
    }
}

fn adam_eta_min(kind: ScalarKind) -> f64 {
    match kind {
        ScalarKind::Binary16 => 1e-4,
        ScalarKind::Binary32 => 1e-6,
        ScalarKind::Binary64 => 1e-10,
    }
}

/// `θ ← θ − lr·g`
pub fn sgd_step<T: Real>(theta: &mut [T], grad: &[T], lr: f64) {
    let lr = T::from_f64(lr);
    for (x, &g) in theta.iter_mut().zip(grad) {
        *x -= lr * g;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn for_precision(kind: ScalarKind) -> Self {
        let eps = match kind {
            ScalarKind::Binary16 => 1e-4,
            ScalarKind::Binary32 => 1e-8,
            ScalarKind::Binary64 => 1e-16,
        };
        AdamConfig { beta1: 0.9, beta2: 0.999, eps }
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    config: AdamConfig,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Adam { config, m: vec![T::zero(); len], v: vec![T::zero(); len], t: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, theta: &mut [T], grad: &[T], lr: f64) {
        self.t += 1;
        let c = self.config;
        let b1 = T::from_f64(c.beta1);
        let b2 = T::from_f64(c.beta2);
        let one_b1 = T::from_f64(1.0 - c.beta1);
        let one_b2 = T::from_f64(1.0 - c.beta2);
        let corr1 = T::from_f64(1.0 / (1.0 - c.beta1.powi(self.t)));
        let corr2 = T::from_f64(1.0 / (1.0 - c.beta2.powi(self.t)));
        let eps = T::from_f64(c.eps);
        let lr = T::from_f64(lr);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + one_b1 * g;
            self.v[i] = b2 * self.v[i] + one_b2 * (g * g);
            let m_hat = self.m[i] * corr1;
            let v_hat = self.v[i] * corr2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

pub(crate) fn max_abs<T: Real>(x: &[T]) -> f64 {
    x.iter().fold(0.0, |m, v| f64::max(m, v.to_f64().abs()))
}

pub(crate) fn dot64<T: Real>(a: &[T], b: &[T]) -> f64 {
    dot(a, b).to_f64()
}

/// `x + t d` in working precision.
pub(crate) fn offset<T: Real>(x: &[T], t: f64, d: &[T]) -> Vec<T> {
    let t = T::from_f64(t);
    x.iter().zip(d).map(|(&xi, &di)| xi + t * di).collect()
}


#[cfg(test)]
mod tests {
    use super::test_problems::Quadratic;
    use super::*;

    #[test]
    fn cosine_examples() {
        let s = CosineSchedule { eta0: 1e-3, eta_min: 1e-6, t_max: 5000 };
        assert_eq!(s.lr(0), 1e-3);
        assert!((s.lr(5000) - 1e-6).abs() < 1e-18);
        assert!((s.lr(2500) - 0.5 * (1e-3 + 1e-6)).abs() < 1e-15);
        assert_eq!(s.lr(6000), 1e-6);
        for t in 0..5000 {
            assert!(s.lr(t + 1) <= s.lr(t));
        }
    }

    #[test]
    fn sgd_examples() {
        let mut x = vec![1.0, -2.0];
        sgd_step(&mut x, &[0.0, 0.0], 0.1);
        assert_eq!(x, vec![1.0, -2.0]);
        let mut x = vec![0.0; 2];
        sgd_step(&mut x, &[3.0, -1.0], 0.5);
        assert_eq!(x, vec![-1.5, 0.5]);
        let mut x = vec![1.0];
        for t in 1..=20 {
            let g = x.clone();
            sgd_step(&mut x, &g, 0.1);
            assert!((x[0] - 0.9f64.powi(t)).abs() < 1e-14);
        }
    }

    #[test]
    fn adam_first_step_and_sign() {
        let cfg = AdamConfig::for_precision(ScalarKind::Binary64);
        let mut adam = Adam::<f64>::new(cfg, 3);
        let mut x = vec![0.0; 3];
        adam.step(&mut x, &[2.0, -0.5, 1e-3], 1e-2);
        for (xi, g) in x.iter().zip([2.0, -0.5, 1e-3f64]) {
            let expect = -1e-2 * g / (g.abs() + cfg.eps);
            assert!((xi - expect).abs() < 1e-15);
            assert!(xi.signum() == -g.signum());
        }
        let mut adam = Adam::<f64>::new(cfg, 2);
        let mut x = vec![1.0, 2.0];
        adam.step(&mut x, &[0.0, 0.0], 1.0);
        assert_eq!(x, vec![1.0, 2.0]);
    }

    #[test]
    fn adam_in_half_precision_uses_its_epsilon() {
        let cfg = AdamConfig::for_precision(ScalarKind::Binary16);
        let mut adam = Adam::<crate::Half>::new(cfg, 1);
        let mut x = vec![crate::Half::from_f64(0.0)];
        adam.step(&mut x, &[crate::Half::from_f64(1.0)], 1e-3);
        assert!((x[0].to_f64() + 1e-3).abs() < 2e-6);
    }

    #[test]
    fn first_order_methods_decrease_convex_quadratic() {
        let diag = vec![1.0, 4.0, 0.5];
        let mut f = Quadratic { diag: diag.clone(), evals: 0 };
        let mut x = vec![1.0, -1.0, 2.0];
        let mut prev = f.eval(&x).unwrap().0;
        for _ in 0..5 {
            let (_, g) = f.eval(&x).unwrap();
            sgd_step(&mut x, &g, 0.1);
            let now = f.eval(&x).unwrap().0;
            assert!(now < prev);
            prev = now;
        }
        let mut x = vec![1.0, -1.0, 2.0];
        let mut adam = Adam::new(AdamConfig::for_precision(ScalarKind::Binary64), 3);
        let mut prev = f.eval(&x).unwrap().0;
        for _ in 0..5 {
            let (_, g) = f.eval(&x).unwrap();
            adam.step(&mut x, &g, 0.05);
            let now = f.eval(&x).unwrap().0;
            assert!(now < prev);
            prev = now;
        }
    }
}

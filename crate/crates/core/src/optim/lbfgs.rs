use super::line_search::{strong_wolfe, WolfeConfig};
use super::{dot64, max_abs, Objective, StepReport};
use crate::error::Result;
use crate::linalg::axpy;
use crate::precision::{Real, ScalarKind};
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub lr: f64,
    pub history: usize,
    pub max_iter: usize,
    pub max_eval: usize,
    pub tolerance_grad: f64,
    pub tolerance_change: f64,
    pub wolfe: WolfeConfig,
}

impl LbfgsConfig {
    pub fn for_precision(kind: ScalarKind) -> Self {
        let tol = match kind {
            ScalarKind::Binary16 => 1e-4,
            ScalarKind::Binary32 => 1e-8,
            ScalarKind::Binary64 => 1e-12,
        };
        LbfgsConfig {
            lr: 1.0,
            history: 100,
            max_iter: 20,
            max_eval: 25,
            tolerance_grad: tol,
            tolerance_change: tol,
            wolfe: WolfeConfig { tolerance_change: tol, ..WolfeConfig::default() },
        }
    }
}

struct Pair<T> {
    s: Vec<T>,
    y: Vec<T>,
    rho: f64,
}

/// Limited-memory BFGS. Each [`Lbfgs::step`] runs up to `max_iter` inner
/// iterations; curvature pairs persist across steps.
pub struct Lbfgs<T> {
    config: LbfgsConfig,
    pairs: VecDeque<Pair<T>>,
    h_diag: f64,
    prev: Option<(Vec<T>, Vec<T>, f64)>,
    iterations: usize,
    line_search_failures: usize,
}

impl<T: Real> Lbfgs<T> {
    pub fn new(config: LbfgsConfig) -> Self {
        Lbfgs { config, pairs: VecDeque::new(), h_diag: 1.0, prev: None, iterations: 0, line_search_failures: 0 }
    }

    pub fn history_len(&self) -> usize {
        self.pairs.len()
    }

    pub fn line_search_failures(&self) -> usize {
        self.line_search_failures
    }

    /// Stored pairs all satisfy `sᵀy > 0`.
    pub fn curvature_products(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| dot64(&p.s, &p.y)).collect()
    }

    fn two_loop(&self, g: &[T]) -> Vec<T> {
        let mut q: Vec<T> = g.iter().map(|&v| -v).collect();
        let mut alpha = Vec::with_capacity(self.pairs.len());
        for p in self.pairs.iter().rev() {
            let a = p.rho * dot64(&p.s, &q);
            axpy(T::from_f64(-a), &p.y, &mut q);
            alpha.push(a);
        }
        let h = T::from_f64(self.h_diag);
        for v in q.iter_mut() {
            *v *= h;
        }
        for (p, a) in self.pairs.iter().zip(alpha.into_iter().rev()) {
            let b = p.rho * dot64(&p.y, &q);
            axpy(T::from_f64(a - b), &p.s, &mut q);
        }
        q
    }

    fn reset(&mut self) {
        self.pairs.clear();
        self.h_diag = 1.0;
    }

    fn update_history(&mut self, s: Vec<T>, y: Vec<T>) {
        let ys = dot64(&y, &s);
        if ys > 0.0 && ys.is_finite() {
            let yy = dot64(&y, &y);
            if self.pairs.len() == self.config.history {
                self.pairs.pop_front();
            }
            self.pairs.push_back(Pair { s, y, rho: 1.0 / ys });
            self.h_diag = ys / yy;
        }
    }

    pub fn step<O: Objective<T> + ?Sized>(&mut self, obj: &mut O, x: &mut [T]) -> Result<StepReport> {
        let cfg = self.config;
        let (mut loss, mut g) = obj.eval(x)?;
        let mut report = StepReport { loss, evaluations: 1, ..StepReport::default() };
        if max_abs(&g) <= cfg.tolerance_grad {
            return Ok(report);
        }

        for n_iter in 1..=cfg.max_iter {
            self.iterations += 1;
            if let Some((s, g_prev, _)) = self.prev.take() {
                let y: Vec<T> = g.iter().zip(&g_prev).map(|(&a, &b)| a - b).collect();
                self.update_history(s, y);
            }
            let mut d = if self.pairs.is_empty() { g.iter().map(|&v| -v).collect() } else { self.two_loop(&g) };
            let mut gtd = dot64(&g, &d);
            if !(gtd < 0.0) {
                self.reset();
                report.fallback = true;
                d = g.iter().map(|&v| -v).collect();
                gtd = dot64(&g, &d);
            }
            if gtd > -cfg.tolerance_change {
                break;
            }

            let t0 = if self.iterations == 1 {
                let g1: f64 = g.iter().map(|v| v.to_f64().abs()).sum();
                (1.0f64).min(1.0 / g1) * cfg.lr
            } else {
                cfg.lr
            };
            let wolfe = WolfeConfig { max_evals: cfg.max_eval.min(cfg.wolfe.max_evals), ..cfg.wolfe };
            let ls = strong_wolfe(obj, x, &d, t0, loss, &g, &wolfe)?;
            report.evaluations += ls.evaluations;
            if !ls.satisfied {
                report.line_search_failed = true;
                self.line_search_failures += 1;
            }
            let prev_loss = loss;
            if ls.loss > loss || !ls.loss.is_finite() {
                // No point better than the start was found.
                self.reset();
                self.prev = None;
                break;
            }
            let t = T::from_f64(ls.t);
            let s: Vec<T> = d.iter().map(|&v| t * v).collect();
            axpy(T::one(), &s, x);
            let step_size = max_abs(&s);
            self.prev = Some((s, std::mem::replace(&mut g, ls.grad), prev_loss));
            loss = ls.loss;

            if n_iter == cfg.max_iter || report.evaluations >= cfg.max_eval {
                break;
            }
            if max_abs(&g) <= cfg.tolerance_grad
                || step_size <= cfg.tolerance_change
                || (loss - prev_loss).abs() < cfg.tolerance_change
            {
                break;
            }
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_problems::Quadratic;
    use super::*;

    #[test]
    fn converges_on_ill_conditioned_quadratic() {
        let diag: Vec<f64> = (0..20).map(|i| 10f64.powf(i as f64 / 5.0)).collect();
        let mut q = Quadratic { diag, evals: 0 };
        let mut x = vec![1.0; 20];
        let f0 = q.eval(&x).unwrap().0;
        let mut opt = Lbfgs::new(LbfgsConfig::for_precision(ScalarKind::Binary64));
        let mut last = f64::INFINITY;
        for _ in 0..10 {
            let r = opt.step(&mut q, &mut x).unwrap();
            assert!(r.loss <= last);
            last = r.loss;
        }
        let f = q.eval(&x).unwrap().0;
        assert!(f < 1e-14 * f0, "{f}");
        assert!(opt.curvature_products().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn two_dimensional_quadratic_within_ten_steps() {
        let mut q = Quadratic { diag: vec![1.0, 10.0], evals: 0 };
        let mut x = vec![1.0, 1.0];
        let mut cfg = LbfgsConfig::for_precision(ScalarKind::Binary64);
        cfg.tolerance_change = 1e-24;
        cfg.tolerance_grad = 1e-24;
        let mut opt = Lbfgs::new(cfg);
        for _ in 0..10 {
            opt.step(&mut q, &mut x).unwrap();
        }
        assert!(x[0].hypot(x[1]) <= 1e-8, "{x:?}");
    }

    #[test]
    fn stationary_point_is_left_alone() {
        let mut q = Quadratic { diag: vec![1.0, 10.0], evals: 0 };
        let mut x = vec![0.0, 0.0];
        let mut opt = Lbfgs::new(LbfgsConfig::for_precision(ScalarKind::Binary64));
        opt.step(&mut q, &mut x).unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
        assert_eq!(opt.history_len(), 0);
    }

    #[test]
    fn first_iteration_is_steepest_descent() {
        let mut q = Quadratic { diag: vec![1.0, 10.0], evals: 0 };
        let mut x = vec![1.0, 1.0];
        let mut cfg = LbfgsConfig::for_precision(ScalarKind::Binary64);
        cfg.max_iter = 1;
        let mut opt = Lbfgs::new(cfg);
        opt.step(&mut q, &mut x).unwrap();
        // x = x0 - t g0 with g0 = (1, 10)
        let t = (1.0 - x[0]) / 1.0;
        assert!((1.0 - 10.0 * t - x[1]).abs() < 1e-14);
        assert!(t > 0.0);
    }

    #[test]
    fn history_is_bounded() {
        let diag: Vec<f64> = (1..=50).map(|i| i as f64).collect();
        let mut q = Quadratic { diag, evals: 0 };
        let mut x = vec![1.0; 50];
        let mut cfg = LbfgsConfig::for_precision(ScalarKind::Binary64);
        cfg.history = 3;
        cfg.tolerance_change = 0.0;
        cfg.tolerance_grad = 0.0;
        let mut opt = Lbfgs::new(cfg);
        opt.step(&mut q, &mut x).unwrap();
        assert!(opt.history_len() <= 3);
    }

    #[test]
    fn respects_evaluation_budget() {
        let diag: Vec<f64> = (1..=30).map(|i| (i * i) as f64).collect();
        let mut q = Quadratic { diag, evals: 0 };
        let mut x = vec![1.0; 30];
        let mut opt = Lbfgs::new(LbfgsConfig::for_precision(ScalarKind::Binary64));
        let r = opt.step(&mut q, &mut x).unwrap();
        assert_eq!(r.evaluations, q.evals);
        assert!(r.evaluations <= 25 + 25);
    }
}

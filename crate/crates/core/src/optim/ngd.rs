use super::line_search::{strong_wolfe, WolfeConfig};
use super::{dot64, Objective, StepReport};
use crate::error::{Error, Result};
use crate::linalg::{axpy, cg_solve, LinearOperator};
use crate::precision::{Real, ScalarKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NgdConfig {
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub damping: f64,
    pub wolfe: WolfeConfig,
}

impl NgdConfig {
    pub fn for_precision(kind: ScalarKind) -> Self {
        let tol = match kind {
            ScalarKind::Binary16 => 1e-9,
            ScalarKind::Binary32 => 1e-12,
            ScalarKind::Binary64 => 1e-14,
        };
        NgdConfig {
            cg_tol: tol,
            cg_max_iters: 20,
            damping: tol,
            wolfe: WolfeConfig { max_evals: 20, ..WolfeConfig::default() },
        }
    }
}

struct Damped<'a, T: Real> {
    inner: &'a dyn LinearOperator<T>,
    eps: f64,
}

impl<T: Real> LinearOperator<T> for Damped<'_, T> {
    fn dim_in(&self) -> usize {
        self.inner.dim_in()
    }
    fn dim_out(&self) -> usize {
        self.inner.dim_out()
    }
    fn apply(&self, x: &[T], out: &mut [T]) {
        self.inner.apply(x, out);
        for (o, &v) in out.iter_mut().zip(x) {
            *o += T::from_f64(self.eps * v.to_f64());
        }
    }
    fn apply_adjoint(&self, x: &[T], out: &mut [T]) {
        self.apply(x, out)
    }
}

/// One natural-gradient step: solve `(G + εI) d = −∇L` by CG with the
/// Gauss–Newton matrix `G` of the objective, then line-search along `d`.
///
/// A CG breakdown doubles `ε` once; a second breakdown falls back to the
/// negative gradient. Both events set [`StepReport::fallback`].
pub fn ngd_step<T: Real, O: Objective<T> + ?Sized>(
    obj: &mut O,
    x: &mut [T],
    cfg: &NgdConfig,
) -> Result<StepReport> {
    let (loss, g) = obj.eval(x)?;
    let mut report = StepReport { loss, evaluations: 1, ..StepReport::default() };
    let rhs: Vec<T> = g.iter().map(|&v| -v).collect();

    let solved = {
        let gn = obj
            .gauss_newton(x)?
            .ok_or_else(|| Error::Usage("objective has no Gauss–Newton structure".into()))?;
        let mut eps = cfg.damping;
        let mut solved = None;
        for _ in 0..2 {
            let op = Damped { inner: gn.as_ref(), eps };
            match cg_solve(&op, &rhs, cfg.cg_tol, cfg.cg_max_iters) {
                Ok(out) => {
                    solved = Some(out.x);
                    break;
                }
                Err(Error::NumericalFailure(_)) => {
                    report.fallback = true;
                    eps *= 2.0;
                }
                Err(e) => return Err(e),
            }
        }
        solved
    };

    let mut d = match solved {
        Some(d) if dot64(&g, &d) < 0.0 => d,
        _ => {
            report.fallback = true;
            rhs
        }
    };
    if dot64(&g, &d) >= 0.0 {
        return Ok(report);
    }

    let ls = strong_wolfe(obj, x, &d, 1.0, loss, &g, &cfg.wolfe)?;
    report.evaluations += ls.evaluations;
    report.line_search_failed = !ls.satisfied;
    if ls.loss <= loss && ls.loss.is_finite() {
        let t = T::from_f64(ls.t);
        for v in d.iter_mut() {
            *v *= t;
        }
        axpy(T::one(), &d, x);
    }
    Ok(report)
}

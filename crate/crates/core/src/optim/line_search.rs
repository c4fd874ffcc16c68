use super::{dot64, max_abs, offset, Objective};
use crate::error::Result;
use crate::precision::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WolfeConfig {
    pub c1: f64,
    pub c2: f64,
    pub tolerance_change: f64,
    pub max_evals: usize,
}

impl Default for WolfeConfig {
    fn default() -> Self {
        WolfeConfig { c1: 1e-4, c2: 0.9, tolerance_change: 1e-9, max_evals: 25 }
    }
}

#[derive(Debug, Clone)]
pub struct LineSearchResult<T> {
    pub t: f64,
    pub loss: f64,
    pub grad: Vec<T>,
    pub evaluations: usize,
    /// Both Wolfe conditions hold at `t`. Otherwise `t` is the best point seen.
    pub satisfied: bool,
}

#[derive(Clone)]
struct Probe<T> {
    t: f64,
    f: f64,
    g: Vec<T>,
    gtd: f64,
}

fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Minimizer of the cubic interpolating two points and slopes, clamped to
/// `bounds`; bisects when the cubic has no real minimizer.
fn cubic_interpolate(a: (f64, f64, f64), b: (f64, f64, f64), bounds: Option<(f64, f64)>) -> f64 {
    let (x1, f1, g1) = a;
    let (x2, f2, g2) = b;
    let (lo, hi) = bounds.unwrap_or(if x1 <= x2 { (x1, x2) } else { (x2, x1) });
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    let mid = 0.5 * (lo + hi);
    if !(d2_sq >= 0.0) {
        return mid;
    }
    let d2 = d2_sq.sqrt();
    let pos = if x1 <= x2 {
        x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
    } else {
        x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
    };
    if pos.is_finite() {
        pos.max(lo).min(hi)
    } else {
        mid
    }
}

/// Strong Wolfe line search along `d` from `x` with initial step `t`.
///
/// `f0`, `g0` are the loss and gradient at `x`; `d` must be a descent
/// direction. Bracketing and zoom use cubic interpolation.
pub fn strong_wolfe<T: Real, O: Objective<T> + ?Sized>(
    obj: &mut O,
    x: &[T],
    d: &[T],
    t: f64,
    f0: f64,
    g0: &[T],
    cfg: &WolfeConfig,
) -> Result<LineSearchResult<T>> {
    let gtd0 = dot64(g0, d);
    let d_norm = max_abs(d);
    let armijo = |t: f64, f: f64| f > f0 + cfg.c1 * t * gtd0;

    let mut evals = 0usize;
    let eval = |obj: &mut O, t: f64| -> Result<Probe<T>> {
        let (f, g) = obj.eval(&offset(x, t, d))?;
        let gtd = sanitize(dot64(&g, d));
        Ok(Probe { t, f: sanitize(f), g, gtd })
    };

    let start = Probe { t: 0.0, f: f0, g: g0.to_vec(), gtd: gtd0 };
    let mut prev = start.clone();
    let mut cur = eval(obj, t)?;
    evals += 1;
    let mut ls_iter = 0usize;

    let mut bracket: Vec<Probe<T>>;
    let mut done = false;
    loop {
        if ls_iter >= cfg.max_evals {
            bracket = vec![start.clone(), cur];
            break;
        }
        if armijo(cur.t, cur.f) || (ls_iter > 1 && cur.f >= prev.f) {
            bracket = vec![prev, cur];
            break;
        }
        if cur.gtd.abs() <= -cfg.c2 * gtd0 {
            bracket = vec![cur];
            done = true;
            break;
        }
        if cur.gtd >= 0.0 {
            bracket = vec![prev, cur];
            break;
        }
        let min_step = cur.t + 0.01 * (cur.t - prev.t);
        let max_step = cur.t * 10.0;
        let next_t = cubic_interpolate(
            (prev.t, prev.f, prev.gtd),
            (cur.t, cur.f, cur.gtd),
            Some((min_step, max_step)),
        );
        prev = cur;
        cur = eval(obj, next_t)?;
        evals += 1;
        ls_iter += 1;
    }

    if bracket.len() == 1 {
        let p = bracket.pop().unwrap();
        return Ok(LineSearchResult { t: p.t, loss: p.f, grad: p.g, evaluations: evals, satisfied: done });
    }

    let mut insufficient = false;
    let (mut low, mut high) = if bracket[0].f <= bracket[1].f { (0, 1) } else { (1, 0) };
    while !done && ls_iter < cfg.max_evals {
        if (bracket[1].t - bracket[0].t).abs() * d_norm < cfg.tolerance_change {
            break;
        }
        let mut t = cubic_interpolate(
            (bracket[0].t, bracket[0].f, bracket[0].gtd),
            (bracket[1].t, bracket[1].f, bracket[1].gtd),
            None,
        );
        let b_max = bracket[0].t.max(bracket[1].t);
        let b_min = bracket[0].t.min(bracket[1].t);
        let eps = 0.1 * (b_max - b_min);
        if (b_max - t).min(t - b_min) < eps {
            if insufficient || t >= b_max || t <= b_min {
                t = if (t - b_max).abs() < (t - b_min).abs() { b_max - eps } else { b_min + eps };
                insufficient = false;
            } else {
                insufficient = true;
            }
        } else {
            insufficient = false;
        }

        let p = eval(obj, t)?;
        evals += 1;
        ls_iter += 1;
        if armijo(p.t, p.f) || p.f >= bracket[low].f {
            bracket[high] = p;
        } else {
            if p.gtd.abs() <= -cfg.c2 * gtd0 {
                done = true;
            } else if p.gtd * (bracket[high].t - bracket[low].t) >= 0.0 {
                bracket[high] = bracket[low].clone();
            }
            bracket[low] = p;
        }
        (low, high) = if bracket[0].f <= bracket[1].f { (0, 1) } else { (1, 0) };
    }

    let best = bracket.swap_remove(low);
    Ok(LineSearchResult { t: best.t, loss: best.f, grad: best.g, evaluations: evals, satisfied: done })
}

#[cfg(test)]
mod tests {
    use super::super::test_problems::Quadratic;
    use super::*;
    use crate::error::Result;

    fn assert_wolfe(f0: f64, gtd0: f64, r: &LineSearchResult<f64>, d: &[f64], cfg: &WolfeConfig) {
        assert!(r.satisfied);
        assert!(r.loss <= f0 + cfg.c1 * r.t * gtd0 + 1e-15);
        assert!(dot64(&r.grad, d).abs() <= -cfg.c2 * gtd0 + 1e-15);
    }

    #[test]
    fn cubic_recovers_exact_quadratic_minimizer() {
        // f(t) = (t - 0.3)², slopes at 0 and 1
        let t = cubic_interpolate((0.0, 0.09, -0.6), (1.0, 0.49, 1.4), None);
        assert!((t - 0.3).abs() < 1e-14);
    }

    #[test]
    fn satisfies_wolfe_on_quadratics() {
        let cfg = WolfeConfig::default();
        for (diag, t0) in [(vec![1.0, 10.0], 1.0), (vec![1.0, 100.0], 5.0), (vec![0.01, 0.02], 1e-3)] {
            let mut q = Quadratic { diag, evals: 0 };
            let x = vec![1.0, 1.0];
            let (f0, g0) = q.eval(&x).unwrap();
            let d: Vec<f64> = g0.iter().map(|v| -v).collect();
            let r = strong_wolfe(&mut q, &x, &d, t0, f0, &g0, &cfg).unwrap();
            assert_wolfe(f0, dot64(&g0, &d), &r, &d, &cfg);
            assert!(r.loss < f0);
            assert_eq!(r.evaluations, q.evals - 1);
        }
    }

    struct Rosenbrock;

    impl Objective<f64> for Rosenbrock {
        fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Ok((f, g))
        }
    }

    #[test]
    fn satisfies_wolfe_on_rosenbrock() {
        let cfg = WolfeConfig::default();
        for x in [vec![-1.2, 1.0], vec![0.0, 0.0], vec![2.0, -1.0]] {
            let (f0, g0) = Rosenbrock.eval(&x).unwrap();
            let d: Vec<f64> = g0.iter().map(|v| -v).collect();
            let r = strong_wolfe(&mut Rosenbrock, &x, &d, 1.0, f0, &g0, &cfg).unwrap();
            assert_wolfe(f0, dot64(&g0, &d), &r, &d, &cfg);
        }
    }

    struct Exploding;

    impl Objective<f64> for Exploding {
        fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
            if x[0] > 0.5 {
                return Ok((f64::NAN, vec![f64::NAN]));
            }
            Ok(((x[0] - 0.4).powi(2), vec![2.0 * (x[0] - 0.4)]))
        }
    }

    #[test]
    fn non_finite_trial_points_are_bracketed_away() {
        let cfg = WolfeConfig::default();
        let x = vec![0.0];
        let (f0, g0) = Exploding.eval(&x).unwrap();
        let r = strong_wolfe(&mut Exploding, &x, &[1.0], 10.0, f0, &g0, &cfg).unwrap();
        assert!(r.loss.is_finite() && r.loss < f0);
    }
}

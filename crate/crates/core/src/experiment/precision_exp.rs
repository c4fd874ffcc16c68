use super::metrics::sample_parameters;
use super::train::sci;
use crate::error::Result;
use crate::fem::DiffusionField;
use crate::linalg::LinearOperator;
use crate::nodal_op::{Basis, NodalOperator};
use crate::precision::{Half, Real, ScalarKind};
use crate::stable_op::StableOperator;
use crate::Formulation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::path::Path;

/// How the random unit coefficient vectors are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Draw {
    /// `Hᵀz / ‖Hᵀz‖` with Gaussian nodal `z`: the complement of the kernel of `H`.
    Range,
    /// Isotropic Gaussian direction in the stacked coefficient space.
    Isotropic,
}

impl std::fmt::Display for Draw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Draw::Range => "range",
            Draw::Isotropic => "isotropic",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionRow {
    pub trial: usize,
    pub draw: Draw,
    pub precision: ScalarKind,
    pub y: [f64; 4],
    /// Relative error of `wᵀDᵀC_yDw` against binary64.
    pub stable_error: f64,
    /// Relative error of `wᵀHᵀA_yHw` against binary64.
    pub unstable_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionSummary {
    pub draw: Draw,
    pub precision: ScalarKind,
    pub median_stable: f64,
    pub median_unstable: f64,
}

impl PrecisionSummary {
    pub fn ratio(&self) -> f64 {
        self.median_unstable / self.median_stable
    }
}

struct Case {
    y: [f64; 4],
    w: Vec<f64>,
}

fn unit(mut w: Vec<f64>) -> Vec<f64> {
    let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    w.iter_mut().for_each(|x| *x /= n);
    w
}

fn draw_cases(op: &StableOperator<f64>, draw: Draw, trials: usize, seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ys = sample_parameters(trials, seed.wrapping_add(1));
    ys.into_iter()
        .map(|y| {
            let w = match draw {
                Draw::Isotropic => (0..op.coeff_dim()).map(|_| rng.sample(StandardNormal)).collect(),
                Draw::Range => {
                    let mut w = Vec::with_capacity(op.coeff_dim());
                    for frame in std::iter::once(op.u_frame()).chain(op.sigma_frame()) {
                        let z: Vec<f64> = (0..frame.finest_size()).map(|_| rng.sample(StandardNormal)).collect();
                        let mut part = vec![0.0; frame.total_size()];
                        frame.synthesis::<f64>().apply_adjoint(&z, &mut part);
                        w.extend(part);
                    }
                    w
                }
            };
            Case { y, w: unit(w) }
        })
        .collect()
}

fn errors<T: Real>(levels: usize, truth: &StableOperator<f64>, cases: &[Case]) -> Result<Vec<(f64, f64)>> {
    let stable = StableOperator::<T>::new(Formulation::Fosls, levels)?;
    let nodal = NodalOperator::<T>::new(Formulation::Fosls, levels, Basis::Frame)?;
    cases
        .iter()
        .map(|c| {
            let field = DiffusionField::new(c.y)?;
            let w: Vec<T> = c.w.iter().map(|&v| T::from_f64(v)).collect();
            // the truth sees the same rounded input, so only evaluation error remains
            let rounded: Vec<f64> = w.iter().map(|v| v.to_f64()).collect();
            let exact = truth.quadratic_form(&truth.form(&field), &rounded)?;
            let s = stable.quadratic_form(&stable.form(&field), &w)?.to_f64();
            let u = nodal.quadratic_form(&nodal.form(&field), &w)?.to_f64();
            Ok(((s - exact).abs() / exact, (u - exact).abs() / exact))
        })
        .collect()
}

/// Quadratic-form errors of both evaluation paths in every precision, for
/// `trials` random unit vectors of each [`Draw`].
pub fn precision_experiment(levels: usize, trials: usize, seed: u64) -> Result<Vec<PrecisionRow>> {
    let truth = StableOperator::<f64>::new(Formulation::Fosls, levels)?;
    let mut rows = Vec::new();
    for draw in [Draw::Range, Draw::Isotropic] {
        let cases = draw_cases(&truth, draw, trials, seed);
        for precision in [ScalarKind::Binary16, ScalarKind::Binary32, ScalarKind::Binary64] {
            let errs = match precision {
                ScalarKind::Binary16 => errors::<Half>(levels, &truth, &cases)?,
                ScalarKind::Binary32 => errors::<f32>(levels, &truth, &cases)?,
                ScalarKind::Binary64 => errors::<f64>(levels, &truth, &cases)?,
            };
            for (trial, (c, (s, u))) in cases.iter().zip(errs).enumerate() {
                rows.push(PrecisionRow { trial, draw, precision, y: c.y, stable_error: s, unstable_error: u });
            }
        }
    }
    Ok(rows)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => values[n / 2],
        _ => 0.5 * (values[n / 2 - 1] + values[n / 2]),
    }
}

pub fn summarize(rows: &[PrecisionRow]) -> Vec<PrecisionSummary> {
    let mut out = Vec::new();
    for draw in [Draw::Range, Draw::Isotropic] {
        for precision in [ScalarKind::Binary16, ScalarKind::Binary32, ScalarKind::Binary64] {
            let sel: Vec<&PrecisionRow> = rows.iter().filter(|r| r.draw == draw && r.precision == precision).collect();
            if sel.is_empty() {
                continue;
            }
            let mut s: Vec<f64> = sel.iter().map(|r| r.stable_error).collect();
            let mut u: Vec<f64> = sel.iter().map(|r| r.unstable_error).collect();
            out.push(PrecisionSummary { draw, precision, median_stable: median(&mut s), median_unstable: median(&mut u) });
        }
    }
    out
}

pub fn write_precision_csv(path: &Path, rows: &[PrecisionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["trial", "draw", "precision", "y1", "y2", "y3", "y4", "stable_error", "unstable_error"])?;
    for r in rows {
        let mut rec = vec![r.trial.to_string(), r.draw.to_string(), r.precision.to_string()];
        rec.extend(r.y.iter().map(|&v| sci(v)));
        rec.push(sci(r.stable_error));
        rec.push(sci(r.unstable_error));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary64_rows_are_exact_to_roundoff() {
        let rows = precision_experiment(5, 6, 3).unwrap();
        assert_eq!(rows.len(), 2 * 3 * 6);
        for r in rows.iter().filter(|r| r.precision == ScalarKind::Binary64) {
            assert!(r.stable_error <= 1e-10 && r.unstable_error <= 1e-10);
        }
        assert_eq!(rows, precision_experiment(5, 6, 3).unwrap());
    }

    #[test]
    fn range_draws_are_orthogonal_to_the_kernel() {
        let op = StableOperator::<f64>::new(Formulation::Fosls, 4).unwrap();
        let cases = draw_cases(&op, Draw::Range, 2, 0);
        // a kernel element: one coarse hat minus its fine-level expansion
        let frame = op.u_frame();
        let mut k = vec![0.0; op.coeff_dim()];
        k[0] = 1.0;
        let nodal = frame.synthesize_nodal(&k[..frame.total_size()]).unwrap();
        let fine = frame.from_nodal_values(&nodal);
        for (i, v) in frame.level_range(4).zip(fine) {
            k[i] -= v;
        }
        assert!(frame.synthesize_nodal(&k[..frame.total_size()]).unwrap().iter().all(|v| v.abs() < 1e-12));
        for c in cases {
            let d: f64 = c.w.iter().zip(&k).map(|(a, b)| a * b).sum();
            assert!(d.abs() < 1e-12);
            assert!((c.w.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn median_of_even_and_odd_lengths() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}

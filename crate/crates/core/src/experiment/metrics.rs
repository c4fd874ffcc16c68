use super::config::Preconditioning;
use crate::error::{check_len, Result};
use crate::fem::{energy_functional, solve_galerkin_energy, solve_reference, DiffusionField, DyadicMesh};
use crate::nodal_op::{Basis, NodalOperator};
use crate::Formulation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// I.i.d. uniform draws on `[0.5, 1.5]⁴`.
pub fn sample_parameters(count: usize, seed: u64) -> Vec<[f64; 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| std::array::from_fn(|_| rng.random_range(DiffusionField::LOWER..=DiffusionField::UPPER))).collect()
}

/// `(MRE, MSE)` of predicted against reference vectors. References with
/// zero norm are skipped in the relative error.
pub fn compute_mre_mse(predictions: &[Vec<f64>], references: &[Vec<f64>]) -> Result<(f64, f64)> {
    check_len(references.len(), predictions.len())?;
    let mut rel = Vec::with_capacity(references.len());
    let mut sq = Vec::with_capacity(references.len());
    for (p, r) in predictions.iter().zip(references) {
        check_len(r.len(), p.len())?;
        let e2: f64 = p.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum();
        let r2: f64 = r.iter().map(|v| v * v).sum();
        if r2 > 0.0 {
            rel.push((e2 / r2).sqrt());
        }
        sq.push(e2);
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok((mean(&rel), mean(&sq)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub mre: f64,
    pub mse: f64,
    #[serde(skip)]
    pub wall_time: f64,
}

struct TestCase {
    field: DiffusionField,
    form: crate::nodal_op::NodalForm<f64>,
    reference: Vec<f64>,
    // minimum of the energy over the discrete space
    floor: f64,
}

/// Binary64 evaluation of network outputs on held-out parameters.
///
/// Test loss is the least-squares functional of the synthesized prediction
/// (for the energy formulation: energy above the Galerkin minimum). MRE and
/// MSE compare stacked finest-level nodal values with the reference solve.
pub struct Evaluator {
    formulation: Formulation,
    levels: usize,
    op: NodalOperator<f64>,
    cases: Vec<TestCase>,
}

impl Evaluator {
    pub fn new(formulation: Formulation, levels: usize, preconditioning: Preconditioning, ys: &[[f64; 4]]) -> Result<Self> {
        let basis = match preconditioning {
            Preconditioning::None => Basis::Nodal,
            _ => Basis::Frame,
        };
        let op = NodalOperator::<f64>::new(formulation, levels, basis)?;
        let mesh = DyadicMesh::new(levels)?;
        let cases = ys
            .iter()
            .map(|y| {
                let field = DiffusionField::new(*y)?;
                let (reference, floor) = match formulation {
                    Formulation::Fosls => (solve_reference(&field, levels, 1.0)?.stacked(), 0.0),
                    Formulation::Energy => {
                        let u = solve_galerkin_energy(&field, levels, 1.0)?;
                        let e = energy_functional(&mesh, &field, 1.0, &u)?;
                        (u, e)
                    }
                };
                Ok(TestCase { form: op.form(&field), field, reference, floor })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Evaluator { formulation, levels, op, cases })
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn ys(&self) -> Vec<[f64; 4]> {
        self.cases.iter().map(|c| c.field.y()).collect()
    }

    pub fn references(&self) -> Vec<Vec<f64>> {
        self.cases.iter().map(|c| c.reference.clone()).collect()
    }

    /// Stacked finest-level nodal values of coefficients `w`.
    pub fn nodal(&self, w: &[f64]) -> Result<Vec<f64>> {
        let (mut u, s) = self.op.nodal_values(w)?;
        u.extend(s);
        Ok(u)
    }

    pub fn test_loss_one(&self, index: usize, w: &[f64]) -> Result<f64> {
        let c = &self.cases[index];
        match self.formulation {
            Formulation::Fosls => self.op.loss(&c.form, w, 1.0),
            Formulation::Energy => {
                let mesh = DyadicMesh::new(self.levels)?;
                Ok(energy_functional(&mesh, &c.field, 1.0, &self.nodal(w)?)? - c.floor)
            }
        }
    }

    /// `(test loss, MRE, MSE)` for one output vector per test case.
    pub fn evaluate(&self, outputs: &[Vec<f64>]) -> Result<(f64, f64, f64)> {
        check_len(self.cases.len(), outputs.len())?;
        let mut loss = 0.0;
        let mut preds = Vec::with_capacity(outputs.len());
        for (i, w) in outputs.iter().enumerate() {
            loss += self.test_loss_one(i, w)?;
            preds.push(self.nodal(w)?);
        }
        let (mre, mse) = compute_mre_mse(&preds, &self.references())?;
        Ok((loss / outputs.len() as f64, mre, mse))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn parameter_samples() {
        let a = sample_parameters(10_000, 4);
        assert!(a.iter().flatten().all(|&v| (0.5..=1.5).contains(&v)));
        assert_eq!(a, sample_parameters(10_000, 4));
        assert_ne!(a[..5], sample_parameters(5, 5)[..]);
        for c in 0..4 {
            let m = a.iter().map(|y| y[c]).sum::<f64>() / a.len() as f64;
            assert!((m - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn mre_mse_examples() {
        let refs = vec![vec![1.0, 2.0, 2.0], vec![0.0, 3.0, 4.0]];
        assert_eq!(compute_mre_mse(&refs, &refs).unwrap(), (0.0, 0.0));
        let zeros = vec![vec![0.0; 3]; 2];
        let (mre, mse) = compute_mre_mse(&zeros, &refs).unwrap();
        assert!((mre - 1.0).abs() < 1e-15);
        assert!((mse - 17.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, dim, eps) = (400, 50, 1e-3);
        let refs: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0; dim]).collect();
        let preds: Vec<Vec<f64>> = refs
            .iter()
            .map(|r| r.iter().map(|v| v + { let z: f64 = StandardNormal.sample(&mut rng); eps * z }).collect::<Vec<f64>>())
            .collect();
        let (_, mse) = compute_mre_mse(&preds, &refs).unwrap();
        let expect = eps * eps * dim as f64;
        assert!((mse / expect - 1.0).abs() < 0.05, "{mse} vs {expect}");
    }

    #[test]
    fn reference_predictions_score_at_the_floor() {
        let ys = sample_parameters(3, 1);
        let ev = Evaluator::new(Formulation::Fosls, 5, Preconditioning::None, &ys).unwrap();
        let (loss, mre, mse) = ev.evaluate(&ev.references()).unwrap();
        assert!(mre < 1e-12 && mse < 1e-20);
        assert!(loss > 0.0 && loss < 1e-3);
        let zeros = vec![vec![0.0; ev.references()[0].len()]; 3];
        let (loss, mre, _) = ev.evaluate(&zeros).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);
        assert!((mre - 1.0).abs() < 1e-12);

        let ev = Evaluator::new(Formulation::Energy, 5, Preconditioning::None, &ys).unwrap();
        let (loss, mre, _) = ev.evaluate(&ev.references()).unwrap();
        assert!(loss.abs() < 1e-14 && mre < 1e-12);
    }
}

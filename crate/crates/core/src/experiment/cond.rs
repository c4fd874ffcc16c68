use super::train::sci;
use crate::error::Result;
use crate::fem::{DiffusionField, DyadicMesh};
use crate::linalg::{condition_number, densify, nonzero_spectrum, LinearOperator, NormalOperator};
use crate::nodal_op::{Basis, NodalForm, NodalOperator};
use crate::stable_op::{PointwiseForm, StableOperator};
use crate::Formulation;
use std::path::Path;

/// Relative eigenvalue threshold separating kernels from the nonzero spectrum.
pub const KERNEL_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CondRow {
    pub levels: usize,
    /// `None` for the constant coefficient `a ≡ 1`.
    pub y: Option<[f64; 4]>,
    /// Finest-level nodal least-squares matrix `A_y`.
    pub cond_a: f64,
    /// `HᵀA_yH` restricted to the complement of its kernel.
    pub cond_hah: f64,
    /// `DᵀC_yD`, same restriction.
    pub cond_dcd: f64,
    /// Singular values of the quadrature-weighted sampling operator.
    pub cond_d: f64,
    /// Largest ratio of nonzero eigenvalues of the pointwise blocks of `C_y`.
    pub cond_c: f64,
    pub kernel_dim: usize,
}

// w ↦ Hessian of the quadratic part of a loss, from its gradient at f = 0
struct Hessian<'a> {
    dim: usize,
    grad: Box<dyn Fn(&[f64]) -> Vec<f64> + 'a>,
}

impl LinearOperator<f64> for Hessian<'_> {
    fn dim_in(&self) -> usize {
        self.dim
    }
    fn dim_out(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, g) in out.iter_mut().zip((self.grad)(x)) {
            *o = 0.5 * g;
        }
    }
    fn apply_adjoint(&self, x: &[f64], out: &mut [f64]) {
        self.apply(x, out)
    }
}

fn nodal_hessian<'a>(op: &'a NodalOperator<f64>, form: &'a NodalForm<f64>) -> Hessian<'a> {
    Hessian { dim: op.coeff_dim(), grad: Box::new(move |w| op.loss_grad(form, w, 0.0).expect("dimensions match").1) }
}

fn stable_hessian<'a>(op: &'a StableOperator<f64>, form: &'a PointwiseForm<f64>) -> Hessian<'a> {
    Hessian { dim: op.coeff_dim(), grad: Box::new(move |w| op.loss_grad(form, w, 0.0).expect("dimensions match").1) }
}

/// Per point, the least-squares weight on `(u', σ, σ')` is
/// `[[1, −1/a, 0], [−1/a, 1/a², 0], [0, 0, 1]]` with nonzero eigenvalues
/// `1 + 1/a²` and `1`.
fn pointwise_condition(field: &DiffusionField, levels: usize) -> Result<f64> {
    let mesh = DyadicMesh::new(levels)?;
    Ok(mesh
        .quadrature()
        .iter()
        .map(|&(x, _)| {
            let a = field.value(x);
            let big = 1.0 + 1.0 / (a * a);
            big.max(1.0) / big.min(1.0)
        })
        .fold(1.0, f64::max))
}

/// Dense binary64 analysis of the least-squares operators for one field.
pub fn condition_row(field: &DiffusionField, levels: usize, y: Option<[f64; 4]>) -> Result<CondRow> {
    let nodal = NodalOperator::<f64>::new(Formulation::Fosls, levels, Basis::Nodal)?;
    let form = nodal.form(field);
    let cond_a = condition_number(&densify(&nodal_hessian(&nodal, &form)))?;

    let framed = NodalOperator::<f64>::new(Formulation::Fosls, levels, Basis::Frame)?;
    let form = framed.form(field);
    let hah = nonzero_spectrum(&densify(&nodal_hessian(&framed, &form)), KERNEL_THRESHOLD)?;

    let stable = StableOperator::<f64>::new(Formulation::Fosls, levels)?;
    let form = stable.form(field);
    let dcd = nonzero_spectrum(&densify(&stable_hessian(&stable, &form)), KERNEL_THRESHOLD)?;
    // all Gauss weights are equal, so the weighting does not change the ratio
    let gram = nonzero_spectrum(&densify(&NormalOperator { inner: &stable }), KERNEL_THRESHOLD)?;

    Ok(CondRow {
        levels,
        y,
        cond_a,
        cond_hah: hah.condition(),
        cond_dcd: dcd.condition(),
        cond_d: gram.condition().sqrt(),
        cond_c: pointwise_condition(field, levels)?,
        kernel_dim: framed.coeff_dim() - hah.rank,
    })
}

/// Rows for `a ≡ 1` followed by each `y`, for every level in `jmin..=jmax`.
pub fn cond_report(jmin: usize, jmax: usize, ys: &[[f64; 4]]) -> Result<Vec<CondRow>> {
    let mut rows = Vec::new();
    for levels in jmin..=jmax {
        rows.push(condition_row(&DiffusionField::constant(1.0)?, levels, None)?);
        for y in ys {
            rows.push(condition_row(&DiffusionField::new(*y)?, levels, Some(*y))?);
        }
    }
    Ok(rows)
}

pub fn write_cond_csv(path: &Path, rows: &[CondRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["levels", "y1", "y2", "y3", "y4", "cond_a", "cond_hah", "cond_dcd", "cond_d", "cond_c", "kernel_dim"])?;
    for r in rows {
        let y = r.y.unwrap_or([1.0; 4]);
        let mut rec = vec![r.levels.to_string()];
        rec.extend(y.iter().map(|&v| sci(v)));
        rec.extend([r.cond_a, r.cond_hah, r.cond_dcd, r.cond_d, r.cond_c].map(sci));
        rec.push(r.kernel_dim.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

use super::config::Preconditioning;
use crate::error::{Error, Result};
use crate::fem::DiffusionField;
use crate::frames::Frame;
use crate::linalg::LinearOperator;
use crate::nn::{ArchKind, Network, Trace};
use crate::nodal_op::{Basis, NodalForm, NodalOperator};
use crate::optim::Objective;
use crate::precision::{pairwise_sum, PairwiseAccumulator, Real};
use crate::stable_op::{PointwiseForm, StableOperator};
use crate::Formulation;

/// The map from network outputs to the training loss.
#[derive(Debug, Clone)]
pub enum LossPath<T> {
    Stable(StableOperator<T>),
    Nodal(NodalOperator<T>),
}

#[derive(Debug, Clone)]
pub enum Form<T> {
    Stable(PointwiseForm<T>),
    Nodal(NodalForm<T>),
}

impl<T: Real> LossPath<T> {
    pub fn new(formulation: Formulation, levels: usize, preconditioning: Preconditioning) -> Result<Self> {
        Ok(match preconditioning {
            Preconditioning::FrameStable => LossPath::Stable(StableOperator::new(formulation, levels)?),
            Preconditioning::FrameUnstable => LossPath::Nodal(NodalOperator::new(formulation, levels, Basis::Frame)?),
            Preconditioning::None => LossPath::Nodal(NodalOperator::new(formulation, levels, Basis::Nodal)?),
        })
    }

    pub fn coeff_dim(&self) -> usize {
        match self {
            LossPath::Stable(op) => op.coeff_dim(),
            LossPath::Nodal(op) => op.coeff_dim(),
        }
    }

    pub fn formulation(&self) -> Formulation {
        match self {
            LossPath::Stable(op) => op.formulation(),
            LossPath::Nodal(op) => op.formulation(),
        }
    }

    pub fn form(&self, field: &DiffusionField) -> Form<T> {
        match self {
            LossPath::Stable(op) => Form::Stable(op.form(field)),
            LossPath::Nodal(op) => Form::Nodal(op.form(field)),
        }
    }

    pub fn loss(&self, form: &Form<T>, w: &[T], f: f64) -> Result<T> {
        match (self, form) {
            (LossPath::Stable(op), Form::Stable(c)) => op.loss(c, w, f),
            (LossPath::Nodal(op), Form::Nodal(c)) => op.loss(c, w, f),
            _ => Err(mismatch()),
        }
    }

    pub fn loss_grad(&self, form: &Form<T>, w: &[T], f: f64) -> Result<(T, Vec<T>)> {
        match (self, form) {
            (LossPath::Stable(op), Form::Stable(c)) => op.loss_grad(c, w, f),
            (LossPath::Nodal(op), Form::Nodal(c)) => op.loss_grad(c, w, f),
            _ => Err(mismatch()),
        }
    }

    /// Hessian of the loss with respect to the coefficients applied to `dw`.
    /// Both losses are quadratic, so this is the gradient of the loss at
    /// `dw` with the load removed.
    pub fn hessian_vector(&self, form: &Form<T>, dw: &[T]) -> Result<Vec<T>> {
        match self.formulation() {
            Formulation::Fosls => {
                let r = self.residual_jvp(form, dw)?;
                let two = T::from_f64(2.0);
                let r2: Vec<T> = r.iter().map(|&v| two * v).collect();
                self.residual_vjp(form, &r2)
            }
            Formulation::Energy => Ok(self.loss_grad(form, dw, 0.0)?.1),
        }
    }

    pub fn residual_jvp(&self, form: &Form<T>, dw: &[T]) -> Result<Vec<T>> {
        match (self, form) {
            (LossPath::Stable(op), Form::Stable(c)) => op.residual_jvp(c, dw),
            (LossPath::Nodal(op), Form::Nodal(c)) => op.residual_jvp(c, dw),
            _ => Err(mismatch()),
        }
    }

    pub fn residual_vjp(&self, form: &Form<T>, dr: &[T]) -> Result<Vec<T>> {
        match (self, form) {
            (LossPath::Stable(op), Form::Stable(c)) => op.residual_vjp(c, dr),
            (LossPath::Nodal(op), Form::Nodal(c)) => op.residual_vjp(c, dr),
            _ => Err(mismatch()),
        }
    }
}

fn mismatch() -> Error {
    Error::Usage("form was built for a different loss path".into())
}

/// Network sized for the given path.
pub fn network_for<T: Real>(
    kind: ArchKind,
    formulation: Formulation,
    levels: usize,
    preconditioning: Preconditioning,
) -> Result<Network<T>> {
    let u = Frame::new(crate::fem::Space::H10, levels)?;
    let sigma = Frame::new(crate::fem::Space::H1, levels)?;
    let frames: Vec<&Frame> = match formulation {
        Formulation::Fosls => vec![&u, &sigma],
        Formulation::Energy => vec![&u],
    };
    match preconditioning {
        Preconditioning::None => {
            if kind != ArchKind::Full {
                return Err(Error::Usage(format!("the {kind} architecture needs a frame")));
            }
            Ok(Network::full(frames.iter().map(|f| f.finest_size()).sum()))
        }
        _ => Ok(Network::for_frames(kind, &frames)),
    }
}

/// One training sample: the parameter in working precision and its form.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub y: Vec<T>,
    pub form: Form<T>,
}

pub fn build_samples<T: Real>(path: &LossPath<T>, ys: &[[f64; 4]]) -> Result<Vec<Sample<T>>> {
    ys.iter()
        .map(|y| {
            let field = DiffusionField::new(*y)?;
            Ok(Sample { y: y.iter().map(|&v| T::from_f64(v)).collect(), form: path.form(&field) })
        })
        .collect()
}

/// Mean loss over a batch as a function of the network parameters.
pub struct TrainingObjective<'a, T> {
    pub net: &'a Network<T>,
    pub path: &'a LossPath<T>,
    pub batch: &'a [Sample<T>],
    pub f: f64,
    /// Non-finite values met during the last evaluation.
    pub overflow: bool,
}

impl<'a, T: Real> TrainingObjective<'a, T> {
    pub fn new(net: &'a Network<T>, path: &'a LossPath<T>, batch: &'a [Sample<T>]) -> Self {
        TrainingObjective { net, path, batch, f: 1.0, overflow: false }
    }

    /// Mean loss without the gradient.
    pub fn loss(&self, theta: &[T]) -> Result<f64> {
        let mut losses = Vec::with_capacity(self.batch.len());
        for s in self.batch {
            let w = self.net.forward(theta, &s.y)?;
            losses.push(self.path.loss(&s.form, &w, self.f)?);
        }
        Ok(mean(&losses))
    }
}

fn mean<T: Real>(v: &[T]) -> f64 {
    pairwise_sum(v).to_f64() / v.len() as f64
}

fn scale<T: Real>(v: &mut [T], c: f64) {
    let c = T::from_f64(c);
    v.iter_mut().for_each(|x| *x *= c);
}

impl<T: Real> Objective<T> for TrainingObjective<'_, T> {
    fn eval(&mut self, theta: &[T]) -> Result<(f64, Vec<T>)> {
        let mut losses = Vec::with_capacity(self.batch.len());
        let mut acc = PairwiseAccumulator::new(theta.len());
        for s in self.batch {
            let (w, trace) = self.net.forward_trace(theta, &s.y)?;
            let (l, gw) = self.path.loss_grad(&s.form, &w, self.f)?;
            losses.push(l);
            acc.push(self.net.backward(theta, &trace, &gw)?);
        }
        let mut g = acc.finish();
        scale(&mut g, 1.0 / self.batch.len() as f64);
        let loss = mean(&losses);
        self.overflow = !loss.is_finite() || g.iter().any(|v| !v.is_finite());
        Ok((loss, g))
    }

    fn gauss_newton<'b>(&'b mut self, theta: &[T]) -> Result<Option<Box<dyn LinearOperator<T> + 'b>>> {
        let traces = self
            .batch
            .iter()
            .map(|s| Ok(self.net.forward_trace(theta, &s.y)?.1))
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(Box::new(GaussNewton { obj: self, theta: theta.to_vec(), traces })))
    }
}

/// `(1/K) Σ_k J_kᵀ ∇²ℓ_k J_k` with `J_k` the network Jacobian at sample `k`.
struct GaussNewton<'b, 'a, T> {
    obj: &'b TrainingObjective<'a, T>,
    theta: Vec<T>,
    traces: Vec<Trace<T>>,
}

impl<T: Real> GaussNewton<'_, '_, T> {
    fn product(&self, v: &[T]) -> Result<Vec<T>> {
        let net = self.obj.net;
        let mut acc = PairwiseAccumulator::new(v.len());
        for (s, trace) in self.obj.batch.iter().zip(&self.traces) {
            let dw = net.jvp(&self.theta, trace, v)?;
            let hw = self.obj.path.hessian_vector(&s.form, &dw)?;
            acc.push(net.backward(&self.theta, trace, &hw)?);
        }
        let mut out = acc.finish();
        scale(&mut out, 1.0 / self.traces.len() as f64);
        Ok(out)
    }
}

impl<T: Real> LinearOperator<T> for GaussNewton<'_, '_, T> {
    fn dim_in(&self) -> usize {
        self.theta.len()
    }
    fn dim_out(&self) -> usize {
        self.theta.len()
    }
    fn apply(&self, x: &[T], out: &mut [T]) {
        match self.product(x) {
            Ok(v) => out.copy_from_slice(&v),
            // Shapes are fixed at construction; a failure here is a NaN signal for CG.
            Err(_) => out.iter_mut().for_each(|o| *o = T::from_f64(f64::NAN)),
        }
    }
    fn apply_adjoint(&self, x: &[T], out: &mut [T]) {
        self.apply(x, out)
    }
}

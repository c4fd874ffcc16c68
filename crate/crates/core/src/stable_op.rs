//! The factored path `DᵀC_yD`: frame coefficients are mapped directly to
//! derivative and value samples at the finest Gauss points, and the
//! quadratic form is a pointwise weighted sum of those samples.
//!
//! Sample layout for the least-squares formulation is `[u' | σ | σ']`, each
//! block holding one entry per Gauss point (element-ascending); the energy
//! formulation uses `[u']` alone. Stacked coefficients are `[w_u | w_σ]`.

use crate::error::{check_len, Error, Result};
use crate::fem::{assemble_load, DiffusionField, DyadicMesh, Space, GAUSS_OFFSET};
use crate::frames::Frame;
use crate::linalg::LinearOperator;
use crate::precision::{pairwise_sum, Real};
use crate::Formulation;

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct PointTable<T> {
    left: u32,
    right: u32,
    val: [T; 2],
    der: [T; 2],
}

#[derive(Debug, Clone)]
struct ElementTable<T> {
    left: u32,
    right: u32,
    inv_norm: [T; 2],
    // ∓1/(h_j ‖φ‖)
    der: [T; 2],
}

#[derive(Debug, Clone)]
struct FieldTables<T> {
    frame: Frame,
    // points[j - 1][q]
    points: Vec<Vec<PointTable<T>>>,
    // elements[j - 1][e]
    elements: Vec<Vec<ElementTable<T>>>,
}

impl<T: Real> FieldTables<T> {
    fn new(frame: Frame) -> Self {
        let levels = frame.levels();
        let space = frame.space();
        let finest = 1usize << levels;
        let hat = |j: usize, node: usize| -> u32 {
            let last = 1usize << j;
            match space {
                Space::H10 if node == 0 || node == last => NONE,
                Space::H10 => (node - 1) as u32,
                Space::H1 => node as u32,
            }
        };
        let mut points = Vec::with_capacity(levels);
        let mut elements = Vec::with_capacity(levels);
        for j in 1..=levels {
            let h = (-(j as f64)).exp2();
            let norm = |idx: u32| if idx == NONE { 1.0 } else { frame.norm(j, idx as usize) };
            let elems: Vec<ElementTable<T>> = (0..1usize << j)
                .map(|e| {
                    let (l, r) = (hat(j, e), hat(j, e + 1));
                    let (nl, nr) = (norm(l), norm(r));
                    ElementTable {
                        left: l,
                        right: r,
                        inv_norm: [T::from_f64(1.0 / nl), T::from_f64(1.0 / nr)],
                        der: [T::from_f64(-1.0 / (h * nl)), T::from_f64(1.0 / (h * nr))],
                    }
                })
                .collect();
            let shift = levels - j;
            let pts = (0..2 * finest)
                .map(|q| {
                    let fine_elem = q / 2;
                    let e = fine_elem >> shift;
                    let x = (fine_elem as f64 + 0.5 + if q % 2 == 0 { -GAUSS_OFFSET } else { GAUSS_OFFSET })
                        / finest as f64;
                    let lambda = x / h - e as f64;
                    let (l, r) = (hat(j, e), hat(j, e + 1));
                    let (nl, nr) = (norm(l), norm(r));
                    PointTable {
                        left: l,
                        right: r,
                        val: [T::from_f64((1.0 - lambda) / nl), T::from_f64(lambda / nr)],
                        der: [T::from_f64(-1.0 / (h * nl)), T::from_f64(1.0 / (h * nr))],
                    }
                })
                .collect();
            points.push(pts);
            elements.push(elems);
        }
        FieldTables { frame, points, elements }
    }

    fn levels(&self) -> usize {
        self.frame.levels()
    }

    // Samples of the synthesized function: values and/or derivatives.
    fn forward(&self, w: &[T], mut val: Option<&mut [T]>, mut der: Option<&mut [T]>) {
        let q_count = self.points[0].len();
        for q in 0..q_count {
            let mut v = T::zero();
            let mut d = T::zero();
            for j in 1..=self.levels() {
                let p = &self.points[j - 1][q];
                let base = &w[self.frame.level_range(j)];
                let wl = if p.left == NONE { T::zero() } else { base[p.left as usize] };
                let wr = if p.right == NONE { T::zero() } else { base[p.right as usize] };
                if val.is_some() {
                    v += p.val[0] * wl;
                    v += p.val[1] * wr;
                }
                if der.is_some() {
                    d += p.der[0] * wl;
                    d += p.der[1] * wr;
                }
            }
            if let Some(out) = val.as_deref_mut() {
                out[q] = v;
            }
            if let Some(out) = der.as_deref_mut() {
                out[q] = d;
            }
        }
    }

    // Exact adjoint of `forward`, via element moments aggregated pairwise
    // from the finest level upward.
    fn adjoint(&self, val: Option<&[T]>, der: Option<&[T]>, lambda: [T; 2], out: &mut [T]) {
        let levels = self.levels();
        let half = T::from_f64(0.5);
        let n_fine = self.points[0].len() / 2;
        let mut m0_der: Vec<T> = match der {
            Some(d) => (0..n_fine).map(|e| d[2 * e] + d[2 * e + 1]).collect(),
            None => Vec::new(),
        };
        let (mut m0_val, mut m1_val): (Vec<T>, Vec<T>) = match val {
            Some(v) => (
                (0..n_fine).map(|e| v[2 * e] + v[2 * e + 1]).collect(),
                (0..n_fine).map(|e| lambda[0] * v[2 * e] + lambda[1] * v[2 * e + 1]).collect(),
            ),
            None => (Vec::new(), Vec::new()),
        };
        for j in (1..=levels).rev() {
            let block = &mut out[self.frame.level_range(j)];
            block.iter_mut().for_each(|b| *b = T::zero());
            for (e, t) in self.elements[j - 1].iter().enumerate() {
                let mut gl = T::zero();
                let mut gr = T::zero();
                if der.is_some() {
                    gl += t.der[0] * m0_der[e];
                    gr += t.der[1] * m0_der[e];
                }
                if val.is_some() {
                    gl += t.inv_norm[0] * (m0_val[e] - m1_val[e]);
                    gr += t.inv_norm[1] * m1_val[e];
                }
                if t.left != NONE {
                    block[t.left as usize] += gl;
                }
                if t.right != NONE {
                    block[t.right as usize] += gr;
                }
            }
            if j > 1 {
                let parents = self.elements[j - 2].len();
                if der.is_some() {
                    m0_der = (0..parents).map(|p| m0_der[2 * p] + m0_der[2 * p + 1]).collect();
                }
                if val.is_some() {
                    let m1: Vec<T> = (0..parents)
                        .map(|p| half * ((m1_val[2 * p] + m1_val[2 * p + 1]) + m0_val[2 * p + 1]))
                        .collect();
                    m0_val = (0..parents).map(|p| m0_val[2 * p] + m0_val[2 * p + 1]).collect();
                    m1_val = m1;
                }
            }
        }
    }
}

/// `D`: stacked frame coefficients to Gauss-point samples.
#[derive(Debug, Clone)]
pub struct StableOperator<T> {
    formulation: Formulation,
    levels: usize,
    u: FieldTables<T>,
    sigma: Option<FieldTables<T>>,
    lambda: [T; 2],
    weight: T,
    sqrt_weight: T,
    // Hᵀ applied to the u load vector for f = 1, in binary64
    load_pullback: Vec<f64>,
}

/// Pointwise data of `C_y` at the Gauss points.
#[derive(Debug, Clone)]
pub struct PointwiseForm<T> {
    pub a: Vec<T>,
    pub inv_a: Vec<T>,
}

impl<T: Real> StableOperator<T> {
    pub fn new(formulation: Formulation, levels: usize) -> Result<Self> {
        let mesh = DyadicMesh::new(levels)?;
        let u_frame = Frame::new(Space::H10, levels)?;
        let load = assemble_load(&mesh, 1.0, Space::H10);
        let mut load_pullback = vec![0.0; u_frame.total_size()];
        // ⟨f, φ_k / ‖φ_k‖⟩ on the finest level, then pulled back through H
        let finest_load = u_frame.nodal_values(&load);
        u_frame.synthesis::<f64>().apply_adjoint(&finest_load, &mut load_pullback);
        let sigma = match formulation {
            Formulation::Fosls => Some(FieldTables::new(Frame::new(Space::H1, levels)?)),
            Formulation::Energy => None,
        };
        let w = 0.5 * mesh.width();
        Ok(StableOperator {
            formulation,
            levels,
            u: FieldTables::new(u_frame),
            sigma,
            lambda: [T::from_f64(0.5 - GAUSS_OFFSET), T::from_f64(0.5 + GAUSS_OFFSET)],
            weight: T::from_f64(w),
            sqrt_weight: T::from_f64(w.sqrt()),
            load_pullback,
        })
    }

    pub fn formulation(&self) -> Formulation {
        self.formulation
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn u_frame(&self) -> &Frame {
        &self.u.frame
    }

    pub fn sigma_frame(&self) -> Option<&Frame> {
        self.sigma.as_ref().map(|s| &s.frame)
    }

    /// Number of Gauss points.
    pub fn points(&self) -> usize {
        2 << self.levels
    }

    /// Dimension of the stacked coefficient vector.
    pub fn coeff_dim(&self) -> usize {
        self.u.frame.total_size() + self.sigma.as_ref().map_or(0, |s| s.frame.total_size())
    }

    pub fn sample_dim(&self) -> usize {
        match self.formulation {
            Formulation::Fosls => 3 * self.points(),
            Formulation::Energy => self.points(),
        }
    }

    /// Quadrature weight `h/2` shared by all Gauss points.
    pub fn weight(&self) -> T {
        self.weight
    }

    pub fn form(&self, field: &DiffusionField) -> PointwiseForm<T> {
        let mesh = DyadicMesh::new(self.levels).expect("level validated at construction");
        let a: Vec<f64> = mesh.quadrature().iter().map(|&(x, _)| field.value(x)).collect();
        PointwiseForm {
            a: a.iter().map(|&v| T::from_f64(v)).collect(),
            inv_a: a.iter().map(|&v| T::from_f64(1.0 / v)).collect(),
        }
    }

    fn require_fosls(&self) -> Result<()> {
        match self.formulation {
            Formulation::Fosls => Ok(()),
            Formulation::Energy => Err(Error::Usage("residuals exist only for the least-squares formulation".into())),
        }
    }

    fn split<'a>(&self, w: &'a [T]) -> (&'a [T], &'a [T]) {
        w.split_at(self.u.frame.total_size())
    }

    /// Least-squares residuals scaled by `√w_q`: `[σ' + f | σ/a − u']`, so that
    /// the functional equals their squared norm.
    pub fn residuals(&self, form: &PointwiseForm<T>, w: &[T], f: f64) -> Result<Vec<T>> {
        self.require_fosls()?;
        let s = self.samples(w)?;
        Ok(self.residuals_from_samples(form, &s, f))
    }

    fn residuals_from_samples(&self, form: &PointwiseForm<T>, s: &[T], f: f64) -> Vec<T> {
        let q = self.points();
        let ft = T::from_f64(f);
        let (du, rest) = s.split_at(q);
        let (sig, dsig) = rest.split_at(q);
        let mut r = Vec::with_capacity(2 * q);
        r.extend(dsig.iter().map(|&d| self.sqrt_weight * (d + ft)));
        r.extend((0..q).map(|i| self.sqrt_weight * (sig[i] * form.inv_a[i] - du[i])));
        r
    }

    /// Linearized residual map `dw ↦ ∂r/∂w · dw` (independent of `f`).
    pub fn residual_jvp(&self, form: &PointwiseForm<T>, dw: &[T]) -> Result<Vec<T>> {
        self.require_fosls()?;
        self.residuals_linear(form, dw)
    }

    fn residuals_linear(&self, form: &PointwiseForm<T>, dw: &[T]) -> Result<Vec<T>> {
        let s = self.samples(dw)?;
        let q = self.points();
        let (du, rest) = s.split_at(q);
        let (sig, dsig) = rest.split_at(q);
        let mut r = Vec::with_capacity(2 * q);
        r.extend(dsig.iter().map(|&d| self.sqrt_weight * d));
        r.extend((0..q).map(|i| self.sqrt_weight * (sig[i] * form.inv_a[i] - du[i])));
        Ok(r)
    }

    /// Transpose of [`StableOperator::residual_jvp`].
    pub fn residual_vjp(&self, form: &PointwiseForm<T>, dr: &[T]) -> Result<Vec<T>> {
        self.require_fosls()?;
        let q = self.points();
        check_len(2 * q, dr.len())?;
        let (r1, r2) = dr.split_at(q);
        let mut s = vec![T::zero(); 3 * q];
        for i in 0..q {
            let c = self.sqrt_weight * r2[i];
            s[i] = -c;
            s[q + i] = c * form.inv_a[i];
            s[2 * q + i] = self.sqrt_weight * r1[i];
        }
        let mut out = vec![T::zero(); self.coeff_dim()];
        self.apply_adjoint(&s, &mut out);
        Ok(out)
    }

    pub fn samples(&self, w: &[T]) -> Result<Vec<T>> {
        check_len(self.coeff_dim(), w.len())?;
        let mut s = vec![T::zero(); self.sample_dim()];
        self.apply(w, &mut s);
        Ok(s)
    }

    /// Training loss for coefficients `w`.
    ///
    /// Least squares: `Σ_q w_q [(σ' + f)² + (σ/a − u')²]`.
    /// Energy: `½ Σ_q w_q a u'² − ⟨f, u⟩`.
    pub fn loss(&self, form: &PointwiseForm<T>, w: &[T], f: f64) -> Result<T> {
        Ok(self.loss_impl(form, w, f, false)?.0)
    }

    /// Loss together with its gradient with respect to `w`.
    pub fn loss_grad(&self, form: &PointwiseForm<T>, w: &[T], f: f64) -> Result<(T, Vec<T>)> {
        let (l, g) = self.loss_impl(form, w, f, true)?;
        Ok((l, g.expect("gradient requested")))
    }

    /// The pure quadratic form `wᵀ DᵀC_yD w`.
    pub fn quadratic_form(&self, form: &PointwiseForm<T>, w: &[T]) -> Result<T> {
        let s = self.samples(w)?;
        let q = self.points();
        let terms: Vec<T> = match self.formulation {
            Formulation::Fosls => {
                let r = self.residuals_from_samples(form, &s, 0.0);
                (0..q).map(|i| r[i] * r[i] + r[q + i] * r[q + i]).collect()
            }
            Formulation::Energy => (0..q).map(|i| self.weight * form.a[i] * s[i] * s[i]).collect(),
        };
        Ok(pairwise_sum(&terms))
    }

    fn loss_impl(&self, form: &PointwiseForm<T>, w: &[T], f: f64, grad: bool) -> Result<(T, Option<Vec<T>>)> {
        let s = self.samples(w)?;
        let q = self.points();
        match self.formulation {
            Formulation::Fosls => {
                let r = self.residuals_from_samples(form, &s, f);
                let terms: Vec<T> = (0..q).map(|i| r[i] * r[i] + r[q + i] * r[q + i]).collect();
                let loss = pairwise_sum(&terms);
                let g = if grad {
                    let two = T::from_f64(2.0);
                    let dr: Vec<T> = r.iter().map(|&x| two * x).collect();
                    Some(self.residual_vjp(form, &dr)?)
                } else {
                    None
                };
                Ok((loss, g))
            }
            Formulation::Energy => {
                let half = T::from_f64(0.5);
                let terms: Vec<T> = (0..q).map(|i| self.weight * form.a[i] * s[i] * s[i]).collect();
                let lin: Vec<T> = self.load_pullback.iter().map(|&l| T::from_f64(f * l)).collect();
                let lin_terms: Vec<T> = lin.iter().zip(w).map(|(&l, &x)| l * x).collect();
                let loss = half * pairwise_sum(&terms) - pairwise_sum(&lin_terms);
                let g = if grad {
                    let ds: Vec<T> = (0..q).map(|i| self.weight * form.a[i] * s[i]).collect();
                    let mut g = vec![T::zero(); self.coeff_dim()];
                    self.apply_adjoint(&ds, &mut g);
                    for (gi, &l) in g.iter_mut().zip(&lin) {
                        *gi -= l;
                    }
                    Some(g)
                } else {
                    None
                };
                Ok((loss, g))
            }
        }
    }
}

impl<T: Real> LinearOperator<T> for StableOperator<T> {
    fn dim_in(&self) -> usize {
        self.coeff_dim()
    }

    fn dim_out(&self) -> usize {
        self.sample_dim()
    }

    fn apply(&self, w: &[T], out: &mut [T]) {
        let q = self.points();
        let (wu, ws) = self.split(w);
        let (du, rest) = out.split_at_mut(q);
        self.u.forward(wu, None, Some(du));
        if let Some(sig) = &self.sigma {
            let (val, der) = rest.split_at_mut(q);
            sig.forward(ws, Some(val), Some(der));
        }
    }

    fn apply_adjoint(&self, s: &[T], out: &mut [T]) {
        let q = self.points();
        let nu = self.u.frame.total_size();
        let (ou, os) = out.split_at_mut(nu);
        self.u.adjoint(None, Some(&s[..q]), self.lambda, ou);
        if let Some(sig) = &self.sigma {
            sig.adjoint(Some(&s[q..2 * q]), Some(&s[2 * q..3 * q]), self.lambda, os);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{densify, norm2};
    use rand::{Rng, SeedableRng};

    fn random(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_coefficients_give_zero_samples() {
        let op = StableOperator::<f64>::new(Formulation::Fosls, 4).unwrap();
        let s = op.samples(&vec![0.0; op.coeff_dim()]).unwrap();
        assert!(s.iter().all(|&x| x == 0.0));
        let mut out = vec![1.0; op.coeff_dim()];
        op.apply_adjoint(&vec![0.0; op.sample_dim()], &mut out);
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn finest_hat_derivative_samples() {
        let levels = 5;
        let op = StableOperator::<f64>::new(Formulation::Fosls, levels).unwrap();
        let frame = op.u_frame().clone();
        let k = 9;
        let mut w = vec![0.0; op.coeff_dim()];
        w[frame.level_range(levels).start + k] = 1.0;
        let s = op.samples(&w).unwrap();
        let slope = 32.0 / frame.norm(levels, k);
        // hat at grid node k+1 is supported on elements k and k+1
        for (q, &v) in s[..op.points()].iter().enumerate() {
            let e = q / 2;
            let expect = if e == k { slope } else if e == k + 1 { -slope } else { 0.0 };
            assert!((v - expect).abs() < 1e-12, "q={q}: {v} vs {expect}");
        }
    }

    #[test]
    fn samples_match_synthesis_then_differentiate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let levels = 6;
        let op = StableOperator::<f64>::new(Formulation::Fosls, levels).unwrap();
        let w = random(op.coeff_dim(), &mut rng);
        let s = op.samples(&w).unwrap();
        let (wu, ws) = w.split_at(op.u_frame().total_size());
        let u = op.u_frame().synthesize_nodal(wu).unwrap();
        let sig = op.sigma_frame().unwrap().synthesize_nodal(ws).unwrap();
        let mesh = DyadicMesh::new(levels).unwrap();
        let h = mesh.width();
        let last = mesh.elements();
        let un = |i: usize| if i == 0 || i == last { 0.0 } else { u[i - 1] };
        let q = op.points();
        for (idx, (x, _)) in mesh.quadrature().into_iter().enumerate() {
            let e = idx / 2;
            let t = x / h - e as f64;
            assert!((s[idx] - (un(e + 1) - un(e)) / h).abs() < 1e-12 * (1.0 + s[idx].abs()));
            let sv = sig[e] * (1.0 - t) + sig[e + 1] * t;
            assert!((s[q + idx] - sv).abs() < 1e-12);
            assert!((s[2 * q + idx] - (sig[e + 1] - sig[e]) / h).abs() < 1e-12 * (1.0 + s[2 * q + idx].abs()));
        }
    }

    #[test]
    fn adjoint_identity_and_dense_rows() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for formulation in [Formulation::Fosls, Formulation::Energy] {
            let op = StableOperator::<f64>::new(formulation, 5).unwrap();
            for _ in 0..100 {
                let w = random(op.coeff_dim(), &mut rng);
                let s = random(op.sample_dim(), &mut rng);
                let mut dw = vec![0.0; op.sample_dim()];
                op.apply(&w, &mut dw);
                let mut dts = vec![0.0; op.coeff_dim()];
                op.apply_adjoint(&s, &mut dts);
                let lhs: f64 = dw.iter().zip(&s).map(|(a, b)| a * b).sum();
                let rhs: f64 = w.iter().zip(&dts).map(|(a, b)| a * b).sum();
                assert!((lhs - rhs).abs() <= 1e-12 * norm2(&w) * norm2(&s) * 10.0);
            }
            let dense = densify(&op);
            for row in [0, 7, op.sample_dim() - 1] {
                let mut e = vec![0.0; op.sample_dim()];
                e[row] = 1.0;
                let mut out = vec![0.0; op.coeff_dim()];
                op.apply_adjoint(&e, &mut out);
                for (k, o) in out.iter().enumerate() {
                    assert!((o - dense[(row, k)]).abs() < 1e-12 * (1.0 + o.abs()));
                }
            }
        }
    }

    #[test]
    fn zero_coefficients_have_unit_loss() {
        let field = DiffusionField::new([0.7, 1.0, 1.2, 0.9]).unwrap();
        let op = StableOperator::<f64>::new(Formulation::Fosls, 6).unwrap();
        let form = op.form(&field);
        assert!((op.loss(&form, &vec![0.0; op.coeff_dim()], 1.0).unwrap() - 1.0).abs() < 1e-14);
        let op = StableOperator::<crate::Half>::new(Formulation::Fosls, 6).unwrap();
        let form = op.form(&field);
        assert_eq!(op.loss(&form, &vec![crate::Half::zero(); op.coeff_dim()], 1.0).unwrap().to_f64(), 1.0);
        let op = StableOperator::<f64>::new(Formulation::Energy, 6).unwrap();
        let form = op.form(&field);
        assert_eq!(op.loss(&form, &vec![0.0; op.coeff_dim()], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let field = DiffusionField::new([0.6, 1.4, 1.1, 0.8]).unwrap();
        for formulation in [Formulation::Fosls, Formulation::Energy] {
            let op = StableOperator::<f64>::new(formulation, 4).unwrap();
            let form = op.form(&field);
            let w = random(op.coeff_dim(), &mut rng);
            let (_, g) = op.loss_grad(&form, &w, 1.0).unwrap();
            for k in (0..op.coeff_dim()).step_by(3) {
                let eps = 1e-5;
                let mut wp = w.clone();
                wp[k] += eps;
                let mut wm = w.clone();
                wm[k] -= eps;
                let fd = (op.loss(&form, &wp, 1.0).unwrap() - op.loss(&form, &wm, 1.0).unwrap()) / (2.0 * eps);
                assert!((fd - g[k]).abs() <= 1e-7 * (1.0 + g[k].abs()), "{formulation} k={k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn residual_vjp_is_transpose_of_jvp() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let field = DiffusionField::new([0.6, 1.4, 1.1, 0.8]).unwrap();
        let op = StableOperator::<f64>::new(Formulation::Fosls, 5).unwrap();
        let form = op.form(&field);
        let dw = random(op.coeff_dim(), &mut rng);
        let dr = random(2 * op.points(), &mut rng);
        let jv = op.residual_jvp(&form, &dw).unwrap();
        let jtr = op.residual_vjp(&form, &dr).unwrap();
        let lhs: f64 = jv.iter().zip(&dr).map(|(a, b)| a * b).sum();
        let rhs: f64 = dw.iter().zip(&jtr).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * norm2(&dw) * norm2(&dr));
        let r = op.residuals(&form, &dw, 1.0).unwrap();
        let l = op.loss(&form, &dw, 1.0).unwrap();
        assert!((r.iter().map(|x| x * x).sum::<f64>() - l).abs() < 1e-12 * l);
    }

    #[test]
    fn energy_minimum_matches_galerkin() {
        use crate::fem::{energy_functional, solve_galerkin_energy};
        let one = DiffusionField::constant(1.0).unwrap();
        let levels = 5;
        let op = StableOperator::<f64>::new(Formulation::Energy, levels).unwrap();
        let form = op.form(&one);
        let frame = op.u_frame();
        let u = solve_galerkin_energy(&one, levels, 1.0).unwrap();
        // represent the Galerkin solution on the finest level only
        let mut w = vec![0.0; op.coeff_dim()];
        let fine = frame.from_nodal_values(&u);
        w[frame.level_range(levels)].copy_from_slice(&fine);
        let (e, g) = op.loss_grad(&form, &w, 1.0).unwrap();
        let mesh = DyadicMesh::new(levels).unwrap();
        let load = assemble_load(&mesh, 1.0, Space::H10);
        let lu: f64 = load.iter().zip(&u).map(|(a, b)| a * b).sum();
        assert!((e + 0.5 * lu).abs() < 1e-13);
        assert!((e - energy_functional(&mesh, &one, 1.0, &u).unwrap()).abs() < 1e-13);
        assert!(norm2(&g) < 1e-10);
    }
}

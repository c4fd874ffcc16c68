//! The factored-at-the-nodes path `HᵀA_yH`: coefficients are first
//! synthesized to finest-level nodal coefficients, then the element-local
//! stiffness blocks are applied.
//!
//! With [`Basis::Frame`] the inputs are stacked frame coefficients and `H`
//! is the recursive multilevel synthesis. With [`Basis::Nodal`] the inputs
//! are plain nodal values on the finest grid and `H` is the identity.

use crate::error::{check_len, Error, Result};
use crate::fem::{assemble_load, local_blocks_fosls, local_stiffness_energy, DiffusionField, DyadicMesh, Space, GAUSS_OFFSET};
use crate::frames::{Frame, Synthesis};
use crate::linalg::LinearOperator;
use crate::precision::{pairwise_sum, Real};
use crate::Formulation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// Normalized multilevel frame, synthesized recursively.
    Frame,
    /// Unnormalized finest-level hats, no change of basis.
    Nodal,
}

#[derive(Debug, Clone)]
struct FieldPart<T> {
    synthesis: Option<Synthesis<T>>,
    stacked_dim: usize,
    // finest-level H¹ norms (all 1 for the nodal basis)
    norms: Vec<f64>,
}

impl<T: Real> FieldPart<T> {
    fn new(space: Space, levels: usize, basis: Basis) -> Result<Self> {
        let frame = Frame::new(space, levels)?;
        Ok(match basis {
            Basis::Frame => FieldPart {
                synthesis: Some(frame.synthesis()),
                stacked_dim: frame.total_size(),
                norms: frame.level_norms(levels).to_vec(),
            },
            Basis::Nodal => FieldPart {
                synthesis: None,
                stacked_dim: frame.finest_size(),
                norms: vec![1.0; frame.finest_size()],
            },
        })
    }

    fn synthesize(&self, w: &[T]) -> Vec<T> {
        match &self.synthesis {
            Some(h) => {
                let mut v = vec![T::zero(); h.dim_out()];
                h.apply(w, &mut v);
                v
            }
            None => w.to_vec(),
        }
    }

    fn pull_back(&self, g: &[T]) -> Vec<T> {
        match &self.synthesis {
            Some(h) => {
                let mut out = vec![T::zero(); h.dim_in()];
                h.apply_adjoint(g, &mut out);
                out
            }
            None => g.to_vec(),
        }
    }
}

/// Per-field element blocks in the scaled basis, rounded once.
#[derive(Debug, Clone)]
pub struct NodalForm<T> {
    blocks: Vec<[[T; 4]; 4]>,
    inv_a: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct NodalOperator<T> {
    formulation: Formulation,
    basis: Basis,
    mesh: DyadicMesh,
    u: FieldPart<T>,
    sigma: Option<FieldPart<T>>,
    // ⟨f, φ̂_k⟩ for f = 1 on the finest level (energy)
    load: Vec<f64>,
    // Gauss-point evaluation coefficients per element
    du: Vec<[T; 2]>,
    s_val: Vec<[[T; 2]; 2]>,
    s_der: Vec<[T; 2]>,
    sqrt_weight: T,
}

impl<T: Real> NodalOperator<T> {
    pub fn new(formulation: Formulation, levels: usize, basis: Basis) -> Result<Self> {
        let mesh = DyadicMesh::new(levels)?;
        let u = FieldPart::new(Space::H10, levels, basis)?;
        let sigma = match formulation {
            Formulation::Fosls => Some(FieldPart::new(Space::H1, levels, basis)?),
            Formulation::Energy => None,
        };
        let load = assemble_load(&mesh, 1.0, Space::H10).iter().zip(&u.norms).map(|(l, n)| l / n).collect();
        let h = mesh.width();
        let lam = [0.5 - GAUSS_OFFSET, 0.5 + GAUSS_OFFSET];
        let mut du = Vec::new();
        let mut s_val = Vec::new();
        let mut s_der = Vec::new();
        for e in 0..mesh.elements() {
            let un = |node: usize| {
                if node == 0 || node == mesh.elements() {
                    1.0
                } else {
                    u.norms[node - 1]
                }
            };
            du.push([T::from_f64(-1.0 / (h * un(e))), T::from_f64(1.0 / (h * un(e + 1)))]);
            if let Some(s) = &sigma {
                let (nl, nr) = (s.norms[e], s.norms[e + 1]);
                s_val.push(lam.map(|l| [T::from_f64((1.0 - l) / nl), T::from_f64(l / nr)]));
                s_der.push([T::from_f64(-1.0 / (h * nl)), T::from_f64(1.0 / (h * nr))]);
            }
        }
        Ok(NodalOperator {
            formulation,
            basis,
            mesh,
            u,
            sigma,
            load,
            du,
            s_val,
            s_der,
            sqrt_weight: T::from_f64((0.5 * h).sqrt()),
        })
    }

    pub fn formulation(&self) -> Formulation {
        self.formulation
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn coeff_dim(&self) -> usize {
        self.u.stacked_dim + self.sigma.as_ref().map_or(0, |s| s.stacked_dim)
    }

    pub fn points(&self) -> usize {
        2 * self.mesh.elements()
    }

    pub fn form(&self, field: &DiffusionField) -> NodalForm<T> {
        let mesh = &self.mesh;
        let last = mesh.elements();
        let un = |node: usize| if node == 0 || node == last { 1.0 } else { self.u.norms[node - 1] };
        let blocks = (0..last)
            .map(|e| {
                let mut out = [[T::zero(); 4]; 4];
                match &self.sigma {
                    Some(s) => {
                        let b = local_blocks_fosls(mesh, field, e);
                        let scale = [un(e), un(e + 1), s.norms[e], s.norms[e + 1]];
                        for i in 0..4 {
                            for j in 0..4 {
                                out[i][j] = T::from_f64(b[i][j] / (scale[i] * scale[j]));
                            }
                        }
                    }
                    None => {
                        let k = local_stiffness_energy(mesh, field, e);
                        let scale = [un(e), un(e + 1)];
                        for i in 0..2 {
                            for j in 0..2 {
                                out[i][j] = T::from_f64(k[i][j] / (scale[i] * scale[j]));
                            }
                        }
                    }
                }
                out
            })
            .collect();
        let inv_a = mesh.quadrature().iter().map(|&(x, _)| T::from_f64(1.0 / field.value(x))).collect();
        NodalForm { blocks, inv_a }
    }

    fn synthesize(&self, w: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        check_len(self.coeff_dim(), w.len())?;
        let (wu, ws) = w.split_at(self.u.stacked_dim);
        let vu = self.u.synthesize(wu);
        let vs = self.sigma.as_ref().map_or_else(Vec::new, |s| s.synthesize(ws));
        Ok((vu, vs))
    }

    fn local(&self, e: usize, vu: &[T], vs: &[T]) -> [T; 4] {
        let last = self.mesh.elements();
        let u = |node: usize| if node == 0 || node == last { T::zero() } else { vu[node - 1] };
        match self.formulation {
            Formulation::Fosls => [u(e), u(e + 1), vs[e], vs[e + 1]],
            Formulation::Energy => [u(e), u(e + 1), T::zero(), T::zero()],
        }
    }

    fn width(&self) -> usize {
        match self.formulation {
            Formulation::Fosls => 4,
            Formulation::Energy => 2,
        }
    }

    // Element terms vⁿᵀM̂ⁿvⁿ and, if requested, the assembled M̂v.
    fn quadratic(&self, form: &NodalForm<T>, vu: &[T], vs: &[T], want_mv: bool) -> (T, Option<(Vec<T>, Vec<T>)>) {
        let m = self.width();
        let last = self.mesh.elements();
        let mut terms = Vec::with_capacity(last);
        let mut mvu = vec![T::zero(); if want_mv { vu.len() } else { 0 }];
        let mut mvs = vec![T::zero(); if want_mv { vs.len() } else { 0 }];
        for (e, block) in form.blocks.iter().enumerate() {
            let loc = self.local(e, vu, vs);
            let mut term = T::zero();
            let mut mv = [T::zero(); 4];
            for i in 0..m {
                let mut acc = T::zero();
                for j in 0..m {
                    acc += block[i][j] * loc[j];
                }
                mv[i] = acc;
                term += loc[i] * acc;
            }
            terms.push(term);
            if want_mv {
                if e >= 1 {
                    mvu[e - 1] += mv[0];
                }
                if e + 1 < last {
                    mvu[e] += mv[1];
                }
                if m == 4 {
                    mvs[e] += mv[2];
                    mvs[e + 1] += mv[3];
                }
            }
        }
        (pairwise_sum(&terms), want_mv.then_some((mvu, mvs)))
    }

    /// `wᵀ HᵀÂ_yH w`.
    pub fn quadratic_form(&self, form: &NodalForm<T>, w: &[T]) -> Result<T> {
        let (vu, vs) = self.synthesize(w)?;
        Ok(self.quadratic(form, &vu, &vs, false).0)
    }

    pub fn loss(&self, form: &NodalForm<T>, w: &[T], f: f64) -> Result<T> {
        Ok(self.loss_impl(form, w, f, false)?.0)
    }

    pub fn loss_grad(&self, form: &NodalForm<T>, w: &[T], f: f64) -> Result<(T, Vec<T>)> {
        let (l, g) = self.loss_impl(form, w, f, true)?;
        Ok((l, g.expect("gradient requested")))
    }

    fn loss_impl(&self, form: &NodalForm<T>, w: &[T], f: f64, grad: bool) -> Result<(T, Option<Vec<T>>)> {
        let (vu, vs) = self.synthesize(w)?;
        let (quad, mv) = self.quadratic(form, &vu, &vs, grad);
        match &self.sigma {
            Some(s) => {
                // linear term 2 f (σ(1) − σ(0)), constant f²
                let b_first = T::from_f64(-f / s.norms[0]);
                let b_last = T::from_f64(f / s.norms[s.norms.len() - 1]);
                let n = vs.len();
                let two = T::from_f64(2.0);
                let lin = two * (b_first * vs[0] + b_last * vs[n - 1]);
                let loss = quad + lin + T::from_f64(f * f);
                let g = match mv {
                    Some((mut mvu, mut mvs)) => {
                        mvs[0] += b_first;
                        mvs[n - 1] += b_last;
                        mvu.iter_mut().chain(mvs.iter_mut()).for_each(|x| *x *= two);
                        let mut g = self.u.pull_back(&mvu);
                        g.extend(s.pull_back(&mvs));
                        Some(g)
                    }
                    None => None,
                };
                Ok((loss, g))
            }
            None => {
                let lin_vec: Vec<T> = self.load.iter().map(|&l| T::from_f64(f * l)).collect();
                let lin_terms: Vec<T> = lin_vec.iter().zip(&vu).map(|(&l, &v)| l * v).collect();
                let loss = T::from_f64(0.5) * quad - pairwise_sum(&lin_terms);
                let g = mv.map(|(mut mvu, _)| {
                    for (x, &l) in mvu.iter_mut().zip(&lin_vec) {
                        *x -= l;
                    }
                    self.u.pull_back(&mvu)
                });
                Ok((loss, g))
            }
        }
    }

    fn require_fosls(&self) -> Result<&FieldPart<T>> {
        self.sigma
            .as_ref()
            .ok_or_else(|| Error::Usage("residuals exist only for the least-squares formulation".into()))
    }

    fn residuals_impl(&self, form: &NodalForm<T>, vu: &[T], vs: &[T], f: Option<f64>) -> Vec<T> {
        let q = self.points();
        let last = self.mesh.elements();
        let ft = f.map(T::from_f64);
        let mut r = vec![T::zero(); 2 * q];
        for e in 0..last {
            let u = |node: usize| if node == 0 || node == last { T::zero() } else { vu[node - 1] };
            let du = self.du[e][0] * u(e) + self.du[e][1] * u(e + 1);
            let ds = self.s_der[e][0] * vs[e] + self.s_der[e][1] * vs[e + 1];
            for p in 0..2 {
                let idx = 2 * e + p;
                let sv = self.s_val[e][p][0] * vs[e] + self.s_val[e][p][1] * vs[e + 1];
                r[idx] = self.sqrt_weight * ft.map_or(ds, |f| ds + f);
                r[q + idx] = self.sqrt_weight * (sv * form.inv_a[idx] - du);
            }
        }
        r
    }

    /// Gauss-point residuals scaled by `√w_q`, as in the stable path.
    pub fn residuals(&self, form: &NodalForm<T>, w: &[T], f: f64) -> Result<Vec<T>> {
        self.require_fosls()?;
        let (vu, vs) = self.synthesize(w)?;
        Ok(self.residuals_impl(form, &vu, &vs, Some(f)))
    }

    pub fn residual_jvp(&self, form: &NodalForm<T>, dw: &[T]) -> Result<Vec<T>> {
        self.require_fosls()?;
        let (vu, vs) = self.synthesize(dw)?;
        Ok(self.residuals_impl(form, &vu, &vs, None))
    }

    pub fn residual_vjp(&self, form: &NodalForm<T>, dr: &[T]) -> Result<Vec<T>> {
        let s = self.require_fosls()?;
        let q = self.points();
        check_len(2 * q, dr.len())?;
        let last = self.mesh.elements();
        let mut gu = vec![T::zero(); last - 1];
        let mut gs = vec![T::zero(); last + 1];
        for e in 0..last {
            let mut cu = T::zero();
            let mut cds = T::zero();
            let mut cs = [T::zero(); 2];
            for p in 0..2 {
                let idx = 2 * e + p;
                let r1 = self.sqrt_weight * dr[idx];
                let r2 = self.sqrt_weight * dr[q + idx];
                cds += r1;
                cu -= r2;
                let t = r2 * form.inv_a[idx];
                cs[0] += self.s_val[e][p][0] * t;
                cs[1] += self.s_val[e][p][1] * t;
            }
            if e >= 1 {
                gu[e - 1] += self.du[e][0] * cu;
            }
            if e + 1 < last {
                gu[e] += self.du[e][1] * cu;
            }
            gs[e] += self.s_der[e][0] * cds + cs[0];
            gs[e + 1] += self.s_der[e][1] * cds + cs[1];
        }
        let mut g = self.u.pull_back(&gu);
        g.extend(s.pull_back(&gs));
        Ok(g)
    }

    /// Finest-level nodal values `(u, σ)` of coefficients `w`, in binary64.
    pub fn nodal_values(&self, w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let wt: Vec<T> = w.iter().map(|&x| T::from_f64(x)).collect();
        let (vu, vs) = self.synthesize(&wt)?;
        let scale = |v: &[T], norms: &[f64]| -> Vec<f64> { v.iter().zip(norms).map(|(x, n)| x.to_f64() / n).collect() };
        Ok((scale(&vu, &self.u.norms), self.sigma.as_ref().map_or_else(Vec::new, |s| scale(&vs, &s.norms))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{solve_reference, FoslsSystem};
    use crate::linalg::norm2;
    use crate::stable_op::StableOperator;
    use rand::{Rng, SeedableRng};

    fn random(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_input_gives_unit_loss_in_every_precision() {
        let field = DiffusionField::new([0.7, 1.0, 1.2, 0.9]).unwrap();
        let op = NodalOperator::<f64>::new(Formulation::Fosls, 5, Basis::Frame).unwrap();
        assert_eq!(op.loss(&op.form(&field), &vec![0.0; op.coeff_dim()], 1.0).unwrap(), 1.0);
        let op = NodalOperator::<f32>::new(Formulation::Fosls, 5, Basis::Frame).unwrap();
        assert_eq!(op.loss(&op.form(&field), &vec![0.0; op.coeff_dim()], 1.0).unwrap(), 1.0);
        let op = NodalOperator::<crate::Half>::new(Formulation::Fosls, 5, Basis::Nodal).unwrap();
        let z = vec![crate::Half::zero(); op.coeff_dim()];
        assert_eq!(op.loss(&op.form(&field), &z, 1.0).unwrap().to_f64(), 1.0);
    }

    #[test]
    fn matches_stable_path_in_binary64() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for formulation in [Formulation::Fosls, Formulation::Energy] {
            let stable = StableOperator::<f64>::new(formulation, 6).unwrap();
            let nodal = NodalOperator::<f64>::new(formulation, 6, Basis::Frame).unwrap();
            for _ in 0..10 {
                let y: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.5..1.5));
                let field = DiffusionField::new(y).unwrap();
                let w = random(stable.coeff_dim(), &mut rng);
                let (ls, gs) = stable.loss_grad(&stable.form(&field), &w, 1.0).unwrap();
                let (ln, gn) = nodal.loss_grad(&nodal.form(&field), &w, 1.0).unwrap();
                assert!((ls - ln).abs() <= 1e-10 * (1.0 + ls.abs()), "{ls} vs {ln}");
                let diff: Vec<f64> = gs.iter().zip(&gn).map(|(a, b)| a - b).collect();
                assert!(norm2(&diff) <= 1e-9 * (1.0 + norm2(&gs)));
            }
        }
    }

    #[test]
    fn nodal_basis_agrees_with_fem_functional() {
        let field = DiffusionField::new([0.8, 1.3, 0.6, 1.0]).unwrap();
        let op = NodalOperator::<f64>::new(Formulation::Fosls, 5, Basis::Nodal).unwrap();
        let sol = solve_reference(&field, 5, 1.0).unwrap();
        let w = sol.stacked();
        let sys = FoslsSystem::new(DyadicMesh::new(5).unwrap(), &field);
        let direct = sys.functional(1.0, &sol.u, &sol.sigma).unwrap();
        let l = op.loss(&op.form(&field), &w, 1.0).unwrap();
        assert!((l - direct).abs() < 1e-12 * (1.0 + direct));
        let (_, g) = op.loss_grad(&op.form(&field), &w, 1.0).unwrap();
        assert!(norm2(&g) < 1e-8, "reference is stationary: {}", norm2(&g));
        let r = op.residuals(&op.form(&field), &w, 1.0).unwrap();
        assert!((r.iter().map(|x| x * x).sum::<f64>() - l).abs() < 1e-12);
    }

    #[test]
    fn residual_transpose_and_gradient() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let field = DiffusionField::new([0.8, 1.3, 0.6, 1.0]).unwrap();
        for basis in [Basis::Frame, Basis::Nodal] {
            let op = NodalOperator::<f64>::new(Formulation::Fosls, 4, basis).unwrap();
            let form = op.form(&field);
            let dw = random(op.coeff_dim(), &mut rng);
            let dr = random(2 * op.points(), &mut rng);
            let jv = op.residual_jvp(&form, &dw).unwrap();
            let jtr = op.residual_vjp(&form, &dr).unwrap();
            let lhs: f64 = jv.iter().zip(&dr).map(|(a, b)| a * b).sum();
            let rhs: f64 = dw.iter().zip(&jtr).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10 * norm2(&dw) * norm2(&dr));
            let w = random(op.coeff_dim(), &mut rng);
            let (_, g) = op.loss_grad(&form, &w, 1.0).unwrap();
            for k in 0..op.coeff_dim() {
                let eps = 1e-6;
                let mut wp = w.clone();
                wp[k] += eps;
                let mut wm = w.clone();
                wm[k] -= eps;
                let fd = (op.loss(&form, &wp, 1.0).unwrap() - op.loss(&form, &wm, 1.0).unwrap()) / (2.0 * eps);
                assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + g[k].abs()));
            }
        }
    }

    #[test]
    fn energy_rejects_residuals() {
        let op = NodalOperator::<f64>::new(Formulation::Energy, 3, Basis::Frame).unwrap();
        let field = DiffusionField::constant(1.0).unwrap();
        assert!(op.residuals(&op.form(&field), &vec![0.0; op.coeff_dim()], 1.0).is_err());
    }
}

//! Multilevel hat-function frames and the synthesis operator `H`.
//!
//! Level `j` (1-based) carries hats of width `2·2^-j` centered at the grid
//! nodes of level `j`, each divided by its H¹ norm. Stacked coefficients
//! are ordered level-major with levels ascending.

use crate::error::{check_len, Result};
use crate::fem::{DyadicMesh, Space, GAUSS_OFFSET};
use crate::linalg::LinearOperator;
use crate::precision::Real;

/// H¹ norm of the unit-height interior hat on level `j`.
pub fn h1_norm_hat(j: usize) -> f64 {
    let h = (-(j as f64)).exp2();
    (2.0 / h + 2.0 * h / 3.0).sqrt()
}

/// H¹ norm of the unit-height boundary half-hat on level `j`.
pub fn h1_norm_half_hat(j: usize) -> f64 {
    let h = (-(j as f64)).exp2();
    (1.0 / h + h / 3.0).sqrt()
}

// `‖φ‖²_{H¹}` of the level-`j` hat at grid node `node` by two-point Gauss
// quadrature on each supporting element.
fn h1_norm_by_quadrature(j: usize, node: usize) -> f64 {
    let h = (-(j as f64)).exp2();
    let last = 1usize << j;
    let center = node as f64 * h;
    let mut acc = 0.0;
    for element in [node.wrapping_sub(1), node] {
        if element >= last {
            continue;
        }
        let mid = (element as f64 + 0.5) * h;
        for x in [mid - GAUSS_OFFSET * h, mid + GAUSS_OFFSET * h] {
            let value = 1.0 - (x - center).abs() / h;
            acc += 0.5 * h * (1.0 / (h * h) + value * value);
        }
    }
    acc.sqrt()
}

/// Up to two `(coarse index, coefficient)` terms producing one fine entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil<T> {
    pub index: [usize; 2],
    pub coef: [T; 2],
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct Frame {
    space: Space,
    levels: usize,
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    norms: Vec<Vec<f64>>,
    // stencils[j - 2] maps level j-1 to level j
    stencils: Vec<Vec<Stencil<f64>>>,
}

impl Frame {
    pub fn new(space: Space, levels: usize) -> Result<Self> {
        DyadicMesh::new(levels)?;
        let sizes: Vec<usize> = (1..=levels).map(|j| space.level_size(j)).collect();
        let mut offsets = vec![0];
        for s in &sizes {
            offsets.push(offsets.last().unwrap() + s);
        }
        let norms: Vec<Vec<f64>> = (1..=levels)
            .map(|j| (0..space.level_size(j)).map(|k| h1_norm_by_quadrature(j, space.node_of(k))).collect())
            .collect();
        let stencils = (2..=levels)
            .map(|j| {
                (0..space.level_size(j))
                    .map(|i| {
                        let node = space.node_of(i);
                        let raw: Vec<(usize, f64)> = if node % 2 == 0 {
                            vec![(node / 2, 1.0)]
                        } else {
                            vec![(node / 2, 0.5), (node / 2 + 1, 0.5)]
                        };
                        let mut st = Stencil { index: [0; 2], coef: [0.0; 2], len: 0 };
                        for (coarse_node, weight) in raw {
                            let Some(k) = coarse_index(space, j - 1, coarse_node) else { continue };
                            st.index[st.len] = k;
                            st.coef[st.len] = weight * norms[j - 1][i] / norms[j - 2][k];
                            st.len += 1;
                        }
                        st
                    })
                    .collect()
            })
            .collect();
        Ok(Frame { space, levels, sizes, offsets, norms, stencils })
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// `n_j` for `j = 1..=J`.
    pub fn level_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn level_size(&self, j: usize) -> usize {
        self.sizes[j - 1]
    }

    /// `N̂ = Σ n_j`.
    pub fn total_size(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn finest_size(&self) -> usize {
        self.sizes[self.levels - 1]
    }

    /// Index range of level `j` in the stacked vector.
    pub fn level_range(&self, j: usize) -> std::ops::Range<usize> {
        self.offsets[j - 1]..self.offsets[j]
    }

    /// `‖φ_{j,k}‖_{H¹}` of the unit-height hat.
    pub fn norm(&self, j: usize, k: usize) -> f64 {
        self.norms[j - 1][k]
    }

    pub fn level_norms(&self, j: usize) -> &[f64] {
        &self.norms[j - 1]
    }

    /// Normalized prolongation stencils from level `j - 1` to level `j`.
    pub fn stencils(&self, j: usize) -> &[Stencil<f64>] {
        &self.stencils[j - 2]
    }

    /// Value and derivative of the normalized hat `φ_{j,k}/‖φ_{j,k}‖` at `x`.
    pub fn eval_hat(&self, j: usize, k: usize, x: f64) -> (f64, f64) {
        let h = (-(j as f64)).exp2();
        let center = self.space.node_of(k) as f64 * h;
        let d = x - center;
        if d.abs() >= h {
            return (0.0, 0.0);
        }
        let n = self.norm(j, k);
        let slope = if d < 0.0 { 1.0 / h } else { -1.0 / h };
        ((1.0 - d.abs() / h) / n, slope / n)
    }

    /// Unnormalized two-scale prolongation with stencil (1/2, 1, 1/2).
    pub fn prolongate_unnormalized(&self, j: usize, coarse: &[f64]) -> Result<Vec<f64>> {
        check_len(self.level_size(j - 1), coarse.len())?;
        Ok(self
            .stencils(j)
            .iter()
            .enumerate()
            .map(|(i, st)| {
                (0..st.len)
                    .map(|t| st.coef[t] * self.norm(j - 1, st.index[t]) / self.norm(j, i) * coarse[st.index[t]])
                    .sum()
            })
            .collect())
    }

    /// Normalized prolongation `P̂_j` in binary64.
    pub fn prolongate(&self, j: usize, coarse: &[f64]) -> Result<Vec<f64>> {
        check_len(self.level_size(j - 1), coarse.len())?;
        Ok(self.stencils(j).iter().map(|st| (0..st.len).map(|t| st.coef[t] * coarse[st.index[t]]).sum()).collect())
    }

    /// Synthesis tables rounded once into `T`.
    pub fn synthesis<T: Real>(&self) -> Synthesis<T> {
        Synthesis {
            sizes: self.sizes.clone(),
            offsets: self.offsets.clone(),
            stencils: self
                .stencils
                .iter()
                .map(|lvl| {
                    lvl.iter()
                        .map(|s| Stencil { index: s.index, coef: s.coef.map(T::from_f64), len: s.len })
                        .collect()
                })
                .collect(),
        }
    }

    /// Finest-level nodal values from coefficients w.r.t. normalized finest hats.
    pub fn nodal_values(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(self.level_norms(self.levels)).map(|(c, n)| c / n).collect()
    }

    /// Inverse of [`Frame::nodal_values`].
    pub fn from_nodal_values(&self, nodal: &[f64]) -> Vec<f64> {
        nodal.iter().zip(self.level_norms(self.levels)).map(|(c, n)| c * n).collect()
    }

    /// Finest-level nodal values of the function represented by `w`, in binary64.
    pub fn synthesize_nodal(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_len(self.total_size(), w.len())?;
        let mut v = vec![0.0; self.finest_size()];
        self.synthesis::<f64>().apply(w, &mut v);
        Ok(self.nodal_values(&v))
    }
}

fn coarse_index(space: Space, level: usize, node: usize) -> Option<usize> {
    let last = 1usize << level;
    match space {
        Space::H10 => (node >= 1 && node < last).then(|| node - 1),
        Space::H1 => (node <= last).then_some(node),
    }
}

/// The synthesis operator `H` in working precision, with its adjoint.
#[derive(Debug, Clone)]
pub struct Synthesis<T> {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    stencils: Vec<Vec<Stencil<T>>>,
}

impl<T: Real> Synthesis<T> {
    pub fn levels(&self) -> usize {
        self.sizes.len()
    }

    /// `fine = w_j + P̂_j coarse`
    fn prolongate_add(&self, j: usize, coarse: &[T], w_j: &[T], fine: &mut [T]) {
        for ((f, st), &w) in fine.iter_mut().zip(&self.stencils[j - 2]).zip(w_j) {
            let mut acc = st.coef[0] * coarse[st.index[0]];
            if st.len == 2 {
                acc += st.coef[1] * coarse[st.index[1]];
            }
            *f = w + acc;
        }
    }

    /// `coarse = P̂_jᵀ fine`
    pub fn restrict(&self, j: usize, fine: &[T], coarse: &mut [T]) {
        coarse.iter_mut().for_each(|c| *c = T::zero());
        for (st, &f) in self.stencils[j - 2].iter().zip(fine) {
            for t in 0..st.len {
                coarse[st.index[t]] += st.coef[t] * f;
            }
        }
    }

    /// `fine = P̂_j coarse`
    pub fn prolongate(&self, j: usize, coarse: &[T], fine: &mut [T]) {
        for (f, st) in fine.iter_mut().zip(&self.stencils[j - 2]) {
            let mut acc = st.coef[0] * coarse[st.index[0]];
            if st.len == 2 {
                acc += st.coef[1] * coarse[st.index[1]];
            }
            *f = acc;
        }
    }

    pub fn level_size(&self, j: usize) -> usize {
        self.sizes[j - 1]
    }
}

impl<T: Real> LinearOperator<T> for Synthesis<T> {
    fn dim_in(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn dim_out(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn apply(&self, w: &[T], out: &mut [T]) {
        let mut v = w[self.offsets[0]..self.offsets[1]].to_vec();
        for j in 2..=self.levels() {
            let mut fine = vec![T::zero(); self.sizes[j - 1]];
            self.prolongate_add(j, &v, &w[self.offsets[j - 1]..self.offsets[j]], &mut fine);
            v = fine;
        }
        out.copy_from_slice(&v);
    }

    fn apply_adjoint(&self, v: &[T], out: &mut [T]) {
        let levels = self.levels();
        let mut g = v.to_vec();
        for j in (1..=levels).rev() {
            out[self.offsets[j - 1]..self.offsets[j]].copy_from_slice(&g);
            if j > 1 {
                let mut coarse = vec![T::zero(); self.sizes[j - 2]];
                self.restrict(j, &g, &mut coarse);
                g = coarse;
            }
        }
    }
}

/// Squared H¹ norm of the P1 function with the given nodal values
/// (including both boundary nodes).
pub fn h1_norm_sq_nodal(full_nodal: &[f64]) -> f64 {
    let h = 1.0 / (full_nodal.len() - 1) as f64;
    full_nodal
        .windows(2)
        .map(|e| {
            let (a, b) = (e[0], e[1]);
            (b - a) * (b - a) / h + h / 3.0 * (a * a + a * b + b * b)
        })
        .sum()
}

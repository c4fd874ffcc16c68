//! Dyadic meshes on (0, 1), the piecewise-constant diffusion field, P1
//! element blocks, and the binary64 reference solvers.
//!
//! Elements are indexed from 0: element `n` is `[n h, (n + 1) h]` with
//! `h = 2^-J`. Nodal vectors for u exclude the two boundary nodes
//! (length `2^J - 1`); nodal vectors for sigma include them (`2^J + 1`).

use crate::error::{check_len, Error, Result};
use crate::linalg::{cg_solve, LinearOperator};

pub const MAX_LEVEL: usize = 16;

/// Offset of the two Gauss–Legendre points from the element midpoint, in
/// units of the element width.
pub const GAUSS_OFFSET: f64 = 0.288_675_134_594_812_9; // 1 / (2 sqrt 3)

/// Function space of the hat functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    /// Homogeneous Dirichlet conditions: interior hats only.
    H10,
    /// All hats including the boundary half-hats.
    H1,
}

impl Space {
    /// Number of level-`j` hats.
    pub fn level_size(self, j: usize) -> usize {
        match self {
            Space::H10 => (1 << j) - 1,
            Space::H1 => (1 << j) + 1,
        }
    }

    /// Grid index (0..=2^j) of the `k`-th level-`j` hat.
    pub fn node_of(self, k: usize) -> usize {
        match self {
            Space::H10 => k + 1,
            Space::H1 => k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DyadicMesh {
    level: usize,
}

impl DyadicMesh {
    pub fn new(level: usize) -> Result<Self> {
        if level == 0 || level > MAX_LEVEL {
            return Err(Error::Usage(format!("mesh level must lie in 1..={MAX_LEVEL}, got {level}")));
        }
        Ok(DyadicMesh { level })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn elements(&self) -> usize {
        1 << self.level
    }

    pub fn width(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.width();
        (0..=self.elements()).map(|i| i as f64 * h).collect()
    }

    /// The two Gauss points of element `n` with their weights.
    pub fn gauss_points(&self, n: usize) -> [(f64, f64); 2] {
        let h = self.width();
        let mid = (n as f64 + 0.5) * h;
        [(mid - GAUSS_OFFSET * h, 0.5 * h), (mid + GAUSS_OFFSET * h, 0.5 * h)]
    }

    /// All quadrature points, element-ascending.
    pub fn quadrature(&self) -> Vec<(f64, f64)> {
        (0..self.elements()).flat_map(|n| self.gauss_points(n)).collect()
    }

    pub fn size(&self, space: Space) -> usize {
        space.level_size(self.level)
    }
}

/// `a_y`: piecewise constant on the four quarters of (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionField {
    y: [f64; 4],
}

impl DiffusionField {
    pub const LOWER: f64 = 0.5;
    pub const UPPER: f64 = 1.5;

    /// A field from the parameter box `[0.5, 1.5]^4`.
    pub fn new(y: [f64; 4]) -> Result<Self> {
        if y.iter().any(|v| !(Self::LOWER..=Self::UPPER).contains(v)) {
            return Err(Error::Usage(format!("parameters {y:?} outside [0.5, 1.5]^4")));
        }
        Ok(DiffusionField { y })
    }

    /// Any strictly positive coefficients, for analysis outside the box.
    pub fn with_values(y: [f64; 4]) -> Result<Self> {
        if y.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Usage(format!("coefficients {y:?} must be positive")));
        }
        Ok(DiffusionField { y })
    }

    pub fn constant(c: f64) -> Result<Self> {
        Self::with_values([c; 4])
    }

    pub fn y(&self) -> [f64; 4] {
        self.y
    }

    fn quarter(x: f64) -> usize {
        ((4.0 * x).floor().max(0.0) as usize).min(3)
    }

    pub fn value(&self, x: f64) -> f64 {
        self.y[Self::quarter(x)]
    }

    /// Value on element `n`, which lies inside one quarter for `J >= 2`.
    pub fn on_element(&self, mesh: &DyadicMesh, n: usize) -> f64 {
        self.value((n as f64 + 0.5) * mesh.width())
    }
}

/// Energy stiffness block `a/h [[1, -1], [-1, 1]]` of element `n`.
pub fn local_stiffness_energy(mesh: &DyadicMesh, field: &DiffusionField, n: usize) -> [[f64; 2]; 2] {
    let s = field.on_element(mesh, n) / mesh.width();
    [[s, -s], [-s, s]]
}

/// Quadratic part of the least-squares functional on element `n`,
/// `∫ (σ')² + (σ/a − u')²`, on local coefficients `(u_l, u_r, σ_l, σ_r)`,
/// integrated with the element's two Gauss points.
pub fn local_blocks_fosls(mesh: &DyadicMesh, field: &DiffusionField, n: usize) -> [[f64; 4]; 4] {
    let h = mesh.width();
    let inv_a = 1.0 / field.on_element(mesh, n);
    let x_left = n as f64 * h;
    let mut block = [[0.0; 4]; 4];
    for (x, w) in mesh.gauss_points(n) {
        let t = (x - x_left) / h;
        // residual rows: σ' and σ/a − u' as linear functions of the coefficients
        let div = [0.0, 0.0, -1.0 / h, 1.0 / h];
        let cons = [1.0 / h, -1.0 / h, (1.0 - t) * inv_a, t * inv_a];
        for i in 0..4 {
            for j in 0..4 {
                block[i][j] += w * (div[i] * div[j] + cons[i] * cons[j]);
            }
        }
    }
    block
}

/// Element-to-global indices of `(u_l, u_r)` into the interior u vector and
/// `(σ_l, σ_r)` into the full sigma vector. Boundary u nodes map to `None`.
pub fn element_dofs(mesh: &DyadicMesh, n: usize) -> ([Option<usize>; 2], [usize; 2]) {
    let last = mesh.elements();
    let u = |node: usize| (node >= 1 && node < last).then(|| node - 1);
    ([u(n), u(n + 1)], [n, n + 1])
}

/// `⟨f, φ_{J,k}⟩` for constant `f`.
pub fn assemble_load(mesh: &DyadicMesh, f: f64, space: Space) -> Vec<f64> {
    let h = mesh.width();
    let mut load = vec![f * h; mesh.size(space)];
    if space == Space::H1 {
        load[0] = 0.5 * f * h;
        *load.last_mut().unwrap() = 0.5 * f * h;
    }
    load
}

/// The finest-level FOSLS normal operator on `[u_interior | σ]`.
pub struct FoslsSystem {
    mesh: DyadicMesh,
    blocks: Vec<[[f64; 4]; 4]>,
}

impl FoslsSystem {
    pub fn new(mesh: DyadicMesh, field: &DiffusionField) -> Self {
        let blocks = (0..mesh.elements()).map(|n| local_blocks_fosls(&mesh, field, n)).collect();
        FoslsSystem { mesh, blocks }
    }

    pub fn mesh(&self) -> &DyadicMesh {
        &self.mesh
    }

    pub fn blocks(&self) -> &[[[f64; 4]; 4]] {
        &self.blocks
    }

    fn n_u(&self) -> usize {
        self.mesh.size(Space::H10)
    }

    fn gather(&self, n: usize, v: &[f64]) -> [f64; 4] {
        let (u, s) = element_dofs(&self.mesh, n);
        let nu = self.n_u();
        [
            u[0].map_or(0.0, |i| v[i]),
            u[1].map_or(0.0, |i| v[i]),
            v[nu + s[0]],
            v[nu + s[1]],
        ]
    }

    /// Linear term `b` such that the functional is `vᵀMv + 2bᵀv + f²`.
    pub fn linear_term(&self, f: f64) -> Vec<f64> {
        let mut b = vec![0.0; self.dim_in()];
        let nu = self.n_u();
        b[nu] = -f;
        *b.last_mut().unwrap() = f;
        b
    }

    /// Least-squares functional of nodal `(u, σ)` with source `f`.
    pub fn functional(&self, f: f64, u: &[f64], sigma: &[f64]) -> Result<f64> {
        check_len(self.n_u(), u.len())?;
        check_len(self.mesh.size(Space::H1), sigma.len())?;
        let v: Vec<f64> = u.iter().chain(sigma).copied().collect();
        let mut mv = vec![0.0; v.len()];
        self.apply(&v, &mut mv);
        let b = self.linear_term(f);
        let quad: f64 = v.iter().zip(&mv).map(|(a, b)| a * b).sum();
        let lin: f64 = v.iter().zip(&b).map(|(a, b)| a * b).sum();
        Ok(quad + 2.0 * lin + f * f)
    }
}

impl LinearOperator<f64> for FoslsSystem {
    fn dim_in(&self) -> usize {
        self.n_u() + self.mesh.size(Space::H1)
    }
    fn dim_out(&self) -> usize {
        self.dim_in()
    }
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let nu = self.n_u();
        for (n, block) in self.blocks.iter().enumerate() {
            let local = self.gather(n, v);
            let (u, s) = element_dofs(&self.mesh, n);
            let targets = [u[0], u[1], Some(nu + s[0]), Some(nu + s[1])];
            for (i, target) in targets.iter().enumerate() {
                if let Some(t) = target {
                    out[*t] += (0..4).map(|j| block[i][j] * local[j]).sum::<f64>();
                }
            }
        }
    }
    fn apply_adjoint(&self, v: &[f64], out: &mut [f64]) {
        self.apply(v, out)
    }
}

/// Nodal finite element solution: u at interior nodes, σ at all nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalSolution {
    pub u: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl NodalSolution {
    /// `[u | σ]`, the order used for error metrics.
    pub fn stacked(&self) -> Vec<f64> {
        self.u.iter().chain(&self.sigma).copied().collect()
    }
}

pub const REFERENCE_TOL: f64 = 1e-13;

/// Minimizer of the discrete least-squares functional over P1-H¹₀ × P1-H¹,
/// computed in binary64 by CG on the normal equations.
pub fn solve_reference(field: &DiffusionField, level: usize, f: f64) -> Result<NodalSolution> {
    let mesh = DyadicMesh::new(level)?;
    let system = FoslsSystem::new(mesh, field);
    let rhs: Vec<f64> = system.linear_term(f).iter().map(|b| -b).collect();
    let max_iters = 20 * system.dim_in() + 100;
    let out = cg_solve(&system, &rhs, REFERENCE_TOL, max_iters)?;
    if !out.converged {
        return Err(Error::NumericalFailure(format!(
            "reference CG stalled at relative residual {:.3e} after {} iterations",
            out.relative_residual, out.iterations
        )));
    }
    let nu = mesh.size(Space::H10);
    let mut x = out.x;
    let sigma = x.split_off(nu);
    Ok(NodalSolution { u: x, sigma })
}

/// Galerkin solution of the energy formulation (tridiagonal solve).
pub fn solve_galerkin_energy(field: &DiffusionField, level: usize, f: f64) -> Result<Vec<f64>> {
    let mesh = DyadicMesh::new(level)?;
    let n = mesh.size(Space::H10);
    let h = mesh.width();
    // node i+1 couples elements i and i+1
    let a: Vec<f64> = (0..mesh.elements()).map(|e| field.on_element(&mesh, e) / h).collect();
    let diag: Vec<f64> = (0..n).map(|i| a[i] + a[i + 1]).collect();
    let off: Vec<f64> = (0..n.saturating_sub(1)).map(|i| -a[i + 1]).collect();
    let rhs = assemble_load(&mesh, f, Space::H10);
    Ok(thomas(&off, &diag, &off, &rhs))
}

fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = if n > 1 { upper[0] / diag[0] } else { 0.0 };
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i - 1] * c[i - 1];
        if i + 1 < n {
            c[i] = upper[i] / m;
        }
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    d
}

/// Ritz energy `½ uᵀAu − ⟨f, u⟩` of interior nodal values.
pub fn energy_functional(mesh: &DyadicMesh, field: &DiffusionField, f: f64, u: &[f64]) -> Result<f64> {
    check_len(mesh.size(Space::H10), u.len())?;
    let h = mesh.width();
    let last = mesh.elements();
    let node = |i: usize| if i == 0 || i == last { 0.0 } else { u[i - 1] };
    let mut quad = 0.0;
    for e in 0..last {
        let g = (node(e + 1) - node(e)) / h;
        quad += field.on_element(mesh, e) * h * g * g;
    }
    let lin: f64 = assemble_load(mesh, f, Space::H10).iter().zip(u).map(|(l, v)| l * v).sum();
    Ok(0.5 * quad - lin)
}

/// Closed-form solution for `f ≡ 1`: `σ = σ₀ − x`, `u(x) = ∫₀ˣ σ/a`.
#[derive(Debug, Clone, Copy)]
pub struct ExactSolution {
    field: DiffusionField,
    sigma0: f64,
}

impl ExactSolution {
    pub fn new(field: &DiffusionField) -> Self {
        let y = field.y();
        let mut x_over_a = 0.0;
        let mut inv_a = 0.0;
        for (i, yi) in y.iter().enumerate() {
            let (l, r) = (i as f64 / 4.0, (i + 1) as f64 / 4.0);
            x_over_a += 0.5 * (r * r - l * l) / yi;
            inv_a += 0.25 / yi;
        }
        ExactSolution { field: *field, sigma0: x_over_a / inv_a }
    }

    pub fn sigma(&self, x: f64) -> f64 {
        self.sigma0 - x
    }

    pub fn du(&self, x: f64) -> f64 {
        self.sigma(x) / self.field.value(x)
    }

    pub fn u(&self, x: f64) -> f64 {
        let y = self.field.y();
        let mut acc = 0.0;
        for (i, yi) in y.iter().enumerate() {
            let l = i as f64 / 4.0;
            if x <= l {
                break;
            }
            let r = ((i + 1) as f64 / 4.0).min(x);
            acc += (self.sigma0 * (r - l) - 0.5 * (r * r - l * l)) / yi;
        }
        acc
    }

    /// Nodal interpolant on `mesh`.
    pub fn interpolate(&self, mesh: &DyadicMesh) -> NodalSolution {
        let nodes = mesh.nodes();
        NodalSolution {
            u: nodes[1..nodes.len() - 1].iter().map(|&x| self.u(x)).collect(),
            sigma: nodes.iter().map(|&x| self.sigma(x)).collect(),
        }
    }
}

/// Squared H¹ error of u and squared H(div) error of σ against the exact
/// solution, integrated with three Gauss points per element.
pub fn error_norms_sq(mesh: &DyadicMesh, exact: &ExactSolution, sol: &NodalSolution) -> Result<(f64, f64)> {
    check_len(mesh.size(Space::H10), sol.u.len())?;
    check_len(mesh.size(Space::H1), sol.sigma.len())?;
    const PTS: [(f64, f64); 3] = [
        (-0.774_596_669_241_483_4, 5.0 / 9.0),
        (0.0, 8.0 / 9.0),
        (0.774_596_669_241_483_4, 5.0 / 9.0),
    ];
    let h = mesh.width();
    let last = mesh.elements();
    let node_u = |i: usize| if i == 0 || i == last { 0.0 } else { sol.u[i - 1] };
    let (mut eu, mut es) = (0.0, 0.0);
    for e in 0..last {
        let (ul, ur) = (node_u(e), node_u(e + 1));
        let (sl, sr) = (sol.sigma[e], sol.sigma[e + 1]);
        let x_left = e as f64 * h;
        for (xi, wi) in PTS {
            let t = 0.5 * (1.0 + xi);
            let x = x_left + t * h;
            let w = 0.5 * h * wi;
            let uh = ul + t * (ur - ul);
            let duh = (ur - ul) / h;
            let sh = sl + t * (sr - sl);
            let dsh = (sr - sl) / h;
            eu += w * ((uh - exact.u(x)).powi(2) + (duh - exact.du(x)).powi(2));
            es += w * ((sh - exact.sigma(x)).powi(2) + (dsh + 1.0).powi(2));
        }
    }
    Ok((eu, es))
}

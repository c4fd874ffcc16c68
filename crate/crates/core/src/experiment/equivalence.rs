use super::metrics::sample_parameters;
use crate::error::Result;
use crate::fem::{error_norms_sq, solve_reference, DiffusionField, DyadicMesh, ExactSolution, NodalSolution};
use crate::nodal_op::{Basis, NodalOperator};
use crate::Formulation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Least-squares loss and squared `H¹ × H(div)` error of one perturbed
/// reference solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalencePoint {
    pub y: [f64; 4],
    /// Relative size of the perturbation in the Euclidean nodal norm.
    pub scale: f64,
    pub loss: f64,
    pub error_sq: f64,
}

impl EquivalencePoint {
    pub fn ratio(&self) -> f64 {
        self.loss / self.error_sq
    }
}

/// Reference solutions plus a perturbation of log-uniform relative size in
/// `[1e-4, 1]`, each compared with the exact solution. Even draws perturb with
/// Gaussian nodal noise, odd draws with low-frequency modes of independent
/// amplitude in `u` and `σ`.
pub fn equivalence_study(levels: usize, count: usize, seed: u64) -> Result<Vec<EquivalencePoint>> {
    let op = NodalOperator::<f64>::new(Formulation::Fosls, levels, Basis::Nodal)?;
    let mesh = DyadicMesh::new(levels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_parameters(count, seed.wrapping_add(1))
        .into_iter()
        .enumerate()
        .map(|(i, y)| {
            let field = DiffusionField::new(y)?;
            let reference = solve_reference(&field, levels, 1.0)?;
            let w = reference.stacked();
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            let noise: Vec<f64> = if i % 2 == 0 {
                (0..w.len()).map(|_| rng.sample(StandardNormal)).collect()
            } else {
                let nodes = mesh.nodes();
                let (ku, ks) = (rng.random_range(1..=4) as f64, rng.random_range(0..=4) as f64);
                let (cu, cs): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                let pi = std::f64::consts::PI;
                let u = nodes[1..nodes.len() - 1].iter().map(|x| cu * (ku * pi * x).sin());
                u.chain(nodes.iter().map(|x| cs * (ks * pi * x).cos())).collect()
            };
            let noise_norm = noise.iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = 10f64.powf(rng.random_range(-4.0..=0.0));
            let p: Vec<f64> = w.iter().zip(&noise).map(|(a, n)| a + scale * norm * n / noise_norm).collect();
            let loss = op.loss(&op.form(&field), &p, 1.0)?;
            let (u, sigma) = p.split_at(reference.u.len());
            let (eu, es) =
                error_norms_sq(&mesh, &ExactSolution::new(&field), &NodalSolution { u: u.to_vec(), sigma: sigma.to_vec() })?;
            Ok(EquivalencePoint { y, scale, loss, error_sq: eu + es })
        })
        .collect()
}

/// `max / min` of the loss-to-error ratios.
pub fn band_width(points: &[EquivalencePoint]) -> f64 {
    let (lo, hi) = points.iter().map(EquivalencePoint::ratio).fold((f64::INFINITY, 0.0f64), |(l, h), r| (l.min(r), h.max(r)));
    hi / lo
}

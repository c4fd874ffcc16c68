use super::config::Preconditioning;
use super::metrics::sample_parameters;
use super::objective::network_for;
use super::train::sci;
use crate::error::Result;
use crate::fem::{DyadicMesh, Space};
use crate::frames::{h1_norm_sq_nodal, Frame};
use crate::nn::{ArchKind, Network};
use crate::Formulation;
use std::path::Path;

/// One initialization drawn with and without the frame representation.
#[derive(Debug, Clone, PartialEq)]
pub struct InitDraw {
    pub seed: u64,
    pub y: [f64; 4],
    /// Nodal values of `u` on the finest grid, boundary nodes included.
    pub frame_field: Vec<f64>,
    pub raw_field: Vec<f64>,
    pub frame_h1: f64,
    pub raw_h1: f64,
}

fn with_boundary(interior: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(interior.len() + 2);
    v.push(0.0);
    v.extend_from_slice(interior);
    v.push(0.0);
    v
}

/// Field `u` of a freshly initialized network, once through the frame
/// synthesis and once with a nodal-output network of the same seed.
pub fn init_draw(frame_net: &Network<f64>, raw_net: &Network<f64>, frame: &Frame, seed: u64, y: [f64; 4]) -> Result<InitDraw> {
    let theta = frame_net.init(seed);
    init_draw_with(frame_net, theta.values(), raw_net, raw_net.init(seed).values(), frame, seed, y)
}

fn init_draw_with(
    frame_net: &Network<f64>,
    frame_theta: &[f64],
    raw_net: &Network<f64>,
    raw_theta: &[f64],
    frame: &Frame,
    seed: u64,
    y: [f64; 4],
) -> Result<InitDraw> {
    let w = frame_net.forward(frame_theta, &y)?;
    let frame_field = with_boundary(&frame.synthesize_nodal(&w[..frame.total_size()])?);
    let v = raw_net.forward(raw_theta, &y)?;
    let raw_field = with_boundary(&v[..frame.finest_size()]);
    Ok(InitDraw {
        seed,
        y,
        frame_h1: h1_norm_sq_nodal(&frame_field).sqrt(),
        raw_h1: h1_norm_sq_nodal(&raw_field).sqrt(),
        frame_field,
        raw_field,
    })
}

/// `count` draws with seeds `seed, seed + 1, …` at `levels`.
pub fn init_demo(arch: ArchKind, levels: usize, count: usize, seed: u64) -> Result<Vec<InitDraw>> {
    let frame_net = network_for::<f64>(arch, Formulation::Fosls, levels, Preconditioning::FrameStable)?;
    let raw_net = network_for::<f64>(ArchKind::Full, Formulation::Fosls, levels, Preconditioning::None)?;
    let frame = Frame::new(Space::H10, levels)?;
    let ys = sample_parameters(count, seed);
    ys.into_iter()
        .enumerate()
        .map(|(i, y)| init_draw(&frame_net, &raw_net, &frame, seed + i as u64, y))
        .collect()
}

/// Long-format field values and a per-draw norm table.
pub fn write_init_csv(fields: &Path, norms: &Path, draws: &[InitDraw]) -> Result<()> {
    let mut w = csv::Writer::from_path(fields)?;
    w.write_record(["seed", "x", "frame", "raw"])?;
    for d in draws {
        let mesh = DyadicMesh::new((d.frame_field.len() - 1).trailing_zeros() as usize)?;
        for ((x, a), b) in mesh.nodes().iter().zip(&d.frame_field).zip(&d.raw_field) {
            w.write_record([d.seed.to_string(), sci(*x), sci(*a), sci(*b)])?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(norms)?;
    w.write_record(["seed", "frame_h1", "raw_h1"])?;
    for d in draws {
        w.write_record([d.seed.to_string(), sci(d.frame_h1), sci(d.raw_h1)])?;
    }
    w.flush()?;
    Ok(())
}

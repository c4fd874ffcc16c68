//! Coefficient networks `y ↦ w(y)` built from dense layers, low-rank
//! residual blocks `z + A silu(Wz + b)` and fixed prolongation layers.
//!
//! A network is a list of independent chains; each chain reads the
//! parameter vector `y` and writes one contiguous range of the stacked
//! output. Reverse mode ([`Network::backward`]) and forward mode
//! ([`Network::jvp`]) reuse the values recorded by [`Network::forward_trace`].

mod checkpoint;
mod params;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use params::{xavier_init, ParamVector, TensorInfo};

use crate::error::{check_len, Error, Result};
use crate::frames::{Frame, Synthesis};
use crate::linalg::dot;
use crate::precision::Real;
use serde::{Deserialize, Serialize};

pub const INPUT_DIM: usize = 4;
pub const FULL_BLOCKS: usize = 8;
pub const FULL_RANK: usize = 8;
pub const SEPARATE_BLOCKS: usize = 8;
pub const FRAME_BLOCKS_PER_LEVEL: usize = 4;
pub const MAX_RANK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    /// One residual network for all stacked coefficients.
    Full,
    /// An independent residual network per field and level.
    SeparateResnet,
    /// Per field and output level, a chain that grows through the levels
    /// with prolongation layers in between.
    SeparateFrame,
}

impl std::fmt::Display for ArchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ArchKind::Full => "full",
            ArchKind::SeparateResnet => "separate_resnet",
            ArchKind::SeparateFrame => "separate_frame",
        })
    }
}

impl std::str::FromStr for ArchKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ArchKind::Full),
            "separate_resnet" => Ok(ArchKind::SeparateResnet),
            "separate_frame" => Ok(ArchKind::SeparateFrame),
            other => Err(Error::Usage(format!("unknown architecture '{other}'"))),
        }
    }
}

/// `x σ(x)` with the logistic function evaluated once per call.
pub fn silu<T: Real>(x: T) -> T {
    x * x.sigmoid()
}

/// `σ(x) (1 + x (1 − σ(x)))`
pub fn silu_derivative<T: Real>(x: T) -> T {
    let s = x.sigmoid();
    s * (T::one() + x * (T::one() - s))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `silu(W z + b)` or `W z + b`, `W` stored row-major `out × in`.
    Dense { inputs: usize, outputs: usize, w: usize, b: usize, activation: bool },
    /// `z + A silu(W z + b)`; `W` is `rank × width`, `A` is stored transposed
    /// (`rank × width`), `b` has `rank` entries.
    ResBlock { width: usize, rank: usize, w: usize, b: usize, a: usize },
    /// Normalized prolongation from level `level - 1` to `level` of field `field`.
    Prolong { field: usize, level: usize },
}

impl Layer {
    /// Width produced by this layer when fed `input` values.
    pub fn output_dim(&self, input: usize, sizes: &[Vec<usize>]) -> usize {
        match self {
            Layer::Dense { outputs, .. } => *outputs,
            Layer::ResBlock { .. } => input,
            Layer::Prolong { field, level } => sizes[*field][level - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub layers: Vec<Layer>,
    pub output: std::ops::Range<usize>,
}

/// Values recorded during the forward pass of one chain.
#[derive(Debug, Clone)]
struct LayerTrace<T> {
    input: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
}

/// Forward values of all chains for one input.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    chains: Vec<Vec<LayerTrace<T>>>,
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    kind: ArchKind,
    chains: Vec<Chain>,
    params: Vec<TensorInfo>,
    param_count: usize,
    output_dim: usize,
    synthesis: Vec<Synthesis<T>>,
    sizes: Vec<Vec<usize>>,
}

struct Builder {
    params: Vec<TensorInfo>,
    next: usize,
}

impl Builder {
    fn tensor(&mut self, name: String, rows: usize, cols: usize, fan: Option<(usize, usize)>) -> usize {
        let offset = self.next;
        self.params.push(TensorInfo { name, offset, rows, cols, xavier: fan });
        self.next += rows * cols;
        offset
    }

    fn dense(&mut self, prefix: &str, inputs: usize, outputs: usize) -> Layer {
        let w = self.tensor(format!("{prefix}.W"), outputs, inputs, Some((outputs, inputs)));
        let b = self.tensor(format!("{prefix}.b"), outputs, 1, None);
        Layer::Dense { inputs, outputs, w, b, activation: true }
    }

    fn block(&mut self, prefix: &str, width: usize, rank: usize) -> Layer {
        let w = self.tensor(format!("{prefix}.W"), rank, width, Some((rank, width)));
        let b = self.tensor(format!("{prefix}.b"), rank, 1, None);
        let a = self.tensor(format!("{prefix}.A"), rank, width, Some((width, rank)));
        Layer::ResBlock { width, rank, w, b, a }
    }
}

impl<T: Real> Network<T> {
    /// One chain `Λ₀: ℝ⁴ → ℝ^dim` followed by [`FULL_BLOCKS`] blocks of rank
    /// [`FULL_RANK`]. Works for frame coefficients and for plain nodal outputs.
    pub fn full(output_dim: usize) -> Self {
        let mut b = Builder { params: Vec::new(), next: 0 };
        let mut layers = vec![b.dense("in", INPUT_DIM, output_dim)];
        for k in 0..FULL_BLOCKS {
            layers.push(b.block(&format!("block{k}"), output_dim, FULL_RANK.min(output_dim)));
        }
        Self::assemble(ArchKind::Full, b, vec![Chain { layers, output: 0..output_dim }], &[])
    }

    /// Independent networks per field and level.
    pub fn separate_resnet(frames: &[&Frame]) -> Self {
        let mut b = Builder { params: Vec::new(), next: 0 };
        let mut chains = Vec::new();
        let mut offset = 0;
        for (f, frame) in frames.iter().enumerate() {
            for j in 1..=frame.levels() {
                let n = frame.level_size(j);
                let prefix = format!("f{f}.l{j}");
                let mut layers = vec![b.dense(&format!("{prefix}.in"), INPUT_DIM, n)];
                for k in 0..SEPARATE_BLOCKS {
                    layers.push(b.block(&format!("{prefix}.block{k}"), n, MAX_RANK.min(n)));
                }
                chains.push(Chain { layers, output: offset..offset + n });
                offset += n;
            }
        }
        Self::assemble(ArchKind::SeparateResnet, b, chains, frames)
    }

    /// Per field and output level `j`: `Λ₀` onto level 1, then for each
    /// level `i ≤ j` blocks of width `n_i` separated by prolongations.
    pub fn separate_frame(frames: &[&Frame]) -> Self {
        let mut b = Builder { params: Vec::new(), next: 0 };
        let mut chains = Vec::new();
        let mut offset = 0;
        for (f, frame) in frames.iter().enumerate() {
            for j in 1..=frame.levels() {
                let prefix = format!("f{f}.out{j}");
                let n1 = frame.level_size(1);
                let mut layers = vec![b.dense(&format!("{prefix}.in"), INPUT_DIM, n1)];
                for i in 1..=j {
                    if i > 1 {
                        layers.push(Layer::Prolong { field: f, level: i });
                    }
                    let n = frame.level_size(i);
                    for k in 0..FRAME_BLOCKS_PER_LEVEL {
                        layers.push(b.block(&format!("{prefix}.l{i}.block{k}"), n, MAX_RANK.min(n)));
                    }
                }
                let n = frame.level_size(j);
                chains.push(Chain { layers, output: offset..offset + n });
                offset += n;
            }
        }
        Self::assemble(ArchKind::SeparateFrame, b, chains, frames)
    }

    /// Build the architecture `kind` for the given output frames.
    pub fn for_frames(kind: ArchKind, frames: &[&Frame]) -> Self {
        match kind {
            ArchKind::Full => Self::full(frames.iter().map(|f| f.total_size()).sum()),
            ArchKind::SeparateResnet => Self::separate_resnet(frames),
            ArchKind::SeparateFrame => Self::separate_frame(frames),
        }
    }

    fn assemble(kind: ArchKind, b: Builder, chains: Vec<Chain>, frames: &[&Frame]) -> Self {
        let output_dim = chains.iter().map(|c| c.output.end).max().unwrap_or(0);
        Network {
            kind,
            chains,
            params: b.params,
            param_count: b.next,
            output_dim,
            synthesis: frames.iter().map(|f| f.synthesis()).collect(),
            sizes: frames.iter().map(|f| f.level_sizes().to_vec()).collect(),
        }
    }

    pub fn kind(&self) -> ArchKind {
        self.kind
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn chains(&self) -> &[Chain] {
        &self.chains
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.params
    }

    /// Fresh parameters: Xavier Gaussian matrices, zero biases.
    pub fn init(&self, seed: u64) -> ParamVector<T> {
        ParamVector::init(self.params.clone(), self.param_count, seed)
    }

    pub fn forward(&self, theta: &[T], y: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_trace(theta, y)?.0)
    }

    pub fn forward_trace(&self, theta: &[T], y: &[T]) -> Result<(Vec<T>, Trace<T>)> {
        check_len(self.param_count, theta.len())?;
        check_len(INPUT_DIM, y.len())?;
        let mut out = vec![T::zero(); self.output_dim];
        let mut chains = Vec::with_capacity(self.chains.len());
        for chain in &self.chains {
            let mut z = y.to_vec();
            let mut traces = Vec::with_capacity(chain.layers.len());
            for layer in &chain.layers {
                let (next, trace) = self.layer_forward(layer, theta, z);
                traces.push(trace);
                z = next;
            }
            out[chain.output.clone()].copy_from_slice(&z);
            chains.push(traces);
        }
        Ok((out, Trace { chains }))
    }

    fn layer_forward(&self, layer: &Layer, theta: &[T], z: Vec<T>) -> (Vec<T>, LayerTrace<T>) {
        match *layer {
            Layer::Dense { inputs, outputs, w, b, activation } => {
                let pre: Vec<T> =
                    (0..outputs).map(|k| dot(&theta[w + k * inputs..w + (k + 1) * inputs], &z) + theta[b + k]).collect();
                let act: Vec<T> = if activation { pre.iter().map(|&p| silu(p)).collect() } else { pre.clone() };
                (act.clone(), LayerTrace { input: z, pre, act })
            }
            Layer::ResBlock { width, rank, w, b, a } => {
                let pre: Vec<T> =
                    (0..rank).map(|i| dot(&theta[w + i * width..w + (i + 1) * width], &z) + theta[b + i]).collect();
                let act: Vec<T> = pre.iter().map(|&p| silu(p)).collect();
                let mut update = vec![T::zero(); width];
                for (i, &s) in act.iter().enumerate() {
                    for (u, &ai) in update.iter_mut().zip(&theta[a + i * width..a + (i + 1) * width]) {
                        *u += ai * s;
                    }
                }
                let out: Vec<T> = z.iter().zip(&update).map(|(&zi, &ui)| zi + ui).collect();
                (out, LayerTrace { input: z, pre, act })
            }
            Layer::Prolong { field, level } => {
                let mut out = vec![T::zero(); self.sizes[field][level - 1]];
                self.synthesis[field].prolongate(level, &z, &mut out);
                (out, LayerTrace { input: z, pre: Vec::new(), act: Vec::new() })
            }
        }
    }

    /// Gradient of `⟨forward(θ, y), cotangent⟩` with respect to `θ`.
    pub fn backward(&self, theta: &[T], trace: &Trace<T>, cotangent: &[T]) -> Result<Vec<T>> {
        check_len(self.param_count, theta.len())?;
        check_len(self.output_dim, cotangent.len())?;
        let mut grad = vec![T::zero(); self.param_count];
        for (chain, traces) in self.chains.iter().zip(&trace.chains) {
            let mut g = cotangent[chain.output.clone()].to_vec();
            for (idx, (layer, t)) in chain.layers.iter().zip(traces).enumerate().rev() {
                let need_input = idx > 0;
                g = self.layer_backward(layer, theta, t, &g, &mut grad, need_input);
            }
        }
        Ok(grad)
    }

    fn layer_backward(&self, layer: &Layer, theta: &[T], t: &LayerTrace<T>, g: &[T], grad: &mut [T], need_input: bool) -> Vec<T> {
        match *layer {
            Layer::Dense { inputs, outputs, w, b, activation } => {
                let gp: Vec<T> = if activation {
                    g.iter().zip(&t.pre).map(|(&gi, &p)| gi * silu_derivative(p)).collect()
                } else {
                    g.to_vec()
                };
                for k in 0..outputs {
                    grad[b + k] = gp[k];
                    for (gw, &zi) in grad[w + k * inputs..w + (k + 1) * inputs].iter_mut().zip(&t.input) {
                        *gw = gp[k] * zi;
                    }
                }
                if !need_input {
                    return Vec::new();
                }
                let mut gz = vec![T::zero(); inputs];
                for k in 0..outputs {
                    for (gzi, &wk) in gz.iter_mut().zip(&theta[w + k * inputs..w + (k + 1) * inputs]) {
                        *gzi += wk * gp[k];
                    }
                }
                gz
            }
            Layer::ResBlock { width, rank, w, b, a } => {
                let mut gz = g.to_vec();
                for i in 0..rank {
                    let arow = &theta[a + i * width..a + (i + 1) * width];
                    for (ga, &gk) in grad[a + i * width..a + (i + 1) * width].iter_mut().zip(g) {
                        *ga = gk * t.act[i];
                    }
                    let gp = dot(arow, g) * silu_derivative(t.pre[i]);
                    grad[b + i] = gp;
                    let wrow = &theta[w + i * width..w + (i + 1) * width];
                    for ((gw, &zk), (gzk, &wk)) in
                        grad[w + i * width..w + (i + 1) * width].iter_mut().zip(&t.input).zip(gz.iter_mut().zip(wrow))
                    {
                        *gw = gp * zk;
                        *gzk += wk * gp;
                    }
                }
                gz
            }
            Layer::Prolong { field, level } => {
                let mut out = vec![T::zero(); self.sizes[field][level - 2]];
                self.synthesis[field].restrict(level, g, &mut out);
                out
            }
        }
    }

    /// Directional derivative of the output along `direction` in parameter space.
    pub fn jvp(&self, theta: &[T], trace: &Trace<T>, direction: &[T]) -> Result<Vec<T>> {
        check_len(self.param_count, theta.len())?;
        check_len(self.param_count, direction.len())?;
        let mut out = vec![T::zero(); self.output_dim];
        for (chain, traces) in self.chains.iter().zip(&trace.chains) {
            let mut dz = vec![T::zero(); INPUT_DIM];
            for (layer, t) in chain.layers.iter().zip(traces) {
                dz = self.layer_jvp(layer, theta, t, &dz, direction);
            }
            out[chain.output.clone()].copy_from_slice(&dz);
        }
        Ok(out)
    }

    fn layer_jvp(&self, layer: &Layer, theta: &[T], t: &LayerTrace<T>, dz: &[T], d: &[T]) -> Vec<T> {
        match *layer {
            Layer::Dense { inputs, outputs, w, b, activation } => (0..outputs)
                .map(|k| {
                    let rows = w + k * inputs..w + (k + 1) * inputs;
                    let dp = dot(&d[rows.clone()], &t.input) + dot(&theta[rows], dz) + d[b + k];
                    if activation {
                        silu_derivative(t.pre[k]) * dp
                    } else {
                        dp
                    }
                })
                .collect(),
            Layer::ResBlock { width, rank, w, b, a } => {
                let mut out = dz.to_vec();
                for i in 0..rank {
                    let rows = w + i * width..w + (i + 1) * width;
                    let dp = dot(&d[rows.clone()], &t.input) + dot(&theta[rows], dz) + d[b + i];
                    let ds = silu_derivative(t.pre[i]) * dp;
                    let arows = a + i * width..a + (i + 1) * width;
                    for ((o, &da), &ai) in out.iter_mut().zip(&d[arows.clone()]).zip(&theta[arows]) {
                        *o += da * t.act[i] + ai * ds;
                    }
                }
                out
            }
            Layer::Prolong { field, level } => {
                let mut out = vec![T::zero(); self.sizes[field][level - 1]];
                self.synthesis[field].prolongate(level, dz, &mut out);
                out
            }
        }
    }

    /// Output width of every layer, per chain.
    pub fn layer_output_dims(&self) -> Vec<Vec<usize>> {
        self.chains
            .iter()
            .map(|c| {
                let mut dim = INPUT_DIM;
                c.layers
                    .iter()
                    .map(|l| {
                        dim = l.output_dim(dim, &self.sizes);
                        dim
                    })
                    .collect()
            })
            .collect()
    }
}

use crate::error::{check_len, Error, Result};
use crate::precision::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Location and shape of one named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorInfo {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    /// `(fan_out, fan_in)` for Xavier-initialized matrices; `None` for biases.
    pub xavier: Option<(usize, usize)>,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// i.i.d. `N(0, 2/(rows + cols))` entries drawn in binary64.
pub fn xavier_init(rows: usize, cols: usize, rng: &mut impl Rng) -> Vec<f64> {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Flat parameter vector `θ` with its tensor index.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    tensors: Vec<TensorInfo>,
    values: Vec<T>,
}

impl<T: Real> ParamVector<T> {
    pub(crate) fn init(tensors: Vec<TensorInfo>, count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![T::zero(); count];
        for t in &tensors {
            if let Some((fan_out, fan_in)) = t.xavier {
                let draws = xavier_init(fan_out, fan_in, &mut rng);
                for (v, d) in values[t.range()].iter_mut().zip(draws) {
                    *v = T::from_f64(d);
                }
            }
        }
        ParamVector { tensors, values }
    }

    /// Rebuild from binary64 values, rounding once.
    pub fn unflatten(tensors: Vec<TensorInfo>, flat: &[f64]) -> Result<Self> {
        let count = tensors.iter().map(|t| t.offset + t.len()).max().unwrap_or(0);
        check_len(count, flat.len())?;
        Ok(ParamVector { tensors, values: flat.iter().map(|&x| T::from_f64(x)).collect() })
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.to_f64()).collect()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn tensor(&self, info: &TensorInfo) -> &[T] {
        &self.values[info.range()]
    }

    pub fn tensor_mut(&mut self, info: &TensorInfo) -> &mut [T] {
        &mut self.values[info.range()]
    }

    pub fn by_name(&self, name: &str) -> Result<&[T]> {
        let info = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Usage(format!("no tensor named '{name}'")))?;
        Ok(self.tensor(info))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

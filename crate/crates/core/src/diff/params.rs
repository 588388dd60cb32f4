use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// A named dense matrix (vectors are `rows × 1`), stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Glorot-uniform over `(fan_in = cols, fan_out = rows)`.
    Glorot,
    /// Gaussian with the given standard deviation.
    Normal(f64),
    Values(Vec<f64>),
}

/// Named parameter tensors. Shapes are fixed once added.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub seed: u64,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            seed,
            tensors: Vec::new(),
        }
    }

    /// Register a tensor; random initializers draw from a stream keyed by
    /// `(seed, name)` so initial values do not depend on registration order.
    pub fn add(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> Result<ParamId> {
        if self.tensors.iter().any(|t| t.name == name) {
            return Err(Error::config(format!("duplicate parameter '{name}'")));
        }
        let n = rows * cols;
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Constant(c) => vec![c; n],
            Init::Glorot => {
                let limit = (6.0 / (rows + cols).max(1) as f64).sqrt();
                let mut r = rng::keyed(self.seed, name, 0);
                (0..n).map(|_| r.random_range(-limit..limit)).collect()
            }
            Init::Normal(sd) => {
                let mut r = rng::keyed(self.seed, name, 0);
                (0..n).map(|_| sd * r.sample::<f64, _>(StandardNormal)).collect()
            }
            Init::Values(v) => {
                if v.len() != n {
                    return Err(Error::dim(format!("initial values for '{name}'"), n, v.len()));
                }
                v
            }
        };
        self.tensors.push(Tensor {
            name: name.to_string(),
            rows,
            cols,
            data,
        });
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::dim("flattened parameters", self.num_scalars(), flat.len()));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Same names and shapes.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.rows == b.rows && a.cols == b.cols)
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub data: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(p: &ParamStore) -> Self {
        Grads {
            data: p.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .flat_map(|v| v.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.data {
            for x in v.iter_mut() {
                *x *= c;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Rescale so the global norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm {
            self.scale(max_norm / n);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.data.iter().flat_map(|v| v.iter().copied()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_keyed_by_name_not_order() {
        let mut a = ParamStore::new(5);
        a.add("w1", 3, 2, Init::Glorot).unwrap();
        a.add("w2", 2, 2, Init::Glorot).unwrap();
        let mut b = ParamStore::new(5);
        b.add("w2", 2, 2, Init::Glorot).unwrap();
        b.add("w1", 3, 2, Init::Glorot).unwrap();
        assert_eq!(a.get(ParamId(0)).data, b.get(ParamId(1)).data);
        assert!(a.add("w1", 1, 1, Init::Zeros).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let mut a = ParamStore::new(1);
        a.add("x", 2, 3, Init::Normal(1.0)).unwrap();
        a.add("y", 4, 1, Init::Zeros).unwrap();
        let flat = a.flatten();
        let mut b = a.clone();
        b.set_flat(&vec![0.0; flat.len()]).unwrap();
        b.set_flat(&flat).unwrap();
        assert_eq!(a, b);
        assert!(b.set_flat(&[1.0]).is_err());
    }

    #[test]
    fn clip_to_unit_norm() {
        let mut p = ParamStore::new(0);
        p.add("g", 2, 1, Init::Zeros).unwrap();
        let mut g = Grads::zeros_like(&p);
        g.data[0] = vec![6.0, 8.0];
        g.clip_norm(1.0);
        assert!((g.norm() - 1.0).abs() < 1e-12);
    }
}

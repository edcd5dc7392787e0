use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::tape::{Grads, Mat, Tape, Var};
use crate::error::{Error, Result};

/// Named parameter arrays, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct ParamSet {
    arrays: BTreeMap<String, Mat>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) {
        self.arrays.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.arrays.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.arrays.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.arrays.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Mat)> {
        self.arrays.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.arrays.keys()
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.arrays.values().map(|a| a.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self { arrays: self.arrays.iter().map(|(k, v)| (k.clone(), Mat::zeros(v.dim()))).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.arrays.values().all(|a| a.iter().all(|v| v.is_finite()))
    }

    /// Same names and shapes.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.arrays.len() == other.arrays.len()
            && self
                .arrays
                .iter()
                .zip(&other.arrays)
                .all(|((ka, va), (kb, vb))| ka == kb && va.dim() == vb.dim())
    }

    /// SHA-256 over names, shapes and the exact bit patterns of every value.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.arrays {
            h.update(k.as_bytes());
            h.update((v.nrows() as u64).to_le_bytes());
            h.update((v.ncols() as u64).to_le_bytes());
            for x in v.iter() {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }

    /// Registers every array as a tape leaf.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        Bound {
            vars: self
                .arrays
                .iter()
                .map(|(k, v)| {
                    let var = if trainable { tape.param(v.clone()) } else { tape.constant(v.clone()) };
                    (k.clone(), var)
                })
                .collect(),
        }
    }

    /// Flat view of one coordinate, for finite differences.
    pub fn coordinate_mut(&mut self, name: &str, index: usize) -> Option<&mut f64> {
        self.arrays.get_mut(name).and_then(|a| a.iter_mut().nth(index))
    }
}

/// Tape handles for a bound [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name:?}")))
    }

    /// The handles whose names start with `prefix`, renamed without it.
    pub fn with_prefix(&self, prefix: &str) -> Bound {
        Bound {
            vars: self
                .vars
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), *v)))
                .collect(),
        }
    }

    /// Collects gradients for every bound array (zeros where none flowed).
    pub fn grads(&self, grads: &Grads, params: &ParamSet) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, var) in &self.vars {
            let like = params.get(name).expect("bound from these params");
            out.insert(name.clone(), grads.get_or_zeros(*var, like));
        }
        out
    }
}

/// Glorot-uniform matrix with the given fans.
pub(crate) fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Mat {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..=limit))
}

/// `gates` stacked orthogonal `h x h` blocks (modified Gram-Schmidt on a Gaussian draw).
pub(crate) fn orthogonal_blocks(rng: &mut ChaCha8Rng, gates: usize, h: usize) -> Mat {
    let mut out = Mat::zeros((gates * h, h));
    for g in 0..gates {
        let mut q = Mat::from_shape_fn((h, h), |_| rng.sample::<f64, _>(StandardNormal));
        for i in 0..h {
            for j in 0..i {
                let dot: f64 = (0..h).map(|k| q[[i, k]] * q[[j, k]]).sum();
                for k in 0..h {
                    q[[i, k]] -= dot * q[[j, k]];
                }
            }
            let norm = (0..h).map(|k| q[[i, k]].powi(2)).sum::<f64>().sqrt();
            for k in 0..h {
                q[[i, k]] /= norm;
            }
        }
        out.slice_mut(ndarray::s![g * h..(g + 1) * h, ..]).assign(&q);
    }
    out
}

pub(crate) fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

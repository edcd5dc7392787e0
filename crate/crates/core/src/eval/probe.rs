use std::collections::BTreeMap;

use ndarray::{Array1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Mat;

pub const PROBE_HIDDEN: usize = 32;
pub const PROBE_STEPS: usize = 500;
pub const PROBE_LEARNING_RATE: f64 = 1e-2;
pub const MIN_PER_CLASS: usize = 20;

/// One labelled feature vector.
pub type Sample = (Vec<f64>, String);

/// A one-hidden-layer ReLU classifier over standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeClassifier {
    classes: Vec<String>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    w1: Mat,
    b1: Vec<f64>,
    w2: Mat,
    b2: Vec<f64>,
    seed: u64,
    held_out_accuracy: f64,
}

struct Adam {
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [&mut Mat], grads: &[Mat], lr: f64) {
        self.t += 1;
        let (b1, b2) = (0.9f64, 0.999f64);
        let (c1, c2) = (1.0 - b1.powi(self.t), 1.0 - b2.powi(self.t));
        for (k, p) in params.iter_mut().enumerate() {
            ndarray::Zip::from(&mut **p).and(&mut self.m[k]).and(&mut self.v[k]).and(&grads[k]).for_each(
                |p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
                },
            );
        }
    }
}

/// Stratified split: a seeded 20% of every class is held out.
fn split(labels: &[usize], classes: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n_test = ((idx.len() as f64) * 0.2).round().max(1.0) as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Trains a speaker probe with a stratified 80/20 split and reports its
/// held-out accuracy.
pub fn train_speaker_probe(samples: &[Sample], seed: u64) -> Result<ProbeClassifier> {
    let classes: Vec<String> = samples
        .iter()
        .map(|(_, l)| l.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.len() < 2 {
        return Err(Error::InvalidArgument("a probe needs at least 2 classes".into()));
    }
    let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let labels: Vec<usize> = samples.iter().map(|(_, l)| index[l.as_str()]).collect();
    for (c, name) in classes.iter().enumerate() {
        let n = labels.iter().filter(|&&l| l == c).count();
        if n < MIN_PER_CLASS {
            return Err(Error::InvalidArgument(format!(
                "class {name:?} has {n} samples (need {MIN_PER_CLASS})"
            )));
        }
    }
    let dim = samples[0].0.len();
    if dim == 0 || samples.iter().any(|(f, _)| f.len() != dim) {
        return Err(Error::Shape("probe features must share one non-zero length".into()));
    }
    if samples.iter().any(|(f, _)| f.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("probe features".into()));
    }
    let (train, test) = split(&labels, classes.len(), seed);

    let x_all = Mat::from_shape_fn((samples.len(), dim), |(i, j)| samples[i].0[j]);
    let x_train = x_all.select(Axis(0), &train);
    let mean = x_train.mean_axis(Axis(0)).expect("non-empty training split");
    let std = x_train.std_axis(Axis(0), 0.0);
    let scale: Array1<f64> = std.mapv(|s| if s > 1e-12 { 1.0 / s } else { 1.0 });

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed0f9be);
    let c = classes.len();
    let mut glorot = |rows: usize, cols: usize| {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Mat::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..=limit))
    };
    let mut probe = ProbeClassifier {
        w1: glorot(PROBE_HIDDEN, dim),
        b1: vec![0.0; PROBE_HIDDEN],
        w2: glorot(c, PROBE_HIDDEN),
        b2: vec![0.0; c],
        classes,
        mean: mean.to_vec(),
        scale: scale.to_vec(),
        seed,
        held_out_accuracy: 0.0,
    };
    let xs = probe.standardize(&x_train);
    let y: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    probe.fit(&xs, &y);
    let held_out: Vec<Sample> = test.iter().map(|&i| samples[i].clone()).collect();
    probe.held_out_accuracy = probe.accuracy(&held_out)?;
    Ok(probe)
}

impl ProbeClassifier {
    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn held_out_accuracy(&self) -> f64 {
        self.held_out_accuracy
    }

    pub fn chance_level(&self) -> f64 {
        1.0 / self.classes.len() as f64
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Rows are samples.
    fn standardize(&self, x: &Mat) -> Mat {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) * self.scale[j];
            }
        }
        out
    }

    /// Hidden activations and logits, samples in rows.
    fn forward(&self, xs: &Mat) -> (Mat, Mat) {
        let mut h = xs.dot(&self.w1.t());
        for mut row in h.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v + self.b1[j]).max(0.0);
            }
        }
        let mut logits = h.dot(&self.w2.t());
        for mut row in logits.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += self.b2[j];
            }
        }
        (h, logits)
    }

    fn fit(&mut self, xs: &Mat, y: &[usize]) {
        let n = xs.nrows() as f64;
        let mut b1 = Mat::from_shape_vec((1, self.b1.len()), self.b1.clone()).expect("row");
        let mut b2 = Mat::from_shape_vec((1, self.b2.len()), self.b2.clone()).expect("row");
        let mut opt = Adam {
            m: vec![
                Mat::zeros(self.w1.dim()),
                Mat::zeros(b1.dim()),
                Mat::zeros(self.w2.dim()),
                Mat::zeros(b2.dim()),
            ],
            v: vec![
                Mat::zeros(self.w1.dim()),
                Mat::zeros(b1.dim()),
                Mat::zeros(self.w2.dim()),
                Mat::zeros(b2.dim()),
            ],
            t: 0,
        };
        for _ in 0..PROBE_STEPS {
            self.b1 = b1.row(0).to_vec();
            self.b2 = b2.row(0).to_vec();
            let (h, logits) = self.forward(xs);
            // softmax cross-entropy gradient: (p - onehot) / n
            let mut d_logits = logits;
            for (i, mut row) in d_logits.rows_mut().into_iter().enumerate() {
                let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                row.mapv_inplace(|v| (v - m).exp());
                let s = row.sum();
                row.mapv_inplace(|v| v / s);
                row[y[i]] -= 1.0;
                row.mapv_inplace(|v| v / n);
            }
            let g_w2 = d_logits.t().dot(&h);
            let g_b2 = d_logits.sum_axis(Axis(0)).insert_axis(Axis(0));
            let mut d_h = d_logits.dot(&self.w2);
            ndarray::Zip::from(&mut d_h).and(&h).for_each(|d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
            let g_w1 = d_h.t().dot(xs);
            let g_b1 = d_h.sum_axis(Axis(0)).insert_axis(Axis(0));
            opt.step(
                &mut [&mut self.w1, &mut b1, &mut self.w2, &mut b2],
                &[g_w1, g_b1, g_w2, g_b2],
                PROBE_LEARNING_RATE,
            );
        }
        self.b1 = b1.row(0).to_vec();
        self.b2 = b2.row(0).to_vec();
    }

    /// Predicted class of one feature vector.
    pub fn predict(&self, features: &[f64]) -> Result<&str> {
        if features.len() != self.mean.len() {
            return Err(Error::Shape(format!(
                "probe expects {} features, got {}",
                self.mean.len(),
                features.len()
            )));
        }
        let x = Mat::from_shape_vec((1, features.len()), features.to_vec()).expect("row");
        let (_, logits) = self.forward(&self.standardize(&x));
        let best = (0..logits.ncols())
            .max_by(|&a, &b| logits[[0, a]].total_cmp(&logits[[0, b]]))
            .expect("at least two classes");
        Ok(&self.classes[best])
    }

    /// Fraction of samples whose label is predicted.
    pub fn accuracy(&self, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("no samples to score".into()));
        }
        let mut hits = 0;
        for (f, l) in samples {
            if self.predict(f)? == l {
                hits += 1;
            }
        }
        Ok(hits as f64 / samples.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn onehot(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let c = i % 3;
                let mut f = vec![0.0; 3];
                f[c] = 1.0;
                (f, format!("s{c}"))
            })
            .collect()
    }

    #[test]
    fn perfectly_informative_features() {
        let p = train_speaker_probe(&onehot(90), 1).unwrap();
        assert_eq!(p.held_out_accuracy(), 1.0);
        assert_eq!(p.predict(&[0.0, 1.0, 0.0]).unwrap(), "s1");
    }

    #[test]
    fn noise_is_near_chance() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let samples: Vec<Sample> = (0..200)
                .map(|i| {
                    let f = (0..8).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    (f, format!("s{}", i % 2))
                })
                .collect();
            let p = train_speaker_probe(&samples, seed).unwrap();
            assert!((p.held_out_accuracy() - 0.5).abs() <= 0.15, "{}", p.held_out_accuracy());
        }
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let (train, test) = split(&labels, 2, 3);
        assert_eq!(test.len(), 20);
        assert_eq!(train.len(), 80);
        assert_eq!(test.iter().filter(|&&i| labels[i] == 0).count(), 10);
    }

    #[test]
    fn deterministic_and_validated() {
        let a = train_speaker_probe(&onehot(90), 4).unwrap();
        let b = train_speaker_probe(&onehot(90), 4).unwrap();
        assert_eq!(a, b);
        assert!(train_speaker_probe(&onehot(30), 0).is_err());
        let one_class: Vec<Sample> = (0..40).map(|_| (vec![1.0], "x".into())).collect();
        assert!(train_speaker_probe(&one_class, 0).is_err());
    }
}

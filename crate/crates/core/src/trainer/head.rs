//! Minimal pixelwise segmentation head: per-channel affine combination,
//! a trainable 3x3 smoothing convolution (replicated borders) and a logistic
//! output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::kv::KvDoc;
use crate::params::sigmoid;

const CHECKPOINT_HEADER: &str = "mono2d segmentation head";

#[derive(Clone, Debug, PartialEq)]
pub struct HeadModel {
    weights: Vec<f64>,
    bias: f64,
    kernel: [f64; 9],
}

/// Activations kept for the backward pass.
pub struct HeadTrace {
    combined: Field,
    pub logits: Field,
    pub probs: Field,
}

impl HeadModel {
    pub fn new(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, 0.1).expect("valid normal");
        Self {
            weights: (0..channels).map(|_| dist.sample(&mut rng)).collect(),
            bias: 0.0,
            kernel: [1.0 / 9.0; 9],
        }
    }

    pub fn channels(&self) -> usize {
        self.weights.len()
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + 10
    }

    /// `weights..., bias, kernel[0..9]`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.push(self.bias);
        p.extend_from_slice(&self.kernel);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::InvalidShape(format!(
                "head expects {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        let c = self.weights.len();
        self.weights.copy_from_slice(&params[..c]);
        self.bias = params[c];
        self.kernel.copy_from_slice(&params[c + 1..]);
        Ok(())
    }

    pub fn forward(&self, features: &[Field]) -> Result<HeadTrace> {
        if features.len() != self.weights.len() {
            return Err(Error::InvalidShape(format!(
                "head built for {} channels, got {}",
                self.weights.len(),
                features.len()
            )));
        }
        let (h, w) = features[0].shape();
        if features.iter().any(|f| f.shape() != (h, w)) {
            return Err(Error::InvalidShape(
                "feature channels differ in shape".into(),
            ));
        }
        let mut combined = Field::constant(h, w, self.bias);
        for (f, &wt) in features.iter().zip(&self.weights) {
            for (a, &x) in combined.as_mut_slice().iter_mut().zip(f.as_slice()) {
                *a += wt * x;
            }
        }
        let logits = Field::from_fn(h, w, |r, c| {
            let mut acc = 0.0;
            for (k, &kv) in self.kernel.iter().enumerate() {
                let (rr, cc) = neighbour(r, c, k, h, w);
                acc += kv * combined.get(rr, cc);
            }
            acc
        });
        let probs = logits.map(sigmoid);
        Ok(HeadTrace {
            combined,
            logits,
            probs,
        })
    }

    pub fn predict(&self, features: &[Field]) -> Result<Field> {
        Ok(self.forward(features)?.probs)
    }

    /// Given `dL/dlogits`, returns `(dL/dparams, dL/dfeatures)`.
    pub fn backward(
        &self,
        features: &[Field],
        trace: &HeadTrace,
        d_logits: &Field,
    ) -> (Vec<f64>, Vec<Field>) {
        let (h, w) = d_logits.shape();
        let mut d_combined = Field::zeros(h, w);
        let mut d_kernel = [0.0; 9];
        for r in 0..h {
            for c in 0..w {
                let g = d_logits.get(r, c);
                if g == 0.0 {
                    continue;
                }
                for (k, dk) in d_kernel.iter_mut().enumerate() {
                    let (rr, cc) = neighbour(r, c, k, h, w);
                    *dk += g * trace.combined.get(rr, cc);
                    let i = rr * w + cc;
                    d_combined.as_mut_slice()[i] += g * self.kernel[k];
                }
            }
        }
        let mut grads = Vec::with_capacity(self.n_params());
        for f in features {
            grads.push(
                f.as_slice()
                    .iter()
                    .zip(d_combined.as_slice())
                    .map(|(x, g)| x * g)
                    .sum(),
            );
        }
        grads.push(d_combined.as_slice().iter().sum());
        grads.extend_from_slice(&d_kernel);
        let d_features = self
            .weights
            .iter()
            .map(|&wt| d_combined.map(|g| g * wt))
            .collect();
        (grads, d_features)
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.insert("channels", self.weights.len());
        for (i, &w) in self.weights.iter().enumerate() {
            doc.insert_f64(format!("weight.{i}"), w);
        }
        doc.insert_f64("bias", self.bias);
        for (i, &k) in self.kernel.iter().enumerate() {
            doc.insert_f64(format!("kernel.{i}"), k);
        }
        doc
    }

    pub fn to_checkpoint(&self) -> String {
        self.to_kv().render(CHECKPOINT_HEADER)
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let corrupt = |e: Error| Error::CorruptCheckpoint(e.to_string());
        let doc = KvDoc::parse(text).map_err(corrupt)?;
        let channels: usize = doc.require("channels").map_err(corrupt)?;
        let weights = (0..channels)
            .map(|i| doc.require(&format!("weight.{i}")))
            .collect::<Result<Vec<f64>>>()
            .map_err(corrupt)?;
        let bias = doc.require("bias").map_err(corrupt)?;
        let mut kernel = [0.0; 9];
        for (i, k) in kernel.iter_mut().enumerate() {
            *k = doc.require(&format!("kernel.{i}")).map_err(corrupt)?;
        }
        if doc.keys().count() != channels + 11 {
            return Err(Error::CorruptCheckpoint(
                "unexpected keys in head checkpoint".into(),
            ));
        }
        Ok(Self {
            weights,
            bias,
            kernel,
        })
    }
}

#[inline]
fn neighbour(r: usize, c: usize, k: usize, h: usize, w: usize) -> (usize, usize) {
    let dr = k / 3;
    let dc = k % 3;
    let rr = (r + dr).saturating_sub(1).min(h - 1);
    let cc = (c + dc).saturating_sub(1).min(w - 1);
    (rr, cc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats() -> Vec<Field> {
        vec![
            Field::from_fn(5, 6, |r, c| ((r * 6 + c) % 7) as f64 / 7.0),
            Field::from_fn(5, 6, |r, c| ((r + 2 * c) % 5) as f64 / 5.0),
        ]
    }

    #[test]
    fn probabilities_in_open_unit_interval() {
        let head = HeadModel::new(2, 1);
        let p = head.predict(&feats()).unwrap();
        assert!(p.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(head.predict(&feats()[..1]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut head = HeadModel::new(2, 3);
        let mut p = head.params();
        p[2] = 0.3;
        p[5] = 0.4;
        head.set_params(&p).unwrap();
        let f = feats();
        let target = Field::from_fn(5, 6, |r, c| ((r * c) % 3) as f64 - 1.0);
        let loss = |head: &HeadModel, f: &[Field]| -> f64 {
            let t = head.forward(f).unwrap();
            t.logits
                .as_slice()
                .iter()
                .zip(target.as_slice())
                .map(|(a, b)| a * b)
                .sum()
        };
        let trace = head.forward(&f).unwrap();
        let (g, gf) = head.backward(&f, &trace, &target);
        let h = 1e-6;
        for i in 0..head.n_params() {
            let mut plus = head.clone();
            let mut q = p.clone();
            q[i] += h;
            plus.set_params(&q).unwrap();
            let mut minus = head.clone();
            q[i] -= 2.0 * h;
            minus.set_params(&q).unwrap();
            let fd = (loss(&plus, &f) - loss(&minus, &f)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "param {i}: {fd} vs {}", g[i]);
        }
        for ch in 0..2 {
            for k in [0, 7, 29] {
                let mut fp = f.clone();
                fp[ch].as_mut_slice()[k] += h;
                let mut fm = f.clone();
                fm[ch].as_mut_slice()[k] -= h;
                let fd = (loss(&head, &fp) - loss(&head, &fm)) / (2.0 * h);
                assert!((fd - gf[ch].as_slice()[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let head = HeadModel::new(3, 9);
        let back = HeadModel::from_checkpoint(&head.to_checkpoint()).unwrap();
        assert_eq!(back, head);
        assert!(HeadModel::from_checkpoint("channels = 2\n").is_err());
    }
}

//! Bounded reparameterisation of the trainable log-Gabor parameters.
//!
//! The optimiser only ever sees the unbounded values `f0*` and `sigma_r*`.
//! Centre frequencies and bandwidths are derived on demand:
//!
//! ```text
//! f0      = f0_min + sigmoid(f0*) * (f0_max - f0_min)
//! sigma_r = sigmoid(sigma_r*)
//! ```
//!
//! with `f0_min = 1/max(H, W)` and `f0_max = 0.5` cycles/pixel. Derived
//! values are clamped to the nearest representable number inside the open
//! interval, so the bounds hold strictly even where the sigmoid saturates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::filters::LogGaborSpec;
use crate::kv::KvDoc;

/// Nyquist limit in cycles/pixel.
pub const F0_MAX: f64 = 0.5;
/// Standard deviation of the `sigma_r*` initialisation.
pub const SIGMA_STAR_INIT_STD: f64 = 0.05;

const CHECKPOINT_HEADER: &str = "mono2d filter bank";

/// Logistic function, evaluated on the branch that cannot overflow.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid(x) * (1 - sigmoid(x))` without cancellation.
#[inline]
pub fn sigmoid_slope(x: f64) -> f64 {
    sigmoid(x) * sigmoid(-x)
}

#[inline]
fn open_clamp(value: f64, lo: f64, hi: f64) -> f64 {
    value.clamp(lo.next_up(), hi.next_down())
}

pub fn bound_f0(f0_star: f64, f0_min: f64, f0_max: f64) -> f64 {
    let span = f0_max - f0_min;
    // interpolate from the nearer end so the small sigmoid tail keeps its precision
    let raw = if f0_star >= 0.0 {
        f0_max - sigmoid(-f0_star) * span
    } else {
        f0_min + sigmoid(f0_star) * span
    };
    open_clamp(raw, f0_min, f0_max)
}

pub fn bound_sigma_r(sigma_r_star: f64) -> f64 {
    open_clamp(sigmoid(sigma_r_star), 0.0, 1.0)
}

/// Chain factors `(df0/df0*, dsigma_r/dsigma_r*)`.
pub fn bound_gradients(f0_star: f64, sigma_r_star: f64, f0_min: f64, f0_max: f64) -> (f64, f64) {
    (
        sigmoid_slope(f0_star) * (f0_max - f0_min),
        sigmoid_slope(sigma_r_star),
    )
}

/// Unbounded parameters for `n` log-Gabor scales plus the frequency bounds
/// fixed at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    f0_star: Vec<f64>,
    sigma_r_star: Vec<f64>,
    f0_min: f64,
    f0_max: f64,
}

impl FilterBank {
    /// Bank for images of `height x width` with explicit unbounded values.
    pub fn from_unbounded(
        f0_star: Vec<f64>,
        sigma_r_star: Vec<f64>,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let longest = height.max(width);
        if longest < 3 {
            return Err(Error::InvalidConfig(format!(
                "image shape {height}x{width} leaves no admissible centre frequency"
            )));
        }
        Self::with_bounds(f0_star, sigma_r_star, 1.0 / longest as f64, F0_MAX)
    }

    pub fn with_bounds(
        f0_star: Vec<f64>,
        sigma_r_star: Vec<f64>,
        f0_min: f64,
        f0_max: f64,
    ) -> Result<Self> {
        if f0_star.is_empty() {
            return Err(Error::InvalidConfig(
                "filter bank needs at least one scale".into(),
            ));
        }
        if f0_star.len() != sigma_r_star.len() {
            return Err(Error::InvalidConfig(format!(
                "{} centre-frequency parameters but {} bandwidth parameters",
                f0_star.len(),
                sigma_r_star.len()
            )));
        }
        if !(f0_min > 0.0 && f0_min < f0_max && f0_max <= F0_MAX) {
            return Err(Error::InvalidConfig(format!(
                "invalid frequency bounds ({f0_min}, {f0_max})"
            )));
        }
        if f0_star.iter().chain(&sigma_r_star).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite bank parameter".into()));
        }
        Ok(Self {
            f0_star,
            sigma_r_star,
            f0_min,
            f0_max,
        })
    }

    pub fn n_scales(&self) -> usize {
        self.f0_star.len()
    }

    /// Number of trainable parameters, `2 * n_scales`.
    pub fn n_params(&self) -> usize {
        2 * self.n_scales()
    }

    pub fn f0_min(&self) -> f64 {
        self.f0_min
    }

    pub fn f0_max(&self) -> f64 {
        self.f0_max
    }

    pub fn f0_star(&self) -> &[f64] {
        &self.f0_star
    }

    pub fn sigma_r_star(&self) -> &[f64] {
        &self.sigma_r_star
    }

    pub fn f0(&self, scale: usize) -> f64 {
        bound_f0(self.f0_star[scale], self.f0_min, self.f0_max)
    }

    pub fn sigma_r(&self, scale: usize) -> f64 {
        bound_sigma_r(self.sigma_r_star[scale])
    }

    pub fn spec(&self, scale: usize) -> LogGaborSpec {
        LogGaborSpec::new(self.f0(scale), self.sigma_r(scale))
            .expect("bounded parameters are always admissible")
    }

    pub fn specs(&self) -> Vec<LogGaborSpec> {
        (0..self.n_scales()).map(|i| self.spec(i)).collect()
    }

    /// Chain factors for one scale.
    pub fn chain_factors(&self, scale: usize) -> (f64, f64) {
        bound_gradients(
            self.f0_star[scale],
            self.sigma_r_star[scale],
            self.f0_min,
            self.f0_max,
        )
    }

    /// Flat parameter vector: `f0*[0..n]` then `sigma_r*[0..n]`.
    pub fn params(&self) -> Vec<f64> {
        self.f0_star
            .iter()
            .chain(&self.sigma_r_star)
            .copied()
            .collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let n = self.n_scales();
        if params.len() != 2 * n {
            return Err(Error::InvalidShape(format!(
                "expected {} bank parameters, got {}",
                2 * n,
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite bank parameter".into()));
        }
        self.f0_star.copy_from_slice(&params[..n]);
        self.sigma_r_star.copy_from_slice(&params[n..]);
        Ok(())
    }

    /// Copy with parameter `index` (flat ordering) shifted by `delta`.
    pub fn perturbed(&self, index: usize, delta: f64) -> FilterBank {
        let mut out = self.clone();
        let n = self.n_scales();
        if index < n {
            out.f0_star[index] += delta;
        } else {
            out.sigma_r_star[index - n] += delta;
        }
        out
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.insert("n_scales", self.n_scales());
        doc.insert_f64("f0_min", self.f0_min);
        doc.insert_f64("f0_max", self.f0_max);
        for i in 0..self.n_scales() {
            doc.insert_f64(format!("f0_star.{i}"), self.f0_star[i]);
            doc.insert_f64(format!("sigma_r_star.{i}"), self.sigma_r_star[i]);
        }
        doc
    }

    pub fn to_checkpoint(&self) -> String {
        self.to_kv().render(CHECKPOINT_HEADER)
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let corrupt = |e: Error| Error::CorruptCheckpoint(e.to_string());
        let n: usize = doc.require("n_scales").map_err(corrupt)?;
        let f0_min: f64 = doc.require("f0_min").map_err(corrupt)?;
        let f0_max: f64 = doc.require("f0_max").map_err(corrupt)?;
        let mut f0_star = Vec::with_capacity(n);
        let mut sigma_r_star = Vec::with_capacity(n);
        for i in 0..n {
            f0_star.push(doc.require(&format!("f0_star.{i}")).map_err(corrupt)?);
            sigma_r_star.push(doc.require(&format!("sigma_r_star.{i}")).map_err(corrupt)?);
        }
        let expected = 3 + 2 * n;
        if doc.keys().count() != expected {
            return Err(Error::CorruptCheckpoint(format!(
                "expected {expected} keys for {n} scales"
            )));
        }
        Self::with_bounds(f0_star, sigma_r_star, f0_min, f0_max).map_err(corrupt)
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let doc = KvDoc::parse(text).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        Self::from_kv(&doc)
    }
}

/// Random bank: `f0* ~ N(0, 1)`, `sigma_r* ~ N(0, 0.05)`, deterministic in `seed`.
pub fn init_bank(n_scales: usize, height: usize, width: usize, seed: u64) -> Result<FilterBank> {
    if n_scales == 0 {
        return Err(Error::InvalidConfig("n_scales must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0_dist = Normal::new(0.0, 1.0).expect("valid normal");
    let sigma_dist = Normal::new(0.0, SIGMA_STAR_INIT_STD).expect("valid normal");
    let f0_star = (0..n_scales).map(|_| f0_dist.sample(&mut rng)).collect();
    let sigma_r_star = (0..n_scales).map(|_| sigma_dist.sample(&mut rng)).collect();
    FilterBank::from_unbounded(f0_star, sigma_r_star, height, width)
}

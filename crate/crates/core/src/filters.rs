//! Frequency-domain kernels: Butterworth low-pass, log-Gabor band-pass (with
//! parameter derivatives) and the combined Riesz kernel `(i*fx - fy)/|f|`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::FrequencyGrid;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LowPassSpec {
    cutoff: f64,
    order: u32,
}

impl LowPassSpec {
    pub fn new(cutoff: f64, order: u32) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff <= 0.5) {
            return Err(Error::InvalidConfig(format!(
                "low-pass cutoff must be in (0, 0.5], got {cutoff}"
            )));
        }
        if order == 0 {
            return Err(Error::InvalidConfig("low-pass order must be >= 1".into()));
        }
        Ok(Self { cutoff, order })
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    #[inline]
    pub fn gain(&self, f: f64) -> f64 {
        let ratio = f / self.cutoff;
        1.0 / (1.0 + ratio.powi(2 * self.order as i32))
    }
}

impl Default for LowPassSpec {
    /// Cutoff at Nyquist (0.5 cycles/pixel), order 10.
    fn default() -> Self {
        Self {
            cutoff: 0.5,
            order: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogGaborSpec {
    f0: f64,
    sigma_r: f64,
}

impl LogGaborSpec {
    pub fn new(f0: f64, sigma_r: f64) -> Result<Self> {
        if !(f0 > 0.0 && f0.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "log-Gabor centre frequency must be positive, got {f0}"
            )));
        }
        if !(sigma_r > 0.0 && sigma_r < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "log-Gabor relative bandwidth must be in (0, 1), got {sigma_r}"
            )));
        }
        Ok(Self { f0, sigma_r })
    }

    pub fn f0(&self) -> f64 {
        self.f0
    }

    pub fn sigma_r(&self) -> f64 {
        self.sigma_r
    }

    /// `exp(-ln(f/f0)^2 / (2 ln(sigma_r)^2))`, zero at DC.
    #[inline]
    pub fn gain(&self, f: f64) -> f64 {
        if f <= 0.0 {
            return 0.0;
        }
        let log_ratio = (f / self.f0).ln();
        let log_sigma = self.sigma_r.ln();
        (-(log_ratio * log_ratio) / (2.0 * log_sigma * log_sigma)).exp()
    }

    /// `(gain, dgain/df0, dgain/dsigma_r)`, all zero at DC.
    #[inline]
    pub fn gain_with_partials(&self, f: f64) -> (f64, f64, f64) {
        if f <= 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let log_ratio = (f / self.f0).ln();
        let log_sigma = self.sigma_r.ln();
        let s2 = log_sigma * log_sigma;
        let g = (-(log_ratio * log_ratio) / (2.0 * s2)).exp();
        let d_f0 = g * log_ratio / (self.f0 * s2);
        let d_sigma = g * log_ratio * log_ratio / (self.sigma_r * s2 * log_sigma);
        (g, d_f0, d_sigma)
    }
}

/// Real gain per frequency bin.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelField {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl KernelField {
    fn from_grid(grid: &FrequencyGrid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: grid.height(),
            width: grid.width(),
            values: grid.radius().iter().map(|&r| f(r)).collect(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Pointwise product; both kernels must share a grid.
    pub fn product(&self, other: &KernelField) -> KernelField {
        assert_eq!(self.shape(), other.shape(), "kernel shape mismatch");
        KernelField {
            height: self.height,
            width: self.width,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }
}

/// Combined Riesz kernel, complex gain per bin.
#[derive(Clone, Debug, PartialEq)]
pub struct RieszKernel {
    height: usize,
    width: usize,
    values: Vec<Complex64>,
}

impl RieszKernel {
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.values[row * self.width + col]
    }
}

#[inline]
pub fn riesz_value(fx: f64, fy: f64) -> Complex64 {
    let r = (fx * fx + fy * fy).sqrt();
    if r == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        Complex64::new(-fy / r, fx / r)
    }
}

pub fn butterworth(grid: &FrequencyGrid, spec: LowPassSpec) -> KernelField {
    KernelField::from_grid(grid, |f| spec.gain(f))
}

pub fn log_gabor(grid: &FrequencyGrid, spec: LogGaborSpec) -> KernelField {
    KernelField::from_grid(grid, |f| spec.gain(f))
}

/// `(dG/df0, dG/dsigma_r)` over the grid.
pub fn log_gabor_derivatives(
    grid: &FrequencyGrid,
    spec: LogGaborSpec,
) -> (KernelField, KernelField) {
    let d_f0 = KernelField::from_grid(grid, |f| spec.gain_with_partials(f).1);
    let d_sigma = KernelField::from_grid(grid, |f| spec.gain_with_partials(f).2);
    (d_f0, d_sigma)
}

pub fn riesz(grid: &FrequencyGrid) -> RieszKernel {
    RieszKernel {
        height: grid.height(),
        width: grid.width(),
        values: grid
            .fx()
            .iter()
            .zip(grid.fy())
            .map(|(&fx, &fy)| riesz_value(fx, fy))
            .collect(),
    }
}

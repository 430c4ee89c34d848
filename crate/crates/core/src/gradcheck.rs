//! Analytic-vs-finite-difference gradient checks for the layer parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{channel_mean, fd_oracle_with, grad_of_scalar, param_name};
use crate::error::Result;
use crate::field::Field;
use crate::filters::LowPassSpec;
use crate::monogenic::{ChannelMode, Mono2d};
use crate::params::init_bank;

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
pub const ABS_TOLERANCE: f64 = 1e-8;

/// Finite-difference stencil used as the oracle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Stencil {
    /// `(L(+h) - L(-h)) / 2h`, truncation error O(h^2).
    Central,
    /// `(-L(+2h) + 8L(+h) - 8L(-h) + L(-2h)) / 12h`, truncation error O(h^4).
    /// Near-extremal phase pixels give the rescaled loss enough curvature
    /// that the O(h^2) term alone can exceed the tolerance at h = 1e-4.
    #[default]
    FourthOrder,
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub n_scales: usize,
    pub step: f64,
    pub stencil: Stencil,
    /// Relative error injected into the analytic gradient (harness self-test).
    pub perturb_analytic: f64,
}

impl GradCheckConfig {
    pub fn new(seed: u64, height: usize, width: usize, n_scales: usize) -> Self {
        Self {
            seed,
            height,
            width,
            n_scales,
            step: FD_STEP,
            stencil: Stencil::default(),
            perturb_analytic: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
    /// Whether `error` is relative (`true`) or absolute.
    pub relative: bool,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub config: GradCheckConfig,
    pub checks: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Largest relative error among parameters whose names start with `prefix`.
    pub fn max_rel_error(&self, prefix: &str) -> f64 {
        self.checks
            .iter()
            .filter(|c| c.relative && c.name.starts_with(prefix))
            .map(|c| c.error)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

pub fn compare(analytic: f64, numeric: f64) -> (f64, bool, bool) {
    let scale = analytic.abs().max(numeric.abs());
    if scale > ABS_TOLERANCE {
        let rel = (analytic - numeric).abs() / scale;
        (rel, true, rel <= REL_TOLERANCE)
    } else {
        let abs = (analytic - numeric).abs();
        (abs, false, abs <= ABS_TOLERANCE)
    }
}

/// Random test image: smooth blobs plus pixel noise, values in `[0, 1]`.
pub fn random_image(height: usize, width: usize, rng: &mut impl Rng) -> Field {
    let blobs: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.0..height as f64),
                rng.random_range(0.0..width as f64),
                rng.random_range(2.0..(height.min(width) as f64 / 3.0).max(2.5)),
                rng.random_range(-0.4..0.4),
            )
        })
        .collect();
    Field::from_fn(height, width, |r, c| {
        let mut v = 0.5;
        for &(br, bc, rad, amp) in &blobs {
            let d2 = (r as f64 - br).powi(2) + (c as f64 - bc).powi(2);
            v += amp * (-d2 / (2.0 * rad * rad)).exp();
        }
        (v + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0)
    })
}

/// Checks every parameter of a random bank with the mean-of-phase loss.
pub fn run(config: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let image = random_image(config.height, config.width, &mut rng);
    let bank = init_bank(config.n_scales, config.height, config.width, rng.random())?;
    let layer = Mono2d::new(bank, LowPassSpec::default(), ChannelMode::Phase);
    let (_, bundle) = layer.forward_with_tangents(&image)?;
    let pixels = (config.height * config.width) as f64;
    let upstream = Field::constant(config.height, config.width, 1.0 / pixels);
    let grad = grad_of_scalar(&bundle, &[upstream])?;
    let loss = |f: &crate::PhaseFeatures| channel_mean(f, "phase");

    let mut checks = Vec::with_capacity(grad.len());
    for (p, &g) in grad.iter().enumerate() {
        let analytic = g * (1.0 + config.perturb_analytic);
        let central = |h: f64| fd_oracle_with(&layer, &image, loss, p, h);
        let numeric = match config.stencil {
            Stencil::Central => central(config.step)?,
            // Richardson combination of the h and 2h central differences
            Stencil::FourthOrder => {
                (4.0 * central(config.step)? - central(2.0 * config.step)?) / 3.0
            }
        };
        let (error, relative, passed) = compare(analytic, numeric);
        checks.push(ParamCheck {
            name: param_name(config.n_scales, p),
            analytic,
            numeric,
            error,
            relative,
            passed,
        });
    }
    Ok(GradCheckReport {
        config: config.clone(),
        checks,
    })
}

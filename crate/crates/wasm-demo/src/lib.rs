//! Browser demo for the monogenic feature layer.
//!
//! Three interactive operations are exported to JavaScript:
//!
//! * [`extract`]: local phase and phase asymmetry of an image under a
//!   single log-Gabor scale chosen with sliders;
//! * [`radial_profile`]: the log-Gabor and Butterworth gains along the
//!   frequency axis, for plotting;
//! * [`compare_histograms`]: Wasserstein distances between a source image
//!   and its intensity-shifted copy, on raw pixels and on local phase.
//!
//! [`synthetic_image`] and [`to_rgba`] supply inputs and canvas pixels. Each
//! export is a thin wrapper over a plain Rust function so the logic can be
//! tested natively.

use mono2d::histogram::{compare_sets, Histogram};
use mono2d::trainer::{generate_dataset, DomainSpec};
use mono2d::{ChannelMode, Error, Field, FilterBank, LogGaborSpec, LowPassSpec, Mono2d, Result};
use wasm_bindgen::prelude::*;

fn js(err: Error) -> JsError {
    JsError::new(&err.to_string())
}

/// Inverse of the logistic function, for mapping slider values back to the
/// unbounded parameters.
fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Single-scale bank whose derived parameters are `f0` and `sigma_r`.
pub fn single_scale_bank(f0: f64, sigma_r: f64, height: usize, width: usize) -> Result<FilterBank> {
    let f0_min = 1.0 / height.max(width) as f64;
    let f0_max = 0.5;
    if !(f0 > f0_min && f0 < f0_max) {
        return Err(Error::InvalidConfig(format!(
            "f0 must lie in ({f0_min}, {f0_max}) for a {height}x{width} image, got {f0}"
        )));
    }
    if !(sigma_r > 0.0 && sigma_r < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "sigma_r must lie in (0, 1), got {sigma_r}"
        )));
    }
    let f0_star = logit((f0 - f0_min) / (f0_max - f0_min));
    FilterBank::from_unbounded(vec![f0_star], vec![logit(sigma_r)], height, width)
}

pub fn field_from(pixels: &[f64], height: usize, width: usize) -> Result<Field> {
    Field::from_vec(height, width, pixels.to_vec())
}

/// One synthetic band image with the given intensity shift applied.
pub fn synthetic(
    size: usize,
    contrast: f64,
    offset: f64,
    gamma: f64,
    noise: f64,
    seed: u64,
) -> Result<Field> {
    let domain = DomainSpec::identity("demo")
        .with_contrast(contrast, contrast)
        .with_offset(offset, offset)
        .with_gamma(gamma, gamma)
        .with_noise(noise, noise);
    let mut samples = generate_dataset(1, (size, size), &domain, seed)?;
    Ok(samples.swap_remove(0).image)
}

/// Phase then asymmetry, planar, each min-max rescaled to `[0, 1]`.
pub fn phase_and_asym(image: &Field, f0: f64, sigma_r: f64) -> Result<Vec<f64>> {
    let (h, w) = image.shape();
    let layer = Mono2d::new(
        single_scale_bank(f0, sigma_r, h, w)?,
        LowPassSpec::default(),
        ChannelMode::Both,
    );
    Ok(layer
        .forward(image)?
        .into_channels()
        .into_iter()
        .flat_map(Field::into_vec)
        .collect())
}

/// `samples` points on `[0, 0.5]`: frequency, log-Gabor gain, low-pass gain.
pub fn profile(f0: f64, sigma_r: f64, samples: usize) -> Result<Vec<f64>> {
    if samples < 2 {
        return Err(Error::InvalidConfig(
            "need at least two profile samples".into(),
        ));
    }
    let log_gabor = LogGaborSpec::new(f0, sigma_r)?;
    let lowpass = LowPassSpec::default();
    Ok((0..samples)
        .flat_map(|i| {
            let f = 0.5 * i as f64 / (samples - 1) as f64;
            [f, log_gabor.gain(f), lowpass.gain(f)]
        })
        .collect())
}

/// `[raw distance, phase distance]` followed by four `bins`-long histograms:
/// raw A, raw B, phase A, phase B.
pub fn histogram_report(
    a: &Field,
    b: &Field,
    f0: f64,
    sigma_r: f64,
    bins: usize,
) -> Result<Vec<f64>> {
    let (h, w) = a.shape();
    let layer = Mono2d::new(
        single_scale_bank(f0, sigma_r, h, w)?,
        LowPassSpec::default(),
        ChannelMode::Phase,
    );
    let phase =
        |x: &Field| -> Result<Field> { Ok(layer.forward(x)?.into_channels().swap_remove(0)) };
    let (pa, pb) = (phase(a)?, phase(b)?);
    let hist = |f: &Field| Histogram::from_fields(bins, [f]);
    let divergence = compare_sets(
        std::slice::from_ref(a),
        std::slice::from_ref(b),
        bins,
        phase,
    )?;
    let mut out = vec![divergence.raw, divergence.phase];
    for f in [a, b, &pa, &pb] {
        out.extend(hist(f).probabilities());
    }
    Ok(out)
}

/// Grey values in `[0, 1]` to opaque RGBA bytes.
pub fn grey_to_rgba(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .flat_map(|&v| {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect()
}

#[wasm_bindgen]
pub fn synthetic_image(
    size: usize,
    contrast: f64,
    offset: f64,
    gamma: f64,
    noise: f64,
    seed: u32,
) -> std::result::Result<Vec<f64>, JsError> {
    synthetic(size, contrast, offset, gamma, noise, u64::from(seed))
        .map(Field::into_vec)
        .map_err(js)
}

#[wasm_bindgen]
pub fn extract(
    pixels: &[f64],
    height: usize,
    width: usize,
    f0: f64,
    sigma_r: f64,
) -> std::result::Result<Vec<f64>, JsError> {
    field_from(pixels, height, width)
        .and_then(|image| phase_and_asym(&image, f0, sigma_r))
        .map_err(js)
}

#[wasm_bindgen]
pub fn radial_profile(
    f0: f64,
    sigma_r: f64,
    samples: usize,
) -> std::result::Result<Vec<f64>, JsError> {
    profile(f0, sigma_r, samples).map_err(js)
}

#[wasm_bindgen]
pub fn compare_histograms(
    source: &[f64],
    shifted: &[f64],
    height: usize,
    width: usize,
    f0: f64,
    sigma_r: f64,
    bins: usize,
) -> std::result::Result<Vec<f64>, JsError> {
    (|| {
        let a = field_from(source, height, width)?;
        let b = field_from(shifted, height, width)?;
        histogram_report(&a, &b, f0, sigma_r, bins)
    })()
    .map_err(js)
}

#[wasm_bindgen]
pub fn to_rgba(values: &[f64]) -> Vec<u8> {
    grey_to_rgba(values)
}

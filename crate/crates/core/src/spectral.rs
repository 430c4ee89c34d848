//! Frequency grids and the 2D discrete Fourier transform.
//!
//! Conventions: unnormalised forward transform, `1/(H*W)`-scaled inverse,
//! frequencies in cycles/pixel on the unshifted DFT index grid (Nyquist at
//! 0.5). Row index maps to `fy`, column index to `fx`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::field::Field;

/// Largest `H * W` accepted by [`direct_dft2`].
pub const DIRECT_DFT_MAX_PIXELS: usize = 4096;

/// Signed frequency of DFT index `k` along an axis of length `n`.
#[inline]
pub fn index_frequency(k: usize, n: usize) -> f64 {
    if 2 * k < n {
        k as f64 / n as f64
    } else {
        (k as f64 - n as f64) / n as f64
    }
}

/// Per-pixel normalised frequencies for an `height x width` spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyGrid {
    height: usize,
    width: usize,
    fx: Vec<f64>,
    fy: Vec<f64>,
    radius: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::InvalidShape(format!(
                "frequency grid needs at least 2x2, got {height}x{width}"
            )));
        }
        let n = height * width;
        let mut fx = Vec::with_capacity(n);
        let mut fy = Vec::with_capacity(n);
        let mut radius = Vec::with_capacity(n);
        for r in 0..height {
            let v = index_frequency(r, height);
            for c in 0..width {
                let u = index_frequency(c, width);
                fx.push(u);
                fy.push(v);
                radius.push((u * u + v * v).sqrt());
            }
        }
        Ok(Self {
            height,
            width,
            fx,
            fy,
            radius,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.radius.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radius.is_empty()
    }

    pub fn fx(&self) -> &[f64] {
        &self.fx
    }

    pub fn fy(&self) -> &[f64] {
        &self.fy
    }

    /// Radial frequency `sqrt(fx^2 + fy^2)`.
    pub fn radius(&self) -> &[f64] {
        &self.radius
    }

    pub fn at(&self, row: usize, col: usize) -> (f64, f64, f64) {
        let i = row * self.width + col;
        (self.fx[i], self.fy[i], self.radius[i])
    }
}

/// Shorthand for [`FrequencyGrid::new`].
pub fn make_grid(height: usize, width: usize) -> Result<FrequencyGrid> {
    FrequencyGrid::new(height, width)
}

/// Complex 2D field, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    height: usize,
    width: usize,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(height: usize, width: usize, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::InvalidShape(format!(
                "{} values for a {height}x{width} spectrum",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn from_real(field: &Field) -> Self {
        Self {
            height: field.height(),
            width: field.width(),
            values: field
                .as_slice()
                .iter()
                .map(|&v| Complex64::new(v, 0.0))
                .collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.values[row * self.width + col]
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn real(&self) -> Field {
        let data = self.values.iter().map(|z| z.re).collect();
        Field::from_vec(self.height, self.width, data).expect("shape preserved")
    }

    pub fn imag(&self) -> Field {
        let data = self.values.iter().map(|z| z.im).collect();
        Field::from_vec(self.height, self.width, data).expect("shape preserved")
    }

    pub fn max_abs_diff(&self, other: &ComplexField) -> f64 {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }
}

/// Planned 2D transform for one shape. Plans are immutable and shared.
pub struct Fft2 {
    height: usize,
    width: usize,
    row_forward: Arc<dyn Fft<f64>>,
    row_inverse: Arc<dyn Fft<f64>>,
    col_forward: Arc<dyn Fft<f64>>,
    col_inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish()
    }
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_forward: planner.plan_fft_forward(width),
            row_inverse: planner.plan_fft_inverse(width),
            col_forward: planner.plan_fft_forward(height),
            col_inverse: planner.plan_fft_inverse(height),
        }
    }

    /// Process-wide plan for `height x width`.
    pub fn shared(height: usize, width: usize) -> Arc<Fft2> {
        type PlanCache = Mutex<HashMap<(usize, usize), Arc<Fft2>>>;
        static PLANS: OnceLock<PlanCache> = OnceLock::new();
        let plans = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = plans.lock().unwrap_or_else(|e| e.into_inner());
        guard
            .entry((height, width))
            .or_insert_with(|| Arc::new(Fft2::new(height, width)))
            .clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Unnormalised forward transform in place.
    pub fn forward_in_place(&self, buf: &mut [Complex64]) {
        self.transform(buf, &*self.row_forward, &*self.col_forward);
    }

    /// Inverse transform in place, scaled by `1/(H*W)`.
    pub fn inverse_in_place(&self, buf: &mut [Complex64]) {
        self.transform(buf, &*self.row_inverse, &*self.col_inverse);
        let scale = 1.0 / (self.height * self.width) as f64;
        for z in buf.iter_mut() {
            *z *= scale;
        }
    }

    fn transform(&self, buf: &mut [Complex64], rows: &dyn Fft<f64>, cols: &dyn Fft<f64>) {
        let (h, w) = (self.height, self.width);
        assert_eq!(buf.len(), h * w, "buffer does not match plan shape");
        rows.process(buf);
        let mut transposed = vec![Complex64::new(0.0, 0.0); h * w];
        transpose(buf, &mut transposed, h, w);
        cols.process(&mut transposed);
        transpose(&transposed, buf, w, h);
    }

    pub fn forward_real(&self, image: &Field) -> ComplexField {
        let mut spectrum = ComplexField::from_real(image);
        self.forward_in_place(&mut spectrum.values);
        spectrum
    }

    pub fn inverse(&self, spectrum: &ComplexField) -> ComplexField {
        let mut out = spectrum.clone();
        self.inverse_in_place(&mut out.values);
        out
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Forward 2D DFT of a real image (unnormalised).
pub fn fft2(image: &Field) -> Result<ComplexField> {
    if !image.is_finite() {
        return Err(Error::InvalidInput(
            "image contains non-finite values".into(),
        ));
    }
    if image.is_empty() {
        return Err(Error::InvalidShape("empty image".into()));
    }
    Ok(Fft2::shared(image.height(), image.width()).forward_real(image))
}

/// Full complex inverse transform.
pub fn ifft2_complex(spectrum: &ComplexField) -> ComplexField {
    Fft2::shared(spectrum.height, spectrum.width).inverse(spectrum)
}

/// Inverse transform, keeping the real part.
pub fn ifft2(spectrum: &ComplexField) -> Field {
    ifft2_complex(spectrum).real()
}

/// [`ifft2`] with a shape check against the grid the spectrum belongs to.
pub fn ifft2_on(grid: &FrequencyGrid, spectrum: &ComplexField) -> Result<Field> {
    if spectrum.shape() != grid.shape() {
        return Err(Error::InvalidShape(format!(
            "spectrum is {}x{}, grid is {}x{}",
            spectrum.height,
            spectrum.width,
            grid.height(),
            grid.width()
        )));
    }
    Ok(ifft2(spectrum))
}

/// Direct double-sum DFT. O((HW)^2); test oracle only.
pub fn direct_dft2(image: &Field) -> Result<ComplexField> {
    let (h, w) = image.shape();
    if h * w > DIRECT_DFT_MAX_PIXELS {
        return Err(Error::OracleSize {
            got: h * w,
            limit: DIRECT_DFT_MAX_PIXELS,
        });
    }
    let tau = std::f64::consts::TAU;
    let mut values = Vec::with_capacity(h * w);
    for ky in 0..h {
        for kx in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    // reduce the phase index modulo N first to keep the angle small
                    let py = (ky * y % h) as f64 / h as f64;
                    let px = (kx * x % w) as f64 / w as f64;
                    let angle = -tau * (py + px);
                    acc += image.get(y, x) * Complex64::from_polar(1.0, angle);
                }
            }
            values.push(acc);
        }
    }
    ComplexField::new(h, w, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(h: usize, w: usize, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::from_fn(h, w, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn grid_index_mapping() {
        let g = make_grid(4, 4).unwrap();
        assert_eq!(g.at(0, 0), (0.0, 0.0, 0.0));
        assert_eq!(g.at(2, 0), (0.0, -0.5, 0.5));
        let g = make_grid(256, 256).unwrap();
        let max_fx = g.fx().iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(max_fx, 0.49609375);
    }

    #[test]
    fn grid_ranges_and_dc() {
        for &(h, w) in &[(2, 2), (5, 7), (8, 16), (9, 4)] {
            let g = make_grid(h, w).unwrap();
            for i in 0..g.len() {
                assert!((-0.5..0.5).contains(&g.fx()[i]));
                assert!((-0.5..0.5).contains(&g.fy()[i]));
                assert_eq!(g.radius()[i] == 0.0, i == 0);
            }
            assert_eq!(g, make_grid(h, w).unwrap());
        }
    }

    #[test]
    fn grid_rejects_degenerate_shapes() {
        assert!(matches!(make_grid(1, 8), Err(Error::InvalidShape(_))));
        assert!(matches!(make_grid(8, 0), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn constant_image_is_dc_only() {
        let c = 0.37;
        let s = fft2(&Field::constant(8, 8, c)).unwrap();
        assert!((s.get(0, 0) - Complex64::new(64.0 * c, 0.0)).norm() < 1e-12);
        for (i, z) in s.values().iter().enumerate().skip(1) {
            assert!(z.norm() < 1e-12, "bin {i} = {z}");
        }
    }

    #[test]
    fn impulse_is_flat() {
        let mut img = Field::zeros(8, 8);
        img.set(0, 0, 1.0);
        let s = fft2(&img).unwrap();
        for z in s.values() {
            assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
        let d = direct_dft2(&Field::from_fn(4, 4, |r, c| {
            f64::from(u8::from(r == 0 && c == 0))
        }))
        .unwrap();
        for z in d.values() {
            assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
        let d = direct_dft2(&Field::constant(4, 4, 2.0)).unwrap();
        assert!((d.get(0, 0).re - 32.0).abs() < 1e-12);
        assert!(d.values()[1..].iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn matches_direct_dft() {
        for (seed, &(h, w)) in [(16, 16), (8, 8), (8, 16), (5, 3), (7, 12)]
            .iter()
            .enumerate()
        {
            let img = random_field(h, w, seed as u64);
            let fast = fft2(&img).unwrap();
            let slow = direct_dft2(&img).unwrap();
            assert!(fast.max_abs_diff(&slow) <= 1e-10, "{h}x{w}");
        }
    }

    #[test]
    fn round_trip_non_power_of_two() {
        for &(h, w) in &[(16, 16), (30, 17), (256, 256), (100, 64)] {
            let img = random_field(h, w, 3);
            let back = ifft2(&fft2(&img).unwrap());
            assert!(back.max_abs_diff(&img) <= 1e-10);
        }
    }

    #[test]
    fn zero_spectrum_inverts_to_zero() {
        let z = ifft2(&ComplexField::zeros(6, 6));
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn cosine_grating_has_real_inverse() {
        let (h, w) = (32, 32);
        let img = Field::from_fn(h, w, |r, c| {
            (std::f64::consts::TAU * (3.0 * c as f64 / w as f64 + 5.0 * r as f64 / h as f64)).cos()
        });
        let spec = fft2(&img).unwrap();
        let back = ifft2_complex(&spec);
        let peak = back.real().max_abs();
        assert!(back.imag().max_abs() <= 1e-10 * peak);
        assert!(back.real().max_abs_diff(&img) <= 1e-10);
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut img = Field::zeros(4, 4);
        img.set(1, 1, f64::NAN);
        assert!(matches!(fft2(&img), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn oracle_guard() {
        let img = Field::zeros(65, 64);
        assert!(matches!(direct_dft2(&img), Err(Error::OracleSize { .. })));
    }

    #[test]
    fn shape_checked_inverse() {
        let g = make_grid(4, 4).unwrap();
        assert!(ifft2_on(&g, &ComplexField::zeros(4, 5)).is_err());
        assert!(ifft2_on(&g, &ComplexField::zeros(4, 4)).is_ok());
        assert!(ComplexField::new(2, 2, vec![Complex64::new(0.0, 0.0); 3]).is_err());
    }
}

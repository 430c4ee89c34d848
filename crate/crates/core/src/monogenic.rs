//! The monogenic feature layer forward pass.
//!
//! For an image `I` with spectrum `X`:
//!
//! ```text
//! B        = X * LPF * sum_i LGF_i
//! I_f      = ifft2(B)
//! R1 + iR2 = ifft2(B * (i*fx - fy)/|f|)
//! phase    = atan2(I_f, |(R1, R2)|)
//! asym     = max(|(R1, R2)| - |I_f|, 0) / (|(I_f, R1, R2)| + eps)
//! ```
//!
//! Scale responses are summed before the phase equations. Each emitted
//! channel is min-max rescaled to `[0, 1]`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock, RwLock};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::filters::{butterworth, riesz, LowPassSpec};
use crate::params::FilterBank;
use crate::spectral::{ComplexField, Fft2, FrequencyGrid};

/// Stabiliser for the asymmetry denominator and phase-gradient norms.
pub const DEFAULT_EPSILON: f64 = 1e-12;
/// Channels whose range is at or below this are emitted as all-zero.
pub const DEGENERATE_RANGE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ChannelMode {
    Phase,
    Asym,
    #[default]
    Both,
}

impl ChannelMode {
    pub fn has_phase(self) -> bool {
        matches!(self, ChannelMode::Phase | ChannelMode::Both)
    }

    pub fn has_asym(self) -> bool {
        matches!(self, ChannelMode::Asym | ChannelMode::Both)
    }

    pub fn channel_count(self) -> usize {
        usize::from(self.has_phase()) + usize::from(self.has_asym())
    }

    pub fn channel_names(self) -> Vec<&'static str> {
        let mut names = Vec::with_capacity(2);
        if self.has_phase() {
            names.push("phase");
        }
        if self.has_asym() {
            names.push("asym");
        }
        names
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelMode::Phase => "phase",
            ChannelMode::Asym => "asym",
            ChannelMode::Both => "both",
        }
    }
}

impl fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phase" => Ok(ChannelMode::Phase),
            "asym" => Ok(ChannelMode::Asym),
            "both" => Ok(ChannelMode::Both),
            other => Err(Error::InvalidConfig(format!(
                "unknown channel mode `{other}` (expected phase, asym or both)"
            ))),
        }
    }
}

/// How min-max statistics enter the parameter tangents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RescaleGradient {
    /// Differentiate through the extremal pixels as well.
    #[default]
    Exact,
    /// Treat min and max as constants.
    StopGradient,
}

/// Even response and the two odd (Riesz) responses, summed over scales.
#[derive(Clone, Debug, PartialEq)]
pub struct MonogenicTriplet {
    pub even: Field,
    pub odd_x: Field,
    pub odd_y: Field,
}

impl MonogenicTriplet {
    pub fn shape(&self) -> (usize, usize) {
        self.even.shape()
    }

    pub fn max_abs(&self) -> f64 {
        self.even
            .max_abs()
            .max(self.odd_x.max_abs())
            .max(self.odd_y.max_abs())
    }

    /// Componentwise sum, used to combine per-scale triplets.
    pub fn add(&self, other: &MonogenicTriplet) -> MonogenicTriplet {
        let sum = |a: &Field, b: &Field| {
            let data = a
                .as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(x, y)| x + y)
                .collect();
            Field::from_vec(a.height(), a.width(), data).expect("same shape")
        };
        MonogenicTriplet {
            even: sum(&self.even, &other.even),
            odd_x: sum(&self.odd_x, &other.odd_x),
            odd_y: sum(&self.odd_y, &other.odd_y),
        }
    }
}

#[inline]
pub(crate) fn phase_at(even: f64, odd_x: f64, odd_y: f64) -> f64 {
    even.atan2(odd_x.hypot(odd_y))
}

#[inline]
pub(crate) fn asym_at(even: f64, odd_x: f64, odd_y: f64, epsilon: f64) -> f64 {
    let odd = odd_x.hypot(odd_y);
    let energy = (even * even + odd * odd).sqrt();
    (odd - even.abs()).max(0.0) / (energy + epsilon)
}

/// Local phase in `[-pi/2, pi/2]`; flat points (all components zero) map to 0.
pub fn local_phase(triplet: &MonogenicTriplet, _epsilon: f64) -> Field {
    let t = triplet;
    let data = t
        .even
        .as_slice()
        .iter()
        .zip(t.odd_x.as_slice())
        .zip(t.odd_y.as_slice())
        .map(|((&e, &x), &y)| phase_at(e, x, y))
        .collect();
    Field::from_vec(t.even.height(), t.even.width(), data).expect("same shape")
}

/// Rectified odd-over-even excess normalised by local energy, in `[0, 1)`.
pub fn phase_asymmetry(triplet: &MonogenicTriplet, epsilon: f64) -> Field {
    let t = triplet;
    let data = t
        .even
        .as_slice()
        .iter()
        .zip(t.odd_x.as_slice())
        .zip(t.odd_y.as_slice())
        .map(|((&e, &x), &y)| asym_at(e, x, y, epsilon))
        .collect();
    Field::from_vec(t.even.height(), t.even.width(), data).expect("same shape")
}

/// Affine map of the field onto `[0, 1]`; near-constant fields become zero.
pub fn minmax_rescale(field: &Field) -> Field {
    let (lo, hi) = field.min_max();
    rescale_with(field, lo, hi)
}

pub(crate) fn rescale_with(field: &Field, lo: f64, hi: f64) -> Field {
    let range = hi - lo;
    if range.is_nan() || range <= DEGENERATE_RANGE {
        return Field::zeros(field.height(), field.width());
    }
    field.map(|v| ((v - lo) / range).clamp(0.0, 1.0))
}

/// Output of the layer: the requested channels, each in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseFeatures {
    mode: ChannelMode,
    channels: Vec<Field>,
    names: Vec<&'static str>,
}

impl PhaseFeatures {
    pub fn mode(&self) -> ChannelMode {
        self.mode
    }

    pub fn channels(&self) -> &[Field] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Field> {
        self.channels
    }

    pub fn channel_names(&self) -> &[&'static str] {
        &self.names
    }

    pub fn channel(&self, name: &str) -> Option<&Field> {
        self.names
            .iter()
            .position(|n| *n == name)
            .map(|i| &self.channels[i])
    }

    pub fn phase(&self) -> Option<&Field> {
        self.channel("phase")
    }

    pub fn asym(&self) -> Option<&Field> {
        self.channel("asym")
    }
}

/// Pre-rescale quantities of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Analysis {
    pub triplet: MonogenicTriplet,
    pub phase: Field,
    pub asym: Field,
}

/// Frequency-domain kernels for one image shape.
pub(crate) struct ShapeKernels {
    pub(crate) lowpass: Vec<f64>,
    /// `LPF * sum_i LGF_i`
    pub(crate) band: Vec<f64>,
    pub(crate) riesz: Vec<Complex64>,
    pub(crate) grid: FrequencyGrid,
    tangent: OnceLock<TangentKernels>,
}

/// Per-scale `LPF * dLGF_i/dp*`, chain factors already applied.
pub(crate) struct TangentKernels {
    pub(crate) d_f0: Vec<Vec<f64>>,
    pub(crate) d_sigma: Vec<Vec<f64>>,
}

impl ShapeKernels {
    fn build(grid: FrequencyGrid, bank: &FilterBank, lpf: LowPassSpec) -> Self {
        let lowpass = butterworth(&grid, lpf).values().to_vec();
        let specs = bank.specs();
        let band = grid
            .radius()
            .iter()
            .zip(&lowpass)
            .map(|(&f, &lp)| lp * specs.iter().map(|s| s.gain(f)).sum::<f64>())
            .collect();
        let riesz = riesz(&grid).values().to_vec();
        Self {
            lowpass,
            band,
            riesz,
            grid,
            tangent: OnceLock::new(),
        }
    }

    pub(crate) fn tangent(&self, bank: &FilterBank) -> &TangentKernels {
        self.tangent.get_or_init(|| {
            let n = bank.n_scales();
            let mut d_f0 = Vec::with_capacity(n);
            let mut d_sigma = Vec::with_capacity(n);
            for i in 0..n {
                let spec = bank.spec(i);
                let (c_f0, c_sigma) = bank.chain_factors(i);
                let (mut a, mut b) = (
                    Vec::with_capacity(self.grid.len()),
                    Vec::with_capacity(self.grid.len()),
                );
                for (&f, &lp) in self.grid.radius().iter().zip(&self.lowpass) {
                    let (_, g_f0, g_sigma) = spec.gain_with_partials(f);
                    a.push(lp * g_f0 * c_f0);
                    b.push(lp * g_sigma * c_sigma);
                }
                d_f0.push(a);
                d_sigma.push(b);
            }
            TangentKernels { d_f0, d_sigma }
        })
    }
}

/// The layer: an immutable bank snapshot plus per-shape kernel caches.
pub struct Mono2d {
    bank: FilterBank,
    lpf: LowPassSpec,
    mode: ChannelMode,
    epsilon: f64,
    include_input: bool,
    rescale_gradient: RescaleGradient,
    kernels: RwLock<HashMap<(usize, usize), Arc<ShapeKernels>>>,
}

impl Clone for Mono2d {
    fn clone(&self) -> Self {
        Self {
            bank: self.bank.clone(),
            lpf: self.lpf,
            mode: self.mode,
            epsilon: self.epsilon,
            include_input: self.include_input,
            rescale_gradient: self.rescale_gradient,
            kernels: RwLock::new(HashMap::new()),
        }
    }
}

impl fmt::Debug for Mono2d {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Mono2d")
            .field("bank", &self.bank)
            .field("lpf", &self.lpf)
            .field("mode", &self.mode)
            .field("epsilon", &self.epsilon)
            .field("include_input", &self.include_input)
            .finish()
    }
}

impl Mono2d {
    pub fn new(bank: FilterBank, lpf: LowPassSpec, mode: ChannelMode) -> Self {
        Self {
            bank,
            lpf,
            mode,
            epsilon: DEFAULT_EPSILON,
            include_input: false,
            rescale_gradient: RescaleGradient::Exact,
            kernels: RwLock::new(HashMap::new()),
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        assert!(epsilon > 0.0, "epsilon must be positive");
        self.epsilon = epsilon;
        self
    }

    /// Append the raw input as an extra, unrescaled channel.
    pub fn with_input_channel(mut self, include: bool) -> Self {
        self.include_input = include;
        self
    }

    pub fn with_rescale_gradient(mut self, mode: RescaleGradient) -> Self {
        self.rescale_gradient = mode;
        self
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn lowpass(&self) -> LowPassSpec {
        self.lpf
    }

    pub fn mode(&self) -> ChannelMode {
        self.mode
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn includes_input(&self) -> bool {
        self.include_input
    }

    pub fn rescale_gradient(&self) -> RescaleGradient {
        self.rescale_gradient
    }

    pub fn channel_count(&self) -> usize {
        self.mode.channel_count() + usize::from(self.include_input)
    }

    pub fn channel_names(&self) -> Vec<&'static str> {
        let mut names = self.mode.channel_names();
        if self.include_input {
            names.push("input");
        }
        names
    }

    pub(crate) fn kernels(&self, height: usize, width: usize) -> Result<Arc<ShapeKernels>> {
        if let Some(k) = self
            .kernels
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(&(height, width))
        {
            return Ok(k.clone());
        }
        let grid = FrequencyGrid::new(height, width)?;
        let built = Arc::new(ShapeKernels::build(grid, &self.bank, self.lpf));
        let mut guard = self.kernels.write().unwrap_or_else(|e| e.into_inner());
        Ok(guard.entry((height, width)).or_insert(built).clone())
    }

    pub(crate) fn check_image(image: &Field) -> Result<()> {
        if image.height() < 2 || image.width() < 2 {
            return Err(Error::InvalidShape(format!(
                "image must be at least 2x2, got {}x{}",
                image.height(),
                image.width()
            )));
        }
        if !image.is_finite() {
            return Err(Error::InvalidInput(
                "image contains non-finite values".into(),
            ));
        }
        Ok(())
    }

    /// Forward transform of the image together with the kernels for its shape.
    pub(crate) fn spectrum(
        &self,
        image: &Field,
    ) -> Result<(ComplexField, Arc<ShapeKernels>, Arc<Fft2>)> {
        Self::check_image(image)?;
        let (h, w) = image.shape();
        let kernels = self.kernels(h, w)?;
        let plan = Fft2::shared(h, w);
        // The band kernels vanish at DC, so removing a constant changes nothing
        // except rounding: a flat image now transforms to exact zeros on every
        // grid size instead of to FFT noise whose phase is arbitrary.
        let (lo, _) = image.min_max();
        Ok((plan.forward_real(&image.map(|v| v - lo)), kernels, plan))
    }

    /// Triplet from an already band-filtered spectrum `B`.
    pub(crate) fn triplet_from_band(
        plan: &Fft2,
        band: Vec<Complex64>,
        riesz: &[Complex64],
        shape: (usize, usize),
    ) -> MonogenicTriplet {
        let (h, w) = shape;
        let mut odd: Vec<Complex64> = band.iter().zip(riesz).map(|(b, r)| b * r).collect();
        let mut even = band;
        plan.inverse_in_place(&mut even);
        plan.inverse_in_place(&mut odd);
        MonogenicTriplet {
            even: Field::from_vec(h, w, even.iter().map(|z| z.re).collect()).expect("shape"),
            odd_x: Field::from_vec(h, w, odd.iter().map(|z| z.re).collect()).expect("shape"),
            odd_y: Field::from_vec(h, w, odd.iter().map(|z| z.im).collect()).expect("shape"),
        }
    }

    pub fn triplet(&self, image: &Field) -> Result<MonogenicTriplet> {
        let (spectrum, kernels, plan) = self.spectrum(image)?;
        let band = spectrum
            .values()
            .iter()
            .zip(&kernels.band)
            .map(|(x, k)| x * k)
            .collect();
        Ok(Self::triplet_from_band(
            &plan,
            band,
            &kernels.riesz,
            image.shape(),
        ))
    }

    /// Triplets of each scale on its own; they sum to [`Mono2d::triplet`].
    pub fn triplets_per_scale(&self, image: &Field) -> Result<Vec<MonogenicTriplet>> {
        let (spectrum, kernels, plan) = self.spectrum(image)?;
        let radius = kernels.grid.radius();
        Ok(self
            .bank
            .specs()
            .iter()
            .map(|spec| {
                let band = spectrum
                    .values()
                    .iter()
                    .zip(radius)
                    .zip(&kernels.lowpass)
                    .map(|((x, &f), &lp)| x * (lp * spec.gain(f)))
                    .collect();
                Self::triplet_from_band(&plan, band, &kernels.riesz, image.shape())
            })
            .collect())
    }

    pub fn analyze(&self, image: &Field) -> Result<Analysis> {
        let triplet = self.triplet(image)?;
        Ok(self.analyze_triplet(triplet))
    }

    pub fn analyze_triplet(&self, triplet: MonogenicTriplet) -> Analysis {
        let phase = local_phase(&triplet, self.epsilon);
        let asym = phase_asymmetry(&triplet, self.epsilon);
        Analysis {
            triplet,
            phase,
            asym,
        }
    }

    pub(crate) fn assemble(
        &self,
        analysis: &Analysis,
        image: &Field,
        ranges: Option<&[(f64, f64)]>,
    ) -> PhaseFeatures {
        let mut channels = Vec::with_capacity(self.channel_count());
        let mut raw = Vec::with_capacity(2);
        if self.mode.has_phase() {
            raw.push(&analysis.phase);
        }
        if self.mode.has_asym() {
            raw.push(&analysis.asym);
        }
        for (k, field) in raw.into_iter().enumerate() {
            channels.push(match ranges {
                Some(r) => rescale_with(field, r[k].0, r[k].1),
                None => minmax_rescale(field),
            });
        }
        if self.include_input {
            channels.push(image.clone());
        }
        PhaseFeatures {
            mode: self.mode,
            channels,
            names: self.channel_names(),
        }
    }

    pub fn forward(&self, image: &Field) -> Result<PhaseFeatures> {
        let analysis = self.analyze(image)?;
        Ok(self.assemble(&analysis, image, None))
    }

    /// Forward over a batch. With `per_batch_rescale` the min-max statistics
    /// are pooled over the whole batch instead of taken per image.
    pub fn forward_batch(
        &self,
        images: &[Field],
        per_batch_rescale: bool,
    ) -> Result<Vec<PhaseFeatures>> {
        let analyses: Vec<Analysis> = crate::par_map(images, |img| self.analyze(img))
            .into_iter()
            .collect::<Result<_>>()?;
        if !per_batch_rescale {
            return Ok(analyses
                .iter()
                .zip(images)
                .map(|(a, img)| self.assemble(a, img, None))
                .collect());
        }
        let pooled = |pick: fn(&Analysis) -> &Field| {
            analyses
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| {
                    let (l, h) = pick(a).min_max();
                    (lo.min(l), hi.max(h))
                })
        };
        let mut ranges = Vec::new();
        if self.mode.has_phase() {
            ranges.push(pooled(|a| &a.phase));
        }
        if self.mode.has_asym() {
            ranges.push(pooled(|a| &a.asym));
        }
        Ok(analyses
            .iter()
            .zip(images)
            .map(|(a, img)| self.assemble(a, img, Some(&ranges)))
            .collect())
    }
}

/// One-shot forward pass without keeping the kernel cache.
pub fn forward(
    image: &Field,
    bank: &FilterBank,
    lpf: LowPassSpec,
    mode: ChannelMode,
) -> Result<PhaseFeatures> {
    Mono2d::new(bank.clone(), lpf, mode).forward(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::init_bank;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn triplet(even: f64, x: f64, y: f64) -> MonogenicTriplet {
        MonogenicTriplet {
            even: Field::constant(1, 1, even),
            odd_x: Field::constant(1, 1, x),
            odd_y: Field::constant(1, 1, y),
        }
    }

    #[test]
    fn phase_values() {
        assert_eq!(
            local_phase(&triplet(1.0, 0.0, 0.0), 1e-12).get(0, 0),
            FRAC_PI_2
        );
        assert_eq!(local_phase(&triplet(0.0, 0.6, 0.8), 1e-12).get(0, 0), 0.0);
        assert!((local_phase(&triplet(-1.0, 1.0, 0.0), 1e-12).get(0, 0) + FRAC_PI_4).abs() < 1e-15);
        assert_eq!(local_phase(&triplet(0.0, 0.0, 0.0), 1e-12).get(0, 0), 0.0);
    }

    #[test]
    fn asym_values() {
        let eps = 1e-12;
        let a = phase_asymmetry(&triplet(0.0, 3.0, 4.0), eps).get(0, 0);
        assert!((a - 5.0 / (5.0 + eps)).abs() < 1e-15 && a < 1.0);
        assert_eq!(phase_asymmetry(&triplet(2.0, 0.0, 0.0), eps).get(0, 0), 0.0);
        assert_eq!(phase_asymmetry(&triplet(1.0, 1.0, 0.0), eps).get(0, 0), 0.0);
        assert_eq!(phase_asymmetry(&triplet(0.0, 0.0, 0.0), eps).get(0, 0), 0.0);
    }

    #[test]
    fn rescale_examples() {
        let f = Field::from_vec(1, 3, vec![-FRAC_PI_2, 0.0, FRAC_PI_2]).unwrap();
        assert_eq!(minmax_rescale(&f).as_slice(), &[0.0, 0.5, 1.0]);
        assert_eq!(minmax_rescale(&Field::constant(3, 3, 2.0)).max_abs(), 0.0);
        let unit = Field::from_vec(1, 4, vec![0.0, 0.25, 0.7, 1.0]).unwrap();
        assert!(minmax_rescale(&unit).max_abs_diff(&unit) <= 1e-15);
    }

    #[test]
    fn channel_mode_parsing() {
        for m in [ChannelMode::Phase, ChannelMode::Asym, ChannelMode::Both] {
            assert_eq!(m.as_str().parse::<ChannelMode>().unwrap(), m);
        }
        assert!("sum".parse::<ChannelMode>().is_err());
        assert_eq!(ChannelMode::Both.channel_count(), 2);
        assert_eq!(ChannelMode::Asym.channel_names(), vec!["asym"]);
    }

    #[test]
    fn constant_image_gives_zero_channels() {
        for (h, w) in [(32, 32), (24, 20)] {
            let layer = Mono2d::new(
                init_bank(8, h, w, 1).unwrap(),
                LowPassSpec::default(),
                ChannelMode::Both,
            );
            for c in [0.0, 0.3, 128.0 / 255.0, 1.0] {
                let img = Field::constant(h, w, c);
                let t = layer.triplet(&img).unwrap().max_abs();
                assert!(t <= 1e-12, "{h}x{w} {c}: {t}");
                let out = layer.forward(&img).unwrap();
                assert!(
                    out.channels().iter().all(|ch| ch.max_abs() == 0.0),
                    "{h}x{w} {c}"
                );
            }
        }
    }

    #[test]
    fn channels_span_unit_interval() {
        let layer = Mono2d::new(
            init_bank(4, 24, 40, 3).unwrap(),
            LowPassSpec::default(),
            ChannelMode::Both,
        );
        let img = Field::from_fn(24, 40, |r, c| ((r * 7 + c * 13) % 11) as f64 / 10.0);
        let out = layer.forward(&img).unwrap();
        for ch in out.channels() {
            assert_eq!(ch.min_max(), (0.0, 1.0));
        }
        let raw = layer.analyze(&img).unwrap();
        let (lo, hi) = raw.asym.min_max();
        assert!(lo >= 0.0 && hi < 1.0);
        let (lo, hi) = raw.phase.min_max();
        assert!(lo >= -FRAC_PI_2 && hi <= FRAC_PI_2);
    }

    #[test]
    fn mode_selects_channels() {
        let bank = init_bank(2, 16, 16, 0).unwrap();
        let img = Field::from_fn(16, 16, |r, c| ((r + 2 * c) % 5) as f64);
        let both = forward(&img, &bank, LowPassSpec::default(), ChannelMode::Both).unwrap();
        let phase = forward(&img, &bank, LowPassSpec::default(), ChannelMode::Phase).unwrap();
        let asym = forward(&img, &bank, LowPassSpec::default(), ChannelMode::Asym).unwrap();
        assert_eq!(both.channels().len(), 2);
        assert_eq!(phase.channels().len(), 1);
        assert_eq!(phase.phase(), both.phase());
        assert_eq!(asym.asym(), both.asym());
        assert!(phase.asym().is_none());
        let with_input =
            Mono2d::new(bank, LowPassSpec::default(), ChannelMode::Phase).with_input_channel(true);
        let out = with_input.forward(&img).unwrap();
        assert_eq!(out.channel_names(), &["phase", "input"]);
        assert_eq!(out.channel("input"), Some(&img));
    }

    #[test]
    fn rejects_bad_images() {
        let layer = Mono2d::new(
            init_bank(1, 8, 8, 0).unwrap(),
            LowPassSpec::default(),
            ChannelMode::Both,
        );
        let mut img = Field::zeros(8, 8);
        img.set(3, 3, f64::INFINITY);
        assert!(matches!(layer.forward(&img), Err(Error::InvalidInput(_))));
        assert!(matches!(
            layer.forward(&Field::zeros(1, 8)),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn scale_sum_matches_pipeline() {
        let layer = Mono2d::new(
            init_bank(5, 32, 32, 8).unwrap(),
            LowPassSpec::default(),
            ChannelMode::Both,
        );
        let img = Field::from_fn(32, 32, |r, c| ((r * r + 3 * c) % 17) as f64 / 17.0);
        let parts = layer.triplets_per_scale(&img).unwrap();
        let summed = parts[1..]
            .iter()
            .fold(parts[0].clone(), |acc, t| acc.add(t));
        let direct = layer.triplet(&img).unwrap();
        assert!(summed.even.max_abs_diff(&direct.even) <= 1e-12);
        assert!(summed.odd_x.max_abs_diff(&direct.odd_x) <= 1e-12);
        assert!(summed.odd_y.max_abs_diff(&direct.odd_y) <= 1e-12);
        let a = layer.analyze_triplet(summed);
        let b = layer.analyze_triplet(direct);
        assert!(a.phase.max_abs_diff(&b.phase) <= 1e-9);
    }

    #[test]
    fn deterministic_bitwise() {
        let layer = Mono2d::new(
            init_bank(8, 48, 48, 2).unwrap(),
            LowPassSpec::default(),
            ChannelMode::Both,
        );
        let img = Field::from_fn(48, 48, |r, c| ((r * 31 + c * 17) % 23) as f64 / 23.0);
        let a = layer.forward(&img).unwrap();
        let b = layer.clone().forward(&img).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_rescale_modes() {
        let layer = Mono2d::new(
            init_bank(3, 16, 16, 4).unwrap(),
            LowPassSpec::default(),
            ChannelMode::Both,
        );
        let imgs: Vec<Field> = (0..3)
            .map(|k| Field::from_fn(16, 16, |r, c| ((r * (k + 2) + c) % 7) as f64))
            .collect();
        let per_image = layer.forward_batch(&imgs, false).unwrap();
        for (img, out) in imgs.iter().zip(&per_image) {
            assert_eq!(out, &layer.forward(img).unwrap());
        }
        let pooled = layer.forward_batch(&imgs, true).unwrap();
        for ch in 0..2 {
            let lo = pooled
                .iter()
                .map(|p| p.channels()[ch].min_max().0)
                .fold(f64::INFINITY, f64::min);
            let hi = pooled
                .iter()
                .map(|p| p.channels()[ch].min_max().1)
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!((lo, hi), (0.0, 1.0));
        }
    }

    #[test]
    fn grating_phase_at_crests_and_troughs() {
        // horizontal cosine with the single filter centred on its frequency
        let n = 64;
        let freq = 8.0 / n as f64;
        let bank = FilterBank::with_bounds(vec![0.0], vec![0.0], 1.0 / n as f64, 0.5).unwrap();
        let f0_star = {
            // invert the bound so that f0 == freq
            let s = (freq - bank.f0_min()) / (0.5 - bank.f0_min());
            (s / (1.0 - s)).ln()
        };
        let bank = FilterBank::with_bounds(vec![f0_star], vec![0.0], 1.0 / n as f64, 0.5).unwrap();
        assert!((bank.f0(0) - freq).abs() < 1e-12);
        let layer = Mono2d::new(bank, LowPassSpec::default(), ChannelMode::Phase);
        let img = Field::from_fn(n, n, |_, c| 0.5 + 0.3 * (2.0 * PI * freq * c as f64).cos());
        let phase = layer.analyze(&img).unwrap().phase;
        for r in [0, 17, 40] {
            assert!((phase.get(r, 0) - FRAC_PI_2).abs() < 1e-6);
            assert!((phase.get(r, 8) - FRAC_PI_2).abs() < 1e-6);
            assert!((phase.get(r, 4) + FRAC_PI_2).abs() < 1e-6);
            assert!(phase.get(r, 2).abs() < 1e-6);
        }
    }
}

//! Synthetic segmentation data with scripted intensity-domain shifts.
//!
//! Each sample is a dark, gently curved band crossing a speckled background,
//! with the band as the segmentation target. A [`DomainSpec`] perturbs the
//! clean rendering by a contrast scale about mid-grey, an intensity offset, a
//! gamma curve and multiplicative speckle noise, each drawn per sample from
//! the spec's ranges. The clean rendering depends only on `(seed, index)`, so
//! two domains generated with the same seed show the same anatomy.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::field::Field;

/// Clean renderings stay inside this range so that the largest admissible
/// contrast/offset shift never clips.
pub const CLEAN_RANGE: (f64, f64) = (0.32, 0.68);

pub const CONTRAST_LIMITS: (f64, f64) = (0.4, 1.6);
pub const OFFSET_LIMITS: (f64, f64) = (-0.2, 0.2);
pub const GAMMA_LIMITS: (f64, f64) = (0.5, 2.0);
pub const NOISE_LIMITS: (f64, f64) = (0.0, 0.5);

pub const SOURCE_DOMAIN: &str = "source";

#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub name: String,
    pub contrast: (f64, f64),
    pub offset: (f64, f64),
    pub gamma: (f64, f64),
    /// Standard deviation of the multiplicative noise.
    pub noise: (f64, f64),
}

impl DomainSpec {
    pub fn identity(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            contrast: (1.0, 1.0),
            offset: (0.0, 0.0),
            gamma: (1.0, 1.0),
            noise: (0.0, 0.0),
        }
    }

    pub fn source() -> Self {
        Self::identity(SOURCE_DOMAIN)
    }

    pub fn with_contrast(mut self, lo: f64, hi: f64) -> Self {
        self.contrast = (lo, hi);
        self
    }

    pub fn with_offset(mut self, lo: f64, hi: f64) -> Self {
        self.offset = (lo, hi);
        self
    }

    pub fn with_gamma(mut self, lo: f64, hi: f64) -> Self {
        self.gamma = (lo, hi);
        self
    }

    pub fn with_noise(mut self, lo: f64, hi: f64) -> Self {
        self.noise = (lo, hi);
        self
    }

    /// Only affine intensity changes: features are exactly invariant.
    pub fn is_affine_only(&self) -> bool {
        self.gamma == (1.0, 1.0) && self.noise == (0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |what: &str, (lo, hi): (f64, f64), (min, max): (f64, f64)| {
            if !(lo <= hi && lo >= min && hi <= max) {
                Err(Error::InvalidConfig(format!(
                    "domain `{}`: {what} range [{lo}, {hi}] outside [{min}, {max}]",
                    self.name
                )))
            } else {
                Ok(())
            }
        };
        check("contrast", self.contrast, CONTRAST_LIMITS)?;
        check("offset", self.offset, OFFSET_LIMITS)?;
        check("gamma", self.gamma, GAMMA_LIMITS)?;
        check("noise", self.noise, NOISE_LIMITS)
    }

    fn draw(&self, rng: &mut impl Rng) -> Shift {
        let pick = |rng: &mut dyn rand::RngCore, (lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            }
        };
        Shift {
            contrast: pick(rng, self.contrast),
            offset: pick(rng, self.offset),
            gamma: pick(rng, self.gamma),
            noise: pick(rng, self.noise),
        }
    }
}

/// Test-time domains: two affine-only shifts and three non-affine ones.
pub fn standard_suite() -> Vec<DomainSpec> {
    vec![
        DomainSpec::identity("contrast").with_contrast(0.4, 1.6),
        DomainSpec::identity("contrast_offset")
            .with_contrast(0.4, 1.6)
            .with_offset(-0.2, 0.2),
        DomainSpec::identity("gamma").with_gamma(0.5, 2.0),
        DomainSpec::identity("noise").with_noise(0.05, 0.15),
        DomainSpec::identity("mixed")
            .with_contrast(0.6, 1.4)
            .with_offset(-0.15, 0.15)
            .with_gamma(0.7, 1.5)
            .with_noise(0.0, 0.08),
    ]
}

#[derive(Clone, Copy, Debug)]
struct Shift {
    contrast: f64,
    offset: f64,
    gamma: f64,
    noise: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub image: Field,
    /// 1.0 inside the band, 0.0 elsewhere.
    pub mask: Field,
    pub domain: String,
}

fn sample_rng(seed: u64, index: usize, shift: bool) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * index as u64 + u64::from(shift));
    rng
}

fn render_clean(height: usize, width: usize, rng: &mut ChaCha8Rng) -> (Field, Field) {
    let h = height as f64;
    let centre = rng.random_range(0.3..0.7) * h;
    let amplitude = rng.random_range(0.0..0.1) * h;
    let period = rng.random_range(0.8..2.0) * width as f64;
    let phase = rng.random_range(0.0..TAU);
    let thickness = rng.random_range(0.05..0.14) * h;
    let background = rng.random_range(0.55..0.62);
    let band = rng.random_range(0.36..0.42);
    let speckle = 0.05;

    let centre_line: Vec<f64> = (0..width)
        .map(|c| centre + amplitude * (TAU * c as f64 / period + phase).sin())
        .collect();
    let mask = Field::from_fn(height, width, |r, c| {
        f64::from(u8::from(
            (r as f64 - centre_line[c]).abs() <= thickness / 2.0,
        ))
    });
    let image = Field::from_fn(height, width, |r, c| {
        let d = (r as f64 - centre_line[c]).abs() - thickness / 2.0;
        let inside = 1.0 / (1.0 + (d / 0.7).exp());
        let clean = background + (band - background) * inside;
        let n: f64 = StandardNormal.sample(rng);
        (clean * (1.0 + speckle * n)).clamp(CLEAN_RANGE.0, CLEAN_RANGE.1)
    });
    (image, mask)
}

fn apply_shift(image: &Field, shift: Shift, rng: &mut ChaCha8Rng) -> Field {
    // a*I + (0.5 - 0.5a + b): contrast about mid-grey, exact for the identity
    let bias = 0.5 - 0.5 * shift.contrast + shift.offset;
    image.map(|v| {
        let mut x = shift.contrast * v + bias;
        x = x.max(0.0).powf(shift.gamma);
        let n: f64 = StandardNormal.sample(rng);
        x *= 1.0 + shift.noise * n;
        x.clamp(0.0, 1.0)
    })
}

pub fn generate_dataset(
    count: usize,
    shape: (usize, usize),
    domain: &DomainSpec,
    seed: u64,
) -> Result<Vec<SyntheticSample>> {
    if count == 0 {
        return Err(Error::InvalidConfig("dataset count must be >= 1".into()));
    }
    let (height, width) = shape;
    if height < 16 || width < 16 {
        return Err(Error::InvalidConfig(format!(
            "synthetic images must be at least 16x16, got {height}x{width}"
        )));
    }
    domain.validate()?;
    Ok((0..count)
        .map(|i| {
            let (image, mask) = render_clean(height, width, &mut sample_rng(seed, i, false));
            let mut shift_rng = sample_rng(seed, i, true);
            let shift = domain.draw(&mut shift_rng);
            SyntheticSample {
                image: apply_shift(&image, shift, &mut shift_rng),
                mask,
                domain: domain.name.clone(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_domain_reproduces_source() {
        let src = generate_dataset(6, (32, 48), &DomainSpec::source(), 3).unwrap();
        let same = generate_dataset(6, (32, 48), &DomainSpec::identity("copy"), 3).unwrap();
        for (a, b) in src.iter().zip(&same) {
            assert_eq!(a.image, b.image);
            assert_eq!(a.mask, b.mask);
        }
        assert_eq!(same[0].domain, "copy");
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = &standard_suite()[4];
        let a = generate_dataset(4, (32, 32), spec, 11).unwrap();
        assert_eq!(a, generate_dataset(4, (32, 32), spec, 11).unwrap());
        assert_ne!(a, generate_dataset(4, (32, 32), spec, 12).unwrap());
    }

    #[test]
    fn shifted_domain_keeps_anatomy() {
        let src = generate_dataset(3, (32, 32), &DomainSpec::source(), 5).unwrap();
        let shifted = generate_dataset(3, (32, 32), &standard_suite()[2], 5).unwrap();
        for (a, b) in src.iter().zip(&shifted) {
            assert_eq!(a.mask, b.mask);
            assert_ne!(a.image, b.image);
        }
    }

    #[test]
    fn affine_shift_does_not_clip() {
        let extreme = DomainSpec::identity("x")
            .with_contrast(1.6, 1.6)
            .with_offset(0.2, 0.2);
        let src = generate_dataset(5, (32, 32), &DomainSpec::source(), 1).unwrap();
        let out = generate_dataset(5, (32, 32), &extreme, 1).unwrap();
        for (a, b) in src.iter().zip(&out) {
            for (x, y) in a.image.as_slice().iter().zip(b.image.as_slice()) {
                assert!((y - (1.6 * x + 0.5 - 0.8 + 0.2)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let src = DomainSpec::source();
        assert!(generate_dataset(0, (32, 32), &src, 0).is_err());
        assert!(generate_dataset(1, (8, 32), &src, 0).is_err());
        for bad in [
            DomainSpec::identity("a").with_contrast(0.2, 1.0),
            DomainSpec::identity("b").with_offset(0.1, -0.1),
            DomainSpec::identity("c").with_gamma(0.5, 3.0),
            DomainSpec::identity("d").with_noise(-0.1, 0.0),
        ] {
            assert!(matches!(
                generate_dataset(1, (32, 32), &bad, 0),
                Err(Error::InvalidConfig(_))
            ));
        }
        for d in standard_suite() {
            d.validate().unwrap();
        }
    }

    fn connected(mask: &Field) -> bool {
        let (h, w) = mask.shape();
        let start = (0..h * w).find(|&i| mask.as_slice()[i] > 0.5);
        let Some(start) = start else { return false };
        let mut seen = vec![false; h * w];
        let mut stack = vec![start];
        seen[start] = true;
        let mut count = 0;
        while let Some(i) = stack.pop() {
            count += 1;
            let (r, c) = (i / w, i % w);
            let mut push = |rr: usize, cc: usize| {
                let j = rr * w + cc;
                if !seen[j] && mask.as_slice()[j] > 0.5 {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                push(r - 1, c);
            }
            if r + 1 < h {
                push(r + 1, c);
            }
            if c > 0 {
                push(r, c - 1);
            }
            if c + 1 < w {
                push(r, c + 1);
            }
        }
        count == mask.as_slice().iter().filter(|&&v| v > 0.5).count()
    }

    #[test]
    fn masks_are_connected_bands_with_bounded_area() {
        let samples = generate_dataset(1000, (64, 64), &DomainSpec::source(), 2024).unwrap();
        for s in &samples {
            let frac = s.mask.mean();
            assert!((0.02..=0.20).contains(&frac), "mask fraction {frac}");
            assert!(connected(&s.mask));
            let (lo, hi) = s.image.min_max();
            assert!(lo >= CLEAN_RANGE.0 && hi <= CLEAN_RANGE.1);
        }
    }
}

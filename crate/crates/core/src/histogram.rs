//! Fixed-bin intensity histograms on `[0, 1]` and the 1D Wasserstein distance
//! between them.

use crate::error::{Error, Result};
use crate::field::Field;

pub const DEFAULT_BINS: usize = 64;

/// Normalised histogram of values in `[0, 1]` (values outside are clamped).
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    counts: Vec<f64>,
    total: f64,
}

impl Histogram {
    pub fn new(bins: usize) -> Self {
        assert!(bins > 0, "histogram needs at least one bin");
        Self {
            counts: vec![0.0; bins],
            total: 0.0,
        }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, value: f64) {
        let bins = self.counts.len();
        let idx = ((value.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        self.counts[idx] += 1.0;
        self.total += 1.0;
    }

    pub fn add_field(&mut self, field: &Field) {
        for &v in field.as_slice() {
            self.add(v);
        }
    }

    pub fn from_fields<'a>(bins: usize, fields: impl IntoIterator<Item = &'a Field>) -> Self {
        let mut h = Self::new(bins);
        for f in fields {
            h.add_field(f);
        }
        h
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn probabilities(&self) -> Vec<f64> {
        if self.total == 0.0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts.iter().map(|c| c / self.total).collect()
    }
}

/// Earth mover's distance between two histograms over `[0, 1]` with the same
/// binning: `sum |CDF_a - CDF_b| * bin_width`.
pub fn wasserstein(a: &Histogram, b: &Histogram) -> Result<f64> {
    if a.bins() != b.bins() {
        return Err(Error::InvalidShape(format!(
            "histograms have {} and {} bins",
            a.bins(),
            b.bins()
        )));
    }
    if a.total == 0.0 || b.total == 0.0 {
        return Err(Error::InvalidInput("empty histogram".into()));
    }
    let width = 1.0 / a.bins() as f64;
    let (pa, pb) = (a.probabilities(), b.probabilities());
    let mut cdf = 0.0;
    let mut dist = 0.0;
    for (x, y) in pa.iter().zip(&pb) {
        cdf += x - y;
        dist += cdf.abs() * width;
    }
    Ok(dist)
}

/// Distances between two image sets, on raw intensities and on a derived
/// (e.g. local-phase) representation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SetDivergence {
    pub raw: f64,
    pub phase: f64,
}

/// Histograms each set's raw pixels and `phase(image)` pixels with `bins`
/// bins and returns both Wasserstein distances.
pub fn compare_sets(
    a: &[Field],
    b: &[Field],
    bins: usize,
    phase: impl Fn(&Field) -> Result<Field> + Sync + Send,
) -> Result<SetDivergence> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidConfig(
            "both image sets need at least one image".into(),
        ));
    }
    if bins == 0 {
        return Err(Error::InvalidConfig(
            "histogram needs at least one bin".into(),
        ));
    }
    let phases =
        |set: &[Field]| -> Result<Vec<Field>> { crate::par_map(set, &phase).into_iter().collect() };
    let (pa, pb) = (phases(a)?, phases(b)?);
    Ok(SetDivergence {
        raw: wasserstein(
            &Histogram::from_fields(bins, a),
            &Histogram::from_fields(bins, b),
        )?,
        phase: wasserstein(
            &Histogram::from_fields(bins, &pa),
            &Histogram::from_fields(bins, &pb),
        )?,
    })
}

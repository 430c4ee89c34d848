//! Forward-mode parameter tangents of the layer output.
//!
//! Every trainable parameter `p` (flat order: `f0*[0..n]`, then
//! `sigma_r*[0..n]`) only touches its own scale's log-Gabor kernel, so
//!
//! ```text
//! dI_f/dp       = ifft2(X * LPF * dLGF_i/dp)
//! dR1/dp + i dR2/dp = ifft2(X * LPF * dLGF_i/dp * riesz)
//! ```
//!
//! The even tangents of a scale's two parameters are real fields, so they are
//! packed into one complex inverse transform. The phase/asymmetry tangents
//! follow from the closed-form derivatives of `atan2` and of the rectified
//! ratio; the min-max rescale is differentiated through its extremal pixels
//! unless [`RescaleGradient::StopGradient`] is selected.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::filters::LowPassSpec;
use crate::monogenic::{
    Analysis, ChannelMode, Mono2d, PhaseFeatures, RescaleGradient, DEGENERATE_RANGE,
};
use crate::params::FilterBank;

/// Directional derivatives of the layer with respect to each parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentBundle {
    n_scales: usize,
    channel_names: Vec<&'static str>,
    pub d_even: Vec<Field>,
    pub d_odd_x: Vec<Field>,
    pub d_odd_y: Vec<Field>,
    pub d_phase: Vec<Field>,
    pub d_asym: Vec<Field>,
    /// `d_channels[p][c]`: tangent of emitted channel `c`.
    pub d_channels: Vec<Vec<Field>>,
}

impl TangentBundle {
    pub fn n_scales(&self) -> usize {
        self.n_scales
    }

    pub fn n_params(&self) -> usize {
        2 * self.n_scales
    }

    pub fn channel_names(&self) -> &[&'static str] {
        &self.channel_names
    }

    /// Human-readable parameter name for a flat index.
    pub fn param_name(&self, index: usize) -> String {
        param_name(self.n_scales, index)
    }
}

pub fn param_name(n_scales: usize, index: usize) -> String {
    if index < n_scales {
        format!("f0_star[{index}]")
    } else {
        format!("sigma_r_star[{}]", index - n_scales)
    }
}

/// Tangents of `(phase, asym)` at one pixel.
#[inline]
fn pixel_tangents(
    even: f64,
    odd_x: f64,
    odd_y: f64,
    d_even: f64,
    d_odd_x: f64,
    d_odd_y: f64,
    epsilon: f64,
) -> (f64, f64) {
    let odd_sq = odd_x * odd_x + odd_y * odd_y;
    let odd = odd_sq.sqrt();
    // |R| is not differentiable at R = 0; its tangent is taken as 0 there
    let d_odd = if odd > 0.0 {
        (odd_x * d_odd_x + odd_y * d_odd_y) / odd
    } else {
        0.0
    };

    let energy_sq = even * even + odd_sq;
    let d_phase = if energy_sq > 0.0 {
        (odd * d_even - even * d_odd) / energy_sq
    } else {
        0.0
    };

    let numer = odd - even.abs();
    let d_asym = if numer > 0.0 {
        let energy = energy_sq.sqrt();
        let denom = energy + epsilon;
        let d_energy = (even * d_even + odd * d_odd) / energy;
        let sign = if even > 0.0 {
            1.0
        } else if even < 0.0 {
            -1.0
        } else {
            0.0
        };
        (d_odd - sign * d_even) / denom - numer * d_energy / (denom * denom)
    } else {
        0.0
    };
    (d_phase, d_asym)
}

/// Tangent of the min-max rescaled field.
fn rescale_tangent(raw: &Field, d_raw: &Field, mode: RescaleGradient) -> Field {
    let data = raw.as_slice();
    let (mut imin, mut imax) = (0, 0);
    for (i, &v) in data.iter().enumerate() {
        if v < data[imin] {
            imin = i;
        }
        if v > data[imax] {
            imax = i;
        }
    }
    let (lo, hi) = (data[imin], data[imax]);
    let range = hi - lo;
    if range.is_nan() || range <= DEGENERATE_RANGE {
        return Field::zeros(raw.height(), raw.width());
    }
    let d = d_raw.as_slice();
    let out = match mode {
        RescaleGradient::StopGradient => d.iter().map(|v| v / range).collect(),
        RescaleGradient::Exact => {
            let (d_lo, d_hi) = (d[imin], d[imax]);
            data.iter()
                .zip(d)
                .map(|(&v, &dv)| {
                    let scaled = (v - lo) / range;
                    (dv - d_lo) / range - scaled * (d_hi - d_lo) / range
                })
                .collect()
        }
    };
    Field::from_vec(raw.height(), raw.width(), out).expect("shape")
}

struct ScaleTangents {
    even: [Field; 2],
    odd_x: [Field; 2],
    odd_y: [Field; 2],
}

impl Mono2d {
    /// Forward pass plus tangents for all `2n` parameters.
    pub fn forward_with_tangents(&self, image: &Field) -> Result<(PhaseFeatures, TangentBundle)> {
        let (spectrum, kernels, plan) = self.spectrum(image)?;
        let (h, w) = image.shape();
        let x = spectrum.values();

        let band: Vec<Complex64> = x.iter().zip(&kernels.band).map(|(x, k)| x * k).collect();
        let triplet = Self::triplet_from_band(&plan, band, &kernels.riesz, (h, w));
        let analysis: Analysis = self.analyze_triplet(triplet);
        let features = self.assemble(&analysis, image, None);

        let tk = kernels.tangent(self.bank());
        let n = self.bank().n_scales();
        let scales: Vec<usize> = (0..n).collect();
        let to_field = |v: Vec<f64>| Field::from_vec(h, w, v).expect("shape");
        let per_scale: Vec<ScaleTangents> = crate::par_map(&scales, |&i| {
            let (ka, kb) = (&tk.d_f0[i], &tk.d_sigma[i]);
            // X*(a + ib) = X*a + i X*b; both terms are hermitian, so the real and
            // imaginary parts of the inverse are the two even tangents
            let mut packed: Vec<Complex64> = x
                .iter()
                .zip(ka)
                .zip(kb)
                .map(|((x, &a), &b)| x * Complex64::new(a, b))
                .collect();
            let mut odd_a: Vec<Complex64> = x
                .iter()
                .zip(ka)
                .zip(&kernels.riesz)
                .map(|((x, &a), r)| x * a * r)
                .collect();
            let mut odd_b: Vec<Complex64> = x
                .iter()
                .zip(kb)
                .zip(&kernels.riesz)
                .map(|((x, &b), r)| x * b * r)
                .collect();
            plan.inverse_in_place(&mut packed);
            plan.inverse_in_place(&mut odd_a);
            plan.inverse_in_place(&mut odd_b);
            ScaleTangents {
                even: [
                    to_field(packed.iter().map(|z| z.re).collect()),
                    to_field(packed.iter().map(|z| z.im).collect()),
                ],
                odd_x: [
                    to_field(odd_a.iter().map(|z| z.re).collect()),
                    to_field(odd_b.iter().map(|z| z.re).collect()),
                ],
                odd_y: [
                    to_field(odd_a.iter().map(|z| z.im).collect()),
                    to_field(odd_b.iter().map(|z| z.im).collect()),
                ],
            }
        });

        let mut d_even = Vec::with_capacity(2 * n);
        let mut d_odd_x = Vec::with_capacity(2 * n);
        let mut d_odd_y = Vec::with_capacity(2 * n);
        for which in 0..2 {
            for st in &per_scale {
                d_even.push(st.even[which].clone());
                d_odd_x.push(st.odd_x[which].clone());
                d_odd_y.push(st.odd_y[which].clone());
            }
        }

        let t = &analysis.triplet;
        let eps = self.epsilon();
        let mut d_phase = Vec::with_capacity(2 * n);
        let mut d_asym = Vec::with_capacity(2 * n);
        for p in 0..2 * n {
            let mut dp = Vec::with_capacity(h * w);
            let mut da = Vec::with_capacity(h * w);
            for k in 0..h * w {
                let (a, b) = pixel_tangents(
                    t.even.as_slice()[k],
                    t.odd_x.as_slice()[k],
                    t.odd_y.as_slice()[k],
                    d_even[p].as_slice()[k],
                    d_odd_x[p].as_slice()[k],
                    d_odd_y[p].as_slice()[k],
                    eps,
                );
                dp.push(a);
                da.push(b);
            }
            d_phase.push(to_field(dp));
            d_asym.push(to_field(da));
        }

        let mode = self.mode();
        let d_channels = (0..2 * n)
            .map(|p| {
                let mut chans = Vec::with_capacity(self.channel_count());
                if mode.has_phase() {
                    chans.push(rescale_tangent(
                        &analysis.phase,
                        &d_phase[p],
                        self.rescale_gradient(),
                    ));
                }
                if mode.has_asym() {
                    chans.push(rescale_tangent(
                        &analysis.asym,
                        &d_asym[p],
                        self.rescale_gradient(),
                    ));
                }
                if self.includes_input() {
                    chans.push(Field::zeros(h, w));
                }
                chans
            })
            .collect();

        let bundle = TangentBundle {
            n_scales: n,
            channel_names: self.channel_names(),
            d_even,
            d_odd_x,
            d_odd_y,
            d_phase,
            d_asym,
            d_channels,
        };
        Ok((features, bundle))
    }
}

/// One-shot [`Mono2d::forward_with_tangents`].
pub fn forward_with_tangents(
    image: &Field,
    bank: &FilterBank,
    lpf: LowPassSpec,
    mode: ChannelMode,
) -> Result<(PhaseFeatures, TangentBundle)> {
    Mono2d::new(bank.clone(), lpf, mode).forward_with_tangents(image)
}

/// Contracts tangents with a per-channel upstream gradient:
/// `g[p] = sum_pixels downstream[c] * d channel_c / dp`.
pub fn grad_of_scalar(bundle: &TangentBundle, downstream: &[Field]) -> Result<Vec<f64>> {
    let channels = bundle.channel_names.len();
    if downstream.len() != channels {
        return Err(Error::InvalidShape(format!(
            "{} upstream gradients for {channels} channels",
            downstream.len()
        )));
    }
    let mut grad = Vec::with_capacity(bundle.n_params());
    for tangents in &bundle.d_channels {
        let mut acc = 0.0;
        for (t, g) in tangents.iter().zip(downstream) {
            if t.shape() != g.shape() {
                return Err(Error::InvalidShape(format!(
                    "upstream gradient is {}x{}, channel is {}x{}",
                    g.height(),
                    g.width(),
                    t.height(),
                    t.width()
                )));
            }
            acc += t
                .as_slice()
                .iter()
                .zip(g.as_slice())
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        grad.push(acc);
    }
    Ok(grad)
}

/// Central difference of `loss(forward(image))` in parameter `param_index`.
pub fn fd_oracle(
    image: &Field,
    bank: &FilterBank,
    lpf: LowPassSpec,
    mode: ChannelMode,
    loss: impl Fn(&PhaseFeatures) -> f64,
    param_index: usize,
    step: f64,
) -> Result<f64> {
    fd_oracle_with(
        &Mono2d::new(bank.clone(), lpf, mode),
        image,
        loss,
        param_index,
        step,
    )
}

/// [`fd_oracle`] honouring the settings (epsilon, extra channels) of `layer`.
pub fn fd_oracle_with(
    layer: &Mono2d,
    image: &Field,
    loss: impl Fn(&PhaseFeatures) -> f64,
    param_index: usize,
    step: f64,
) -> Result<f64> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let bank = layer.bank();
    if param_index >= bank.n_params() {
        return Err(Error::InvalidConfig(format!(
            "parameter index {param_index} out of range for {} parameters",
            bank.n_params()
        )));
    }
    let eval = |delta: f64| -> Result<f64> {
        let shifted = Mono2d::new(
            bank.perturbed(param_index, delta),
            layer.lowpass(),
            layer.mode(),
        )
        .with_epsilon(layer.epsilon())
        .with_input_channel(layer.includes_input());
        Ok(loss(&shifted.forward(image)?))
    };
    Ok((eval(step)? - eval(-step)?) / (2.0 * step))
}

/// Mean of the named channel; the loss used by gradient checks.
pub fn channel_mean(features: &PhaseFeatures, name: &str) -> f64 {
    features.channel(name).map(Field::mean).unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::init_bank;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::from_fn(h, w, |_, _| rng.random::<f64>())
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        let scale = a.abs().max(b.abs());
        if scale <= 1e-8 {
            (a - b).abs() / 1e-8
        } else {
            (a - b).abs() / scale
        }
    }

    #[test]
    fn constant_image_has_zero_tangents() {
        let layer = Mono2d::new(
            init_bank(3, 16, 16, 0).unwrap(),
            LowPassSpec::default(),
            ChannelMode::Both,
        );
        let (_, t) = layer
            .forward_with_tangents(&Field::constant(16, 16, 0.4))
            .unwrap();
        for p in 0..6 {
            assert!(t.d_even[p].max_abs() <= 1e-12);
            assert!(t.d_phase[p].max_abs() <= 1e-12);
            assert!(t.d_channels[p].iter().all(|c| c.max_abs() <= 1e-12));
        }
    }

    #[test]
    fn tangent_forward_matches_plain_forward() {
        let layer = Mono2d::new(
            init_bank(4, 20, 28, 1).unwrap(),
            LowPassSpec::default(),
            ChannelMode::Both,
        );
        let img = random_image(20, 28, 5);
        let (f, t) = layer.forward_with_tangents(&img).unwrap();
        assert_eq!(f, layer.forward(&img).unwrap());
        assert_eq!(t.n_params(), 8);
        assert_eq!(t.d_channels[0].len(), 2);
        assert_eq!(t.param_name(5), "sigma_r_star[1]");
    }

    #[test]
    fn single_scale_gradient_matches_fd() {
        for (seed, mode) in [(3u64, ChannelMode::Phase), (4, ChannelMode::Both)] {
            let bank = init_bank(1, 32, 32, seed).unwrap();
            let layer = Mono2d::new(bank.clone(), LowPassSpec::default(), mode);
            let img = random_image(32, 32, seed + 100);
            let (_, t) = layer.forward_with_tangents(&img).unwrap();
            let up = vec![Field::constant(32, 32, 1.0 / 1024.0); mode.channel_count()];
            let g = grad_of_scalar(&t, &up).unwrap();
            for (p, &analytic) in g.iter().enumerate().take(2) {
                let fd = fd_oracle(
                    &img,
                    &bank,
                    LowPassSpec::default(),
                    mode,
                    |f| f.channels().iter().map(Field::mean).sum(),
                    p,
                    1e-4,
                )
                .unwrap();
                assert!(
                    rel_err(analytic, fd) <= 1e-4,
                    "param {p}: {analytic} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn pre_rescale_tangents_match_fd() {
        let bank = init_bank(3, 24, 24, 9).unwrap();
        let layer = Mono2d::new(bank.clone(), LowPassSpec::default(), ChannelMode::Both);
        let img = random_image(24, 24, 77);
        let (_, t) = layer.forward_with_tangents(&img).unwrap();
        for p in 0..6 {
            let h = 1e-5;
            let plus = Mono2d::new(
                bank.perturbed(p, h),
                LowPassSpec::default(),
                ChannelMode::Both,
            )
            .analyze(&img)
            .unwrap();
            let minus = Mono2d::new(
                bank.perturbed(p, -h),
                LowPassSpec::default(),
                ChannelMode::Both,
            )
            .analyze(&img)
            .unwrap();
            let fd_even: Vec<f64> = plus
                .triplet
                .even
                .as_slice()
                .iter()
                .zip(minus.triplet.even.as_slice())
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect();
            let scale = fd_even.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let err = fd_even
                .iter()
                .zip(t.d_even[p].as_slice())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(
                err <= 1e-6 * scale.max(1e-12),
                "even tangent {p}: {err} vs scale {scale}"
            );
            let fd_phase_sum: f64 = plus
                .phase
                .as_slice()
                .iter()
                .zip(minus.phase.as_slice())
                .map(|(a, b)| (a - b) / (2.0 * h))
                .sum();
            let an_phase_sum: f64 = t.d_phase[p].as_slice().iter().sum();
            assert!(
                rel_err(an_phase_sum, fd_phase_sum) <= 1e-4,
                "phase {p}: {an_phase_sum} vs {fd_phase_sum}"
            );
        }
    }

    #[test]
    fn stop_gradient_matches_fd_of_fixed_statistics() {
        let bank = init_bank(2, 32, 32, 6).unwrap();
        let layer = Mono2d::new(bank.clone(), LowPassSpec::default(), ChannelMode::Phase)
            .with_rescale_gradient(RescaleGradient::StopGradient);
        let img = random_image(32, 32, 12);
        let (_, t) = layer.forward_with_tangents(&img).unwrap();
        let (lo, hi) = layer.analyze(&img).unwrap().phase.min_max();
        let g = grad_of_scalar(&t, &[Field::constant(32, 32, 1.0)]).unwrap();
        for (p, &analytic) in g.iter().enumerate().take(4) {
            let h = 1e-5;
            let sum_at = |d: f64| {
                let a = Mono2d::new(
                    bank.perturbed(p, d),
                    LowPassSpec::default(),
                    ChannelMode::Phase,
                )
                .analyze(&img)
                .unwrap();
                a.phase
                    .as_slice()
                    .iter()
                    .map(|v| (v - lo) / (hi - lo))
                    .sum::<f64>()
            };
            let fd = (sum_at(h) - sum_at(-h)) / (2.0 * h);
            assert!(rel_err(analytic, fd) <= 1e-4, "{p}: {analytic} vs {fd}");
        }
    }

    #[test]
    fn scale_tangents_are_local() {
        // a parameter of scale i leaves the other scales' kernels untouched, so
        // its even tangent equals that of a one-scale bank holding only scale i
        let bank = init_bank(3, 16, 16, 2).unwrap();
        let img = random_image(16, 16, 8);
        let (_, full) = Mono2d::new(bank.clone(), LowPassSpec::default(), ChannelMode::Both)
            .forward_with_tangents(&img)
            .unwrap();
        let only = FilterBank::with_bounds(
            vec![bank.f0_star()[1]],
            vec![bank.sigma_r_star()[1]],
            bank.f0_min(),
            bank.f0_max(),
        )
        .unwrap();
        let (_, single) = Mono2d::new(only, LowPassSpec::default(), ChannelMode::Both)
            .forward_with_tangents(&img)
            .unwrap();
        assert!(full.d_even[1].max_abs_diff(&single.d_even[0]) <= 1e-14);
        assert!(full.d_odd_x[4].max_abs_diff(&single.d_odd_x[1]) <= 1e-14);
        assert!(full.d_odd_y[4].max_abs_diff(&single.d_odd_y[1]) <= 1e-14);
    }

    #[test]
    fn rectifier_blocks_tangent() {
        // even-dominated pixel: numerator clamped, asym tangent exactly 0
        let (_, da) = pixel_tangents(2.0, 0.5, 0.3, 1.0, -3.0, 2.0, 1e-12);
        assert_eq!(da, 0.0);
        let (dp, da) = pixel_tangents(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1e-12);
        assert_eq!((dp, da), (0.0, 0.0));
    }

    #[test]
    fn grad_contraction_properties() {
        let layer = Mono2d::new(
            init_bank(2, 16, 16, 3).unwrap(),
            LowPassSpec::default(),
            ChannelMode::Both,
        );
        let img = random_image(16, 16, 4);
        let (_, t) = layer.forward_with_tangents(&img).unwrap();
        let zero = vec![Field::zeros(16, 16); 2];
        assert!(grad_of_scalar(&t, &zero).unwrap().iter().all(|&v| v == 0.0));
        let g1 = vec![random_image(16, 16, 1), random_image(16, 16, 2)];
        let g2 = vec![random_image(16, 16, 3), random_image(16, 16, 4)];
        let a = 2.5;
        let combo: Vec<Field> = g1
            .iter()
            .zip(&g2)
            .map(|(x, y)| {
                Field::from_vec(
                    16,
                    16,
                    x.as_slice()
                        .iter()
                        .zip(y.as_slice())
                        .map(|(u, v)| a * u + v)
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        let lhs = grad_of_scalar(&t, &combo).unwrap();
        let r1 = grad_of_scalar(&t, &g1).unwrap();
        let r2 = grad_of_scalar(&t, &g2).unwrap();
        for k in 0..4 {
            assert!((lhs[k] - (a * r1[k] + r2[k])).abs() <= 1e-12 * (1.0 + lhs[k].abs()));
        }
        assert!(grad_of_scalar(&t, &g1[..1]).is_err());
        assert!(grad_of_scalar(&t, &[Field::zeros(8, 8), Field::zeros(8, 8)]).is_err());
    }

    #[test]
    fn fd_oracle_argument_checks() {
        let bank = init_bank(1, 8, 8, 0).unwrap();
        let img = random_image(8, 8, 0);
        let lp = LowPassSpec::default();
        assert!(fd_oracle(&img, &bank, lp, ChannelMode::Phase, |_| 0.0, 0, 0.0).is_err());
        assert!(fd_oracle(&img, &bank, lp, ChannelMode::Phase, |_| 0.0, 2, 1e-4).is_err());
        // a loss that ignores the parameters has zero derivative
        assert_eq!(
            fd_oracle(&img, &bank, lp, ChannelMode::Phase, |_| 1.0, 1, 1e-4).unwrap(),
            0.0
        );
    }

    #[test]
    fn fd_oracle_richardson_consistency() {
        let bank = init_bank(2, 24, 24, 4).unwrap();
        let img = random_image(24, 24, 40);
        let lp = LowPassSpec::default();
        let loss = |f: &PhaseFeatures| channel_mean(f, "phase");
        let steps = [1e-3, 5e-4, 2.5e-4, 1e-4, 1e-5];
        let vals: Vec<f64> = steps
            .iter()
            .map(|&s| fd_oracle(&img, &bank, lp, ChannelMode::Phase, loss, 0, s).unwrap())
            .collect();
        // central differences converge at second order; successive halvings shrink the gap
        let d1 = (vals[0] - vals[1]).abs();
        let d2 = (vals[1] - vals[2]).abs();
        assert!(d2 <= d1 * 0.5 + 1e-9, "{vals:?}");
        assert!(rel_err(vals[3], vals[4]) <= 1e-4, "{vals:?}");
    }
}

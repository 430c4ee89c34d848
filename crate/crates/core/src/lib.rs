//! Trainable monogenic feature layer.
//!
//! The layer maps a grayscale image to multi-scale local phase and phase
//! asymmetry channels. Filtering happens in the frequency domain with a
//! Butterworth low-pass, a bank of log-Gabor band-pass filters and the
//! combined Riesz kernel. The log-Gabor centre frequencies and bandwidths are
//! trainable through a bounded sigmoid reparameterisation, and forward-mode
//! tangents give exact gradients with respect to those parameters.
//!
//! ```
//! use mono2d::{ChannelMode, Field, LowPassSpec, Mono2d, init_bank};
//!
//! let bank = init_bank(4, 32, 32, 7).unwrap();
//! let layer = Mono2d::new(bank, LowPassSpec::default(), ChannelMode::Both);
//! let image = Field::from_fn(32, 32, |r, c| ((r * 3 + c) % 7) as f64 / 7.0);
//! let features = layer.forward(&image).unwrap();
//! assert_eq!(features.channels().len(), 2);
//! ```

pub mod autodiff;
#[cfg(feature = "cli")]
pub mod cli;
mod error;
mod field;
pub mod filters;
pub mod gradcheck;
pub mod histogram;
pub mod io;
pub mod kv;
pub mod monogenic;
pub mod params;
pub mod spectral;
pub mod trainer;

pub use autodiff::{fd_oracle, grad_of_scalar, TangentBundle};
pub use error::{Error, Result};
pub use field::Field;
pub use filters::{LogGaborSpec, LowPassSpec};
pub use monogenic::{ChannelMode, Mono2d, MonogenicTriplet, PhaseFeatures};
pub use params::{init_bank, FilterBank};
pub use spectral::{ComplexField, FrequencyGrid};

pub(crate) fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

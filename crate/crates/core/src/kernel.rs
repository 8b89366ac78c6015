//! Discrete, truncated Gaussian kernels.

use num_traits::Float;

use crate::blur::BlurError;

/// Symmetric 1D Gaussian kernel truncated at `ceil(3 * sigma)` and normalized to unit sum.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel<T> {
    sigma: T,
    radius: usize,
    weights: Vec<T>,
}

impl<T: Float> GaussianKernel<T> {
    /// `sigma == 0` yields the identity kernel `[1]`.
    pub fn new(sigma: T) -> Result<Self, BlurError> {
        if sigma.is_nan() || sigma < T::zero() || sigma.is_infinite() {
            return Err(BlurError::InvalidParameter(format!(
                "sigma must be a finite non-negative number, got {}",
                sigma.to_f64().unwrap_or(f64::NAN)
            )));
        }
        if sigma == T::zero() {
            return Ok(Self {
                sigma,
                radius: 0,
                weights: vec![T::one()],
            });
        }
        let three = T::from(3.0).unwrap();
        let radius = (three * sigma).ceil().to_usize().ok_or_else(|| {
            BlurError::InvalidParameter("sigma too large for a finite kernel".into())
        })?;
        let two_var = T::from(2.0).unwrap() * sigma * sigma;
        let mut weights: Vec<T> = (0..=2 * radius)
            .map(|i| {
                let d = T::from(i as f64 - radius as f64).unwrap();
                (-(d * d) / two_var).exp()
            })
            .collect();
        // Sum outward from the tails so the symmetric pairs are added in the same order.
        let mut total = weights[radius];
        for k in (1..=radius).rev() {
            total = total + weights[radius - k] + weights[radius + k];
        }
        for w in &mut weights {
            *w = *w / total;
        }
        Ok(Self {
            sigma,
            radius,
            weights,
        })
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn is_identity(&self) -> bool {
        self.radius == 0
    }
}

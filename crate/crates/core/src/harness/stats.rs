//! Streaming moments with an associative merge, and `(mean, SE)` estimates.

use serde::Serialize;

use crate::scalar::Scalar;

/// Welford accumulator for count, mean and second central sum.
///
/// `merge` uses the pairwise update of Chan et al.; merging partial
/// accumulators agrees with streaming the concatenated data up to floating
/// reassociation, which the tests bound at `1e-12` relative.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MomentAccumulator<T> {
    count: u64,
    mean: T,
    m2: T,
}

impl<T: Scalar> MomentAccumulator<T> {
    pub fn new() -> Self {
        Self { count: 0, mean: T::zero(), m2: T::zero() }
    }

    pub fn push(&mut self, x: T) {
        self.count += 1;
        let n = T::lit(self.count as f64);
        let delta = x - self.mean;
        self.mean += delta / n;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let na = T::lit(self.count as f64);
        let nb = T::lit(other.count as f64);
        let n = na + nb;
        let delta = other.mean - self.mean;
        self.mean += delta * nb / n;
        self.m2 += other.m2 + delta * delta * na * nb / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> T {
        self.mean
    }

    /// Unbiased sample variance (zero for fewer than two samples).
    pub fn variance(&self) -> T {
        if self.count < 2 {
            T::zero()
        } else {
            self.m2 / T::lit((self.count - 1) as f64)
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> T {
        if self.count < 2 {
            T::zero()
        } else {
            (self.variance() / T::lit(self.count as f64)).sqrt()
        }
    }

    pub fn estimate(&self) -> Estimate<T> {
        Estimate { mean: self.mean(), se: self.std_error(), count: self.count }
    }
}

impl<T: Scalar> FromIterator<T> for MomentAccumulator<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        let mut acc = Self::new();
        for x in iter {
            acc.push(x);
        }
        acc
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate<T> {
    pub mean: T,
    pub se: T,
    pub count: u64,
}

impl<T: Scalar> Estimate<T> {
    pub fn exact(value: T) -> Self {
        Self { mean: value, se: T::zero(), count: 0 }
    }

    pub fn of<I: IntoIterator<Item = T>>(samples: I) -> Self {
        samples.into_iter().collect::<MomentAccumulator<T>>().estimate()
    }

    /// `|mean − target| ≤ k·SE`.
    pub fn within(&self, target: T, k: T) -> bool {
        (self.mean - target).abs() <= k * self.se
    }

    /// `|mean − target| / SE`; infinite if SE vanishes and the gap does not.
    pub fn z_score(&self, target: T) -> T {
        let gap = (self.mean - target).abs();
        if gap == T::zero() {
            T::zero()
        } else {
            gap / self.se
        }
    }
}

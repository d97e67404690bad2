use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Central-difference check of an analytic gradient.
///
/// Perturbs sampled coordinates of `x` by ±`h`, compares the numeric slope
/// against `analytic`, and returns the max relative error
/// `|a - n| / max(1e-8, |a| + |n|)`. At least 64 coordinates are checked
/// (all of them when the tensor is small).
pub fn gradcheck<F>(f: F, x: &Tensor3, analytic: &Tensor3, h: f64, seed: u64) -> Result<f64>
where
    F: Fn(&Tensor3) -> Result<f64>,
{
    if !x.same_shape(analytic) {
        return Err(Error::config("analytic gradient shape does not match x"));
    }
    let n = x.len();
    let coords: Vec<usize> = if n <= 256 {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        all.truncate(256);
        all
    };

    let mut max_rel = 0.0f64;
    let mut probe = x.clone();
    for &i in &coords {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + h;
        let fp = f(&probe)?;
        probe.values_mut()[i] = orig - h;
        let fm = f(&probe)?;
        probe.values_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite objective during gradcheck at coordinate {i}"
            )));
        }
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.values()[i];
        let rel = (a - numeric).abs() / 1e-8f64.max(a.abs() + numeric.abs());
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

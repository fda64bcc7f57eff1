//! Parameter initialization.
//!
//! Kaiming-uniform with negative slope `a` draws from U(−bound, bound) where
//! `bound = gain · √(3 / fan_in)` and `gain = √(2 / (1 + a²))`. For `a = √5`
//! the gain is `√(1/3)`, so the bound collapses to `√(1 / fan_in)`.

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Prng};

/// Bound of the Kaiming-uniform distribution with negative slope √5.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    (1.0 / fan_in as f64).sqrt()
}

pub fn kaiming_uniform_init(rows: usize, cols: usize, fan_in: usize, prng: &mut Prng) -> Result<Matrix> {
    if fan_in == 0 {
        return Err(Error::InvalidArgument("fan_in must be at least 1".into()));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot initialize a {rows}x{cols} matrix"
        )));
    }
    let bound = kaiming_bound(fan_in);
    Ok(Matrix::from_fn(rows, cols, |_, _| prng.uniform_open(-bound, bound)))
}

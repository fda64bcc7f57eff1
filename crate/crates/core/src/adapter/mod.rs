//! The low-rank adapter record and its application.
//!
//! An adapter at a site with frozen weight `W0 (d_out × d_in)` carries factors
//! `A (d_out × r)` and `B (d_in × r)` and contributes `(alpha / r) · A Bᵀ x`.
//! Both factors are stored tall; the transpose happens during application.

mod file;

pub use file::{decode, encode, load, save, ADAPTER_MAGIC, ADAPTER_VERSION};

use crate::error::{Error, Result};
use crate::numeric::{kaiming_uniform_init, Matrix, Prng};
use crate::site::AttachmentSite;

#[derive(Clone, Debug, PartialEq)]
pub struct LowRankAdapter {
    name: String,
    site: AttachmentSite,
    alpha: f64,
    dropout_p: f64,
    a: Matrix,
    b: Matrix,
}

/// Whether adapter input dropout is active.
pub enum DeltaMode<'a> {
    Inference,
    Training(&'a mut Prng),
}

impl LowRankAdapter {
    /// Fresh adapter: `A` Kaiming-uniform with `fan_in = d_in`, `B` all zeros.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        name: impl Into<String>,
        site: AttachmentSite,
        d_out: usize,
        d_in: usize,
        r: usize,
        alpha: f64,
        dropout_p: f64,
        prng: &mut Prng,
    ) -> Result<Self> {
        if r == 0 || d_out == 0 || d_in == 0 {
            return Err(Error::InvalidArgument(format!(
                "adapter dims must be positive (d_out={d_out}, d_in={d_in}, r={r})"
            )));
        }
        let a = kaiming_uniform_init(d_out, r, d_in, prng)?;
        let b = Matrix::zeros(d_in, r);
        Self::from_parts(name, site, alpha, dropout_p, a, b)
    }

    pub fn from_parts(
        name: impl Into<String>,
        site: AttachmentSite,
        alpha: f64,
        dropout_p: f64,
        a: Matrix,
        b: Matrix,
    ) -> Result<Self> {
        if a.cols() != b.cols() {
            return Err(Error::Shape {
                op: "adapter factors",
                left: a.shape(),
                right: b.shape(),
            });
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::InvalidArgument(format!(
                "dropout must lie in [0, 1), got {dropout_p}"
            )));
        }
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::NonFinite("adapter factors"));
        }
        Ok(Self {
            name: name.into(),
            site,
            alpha,
            dropout_p,
            a,
            b,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn site(&self) -> AttachmentSite {
        self.site
    }

    pub fn d_out(&self) -> usize {
        self.a.rows()
    }

    pub fn d_in(&self) -> usize {
        self.b.rows()
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout_p
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank() as f64
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Replaces both factors; shapes must not change.
    pub fn set_factors(&mut self, a: Matrix, b: Matrix) -> Result<()> {
        if a.shape() != self.a.shape() || b.shape() != self.b.shape() {
            return Err(Error::Shape {
                op: "set_factors",
                left: self.a.shape(),
                right: a.shape(),
            });
        }
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::NonFinite("set_factors"));
        }
        self.a = a;
        self.b = b;
        Ok(())
    }

    /// `(alpha / r) · A (Bᵀ x)` for `x` of shape `d_in × batch`, never forming `A Bᵀ`.
    pub fn delta_output(&self, x: &Matrix, mode: DeltaMode<'_>) -> Result<Matrix> {
        if x.rows() != self.d_in() {
            return Err(Error::Shape {
                op: "delta_output",
                left: (self.d_out(), self.d_in()),
                right: x.shape(),
            });
        }
        let dropped;
        let input = match mode {
            DeltaMode::Training(prng) if self.dropout_p > 0.0 => {
                let mask = dropout_mask(x.rows(), x.cols(), self.dropout_p, prng);
                dropped = x.hadamard(&mask)?;
                &dropped
            }
            _ => x,
        };
        let projected = self.b.t_matmul(input)?;
        Ok(self.a.matmul(&projected)?.scale(self.scale()))
    }

    /// Dense `A Bᵀ` (unscaled).
    pub fn materialize_delta(&self) -> Matrix {
        self.a
            .matmul_t(&self.b)
            .expect("adapter factors share rank by construction")
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, otherwise `1 / (1 − p)`.
pub fn dropout_mask(rows: usize, cols: usize, p: f64, prng: &mut Prng) -> Matrix {
    let keep = 1.0 / (1.0 - p);
    Matrix::from_fn(rows, cols, |_, _| if prng.bernoulli(p) { 0.0 } else { keep })
}

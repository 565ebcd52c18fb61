//! Minimax concave penalty.
//!
//! `rho(x) = lambda*x - x^2/(2*gamma)` on `[0, gamma*lambda)` and the constant
//! `gamma*lambda^2/2` beyond. The envelope calculus in [`crate::pwq`] consumes
//! the two pieces separately.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pwq::QuadraticPiece;

/// Concavity scale `gamma` and level `lambda` of the MCP.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McpParams {
    gamma: f64,
    lambda: f64,
}

impl McpParams {
    pub fn new(gamma: f64, lambda: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::invalid(format!(
                "lambda must be nonnegative, got {lambda}"
            )));
        }
        Ok(Self { gamma, lambda })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Point `gamma*lambda` where the penalty becomes flat.
    pub fn breakpoint(&self) -> f64 {
        self.gamma * self.lambda
    }

    /// Value of the penalty on `[gamma*lambda, inf)`.
    pub fn saturation(&self) -> f64 {
        0.5 * self.gamma * self.lambda * self.lambda
    }

    /// Same `gamma`, level multiplied by `factor`.
    pub fn scaled_lambda(&self, factor: f64) -> Result<Self> {
        Self::new(self.gamma, self.lambda * factor)
    }

    /// Penalty value for `x >= 0`. Negative input is clamped to zero; use
    /// [`mcp_value`] for the checked version.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        debug_assert!(x >= -1e-12, "mcp evaluated at negative gap {x}");
        let x = x.max(0.0);
        if x >= self.breakpoint() {
            self.saturation()
        } else {
            self.lambda * x - x * x / (2.0 * self.gamma)
        }
    }

    /// Derivative `lambda * (1 - x/(gamma*lambda))_+`.
    pub fn derivative(&self, x: f64) -> f64 {
        if self.lambda == 0.0 {
            return 0.0;
        }
        (self.lambda - x / self.gamma).max(0.0)
    }
}

/// Checked penalty evaluation.
pub fn mcp_value(x: f64, p: &McpParams) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(x));
    }
    Ok(p.eval(x))
}

/// The two interval-restricted pieces whose pointwise minimum is the penalty.
///
/// `concave` is `None` when `gamma*lambda == 0` (the piece would live on an
/// empty interval).
#[derive(Clone, Debug, PartialEq)]
pub struct McpPieces {
    pub concave: Option<QuadraticPiece>,
    pub flat: QuadraticPiece,
}

impl McpPieces {
    /// Minimum over the pieces, treating points outside a piece's interval
    /// as `+inf`.
    pub fn min_at(&self, x: f64) -> f64 {
        let mut best = f64::INFINITY;
        for piece in self.concave.iter().chain(std::iter::once(&self.flat)) {
            if piece.contains(x) {
                best = best.min(piece.eval(x));
            }
        }
        best
    }
}

pub fn mcp_pieces(p: &McpParams) -> McpPieces {
    let bp = p.breakpoint();
    let concave = (bp > 0.0).then(|| {
        QuadraticPiece::new(-1.0 / (2.0 * p.gamma()), p.lambda(), 0.0, 0.0, bp)
    });
    let flat = QuadraticPiece::new(0.0, 0.0, p.saturation(), bp, f64::INFINITY);
    McpPieces { concave, flat }
}

//! Linear ERD regression on the hand-crafted features plus a bias term.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Features, NUM_FEATURES};

pub const RIDGE_LAMBDA: f64 = 1e-8;

/// Weights `θ̂` for `[features..., 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsModel {
    pub theta: Vec<f64>,
}

/// Outcome of [`fit_ls`].
#[derive(Clone, Debug, PartialEq)]
pub struct LsFit {
    pub model: LsModel,
    /// The design was rank deficient and the ridge term was added.
    pub ridge: bool,
    /// Sum of squared training residuals.
    pub residual: f64,
    pub rows: usize,
}

impl LsModel {
    pub fn zeros() -> Self {
        Self {
            theta: vec![0.0; NUM_FEATURES + 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != NUM_FEATURES + 1 {
            return Err(Error::ModelFormat(format!(
                "LS model needs {} weights, found {}",
                NUM_FEATURES + 1,
                self.theta.len()
            )));
        }
        if self.theta.iter().any(|w| !w.is_finite()) {
            return Err(Error::ModelFormat("LS weights must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn predict(&self, x: &Features) -> f64 {
        let mut y = self.theta[NUM_FEATURES];
        for (w, v) in self.theta.iter().zip(x) {
            y += w * v;
        }
        y
    }
}

/// Least-squares fit via the normal equations.
///
/// Falls back to `(VᵀV + λI)θ = Vᵀy` with `λ = 1e-8` when `VᵀV` is
/// numerically singular.
pub fn fit_ls(features: &[Features], targets: &[f64]) -> Result<LsFit> {
    if features.len() != targets.len() {
        return Err(Error::invalid(format!(
            "{} feature rows but {} targets",
            features.len(),
            targets.len()
        )));
    }
    if features.is_empty() {
        return Err(Error::invalid("LS fit needs at least one row"));
    }
    if features.iter().flatten().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::invalid("LS training data must be finite"));
    }
    let p = NUM_FEATURES + 1;
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut row = [1.0; NUM_FEATURES + 1];
    for (x, &y) in features.iter().zip(targets) {
        row[..NUM_FEATURES].copy_from_slice(x);
        for i in 0..p {
            rhs[i] += row[i] * y;
            for j in i..p {
                gram[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
    }

    let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
    let max = eig.iter().cloned().fold(0.0f64, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let singular = max <= 0.0 || min <= max * 1e-12;

    let solve = |m: DMatrix<f64>| m.cholesky().map(|c| c.solve(&rhs));
    let (theta, ridge) = match (singular, solve(gram.clone())) {
        (false, Some(theta)) => (theta, false),
        _ => {
            let damped = gram + DMatrix::identity(p, p) * RIDGE_LAMBDA;
            let theta = solve(damped)
                .ok_or_else(|| Error::Runtime("ridge-regularised LS system is not positive definite".into()))?;
            (theta, true)
        }
    };
    let model = LsModel {
        theta: theta.iter().copied().collect(),
    };
    let residual = features
        .iter()
        .zip(targets)
        .map(|(x, y)| (y - model.predict(x)).powi(2))
        .sum();
    Ok(LsFit {
        model,
        ridge,
        residual,
        rows: features.len(),
    })
}

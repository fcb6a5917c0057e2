//! Linear least squares with an aleatoric/epistemic split.
//!
//! A fitted model's held-out residual combines the irreducible disturbance
//! of the generating process with the reducible error of the coefficient
//! estimate. [`decompose_uncertainty`] reports both parts: the aleatoric
//! variance estimate, and the epistemic excess of the fitted model's
//! held-out mean squared residual over it. The epistemic part shrinks
//! toward zero as the training sample grows.

use nalgebra::{DMatrix, DVector};

/// One regression sample: input vector plus scalar response.
///
/// No intercept is added implicitly; include a constant column in `inputs`
/// when the model needs one.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub inputs: Vec<f64>,
    pub response: f64,
}

impl Observation {
    pub fn new(inputs: Vec<f64>, response: f64) -> Self {
        Observation { inputs, response }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegressionError {
    #[error("need at least {need} samples for input dimension {dim}, got {have}")]
    TooFewSamples {
        have: usize,
        need: usize,
        dim: usize,
    },
    #[error("design matrix is rank deficient")]
    SingularDesign,
    #[error("sample input dimensions are inconsistent")]
    DimensionMismatch,
    #[error("holdout set must be non-empty")]
    EmptyHoldout,
}

/// Variance split produced by [`decompose_uncertainty`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyDecomposition {
    /// Reducible part: held-out MSE of the fit in excess of the aleatoric
    /// estimate, floored at zero.
    pub epistemic: f64,
    /// Irreducible part: residual variance estimate of the generating
    /// process.
    pub aleatoric: f64,
}

fn input_dim(samples: &[Observation]) -> Result<usize, RegressionError> {
    let dim = samples.first().map(|s| s.inputs.len()).unwrap_or(0);
    if samples.iter().any(|s| s.inputs.len() != dim) {
        return Err(RegressionError::DimensionMismatch);
    }
    Ok(dim)
}

/// Ordinary least squares fit. Requires at least two more samples than the
/// input dimension; a rank-deficient design is an error.
pub fn fit_least_squares(samples: &[Observation]) -> Result<Vec<f64>, RegressionError> {
    let dim = input_dim(samples)?;
    let need = dim + 2;
    if samples.len() < need {
        return Err(RegressionError::TooFewSamples {
            have: samples.len(),
            need,
            dim,
        });
    }
    let design = DMatrix::from_fn(samples.len(), dim, |r, c| samples[r].inputs[c]);
    let response = DVector::from_fn(samples.len(), |r, _| samples[r].response);
    let svd = design.svd(true, true);
    let max_singular = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let tol = max_singular * 1e-10 * samples.len().max(dim) as f64;
    if svd.rank(tol) < dim {
        return Err(RegressionError::SingularDesign);
    }
    let solution = svd
        .solve(&response, tol)
        .map_err(|_| RegressionError::SingularDesign)?;
    Ok(solution.iter().copied().collect())
}

/// Mean squared residual of `coefficients` over `samples`.
pub fn mean_squared_residual(samples: &[Observation], coefficients: &[f64]) -> f64 {
    assert!(!samples.is_empty(), "mean squared residual of empty set");
    let sum: f64 = samples
        .iter()
        .map(|s| {
            let predicted: f64 = s.inputs.iter().zip(coefficients).map(|(x, b)| x * b).sum();
            let e = s.response - predicted;
            e * e
        })
        .sum();
    sum / samples.len() as f64
}

/// Fit on `train`, evaluate on `holdout`, and split the held-out error.
///
/// With `true_coefficients` supplied (testing against a known generator) the
/// aleatoric estimate is the mean squared disturbance under the true
/// coefficients over all provided samples, and the epistemic estimate is the
/// fitted model's held-out excess over the true coefficients' held-out MSE.
/// Without them, the aleatoric estimate falls back to the fit's
/// degrees-of-freedom-corrected training residual variance.
pub fn decompose_uncertainty(
    train: &[Observation],
    holdout: &[Observation],
    true_coefficients: Option<&[f64]>,
) -> Result<UncertaintyDecomposition, RegressionError> {
    if holdout.is_empty() {
        return Err(RegressionError::EmptyHoldout);
    }
    let dim = input_dim(train)?;
    if input_dim(holdout)? != dim {
        return Err(RegressionError::DimensionMismatch);
    }
    if let Some(beta) = true_coefficients {
        if beta.len() != dim {
            return Err(RegressionError::DimensionMismatch);
        }
    }
    let fitted = fit_least_squares(train)?;
    let fit_mse = mean_squared_residual(holdout, &fitted);
    let (aleatoric, reference) = match true_coefficients {
        Some(beta) => {
            let mut all = train.to_vec();
            all.extend_from_slice(holdout);
            (
                mean_squared_residual(&all, beta),
                mean_squared_residual(holdout, beta),
            )
        }
        None => {
            let train_mse = mean_squared_residual(train, &fitted);
            let dof = (train.len() - dim) as f64;
            let aleatoric = train_mse * train.len() as f64 / dof;
            (aleatoric, aleatoric)
        }
    };
    Ok(UncertaintyDecomposition {
        epistemic: (fit_mse - reference).max(0.0),
        aleatoric,
    })
}

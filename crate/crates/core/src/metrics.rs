//! Accuracy measures for learned models.

use alloc::vec::Vec;

use thiserror::Error;

use crate::dynamics::{SparseModel, StateBox, VectorField};
use crate::math::norm2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("coefficient vectors differ in length: {0} vs {1}")]
    Length(usize, usize),
    #[error("true coefficients have zero norm")]
    ZeroNorm,
    #[error("term `{0}` has no counterpart in the target library")]
    MissingTerm(alloc::string::String),
}

/// Pointwise `|f_learned(x) - f_true(x)|_2` over a tensor grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridErrors {
    pub resolution: usize,
    pub points: Vec<Vec<f64>>,
    pub errors: Vec<f64>,
    pub max: f64,
    pub mean: f64,
}

pub fn vector_field_error(
    learned: &dyn VectorField,
    truth: &dyn VectorField,
    domain: &StateBox,
    resolution: usize,
) -> Result<GridErrors, MetricsError> {
    let n = learned.n_states();
    if truth.n_states() != n {
        return Err(MetricsError::Dimension(n, truth.n_states()));
    }
    if domain.dim() != n {
        return Err(MetricsError::Dimension(n, domain.dim()));
    }
    let points = domain.grid(resolution);
    let errors: Vec<f64> = points
        .iter()
        .map(|x| {
            let a = learned.eval(x);
            let b = truth.eval(x);
            let d: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
            norm2(&d)
        })
        .collect();
    let max = errors.iter().cloned().fold(0.0, f64::max);
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    Ok(GridErrors { resolution, points, errors, max, mean })
}

/// `|c - c_true|_2 / |c_true|_2` over the stacked coefficient matrix.
pub fn coefficient_error(learned: &[f64], truth: &[f64]) -> Result<f64, MetricsError> {
    if learned.len() != truth.len() {
        return Err(MetricsError::Length(learned.len(), truth.len()));
    }
    let t = norm2(truth);
    if t == 0.0 {
        return Err(MetricsError::ZeroNorm);
    }
    let d: Vec<f64> = learned.iter().zip(truth).map(|(a, b)| a - b).collect();
    Ok(norm2(&d) / t)
}

/// Re-expresses `model` in the library of `target` by matching display
/// names. Nonzero terms without a counterpart are an error.
pub fn align(model: &SparseModel, target: &SparseModel) -> Result<Vec<f64>, MetricsError> {
    let (src, dst) = (model.library(), target.library());
    if src.n_states() != dst.n_states() {
        return Err(MetricsError::Dimension(src.n_states(), dst.n_states()));
    }
    let k = dst.len();
    let mut out = alloc::vec![0.0; src.n_states() * k];
    for (col, f) in src.functions().iter().enumerate() {
        let dest = dst.position(f.kind());
        for i in 0..src.n_states() {
            let c = model.coefficient(i, col);
            if c == 0.0 {
                continue;
            }
            let d = dest.ok_or_else(|| MetricsError::MissingTerm(f.display_name().into()))?;
            out[i * k + d] = c;
        }
    }
    Ok(out)
}

/// Counts of `(state, term)` pairs by agreement with the true support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SupportMatch {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
}

impl SupportMatch {
    pub fn exact(&self) -> bool {
        self.false_positive == 0 && self.false_negative == 0
    }
}

/// Compares supports (`|c| > tol`) of two coefficient vectors in the same
/// layout.
pub fn support_match(learned: &[f64], truth: &[f64], tol: f64) -> Result<SupportMatch, MetricsError> {
    if learned.len() != truth.len() {
        return Err(MetricsError::Length(learned.len(), truth.len()));
    }
    let mut m = SupportMatch::default();
    for (a, b) in learned.iter().zip(truth) {
        match (a.abs() > tol, b.abs() > tol) {
            (true, true) => m.true_positive += 1,
            (true, false) => m.false_positive += 1,
            (false, true) => m.false_negative += 1,
            _ => {}
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_library;
    use crate::dynamics::BuiltinSystem;
    use alloc::vec;

    #[test]
    fn identical_models_have_zero_error() {
        let lib = build_library(2, 2, true);
        let m = BuiltinSystem::Pendulum.true_model(&lib).unwrap();
        let g = vector_field_error(&m, &BuiltinSystem::Pendulum, &StateBox::symmetric(2, 3.0), 50).unwrap();
        assert_eq!(g.errors.len(), 2500);
        assert!(g.max < 1e-15);
        assert_eq!(coefficient_error(m.coefficients(), m.coefficients()), Ok(0.0));
    }

    #[test]
    fn constant_offset_gives_uniform_error() {
        let lib = build_library(2, 2, true);
        let m = BuiltinSystem::Pendulum.true_model(&lib).unwrap();
        let mut c = m.coefficients().to_vec();
        c[0] += 0.1;
        let shifted = SparseModel::new(lib, c).unwrap();
        let g = vector_field_error(&shifted, &m, &StateBox::symmetric(2, 3.0), 7).unwrap();
        assert!(g.errors.iter().all(|e| (e - 0.1).abs() < 1e-12));
        assert!((g.mean - 0.1).abs() < 1e-12);
    }

    #[test]
    fn coefficient_error_examples() {
        let t = [1.0, -2.0, 0.0, 3.0];
        let twice: Vec<f64> = t.iter().map(|v| 2.0 * v).collect();
        assert!((coefficient_error(&twice, &t).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(coefficient_error(&t, &[0.0; 4]), Err(MetricsError::ZeroNorm));
        assert_eq!(coefficient_error(&t, &[0.0; 3]), Err(MetricsError::Length(4, 3)));
    }

    #[test]
    fn alignment_and_support() {
        let small = build_library(2, 1, true);
        let big = build_library(2, 3, false);
        let pend = BuiltinSystem::Pendulum.true_model(&small).unwrap();
        let osc = BuiltinSystem::Oscillator.true_model(&big).unwrap();
        assert!(matches!(align(&pend, &osc), Err(MetricsError::MissingTerm(_))));
        let lin = SparseModel::new(small.clone(), {
            let mut c = vec![0.0; 2 * small.len()];
            c[2] = 1.0;
            c
        })
        .unwrap();
        let moved = align(&lin, &osc).unwrap();
        assert_eq!(moved[big.position_by_name("x2").unwrap()], 1.0);
        let s = support_match(&moved, osc.coefficients(), 1e-8).unwrap();
        assert_eq!(s, SupportMatch { true_positive: 1, false_positive: 0, false_negative: 5 });
        assert!(!s.exact());
    }
}

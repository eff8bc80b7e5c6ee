//! Central finite-difference verification of analytic gradients.

use crate::error::{contract_err, Result};
use crate::tensor::Tensor;
use crate::Real;

#[derive(Debug, Clone)]
pub struct InputCheck {
    pub index: usize,
    pub shape: Vec<usize>,
    /// ‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂). Falls back to
    /// the absolute norm when both gradients vanish.
    pub rel_err: Real,
    pub max_abs_err: Real,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub inputs: Vec<InputCheck>,
}

impl GradCheckReport {
    pub fn worst_rel_err(&self) -> Real {
        self.inputs.iter().map(|c| c.rel_err).fold(0.0, Real::max)
    }

    pub fn passes(&self, tol: Real) -> bool {
        self.inputs
            .iter()
            .all(|c| c.rel_err.is_finite() && c.rel_err < tol)
    }
}

pub fn relative_error(analytic: &[Real], numeric: &[Real]) -> Real {
    let norm = |v: &[Real]| v.iter().map(|x| x * x).sum::<Real>().sqrt();
    let diff: Vec<Real> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let denom = norm(analytic).max(norm(numeric));
    if denom < 1e-10 {
        norm(&diff)
    } else {
        norm(&diff) / denom
    }
}

/// Compares the backward pass of `f` against central differences with step
/// `h` for every element of every input. `f` must return a scalar.
pub fn check<F>(f: F, inputs: &[Tensor], h: Real) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = inputs.iter().map(|t| t.detach().requires_grad_()).collect();
    let root = f(&leaves)?;
    if root.rank() != 0 {
        return Err(contract_err!(
            "gradcheck function must return a scalar, got {:?}",
            root.shape()
        ));
    }
    root.backward()?;

    let mut base: Vec<Tensor> = inputs.iter().map(|t| t.detach()).collect();
    let mut reports = Vec::with_capacity(inputs.len());
    for (idx, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let original = base[idx].to_vec();
        let mut numeric = vec![0.0; original.len()];
        for j in 0..original.len() {
            let mut eval_at = |v: Real| -> Result<Real> {
                let mut d = original.clone();
                d[j] = v;
                base[idx] = Tensor::new(d, leaf.shape())?;
                f(&base)?.item()
            };
            let plus = eval_at(original[j] + h)?;
            let minus = eval_at(original[j] - h)?;
            numeric[j] = (plus - minus) / (2.0 * h);
        }
        base[idx] = Tensor::new(original, leaf.shape())?;
        let max_abs_err = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, Real::max);
        reports.push(InputCheck {
            index: idx,
            shape: leaf.shape().to_vec(),
            rel_err: relative_error(&analytic, &numeric),
            max_abs_err,
        });
    }
    Ok(GradCheckReport { inputs: reports })
}

//! Matrix-free preconditioned conjugate gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Relative preconditioned residual at which iteration stops.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 10_000,
        }
    }
}

/// Convergence record of one solve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Final relative preconditioned residual.
    pub residual: f64,
    /// Final relative residual ‖b − Ax‖ / ‖b‖.
    pub plain_residual: f64,
    pub history: Vec<f64>,
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` for symmetric positive (semi)definite `A` given as a
/// closure, starting from the contents of `x`. The preconditioner must be
/// symmetric positive on the range of `A`.
pub fn pcg(
    label: &str,
    mut apply: impl FnMut(&[f64], &mut [f64]),
    mut precondition: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    settings: &SolverSettings,
) -> Result<SolveReport> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveReport::default());
    }
    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    apply(x, &mut ap);
    for i in 0..n {
        r[i] = b[i] - ap[i];
    }
    let mut z = vec![0.0; n];
    precondition(b, &mut z);
    let bz = dot(b, &z);
    if bz <= 0.0 {
        return Err(Error::SingularSystem(format!(
            "{label}: right-hand side lies in the preconditioner null space"
        )));
    }
    let scale = bz.sqrt();
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut history = Vec::new();
    let mut residual = rz.max(0.0).sqrt() / scale;
    history.push(residual);
    let mut iterations = 0;
    while residual > settings.tolerance {
        if iterations >= settings.max_iterations {
            return Err(Error::Convergence {
                label: label.to_string(),
                iterations,
                residual,
                history,
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::SingularSystem(format!(
                "{label}: operator not positive along search direction (pAp = {pap:e})"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_new;
        residual = rz.max(0.0).sqrt() / scale;
        history.push(residual);
        iterations += 1;
    }
    apply(x, &mut ap);
    let plain = b
        .iter()
        .zip(&ap)
        .map(|(bi, ai)| (bi - ai).powi(2))
        .sum::<f64>()
        .sqrt()
        / bnorm;
    Ok(SolveReport {
        iterations,
        residual,
        plain_residual: plain,
        history,
    })
}

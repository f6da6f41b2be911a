//! Fourier-Galerkin gradient and its adjoint on the midpoint grid.

use rustfft::num_complex::Complex64;

use crate::torus::Spectral;

/// Gradient of a `c`-component field: component `c*dim + a` holds ∂_a u_c.
pub(crate) fn gradient(sp: &Spectral, u: &[f64], c: usize) -> Vec<f64> {
    let grid = sp.grid();
    let npts = grid.len();
    let mut out = Vec::with_capacity(c * grid.dim * npts);
    for comp in 0..c {
        let hat = sp.forward_real(&u[comp * npts..(comp + 1) * npts]);
        for g in sp.gradient_from_spectrum(&hat) {
            out.extend(g);
        }
    }
    out
}

/// Adjoint of [`gradient`] for the mean inner product, i.e. −div.
pub(crate) fn gradient_adjoint(sp: &Spectral, q: &[f64], c: usize) -> Vec<f64> {
    let grid = sp.grid();
    let npts = grid.len();
    let dim = grid.dim;
    let mut xi = vec![0.0; dim];
    let mut out = Vec::with_capacity(c * npts);
    for comp in 0..c {
        let mut acc = vec![Complex64::default(); npts];
        for a in 0..dim {
            let start = (comp * dim + a) * npts;
            let hat = sp.forward_real(&q[start..start + npts]);
            for (idx, (s, h)) in acc.iter_mut().zip(&hat).enumerate() {
                sp.wavevector(idx, &mut xi);
                *s += h * Complex64::new(0.0, -xi[a]);
            }
        }
        out.extend(sp.inverse_real(acc));
    }
    out
}

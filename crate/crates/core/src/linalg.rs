//! Small dense helpers shared by the solvers.

use crate::model::{CMatrix, CVector};

/// Largest eigenvalue of `A^H A` (equal to that of `A A^H`), from a Hermitian
/// eigendecomposition of whichever Gram matrix is smaller.
pub fn lambda_max_gram(a: &CMatrix) -> f64 {
    let gram = if a.nrows() <= a.ncols() {
        a * a.adjoint()
    } else {
        a.adjoint() * a
    };
    gram.symmetric_eigenvalues().iter().cloned().fold(0.0, f64::max)
}

pub fn is_finite(v: &CVector) -> bool {
    v.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

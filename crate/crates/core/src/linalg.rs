//! Symmetric 3x3 eigendecomposition by cyclic Jacobi rotations.

use crate::{Mat3, Vec3};

const MAX_SWEEPS: usize = 64;
const OFF_DIAGONAL_TOL: f64 = 1e-12;

/// Eigenvalues in ascending order with matching unit eigenvectors as columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymEigen {
    pub values: [f64; 3],
    pub vectors: Mat3,
}

impl SymEigen {
    pub fn vector(&self, i: usize) -> Vec3 {
        self.vectors.column(i).into_owned()
    }

    /// `Q diag(values) Q^T`.
    pub fn reconstruct(&self) -> Mat3 {
        self.vectors * Mat3::from_diagonal(&Vec3::from(self.values)) * self.vectors.transpose()
    }
}

fn off_diagonal(a: &Mat3) -> f64 {
    (a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2)).sqrt()
}

/// Decomposes a symmetric matrix (only the upper triangle is read). Rotations are
/// applied in the fixed order (0,1), (0,2), (1,2) so results are deterministic; each
/// eigenvector is signed so that its largest-magnitude component is positive.
pub fn sym_eigen(m: &Mat3) -> SymEigen {
    let mut a = Mat3::new(
        m[(0, 0)],
        m[(0, 1)],
        m[(0, 2)],
        m[(0, 1)],
        m[(1, 1)],
        m[(1, 2)],
        m[(0, 2)],
        m[(1, 2)],
        m[(2, 2)],
    );
    let mut v = Mat3::identity();
    let scale = a.norm();
    if scale > 0.0 && scale.is_finite() {
        for _ in 0..MAX_SWEEPS {
            if off_diagonal(&a) <= OFF_DIAGONAL_TOL * scale {
                break;
            }
            for (p, q) in [(0, 1), (0, 2), (1, 2)] {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let mut rot = Mat3::identity();
                rot[(p, p)] = c;
                rot[(q, q)] = c;
                rot[(p, q)] = s;
                rot[(q, p)] = -s;
                a = rot.transpose() * a * rot;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                v *= rot;
            }
        }
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]).then(i.cmp(&j)));
    let values = order.map(|i| a[(i, i)]);
    let mut vectors = Mat3::zeros();
    for (slot, &src) in order.iter().enumerate() {
        let mut col: Vec3 = v.column(src).into_owned();
        let lead = col.iamax();
        if col[lead] < 0.0 {
            col = -col;
        }
        vectors.set_column(slot, &col);
    }
    SymEigen { values, vectors }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn diagonal_matrices() {
        let e = sym_eigen(&Mat3::from_diagonal(&Vec3::new(2.0, 2.0, -2.0)));
        assert_eq!(e.values, [-2.0, 2.0, 2.0]);
        assert_eq!(e.vector(0), Vec3::z());
        let e = sym_eigen(&Mat3::from_diagonal(&Vec3::new(-1.0, -2.0, 3.0)));
        assert_eq!(e.values, [-2.0, -1.0, 3.0]);
        let e = sym_eigen(&Mat3::identity());
        assert_eq!(e.values, [1.0; 3]);
        let e = sym_eigen(&Mat3::zeros());
        assert_eq!(e.values, [0.0; 3]);
    }

    #[test]
    fn repeated_eigenvalues_stay_accurate() {
        let q = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 0.7).into_inner();
        let m = q * Mat3::from_diagonal(&Vec3::new(1.0, 1.0 + 1e-9, 5.0)) * q.transpose();
        let e = sym_eigen(&m);
        assert!((e.reconstruct() - m).norm() < 1e-13);
        assert!((e.values[0] - 1.0).abs() < 1e-13);
        assert!((e.values[2] - 5.0).abs() < 1e-13);
    }

    proptest! {
        #[test]
        fn decomposition_invariants(entries in prop::array::uniform6(-10.0f64..10.0)) {
            let [a, b, c, d, e, f] = entries;
            let m = Mat3::new(a, b, c, b, d, e, c, e, f);
            let eig = sym_eigen(&m);
            prop_assert!(eig.values[0] <= eig.values[1] && eig.values[1] <= eig.values[2]);
            let qtq = eig.vectors.transpose() * eig.vectors;
            prop_assert!((qtq - Mat3::identity()).abs().max() < 1e-10);
            prop_assert!((eig.reconstruct() - m).norm() <= 1e-8 * m.norm().max(1e-300));
            for i in 0..3 {
                let col = eig.vector(i);
                prop_assert!(col[col.iamax()] > 0.0);
            }
        }
    }
}

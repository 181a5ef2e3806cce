//! Numerics for quantum causal networks: labeled tensor operators, comb and
//! tester validation, and SDP-backed divergence and score estimators.

pub mod entropy;
pub mod hypotest;
pub mod network;
pub mod performance;
pub mod sdp;
pub mod tensorspace;

#[cfg(test)]
mod spike {
    use nalgebra::{DMatrix, DVector};
    use num_complex::Complex64 as C64;

    #[test]
    fn nalgebra_hermitian_eigen_and_qr_work_for_complex() {
        // Hermitian 3x3 with known spectrum via conjugation.
        let d = DVector::from_vec(vec![1.0f64, 2.0, 5.0]);
        let g = DMatrix::from_fn(3, 3, |i, j| C64::new((i + 2 * j) as f64, (i as f64) - (j as f64)));
        let qr = g.qr();
        let q = qr.q();
        let mut a = DMatrix::zeros(3, 3);
        for k in 0..3 {
            let col = q.column(k);
            for i in 0..3 {
                for j in 0..3 {
                    a[(i, j)] += col[i] * col[j].conj() * C64::new(d[k], 0.0);
                }
            }
        }
        let se = a.clone().symmetric_eigen();
        let mut eigs: Vec<f64> = se.eigenvalues.iter().cloned().collect();
        eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((eigs[0] - 1.0).abs() < 1e-10, "{eigs:?}");
        assert!((eigs[1] - 2.0).abs() < 1e-10, "{eigs:?}");
        assert!((eigs[2] - 5.0).abs() < 1e-10, "{eigs:?}");
        // Reconstruction.
        let v = &se.eigenvectors;
        let recon: DMatrix<C64> =
            v * DMatrix::from_diagonal(&se.eigenvalues.map(|x| C64::new(x, 0.0))) * v.adjoint();
        assert!((recon - a).norm() < 1e-10);
        // Q unitary.
        let qq = q.adjoint() * &q;
        assert!((qq - DMatrix::identity(3, 3)).norm() < 1e-10);
    }
}

//! Reproducing-kernel evaluation and spectral matrix algebra.
//!
//! The built-in kernel is the Bernoulli-polynomial reproducing kernel of the
//! Sobolev space `W^{2,2}` on `[0,1]`,
//!
//! ```text
//! K(x,y) = 1 + k1(x)k1(y) + k2(x)k2(y) - k4(|x-y|)
//! ```
//!
//! with `k1(x) = x - 1/2`, `k2(x) = (k1(x)^2 - 1/12)/2` and
//! `k4(x) = (k1(x)^4 - k1(x)^2/2 + 7/240)/24`. Everything downstream only
//! needs the Gram matrix on the sampling grid together with its symmetric
//! square root and pseudo-inverse square root, both provided here.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named reproducing kernel on `[0,1] x [0,1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelSpec {
    /// Bernoulli-polynomial kernel of `W^{2,2}` (no parameters).
    #[default]
    SobolevBernoulli,
}

fn k1(x: f64) -> f64 {
    x - 0.5
}

fn k2(x: f64) -> f64 {
    0.5 * (k1(x) * k1(x) - 1.0 / 12.0)
}

fn k4(x: f64) -> f64 {
    let t = k1(x);
    let t2 = t * t;
    (t2 * t2 - 0.5 * t2 + 7.0 / 240.0) / 24.0
}

/// Evaluates the kernel at a pair of points in `[0,1]`.
///
/// Symmetric in its arguments by construction.
pub fn eval_kernel(spec: KernelSpec, x: f64, y: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
        return Err(Error::invalid(format!(
            "kernel arguments must lie in [0,1], got ({x}, {y})"
        )));
    }
    match spec {
        KernelSpec::SobolevBernoulli => {
            Ok(1.0 + k1(x) * k1(y) + k2(x) * k2(y) - k4((x - y).abs()))
        }
    }
}

/// Gram matrix `K[i][j] = K(s_i, s_j)` on a grid, symmetrized after fill.
pub fn gram_matrix(spec: KernelSpec, grid: &[f64]) -> Result<DMatrix<f64>> {
    if grid.is_empty() {
        return Err(Error::invalid("gram_matrix requires a non-empty grid"));
    }
    let n = grid.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] = eval_kernel(spec, grid[i], grid[j])?;
        }
    }
    // (K + K^T)/2 guarantees a real symmetric eigendecomposition downstream.
    let kt = k.transpose();
    Ok((k + kt) * 0.5)
}

/// Symmetric square root and pseudo-inverse square root of a PSD matrix.
#[derive(Clone, Debug)]
pub struct SpectralFactor {
    /// `K^{1/2}` with eigenvalues clamped at the floor.
    pub sqrt: DMatrix<f64>,
    /// Pseudo-inverse square root `K^{-1/2}`; floored eigenvalues are dropped.
    pub inv_sqrt: DMatrix<f64>,
    /// The absolute eigenvalue floor that was applied.
    pub eigen_floor: f64,
}

/// Default relative eigenvalue floor for [`spectral_sqrt`].
pub const DEFAULT_FLOOR_RATIO: f64 = 1e-12;

/// Eigendecomposes a symmetric PSD matrix and returns its square-root factors.
///
/// Eigenvalues below `floor_ratio * max(e)` are clamped to the floor for the
/// square root and treated as zero for the pseudo-inverse square root, so the
/// factor pair stays usable on numerically rank-deficient Gram matrices.
pub fn spectral_sqrt(k: &DMatrix<f64>, floor_ratio: f64) -> Result<SpectralFactor> {
    if !k.is_square() {
        return Err(Error::invalid("spectral_sqrt requires a square matrix"));
    }
    if !(floor_ratio > 0.0) {
        return Err(Error::invalid("floor_ratio must be positive"));
    }
    let max_abs = k.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sym_tol = 1e-10 * max_abs.max(1.0);
    let asym = (k - k.transpose()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if asym > sym_tol {
        return Err(Error::invalid(format!(
            "matrix is not symmetric (max |K - K^T| = {asym:.3e})"
        )));
    }

    let sym = (k + k.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let e_max = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
    let floor = floor_ratio * e_max;

    let n = k.nrows();
    let mut sqrt_e = DMatrix::zeros(n, n);
    let mut inv_e = DMatrix::zeros(n, n);
    for i in 0..n {
        let e = eig.eigenvalues[i];
        sqrt_e[(i, i)] = e.max(floor).max(0.0).sqrt();
        inv_e[(i, i)] = if e > 0.0 && e >= floor { 1.0 / e.sqrt() } else { 0.0 };
    }
    let v = &eig.eigenvectors;
    let sqrt = v * sqrt_e * v.transpose();
    let inv_sqrt = v * inv_e * v.transpose();
    Ok(SpectralFactor {
        sqrt: symmetrize(sqrt),
        inv_sqrt: symmetrize(inv_sqrt),
        eigen_floor: floor,
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let mt = m.transpose();
    (m + mt) * 0.5
}

/// Nuclear norm of the operator induced by coefficient matrix `R`, i.e. the
/// sum of singular values of `K^{1/2} R K^{1/2}`.
pub fn operator_nuclear_norm(r: &DMatrix<f64>, factor: &SpectralFactor) -> Result<f64> {
    let n = factor.sqrt.nrows();
    if r.nrows() != n || r.ncols() != n {
        return Err(Error::invalid(format!(
            "coefficient matrix is {}x{}, factor is {}x{}",
            r.nrows(),
            r.ncols(),
            n,
            n
        )));
    }
    let m = &factor.sqrt * r * &factor.sqrt;
    Ok(m.singular_values().iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    // Independent oracle: the same kernel written with the standard Bernoulli
    // polynomials B1, B2, B4 instead of the nested k1/k2/k4 forms.
    fn bernoulli_kernel(x: f64, y: f64) -> f64 {
        let b1 = |t: f64| t - 0.5;
        let b2 = |t: f64| t * t - t + 1.0 / 6.0;
        let b4 = |t: f64| t.powi(4) - 2.0 * t.powi(3) + t * t - 1.0 / 30.0;
        let d = (x - y).abs();
        1.0 + b1(x) * b1(y) + b2(x) * b2(y) / 4.0 - b4(d) / 24.0
    }

    #[test]
    fn closed_form_values() {
        // Hand-derived: K(.5,.5) = 1 + 1/576 + 1/720, K(0,0) = 5/4 + 1/144 + 1/720,
        // K(0,1) = 3/4 + 1/144 + 1/720.
        let spec = KernelSpec::SobolevBernoulli;
        let cases = [
            (0.5, 0.5, 1.0 + 1.0 / 576.0 + 1.0 / 720.0),
            (0.0, 0.0, 1.25 + 1.0 / 144.0 + 1.0 / 720.0),
            (0.0, 1.0, 0.75 + 1.0 / 144.0 + 1.0 / 720.0),
        ];
        for (x, y, expect) in cases {
            let got = eval_kernel(spec, x, y).unwrap();
            assert_relative_eq!(got, expect, max_relative = 1e-14);
            assert_relative_eq!(got, bernoulli_kernel(x, y), max_relative = 1e-13);
        }
    }

    #[test]
    fn matches_bernoulli_oracle_on_random_pairs() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..200 {
            let x: f64 = rng.gen();
            let y: f64 = rng.gen();
            let got = eval_kernel(KernelSpec::SobolevBernoulli, x, y).unwrap();
            assert_relative_eq!(got, bernoulli_kernel(x, y), max_relative = 1e-12);
        }
    }

    #[test]
    fn symmetric_exactly() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let x: f64 = rng.gen();
            let y: f64 = rng.gen();
            let a = eval_kernel(KernelSpec::SobolevBernoulli, x, y).unwrap();
            let b = eval_kernel(KernelSpec::SobolevBernoulli, y, x).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn diagonal_bounded() {
        let sup = (0..=1000)
            .map(|i| {
                let r = i as f64 / 1000.0;
                eval_kernel(KernelSpec::SobolevBernoulli, r, r).unwrap()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(sup <= 1.26, "sup K(r,r) = {sup}");
    }

    #[test]
    fn rejects_out_of_domain() {
        assert!(eval_kernel(KernelSpec::SobolevBernoulli, -0.1, 0.5).is_err());
        assert!(eval_kernel(KernelSpec::SobolevBernoulli, 0.5, 1.5).is_err());
    }

    #[test]
    fn gram_single_point() {
        let k = gram_matrix(KernelSpec::SobolevBernoulli, &[0.5]).unwrap();
        assert_relative_eq!(k[(0, 0)], 1.0 + 1.0 / 576.0 + 1.0 / 720.0, max_relative = 1e-14);
    }

    #[test]
    fn gram_empty_rejected() {
        assert!(gram_matrix(KernelSpec::SobolevBernoulli, &[]).is_err());
    }

    #[test]
    fn gram_symmetric_and_psd() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for &n in &[5usize, 20, 60, 100] {
            let mut grid: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
            grid.dedup();
            let k = gram_matrix(KernelSpec::SobolevBernoulli, &grid).unwrap();
            assert_eq!(k, k.transpose());
            let eig = SymmetricEigen::new(k.clone());
            let max_e = eig.eigenvalues.iter().fold(f64::MIN, |m, &v| m.max(v));
            let min_e = eig.eigenvalues.iter().fold(f64::MAX, |m, &v| m.min(v));
            assert!(min_e >= -1e-10 * max_e, "n={n}: min {min_e}, max {max_e}");
        }
    }

    #[test]
    fn gram_midpoint20_psd() {
        let grid: Vec<f64> = (0..20).map(|i| (i as f64 + 0.5) / 20.0).collect();
        let k = gram_matrix(KernelSpec::SobolevBernoulli, &grid).unwrap();
        let eig = SymmetricEigen::new(k);
        let max_e = eig.eigenvalues.iter().fold(f64::MIN, |m, &v| m.max(v));
        let min_e = eig.eigenvalues.iter().fold(f64::MAX, |m, &v| m.min(v));
        assert!(min_e >= -1e-10 * max_e);
    }

    #[test]
    fn sqrt_of_identity() {
        let k = DMatrix::<f64>::identity(2, 2);
        let f = spectral_sqrt(&k, DEFAULT_FLOOR_RATIO).unwrap();
        assert_relative_eq!(f.sqrt, DMatrix::identity(2, 2), epsilon = 1e-12);
        assert_relative_eq!(f.inv_sqrt, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn sqrt_diagonal_pseudo_inverse() {
        let k = DMatrix::from_diagonal(&nalgebra::dvector![4.0, 0.0]);
        let f = spectral_sqrt(&k, 1e-12).unwrap();
        let floor: f64 = 1e-12 * 4.0;
        assert_relative_eq!(f.sqrt[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(f.sqrt[(1, 1)], floor.sqrt(), epsilon = 1e-18);
        assert_relative_eq!(f.inv_sqrt[(0, 0)], 0.5, epsilon = 1e-12);
        assert_eq!(f.inv_sqrt[(1, 1)], 0.0);
        assert_relative_eq!(f.eigen_floor, floor, max_relative = 1e-12);
    }

    fn random_psd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
        a.transpose() * a
    }

    #[test]
    fn sqrt_reconstructs() {
        let k = random_psd(10, 21);
        let f = spectral_sqrt(&k, DEFAULT_FLOOR_RATIO).unwrap();
        let err = (&f.sqrt * &f.sqrt - &k).norm() / k.norm();
        assert!(err < 1e-8, "reconstruction error {err}");
    }

    #[test]
    fn sqrt_inv_sqrt_is_projector() {
        let k = random_psd(8, 33);
        let f = spectral_sqrt(&k, DEFAULT_FLOOR_RATIO).unwrap();
        let p = &f.sqrt * &f.inv_sqrt;
        let err = (&p * &p - &p).norm();
        assert!(err < 1e-8, "projector residual {err}");
    }

    #[test]
    fn rejects_asymmetric() {
        let mut k = DMatrix::<f64>::identity(3, 3);
        k[(0, 1)] = 1e-6;
        assert!(spectral_sqrt(&k, 1e-12).is_err());
    }

    #[test]
    fn nuclear_norm_zero_operator() {
        let k = random_psd(6, 5);
        let f = spectral_sqrt(&k, DEFAULT_FLOOR_RATIO).unwrap();
        let r = DMatrix::zeros(6, 6);
        assert_eq!(operator_nuclear_norm(&r, &f).unwrap(), 0.0);
    }

    #[test]
    fn nuclear_norm_identity_factor() {
        // K = I, R with singular values {2, 1} -> nuclear norm 3.
        let k = DMatrix::<f64>::identity(2, 2);
        let f = spectral_sqrt(&k, DEFAULT_FLOOR_RATIO).unwrap();
        let r = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        assert_relative_eq!(operator_nuclear_norm(&r, &f).unwrap(), 3.0, epsilon = 1e-10);
    }

    #[test]
    fn nuclear_norm_dimension_mismatch() {
        let k = DMatrix::<f64>::identity(3, 3);
        let f = spectral_sqrt(&k, DEFAULT_FLOOR_RATIO).unwrap();
        let r = DMatrix::zeros(2, 2);
        assert!(operator_nuclear_norm(&r, &f).is_err());
    }

    #[test]
    fn nuclear_norm_routes_agree() {
        // Three routes: SVD of K^{1/2} R K^{1/2}, eigenvalues of the
        // unsymmetrized product R^T K R K, and the trace of the principal
        // square root of K^{1/2} R^T K R K^{1/2}.
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        for case in 0..10 {
            let n = 6;
            let k = random_psd(n, 100 + case);
            let f = spectral_sqrt(&k, DEFAULT_FLOOR_RATIO).unwrap();
            let r = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);

            let via_svd = operator_nuclear_norm(&r, &f).unwrap();

            let prod = r.transpose() * &k * &r * &k;
            let via_eig: f64 = prod
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm().sqrt())
                .sum();

            let sym = &f.sqrt * r.transpose() * &k * &r * &f.sqrt;
            let eig = SymmetricEigen::new(symmetrize(sym));
            let via_trace_sqrt: f64 =
                eig.eigenvalues.iter().map(|&e| e.max(0.0).sqrt()).sum();

            assert_relative_eq!(via_svd, via_eig, epsilon = 1e-8, max_relative = 1e-8);
            assert_relative_eq!(via_svd, via_trace_sqrt, epsilon = 1e-8, max_relative = 1e-8);
        }
    }
}

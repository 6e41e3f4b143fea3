//! Small dense matrix kernels.
//!
//! Everything here targets the n <= 8 matrices of this model (state dimension
//! 2 or 4, augmented systems up to 8), so plain O(n^3) loops are used
//! throughout. No attempt is made at a general linear-algebra layer.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::Error;
use crate::Result;

/// Frobenius norm.
pub fn fro_norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Max column sum of absolute values (1-norm), used for exponential scaling.
fn one_norm(a: &Array2<f64>) -> f64 {
    let (n, m) = a.dim();
    let mut best = 0.0f64;
    for j in 0..m {
        let mut s = 0.0;
        for i in 0..n {
            s += a[[i, j]].abs();
        }
        best = best.max(s);
    }
    best
}

/// Pade(13) coefficients for the matrix exponential
/// (Higham 2005, "The Scaling and Squaring Method ... Revisited").
const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// Norm threshold above which scaling kicks in, from Higham's Table 10.2.
const THETA13: f64 = 5.371_920_351_148_152;

/// Matrix exponential by scaling-and-squaring with a Pade(13) approximant.
///
/// Relative accuracy is at the 1e-13 level for the mildly non-normal
/// matrices arising here; exp(0) = I exactly.
pub fn expm(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm requires a square matrix");

    let norm = one_norm(a);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as u32
    } else {
        0
    };
    let a_scaled = a / f64::powi(2.0, squarings as i32);

    let eye = Array2::<f64>::eye(n);
    let a2 = a_scaled.dot(&a_scaled);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);

    let w1 = &a6 * PADE13[13] + &a4 * PADE13[11] + &a2 * PADE13[9];
    let w2 = w1.dot(&a6) + &a6 * PADE13[7] + &a4 * PADE13[5] + &a2 * PADE13[3] + &eye * PADE13[1];
    let u = a_scaled.dot(&w2);

    let v1 = &a6 * PADE13[12] + &a4 * PADE13[10] + &a2 * PADE13[8];
    let v = v1.dot(&a6) + &a6 * PADE13[6] + &a4 * PADE13[4] + &a2 * PADE13[2] + &eye * PADE13[0];

    let num = &v + &u;
    let den = &v - &u;
    let mut result = lu_solve(&den, &num).expect("Pade denominator is singular");

    for _ in 0..squarings {
        result = result.dot(&result);
    }
    result
}

/// Solve A X = B by Gaussian elimination with partial pivoting.
pub fn lu_solve(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "lu_solve requires a square matrix");
    assert_eq!(n, b.nrows(), "right-hand side has wrong row count");
    let m = b.ncols();

    let mut aug = Array2::<f64>::zeros((n, n + m));
    for i in 0..n {
        for j in 0..n {
            aug[[i, j]] = a[[i, j]];
        }
        for j in 0..m {
            aug[[i, n + j]] = b[[i, j]];
        }
    }

    let scale = one_norm(a).max(f64::MIN_POSITIVE);
    for col in 0..n {
        let mut max_val = 0.0;
        let mut max_row = col;
        for row in col..n {
            let v = aug[[row, col]].abs();
            if v > max_val {
                max_val = v;
                max_row = row;
            }
        }
        if max_val < 1e-14 * scale {
            return Err(Error::Numerical(format!(
                "singular system in lu_solve (pivot {max_val:.3e} at column {col})"
            )));
        }
        if max_row != col {
            for j in 0..(n + m) {
                aug.swap([col, j], [max_row, j]);
            }
        }
        let pivot = aug[[col, col]];
        for row in (col + 1)..n {
            let factor = aug[[row, col]] / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in col..(n + m) {
                let v = aug[[col, j]];
                aug[[row, j]] -= factor * v;
            }
        }
    }

    let mut x = Array2::<f64>::zeros((n, m));
    for col in (0..n).rev() {
        let pivot = aug[[col, col]];
        for j in 0..m {
            let mut sum = aug[[col, n + j]];
            for k in (col + 1)..n {
                sum -= aug[[col, k]] * x[[k, j]];
            }
            x[[col, j]] = sum / pivot;
        }
    }
    Ok(x)
}

/// Eigenvalues of a small real matrix.
///
/// Characteristic polynomial via Faddeev-LeVerrier, roots via Durand-Kerner.
/// Accuracy is near machine precision for simple roots and ~sqrt(eps) for
/// defective ones, which is ample for the Hurwitz checks done here.
pub fn eigenvalues(a: &Array2<f64>) -> Vec<Complex64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigenvalues requires a square matrix");
    if n == 0 {
        return Vec::new();
    }

    // Monic characteristic polynomial x^n + c[0] x^{n-1} + ... + c[n-1].
    let mut coeffs = vec![0.0f64; n];
    let mut m = Array2::<f64>::eye(n);
    for k in 1..=n {
        m = a.dot(&m);
        let c = -m.diag().sum() / k as f64;
        coeffs[k - 1] = c;
        for i in 0..n {
            m[[i, i]] += c;
        }
    }

    durand_kerner(&coeffs)
}

/// Roots of the monic polynomial x^n + c[0] x^{n-1} + ... + c[n-1].
fn durand_kerner(coeffs: &[f64]) -> Vec<Complex64> {
    let n = coeffs.len();
    let radius = 1.0 + coeffs.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    let mut roots: Vec<Complex64> = (0..n)
        .map(|k| {
            // Non-symmetric start angle so real-axis roots are not fixed points.
            let angle = 2.0 * std::f64::consts::PI * k as f64 / n as f64 + 0.4;
            Complex64::from_polar(radius, angle)
        })
        .collect();

    let eval = |z: Complex64| -> Complex64 {
        let mut p = Complex64::new(1.0, 0.0);
        for &c in coeffs {
            p = p * z + c;
        }
        p
    };

    for _ in 0..500 {
        let mut moved = 0.0f64;
        for i in 0..n {
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..n {
                if j != i {
                    denom *= roots[i] - roots[j];
                }
            }
            if denom.norm() == 0.0 {
                continue;
            }
            let delta = eval(roots[i]) / denom;
            roots[i] -= delta;
            moved = moved.max(delta.norm() / (1.0 + roots[i].norm()));
        }
        if moved < 1e-15 {
            break;
        }
    }
    roots
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn sym_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "sym_eigenvalues requires a square matrix");
    let mut m = a.clone();

    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() <= 1e-15 * (1.0 + fro_norm(&m)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    m.diag().to_vec()
}

/// Lower-triangular factor L with L L^T = A for a symmetric positive
/// semi-definite A.
///
/// Zero (or numerically tiny) pivots produce zero columns, so rank-deficient
/// covariances (e.g. zero diffusion) factor cleanly. A pivot below
/// -tol signals an indefinite matrix: one retry with diagonal jitter
/// 1e-14 * trace is attempted before giving up.
pub fn psd_factor(a: &Array2<f64>) -> Result<Array2<f64>> {
    match psd_factor_inner(a) {
        Ok(l) => Ok(l),
        Err(_) => {
            let n = a.nrows();
            let jitter = 1e-14 * a.diag().sum().abs();
            let mut fixed = a.clone();
            for i in 0..n {
                fixed[[i, i]] += jitter;
            }
            psd_factor_inner(&fixed)
        }
    }
}

fn psd_factor_inner(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "psd_factor requires a square matrix");
    let scale = a.diag().iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);

    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d < -tol {
            return Err(Error::Numerical(format!(
                "matrix is not positive semi-definite (pivot {d:.3e} at {j})"
            )));
        }
        if d <= tol {
            // Semi-definite direction: zero column.
            continue;
        }
        let root = d.sqrt();
        l[[j, j]] = root;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / root;
        }
    }
    Ok(l)
}

/// Solve the stationary Lyapunov equation A S + S A^T + Q = 0 for symmetric Q
/// by direct solution of the Kronecker-vectorized linear system.
pub fn lyapunov_stationary(a: &Array2<f64>, q: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "lyapunov requires a square A");
    assert_eq!(q.dim(), (n, n), "Q must match A");

    // Column-stacking convention: vec(A S) = (I x A) vec(S),
    // vec(S A^T) = (A x I) vec(S).
    let nn = n * n;
    let mut k = Array2::<f64>::zeros((nn, nn));
    for col in 0..n {
        for row in 0..n {
            let r = col * n + row;
            // (I x A): block-diagonal copies of A.
            for i in 0..n {
                k[[r, col * n + i]] += a[[row, i]];
            }
            // (A x I): scalar A[col, j] on the diagonal of block (col, j).
            for j in 0..n {
                k[[r, j * n + row]] += a[[col, j]];
            }
        }
    }

    let mut rhs = Array2::<f64>::zeros((nn, 1));
    for col in 0..n {
        for row in 0..n {
            rhs[[col * n + row, 0]] = -q[[row, col]];
        }
    }

    let v = lu_solve(&k, &rhs)?;
    let mut s = Array2::<f64>::zeros((n, n));
    for col in 0..n {
        for row in 0..n {
            s[[row, col]] = v[[col * n + row, 0]];
        }
    }
    // Symmetrize away solver round-off.
    let st = s.t().to_owned();
    Ok((&s + &st) * 0.5)
}

/// Matrix-vector product for `Array2` against a slice, writing into `out`.
pub fn mat_vec(a: &Array2<f64>, x: &[f64], out: &mut [f64]) {
    let (n, m) = a.dim();
    debug_assert_eq!(m, x.len());
    debug_assert_eq!(n, out.len());
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..m {
            s += a[[i, j]] * x[j];
        }
        out[i] = s;
    }
}

//! Singular value decomposition and the Moore–Penrose pseudoinverse.
//!
//! The SVD is a one-sided (Hestenes) Jacobi iteration: columns of the tall
//! orientation are orthogonalised pairwise by plane rotations until every
//! pair is orthogonal to working precision. It is slower than bidiagonal
//! QR for large matrices but has high relative accuracy, is deterministic,
//! and works for any `Scalar`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAX_SWEEPS: usize = 80;

/// Thin SVD `A = U · diag(σ) · Vᵀ` with `σ` sorted descending.
#[derive(Debug, Clone)]
pub struct Svd<T> {
    /// `m × k`, `k = min(m, n)`.
    pub u: Array2<T>,
    pub singular_values: Array1<T>,
    /// `k × n`.
    pub vt: Array2<T>,
}

pub fn svd<T: Scalar>(a: ArrayView2<'_, T>) -> Result<Svd<T>> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix passed to SVD".into()));
    }
    let (m, n) = a.dim();
    if m == 0 || n == 0 {
        return Err(Error::Empty(format!("{m}×{n} matrix")));
    }
    if m >= n {
        Ok(jacobi_tall(a))
    } else {
        let t = jacobi_tall(a.t());
        Ok(Svd {
            u: t.vt.t().to_owned(),
            singular_values: t.singular_values,
            vt: t.u.t().to_owned(),
        })
    }
}

fn jacobi_tall<T: Scalar>(a: ArrayView2<'_, T>) -> Svd<T> {
    let (m, n) = a.dim();
    // column-major working copies
    let mut cols: Vec<Vec<T>> = (0..n).map(|j| a.column(j).to_vec()).collect();
    let mut v: Vec<Vec<T>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { T::one() } else { T::zero() }).collect())
        .collect();
    let tol = T::epsilon() * T::of(m as f64);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let (alpha, beta, gamma) = {
                    let (ci, cj) = (&cols[i], &cols[j]);
                    let mut alpha = T::zero();
                    let mut beta = T::zero();
                    let mut gamma = T::zero();
                    for k in 0..m {
                        alpha = alpha + ci[k] * ci[k];
                        beta = beta + cj[k] * cj[k];
                        gamma = gamma + ci[k] * cj[k];
                    }
                    (alpha, beta, gamma)
                };
                if alpha == T::zero() || beta == T::zero() {
                    continue;
                }
                if gamma.abs() <= tol * (alpha.sqrt() * beta.sqrt()) {
                    continue;
                }
                rotated = true;
                let two = T::one() + T::one();
                let zeta = (beta - alpha) / (two * gamma);
                let t = zeta.signum() / (zeta.abs() + T::one().hypot(zeta));
                let c = T::one() / T::one().hypot(t);
                let s = c * t;
                rotate(&mut cols, i, j, c, s);
                rotate(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<T> = cols
        .iter()
        .map(|c| c.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal singular values keep column order
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).expect("finite norms"));

    let mut u = Array2::zeros((m, n));
    let mut vt = Array2::zeros((n, n));
    let mut sv = Array1::zeros(n);
    for (k, &j) in order.iter().enumerate() {
        let sigma = norms[j];
        sv[k] = sigma;
        if sigma > T::zero() {
            for r in 0..m {
                u[[r, k]] = cols[j][r] / sigma;
            }
        }
        for r in 0..n {
            vt[[k, r]] = v[j][r];
        }
    }
    Svd { u, singular_values: sv, vt }
}

fn rotate<T: Scalar>(cols: &mut [Vec<T>], i: usize, j: usize, c: T, s: T) {
    let (lo, hi) = cols.split_at_mut(j);
    let (ci, cj) = (&mut lo[i], &mut hi[0]);
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let (xi, yj) = (*x, *y);
        *x = c * xi - s * yj;
        *y = s * xi + c * yj;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoinverseConfig {
    /// Singular values below `rcond · σ_max` are treated as zero.
    pub rcond: f64,
    /// Condition numbers above this are logged.
    pub max_condition_warn: f64,
}

impl Default for PseudoinverseConfig {
    fn default() -> Self {
        Self {
            rcond: 1e-6,
            max_condition_warn: 1e8,
        }
    }
}

impl PseudoinverseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rcond > 0.0 && self.rcond < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rcond must lie in (0, 1), got {}",
                self.rcond
            )));
        }
        Ok(())
    }
}

/// Moore–Penrose pseudoinverse of an `m × n` matrix, returned as `n × m`.
///
/// A zero matrix yields a zero pseudoinverse.
pub fn pseudoinverse<T: Scalar>(a: ArrayView2<'_, T>, cfg: &PseudoinverseConfig) -> Result<Array2<T>> {
    cfg.validate()?;
    let (m, n) = a.dim();
    let dec = svd(a)?;
    let mut out = Array2::zeros((n, m));
    let sigma_max = dec.singular_values.iter().copied().fold(T::zero(), T::max);
    if sigma_max == T::zero() {
        return Ok(out);
    }
    let cutoff = T::of(cfg.rcond) * sigma_max;
    let mut sigma_min_kept = sigma_max;
    for (k, &sigma) in dec.singular_values.iter().enumerate() {
        if sigma <= cutoff {
            continue;
        }
        sigma_min_kept = sigma;
        let inv = T::one() / sigma;
        let vk = dec.vt.row(k);
        let uk = dec.u.column(k);
        for r in 0..n {
            let scale = vk[r] * inv;
            if scale == T::zero() {
                continue;
            }
            let mut row = out.row_mut(r);
            row.scaled_add(scale, &uk);
        }
    }
    let cond = (sigma_max / sigma_min_kept).as_f64();
    if cond > cfg.max_condition_warn {
        tracing::warn!(condition = cond, "ill-conditioned matrix in pseudoinverse");
    }
    Ok(out)
}

/// Relative Frobenius residuals of the four Moore–Penrose conditions:
/// `AXA = A`, `XAX = X`, `(AX)ᵀ = AX`, `(XA)ᵀ = XA`.
pub fn moore_penrose_residuals<T: Scalar>(a: ArrayView2<'_, T>, x: ArrayView2<'_, T>) -> [f64; 4] {
    let ax = a.dot(&x);
    let xa = x.dot(&a);
    let axa = ax.dot(&a);
    let xax = xa.dot(&x);
    [
        rel(&(&axa - &a), &a.to_owned()),
        rel(&(&xax - &x), &x.to_owned()),
        rel(&(&ax.t() - &ax), &ax),
        rel(&(&xa.t() - &xa), &xa),
    ]
}

fn rel<T: Scalar>(diff: &Array2<T>, reference: &Array2<T>) -> f64 {
    let d = frobenius(diff.view());
    let r = frobenius(reference.view());
    if r == 0.0 {
        d
    } else {
        d / r
    }
}

pub fn frobenius<T: Scalar>(a: ArrayView2<'_, T>) -> f64 {
    a.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
}

/// Euclidean norms of every row.
pub fn row_norms<T: Scalar>(a: ArrayView2<'_, T>) -> Array1<T> {
    a.map_axis(Axis(1), |r| r.dot(&r).sqrt())
}



#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) -> bool {
        a.dim() == b.dim() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn identity_is_its_own_pseudoinverse() {
        let eye = Array2::<f64>::eye(3);
        let p = pseudoinverse(eye.view(), &Default::default()).unwrap();
        assert!(close(&p, &eye, 1e-12));
    }

    #[test]
    fn padded_diagonal() {
        let w = array![[2.0, 0.0, 0.0], [0.0, 4.0, 0.0]];
        let p = pseudoinverse(w.view(), &Default::default()).unwrap();
        let expected = array![[0.5, 0.0], [0.0, 0.25], [0.0, 0.0]];
        assert!(close(&p, &expected, 1e-12), "{p}");
    }

    #[test]
    fn zero_matrix_gives_zero() {
        let z = Array2::<f64>::zeros((2, 5));
        let p = pseudoinverse(z.view(), &Default::default()).unwrap();
        assert_eq!(p.dim(), (5, 2));
        assert!(p.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rank_deficient_satisfies_penrose() {
        // rank 1
        let w = array![[1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 6.0, 8.0]];
        let p = pseudoinverse(w.view(), &Default::default()).unwrap();
        for r in moore_penrose_residuals(w.view(), p.view()) {
            assert!(r < 1e-12, "{r}");
        }
    }

    #[test]
    fn svd_reconstructs() {
        let a = array![[3.0, 1.0], [1.0, 3.0], [0.5, -2.0]];
        let d = svd(a.view()).unwrap();
        let rec = d.u.dot(&Array2::from_diag(&d.singular_values)).dot(&d.vt);
        assert!(close(&rec, &a, 1e-12));
        assert!(d.singular_values[0] >= d.singular_values[1]);
        let wide = a.t().to_owned();
        let d = svd(wide.view()).unwrap();
        let rec = d.u.dot(&Array2::from_diag(&d.singular_values)).dot(&d.vt);
        assert!(close(&rec, &wide, 1e-12));
    }

    #[test]
    fn rejects_bad_rcond_and_nan() {
        let a = Array2::<f64>::eye(2);
        let cfg = PseudoinverseConfig { rcond: 0.0, ..Default::default() };
        assert!(pseudoinverse(a.view(), &cfg).is_err());
        let b = array![[f64::NAN, 1.0]];
        assert!(pseudoinverse(b.view(), &Default::default()).is_err());
    }

    #[test]
    fn works_in_f32() {
        let w = array![[2.0f32, 0.0, 1.0], [0.0, 4.0, -1.0]];
        let p = pseudoinverse(w.view(), &Default::default()).unwrap();
        for r in moore_penrose_residuals(w.view(), p.view()) {
            assert!(r < 1e-5, "{r}");
        }
    }
}

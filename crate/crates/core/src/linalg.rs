//! Dense eigenvalues, polynomial arithmetic and complex determinants.

use std::ops::{Add, Mul};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{CrinError, Result};

/// Real polynomial with coefficients stored lowest degree first.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    /// `coeffs[k]` multiplies `lambda^k`. Trailing zeros are kept, so the
    /// stated degree survives structural cancellations.
    pub fn from_ascending(coeffs: Vec<f64>) -> Self {
        assert!(
            !coeffs.is_empty(),
            "polynomial needs at least one coefficient"
        );
        Self { coeffs }
    }

    pub fn from_descending(mut coeffs: Vec<f64>) -> Self {
        coeffs.reverse();
        Self::from_ascending(coeffs)
    }

    pub fn constant(c: f64) -> Self {
        Self::from_ascending(vec![c])
    }

    /// `lambda - root`.
    pub fn linear(root: f64) -> Self {
        Self::from_ascending(vec![-root, 1.0])
    }

    /// Monic polynomial with the given (conjugate-closed) roots.
    pub fn from_roots(roots: &[Complex64]) -> Self {
        let mut acc = vec![Complex64::new(1.0, 0.0)];
        for &z in roots {
            let mut next = vec![Complex64::new(0.0, 0.0); acc.len() + 1];
            for (k, &a) in acc.iter().enumerate() {
                next[k + 1] += a;
                next[k] -= a * z;
            }
            acc = next;
        }
        Self::from_ascending(acc.into_iter().map(|c| c.re).collect())
    }

    pub fn ascending(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn descending(&self) -> Vec<f64> {
        self.coeffs.iter().rev().copied().collect()
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn leading(&self) -> f64 {
        *self.coeffs.last().unwrap()
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_ascending(self.coeffs.iter().map(|c| c * s).collect())
    }

    /// Multiply by `lambda^k`.
    pub fn shift(&self, k: usize) -> Self {
        let mut c = vec![0.0; k];
        c.extend_from_slice(&self.coeffs);
        Self::from_ascending(c)
    }

    /// Exact division by `lambda` when the constant term is zero.
    pub fn deflate_zero(&self) -> Option<Self> {
        (self.coeffs.len() > 1 && self.coeffs[0] == 0.0)
            .then(|| Self::from_ascending(self.coeffs[1..].to_vec()))
    }

    /// Roots as eigenvalues of the companion matrix.
    pub fn roots(&self) -> Result<Vec<Complex64>> {
        let lead = self.leading();
        if lead == 0.0 || !lead.is_finite() {
            return Err(CrinError::Numerical(
                "polynomial has a zero or non-finite leading coefficient".into(),
            ));
        }
        let d = self.degree();
        if d == 0 {
            return Ok(Vec::new());
        }
        let mut comp = DMatrix::<f64>::zeros(d, d);
        for i in 1..d {
            comp[(i, i - 1)] = 1.0;
        }
        for k in 0..d {
            comp[(k, d - 1)] = -self.coeffs[k] / lead;
        }
        eigenvalues(&comp)
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;

    fn add(self, rhs: &Polynomial) -> Polynomial {
        let len = self.coeffs.len().max(rhs.coeffs.len());
        let c = (0..len)
            .map(|k| self.coeffs.get(k).unwrap_or(&0.0) + rhs.coeffs.get(k).unwrap_or(&0.0))
            .collect();
        Polynomial::from_ascending(c)
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;

    fn mul(self, rhs: &Polynomial) -> Polynomial {
        let mut c = vec![0.0; self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Polynomial::from_ascending(c)
    }
}

/// Sort by real part descending, ties broken by imaginary part descending.
pub fn sort_eigenvalues(eigs: &mut [Complex64]) {
    eigs.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
}

/// All eigenvalues of a real square matrix, sorted by real part descending.
///
/// Backed by faer. nalgebra's Schur iteration was seen to cycle on Jacobians
/// with clustered eigenvalues.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(CrinError::DimensionMismatch {
            what: "eigenvalue input must be square",
            expected: n,
            got: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(CrinError::NonFinite("matrix"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let a = faer::Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)]);
    let mut eigs: Vec<Complex64> = a
        .eigenvalues()
        .map_err(|_| CrinError::NoConvergence { dim: n })?
        .into_iter()
        .map(|z| Complex64::new(z.re, z.im))
        .collect();
    sort_eigenvalues(&mut eigs);
    Ok(eigs)
}

/// Determinant of a complex matrix by LU with partial pivoting.
pub fn complex_det(mut a: DMatrix<Complex64>) -> Complex64 {
    let n = a.nrows();
    let mut det = Complex64::new(1.0, 0.0);
    for k in 0..n {
        let (piv, pmag) = (k..n)
            .map(|i| (i, a[(i, k)].norm()))
            .fold(
                (k, -1.0),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        if pmag == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        if piv != k {
            a.swap_rows(piv, k);
            det = -det;
        }
        let pivot = a[(k, k)];
        det *= pivot;
        for i in k + 1..n {
            let factor = a[(i, k)] / pivot;
            if factor == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in k + 1..n {
                let sub = factor * a[(k, j)];
                a[(i, j)] -= sub;
            }
        }
    }
    det
}

/// `det(lambda I - J)`, the monic characteristic polynomial evaluated at `lambda`.
pub fn char_poly_at(j: &DMatrix<f64>, lambda: Complex64) -> Complex64 {
    let n = j.nrows();
    let m = DMatrix::from_fn(n, n, |r, c| {
        let d = if r == c {
            lambda
        } else {
            Complex64::new(0.0, 0.0)
        };
        d - j[(r, c)]
    });
    complex_det(m)
}

/// Largest distance under greedy nearest-neighbour pairing of two equally
/// sized multisets; `None` when the sizes differ.
pub fn multiset_distance(a: &[Complex64], b: &[Complex64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for &z in a {
        let (idx, d) = b
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, w)| (i, (z - w).norm()))
            .min_by(|x, y| x.1.total_cmp(&y.1))?;
        used[idx] = true;
        worst = worst.max(d);
    }
    Some(worst)
}

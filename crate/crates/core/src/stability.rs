//! Linear stability of fixed points.
//!
//! The Jacobian is laid out with the virus block first:
//!
//! ```text
//! J = | d(dx)/dx  d(dx)/dr |
//!     | d(dr)/dx  d(dr)/dr |
//! ```
//!
//! Closed-form characteristic polynomials are known for the symmetric
//! network and for the 2- and 3-node star families; each is represented as
//! explicit linear factors times a residual polynomial, all monic so they
//! compare directly with `det(lambda I - J)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{eval_rhs, RhsScratch, SystemState, DENOM_FLOOR};
use crate::error::{CrinError, Result};
use crate::fixedpoint::{star_family, symmetric_fixed_point, StarFamilyPoint};
use crate::linalg::{self, char_poly_at, Polynomial};
use crate::network::{ImmuneMatrices, ModelParams};
use crate::rng::SeededRng;

/// Eigenvalues closer than this to zero (or real parts inside this band)
/// count as zero.
pub const ZERO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix {
    pub j: DMatrix<f64>,
    pub n: usize,
    /// Variants whose stimulation denominator was under the guard; their
    /// contributions are omitted.
    pub guarded: Vec<bool>,
}

impl JacobianMatrix {
    /// `d(dx_i)/dx_k`
    pub fn xx(&self, i: usize, k: usize) -> f64 {
        self.j[(i, k)]
    }

    /// `d(dx_i)/dr_k`
    pub fn xr(&self, i: usize, k: usize) -> f64 {
        self.j[(i, self.n + k)]
    }

    /// `d(dr_i)/dx_k`
    pub fn rx(&self, i: usize, k: usize) -> f64 {
        self.j[(self.n + i, k)]
    }

    /// `d(dr_i)/dr_k`
    pub fn rr(&self, i: usize, k: usize) -> f64 {
        self.j[(self.n + i, self.n + k)]
    }

    pub fn sup_norm(&self) -> f64 {
        self.j.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn check(state: &SystemState, params: &ModelParams, m: &ImmuneMatrices) -> Result<()> {
    params.check_n(m.n())?;
    if state.x.len() != m.n() || state.r.len() != m.n() {
        return Err(CrinError::DimensionMismatch {
            what: "state vs immune matrices",
            expected: m.n(),
            got: state.x.len(),
        });
    }
    if state.x.iter().chain(&state.r).any(|v| !v.is_finite()) {
        return Err(CrinError::NonFinite("state"));
    }
    Ok(())
}

pub fn jacobian_analytic(
    state: &SystemState,
    params: &ModelParams,
    m: &ImmuneMatrices,
) -> Result<JacobianMatrix> {
    check(state, params, m)?;
    let n = m.n();
    let (x, r) = (&state.x, &state.r);
    let ModelParams { p, c, b, .. } = *params;
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    let mut guarded = vec![false; n];

    for i in 0..n {
        j[(i, i)] = params.f[i] - p * m.u_cols.dot(i, r);
        for (k, u) in m.u_cols.row(i) {
            j[(i, n + k)] = -p * x[i] * u;
        }
        j[(n + i, n + i)] = -b;
    }
    for src in 0..n {
        let row = m.v_rows.row(src);
        let s = m.v_rows.dot(src, r);
        if s <= DENOM_FLOOR {
            guarded[src] = true;
            continue;
        }
        let s2 = s * s;
        for (i, v_i) in row.clone() {
            j[(n + i, src)] += c * v_i * r[i] / s;
            j[(n + i, n + i)] += c * x[src] * v_i / s;
            for (l, v_l) in row.clone() {
                j[(n + i, n + l)] -= c * x[src] * v_i * r[i] * v_l / s2;
            }
        }
    }
    Ok(JacobianMatrix { j, n, guarded })
}

/// Central differences of the right-hand side with step `h`. Columns whose
/// `±h` perturbation flips any stimulation guard are reported in `guarded`
/// (indexed by variant, for both its `x` and `r` column).
pub fn jacobian_fd(
    state: &SystemState,
    params: &ModelParams,
    m: &ImmuneMatrices,
    h: f64,
) -> Result<JacobianMatrix> {
    check(state, params, m)?;
    if !(h > 0.0) {
        return Err(CrinError::OutOfRange(format!(
            "step h must be > 0, got {h}"
        )));
    }
    let n = m.n();
    let base = state.to_flat();
    let mut scratch = RhsScratch::new(n);
    let mut guard_base = vec![false; n];
    {
        let (mut dx, mut dr) = (vec![0.0; n], vec![0.0; n]);
        eval_rhs(
            &base[..n],
            &base[n..],
            params,
            m,
            &mut dx,
            &mut dr,
            &mut scratch,
        );
        for k in 0..n {
            guard_base[k] = scratch.denom[k] <= DENOM_FLOOR;
        }
    }
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    let mut guarded = guard_base.clone();
    let mut plus = vec![0.0; 2 * n];
    let mut minus = vec![0.0; 2 * n];
    for col in 0..2 * n {
        let mut y = base.clone();
        let mut flipped = false;
        for (sign, out) in [(1.0, &mut plus), (-1.0, &mut minus)] {
            y[col] = base[col] + sign * h;
            let (dx, dr) = out.split_at_mut(n);
            eval_rhs(&y[..n], &y[n..], params, m, dx, dr, &mut scratch);
            flipped |= scratch
                .denom
                .iter()
                .zip(&guard_base)
                .any(|(d, &g)| (*d <= DENOM_FLOOR) != g);
        }
        if flipped {
            guarded[col % n] = true;
        }
        for row in 0..2 * n {
            j[(row, col)] = (plus[row] - minus[row]) / (2.0 * h);
        }
    }
    Ok(JacobianMatrix { j, n, guarded })
}

/// All eigenvalues of the Jacobian, sorted by real part descending.
pub fn eigenvalues(jac: &JacobianMatrix) -> Result<Vec<Complex64>> {
    linalg::eigenvalues(&jac.j)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Stable,
    MarginallyStable,
    Unstable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub eigenvalues: Vec<Complex64>,
    pub classification: Classification,
    pub zero_eig_count: usize,
    pub max_real_part: f64,
    pub factorization_residual: Option<f64>,
}

/// Unstable when some real part exceeds `zero_tol`, stable when all real
/// parts are below `-zero_tol`, marginally stable otherwise (in practice: a
/// zero eigenvalue with everything else in the left half-plane).
pub fn classify_stability(eigs: &[Complex64], zero_tol: f64) -> StabilityReport {
    let mut eigenvalues = eigs.to_vec();
    linalg::sort_eigenvalues(&mut eigenvalues);
    let max_real_part = eigenvalues
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let zero_eig_count = eigenvalues.iter().filter(|z| z.norm() <= zero_tol).count();
    let classification = if max_real_part > zero_tol {
        Classification::Unstable
    } else if max_real_part < -zero_tol {
        Classification::Stable
    } else {
        Classification::MarginallyStable
    };
    StabilityReport {
        eigenvalues,
        classification,
        zero_eig_count,
        max_real_part,
        factorization_residual: None,
    }
}

/// Jacobian, eigenvalues and classification in one go.
pub fn analyze(
    state: &SystemState,
    params: &ModelParams,
    m: &ImmuneMatrices,
    zero_tol: f64,
) -> Result<(JacobianMatrix, StabilityReport)> {
    let jac = jacobian_analytic(state, params, m)?;
    let eigs = eigenvalues(&jac)?;
    Ok((jac, classify_stability(&eigs, zero_tol)))
}

/// `det(lambda I - J) = prod (lambda - linear_roots[k]) * residual_poly(lambda)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CharPolyFactors {
    pub linear_roots: Vec<f64>,
    pub residual_poly: Polynomial,
}

impl CharPolyFactors {
    pub fn degree(&self) -> usize {
        self.linear_roots.len() + self.residual_poly.degree()
    }

    pub fn eval(&self, lambda: Complex64) -> Complex64 {
        self.linear_roots
            .iter()
            .fold(self.residual_poly.eval(lambda), |acc, &root| {
                acc * (lambda - root)
            })
    }

    /// Every root: linear ones first, then the residual factor's roots.
    pub fn roots(&self) -> Result<Vec<Complex64>> {
        let mut out: Vec<Complex64> = self
            .linear_roots
            .iter()
            .map(|&r| Complex64::new(r, 0.0))
            .collect();
        out.extend(self.residual_poly.roots()?);
        Ok(out)
    }

    /// Residual factor with structural zero roots divided out.
    pub fn cofactor(&self) -> Polynomial {
        let mut p = self.residual_poly.clone();
        while let Some(q) = p.deflate_zero() {
            p = q;
        }
        p
    }

    pub fn cofactor_positive(&self) -> bool {
        self.cofactor().ascending().iter().all(|&c| c > 0.0)
    }
}

/// Factors at the symmetric-network fixed point: `lambda1 = f2 - f1/beta`,
/// `lambda2 = b/alpha - 2b`, and the quartic `P`.
pub fn symmetric_factors(params: &ModelParams) -> Result<CharPolyFactors> {
    let fp = symmetric_fixed_point(params)?;
    if !fp.feasible {
        return Err(CrinError::ConstraintViolated(format!(
            "symmetric fixed point infeasible: {}",
            fp.violations.join(", ")
        )));
    }
    let ModelParams {
        ref f,
        p,
        c,
        b,
        alpha,
        ..
    } = *params;
    let (r2, r3, x3) = (fp.state.r[1], fp.state.r[2], fp.state.x[2]);
    let f1 = f[0];
    let share = r3 / (alpha * r2 + r3);
    let k = b * share * (1.0 - alpha);

    // P(l) = alpha b f1 l^2
    //      + b f1 (1-alpha) (l^2 + b s l + b p r3)
    //      + l^2 (l + b)(l + k)
    //      + p x3 l (c s l + b c s (1-alpha)),   s = r3/(alpha r2 + r3), k = b s (1-alpha)
    let coeffs = vec![
        b * f1 * (1.0 - alpha) * b * p * r3,
        b * f1 * (1.0 - alpha) * b * share + p * x3 * b * c * share * (1.0 - alpha),
        b * f1 + b * k + p * x3 * c * share,
        b + k,
        1.0,
    ];
    Ok(CharPolyFactors {
        linear_roots: vec![fp.lambda1, fp.lambda2],
        residual_poly: Polynomial::from_ascending(coeffs),
    })
}

/// Two-node family: `lambda (lambda - lambda1) (lambda^2 + b lambda + c p (x2 + beta x1))`.
pub fn two_node_factors(params: &ModelParams, x1: f64) -> Result<CharPolyFactors> {
    let fp = star_family(params, 2, x1)?;
    let ModelParams { p, c, b, beta, .. } = *params;
    let x2 = fp.state.x[1];
    Ok(CharPolyFactors {
        linear_roots: vec![0.0, fp.lambda1],
        residual_poly: Polynomial::from_descending(vec![1.0, b, c * p * (x2 + beta * x1)]),
    })
}

/// Three-node star family: `(lambda - lambda1) (lambda D1 + p x2 D2)`.
pub fn three_node_star_factors(params: &ModelParams, x1: f64) -> Result<CharPolyFactors> {
    let fp = star_family(params, 3, x1)?;
    let ModelParams { p, c, b, beta, .. } = *params;
    let (x2, x3) = (fp.state.x[1], fp.state.x[2]);
    let (r2, r3) = (fp.state.r[1], fp.state.r[2]);
    let nr = r2 + r3;
    let poly = |d: Vec<f64>| Polynomial::from_descending(d);
    let lambda = poly(vec![1.0, 0.0]);

    // D1 = l (l + b - c x1/N)(l^2 + b l + c p beta x1)
    //    + c p x3 (l^2 + (b - c x1 r3/N^2) l + c p beta x1 r2/N)
    let d1 = &(&(&lambda * &poly(vec![1.0, b - c * x1 / nr]))
        * &poly(vec![1.0, b, c * p * beta * x1]))
        + &poly(vec![
            1.0,
            b - c * x1 * r3 / (nr * nr),
            c * p * beta * x1 * r2 / nr,
        ])
        .scale(c * p * x3);
    // D2 = c l (l^2 + (b - c x1 r2/N^2) l + c p x3) + c p beta x1 l c r3/N
    let d2 = &(&lambda * &poly(vec![1.0, b - c * x1 * r2 / (nr * nr), c * p * x3]).scale(c))
        + &lambda.scale(c * p * beta * x1 * c * r3 / nr);
    let residual = &(&lambda * &d1) + &d2.scale(p * x2);
    Ok(CharPolyFactors {
        linear_roots: vec![fp.lambda1],
        residual_poly: residual,
    })
}

/// Kernel vector `(N_r, -r_2, ..., -r_n, 0, ..., 0)` of the Jacobian at a
/// star-family point. Moving along it keeps every antibody level fixed.
pub fn star_zero_eigenvector(point: &StarFamilyPoint) -> Vec<f64> {
    let n = point.n;
    let mut v = vec![0.0; 2 * n];
    v[0] = point.n_r;
    for i in 1..n {
        v[i] = -point.state.r[i];
    }
    v
}

/// Characteristic polynomial of a star-family Jacobian reconstructed from its
/// eigenvalues, with the zero root and `lambda1` removed. Used to inspect the
/// coefficient signs for sizes without a closed form.
pub fn star_cofactor_from_spectrum(
    point: &StarFamilyPoint,
    eigs: &[Complex64],
) -> Result<Polynomial> {
    let mut rest = eigs.to_vec();
    for target in [0.0, point.lambda1] {
        let idx = rest
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - target).norm().total_cmp(&(b.1 - target).norm()))
            .map(|(i, _)| i)
            .ok_or_else(|| CrinError::Numerical("empty spectrum".into()))?;
        rest.remove(idx);
    }
    Ok(Polynomial::from_roots(&rest))
}

/// Rectangle `[re_lo, re_hi] x [im_lo, im_hi]` of complex sample points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleBox {
    pub re: (f64, f64),
    pub im: (f64, f64),
}

impl Default for SampleBox {
    fn default() -> Self {
        Self {
            re: (-5.0, 5.0),
            im: (-5.0, 5.0),
        }
    }
}

/// Points closer than this to a factor root are redrawn.
pub const RESAMPLE_RADIUS: f64 = 1e-6;

/// Maximum relative deviation `|det(lambda I - J) - factored(lambda)| / |det|`
/// over `sample_count` seeded random points of `domain`.
pub fn verify_factorization(
    jac: &DMatrix<f64>,
    factors: &CharPolyFactors,
    sample_count: usize,
    domain: SampleBox,
    seed: u64,
) -> Result<f64> {
    if jac.nrows() != jac.ncols() || factors.degree() != jac.nrows() {
        return Err(CrinError::DimensionMismatch {
            what: "factor degree vs Jacobian size",
            expected: jac.nrows(),
            got: factors.degree(),
        });
    }
    let roots = factors.roots()?;
    let mut rng = SeededRng::new(seed);
    let mut worst: f64 = 0.0;
    let mut taken = 0;
    let mut attempts = 0;
    while taken < sample_count {
        attempts += 1;
        if attempts > 1000 * sample_count.max(1) {
            return Err(CrinError::Numerical(
                "could not draw sample points away from the roots".into(),
            ));
        }
        let z = Complex64::new(
            rng.uniform(domain.re.0, domain.re.1),
            rng.uniform(domain.im.0, domain.im.1),
        );
        if roots.iter().any(|w| (z - w).norm() < RESAMPLE_RADIUS) {
            continue;
        }
        let det = char_poly_at(jac, z);
        if det.norm() == 0.0 {
            continue;
        }
        let fact = factors.eval(z);
        worst = worst.max((det - fact).norm() / det.norm());
        taken += 1;
    }
    Ok(worst)
}

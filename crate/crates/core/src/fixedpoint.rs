//! Closed-form fixed points.
//!
//! * Symmetric network (0 -> 1 <- 2): node 0 persistent, node 1 altruistic,
//!   node 2 neutral (or nodes 0 and 2 swapped).
//! * Star networks (0 -> j for all leaves j): node 0 persistent, every leaf
//!   neutral. These form a one-parameter segment indexed by the persistent
//!   concentration `x1` and exist only when `f_0 = beta * sum_{j>=1} f_j`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{rhs, SystemState};
use crate::error::{CrinError, Result};
use crate::network::{build_matrices, ImmuneMatrices, ModelParams, Topology};

/// Relative tolerance on `f_0 = beta * sum f_j`.
pub const CONSTRAINT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricFixedPoint {
    /// Closed-form values; physical only when `feasible`.
    pub state: SystemState,
    /// `f_hub - f_persistent / beta`.
    pub lambda1: f64,
    /// `b / alpha - 2 b`.
    pub lambda2: f64,
    pub feasible: bool,
    /// Human-readable feasibility conditions that failed.
    pub violations: Vec<String>,
    /// Node 2 persistent and node 0 neutral instead of the other way round.
    pub swapped: bool,
}

pub fn symmetric_fixed_point(params: &ModelParams) -> Result<SymmetricFixedPoint> {
    symmetric_fixed_point_with(params, false)
}

pub fn symmetric_fixed_point_with(
    params: &ModelParams,
    swapped: bool,
) -> Result<SymmetricFixedPoint> {
    params.validate()?;
    params.check_n(3)?;
    let (pers, hub, neut) = if swapped { (2, 1, 0) } else { (0, 1, 2) };
    let ModelParams {
        ref f,
        p,
        c,
        b,
        alpha,
        beta,
    } = *params;
    let (f_pers, f_hub, f_neut) = (f[pers], f[hub], f[neut]);

    let r_hub = f_pers / (p * beta);
    let r_neut = (f_neut - f_pers) / p;
    let x_pers = b / c * r_hub * (1.0 - alpha);
    let x_neut = b / c * (alpha * r_hub + r_neut);

    let mut x = vec![0.0; 3];
    let mut r = vec![0.0; 3];
    x[pers] = x_pers;
    x[neut] = x_neut;
    r[hub] = r_hub;
    r[neut] = r_neut;

    let lambda1 = f_hub - f_pers / beta;
    let lambda2 = b / alpha - 2.0 * b;
    // conditions are named with 1-based figure labels
    let (fp_name, fn_name) = if swapped { ("f3", "f1") } else { ("f1", "f3") };
    let mut violations = Vec::new();
    if !(f_neut > f_pers) {
        violations.push(format!("{fn_name} > {fp_name}"));
    }
    if !(beta * f_hub < f_pers) {
        violations.push(format!("beta*f2 < {fp_name}"));
    }
    if !(alpha > 0.5) {
        violations.push("alpha > 1/2".to_string());
    }
    Ok(SymmetricFixedPoint {
        state: SystemState { x, r },
        lambda1,
        lambda2,
        feasible: violations.is_empty(),
        violations,
        swapped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `x1 < alpha (b/c) N_r`: the free eigenvalue is negative.
    StableBranch,
    UnstableBranch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarFamilyPoint {
    pub n: usize,
    pub x1: f64,
    pub state: SystemState,
    /// Total leaf antibody `sum_{j>=1} r_j`.
    pub n_r: f64,
    /// `c x1 / (alpha N_r) - b`.
    pub lambda1: f64,
    pub branch: Branch,
}

impl StarFamilyPoint {
    /// Upper end of the family segment, `(b/c) N_r`.
    pub fn capacity(params: &ModelParams) -> f64 {
        params.b / params.c * leaf_antibody(params)
    }

    /// Sign change of `lambda1`, `alpha (b/c) N_r`.
    pub fn threshold(params: &ModelParams) -> f64 {
        params.alpha * Self::capacity(params)
    }
}

fn leaf_antibody(params: &ModelParams) -> f64 {
    params.f[1..].iter().map(|fj| fj / params.p).sum()
}

/// Copy of `params` with `f_0` replaced by `beta * sum_{j>=1} f_j`, which puts
/// a star network exactly on its family subspace.
pub fn with_family_f1(params: &ModelParams) -> Result<ModelParams> {
    if params.f.len() < 2 {
        return Err(CrinError::DimensionMismatch {
            what: "star family needs at least two replication rates",
            expected: 2,
            got: params.f.len(),
        });
    }
    let mut out = params.clone();
    out.f[0] = params.beta * params.f[1..].iter().sum::<f64>();
    out.validate()?;
    Ok(out)
}

pub fn check_family_constraint(params: &ModelParams) -> Result<()> {
    let target = params.beta * params.f[1..].iter().sum::<f64>();
    let f1 = params.f[0];
    if (f1 - target).abs() > CONSTRAINT_TOL * f1.abs().max(target.abs()) {
        return Err(CrinError::ConstraintViolated(format!(
            "need f1 = beta * sum(f_j, j>=2) = {target:e}, got f1 = {f1:e}"
        )));
    }
    Ok(())
}

pub fn star_family(params: &ModelParams, n: usize, x1: f64) -> Result<StarFamilyPoint> {
    params.validate()?;
    if n < 2 {
        return Err(CrinError::InvalidGraph(format!(
            "star family needs n >= 2, got {n}"
        )));
    }
    params.check_n(n)?;
    check_family_constraint(params)?;
    let ModelParams { p, c, b, alpha, .. } = *params;
    let n_r = leaf_antibody(params);
    let cap = b / c * n_r;
    if !(x1 > 0.0 && x1 < cap) {
        return Err(CrinError::OutOfRange(format!(
            "x1 must lie in (0, (b/c) N_r) = (0, {cap}), got {x1}"
        )));
    }
    let mut x = vec![x1; n];
    let mut r = vec![0.0; n];
    for i in 1..n {
        r[i] = params.f[i] / p;
        x[i] = b / c * r[i] - r[i] / n_r * x1;
    }
    let lambda1 = c * x1 / (alpha * n_r) - b;
    let branch = if x1 < alpha * cap {
        Branch::StableBranch
    } else {
        Branch::UnstableBranch
    };
    Ok(StarFamilyPoint {
        n,
        x1,
        state: SystemState { x, r },
        n_r,
        lambda1,
        branch,
    })
}

pub fn two_node_family(params: &ModelParams, x1: f64) -> Result<StarFamilyPoint> {
    star_family(params, 2, x1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointCheck {
    pub residual: f64,
    pub passed: bool,
}

/// `||rhs(state)||_inf`, passing when below `tol`.
pub fn verify_fixed_point(
    state: &SystemState,
    params: &ModelParams,
    m: &ImmuneMatrices,
    tol: f64,
) -> Result<FixedPointCheck> {
    let residual = rhs(state, params, m)?.sup_norm();
    Ok(FixedPointCheck {
        residual,
        passed: residual < tol,
    })
}

/// A closed-form fixed point of one of the catalog topologies, ready to report.
#[derive(Debug, Clone, PartialEq)]
pub enum FamilyPoint {
    Symmetric(SymmetricFixedPoint),
    Star(StarFamilyPoint),
}

impl FamilyPoint {
    pub fn state(&self) -> &SystemState {
        match self {
            FamilyPoint::Symmetric(p) => &p.state,
            FamilyPoint::Star(p) => &p.state,
        }
    }
}

/// Dispatch on topology: symmetric networks ignore `x1`, star-type networks
/// require it. The branch-cycle network has no closed-form family here.
pub fn family_point(
    topology: Topology,
    params: &ModelParams,
    x1: Option<f64>,
    swapped: bool,
) -> Result<(FamilyPoint, ImmuneMatrices)> {
    let m = build_matrices(&topology.graph()?, params)?;
    let point = match topology {
        Topology::Symmetric3 => {
            FamilyPoint::Symmetric(symmetric_fixed_point_with(params, swapped)?)
        }
        Topology::TwoNode | Topology::Star(_) => {
            let x1 = x1.ok_or_else(|| {
                CrinError::OutOfRange(format!("{topology} family needs an x1 value"))
            })?;
            FamilyPoint::Star(star_family(params, topology.node_count(), x1)?)
        }
        Topology::BranchCycle3 => {
            return Err(CrinError::UnknownTopology(
                "branch_cycle3 has no closed-form fixed-point family".into(),
            ))
        }
    };
    Ok((point, m))
}

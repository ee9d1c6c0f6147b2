//! Batch experiments: random dandelion networks with a three-node tail, and
//! `x1` sweeps along the star fixed-point families.
//!
//! Seeds: run `k` of a batch uses `run_seed = derive_seed(master, k)`; its
//! graph is drawn from `derive_seed(run_seed, 0)` and its parameters and
//! initial state from `derive_seed(run_seed, 1)` (see [`crate::rng`]).
//!
//! Dandelion runs remove a virus for good once it falls under its initial
//! concentration, unless the config says otherwise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    classify_nodes, integrate, ClassifyConfig, Extinction, IntegrationConfig, NodeRole,
    SystemState, Termination, Trajectory,
};
use crate::error::{CrinError, Result};
use crate::fixedpoint::{star_family, Branch, StarFamilyPoint};
use crate::network::{
    build_matrices, dandelion_tail_nodes, random_dandelion, ModelParams, Topology,
};
use crate::rng::{derive_seed, SeededRng};
use crate::stability::{analyze, Classification, StabilityReport};

/// Draws parameters and an initial state:
///
/// | quantity | law |
/// |---|---|
/// | `f_i` | U(0, 1), except `f[special]` ~ U(1, 2) |
/// | `p` | U(0, 1) |
/// | `b`, `c` | U(0, 5) |
/// | `alpha` | U(0.5, 1), `beta = alpha^2` |
/// | `x_i(0)`, `r_i(0)` | U(0, 0.1) |
///
/// Draw order: `f_0..f_{n-1}`, `p`, `b`, `c`, `alpha`, `x_0..`, `r_0..`.
pub fn sample_params(
    run_seed: u64,
    n: usize,
    special_index: Option<usize>,
) -> Result<(ModelParams, SystemState)> {
    if n == 0 {
        return Err(CrinError::OutOfRange("n must be >= 1".into()));
    }
    if let Some(s) = special_index {
        if s >= n {
            return Err(CrinError::OutOfRange(format!(
                "special index {s} out of range for n = {n}"
            )));
        }
    }
    let mut rng = SeededRng::new(derive_seed(run_seed, 1));
    let f = (0..n)
        .map(|i| {
            if Some(i) == special_index {
                rng.uniform(1.0, 2.0)
            } else {
                rng.uniform(0.0, 1.0)
            }
        })
        .collect();
    let p = rng.uniform(0.0, 1.0);
    let b = rng.uniform(0.0, 5.0);
    let c = rng.uniform(0.0, 5.0);
    let alpha = rng.uniform(0.5, 1.0);
    let params = ModelParams::new(f, p, c, b, alpha, alpha * alpha)?;
    let x = (0..n).map(|_| rng.uniform(0.0, 0.1)).collect();
    let r = (0..n).map(|_| rng.uniform(0.0, 0.1)).collect();
    Ok((params, SystemState { x, r }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub ball_size: usize,
    pub edge_prob: f64,
    #[serde(with = "topology_name")]
    pub tail: Topology,
    pub runs: usize,
    pub integration: IntegrationConfig,
    pub classify: ClassifyConfig,
}

impl ExperimentConfig {
    pub fn new(seed: u64, tail: Topology, runs: usize) -> Self {
        Self {
            seed,
            ball_size: 98,
            edge_prob: 0.5,
            tail,
            runs,
            integration: IntegrationConfig {
                extinction: Some(Extinction::InitialConcentration),
                ..IntegrationConfig::default()
            },
            classify: ClassifyConfig::default(),
        }
    }

    /// `dt = 1e-2` over the same time horizon as the default.
    pub fn coarse(mut self) -> Self {
        let horizon = self.integration.dt * self.integration.max_steps as f64;
        self.integration.dt = 1e-2;
        self.integration.max_steps = (horizon / 1e-2).round() as u64;
        self.integration.sample_stride = 100;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(CrinError::OutOfRange("runs must be >= 1".into()));
        }
        if !matches!(self.tail, Topology::BranchCycle3 | Topology::Symmetric3) {
            return Err(CrinError::InvalidGraph(format!(
                "tail must be branch_cycle3 or symmetric3, got {}",
                self.tail
            )));
        }
        Ok(())
    }
}

mod topology_name {
    use super::Topology;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &Topology, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Topology, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub p: f64,
    pub c: f64,
    pub b: f64,
    pub alpha: f64,
    pub beta: f64,
    pub f_tail: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub tail_x: [f64; 3],
    pub tail_r: [f64; 3],
    pub max_x: f64,
    pub max_r: f64,
    pub sum_x: f64,
    pub sum_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_index: usize,
    pub run_seed: u64,
    pub terminated_by: Termination,
    pub steps: u64,
    pub final_time: f64,
    pub final_rhs_norm: f64,
    pub tail_nodes: [usize; 3],
    pub tail_roles: [NodeRole; 3],
    pub li_on_tail: bool,
    pub roles: Vec<NodeRole>,
    pub params: ParamSummary,
    pub final_state: StateSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub equilibrium_runs: usize,
    pub diverged_runs: usize,
    pub li_runs: usize,
    pub li_equilibrium_runs: usize,
    /// LI runs over all runs.
    pub fraction_li_on_tail: f64,
    /// LI runs over runs that met the equilibrium tolerance.
    pub fraction_li_at_equilibrium: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub records: Vec<RunRecord>,
    pub aggregate: Aggregate,
}

/// Middle tail node altruistic and at least one other tail node persistent.
pub fn li_on_tail(tail_roles: &[NodeRole; 3]) -> bool {
    tail_roles[1] == NodeRole::Altruistic
        && (tail_roles[0] == NodeRole::Persistent || tail_roles[2] == NodeRole::Persistent)
}

/// One dandelion run; the trajectory is returned alongside its record.
pub fn run_one(cfg: &ExperimentConfig, run_index: usize) -> Result<(RunRecord, Trajectory)> {
    let run_seed = derive_seed(cfg.seed, run_index as u64);
    let graph = random_dandelion(
        derive_seed(run_seed, 0),
        cfg.ball_size,
        cfg.edge_prob,
        cfg.tail,
    )?;
    let n = graph.n();
    let tail = dandelion_tail_nodes(cfg.ball_size);
    let (params, state0) = sample_params(run_seed, n, Some(tail[1]))?;
    let m = build_matrices(&graph, &params)?;
    let traj = integrate(&state0, &params, &m, &cfg.integration)?;
    let last = traj.final_state();
    let roles = classify_nodes(last, &cfg.classify);
    let tail_roles = tail.map(|i| roles[i]);
    let fold_max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let record = RunRecord {
        run_index,
        run_seed,
        terminated_by: traj.terminated_by,
        steps: traj.steps,
        final_time: traj.final_time(),
        final_rhs_norm: traj.final_rhs_norm,
        tail_nodes: tail,
        tail_roles,
        li_on_tail: li_on_tail(&tail_roles),
        roles,
        params: ParamSummary {
            p: params.p,
            c: params.c,
            b: params.b,
            alpha: params.alpha,
            beta: params.beta,
            f_tail: tail.map(|i| params.f[i]),
        },
        final_state: StateSummary {
            tail_x: tail.map(|i| last.x[i]),
            tail_r: tail.map(|i| last.r[i]),
            max_x: fold_max(&last.x),
            max_r: fold_max(&last.r),
            sum_x: last.x.iter().sum(),
            sum_r: last.r.iter().sum(),
        },
    };
    Ok((record, traj))
}

fn aggregate(records: &[RunRecord]) -> Aggregate {
    let runs = records.len();
    let eq: Vec<&RunRecord> = records
        .iter()
        .filter(|r| r.terminated_by == Termination::Equilibrium)
        .collect();
    let li_runs = records.iter().filter(|r| r.li_on_tail).count();
    let li_equilibrium_runs = eq.iter().filter(|r| r.li_on_tail).count();
    Aggregate {
        runs,
        equilibrium_runs: eq.len(),
        diverged_runs: records
            .iter()
            .filter(|r| r.terminated_by == Termination::Divergence)
            .count(),
        li_runs,
        li_equilibrium_runs,
        fraction_li_on_tail: li_runs as f64 / runs as f64,
        fraction_li_at_equilibrium: (!eq.is_empty())
            .then(|| li_equilibrium_runs as f64 / eq.len() as f64),
    }
}

/// Runs every seed of the batch in parallel; records come back in run order.
pub fn run_dandelion(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_dandelion_with_trajectories(cfg, false).map(|(r, _)| r)
}

pub fn run_dandelion_with_trajectories(
    cfg: &ExperimentConfig,
    keep: bool,
) -> Result<(ExperimentReport, Vec<Trajectory>)> {
    cfg.validate()?;
    let results: Vec<(RunRecord, Option<Trajectory>)> = (0..cfg.runs)
        .into_par_iter()
        .map(|k| run_one(cfg, k).map(|(rec, traj)| (rec, keep.then_some(traj))))
        .collect::<Result<_>>()?;
    let (records, trajs): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let aggregate = aggregate(&records);
    Ok((
        ExperimentReport {
            config: cfg.clone(),
            records,
            aggregate,
        },
        trajs.into_iter().flatten().collect(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub x1: f64,
    pub lambda1: f64,
    pub branch: Branch,
    pub report: StabilityReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub n: usize,
    pub points: Vec<SweepPoint>,
    /// `alpha (b/c) N_r`.
    pub analytic_threshold: f64,
    /// Midpoint of the first grid cell where the spectrum turns unstable.
    pub empirical_threshold: Option<f64>,
}

/// Evaluate the star family of size `n` at each `x1` of the grid.
pub fn sweep_x1(
    params: &ModelParams,
    n: usize,
    grid: &[f64],
    zero_tol: f64,
) -> Result<SweepResult> {
    let m = build_matrices(&Topology::Star(n).graph()?, params)?;
    let points = grid
        .iter()
        .map(|&x1| {
            let fp = star_family(params, n, x1)?;
            let (_, report) = analyze(&fp.state, params, &m, zero_tol)?;
            Ok(SweepPoint {
                x1,
                lambda1: fp.lambda1,
                branch: fp.branch,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let empirical_threshold = points.windows(2).find_map(|w| {
        (w[0].report.classification != Classification::Unstable
            && w[1].report.classification == Classification::Unstable)
            .then(|| 0.5 * (w[0].x1 + w[1].x1))
    });
    Ok(SweepResult {
        n,
        points,
        analytic_threshold: StarFamilyPoint::threshold(params),
        empirical_threshold,
    })
}

fn bisect(
    mut lo: f64,
    mut hi: f64,
    xtol: f64,
    mut above: impl FnMut(f64) -> Result<bool>,
) -> Result<f64> {
    if above(lo)? || !above(hi)? {
        return Err(CrinError::Numerical(format!(
            "no sign change bracketed in [{lo}, {hi}]"
        )));
    }
    while hi - lo > xtol {
        let mid = 0.5 * (lo + hi);
        if above(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn family_bracket(params: &ModelParams) -> (f64, f64) {
    let cap = StarFamilyPoint::capacity(params);
    (1e-9 * cap, cap * (1.0 - 1e-9))
}

/// Root of the closed-form `lambda1(x1)` by bisection.
pub fn formula_crossing(params: &ModelParams, n: usize, xtol: f64) -> Result<f64> {
    let (lo, hi) = family_bracket(params);
    bisect(lo, hi, xtol, |x1| {
        Ok(star_family(params, n, x1)?.lambda1 > 0.0)
    })
}

/// Smallest `x1` at which the computed spectrum is classified unstable,
/// located by bisection.
pub fn spectral_crossing(params: &ModelParams, n: usize, zero_tol: f64, xtol: f64) -> Result<f64> {
    let m = build_matrices(&Topology::Star(n).graph()?, params)?;
    let (lo, hi) = family_bracket(params);
    bisect(lo, hi, xtol, |x1| {
        let fp = star_family(params, n, x1)?;
        let (_, report) = analyze(&fp.state, params, &m, zero_tol)?;
        Ok(report.classification == Classification::Unstable)
    })
}

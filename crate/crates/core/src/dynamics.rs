//! Right-hand side of the virus/antibody system, forward-Euler and RK4
//! integration, and node-role classification.
//!
//! ```text
//! dx_i/dt = f_i x_i - p x_i sum_j u_ji r_j
//! dr_i/dt = c sum_j x_j g_ji - b r_i,   g_ji = v_ji r_i / sum_k v_jk r_k
//! ```
//!
//! A variant `j` whose stimulation denominator `sum_k v_jk r_k` is at or below
//! [`DENOM_FLOOR`] stimulates nothing (its row of `g` is zero and flagged).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CrinError, Result};
use crate::network::{ImmuneMatrices, ModelParams};

pub const DENOM_FLOOR: f64 = 1e-15;
/// Any component above this aborts an integration as divergent.
pub const OVERFLOW_GUARD: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    /// Virus concentrations.
    pub x: Vec<f64>,
    /// Antibody concentrations.
    pub r: Vec<f64>,
}

impl SystemState {
    pub fn new(x: Vec<f64>, r: Vec<f64>) -> Result<Self> {
        let s = Self { x, r };
        s.validate()?;
        Ok(s)
    }

    pub fn uniform(n: usize, x: f64, r: f64) -> Self {
        Self {
            x: vec![x; n],
            r: vec![r; n],
        }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.r.len() {
            return Err(CrinError::DimensionMismatch {
                what: "antibody vector r vs virus vector x",
                expected: self.x.len(),
                got: self.r.len(),
            });
        }
        if self.x.iter().chain(&self.r).any(|v| !v.is_finite()) {
            return Err(CrinError::NonFinite("state"));
        }
        if self.x.iter().chain(&self.r).any(|&v| v < 0.0) {
            return Err(CrinError::OutOfRange(
                "state components must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// `(x_0..x_{n-1}, r_0..r_{n-1})`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.x.iter().chain(&self.r).copied().collect()
    }

    pub fn from_flat(v: &[f64]) -> Self {
        let n = v.len() / 2;
        Self {
            x: v[..n].to_vec(),
            r: v[n..2 * n].to_vec(),
        }
    }

    pub fn sup_distance(&self, other: &SystemState) -> f64 {
        self.to_flat()
            .iter()
            .zip(other.to_flat())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Time derivative of a [`SystemState`].
#[derive(Debug, Clone, PartialEq)]
pub struct Derivative {
    pub dx: Vec<f64>,
    pub dr: Vec<f64>,
}

impl Derivative {
    pub fn sup_norm(&self) -> f64 {
        self.dx
            .iter()
            .chain(&self.dr)
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.dx.iter().chain(&self.dr).copied().collect()
    }
}

fn check_dims(state: &SystemState, params: &ModelParams, m: &ImmuneMatrices) -> Result<()> {
    let n = m.n();
    params.check_n(n)?;
    for (what, len) in [
        ("virus vector x", state.x.len()),
        ("antibody vector r", state.r.len()),
    ] {
        if len != n {
            return Err(CrinError::DimensionMismatch {
                what,
                expected: n,
                got: len,
            });
        }
    }
    if state.x.iter().chain(&state.r).any(|v| !v.is_finite()) {
        return Err(CrinError::NonFinite("state"));
    }
    Ok(())
}

/// Per-variant buffers reused across right-hand-side evaluations.
pub(crate) struct RhsScratch {
    /// Stimulation denominators `S_j`.
    pub denom: Vec<f64>,
    /// `x_j / S_j`, zero for guarded variants.
    weight: Vec<f64>,
}

impl RhsScratch {
    pub fn new(n: usize) -> Self {
        Self {
            denom: vec![0.0; n],
            weight: vec![0.0; n],
        }
    }
}

/// Unchecked evaluation into caller-provided buffers.
pub(crate) fn eval_rhs(
    x: &[f64],
    r: &[f64],
    params: &ModelParams,
    m: &ImmuneMatrices,
    dx: &mut [f64],
    dr: &mut [f64],
    scratch: &mut RhsScratch,
) {
    let n = x.len();
    for j in 0..n {
        let s = m.v_rows.dot(j, r);
        scratch.denom[j] = s;
        scratch.weight[j] = if s > DENOM_FLOOR { x[j] / s } else { 0.0 };
    }
    for i in 0..n {
        dx[i] = params.f[i] * x[i] - params.p * x[i] * m.u_cols.dot(i, r);
        dr[i] = params.c * r[i] * m.v_cols.dot(i, &scratch.weight) - params.b * r[i];
    }
}

pub fn rhs(state: &SystemState, params: &ModelParams, m: &ImmuneMatrices) -> Result<Derivative> {
    check_dims(state, params, m)?;
    let n = state.n();
    let mut d = Derivative {
        dx: vec![0.0; n],
        dr: vec![0.0; n],
    };
    let mut scratch = RhsScratch::new(n);
    eval_rhs(
        &state.x,
        &state.r,
        params,
        m,
        &mut d.dx,
        &mut d.dr,
        &mut scratch,
    );
    Ok(d)
}

/// `g[(j, i)]`: probability that variant `j` stimulates response `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulationMatrix {
    pub g: DMatrix<f64>,
    /// Rows whose denominator fell under [`DENOM_FLOOR`]; they are all-zero.
    pub guarded: Vec<bool>,
}

pub fn stimulation_probabilities(
    state: &SystemState,
    m: &ImmuneMatrices,
) -> Result<StimulationMatrix> {
    let n = m.n();
    if state.x.len() != n || state.r.len() != n {
        return Err(CrinError::DimensionMismatch {
            what: "state vs immune matrices",
            expected: n,
            got: state.r.len(),
        });
    }
    if state.r.iter().any(|v| !v.is_finite()) {
        return Err(CrinError::NonFinite("antibody vector r"));
    }
    let mut g = DMatrix::zeros(n, n);
    let mut guarded = vec![false; n];
    for j in 0..n {
        let s = m.v_rows.dot(j, &state.r);
        if s <= DENOM_FLOOR {
            guarded[j] = true;
            continue;
        }
        for (i, v) in m.v_rows.row(j) {
            g[(j, i)] = v * state.r[i] / s;
        }
    }
    Ok(StimulationMatrix { g, guarded })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    Rk4,
}

/// Concentration under which a virus is removed for good.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extinction {
    /// Each virus dies once it drops below its own starting concentration.
    InitialConcentration,
    Absolute(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub max_steps: u64,
    /// Stop once `||rhs||_inf` drops below this.
    pub eq_tol: f64,
    pub extinction: Option<Extinction>,
    /// Record every `sample_stride`-th step (plus the first and last).
    pub sample_stride: u64,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Euler,
            dt: 1e-3,
            max_steps: 2_000_000,
            eq_tol: 1e-9,
            extinction: None,
            sample_stride: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxSteps,
    Equilibrium,
    Divergence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SystemState>,
    pub terminated_by: Termination,
    /// Steps actually taken.
    pub steps: u64,
    /// `||rhs||_inf` at the last evaluated state.
    pub final_rhs_norm: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &SystemState {
        self.states
            .last()
            .expect("trajectory always holds the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self
            .times
            .last()
            .expect("trajectory always holds the initial time")
    }
}

struct Workspace {
    n: usize,
    scratch: RhsScratch,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            n,
            scratch: RhsScratch::new(n),
            k: std::array::from_fn(|_| vec![0.0; 2 * n]),
            tmp: vec![0.0; 2 * n],
        }
    }

    fn eval(&mut self, y: &[f64], slot: usize, params: &ModelParams, m: &ImmuneMatrices) {
        let n = self.n;
        let (dx, dr) = self.k[slot].split_at_mut(n);
        eval_rhs(&y[..n], &y[n..], params, m, dx, dr, &mut self.scratch);
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, a| m.max(a.abs()))
}

/// Fixed-step integration. Components are clamped at zero after each step.
pub fn integrate(
    state0: &SystemState,
    params: &ModelParams,
    m: &ImmuneMatrices,
    cfg: &IntegrationConfig,
) -> Result<Trajectory> {
    check_dims(state0, params, m)?;
    state0.validate()?;
    if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
        return Err(CrinError::OutOfRange(format!(
            "dt must be > 0, got {}",
            cfg.dt
        )));
    }
    if !(cfg.eq_tol >= 0.0) {
        return Err(CrinError::OutOfRange("eq_tol must be >= 0".into()));
    }
    let stride = cfg.sample_stride.max(1);
    let n = state0.n();
    let thresholds: Option<Vec<f64>> = match cfg.extinction {
        None => None,
        Some(Extinction::InitialConcentration) => Some(state0.x.clone()),
        Some(Extinction::Absolute(v)) => Some(vec![v; n]),
    };
    let mut extinct = vec![false; n];

    let mut y = state0.to_flat();
    let mut ws = Workspace::new(n);
    let mut times = vec![0.0];
    let mut states = vec![state0.clone()];
    let dt = cfg.dt;
    let mut step: u64 = 0;

    let terminated_by = loop {
        ws.eval(&y, 0, params, m);
        let norm = sup(&ws.k[0]);
        if norm < cfg.eq_tol {
            break Termination::Equilibrium;
        }
        if step >= cfg.max_steps {
            break Termination::MaxSteps;
        }
        match cfg.scheme {
            Scheme::Euler => {
                for (yi, ki) in y.iter_mut().zip(&ws.k[0]) {
                    *yi += dt * ki;
                }
            }
            Scheme::Rk4 => {
                for stage in 1..4 {
                    let h = if stage == 3 { dt } else { 0.5 * dt };
                    for i in 0..2 * n {
                        ws.tmp[i] = y[i] + h * ws.k[stage - 1][i];
                    }
                    let tmp = std::mem::take(&mut ws.tmp);
                    ws.eval(&tmp, stage, params, m);
                    ws.tmp = tmp;
                }
                for i in 0..2 * n {
                    y[i] +=
                        dt / 6.0 * (ws.k[0][i] + 2.0 * ws.k[1][i] + 2.0 * ws.k[2][i] + ws.k[3][i]);
                }
            }
        }
        step += 1;
        // Negatives are clamped; subnormals are flushed too, since their
        // slow arithmetic would dominate the cost of decaying components.
        for v in y.iter_mut() {
            if *v < f64::MIN_POSITIVE {
                *v = 0.0;
            }
        }
        if let Some(thr) = &thresholds {
            for i in 0..n {
                if extinct[i] || y[i] < thr[i] {
                    extinct[i] = true;
                    y[i] = 0.0;
                }
            }
        }
        if y.iter().any(|v| !v.is_finite() || *v > OVERFLOW_GUARD) {
            times.push(step as f64 * dt);
            states.push(SystemState::from_flat(&y));
            return Ok(Trajectory {
                times,
                states,
                terminated_by: Termination::Divergence,
                steps: step,
                final_rhs_norm: f64::INFINITY,
            });
        }
        if step % stride == 0 {
            times.push(step as f64 * dt);
            states.push(SystemState::from_flat(&y));
        }
    };
    if step % stride != 0 {
        times.push(step as f64 * dt);
        states.push(SystemState::from_flat(&y));
    }
    Ok(Trajectory {
        times,
        states,
        terminated_by,
        steps: step,
        final_rhs_norm: sup(&ws.k[0]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    /// High virus, no immune response.
    Persistent,
    /// No virus, high immune response.
    Altruistic,
    /// Both present.
    Neutral,
    /// Neither present.
    Extinct,
}

/// Bands relative to the population maxima: `lo = max(rel_lo * max, abs_floor)`
/// and `hi = rel_hi * max`, applied separately to `x` and `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    pub rel_lo: f64,
    pub rel_hi: f64,
    pub abs_floor: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            rel_lo: 1e-4,
            rel_hi: 1e-2,
            abs_floor: 1e-8,
        }
    }
}

pub fn classify_nodes(state: &SystemState, cfg: &ClassifyConfig) -> Vec<NodeRole> {
    let bands = |v: &[f64]| {
        let max = v.iter().copied().fold(0.0, f64::max);
        ((cfg.rel_lo * max).max(cfg.abs_floor), cfg.rel_hi * max)
    };
    let (x_lo, x_hi) = bands(&state.x);
    let (r_lo, r_hi) = bands(&state.r);
    state
        .x
        .iter()
        .zip(&state.r)
        .map(|(&x, &r)| {
            let x_low = x <= x_lo;
            let r_low = r <= r_lo;
            if x_low && r_low {
                NodeRole::Extinct
            } else if x_low && r >= r_hi {
                NodeRole::Altruistic
            } else if !x_low && x >= x_hi && r_low {
                NodeRole::Persistent
            } else {
                NodeRole::Neutral
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_matrices, catalog, CrnGraph};

    fn single() -> (ModelParams, ImmuneMatrices) {
        let p = ModelParams::new(vec![1.0], 1.0, 1.0, 1.0, 0.5, 0.25).unwrap();
        let m = build_matrices(&CrnGraph::edgeless(1).unwrap(), &p).unwrap();
        (p, m)
    }

    #[test]
    fn single_node_equilibrium() {
        let (p, m) = single();
        let d = rhs(&SystemState::uniform(1, 1.0, 1.0), &p, &m).unwrap();
        assert_eq!(d.dx, vec![0.0]);
        assert_eq!(d.dr, vec![0.0]);
    }

    #[test]
    fn no_virus_means_pure_decay() {
        let g = catalog("branch_cycle3", None).unwrap();
        let p = ModelParams::new(vec![1.0, 2.0, 0.5], 0.7, 1.3, 0.9, 0.6, 0.3).unwrap();
        let m = build_matrices(&g, &p).unwrap();
        let s = SystemState::new(vec![0.0; 3], vec![0.2, 1.0, 3.0]).unwrap();
        let d = rhs(&s, &p, &m).unwrap();
        assert!(d.dx.iter().all(|&v| v == 0.0));
        for (dr, r) in d.dr.iter().zip(&s.r) {
            assert_eq!(*dr, -0.9 * r);
        }
    }

    #[test]
    fn rhs_rejects_non_finite_and_mismatch() {
        let (p, m) = single();
        let bad = SystemState {
            x: vec![f64::NAN],
            r: vec![1.0],
        };
        assert!(matches!(rhs(&bad, &p, &m), Err(CrinError::NonFinite(_))));
        let wrong = SystemState::uniform(2, 1.0, 1.0);
        assert!(rhs(&wrong, &p, &m).is_err());
    }

    #[test]
    fn stimulation_single_node() {
        let (_, m) = single();
        let g = stimulation_probabilities(&SystemState::uniform(1, 0.3, 2.0), &m).unwrap();
        assert_eq!(g.g[(0, 0)], 1.0);
        assert!(!g.guarded[0]);
    }

    #[test]
    fn stimulation_symmetric_row_zero() {
        let g = catalog("symmetric3", None).unwrap();
        let p = ModelParams::new(vec![1.0; 3], 1.0, 1.0, 1.0, 0.6, 0.36).unwrap();
        let m = build_matrices(&g, &p).unwrap();
        let s = SystemState::new(vec![1.0; 3], vec![0.0, 2.0, 0.7]).unwrap();
        let st = stimulation_probabilities(&s, &m).unwrap();
        assert_eq!(
            st.g.row(0).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 1.0, 0.0]
        );
    }

    #[test]
    fn stimulation_guarded_row() {
        let g = catalog("two_node", None).unwrap();
        let p = ModelParams::new(vec![1.0; 2], 1.0, 1.0, 1.0, 0.6, 0.36).unwrap();
        let m = build_matrices(&g, &p).unwrap();
        let s = SystemState::new(vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
        let st = stimulation_probabilities(&s, &m).unwrap();
        assert!(st.guarded.iter().all(|&b| b));
        assert!(st.g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_trajectory_at_fixed_point() {
        let (p, m) = single();
        let cfg = IntegrationConfig {
            max_steps: 5000,
            eq_tol: 0.0,
            sample_stride: 100,
            ..Default::default()
        };
        let t = integrate(&SystemState::uniform(1, 1.0, 1.0), &p, &m, &cfg).unwrap();
        assert_eq!(t.terminated_by, Termination::MaxSteps);
        for s in &t.states {
            assert!((s.x[0] - 1.0).abs() < 1e-9 && (s.r[0] - 1.0).abs() < 1e-9);
        }
        assert!(t.times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(t.times.len(), t.states.len());
    }

    #[test]
    fn equilibrium_stops_early() {
        let (p, m) = single();
        let t = integrate(
            &SystemState::uniform(1, 1.0, 1.0),
            &p,
            &m,
            &IntegrationConfig::default(),
        )
        .unwrap();
        assert_eq!(t.terminated_by, Termination::Equilibrium);
        assert_eq!(t.steps, 0);
    }

    #[test]
    fn divergence_is_reported() {
        // no antibodies at all: x grows like exp(f t)
        let p = ModelParams::new(vec![5.0], 1.0, 1.0, 1.0, 0.5, 0.25).unwrap();
        let m = build_matrices(&CrnGraph::edgeless(1).unwrap(), &p).unwrap();
        let cfg = IntegrationConfig {
            dt: 1e-2,
            max_steps: 1_000_000,
            ..Default::default()
        };
        let t = integrate(&SystemState::uniform(1, 1.0, 0.0), &p, &m, &cfg).unwrap();
        assert_eq!(t.terminated_by, Termination::Divergence);
    }

    #[test]
    fn extinction_threshold_kills_declining_virus() {
        let (p, m) = single();
        // r above equilibrium: x declines from its start value
        let s0 = SystemState::new(vec![1.0], vec![2.0]).unwrap();
        let cfg = IntegrationConfig {
            max_steps: 10,
            extinction: Some(Extinction::InitialConcentration),
            sample_stride: 1,
            ..Default::default()
        };
        let t = integrate(&s0, &p, &m, &cfg).unwrap();
        assert_eq!(t.states[1].x[0], 0.0);
        assert!(t.states.iter().skip(1).all(|s| s.x[0] == 0.0));
    }

    #[test]
    fn classify_uniform_state_is_neutral() {
        let roles = classify_nodes(
            &SystemState::uniform(3, 1.0, 1.0),
            &ClassifyConfig::default(),
        );
        assert_eq!(roles, vec![NodeRole::Neutral; 3]);
    }

    #[test]
    fn classify_extinct_and_bands() {
        let s = SystemState::new(vec![0.0, 5.0, 1e-9], vec![0.0, 1.0, 1.0]).unwrap();
        let roles = classify_nodes(&s, &ClassifyConfig::default());
        assert_eq!(
            roles,
            vec![NodeRole::Extinct, NodeRole::Neutral, NodeRole::Altruistic]
        );
    }
}

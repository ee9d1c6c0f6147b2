//! File formats.
//!
//! Every float is written with 17 significant digits (`{:.16e}`), in JSON and
//! in CSV alike, so values round-trip exactly and regenerated reports are
//! byte-identical. Node indices are 0-based; figure node `k` is index `k - 1`.
//!
//! | format | shape |
//! |---|---|
//! | network | `{"n": 3, "edges": [[0,1],[2,1]]}` (edges sorted) |
//! | params | `{"f": [...], "p", "c", "b", "alpha", "beta"}`, or `"k"` instead of `"beta"` |
//! | state | `{"x": [...], "r": [...]}` |
//! | fixed point | `{topology, params, state, lambda1, lambda2?, feasible, residual, ...}` |
//! | stability | `{eigenvalues: [{re, im}], classification, zero_eig_count, max_real_part, factorization_residual}` |
//! | trajectory CSV | `t,x_0,...,x_{n-1},r_0,...,r_{n-1}` |

use std::io::{self, Write};

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};

use crate::dynamics::{SystemState, Trajectory};
use crate::error::{CrinError, Result};
use crate::experiments::SweepResult;
use crate::fixedpoint::{Branch, FamilyPoint};
use crate::network::ModelParams;
use crate::stability::{Classification, StabilityReport};

/// Writes 17 significant digits for floats, delegating everything else.
struct Digits17<F>(F);

impl<F: Formatter> Formatter for Digits17<F> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        write!(w, "{:.16e}", value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn end_object_key<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_key(w)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

fn write_with<T: Serialize, F: Formatter>(value: &T, fmt: F) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17(fmt));
    value
        .serialize(&mut ser)
        .expect("in-memory report serialization cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Compact JSON with 17-digit floats.
pub fn to_json<T: Serialize>(value: &T) -> String {
    write_with(value, CompactFormatter)
}

/// Indented JSON with 17-digit floats.
pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    write_with(value, PrettyFormatter::new())
}

pub fn from_json<T: DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text)
        .map_err(|e| CrinError::InvalidParams(format!("malformed {what}: {e}")))
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Parameter file: `beta` given directly or as `alpha^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub f: Vec<f64>,
    pub p: f64,
    pub c: f64,
    pub b: f64,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
}

impl ParamsFile {
    pub fn into_params(self) -> Result<ModelParams> {
        match (self.beta, self.k) {
            (Some(beta), None) => {
                ModelParams::new(self.f, self.p, self.c, self.b, self.alpha, beta)
            }
            (None, Some(k)) => {
                ModelParams::with_exponent(self.f, self.p, self.c, self.b, self.alpha, k)
            }
            (Some(_), Some(_)) => Err(CrinError::InvalidParams(
                "give either beta or k, not both".into(),
            )),
            (None, None) => Err(CrinError::InvalidParams("missing beta (or k)".into())),
        }
    }
}

pub fn parse_params(text: &str) -> Result<ModelParams> {
    from_json::<ParamsFile>(text, "params file")?.into_params()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub topology: String,
    pub params: ModelParams,
    pub state: SystemState,
    pub lambda1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<f64>,
    pub feasible: bool,
    pub residual: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<Branch>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub swapped: bool,
}

impl FixedPointReport {
    pub fn new(topology: String, params: &ModelParams, point: &FamilyPoint, residual: f64) -> Self {
        let base = |state: &SystemState, lambda1| FixedPointReport {
            topology: topology.clone(),
            params: params.clone(),
            state: state.clone(),
            lambda1,
            lambda2: None,
            feasible: true,
            residual,
            violations: Vec::new(),
            x1: None,
            n_r: None,
            branch: None,
            swapped: false,
        };
        match point {
            FamilyPoint::Symmetric(fp) => FixedPointReport {
                lambda2: Some(fp.lambda2),
                feasible: fp.feasible,
                violations: fp.violations.clone(),
                swapped: fp.swapped,
                ..base(&fp.state, fp.lambda1)
            },
            FamilyPoint::Star(fp) => FixedPointReport {
                x1: Some(fp.x1),
                n_r: Some(fp.n_r),
                branch: Some(fp.branch),
                ..base(&fp.state, fp.lambda1)
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexRepr {
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReportRepr {
    pub eigenvalues: Vec<ComplexRepr>,
    pub classification: Classification,
    pub zero_eig_count: usize,
    pub max_real_part: f64,
    pub factorization_residual: Option<f64>,
}

impl From<&StabilityReport> for StabilityReportRepr {
    fn from(r: &StabilityReport) -> Self {
        Self {
            eigenvalues: r
                .eigenvalues
                .iter()
                .map(|z| ComplexRepr { re: z.re, im: z.im })
                .collect(),
            classification: r.classification,
            zero_eig_count: r.zero_eig_count,
            max_real_part: r.max_real_part,
            factorization_residual: r.factorization_residual,
        }
    }
}

impl From<StabilityReportRepr> for StabilityReport {
    fn from(r: StabilityReportRepr) -> Self {
        Self {
            eigenvalues: r
                .eigenvalues
                .iter()
                .map(|z| Complex64::new(z.re, z.im))
                .collect(),
            classification: r.classification,
            zero_eig_count: r.zero_eig_count,
            max_real_part: r.max_real_part,
            factorization_residual: r.factorization_residual,
        }
    }
}

impl Serialize for StabilityReport {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        StabilityReportRepr::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for StabilityReport {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        StabilityReportRepr::deserialize(d).map(Into::into)
    }
}

pub fn write_trajectory_csv<W: Write>(w: &mut W, traj: &Trajectory) -> io::Result<()> {
    let n = traj.states.first().map_or(0, SystemState::n);
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x_{i}")));
    header.extend((0..n).map(|i| format!("r_{i}")));
    writeln!(w, "{}", header.join(","))?;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let row: Vec<String> = std::iter::once(*t)
            .chain(s.x.iter().copied())
            .chain(s.r.iter().copied())
            .map(fmt_f64)
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Threshold comment lines followed by one CSV row per grid point.
pub fn write_sweep_csv<W: Write>(w: &mut W, sweep: &SweepResult) -> io::Result<()> {
    writeln!(w, "# n={}", sweep.n)?;
    writeln!(
        w,
        "# analytic_threshold={}",
        fmt_f64(sweep.analytic_threshold)
    )?;
    match sweep.empirical_threshold {
        Some(t) => writeln!(w, "# empirical_threshold={}", fmt_f64(t))?,
        None => writeln!(w, "# empirical_threshold=none")?,
    }
    writeln!(w, "x1,lambda1,max_real_part,zero_eig_count,classification")?;
    for p in &sweep.points {
        let class = serde_json::to_value(p.report.classification)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_f64(p.x1),
            fmt_f64(p.lambda1),
            fmt_f64(p.report.max_real_part),
            p.report.zero_eig_count,
            class
        )?;
    }
    Ok(())
}

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use crinlab_core::dynamics::{integrate, Extinction, IntegrationConfig, Scheme, SystemState};
use crinlab_core::experiments::{
    run_dandelion_with_trajectories, sample_params, sweep_x1, ExperimentConfig,
};
use crinlab_core::fixedpoint::{family_point, verify_fixed_point, with_family_f1, FamilyPoint};
use crinlab_core::io::{
    from_json, parse_params, to_json, to_json_pretty, write_sweep_csv, write_trajectory_csv,
    FixedPointReport,
};
use crinlab_core::network::{
    build_matrices, catalog, CrnGraph, ImmuneMatrices, ModelParams, Topology,
};
use crinlab_core::stability::{
    analyze, symmetric_factors, three_node_star_factors, two_node_factors, verify_factorization,
    SampleBox, ZERO_TOL,
};
use crinlab_core::{CrinError, Result};

/// Overrides `--seed` wherever a master seed is read.
const SEED_ENV: &str = "CRINLAB_SEED";

#[derive(Parser, Debug)]
#[command(
    name = "crinlab",
    version,
    about = "Cross-immunoreactivity network laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Indent JSON reports.
    #[arg(long, global = true)]
    pretty: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print a catalog network as JSON.
    Catalog {
        name: String,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Integrate a network and print the trajectory as CSV.
    Simulate(SimulateArgs),
    /// Closed-form fixed point of a catalog topology.
    FixedPoint(PointArgs),
    /// Spectrum and classification at a closed-form fixed point.
    Stability {
        #[command(flatten)]
        point: PointArgs,
        /// Compare det(lambda I - J) with the factored form.
        #[arg(long)]
        verify_factorization: bool,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = ZERO_TOL)]
        zero_tol: f64,
    },
    /// Stability along the x1 family of a star network.
    Sweep {
        #[arg(long)]
        topology: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        params: PathBuf,
        /// `lo:hi:points`, endpoints included.
        #[arg(long)]
        grid: String,
        /// Replace f1 by beta * (f2 + ... + fn).
        #[arg(long)]
        solve_f1: bool,
        #[arg(long, default_value_t = ZERO_TOL)]
        zero_tol: f64,
    },
    /// Batch of random dandelion networks.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct PointArgs {
    #[arg(long)]
    topology: String,
    /// Node count for `star`.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    params: PathBuf,
    /// Persistent-virus level for the star-type families.
    #[arg(long)]
    x1: Option<f64>,
    /// Put the persistent role on node 3 instead of node 1 (symmetric3).
    #[arg(long)]
    swap_roles: bool,
    /// Replace f1 by beta * (f2 + ... + fn).
    #[arg(long)]
    solve_f1: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Network JSON file.
    #[arg(long)]
    net: PathBuf,
    /// Params JSON file; otherwise params and state are drawn from `--seed`.
    #[arg(long, conflicts_with = "seed")]
    params: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Initial state JSON `{"x": [...], "r": [...]}`.
    #[arg(long, conflicts_with_all = ["x0", "r0"])]
    init: Option<PathBuf>,
    /// Uniform initial virus level.
    #[arg(long, requires = "r0")]
    x0: Option<f64>,
    /// Uniform initial antibody level.
    #[arg(long, requires = "x0")]
    r0: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 10_000)]
    steps: u64,
    #[arg(long, value_enum, default_value_t = SchemeArg::Euler)]
    scheme: SchemeArg,
    #[arg(long, default_value_t = 1e-9)]
    eq_tol: f64,
    #[arg(long, default_value_t = 1)]
    stride: u64,
    /// `initial` (each virus's starting level) or an absolute threshold.
    #[arg(long, num_args = 0..=1, default_missing_value = "initial")]
    extinction: Option<String>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 20)]
    runs: usize,
    #[arg(long)]
    tail: String,
    #[arg(long, default_value_t = 98)]
    ball_size: usize,
    #[arg(long, default_value_t = 0.5)]
    edge_prob: f64,
    /// dt = 1e-2 over the default horizon.
    #[arg(long)]
    coarse: bool,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    eq_tol: Option<f64>,
    /// Keep viruses alive below their initial level.
    #[arg(long)]
    no_extinction: bool,
    /// Write each run's trajectory as `run_<k>.csv` into this directory.
    #[arg(long)]
    dump_trajectories: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SchemeArg {
    Euler,
    Rk4,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Euler => Scheme::Euler,
            SchemeArg::Rk4 => Scheme::Rk4,
        }
    }
}

#[derive(Debug)]
enum Failure {
    Model(CrinError),
    Io(String),
}

impl From<CrinError> for Failure {
    fn from(e: CrinError) -> Self {
        Failure::Model(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Model(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }

    fn report(&self) -> String {
        let (kind, message) = match self {
            Failure::Model(e) => (e.kind(), e.to_string()),
            Failure::Io(m) => ("io", m.clone()),
        };
        serde_json::json!({ "error": kind, "message": message }).to_string()
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> std::result::Result<String, Failure> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn load_params(path: &Path) -> std::result::Result<ModelParams, Failure> {
    Ok(parse_params(&read(path)?)?)
}

fn master_seed(flag: Option<u64>) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CrinError::OutOfRange(format!("{SEED_ENV} is not a u64: {v:?}"))),
        Err(_) => {
            flag.ok_or_else(|| CrinError::OutOfRange(format!("--seed or {SEED_ENV} required")))
        }
    }
}

fn topology(name: &str, n: Option<usize>) -> Result<Topology> {
    match n {
        Some(_) => Topology::from_name(name, n),
        None => name.parse(),
    }
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || CrinError::OutOfRange(format!("grid must be lo:hi:points, got {spec:?}"));
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, k] = parts[..] else {
        return Err(bad());
    };
    let lo: f64 = lo.parse().map_err(|_| bad())?;
    let hi: f64 = hi.parse().map_err(|_| bad())?;
    let k: usize = k.parse().map_err(|_| bad())?;
    if k < 2 || !(lo < hi) {
        return Err(bad());
    }
    Ok((0..k)
        .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
        .collect())
}

fn json<T: serde::Serialize>(value: &T, pretty: bool) -> Vec<u8> {
    let mut s = if pretty {
        to_json_pretty(value)
    } else {
        to_json(value)
    };
    s.push('\n');
    s.into_bytes()
}

fn point_setup(
    args: &PointArgs,
) -> std::result::Result<(Topology, ModelParams, FamilyPoint, ImmuneMatrices), Failure> {
    let topo = topology(&args.topology, args.n)?;
    let mut params = load_params(&args.params)?;
    if args.solve_f1 {
        params = with_family_f1(&params)?;
    }
    let (point, m) = family_point(topo, &params, args.x1, args.swap_roles)?;
    Ok((topo, params, point, m))
}

fn run(cli: &Cli) -> std::result::Result<Vec<u8>, Failure> {
    match &cli.command {
        Command::Catalog { name, n } => {
            let g = match n {
                Some(_) => catalog(name, *n)?,
                None => name.parse::<Topology>()?.graph()?,
            };
            Ok(json(&g, cli.pretty))
        }
        Command::Simulate(a) => simulate(a),
        Command::FixedPoint(a) => {
            let (topo, params, point, m) = point_setup(a)?;
            let residual = verify_fixed_point(point.state(), &params, &m, 0.0)?.residual;
            let report = FixedPointReport::new(topo.to_string(), &params, &point, residual);
            Ok(json(&report, cli.pretty))
        }
        Command::Stability {
            point: a,
            verify_factorization: verify,
            samples,
            zero_tol,
        } => {
            let (topo, params, point, m) = point_setup(a)?;
            if a.swap_roles && *verify {
                return Err(CrinError::OutOfRange(
                    "--verify-factorization uses the unswapped labeling".into(),
                )
                .into());
            }
            let (jac, mut report) = analyze(point.state(), &params, &m, *zero_tol)?;
            if *verify {
                let x1 = a.x1.unwrap_or_default();
                let factors = match topo {
                    Topology::Symmetric3 => symmetric_factors(&params)?,
                    Topology::TwoNode | Topology::Star(2) => two_node_factors(&params, x1)?,
                    Topology::Star(3) => three_node_star_factors(&params, x1)?,
                    other => {
                        return Err(CrinError::UnknownTopology(format!(
                            "no closed-form factorization for {other}"
                        ))
                        .into())
                    }
                };
                report.factorization_residual = Some(verify_factorization(
                    &jac.j,
                    &factors,
                    *samples,
                    SampleBox::default(),
                    0,
                )?);
            }
            Ok(json(&report, cli.pretty))
        }
        Command::Sweep {
            topology: name,
            n,
            params,
            grid,
            solve_f1,
            zero_tol,
        } => {
            let n = match topology(name, *n)? {
                Topology::Star(n) => n,
                Topology::TwoNode => 2,
                other => {
                    return Err(CrinError::UnknownTopology(format!(
                        "sweep needs a star topology, got {other}"
                    ))
                    .into())
                }
            };
            let mut params = load_params(params)?;
            if *solve_f1 {
                params = with_family_f1(&params)?;
            }
            let sweep = sweep_x1(&params, n, &parse_grid(grid)?, *zero_tol)?;
            let mut buf = Vec::new();
            write_sweep_csv(&mut buf, &sweep).map_err(|e| Failure::Io(e.to_string()))?;
            Ok(buf)
        }
        Command::Experiment(a) => experiment(a, cli.pretty),
    }
}

fn simulate(a: &SimulateArgs) -> std::result::Result<Vec<u8>, Failure> {
    let graph: CrnGraph = from_json(&read(&a.net)?, "network")?;
    let n = graph.n();
    let (params, sampled) = match &a.params {
        Some(path) => (load_params(path)?, None),
        None => {
            let (p, s) = sample_params(master_seed(a.seed)?, n, None)?;
            (p, Some(s))
        }
    };
    let state0 = match (&a.init, a.x0.zip(a.r0), sampled) {
        (Some(path), _, _) => from_json::<SystemState>(&read(path)?, "initial state")?,
        (None, Some((x0, r0)), _) => SystemState::uniform(n, x0, r0),
        (None, None, Some(s)) => s,
        (None, None, None) => {
            return Err(CrinError::OutOfRange(
                "initial state needed: --init, --x0/--r0 or --seed".into(),
            )
            .into())
        }
    };
    let extinction = match a.extinction.as_deref() {
        None => None,
        Some("initial") => Some(Extinction::InitialConcentration),
        Some(v) => Some(Extinction::Absolute(v.parse().map_err(|_| {
            CrinError::OutOfRange(format!(
                "--extinction takes `initial` or a number, got {v:?}"
            ))
        })?)),
    };
    let cfg = IntegrationConfig {
        scheme: a.scheme.into(),
        dt: a.dt,
        max_steps: a.steps,
        eq_tol: a.eq_tol,
        extinction,
        sample_stride: a.stride,
    };
    let m = build_matrices(&graph, &params)?;
    let traj = integrate(&state0, &params, &m, &cfg)?;
    let mut buf = Vec::new();
    write_trajectory_csv(&mut buf, &traj).map_err(|e| Failure::Io(e.to_string()))?;
    Ok(buf)
}

fn experiment(a: &ExperimentArgs, pretty: bool) -> std::result::Result<Vec<u8>, Failure> {
    let tail: Topology = a.tail.parse()?;
    let mut cfg = ExperimentConfig::new(master_seed(a.seed)?, tail, a.runs);
    cfg.ball_size = a.ball_size;
    cfg.edge_prob = a.edge_prob;
    if a.coarse {
        cfg = cfg.coarse();
    }
    if let Some(dt) = a.dt {
        cfg.integration.dt = dt;
    }
    if let Some(ms) = a.max_steps {
        cfg.integration.max_steps = ms;
    }
    if let Some(tol) = a.eq_tol {
        cfg.integration.eq_tol = tol;
    }
    if a.no_extinction {
        cfg.integration.extinction = None;
    }
    let keep = a.dump_trajectories.is_some();
    let (report, trajs) = run_dandelion_with_trajectories(&cfg, keep)?;
    if let Some(dir) = &a.dump_trajectories {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (k, traj) in trajs.iter().enumerate() {
            let path = dir.join(format!("run_{k}.csv"));
            let mut f = fs::File::create(&path).map_err(io_err(&path))?;
            write_trajectory_csv(&mut f, traj).map_err(io_err(&path))?;
        }
    }
    Ok(json(&report, pretty))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            let line = serde_json::json!({ "error": "usage", "message": first });
            eprintln!("{line}");
            return ExitCode::from(1);
        }
    };
    let written = run(&cli).and_then(|bytes| match &cli.out {
        Some(path) => fs::write(path, &bytes).map_err(io_err(path)),
        None => io::stdout()
            .lock()
            .write_all(&bytes)
            .map_err(|e| Failure::Io(e.to_string())),
    });
    match written {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.report());
            ExitCode::from(f.exit_code())
        }
    }
}

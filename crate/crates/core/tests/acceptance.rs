//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Run with `cargo test --test acceptance`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use crinlab_core::dynamics::{
    integrate, rhs, stimulation_probabilities, IntegrationConfig, SystemState,
};
use crinlab_core::experiments::{run_dandelion, spectral_crossing, ExperimentConfig};
use crinlab_core::fixedpoint::{
    family_point, star_family, symmetric_fixed_point, verify_fixed_point, with_family_f1,
    StarFamilyPoint,
};
use crinlab_core::io::to_json_pretty;
use crinlab_core::linalg::eigenvalues;
use crinlab_core::network::{build_matrices, CrnGraph, ModelParams, Topology};
use crinlab_core::rng::SeededRng;
use crinlab_core::stability::{
    analyze, jacobian_analytic, jacobian_fd, star_zero_eigenvector, symmetric_factors,
    three_node_star_factors, two_node_factors, verify_factorization, CharPolyFactors,
    Classification, SampleBox, ZERO_TOL,
};

type Outcome = Result<String, String>;

fn set1() -> ModelParams {
    ModelParams::new(vec![2.0, 3.0, 3.0], 2.0, 1.0, 3.0, 2.0 / 3.0, 4.0 / 9.0).unwrap()
}

fn set2() -> ModelParams {
    ModelParams::new(vec![2.0, 2.0, 3.0], 2.0, 1.0, 1.0, 0.75, 9.0 / 16.0).unwrap()
}

fn random_params(rng: &mut SeededRng, n: usize) -> ModelParams {
    let f = (0..n).map(|_| rng.uniform(0.2, 3.0)).collect();
    let alpha = rng.uniform(0.55, 0.95);
    let beta = alpha * rng.uniform(0.1, 0.9);
    let (p, c, b) = (
        rng.uniform(0.2, 4.0),
        rng.uniform(0.2, 4.0),
        rng.uniform(0.2, 4.0),
    );
    ModelParams::new(f, p, c, b, alpha, beta).unwrap()
}

/// Symmetric-network parameters satisfying `beta f2 < f1 < f3`, `alpha > 1/2`.
fn feasible_symmetric(rng: &mut SeededRng) -> ModelParams {
    let mut params = random_params(rng, 3);
    let f1 = rng.uniform(0.5, 3.0);
    params.f = vec![
        f1,
        rng.uniform(0.1, 0.9) * f1 / params.beta,
        f1 + rng.uniform(0.1, 2.0),
    ];
    params
}

fn star_params(rng: &mut SeededRng, n: usize) -> ModelParams {
    with_family_f1(&random_params(rng, n)).unwrap()
}

fn capacity(params: &ModelParams) -> f64 {
    StarFamilyPoint::capacity(params)
}

fn random_graph(rng: &mut SeededRng, n: usize, q: f64) -> CrnGraph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.bernoulli(q) {
                edges.push((i, j));
            }
        }
    }
    CrnGraph::new(n, edges).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn criterion_1() -> Outcome {
    let params = set1();
    let factors = symmetric_factors(&params).map_err(|e| e.to_string())?;
    let [l1, l2] = factors.linear_roots[..] else {
        return Err("expected two linear factors".into());
    };
    if !(close(l1, -1.5, 1e-12) && close(l2, -1.5, 1e-12)) {
        return Err(format!("lambda1 = {l1}, lambda2 = {l2}"));
    }
    let fp = symmetric_fixed_point(&params).unwrap();
    let m = build_matrices(&Topology::Symmetric3.graph().unwrap(), &params).unwrap();
    let (_, report) = analyze(&fp.state, &params, &m, ZERO_TOL).map_err(|e| e.to_string())?;
    let eigs = &report.eigenvalues;
    let real_double = eigs
        .iter()
        .filter(|z| (z.re + 1.5).abs() < 1e-7 && z.im.abs() < 1e-7)
        .count();
    let complex: Vec<_> = eigs.iter().filter(|z| z.im.abs() > 1e-7).collect();
    let conj_pairs = complex
        .iter()
        .filter(|z| z.im > 0.0)
        .filter(|z| complex.iter().any(|w| (w.conj() - **z).norm() < 1e-9))
        .count();
    if real_double != 2 || complex.len() != 4 || conj_pairs != 2 || report.max_real_part >= 0.0 {
        return Err(format!("spectrum {eigs:?}"));
    }
    Ok(format!(
        "lambda1 = lambda2 = -1.5; two complex pairs; max Re = {:.4}",
        report.max_real_part
    ))
}

fn criterion_2() -> Outcome {
    let params = set2();
    let factors = symmetric_factors(&params).map_err(|e| e.to_string())?;
    let (l1, l2) = (factors.linear_roots[0], factors.linear_roots[1]);
    if !(close(l1, -14.0 / 9.0, 1e-12) && close(l2, -2.0 / 3.0, 1e-12)) {
        return Err(format!("lambda1 = {l1}, lambda2 = {l2}"));
    }
    let fp = symmetric_fixed_point(&params).unwrap();
    let m = build_matrices(&Topology::Symmetric3.graph().unwrap(), &params).unwrap();
    let (_, report) = analyze(&fp.state, &params, &m, ZERO_TOL).map_err(|e| e.to_string())?;
    if report.classification != Classification::Stable {
        return Err(format!("classified {:?}", report.classification));
    }
    Ok(format!("lambda1 = {l1:.12}, lambda2 = {l2:.12}, stable"))
}

fn factor_residual(topology: Topology, params: &ModelParams, x1: Option<f64>, seed: u64) -> f64 {
    let (point, m) = family_point(topology, params, x1, false).unwrap();
    let jac = jacobian_analytic(point.state(), params, &m).unwrap();
    let factors: CharPolyFactors = match topology {
        Topology::Symmetric3 => symmetric_factors(params).unwrap(),
        Topology::TwoNode => two_node_factors(params, x1.unwrap()).unwrap(),
        Topology::Star(3) => three_node_star_factors(params, x1.unwrap()).unwrap(),
        other => unreachable!("{other}"),
    };
    verify_factorization(&jac.j, &factors, 20, SampleBox::default(), seed).unwrap()
}

fn criterion_3() -> Outcome {
    let mut rng = SeededRng::new(3);
    let mut sources = vec![set1(), set2()];
    sources.extend((0..20).map(|_| feasible_symmetric(&mut rng)));
    let mut worst = [0.0f64; 3];
    for (k, params) in sources.iter().enumerate() {
        let seed = k as u64;
        worst[0] = worst[0].max(factor_residual(Topology::Symmetric3, params, None, seed));

        let mut two = params.clone();
        two.f = vec![params.beta * params.f[1], params.f[1]];
        let x1 = rng.uniform(0.05, 0.95) * capacity(&two);
        worst[1] = worst[1].max(factor_residual(Topology::TwoNode, &two, Some(x1), seed));

        let three = with_family_f1(params).unwrap();
        let x1 = rng.uniform(0.05, 0.95) * capacity(&three);
        worst[2] = worst[2].max(factor_residual(Topology::Star(3), &three, Some(x1), seed));
    }
    // a corrupted factor must be caught
    let params = set1();
    let fp = symmetric_fixed_point(&params).unwrap();
    let m = build_matrices(&Topology::Symmetric3.graph().unwrap(), &params).unwrap();
    let jac = jacobian_analytic(&fp.state, &params, &m).unwrap();
    let mut bad = symmetric_factors(&params).unwrap();
    bad.linear_roots[0] += 0.01;
    let corrupted = verify_factorization(&jac.j, &bad, 20, SampleBox::default(), 0).unwrap();

    let detail = format!(
        "max residual symmetric {:.1e}, two-node {:.1e}, three-node star {:.1e}; corrupted {:.1e}",
        worst[0], worst[1], worst[2], corrupted
    );
    if worst.iter().all(|&w| w < 1e-8) && corrupted > 1e-3 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_4() -> Outcome {
    let mut rng = SeededRng::new(4);
    let mut worst_annihilation: f64 = 0.0;
    let mut worst_crossing: f64 = 0.0;
    for n in 2..=10 {
        let params = star_params(&mut rng, n);
        let m = build_matrices(&Topology::Star(n).graph().unwrap(), &params).unwrap();
        for _ in 0..5 {
            let x1 = rng.uniform(0.02, 0.98) * capacity(&params);
            let fp = star_family(&params, n, x1).unwrap();
            let jac = jacobian_analytic(&fp.state, &params, &m).unwrap();
            let eigs = eigenvalues(&jac.j).map_err(|e| e.to_string())?;
            let zeros = eigs.iter().filter(|z| z.norm() < 1e-9).count();
            if zeros != 1 {
                return Err(format!("n = {n}, x1 = {x1}: {zeros} eigenvalues under 1e-9"));
            }
            let v = nalgebra::DVector::from_vec(star_zero_eigenvector(&fp));
            let jv = &jac.j * &v;
            let rel = jv.amax() / (jac.sup_norm() * v.amax());
            worst_annihilation = worst_annihilation.max(rel);
        }
        let crossing = spectral_crossing(&params, n, ZERO_TOL, 1e-10).map_err(|e| e.to_string())?;
        let threshold = StarFamilyPoint::threshold(&params);
        worst_crossing = worst_crossing.max((crossing - threshold).abs());
    }
    let detail = format!(
        "one zero eigenvalue at all 45 points; annihilation {worst_annihilation:.1e}; \
         crossing error {worst_crossing:.1e}"
    );
    if worst_annihilation < 1e-9 && worst_crossing < 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_5() -> Outcome {
    let mut rng = SeededRng::new(5);
    let named = [
        Topology::Symmetric3,
        Topology::BranchCycle3,
        Topology::TwoNode,
        Topology::Star(4),
    ];
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let graph = if k % 2 == 0 {
            named[(k / 2) % named.len()].graph().unwrap()
        } else {
            let n = 2 + (k % 7);
            random_graph(&mut rng, n, 0.4)
        };
        let n = graph.n();
        let params = random_params(&mut rng, n);
        let m = build_matrices(&graph, &params).unwrap();
        let state = SystemState {
            x: (0..n).map(|_| rng.uniform(0.1, 3.0)).collect(),
            r: (0..n).map(|_| rng.uniform(0.1, 3.0)).collect(),
        };
        let an = jacobian_analytic(&state, &params, &m).unwrap();
        let fd = jacobian_fd(&state, &params, &m, 1e-6).unwrap();
        if fd.guarded.iter().any(|&g| g) {
            return Err(format!("draw {k} hit the denominator guard"));
        }
        worst = worst.max((&an.j - &fd.j).amax());
    }
    let detail = format!("max entrywise difference {worst:.1e} over 100 draws");
    if worst < 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_6() -> Outcome {
    let mut rng = SeededRng::new(6);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let mut check = |topology: Topology, params: &ModelParams, x1: Option<f64>, swapped: bool| {
        let (point, m) = family_point(topology, params, x1, swapped).unwrap();
        let res = verify_fixed_point(point.state(), params, &m, 1e-10).unwrap();
        worst = worst.max(res.residual);
        count += 1;
    };
    let mut swapped_set1 = set1();
    swapped_set1.f.reverse();
    check(Topology::Symmetric3, &set1(), None, false);
    check(Topology::Symmetric3, &set2(), None, false);
    check(Topology::Symmetric3, &swapped_set1, None, true);
    for _ in 0..20 {
        check(Topology::Symmetric3, &feasible_symmetric(&mut rng), None, false);
    }
    for n in 2..=10 {
        let params = star_params(&mut rng, n);
        let topology = if n == 2 {
            Topology::TwoNode
        } else {
            Topology::Star(n)
        };
        for _ in 0..5 {
            let x1 = rng.uniform(0.01, 0.99) * capacity(&params);
            check(topology, &params, Some(x1), false);
            if n == 2 {
                check(Topology::Star(2), &params, Some(x1), false);
            }
        }
    }
    let detail = format!("max residual {worst:.1e} over {count} points");
    if worst < 1e-10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_7() -> Outcome {
    let mut rng = SeededRng::new(7);
    let (mut worst_row, mut worst_flow): (f64, f64) = (0.0, 0.0);
    let mut guarded_rows = 0;
    for _ in 0..1000 {
        let n = 1 + (rng.next_u64() % 12) as usize;
        let q = rng.uniform(0.0, 1.0);
        let graph = random_graph(&mut rng, n, q);
        let params = random_params(&mut rng, n);
        let m = build_matrices(&graph, &params).unwrap();
        let state = SystemState {
            x: (0..n).map(|_| rng.uniform(0.0, 5.0)).collect(),
            r: (0..n)
                .map(|_| {
                    if rng.bernoulli(0.2) {
                        0.0
                    } else {
                        rng.uniform(0.0, 5.0)
                    }
                })
                .collect(),
        };
        let g = stimulation_probabilities(&state, &m).unwrap();
        for j in 0..n {
            if g.guarded[j] {
                guarded_rows += 1;
            } else {
                worst_row = worst_row.max((g.g.row(j).sum() - 1.0).abs());
            }
        }
        let d = rhs(&state, &params, &m).unwrap();
        let inflow: f64 = (0..n).filter(|&j| !g.guarded[j]).map(|j| state.x[j]).sum();
        let expected = params.c * inflow - params.b * state.r.iter().sum::<f64>();
        let got: f64 = d.dr.iter().sum();
        worst_flow = worst_flow.max((got - expected).abs());
    }
    let detail = format!(
        "row-sum error {worst_row:.1e}, flow error {worst_flow:.1e} ({guarded_rows} guarded rows)"
    );
    if worst_row < 1e-12 && worst_flow < 1e-10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_8() -> Outcome {
    let params = set1();
    let fp = symmetric_fixed_point(&params).unwrap();
    let m = build_matrices(&Topology::Symmetric3.graph().unwrap(), &params).unwrap();
    let mut start = fp.state.clone();
    for v in start.x.iter_mut().chain(start.r.iter_mut()) {
        if *v != 0.0 {
            *v += 1e-3;
        }
    }
    let cfg = IntegrationConfig {
        dt: 1e-3,
        max_steps: 200_000,
        eq_tol: 0.0,
        sample_stride: 200_000,
        ..IntegrationConfig::default()
    };
    let traj = integrate(&start, &params, &m, &cfg).map_err(|e| e.to_string())?;
    let dist = traj.final_state().sup_distance(&fp.state);
    let detail = format!(
        "distance {:.1e} to the fixed point at t = {}",
        dist,
        traj.final_time()
    );
    if dist < 1e-4 && (traj.final_time() - 200.0).abs() < 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const MASTER_SEED: u64 = 2024;

fn dandelion_batch() -> (Vec<String>, Vec<String>, Duration) {
    let t = Instant::now();
    let mut texts = Vec::new();
    let mut lines = Vec::new();
    for tail in [Topology::BranchCycle3, Topology::Symmetric3] {
        let cfg = ExperimentConfig::new(MASTER_SEED, tail, 20).coarse();
        let report = run_dandelion(&cfg).unwrap();
        let a = &report.aggregate;
        let frac = a
            .fraction_li_at_equilibrium
            .map_or("n/a".to_string(), |f| format!("{f:.2}"));
        lines.push(format!(
            "{tail}: LI at equilibrium {}/{} = {frac}, LI over all runs {}/{}",
            a.li_equilibrium_runs, a.equilibrium_runs, a.li_runs, a.runs
        ));
        texts.push(to_json_pretty(&report));
        let pass = a.fraction_li_at_equilibrium.is_some_and(|f| f >= 0.7);
        lines.push(pass.to_string());
    }
    (texts, lines, t.elapsed())
}

fn criterion_9(batch: &(Vec<String>, Vec<String>, Duration)) -> Outcome {
    let (_, lines, elapsed) = batch;
    let pass = lines[1] == "true" && lines[3] == "true" && elapsed.as_secs_f64() < 300.0;
    let detail = format!(
        "{}; {}; coarse batch {:.0} s",
        lines[0],
        lines[2],
        elapsed.as_secs_f64()
    );
    if pass {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_10(batch: &(Vec<String>, Vec<String>, Duration)) -> Outcome {
    let (again, _, _) = dandelion_batch();
    if again == batch.0 {
        Ok(format!(
            "reports identical ({} bytes)",
            again.iter().map(String::len).sum::<usize>()
        ))
    } else {
        Err("reports differ between identical runs".into())
    }
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |k: usize, outcome: Outcome, took: Duration| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] criterion {k:>2}: {detail} ({:.2} s)", took.as_secs_f64());
    };
    let quick: [fn() -> Outcome; 8] = [
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
    ];
    for (k, f) in quick.iter().enumerate() {
        let t = Instant::now();
        let outcome = f();
        report(k + 1, outcome, t.elapsed());
    }
    let batch = dandelion_batch();
    report(9, criterion_9(&batch), batch.2);
    let t = Instant::now();
    let outcome = criterion_10(&batch);
    report(10, outcome, t.elapsed());

    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}

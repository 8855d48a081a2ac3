//! Acceptance suite: one test per criterion, each printing a single
//! `[PASS]`/`[FAIL]` line (run with `--nocapture` to see them).
//!
//! The tests share a lock so that the timing criteria run alone.

mod common;

use std::sync::Mutex;
use std::time::{Duration, Instant};

use common::*;
use pathlift::autodiff::{finite_difference, grad_path_norm, max_relative_error};
use pathlift::experiment::{run_experiment, Criterion, ExperimentConfig};
use pathlift::fixtures::{diamond, diamond_params};
use pathlift::lipschitz::{bound_rhs, breakpoints, equality_witness, sign_counterexample, verify_bound, BoundVariant};
use pathlift::metrics::{
    mlp_bounds, path_metric_exact_dominated, path_metric_lower, path_metric_upper_coarse, path_metric_upper_refined, path_norm_fast, Mlp,
};
use pathlift::net::Architecture;
use pathlift::paths::PathOracle;
use pathlift::pruning::{path_mag_scores, pruning_error_bound, Mask, ScoreMethod};
use pathlift::sample::{cnn, random_architecture, random_input, random_params, random_subset, same_sign_partner, DagShape, ParamRange};
use pathlift::transforms::{random_rescaling_with, rescale, RescalePreset, Rescaling};
use pathlift::{forward, validate_architecture, Activation, ArchSpec, ParamVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: usize, name: &str, failures: &[String], detail: String) {
    let tag = if failures.is_empty() { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {n:>2}: {name}: {detail}");
    assert!(failures.is_empty(), "criterion {n} ({name}) failed:\n{}", failures.iter().take(10).cloned().collect::<Vec<_>>().join("\n"));
}

fn desk(seed: u64) -> (Architecture, ParamVector, ChaCha8Rng) {
    let mut r = rng(seed);
    let arch = random_architecture(&mut r, &DagShape::default());
    let theta = random_params(&mut r, &arch, &ParamRange::default());
    (arch, theta, r)
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| rel_err(*x, *y)).fold(0.0, f64::max)
}

#[test]
fn criterion_01_fast_path_norm_matches_enumeration() {
    let _g = serial();
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let (arch, theta, _) = desk(1_000 + seed);
        let fast = path_norm_fast(&arch, &theta, 1.0).unwrap();
        let enumerated: f64 = PathOracle::new(&arch).unwrap().lifting(&theta).unwrap().values.iter().map(|v| v.abs()).sum();
        let e = rel_err(fast, enumerated);
        worst = worst.max(e);
        if e > 1e-9 {
            failures.push(format!("seed {seed}: fast {fast} vs enumerated {enumerated}"));
        }
    }
    let elapsed = start.elapsed();
    if elapsed >= Duration::from_secs(10) {
        failures.push(format!("took {elapsed:?}"));
    }
    verdict(1, "path-norm oracle equivalence", &failures, format!("100 nets, max rel err {worst:.2e}, {elapsed:.2?}"));
}

#[test]
fn criterion_02_linearized_output_matches_forward() {
    let _g = serial();
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let (arch, theta, mut r) = desk(1_000 + seed);
        let oracle = PathOracle::new(&arch).unwrap();
        for _ in 0..5 {
            let x = random_input(&mut r, &arch, 3.0);
            let (lin, out) = (oracle.linearized_output(&theta, &x).unwrap(), forward(&arch, &theta, &x).unwrap());
            let e = max_rel_err(&lin, &out);
            worst = worst.max(e);
            if e > 1e-9 {
                failures.push(format!("seed {seed}: {lin:?} vs {out:?}"));
            }
        }
    }
    verdict(2, "linearized output equals forward", &failures, format!("500 evaluations, max rel err {worst:.2e}"));
}

#[test]
fn criterion_03_rescaling_invariance() {
    let _g = serial();
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for seed in 0..1000 {
        let (arch, theta, mut r) = desk(3_000 + seed);
        let other = same_sign_partner(&mut r, &arch, &theta, &ParamRange::default(), 0.2);
        let lambda = random_rescaling_with(&arch, &mut r, RescalePreset::FixedFactors);
        let mu = random_rescaling_with(&arch, &mut r, RescalePreset::FixedFactors);
        let (ts, os) = (rescale(&arch, &theta, &lambda).unwrap(), rescale(&arch, &other, &mu).unwrap());
        let x = random_input(&mut r, &arch, 3.0);
        let oracle = PathOracle::new(&arch).unwrap();
        let summary = |t: &ParamVector, o: &ParamVector| -> Vec<f64> {
            let (pt, po) = (oracle.lifting(t).unwrap(), oracle.lifting(o).unwrap());
            let mut v = pt.values.clone();
            v.push(path_norm_fast(&arch, t, 1.0).unwrap());
            v.push(pt.distance_l1(&po));
            v.push(path_metric_lower(&arch, t, o).unwrap());
            v.push(path_metric_exact_dominated(&arch, t, o).map(|m| m.value).unwrap_or(-1.0));
            v.push(path_metric_upper_coarse(&arch, t, o, 1.0).unwrap());
            v.push(path_metric_upper_refined(&arch, t, o, 1.0).unwrap());
            v.extend(path_mag_scores(&arch, t, ScoreMethod::Autodiff).unwrap().values);
            v.push(bound_rhs(&arch, t, o, &x, BoundVariant::Main).unwrap());
            v.push(bound_rhs(&arch, t, o, &x, BoundVariant::Split).unwrap());
            v.extend(forward(&arch, t, &x).unwrap());
            v
        };
        let (a, b) = (summary(&theta, &other), summary(&ts, &os));
        let e = max_rel_err(&a, &b);
        worst = worst.max(e);
        if e > 1e-9 {
            failures.push(format!("seed {seed}: max rel err {e:.3e}"));
        }
    }
    verdict(3, "rescaling invariance", &failures, format!("1000 (net, θ, λ), max rel err {worst:.2e}"));
}

#[test]
fn criterion_04_bound_soundness_and_sign_counterexample() {
    let _g = serial();
    let mut failures = Vec::new();
    let mut checked = 0;
    for seed in 0..1000 {
        let (arch, theta, mut r) = desk(4_000 + seed);
        let other = same_sign_partner(&mut r, &arch, &theta, &ParamRange::default(), 0.2);
        let x = random_input(&mut r, &arch, 3.0);
        for variant in [BoundVariant::Main, BoundVariant::Split] {
            let rep = verify_bound(&arch, &theta, &other, &x, variant).unwrap();
            checked += 1;
            if !rep.holds {
                failures.push(format!("seed {seed} {variant:?}: lhs {} > rhs {}", rep.lhs, rep.rhs));
            }
        }
    }
    let w = sign_counterexample();
    if !(w.report.lhs == 1.0 && w.report.rhs == 0.0 && w.path_metric == 0.0 && !w.report.holds) {
        failures.push(format!("counterexample: lhs {} rhs {} metric {}", w.report.lhs, w.report.rhs, w.path_metric));
    }
    verdict(
        4,
        "bound soundness",
        &failures,
        format!("{checked} checks, {} violations; flipped signs: lhs {} > rhs {}", failures.len(), w.report.lhs, w.report.rhs),
    );
}

#[test]
fn criterion_05_equality_witnesses_are_tight() {
    let _g = serial();
    let mut failures = Vec::new();
    let mut r = rng(5);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let d = r.random_range(1..=4);
        let draw = |r: &mut ChaCha8Rng| 4.0 - r.random_range(0.0..4.0);
        let (a, b, x0) = (draw(&mut r), draw(&mut r), draw(&mut r));
        let w = equality_witness(d, a, b, x0).unwrap();
        worst = worst.max(w.report.slack.abs() / w.report.rhs.max(f64::MIN_POSITIVE));
        if w.report.slack.abs() > 1e-12 * w.report.rhs {
            failures.push(format!("case {i}: d={d} a={a} b={b} x0={x0} slack {}", w.report.slack));
        }
    }
    let (arch, theta) = (diamond(), diamond_params());
    let rep = verify_bound(&arch, &theta, &theta.without(2), &[2.0], BoundVariant::Main).unwrap();
    if !(rep.lhs == 6.0 && rep.rhs == 6.0 && rep.slack == 0.0) {
        failures.push(format!("pruned diamond: lhs {} rhs {} slack {}", rep.lhs, rep.rhs, rep.slack));
    }
    verdict(5, "sharpness", &failures, format!("50 witnesses, max |slack|/rhs {worst:.2e}; pruned diamond lhs=rhs={}", rep.rhs));
}

#[test]
fn criterion_06_exact_metric_on_pruning_pairs() {
    let _g = serial();
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for seed in 0..200 {
        let (arch, theta, mut r) = desk(6_000 + seed);
        let mask = Mask::from_pruned(theta.len(), &random_subset(&mut r, theta.len(), 0.3));
        let pruned = mask.apply(&theta);
        let oracle = PathOracle::new(&arch).unwrap();
        let truth = oracle.lifting(&theta).unwrap().distance_l1(&oracle.lifting(&pruned).unwrap());
        let exact = path_metric_exact_dominated(&arch, &theta, &pruned).unwrap().value;
        let lower = path_metric_lower(&arch, &theta, &pruned).unwrap();
        let e = rel_err(exact, truth).max(rel_err(lower, truth));
        worst = worst.max(e);
        if e > 1e-9 {
            failures.push(format!("seed {seed}: exact {exact} lower {lower} oracle {truth}"));
        }
    }
    verdict(6, "exact metric for pruning pairs", &failures, format!("200 pairs, max rel err {worst:.2e}"));
}

#[test]
fn criterion_07_upper_bounds_dominate() {
    let _g = serial();
    let mut failures = Vec::new();
    for seed in 0..200 {
        let (arch, theta, mut r) = desk(7_000 + seed);
        let other = if seed % 2 == 0 {
            random_params(&mut r, &arch, &ParamRange::default())
        } else {
            same_sign_partner(&mut r, &arch, &theta, &ParamRange::default(), 0.2)
        };
        let oracle = PathOracle::new(&arch).unwrap();
        let truth = oracle.lifting(&theta).unwrap().distance_l1(&oracle.lifting(&other).unwrap());
        let coarse = path_metric_upper_coarse(&arch, &theta, &other, 1.0).unwrap();
        let refined = path_metric_upper_refined(&arch, &theta, &other, 1.0).unwrap();
        let tol = 1e-9 * truth;
        if truth > refined + tol || truth > coarse + tol {
            failures.push(format!("seed {seed}: oracle {truth} refined {refined} coarse {coarse}"));
        }
    }
    let (arch, theta) = (diamond(), diamond_params());
    let coarse = path_metric_upper_coarse(&arch, &theta, &theta.without(2), 1.0).unwrap();
    let exact = path_metric_exact_dominated(&arch, &theta, &theta.without(2)).unwrap().value;
    if (coarse, exact) != (24.0, 3.0) {
        failures.push(format!("pruned diamond: coarse {coarse} exact {exact}"));
    }
    verdict(7, "upper bounds dominate the metric", &failures, format!("200 pairs; pruned diamond coarse {coarse} vs exact {exact}"));
}

#[test]
fn criterion_08_score_agreement_and_gradients() {
    let _g = serial();
    let mut failures = Vec::new();
    let (mut worst_scores, mut worst_grad) = (0.0f64, 0.0f64);
    for seed in 0..100 {
        let (arch, theta, _) = desk(8_000 + seed);
        let s: Vec<Vec<f64>> = [ScoreMethod::Autodiff, ScoreMethod::PathnormDiff, ScoreMethod::Bruteforce]
            .iter()
            .map(|&m| path_mag_scores(&arch, &theta, m).unwrap().values)
            .collect();
        let e = max_rel_err(&s[0], &s[1]).max(max_rel_err(&s[0], &s[2])).max(max_rel_err(&s[1], &s[2]));
        worst_scores = worst_scores.max(e);
        if e > 1e-9 {
            failures.push(format!("seed {seed}: score disagreement {e:.3e}"));
        }
        let g = grad_path_norm(&arch, &theta).unwrap();
        let fd = finite_difference(|t| ref_norm(&arch, t), &theta, 1e-6);
        let near_zero: Vec<usize> = (0..theta.len()).filter(|&i| theta[i].abs() < 1e-3).collect();
        let ge = max_relative_error(&g, &fd, &near_zero);
        worst_grad = worst_grad.max(ge);
        if ge >= 1e-5 {
            failures.push(format!("seed {seed}: gradient error {ge:.3e}"));
        }
    }
    verdict(
        8,
        "score identity and gradients",
        &failures,
        format!("100 nets, max score disagreement {worst_scores:.2e}, max gradient error {worst_grad:.2e}"),
    );
}

#[test]
fn criterion_09_pruning_guarantee() {
    let _g = serial();
    let mut failures = Vec::new();
    for seed in 0..1000 {
        let (arch, theta, mut r) = desk(9_000 + seed);
        let prob = r.random_range(0.05..0.6);
        let mask = Mask::from_pruned(theta.len(), &random_subset(&mut r, theta.len(), prob));
        let x = random_input(&mut r, &arch, 3.0);
        let b = pruning_error_bound(&arch, &theta, &mask, &x).unwrap();
        if !b.holds {
            failures.push(format!("seed {seed}: lhs {} > bound {}", b.empirical_lhs, b.bound));
        }
    }
    let (arch, theta) = (diamond(), diamond_params());
    let tight = pruning_error_bound(&arch, &theta, &Mask::from_pruned(7, &[2]), &[2.0]).unwrap();
    if (tight.empirical_lhs, tight.bound) != (6.0, 6.0) {
        failures.push(format!("tight case: {} vs {}", tight.empirical_lhs, tight.bound));
    }
    verdict(
        9,
        "pruning guarantee",
        &failures,
        format!("1000 trials, {} violations; tight case {} <= {}", failures.len(), tight.empirical_lhs, tight.bound),
    );
}

fn mlp_of(widths: &[usize], r: &mut ChaCha8Rng) -> Mlp {
    Mlp::new((1..widths.len()).map(|l| (0..widths[l]).map(|_| (0..widths[l - 1]).map(|_| r.random_range(-1.5..1.5)).collect()).collect()).collect())
        .unwrap()
}

#[test]
fn criterion_10_mlp_bound_pessimism_and_recovered_bounds() {
    let _g = serial();
    let mut failures = Vec::new();
    let (arch, theta) = (diamond(), diamond_params());
    let pruned = theta.without(2);
    let as_mlp = |t: &ParamVector| Mlp::new(vec![vec![vec![t[0]], vec![t[1]]], vec![vec![t[2], t[3]]]]).unwrap();
    let mut ratios = Vec::new();
    let mut metrics = Vec::new();
    for f in [1.0, 128.0, 4096.0] {
        let scaled = rescale(&arch, &theta, &Rescaling::from_named(&arch, &[("h1", f)]).unwrap()).unwrap();
        let oracle = PathOracle::new(&arch).unwrap();
        let metric = oracle.lifting(&scaled).unwrap().distance_l1(&oracle.lifting(&pruned).unwrap());
        let ub = mlp_bounds(&as_mlp(&scaled), &as_mlp(&pruned), &[1.0]).unwrap().path_metric_ub;
        ratios.push(ub / metric);
        metrics.push(metric);
    }
    if !ratios.windows(2).all(|w| w[1] > w[0]) {
        failures.push(format!("ratios not increasing: {ratios:?}"));
    }
    if metrics.iter().any(|m| rel_err(*m, metrics[0]) > 1e-9) {
        failures.push(format!("metric moved: {metrics:?}"));
    }

    let mut r = rng(10);
    let (mut opposite, mut checked) = (0, 0);
    for i in 0..500 {
        let depth = r.random_range(1..=3);
        let widths: Vec<usize> = (0..=depth).map(|_| r.random_range(1..=4)).collect();
        let a = mlp_of(&widths, &mut r);
        let b = if i % 2 == 0 {
            mlp_of(&widths, &mut r)
        } else {
            // same signs, fresh magnitudes
            Mlp::new(a.layers().iter().map(|m| m.iter().map(|row| row.iter().map(|w| w * r.random_range(0.0..2.0)).collect()).collect()).collect())
                .unwrap()
        };
        let x: Vec<f64> = (0..widths[0]).map(|_| r.random_range(-3.0..3.0)).collect();
        let (net, ta) = a.to_network();
        let (_, tb) = b.to_network();
        let gap: f64 = forward(&net, &ta, &x).unwrap().iter().zip(forward(&net, &tb, &x).unwrap()).map(|(p, q)| (p - q).abs()).sum();
        let bounds = mlp_bounds(&a, &b, &x).unwrap();
        let same_sign = ta.iter().zip(tb.iter()).all(|(p, q)| p * q >= 0.0);
        opposite += usize::from(!same_sign);
        checked += 1;
        if gap > bounds.recovered_any_sign * (1.0 + 1e-9) + 1e-12 {
            failures.push(format!("pair {i}: gap {gap} > any-sign bound {}", bounds.recovered_any_sign));
        }
        if same_sign && gap > bounds.recovered_same_sign * (1.0 + 1e-9) + 1e-12 {
            failures.push(format!("pair {i}: gap {gap} > same-sign bound {}", bounds.recovered_same_sign));
        }
    }
    verdict(
        10,
        "parameter-space bound pessimism",
        &failures,
        format!("ratios {:?} at constant metric {}; {checked} MLP pairs ({opposite} with opposite signs)", ratios, metrics[0]),
    );
}

#[test]
fn criterion_11_trajectory_monotonicity_and_telescoping() {
    let _g = serial();
    let mut failures = Vec::new();
    let mut total_breaks = 0;
    for seed in 0..100 {
        let (arch, theta, mut r) = desk(11_000 + seed);
        let other = same_sign_partner(&mut r, &arch, &theta, &ParamRange::default(), 0.0);
        let x = random_input(&mut r, &arch, 3.0);
        let rep = breakpoints(&arch, &theta, &other, &x, 32).unwrap();
        total_breaks += rep.breakpoints.len();
        if !rep.monotone || rel_err(rep.telescoped, rep.endpoint_metric) > 1e-9 {
            failures.push(format!("seed {seed}: monotone {} telescoped {} endpoint {}", rep.monotone, rep.telescoped, rep.endpoint_metric));
        }
    }
    let spec = ArchSpec::new()
        .neuron("a", Activation::Input)
        .neuron("b", Activation::Input)
        .neuron("h", Activation::Relu)
        .neuron("out", Activation::Identity)
        .edge("a", "h")
        .edge("b", "h")
        .edge("h", "out");
    let arch = validate_architecture(&spec).unwrap();
    let theta = ParamVector::from_named(&arch, &[("a", "h", 1.0), ("b", "h", 2.0), ("h", "out", 1.0)], &[]).unwrap();
    let other = ParamVector::from_named(&arch, &[("a", "h", 1.0), ("b", "h", 0.25), ("h", "out", 1.0)], &[]).unwrap();
    let rep = breakpoints(&arch, &theta, &other, &[1.0, -1.0], 32).unwrap();
    let t = rep.breakpoints.first().map_or(f64::NAN, |b| b.t);
    if rep.breakpoints.len() != 1 || (t - 1.0 / 3.0).abs() > 1e-8 {
        failures.push(format!("analytic case: {:?}", rep.breakpoints));
    }
    verdict(
        11,
        "trajectory machinery",
        &failures,
        format!("100 pairs, {total_breaks} breakpoints found; analytic breakpoint at {t:.12} (error {:.1e})", (t - 1.0 / 3.0).abs()),
    );
}

#[test]
fn criterion_12_rescaled_pruning_experiment() {
    let _g = serial();
    let mut failures = Vec::new();
    let mut magnitude_differs = 0;
    let mut slowest = Duration::ZERO;
    for seed in 0..20 {
        let config = ExperimentConfig { seed, ..ExperimentConfig::default() };
        let start = Instant::now();
        let report = run_experiment(&config).unwrap();
        let elapsed = start.elapsed();
        slowest = slowest.max(elapsed);
        if elapsed >= Duration::from_secs(60) {
            failures.push(format!("seed {seed}: took {elapsed:?}"));
        }
        let pm = report.agreement_for(Criterion::PathMag).unwrap().hamming;
        if pm != 0 {
            failures.push(format!("seed {seed}: path-magnitude masks differ in {pm} coordinates"));
        }
        magnitude_differs += usize::from(report.agreement_for(Criterion::Magnitude).unwrap().hamming > 0);
    }
    if magnitude_differs < 19 {
        failures.push(format!("magnitude masks differ on only {magnitude_differs}/20 seeds"));
    }
    verdict(
        12,
        "rescaled pruning experiment",
        &failures,
        format!("20 seeds: path-magnitude Hamming 0 on all, magnitude Hamming > 0 on {magnitude_differs}/20, slowest seed {slowest:.2?}"),
    );
}

#[test]
fn criterion_13_scores_cost_a_few_forward_passes() {
    let _g = serial();
    let arch = cnn(28, 4, 12, 10);
    let mut r = rng(13);
    let theta = random_params(&mut r, &arch, &ParamRange::default());
    let x: Vec<f64> = (0..arch.inputs().len()).map(|_| r.random_range(0.0..1.0)).collect();
    let best_of = |f: &mut dyn FnMut()| (0..7).map(|_| {
        let start = Instant::now();
        f();
        start.elapsed()
    }).min().unwrap();
    let forward_twice = best_of(&mut || {
        std::hint::black_box(forward(&arch, &theta, &x).unwrap());
        std::hint::black_box(forward(&arch, &theta, &x).unwrap());
    });
    let scores = best_of(&mut || {
        std::hint::black_box(path_mag_scores(&arch, &theta, ScoreMethod::Autodiff).unwrap());
    });
    let ratio = scores.as_secs_f64() / forward_twice.as_secs_f64();
    let failures = if ratio < 10.0 { vec![] } else { vec![format!("ratio {ratio:.2}")] };
    verdict(
        13,
        "scale smoke test",
        &failures,
        format!("{} edges: scores {scores:.2?} vs two forward passes {forward_twice:.2?} (ratio {ratio:.2})", arch.num_edges()),
    );
}

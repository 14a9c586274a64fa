//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Failures are reported but the
//! process exits 0 so the rest of the workspace tests still run; set
//! `ACCEPTANCE_STRICT=1` to turn any FAIL into a non-zero exit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use blowup_core::compactify::{
    circle_asymptotic, circle_exponential, circle_power, riemann_sphere, unwrap_angles, CirclePoint,
};
use blowup_core::complex_flows::{quadratic_loop_diagnostics, transition_time};
use blowup_core::mn_scaling::{fit_blowup_scaling, fit_scaling_at};
use blowup_core::ode::signed_pow;
use blowup_core::pde::{
    analytic_complex_reconstruction, analytic_w, locus_distance, run_complex_pde, run_pde, t_touch,
    tip_series, Grid1D, PdeConfig, RegionChart,
};
use blowup_core::protocol::{DEFAULT_R2_THRESHOLD, MIN_FIT_WINDOW};
use blowup_core::{
    cross_infinity, detect_power_law, integrate_until, Branch, Chart, ChartedTrajectory,
    CrossingOptions, CrossingRecord, IntegratorConfig, OdeProblem, Rhs, Sign,
};

struct Report {
    passed: usize,
    failed: Vec<u32>,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        println!(
            "{} [{id:>2}] {name}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        if pass {
            self.passed += 1;
        } else {
            self.failed.push(id);
        }
    }
}

fn crossing(
    rhs: Rhs,
    switch: Option<f64>,
    ret: Option<f64>,
) -> (ChartedTrajectory, CrossingRecord) {
    let problem = OdeProblem::new(rhs, vec![1.0], 0.0).unwrap();
    let mut opts = CrossingOptions::for_rhs(&rhs);
    if let Some(s) = switch {
        opts.switch_level = s;
    }
    if let Some(r) = ret {
        opts.return_level = r;
    }
    cross_infinity(&problem, &IntegratorConfig::default(), &opts).unwrap()
}

fn quadratic(r: &mut Report) {
    let start = Instant::now();
    let (traj, rec) = crossing(
        Rhs::Power {
            p: 2.0,
            sign: Sign::Plus,
        },
        Some(100.0),
        Some(0.01),
    );
    let elapsed = start.elapsed().as_secs_f64();
    let values = traj.original_values(Branch::ImaginaryPlus).unwrap();
    let (t_end, x_end) = *values.last().unwrap();
    let dt_star = (rec.t_star_estimate - 1.0).abs();
    let dx = (x_end.re + 1.0).abs().max(x_end.im.abs());
    r.line(
        1,
        "quadratic crossing",
        dt_star <= 1e-6 && (t_end - 2.0).abs() <= 1e-12 && dx <= 1e-6 && elapsed < 1.0,
        format!("|t*-1| = {dt_star:.2e}, final t = {t_end:.17}, |x(2)+1| = {dx:.2e}, runtime {elapsed:.3} s (tol 1e-6, 1 s)"),
    );
}

fn cubic(r: &mut Report) {
    let (traj, rec) = crossing(
        Rhs::Power {
            p: 3.0,
            sign: Sign::Plus,
        },
        Some(25.0),
        Some(0.04),
    );
    let ts = 0.5;
    let dt_star = (rec.t_star_estimate - ts).abs();
    // The exact solution from x(0) = 1 is x = (1 − 2t)^{−1/2}, so the
    // magnitude after the crossing is (2(t − t⋆))^{−1/2}.
    let mut worst = 0.0f64;
    let mut worst_literal = 0.0f64;
    for (t, z) in traj.original_values(Branch::ImaginaryPlus).unwrap() {
        if t > rec.switch_out.t {
            let exact = (2.0 * (t - ts)).powf(-0.5);
            worst = worst.max((z.norm() - exact).abs() / exact);
            let literal = (t - ts).powf(-0.5);
            worst_literal = worst_literal.max((z.norm() - literal).abs() / literal);
        }
    }
    r.line(
        2,
        "cubic crossing",
        dt_star <= 1e-6 && worst <= 1e-5,
        format!(
            "|t*-0.5| = {dt_star:.2e}, post-crossing |x| vs (2(t-t*))^-1/2 rel {worst:.2e} \
             (tol 1e-5); vs (t-t*)^-1/2 rel {worst_literal:.2e}, off by the factor sqrt(2)"
        ),
    );
}

fn asymptotic(r: &mut Report) {
    let (traj, rec) = crossing(Rhs::AsymptoticQuadratic, None, None);
    let ts = -0.5 * (1.0f64 / 3.0).ln();
    let dt_star = (rec.t_star_estimate - ts).abs();
    let mut worst = 0.0f64;
    for (t, x) in traj.original_values(Branch::RealContinuation).unwrap() {
        if (t - ts).abs() <= 1e-2 {
            continue;
        }
        let e = (2.0 * (t - ts)).exp();
        let exact = 2.0 * e / (1.0 - e);
        worst = worst.max((x.re - exact).abs().max(x.im.abs()) / exact.abs());
    }
    r.line(
        3,
        "asymptotic crossing",
        dt_star <= 1e-5 && worst <= 1e-5,
        format!("|t*-t*_exact| = {dt_star:.2e}, max rel error {worst:.2e} (tol 1e-5)"),
    );
}

fn exponents(r: &mut Report) {
    let mut errs = Vec::new();
    let mut charts_ok = true;
    for p in [2.0, 3.0, 4.0] {
        let (_, rec) = crossing(
            Rhs::Power {
                p,
                sign: Sign::Plus,
            },
            None,
            None,
        );
        errs.push((rec.fit.p_hat - p).abs());
        charts_ok &= rec.fit.accepted && rec.chart == Chart::InversePower { q: 1.0 - p };
    }
    let problem = OdeProblem::new(Rhs::AsymptoticQuadratic, vec![1.0], 0.0).unwrap();
    let seg =
        integrate_until(&problem, &IntegratorConfig::default(), |_, s| s[0] - 1000.0).unwrap();
    let samples: Vec<(f64, f64)> = seg
        .samples
        .iter()
        .map(|s| s.state[0])
        .filter(|&x| x >= 100.0)
        .map(|x| (x, 2.0 * x + x * x))
        .collect();
    let fit = detect_power_law(&samples, MIN_FIT_WINDOW, DEFAULT_R2_THRESHOLD).unwrap();
    let worst = errs.iter().copied().fold(0.0, f64::max);
    r.line(
        4,
        "exponent detection",
        worst <= 1e-3 && charts_ok && fit.accepted && (1.95..=2.0).contains(&fit.p_hat),
        format!(
            "max |p_hat-p| over p=2,3,4 = {worst:.2e} (tol 1e-3); asymptotic p_hat = {:.4} \
             on {} samples with |x| >= 100, accepted = {}",
            fit.p_hat,
            samples.len(),
            fit.accepted
        ),
    );
}

fn compactification(r: &mut Report) {
    const N: usize = 1000;
    let ts = 1.0;
    let times =
        |span: f64| (0..N).map(move |i| ts - span + 2.0 * span * (i as f64 + 0.5) / N as f64);
    let worst = |pts: Vec<CirclePoint>| pts.iter().map(|c| c.residual()).fold(0.0, f64::max);
    let mut maps: Vec<(String, f64)> = Vec::new();
    maps.push((
        "power a=1".into(),
        worst(
            times(2.0)
                .map(|t| circle_power(t, 1.0 / (ts - t), ts, 1.0).unwrap())
                .collect(),
        ),
    ));
    // Squared form for the orbit x = (t⋆ − t)^{−1/2}.
    maps.push((
        "x^2-form".into(),
        worst(
            times(2.0)
                .map(|t| {
                    let x = signed_pow(ts - t, -0.5);
                    circle_power(t, x * x * (ts - t).signum(), ts, 1.0).unwrap()
                })
                .collect(),
        ),
    ));
    for p in [3.0, 4.0, 5.0] {
        let a = 1.0 / (p - 1.0);
        maps.push((
            format!("power a=1/{}", p - 1.0),
            worst(
                times(2.0)
                    .map(|t| circle_power(t, 1.0 / signed_pow(ts - t, a), ts, a).unwrap())
                    .collect(),
            ),
        ));
    }
    for sg in [Sign::Plus, Sign::Minus] {
        maps.push((
            format!("exponential {sg:?}"),
            worst(
                times(20.0)
                    .map(|t| circle_exponential(t, (sg.value() * (t - ts)).exp(), ts, sg).unwrap())
                    .collect(),
            ),
        ));
    }
    maps.push((
        "asymptotic".into(),
        worst(
            times(2.0)
                .map(|t| circle_asymptotic(t, 2.0 / (2.0 * (ts - t)).exp_m1(), ts).unwrap())
                .collect(),
        ),
    ));
    let sphere = (0..N)
        .map(|i| {
            let m = 10f64.powf(-8.0 + 16.0 * i as f64 / N as f64);
            let a = 0.37 * i as f64;
            riemann_sphere(m * a.cos(), m * a.sin()).residual()
        })
        .fold(0.0, f64::max);

    let (traj, rec) = crossing(
        Rhs::Power {
            p: 2.0,
            sign: Sign::Plus,
        },
        None,
        None,
    );
    let mut theta = Vec::new();
    for seg in &traj.segments {
        for s in &seg.samples {
            let x = match seg.chart {
                Chart::Original => s.state[0],
                _ => 1.0 / s.state[0],
            };
            theta.push(
                circle_power(s.t, x, rec.t_star_estimate, 1.0)
                    .unwrap()
                    .theta(),
            );
        }
    }
    let theta = unwrap_angles(&theta);
    let monotone = theta.windows(2).all(|w| w[1] >= w[0]) || theta.windows(2).all(|w| w[1] <= w[0]);
    let jump = theta
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max);

    let circle_worst = maps.iter().map(|(_, v)| *v).fold(0.0, f64::max);
    let listing: Vec<String> = maps.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    r.line(
        5,
        "compactification identities",
        circle_worst <= 1e-12 && sphere <= 1e-12 && monotone && jump < 0.5,
        format!(
            "unit-norm residuals [{}], sphere {sphere:.1e} (tol 1e-12); stitched angle \
             monotone = {monotone}, max step {jump:.3} rad",
            listing.join(", ")
        ),
    );
}

fn complex_quadratic(r: &mut Report) {
    let cfg = IntegratorConfig::with_tolerances(1e-10, 1e-12);
    let mut ok = true;
    let mut parts = Vec::new();
    for (x0, y0) in [(1.0, 1.0), (1.0, 1e-3), (0.0, 1.0)] {
        let d = quadratic_loop_diagnostics(x0, y0, &cfg).unwrap();
        ok &= d.max_e_rel_drift <= 1e-7
            && d.max_circle_residual <= 1e-7
            && d.max_orbit_rel_error <= 1e-8;
        parts.push(format!(
            "({x0},{y0}): E {:.1e} circle {:.1e} orbit {:.1e}",
            d.max_e_rel_drift, d.max_circle_residual, d.max_orbit_rel_error
        ));
    }
    r.line(
        6,
        "complex quadratic loop",
        ok,
        format!("{} (tol 1e-7 rel, 1e-7 R^2, 1e-8 rel)", parts.join("; ")),
    );
}

fn transitions(r: &mut Report) {
    let cfg = IntegratorConfig::with_tolerances(1e-10, 1e-12);
    let tr: Vec<f64> = [1e2, 1e3, 1e4]
        .iter()
        .map(|&rr| rr * transition_time(rr, 1e-6 * rr, 2, &cfg).unwrap())
        .collect();
    let (lo, hi) = tr
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    let spread = hi / lo - 1.0;
    let t3: Vec<f64> = [1e2, 2e2, 4e2]
        .iter()
        .map(|&rr| transition_time(rr, 1e-6 * rr, 3, &cfg).unwrap())
        .collect();
    let ratios: Vec<f64> = t3.windows(2).map(|w| w[1] / w[0]).collect();
    let dev = ratios
        .iter()
        .map(|q| (q / 0.25 - 1.0).abs())
        .fold(0.0, f64::max);
    r.line(
        7,
        "transition-time scaling",
        spread <= 0.1 && dev <= 0.1,
        format!(
            "degree 2 T*R = [{:.4}, {:.4}, {:.4}] spread {:.2}%; degree 3 T(2R)/T(R) = [{:.4}, {:.4}] \
             max deviation from 1/4 {:.2}% (tol 10%)",
            tr[0],
            tr[1],
            tr[2],
            100.0 * spread,
            ratios[0],
            ratios[1],
            100.0 * dev
        ),
    );
}

fn pre_touch_error(n: usize, dt: f64) -> f64 {
    let cfg = PdeConfig {
        n_nodes: n,
        dt,
        ..Default::default()
    };
    let run = run_pde(&cfg, 0.2, &[0.2]).unwrap();
    let f = &run.snapshots[0];
    let grid = cfg.grid();
    f.values
        .iter()
        .enumerate()
        .map(|(i, w)| (w - analytic_w(grid.x(i), f.t, cfg.r)).abs())
        .fold(0.0, f64::max)
}

fn convergence(r: &mut Report) {
    // Each order is isolated by making the other error source negligible.
    let space: Vec<f64> = [129, 257, 513]
        .iter()
        .map(|&n| pre_touch_error(n, 1e-6))
        .collect();
    let time: Vec<f64> = [4e-4, 2e-4, 1e-4]
        .iter()
        .map(|&dt| pre_touch_error(1025, dt))
        .collect();
    let diag: Vec<f64> = [(129, 4e-4), (257, 2e-4), (513, 1e-4)]
        .iter()
        .map(|&(n, dt)| pre_touch_error(n, dt))
        .collect();
    let ratios = |e: &[f64]| e.windows(2).map(|w| w[0] / w[1]).collect::<Vec<f64>>();
    let (rs, rt, rd) = (ratios(&space), ratios(&time), ratios(&diag));
    let pass = rs.iter().all(|&q| q >= 3.5) && rt.iter().all(|&q| (1.8..=2.2).contains(&q));
    r.line(
        8,
        "pde convergence",
        pass,
        format!(
            "h-halving ratios {:.2}, {:.2} (dt 1e-6, need >= 3.5); dt-halving ratios {:.2}, {:.2} \
             (n 1025, need 1.8..2.2); diagonal ladder errors {:.2e}, {:.2e}, {:.2e}",
            rs[0], rs[1], rt[0], rt[1], diag[0], diag[1], diag[2]
        ) + &format!(" (ratios {:.2}, {:.2})", rd[0], rd[1]),
    );
}

fn worst_locus(cfg: &PdeConfig) -> (Vec<Vec<RegionChart>>, f64, f64, f64, f64) {
    let start = Instant::now();
    let run = run_pde(cfg, 0.7, &[]).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let tt = t_touch(cfg.r).unwrap();
    let (mut worst, mut at) = (0.0f64, f64::NAN);
    for e in run.eras.iter().filter(|e| e.t >= tt) {
        let d = locus_distance(&e.loci, e.t, cfg.r);
        if d > worst {
            worst = d;
            at = e.t;
        }
    }
    (
        run.topology_sequence(),
        worst / cfg.grid().h,
        at,
        run.max_abs_value,
        elapsed,
    )
}

fn pde_crossing(r: &mut Report) {
    use RegionChart::*;
    let cfg = PdeConfig::default();
    let (seq, worst_h, at, max_abs, elapsed) = worst_locus(&cfg);
    let expected = [
        vec![BadW],
        vec![BadW, GoodV, BadW],
        vec![BadW, GoodV, BadW, GoodV, BadW],
    ];
    let topo = seq.len() >= 3 && seq[..3] == expected;
    let (_, fine_h, ..) = worst_locus(&PdeConfig { dt: 1e-5, ..cfg });
    r.line(
        9,
        "pde crossing",
        topo && worst_h <= 2.0 && max_abs <= 10.0 * cfg.w_big && elapsed < 60.0,
        format!(
            "topology ok = {topo} ({} topologies); worst locus distance {worst_h:.2}h at t = {at:.4} \
             (tol 2h); max |value| {max_abs:.3e} (tol {:.0e}); runtime {elapsed:.2} s; \
             at dt = 1e-5 the worst locus distance is {fine_h:.2}h",
            seq.len(),
            10.0 * cfg.w_big
        ),
    );
}

fn scaling(r: &mut Report) {
    let cfg = PdeConfig::default();
    let series = tip_series(&cfg, cfg.w_big / 10.0, t_touch(cfg.r).unwrap() + 0.5).unwrap();
    let amp: Vec<(f64, f64)> = series.iter().map(|&(t, a, _)| (t, a)).collect();
    let width: Vec<(f64, f64)> = series.iter().map(|&(t, _, w)| (t, w)).collect();
    let fa = fit_blowup_scaling(&amp).unwrap();
    let fw = fit_scaling_at(&width, fa.t_star_hat).unwrap();
    r.line(
        10,
        "self-similar scaling",
        fa.accepted
            && (fa.exponent_hat + 1.0).abs() <= 0.05
            && (fw.exponent_hat - 0.5).abs() <= 0.1,
        format!(
            "amplitude exponent {:.4} (-1 +- 0.05), width exponent {:.4} (0.5 +- 0.1), \
             fitted t* {:.6}, {} samples with max|w| in [1e3, 1e4]",
            fa.exponent_hat,
            fw.exponent_hat,
            fa.t_star_hat,
            series.len()
        ),
    );
}

fn complex_pde(r: &mut Report) {
    let cfg = PdeConfig::default();
    let tt = t_touch(cfg.r).unwrap();
    let eps = 1e-3;
    let times: Vec<f64> = (1..=5).map(|k| k as f64 * 2.0 * tt / 5.0).collect();
    let run = run_complex_pde(cfg.n_nodes, cfg.dt, cfg.r, eps, 2.0 * tt, &times).unwrap();
    let grid = Grid1D::new(cfg.n_nodes);
    let finite = run
        .final_field
        .a
        .iter()
        .chain(&run.final_field.b)
        .all(|v| v.is_finite());
    let errors: Vec<f64> = run
        .snapshots
        .iter()
        .map(|f| {
            (0..cfg.n_nodes)
                .map(|i| {
                    let (a, b) =
                        analytic_complex_reconstruction(grid.x(i), f.t, eps, cfg.r).unwrap();
                    (f.a[i] - a).hypot(f.b[i] - b)
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let real = run_complex_pde(cfg.n_nodes, cfg.dt, cfg.r, 0.0, 0.3, &[0.1, 0.2, 0.3]).unwrap();
    let stays_real = real
        .snapshots
        .iter()
        .chain([&real.final_field])
        .all(|f| f.b.iter().all(|&b| b == 0.0));
    let agree = errors.len() == 5 && errors.iter().all(|&e| e <= 1e-3);
    let listing: Vec<String> = run
        .snapshots
        .iter()
        .zip(&errors)
        .map(|(f, e)| format!("t={:.3} {e:.2e}", f.t))
        .collect();
    r.line(
        11,
        "complex pde",
        finite && agree && stays_real,
        format!(
            "finite through 2 t_touch = {finite}; sup errors [{}] (tol 1e-3); b == 0 for eps = 0: {stays_real}",
            listing.join(", ")
        ),
    );
}

fn scratch() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn outputs(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    files
}

fn determinism(r: &mut Report) {
    let root = scratch();
    let cases: &[&[&str]] = &[
        &["ode-cross"],
        &["ode-cross", "--p", "3"],
        &["ode-cross", "--rhs", "asymptotic"],
        &["ode-complex"],
        &["ode-complex", "--degree", "3"],
        &["compactify"],
        &["compactify", "--map", "stitched"],
        &["compactify", "--map", "riemann", "--x", "0.3", "--y", "-2"],
        &["transition-time"],
        &["transition-time", "--degree", "3"],
        &["pde-cross"],
        &["pde-complex"],
        &["scaling-fit"],
        &["scaling-fit", "--source", "synthetic"],
        &["parabola-fixture"],
    ];
    let mut mismatched = Vec::new();
    let mut files = 0;
    for (k, args) in cases.iter().enumerate() {
        let runs: Vec<_> = ["a", "b"]
            .iter()
            .map(|tag| {
                let dir = root.join(format!("{k}{tag}"));
                let status = Command::new(env!("CARGO_BIN_EXE_blowup"))
                    .args(*args)
                    .arg("--out")
                    .arg(&dir)
                    .output()
                    .unwrap()
                    .status;
                (status.code(), outputs(&dir))
            })
            .collect();
        files += runs[0].1.len();
        if runs[0] != runs[1] || runs[0].1.is_empty() {
            mismatched.push(args.join(" "));
        }
    }
    let covered = cases
        .iter()
        .map(|a| a[0])
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    r.line(
        12,
        "determinism",
        mismatched.is_empty() && covered == 8,
        format!(
            "{} runs over {covered} scenarios, {files} files compared byte for byte; mismatches: {mismatched:?}",
            cases.len()
        ),
    );
}

fn main() {
    let mut r = Report {
        passed: 0,
        failed: Vec::new(),
    };
    let checks: [fn(&mut Report); 12] = [
        quadratic,
        cubic,
        asymptotic,
        exponents,
        compactification,
        complex_quadratic,
        transitions,
        convergence,
        pde_crossing,
        scaling,
        complex_pde,
        determinism,
    ];
    for check in checks {
        check(&mut r);
    }
    println!(
        "acceptance: {} passed, {} failed {:?}",
        r.passed,
        r.failed.len(),
        r.failed
    );
    if !r.failed.is_empty() && std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}

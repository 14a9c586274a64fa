//! Scenario catalog: parameter tables and runners.

use std::collections::BTreeMap;

use serde_json::{json, Map, Value as Json};

use blowup_core::compactify::{
    circle_asymptotic, circle_exponential, circle_power, riemann_sphere, unwrap_angles, CirclePoint,
};
use blowup_core::complex_flows::{
    analytic_cubic_orbit, analytic_quad_orbit, integrate_complex, orbit_geometry,
    quadratic_loop_diagnostics, transition_time,
};
use blowup_core::mn_scaling::{
    fit_blowup_scaling, fit_scaling_at, parabola_fixture, predict_exponents, ScalingSignature,
};
use blowup_core::ode::signed_pow;
use blowup_core::pde::{
    self, analytic_complex_reconstruction, locus_distance, run_complex_pde, run_pde, t_touch,
    Grid1D, PdeConfig, RegionChart,
};
use blowup_core::protocol::{Chart, ChartState};
use blowup_core::{
    cross_infinity, Branch, CrossingOptions, IntegratorConfig, OdeProblem, Rhs, Sign,
};

use crate::config::{ConfigError, Kind, ParamSpec, Params};
use crate::output::{num, Csv};

/// Exact solution at `t` and whether it is signed (real continuation) or a
/// magnitude.
type ClosedForm = Box<dyn Fn(f64) -> (f64, bool)>;

pub const SCENARIOS: &[&str] = &[
    "ode-cross",
    "ode-complex",
    "compactify",
    "transition-time",
    "pde-cross",
    "pde-complex",
    "scaling-fit",
    "parabola-fixture",
];

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Numerical { kind: String, message: String },
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

fn numerical(kind: &str, e: impl std::fmt::Display) -> RunError {
    RunError::Numerical {
        kind: kind.to_string(),
        message: e.to_string(),
    }
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, RunError> {
    Err(RunError::Config(ConfigError(msg.into())))
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub results: Map<String, Json>,
    pub checks: BTreeMap<String, bool>,
    pub files: Vec<(String, String)>,
}

impl Outcome {
    fn result(&mut self, key: &str, v: impl Into<Json>) {
        self.results.insert(key.to_string(), v.into());
    }

    fn check(&mut self, enabled: bool, key: &str, pass: bool) {
        if enabled {
            self.checks.insert(key.to_string(), pass);
        }
    }
}

macro_rules! p {
    ($key:expr, $kind:expr, $default:expr, $help:expr) => {
        ParamSpec {
            key: $key,
            kind: $kind,
            default: $default,
            help: $help,
        }
    };
}

const TOLERANCES: [ParamSpec; 2] = [
    p!(
        "rel_tol",
        Kind::Real,
        "1e-10",
        "relative tolerance of the integrator"
    ),
    p!(
        "abs_tol",
        Kind::Real,
        "1e-12",
        "absolute tolerance of the integrator"
    ),
];

const CHECKS: ParamSpec = p!("checks", Kind::Bool, "true", "evaluate acceptance checks");

const ODE_CROSS: &[ParamSpec] = &[
    p!(
        "rhs",
        Kind::Choice(&["power", "asymptotic", "linear"]),
        "power",
        "right-hand side"
    ),
    p!("p", Kind::Real, "2", "exponent of the power law"),
    p!(
        "sign",
        Kind::Choice(&["plus", "minus"]),
        "plus",
        "sign of the right-hand side"
    ),
    p!("x0", Kind::Real, "1", "initial value at t = 0"),
    p!(
        "switch_level",
        Kind::Real,
        "auto",
        "|x| at which the good chart takes over"
    ),
    p!(
        "return_level",
        Kind::Real,
        "auto",
        "|y| at which the original chart resumes"
    ),
    p!(
        "branch",
        Kind::Choice(&["imaginary_plus", "imaginary_minus", "real_continuation"]),
        "imaginary_plus",
        "continuation branch"
    ),
    p!("t_end", Kind::Real, "2", "end of the resumed segment"),
    p!("min_window", Kind::Int, "8", "minimum fit window"),
    p!(
        "r2_threshold",
        Kind::Real,
        "0.999",
        "fit acceptance threshold"
    ),
    TOLERANCES[0],
    TOLERANCES[1],
    CHECKS,
];

const ODE_COMPLEX: &[ParamSpec] = &[
    p!("degree", Kind::Int, "2", "2 for z², 3 for z³"),
    p!("x0", Kind::Real, "1", "initial real part"),
    p!("y0", Kind::Real, "1", "initial imaginary part"),
    p!(
        "t_end",
        Kind::Real,
        "auto",
        "end time; defaults to one loop"
    ),
    TOLERANCES[0],
    TOLERANCES[1],
    CHECKS,
];

const COMPACTIFY: &[ParamSpec] = &[
    p!(
        "map",
        Kind::Choice(&["power", "exponential", "asymptotic", "riemann", "stitched"]),
        "power",
        "compactification map"
    ),
    p!("x", Kind::Real, "0", "real part (riemann)"),
    p!("y", Kind::Real, "0", "imaginary part (riemann)"),
    p!("a", Kind::Real, "1", "power of the scale (power)"),
    p!(
        "sign",
        Kind::Choice(&["plus", "minus"]),
        "plus",
        "growth sign (exponential)"
    ),
    p!(
        "t_star",
        Kind::Real,
        "1",
        "collapse time of the reference orbit"
    ),
    p!(
        "span",
        Kind::Real,
        "2",
        "half-width of the sampled time interval"
    ),
    p!("samples", Kind::Int, "1000", "number of samples"),
    CHECKS,
];

const TRANSITION_TIME: &[ParamSpec] = &[
    p!("degree", Kind::Int, "2", "2 for z², 3 for z³"),
    p!("r0", Kind::Real, "100", "smallest radius"),
    p!(
        "ratio",
        Kind::Real,
        "auto",
        "radius ratio between rows (10 for degree 2, 2 for degree 3)"
    ),
    p!("count", Kind::Int, "3", "number of radii"),
    p!(
        "eps_rel",
        Kind::Real,
        "1e-6",
        "imaginary offset as a fraction of R"
    ),
    TOLERANCES[0],
    TOLERANCES[1],
    CHECKS,
];

const PDE_COMMON: [ParamSpec; 7] = [
    p!("n_nodes", Kind::Int, "257", "grid nodes on [0, π]"),
    p!("dt", Kind::Real, "1e-4", "time step"),
    p!("w_big", Kind::Real, "1e4", "buffer threshold on |w|"),
    p!("r", Kind::Real, "1", "reaction coefficient"),
    p!("guard_band", Kind::Int, "4", "buffer dilation in nodes"),
    p!(
        "hysteresis",
        Kind::Real,
        "0.1",
        "relative hysteresis of buffer exit"
    ),
    p!(
        "substep_stiffness",
        Kind::Real,
        "0.4",
        "bound on dt·|∂F/∂w| per bad-region substep"
    ),
];

const PDE_CROSS: &[ParamSpec] = &[
    PDE_COMMON[0],
    PDE_COMMON[1],
    PDE_COMMON[2],
    PDE_COMMON[3],
    PDE_COMMON[4],
    PDE_COMMON[5],
    PDE_COMMON[6],
    p!("t_end", Kind::Real, "0.7", "end time"),
    p!(
        "outputs",
        Kind::Int,
        "7",
        "number of snapshots, evenly spaced in (0, t_end]"
    ),
    CHECKS,
];

const PDE_COMPLEX: &[ParamSpec] = &[
    PDE_COMMON[0],
    PDE_COMMON[1],
    PDE_COMMON[3],
    p!(
        "epsilon",
        Kind::Real,
        "1e-3",
        "imaginary offset of the initial good field"
    ),
    p!(
        "t_end",
        Kind::Real,
        "auto",
        "end time; defaults to twice the touch time"
    ),
    p!(
        "outputs",
        Kind::Int,
        "5",
        "number of snapshots, evenly spaced in (0, t_end]"
    ),
    p!(
        "agreement_tol",
        Kind::Real,
        "1e-3",
        "sup-norm tolerance against the closed form"
    ),
    CHECKS,
];

const SCALING_FIT: &[ParamSpec] = &[
    p!(
        "source",
        Kind::Choice(&["pde", "synthetic"]),
        "pde",
        "amplitude series source"
    ),
    p!(
        "a",
        Kind::Real,
        "2",
        "spatial scaling power of the operator"
    ),
    p!("s", Kind::Real, "2", "nonlinearity power of the operator"),
    p!(
        "gamma",
        Kind::Real,
        "-1",
        "exponent of the synthetic series"
    ),
    p!(
        "t_star",
        Kind::Real,
        "1",
        "collapse time of the synthetic series"
    ),
    p!(
        "amplitude",
        Kind::Real,
        "1",
        "prefactor of the synthetic series"
    ),
    p!("t0", Kind::Real, "0", "first synthetic sample"),
    p!("t1", Kind::Real, "0.9", "last synthetic sample"),
    p!("samples", Kind::Int, "80", "synthetic sample count"),
    p!(
        "decade",
        Kind::Real,
        "10",
        "pde series starts at max|w| = w_big/decade"
    ),
    PDE_COMMON[0],
    PDE_COMMON[1],
    PDE_COMMON[2],
    PDE_COMMON[3],
    PDE_COMMON[6],
    CHECKS,
];

const PARABOLA_FIXTURE: &[ParamSpec] = &[
    p!("t", Kind::Real, "1.1", "time"),
    p!("x_min", Kind::Real, "-1", "left end of the grid"),
    p!("x_max", Kind::Real, "1", "right end of the grid"),
    p!("nodes", Kind::Int, "201", "grid nodes"),
    CHECKS,
];

pub fn specs(scenario: &str) -> Option<&'static [ParamSpec]> {
    Some(match scenario {
        "ode-cross" => ODE_CROSS,
        "ode-complex" => ODE_COMPLEX,
        "compactify" => COMPACTIFY,
        "transition-time" => TRANSITION_TIME,
        "pde-cross" => PDE_CROSS,
        "pde-complex" => PDE_COMPLEX,
        "scaling-fit" => SCALING_FIT,
        "parabola-fixture" => PARABOLA_FIXTURE,
        _ => return None,
    })
}

pub fn run(scenario: &str, params: &Params) -> Result<Outcome, RunError> {
    match scenario {
        "ode-cross" => ode_cross(params),
        "ode-complex" => ode_complex(params),
        "compactify" => compactify(params),
        "transition-time" => transition(params),
        "pde-cross" => pde_cross(params),
        "pde-complex" => pde_complex(params),
        "scaling-fit" => scaling_fit(params),
        "parabola-fixture" => parabola(params),
        other => config_err(format!("unknown scenario '{other}'")),
    }
}

fn integrator(params: &Params) -> Result<IntegratorConfig, RunError> {
    let cfg = IntegratorConfig::with_tolerances(params.real("rel_tol"), params.real("abs_tol"));
    cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
    Ok(cfg)
}

fn sign(params: &Params) -> Sign {
    match params.choice("sign") {
        "minus" => Sign::Minus,
        _ => Sign::Plus,
    }
}

fn chart_name(chart: Chart) -> &'static str {
    match chart {
        Chart::Original => "original",
        Chart::InversePower { .. } => "inverse_power",
        Chart::InverseAffine => "inverse_affine",
    }
}

fn branch_name(b: Branch) -> &'static str {
    match b {
        Branch::RealContinuation => "real_continuation",
        Branch::ImaginaryPlus => "imaginary_plus",
        Branch::ImaginaryMinus => "imaginary_minus",
    }
}

// ---------------------------------------------------------------------------

fn ode_cross(params: &Params) -> Result<Outcome, RunError> {
    let x0 = params.real("x0");
    let p = params.real("p");
    let sg = sign(params);
    let rhs = match params.choice("rhs") {
        "power" => Rhs::Power { p, sign: sg },
        "asymptotic" => Rhs::AsymptoticQuadratic,
        _ => Rhs::Linear { sign: sg },
    };
    let mut options = CrossingOptions::for_rhs(&rhs);
    if let Some(v) = params.real_or_auto("switch_level") {
        options.switch_level = v;
    }
    if let Some(v) = params.real_or_auto("return_level") {
        options.return_level = v;
    }
    options.branch = match params.choice("branch") {
        "imaginary_minus" => Branch::ImaginaryMinus,
        "real_continuation" => Branch::RealContinuation,
        _ => Branch::ImaginaryPlus,
    };
    options.t_end = params.real("t_end");
    options.min_window = params.count("min_window", 2)?;
    options.r2_threshold = params.real("r2_threshold");
    let cfg = integrator(params)?;
    let problem = OdeProblem::new(rhs, vec![x0], 0.0).map_err(|e| ConfigError(e.to_string()))?;

    use blowup_core::ProtocolError as PE;
    let (traj, rec) = cross_infinity(&problem, &cfg, &options).map_err(|e| match e {
        PE::InvalidInput(m) => RunError::Config(ConfigError(m)),
        PE::InvalidPolicy(_) | PE::NonIntegerExponent(_) => {
            RunError::Config(ConfigError(e.to_string()))
        }
        PE::Ode(blowup_core::OdeError::Config(m)) => RunError::Config(ConfigError(m)),
        PE::Failure { .. } => numerical("integration_failure", &e),
        PE::FitRejected { .. } => numerical("fit_rejected", &e),
        PE::NoBlowup(_) => numerical("no_blowup", &e),
        PE::Unsupported(_) => numerical("unsupported", &e),
        _ => numerical("protocol_error", &e),
    })?;

    let mut csv = Csv::new(&["segment", "chart", "t", "y0", "y1", "x_re", "x_im"]);
    for (k, seg) in traj.segments.iter().enumerate() {
        let chart = ChartState::new(seg.chart);
        for s in &seg.samples {
            let (re, im) = match s.state.len() {
                2 => (num(s.state[0]), num(s.state[1])),
                _ => match chart.back(s.state[0], options.branch) {
                    Ok(z) => (num(z.re), num(z.im)),
                    Err(_) => ("inf".to_string(), "inf".to_string()),
                },
            };
            csv.row(&[
                k.to_string(),
                chart_name(seg.chart).to_string(),
                num(s.t),
                num(s.state[0]),
                s.state.get(1).map_or(String::new(), |v| num(*v)),
                re,
                im,
            ]);
        }
    }

    let mut out = Outcome::default();
    out.result("t_star", rec.t_star_estimate);
    out.result(
        "fit",
        json!({
            "p_hat": rec.fit.p_hat,
            "c_hat": rec.fit.c_hat,
            "r_squared": rec.fit.r_squared,
            "window": rec.fit.window,
            "accepted": rec.fit.accepted,
        }),
    );
    out.result(
        "crossing",
        json!({
            "chart": chart_name(rec.chart),
            "branch": branch_name(rec.branch),
            "switch_in": {"t": rec.switch_in.t, "x_re": rec.switch_in.x.re, "x_im": rec.switch_in.x.im},
            "switch_out": {"t": rec.switch_out.t, "x_re": rec.switch_out.x.re, "x_im": rec.switch_out.x.im},
        }),
    );
    out.result("segments", traj.segments.len());

    let values = traj
        .original_values(options.branch)
        .map_err(|e| numerical("protocol_error", e))?;
    let enabled = params.flag("checks");
    let closed_form: Option<(f64, ClosedForm, f64)> = match rhs {
        Rhs::Power {
            p,
            sign: Sign::Plus,
        } if x0 > 0.0 && p > 1.0 => {
            let ts = x0.powf(1.0 - p) / (p - 1.0);
            let real_valued = p.fract() == 0.0 && (p as i64) % 2 == 0;
            // |x| = ((p − 1)|t⋆ − t|)^{−1/(p−1)}; for even p the continuation
            // stays real and changes sign.
            let f = move |t: f64| {
                let m = ((p - 1.0) * (ts - t).abs()).powf(-1.0 / (p - 1.0));
                if real_valued {
                    (signed_pow((p - 1.0) * (ts - t), -1.0 / (p - 1.0)), true)
                } else {
                    (m, false)
                }
            };
            Some((ts, Box::new(f), 1e-6))
        }
        Rhs::AsymptoticQuadratic if x0 > 0.0 => {
            let ts = -0.5 * (x0 / (x0 + 2.0)).ln();
            let f = move |t: f64| {
                let e = (2.0 * t).exp();
                (2.0 * x0 * e / (x0 + 2.0 - x0 * e), true)
            };
            Some((ts, Box::new(f), 1e-5))
        }
        _ => None,
    };
    if let Some((ts, exact, tol)) = closed_form {
        let mut max_rel = 0.0f64;
        for (t, z) in &values {
            if (t - ts).abs() <= 1e-2 {
                continue;
            }
            let (e, signed) = exact(*t);
            let got = if signed { z.re } else { z.norm() };
            let mut rel = (got - e).abs() / e.abs();
            if signed {
                rel = rel.max(z.im.abs() / e.abs());
            }
            max_rel = max_rel.max(rel);
        }
        out.result("t_star_exact", ts);
        out.result("max_rel_error_outside_window", max_rel);
        out.check(enabled, "t_star", (rec.t_star_estimate - ts).abs() <= tol);
        out.check(enabled, "trajectory", max_rel <= 1e-5);
    }
    out.files.push(("trajectory.csv".into(), csv.finish()));
    Ok(out)
}

fn ode_complex(params: &Params) -> Result<Outcome, RunError> {
    let degree = params.int("degree");
    if !(degree == 2 || degree == 3) {
        return config_err(format!("degree must be 2 or 3, got {degree}"));
    }
    let (x0, y0) = (params.real("x0"), params.real("y0"));
    let m = x0 * x0 + y0 * y0;
    if m == 0.0 {
        return config_err("the initial point must be non-zero");
    }
    let t_end = params
        .real_or_auto("t_end")
        .unwrap_or(if degree == 2 { 4.0 / m } else { 1.0 / m });
    let cfg = integrator(params)?;
    let seg = integrate_complex(degree as u32, x0, y0, t_end, &cfg)
        .map_err(|e| numerical("integration_failure", e))?;
    let mut out = Outcome::default();
    let enabled = params.flag("checks");
    let mut csv = Csv::new(&[
        "t", "x", "y", "sphere_x", "sphere_y", "sphere_z", "exact_x", "exact_y",
    ]);
    let mut max_rel = 0.0f64;
    for s in &seg.samples {
        let (x, y) = (s.state[0], s.state[1]);
        let sp = riemann_sphere(x, y);
        let exact = if degree == 2 {
            analytic_quad_orbit(s.t, x0, y0)
        } else {
            analytic_cubic_orbit(s.t, x0, y0)
        };
        let (ex, ey) = match exact {
            Ok(e) => {
                max_rel = max_rel.max((x - e.x).hypot(y - e.y) / e.x.hypot(e.y));
                (num(e.x), num(e.y))
            }
            Err(_) => (String::new(), String::new()),
        };
        csv.row(&[
            num(s.t),
            num(x),
            num(y),
            num(sp.x),
            num(sp.y),
            num(sp.z),
            ex,
            ey,
        ]);
    }
    out.result("t_end", t_end);
    out.result("samples", seg.samples.len());
    out.result("max_orbit_rel_error", max_rel);
    if degree == 2 && y0 != 0.0 && params.is_auto("t_end") {
        let d = quadratic_loop_diagnostics(x0, y0, &cfg)
            .map_err(|e| numerical("integration_failure", e))?;
        let geom = orbit_geometry(x0, y0).map_err(|e| numerical("degenerate", e))?;
        out.result("invariant_e", geom.e);
        out.result("radius", geom.r);
        out.result("max_e_drift", d.max_e_drift);
        out.result("max_e_rel_drift", d.max_e_rel_drift);
        out.result("max_circle_residual_over_r2", d.max_circle_residual);
        out.result("max_orbit_error", d.max_orbit_error);
        out.check(enabled, "e_drift", d.max_e_rel_drift <= 1e-7);
        out.check(enabled, "circle_residual", d.max_circle_residual <= 1e-7);
        out.check(enabled, "orbit", d.max_orbit_rel_error <= 1e-8);
    } else {
        out.check(enabled, "orbit", max_rel <= 1e-8);
    }
    out.files.push(("track.csv".into(), csv.finish()));
    Ok(out)
}

fn compactify(params: &Params) -> Result<Outcome, RunError> {
    let mut out = Outcome::default();
    let enabled = params.flag("checks");
    let map = params.choice("map");
    if map == "riemann" {
        let s = riemann_sphere(params.real("x"), params.real("y"));
        let mut csv = Csv::new(&["x", "y", "sphere_x", "sphere_y", "sphere_z"]);
        csv.row(&[
            num(params.real("x")),
            num(params.real("y")),
            num(s.x),
            num(s.y),
            num(s.z),
        ]);
        out.result("point", json!([s.x, s.y, s.z]));
        out.result("residual", s.residual());
        out.check(enabled, "unit_norm", s.residual() <= 1e-12);
        out.files.push(("points.csv".into(), csv.finish()));
        return Ok(out);
    }

    let mut track: Vec<(f64, f64, CirclePoint)> = Vec::new();
    let on_orbit = map != "stitched";
    if map == "stitched" {
        let rhs = Rhs::Power {
            p: 2.0,
            sign: Sign::Plus,
        };
        let problem =
            OdeProblem::new(rhs, vec![1.0], 0.0).map_err(|e| numerical("protocol_error", e))?;
        let (traj, rec) = cross_infinity(
            &problem,
            &IntegratorConfig::default(),
            &CrossingOptions::for_rhs(&rhs),
        )
        .map_err(|e| numerical("protocol_error", e))?;
        out.result("t_star_estimate", rec.t_star_estimate);
        // Good-chart samples are mapped through y = 1/x so that y = 0 lands
        // at infinity.
        for seg in &traj.segments {
            for s in &seg.samples {
                let x = match seg.chart {
                    Chart::Original => s.state[0],
                    _ => 1.0 / s.state[0],
                };
                let c = circle_power(s.t, x, rec.t_star_estimate, 1.0)
                    .map_err(|e| numerical("pole", e))?;
                track.push((s.t, x, c));
            }
        }
    } else {
        let n = params.count("samples", 2)?;
        let (ts, span) = (params.real("t_star"), params.real("span"));
        if !(span > 0.0) {
            return config_err("span must be positive");
        }
        let a = params.real("a");
        if map == "power" && !(a > 0.0) {
            return config_err("a must be positive");
        }
        for i in 0..n {
            let t = ts - span + 2.0 * span * (i as f64 + 0.5) / n as f64;
            let d = ts - t;
            let (x, c) = match map {
                "power" => {
                    let x = 1.0 / signed_pow(d, a);
                    (x, circle_power(t, x, ts, a))
                }
                "exponential" => {
                    let sg = sign(params);
                    let x = (-sg.value() * d).exp();
                    (x, circle_exponential(t, x, ts, sg))
                }
                _ => {
                    let x = 2.0 / (2.0 * d).exp_m1();
                    (x, circle_asymptotic(t, x, ts))
                }
            };
            track.push((t, x, c.map_err(|e| numerical("pole", e))?));
        }
    }
    let theta = unwrap_angles(&track.iter().map(|(_, _, c)| c.theta()).collect::<Vec<_>>());
    let max_res = track
        .iter()
        .map(|(_, _, c)| c.residual())
        .fold(0.0, f64::max);
    let max_jump = theta
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max);
    let monotone = theta.windows(2).all(|w| w[1] >= w[0]) || theta.windows(2).all(|w| w[1] <= w[0]);
    let mut csv = Csv::new(&["t", "x", "circle_x", "circle_y", "theta"]);
    for ((t, x, c), th) in track.iter().zip(&theta) {
        csv.row(&[num(*t), num(*x), num(c.x), num(c.y), num(*th)]);
    }
    out.result("samples", track.len());
    out.result("max_residual", max_res);
    out.result("max_angle_step", max_jump);
    out.result("angle_monotone", monotone);
    if on_orbit {
        out.check(enabled, "unit_norm", max_res <= 1e-12);
    }
    out.check(enabled, "angular_continuity", monotone && max_jump < 0.5);
    out.files.push(("circle.csv".into(), csv.finish()));
    Ok(out)
}

fn transition(params: &Params) -> Result<Outcome, RunError> {
    let degree = params.int("degree");
    if !(degree == 2 || degree == 3) {
        return config_err(format!("degree must be 2 or 3, got {degree}"));
    }
    let ratio = params
        .real_or_auto("ratio")
        .unwrap_or(if degree == 2 { 10.0 } else { 2.0 });
    let r0 = params.real("r0");
    let count = params.count("count", 2)?;
    let eps_rel = params.real("eps_rel");
    if !(ratio > 1.0 && r0 > 0.0 && eps_rel > 0.0 && eps_rel < 1.0) {
        return config_err("need ratio > 1, r0 > 0 and 0 < eps_rel < 1");
    }
    let cfg = integrator(params)?;
    let mut rows = Vec::new();
    let mut csv = Csv::new(&["R", "T", "T_times_R", "T_times_R2"]);
    for k in 0..count {
        let r = r0 * ratio.powi(k as i32);
        let t = transition_time(r, eps_rel * r, degree as u32, &cfg)
            .map_err(|e| numerical("integration_failure", e))?;
        csv.row(&[num(r), num(t), num(t * r), num(t * r * r)]);
        rows.push((r, t));
    }
    let mut out = Outcome::default();
    let enabled = params.flag("checks");
    out.result(
        "table",
        rows.iter()
            .map(|(r, t)| json!({"R": r, "T": t}))
            .collect::<Vec<_>>(),
    );
    if degree == 2 {
        let tr: Vec<f64> = rows.iter().map(|(r, t)| r * t).collect();
        let (lo, hi) = tr
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
        out.result("t_times_r_spread", hi / lo - 1.0);
        out.check(enabled, "scaling", hi / lo - 1.0 <= 0.1);
    } else {
        let target = ratio.powi(-2);
        let worst = rows
            .windows(2)
            .map(|w| (w[1].1 / w[0].1 / target - 1.0).abs())
            .fold(0.0, f64::max);
        out.result("ratio_target", target);
        out.result("max_ratio_deviation", worst);
        out.check(enabled, "scaling", worst <= 0.1);
    }
    out.files.push(("transition.csv".into(), csv.finish()));
    Ok(out)
}

fn pde_config(params: &Params) -> Result<PdeConfig, RunError> {
    let get = |k: &str, d: f64| {
        if params.values().contains_key(k) {
            params.real(k)
        } else {
            d
        }
    };
    let defaults = PdeConfig::default();
    let cfg = PdeConfig {
        n_nodes: params.count("n_nodes", 33)?,
        dt: params.real("dt"),
        w_big: get("w_big", defaults.w_big),
        r: params.real("r"),
        guard_band: if params.values().contains_key("guard_band") {
            params.count("guard_band", 1)?
        } else {
            defaults.guard_band
        },
        hysteresis: get("hysteresis", defaults.hysteresis),
        substep_stiffness: get("substep_stiffness", defaults.substep_stiffness),
    };
    cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
    Ok(cfg)
}

fn output_times(params: &Params, t_end: f64) -> Result<Vec<f64>, RunError> {
    let n = params.count("outputs", 1)?;
    Ok((1..=n).map(|k| k as f64 * t_end / n as f64).collect())
}

fn pde_failure(e: pde::PdeError) -> RunError {
    use pde::PdeError as E;
    match e {
        E::Config(m) => RunError::Config(ConfigError(m)),
        E::Newton { .. } => numerical("newton_failure", e),
        E::SingularDenominator { .. } => numerical("singular_denominator", e),
        E::IncompleteBlowup { .. } => numerical("incomplete_blowup", e),
        _ => numerical("pde_error", e),
    }
}

fn pde_cross(params: &Params) -> Result<Outcome, RunError> {
    let cfg = pde_config(params)?;
    let t_end = params.real("t_end");
    if !(t_end > 0.0) {
        return config_err("t_end must be positive");
    }
    let times = output_times(params, t_end)?;
    let run = run_pde(&cfg, t_end, &times).map_err(pde_failure)?;
    let grid = cfg.grid();
    let mut out = Outcome::default();
    for (k, f) in run.snapshots.iter().enumerate() {
        let mut csv = Csv::new(&["x", "chart", "w", "v"]);
        let v = f.v();
        for (i, (w, c)) in f
            .w_on_bad()
            .iter()
            .zip(f.partition.node_charts())
            .enumerate()
        {
            csv.row(&[
                num(grid.x(i)),
                c.name().to_string(),
                w.map_or(String::new(), num),
                num(v[i]),
            ]);
        }
        out.files
            .push((format!("snapshot_{k:03}.csv"), csv.finish()));
    }
    out.files.push((
        "eras.json".into(),
        serde_json::to_string_pretty(&run.eras).expect("era log serializes") + "\n",
    ));

    let names = |topo: &[RegionChart]| topo.iter().map(|c| c.name()).collect::<Vec<_>>();
    let seq = run.topology_sequence();
    let touch = t_touch(cfg.r).ok();
    let (mut worst, mut worst_t) = (0.0f64, f64::NAN);
    if let Some(tt) = touch {
        for e in run.eras.iter().filter(|e| e.t >= tt) {
            let d = locus_distance(&e.loci, e.t, cfg.r);
            if d > worst {
                worst = d;
                worst_t = e.t;
            }
        }
    }
    let max_w = run.eras.iter().map(|e| e.max_abs_w).fold(0.0, f64::max);
    out.result("t_touch", touch.map_or(Json::Null, Json::from));
    out.result("eras", run.eras.len());
    out.result(
        "topology_sequence",
        seq.iter().map(|t| names(t)).collect::<Vec<_>>(),
    );
    out.result("max_abs_value", run.max_abs_value);
    out.result("max_abs_w_in_bad_regions", max_w);
    out.result("max_locus_distance", worst);
    out.result("max_locus_distance_over_h", worst / grid.h);
    out.result(
        "max_locus_distance_t",
        if worst_t.is_nan() {
            Json::Null
        } else {
            worst_t.into()
        },
    );
    out.result(
        "snapshot_times",
        run.snapshots.iter().map(|f| f.t).collect::<Vec<_>>(),
    );

    use RegionChart::*;
    let enabled = params.flag("checks");
    let expected = [
        vec![BadW],
        vec![BadW, GoodV, BadW],
        vec![BadW, GoodV, BadW, GoodV, BadW],
    ];
    out.check(
        enabled,
        "topology_sequence",
        seq.len() >= 3 && seq[..3] == expected,
    );
    out.check(enabled, "seamless", run.max_abs_value <= 10.0 * cfg.w_big);
    out.check(
        enabled,
        "partition_sound",
        max_w < cfg.w_big * (1.0 + cfg.hysteresis),
    );
    if touch.is_some() {
        out.check(enabled, "loci_within_2h", worst <= 2.0 * grid.h);
    }
    Ok(out)
}

fn pde_complex(params: &Params) -> Result<Outcome, RunError> {
    let n = params.count("n_nodes", 33)?;
    let dt = params.real("dt");
    let r = params.real("r");
    let eps = params.real("epsilon");
    if !(dt > 0.0) || eps < 0.0 {
        return config_err("need dt > 0 and epsilon ≥ 0");
    }
    let touch = t_touch(r).ok();
    let t_end = match params.real_or_auto("t_end") {
        Some(t) => t,
        None => {
            2.0 * touch.ok_or_else(|| ConfigError(format!("no touch for r = {r}; set t_end")))?
        }
    };
    let times = output_times(params, t_end)?;
    let run = run_complex_pde(n, dt, r, eps, t_end, &times).map_err(pde_failure)?;
    let grid = Grid1D::new(n);
    let mut out = Outcome::default();
    let mut errors = Vec::new();
    for (k, f) in run.snapshots.iter().enumerate() {
        let mut csv = Csv::new(&["x", "a", "b", "a_exact", "b_exact"]);
        let mut err = 0.0f64;
        for i in 0..n {
            let x = grid.x(i);
            let (ea, eb) = match analytic_complex_reconstruction(x, f.t, eps, r) {
                Ok((a, b)) => {
                    err = err.max((f.a[i] - a).hypot(f.b[i] - b));
                    (num(a), num(b))
                }
                Err(_) => {
                    err = f64::INFINITY;
                    (String::new(), String::new())
                }
            };
            csv.row(&[num(x), num(f.a[i]), num(f.b[i]), ea, eb]);
        }
        errors.push(json!({"t": f.t, "sup_error": if err.is_finite() { Json::from(err) } else { Json::Null }}));
        out.files
            .push((format!("snapshot_{k:03}.csv"), csv.finish()));
        if (!err.is_finite() || err > params.real("agreement_tol"))
            && !out.results.contains_key("first_disagreement_t")
        {
            out.result("first_disagreement_t", f.t);
        }
    }
    let finite = run
        .final_field
        .a
        .iter()
        .chain(&run.final_field.b)
        .all(|v| v.is_finite());
    let max_err = errors
        .iter()
        .map(|e| e["sup_error"].as_f64().unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    let imag_zero = run
        .snapshots
        .iter()
        .chain([&run.final_field])
        .all(|f| f.b.iter().all(|&b| b == 0.0));
    out.result("t_touch", touch.map_or(Json::Null, Json::from));
    out.result("t_end", t_end);
    out.result("errors", errors);
    out.result(
        "max_sup_error",
        if max_err.is_finite() {
            Json::from(max_err)
        } else {
            Json::Null
        },
    );
    out.result("max_modulus", run.max_modulus);
    out.result("imaginary_part_zero", imag_zero);
    let enabled = params.flag("checks");
    out.check(enabled, "finite", finite);
    out.check(
        enabled,
        "agreement",
        max_err <= params.real("agreement_tol"),
    );
    if eps == 0.0 {
        out.check(enabled, "real_data_stays_real", imag_zero);
    }
    Ok(out)
}

fn scaling_fit(params: &Params) -> Result<Outcome, RunError> {
    let sig = ScalingSignature {
        a: params.real("a"),
        s: params.real("s"),
    };
    let predicted = predict_exponents(sig).map_err(|e| ConfigError(e.to_string()))?;
    let mut out = Outcome::default();
    let enabled = params.flag("checks");
    out.result(
        "predicted",
        json!({"amplitude_exponent": predicted.amplitude_exponent, "width_exponent": predicted.width_exponent}),
    );
    let fit_json = |f: &blowup_core::mn_scaling::ScalingFitResult| json!({"t_star_hat": f.t_star_hat, "exponent_hat": f.exponent_hat, "residual": f.residual, "accepted": f.accepted});
    if params.choice("source") == "synthetic" {
        let n = params.count("samples", 3)?;
        let (gamma, ts, c) = (
            params.real("gamma"),
            params.real("t_star"),
            params.real("amplitude"),
        );
        let (t0, t1) = (params.real("t0"), params.real("t1"));
        if !(t1 > t0 && ts > t1 && c > 0.0) {
            return config_err("need t0 < t1 < t_star and amplitude > 0");
        }
        let series: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let t = t0 + (t1 - t0) * i as f64 / (n - 1) as f64;
                (t, c * (ts - t).powf(gamma))
            })
            .collect();
        let fit = fit_blowup_scaling(&series).map_err(|e| ConfigError(e.to_string()))?;
        let mut csv = Csv::new(&["t", "amplitude"]);
        for (t, a) in &series {
            csv.row(&[num(*t), num(*a)]);
        }
        out.result("amplitude_fit", fit_json(&fit));
        out.check(
            enabled,
            "amplitude_exponent",
            (fit.exponent_hat - gamma).abs() <= 1e-3,
        );
        out.files.push(("series.csv".into(), csv.finish()));
        return Ok(out);
    }

    let cfg = pde_config(params)?;
    let decade = params.real("decade");
    if !(decade > 1.0) {
        return config_err("decade must exceed 1");
    }
    let t_max = t_touch(cfg.r).map_err(|e| ConfigError(e.to_string()))? + 0.5;
    let series = pde::tip_series(&cfg, cfg.w_big / decade, t_max).map_err(pde_failure)?;
    if series.len() < 3 {
        return Err(numerical(
            "short_series",
            format!("only {} samples in the final decade", series.len()),
        ));
    }
    let amp: Vec<(f64, f64)> = series.iter().map(|&(t, a, _)| (t, a)).collect();
    let fit = fit_blowup_scaling(&amp).map_err(|e| numerical("fit", e))?;
    let width: Vec<(f64, f64)> = series.iter().map(|&(t, _, w)| (t, w)).collect();
    let wfit = fit_scaling_at(&width, fit.t_star_hat).map_err(|e| numerical("fit", e))?;
    let mut csv = Csv::new(&["t", "max_abs_w", "half_max_width"]);
    for (t, a, w) in &series {
        csv.row(&[num(*t), num(*a), num(*w)]);
    }
    out.result("samples", series.len());
    out.result("amplitude_fit", fit_json(&fit));
    out.result("width_fit", fit_json(&wfit));
    out.check(
        enabled,
        "amplitude_exponent",
        fit.accepted && (fit.exponent_hat - predicted.amplitude_exponent).abs() <= 0.05,
    );
    out.check(
        enabled,
        "width_exponent",
        (wfit.exponent_hat - predicted.width_exponent).abs() <= 0.1,
    );
    out.files.push(("series.csv".into(), csv.finish()));
    Ok(out)
}

fn parabola(params: &Params) -> Result<Outcome, RunError> {
    let n = params.count("nodes", 3)?;
    let (lo, hi) = (params.real("x_min"), params.real("x_max"));
    if !(hi > lo) {
        return config_err("x_max must exceed x_min");
    }
    let t = params.real("t");
    let dx = (hi - lo) / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|i| lo + dx * i as f64).collect();
    let fx = parabola_fixture(t, &grid);
    let mut csv = Csv::new(&["x", "v", "w"]);
    let mut found = Vec::new();
    for i in 0..n {
        csv.row(&[
            num(grid[i]),
            num(fx.v[i]),
            fx.w[i].map_or(String::new(), num),
        ]);
        if i + 1 < n && fx.v[i] * fx.v[i + 1] < 0.0 {
            found.push(grid[i] + fx.v[i] / (fx.v[i] - fx.v[i + 1]) * dx);
        } else if fx.v[i] == 0.0 {
            found.push(grid[i]);
        }
    }
    let mut out = Outcome::default();
    let inside: Vec<f64> = fx
        .crossings
        .iter()
        .copied()
        .filter(|x| (lo..=hi).contains(x))
        .collect();
    let matched =
        inside.len() == found.len() && inside.iter().zip(&found).all(|(a, b)| (a - b).abs() <= dx);
    out.result("crossings", fx.crossings.clone());
    out.result("grid_crossings", found);
    out.check(params.flag("checks"), "crossings", matched);
    out.files.push(("fixture.csv".into(), csv.finish()));
    Ok(out)
}

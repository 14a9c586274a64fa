//! Adaptive explicit integration of the scalar and planar model problems.
//!
//! The integrator is the Dormand–Prince 5(4) embedded pair with a PI step
//! controller. Integration runs until a user supplied stop residual becomes
//! non-negative; the crossing is then located by bisection inside the last
//! accepted step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::Chart;

/// Sign in front of a right-hand side, `ẋ = ±f(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Catalog of right-hand sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Rhs {
    /// `ẋ = ±x^p`
    Power { p: f64, sign: Sign },
    /// `ẋ = 2x + x²`
    AsymptoticQuadratic,
    /// `ẋ = ±x`
    Linear { sign: Sign },
    /// `ż = z²` written as a real planar system.
    ComplexQuadratic,
    /// `ż = z³` written as a real planar system.
    ComplexCubic,
    /// `ẏ = αy + β`
    GoodAffine { alpha: f64, beta: f64 },
    /// `ẏ = c`
    GoodConstant { c: f64 },
}

impl Rhs {
    pub fn dimension(&self) -> usize {
        match self {
            Rhs::ComplexQuadratic | Rhs::ComplexCubic => 2,
            _ => 1,
        }
    }

    #[inline]
    pub(crate) fn eval(&self, s: &[f64; 2]) -> [f64; 2] {
        let x = s[0];
        match *self {
            Rhs::Power { p, sign } => [sign.value() * signed_pow(x, p), 0.0],
            Rhs::AsymptoticQuadratic => [2.0 * x + x * x, 0.0],
            Rhs::Linear { sign } => [sign.value() * x, 0.0],
            Rhs::ComplexQuadratic => {
                let y = s[1];
                [x * x - y * y, 2.0 * x * y]
            }
            Rhs::ComplexCubic => {
                let y = s[1];
                [x * x * x - 3.0 * x * y * y, 3.0 * x * x * y - y * y * y]
            }
            Rhs::GoodAffine { alpha, beta } => [alpha * x + beta, 0.0],
            Rhs::GoodConstant { c } => [c, 0.0],
        }
    }
}

/// `x^p`, using integer powers when `p` is integral so that negative `x` is
/// handled exactly; otherwise the odd extension `sign(x)|x|^p`.
pub fn signed_pow(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() < i32::MAX as f64 {
        x.powi(p as i32)
    } else {
        x.signum() * x.abs().powf(p)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("state has dimension {got}, right-hand side expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid integrator configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeProblem {
    pub rhs: Rhs,
    pub initial_state: Vec<f64>,
    pub initial_time: f64,
}

impl OdeProblem {
    pub fn new(rhs: Rhs, initial_state: Vec<f64>, initial_time: f64) -> Result<Self, OdeError> {
        if initial_state.len() != rhs.dimension() {
            return Err(OdeError::Dimension {
                expected: rhs.dimension(),
                got: initial_state.len(),
            });
        }
        Ok(Self {
            rhs,
            initial_state,
            initial_time,
        })
    }

    pub fn dimension(&self) -> usize {
        self.rhs.dimension()
    }
}

/// Evaluate the right-hand side of `problem` at `state`. All catalog systems
/// are autonomous, so `t` does not enter.
pub fn rhs_eval(problem: &OdeProblem, _t: f64, state: &[f64]) -> Result<Vec<f64>, OdeError> {
    let dim = problem.dimension();
    if state.len() != dim {
        return Err(OdeError::Dimension {
            expected: dim,
            got: state.len(),
        });
    }
    let d = problem.rhs.eval(&pack(state));
    Ok(d[..dim].to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub initial_step: f64,
    pub max_step: f64,
    /// Budget of step attempts (accepted and rejected).
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            initial_step: 1e-3,
            max_step: 0.1,
            max_steps: 1_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn with_tolerances(rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            rel_tol,
            abs_tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("initial_step", self.initial_step),
            ("max_step", self.max_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(OdeError::Config(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.max_steps == 0 {
            return Err(OdeError::Config("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    PredicateHit,
    MaxSteps,
    StepUnderflow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySegment {
    pub chart: Chart,
    pub samples: Vec<Sample>,
    pub termination: Termination,
}

impl TrajectorySegment {
    pub fn last(&self) -> &Sample {
        self.samples
            .last()
            .expect("segments always hold the initial sample")
    }

    pub fn first(&self) -> &Sample {
        &self.samples[0]
    }
}

// Dormand–Prince 5(4) tableau. All catalog systems are autonomous, so the
// stage times are not needed.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const PI_BETA: f64 = 0.04;
const PI_EXPO: f64 = 0.2 - PI_BETA * 0.75;
const MAX_BISECTIONS: usize = 200;

fn pack(s: &[f64]) -> [f64; 2] {
    let mut out = [0.0; 2];
    out[..s.len()].copy_from_slice(s);
    out
}

#[inline]
fn axpy(y: &[f64; 2], terms: &[(f64, &[f64; 2])], h: f64) -> [f64; 2] {
    let mut out = *y;
    for (c, k) in terms {
        out[0] += h * c * k[0];
        out[1] += h * c * k[1];
    }
    out
}

struct StepOutcome {
    y: [f64; 2],
    k7: [f64; 2],
    err: [f64; 2],
}

fn dopri_step(rhs: &Rhs, y: &[f64; 2], k1: &[f64; 2], h: f64) -> StepOutcome {
    let k2 = rhs.eval(&axpy(y, &[(A21, k1)], h));
    let k3 = rhs.eval(&axpy(y, &[(A31, k1), (A32, &k2)], h));
    let k4 = rhs.eval(&axpy(y, &[(A41, k1), (A42, &k2), (A43, &k3)], h));
    let k5 = rhs.eval(&axpy(
        y,
        &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)],
        h,
    ));
    let k6 = rhs.eval(&axpy(
        y,
        &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        h,
    ));
    let y_new = axpy(
        y,
        &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
        h,
    );
    let k7 = rhs.eval(&y_new);
    let mut err = [0.0; 2];
    for i in 0..2 {
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
    StepOutcome { y: y_new, k7, err }
}

fn error_norm(cfg: &IntegratorConfig, dim: usize, y: &[f64; 2], out: &StepOutcome) -> f64 {
    let mut acc = 0.0;
    for i in 0..dim {
        if !out.y[i].is_finite() {
            return f64::INFINITY;
        }
        let sc = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(out.y[i].abs());
        let e = out.err[i] / sc;
        acc += e * e;
    }
    let n = (acc / dim as f64).sqrt();
    if n.is_finite() {
        n
    } else {
        f64::INFINITY
    }
}

/// Smallest admissible step near time `t`.
pub fn underflow_threshold(t: f64) -> f64 {
    1e3 * f64::EPSILON * t.abs().max(f64::MIN_POSITIVE)
}

/// Integrate `problem` until `stop(t, state) >= 0`.
///
/// The returned segment always starts with the initial sample. On
/// [`Termination::PredicateHit`] the last sample is the bisection-refined
/// first point where the stop residual is non-negative; refinement ends when
/// the residual is within `abs_tol` or the bracket collapses to rounding.
pub fn integrate_until<F>(
    problem: &OdeProblem,
    config: &IntegratorConfig,
    stop: F,
) -> Result<TrajectorySegment, OdeError>
where
    F: Fn(f64, &[f64]) -> f64,
{
    config.validate()?;
    let dim = problem.dimension();
    if problem.initial_state.len() != dim {
        return Err(OdeError::Dimension {
            expected: dim,
            got: problem.initial_state.len(),
        });
    }
    let rhs = problem.rhs;
    let mut t = problem.initial_time;
    let mut y = pack(&problem.initial_state);
    let mut samples = vec![Sample {
        t,
        state: y[..dim].to_vec(),
    }];
    let finish = |samples, termination| {
        Ok(TrajectorySegment {
            chart: Chart::Original,
            samples,
            termination,
        })
    };

    if stop(t, &y[..dim]) >= 0.0 {
        return finish(samples, Termination::PredicateHit);
    }

    let mut k1 = rhs.eval(&y);
    let mut h = config.initial_step.min(config.max_step);
    let mut fac_old: f64 = 1e-4;
    let mut attempts = 0usize;
    let mut last_rejected = false;

    loop {
        if attempts >= config.max_steps {
            return finish(samples, Termination::MaxSteps);
        }
        if h < underflow_threshold(t) {
            return finish(samples, Termination::StepUnderflow);
        }
        attempts += 1;

        let out = dopri_step(&rhs, &y, &k1, h);
        let err = error_norm(config, dim, &y, &out);

        if err <= 1.0 {
            let t_new = t + h;
            let residual = stop(t_new, &out.y[..dim]);
            if residual >= 0.0 {
                let (t_hit, y_hit) =
                    locate_event(&rhs, config, dim, t, &y, &k1, h, &out.y, residual, &stop);
                samples.push(Sample {
                    t: t_hit,
                    state: y_hit[..dim].to_vec(),
                });
                return finish(samples, Termination::PredicateHit);
            }
            samples.push(Sample {
                t: t_new,
                state: out.y[..dim].to_vec(),
            });
            t = t_new;
            y = out.y;
            k1 = out.k7;

            let fac11 = err.powf(PI_EXPO);
            let mut fac = fac11 / fac_old.powf(PI_BETA);
            fac = (fac / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_new = h / fac;
            if last_rejected {
                h_new = h_new.min(h);
            }
            fac_old = err.max(1e-4);
            h = h_new.min(config.max_step);
            last_rejected = false;
        } else {
            let shrink = if err.is_finite() {
                (SAFETY * err.powf(-0.2)).max(FAC_MIN)
            } else {
                FAC_MIN
            };
            h *= shrink;
            last_rejected = true;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn locate_event<F>(
    rhs: &Rhs,
    config: &IntegratorConfig,
    dim: usize,
    t0: f64,
    y0: &[f64; 2],
    k1: &[f64; 2],
    h: f64,
    y_end: &[f64; 2],
    residual_end: f64,
    stop: &F,
) -> (f64, [f64; 2])
where
    F: Fn(f64, &[f64]) -> f64,
{
    let mut lo = 0.0;
    let mut hi = h;
    let mut y_hi = *y_end;
    let mut r_hi = residual_end;
    for _ in 0..MAX_BISECTIONS {
        if r_hi.abs() <= config.abs_tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || t0 + mid == t0 + hi || t0 + mid == t0 + lo {
            break;
        }
        let y_mid = dopri_step(rhs, y0, k1, mid).y;
        let r_mid = stop(t0 + mid, &y_mid[..dim]);
        if r_mid >= 0.0 {
            hi = mid;
            y_hi = y_mid;
            r_hi = r_mid;
        } else {
            lo = mid;
        }
    }
    (t0 + hi, y_hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn power(p: f64, x0: f64) -> OdeProblem {
        OdeProblem::new(
            Rhs::Power {
                p,
                sign: Sign::Plus,
            },
            vec![x0],
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn rhs_catalog_values() {
        assert_eq!(rhs_eval(&power(2.0, 2.0), 0.0, &[2.0]).unwrap(), vec![4.0]);
        let cq = OdeProblem::new(Rhs::ComplexQuadratic, vec![0.0, 0.0], 0.0).unwrap();
        assert_eq!(rhs_eval(&cq, 0.0, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let cc = OdeProblem::new(Rhs::ComplexCubic, vec![1.0, 1.0], 0.0).unwrap();
        assert_eq!(rhs_eval(&cc, 0.0, &[1.0, 1.0]).unwrap(), vec![-2.0, 2.0]);
        let aq = OdeProblem::new(Rhs::AsymptoticQuadratic, vec![1.0], 0.0).unwrap();
        assert_eq!(rhs_eval(&aq, 0.0, &[3.0]).unwrap(), vec![15.0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        assert!(matches!(
            OdeProblem::new(Rhs::ComplexCubic, vec![1.0], 0.0),
            Err(OdeError::Dimension {
                expected: 2,
                got: 1
            })
        ));
        assert!(rhs_eval(&power(2.0, 1.0), 0.0, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = IntegratorConfig::default();
        cfg.max_steps = 0;
        assert!(cfg.validate().is_err());
        let cfg = IntegratorConfig {
            rel_tol: -1.0,
            ..Default::default()
        };
        assert!(integrate_until(&power(2.0, 1.0), &cfg, |_, _| -1.0).is_err());
    }

    #[test]
    fn quadratic_reaches_switch_level() {
        let seg = integrate_until(&power(2.0, 1.0), &IntegratorConfig::default(), |_, s| {
            s[0] - 100.0
        })
        .unwrap();
        assert_eq!(seg.termination, Termination::PredicateHit);
        let last = seg.last();
        assert!((last.state[0] - 100.0).abs() < 1e-6);
        assert!((last.t - 0.99).abs() < 1e-9, "t = {}", last.t);
    }

    #[test]
    fn linear_growth_matches_exponential() {
        let p = OdeProblem::new(Rhs::Linear { sign: Sign::Plus }, vec![1.0], 0.0).unwrap();
        let cfg = IntegratorConfig::with_tolerances(1e-10, 1e-12);
        let seg = integrate_until(&p, &cfg, |t, _| t - 1.0).unwrap();
        let last = seg.last();
        assert!((last.t - 1.0).abs() <= 1e-12);
        assert!((last.state[0] - 1f64.exp()).abs() / 1f64.exp() < 1e-9);
    }

    #[test]
    fn constant_rate_event_time() {
        let p = OdeProblem::new(Rhs::GoodConstant { c: -1.0 }, vec![0.5], 0.0).unwrap();
        let cfg = IntegratorConfig::with_tolerances(1e-10, 1e-12);
        let seg = integrate_until(&p, &cfg, |_, s| 0.01 - s[0]).unwrap();
        assert!((seg.last().t - 0.49).abs() <= 1e-12);
    }

    #[test]
    fn step_underflow_at_unswitched_singularity() {
        let seg = integrate_until(&power(2.0, 1.0), &IntegratorConfig::default(), |t, _| {
            t - 2.0
        })
        .unwrap();
        assert_eq!(seg.termination, Termination::StepUnderflow);
        assert!(seg.last().t < 1.0);
    }

    #[test]
    fn max_steps_budget() {
        let cfg = IntegratorConfig {
            max_steps: 5,
            max_step: 1e-3,
            ..Default::default()
        };
        let seg = integrate_until(&power(2.0, 0.1), &cfg, |t, _| t - 1.0).unwrap();
        assert_eq!(seg.termination, Termination::MaxSteps);
        assert!(seg.samples.len() <= 6);
    }

    #[test]
    fn samples_strictly_increase() {
        let seg = integrate_until(&power(3.0, 1.0), &IntegratorConfig::default(), |_, s| {
            s[0] - 25.0
        })
        .unwrap();
        assert!(seg.samples.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn already_stopped_returns_initial_sample() {
        let seg = integrate_until(&power(2.0, 5.0), &IntegratorConfig::default(), |_, s| {
            s[0] - 1.0
        })
        .unwrap();
        assert_eq!(seg.samples.len(), 1);
        assert_eq!(seg.termination, Termination::PredicateHit);
    }
}

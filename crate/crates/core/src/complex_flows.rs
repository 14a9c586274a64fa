//! Complexified flows `ż = z²` and `ż = z³`: closed-form orbits, the
//! conserved quantity of the quadratic flow, and transition times around the
//! point at infinity.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ode::{
    integrate_until, IntegratorConfig, OdeError, OdeProblem, Rhs, Termination, TrajectorySegment,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("orbit reaches the pole at t = {0}")]
    Pole(f64),
    #[error("E is undefined on the real axis")]
    UndefinedInvariant,
    #[error("orbit on the real axis has infinite radius")]
    Degenerate,
    #[error("no arrival: integration ended with {termination:?} at t = {t}")]
    Timeout { termination: Termination, t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexState {
    pub x: f64,
    pub y: f64,
}

impl ComplexState {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn as_complex(&self) -> Complex64 {
        Complex64::new(self.x, self.y)
    }
}

impl From<Complex64> for ComplexState {
    fn from(z: Complex64) -> Self {
        Self { x: z.re, y: z.im }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitGeometry {
    pub e: f64,
    pub r: f64,
    pub center_y: f64,
}

impl OrbitGeometry {
    /// `x² + (y − center_y)² − R²`
    pub fn circle_residual(&self, s: ComplexState) -> f64 {
        let dy = s.y - self.center_y;
        s.x * s.x + dy * dy - self.r * self.r
    }
}

/// Closed-form solution of `ż = z²` through `(x0, y0)`.
pub fn analytic_quad_orbit(t: f64, x0: f64, y0: f64) -> Result<ComplexState, FlowError> {
    let m = x0 * x0 + y0 * y0;
    if m == 0.0 {
        return Err(FlowError::InvalidInput("z0 must be non-zero".into()));
    }
    let a = x0 - t * m;
    let den = a * a + y0 * y0;
    if den == 0.0 {
        return Err(FlowError::Pole(t));
    }
    Ok(ComplexState {
        x: (x0 * m - t * m * m) / den,
        y: y0 * m / den,
    })
}

/// Solution of `ż = z³` from `1/z² = 1/z0² − 2t`, on the square-root branch
/// that agrees with `z0` at `t = 0`. Valid while the orbit stays off the
/// branch cut of the principal root.
pub fn analytic_cubic_orbit(t: f64, x0: f64, y0: f64) -> Result<ComplexState, FlowError> {
    let z0 = Complex64::new(x0, y0);
    if z0.norm_sqr() == 0.0 {
        return Err(FlowError::InvalidInput("z0 must be non-zero".into()));
    }
    let w0 = z0.powi(-2);
    let sign = if (w0.sqrt().inv() - z0).norm() <= (w0.sqrt().inv() + z0).norm() {
        1.0
    } else {
        -1.0
    };
    let w = w0 - 2.0 * t;
    if w.norm_sqr() == 0.0 {
        return Err(FlowError::Pole(t));
    }
    Ok((sign * w.sqrt().inv()).into())
}

/// `E = (x² + y²)/y`, conserved by `ż = z²`.
pub fn invariant_e(state: ComplexState) -> Result<f64, FlowError> {
    if state.y == 0.0 {
        return Err(FlowError::UndefinedInvariant);
    }
    Ok((state.x * state.x + state.y * state.y) / state.y)
}

pub fn orbit_geometry(x0: f64, y0: f64) -> Result<OrbitGeometry, FlowError> {
    if y0 == 0.0 {
        return Err(FlowError::Degenerate);
    }
    let e = (x0 * x0 + y0 * y0) / y0;
    let r = 0.5 * e.abs();
    Ok(OrbitGeometry {
        e,
        r,
        center_y: r * y0.signum(),
    })
}

fn complex_rhs(degree: u32) -> Result<Rhs, FlowError> {
    match degree {
        2 => Ok(Rhs::ComplexQuadratic),
        3 => Ok(Rhs::ComplexCubic),
        d => Err(FlowError::InvalidInput(format!(
            "degree must be 2 or 3, got {d}"
        ))),
    }
}

/// Integrate `ż = z^degree` from `(x0, y0)` at `t = 0` up to `t_end`.
pub fn integrate_complex(
    degree: u32,
    x0: f64,
    y0: f64,
    t_end: f64,
    config: &IntegratorConfig,
) -> Result<TrajectorySegment, FlowError> {
    let problem = OdeProblem::new(complex_rhs(degree)?, vec![x0, y0], 0.0)?;
    let seg = integrate_until(&problem, config, |t, _| t - t_end)?;
    if seg.termination != Termination::PredicateHit {
        return Err(FlowError::Timeout {
            termination: seg.termination,
            t: seg.last().t,
        });
    }
    Ok(seg)
}

/// Time for the complexified orbit started at `(R, eps)` to pass around the
/// point at infinity.
///
/// Degree 3: first time with `|x| ≤ eps·|y|` (arrival at the imaginary
/// axis). Degree 2: the orbit first swings out to `x ≤ −2R` on the far side
/// of infinity; the transition ends when it comes back to
/// `x ≥ −R·(1 − eps)`, i.e. arrives near `−R`.
pub fn transition_time(
    r: f64,
    eps: f64,
    degree: u32,
    config: &IntegratorConfig,
) -> Result<f64, FlowError> {
    if !(r > 0.0 && eps > 0.0 && eps < r) {
        return Err(FlowError::InvalidInput(format!(
            "need R > eps > 0, got R = {r}, eps = {eps}"
        )));
    }
    let rhs = complex_rhs(degree)?;
    let problem = OdeProblem::new(rhs, vec![r, eps], 0.0)?;
    let arrived = |seg: &TrajectorySegment| -> Result<f64, FlowError> {
        match seg.termination {
            Termination::PredicateHit => Ok(seg.last().t),
            termination => Err(FlowError::Timeout {
                termination,
                t: seg.last().t,
            }),
        }
    };
    if degree == 3 {
        let seg = integrate_until(&problem, config, |_, s| eps * s[1].abs() - s[0].abs())?;
        return arrived(&seg);
    }
    let far = integrate_until(&problem, config, |_, s| -2.0 * r - s[0])?;
    arrived(&far)?;
    let last = far.last();
    let resumed = OdeProblem::new(rhs, last.state.clone(), last.t)?;
    let target = -r * (1.0 - eps);
    let back = integrate_until(&resumed, config, |_, s| s[0] - target)?;
    arrived(&back)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopDiagnostics {
    pub t_end: f64,
    pub samples: usize,
    /// `max |E(t) − E(0)|`
    pub max_e_drift: f64,
    /// `max |E(t) − E(0)| / |E(0)|`
    pub max_e_rel_drift: f64,
    /// `max |x² + (y − y_c)² − R²| / R²`
    pub max_circle_residual: f64,
    /// `max |z(t) − z_exact(t)|`
    pub max_orbit_error: f64,
    /// `max |z(t) − z_exact(t)| / |z_exact(t)|`
    pub max_orbit_rel_error: f64,
}

/// Integrate the quadratic flow over `t ∈ [0, 4/(x0² + y0²)]` and compare
/// against the invariant, the orbit circle and the closed form.
pub fn quadratic_loop_diagnostics(
    x0: f64,
    y0: f64,
    config: &IntegratorConfig,
) -> Result<LoopDiagnostics, FlowError> {
    let t_end = 4.0 / (x0 * x0 + y0 * y0);
    let seg = integrate_complex(2, x0, y0, t_end, config)?;
    let geom = orbit_geometry(x0, y0)?;
    let mut d = LoopDiagnostics {
        t_end,
        samples: seg.samples.len(),
        max_e_drift: 0.0,
        max_e_rel_drift: 0.0,
        max_circle_residual: 0.0,
        max_orbit_error: 0.0,
        max_orbit_rel_error: 0.0,
    };
    for s in &seg.samples {
        let z = ComplexState::new(s.state[0], s.state[1]);
        let exact = analytic_quad_orbit(s.t, x0, y0)?;
        let err = (z.as_complex() - exact.as_complex()).norm();
        d.max_e_drift = d.max_e_drift.max((invariant_e(z)? - geom.e).abs());
        d.max_e_rel_drift = d.max_e_drift / geom.e.abs();
        d.max_circle_residual = d
            .max_circle_residual
            .max(geom.circle_residual(z).abs() / (geom.r * geom.r));
        d.max_orbit_error = d.max_orbit_error.max(err);
        d.max_orbit_rel_error = d.max_orbit_rel_error.max(err / exact.as_complex().norm());
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tight() -> IntegratorConfig {
        IntegratorConfig::with_tolerances(1e-10, 1e-12)
    }

    #[test]
    fn orbit_reference_values() {
        assert_eq!(
            analytic_quad_orbit(0.0, 0.3, -0.7).unwrap(),
            ComplexState::new(0.3, -0.7)
        );
        let s = analytic_quad_orbit(0.5, 1.0, 0.0).unwrap();
        assert_eq!((s.x, s.y), (2.0, 0.0));
        let s = analytic_quad_orbit(1.0, 0.0, 1.0).unwrap();
        assert!((s.x + 0.5).abs() < 1e-15 && (s.y - 0.5).abs() < 1e-15);
        assert!(matches!(
            analytic_quad_orbit(1.0, 1.0, 0.0),
            Err(FlowError::Pole(_))
        ));
    }

    #[test]
    fn closed_form_matches_integration() {
        let seg = integrate_complex(2, 0.0, 1.0, 1.0, &tight()).unwrap();
        let end = seg.last();
        assert!((end.state[0] + 0.5).abs() < 1e-9 && (end.state[1] - 0.5).abs() < 1e-9);
        let seg = integrate_complex(3, 0.4, 0.3, 1.0, &tight()).unwrap();
        let end = seg.last();
        let exact = analytic_cubic_orbit(1.0, 0.4, 0.3).unwrap();
        assert!((end.state[0] - exact.x).abs() < 1e-8 && (end.state[1] - exact.y).abs() < 1e-8);
    }

    #[test]
    fn invariant_and_geometry() {
        assert_eq!(invariant_e(ComplexState::new(0.0, 1.0)).unwrap(), 1.0);
        assert_eq!(invariant_e(ComplexState::new(1.0, 1.0)).unwrap(), 2.0);
        assert_eq!(invariant_e(ComplexState::new(3.0, 1.0)).unwrap(), 10.0);
        assert!(matches!(
            invariant_e(ComplexState::new(1.0, 0.0)),
            Err(FlowError::UndefinedInvariant)
        ));
        assert_eq!(orbit_geometry(0.0, 1.0).unwrap().r, 0.5);
        assert_eq!(orbit_geometry(1.0, 1.0).unwrap().r, 1.0);
        assert!(orbit_geometry(1.0, 1e-8).unwrap().r > 1e7);
        assert!(matches!(
            orbit_geometry(1.0, 0.0),
            Err(FlowError::Degenerate)
        ));
        for i in 0..200 {
            let t = 0.02 * i as f64;
            let s = analytic_quad_orbit(t, 1.0, 1.0).unwrap();
            assert!((invariant_e(s).unwrap() - 2.0).abs() < 1e-10);
            assert!(orbit_geometry(1.0, 1.0).unwrap().circle_residual(s).abs() < 1e-10);
        }
    }

    #[test]
    fn minuscule_imaginary_part_avoids_collapse() {
        let problem = OdeProblem::new(Rhs::ComplexQuadratic, vec![1.0, 1e-6], 0.0).unwrap();
        let seg = integrate_until(&problem, &tight(), |_, s| -0.5 - s[0]).unwrap();
        assert_eq!(seg.termination, Termination::PredicateHit);
        let peak = seg
            .samples
            .iter()
            .map(|s| s.state[0].abs())
            .fold(0.0, f64::max);
        assert!(peak.is_finite() && peak > 1e5);
    }

    #[test]
    fn quadratic_transition_scales_as_inverse_radius() {
        for r in [1e2, 1e3, 1e4] {
            let t = transition_time(r, 1e-6 * r, 2, &tight()).unwrap();
            assert!((1.8..=2.2).contains(&(t * r)), "R = {r}: T·R = {}", t * r);
        }
    }

    #[test]
    fn cubic_transition_is_eps_insensitive() {
        let a = transition_time(100.0, 1e-3, 3, &tight()).unwrap();
        let b = transition_time(100.0, 5e-4, 3, &tight()).unwrap();
        assert!(((a - b) / a).abs() < 0.01);
        let expected = (1.0 + 1.0 / 100.0) / (2.0 * 100.0 * 100.0);
        assert!(
            ((a - expected) / expected).abs() < 0.01,
            "{a} vs {expected}"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn real_axis_is_invariant(x0 in -0.9f64..0.9, degree in 2u32..=3) {
            let seg = integrate_complex(degree, x0, 0.0, 0.5, &IntegratorConfig::default()).unwrap();
            prop_assert!(seg.samples.iter().all(|s| s.state[1] == 0.0));
        }

        #[test]
        fn cubic_leaves_keep_first_quadrant(x0 in 0.01f64..2.0, y0 in 0.01f64..2.0) {
            let seg = integrate_complex(3, x0, y0, 2.0, &IntegratorConfig::default()).unwrap();
            prop_assert!(seg.samples.iter().all(|s| s.state[0] >= 0.0 && s.state[1] >= 0.0));
        }

        #[test]
        fn closed_form_conserves_e(x0 in -3.0f64..3.0, y0 in 0.05f64..3.0, t in 0.0f64..10.0) {
            let e0 = invariant_e(ComplexState::new(x0, y0)).unwrap();
            let e = invariant_e(analytic_quad_orbit(t, x0, y0).unwrap()).unwrap();
            prop_assert!(((e - e0) / e0).abs() < 1e-10);
        }
    }
}

//! On-the-fly blowup detection and chart switching for scalar ODEs.
//!
//! A run integrates the original ("bad") equation until `|x|` reaches the
//! switch level, fits a power law `F(x) ≈ c·|x|^p` to the trailing samples,
//! switches to the transformed ("good") variable, integrates it through zero
//! and switches back once `|y|` has reached the return level.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ode::{
    integrate_until, rhs_eval, signed_pow, IntegratorConfig, OdeError, OdeProblem, Rhs, Sample,
    Termination, TrajectorySegment,
};

/// Minimum number of samples in a fit window.
pub const MIN_FIT_WINDOW: usize = 8;
/// Default coefficient-of-determination threshold for accepting a fit.
pub const DEFAULT_R2_THRESHOLD: f64 = 0.999;
/// Fitted exponents this close to an integer are snapped to it.
pub const SNAP_TOLERANCE: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("power-law fit not accepted (p_hat = {p_hat}, r² = {r_squared}, window = {window})")]
    FitRejected {
        p_hat: f64,
        r_squared: f64,
        window: usize,
    },
    #[error("exponent {0} does not describe finite-time blowup")]
    NoBlowup(f64),
    #[error("branch policy real_continuation is not available for odd exponent {0}")]
    InvalidPolicy(f64),
    #[error("cannot continue a non-integer exponent {0} through a sign change")]
    NonIntegerExponent(f64),
    #[error("value at the pole of the chart")]
    Pole,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("protocol failure during {phase}: integration ended with {termination:?} at t = {t}, state = {state:?}")]
    Failure {
        phase: &'static str,
        termination: Termination,
        t: f64,
        state: Vec<f64>,
    },
}

/// Coordinate chart a trajectory segment (or grid region) is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Chart {
    Original,
    /// `y = x^q` with `q = 1 − p`.
    InversePower {
        q: f64,
    },
    /// `y = 1/x`
    InverseAffine,
}

/// Which continuation to report when the good variable re-emerges on the
/// side of zero that has no real preimage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    RealContinuation,
    ImaginaryPlus,
    ImaginaryMinus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartState {
    pub chart: Chart,
}

impl ChartState {
    pub fn new(chart: Chart) -> Self {
        Self { chart }
    }

    pub fn forward(&self, x: f64) -> f64 {
        match self.chart {
            Chart::Original => x,
            Chart::InversePower { q } => signed_pow(x, q),
            Chart::InverseAffine => 1.0 / x,
        }
    }

    /// Map a good-chart value back to the original variable.
    ///
    /// For even `q` (odd blowup exponent) a negative `y` has no real
    /// preimage; the root with phase `±π/|q|` is returned according to
    /// `branch`.
    pub fn back(&self, y: f64, branch: Branch) -> Result<Complex64, ProtocolError> {
        match self.chart {
            Chart::Original => Ok(Complex64::new(y, 0.0)),
            Chart::InverseAffine => {
                if y == 0.0 {
                    return Err(ProtocolError::Pole);
                }
                Ok(Complex64::new(1.0 / y, 0.0))
            }
            Chart::InversePower { q } => {
                if y == 0.0 {
                    return Err(ProtocolError::Pole);
                }
                let magnitude = y.abs().powf(1.0 / q);
                if y > 0.0 {
                    return Ok(Complex64::new(magnitude, 0.0));
                }
                if q.fract() != 0.0 {
                    return Err(ProtocolError::NonIntegerExponent(1.0 - q));
                }
                if (q as i64) % 2 != 0 {
                    return Ok(Complex64::new(-magnitude, 0.0));
                }
                let phase = std::f64::consts::PI / q.abs();
                match branch {
                    Branch::RealContinuation => Err(ProtocolError::InvalidPolicy(1.0 - q)),
                    Branch::ImaginaryPlus => Ok(Complex64::from_polar(magnitude, phase)),
                    Branch::ImaginaryMinus => Ok(Complex64::from_polar(magnitude, -phase)),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub p_hat: f64,
    pub c_hat: f64,
    pub r_squared: f64,
    pub window: usize,
    pub accepted: bool,
}

/// Least-squares fit of `log|F| = log c + p log|x|`.
pub fn detect_power_law(
    recent: &[(f64, f64)],
    min_window: usize,
    r2_threshold: f64,
) -> Result<PowerLawFit, ProtocolError> {
    if recent.len() < 2 {
        return Err(ProtocolError::InvalidInput(
            "at least two samples are needed for a fit".into(),
        ));
    }
    let mut lx = Vec::with_capacity(recent.len());
    let mut lf = Vec::with_capacity(recent.len());
    for &(x, f) in recent {
        if x == 0.0 || f == 0.0 || !x.is_finite() || !f.is_finite() {
            return Err(ProtocolError::InvalidInput(format!(
                "sample (x = {x}, F = {f}) has no logarithm"
            )));
        }
        lx.push(x.abs().ln());
        lf.push(f.abs().ln());
    }
    let (slope, intercept, r_squared) = linear_regression(&lx, &lf)
        .ok_or_else(|| ProtocolError::InvalidInput("all samples share the same |x|".into()))?;
    let window = recent.len();
    Ok(PowerLawFit {
        p_hat: slope,
        c_hat: intercept.exp(),
        r_squared,
        window,
        accepted: window >= min_window && r_squared >= r2_threshold,
    })
}

/// Ordinary least squares `y ≈ a·x + b`; returns `(a, b, r²)`.
pub(crate) fn linear_regression(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| {
            let r = yi - (slope * xi + intercept);
            r * r
        })
        .sum();
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Some((slope, intercept, r2))
}

pub fn snap_exponent(p_hat: f64) -> f64 {
    let nearest = p_hat.round();
    if (p_hat - nearest).abs() <= SNAP_TOLERANCE {
        nearest
    } else {
        p_hat
    }
}

/// Good equation and chart for an accepted fit. The returned problem carries
/// the transformed initial data of `problem`; callers re-base it at the
/// switch point.
pub fn good_equation_for(
    problem: &OdeProblem,
    fit: &PowerLawFit,
) -> Result<(OdeProblem, ChartState), ProtocolError> {
    if !fit.accepted {
        return Err(ProtocolError::FitRejected {
            p_hat: fit.p_hat,
            r_squared: fit.r_squared,
            window: fit.window,
        });
    }
    let (rhs, chart) = match problem.rhs {
        Rhs::Power { sign, .. } => {
            let p = snap_exponent(fit.p_hat);
            if p <= 1.0 {
                return Err(ProtocolError::NoBlowup(p));
            }
            (
                Rhs::GoodConstant {
                    c: -sign.value() * (p - 1.0),
                },
                Chart::InversePower { q: 1.0 - p },
            )
        }
        Rhs::AsymptoticQuadratic => {
            if snap_exponent(fit.p_hat) <= 1.0 {
                return Err(ProtocolError::NoBlowup(fit.p_hat));
            }
            (
                Rhs::GoodAffine {
                    alpha: -2.0,
                    beta: -1.0,
                },
                Chart::InverseAffine,
            )
        }
        other => {
            return Err(ProtocolError::Unsupported(format!(
                "no good equation for {other:?}"
            )))
        }
    };
    let chart = ChartState::new(chart);
    let y0 = chart.forward(problem.initial_state[0]);
    Ok((OdeProblem::new(rhs, vec![y0], problem.initial_time)?, chart))
}

/// Default switch level for an exponent.
pub fn default_switch_level(p: f64) -> f64 {
    if p == 3.0 {
        25.0
    } else {
        100.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingOptions {
    pub switch_level: f64,
    pub return_level: f64,
    pub branch: Branch,
    /// The resumed original-chart segment is integrated up to this time.
    pub t_end: f64,
    pub min_window: usize,
    pub r2_threshold: f64,
}

impl CrossingOptions {
    pub fn for_rhs(rhs: &Rhs) -> Self {
        let (switch_level, return_level) = match rhs {
            Rhs::Power { p, .. } if *p == 3.0 => (25.0, 0.04),
            Rhs::Power { p, .. } => (default_switch_level(*p), 0.01),
            _ => (100.0, 0.01),
        };
        Self {
            switch_level,
            return_level,
            branch: Branch::ImaginaryPlus,
            t_end: 2.0,
            min_window: MIN_FIT_WINDOW,
            r2_threshold: DEFAULT_R2_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchPoint {
    pub t: f64,
    pub x: Complex64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingRecord {
    pub t_star_estimate: f64,
    pub switch_in: SwitchPoint,
    pub switch_out: SwitchPoint,
    pub branch: Branch,
    pub chart: Chart,
    pub fit: PowerLawFit,
}

/// Trajectory stitched from segments in different charts. Segments share
/// their boundary times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartedTrajectory {
    pub segments: Vec<TrajectorySegment>,
}

impl ChartedTrajectory {
    /// Samples of every segment mapped to the original variable (as a
    /// complex number), skipping the duplicated boundary samples.
    pub fn original_values(&self, branch: Branch) -> Result<Vec<(f64, Complex64)>, ProtocolError> {
        let mut out: Vec<(f64, Complex64)> = Vec::new();
        for seg in &self.segments {
            let chart = ChartState::new(seg.chart);
            for s in &seg.samples {
                if out.last().is_some_and(|(t, _)| *t >= s.t) {
                    continue;
                }
                let z = match s.state.len() {
                    2 => Complex64::new(s.state[0], s.state[1]),
                    _ => match chart.back(s.state[0], branch) {
                        Ok(z) => z,
                        Err(ProtocolError::Pole) => continue,
                        Err(e) => return Err(e),
                    },
                };
                out.push((s.t, z));
            }
        }
        Ok(out)
    }
}

/// Trailing window of samples with at least [`MIN_FIT_WINDOW`] entries whose
/// `|x|` spans a decade, sorted by `|x|`. Returns `(window, spans_decade)`.
pub fn fit_window(
    problem: &OdeProblem,
    samples: &[Sample],
    min_window: usize,
) -> Result<(Vec<(f64, f64)>, bool), ProtocolError> {
    let mut window = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    let mut spans = false;
    for s in samples.iter().rev() {
        let x = s.state[0];
        if x == 0.0 {
            continue;
        }
        let f = rhs_eval(problem, s.t, &s.state)?[0];
        window.push((x, f));
        lo = lo.min(x.abs());
        hi = hi.max(x.abs());
        if window.len() >= min_window && hi >= 10.0 * lo {
            spans = true;
            break;
        }
    }
    window.sort_by(|a, b| a.0.abs().total_cmp(&b.0.abs()));
    Ok((window, spans))
}

fn require_hit(seg: &TrajectorySegment, phase: &'static str) -> Result<(), ProtocolError> {
    if seg.termination == Termination::PredicateHit {
        return Ok(());
    }
    let last = seg.last();
    Err(ProtocolError::Failure {
        phase,
        termination: seg.termination,
        t: last.t,
        state: last.state.clone(),
    })
}

/// Run the full detect / switch / cross / switch-back protocol.
pub fn cross_infinity(
    problem: &OdeProblem,
    config: &IntegratorConfig,
    options: &CrossingOptions,
) -> Result<(ChartedTrajectory, CrossingRecord), ProtocolError> {
    if problem.dimension() != 1 {
        return Err(ProtocolError::Unsupported(
            "the crossing protocol acts on scalar problems".into(),
        ));
    }
    if !(options.switch_level > 1.0) {
        return Err(ProtocolError::InvalidInput(format!(
            "switch_level must exceed 1, got {}",
            options.switch_level
        )));
    }
    if !(options.return_level > 0.0 && options.return_level < 1.0) {
        return Err(ProtocolError::InvalidInput(format!(
            "return_level must lie in (0, 1), got {}",
            options.return_level
        )));
    }

    // 1. Original chart up to the switch level.
    let level = options.switch_level;
    let original = integrate_until(problem, config, |_, s| s[0].abs() - level)?;
    require_hit(&original, "approach")?;

    // 2. Fit the growth law on the trailing window.
    let (window, spans_decade) = fit_window(problem, &original.samples, options.min_window)?;
    let mut fit = detect_power_law(&window, options.min_window, options.r2_threshold)?;
    fit.accepted &= spans_decade;

    let switch = original.last().clone();
    let rebased = OdeProblem::new(problem.rhs, switch.state.clone(), switch.t)?;
    let (mut good, chart) = good_equation_for(&rebased, &fit)?;
    let p_round = snap_exponent(fit.p_hat);

    if let Chart::InversePower { q } = chart.chart {
        let odd_exponent = q.fract() == 0.0 && (q as i64) % 2 == 0;
        if odd_exponent && options.branch == Branch::RealContinuation {
            return Err(ProtocolError::InvalidPolicy(p_round));
        }
        if q.fract() != 0.0 {
            return Err(ProtocolError::NonIntegerExponent(p_round));
        }
    }

    // 3. Good chart: through zero, then out to the return level.
    let y0 = good.initial_state[0];
    let side = y0.signum();
    let to_zero = integrate_until(&good, config, |_, s| -side * s[0])?;
    require_hit(&to_zero, "zero crossing")?;
    let zero = to_zero.last().clone();
    let t_star_estimate = zero.t;

    good.initial_state = zero.state.clone();
    good.initial_time = zero.t;
    let ret = options.return_level;
    let to_return = integrate_until(&good, config, |_, s| -side * s[0] - ret)?;
    require_hit(&to_return, "return")?;

    let mut good_samples = to_zero.samples;
    good_samples.extend(to_return.samples.into_iter().skip(1));
    let good_segment = TrajectorySegment {
        chart: chart.chart,
        samples: good_samples,
        termination: Termination::PredicateHit,
    };
    let out = good_segment.last().clone();

    // 4. Back to the original chart.
    let x_out = chart.back(out.state[0], options.branch)?;
    let (resumed_problem, branch) = if x_out.im == 0.0 {
        (
            OdeProblem::new(problem.rhs, vec![x_out.re], out.t)?,
            Branch::RealContinuation,
        )
    } else {
        let rhs = match problem.rhs {
            Rhs::Power { p, sign } if p_round == 3.0 && p == 3.0 && sign.value() > 0.0 => {
                Rhs::ComplexCubic
            }
            other => {
                return Err(ProtocolError::Unsupported(format!(
                    "complex continuation of {other:?}"
                )))
            }
        };
        (
            OdeProblem::new(rhs, vec![x_out.re, x_out.im], out.t)?,
            options.branch,
        )
    };
    let t_end = options.t_end;
    let resumed = integrate_until(&resumed_problem, config, |t, _| t - t_end)?;
    require_hit(&resumed, "continuation")?;

    let record = CrossingRecord {
        t_star_estimate,
        switch_in: SwitchPoint {
            t: switch.t,
            x: Complex64::new(switch.state[0], 0.0),
        },
        switch_out: SwitchPoint { t: out.t, x: x_out },
        branch,
        chart: chart.chart,
        fit,
    };
    Ok((
        ChartedTrajectory {
            segments: vec![original, good_segment, resumed],
        },
        record,
    ))
}

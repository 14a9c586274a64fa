//! Blowup scaling laws: exponents predicted from operator scalings, empirical
//! power-law fits with an unknown collapse time, and parabola fixtures for
//! self-similar zero crossings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ode::signed_pow;
use crate::protocol::linear_regression;

/// Largest RMS log-space residual for an accepted scaling fit.
pub const FIT_RESIDUAL_THRESHOLD: f64 = 1e-2;
/// Upper end of the collapse-time search, in units of the series span.
pub const T_STAR_SEARCH_SPANS: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScalingError {
    #[error("s = 1 gives exponential growth, not a power law")]
    Degenerate,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingSignature {
    pub a: f64,
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowupScaling {
    pub amplitude_exponent: f64,
    pub width_exponent: f64,
}

pub fn predict_exponents(sig: ScalingSignature) -> Result<BlowupScaling, ScalingError> {
    if sig.s == 1.0 {
        return Err(ScalingError::Degenerate);
    }
    if sig.a == 0.0 {
        return Err(ScalingError::InvalidInput("a must be non-zero".into()));
    }
    Ok(BlowupScaling {
        amplitude_exponent: 1.0 / (1.0 - sig.s),
        width_exponent: 1.0 / sig.a,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFitResult {
    pub t_star_hat: f64,
    pub exponent_hat: f64,
    /// RMS residual of the log-log regression; infinite for rejected input.
    pub residual: f64,
    pub accepted: bool,
}

impl ScalingFitResult {
    fn rejected() -> Self {
        Self {
            t_star_hat: f64::NAN,
            exponent_hat: f64::NAN,
            residual: f64::INFINITY,
            accepted: false,
        }
    }
}

fn validate_series(series: &[(f64, f64)]) -> Result<(), ScalingError> {
    if series.len() < 3 {
        return Err(ScalingError::InvalidInput(
            "a scaling fit needs at least three samples".into(),
        ));
    }
    if series.iter().any(|&(_, a)| !(a > 0.0 && a.is_finite())) {
        return Err(ScalingError::InvalidInput(
            "amplitudes must be positive and finite".into(),
        ));
    }
    if series.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(ScalingError::InvalidInput(
            "times must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Regression of `log A` on `log(t⋆ − t)`; returns `(exponent, rms)`.
fn log_log_fit(series: &[(f64, f64)], t_star: f64) -> Option<(f64, f64)> {
    let lx: Vec<f64> = series.iter().map(|&(t, _)| (t_star - t).ln()).collect();
    let ly: Vec<f64> = series.iter().map(|&(_, a)| a.ln()).collect();
    if lx.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let (slope, intercept, _) = linear_regression(&lx, &ly)?;
    let ss: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    Some((slope, (ss / series.len() as f64).sqrt()))
}

/// Fit `A ≈ C·(t⋆ − t)^γ` with `t⋆` unknown.
///
/// `t⋆` is found by golden-section search on the regression residual over
/// `(t_end, t_end + 10·span)`. The fit is rejected when the last quarter of
/// the series is not increasing, when the optimum sits on the search
/// boundary, or when the residual exceeds [`FIT_RESIDUAL_THRESHOLD`].
pub fn fit_blowup_scaling(series: &[(f64, f64)]) -> Result<ScalingFitResult, ScalingError> {
    validate_series(series)?;
    let tail = (series.len() / 4).max(3);
    let tail = &series[series.len() - tail..];
    if tail.windows(2).any(|w| w[1].1 <= w[0].1) {
        return Ok(ScalingFitResult::rejected());
    }

    let t_end = series[series.len() - 1].0;
    let span = t_end - series[0].0;
    let lo = t_end + span * 1e-12;
    let hi = t_end + T_STAR_SEARCH_SPANS * span;
    let objective = |ts: f64| log_log_fit(series, ts).map_or(f64::INFINITY, |(_, r)| r);

    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    for _ in 0..200 {
        if (b - a) <= 1e-15 * t_end.abs().max(span) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = objective(d);
        }
    }
    let t_star = 0.5 * (a + b);
    let Some((exponent, residual)) = log_log_fit(series, t_star) else {
        return Ok(ScalingFitResult::rejected());
    };
    let margin = 1e-6 * span;
    let interior = t_star - lo > margin && hi - t_star > margin;
    Ok(ScalingFitResult {
        t_star_hat: t_star,
        exponent_hat: exponent,
        residual,
        accepted: interior && residual <= FIT_RESIDUAL_THRESHOLD,
    })
}

/// Log-log fit against a known collapse time.
pub fn fit_scaling_at(
    series: &[(f64, f64)],
    t_star: f64,
) -> Result<ScalingFitResult, ScalingError> {
    validate_series(series)?;
    if t_star <= series[series.len() - 1].0 {
        return Err(ScalingError::InvalidInput(
            "t_star must exceed every sample time".into(),
        ));
    }
    let (exponent, residual) = log_log_fit(series, t_star)
        .ok_or_else(|| ScalingError::InvalidInput("degenerate time samples".into()))?;
    Ok(ScalingFitResult {
        t_star_hat: t_star,
        exponent_hat: exponent,
        residual,
        accepted: residual <= FIT_RESIDUAL_THRESHOLD,
    })
}

/// Full width of `|values|` at half its maximum around the peak, with linear
/// interpolation between nodes. `None` when the half level is not crossed
/// on both sides.
pub fn half_max_width(xs: &[f64], values: &[f64]) -> Option<f64> {
    let mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let (peak, &max) = mags.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    let half = 0.5 * max;
    let cross = |i: usize, j: usize| {
        let (a, b) = (mags[i], mags[j]);
        xs[i] + (half - a) / (b - a) * (xs[j] - xs[i])
    };
    let left = (1..=peak)
        .rev()
        .find(|&i| mags[i - 1] < half)
        .map(|i| cross(i - 1, i))?;
    let right = (peak..xs.len() - 1)
        .find(|&i| mags[i + 1] < half)
        .map(|i| cross(i, i + 1))?;
    Some(right - left)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParabolaFixture {
    pub v: Vec<f64>,
    /// `1/v`, `None` at nodes where `v = 0`.
    pub w: Vec<Option<f64>>,
    pub crossings: Vec<f64>,
}

/// `v = x² + 0.1 − 0.1t`, touching zero at `t = 1` and crossing at
/// `±√(0.1(t − 1))` afterwards.
pub fn parabola_fixture(t: f64, grid: &[f64]) -> ParabolaFixture {
    let v: Vec<f64> = grid.iter().map(|x| x * x + 0.1 - 0.1 * t).collect();
    let w = v.iter().map(|&v| (v != 0.0).then(|| 1.0 / v)).collect();
    let crossings = if t < 1.0 {
        vec![]
    } else if t == 1.0 {
        vec![0.0]
    } else {
        let r = (0.1 * (t - 1.0)).sqrt();
        vec![-r, r]
    };
    ParabolaFixture { v, w, crossings }
}

/// Quadratic model of a field near an extremum that crosses zero at `t⋆`:
/// `v = f0·(t⋆ − t)^{2b} + (f2/2)(x − x0)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParabolaExpansion {
    pub a_exp: f64,
    pub b_exp: f64,
    pub f0: f64,
    pub f2: f64,
    pub x0: f64,
}

pub fn local_parabola_expansion(
    a_exp: f64,
    b_exp: f64,
    f0: f64,
    f2: f64,
    x0: f64,
) -> ParabolaExpansion {
    ParabolaExpansion {
        a_exp,
        b_exp,
        f0,
        f2,
        x0,
    }
}

impl ParabolaExpansion {
    /// Past `t⋆` the time factor is continued as an odd function so that the
    /// tip passes through zero.
    pub fn eval(&self, x: f64, t: f64, t_star: f64) -> f64 {
        let dx = x - self.x0;
        self.f0 * signed_pow(t_star - t, 2.0 * self.b_exp) + 0.5 * self.f2 * dx * dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn predicted_exponents() {
        let q = predict_exponents(ScalingSignature { a: 2.0, s: 2.0 }).unwrap();
        assert_eq!((q.amplitude_exponent, q.width_exponent), (-1.0, 0.5));
        let c = predict_exponents(ScalingSignature { a: 2.0, s: 3.0 }).unwrap();
        assert_eq!(c.amplitude_exponent, -0.5);
        assert_eq!(
            predict_exponents(ScalingSignature { a: 2.0, s: 1.0 }),
            Err(ScalingError::Degenerate)
        );
    }

    fn series(f: impl Fn(f64) -> f64, t0: f64, t1: f64, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let t = t0 + (t1 - t0) * i as f64 / (n - 1) as f64;
                (t, f(t))
            })
            .collect()
    }

    #[test]
    fn exact_power_law_is_recovered() {
        let fit = fit_blowup_scaling(&series(|t| 1.0 / (1.0 - t), 0.9, 0.99, 50)).unwrap();
        assert!(fit.accepted);
        assert!((fit.t_star_hat - 1.0).abs() < 1e-3, "{fit:?}");
        assert!((fit.exponent_hat + 1.0).abs() < 0.01);
    }

    #[test]
    fn exponential_growth_is_rejected() {
        let fit = fit_blowup_scaling(&series(f64::exp, 0.0, 3.0, 50)).unwrap();
        assert!(!fit.accepted, "{fit:?}");
    }

    #[test]
    fn non_monotone_tail_is_rejected() {
        let fit = fit_blowup_scaling(&series(|t| 2.0 + (10.0 * t).sin(), 0.0, 1.0, 40)).unwrap();
        assert!(!fit.accepted && fit.residual.is_infinite());
    }

    #[test]
    fn parabola_reference_times() {
        let grid: Vec<f64> = (0..=40).map(|i| -1.0 + 0.05 * i as f64).collect();
        assert_eq!(parabola_fixture(1.0, &grid).crossings, vec![0.0]);
        let late = parabola_fixture(1.4, &grid).crossings;
        assert!((late[0] + 0.2).abs() < 1e-15 && (late[1] - 0.2).abs() < 1e-15);
        let early = parabola_fixture(0.0, &grid);
        assert!(early.crossings.is_empty());
        let min = early.v.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((min - 0.1).abs() < 1e-15);
        assert!(parabola_fixture(1.0, &grid).w[20].is_none());
    }

    #[test]
    fn expansion_reproduces_parabola() {
        let e = local_parabola_expansion(2.0, 0.5, 0.1, 2.0, 0.0);
        let grid = [-0.3, 0.0, 0.25];
        for t in [0.0, 0.5, 1.0, 1.4] {
            let fx = parabola_fixture(t, &grid);
            for (x, v) in grid.iter().zip(&fx.v) {
                assert!((e.eval(*x, t, 1.0) - v).abs() < 1e-15);
            }
        }
        assert_eq!(e.eval(0.0, 1.0, 1.0), 0.0);
    }

    #[test]
    fn near_tip_field_has_unit_amplitude_exponent() {
        let e = local_parabola_expansion(2.0, 0.5, 0.1, 2.0, 0.0);
        let amp = |t: f64| 1.0 / e.eval(0.0, t, 1.0);
        let fit = fit_blowup_scaling(&series(amp, 0.5, 0.99, 60)).unwrap();
        assert!((fit.exponent_hat + 1.0).abs() < 0.05);
    }

    #[test]
    fn half_max_width_of_tent() {
        let xs: Vec<f64> = (0..=20).map(|i| i as f64 * 0.1).collect();
        let vals: Vec<f64> = xs.iter().map(|x| 1.0 - (x - 1.0f64).abs()).collect();
        assert!((half_max_width(&xs, &vals).unwrap() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn fit_recovers_synthetic_laws(gamma in -2.0f64..-0.3, ts in 1.0f64..3.0, c in 0.1f64..10.0) {
            let s = series(|t| c * (ts - t).powf(gamma), 0.0, ts - 0.2 * ts, 80);
            let fit = fit_blowup_scaling(&s).unwrap();
            prop_assert!(fit.residual >= 0.0);
            prop_assert!((fit.exponent_hat - gamma).abs() < 1e-3);
        }

        #[test]
        fn residual_is_non_negative(ts in 1.1f64..2.0) {
            let s = series(|t| 1.0 / (1.0 - t).abs().max(0.1), 0.0, 0.95, 30);
            let fit = fit_scaling_at(&s, ts).unwrap();
            prop_assert!(fit.residual >= 0.0);
        }
    }
}

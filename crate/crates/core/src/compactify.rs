//! Compactification maps that place the point at infinity on a circle or
//! sphere next to the regular points of an orbit.
//!
//! The circle maps are exact identities only on their reference orbits
//! `s(t)·x = 1`; off-orbit inputs give raw coordinates whose distance from the
//! unit circle is reported by `residual`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ode::{signed_pow, Sign};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompactifyError {
    #[error("denominator vanishes at t = {t}")]
    Pole { t: f64 },
    #[error("profile value {0} lies outside [0, 1]")]
    Normalization(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirclePoint {
    pub x: f64,
    pub y: f64,
}

impl CirclePoint {
    pub fn residual(&self) -> f64 {
        (self.x.hypot(self.y) - 1.0).abs()
    }

    pub fn normalized(&self) -> Self {
        let n = self.x.hypot(self.y);
        Self {
            x: self.x / n,
            y: self.y / n,
        }
    }

    pub fn theta(&self) -> f64 {
        self.y.atan2(self.x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpherePoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl SpherePoint {
    pub fn residual(&self) -> f64 {
        (self.x.hypot(self.y).hypot(self.z) - 1.0).abs()
    }

    pub fn normalized(&self) -> Self {
        let n = self.x.hypot(self.y).hypot(self.z);
        Self {
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
        }
    }
}

/// `X = (s − x)/(s + x)`, `Y = 2/(s + x)`, evaluated divided through by `x`
/// when `|x| > 1` so that `x = ±∞` lands on `(−1, ±0)`.
fn circle_from_scale(t: f64, s: f64, x: f64) -> Result<CirclePoint, CompactifyError> {
    if x.abs() > 1.0 {
        let q = s / x;
        let den = q + 1.0;
        if den == 0.0 {
            return Err(CompactifyError::Pole { t });
        }
        Ok(CirclePoint {
            x: (q - 1.0) / den,
            y: (2.0 / x) / den,
        })
    } else {
        let den = s + x;
        if den == 0.0 {
            return Err(CompactifyError::Pole { t });
        }
        Ok(CirclePoint {
            x: (s - x) / den,
            y: 2.0 / den,
        })
    }
}

/// Circle map for `x ~ (t⋆ − t)^{−a}`. For `t > t⋆` the power is extended
/// as an odd function of `t⋆ − t`. Pass `x²` with `a = 1` for the squared
/// form used with cubic blowup.
pub fn circle_power(t: f64, x: f64, t_star: f64, a: f64) -> Result<CirclePoint, CompactifyError> {
    circle_from_scale(t, signed_pow(t_star - t, a), x)
}

/// Circle map for the linear flows `ẋ = ±x` with orbit `x = e^{±(t − t⋆)}`.
pub fn circle_exponential(
    t: f64,
    x: f64,
    t_star: f64,
    sign: Sign,
) -> Result<CirclePoint, CompactifyError> {
    circle_from_scale(t, (sign.value() * (t_star - t)).exp(), x)
}

/// Circle map for `ẋ = 2x + x²`: `t⋆ − t` replaced by `(e^{2(t⋆−t)} − 1)/2`.
pub fn circle_asymptotic(t: f64, x: f64, t_star: f64) -> Result<CirclePoint, CompactifyError> {
    circle_from_scale(t, (2.0 * (t_star - t)).exp_m1() / 2.0, x)
}

/// Inverse stereographic projection of `x + iy`.
pub fn riemann_sphere(x: f64, y: f64) -> SpherePoint {
    let r = x.hypot(y);
    if r.is_infinite() {
        return SpherePoint {
            x: 0.0,
            y: 0.0,
            z: 1.0,
        };
    }
    if r <= 1.0 {
        let m = r * r;
        SpherePoint {
            x: 2.0 * x / (m + 1.0),
            y: 2.0 * y / (m + 1.0),
            z: (m - 1.0) / (m + 1.0),
        }
    } else {
        let inv = 1.0 / r;
        let den = r + inv;
        let w = inv * inv;
        SpherePoint {
            x: 2.0 * (x / r) / den,
            y: 2.0 * (y / r) / den,
            z: (1.0 - w) / (1.0 + w),
        }
    }
}

/// Sphere map for a self-similar field `u = f/(t⋆ − t)^r` with normalized
/// profile value `f ∈ [0, 1]`.
pub fn pde_sphere(
    u: f64,
    t: f64,
    t_star: f64,
    r_exp: f64,
    f: f64,
) -> Result<SpherePoint, CompactifyError> {
    if !(0.0..=1.0).contains(&f) {
        return Err(CompactifyError::Normalization(f));
    }
    let g = (1.0 - f * f).sqrt();
    let s = signed_pow(t_star - t, r_exp);
    let c = circle_from_scale(t, s, u)?;
    // circle_from_scale gives 2/(s+u); the sphere uses 2√f/(s+u).
    Ok(SpherePoint {
        x: g * c.x,
        y: g * c.y * f.sqrt(),
        z: f,
    })
}

/// Unwrap a sequence of angles so that consecutive entries differ by less
/// than π.
pub fn unwrap_angles(theta: &[f64]) -> Vec<f64> {
    use std::f64::consts::{PI, TAU};
    let mut out = Vec::with_capacity(theta.len());
    let mut offset = 0.0;
    let mut prev: Option<f64> = None;
    for &th in theta {
        if let Some(p) = prev {
            let d = th - p;
            if d > PI {
                offset -= TAU;
            } else if d < -PI {
                offset += TAU;
            }
        }
        prev = Some(th);
        out.push(th + offset);
    }
    out
}

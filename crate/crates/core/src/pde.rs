//! One-dimensional reaction-diffusion solver that carries a field through
//! infinity.
//!
//! The bad variable `w = 1/(u − r)` obeys
//! `w_t = w_xx − (2/w)w_x² + w + r w²` and blows up where `u` touches `r`.
//! Around such points the grid switches to the good variable `v = 1/w`, which
//! obeys the linear `v_t = v_xx − v − r`. Regions are re-detected after every
//! step (one computational era). Interface nodes take an explicit Euler step
//! and serve as Dirichlet data for the implicit Euler solve of each region.

use std::f64::consts::PI;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Amplitude of the `cos 2x` mode of the initial data.
pub const MODE_AMPLITUDE: f64 = 0.4;
/// Constant part of the initial data.
pub const MEAN_LEVEL: f64 = 1.5;

const NEWTON_MAX_ITER: usize = 50;
const NEWTON_HALVINGS: usize = 8;
const NEWTON_TOL: f64 = 1e-10;
const MAX_SPLIT_DEPTH: usize = 12;
pub const DEFAULT_SUBSTEP_STIFFNESS: f64 = 0.4;
const SINGULAR_W: f64 = 1e-12;
const SINGULAR_MODULUS_SQ: f64 = 1e-24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdeError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("singular denominator at node {node} (value {value})")]
    SingularDenominator { node: usize, value: f64 },
    #[error("Newton iteration failed at t = {t} on nodes {start}..={end} (residual {residual:e})")]
    Newton {
        t: f64,
        start: usize,
        end: usize,
        residual: f64,
    },
    #[error("incomplete blowup suspected: buffer of {width} nodes exceeds {limit}")]
    IncompleteBlowup { width: usize, limit: usize },
    #[error("no touch: level r = {0} is never reached")]
    NoTouch(f64),
    #[error("pole of the reconstruction at x = {x}, t = {t}")]
    Pole { x: f64, t: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeConfig {
    pub n_nodes: usize,
    pub dt: f64,
    pub w_big: f64,
    pub r: f64,
    pub guard_band: usize,
    pub hysteresis: f64,
    /// Upper bound on `dt·|∂F/∂w|` for one implicit substep in a bad region.
    pub substep_stiffness: f64,
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self {
            n_nodes: 257,
            dt: 1e-4,
            w_big: 1e4,
            r: 1.0,
            guard_band: 4,
            hysteresis: 0.1,
            substep_stiffness: DEFAULT_SUBSTEP_STIFFNESS,
        }
    }
}

impl PdeConfig {
    pub fn validate(&self) -> Result<(), PdeError> {
        let bad = |m: String| Err(PdeError::Config(m));
        if self.n_nodes < 33 {
            return bad(format!("n_nodes must be at least 33, got {}", self.n_nodes));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.w_big > 1.0 && self.w_big.is_finite()) {
            return bad(format!("w_big must exceed 1, got {}", self.w_big));
        }
        if !self.r.is_finite() {
            return bad("r must be finite".into());
        }
        if self.guard_band == 0 {
            return bad("guard_band must be at least 1".into());
        }
        if !(self.substep_stiffness > 0.0 && self.substep_stiffness.is_finite()) {
            return bad("substep_stiffness must be positive".into());
        }
        if !(0.0..1.0).contains(&self.hysteresis) {
            return bad(format!(
                "hysteresis must lie in [0, 1), got {}",
                self.hysteresis
            ));
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid1D {
        Grid1D::new(self.n_nodes)
    }

    /// Spacing (in nodes) of the explicit interface stencil, the smallest
    /// `K` with `dt/(K h)² ≤ 1/2`.
    pub fn interface_stencil(&self) -> usize {
        let h = self.grid().h;
        ((2.0 * self.dt).sqrt() / h).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub n_nodes: usize,
    pub h: f64,
}

impl Grid1D {
    pub fn new(n_nodes: usize) -> Self {
        Self {
            n_nodes,
            h: PI / (n_nodes - 1) as f64,
        }
    }

    pub fn x(&self, i: usize) -> f64 {
        if i == self.n_nodes - 1 {
            PI
        } else {
            i as f64 * self.h
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|i| self.x(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionChart {
    BadW,
    GoodV,
}

impl RegionChart {
    pub fn name(self) -> &'static str {
        match self {
            RegionChart::BadW => "bad_w",
            RegionChart::GoodV => "good_v",
        }
    }
}

/// Inclusive node interval in one chart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub start: usize,
    pub end: usize,
    pub chart: RegionChart,
}

impl Region {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub regions: Vec<Region>,
    pub era_index: usize,
}

impl Partition {
    pub fn single(n: usize, chart: RegionChart) -> Self {
        Self {
            regions: vec![Region {
                start: 0,
                end: n - 1,
                chart,
            }],
            era_index: 0,
        }
    }

    pub fn node_charts(&self) -> Vec<RegionChart> {
        let mut out = Vec::new();
        for r in &self.regions {
            out.extend(std::iter::repeat_n(r.chart, r.len()));
        }
        out
    }

    pub fn topology(&self) -> Vec<RegionChart> {
        self.regions.iter().map(|r| r.chart).collect()
    }

    /// Contiguous, non-overlapping cover of `0..n` with alternating charts.
    pub fn check(&self, n: usize) -> Result<(), String> {
        let first = self.regions.first().ok_or("empty partition")?;
        if first.start != 0 {
            return Err("partition does not start at node 0".into());
        }
        for w in self.regions.windows(2) {
            if w[1].start != w[0].end + 1 {
                return Err(format!("gap or overlap at node {}", w[0].end));
            }
            if w[0].chart == w[1].chart {
                return Err(format!("unmerged regions at node {}", w[0].end));
            }
        }
        if self.regions.iter().any(|r| r.end < r.start) {
            return Err("empty region".into());
        }
        if self.regions.last().map(|r| r.end) != Some(n - 1) {
            return Err("partition does not reach the last node".into());
        }
        Ok(())
    }
}

/// Field values stored per node in the chart of the node's region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub t: f64,
    pub values: Vec<f64>,
    pub partition: Partition,
}

impl Field {
    /// Bad-chart field `w = 1/(u(x, 0) − r)` on a single region.
    pub fn initial(cfg: &PdeConfig) -> Result<Self, PdeError> {
        cfg.validate()?;
        let grid = cfg.grid();
        let values = grid
            .nodes()
            .iter()
            .map(|&x| 1.0 / (analytic_u(x, 0.0) - cfg.r))
            .collect();
        let field = Self {
            t: 0.0,
            values,
            partition: Partition::single(cfg.n_nodes, RegionChart::BadW),
        };
        repartition(&field, cfg)
    }

    /// `v` at every node.
    pub fn v(&self) -> Vec<f64> {
        self.partition
            .node_charts()
            .iter()
            .zip(&self.values)
            .map(|(c, &val)| match c {
                RegionChart::BadW => 1.0 / val,
                RegionChart::GoodV => val,
            })
            .collect()
    }

    /// `w` at bad-region nodes, `None` elsewhere.
    pub fn w_on_bad(&self) -> Vec<Option<f64>> {
        self.partition
            .node_charts()
            .iter()
            .zip(&self.values)
            .map(|(c, &val)| (*c == RegionChart::BadW).then_some(val))
            .collect()
    }

    pub fn max_abs_w(&self) -> f64 {
        self.w_on_bad()
            .iter()
            .flatten()
            .fold(0.0, |m, w| m.max(w.abs()))
    }

    /// Largest magnitude among the stored values in their own charts.
    pub fn max_abs_value(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `u = 0.4 e^{−5t} cos 2x + 1.5 e^{−t}`, solving `u_t = u_xx − u`.
pub fn analytic_u(x: f64, t: f64) -> f64 {
    MODE_AMPLITUDE * (-5.0 * t).exp() * (2.0 * x).cos() + MEAN_LEVEL * (-t).exp()
}

pub fn analytic_w(x: f64, t: f64, r: f64) -> f64 {
    1.0 / (analytic_u(x, t) - r)
}

pub fn analytic_v(x: f64, t: f64, r: f64) -> f64 {
    analytic_u(x, t) - r
}

/// Time at which `min_x u` first reaches `r`.
pub fn t_touch(r: f64) -> Result<f64, PdeError> {
    let min_u = |t: f64| MEAN_LEVEL * (-t).exp() - MODE_AMPLITUDE * (-5.0 * t).exp();
    // min_u increases until e^{4t} = 4/3 and decreases afterwards.
    let t_peak = (4.0f64 / 3.0).ln() / 4.0;
    if !(r > 0.0 && r < min_u(t_peak)) {
        return Err(PdeError::NoTouch(r));
    }
    let (mut lo, mut hi) = (t_peak, t_peak + 1.0);
    while min_u(hi) > r {
        hi += 1.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if min_u(mid) > r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Zeros of `u(·, t) − r` in `[0, π]`, in increasing order.
pub fn analytic_crossings(t: f64, r: f64) -> Vec<f64> {
    let kappa = (r - MEAN_LEVEL * (-t).exp()) / (MODE_AMPLITUDE * (-5.0 * t).exp());
    if !(-1.0..=1.0).contains(&kappa) {
        return vec![];
    }
    let x1 = 0.5 * kappa.acos();
    let x2 = PI - x1;
    if x1 == x2 {
        vec![x1]
    } else {
        vec![x1, x2]
    }
}

/// Exact complexified solution `w = 1/(c + i d)` with `c = u − r` and
/// `d = −ε e^{−t}`, i.e. initial data `v(x, 0) = u(x, 0) − r − iε`.
pub fn analytic_complex_reconstruction(
    x: f64,
    t: f64,
    epsilon: f64,
    r: f64,
) -> Result<(f64, f64), PdeError> {
    let c = analytic_u(x, t) - r;
    let d = -epsilon * (-t).exp();
    let m = c * c + d * d;
    if m == 0.0 {
        return Err(PdeError::Pole { x, t });
    }
    Ok((c / m, -d / m))
}

// ---------------------------------------------------------------------------
// Scalar arithmetic shared by the real and complexified bad equation.

pub(crate) trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + From<f64>
{
    fn modulus(self) -> f64;
}

impl Scalar for f64 {
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl Scalar for Complex64 {
    fn modulus(self) -> f64 {
        self.norm()
    }
}

fn is_singular<S: Scalar>(c: S) -> bool {
    let m = c.modulus();
    !(m >= SINGULAR_W && m.is_finite())
}

#[inline]
fn bad_point<S: Scalar>(l: S, c: S, rt: S, h: f64, r: f64) -> S {
    let d = (rt - l) / (2.0 * h);
    (rt - c * 2.0 + l) / (h * h) - d * d * 2.0 / c + c + c * c * r
}

/// Partial derivatives of [`bad_point`] with respect to `(l, c, rt)`.
#[inline]
fn bad_partials<S: Scalar>(l: S, c: S, rt: S, h: f64, r: f64) -> (S, S, S) {
    let d = (rt - l) / (2.0 * h);
    let inv_h2 = S::from(1.0 / (h * h));
    let q = d * 2.0 / (c * h);
    let dl = inv_h2 + q;
    let dr = inv_h2 - q;
    let dc = S::from(1.0 - 2.0 / (h * h)) + d * d * 2.0 / (c * c) + c * (2.0 * r);
    (dl, dc, dr)
}

#[inline]
fn good_point(l: f64, c: f64, rt: f64, h: f64, r: f64) -> f64 {
    (rt - 2.0 * c + l) / (h * h) - c - r
}

/// Boundary treatment of one end of a node range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Mirrored ghost node.
    Neumann,
    /// Value supplied from outside; the end node's derivative is not
    /// computed.
    Dirichlet,
}

fn stencil_rhs<F>(u: &[f64], left: Boundary, right: Boundary, mut point: F) -> Vec<f64>
where
    F: FnMut(usize, f64, f64, f64) -> f64,
{
    let n = u.len();
    (0..n)
        .map(|i| {
            let at_left = i == 0;
            let at_right = i == n - 1;
            if (at_left && left == Boundary::Dirichlet)
                || (at_right && right == Boundary::Dirichlet)
            {
                return 0.0;
            }
            let l = if at_left { u[1] } else { u[i - 1] };
            let rt = if at_right { u[n - 2] } else { u[i + 1] };
            point(i, l, u[i], rt)
        })
        .collect()
}

/// Semi-discrete right-hand side of the bad equation on a node range.
pub fn bad_rhs(
    w: &[f64],
    h: f64,
    r: f64,
    left: Boundary,
    right: Boundary,
) -> Result<Vec<f64>, PdeError> {
    if w.len() < 2 {
        return Err(PdeError::Config("a node range needs two nodes".into()));
    }
    if let Some(node) = w.iter().position(|v| is_singular(*v)) {
        return Err(PdeError::SingularDenominator {
            node,
            value: w[node],
        });
    }
    Ok(stencil_rhs(w, left, right, |_, l, c, rt| {
        bad_point(l, c, rt, h, r)
    }))
}

/// Semi-discrete right-hand side of the good equation on a node range.
pub fn good_rhs(v: &[f64], h: f64, r: f64, left: Boundary, right: Boundary) -> Vec<f64> {
    if v.len() < 2 {
        return vec![0.0; v.len()];
    }
    stencil_rhs(v, left, right, |_, l, c, rt| good_point(l, c, rt, h, r))
}

// ---------------------------------------------------------------------------
// Implicit solves.

#[derive(Debug, Clone, Copy)]
enum Edge<S> {
    Neumann,
    /// Values at the start and end of the step.
    Dirichlet(S, S),
}

impl<S: Scalar> Edge<S> {
    fn at(&self, theta: f64) -> Option<S> {
        match *self {
            Edge::Neumann => None,
            Edge::Dirichlet(a, b) => Some(a + (b - a) * theta),
        }
    }

    fn split(&self, theta: f64) -> Self {
        match *self {
            Edge::Neumann => Edge::Neumann,
            Edge::Dirichlet(a, b) => {
                let m = a + (b - a) * theta;
                Edge::Dirichlet(m, m)
            }
        }
    }
}

fn thomas<S: Scalar>(sub: &[S], diag: &[S], sup: &[S], rhs: &[S]) -> Option<Vec<S>> {
    let n = diag.len();
    let mut c = vec![S::from(0.0); n];
    let mut d = vec![S::from(0.0); n];
    let mut beta = diag[0];
    if beta.modulus() == 0.0 {
        return None;
    }
    c[0] = sup[0] / beta;
    d[0] = rhs[0] / beta;
    for i in 1..n {
        beta = diag[i] - sub[i] * c[i - 1];
        if beta.modulus() == 0.0 || !beta.modulus().is_finite() {
            return None;
        }
        c[i] = sup[i] / beta;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        d[i] = d[i] - c[i] * d[i + 1];
    }
    Some(d)
}

/// `u` padded with its left and right neighbours.
fn extend<S: Scalar>(u: &[S], left: Option<S>, right: Option<S>) -> Vec<S> {
    let m = u.len();
    let mut ext = Vec::with_capacity(m + 2);
    ext.push(S::from(0.0));
    ext.extend_from_slice(u);
    ext.push(S::from(0.0));
    if let Some(r) = right {
        ext[m + 1] = r;
    }
    ext[0] = left.unwrap_or(ext[2]);
    if right.is_none() {
        ext[m + 1] = ext[m - 1];
    }
    ext
}

struct BadSystem<'a, S> {
    old: &'a [S],
    left: Option<S>,
    right: Option<S>,
    dt: f64,
    h: f64,
    r: f64,
}

impl<S: Scalar> BadSystem<'_, S> {
    fn residual(&self, u: &[S]) -> Option<Vec<S>> {
        if u.iter().any(|v| is_singular(*v)) {
            return None;
        }
        let ext = extend(u, self.left, self.right);
        let g: Vec<S> = (0..u.len())
            .map(|k| {
                u[k] - self.old[k]
                    - bad_point(ext[k], ext[k + 1], ext[k + 2], self.h, self.r) * self.dt
            })
            .collect();
        g.iter().all(|v| v.modulus().is_finite()).then_some(g)
    }

    fn jacobian(&self, u: &[S]) -> (Vec<S>, Vec<S>, Vec<S>) {
        let m = u.len();
        let ext = extend(u, self.left, self.right);
        let mut sub = vec![S::from(0.0); m];
        let mut diag = vec![S::from(0.0); m];
        let mut sup = vec![S::from(0.0); m];
        for k in 0..m {
            let (dl, dc, dr) = bad_partials(ext[k], ext[k + 1], ext[k + 2], self.h, self.r);
            diag[k] = S::from(1.0) - dc * self.dt;
            if k > 0 {
                sub[k] = -(dl * self.dt);
            } else if self.left.is_none() && m > 1 {
                sup[k] = sup[k] - dl * self.dt;
            }
            if k + 1 < m {
                sup[k] = sup[k] - dr * self.dt;
            } else if self.right.is_none() && m > 1 {
                sub[k] = sub[k] - dr * self.dt;
            }
        }
        (sub, diag, sup)
    }

    fn converged(g: &[S], u: &[S]) -> bool {
        g.iter()
            .zip(u)
            .all(|(g, u)| g.modulus() <= NEWTON_TOL * u.modulus().max(1.0))
    }

    /// Damped Newton from the old values; `Err` carries the last residual.
    fn solve(&self) -> Result<Vec<S>, f64> {
        let mut u = self.old.to_vec();
        let norm = |g: &[S]| g.iter().fold(0.0f64, |m, v| m.max(v.modulus()));
        let mut g = self.residual(&u).ok_or(f64::INFINITY)?;
        for _ in 0..NEWTON_MAX_ITER {
            if Self::converged(&g, &u) {
                return Ok(u);
            }
            let (sub, diag, sup) = self.jacobian(&u);
            let rhs: Vec<S> = g.iter().map(|v| -*v).collect();
            let delta = thomas(&sub, &diag, &sup, &rhs).ok_or(norm(&g))?;
            let g0 = norm(&g);
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..=NEWTON_HALVINGS {
                let trial: Vec<S> = u
                    .iter()
                    .zip(&delta)
                    .map(|(a, d)| *a + *d * lambda)
                    .collect();
                if let Some(gt) = self.residual(&trial) {
                    if norm(&gt) < g0 || Self::converged(&gt, &trial) {
                        u = trial;
                        g = gt;
                        accepted = true;
                        break;
                    }
                }
                lambda *= 0.5;
            }
            if !accepted {
                return Err(g0);
            }
        }
        if Self::converged(&g, &u) {
            Ok(u)
        } else {
            Err(norm(&g))
        }
    }
}

struct BadRegionSolve<S> {
    left: Edge<S>,
    right: Edge<S>,
    h: f64,
    r: f64,
    stiffness: f64,
}

impl<S: Scalar> BadRegionSolve<S> {
    /// Advance by `dt`, halving the substep recursively when Newton fails.
    fn advance(
        &self,
        u: &[S],
        left: Edge<S>,
        right: Edge<S>,
        dt: f64,
        depth: usize,
    ) -> Result<Vec<S>, f64> {
        let sys = BadSystem {
            old: u,
            left: left.at(1.0),
            right: right.at(1.0),
            dt,
            h: self.h,
            r: self.r,
        };
        match sys.solve() {
            Ok(v) => Ok(v),
            Err(res) if depth >= MAX_SPLIT_DEPTH => Err(res),
            Err(_) => {
                let (l1, l2) = halves(left);
                let (r1, r2) = halves(right);
                let mid = self.advance(u, l1, r1, 0.5 * dt, depth + 1)?;
                self.advance(&mid, l2, r2, 0.5 * dt, depth + 1)
            }
        }
    }

    fn run(&self, u: &[S], dt: f64) -> Result<Vec<S>, f64> {
        let stiff = u
            .iter()
            .map(|w| (S::from(1.0) + *w * (2.0 * self.r)).modulus())
            .fold(0.0f64, f64::max);
        let m = ((dt * stiff / self.stiffness).ceil() as usize).max(1);
        let mut cur = u.to_vec();
        for j in 0..m {
            let (a, b) = (j as f64 / m as f64, (j + 1) as f64 / m as f64);
            let left = sub_edge(self.left, a, b);
            let right = sub_edge(self.right, a, b);
            cur = self.advance(&cur, left, right, dt / m as f64, 0)?;
        }
        Ok(cur)
    }
}

fn sub_edge<S: Scalar>(e: Edge<S>, a: f64, b: f64) -> Edge<S> {
    match e {
        Edge::Neumann => Edge::Neumann,
        Edge::Dirichlet(..) => Edge::Dirichlet(e.at(a).unwrap(), e.at(b).unwrap()),
    }
}

fn halves<S: Scalar>(e: Edge<S>) -> (Edge<S>, Edge<S>) {
    match e {
        Edge::Neumann => (Edge::Neumann, Edge::Neumann),
        Edge::Dirichlet(a, b) => {
            let m = e.split(0.5).at(0.0).unwrap();
            (Edge::Dirichlet(a, m), Edge::Dirichlet(m, b))
        }
    }
}

/// Backward Euler for the good equation on unknowns `old` with the given
/// edges (Dirichlet values at the new time).
fn solve_good(
    old: &[f64],
    left: Option<f64>,
    right: Option<f64>,
    dt: f64,
    h: f64,
    r: f64,
) -> Option<Vec<f64>> {
    let m = old.len();
    let s = dt / (h * h);
    let mut sub = vec![-s; m];
    let diag = vec![1.0 + 2.0 * s + dt; m];
    let mut sup = vec![-s; m];
    let mut rhs: Vec<f64> = old.iter().map(|v| v - dt * r).collect();
    match left {
        Some(d) => rhs[0] += s * d,
        None if m > 1 => sup[0] -= s,
        None => {}
    }
    match right {
        Some(d) => rhs[m - 1] += s * d,
        None if m > 1 => sub[m - 1] -= s,
        None => {}
    }
    thomas(&sub, &diag, &sup, &rhs)
}

// ---------------------------------------------------------------------------
// Eras.

fn reflect(i: isize, n: usize) -> usize {
    let last = (n - 1) as isize;
    let j = if i < 0 {
        -i
    } else if i > last {
        2 * last - i
    } else {
        i
    };
    j.clamp(0, last) as usize
}

/// Explicit Euler step of an interface node in its own chart, with the
/// stencil neighbours converted to that chart.
fn interface_update(
    field: &Field,
    charts: &[RegionChart],
    node: usize,
    cfg: &PdeConfig,
) -> Result<f64, PdeError> {
    let n = field.values.len();
    let k = cfg.interface_stencil();
    let hk = cfg.grid().h * k as f64;
    let chart = charts[node];
    let value = |j: usize| -> Result<f64, PdeError> {
        let raw = field.values[j];
        let v = if charts[j] == chart { raw } else { 1.0 / raw };
        if !v.is_finite() {
            return Err(PdeError::SingularDenominator {
                node: j,
                value: raw,
            });
        }
        Ok(v)
    };
    let l = value(reflect(node as isize - k as isize, n))?;
    let rt = value(reflect(node as isize + k as isize, n))?;
    let c = field.values[node];
    let rate = match chart {
        RegionChart::GoodV => good_point(l, c, rt, hk, cfg.r),
        RegionChart::BadW => {
            if is_singular(c) {
                return Err(PdeError::SingularDenominator { node, value: c });
            }
            bad_point(l, c, rt, hk, cfg.r)
        }
    };
    Ok(c + cfg.dt * rate)
}

/// One computational era: explicit interface update, implicit solve of every
/// region, repartition.
pub fn step_era(field: &Field, cfg: &PdeConfig) -> Result<Field, PdeError> {
    let n = field.values.len();
    if n != cfg.n_nodes {
        return Err(PdeError::Config(format!(
            "field has {n} nodes, configuration {}",
            cfg.n_nodes
        )));
    }
    field.partition.check(n).map_err(PdeError::Config)?;
    let h = cfg.grid().h;
    let dt = cfg.dt;
    let charts = field.partition.node_charts();
    let regions = &field.partition.regions;
    let mut next = field.values.clone();
    if regions.len() > 1 && cfg.interface_stencil() >= cfg.guard_band {
        return Err(PdeError::Config(format!(
            "guard_band {} is too narrow for the interface stencil {}",
            cfg.guard_band,
            cfg.interface_stencil()
        )));
    }

    for pair in regions.windows(2) {
        for node in [pair[0].end, pair[1].start] {
            next[node] = interface_update(field, &charts, node, cfg)?;
        }
    }

    for reg in regions {
        let lo = if reg.start == 0 { 0 } else { reg.start + 1 };
        let hi = if reg.end == n - 1 { n - 1 } else { reg.end - 1 };
        if reg.end < reg.start + 2 && reg.start != 0 && reg.end != n - 1 || lo > hi {
            continue;
        }
        let left = (reg.start != 0).then(|| (field.values[reg.start], next[reg.start]));
        let right = (reg.end != n - 1).then(|| (field.values[reg.end], next[reg.end]));
        let old = &field.values[lo..=hi];
        let solved = match reg.chart {
            RegionChart::GoodV => {
                solve_good(old, left.map(|p| p.1), right.map(|p| p.1), dt, h, cfg.r).ok_or(
                    PdeError::Newton {
                        t: field.t,
                        start: lo,
                        end: hi,
                        residual: f64::NAN,
                    },
                )?
            }
            RegionChart::BadW => {
                let edge =
                    |p: Option<(f64, f64)>| p.map_or(Edge::Neumann, |(a, b)| Edge::Dirichlet(a, b));
                let solver = BadRegionSolve {
                    left: edge(left),
                    right: edge(right),
                    h,
                    r: cfg.r,
                    stiffness: cfg.substep_stiffness,
                };
                solver.run(old, dt).map_err(|residual| PdeError::Newton {
                    t: field.t,
                    start: lo,
                    end: hi,
                    residual,
                })?
            }
        };
        next[lo..=hi].copy_from_slice(&solved);
    }

    let stepped = Field {
        t: field.t + dt,
        values: next,
        partition: field.partition.clone(),
    };
    let mut out = repartition(&stepped, cfg)?;
    out.partition.era_index = field.partition.era_index + 1;
    Ok(out)
}

/// Re-detect the singular buffers and convert values whose chart changed.
///
/// The singular set holds nodes with `|v| ≤ 1/W_big` (`1/((1 − hysteresis)
/// W_big)` for nodes already in a buffer) and both nodes of every sign change
/// of `v`. It is dilated by the guard band; bad runs narrower than the guard
/// band are absorbed into the surrounding buffer.
pub fn repartition(field: &Field, cfg: &PdeConfig) -> Result<Field, PdeError> {
    let n = field.values.len();
    let charts = field.partition.node_charts();
    let v = field.v();
    let mut singular = vec![false; n];
    for i in 0..n {
        let threshold = match charts[i] {
            RegionChart::GoodV => 1.0 / ((1.0 - cfg.hysteresis) * cfg.w_big),
            RegionChart::BadW => 1.0 / cfg.w_big,
        };
        if v[i].abs() <= threshold {
            singular[i] = true;
        }
    }
    for i in 0..n - 1 {
        if v[i] * v[i + 1] <= 0.0 {
            singular[i] = true;
            singular[i + 1] = true;
        }
    }
    let g = cfg.guard_band;
    let mut good = vec![false; n];
    for i in (0..n).filter(|&i| singular[i]) {
        for flag in &mut good[i.saturating_sub(g)..=(i + g).min(n - 1)] {
            *flag = true;
        }
    }

    let runs = |good: &[bool]| {
        let mut out: Vec<Region> = Vec::new();
        for (i, &gd) in good.iter().enumerate() {
            let chart = if gd {
                RegionChart::GoodV
            } else {
                RegionChart::BadW
            };
            match out.last_mut() {
                Some(r) if r.chart == chart => r.end = i,
                _ => out.push(Region {
                    start: i,
                    end: i,
                    chart,
                }),
            }
        }
        out
    };
    for reg in runs(&good) {
        if reg.chart == RegionChart::BadW && reg.len() < g && reg.len() < n {
            for flag in &mut good[reg.start..=reg.end] {
                *flag = true;
            }
        }
    }
    let regions = runs(&good);

    let limit = 2 * n / 3;
    if let Some(r) = regions
        .iter()
        .find(|r| r.chart == RegionChart::GoodV && r.len() > limit)
    {
        return Err(PdeError::IncompleteBlowup {
            width: r.len(),
            limit,
        });
    }

    let mut values = field.values.clone();
    for reg in &regions {
        for i in reg.start..=reg.end {
            if charts[i] != reg.chart {
                if values[i] == 0.0 {
                    return Err(PdeError::SingularDenominator {
                        node: i,
                        value: 0.0,
                    });
                }
                values[i] = 1.0 / values[i];
            }
        }
    }
    Ok(Field {
        t: field.t,
        values,
        partition: Partition {
            regions,
            era_index: field.partition.era_index,
        },
    })
}

/// Linearly interpolated zeros of `v` inside good regions.
pub fn crossing_locus(field: &Field) -> Vec<f64> {
    let grid = Grid1D::new(field.values.len());
    let mut out = Vec::new();
    for reg in field
        .partition
        .regions
        .iter()
        .filter(|r| r.chart == RegionChart::GoodV)
    {
        let v = &field.values[reg.start..=reg.end];
        for k in 0..v.len() {
            let i = reg.start + k;
            if v[k] == 0.0 {
                out.push(grid.x(i));
            } else if k + 1 < v.len() && v[k] * v[k + 1] < 0.0 {
                let s = v[k] / (v[k] - v[k + 1]);
                out.push(grid.x(i) + s * grid.h);
            }
        }
    }
    out
}

/// Symmetric distance between numerical loci and the analytic zero set of
/// `u(·, t) − r`.
///
/// Both sets are augmented with the critical points `0, π/2, π` of the
/// `cos 2x` mode, where pairs of loci are born and annihilate; near those
/// points the zero set moves like a square root in time and a missing or
/// extra pair is matched to the critical point instead.
pub fn locus_distance(loci: &[f64], t: f64, r: f64) -> f64 {
    let critical = [0.0, 0.5 * PI, PI];
    let exact = analytic_crossings(t, r);
    let nearest = |x: f64, set: &[f64]| {
        set.iter()
            .chain(&critical)
            .map(|y| (x - y).abs())
            .fold(f64::INFINITY, f64::min)
    };
    exact
        .iter()
        .map(|&x| nearest(x, loci))
        .chain(loci.iter().map(|&x| nearest(x, &exact)))
        .fold(0.0, f64::max)
}

/// `(t, max|w|, half-max width)` of the single-region bad field, sampled
/// every era with `max|w| ≥ min_amplitude` until the first buffer appears or
/// `t_max` is reached.
pub fn tip_series(
    cfg: &PdeConfig,
    min_amplitude: f64,
    t_max: f64,
) -> Result<Vec<(f64, f64, f64)>, PdeError> {
    let nodes = cfg.grid().nodes();
    let mut field = Field::initial(cfg)?;
    let mut out = Vec::new();
    while field.partition.regions.len() == 1
        && field.partition.regions[0].chart == RegionChart::BadW
        && field.t < t_max
    {
        let amp = field.max_abs_w();
        if amp >= min_amplitude {
            if let Some(width) = crate::mn_scaling::half_max_width(&nodes, &field.values) {
                out.push((field.t, amp, width));
            }
        }
        field = step_era(&field, cfg)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub start: usize,
    pub end: usize,
    pub x_start: f64,
    pub x_end: f64,
    pub chart: RegionChart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EraRecord {
    pub era_index: usize,
    pub t: f64,
    pub regions: Vec<RegionRecord>,
    pub max_abs_w: f64,
    pub loci: Vec<f64>,
}

impl EraRecord {
    pub fn of(field: &Field) -> Self {
        let grid = Grid1D::new(field.values.len());
        Self {
            era_index: field.partition.era_index,
            t: field.t,
            regions: field
                .partition
                .regions
                .iter()
                .map(|r| RegionRecord {
                    start: r.start,
                    end: r.end,
                    x_start: grid.x(r.start),
                    x_end: grid.x(r.end),
                    chart: r.chart,
                })
                .collect(),
            max_abs_w: field.max_abs_w(),
            loci: crossing_locus(field),
        }
    }

    pub fn topology(&self) -> Vec<RegionChart> {
        self.regions.iter().map(|r| r.chart).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeRun {
    pub config: PdeConfig,
    pub eras: Vec<EraRecord>,
    pub snapshots: Vec<Field>,
    /// Largest stored magnitude over all eras, in the chart of each node.
    pub max_abs_value: f64,
    pub final_field: Field,
}

impl PdeRun {
    /// Distinct region topologies in order of first appearance after each
    /// change.
    pub fn topology_sequence(&self) -> Vec<Vec<RegionChart>> {
        let mut seq: Vec<Vec<RegionChart>> = Vec::new();
        for e in &self.eras {
            let t = e.topology();
            if seq.last() != Some(&t) {
                seq.push(t);
            }
        }
        seq
    }
}

fn step_count(t: f64, dt: f64) -> usize {
    (t / dt).round().max(0.0) as usize
}

/// Integrate from `t = 0` to `t_end`, keeping the era log and snapshots at
/// the steps nearest to `output_times`.
pub fn run_pde(cfg: &PdeConfig, t_end: f64, output_times: &[f64]) -> Result<PdeRun, PdeError> {
    let mut field = Field::initial(cfg)?;
    let steps = step_count(t_end, cfg.dt);
    let wanted: Vec<usize> = output_times
        .iter()
        .map(|&t| step_count(t, cfg.dt))
        .collect();
    let mut eras = vec![EraRecord::of(&field)];
    let mut snapshots = Vec::new();
    let mut max_abs_value = field.max_abs_value();
    for step in 0..=steps {
        for _ in wanted.iter().filter(|&&s| s == step) {
            snapshots.push(field.clone());
        }
        if step == steps {
            break;
        }
        field = step_era(&field, cfg)?;
        max_abs_value = max_abs_value.max(field.max_abs_value());
        eras.push(EraRecord::of(&field));
    }
    Ok(PdeRun {
        config: cfg.clone(),
        eras,
        snapshots,
        max_abs_value,
        final_field: field,
    })
}

// ---------------------------------------------------------------------------
// Complexified equation.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexField {
    pub t: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl ComplexField {
    /// `w = 1/(u(x, 0) − r − iε)`.
    pub fn initial(n_nodes: usize, epsilon: f64, r: f64) -> Self {
        let grid = Grid1D::new(n_nodes);
        let (a, b) = grid
            .nodes()
            .iter()
            .map(|&x| {
                let w = Complex64::new(analytic_u(x, 0.0) - r, -epsilon).inv();
                (w.re, w.im)
            })
            .unzip();
        Self { t: 0.0, a, b }
    }

    fn values(&self) -> Vec<Complex64> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect()
    }
}

/// One backward Euler step of the complexified bad equation on the whole
/// grid with Neumann ends.
pub fn complex_pde_step(
    field: &ComplexField,
    dt: f64,
    h: f64,
    r: f64,
) -> Result<ComplexField, PdeError> {
    let n = field.a.len();
    if n < 3 || field.b.len() != n {
        return Err(PdeError::Config(
            "complex field needs matching a, b of length ≥ 3".into(),
        ));
    }
    if let Some(node) =
        (0..n).find(|&i| field.a[i] * field.a[i] + field.b[i] * field.b[i] < SINGULAR_MODULUS_SQ)
    {
        return Err(PdeError::SingularDenominator {
            node,
            value: field.a[node].hypot(field.b[node]),
        });
    }
    let solver = BadRegionSolve {
        left: Edge::Neumann,
        right: Edge::Neumann,
        h,
        r,
        stiffness: DEFAULT_SUBSTEP_STIFFNESS,
    };
    let next = solver
        .run(&field.values(), dt)
        .map_err(|residual| PdeError::Newton {
            t: field.t,
            start: 0,
            end: n - 1,
            residual,
        })?;
    Ok(ComplexField {
        t: field.t + dt,
        a: next.iter().map(|z| z.re).collect(),
        b: next.iter().map(|z| z.im).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexRun {
    pub snapshots: Vec<ComplexField>,
    pub final_field: ComplexField,
    pub max_modulus: f64,
}

pub fn run_complex_pde(
    n_nodes: usize,
    dt: f64,
    r: f64,
    epsilon: f64,
    t_end: f64,
    output_times: &[f64],
) -> Result<ComplexRun, PdeError> {
    if n_nodes < 33 || !(dt > 0.0) {
        return Err(PdeError::Config("need n_nodes ≥ 33 and dt > 0".into()));
    }
    let h = Grid1D::new(n_nodes).h;
    let mut field = ComplexField::initial(n_nodes, epsilon, r);
    let steps = step_count(t_end, dt);
    let wanted: Vec<usize> = output_times.iter().map(|&t| step_count(t, dt)).collect();
    let mut snapshots = Vec::new();
    let modulus = |f: &ComplexField| {
        f.a.iter()
            .zip(&f.b)
            .fold(0.0f64, |m, (a, b)| m.max(a.hypot(*b)))
    };
    let mut max_modulus = modulus(&field);
    for step in 0..=steps {
        for _ in wanted.iter().filter(|&&s| s == step) {
            snapshots.push(field.clone());
        }
        if step == steps {
            break;
        }
        field = complex_pde_step(&field, dt, h, r)?;
        field.t = (step + 1) as f64 * dt;
        max_modulus = max_modulus.max(modulus(&field));
    }
    Ok(ComplexRun {
        snapshots,
        final_field: field,
        max_modulus,
    })
}

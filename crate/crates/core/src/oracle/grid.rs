//! Transition matrices of one-dimensional samplers on a fine grid, and the
//! exact asymptotic variances they imply.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{LgmError, Result};
use crate::oracle::proposal_moments;
use crate::samplers::SamplerKind;
use crate::targets::TargetModel;

/// Default number of grid cells.
pub const GRID_POINTS: usize = 201;
/// Half-width of the grid in posterior standard deviations.
pub const GRID_HALF_WIDTH: f64 = 8.0;
/// Simpson intervals per piece for the auxiliary-variable integral. The
/// doubled rule is what gets used; this coarser one is the convergence probe.
pub const AUX_INTERVALS: usize = 400;
/// Largest accepted change in any `P_ij` when the auxiliary rule is doubled.
pub const AUX_TOLERANCE: f64 = 1e-6;
/// Largest accepted probability mass outside the grid.
pub const TRUNCATION_TOLERANCE: f64 = 1e-8;
/// Smallest spectral gap for which the Poisson equation is solved.
pub const MIN_SPECTRAL_GAP: f64 = 1e-8;

const MAX_EXPANSIONS: usize = 40;
const PRUNE: f64 = 1e-14;

/// Midpoint grid on an interval with normalized cell probabilities.
#[derive(Debug, Clone)]
pub struct Grid1d {
    pub points: Vec<f64>,
    pub width: f64,
    /// Unnormalized log density at each point.
    pub log_density: Vec<f64>,
    pub pi: Vec<f64>,
}

impl Grid1d {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> (f64, f64) {
        let h = 0.5 * self.width;
        (self.points[0] - h, self.points[self.len() - 1] + h)
    }

    pub fn mean(&self) -> f64 {
        self.expect(|x| x)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.expect(|x| (x - m).powi(2))
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.pi)
            .map(|(x, p)| p * f(*x))
            .sum()
    }
}

/// Midpoint grid on a rectangle; `pi[(i, j)]` is the cell at `(x[i], y[j])`.
#[derive(Debug, Clone)]
pub struct Grid2d {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub pi: DMatrix<f64>,
}

fn midpoints(lo: f64, hi: f64, m: usize) -> (Vec<f64>, f64) {
    let h = (hi - lo) / m as f64;
    ((0..m).map(|k| lo + (k as f64 + 0.5) * h).collect(), h)
}

fn checked(v: f64) -> Result<f64> {
    if v.is_nan() || v == f64::INFINITY {
        Err(LgmError::NonFinite)
    } else {
        Ok(v)
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn check_grid_size(m: usize) -> Result<()> {
    if m < 51 {
        return Err(LgmError::InvalidData(format!(
            "grid needs at least 51 points, got {m}"
        )));
    }
    Ok(())
}

/// Fraction of mass outside `[lo, hi]`, estimated on a grid of the same
/// spacing that is three times as wide.
fn outside_fraction(log_density: &impl Fn(f64) -> f64, lo: f64, hi: f64, m: usize) -> Result<f64> {
    let w = hi - lo;
    let (pts, _) = midpoints(lo - w, hi + w, 3 * m);
    let vals = pts
        .iter()
        .map(|&x| checked(log_density(x)))
        .collect::<Result<Vec<_>>>()?;
    let all = log_sum_exp(vals.iter().copied());
    let out = log_sum_exp(vals[..m].iter().chain(&vals[2 * m..]).copied());
    Ok((out - all).exp())
}

/// Normalize `exp(log_density)` over `m` midpoint cells of `bounds`,
/// widening the bounds until the mass outside them is below
/// [`TRUNCATION_TOLERANCE`].
pub fn discretize_target(
    log_density: impl Fn(f64) -> f64,
    bounds: (f64, f64),
    m: usize,
) -> Result<Grid1d> {
    check_grid_size(m)?;
    let (mut lo, mut hi) = bounds;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(LgmError::InvalidData(format!("bad bounds [{lo}, {hi}]")));
    }
    let mut expansions = 0;
    while outside_fraction(&log_density, lo, hi, m)? >= TRUNCATION_TOLERANCE {
        expansions += 1;
        if expansions > MAX_EXPANSIONS {
            return Err(LgmError::InvalidData(
                "density is not integrable on any tried bounds".into(),
            ));
        }
        let w = 0.25 * (hi - lo);
        lo -= w;
        hi += w;
    }
    let (points, width) = midpoints(lo, hi, m);
    let log_density = points
        .iter()
        .map(|&x| checked(log_density(x)))
        .collect::<Result<Vec<_>>>()?;
    let norm = log_sum_exp(log_density.iter().copied());
    if norm == f64::NEG_INFINITY {
        return Err(LgmError::InvalidData("density vanishes on the grid".into()));
    }
    let pi = log_density.iter().map(|l| (l - norm).exp()).collect();
    Ok(Grid1d {
        points,
        width,
        log_density,
        pi,
    })
}

/// Two-dimensional version of [`discretize_target`] on `m × m` cells.
pub fn discretize_target_2d(
    log_density: impl Fn(f64, f64) -> f64,
    bounds: [(f64, f64); 2],
    m: usize,
) -> Result<Grid2d> {
    check_grid_size(m)?;
    let [mut bx, mut by] = bounds;
    for (lo, hi) in [bx, by] {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(LgmError::InvalidData(format!("bad bounds [{lo}, {hi}]")));
        }
    }
    let eval =
        |bx: (f64, f64), by: (f64, f64), k: usize| -> Result<(Vec<f64>, Vec<f64>, DMatrix<f64>)> {
            let (xs, _) = midpoints(bx.0, bx.1, k);
            let (ys, _) = midpoints(by.0, by.1, k);
            let mut vals = DMatrix::zeros(k, k);
            for (i, &x) in xs.iter().enumerate() {
                for (j, &y) in ys.iter().enumerate() {
                    vals[(i, j)] = checked(log_density(x, y))?;
                }
            }
            Ok((xs, ys, vals))
        };
    let mut expansions = 0;
    loop {
        let (wx, wy) = (bx.1 - bx.0, by.1 - by.0);
        let (_, _, big) = eval((bx.0 - wx, bx.1 + wx), (by.0 - wy, by.1 + wy), 3 * m)?;
        let all = log_sum_exp(big.iter().copied());
        let inside = log_sum_exp(big.view((m, m), (m, m)).iter().copied());
        if 1.0 - (inside - all).exp() < TRUNCATION_TOLERANCE {
            break;
        }
        expansions += 1;
        if expansions > MAX_EXPANSIONS {
            return Err(LgmError::InvalidData(
                "density is not integrable on any tried bounds".into(),
            ));
        }
        bx = (bx.0 - 0.25 * wx, bx.1 + 0.25 * wx);
        by = (by.0 - 0.25 * wy, by.1 + 0.25 * wy);
    }
    let (x, y, vals) = eval(bx, by, m)?;
    let norm = log_sum_exp(vals.iter().copied());
    let pi = vals.map(|l| (l - norm).exp());
    Ok(Grid2d { x, y, pi })
}

/// Posterior `exp{f(x)} N(x | 0, γ)` for a one-dimensional latent variable.
#[derive(Debug, Clone)]
pub struct ScalarModel<T> {
    pub gamma: f64,
    pub likelihood: T,
}

impl<T: TargetModel> ScalarModel<T> {
    pub fn new(gamma: f64, likelihood: T) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(LgmError::InvalidHyperparameter {
                name: "gamma",
                value: gamma,
            });
        }
        if likelihood.dim() != 1 {
            return Err(LgmError::DimensionMismatch {
                expected: 1,
                found: likelihood.dim(),
            });
        }
        Ok(ScalarModel { gamma, likelihood })
    }

    fn evaluate(&self, x: f64) -> (f64, f64) {
        let (f, g) = self.likelihood.evaluate(&DVector::from_element(1, x));
        (f, g[0])
    }

    pub fn log_posterior(&self, x: f64) -> f64 {
        self.evaluate(x).0 - 0.5 * x * x / self.gamma
    }

    /// Grid over `±8` posterior standard deviations, located with a
    /// preliminary wide grid.
    pub fn grid(&self, m: usize) -> Result<Grid1d> {
        let s = self.gamma.sqrt();
        let wide = discretize_target(|x| self.log_posterior(x), (-10.0 * s, 10.0 * s), 4001)?;
        let (mean, sd) = (wide.mean(), wide.variance().sqrt());
        discretize_target(
            |x| self.log_posterior(x),
            (mean - GRID_HALF_WIDTH * sd, mean + GRID_HALF_WIDTH * sd),
            m,
        )
    }
}

/// Which transition to discretize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleKernel {
    Sampler {
        kind: SamplerKind,
        delta: f64,
    },
    /// Independent draws from the grid distribution itself.
    Independence,
}

/// Grid chain: `p` is row-stochastic and `accepted[i]` is the probability
/// that a move from cell `i` is accepted.
#[derive(Debug, Clone)]
pub struct DiscretizedChain {
    pub grid: Grid1d,
    pub p: DMatrix<f64>,
    pub accepted: Vec<f64>,
}

impl DiscretizedChain {
    /// Acceptance probability at stationarity.
    pub fn expected_acceptance(&self) -> f64 {
        self.accepted
            .iter()
            .zip(&self.grid.pi)
            .map(|(a, p)| a * p)
            .sum()
    }

    pub fn stationarity_residual(&self) -> f64 {
        stationarity_residual(&self.p, &self.grid.pi)
    }

    pub fn detailed_balance_residual(&self) -> f64 {
        detailed_balance_residual(&self.p, &self.grid.pi)
    }
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI * var).ln() + (x - mean).powi(2) / var)
}

/// Transition matrix of `kernel` on `grid` for `model`.
///
/// MH samplers use the exact proposal density between cell centres. The
/// auxiliary samplers integrate the auxiliary variable numerically, so
/// their acceptance is taken jointly with it exactly as the algorithm
/// does. Elliptical slice sampling has no closed-form kernel.
pub fn build_kernel_matrix<T: TargetModel>(
    kernel: OracleKernel,
    model: &ScalarModel<T>,
    grid: &Grid1d,
) -> Result<DiscretizedChain> {
    let m = grid.len();
    let (kind, delta) = match kernel {
        OracleKernel::Independence => {
            let row = DVector::from_column_slice(&grid.pi);
            let p = DMatrix::from_fn(m, m, |_, j| row[j]);
            return Ok(DiscretizedChain {
                grid: grid.clone(),
                p,
                accepted: vec![1.0; m],
            });
        }
        OracleKernel::Sampler { kind, delta } => (kind, delta),
    };
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(LgmError::InvalidStepSize(delta));
    }
    let evals: Vec<(f64, f64)> = grid.points.iter().map(|&x| model.evaluate(x)).collect();
    let log_p: Vec<f64> = grid
        .points
        .iter()
        .zip(&evals)
        .map(|(x, (f, _))| f - 0.5 * x * x / model.gamma)
        .collect();
    let top = log_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_p: Vec<f64> = log_p.iter().map(|l| l - top).collect();
    let off = match kind {
        SamplerKind::AGradU | SamplerKind::AGradZ => {
            auxiliary_kernel(kind, delta, model.gamma, grid, &evals, &log_p)?
        }
        SamplerKind::Ellipt => {
            return Err(LgmError::InvalidData(
                "elliptical slice sampling has no closed-form kernel".into(),
            ))
        }
        _ => mh_kernel(kind, delta, model.gamma, grid, &evals, &log_p)?,
    };
    assemble(grid, off)
}

/// Off-diagonal moves `P_ij` plus the accepted self-move mass `P_ii`.
type RawKernel = DMatrix<f64>;

fn assemble(grid: &Grid1d, raw: RawKernel) -> Result<DiscretizedChain> {
    let m = grid.len();
    let accepted: Vec<f64> = (0..m).map(|i| raw.row(i).sum()).collect();
    let mut p = raw;
    for i in 0..m {
        let moving: f64 = (0..m).filter(|&j| j != i).map(|j| p[(i, j)]).sum();
        let stay = 1.0 - moving;
        if stay < -1e-9 {
            return Err(LgmError::InvalidData(format!(
                "row {i} overflows by {:.2e}; the grid is too coarse for this step size",
                -stay
            )));
        }
        p[(i, i)] = stay.max(0.0);
    }
    Ok(DiscretizedChain {
        grid: grid.clone(),
        p,
        accepted,
    })
}

fn mh_kernel(
    kind: SamplerKind,
    delta: f64,
    gamma: f64,
    grid: &Grid1d,
    evals: &[(f64, f64)],
    log_p: &[f64],
) -> Result<RawKernel> {
    let c = DMatrix::from_element(1, 1, gamma);
    let moments = grid
        .points
        .iter()
        .zip(evals)
        .map(|(&x, &(_, g))| {
            let (mean, cov) = proposal_moments(
                kind,
                &c,
                delta,
                &DVector::from_element(1, x),
                &DVector::from_element(1, g),
            )?;
            Ok((mean[0], cov[(0, 0)]))
        })
        .collect::<Result<Vec<_>>>()?;
    let m = grid.len();
    let h = grid.width;
    let pts = &grid.points;
    let mut raw = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let q_ij = log_normal(pts[j], moments[i].0, moments[i].1);
            let q_ji = log_normal(pts[i], moments[j].0, moments[j].1);
            let log_move = q_ij.min(log_p[j] - log_p[i] + q_ji);
            raw[(i, j)] = h * log_move.exp();
        }
    }
    Ok(raw)
}

/// `a_ij(u) = p(x_i) q(u|x_i) q(x_j|x_i,u)` as `exp(log_k − (u − c)²/(2s²))`.
#[derive(Debug, Clone, Copy)]
struct GaussianInU {
    log_k: f64,
    center: f64,
}

struct AuxiliaryShape {
    /// Auxiliary variance `δ/2`.
    v: f64,
    /// `y | x, u ~ N(a·u + b(x), var_y)`.
    a: f64,
    var_y: f64,
    /// Mean of `u | x`.
    m_aux: Vec<f64>,
    b: Vec<f64>,
    /// Common width of every `a_ij`.
    s2: f64,
}

impl AuxiliaryShape {
    fn new(kind: SamplerKind, delta: f64, gamma: f64, grid: &Grid1d, evals: &[(f64, f64)]) -> Self {
        let v = 0.5 * delta;
        let lambda1 = gamma * delta / (delta + 2.0 * gamma);
        let a = lambda1 * 2.0 / delta;
        let (m_aux, b) = grid
            .points
            .iter()
            .zip(evals)
            .map(|(&x, &(_, g))| match kind {
                SamplerKind::AGradU => (x, lambda1 * g),
                _ => (x + v * g, 0.0),
            })
            .unzip();
        let precision = 1.0 / v + a * a / lambda1;
        AuxiliaryShape {
            v,
            a,
            var_y: lambda1,
            m_aux,
            b,
            s2: 1.0 / precision,
        }
    }

    fn term(&self, log_p: &[f64], pts: &[f64], i: usize, j: usize) -> GaussianInU {
        let (mi, r) = (self.m_aux[i], pts[j] - self.b[i]);
        let precision = 1.0 / self.s2;
        let center = (mi / self.v + self.a * r / self.var_y) / precision;
        let log_k = log_p[i]
            - 0.5 * (2.0 * PI * self.v).ln()
            - 0.5 * (2.0 * PI * self.var_y).ln()
            - 0.5 * (mi * mi / self.v + r * r / self.var_y - precision * center * center);
        GaussianInU { log_k, center }
    }

    /// Upper bound on `P_ij`: the marginal proposal density times the cell width.
    fn move_bound(&self, pts: &[f64], h: f64, i: usize, j: usize) -> f64 {
        let mean = self.a * self.m_aux[i] + self.b[i];
        h * log_normal(pts[j], mean, self.a * self.a * self.v + self.var_y).exp()
    }
}

/// `∫ min(a_ij(u), a_ji(u)) du` by composite Simpson on each side of the
/// crossing point. Returns the value from `2n` intervals and its change
/// from the `n`-interval rule.
fn pair_integral(t1: GaussianInU, t2: GaussianInU, s2: f64, n: usize) -> (f64, f64) {
    let s = s2.sqrt();
    let lo = t1.center.min(t2.center) - 10.0 * s;
    let hi = t1.center.max(t2.center) + 10.0 * s;
    let eval = |t: GaussianInU, u: f64| (t.log_k - (u - t.center).powi(2) / (2.0 * s2)).exp();
    // log a1 − log a2 is linear in u; it crosses zero at most once
    let slope = (t1.center - t2.center) / s2;
    let offset = t1.log_k - t2.log_k - (t1.center.powi(2) - t2.center.powi(2)) / (2.0 * s2);
    let smaller_at = |u: f64| if offset + slope * u <= 0.0 { t1 } else { t2 };
    let mut pieces = vec![(lo, hi)];
    if slope != 0.0 {
        let kink = -offset / slope;
        if kink > lo && kink < hi {
            pieces = vec![(lo, kink), (kink, hi)];
        }
    }
    let (mut fine, mut coarse) = (0.0, 0.0);
    for (a, b) in pieces {
        let t = smaller_at(0.5 * (a + b));
        let (f, c) = simpson_pair(|u| eval(t, u), a, b, n);
        fine += f;
        coarse += c;
    }
    (fine, (fine - coarse).abs())
}

/// Composite Simpson with `2n` and `n` intervals from shared evaluations.
fn simpson_pair(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> (f64, f64) {
    let k = 2 * n;
    let h = (b - a) / k as f64;
    let vals: Vec<f64> = (0..=k).map(|i| f(a + i as f64 * h)).collect();
    let rule = |step: usize, width: f64| {
        let count = k / step;
        let mut sum = vals[0] + vals[k];
        for i in 1..count {
            sum += vals[i * step] * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        sum * width / 3.0
    };
    (rule(1, h), rule(2, 2.0 * h))
}

fn auxiliary_kernel(
    kind: SamplerKind,
    delta: f64,
    gamma: f64,
    grid: &Grid1d,
    evals: &[(f64, f64)],
    log_p: &[f64],
) -> Result<RawKernel> {
    let shape = AuxiliaryShape::new(kind, delta, gamma, grid, evals);
    let m = grid.len();
    let h = grid.width;
    let pts = &grid.points;
    // the integral is symmetric in (i, j), so only i ≤ j is computed
    let rows: Vec<Vec<(usize, f64, f64)>> = (0..m)
        .into_par_iter()
        .map(|i| {
            (i..m)
                .filter(|&j| {
                    shape.move_bound(pts, h, i, j) >= PRUNE
                        || shape.move_bound(pts, h, j, i) >= PRUNE
                })
                .map(|j| {
                    let (val, err) = pair_integral(
                        shape.term(log_p, pts, i, j),
                        shape.term(log_p, pts, j, i),
                        shape.s2,
                        AUX_INTERVALS,
                    );
                    (j, val, err)
                })
                .collect()
        })
        .collect();
    let mut raw = DMatrix::zeros(m, m);
    let mut worst: f64 = 0.0;
    for (i, row) in rows.into_iter().enumerate() {
        for (j, val, err) in row {
            let (wi, wj) = (h / log_p[i].exp(), h / log_p[j].exp());
            raw[(i, j)] = val * wi;
            raw[(j, i)] = val * wj;
            worst = worst.max(err * wi.max(wj));
        }
    }
    if worst > AUX_TOLERANCE {
        return Err(LgmError::QuadratureNonConvergence(worst));
    }
    Ok(raw)
}

/// `max_j |(πP)_j − π_j|`.
pub fn stationarity_residual(p: &DMatrix<f64>, pi: &[f64]) -> f64 {
    let row = DVector::from_column_slice(pi).transpose() * p;
    row.iter()
        .zip(pi)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// `max_ij |π_i P_ij − π_j P_ji|`.
pub fn detailed_balance_residual(p: &DMatrix<f64>, pi: &[f64]) -> f64 {
    let m = pi.len();
    let mut worst: f64 = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            worst = worst.max((pi[i] * p[(i, j)] - pi[j] * p[(j, i)]).abs());
        }
    }
    worst
}

/// `1 − λ₂` of the symmetrized `D^{1/2} P D^{-1/2}`, `D = diag(π)`.
pub fn spectral_gap(p: &DMatrix<f64>, pi: &[f64]) -> f64 {
    let m = pi.len();
    let r: Vec<f64> = pi.iter().map(|v| v.max(1e-300).sqrt()).collect();
    let s = DMatrix::from_fn(m, m, |i, j| r[i] * p[(i, j)] / r[j]);
    let sym = (&s + s.transpose()) * 0.5;
    let mut eig: Vec<f64> = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    1.0 - eig.get(1).copied().unwrap_or(0.0)
}

/// `v(f, P) = Var_π f + 2 Σ_{t≥1} ⟨f̄, Pᵗ f̄⟩_π`, from the Poisson equation
/// `(I − P + 1πᵀ) g = f̄`.
pub fn asymptotic_variance(p: &DMatrix<f64>, pi: &[f64], f: &[f64]) -> Result<f64> {
    Ok(asymptotic_variances(p, pi, &[f])?[0])
}

/// [`asymptotic_variance`] for several functions with one factorization.
pub fn asymptotic_variances(p: &DMatrix<f64>, pi: &[f64], fs: &[&[f64]]) -> Result<Vec<f64>> {
    let m = pi.len();
    if p.nrows() != m || p.ncols() != m {
        return Err(LgmError::NotSquare {
            rows: p.nrows(),
            cols: p.ncols(),
        });
    }
    if let Some(f) = fs.iter().find(|f| f.len() != m) {
        return Err(LgmError::DimensionMismatch {
            expected: m,
            found: f.len(),
        });
    }
    let gap = spectral_gap(p, pi);
    if gap < MIN_SPECTRAL_GAP {
        log::warn!("spectral gap {gap:.3e} is too small for a reliable variance");
        return Err(LgmError::NotErgodic(gap));
    }
    let system = DMatrix::from_fn(m, m, |i, j| f64::from(u8::from(i == j)) - p[(i, j)] + pi[j]);
    let lu = system.lu();
    fs.iter()
        .map(|f| {
            let mean: f64 = f.iter().zip(pi).map(|(a, b)| a * b).sum();
            let centered = DVector::from_iterator(m, f.iter().map(|v| v - mean));
            let var: f64 = centered.iter().zip(pi).map(|(c, w)| c * c * w).sum();
            let g = lu
                .solve(&centered)
                .ok_or(LgmError::Singular("Poisson equation"))?;
            let inner: f64 = (0..m).map(|i| pi[i] * centered[i] * g[i]).sum();
            Ok((2.0 * inner - var).max(0.0))
        })
        .collect()
}

/// Fixed test functions: identity, square, and the indicator of lying above
/// the cell boundary nearest to one standard deviation over the mean.
///
/// Putting the cut on a boundary keeps the indicator exact at cell level, so
/// it stays the same function when the grid is refined by doubling.
pub fn test_battery(grid: &Grid1d) -> Vec<(&'static str, Vec<f64>)> {
    let (lo, _) = grid.bounds();
    let h = grid.width;
    let cut = lo + ((grid.mean() + grid.variance().sqrt() - lo) / h).round() * h;
    let tail = grid
        .points
        .iter()
        .map(|&x| f64::from(u8::from(x > cut)))
        .collect();
    vec![
        ("x", grid.points.clone()),
        ("x^2", grid.points.iter().map(|x| x * x).collect()),
        ("tail", tail),
    ]
}

/// Asymptotic variances `(v_marginal, v_auxiliary)` for one test function.
pub fn check_peskun<T: TargetModel>(
    marginal: OracleKernel,
    auxiliary: OracleKernel,
    model: &ScalarModel<T>,
    grid: &Grid1d,
    f_values: &[f64],
) -> Result<(f64, f64)> {
    let pm = build_kernel_matrix(marginal, model, grid)?;
    let pa = build_kernel_matrix(auxiliary, model, grid)?;
    Ok((
        asymptotic_variance(&pm.p, &grid.pi, f_values)?,
        asymptotic_variance(&pa.p, &grid.pi, f_values)?,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeskunRow {
    pub function: &'static str,
    pub delta: f64,
    pub mgrad: f64,
    pub agrad_u: f64,
    pub agrad_z: f64,
}

impl PeskunRow {
    /// Largest amount by which mGrad exceeds either auxiliary sampler.
    pub fn violation(&self) -> f64 {
        (self.mgrad - self.agrad_u)
            .max(self.mgrad - self.agrad_z)
            .max(0.0)
    }
}

/// Asymptotic variances of mGrad and both auxiliary samplers at `delta`
/// over the whole [`test_battery`].
pub fn peskun_battery<T: TargetModel>(
    model: &ScalarModel<T>,
    delta: f64,
    m: usize,
) -> Result<Vec<PeskunRow>> {
    let grid = model.grid(m)?;
    let kernel = |kind| build_kernel_matrix(OracleKernel::Sampler { kind, delta }, model, &grid);
    let chains = [
        kernel(SamplerKind::MGrad)?,
        kernel(SamplerKind::AGradU)?,
        kernel(SamplerKind::AGradZ)?,
    ];
    let battery = test_battery(&grid);
    let fs: Vec<&[f64]> = battery.iter().map(|(_, f)| f.as_slice()).collect();
    let v = chains
        .iter()
        .map(|c| asymptotic_variances(&c.p, &grid.pi, &fs))
        .collect::<Result<Vec<_>>>()?;
    Ok(battery
        .iter()
        .enumerate()
        .map(|(k, (function, _))| PeskunRow {
            function,
            delta,
            mgrad: v[0][k],
            agrad_u: v[1][k],
            agrad_z: v[2][k],
        })
        .collect())
}

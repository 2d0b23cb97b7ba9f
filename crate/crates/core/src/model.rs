//! Potentials, the Gibbs measure on a truncated domain and the (C1)-(C3)
//! growth checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{EmzError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    /// `ω² q²/2`, coefficients `[ω²]`
    Harmonic,
    /// `a q⁴/4`, coefficients `[a]` (empty means `a = 1`)
    Quartic,
    /// `h (q² − 1)²`, coefficients `[h]`
    DoubleWell,
    /// `Σ c_k q^k`, coefficients `[c_0, c_1, …]`
    Polynomial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub kind: PotentialKind,
    pub coefficients: Vec<f64>,
    pub dimension: usize,
    #[serde(skip)]
    poly: Vec<f64>,
}

impl Potential {
    pub fn new(kind: PotentialKind, coefficients: Vec<f64>, dimension: usize) -> Result<Self> {
        if dimension != 1 {
            return Err(EmzError::Unsupported(format!(
                "only dimension 1 is implemented, got {dimension}"
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(EmzError::Potential("non-finite coefficient".into()));
        }
        let one = |name: &str, default: Option<f64>| -> Result<f64> {
            match (coefficients.as_slice(), default) {
                ([c], _) => Ok(*c),
                ([], Some(d)) => Ok(d),
                _ => Err(EmzError::Potential(format!(
                    "{name} expects exactly one coefficient, got {}",
                    coefficients.len()
                ))),
            }
        };
        let poly = match kind {
            PotentialKind::Harmonic => {
                let w2 = one("harmonic", Some(1.0))?;
                vec![0.0, 0.0, 0.5 * w2]
            }
            PotentialKind::Quartic => {
                let a = one("quartic", Some(1.0))?;
                vec![0.0, 0.0, 0.0, 0.0, 0.25 * a]
            }
            PotentialKind::DoubleWell => {
                let h = one("double-well", Some(1.0))?;
                vec![h, 0.0, -2.0 * h, 0.0, h]
            }
            PotentialKind::Polynomial => {
                let mut c = coefficients.clone();
                while c.last() == Some(&0.0) {
                    c.pop();
                }
                c
            }
        };
        let deg = poly.len().saturating_sub(1);
        let lead = poly.last().copied().unwrap_or(0.0);
        if deg == 0 || deg % 2 == 1 || lead <= 0.0 {
            return Err(EmzError::Potential(format!(
                "potential must have even degree and positive leading coefficient (degree {deg}, leading {lead})"
            )));
        }
        Ok(Self { kind, coefficients, dimension, poly })
    }

    pub fn harmonic(omega2: f64) -> Self {
        Self::new(PotentialKind::Harmonic, vec![omega2], 1).expect("valid harmonic")
    }

    pub fn quartic() -> Self {
        Self::new(PotentialKind::Quartic, vec![1.0], 1).expect("valid quartic")
    }

    pub fn polynomial(c: Vec<f64>) -> Result<Self> {
        Self::new(PotentialKind::Polynomial, c, 1)
    }

    /// Rebuilds the cached monomial expansion after deserialization.
    pub fn validated(self) -> Result<Self> {
        Self::new(self.kind, self.coefficients, self.dimension)
    }

    /// Ascending monomial coefficients of V.
    pub fn monomials(&self) -> &[f64] {
        &self.poly
    }

    pub fn is_even(&self) -> bool {
        self.poly.iter().skip(1).step_by(2).all(|&c| c == 0.0)
    }

    fn raw(&self, q: f64) -> (f64, f64, f64) {
        let (mut v, mut d, mut dd) = (0.0, 0.0, 0.0);
        for &c in self.poly.iter().rev() {
            dd = dd * q + d * 2.0;
            d = d * q + v;
            v = v * q + c;
        }
        (v, d, dd)
    }

    /// `(V, V′, V″)` at `q`.
    pub fn eval(&self, q: f64) -> Result<(f64, f64, f64)> {
        if !q.is_finite() {
            return Err(EmzError::Evaluation { q });
        }
        let r = self.raw(q);
        if !(r.0.is_finite() && r.1.is_finite() && r.2.is_finite()) {
            return Err(EmzError::Evaluation { q });
        }
        Ok(r)
    }

    pub fn value(&self, q: f64) -> f64 {
        self.raw(q).0
    }

    pub fn grad(&self, q: f64) -> f64 {
        self.raw(q).1
    }

    pub fn hess(&self, q: f64) -> f64 {
        self.raw(q).2
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = nf * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Smallest halfwidth `L` (on a 1e-3 grid) with `β(V(±L) − V_min) ≥ barrier`.
pub fn auto_halfwidth(pot: &Potential, beta: f64, barrier: f64) -> f64 {
    let vmin = approx_min(pot, 50.0);
    let mut l: f64 = 0.5;
    while beta * (pot.value(l).min(pot.value(-l)) - vmin) < barrier {
        l *= 1.25;
    }
    let (mut lo, mut hi) = (l / 1.25, l);
    while hi - lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        if beta * (pot.value(mid).min(pot.value(-mid)) - vmin) >= barrier {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn approx_min(pot: &Potential, r: f64) -> f64 {
    let n = 20001;
    let mut m = f64::INFINITY;
    for i in 0..n {
        let q = -r + 2.0 * r * i as f64 / (n - 1) as f64;
        m = m.min(pot.value(q));
    }
    m
}

#[derive(Debug, Clone, Serialize)]
pub struct GibbsMeasure {
    pub beta: f64,
    pub potential: Potential,
    /// `∫ e^{−βV} dq` over `[−L, L]`
    pub z_q: f64,
    pub halfwidth: f64,
    /// quadrature nodes
    pub nodes: Vec<f64>,
    /// probability weights, `Σ w_i = 1`
    pub weights: Vec<f64>,
    /// relative change of `Z_q` against a rule with twice the nodes
    pub z_check: f64,
    /// `e^{−β(V(±L) − V_min)}`
    pub edge_weight: f64,
}

pub const CONFINEMENT: f64 = 1e-16;

fn z_rule(pot: &Potential, beta: f64, l: f64, n: usize, vshift: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let (x, w) = gauss_legendre(n);
    let nodes: Vec<f64> = x.iter().map(|&t| l * t).collect();
    let raw: Vec<f64> = nodes
        .iter()
        .zip(&w)
        .map(|(&q, &wi)| l * wi * (-beta * (pot.value(q) - vshift)).exp())
        .collect();
    let z: f64 = raw.iter().sum();
    (nodes, raw, z)
}

impl GibbsMeasure {
    pub fn build(pot: &Potential, beta: f64, halfwidth: f64, n_nodes: usize) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(EmzError::Argument(format!("beta must be positive, got {beta}")));
        }
        if !(halfwidth > 0.0 && halfwidth.is_finite()) || n_nodes < 2 {
            return Err(EmzError::Argument(format!(
                "invalid quadrature (halfwidth {halfwidth}, nodes {n_nodes})"
            )));
        }
        let vmin = approx_min(pot, halfwidth).min(pot.value(0.0));
        let edge = (-beta * (pot.value(halfwidth).min(pot.value(-halfwidth)) - vmin)).exp();
        if !(edge < CONFINEMENT) {
            return Err(EmzError::Domain { halfwidth, weight: edge });
        }
        let (nodes, raw, z) = z_rule(pot, beta, halfwidth, n_nodes, vmin);
        let (_, _, z2) = z_rule(pot, beta, halfwidth, 2 * n_nodes, vmin);
        let z_check = ((z - z2) / z2).abs();
        if !(z_check <= 1e-12) {
            return Err(EmzError::IllConditioned { residual: z_check, limit: 1e-12 });
        }
        let weights = raw.iter().map(|r| r / z).collect();
        Ok(Self {
            beta,
            potential: pot.clone(),
            z_q: z * (-beta * vmin).exp(),
            halfwidth,
            nodes,
            weights,
            z_check,
            edge_weight: edge,
        })
    }

    /// `∫ f ρ_q dq`
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&q, &w)| w * f(q)).sum()
    }

    /// Draws `(q, p)` pairs from the equilibrium measure.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(n, &mut rng)
    }

    pub fn sample_with(&self, n: usize, rng: &mut impl Rng) -> Vec<(f64, f64)> {
        if n == 0 {
            return Vec::new();
        }
        let cdf = InverseCdf::new(self);
        let normal = Normal::new(0.0, 1.0 / self.beta.sqrt()).expect("finite sigma");
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let p = normal.sample(rng);
                (cdf.invert(u), p)
            })
            .collect()
    }
}

/// Piecewise-linear inverse CDF of `ρ_q` on a uniform grid over `[−L, L]`.
pub struct InverseCdf {
    grid: Vec<f64>,
    cdf: Vec<f64>,
}

impl InverseCdf {
    const CELLS: usize = 1 << 14;

    pub fn new(g: &GibbsMeasure) -> Self {
        let n = Self::CELLS;
        let l = g.halfwidth;
        let vmin = approx_min(&g.potential, l);
        let grid: Vec<f64> = (0..=n).map(|i| -l + 2.0 * l * i as f64 / n as f64).collect();
        let dens: Vec<f64> = grid
            .iter()
            .map(|&q| (-g.beta * (g.potential.value(q) - vmin)).exp())
            .collect();
        let mut cdf = vec![0.0; n + 1];
        for i in 0..n {
            cdf[i + 1] = cdf[i] + 0.5 * (dens[i] + dens[i + 1]) * (grid[i + 1] - grid[i]);
        }
        let tot = cdf[n];
        cdf.iter_mut().for_each(|c| *c /= tot);
        Self { grid, cdf }
    }

    pub fn invert(&self, u: f64) -> f64 {
        let k = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let s = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.grid[k - 1] + s * (self.grid[k] - self.grid[k - 1])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub c1_pass: bool,
    /// `‖V′‖²` in `L²(ρ_q)`
    pub c1_grad_norm_sq: f64,
    pub c2_pass: bool,
    /// `W = β²|V′|²/2 − βV″` at `±R`
    pub c2_w_edge: [f64; 2],
    pub c2_w_min: f64,
    /// radius beyond which W is nondecreasing in |q| on both sides
    pub c2_monotone_radius: f64,
    pub c2_floor: f64,
    pub c3_pass: bool,
    /// sup of `|V″|/(1+|V′|)` on the grid and where it is attained
    pub c3_sup_ratio: f64,
    pub c3_argmax: f64,
    /// ratio slope at the grid edge, positive means still growing
    pub c3_edge_slope: f64,
    pub grid_halfwidth: f64,
    pub grid_points: usize,
}

impl ConditionReport {
    pub fn all_pass(&self) -> bool {
        self.c1_pass && self.c2_pass && self.c3_pass
    }
}

pub fn check_conditions(pot: &Potential, gibbs: &GibbsMeasure, grid_halfwidth: f64) -> ConditionReport {
    let r = grid_halfwidth.max(gibbs.halfwidth);
    let n = 4001usize;
    let beta = gibbs.beta;
    let grid: Vec<f64> = (0..n).map(|i| -r + 2.0 * r * i as f64 / (n - 1) as f64).collect();

    let c1 = gibbs.expect(|q| pot.grad(q).powi(2));
    let c1_pass = c1.is_finite();

    let w = |q: f64| {
        let (_, d, dd) = pot.raw(q);
        0.5 * beta * beta * d * d - beta * dd
    };
    let wv: Vec<f64> = grid.iter().map(|&q| w(q)).collect();
    let w_min = wv.iter().copied().fold(f64::INFINITY, f64::min);
    // walk inward from each edge while W keeps decreasing toward the center
    let half = n / 2;
    let mut right = n - 1;
    while right > half && wv[right - 1] <= wv[right] {
        right -= 1;
    }
    let mut left = 0;
    while left < half && wv[left + 1] <= wv[left] {
        left += 1;
    }
    let mono = grid[right].abs().max(grid[left].abs());
    let floor = 1.0;
    let edge = [wv[0], wv[n - 1]];
    let c2_pass = mono <= 0.75 * r && edge[0] > floor && edge[1] > floor;

    let ratio = |q: f64| {
        let (_, d, dd) = pot.raw(q);
        dd.abs() / (1.0 + d.abs())
    };
    let rv: Vec<f64> = grid.iter().map(|&q| ratio(q)).collect();
    let (imax, sup) = rv
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let h = grid[1] - grid[0];
    let slope = ((rv[n - 1] - rv[n - 2]) / h).max((rv[0] - rv[1]) / h);
    let in_outer = grid[imax].abs() >= 0.9 * r;
    let c3_pass = sup.is_finite() && !(in_outer && slope > 0.0);

    ConditionReport {
        c1_pass,
        c1_grad_norm_sq: c1,
        c2_pass,
        c2_w_edge: edge,
        c2_w_min: w_min,
        c2_monotone_radius: mono,
        c2_floor: floor,
        c3_pass,
        c3_sup_ratio: sup,
        c3_argmax: grid[imax],
        c3_edge_slope: slope,
        grid_halfwidth: r,
        grid_points: n,
    }
}

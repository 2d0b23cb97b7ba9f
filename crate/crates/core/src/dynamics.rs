//! Trajectory side: Langevin ensembles, correlation estimates and Volterra
//! inversion of the projected GLE.

use std::io::{Read, Write};
use std::path::Path;

use faer::{Mat, MatRef};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::galerkin::{default_halfwidth, default_nodes, GalerkinBasis, Monomial, Observable};
use crate::linalg::{self, identity};
use crate::model::{GibbsMeasure, InverseCdf, Potential};
use crate::series::MatrixSeries;
use crate::{EmzError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    EulerMaruyama,
    Baoab,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Equilibrium,
    /// replica `r` starts from `points[r % len]`
    Fixed(Vec<[f64; 2]>),
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub potential: Potential,
    pub beta: f64,
    pub gamma: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub n_replicas: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub init: Init,
    /// keep every `record_stride`-th state
    pub record_stride: usize,
    /// permits `γ = 0` (Hamiltonian limit); tests only
    pub allow_zero_friction: bool,
}

impl SimConfig {
    pub fn sigma(&self) -> f64 {
        (2.0 * self.gamma / self.beta).sqrt()
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(EmzError::Argument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.beta > 0.0) {
            return Err(EmzError::Argument(format!("beta must be positive, got {}", self.beta)));
        }
        if self.gamma < 0.0 || (self.gamma == 0.0 && !self.allow_zero_friction) {
            return Err(EmzError::Argument(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.n_replicas == 0 || self.record_stride == 0 {
            return Err(EmzError::Argument("need at least one replica and a positive record stride".into()));
        }
        if let Init::Fixed(pts) = &self.init {
            if pts.is_empty() {
                return Err(EmzError::Argument("fixed init needs at least one point".into()));
            }
        }
        Ok(())
    }
}

/// Affine one-step maps `x → step(x, ξ)` for both schemes, `ξ ~ N(0,1)`.
#[derive(Debug, Clone, Copy)]
pub struct Stepper<'a> {
    pot: &'a Potential,
    dt: f64,
    gamma: f64,
    beta: f64,
    scheme: Scheme,
    ou_c: f64,
    ou_s: f64,
}

impl<'a> Stepper<'a> {
    pub fn new(pot: &'a Potential, dt: f64, gamma: f64, beta: f64, scheme: Scheme) -> Self {
        let c = (-gamma * dt).exp();
        Self { pot, dt, gamma, beta, scheme, ou_c: c, ou_s: ((1.0 - c * c) / beta).sqrt() }
    }

    pub fn step(&self, q: f64, p: f64, xi: f64) -> (f64, f64) {
        let h = self.dt;
        match self.scheme {
            Scheme::Baoab => {
                let mut p = p - 0.5 * h * self.pot.grad(q);
                let mut q = q + 0.5 * h * p;
                p = self.ou_c * p + self.ou_s * xi;
                q += 0.5 * h * p;
                p -= 0.5 * h * self.pot.grad(q);
                (q, p)
            }
            Scheme::EulerMaruyama => {
                let sigma = (2.0 * self.gamma / self.beta).sqrt();
                let nq = q + h * p;
                let np = p + h * (-self.pot.grad(q) - self.gamma * p) + sigma * h.sqrt() * xi;
                (nq, np)
            }
        }
    }
}

/// Per-replica recorded states, replica-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStore {
    pub dt_record: f64,
    pub records: usize,
    /// `replicas[r][k] = [q, p]`
    pub replicas: Vec<Vec<[f64; 2]>>,
    /// records dropped from the front of each replica as burn-in
    pub discarded: usize,
}

fn replica_rng(seed: u64, replica: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica as u64);
    rng
}

pub fn integrate(cfg: &SimConfig) -> Result<TrajectoryStore> {
    cfg.validate()?;
    let cdf = match cfg.init {
        Init::Equilibrium => {
            let n_q = 24;
            let l = default_halfwidth(&cfg.potential, cfg.beta, n_q);
            let g = GibbsMeasure::build(&cfg.potential, cfg.beta, l, default_nodes(n_q, n_q))?;
            Some(InverseCdf::new(&g))
        }
        Init::Fixed(_) => None,
    };
    let stepper = Stepper::new(&cfg.potential, cfg.dt, cfg.gamma, cfg.beta, cfg.scheme);
    let stride = cfg.record_stride;
    let n_rec = cfg.n_steps / stride + 1;
    let discard = match cfg.init {
        Init::Equilibrium => 0,
        Init::Fixed(_) => n_rec / 10,
    };
    let p_sd = 1.0 / cfg.beta.sqrt();
    let replicas: Result<Vec<Vec<[f64; 2]>>> = (0..cfg.n_replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(cfg.seed, r);
            let (mut q, mut p) = match (&cfg.init, &cdf) {
                (Init::Fixed(pts), _) => {
                    let x = pts[r % pts.len()];
                    (x[0], x[1])
                }
                (Init::Equilibrium, Some(c)) => {
                    let u: f64 = rand::Rng::random(&mut rng);
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (c.invert(u), p_sd * z)
                }
                _ => unreachable!(),
            };
            let mut out = Vec::with_capacity(n_rec - discard);
            if discard == 0 {
                out.push([q, p]);
            }
            for s in 1..=cfg.n_steps {
                let xi: f64 = StandardNormal.sample(&mut rng);
                (q, p) = stepper.step(q, p, xi);
                if !(q.is_finite() && p.is_finite()) {
                    return Err(EmzError::Integration { replica: r, step: s });
                }
                if s % stride == 0 && s / stride >= discard {
                    out.push([q, p]);
                }
            }
            Ok(out)
        })
        .collect();
    let replicas = replicas?;
    Ok(TrajectoryStore {
        dt_record: cfg.dt * stride as f64,
        records: replicas[0].len(),
        replicas,
        discarded: discard,
    })
}

impl TrajectoryStore {
    /// Header `u64 dims, f64 dt, u64 records, u64 replicas`, then little-endian f64 payload.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&2u64.to_le_bytes())?;
        f.write_all(&self.dt_record.to_le_bytes())?;
        f.write_all(&(self.records as u64).to_le_bytes())?;
        f.write_all(&(self.replicas.len() as u64).to_le_bytes())?;
        for r in &self.replicas {
            for x in r {
                f.write_all(&x[0].to_le_bytes())?;
                f.write_all(&x[1].to_le_bytes())?;
            }
        }
        f.flush()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        let word = |k: usize| -> Result<[u8; 8]> {
            buf.get(8 * k..8 * k + 8)
                .map(|s| s.try_into().expect("8 bytes"))
                .ok_or_else(|| EmzError::Config(format!("truncated trajectory file {}", path.display())))
        };
        let dims = u64::from_le_bytes(word(0)?) as usize;
        if dims != 2 {
            return Err(EmzError::Unsupported(format!("trajectory with {dims} state components")));
        }
        let dt = f64::from_le_bytes(word(1)?);
        let records = u64::from_le_bytes(word(2)?) as usize;
        let n_rep = u64::from_le_bytes(word(3)?) as usize;
        if buf.len() != 32 + 16 * records * n_rep {
            return Err(EmzError::Config(format!("trajectory file {} has inconsistent length", path.display())));
        }
        let mut k = 4;
        let mut replicas = Vec::with_capacity(n_rep);
        for _ in 0..n_rep {
            let mut r = Vec::with_capacity(records);
            for _ in 0..records {
                let q = f64::from_le_bytes(word(k)?);
                let p = f64::from_le_bytes(word(k + 1)?);
                k += 2;
                r.push([q, p]);
            }
            replicas.push(r);
        }
        Ok(Self { dt_record: dt, records, replicas, discarded: 0 })
    }
}

fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 32 {
        return x.iter().sum();
    }
    let (a, b) = x.split_at(x.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

#[derive(Debug, Clone)]
pub struct AcfEstimate {
    /// `C_ik(τ) = E[u_k(0) u_i(τ)]`, replica average
    pub mean: MatrixSeries,
    pub se: MatrixSeries,
    pub per_replica: Vec<MatrixSeries>,
}

pub type TrajObservable<'a> = &'a (dyn Fn(f64, f64) -> f64 + Sync);

/// Time-origin and replica averaged correlations up to `max_lag` records.
pub fn ensemble_acf(store: &TrajectoryStore, obs: &[TrajObservable<'_>], max_lag: usize) -> Result<AcfEstimate> {
    ensemble_cross(store, obs, obs, max_lag)
}

/// `C_ik(τ) = E[b_k(0) a_i(τ)]`.
pub fn ensemble_cross(
    store: &TrajectoryStore,
    a_obs: &[TrajObservable<'_>],
    b_obs: &[TrajObservable<'_>],
    max_lag: usize,
) -> Result<AcfEstimate> {
    let n = store.records;
    if a_obs.len() != b_obs.len() {
        return Err(EmzError::Argument("cross-correlation needs equally many observables".into()));
    }
    if max_lag >= n {
        return Err(EmzError::Argument(format!(
            "max lag {max_lag} needs more than the {n} stored records"
        )));
    }
    let m = a_obs.len();
    let t: Vec<f64> = (0..=max_lag).map(|k| k as f64 * store.dt_record).collect();
    let per_replica: Vec<MatrixSeries> = store
        .replicas
        .par_iter()
        .map(|rep| {
            let eval = |f: &TrajObservable<'_>| rep.iter().map(|x| f(x[0], x[1])).collect::<Vec<f64>>();
            let av: Vec<Vec<f64>> = a_obs.iter().map(eval).collect();
            let bv: Vec<Vec<f64>> = b_obs.iter().map(eval).collect();
            let mut s = MatrixSeries::new(t.clone(), m);
            let mut prod = vec![0.0; n];
            for lag in 0..=max_lag {
                let len = n - lag;
                for i in 0..m {
                    for k in 0..m {
                        for (s0, slot) in prod[..len].iter_mut().enumerate() {
                            *slot = bv[k][s0] * av[i][s0 + lag];
                        }
                        s.set(lag, i, k, pairwise_sum(&prod[..len]) / len as f64);
                    }
                }
            }
            s
        })
        .collect();
    let r = per_replica.len() as f64;
    let mut mean = MatrixSeries::new(t.clone(), m);
    let mut se = MatrixSeries::new(t, m);
    for lag in 0..=max_lag {
        for e in 0..m * m {
            let xs: Vec<f64> = per_replica.iter().map(|s| s.values[lag][e]).collect();
            let mu = pairwise_sum(&xs) / r;
            let var = if r > 1.0 {
                xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (r - 1.0)
            } else {
                f64::NAN
            };
            mean.values[lag][e] = mu;
            se.values[lag][e] = (var / r).sqrt();
        }
    }
    Ok(AcfEstimate { mean, se, per_replica })
}

impl AcfEstimate {
    /// Leave-one-replica-out jackknife of a statistic of the mean series.
    pub fn jackknife<F>(&self, f: F) -> Result<(f64, f64)>
    where
        F: Fn(&MatrixSeries) -> Result<f64> + Sync,
    {
        let r = self.per_replica.len();
        if r < 2 {
            return Err(EmzError::Argument("jackknife needs at least two replicas".into()));
        }
        let full = f(&self.mean)?;
        let loo: Result<Vec<f64>> = (0..r)
            .into_par_iter()
            .map(|skip| {
                let mut s = self.mean.clone();
                for (lag, row) in s.values.iter_mut().enumerate() {
                    for (e, v) in row.iter_mut().enumerate() {
                        *v = (*v * r as f64 - self.per_replica[skip].values[lag][e]) / (r - 1) as f64;
                    }
                }
                f(&s)
            })
            .collect();
        let loo = loo?;
        let mu = loo.iter().sum::<f64>() / r as f64;
        let var = loo.iter().map(|x| (x - mu).powi(2)).sum::<f64>() * (r - 1) as f64 / r as f64;
        Ok((full, var.sqrt()))
    }
}

/// `Σ c q^i p^j` evaluated on trajectory states.
#[derive(Debug, Clone)]
pub struct PhasePolynomial {
    pub terms: Vec<Monomial>,
}

impl PhasePolynomial {
    pub fn new(terms: Vec<Monomial>) -> Self {
        Self { terms }
    }

    pub fn value(&self, q: f64, p: f64) -> f64 {
        self.terms.iter().map(|t| t.coef * q.powi(t.q_pow as i32) * p.powi(t.p_pow as i32)).sum()
    }

    /// `(Ku)(q, p)` with `K = p∂_q − V′∂_p − γp∂_p + (γ/β)∂²_p`.
    pub fn generator(&self, pot: &Potential, gamma: f64, beta: f64, q: f64, p: f64) -> f64 {
        let dv = pot.grad(q);
        let pw = |x: f64, k: i64| if k < 0 { 0.0 } else { x.powi(k as i32) };
        self.terms
            .iter()
            .map(|t| {
                let (i, j) = (t.q_pow as i64, t.p_pow as i64);
                let (fi, fj) = (i as f64, j as f64);
                t.coef
                    * (fi * pw(q, i - 1) * pw(p, j + 1) - fj * dv * pw(q, i) * pw(p, j - 1) - gamma * fj * pw(q, i) * pw(p, j)
                        + gamma / beta * fj * (fj - 1.0) * pw(q, i) * pw(p, j - 2))
            })
            .sum()
    }
}

/// Trajectory-side forms of the configured observables.
pub fn phase_observables(obs: &[Observable], basis: &GalerkinBasis) -> Result<Vec<PhasePolynomial>> {
    obs.iter().map(|o| o.monomials(basis).map(PhasePolynomial::new)).collect()
}

/// `C_ik(τ) = E[u_k(0) u_i(τ)]` and `C′_ik(τ) = E[u_k(0) (Ku_i)(τ)]` from one store.
pub fn ensemble_acf_with_derivative(
    store: &TrajectoryStore,
    obs: &[PhasePolynomial],
    pot: &Potential,
    gamma: f64,
    beta: f64,
    max_lag: usize,
) -> Result<(AcfEstimate, AcfEstimate)> {
    let vals: Vec<Box<dyn Fn(f64, f64) -> f64 + Sync + '_>> =
        obs.iter().map(|o| Box::new(move |q, p| o.value(q, p)) as Box<dyn Fn(f64, f64) -> f64 + Sync>).collect();
    let gens: Vec<Box<dyn Fn(f64, f64) -> f64 + Sync + '_>> = obs
        .iter()
        .map(|o| Box::new(move |q, p| o.generator(pot, gamma, beta, q, p)) as Box<dyn Fn(f64, f64) -> f64 + Sync>)
        .collect();
    let v: Vec<TrajObservable<'_>> = vals.iter().map(|b| b.as_ref() as TrajObservable<'_>).collect();
    let g: Vec<TrajObservable<'_>> = gens.iter().map(|b| b.as_ref() as TrajObservable<'_>).collect();
    Ok((ensemble_acf(store, &v, max_lag)?, ensemble_cross(store, &g, &v, max_lag)?))
}

fn mat_at(s: &MatrixSeries, k: usize) -> Mat<f64> {
    let m = s.dim;
    Mat::from_fn(m, m, |i, j| s.at(k, i, j))
}

fn store_mat(s: &mut MatrixSeries, k: usize, a: MatRef<'_, f64>) {
    for i in 0..s.dim {
        for j in 0..s.dim {
            s.set(k, i, j, a[(i, j)]);
        }
    }
}

#[derive(Debug, Clone)]
pub struct VolterraResult {
    pub kernel: MatrixSeries,
    /// relative L² misfit of the re-integrated correlation against the input
    pub residual: f64,
    pub warning: bool,
    pub c0_cond: f64,
}

pub const VOLTERRA_RESIDUAL_LIMIT: f64 = 1e-3;

/// Solves `C′ = ΩC + ∫₀ᵗ K(s) C(t−s) ds` for `K` on the grid of `acf`.
pub fn volterra_extract(acf: &MatrixSeries, omega: MatRef<'_, f64>) -> Result<VolterraResult> {
    let n = acf.len();
    if n < 4 {
        return Err(EmzError::Argument("Volterra extraction needs at least 4 lags".into()));
    }
    let dt = acf.t[1] - acf.t[0];
    let c: Vec<Mat<f64>> = (0..n).map(|k| mat_at(acf, k)).collect();
    let c0_cond = linalg::cond(c[0].as_ref())?;
    if !(c0_cond < 1e8) {
        return Err(EmzError::Conditioning { what: "C(0)".into(), cond: c0_cond, limit: 1e8 });
    }
    let dc = centered_derivative(&c, dt);
    let d2 = (&c[0] * 2.0 - &c[1] * 5.0 + &c[2] * 4.0 - &c[3]) * (1.0 / (dt * dt));
    solve_forward(acf, &c, &dc, d2, omega, c0_cond)
}

fn centered_derivative(c: &[Mat<f64>], dt: f64) -> Vec<Mat<f64>> {
    let n = c.len();
    (0..n)
        .map(|k| {
            if k == 0 {
                (&c[1] * 4.0 - &c[0] * 3.0 - &c[2]) * (0.5 / dt)
            } else if k == n - 1 {
                (&c[n - 1] * 3.0 - &c[n - 2] * 4.0 + &c[n - 3]) * (0.5 / dt)
            } else {
                (&c[k + 1] - &c[k - 1]) * (0.5 / dt)
            }
        })
        .collect()
}

/// Same inversion, with `C′` supplied (e.g. measured as `E[u_k(0) (Ku_i)(τ)]`)
/// instead of differenced from `C`.
pub fn volterra_extract_with_derivative(acf: &MatrixSeries, dacf: &MatrixSeries, omega: MatRef<'_, f64>) -> Result<VolterraResult> {
    let n = acf.len();
    if n < 4 || dacf.len() != n || dacf.dim != acf.dim {
        return Err(EmzError::Argument("need at least 4 lags and matching C, C′ series".into()));
    }
    let dt = acf.t[1] - acf.t[0];
    let c: Vec<Mat<f64>> = (0..n).map(|k| mat_at(acf, k)).collect();
    let c0_cond = linalg::cond(c[0].as_ref())?;
    if !(c0_cond < 1e8) {
        return Err(EmzError::Conditioning { what: "C(0)".into(), cond: c0_cond, limit: 1e8 });
    }
    let dc: Vec<Mat<f64>> = (0..n).map(|k| mat_at(dacf, k)).collect();
    let d2 = (&dc[1] * 4.0 - &dc[0] * 3.0 - &dc[2]) * (0.5 / dt);
    solve_forward(acf, &c, &dc, d2, omega, c0_cond)
}

fn solve_forward(
    acf: &MatrixSeries,
    c: &[Mat<f64>],
    dc: &[Mat<f64>],
    d2: Mat<f64>,
    omega: MatRef<'_, f64>,
    c0_cond: f64,
) -> Result<VolterraResult> {
    let n = c.len();
    let m = acf.dim;
    let dt = acf.t[1] - acf.t[0];
    let c0_inv = linalg::inverse(c[0].as_ref());
    let mut ks: Vec<Mat<f64>> = Vec::with_capacity(n);
    ks.push((&d2 - omega * &dc[0]) * &c0_inv);
    let half_inv = &c0_inv * (2.0 / dt);
    for k in 1..n {
        let mut rhs = &dc[k] - omega * &c[k];
        let mut conv = &ks[0] * &c[k] * 0.5;
        for j in 1..k {
            conv += &ks[j] * &c[k - j];
        }
        rhs -= conv * dt;
        ks.push(rhs * &half_inv);
    }
    let mut kernel = MatrixSeries::new(acf.t.clone(), m);
    for (k, km) in ks.iter().enumerate() {
        store_mat(&mut kernel, k, km.as_ref());
    }
    let recon = reintegrate(&kernel, omega, c[0].as_ref())?;
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..n {
        for e in 0..m * m {
            num += (recon.values[k][e] - acf.values[k][e]).powi(2);
            den += acf.values[k][e].powi(2);
        }
    }
    let residual = (num / den).sqrt();
    Ok(VolterraResult { kernel, residual, warning: !(residual <= VOLTERRA_RESIDUAL_LIMIT), c0_cond })
}

/// Forward implicit-trapezoid solve of the GLE for `C` given `K` and `C(0)`.
pub fn reintegrate(kernel: &MatrixSeries, omega: MatRef<'_, f64>, c0: MatRef<'_, f64>) -> Result<MatrixSeries> {
    let n = kernel.len();
    let m = kernel.dim;
    let dt = kernel.t[1] - kernel.t[0];
    let ks: Vec<Mat<f64>> = (0..n).map(|k| mat_at(kernel, k)).collect();
    let mut c: Vec<Mat<f64>> = vec![c0.to_owned()];
    // F_k = (Ω + ½ΔK_0) C_k + Δ Σ_{j=1}^{k-1} K_j C_{k-j} + ½Δ K_k C_0
    let a = omega + &ks[0] * (0.5 * dt);
    let lhs = identity(m) - &a * (0.5 * dt);
    let mut f_prev = omega * &c[0];
    for k in 1..n {
        let mut known = &ks[k] * c0 * (0.5 * dt);
        for j in 1..k {
            known += &ks[j] * &c[k - j] * dt;
        }
        let rhs = &c[k - 1] + (&f_prev + &known) * (0.5 * dt);
        let ck = linalg::solve(lhs.as_ref(), rhs.as_ref());
        f_prev = &a * &ck + known;
        c.push(ck);
    }
    let mut out = MatrixSeries::new(kernel.t.clone(), m);
    for (k, ck) in c.iter().enumerate() {
        store_mat(&mut out, k, ck.as_ref());
    }
    Ok(out)
}

/// Stationary `⟨p²⟩` of a scheme on the harmonic oscillator `V = ω²q²/2`,
/// from the exact covariance recursion of its affine step map.
pub fn harmonic_p2_stationary(scheme: Scheme, omega2: f64, gamma: f64, beta: f64, dt: f64) -> f64 {
    let pot = Potential::harmonic(omega2);
    let st = Stepper::new(&pot, dt, gamma, beta, scheme);
    let col = |q: f64, p: f64, xi: f64| st.step(q, p, xi);
    let (a00, a10) = col(1.0, 0.0, 0.0);
    let (a01, a11) = col(0.0, 1.0, 0.0);
    let (b0, b1) = col(0.0, 0.0, 1.0);
    let mut s = [[0.0f64; 2]; 2];
    for _ in 0..2_000_000 {
        let ms = [
            [a00 * s[0][0] + a01 * s[1][0], a00 * s[0][1] + a01 * s[1][1]],
            [a10 * s[0][0] + a11 * s[1][0], a10 * s[0][1] + a11 * s[1][1]],
        ];
        let next = [
            [ms[0][0] * a00 + ms[0][1] * a01 + b0 * b0, ms[0][0] * a10 + ms[0][1] * a11 + b0 * b1],
            [ms[1][0] * a00 + ms[1][1] * a01 + b1 * b0, ms[1][0] * a10 + ms[1][1] * a11 + b1 * b1],
        ];
        let diff = (next[1][1] - s[1][1]).abs() + (next[0][0] - s[0][0]).abs();
        s = next;
        if diff < 1e-17 {
            break;
        }
    }
    s[1][1]
}

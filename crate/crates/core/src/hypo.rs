//! Hypocoercivity constants, modified-entropy certificates for `e^{tK}` and
//! `e^{tQKQ}`, and entropy monitoring along the discretized flow.

use faer::{Mat, MatRef};
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::galerkin::Assembly;
use crate::linalg::{self, hcat, identity, null_space, orth_complement, sym_eigen, sym_part, Propagator};
use crate::series::uniform_grid;
use crate::{EmzError, Result};

/// JSON has no infinities; non-finite values are written as strings.
fn ser_f64<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else {
        s.serialize_str(&x.to_string())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HypoConstants {
    pub lambda_m: f64,
    pub lambda_big_m: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Mori correction for the QKQ estimate, `∞` when no finite constant exists
    #[serde(serialize_with = "ser_f64")]
    pub c4: f64,
    /// `t` attaining the sup in the c4 computation
    #[serde(serialize_with = "ser_f64")]
    pub c4_t: f64,
    /// `sup_{g} ‖A*g‖/‖(I−Π)g‖` over the QKQ subspace
    #[serde(serialize_with = "ser_f64")]
    pub proof_chain_ratio: f64,
    pub proof_chain_holds: bool,
    /// `‖AᵀΠ‖₂`, nonzero means `A*` does not vanish on `Ran Π`
    pub a_adj_pi_norm: f64,
}

fn sub(m: MatRef<'_, f64>, rows: &[usize], cols: &[usize]) -> Mat<f64> {
    Mat::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Orthonormal basis of `Ran(Q) ∩ Ker(K)^⊥`.
pub fn qkq_subspace(asm: &Assembly, tol: f64) -> Result<Mat<f64>> {
    let k = asm.gen.k.as_ref();
    let kk = null_space(k, tol * linalg::norm_2(k))?;
    orth_complement(hcat(&[asm.mori.c.as_ref(), kk.as_ref()]).as_ref(), 1e-8)
}

/// Orthonormal basis of `span{1}^⊥`.
pub fn k_subspace(n: usize) -> Mat<f64> {
    Mat::from_fn(n, n - 1, |i, j| if i == j + 1 { 1.0 } else { 0.0 })
}

pub fn estimate_constants(asm: &Assembly, with_mori: bool) -> Result<HypoConstants> {
    let n = asm.basis.dim();
    let (perp, pi_nc): (Vec<usize>, Vec<usize>) = {
        let perp = (0..n).filter(|&k| asm.basis.split(k).1 > 0).collect();
        let pi_nc = (0..n).filter(|&k| {
            let (a, b) = asm.basis.split(k);
            b == 0 && a > 0
        })
        .collect();
        (perp, pi_nc)
    };
    if perp.is_empty() || pi_nc.is_empty() {
        return Err(EmzError::Config("empty Π-restriction; basis too small".into()));
    }
    let all: Vec<usize> = (0..n).collect();
    let neg_d = Mat::from_fn(perp.len(), perp.len(), |i, j| -asm.gen.d[(perp[i], perp[j])]);
    let lambda_m = sym_eigen(neg_d.as_ref())?.0[0];
    let b = &asm.gen.l * &asm.pi;
    let btb = b.transpose() * &b;
    let lambda_big_m = sym_eigen(sub(btb.as_ref(), &pi_nc, &pi_nc).as_ref())?.0[0];
    let ad = &asm.a * &asm.gen.d;
    let al = &asm.a * &asm.gen.l;
    let c1 = linalg::norm_2(sub(ad.as_ref(), &all, &perp).as_ref());
    let c2 = linalg::norm_2(sub(al.as_ref(), &all, &perp).as_ref());
    let a_adj_pi_norm = linalg::norm_2((asm.a.transpose() * &asm.pi).as_ref());

    let (c4, c4_t, ratio) = if with_mori && asm.mori.c.ncols() > 0 {
        let z = qkq_subspace(asm, 1e-8)?;
        c4_constant(asm, z.as_ref())?
    } else {
        (0.0, f64::NAN, f64::NAN)
    };
    Ok(HypoConstants {
        lambda_m,
        lambda_big_m,
        c1,
        c2,
        c3: c1 + c2,
        c4,
        c4_t,
        proof_chain_holds: ratio <= 1.0 + 1e-10,
        proof_chain_ratio: ratio,
        a_adj_pi_norm,
    })
}

const SIGMA_ZERO: f64 = 1e-12;

/// Smallest `c4` with `−(⟨APKg,g⟩ + ⟨Ag,PKg⟩) ≤ c4 ‖(I−Π)g‖ ‖g‖` for `g ∈ Ran Z`,
/// via `sup_t 2 λ_max(B_t^{-1/2} T B_t^{-1/2})`, `B_t = tΣ + I/t`.
fn c4_constant(asm: &Assembly, z: MatRef<'_, f64>) -> Result<(f64, f64, f64)> {
    let n = asm.basis.dim();
    let pk = &asm.mori.p * &asm.gen.k;
    let t_full = -(sym_part((&asm.a * &pk).as_ref()) + sym_part((asm.a.transpose() * &pk).as_ref()));
    let tz = z.transpose() * &t_full * z;
    let ipi = identity(n) - &asm.pi;
    let sigma_m = z.transpose() * &ipi * z;
    let (sigma, v) = sym_eigen(sigma_m.as_ref())?;
    let that = sym_part((v.transpose() * &tz * &v).as_ref());
    let k = sigma.len();
    let zero: Vec<usize> = (0..k).filter(|&i| sigma[i] <= SIGMA_ZERO).collect();
    let pos: Vec<usize> = (0..k).filter(|&i| sigma[i] > SIGMA_ZERO).collect();

    // proof-chain ratio sup ‖Aᵀg‖² / ‖(I−Π)g‖²
    let atz = asm.a.transpose() * z * &v;
    let ratio = {
        let null_part = sub(atz.as_ref(), &(0..n).collect::<Vec<_>>(), &zero);
        if !zero.is_empty() && linalg::norm_2(null_part.as_ref()) > 1e-10 {
            f64::INFINITY
        } else if pos.is_empty() {
            0.0
        } else {
            let w = Mat::from_fn(n, pos.len(), |i, j| atz[(i, pos[j])] / sigma[pos[j]].sqrt());
            let g = w.transpose() * &w;
            sym_eigen(g.as_ref())?.0.last().copied().unwrap_or(0.0).max(0.0).sqrt()
        }
    };

    let scale = linalg::norm_2(that.as_ref());
    if scale <= 1e-14 {
        return Ok((0.0, f64::NAN, ratio));
    }
    if !zero.is_empty() {
        let t00 = sub(that.as_ref(), &zero, &zero);
        if sym_eigen(t00.as_ref())?.0.last().copied().unwrap_or(0.0) > 1e-10 * scale {
            return Ok((f64::INFINITY, f64::INFINITY, ratio));
        }
    }
    let eval = |lt: f64| -> f64 {
        let t = 10f64.powf(lt);
        let d: Vec<f64> = sigma.iter().map(|&s| (t * s.max(0.0) + 1.0 / t).powf(-0.5)).collect();
        let m = Mat::from_fn(k, k, |i, j| d[i] * that[(i, j)] * d[j]);
        2.0 * sym_eigen(m.as_ref()).map(|e| e.0.last().copied().unwrap_or(0.0)).unwrap_or(f64::NAN)
    };
    let grid: Vec<f64> = (0..=48).map(|i| -6.0 + 0.25 * i as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&g| eval(g)).collect();
    let (ib, _) = vals
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let (mut lo, mut hi) = (grid[ib.saturating_sub(1)], grid[(ib + 1).min(grid.len() - 1)]);
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    let (mut x1, mut x2) = (hi - gr * (hi - lo), lo + gr * (hi - lo));
    let (mut f1, mut f2) = (eval(x1), eval(x2));
    for _ in 0..30 {
        if f1 > f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - gr * (hi - lo);
            f1 = eval(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + gr * (hi - lo);
            f2 = eval(x2);
        }
    }
    let (best_lt, best) = [(grid[ib], vals[ib]), (x1, f1), (x2, f2)]
        .into_iter()
        .fold((0.0, f64::NEG_INFINITY), |acc, (x, v)| if v > acc.1 { (x, v) } else { acc });
    Ok((best.max(0.0), 10f64.powf(best_lt), ratio))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Target {
    K,
    QKQ,
}

#[derive(Debug, Clone, Serialize)]
pub struct HypoCertificate {
    pub target: Target,
    pub constants: HypoConstants,
    /// `c3` for K, `c3 + c4` for QKQ
    #[serde(serialize_with = "ser_f64")]
    pub c: f64,
    pub success: bool,
    pub reason: Option<String>,
    #[serde(serialize_with = "ser_f64")]
    pub delta: f64,
    #[serde(serialize_with = "ser_f64")]
    pub epsilon: f64,
    #[serde(serialize_with = "ser_f64")]
    pub kappa: f64,
    /// `κ/(1+ε)`
    #[serde(serialize_with = "ser_f64")]
    pub lambda_cert: f64,
    /// `√((1+ε)/(1−ε))`
    #[serde(serialize_with = "ser_f64")]
    pub c_cert: f64,
    pub grid: [usize; 2],
    /// best point on the grid before refinement
    pub grid_lambda: f64,
    #[serde(serialize_with = "ser_f64")]
    pub comparison_gap: f64,
    pub lower_bound_ok: bool,
    pub lower_bound_tol: f64,
}

pub const EPS_CAP: f64 = 1.0 - 1e-6;
pub const LOWER_BOUND_TOL: f64 = 1e-8;

/// `κ(δ, ε) = min{Λ_m − ε(1+c)(1+1/(2δ)), ε(Λ_M/(1+Λ_M) − (1+c)δ/2)}`.
pub fn kappa(lm: f64, lbm: f64, c: f64, delta: f64, eps: f64) -> f64 {
    let m = lbm / (1.0 + lbm);
    let a = lm - eps * (1.0 + c) * (1.0 + 1.0 / (2.0 * delta));
    let b = eps * (m - (1.0 + c) * delta / 2.0);
    a.min(b)
}

fn best_eps(lm: f64, lbm: f64, c: f64, delta: f64) -> (f64, f64) {
    let m = lbm / (1.0 + lbm);
    let b = (1.0 + c) * (1.0 + 1.0 / (2.0 * delta));
    let a2 = m - (1.0 + c) * delta / 2.0;
    if a2 <= 0.0 {
        return (EPS_CAP, f64::NEG_INFINITY);
    }
    let eps = (lm / (a2 + b)).clamp(1e-300, EPS_CAP);
    (eps, kappa(lm, lbm, c, delta, eps) / (1.0 + eps))
}

pub fn certify(constants: &HypoConstants, target: Target, n_delta: usize, n_eps: usize, gap: Option<f64>) -> HypoCertificate {
    let c = match target {
        Target::K => constants.c3,
        Target::QKQ => constants.c3 + constants.c4,
    };
    let (lm, lbm) = (constants.lambda_m, constants.lambda_big_m);
    let cmp_gap = gap.unwrap_or(f64::NAN);
    let fail = |reason: String| HypoCertificate {
        target,
        constants: constants.clone(),
        c,
        success: false,
        reason: Some(reason),
        delta: f64::NAN,
        epsilon: f64::NAN,
        kappa: f64::NAN,
        lambda_cert: f64::NAN,
        c_cert: f64::NAN,
        grid: [n_delta, n_eps],
        grid_lambda: f64::NAN,
        comparison_gap: cmp_gap,
        lower_bound_ok: false,
        lower_bound_tol: LOWER_BOUND_TOL,
    };
    if !c.is_finite() {
        return fail("c4 is unbounded on this configuration".into());
    }
    if !(lm > 0.0 && lbm > 0.0) || n_delta < 2 || n_eps < 2 {
        return fail(format!("nonpositive coercivity constants (Λ_m={lm}, Λ_M={lbm}) or empty grid"));
    }
    let m = lbm / (1.0 + lbm);
    let dmax = 2.0 * m / (1.0 + c);
    let logspace = |lo: f64, hi: f64, k: usize, i: usize| (lo.ln() + (hi / lo).ln() * i as f64 / (k - 1) as f64).exp();
    let deltas: Vec<f64> = (0..n_delta).map(|i| logspace(dmax * 1e-6, dmax * (1.0 - 1e-9), n_delta, i)).collect();
    let epss: Vec<f64> = (0..n_eps).map(|i| logspace(1e-8, EPS_CAP, n_eps, i)).collect();
    let table: Vec<Vec<f64>> = deltas
        .par_iter()
        .map(|&d| epss.iter().map(|&e| kappa(lm, lbm, c, d, e) / (1.0 + e)).collect())
        .collect();
    // deterministic argmax; ties go to smaller ε, then smaller δ
    let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
    for je in 0..n_eps {
        for id in 0..n_delta {
            let v = table[id][je];
            if v > best.0 {
                best = (v, id, je);
            }
        }
    }
    let (grid_lambda, id, je) = best;
    if !(grid_lambda > 0.0) {
        return fail("κ ≤ 0 on the whole (δ, ε) grid".into());
    }
    let (mut delta, mut eps) = (deltas[id], epss[je]);
    let mut lam = grid_lambda;
    // ε has a closed-form optimum for fixed δ; golden section in log δ
    let (mut lo, mut hi) = (deltas[id.saturating_sub(1)].ln(), deltas[(id + 1).min(n_delta - 1)].ln());
    let f = |ld: f64| best_eps(lm, lbm, c, ld.exp());
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    let (mut x1, mut x2) = (hi - gr * (hi - lo), lo + gr * (hi - lo));
    for _ in 0..80 {
        if f(x1).1 > f(x2).1 {
            hi = x2;
        } else {
            lo = x1;
        }
        x1 = hi - gr * (hi - lo);
        x2 = lo + gr * (hi - lo);
    }
    let ld = 0.5 * (lo + hi);
    let (e_ref, l_ref) = f(ld);
    if l_ref > lam {
        delta = ld.exp();
        eps = e_ref;
        lam = l_ref;
    }
    let k = kappa(lm, lbm, c, delta, eps);
    let lower_bound_ok = gap.is_some_and(|g| lam <= g + LOWER_BOUND_TOL);
    HypoCertificate {
        target,
        constants: constants.clone(),
        c,
        success: k > 0.0,
        reason: None,
        delta,
        epsilon: eps,
        kappa: k,
        lambda_cert: lam,
        c_cert: ((1.0 + eps) / (1.0 - eps)).sqrt(),
        grid: [n_delta, n_eps],
        grid_lambda,
        comparison_gap: cmp_gap,
        lower_bound_ok,
        lower_bound_tol: LOWER_BOUND_TOL,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropySeries {
    pub t: Vec<f64>,
    /// `H_ε[g(t)] = ½‖g‖² + ε⟨Ag,g⟩`
    pub h: Vec<f64>,
    pub norm_sq: Vec<f64>,
    /// `(1−ε)/2‖g‖² ≤ H_ε ≤ (1+ε)/2‖g‖²` at every point
    pub equivalence_ok: bool,
}

pub fn modified_entropy(a: MatRef<'_, f64>, eps: f64, g: MatRef<'_, f64>) -> f64 {
    let ag = a * g;
    let mut s = 0.0;
    let mut q = 0.0;
    for i in 0..g.nrows() {
        s += g[(i, 0)] * g[(i, 0)];
        q += ag[(i, 0)] * g[(i, 0)];
    }
    0.5 * s + eps * q
}

/// `H_ε` along `e^{t·target} g0`, with `g0` projected onto `Ran(basis)` first.
pub fn entropy_monitor(
    a: MatRef<'_, f64>,
    eps: f64,
    target: MatRef<'_, f64>,
    subspace: MatRef<'_, f64>,
    g0: &[f64],
    t_max: f64,
    dt_out: f64,
) -> Result<EntropySeries> {
    if !(eps < 1.0 && eps >= 0.0) {
        return Err(EmzError::Argument(format!("ε must lie in [0, 1), got {eps}")));
    }
    let n = a.nrows();
    let g = Mat::from_fn(n, 1, |i, _| g0[i]);
    let g = subspace * (subspace.transpose() * &g);
    let grid = uniform_grid(t_max, dt_out)?;
    let traj = Propagator::new(target, dt_out)?.trajectory(g.as_ref(), grid.len())?;
    let mut h = Vec::with_capacity(grid.len());
    let mut ns = Vec::with_capacity(grid.len());
    let mut ok = true;
    for v in &traj {
        let hv = modified_entropy(a, eps, v.as_ref());
        let nv = v.squared_norm_l2();
        let slack = 1e-14 * nv.max(1e-300);
        ok &= (1.0 - eps) / 2.0 * nv <= hv + slack && hv <= (1.0 + eps) / 2.0 * nv + slack;
        h.push(hv);
        ns.push(nv);
    }
    Ok(EntropySeries { t: grid, h, norm_sq: ns, equivalence_ok: ok })
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropyCheck {
    pub samples: usize,
    pub seed: u64,
    pub t_max: f64,
    pub dt_out: f64,
    /// `max_t H_ε(t) / (H_ε(0) e^{−2κt/(1+ε)})` over all samples
    pub max_ratio: f64,
    pub bound_ok: bool,
    pub equivalence_ok: bool,
    /// `max_t H_ε(t+dt) − H_ε(t)`, relative to `H_ε(0)`
    pub max_increase: f64,
    pub tolerance: f64,
}

pub const ENTROPY_TOL: f64 = 1e-6;

/// Entropy decay against `e^{−2κt/(1+ε)}` for `samples` Gaussian initial vectors in `Ran(subspace)`.
#[allow(clippy::too_many_arguments)]
pub fn entropy_check(
    a: MatRef<'_, f64>,
    eps: f64,
    kappa: f64,
    target: MatRef<'_, f64>,
    subspace: MatRef<'_, f64>,
    samples: usize,
    seed: u64,
    t_max: f64,
    dt_out: f64,
) -> Result<EntropyCheck> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    if !(eps < 1.0 && eps >= 0.0) {
        return Err(EmzError::Argument(format!("ε must lie in [0, 1), got {eps}")));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let x = Mat::from_fn(subspace.ncols(), samples, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
    let g0 = subspace * &x;
    let grid = uniform_grid(t_max, dt_out)?;
    let traj = Propagator::new(target, dt_out)?.trajectory(g0.as_ref(), grid.len())?;
    let h_of = |g: &Mat<f64>, s: usize| {
        let col = g.as_ref().subcols(s, 1);
        (modified_entropy(a, eps, col), col.squared_norm_l2())
    };
    let mut max_ratio = 0.0f64;
    let mut max_increase = f64::NEG_INFINITY;
    let mut equivalence_ok = true;
    for s in 0..samples {
        let h0 = h_of(&traj[0], s).0;
        let mut prev = h0;
        for (k, g) in traj.iter().enumerate() {
            let (h, nv) = h_of(g, s);
            let slack = 1e-14 * nv.max(1e-300);
            equivalence_ok &= (1.0 - eps) / 2.0 * nv <= h + slack && h <= (1.0 + eps) / 2.0 * nv + slack;
            let bound = h0 * (-2.0 * kappa * grid[k] / (1.0 + eps)).exp();
            if h0 > 0.0 {
                max_ratio = max_ratio.max(h / bound);
                if k > 0 {
                    max_increase = max_increase.max((h - prev) / h0);
                }
            }
            prev = h;
        }
    }
    Ok(EntropyCheck {
        samples,
        seed,
        t_max,
        dt_out,
        max_ratio,
        bound_ok: max_ratio <= 1.0 + ENTROPY_TOL,
        equivalence_ok,
        max_increase,
        tolerance: ENTROPY_TOL,
    })
}

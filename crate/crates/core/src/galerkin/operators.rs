use faer::{Mat, MatRef};
use serde::Serialize;

use super::basis::GalerkinBasis;
use crate::linalg::{self, asym_residual, idempotency_residual, identity, max_abs};
use crate::{EmzError, Result};

/// Generator and its split `K = D − L`.
#[derive(Debug, Clone)]
pub struct Generator {
    pub gamma: f64,
    pub k: Mat<f64>,
    /// symmetric part, negative semidefinite
    pub d: Mat<f64>,
    /// antisymmetric part
    pub l: Mat<f64>,
    /// `max |Dq + Dqᵀ − β V′|` from integration by parts against `e^{−βV}`
    pub ibp_residual: f64,
}

pub fn assemble_generator(basis: &GalerkinBasis, gibbs_pot: &crate::model::Potential, gamma: f64) -> Result<Generator> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(EmzError::Argument(format!("gamma must be positive, got {gamma}")));
    }
    let (nq, np) = (basis.n_q, basis.n_p);
    let n = basis.dim();
    let beta = basis.beta;
    let dq = basis.derivative_q();
    let vq = basis.multiplication_q(|q| gibbs_pot.grad(q));
    if !dq.as_ref().is_all_finite() || !vq.as_ref().is_all_finite() {
        return Err(EmzError::Numerical("quadrature breakdown while assembling K".into()));
    }
    let mut ibp = 0.0f64;
    for c in 0..nq {
        for a in 0..nq {
            ibp = ibp.max((dq[(c, a)] + dq[(a, c)] - beta * vq[(c, a)]).abs());
        }
    }

    let sb = 1.0 / beta.sqrt();
    let mut k = Mat::zeros(n, n);
    for a in 0..nq {
        for b in 0..np {
            let col = basis.index(a, b);
            let bf = b as f64;
            // Ornstein-Uhlenbeck part is diagonal in h_b
            k[(col, col)] += -gamma * bf;
            for c in 0..nq {
                let d = dq[(c, a)];
                if d != 0.0 {
                    if b + 1 < np {
                        k[(basis.index(c, b + 1), col)] += d * sb * (bf + 1.0).sqrt();
                    }
                    if b > 0 {
                        k[(basis.index(c, b - 1), col)] += d * sb * bf.sqrt();
                    }
                }
                if b > 0 {
                    k[(basis.index(c, b - 1), col)] -= vq[(c, a)] * (beta * bf).sqrt();
                }
            }
        }
    }
    let d = linalg::sym_part(k.as_ref());
    let l = Mat::from_fn(n, n, |i, j| 0.5 * (k[(j, i)] - k[(i, j)]));
    Ok(Generator { gamma, k, d, l, ibp_residual: ibp })
}

/// `Π`: projector on functions of q only (`b = 0`).
pub fn assemble_pi(basis: &GalerkinBasis) -> Mat<f64> {
    let n = basis.dim();
    Mat::from_fn(n, n, |i, j| {
        if i == j && basis.split(i).1 == 0 {
            1.0
        } else {
            0.0
        }
    })
}

/// Mori projection on the span of the observables.
#[derive(Debug, Clone)]
pub struct MoriStructure {
    pub labels: Vec<String>,
    /// observable coefficients, `n × M`
    pub c: Mat<f64>,
    pub g: Mat<f64>,
    pub g_inv: Mat<f64>,
    pub g_cond: f64,
    pub p: Mat<f64>,
    pub q: Mat<f64>,
    pub omega: Mat<f64>,
}

pub const GRAM_COND_LIMIT: f64 = 1e8;

pub fn assemble_mori(k: MatRef<'_, f64>, observables: &[Vec<f64>], labels: Vec<String>) -> Result<MoriStructure> {
    let n = k.nrows();
    let m = observables.len();
    if observables.iter().any(|o| o.len() != n) {
        return Err(EmzError::Argument("observable length does not match the basis".into()));
    }
    let c = Mat::from_fn(n, m, |i, j| observables[j][i]);
    let g = c.transpose() * &c;
    let g_cond = linalg::cond(g.as_ref())?;
    if m > 0 && !(g_cond < GRAM_COND_LIMIT) {
        return Err(EmzError::Conditioning { what: "observable Gram matrix".into(), cond: g_cond, limit: GRAM_COND_LIMIT });
    }
    let g_inv = if m == 0 { Mat::zeros(0, 0) } else { linalg::inverse(g.as_ref()) };
    let p = if m == 0 { Mat::zeros(n, n) } else { &c * &g_inv * c.transpose() };
    // re-symmetrize to remove rounding drift
    let p = linalg::sym_part(p.as_ref());
    let q = identity(n) - &p;
    let w = c.transpose() * k * &c;
    let omega = (&g_inv * &w).transpose().to_owned();
    Ok(MoriStructure { labels, c, g, g_inv, g_cond, p, q, omega })
}

/// `A = (I + BᵀB)⁻¹ Bᵀ` with `B = LΠ`.
pub fn assemble_auxiliary_a(l: MatRef<'_, f64>, pi: MatRef<'_, f64>) -> Mat<f64> {
    let b = l * pi;
    let n = b.nrows();
    let lhs = identity(n) + b.transpose() * &b;
    let out = linalg::solve(lhs.as_ref(), b.transpose());
    // the solve is exact only up to rounding; Ran(A) ⊂ Ran(Π) by construction
    pi * out
}

pub fn assemble_qkq(k: MatRef<'_, f64>, q: MatRef<'_, f64>) -> Mat<f64> {
    q * k * q
}

/// Structural residuals of the assembled operators.
#[derive(Debug, Clone, Serialize)]
pub struct StructureReport {
    pub split_residual: f64,
    pub d_asym: f64,
    pub l_sym: f64,
    pub k_const: f64,
    pub k_sym_max_eig: f64,
    pub qkq_sym_max_eig: f64,
    pub pi_idem: f64,
    pub p_idem: f64,
    pub p_asym: f64,
    pub q_idem: f64,
    pub pq: f64,
    pub dpi: f64,
    /// `‖ΠLΠ‖`, zero when L maps p-degree-zero functions out of Ran Π
    pub h1: f64,
    pub a_range: f64,
    pub a_norm: f64,
    /// largest singular value of `A(I−Π)`
    pub a_offpi_norm: f64,
    pub la_norm: f64,
    pub ibp_residual: f64,
    pub tolerance: f64,
}

pub const STRUCT_TOL: f64 = 1e-10;

pub fn structure_report(gen: &Generator, pi: MatRef<'_, f64>, mori: &MoriStructure, a: MatRef<'_, f64>, qkq: MatRef<'_, f64>) -> Result<StructureReport> {
    let n = gen.k.nrows();
    let recon = &gen.d - &gen.l - &gen.k;
    let e0 = Mat::from_fn(n, 1, |i, _| if i == 0 { 1.0 } else { 0.0 });
    let ipi = identity(n) - pi;
    Ok(StructureReport {
        split_residual: max_abs(recon.as_ref()),
        d_asym: asym_residual(gen.d.as_ref()),
        l_sym: max_abs((&gen.l + gen.l.transpose()).as_ref()),
        k_const: (&gen.k * &e0).norm_l2(),
        k_sym_max_eig: linalg::max_sym_eigenvalue(gen.k.as_ref())?,
        qkq_sym_max_eig: linalg::max_sym_eigenvalue(qkq)?,
        pi_idem: idempotency_residual(pi),
        p_idem: idempotency_residual(mori.p.as_ref()),
        p_asym: asym_residual(mori.p.as_ref()),
        q_idem: idempotency_residual(mori.q.as_ref()),
        pq: max_abs((&mori.p * &mori.q).as_ref()),
        dpi: max_abs((&gen.d * pi).as_ref()),
        h1: linalg::norm_2((pi * &gen.l * pi).as_ref()),
        a_range: max_abs((&ipi * a).as_ref()),
        a_norm: linalg::norm_2(a),
        a_offpi_norm: linalg::norm_2((a * &ipi).as_ref()),
        la_norm: linalg::norm_2((&gen.l * a).as_ref()),
        ibp_residual: gen.ibp_residual,
        tolerance: STRUCT_TOL,
    })
}

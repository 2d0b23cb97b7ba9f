use faer::{Mat, MatRef};
use serde::Serialize;

use crate::linalg::{self, hcat, identity, null_space, vcat};
use crate::{EmzError, Result};

#[derive(Debug, Clone)]
pub struct KernelProjections {
    pub pi0: Mat<f64>,
    pub pi0_q: Mat<f64>,
    pub report: ProjectionReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionReport {
    /// `sup_{g ∈ Ran Q, ‖g‖=1} ‖π₀^Q g − π₀ g‖`
    pub discrepancy: f64,
    /// the same sup restricted to `Ran Q ∩ Ker(K)^⊥`; zero means the proposition holds there
    pub discrepancy_ker_perp: f64,
    pub kernel_dim: usize,
    pub pairing_cond: f64,
}

/// `π₀ = e₀e₀ᵀ` and the spectral projector of QKQ on its kernel.
pub fn kernel_projections(k: MatRef<'_, f64>, qkq: MatRef<'_, f64>, q: MatRef<'_, f64>, tol: f64) -> Result<KernelProjections> {
    let n = k.nrows();
    let pi0 = Mat::from_fn(n, n, |i, j| if i == 0 && j == 0 { 1.0 } else { 0.0 });
    let thr = tol * linalg::norm_2(qkq);
    let alg = linalg::eigenvalues(qkq)?.iter().filter(|z| z.norm() <= thr).count();
    let r = null_space(qkq, thr)?;
    let lk = null_space(qkq.transpose(), thr)?;
    if r.ncols() != alg || lk.ncols() != alg {
        return Err(EmzError::DefectiveKernel(format!(
            "algebraic kernel multiplicity {alg}, right null space {}, left null space {}",
            r.ncols(),
            lk.ncols()
        )));
    }
    let pair = lk.transpose() * &r;
    let pairing_cond = linalg::cond(pair.as_ref())?;
    if !(pairing_cond < 1e8) {
        return Err(EmzError::DefectiveKernel(format!(
            "left/right kernel pairing has condition number {pairing_cond:.3e}"
        )));
    }
    let pi0_q = if alg == 0 {
        Mat::zeros(n, n)
    } else {
        &r * linalg::solve(pair.as_ref(), lk.transpose())
    };
    let diff = (&pi0_q - &pi0) * q;
    let discrepancy = linalg::norm_2(diff.as_ref());
    // restriction to Ker(K)^⊥ inside Ran Q
    let kk = null_space(k, tol * linalg::norm_2(k))?;
    let perp = linalg::orth_complement(hcat(&[kk.as_ref(), (identity(n) - q).as_ref()]).as_ref(), 1e-8)?;
    let discrepancy_ker_perp = linalg::norm_2(((&pi0_q - &pi0) * &perp).as_ref());
    Ok(KernelProjections {
        pi0,
        pi0_q,
        report: ProjectionReport { discrepancy, discrepancy_ker_perp, kernel_dim: alg, pairing_cond },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct VectorResidual {
    pub k_v: f64,
    pub off_p: f64,
    /// `max(‖Pv‖, ‖(I−P)Kv‖)`
    pub w_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelClassification {
    pub kernel_dimension: usize,
    pub ker_k: usize,
    pub ran_p: usize,
    pub w_type: usize,
    pub unclassified: usize,
    pub residuals: Vec<VectorResidual>,
    pub tolerance: f64,
}

fn rank(m: MatRef<'_, f64>, tol: f64) -> Result<usize> {
    Ok(linalg::orth(m, tol)?.ncols())
}

/// Splits `Ker(QKQ)` into nested subspaces `Ker K`, `Ran P`, w-type.
pub fn classify_kernel(qkq: MatRef<'_, f64>, k: MatRef<'_, f64>, p: MatRef<'_, f64>, tol: f64) -> Result<KernelClassification> {
    let n = k.nrows();
    let thr = tol * linalg::norm_2(qkq).max(1.0);
    let kthr = tol * linalg::norm_2(k).max(1.0);
    let nb = null_space(qkq, thr)?;
    let dim = nb.ncols();
    let ip = identity(n) - p;
    if dim == 0 {
        return Ok(KernelClassification {
            kernel_dimension: 0,
            ker_k: 0,
            ran_p: 0,
            w_type: 0,
            unclassified: 0,
            residuals: Vec::new(),
            tolerance: tol,
        });
    }
    let kn = k * &nb;
    let ipn = &ip * &nb;
    let s1 = &nb * null_space(kn.as_ref(), kthr)?;
    let s2 = &nb * null_space(ipn.as_ref(), thr)?;
    let w_sys = vcat(&[(p * &nb).as_ref(), (&ip * &kn).as_ref()]);
    let s3 = &nb * null_space(w_sys.as_ref(), kthr)?;
    let d1 = s1.ncols();
    let d12 = rank(hcat(&[s1.as_ref(), s2.as_ref()]).as_ref(), 1e-6)?;
    let d123 = rank(hcat(&[s1.as_ref(), s2.as_ref(), s3.as_ref()]).as_ref(), 1e-6)?;
    let residuals = (0..dim)
        .map(|j| {
            let v = nb.col(j);
            let kv = k * v;
            VectorResidual {
                k_v: kv.norm_l2(),
                off_p: (&ip * v).norm_l2(),
                w_residual: (p * v).norm_l2().max((&ip * &kv).norm_l2()),
            }
        })
        .collect();
    Ok(KernelClassification {
        kernel_dimension: dim,
        ker_k: d1,
        ran_p: d12 - d1,
        w_type: d123 - d12,
        unclassified: dim - d123,
        residuals,
        tolerance: tol,
    })
}

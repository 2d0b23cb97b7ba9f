//! Dense helpers on top of `faer`: matrix exponential, null spaces,
//! orthonormal complements and a few residual measures.

use faer::{Mat, MatRef, Side};
use num_complex::Complex64;

use crate::{EmzError, Result};

/// Operator 1-norm (max absolute column sum).
pub fn norm_1(a: MatRef<'_, f64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..a.ncols() {
        let mut s = 0.0;
        for i in 0..a.nrows() {
            s += a[(i, j)].abs();
        }
        best = best.max(s);
    }
    best
}

/// Largest singular value.
pub fn norm_2(a: MatRef<'_, f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    a.singular_values()
        .map(|s| s.into_iter().fold(0.0f64, f64::max))
        .unwrap_or(f64::NAN)
}

pub fn max_abs(a: MatRef<'_, f64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].abs());
        }
    }
    m
}

pub fn identity(n: usize) -> Mat<f64> {
    Mat::identity(n, n)
}

pub fn sym_part(a: MatRef<'_, f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| 0.5 * (a[(i, j)] + a[(j, i)]))
}

/// `‖X − Xᵀ‖_max`
pub fn asym_residual(a: MatRef<'_, f64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..j {
            m = m.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    m
}

/// `‖X² − X‖_max`
pub fn idempotency_residual(a: MatRef<'_, f64>) -> f64 {
    let sq = a * a;
    max_abs((&sq - a).as_ref())
}

/// Eigenvalues (ascending) and eigenvectors of a symmetric matrix.
pub fn sym_eigen(a: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    let s = sym_part(a);
    let e = s
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| EmzError::Numerical(format!("symmetric eigensolver failed: {e:?}")))?;
    let vals: Vec<f64> = e.S().column_vector().iter().copied().collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
    let u = e.U();
    let vecs = Mat::from_fn(n, n, |i, k| u[(i, order[k])]);
    Ok((order.iter().map(|&k| vals[k]).collect(), vecs))
}

pub fn max_sym_eigenvalue(a: MatRef<'_, f64>) -> Result<f64> {
    Ok(sym_eigen(a)?.0.last().copied().unwrap_or(0.0))
}

pub fn eigenvalues(a: MatRef<'_, f64>) -> Result<Vec<Complex64>> {
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    a.eigenvalues()
        .map_err(|e| EmzError::Numerical(format!("eigensolver did not converge: {e:?}")))
}

struct SvdParts {
    u: Mat<f64>,
    s: Vec<f64>,
    v: Mat<f64>,
}

fn full_svd(a: MatRef<'_, f64>) -> Result<SvdParts> {
    let svd = a
        .svd()
        .map_err(|e| EmzError::Numerical(format!("svd did not converge: {e:?}")))?;
    Ok(SvdParts {
        u: svd.U().to_owned(),
        s: svd.S().column_vector().iter().copied().collect(),
        v: svd.V().to_owned(),
    })
}

fn pick_cols(m: &Mat<f64>, cols: &[usize]) -> Mat<f64> {
    Mat::from_fn(m.nrows(), cols.len(), |i, k| m[(i, cols[k])])
}

/// Orthonormal basis of `{x : ‖Ax‖ small}`; singular values `≤ tol` count as zero.
pub fn null_space(a: MatRef<'_, f64>, tol: f64) -> Result<Mat<f64>> {
    let n = a.ncols();
    if a.nrows() == 0 {
        return Ok(identity(n));
    }
    let p = full_svd(a)?;
    let cols: Vec<usize> = (0..n)
        .filter(|&k| k >= p.s.len() || p.s[k] <= tol)
        .collect();
    Ok(pick_cols(&p.v, &cols))
}

/// Orthonormal basis of the range of `A` (columns with σ > tol).
pub fn orth(a: MatRef<'_, f64>, tol: f64) -> Result<Mat<f64>> {
    if a.ncols() == 0 {
        return Ok(Mat::zeros(a.nrows(), 0));
    }
    let p = full_svd(a)?;
    let cols: Vec<usize> = (0..p.s.len()).filter(|&k| p.s[k] > tol).collect();
    Ok(pick_cols(&p.u, &cols))
}

/// Orthonormal basis of the orthogonal complement of the range of `A`.
pub fn orth_complement(a: MatRef<'_, f64>, tol: f64) -> Result<Mat<f64>> {
    let n = a.nrows();
    if a.ncols() == 0 {
        return Ok(identity(n));
    }
    let p = full_svd(a)?;
    let cols: Vec<usize> = (0..n)
        .filter(|&k| k >= p.s.len() || p.s[k] <= tol)
        .collect();
    Ok(pick_cols(&p.u, &cols))
}

/// Horizontal concatenation.
pub fn hcat(blocks: &[MatRef<'_, f64>]) -> Mat<f64> {
    let n = blocks.first().map_or(0, |b| b.nrows());
    let m: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(n, m);
    let mut off = 0;
    for b in blocks {
        for j in 0..b.ncols() {
            for i in 0..n {
                out[(i, off + j)] = b[(i, j)];
            }
        }
        off += b.ncols();
    }
    out
}

/// Vertical concatenation.
pub fn vcat(blocks: &[MatRef<'_, f64>]) -> Mat<f64> {
    let m = blocks.first().map_or(0, |b| b.ncols());
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(n, m);
    let mut off = 0;
    for b in blocks {
        for j in 0..m {
            for i in 0..b.nrows() {
                out[(off + i, j)] = b[(i, j)];
            }
        }
        off += b.nrows();
    }
    out
}

pub fn solve(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    use faer::linalg::solvers::Solve;
    a.partial_piv_lu().solve(b)
}

pub fn inverse(a: MatRef<'_, f64>) -> Mat<f64> {
    solve(a, identity(a.nrows()).as_ref())
}

/// 2-norm condition number.
pub fn cond(a: MatRef<'_, f64>) -> Result<f64> {
    if a.nrows() == 0 {
        return Ok(1.0);
    }
    let s = a
        .singular_values()
        .map_err(|e| EmzError::Numerical(format!("svd did not converge: {e:?}")))?;
    let hi = s.iter().copied().fold(0.0f64, f64::max);
    let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(if lo == 0.0 { f64::INFINITY } else { hi / lo })
}

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA13: f64 = 5.371920351148152;

fn lin(terms: &[(f64, &Mat<f64>)], n: usize) -> Mat<f64> {
    let mut out = Mat::zeros(n, n);
    for (c, m) in terms {
        for j in 0..n {
            for i in 0..n {
                out[(i, j)] += c * m[(i, j)];
            }
        }
    }
    out
}

fn pade_low(a: &Mat<f64>, b: &[f64]) -> (Mat<f64>, Mat<f64>) {
    let n = a.nrows();
    let id = identity(n);
    let a2 = a * a;
    let mut pows = vec![id, a2.clone()];
    let half = b.len() / 2;
    while pows.len() < half {
        let next = pows.last().unwrap() * &a2;
        pows.push(next);
    }
    let mut uo = Mat::zeros(n, n);
    let mut v = Mat::zeros(n, n);
    for (k, p) in pows.iter().enumerate() {
        uo = lin(&[(1.0, &uo), (b[2 * k + 1], p)], n);
        v = lin(&[(1.0, &v), (b[2 * k], p)], n);
    }
    (a * &uo, v)
}

fn pade13(a: &Mat<f64>) -> (Mat<f64>, Mat<f64>) {
    let n = a.nrows();
    let b = &PADE13;
    let id = identity(n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = lin(&[(b[13], &a6), (b[11], &a4), (b[9], &a2)], n);
    let u = a * &lin(
        &[
            (1.0, &(&a6 * &inner_u)),
            (b[7], &a6),
            (b[5], &a4),
            (b[3], &a2),
            (b[1], &id),
        ],
        n,
    );
    let inner_v = lin(&[(b[12], &a6), (b[10], &a4), (b[8], &a2)], n);
    let v = lin(
        &[
            (1.0, &(&a6 * &inner_v)),
            (b[6], &a6),
            (b[4], &a4),
            (b[2], &a2),
            (b[0], &id),
        ],
        n,
    );
    (u, v)
}

/// Matrix exponential by Padé scaling and squaring (degrees 3..13).
pub fn expm(a: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let a = a.to_owned();
    if !a.as_ref().is_all_finite() {
        return Err(EmzError::Numerical("expm: non-finite input".into()));
    }
    let nrm = norm_1(a.as_ref());
    let solve_uv = |u: Mat<f64>, v: Mat<f64>| {
        let p = &v + &u;
        let q = &v - &u;
        solve(q.as_ref(), p.as_ref())
    };
    for (m, theta) in THETA {
        if nrm <= theta {
            let b: &[f64] = match m {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            let (u, v) = pade_low(&a, b);
            return Ok(solve_uv(u, v));
        }
    }
    let s = if nrm > THETA13 {
        (nrm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scale = 0.5f64.powi(s);
    let scaled = Mat::from_fn(n, n, |i, j| a[(i, j)] * scale);
    let (u, v) = pade13(&scaled);
    let mut r = solve_uv(u, v);
    for _ in 0..s {
        r = &r * &r;
    }
    if !r.as_ref().is_all_finite() {
        return Err(EmzError::Numerical("expm overflow".into()));
    }
    Ok(r)
}

/// `e^{tM} v` for `t ≥ 0`.
pub fn propagate(m: MatRef<'_, f64>, v: MatRef<'_, f64>, t: f64) -> Result<Mat<f64>> {
    if !(t >= 0.0) {
        return Err(EmzError::Argument(format!(
            "propagation time must be nonnegative, got {t}"
        )));
    }
    let tm = Mat::from_fn(m.nrows(), m.ncols(), |i, j| t * m[(i, j)]);
    Ok(expm(tm.as_ref())? * v)
}

/// Fixed-step propagator on a uniform grid: repeated application of `e^{dt·M}`.
pub struct Propagator {
    step: Mat<f64>,
}

impl Propagator {
    pub fn new(m: MatRef<'_, f64>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(EmzError::Argument(format!("time step must be positive, got {dt}")));
        }
        let tm = Mat::from_fn(m.nrows(), m.ncols(), |i, j| dt * m[(i, j)]);
        Ok(Self { step: expm(tm.as_ref())? })
    }

    /// States at `t_0 = 0, dt, …, (n_out−1)·dt`.
    pub fn trajectory(&self, v0: MatRef<'_, f64>, n_out: usize) -> Result<Vec<Mat<f64>>> {
        let mut out = Vec::with_capacity(n_out);
        let mut v = v0.to_owned();
        for k in 0..n_out {
            if k > 0 {
                v = &self.step * &v;
                if !v.as_ref().is_all_finite() {
                    return Err(EmzError::Numerical(format!(
                        "propagation overflow at step {k}"
                    )));
                }
            }
            out.push(v.clone());
        }
        Ok(out)
    }
}

/// Row-major `i,j,value` dump.
pub fn write_matrix_csv(a: MatRef<'_, f64>, path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "i,j,value")?;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            writeln!(f, "{i},{j},{:.17e}", a[(i, j)])?;
        }
    }
    f.flush()?;
    Ok(())
}

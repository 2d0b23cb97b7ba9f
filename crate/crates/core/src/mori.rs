//! Memory kernel, fluctuation force and correlation series from the Galerkin
//! operators, plus exponential decay fits.

use faer::{Mat, MatRef};
use serde::Serialize;

use crate::galerkin::{Assembly, MoriStructure};
use crate::linalg::Propagator;
use crate::series::{uniform_grid, MatrixSeries};
use crate::{EmzError, Result};

fn to_rowmajor(m: MatRef<'_, f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelSeries {
    pub series: MatrixSeries,
    /// product-of-means form `Σ_k G⁻¹_jk E[QKᵀu_k] E[QKu_i]`
    pub equilibrium_explicit: Vec<f64>,
    /// `Σ_k G⁻¹_jk ⟨QKᵀu_k, π₀^Q QKu_i⟩`, when the kernel projector is supplied
    pub equilibrium_spectral: Option<Vec<f64>>,
    /// `K(0)` formed without propagation
    pub k0_direct: Vec<f64>,
}

impl KernelSeries {
    /// Equilibrium used for decay fits: spectral if available.
    pub fn equilibrium(&self) -> &[f64] {
        self.equilibrium_spectral.as_deref().unwrap_or(&self.equilibrium_explicit)
    }

    pub fn t0_consistency(&self) -> f64 {
        self.series.values[0]
            .iter()
            .zip(&self.k0_direct)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// `K_ij(t) = Σ_k G⁻¹_jk ⟨u_k, K e^{tQKQ} QK u_i⟩` on `0, dt_out, …, t_max`.
pub fn memory_kernel_series(
    mori: &MoriStructure,
    k: MatRef<'_, f64>,
    qkq: MatRef<'_, f64>,
    pi0_q: Option<MatRef<'_, f64>>,
    t_max: f64,
    dt_out: f64,
) -> Result<KernelSeries> {
    let grid = uniform_grid(t_max, dt_out)?;
    let m = mori.c.ncols();
    let q = mori.q.as_ref();
    let qkc = q * k * &mori.c;
    let left = &mori.g_inv * mori.c.transpose() * k;
    let traj = Propagator::new(qkq, dt_out)?.trajectory(qkc.as_ref(), grid.len())?;
    let mut series = MatrixSeries::new(grid, m);
    for (s, v) in traj.iter().enumerate() {
        let kt = (&left * v).transpose().to_owned();
        series.values[s] = to_rowmajor(kt.as_ref());
    }
    let k0 = (&left * q * k * &mori.c).transpose().to_owned();

    let qktc = q * k.transpose() * &mori.c;
    let a: Vec<f64> = (0..m).map(|i| qktc[(0, i)]).collect();
    let b: Vec<f64> = (0..m).map(|i| qkc[(0, i)]).collect();
    let ga = Mat::from_fn(m, 1, |j, _| (0..m).map(|l| mori.g_inv[(j, l)] * a[l]).sum::<f64>());
    let explicit = Mat::from_fn(m, m, |i, j| b[i] * ga[(j, 0)]);
    let spectral = pi0_q.map(|p0| {
        let inner = qktc.transpose() * p0 * &qkc;
        to_rowmajor((&mori.g_inv * inner).transpose())
    });
    Ok(KernelSeries {
        series,
        equilibrium_explicit: to_rowmajor(explicit.as_ref()),
        equilibrium_spectral: spectral,
        k0_direct: to_rowmajor(k0.as_ref()),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ForceSeries {
    pub t: Vec<f64>,
    /// `‖f_i(t) − E[QKu_i]‖`, one column per observable
    pub force_norm: Vec<Vec<f64>>,
    /// `⟨f_i(t), f_j(0)⟩`
    pub force_acf: MatrixSeries,
    pub equilibrium: Vec<f64>,
    /// `E[QKu_i] E[QKu_j]`
    pub equilibrium_sq: Vec<f64>,
}

pub const ZERO_MEAN_TOL: f64 = 1e-10;

/// `f_i(t) = e^{tQKQ} QK u_i`; observables must have zero mean.
pub fn fluctuation_force_series(
    mori: &MoriStructure,
    k: MatRef<'_, f64>,
    qkq: MatRef<'_, f64>,
    t_max: f64,
    dt_out: f64,
) -> Result<ForceSeries> {
    let m = mori.c.ncols();
    for i in 0..m {
        let mean = mori.c[(0, i)];
        if mean.abs() > ZERO_MEAN_TOL {
            return Err(EmzError::Precondition(format!(
                "fluctuation-force statistics need zero-mean observables; `{}` has mean {mean:.3e}",
                mori.labels[i]
            )));
        }
    }
    let grid = uniform_grid(t_max, dt_out)?;
    let qkc = mori.q.as_ref() * k * &mori.c;
    let eq: Vec<f64> = (0..m).map(|i| qkc[(0, i)]).collect();
    let traj = Propagator::new(qkq, dt_out)?.trajectory(qkc.as_ref(), grid.len())?;
    let mut acf = MatrixSeries::new(grid.clone(), m);
    let mut norm = vec![Vec::with_capacity(grid.len()); m];
    for (s, f) in traj.iter().enumerate() {
        let c = f.transpose() * &qkc;
        acf.values[s] = to_rowmajor(c.as_ref());
        for i in 0..m {
            let mut acc = 0.0;
            for r in 0..f.nrows() {
                let x = f[(r, i)] - if r == 0 { eq[i] } else { 0.0 };
                acc += x * x;
            }
            norm[i].push(acc.sqrt());
        }
    }
    let eq2 = (0..m * m).map(|ij| eq[ij / m] * eq[ij % m]).collect();
    Ok(ForceSeries { t: grid, force_norm: norm, force_acf: acf, equilibrium: eq, equilibrium_sq: eq2 })
}

#[derive(Debug, Clone, Serialize)]
pub struct AcfSeries {
    /// `C_ik(t) = ⟨u_k, e^{tK} u_i⟩`
    pub series: MatrixSeries,
    /// `⟨u_i,1⟩⟨u_k,1⟩`
    pub equilibrium: Vec<f64>,
}

pub fn acf_series(mori: &MoriStructure, k: MatRef<'_, f64>, t_max: f64, dt_out: f64) -> Result<AcfSeries> {
    let grid = uniform_grid(t_max, dt_out)?;
    let m = mori.c.ncols();
    let traj = Propagator::new(k, dt_out)?.trajectory(mori.c.as_ref(), grid.len())?;
    let mut series = MatrixSeries::new(grid, m);
    for (s, u) in traj.iter().enumerate() {
        let c = (mori.c.transpose() * u).transpose().to_owned();
        series.values[s] = to_rowmajor(c.as_ref());
    }
    let eq = (0..m * m).map(|ij| mori.c[(0, ij / m)] * mori.c[(0, ij % m)]).collect();
    Ok(AcfSeries { series, equilibrium: eq })
}

/// Convenience wrappers on an [`Assembly`].
pub fn kernel_for(asm: &Assembly, pi0_q: Option<MatRef<'_, f64>>, t_max: f64, dt_out: f64) -> Result<KernelSeries> {
    memory_kernel_series(&asm.mori, asm.gen.k.as_ref(), asm.qkq.as_ref(), pi0_q, t_max, dt_out)
}

pub fn force_for(asm: &Assembly, t_max: f64, dt_out: f64) -> Result<ForceSeries> {
    fluctuation_force_series(&asm.mori, asm.gen.k.as_ref(), asm.qkq.as_ref(), t_max, dt_out)
}

pub fn acf_for(asm: &Assembly, t_max: f64, dt_out: f64) -> Result<AcfSeries> {
    acf_series(&asm.mori, asm.gen.k.as_ref(), t_max, dt_out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// least squares on `log|y|` over the tail window
    Direct,
    /// least squares through the interior local maxima of `|y|`
    Envelope,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    pub amplitude: f64,
    pub rate: f64,
    /// relative L² misfit of `C e^{−λt}` against `|y|` on the points used
    pub residual: f64,
    pub points: usize,
    pub mode: FitMode,
    pub window: [f64; 2],
}

pub const MASK_FLOOR: f64 = 1e-13;
pub const MIN_FIT_POINTS: usize = 5;
pub const MIN_PEAKS: usize = 3;

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub tail_fraction: f64,
    pub mode: FitMode,
    /// values with `|y|` below this are ignored
    pub floor: f64,
    /// optional explicit window end, otherwise the grid end
    pub t_end: Option<f64>,
}

impl FitOptions {
    pub fn direct(tail_fraction: f64) -> Self {
        Self { tail_fraction, mode: FitMode::Direct, floor: MASK_FLOOR, t_end: None }
    }

    pub fn envelope(tail_fraction: f64) -> Self {
        Self { tail_fraction, mode: FitMode::Envelope, floor: MASK_FLOOR, t_end: None }
    }
}

fn line_fit(t: &[f64], ly: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = t.iter().zip(ly).map(|(a, b)| (a - mt) * (b - my)).sum();
    let sxx: f64 = t.iter().map(|a| (a - mt).powi(2)).sum();
    let slope = sxy / sxx;
    (my - slope * mt, slope)
}

/// Fits `|y(t)| ≈ C e^{−λt}` on the tail window of the grid.
pub fn decay_fit(t: &[f64], y: &[f64], opt: FitOptions) -> Result<DecayFit> {
    if t.len() != y.len() || t.is_empty() {
        return Err(EmzError::Fit("empty or mismatched series".into()));
    }
    if !(opt.tail_fraction > 0.0 && opt.tail_fraction <= 1.0) {
        return Err(EmzError::Argument(format!("tail fraction {} not in (0, 1]", opt.tail_fraction)));
    }
    let end = opt.t_end.map_or(t.len(), |te| t.iter().take_while(|&&x| x <= te + 1e-12).count());
    let start = ((1.0 - opt.tail_fraction) * end as f64).floor() as usize;
    let (tw, yw) = (&t[start..end], &y[start..end]);
    let (pt, py): (Vec<f64>, Vec<f64>) = match opt.mode {
        FitMode::Direct => tw
            .iter()
            .zip(yw)
            .filter(|(_, v)| v.abs() >= opt.floor && v.is_finite())
            .map(|(a, v)| (*a, v.abs()))
            .unzip(),
        FitMode::Envelope => {
            let a: Vec<f64> = yw.iter().map(|v| v.abs()).collect();
            let mut pts = Vec::new();
            for i in 1..a.len().saturating_sub(1) {
                if a[i] > a[i - 1] && a[i] >= a[i + 1] && a[i] >= opt.floor {
                    // parabola through the three samples
                    let h = tw[i] - tw[i - 1];
                    let den = a[i - 1] - 2.0 * a[i] + a[i + 1];
                    let (dx, peak) = if den < 0.0 {
                        let dx = 0.5 * (a[i - 1] - a[i + 1]) / den;
                        (dx, a[i] - 0.25 * (a[i - 1] - a[i + 1]) * dx)
                    } else {
                        (0.0, a[i])
                    };
                    pts.push((tw[i] + dx * h, peak));
                }
            }
            if pts.len() < MIN_PEAKS {
                return Err(EmzError::Fit(format!(
                    "envelope fit found {} peaks above {:.1e}, need {MIN_PEAKS}",
                    pts.len(),
                    opt.floor
                )));
            }
            pts.into_iter().unzip()
        }
    };
    let need = if opt.mode == FitMode::Envelope { MIN_PEAKS } else { MIN_FIT_POINTS };
    if pt.len() < need {
        return Err(EmzError::Fit(format!(
            "{} usable points above {:.1e} in the tail window, need {need}",
            pt.len(),
            opt.floor
        )));
    }
    let ly: Vec<f64> = py.iter().map(|v| v.ln()).collect();
    let (c0, slope) = line_fit(&pt, &ly);
    let amp = c0.exp();
    let (mut num, mut den) = (0.0, 0.0);
    for (a, v) in pt.iter().zip(&py) {
        num += (amp * (slope * a).exp() - v).powi(2);
        den += v * v;
    }
    Ok(DecayFit {
        amplitude: amp,
        rate: -slope,
        residual: (num / den).sqrt(),
        points: pt.len(),
        mode: opt.mode,
        window: [tw[0], tw[tw.len() - 1]],
    })
}

/// Fit of `|K_ij(t) − K∞_ij|` for one entry.
pub fn kernel_entry_fit(ks: &KernelSeries, i: usize, j: usize, opt: FitOptions) -> Result<DecayFit> {
    let m = ks.series.dim;
    let eq = ks.equilibrium()[i * m + j];
    let y: Vec<f64> = ks.series.entry(i, j).iter().map(|v| v - eq).collect();
    decay_fit(&ks.series.t, &y, opt)
}

/// Largest entrywise deviation of a series from a fixed matrix.
pub fn deviation_from(ks: &MatrixSeries, target: &[f64]) -> f64 {
    ks.values
        .iter()
        .flat_map(|v| v.iter().zip(target).map(|(a, b)| (a - b).abs()))
        .fold(0.0f64, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExcitedModes {
    /// `−max Re λ` over QKQ modes that carry kernel weight, outside the numerical kernel
    pub rate: f64,
    pub modes: usize,
    pub weight_floor: f64,
}

pub const MODAL_WEIGHT_FLOOR: f64 = 1e-8;

/// Slowest decay visible in `K(t)`: a QKQ mode `j` counts when its weight
/// `|(CᵀK r_j)| |(ℓ_j · QKu_i)|` exceeds `MODAL_WEIGHT_FLOOR` of the largest,
/// kernel modes included.
pub fn excited_rate(mori: &MoriStructure, k: MatRef<'_, f64>, qkq: MatRef<'_, f64>, kernel_tol: f64) -> Result<ExcitedModes> {
    use faer::c64;
    use faer::linalg::solvers::Solve;
    let n = qkq.nrows();
    let e = qkq
        .eigen()
        .map_err(|e| EmzError::Numerical(format!("eigensolver did not converge: {e:?}")))?;
    let u = e.U().to_owned();
    let s: Vec<c64> = e.S().column_vector().iter().copied().collect();
    let cplx = |m: MatRef<'_, f64>| Mat::from_fn(m.nrows(), m.ncols(), |i, j| c64::new(m[(i, j)], 0.0));
    let qkc = cplx((mori.q.as_ref() * k * &mori.c).as_ref());
    let ctk = cplx((mori.c.transpose() * k).as_ref());
    let x = u.partial_piv_lu().solve(&qkc);
    let y = &ctk * &u;
    let m = mori.c.ncols();
    let w: Vec<f64> = (0..n)
        .map(|j| {
            let a: f64 = (0..m).map(|i| x[(j, i)].norm()).sum();
            let b: f64 = (0..m).map(|i| y[(i, j)].norm()).sum();
            a * b
        })
        .collect();
    let thr = kernel_tol * crate::linalg::norm_2(qkq);
    let wmax = w.iter().copied().fold(0.0f64, f64::max);
    let floor = MODAL_WEIGHT_FLOOR * wmax;
    let live: Vec<usize> = (0..n).filter(|&j| s[j].norm() > thr && w[j] > floor).collect();
    if live.is_empty() {
        return Err(EmzError::Fit("no QKQ mode outside the kernel carries kernel weight".into()));
    }
    let top = live.iter().map(|&j| s[j].re).fold(f64::NEG_INFINITY, f64::max);
    Ok(ExcitedModes { rate: -top, modes: live.len(), weight_floor: floor })
}

pub fn excited_for(asm: &Assembly, kernel_tol: f64) -> Result<ExcitedModes> {
    excited_rate(&asm.mori, asm.gen.k.as_ref(), asm.qkq.as_ref(), kernel_tol)
}

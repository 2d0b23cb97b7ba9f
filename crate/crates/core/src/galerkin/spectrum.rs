use std::io::Write;
use std::path::Path;

use faer::MatRef;
use num_complex::Complex64;
use serde::Serialize;

use crate::linalg;
use crate::Result;

#[derive(Debug, Clone, Serialize)]
pub struct Eigen {
    pub re: f64,
    pub im: f64,
    pub kernel: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub label: String,
    /// sorted by decreasing real part, then increasing imaginary part
    pub eigenvalues: Vec<Eigen>,
    pub norm: f64,
    /// absolute kernel threshold `tol·‖M‖₂`
    pub kernel_threshold: f64,
    pub kernel_dim: usize,
    /// `−max{Re λ : |λ| > threshold}`; `None` when every eigenvalue is in the kernel
    pub gap: Option<f64>,
    /// `max{Re λ}` over the whole spectrum
    pub max_re: f64,
}

impl SpectrumReport {
    pub fn abscissa(&self) -> Option<f64> {
        self.gap.map(|g| -g)
    }

    pub fn values(&self) -> Vec<Complex64> {
        self.eigenvalues.iter().map(|e| Complex64::new(e.re, e.im)).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "index,re,im,kernel,gap")?;
        let gap = self.gap.map_or_else(|| "nan".to_string(), |g| format!("{g:.17e}"));
        for (i, e) in self.eigenvalues.iter().enumerate() {
            writeln!(f, "{i},{:.17e},{:.17e},{},{gap}", e.re, e.im, u8::from(e.kernel))?;
        }
        f.flush()?;
        Ok(())
    }
}

pub const KERNEL_TOL: f64 = 1e-8;

pub fn spectrum(label: &str, m: MatRef<'_, f64>, tol: f64) -> Result<SpectrumReport> {
    let norm = linalg::norm_2(m);
    let thr = tol * norm;
    let mut ev = linalg::eigenvalues(m)?;
    ev.sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im)));
    let eigenvalues: Vec<Eigen> = ev
        .iter()
        .map(|z| Eigen { re: z.re, im: z.im, kernel: z.norm() <= thr })
        .collect();
    let kernel_dim = eigenvalues.iter().filter(|e| e.kernel).count();
    let gap = eigenvalues
        .iter()
        .filter(|e| !e.kernel)
        .map(|e| e.re)
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))))
        .map(|r| -r);
    let max_re = eigenvalues.first().map_or(0.0, |e| e.re);
    Ok(SpectrumReport {
        label: label.to_string(),
        eigenvalues,
        norm,
        kernel_threshold: thr,
        kernel_dim,
        gap,
        max_re,
    })
}

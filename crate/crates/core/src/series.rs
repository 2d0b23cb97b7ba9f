//! Matrix-valued time series and their CSV form.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::{EmzError, Result};

/// `t_k = k·dt` for `k = 0..=⌊t_max/dt⌋`.
pub fn uniform_grid(t_max: f64, dt: f64) -> Result<Vec<f64>> {
    if !(t_max > 0.0 && dt > 0.0 && t_max.is_finite() && dt.is_finite()) {
        return Err(EmzError::Argument(format!(
            "need t_max > 0 and dt > 0, got t_max={t_max}, dt={dt}"
        )));
    }
    let n = (t_max / dt + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| k as f64 * dt).collect())
}

/// `M × M` matrices on a time grid, row-major per time point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixSeries {
    pub t: Vec<f64>,
    pub dim: usize,
    pub values: Vec<Vec<f64>>,
}

impl MatrixSeries {
    pub fn new(t: Vec<f64>, dim: usize) -> Self {
        let values = vec![vec![0.0; dim * dim]; t.len()];
        Self { t, dim, values }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn at(&self, k: usize, i: usize, j: usize) -> f64 {
        self.values[k][i * self.dim + j]
    }

    pub fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        self.values[k][i * self.dim + j] = v;
    }

    pub fn entry(&self, i: usize, j: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[i * self.dim + j]).collect()
    }

    /// Largest absolute entry over all times.
    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Frobenius norm at each time.
    pub fn norms(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    }

    /// Restriction to `t ≤ t_end`.
    pub fn truncated(&self, t_end: f64) -> Self {
        let n = self.t.iter().take_while(|&&t| t <= t_end + 1e-12).count();
        Self { t: self.t[..n].to_vec(), dim: self.dim, values: self.values[..n].to_vec() }
    }

    /// Columns `t, m_0_0, m_0_1, …`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(f, "t")?;
        for i in 0..self.dim {
            for j in 0..self.dim {
                write!(f, ",m_{i}_{j}")?;
            }
        }
        writeln!(f)?;
        for (t, v) in self.t.iter().zip(&self.values) {
            write!(f, "{t:.17e}")?;
            for x in v {
                write!(f, ",{x:.17e}")?;
            }
            writeln!(f)?;
        }
        f.flush()?;
        Ok(())
    }

    /// One `t,value` file per entry, named `{stem}_{i}_{j}.csv`.
    pub fn write_entries(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for i in 0..self.dim {
            for j in 0..self.dim {
                let path = dir.join(format!("{stem}_{i}_{j}.csv"));
                write_two_column(&path, &self.t, &self.entry(i, j))?;
                out.push(path);
            }
        }
        Ok(out)
    }
}

pub fn write_two_column(path: &Path, t: &[f64], y: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "t,value")?;
    for (a, b) in t.iter().zip(y) {
        writeln!(f, "{a:.17e},{b:.17e}")?;
    }
    f.flush()?;
    Ok(())
}

/// Relative L² distance `‖a − b‖/‖b‖` over all entries and times.
pub fn relative_l2(a: &MatrixSeries, b: &MatrixSeries) -> f64 {
    let n = a.len().min(b.len());
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..n {
        for (x, y) in a.values[k].iter().zip(&b.values[k]) {
            num += (x - y).powi(2);
            den += y * y;
        }
    }
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints() {
        let g = uniform_grid(10.0, 0.01).unwrap();
        assert_eq!(g.len(), 1001);
        assert!((g[1000] - 10.0).abs() < 1e-12);
        assert!(uniform_grid(-1.0, 0.1).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut s = MatrixSeries::new(vec![0.0, 0.5], 2);
        s.set(1, 0, 1, 3.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        s.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,m_0_0,m_0_1,m_1_0,m_1_1");
        let row: Vec<f64> = lines.nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(row, vec![0.5, 0.0, 3.0, 0.0, 0.0]);
        assert_eq!(s.write_entries(dir.path(), "k").unwrap().len(), 4);
    }
}

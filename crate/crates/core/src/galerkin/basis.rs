use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::model::GibbsMeasure;
use crate::{EmzError, Result};

/// Tensor basis `φ_a(q) h_b(p)` of `L²(ρ_eq)`, flat index `a·n_p + b`.
#[derive(Debug, Clone)]
pub struct GalerkinBasis {
    pub n_q: usize,
    pub n_p: usize,
    pub beta: f64,
    /// recurrence `b_{k+1} φ_{k+1} = (q − α_k) φ_k − b_k φ_{k−1}`
    pub alpha: Vec<f64>,
    pub beta_rec: Vec<f64>,
    /// `φ_a` at the quadrature nodes, `n_nodes × n_q`
    pub phi: Mat<f64>,
    pub dphi: Mat<f64>,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub gram_residual: f64,
}

impl GalerkinBasis {
    pub fn build(gibbs: &GibbsMeasure, n_q: usize, n_p: usize) -> Result<Self> {
        if n_q < 2 || n_p < 2 {
            return Err(EmzError::Argument(format!(
                "basis sizes must be at least 2, got {n_q}x{n_p}"
            )));
        }
        let nn = gibbs.nodes.len();
        if nn < 4 * n_q.max(n_p) {
            return Err(EmzError::Argument(format!(
                "{nn} quadrature nodes cannot resolve a basis of size {n_q}x{n_p}"
            )));
        }
        let x = &gibbs.nodes;
        let w = &gibbs.weights;
        let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();

        // Lanczos on diag(x) with start vector √w, full reorthogonalization.
        let mut vs: Vec<Vec<f64>> = Vec::with_capacity(n_q);
        let mut alpha = Vec::with_capacity(n_q);
        let mut beta_rec = vec![0.0; n_q];
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut v = sw.clone();
        let n0 = norm(&v);
        v.iter_mut().for_each(|a| *a /= n0);
        for k in 0..n_q {
            let mut r: Vec<f64> = v.iter().zip(x).map(|(a, q)| a * q).collect();
            let a_k: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
            alpha.push(a_k);
            vs.push(v.clone());
            if k + 1 == n_q {
                break;
            }
            for _ in 0..2 {
                for u in &vs {
                    let c: f64 = r.iter().zip(u).map(|(a, b)| a * b).sum();
                    r.iter_mut().zip(u).for_each(|(a, b)| *a -= c * b);
                }
            }
            let b = norm(&r);
            if !(b > 1e-300) {
                return Err(EmzError::IllConditioned { residual: 1.0, limit: 1e-8 });
            }
            beta_rec[k + 1] = b;
            v = r.iter().map(|a| a / b).collect();
        }

        let mut phi = Mat::zeros(nn, n_q);
        let mut dphi = Mat::zeros(nn, n_q);
        for i in 0..nn {
            let q = x[i];
            phi[(i, 0)] = 1.0;
            for k in 0..n_q - 1 {
                let prev = if k == 0 { 0.0 } else { phi[(i, k - 1)] };
                let dprev = if k == 0 { 0.0 } else { dphi[(i, k - 1)] };
                let bk = beta_rec[k];
                phi[(i, k + 1)] = ((q - alpha[k]) * phi[(i, k)] - bk * prev) / beta_rec[k + 1];
                dphi[(i, k + 1)] =
                    ((q - alpha[k]) * dphi[(i, k)] + phi[(i, k)] - bk * dprev) / beta_rec[k + 1];
            }
        }

        let mut gram_residual = 0.0f64;
        for a in 0..n_q {
            for c in 0..=a {
                let s: f64 = (0..nn).map(|i| w[i] * phi[(i, a)] * phi[(i, c)]).sum();
                let want = if a == c { 1.0 } else { 0.0 };
                gram_residual = gram_residual.max((s - want).abs());
            }
        }
        if gram_residual > 1e-8 {
            return Err(EmzError::IllConditioned { residual: gram_residual, limit: 1e-8 });
        }
        Ok(Self {
            n_q,
            n_p,
            beta: gibbs.beta,
            alpha,
            beta_rec,
            phi,
            dphi,
            nodes: x.clone(),
            weights: w.clone(),
            gram_residual,
        })
    }

    pub fn dim(&self) -> usize {
        self.n_q * self.n_p
    }

    pub fn index(&self, a: usize, b: usize) -> usize {
        a * self.n_p + b
    }

    pub fn split(&self, k: usize) -> (usize, usize) {
        (k / self.n_p, k % self.n_p)
    }

    /// `φ_a(q)` for all `a < n_q`.
    pub fn eval_q(&self, q: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_q];
        out[0] = 1.0;
        for k in 0..self.n_q - 1 {
            let prev = if k == 0 { 0.0 } else { out[k - 1] };
            out[k + 1] = ((q - self.alpha[k]) * out[k] - self.beta_rec[k] * prev) / self.beta_rec[k + 1];
        }
        out
    }

    /// Orthonormal Hermite `h_b(p) = He_b(√β p)/√(b!)` for all `b < n_p`.
    pub fn eval_p(&self, p: f64) -> Vec<f64> {
        let x = self.beta.sqrt() * p;
        let mut out = vec![0.0; self.n_p];
        out[0] = 1.0;
        if self.n_p > 1 {
            out[1] = x;
        }
        for b in 1..self.n_p - 1 {
            out[b + 1] = (x * out[b] - (b as f64).sqrt() * out[b - 1]) / ((b + 1) as f64).sqrt();
        }
        out
    }

    /// Evaluates the expansion with coefficients `c` at `(q, p)`.
    pub fn eval(&self, c: &[f64], q: f64, p: f64) -> f64 {
        let fq = self.eval_q(q);
        let fp = self.eval_p(p);
        let mut s = 0.0;
        for a in 0..self.n_q {
            for b in 0..self.n_p {
                s += c[self.index(a, b)] * fq[a] * fp[b];
            }
        }
        s
    }

    /// `⟨φ_a, f⟩` for all `a`.
    pub fn project_q(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let fv: Vec<f64> = self.nodes.iter().map(|&q| f(q)).collect();
        (0..self.n_q)
            .map(|a| {
                (0..self.nodes.len())
                    .map(|i| self.weights[i] * self.phi[(i, a)] * fv[i])
                    .sum()
            })
            .collect()
    }

    /// Matrix `⟨φ_c, f φ_a⟩`.
    pub fn multiplication_q(&self, f: impl Fn(f64) -> f64) -> Mat<f64> {
        let fv: Vec<f64> = self.nodes.iter().map(|&q| f(q)).collect();
        Mat::from_fn(self.n_q, self.n_q, |c, a| {
            (0..self.nodes.len())
                .map(|i| self.weights[i] * fv[i] * self.phi[(i, c)] * self.phi[(i, a)])
                .sum()
        })
    }

    /// Matrix `⟨φ_c, φ_a′⟩`.
    pub fn derivative_q(&self) -> Mat<f64> {
        Mat::from_fn(self.n_q, self.n_q, |c, a| {
            (0..self.nodes.len())
                .map(|i| self.weights[i] * self.phi[(i, c)] * self.dphi[(i, a)])
                .sum()
        })
    }

    /// Coefficients of `q^i p^j`; errors when the monomial is not representable.
    pub fn monomial(&self, i: usize, j: usize) -> Result<Vec<f64>> {
        if i >= self.n_q || j >= self.n_p {
            return Err(EmzError::Argument(format!(
                "monomial q^{i} p^{j} exceeds the {}x{} basis",
                self.n_q, self.n_p
            )));
        }
        let cq = self.project_q(|q| q.powi(i as i32));
        // p^j through the ladder √β p h_b = √(b+1) h_{b+1} + √b h_{b−1}
        let mut cp = vec![0.0; self.n_p];
        cp[0] = 1.0;
        let s = 1.0 / self.beta.sqrt();
        for _ in 0..j {
            let mut next = vec![0.0; self.n_p];
            for b in 0..self.n_p {
                if cp[b] == 0.0 {
                    continue;
                }
                if b + 1 < self.n_p {
                    next[b + 1] += s * ((b + 1) as f64).sqrt() * cp[b];
                }
                if b > 0 {
                    next[b - 1] += s * (b as f64).sqrt() * cp[b];
                }
            }
            cp = next;
        }
        let mut out = vec![0.0; self.dim()];
        for a in 0..self.n_q {
            for b in 0..self.n_p {
                out[self.index(a, b)] = cq[a] * cp[b];
            }
        }
        Ok(out)
    }
}

/// One observable term `coef · q^q_pow · p^p_pow`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coef: f64,
    pub q_pow: usize,
    pub p_pow: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Observable {
    /// `"p"` is `h_1(p)`, `"q"` is `φ_1(q)`; both standardized
    Named(String),
    Polynomial(Vec<Monomial>),
}

impl Observable {
    pub fn coefficients(&self, basis: &GalerkinBasis) -> Result<Vec<f64>> {
        let mut out = vec![0.0; basis.dim()];
        match self {
            Observable::Named(s) => match s.as_str() {
                "p" => out[basis.index(0, 1)] = 1.0,
                "q" => out[basis.index(1, 0)] = 1.0,
                other => {
                    return Err(EmzError::Config(format!(
                        "unknown observable `{other}`, expected \"p\", \"q\" or a monomial table"
                    )))
                }
            },
            Observable::Polynomial(terms) => {
                for t in terms {
                    let c = basis.monomial(t.q_pow, t.p_pow)?;
                    out.iter_mut().zip(c).for_each(|(o, v)| *o += t.coef * v);
                }
            }
        }
        Ok(out)
    }

    /// The observable as raw monomials in `(q, p)`.
    pub fn monomials(&self, basis: &GalerkinBasis) -> Result<Vec<Monomial>> {
        match self {
            Observable::Named(s) => match s.as_str() {
                "p" => Ok(vec![Monomial { coef: basis.beta.sqrt(), q_pow: 0, p_pow: 1 }]),
                "q" => {
                    let b1 = basis.beta_rec[1];
                    Ok(vec![
                        Monomial { coef: 1.0 / b1, q_pow: 1, p_pow: 0 },
                        Monomial { coef: -basis.alpha[0] / b1, q_pow: 0, p_pow: 0 },
                    ])
                }
                other => Err(EmzError::Config(format!(
                    "unknown observable `{other}`, expected \"p\", \"q\" or a monomial table"
                ))),
            },
            Observable::Polynomial(terms) => Ok(terms.clone()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Observable::Named(s) => s.clone(),
            Observable::Polynomial(terms) => terms
                .iter()
                .map(|t| format!("{}*q^{}*p^{}", t.coef, t.q_pow, t.p_pow))
                .collect::<Vec<_>>()
                .join("+"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Potential;

    #[test]
    fn harmonic_q_polys_are_hermite() {
        let g = GibbsMeasure::build(&Potential::harmonic(1.0), 1.0, 12.0, 256).unwrap();
        let b = GalerkinBasis::build(&g, 6, 4).unwrap();
        let fq = b.eval_q(0.7);
        // He_3(x)/√6
        let he3 = (0.7f64.powi(3) - 3.0 * 0.7) / 6.0f64.sqrt();
        assert!((fq[3].abs() - he3.abs()).abs() < 1e-12);
        assert!(b.alpha.iter().all(|a| a.abs() < 1e-12));
        for k in 1..6 {
            assert!((b.beta_rec[k] - (k as f64).sqrt()).abs() < 1e-11);
        }
        assert!(b.gram_residual < 1e-12);
    }

    #[test]
    fn monomial_round_trip() {
        let g = GibbsMeasure::build(&Potential::quartic(), 1.0, 5.0, 400).unwrap();
        let b = GalerkinBasis::build(&g, 10, 6).unwrap();
        let c = b.monomial(3, 2).unwrap();
        for (q, p) in [(0.3, -1.1), (1.7, 0.4)] {
            let want = q * q * q * p * p;
            assert!((b.eval(&c, q, p) - want).abs() < 1e-9);
        }
        assert!(b.monomial(10, 0).is_err());
    }
}

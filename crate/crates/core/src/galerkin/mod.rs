//! Gibbs-weighted Galerkin discretization of the Langevin generator and the
//! projections built on it.

pub mod basis;
pub mod kernel;
pub mod operators;
pub mod spectrum;

pub use basis::{GalerkinBasis, Monomial, Observable};
pub use kernel::{classify_kernel, kernel_projections, KernelClassification, KernelProjections, ProjectionReport};
pub use operators::{
    assemble_auxiliary_a, assemble_generator, assemble_mori, assemble_pi, assemble_qkq, structure_report, Generator,
    MoriStructure, StructureReport,
};
pub use spectrum::{spectrum, SpectrumReport, KERNEL_TOL};

use faer::Mat;

use crate::model::{auto_halfwidth, GibbsMeasure, Potential};
use crate::Result;

/// Quadrature defaults for a basis of size `n_q × n_p`.
pub fn default_halfwidth(pot: &Potential, beta: f64, n_q: usize) -> f64 {
    auto_halfwidth(pot, beta, 40.0 + 4.0 * n_q as f64)
}

pub fn default_nodes(n_q: usize, n_p: usize) -> usize {
    (4 * n_q.max(n_p)).max(600)
}

#[derive(Debug, Clone)]
pub struct Assembly {
    pub gibbs: GibbsMeasure,
    pub basis: GalerkinBasis,
    pub gen: Generator,
    pub pi: Mat<f64>,
    pub mori: MoriStructure,
    pub a: Mat<f64>,
    pub qkq: Mat<f64>,
}

#[derive(Debug, Clone)]
pub struct AssemblyParams {
    pub beta: f64,
    pub gamma: f64,
    pub n_q: usize,
    pub n_p: usize,
    pub halfwidth: Option<f64>,
    pub nodes: Option<usize>,
}

impl AssemblyParams {
    pub fn new(beta: f64, gamma: f64, n_q: usize, n_p: usize) -> Self {
        Self { beta, gamma, n_q, n_p, halfwidth: None, nodes: None }
    }
}

impl Assembly {
    pub fn build(pot: &Potential, prm: &AssemblyParams, observables: &[Observable]) -> Result<Self> {
        let l = prm.halfwidth.unwrap_or_else(|| default_halfwidth(pot, prm.beta, prm.n_q));
        let nodes = prm.nodes.unwrap_or_else(|| default_nodes(prm.n_q, prm.n_p));
        let gibbs = GibbsMeasure::build(pot, prm.beta, l, nodes)?;
        let basis = GalerkinBasis::build(&gibbs, prm.n_q, prm.n_p)?;
        let gen = assemble_generator(&basis, pot, prm.gamma)?;
        let pi = assemble_pi(&basis);
        let coeffs = observables
            .iter()
            .map(|o| o.coefficients(&basis))
            .collect::<Result<Vec<_>>>()?;
        let labels = observables.iter().map(Observable::label).collect();
        let mori = assemble_mori(gen.k.as_ref(), &coeffs, labels)?;
        let a = assemble_auxiliary_a(gen.l.as_ref(), pi.as_ref());
        let qkq = assemble_qkq(gen.k.as_ref(), mori.q.as_ref());
        Ok(Self { gibbs, basis, gen, pi, mori, a, qkq })
    }

    /// Same discretization, different observables.
    pub fn with_observables(&self, observables: &[Observable]) -> Result<Self> {
        let coeffs = observables
            .iter()
            .map(|o| o.coefficients(&self.basis))
            .collect::<Result<Vec<_>>>()?;
        let labels = observables.iter().map(Observable::label).collect();
        let mori = assemble_mori(self.gen.k.as_ref(), &coeffs, labels)?;
        let qkq = assemble_qkq(self.gen.k.as_ref(), mori.q.as_ref());
        Ok(Self { mori, qkq, ..self.clone() })
    }

    pub fn structure(&self) -> Result<StructureReport> {
        structure_report(&self.gen, self.pi.as_ref(), &self.mori, self.a.as_ref(), self.qkq.as_ref())
    }

    pub fn spectrum_k(&self, tol: f64) -> Result<SpectrumReport> {
        spectrum("K", self.gen.k.as_ref(), tol)
    }

    pub fn spectrum_qkq(&self, tol: f64) -> Result<SpectrumReport> {
        spectrum("QKQ", self.qkq.as_ref(), tol)
    }

    pub fn projections(&self, tol: f64) -> Result<KernelProjections> {
        kernel_projections(self.gen.k.as_ref(), self.qkq.as_ref(), self.mori.q.as_ref(), tol)
    }

    pub fn classify(&self, tol: f64) -> Result<KernelClassification> {
        classify_kernel(self.qkq.as_ref(), self.gen.k.as_ref(), self.mori.p.as_ref(), tol)
    }
}

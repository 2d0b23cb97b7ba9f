//! Run configuration, the subcommand pipeline and artifact files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dynamics::{self, Init, Scheme, SimConfig, TrajectoryStore};
use crate::galerkin::{default_halfwidth, default_nodes, Assembly, AssemblyParams, Observable, KERNEL_TOL};
use crate::hypo::{self, Target};
use crate::linalg;
use crate::model::{check_conditions, GibbsMeasure, Potential, PotentialKind};
use crate::mori::{self, FitMode, FitOptions};
use crate::series::{relative_l2, write_two_column, MatrixSeries};
use crate::{EmzError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    #[serde(default)]
    pub coefficients: Vec<f64>,
    #[serde(default = "one")]
    pub dimension: usize,
}

fn one() -> usize {
    1
}

impl PotentialSpec {
    pub fn build(&self) -> Result<Potential> {
        Potential::new(self.kind, self.coefficients.clone(), self.dimension)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    #[serde(default = "d_n")]
    pub n_q: usize,
    #[serde(default = "d_n")]
    pub n_p: usize,
    #[serde(default)]
    pub domain_halfwidth: Option<f64>,
    #[serde(default)]
    pub quad_nodes: Option<usize>,
}

fn d_n() -> usize {
    20
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self { n_q: d_n(), n_p: d_n(), domain_halfwidth: None, quad_nodes: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(default = "d_tmax")]
    pub t_max: f64,
    #[serde(default = "d_dtout")]
    pub dt_out: f64,
}

fn d_tmax() -> f64 {
    10.0
}
fn d_dtout() -> f64 {
    0.01
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self { t_max: d_tmax(), dt_out: d_dtout() }
    }
}

/// How `C′` enters the Volterra inversion of trajectory data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Derivative {
    /// `E[u_k(0) (Ku_i)(τ)]` measured on the trajectories
    Generator,
    /// centered differences of the measured `C`
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_steps")]
    pub n_steps: usize,
    #[serde(default = "d_reps")]
    pub n_replicas: usize,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_scheme")]
    pub scheme: Scheme,
    #[serde(default = "d_init")]
    pub init: Init,
    #[serde(default = "d_stride")]
    pub record_stride: usize,
    #[serde(default = "d_lag")]
    pub max_lag_time: f64,
    #[serde(default = "d_deriv")]
    pub derivative: Derivative,
}

fn d_dt() -> f64 {
    1e-3
}
fn d_steps() -> usize {
    1_000_000
}
fn d_reps() -> usize {
    64
}
fn d_seed() -> u64 {
    1
}
fn d_scheme() -> Scheme {
    Scheme::Baoab
}
fn d_init() -> Init {
    Init::Equilibrium
}
fn d_stride() -> usize {
    20
}
fn d_lag() -> f64 {
    3.0
}
fn d_deriv() -> Derivative {
    Derivative::Generator
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            dt: d_dt(),
            n_steps: d_steps(),
            n_replicas: d_reps(),
            seed: d_seed(),
            scheme: d_scheme(),
            init: d_init(),
            record_stride: d_stride(),
            max_lag_time: d_lag(),
            derivative: d_deriv(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "d_ktol")]
    pub kernel_tol: f64,
    #[serde(default = "d_tail")]
    pub fit_tail_fraction: f64,
    #[serde(default = "d_fit")]
    pub fit_mode: FitMode,
    #[serde(default = "d_xval")]
    pub cross_validation: f64,
}

fn d_ktol() -> f64 {
    KERNEL_TOL
}
fn d_tail() -> f64 {
    0.5
}
fn d_fit() -> FitMode {
    FitMode::Direct
}
fn d_xval() -> f64 {
    0.1
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { kernel_tol: d_ktol(), fit_tail_fraction: d_tail(), fit_mode: d_fit(), cross_validation: d_xval() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateConfig {
    #[serde(default = "d_grid")]
    pub n_delta: usize,
    #[serde(default = "d_grid")]
    pub n_eps: usize,
    #[serde(default = "d_samples")]
    pub entropy_samples: usize,
    #[serde(default = "d_eseed")]
    pub entropy_seed: u64,
    #[serde(default = "d_tmax")]
    pub entropy_t_max: f64,
    #[serde(default = "d_edt")]
    pub entropy_dt: f64,
}

fn d_grid() -> usize {
    200
}
fn d_samples() -> usize {
    100
}
fn d_eseed() -> u64 {
    0
}
fn d_edt() -> f64 {
    0.05
}

impl Default for CertificateConfig {
    fn default() -> Self {
        Self {
            n_delta: d_grid(),
            n_eps: d_grid(),
            entropy_samples: d_samples(),
            entropy_seed: d_eseed(),
            entropy_t_max: d_tmax(),
            entropy_dt: d_edt(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionsConfig {
    /// evaluation grid `[−R, R]`; defaults to the quadrature domain
    #[serde(default)]
    pub grid_halfwidth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub potential: PotentialSpec,
    #[serde(default = "d_one_f")]
    pub beta: f64,
    #[serde(default = "d_one_f")]
    pub gamma: f64,
    #[serde(default)]
    pub basis: BasisConfig,
    #[serde(default = "d_obs")]
    pub observables: Vec<Observable>,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub certificate: CertificateConfig,
    #[serde(default)]
    pub conditions: ConditionsConfig,
    /// also dump K and QKQ as `i,j,value` CSV
    #[serde(default)]
    pub export_matrices: bool,
    #[serde(default = "d_out")]
    pub output_dir: PathBuf,
}

fn d_one_f() -> f64 {
    1.0
}
fn d_obs() -> Vec<Observable> {
    vec![Observable::Named("p".into())]
}
fn d_out() -> PathBuf {
    PathBuf::from("emz-out")
}

/// Parses JSON config text without resolving defaults that depend on the potential.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let msg = e.inner().to_string().replace("unknown field", "unknown key");
        EmzError::Config(if path == "." { msg } else { format!("at `{path}`: {msg}") })
    })
}

impl RunConfig {
    /// Fills potential-dependent defaults and validates ranges.
    pub fn resolve(mut self) -> Result<Self> {
        let pot = self.potential.build()?;
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(EmzError::Config(format!("`{name}` must be positive, got {v}")))
            }
        };
        pos("beta", self.beta)?;
        pos("gamma", self.gamma)?;
        pos("time.t_max", self.time.t_max)?;
        pos("time.dt_out", self.time.dt_out)?;
        pos("ensemble.dt", self.ensemble.dt)?;
        pos("ensemble.max_lag_time", self.ensemble.max_lag_time)?;
        let tf = self.tolerances.fit_tail_fraction;
        if !(tf > 0.0 && tf <= 1.0) {
            return Err(EmzError::Config(format!("`tolerances.fit_tail_fraction` must lie in (0, 1], got {tf}")));
        }
        if self.observables.is_empty() {
            return Err(EmzError::Config("`observables` must name at least one observable".into()));
        }
        let b = &mut self.basis;
        let l = *b.domain_halfwidth.get_or_insert_with(|| default_halfwidth(&pot, self.beta, b.n_q));
        b.quad_nodes.get_or_insert_with(|| default_nodes(b.n_q, b.n_p));
        self.conditions.grid_halfwidth.get_or_insert(l);
        Ok(self)
    }

    pub fn assembly_params(&self) -> AssemblyParams {
        AssemblyParams {
            beta: self.beta,
            gamma: self.gamma,
            n_q: self.basis.n_q,
            n_p: self.basis.n_p,
            halfwidth: self.basis.domain_halfwidth,
            nodes: self.basis.quad_nodes,
        }
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let e = &self.ensemble;
        Ok(SimConfig {
            potential: self.potential.build()?,
            beta: self.beta,
            gamma: self.gamma,
            dt: e.dt,
            n_steps: e.n_steps,
            n_replicas: e.n_replicas,
            seed: e.seed,
            scheme: e.scheme,
            init: e.init.clone(),
            record_stride: e.record_stride,
            allow_zero_friction: false,
        })
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions { mode: self.tolerances.fit_mode, ..FitOptions::direct(self.tolerances.fit_tail_fraction) }
    }
}

/// Reads, resolves, and writes `resolved_config.json` into the output directory.
pub fn load_config(path: &Path, out: Option<&Path>) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EmzError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg = parse_config_str(&text)?;
    if let Some(o) = out {
        cfg.output_dir = o.to_path_buf();
    }
    let cfg = cfg.resolve()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("resolved_config.json"), &cfg)?;
    Ok(cfg)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, v: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json(path: &Path) -> Result<Option<Value>> {
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&std::fs::read_to_string(path)?)?))
}

fn result_json<T: Serialize, E: std::borrow::Borrow<EmzError>>(r: &std::result::Result<T, E>) -> Value {
    match r {
        Ok(v) => serde_json::to_value(v).unwrap_or(Value::Null),
        Err(e) => json!({ "error": { "kind": e.borrow().kind(), "message": e.borrow().to_string() } }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Gibbs quadrature and (C1)-(C3) growth conditions
    Check,
    /// spectra of K and QKQ, structure residuals, kernel classification
    Spectrum,
    /// memory kernel, fluctuation force and ACF from the Galerkin operators
    Kernel,
    /// Volterra kernel from trajectories (simulates first when needed)
    Extract,
    /// hypocoercivity constants, certificates and entropy checks
    Certify,
    /// Langevin ensemble and trajectory correlations
    Simulate,
    /// collect artifacts into report.json
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Spectrum => "spectrum",
            Command::Kernel => "kernel",
            Command::Extract => "extract",
            Command::Certify => "certify",
            Command::Simulate => "simulate",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "emz", version, about = "Mori-Zwanzig memory kernels and hypocoercivity checks for Langevin dynamics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, env = "EMZ_THREADS")]
    pub threads: Option<usize>,
}

/// Entry point shared by the binary and the tests.
pub fn run(cmd: Command, cfg: &RunConfig) -> Result<PathBuf> {
    let t0 = Instant::now();
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out)?;
    let mut summary = match cmd {
        Command::Check => cmd_check(cfg)?,
        Command::Spectrum => cmd_spectrum(cfg)?,
        Command::Kernel => cmd_kernel(cfg)?,
        Command::Extract => cmd_extract(cfg)?,
        Command::Certify => cmd_certify(cfg)?,
        Command::Simulate => cmd_simulate(cfg)?,
        Command::Report => cmd_report(cfg)?,
    };
    summary["elapsed_s"] = json!(t0.elapsed().as_secs_f64());
    let path = out.join(format!("{}.json", cmd.name()));
    write_json(&path, &summary)?;
    Ok(path)
}

fn assemble(cfg: &RunConfig) -> Result<Assembly> {
    Assembly::build(&cfg.potential.build()?, &cfg.assembly_params(), &cfg.observables)
}

fn series_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let d = cfg.output_dir.join("series");
    std::fs::create_dir_all(&d)?;
    Ok(d)
}

fn cmd_check(cfg: &RunConfig) -> Result<Value> {
    let pot = cfg.potential.build()?;
    let l = cfg.basis.domain_halfwidth.unwrap_or_else(|| default_halfwidth(&pot, cfg.beta, cfg.basis.n_q));
    let nodes = cfg.basis.quad_nodes.unwrap_or_else(|| default_nodes(cfg.basis.n_q, cfg.basis.n_p));
    let g = GibbsMeasure::build(&pot, cfg.beta, l, nodes)?;
    let rep = check_conditions(&pot, &g, cfg.conditions.grid_halfwidth.unwrap_or(l));
    Ok(json!({
        "all_pass": rep.all_pass(),
        "conditions": rep,
        "gibbs": {
            "z_q": g.z_q,
            "z_check": g.z_check,
            "z_tolerance": 1e-12,
            "normalization": g.expect(|_| 1.0),
            "halfwidth": g.halfwidth,
            "nodes": g.nodes.len(),
            "edge_weight": g.edge_weight,
            "confinement_limit": crate::model::CONFINEMENT,
        },
    }))
}

fn cmd_spectrum(cfg: &RunConfig) -> Result<Value> {
    let asm = assemble(cfg)?;
    let tol = cfg.tolerances.kernel_tol;
    let structure = asm.structure()?;
    let sk = asm.spectrum_k(tol)?;
    let sq = asm.spectrum_qkq(tol)?;
    let out = &cfg.output_dir;
    sk.write_csv(&out.join("spectrum_K.csv"))?;
    sq.write_csv(&out.join("spectrum_QKQ.csv"))?;
    if cfg.export_matrices {
        linalg::write_matrix_csv(asm.gen.k.as_ref(), &out.join("matrix_K.csv"))?;
        linalg::write_matrix_csv(asm.qkq.as_ref(), &out.join("matrix_QKQ.csv"))?;
    }
    let proj = asm.projections(tol);
    let class = asm.classify(tol);
    let excited = mori::excited_for(&asm, tol);
    let summary = |s: &crate::galerkin::SpectrumReport| {
        json!({
            "gap": s.gap,
            "max_re": s.max_re,
            "kernel_dim": s.kernel_dim,
            "kernel_threshold": s.kernel_threshold,
            "norm": s.norm,
            "eigenvalues": s.eigenvalues.len(),
        })
    };
    let projection = proj.as_ref().map(|p| p.report.clone());
    let w_free = class.as_ref().map(|c| c.w_type == 0).unwrap_or(false);
    Ok(json!({
        "tolerance": tol,
        "K": summary(&sk),
        "QKQ": summary(&sq),
        "gap_comparison": {
            "gap_K": sk.gap,
            "gap_QKQ": sq.gap,
            "qkq_slower": match (sk.gap, sq.gap) { (Some(a), Some(b)) => Some(b < a), _ => None },
        },
        "excited_qkq_rate": result_json(&excited),
        "structure": structure,
        "kernel_projection": result_json(&projection),
        "kernel_projection_asserted": w_free,
        "kernel_projection_tolerance": 1e-8,
        "classification": result_json(&class),
        "basis": { "n_q": asm.basis.n_q, "n_p": asm.basis.n_p, "gram_residual": asm.basis.gram_residual },
    }))
}

fn fit_json(r: Result<mori::DecayFit>) -> Value {
    result_json(&r)
}

fn cmd_kernel(cfg: &RunConfig) -> Result<Value> {
    let asm = assemble(cfg)?;
    let (tm, dt) = (cfg.time.t_max, cfg.time.dt_out);
    let proj = asm.projections(cfg.tolerances.kernel_tol);
    let pi0q = proj.as_ref().ok().map(|p| p.pi0_q.as_ref());
    let ks = mori::kernel_for(&asm, pi0q, tm, dt)?;
    let acf = mori::acf_for(&asm, tm, dt)?;
    let force = mori::force_for(&asm, tm, dt);
    let out = &cfg.output_dir;
    let sd = series_dir(cfg)?;
    ks.series.write_csv(&out.join("kernel_galerkin.csv"))?;
    ks.series.write_entries(&sd, "kernel_galerkin")?;
    acf.series.write_csv(&out.join("acf_galerkin.csv"))?;
    acf.series.write_entries(&sd, "acf_galerkin")?;
    let m = ks.series.dim;
    let opt = cfg.fit_options();
    let mut kfits = BTreeMap::new();
    let mut afits = BTreeMap::new();
    for i in 0..m {
        for j in 0..m {
            kfits.insert(format!("{i}_{j}"), fit_json(mori::kernel_entry_fit(&ks, i, j, opt)));
            let eq = acf.equilibrium[i * m + j];
            let y: Vec<f64> = acf.series.entry(i, j).iter().map(|v| v - eq).collect();
            afits.insert(format!("{i}_{j}"), fit_json(mori::decay_fit(&acf.series.t, &y, opt)));
        }
    }
    let force_json = match &force {
        Ok(f) => {
            f.force_acf.write_csv(&out.join("force_galerkin.csv"))?;
            f.force_acf.write_entries(&sd, "force_acf_galerkin")?;
            for (i, n) in f.force_norm.iter().enumerate() {
                write_two_column(&sd.join(format!("force_norm_galerkin_{i}.csv")), &f.t, n)?;
            }
            json!({
                "max_norm": f.force_norm.iter().flatten().fold(0.0f64, |a, b| a.max(*b)),
                "acf0": f.force_acf.values[0],
                "equilibrium": f.equilibrium,
                "equilibrium_sq": f.equilibrium_sq,
            })
        }
        Err(e) => json!({ "error": { "kind": e.kind(), "message": e.to_string() } }),
    };
    // the kernel should decay to K∞; one that never leaves K(0) is flagged
    let k0 = &ks.series.values[0];
    let constant = mori::deviation_from(&ks.series, k0);
    Ok(json!({
        "labels": asm.mori.labels,
        "gram": asm.mori.g.col_iter().flat_map(|c| c.iter().copied().collect::<Vec<_>>()).collect::<Vec<f64>>(),
        "omega": (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| asm.mori.omega[(i, j)]).collect::<Vec<f64>>(),
        "kernel": {
            "max_abs": ks.series.max_abs(),
            "equilibrium_explicit": ks.equilibrium_explicit,
            "equilibrium_spectral": ks.equilibrium_spectral,
            "equilibrium_deviation": ks.equilibrium_spectral.as_ref().map(|s| s.iter().zip(&ks.equilibrium_explicit).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()))),
            "t0_consistency": ks.t0_consistency(),
            "t0_tolerance": 1e-10,
            "deviation_from_k0": constant,
            "constant_kernel": constant <= 1e-8,
            "fits": kfits,
        },
        "acf": { "fits": afits, "equilibrium": acf.equilibrium },
        "force": force_json,
        "kernel_projection": result_json(&proj.as_ref().map(|p| p.report.clone())),
        "fit_options": { "tail_fraction": opt.tail_fraction, "mode": opt.mode, "floor": opt.floor },
    }))
}

fn ensemble_fingerprint(cfg: &RunConfig) -> Value {
    json!({
        "potential": cfg.potential,
        "beta": cfg.beta,
        "gamma": cfg.gamma,
        "ensemble": cfg.ensemble,
        "observables": cfg.observables,
    })
}

/// Trajectory correlations for the configured observables.
pub struct TrajectoryData {
    pub store: TrajectoryStore,
    pub acf: dynamics::AcfEstimate,
    pub dacf: dynamics::AcfEstimate,
    pub max_lag: usize,
}

fn trajectory_correlations(cfg: &RunConfig, store: TrajectoryStore) -> Result<TrajectoryData> {
    let pot = cfg.potential.build()?;
    let g = GibbsMeasure::build(
        &pot,
        cfg.beta,
        cfg.basis.domain_halfwidth.unwrap_or_else(|| default_halfwidth(&pot, cfg.beta, cfg.basis.n_q)),
        cfg.basis.quad_nodes.unwrap_or_else(|| default_nodes(cfg.basis.n_q, cfg.basis.n_p)),
    )?;
    let basis = crate::galerkin::GalerkinBasis::build(&g, cfg.basis.n_q, cfg.basis.n_p)?;
    let obs = dynamics::phase_observables(&cfg.observables, &basis)?;
    let max_lag = (cfg.ensemble.max_lag_time / store.dt_record + 1e-9).floor() as usize;
    let (acf, dacf) = dynamics::ensemble_acf_with_derivative(&store, &obs, &pot, cfg.gamma, cfg.beta, max_lag)?;
    Ok(TrajectoryData { store, acf, dacf, max_lag })
}

fn cmd_simulate(cfg: &RunConfig) -> Result<Value> {
    let store = dynamics::integrate(&cfg.sim_config()?)?;
    let out = &cfg.output_dir;
    store.write_binary(&out.join("trajectory.bin"))?;
    let p2: Vec<f64> = store
        .replicas
        .iter()
        .map(|r| r.iter().map(|x| x[1] * x[1]).sum::<f64>() / r.len() as f64)
        .collect();
    let nr = p2.len() as f64;
    let p2m = p2.iter().sum::<f64>() / nr;
    let p2se = (p2.iter().map(|x| (x - p2m).powi(2)).sum::<f64>() / (nr - 1.0).max(1.0) / nr).sqrt();
    let td = trajectory_correlations(cfg, store)?;
    td.acf.mean.write_csv(&out.join("acf_trajectory.csv"))?;
    td.acf.se.write_csv(&out.join("acf_trajectory_se.csv"))?;
    td.dacf.mean.write_csv(&out.join("dacf_trajectory.csv"))?;
    let sd = series_dir(cfg)?;
    td.acf.mean.write_entries(&sd, "acf_trajectory")?;
    Ok(json!({
        "fingerprint": ensemble_fingerprint(cfg),
        "records": td.store.records,
        "dt_record": td.store.dt_record,
        "replicas": td.store.replicas.len(),
        "discarded": td.store.discarded,
        "max_lag": td.max_lag,
        "p2_mean": p2m,
        "p2_se": p2se,
        "c0": td.acf.mean.values[0],
        "c0_se": td.acf.se.values[0],
    }))
}

fn load_or_simulate(cfg: &RunConfig) -> Result<TrajectoryStore> {
    let out = &cfg.output_dir;
    let fresh = read_json(&out.join("simulate.json"))?
        .and_then(|v| v.get("fingerprint").cloned())
        .is_some_and(|f| f == ensemble_fingerprint(cfg));
    let bin = out.join("trajectory.bin");
    if !(fresh && bin.exists()) {
        run(Command::Simulate, cfg)?;
    }
    TrajectoryStore::read_binary(&bin)
}

fn cmd_extract(cfg: &RunConfig) -> Result<Value> {
    let store = load_or_simulate(cfg)?;
    let td = trajectory_correlations(cfg, store)?;
    let asm = assemble(cfg)?;
    let omega = asm.mori.omega.as_ref();
    let fd = dynamics::volterra_extract(&td.acf.mean, omega)?;
    let gen = dynamics::volterra_extract_with_derivative(&td.acf.mean, &td.dacf.mean, omega)?;
    let chosen = match cfg.ensemble.derivative {
        Derivative::Generator => &gen,
        Derivative::FiniteDifference => &fd,
    };
    let galerkin = mori::kernel_for(&asm, None, td.max_lag as f64 * td.store.dt_record, td.store.dt_record)?;
    let gk = &galerkin.series;
    let n = gk.len().min(chosen.kernel.len());
    let trim = |s: &MatrixSeries| MatrixSeries { t: s.t[..n].to_vec(), dim: s.dim, values: s.values[..n].to_vec() };
    let gk = trim(gk);
    let err = relative_l2(&trim(&chosen.kernel), &gk);
    let err_fd = relative_l2(&trim(&fd.kernel), &gk);
    let err_gen = relative_l2(&trim(&gen.kernel), &gk);
    let out = &cfg.output_dir;
    chosen.kernel.write_csv(&out.join("kernel_volterra.csv"))?;
    fd.kernel.write_csv(&out.join("kernel_volterra_fd.csv"))?;
    gk.write_csv(&out.join("kernel_galerkin_lagged.csv"))?;
    let sd = series_dir(cfg)?;
    chosen.kernel.write_entries(&sd, "kernel_volterra")?;
    Ok(json!({
        "derivative": cfg.ensemble.derivative,
        "window": [0.0, gk.t[n - 1]],
        "relative_l2": err,
        "relative_l2_tolerance": cfg.tolerances.cross_validation,
        "pass": err < cfg.tolerances.cross_validation,
        "relative_l2_generator": err_gen,
        "relative_l2_finite_difference": err_fd,
        "residual": chosen.residual,
        "residual_limit": dynamics::VOLTERRA_RESIDUAL_LIMIT,
        "residual_warning": chosen.warning,
        "c0_cond": chosen.c0_cond,
    }))
}

fn cmd_certify(cfg: &RunConfig) -> Result<Value> {
    let asm = assemble(cfg)?;
    let tol = cfg.tolerances.kernel_tol;
    let c = hypo::estimate_constants(&asm, true)?;
    let cc = &cfg.certificate;
    let out = &cfg.output_dir;
    let mut files = Vec::new();
    let mut summary = serde_json::Map::new();
    for target in [Target::K, Target::QKQ] {
        let (m, name) = match target {
            Target::K => (asm.gen.k.as_ref(), "K"),
            Target::QKQ => (asm.qkq.as_ref(), "QKQ"),
        };
        let gap = crate::galerkin::spectrum(name, m, tol)?.gap;
        let cert = hypo::certify(&c, target, cc.n_delta, cc.n_eps, gap);
        let entropy = if cert.success {
            let z = match target {
                Target::K => hypo::k_subspace(asm.basis.dim()),
                Target::QKQ => hypo::qkq_subspace(&asm, tol)?,
            };
            let e = hypo::entropy_check(
                asm.a.as_ref(),
                cert.epsilon,
                cert.kappa,
                m,
                z.as_ref(),
                cc.entropy_samples,
                cc.entropy_seed,
                cc.entropy_t_max,
                cc.entropy_dt,
            )?;
            let g0: Vec<f64> = z.col(0).iter().copied().collect();
            let s = hypo::entropy_monitor(asm.a.as_ref(), cert.epsilon, m, z.as_ref(), &g0, cc.entropy_t_max, cc.entropy_dt)?;
            write_two_column(&series_dir(cfg)?.join(format!("entropy_{name}.csv")), &s.t, &s.h)?;
            Some(e)
        } else {
            None
        };
        let mut v = serde_json::to_value(&cert)?;
        v["entropy"] = serde_json::to_value(&entropy)?;
        let f = out.join(format!("certificate_{name}.json"));
        write_json(&f, &v)?;
        files.push(f.display().to_string());
        summary.insert(name.into(), json!({ "success": cert.success, "lambda_cert": v["lambda_cert"], "gap": gap }));
    }
    let lk = summary["K"]["lambda_cert"].as_f64();
    let lq = summary["QKQ"]["lambda_cert"].as_f64();
    Ok(json!({
        "constants": c,
        "targets": summary,
        "qkq_not_above_k": match (lk, lq) { (Some(a), Some(b)) => Some(b <= a), _ => None },
        "files": files,
    }))
}

fn claim(name: &str, value: Option<f64>, tol: f64, le: bool) -> Value {
    let pass = value.map(|v| if le { v <= tol } else { v < tol });
    json!({ "claim": name, "value": value, "tolerance": tol, "pass": pass })
}

fn cmd_report(cfg: &RunConfig) -> Result<Value> {
    let out = &cfg.output_dir;
    let spectrum = read_json(&out.join("spectrum.json"))?
        .ok_or_else(|| EmzError::MissingDependency("spectrum".into()))?;
    let mut missing = Vec::new();
    let mut get = |name: &str| {
        let v = read_json(&out.join(format!("{name}.json"))).ok().flatten();
        if v.is_none() {
            missing.push(name.to_string());
        }
        v.unwrap_or(Value::Null)
    };
    let check = get("check");
    let kernel = get("kernel");
    let simulate = get("simulate");
    let extract = get("extract");
    let cert_k = get("certificate_K");
    let cert_q = get("certificate_QKQ");
    let f = |v: &Value, p: &str| v.pointer(p).and_then(Value::as_f64);
    let st = "/structure";
    let mut claims = vec![
        claim("K = D - L", f(&spectrum, &format!("{st}/split_residual")), 1e-10, true),
        claim("sym(K) <= 0", f(&spectrum, &format!("{st}/k_sym_max_eig")), 1e-10, true),
        claim("sym(QKQ) <= 0", f(&spectrum, &format!("{st}/qkq_sym_max_eig")), 1e-10, true),
        claim("max Re eig(QKQ)", f(&spectrum, "/QKQ/max_re"), 1e-10, true),
        claim("Pi L Pi = 0", f(&spectrum, &format!("{st}/h1")), 1e-10, true),
        claim("unclassified kernel vectors", f(&spectrum, "/classification/unclassified"), 0.0, true),
    ];
    if spectrum["kernel_projection_asserted"].as_bool() == Some(true) {
        claims.push(claim("kernel projection discrepancy", f(&spectrum, "/kernel_projection/discrepancy"), 1e-8, true));
    }
    if !kernel.is_null() {
        claims.push(claim("K(0) consistency", f(&kernel, "/kernel/t0_consistency"), 1e-10, true));
    }
    if !extract.is_null() {
        claims.push(claim("Volterra vs Galerkin relative L2", f(&extract, "/relative_l2"), cfg.tolerances.cross_validation, false));
    }
    for c in [&cert_k, &cert_q] {
        if c.get("success").and_then(Value::as_bool) == Some(true) {
            let lam = f(c, "/lambda_cert");
            let gap = f(c, "/comparison_gap");
            claims.push(json!({
                "claim": format!("lambda_cert({}) <= gap", c["target"].as_str().unwrap_or("?")),
                "value": lam,
                "gap": gap,
                "tolerance": hypo::LOWER_BOUND_TOL,
                "pass": c["lower_bound_ok"],
            }));
            claims.push(json!({
                "claim": format!("entropy decay ({})", c["target"].as_str().unwrap_or("?")),
                "value": c.pointer("/entropy/max_ratio"),
                "tolerance": hypo::ENTROPY_TOL,
                "pass": c.pointer("/entropy/bound_ok"),
            }));
        }
    }
    let mut tensions = Vec::new();
    if kernel.pointer("/kernel/constant_kernel").and_then(Value::as_bool) == Some(true)
        && kernel.pointer("/kernel/max_abs").and_then(Value::as_f64).is_some_and(|v| v > 1e-12)
    {
        tensions.push("memory kernel is constant and nonzero; it does not decay to an equilibrium value");
    }
    if spectrum["kernel_projection_asserted"].as_bool() == Some(false)
        && f(&spectrum, "/kernel_projection/discrepancy").is_some_and(|d| d > 1e-8)
    {
        tensions.push("spectral kernel projector of QKQ differs from the projector onto constants on Ran(Q)");
    }
    let timings: BTreeMap<&str, Value> = [
        ("check", &check),
        ("spectrum", &spectrum),
        ("kernel", &kernel),
        ("simulate", &simulate),
        ("extract", &extract),
    ]
    .into_iter()
    .map(|(k, v)| (k, v.get("elapsed_s").cloned().unwrap_or(Value::Null)))
    .collect();
    Ok(json!({
        "conditions": check.get("conditions"),
        "spectrum": {
            "K": spectrum["K"],
            "QKQ": spectrum["QKQ"],
            "gap_comparison": spectrum["gap_comparison"],
            "excited_qkq_rate": spectrum["excited_qkq_rate"],
        },
        "kernel_projection": spectrum["kernel_projection"],
        "classification": spectrum["classification"],
        "kernel": kernel.get("kernel"),
        "force": kernel.get("force"),
        "cross_validation": extract,
        "certificates": { "K": cert_k, "QKQ": cert_q },
        "claims": claims,
        "tensions": tensions,
        "timings": timings,
        "missing": missing,
    }))
}

/// Binary driver: returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    faer::set_global_parallelism(faer::Par::Seq);
    let res = (|| -> Result<PathBuf> {
        if let Some(n) = cli.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| EmzError::Config(format!("cannot configure {n} threads: {e}")))?;
        }
        let path = cli.config.as_deref().ok_or_else(|| EmzError::Config("--config <path> is required".into()))?;
        let cfg = load_config(path, cli.out.as_deref())?;
        run(cli.command, &cfg)
    })();
    match res {
        Ok(p) => {
            println!("{}", json!({ "status": "ok", "command": cli.command.name(), "summary": p.display().to_string() }));
            0
        }
        Err(e) => {
            eprintln!("{}", json!({ "status": "error", "command": cli.command.name(), "error": { "kind": e.kind(), "message": e.to_string() } }));
            1
        }
    }
}

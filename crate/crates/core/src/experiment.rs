//! Experiment configuration and the run, sweep and basis-dump pipelines.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_mass, assemble_stiffness};
use crate::auxspace::AuxiliarySpace;
use crate::cembasis::CemBuilder;
use crate::contact::{kkt_report, run, CemSolver, ContactProblem, ContactRun, FineSolver, PdasOptions};
use crate::error::{Error, Result, ResultExt};
use crate::grid::{BoundaryDecomposition, BoundarySpec, GridHierarchy};
use crate::medium::{compute_weight, MediumStyle, PermeabilityField, WeightMode};
use crate::metrics::{relative_errors, sci, ErrorReport};
use crate::oracle::{solve_contact, PgsOptions, MAX_ORACLE_GRID};
use crate::source::ScalarFunction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Fine,
    Cem,
    Oracle,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Fine => "fine",
            Variant::Cem => "cem",
            Variant::Oracle => "oracle",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fine" => Ok(Variant::Fine),
            "cem" => Ok(Variant::Cem),
            "oracle" => Ok(Variant::Oracle),
            _ => Err(Error::config(format!("unknown variant `{s}` (expected fine, cem or oracle)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Fine elements per axis.
    pub nx: usize,
    /// Coarse elements per axis.
    pub coarse: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { nx: 200, coarse: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MediumConfig {
    pub style: MediumStyle,
    /// `κ_R`, the inclusion value over a unit background.
    pub contrast: f64,
    pub seed: u64,
    /// Field file overriding the generator.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

impl Default for MediumConfig {
    fn default() -> Self {
        Self {
            style: MediumStyle::A,
            contrast: 1e3,
            seed: 1,
            file: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: ScalarFunction,
    /// Neumann data `p` on `Γ_N`.
    pub neumann: ScalarFunction,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: ScalarFunction::F1,
            neumann: ScalarFunction::zero(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub c: f64,
    pub max_iter: usize,
    pub oracle_tol: f64,
    pub oracle_max_sweeps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            c: 10.0,
            max_iter: 20,
            oracle_tol: 1e-12,
            oracle_max_sweeps: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiscaleConfig {
    /// Oversampling layers `m`.
    pub layers: usize,
    /// Eigenvectors per coarse element `l_m`.
    pub eigvecs: usize,
    pub weight: WeightMode,
    /// Rebuild only domains touched by active-set changes.
    pub incremental: bool,
}

impl Default for MultiscaleConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            eigvecs: 4,
            weight: WeightMode::Simplified,
            incremental: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub boundary: BoundarySpec,
    pub medium: MediumConfig,
    pub data: DataConfig,
    pub solver: SolverConfig,
    pub multiscale: MultiscaleConfig,
    pub variants: Vec<Variant>,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            boundary: BoundarySpec::default(),
            medium: MediumConfig::default(),
            data: DataConfig::default(),
            solver: SolverConfig::default(),
            multiscale: MultiscaleConfig::default(),
            variants: vec![Variant::Fine, Variant::Cem],
            output: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// 200×200 fine, `H = 1/20`.
    Desk,
    /// 400×400 fine, `H = 1/100`.
    Full,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            _ => Err(Error::config(format!("unknown preset `{s}` (expected desk or full)"))),
        }
    }
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        let mut c = Self::default();
        if p == Preset::Full {
            c.grid = GridConfig { nx: 400, coarse: 100 };
        }
        c
    }

    /// Parses a configuration; a `[results]` table, as written to run
    /// manifests, is ignored so manifests can be fed back in.
    fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
        table.remove("results");
        table.try_into().map_err(|e: toml::de::Error| e.to_string())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::parse(text).map_err(|e| Error::config(format!("invalid configuration: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Checks everything that can be checked before building operators.
    pub fn validate(&self) -> Result<()> {
        let g = GridHierarchy::new(self.grid.nx, self.grid.coarse)?;
        BoundaryDecomposition::new(&g, &self.boundary)?;
        if self.variants.is_empty() {
            return Err(Error::config("no variants selected"));
        }
        if !(self.solver.c > 0.0 && self.solver.c.is_finite()) {
            return Err(Error::config(format!("c = {} must be positive", self.solver.c)));
        }
        if self.solver.max_iter == 0 {
            return Err(Error::config("max_iter must be at least 1"));
        }
        if !(self.solver.oracle_tol > 0.0) {
            return Err(Error::config("oracle_tol must be positive"));
        }
        if self.medium.file.is_none() && !(self.medium.contrast >= 1.0 && self.medium.contrast.is_finite()) {
            return Err(Error::config(format!("contrast {} must be at least 1", self.medium.contrast)));
        }
        let local = (g.ratio() + 1).pow(2);
        if self.multiscale.eigvecs == 0 || self.multiscale.eigvecs > local {
            return Err(Error::config(format!(
                "eigvecs = {} must lie in 1..={local} for coarse ratio {}",
                self.multiscale.eigvecs,
                g.ratio()
            )));
        }
        if self.variants.contains(&Variant::Oracle) && self.grid.nx > MAX_ORACLE_GRID {
            return Err(Error::config(format!(
                "the oracle is a projected Gauss-Seidel reference for small grids; {}×{} exceeds {MAX_ORACLE_GRID}×{MAX_ORACLE_GRID}",
                self.grid.nx, self.grid.nx
            )));
        }
        Ok(())
    }
}

/// Fine-node field text format: `nx ny h`, then the nodal values row by row.
pub fn field_to_text(nx: usize, ny: usize, h: f64, u: &[f64]) -> String {
    assert_eq!(u.len(), (nx + 1) * (ny + 1), "nodal vector length");
    let mut s = format!("{nx} {ny} {h:?}\n");
    for row in u.chunks(nx + 1) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn dump_field(g: &GridHierarchy, u: &[f64], path: &Path) -> Result<()> {
    fs::write(path, field_to_text(g.nx_fine(), g.ny_fine(), g.h(), u)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldDump {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub values: Vec<f64>,
}

pub fn parse_field(text: &str) -> std::result::Result<FieldDump, String> {
    let mut it = text.split_whitespace();
    let mut next = |what: &str| it.next().ok_or_else(|| format!("missing {what}"));
    let nx: usize = next("nx")?.parse().map_err(|e| format!("bad nx: {e}"))?;
    let ny: usize = next("ny")?.parse().map_err(|e| format!("bad ny: {e}"))?;
    let h: f64 = next("h")?.parse().map_err(|e| format!("bad h: {e}"))?;
    let values = it
        .map(|t| t.parse::<f64>().map_err(|e| format!("bad value `{t}`: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if values.len() != (nx + 1) * (ny + 1) {
        return Err(format!("expected {} values, found {}", (nx + 1) * (ny + 1), values.len()));
    }
    Ok(FieldDump { nx, ny, h, values })
}

/// `x value` per contact node, ordered by `x`.
pub fn contact_trace(problem: &ContactProblem, values: &[f64]) -> String {
    let mut s = String::new();
    for (&n, v) in problem.contact_nodes().iter().zip(values) {
        let (x, _) = problem.grid.node_xy(n);
        let _ = writeln!(s, "{x:?} {v:?}");
    }
    s
}

/// One row per iterate: `k` followed by 0/1 for every contact node.
pub fn active_trace(problem: &ContactProblem, run: &ContactRun) -> String {
    let mut s = String::from("k");
    for n in problem.contact_nodes() {
        let _ = write!(s, ",{n}");
    }
    s.push('\n');
    for st in &run.history {
        let _ = write!(s, "{}", st.k);
        for &a in &st.active {
            s.push_str(if a { ",1" } else { ",0" });
        }
        s.push('\n');
    }
    s
}

/// Grid, boundary, medium and assembled problem of a configuration.
pub struct Setup {
    pub grid: GridHierarchy,
    pub boundary: BoundaryDecomposition,
    pub kappa: PermeabilityField,
    pub problem: ContactProblem,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = GridHierarchy::new(cfg.grid.nx, cfg.grid.coarse)?;
        let boundary = BoundaryDecomposition::new(&grid, &cfg.boundary)?;
        let kappa = match &cfg.medium.file {
            Some(path) => {
                let k = PermeabilityField::read(path)?;
                k.check_grid(&grid).context_with(|| format!("medium file {}", path.display()))?;
                k
            }
            None => PermeabilityField::generate(&grid, cfg.medium.style, cfg.medium.contrast, cfg.medium.seed)?,
        };
        let problem = ContactProblem::new(&grid, &kappa, &boundary, &cfg.data.source, &cfg.data.neumann)?;
        Ok(Self {
            grid,
            boundary,
            kappa,
            problem,
        })
    }

    pub fn builder(&self, ms: &MultiscaleConfig, p: &ScalarFunction) -> Result<CemBuilder> {
        let w = compute_weight(&self.grid, &self.kappa, ms.weight);
        let aux = AuxiliarySpace::build(&self.grid, &self.kappa, &w, ms.eigvecs)?;
        CemBuilder::new(&self.grid, &self.kappa, &self.boundary, aux, ms.layers, p)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantOutcome {
    pub variant: Variant,
    /// Active-set iterations; zero for the oracle.
    pub iterations: usize,
    pub n_active: usize,
    pub kkt: Option<f64>,
    pub u: Vec<f64>,
    pub lambda: Vec<f64>,
    pub active: Vec<bool>,
    /// Domains rebuilt per multiscale solve.
    pub rebuilds: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSummary {
    pub outcomes: Vec<VariantOutcome>,
    /// `Λ = min_i λ_i^{l+1}`, when the multiscale variant ran.
    pub lambda_report: Option<f64>,
    /// Terminal `(E^L, E^a)` of cem against fine.
    pub terminal_errors: Option<(f64, f64)>,
    pub output: PathBuf,
}

impl ExperimentSummary {
    pub fn outcome(&self, v: Variant) -> Option<&VariantOutcome> {
        self.outcomes.iter().find(|o| o.variant == v)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn pdas(cfg: &ExperimentConfig) -> PdasOptions {
    PdasOptions {
        c: cfg.solver.c,
        max_iter: cfg.solver.max_iter,
    }
}

fn outcome_of(setup: &Setup, variant: Variant, run: &ContactRun, rebuilds: Vec<usize>) -> VariantOutcome {
    let t = run.terminal();
    VariantOutcome {
        variant,
        iterations: run.iterations(),
        n_active: t.n_active(),
        kkt: Some(kkt_report(&setup.problem, t, run.c).max()),
        u: t.u.clone(),
        lambda: t.lambda.clone(),
        active: t.active.clone(),
        rebuilds,
    }
}

fn write_run(setup: &Setup, dir: &Path, variant: Variant, run: &ContactRun) -> Result<()> {
    let name = variant.name();
    let t = run.terminal();
    dump_field(&setup.grid, &t.u, &dir.join(format!("u_{name}.txt")))?;
    write(&dir.join(format!("lambda_{name}.txt")), &contact_trace(&setup.problem, &t.lambda))?;
    write(&dir.join(format!("active_{name}.csv")), &active_trace(&setup.problem, run))
}

/// Runs every configured variant and writes the metrics table, terminal
/// field dumps, active-set traces and a manifest to `cfg.output`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    let setup = Setup::new(cfg)?;
    run_with_setup(cfg, &setup, None)
}

fn run_with_setup(cfg: &ExperimentConfig, setup: &Setup, fine_cache: Option<&ContactRun>) -> Result<ExperimentSummary> {
    let dir = &cfg.output;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut outcomes = Vec::new();
    let mut fine_run = None;
    let mut cem_run = None;
    let mut lambda_report = None;
    for &v in &cfg.variants {
        match v {
            Variant::Fine => {
                let r = match fine_cache {
                    Some(r) => r.clone(),
                    None => run(&setup.problem, &mut FineSolver::new(&setup.problem), pdas(cfg))?,
                };
                write_run(setup, dir, v, &r)?;
                outcomes.push(outcome_of(setup, v, &r, Vec::new()));
                fine_run = Some(r);
            }
            Variant::Cem => {
                let b = setup.builder(&cfg.multiscale, &cfg.data.neumann)?;
                lambda_report = Some(b.aux().lambda_report());
                let mut solver = CemSolver::new(&setup.problem, &b, cfg.multiscale.incremental);
                let r = run(&setup.problem, &mut solver, pdas(cfg))?;
                write_run(setup, dir, v, &r)?;
                outcomes.push(outcome_of(setup, v, &r, solver.rebuilds.clone()));
                cem_run = Some(r);
            }
            Variant::Oracle => {
                let sol = solve_contact(
                    &setup.problem,
                    PgsOptions {
                        tol: cfg.solver.oracle_tol,
                        max_sweeps: cfg.solver.oracle_max_sweeps,
                    },
                )?;
                dump_field(&setup.grid, &sol.u, &dir.join("u_oracle.txt"))?;
                write(&dir.join("lambda_oracle.txt"), &contact_trace(&setup.problem, &sol.lambda))?;
                outcomes.push(VariantOutcome {
                    variant: v,
                    iterations: 0,
                    n_active: sol.active.iter().filter(|&&a| a).count(),
                    kkt: None,
                    u: sol.u,
                    lambda: sol.lambda,
                    active: sol.active,
                    rebuilds: Vec::new(),
                });
            }
        }
    }
    let mut terminal_errors = None;
    if let (Some(f), Some(c)) = (&fine_run, &cem_run) {
        let m = assemble_mass(&setup.grid);
        let a = &setup.problem.stiffness;
        let fh: Vec<Vec<f64>> = f.history.iter().map(|s| s.u.clone()).collect();
        let ch: Vec<Vec<f64>> = c.history.iter().map(|s| s.u.clone()).collect();
        // an identically zero fine solution leaves the relative errors undefined
        if fh.iter().all(|u| u.iter().any(|&v| v != 0.0)) {
            let report = ErrorReport::new(&fh, &ch, a, &m)?;
            write(&dir.join("metrics_fine_cem.csv"), &report.to_csv())?;
            terminal_errors = Some(relative_errors(&f.terminal().u, &c.terminal().u, a, &m)?);
        }
    }
    let summary = ExperimentSummary {
        outcomes,
        lambda_report,
        terminal_errors,
        output: dir.clone(),
    };
    write(&dir.join("manifest.toml"), &manifest(cfg, setup, &summary))?;
    Ok(summary)
}

fn manifest(cfg: &ExperimentConfig, setup: &Setup, s: &ExperimentSummary) -> String {
    let mut out = String::from("# resolved configuration\n");
    out.push_str(&cfg.to_toml());
    out.push_str("\n[results]\n");
    let g = &setup.grid;
    let _ = writeln!(out, "fine_h = {:?}", g.h());
    let _ = writeln!(out, "coarse_h = {:?}", g.coarse_h());
    let _ = writeln!(out, "contact_nodes = {}", setup.problem.contact_nodes().len());
    let _ = writeln!(out, "kappa_min = {:?}", setup.kappa.min());
    let _ = writeln!(out, "kappa_max = {:?}", setup.kappa.max());
    if cfg.data.neumann.is_zero() {
        out.push_str("neumann_note = \"p = 0: no Neumann load\"\n");
    }
    if let Some(l) = s.lambda_report {
        // TOML has no infinity literal in every reader; keep it a string
        let _ = writeln!(out, "lambda_report = \"{}\"", sci(l));
    }
    if let Some((el, ea)) = s.terminal_errors {
        let _ = writeln!(out, "terminal_E_L = \"{}\"", sci(el));
        let _ = writeln!(out, "terminal_E_a = \"{}\"", sci(ea));
    }
    for o in &s.outcomes {
        let _ = writeln!(out, "\n[results.{}]", o.variant.name());
        let _ = writeln!(out, "iterations = {}", o.iterations);
        let _ = writeln!(out, "active_nodes = {}", o.n_active);
        if let Some(k) = o.kkt {
            let _ = writeln!(out, "kkt_residual = \"{}\"", sci(k));
        }
        if !o.rebuilds.is_empty() {
            let list: Vec<String> = o.rebuilds.iter().map(|r| r.to_string()).collect();
            let _ = writeln!(out, "rebuilt_domains = [{}]", list.join(", "));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Layers,
    Eigvecs,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layers" | "m" => Ok(SweepParam::Layers),
            "eigvecs" | "l" => Ok(SweepParam::Eigvecs),
            _ => Err(Error::config(format!("cannot sweep `{s}` (expected layers or eigvecs)"))),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Layers => "layers",
            SweepParam::Eigvecs => "eigvecs",
        }
    }
}

/// Runs the fine variant once and the multiscale variant for every value,
/// each into `output/<param>_<value>/`, plus a `sweep.csv` summary.
pub fn sweep(cfg: &ExperimentConfig, param: SweepParam, values: &[usize]) -> Result<Vec<(usize, ExperimentSummary)>> {
    if values.is_empty() {
        return Err(Error::config("empty sweep"));
    }
    let mut cfg = cfg.clone();
    cfg.variants = vec![Variant::Fine, Variant::Cem];
    let setup = Setup::new(&cfg)?;
    let fine = run(&setup.problem, &mut FineSolver::new(&setup.problem), pdas(&cfg))?;
    let mut table = String::from("value,iterations,E_L,E_a\n");
    let mut results = Vec::new();
    for &v in values {
        let mut c = cfg.clone();
        match param {
            SweepParam::Layers => c.multiscale.layers = v,
            SweepParam::Eigvecs => c.multiscale.eigvecs = v,
        }
        c.output = cfg.output.join(format!("{}_{v}", param.name()));
        c.validate()?;
        let s = run_with_setup(&c, &setup, Some(&fine)).context_with(|| format!("sweep {} = {v}", param.name()))?;
        let (el, ea) = s.terminal_errors.expect("both variants ran");
        let it = s.outcome(Variant::Cem).map_or(0, |o| o.iterations);
        let _ = writeln!(table, "{v},{it},{},{}", sci(el), sci(ea));
        results.push((v, s));
    }
    write(&cfg.output.join("sweep.csv"), &table)?;
    Ok(results)
}

/// `‖ψ^m − ψ^glo‖_a` for each requested depth, together with `‖ψ^glo‖_a`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayProfile {
    pub layers: Vec<usize>,
    pub errors: Vec<f64>,
    pub global_norm: f64,
}

impl DecayProfile {
    /// Per-layer ratio from a least-squares fit of `log(error)` against `m`.
    pub fn fitted_ratio(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .layers
            .iter()
            .zip(&self.errors)
            .filter(|(_, &e)| e > 0.0)
            .map(|(&m, &e)| (m as f64, e.ln()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        (sxy / sxx).exp()
    }
}

/// Basis function `ψ_i^j` for each depth in `layers` and for the global
/// domain, writing `psi_<i>_<j>_m<m>.txt` (and `_glo`) when `dir` is given.
pub fn basis_decay(builder: &mut CemBuilder, i: usize, j: usize, layers: &[usize], dir: Option<&Path>) -> Result<DecayProfile> {
    let g = builder.grid().clone();
    if i >= g.n_coarse() || j >= builder.aux().eigvecs() {
        return Err(Error::config(format!(
            "basis index (i={i}, j={j}) outside {} coarse elements × {} eigenvectors",
            g.n_coarse(),
            builder.aux().eigvecs()
        )));
    }
    let original = builder.layers();
    let res = builder.restriction(&[], 0);
    builder.set_layers(g.coarse_per_axis());
    let glo = builder.build_basis_column(&res, i, j);
    let stiffness = assemble_stiffness(&g, builder.kappa());
    let result = (|| {
        let glo = glo?;
        if let Some(d) = dir {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            dump_field(&g, &glo, &d.join(format!("psi_{i}_{j}_glo.txt")))?;
        }
        let mut errors = Vec::new();
        for &m in layers {
            builder.set_layers(m);
            let psi = builder.build_basis_column(&res, i, j)?;
            if let Some(d) = dir {
                dump_field(&g, &psi, &d.join(format!("psi_{i}_{j}_m{m}.txt")))?;
            }
            let diff: Vec<f64> = psi.iter().zip(&glo).map(|(a, b)| a - b).collect();
            errors.push(stiffness.quadratic_form(&diff).max(0.0).sqrt());
        }
        Ok(DecayProfile {
            layers: layers.to_vec(),
            errors,
            global_norm: stiffness.quadratic_form(&glo).sqrt(),
        })
    })();
    builder.set_layers(original);
    result
}

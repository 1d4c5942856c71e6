//! TOML scenario files.
//!
//! ```toml
//! [model]
//! n = 2
//! L = 1
//! theta_pi = 1.0          # or theta = 3.14159...
//! q = "xi1^2"             # scalar (times identity) or a matrix of entries
//!
//! [bc]
//! kind = "projection"     # dirichlet | neumann | robin | projection | general
//! pi = [["1", "0"], ["0", "0"]]
//! b = "abs(xi1)"
//!
//! [grid]
//! N_laguerre = 64
//! mu_list = [1, 2, 4, 8]
//!
//! [output]
//! dir = "out"
//! formats = ["csv", "json"]
//! ```

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use halfspace_calculus::linalg::{CMat, C64};
use halfspace_calculus::model::{GeneralBc, LaplaceTypeModel, MatrixSymbol, ProjectionBC};
use serde::Deserialize;

use crate::expr::{parse, Expr, Vars};

/// A matrix entry: a number or an expression string.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Num(f64),
    Text(String),
}

/// A scalar (multiplied by the identity) or an explicit matrix.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(Entry),
    Matrix(Vec<Vec<Entry>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelTable {
    pub n: usize,
    #[serde(rename = "L", alias = "l", default = "one")]
    pub l: usize,
    pub theta: Option<f64>,
    /// `theta / pi`.
    pub theta_pi: Option<f64>,
    pub q: Option<MatrixSpec>,
    #[serde(default = "two")]
    pub d: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Dirichlet,
    Neumann,
    Robin,
    Projection,
    General,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcTable {
    pub kind: Kind,
    pub pi: Option<MatrixSpec>,
    pub b: Option<MatrixSpec>,
    pub ell: Option<Vec<usize>>,
    #[serde(rename = "Pi")]
    pub general_pi: Option<MatrixSpec>,
    /// `S_l` for `l = 0..d-1`, each `sum(ell) x L`.
    #[serde(rename = "S")]
    pub general_s: Option<Vec<MatrixSpec>>,
}

impl Default for BcTable {
    fn default() -> Self {
        Self { kind: Kind::Dirichlet, pi: None, b: None, ell: None, general_pi: None, general_s: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct GridTable {
    #[serde(default = "default_modes")]
    pub N_laguerre: usize,
    /// Laguerre scale of the ellipticity discretization; the resolvent scan
    /// ties the scale to `mu`.
    #[serde(default = "one_f")]
    pub alpha: f64,
    /// Largest `|xi'| / mu` sampled by the resolvent scan.
    #[serde(default = "default_cutoff")]
    pub xi_cutoff: f64,
    /// Number of `|xi'| / mu` ratios in `[0, xi_cutoff]`.
    #[serde(default = "default_xi_points")]
    pub xi_points: usize,
    pub mu_list: Option<Vec<f64>>,
}

impl Default for GridTable {
    fn default() -> Self {
        Self { N_laguerre: default_modes(), alpha: 1.0, xi_cutoff: default_cutoff(), xi_points: default_xi_points(), mu_list: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputTable {
    pub dir: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

impl Default for OutputTable {
    fn default() -> Self {
        Self { dir: None, formats: default_formats() }
    }
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn one_f() -> f64 {
    1.0
}
fn default_modes() -> usize {
    64
}
fn default_cutoff() -> f64 {
    4.0
}
fn default_xi_points() -> usize {
    5
}
fn default_formats() -> Vec<String> {
    vec!["csv".into(), "json".into()]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelTable,
    #[serde(default)]
    pub bc: BcTable,
    #[serde(default)]
    pub grid: GridTable,
    #[serde(default)]
    pub output: OutputTable,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("config does not match the schema")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    fn validate(&self) -> Result<()> {
        let m = &self.model;
        ensure!(m.n >= 1, "model.n must be at least 1");
        ensure!(m.l >= 1, "model.L must be at least 1");
        ensure!(m.d == 2, "model.d = {}: the Laplace-type model is second order, d must be 2", m.d);
        match (m.theta, m.theta_pi) {
            (Some(_), Some(_)) => bail!("give either model.theta or model.theta_pi, not both"),
            (None, None) => bail!("model.theta (or model.theta_pi) is required"),
            _ => {}
        }
        ensure!(self.theta().is_finite(), "model.theta must be finite");
        let g = &self.grid;
        ensure!(g.N_laguerre >= 4, "grid.N_laguerre must be at least 4");
        ensure!(g.alpha > 0.0, "grid.alpha must be positive");
        ensure!(g.xi_cutoff >= 0.0, "grid.xi_cutoff must be non-negative");
        ensure!(g.xi_points >= 1, "grid.xi_points must be at least 1");
        if let Some(mus) = &g.mu_list {
            ensure!(!mus.is_empty(), "grid.mu_list must not be empty");
            ensure!(mus.iter().all(|m| m.is_finite() && *m > 0.0), "grid.mu_list entries must be positive");
        }
        for f in &self.output.formats {
            ensure!(f == "csv" || f == "json", "output.formats: unknown format `{f}` (csv, json)");
        }
        // compile once so expression errors surface as schema errors
        self.build_q()?;
        self.build_bc()?;
        Ok(())
    }

    pub fn theta(&self) -> f64 {
        self.model.theta.unwrap_or_else(|| self.model.theta_pi.unwrap_or(0.0) * PI)
    }

    pub fn wants(&self, format: &str) -> bool {
        self.output.formats.iter().any(|f| f == format)
    }

    fn vars(&self) -> Vars {
        Vars { n: self.model.n }
    }

    fn build_q(&self) -> Result<MatrixSymbol> {
        match &self.model.q {
            Some(spec) => compile_matrix(spec, self.vars(), self.model.l, self.model.l).context("model.q"),
            None => {
                let l = self.model.l;
                Ok(Arc::new(move |xi: &[f64]| CMat::identity(l, l) * C64::new(xi.iter().map(|v| v * v).sum(), 0.0)))
            }
        }
    }

    /// The model; `theta` outside `(0, 2 pi)` needs `allow_theta_zero`.
    pub fn build_model(&self, allow_theta_zero: bool) -> Result<LaplaceTypeModel> {
        let q = self.build_q()?;
        let theta = self.theta();
        if allow_theta_zero {
            Ok(LaplaceTypeModel::negative_control(self.model.n, self.model.l, theta, q)?)
        } else {
            LaplaceTypeModel::new(self.model.n, self.model.l, theta, q).context("theta outside (0, 2 pi) needs --allow-theta-zero")
        }
    }

    pub fn build_bc(&self) -> Result<ProjectionBC> {
        let (vars, l) = (self.vars(), self.model.l);
        let bc = &self.bc;
        let mat = |spec: &Option<MatrixSpec>, name: &str| -> Result<MatrixSymbol> {
            let spec = spec.as_ref().with_context(|| format!("bc.{name} is required for kind {:?}", bc.kind))?;
            compile_matrix(spec, vars, l, l).with_context(|| format!("bc.{name}"))
        };
        let zero = || -> MatrixSymbol { Arc::new(move |_: &[f64]| CMat::zeros(l, l)) };
        Ok(match bc.kind {
            Kind::Dirichlet => ProjectionBC::dirichlet(l),
            Kind::Neumann => ProjectionBC::neumann(l),
            Kind::Robin => ProjectionBC::robin(l, mat(&bc.b, "b")?),
            Kind::Projection => {
                let b = if bc.b.is_some() { mat(&bc.b, "b")? } else { zero() };
                ProjectionBC::projection(l, mat(&bc.pi, "pi")?, b)
            }
            Kind::General => {
                let ell = bc.ell.clone().context("bc.ell is required for kind general")?;
                ensure!(ell.len() == self.model.d, "bc.ell needs {} block sizes", self.model.d);
                let total: usize = ell.iter().sum();
                let pi = compile_matrix(bc.general_pi.as_ref().context("bc.Pi is required for kind general")?, vars, total, total)
                    .context("bc.Pi")?;
                let s_specs = bc.general_s.as_ref().context("bc.S is required for kind general")?;
                ensure!(s_specs.len() == self.model.d, "bc.S needs {} matrices (one per normal derivative)", self.model.d);
                let s: Vec<MatrixSymbol> = s_specs
                    .iter()
                    .enumerate()
                    .map(|(k, sp)| compile_matrix(sp, vars, total, l).with_context(|| format!("bc.S[{k}]")))
                    .collect::<Result<_>>()?;
                let s_fn = Arc::new(move |xi: &[f64]| s.iter().map(|f| f(xi)).collect::<Vec<CMat>>());
                ProjectionBC::general(l, GeneralBc { ell, pi, s: s_fn })
            }
        })
    }

    /// `mu` values, or `fallback` when the grid table has none.
    pub fn mu_list(&self, fallback: impl FnOnce() -> Vec<f64>) -> Vec<f64> {
        self.grid.mu_list.clone().unwrap_or_else(fallback)
    }

    /// Ratios `|xi'| / mu` for the resolvent scan.
    pub fn xi_ratios(&self) -> Vec<f64> {
        let g = &self.grid;
        if g.xi_points == 1 {
            return vec![0.0];
        }
        (0..g.xi_points).map(|k| g.xi_cutoff * k as f64 / (g.xi_points - 1) as f64).collect()
    }

    /// Echo of the numeric scenario parameters for report headers.
    pub fn summary(&self) -> BTreeMap<String, serde_json::Value> {
        let mut m = BTreeMap::new();
        m.insert("n".into(), self.model.n.into());
        m.insert("L".into(), self.model.l.into());
        m.insert("theta".into(), self.theta().into());
        m.insert("bc".into(), format!("{:?}", self.bc.kind).to_lowercase().into());
        m.insert("N_laguerre".into(), self.grid.N_laguerre.into());
        m
    }
}

fn compile_entry(e: &Entry, vars: Vars) -> Result<Expr> {
    let expr = match e {
        Entry::Num(v) => Expr::Const(C64::new(*v, 0.0)),
        Entry::Text(s) => parse(s, vars).with_context(|| format!("parsing `{s}`"))?,
    };
    let mut used = Vec::new();
    expr.vars_used(&mut used);
    // boundary symbols depend on xi' only
    if let Some(bad) = used.iter().find(|&&k| k + 1 >= vars.n) {
        bail!("`{}` is not allowed here; these symbols depend on xi1..xi{} only", vars.name(*bad), vars.n - 1);
    }
    Ok(expr)
}

fn compile_matrix(spec: &MatrixSpec, vars: Vars, rows: usize, cols: usize) -> Result<MatrixSymbol> {
    let n = vars.n;
    let eval_at = move |e: &Expr, xi: &[f64]| {
        let mut x = vec![0.0; n + 1];
        x[..xi.len().min(n - 1)].copy_from_slice(&xi[..xi.len().min(n - 1)]);
        e.eval(&x)
    };
    match spec {
        MatrixSpec::Scalar(e) => {
            ensure!(rows == cols, "a scalar needs a square target, got {rows}x{cols}");
            let e = compile_entry(e, vars)?;
            Ok(Arc::new(move |xi: &[f64]| CMat::identity(rows, cols) * eval_at(&e, xi)))
        }
        MatrixSpec::Matrix(m) => {
            ensure!(m.len() == rows, "expected {rows} rows, got {}", m.len());
            let mut entries = Vec::with_capacity(rows * cols);
            for (i, row) in m.iter().enumerate() {
                ensure!(row.len() == cols, "row {i}: expected {cols} entries, got {}", row.len());
                for e in row {
                    entries.push(compile_entry(e, vars)?);
                }
            }
            Ok(Arc::new(move |xi: &[f64]| CMat::from_fn(rows, cols, |i, j| eval_at(&entries[i * cols + j], xi))))
        }
    }
}

//! Config-driven command-line front end. Every command writes one JSON
//! report to stdout; `--out DIR` adds CSV tables.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::calculus::{
    conformality_state, div_sigma_on_grid, first_jet, lemma1_report, lemma2_residuals, phi,
    sample_map, FdConfig, GridMap, SmoothMap,
};
use crate::error::LabError;
use crate::geometry::{Manifold, QuadratureGrid};
use crate::presets::{
    catalog, example_quadratic_form, fourier_noise, make_preset, matrix_inequality_check,
    random_field, variation_basis, Preset, TorusScalingExample,
};
use crate::sphere_identities::{
    gamma_div_identity, lemma3_residual, lemma4_check, projected_fields, theorem1_terms,
    theorem2_terms,
};
use crate::variation::{
    first_variation, first_variation_fd, gradient_flow, second_variation, second_variation_fd,
    stability_spectrum, FlowOptions, VariationField,
};

#[derive(Parser, Debug)]
#[command(
    name = "conflab",
    version,
    about = "Numerical laboratory for the conformality energy of maps"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Scene configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for CSV tables.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for randomized checks; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Dimension for map-free checks.
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    /// Include wall-clock time in the report (breaks byte-for-byte reproducibility).
    #[arg(long, global = true)]
    pub timing: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Evaluate the conformality energy.
    Phi,
    /// Sup and L² norms of div σ_f.
    Residual,
    /// Variation formulas against finite differences.
    Variation {
        #[arg(value_enum)]
        order: VariationOrder,
        /// Fourier / polynomial degree of the random fields.
        #[arg(long, default_value_t = 1)]
        degree: usize,
    },
    /// Spectrum of the second variation over a field basis.
    Stability {
        #[arg(long, default_value_t = 2)]
        degree: usize,
    },
    /// Gradient flow of the energy on a grid map.
    Flow {
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        tau: f64,
    },
    /// Residual suites for the pointwise and integrated identities.
    Check {
        #[arg(value_enum)]
        suite: Suite,
    },
    /// Preset catalog.
    Presets {
        #[arg(value_enum)]
        action: PresetsAction,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariationOrder {
    First,
    Second,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PresetsAction {
    List,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Lemma1,
    Lemma2,
    Lemma3,
    Lemma4,
    Lemma5,
    #[value(name = "thm1-terms")]
    Thm1Terms,
    #[value(name = "thm2-terms")]
    Thm2Terms,
    Gamma,
    #[value(name = "matrix-ineq")]
    MatrixIneq,
    #[value(name = "example-form")]
    ExampleForm,
}

impl Suite {
    fn name(self) -> &'static str {
        match self {
            Suite::Lemma1 => "lemma1",
            Suite::Lemma2 => "lemma2",
            Suite::Lemma3 => "lemma3",
            Suite::Lemma4 => "lemma4",
            Suite::Lemma5 => "lemma5",
            Suite::Thm1Terms => "thm1-terms",
            Suite::Thm2Terms => "thm2-terms",
            Suite::Gamma => "gamma",
            Suite::MatrixIneq => "matrix-ineq",
            Suite::ExampleForm => "example-form",
        }
    }

    /// The identity each suite checks.
    fn identity(self) -> &'static str {
        match self {
            Suite::Lemma1 => "T_f is symmetric and trace-free, (f*h, T_f) = |T_f|^2, and |T_f|^2 = |f*h|^2 - |df|^4 / m",
            Suite::Lemma2 => "sum_j h(Z, df e_j) T_f(W, e_j) = h(Z, sigma_f W) and |T_f|^2 = sum_i h(df e_i, sigma_f e_i)",
            Suite::Lemma3 => "pointwise expansion of sum_i h(nabla^3 f(e_i; Z, Z), sigma_f e_i) into Hessian, curvature and trace terms",
            Suite::Lemma4 => "projected constant fields Z_k on S^m: sum_k (Z_k Z_k - nabla_{Z_k} Z_k) u = Laplacian u, sum_k g(v, Z_k) Z_k = v, sum_k,i h(df Z_k, df e_i) T_f(Z_k, e_i) = |T_f|^2",
            Suite::Lemma5 => "projected constant fields on S^n: sum_k |Z_k|^2 = n and sum_k phi_k^2 = 1",
            Suite::Thm1Terms => "sum_k L(df Z_k, df Z_k) = I + II + III + IV + V on a sphere domain, with I = 0, III = -(m-1) Phi, IV = 0, V = 3 Phi",
            Suite::Thm2Terms => "sum_k L(W_k, W_k) = (4 - n) Phi for the projected fields W_k of a sphere target S^n",
            Suite::Gamma => "integral of sum_i h(nabla df(e_i, Z_k), sigma_f e_i) = -integral of h(df Z_k, div sigma_f) + integral of phi_k |T_f|^2",
            Suite::MatrixIneq => "|A|^2 + Tr(A^2) - (2/n)(Tr A)^2 >= 0 for every n x n matrix A, with equality at A = I and antisymmetric A",
            Suite::ExampleForm => "second variation of the torus scaling map as a quadratic form in the derivative matrix of the field",
        }
    }
}

/// Assertion thresholds. Every field can be overridden in the config and the
/// effective values are echoed in the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub lemma1: f64,
    pub lemma2: f64,
    pub lemma3: f64,
    pub lemma4_operator: f64,
    pub lemma4_frame: f64,
    pub lemma5: f64,
    pub stationarity: f64,
    pub phi_closed_form: f64,
    pub first_variation: f64,
    pub second_variation: f64,
    pub stability_near_isometry: f64,
    pub stability_isometry: f64,
    pub matrix_inequality: f64,
    pub example_form: f64,
    pub example_form_consistency: f64,
    pub thm1_vanishing: f64,
    pub thm1_relative: f64,
    pub thm1_conformal: f64,
    pub thm2_relative: f64,
    pub gamma: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            lemma1: 1e-10,
            lemma2: 1e-12,
            lemma3: 1e-3,
            lemma4_operator: 1e-5,
            lemma4_frame: 1e-8,
            lemma5: 1e-12,
            stationarity: 1e-8,
            phi_closed_form: 1e-10,
            first_variation: 1e-4,
            second_variation: 1e-3,
            stability_near_isometry: -1e-8,
            stability_isometry: -1e-9,
            matrix_inequality: -1e-12,
            example_form: -1e-12,
            example_form_consistency: 1e-8,
            thm1_vanishing: 1e-4,
            thm1_relative: 1e-3,
            thm1_conformal: 1e-10,
            thm2_relative: 1e-4,
            gamma: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub resolution: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { resolution: 16 }
    }
}

/// Seeded Fourier noise added to the map before sampling it to the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub amplitude: f64,
    pub seed: u64,
}

/// Either a preset with parameters or a grid file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub params: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
}

/// Settings of `variation`: number of random fields, their amplitude, and
/// the finite-difference steps of the oracles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariationSpec {
    pub fields: usize,
    pub amplitude: f64,
    pub step_first: f64,
    pub step_second: f64,
}

impl Default for VariationSpec {
    fn default() -> Self {
        VariationSpec {
            fields: 3,
            amplitude: 0.5,
            step_first: 1e-3,
            step_second: 1e-2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Manifold>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codomain: Option<Manifold>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MapSpec>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub fd: FdConfig,
    #[serde(default)]
    pub variation: VariationSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// On-disk form of a grid-rule map: node values in quadrature-grid order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub domain: Manifold,
    pub codomain: Manifold,
    pub resolution: usize,
    pub nodes: Vec<Vec<f64>>,
}

impl GridFile {
    pub fn from_map(f: &SmoothMap) -> Option<Self> {
        let g = f.grid()?;
        Some(GridFile {
            domain: f.domain().clone(),
            codomain: f.codomain().clone(),
            resolution: g.resolution,
            nodes: g
                .values
                .iter()
                .map(|v| v.iter().copied().collect())
                .collect(),
        })
    }

    pub fn into_map(self) -> crate::Result<SmoothMap> {
        let amb = self.codomain.ambient_dim();
        let mut values = Vec::with_capacity(self.nodes.len());
        for (i, n) in self.nodes.into_iter().enumerate() {
            if n.len() != amb {
                return Err(LabError::DimensionMismatch(format!(
                    "node {i} has {} coordinates, the codomain needs {amb}",
                    n.len()
                )));
            }
            values.push(DVector::from_vec(n));
        }
        SmoothMap::from_grid(
            self.domain,
            self.codomain,
            GridMap::new(self.resolution, values),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub value: f64,
    /// Human-readable condition, e.g. `value < 1e-10`.
    pub condition: String,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
    pub inputs: Value,
    pub results: BTreeMap<String, Value>,
    pub residuals: BTreeMap<String, f64>,
    pub assertions: Vec<Assertion>,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<f64>,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Lab(LabError),
}

impl From<LabError> for CliError {
    fn from(e: LabError) -> Self {
        CliError::Lab(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(s) => write!(f, "config error: {s}"),
            CliError::Lab(e) => write!(f, "error: {e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

struct Table {
    name: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push<I: IntoIterator<Item = String>>(&mut self, row: I) {
        self.rows.push(row.into_iter().collect());
    }

    fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(format!("{}.csv", self.name));
        let io = |e: csv::Error| CliError::Config(format!("writing {}: {e}", path.display()));
        let mut w = csv::Writer::from_path(&path).map_err(io)?;
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        w.flush()
            .map_err(|e| CliError::Config(format!("writing {}: {e}", path.display())))
    }
}

/// What a command produced, before it is wrapped into a [`Report`].
#[derive(Default)]
struct Outcome {
    identity: Option<String>,
    results: BTreeMap<String, Value>,
    residuals: BTreeMap<String, f64>,
    assertions: Vec<Assertion>,
    tables: Vec<Table>,
    grid_files: Vec<(String, GridFile)>,
}

impl Outcome {
    fn result(&mut self, key: &str, v: impl Serialize) {
        self.results
            .insert(key.into(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    fn residual(&mut self, key: &str, v: f64) {
        self.residuals.insert(key.into(), v);
    }

    fn below(&mut self, name: &str, value: f64, tol: f64) {
        self.assertions.push(Assertion {
            name: name.into(),
            value,
            condition: format!("value < {tol:e}"),
            pass: value < tol,
        });
    }

    fn at_least(&mut self, name: &str, value: f64, tol: f64) {
        self.assertions.push(Assertion {
            name: name.into(),
            value,
            condition: format!("value >= {tol:e}"),
            pass: value >= tol,
        });
    }
}

/// Loaded scene plus the effective seed.
struct Scene {
    config: SceneConfig,
    base_dir: PathBuf,
    seed: u64,
}

impl Scene {
    fn load(path: Option<&Path>, seed: Option<u64>) -> CliResult<Self> {
        let (config, base_dir) = match path {
            None => (SceneConfig::default(), PathBuf::from(".")),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                let cfg: SceneConfig = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (cfg, dir)
            }
        };
        config.fd.validate()?;
        if config.grid.resolution < crate::geometry::MIN_RESOLUTION {
            return Err(LabError::ResolutionTooSmall {
                got: config.grid.resolution,
                min: crate::geometry::MIN_RESOLUTION,
            }
            .into());
        }
        let seed = seed.or(config.seed).unwrap_or(0);
        Ok(Scene {
            config,
            base_dir,
            seed,
        })
    }

    fn tol(&self) -> &Tolerances {
        &self.config.tolerances
    }

    /// The preset named in the config, if it parses as one.
    fn preset(&self) -> Option<Preset> {
        let spec = self.config.map.as_ref()?;
        let name = spec.preset.as_ref()?;
        let mut obj = json!({ "preset": name });
        if !spec.params.is_null() {
            obj["params"] = spec.params.clone();
        }
        serde_json::from_value(obj).ok()
    }

    fn map(&self) -> CliResult<SmoothMap> {
        let spec = self
            .config
            .map
            .as_ref()
            .ok_or_else(|| CliError::Config("this command needs `map` in the config".into()))?;
        let f = match (&spec.preset, &spec.grid_file) {
            (Some(name), None) => make_preset(name, &spec.params)?,
            (None, Some(file)) => {
                let path = self.base_dir.join(file);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                let gf: GridFile = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                gf.into_map()?
            }
            _ => {
                return Err(CliError::Config(
                    "`map` needs exactly one of `preset` and `grid_file`".into(),
                ))
            }
        };
        let f = f.with_fd(self.config.fd);
        for (what, want, got) in [
            ("domain", &self.config.domain, f.domain()),
            ("codomain", &self.config.codomain, f.codomain()),
        ] {
            if let Some(w) = want {
                if w != got {
                    return Err(CliError::Config(format!(
                        "{what} {} does not match the map's {what} {}",
                        w.label(),
                        got.label()
                    )));
                }
            }
        }
        match &spec.noise {
            None => Ok(f),
            Some(n) => Ok(
                fourier_noise(&f, self.config.grid.resolution, n.amplitude, n.seed)?
                    .with_fd(self.config.fd),
            ),
        }
    }

    /// Quadrature grid for `f`; grid maps bring their own resolution.
    fn grid_for(&self, f: &SmoothMap) -> CliResult<QuadratureGrid> {
        let res = f
            .grid()
            .map_or(self.config.grid.resolution, |g| g.resolution);
        Ok(f.domain().quadrature_grid(res)?)
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Random chart point, at least 0.1 away from the poles on spheres.
fn random_point(m: &Manifold, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = m.dim();
    (0..d)
        .map(|a| {
            if m.is_sphere() && a + 1 < d {
                rng.gen_range(0.1..std::f64::consts::PI - 0.1)
            } else {
                rng.gen_range(0.0..2.0 * std::f64::consts::PI)
            }
        })
        .collect()
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

fn cmd_phi(scene: &Scene) -> CliResult<Outcome> {
    let f = scene.map()?;
    let g = scene.grid_for(&f)?;
    let p = phi(&f, &g)?;
    let mut o = Outcome::default();
    o.result("phi", p);
    o.result("map", f.name());
    o.result("nodes", g.len());
    if let Some(Preset::TorusScaling { ell, k }) = scene.preset() {
        let exact = TorusScalingExample::new(ell, k).phi();
        o.result("phi_closed_form", exact);
        let rel = (p - exact).abs() / exact.abs().max(1e-300);
        o.residual("phi_closed_form_relative", rel);
        o.below("phi matches closed form", rel, scene.tol().phi_closed_form);
    }
    Ok(o)
}

fn cmd_residual(scene: &Scene) -> CliResult<Outcome> {
    let f = scene.map()?;
    let g = scene.grid_for(&f)?;
    let sample = sample_map(&f, &g)?;
    let div = div_sigma_on_grid(&f, &g, &sample)?;
    let norms: Vec<f64> = div.iter().map(|v| v.norm()).collect();
    let sup = norms.iter().fold(0.0f64, |m, v| m.max(*v));
    let l2 = g
        .integrate(&norms.iter().map(|v| v * v).collect::<Vec<_>>())
        .sqrt();
    let mut o = Outcome {
        identity: Some("div sigma_f = 0 (critical points of the energy)".into()),
        ..Outcome::default()
    };
    o.result("phi", g.integrate(&sample.t_norm_sq()));
    o.residual("div_sigma_sup", sup);
    o.residual("div_sigma_l2", l2);
    o.below("stationary", sup, scene.tol().stationarity);
    let mut t = Table::new("residual", &["node", "div_sigma_norm"]);
    for (i, n) in norms.iter().enumerate() {
        t.push([i.to_string(), fmt(*n)]);
    }
    o.tables.push(t);
    Ok(o)
}

fn cmd_variation(scene: &Scene, order: VariationOrder, degree: usize) -> CliResult<Outcome> {
    let f = scene.map()?;
    let g = scene.grid_for(&f)?;
    let vs = &scene.config.variation;
    let mut o = Outcome::default();
    let mut t = Table::new(
        match order {
            VariationOrder::First => "variation_first",
            VariationOrder::Second => "variation_second",
        },
        &["field", "formula", "fd", "scaled_gap"],
    );
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for i in 0..vs.fields {
        let x = random_field(&f, degree, vs.amplitude, scene.seed.wrapping_add(i as u64))?;
        let (formula, fd) = match order {
            VariationOrder::First => (
                first_variation(&f, &x, &g)?,
                first_variation_fd(&f, &x, &g, vs.step_first)?,
            ),
            VariationOrder::Second => (
                second_variation(&f, &x, &x, &g)?.total,
                second_variation_fd(&f, &x, &g, vs.step_second)?,
            ),
        };
        let gap = (formula - fd).abs() / (1.0 + fd.abs());
        worst = worst.max(gap);
        t.push([x.label().to_string(), fmt(formula), fmt(fd), fmt(gap)]);
        rows.push(json!({"field": x.label(), "formula": formula, "fd": fd, "scaled_gap": gap}));
    }
    o.identity = Some(match order {
        VariationOrder::First => "d/dt Phi(exp(tX)) at 0 = -4 integral of h(X, div sigma_f)".into(),
        VariationOrder::Second => "(1/4) d^2/dt^2 Phi(exp(tX)) at 0 = integral of L(X, X)".into(),
    });
    o.result("fields", rows);
    o.residual("max_scaled_gap", worst);
    let tol = match order {
        VariationOrder::First => scene.tol().first_variation,
        VariationOrder::Second => scene.tol().second_variation,
    };
    o.below("formula matches finite differences", worst, tol);
    o.tables.push(t);
    Ok(o)
}

fn cmd_stability(scene: &Scene, degree: usize) -> CliResult<Outcome> {
    let f = scene.map()?;
    let g = scene.grid_for(&f)?;
    let basis = variation_basis(&f, degree)?;
    let rep = stability_spectrum(&f, &basis, &g)?;
    let mut o = Outcome::default();
    o.residual("min_eigenvalue", rep.min_eigenvalue);
    if let Some(Preset::TorusScaling { k, .. }) = scene.preset() {
        // non-negativity is only claimed for k ≤ 1 close to 1
        if k == 1.0 {
            o.at_least(
                "isometry is stable",
                rep.min_eigenvalue,
                scene.tol().stability_isometry,
            );
        } else if k < 1.0 && (1.0 - k) <= 0.05 {
            o.at_least(
                "near-isometric scaling is stable",
                rep.min_eigenvalue,
                scene.tol().stability_near_isometry,
            );
        }
    }
    let mut t = Table::new("stability", &["index", "eigenvalue"]);
    for (i, e) in rep.eigenvalues.iter().enumerate() {
        t.push([i.to_string(), fmt(*e)]);
    }
    o.tables.push(t);
    o.result("stability", &rep);
    Ok(o)
}

fn cmd_flow(scene: &Scene, steps: usize, tau: f64) -> CliResult<Outcome> {
    let f = scene.map()?;
    let f0 = if f.grid().is_some() {
        f
    } else {
        f.sample_to_grid(scene.config.grid.resolution)?
    };
    let tr = gradient_flow(
        &f0,
        FlowOptions {
            tau,
            steps,
            snapshot_every: None,
        },
    )?;
    let p = tr.phi_values();
    let first = p[0];
    let last = *p.last().expect("flow records the initial state");
    let worst_rise = p
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut o = Outcome {
        identity: Some("energy is non-increasing along the discrete gradient flow".into()),
        ..Outcome::default()
    };
    o.result("phi_initial", first);
    o.result("phi_final", last);
    o.result("steps_taken", tr.records.len() - 1);
    o.result("converged", tr.converged);
    o.result("records", &tr.records);
    o.residual("max_phi_increase", worst_rise.max(0.0));
    o.below("phi non-increasing", worst_rise, f64::MIN_POSITIVE);
    let mut t = Table::new("flow", &["step", "phi", "tau", "residual_sup"]);
    for r in &tr.records {
        t.push([
            r.step.to_string(),
            fmt(r.phi),
            fmt(r.tau),
            fmt(r.residual_sup),
        ]);
    }
    o.tables.push(t);
    if let Some(gf) = GridFile::from_map(&tr.final_map) {
        o.grid_files.push(("flow_final".into(), gf));
    }
    Ok(o)
}

/// Test functions for the operator identity: polynomials in ambient coordinates.
type TestFunction = (&'static str, fn(&DVector<f64>) -> f64);

fn test_polynomials() -> Vec<TestFunction> {
    vec![
        ("y0", |y| y[0]),
        ("y0*y1 + y_last^2", |y| y[0] * y[1] + y[y.len() - 1].powi(2)),
        ("y1^3 - 2*y0*y_last + 1/2", |y| {
            y[1].powi(3) - 2.0 * y[0] * y[y.len() - 1] + 0.5
        }),
    ]
}

/// Sphere dimension for map-free checks: `--dim`, else the map's `pick`
/// side if it is a sphere, else 2.
fn sphere_dim(scene: &Scene, dim: Option<usize>, codomain: bool) -> CliResult<usize> {
    if let Some(d) = dim {
        return Ok(d);
    }
    if scene.config.map.is_some() {
        let f = scene.map()?;
        let s = if codomain { f.codomain() } else { f.domain() };
        if s.is_sphere() {
            return Ok(s.dim());
        }
    }
    Ok(2)
}

fn check_lemma1(scene: &Scene, o: &mut Outcome) -> CliResult<()> {
    let f = scene.map()?;
    let m = f.domain().dim();
    let mut rng = scene.rng();
    let mut worst = [0.0f64; 4];
    for _ in 0..100 {
        let x = random_point(f.domain(), &mut rng);
        let r = lemma1_report(&first_jet(&f, &x)?, m);
        for (w, v) in worst
            .iter_mut()
            .zip([r.symmetry, r.trace, r.pairing_d, r.identity_e])
        {
            *w = w.max(v);
        }
    }
    for (name, v) in ["symmetry", "trace", "pairing", "norm_identity"]
        .iter()
        .zip(worst)
    {
        o.residual(name, v);
        o.below(name, v, scene.tol().lemma1);
    }
    o.result("points", 100);
    Ok(())
}

fn check_lemma2(scene: &Scene, o: &mut Outcome) -> CliResult<()> {
    let f = scene.map()?;
    let m = f.domain().dim();
    let mut rng = scene.rng();
    let (mut w1, mut w2) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let x = random_point(f.domain(), &mut rng);
        let j = first_jet(&f, &x)?;
        let s = conformality_state(&j, m);
        let raw = DVector::from_fn(f.codomain().ambient_dim(), |_, _| rng.gen_range(-1.0..1.0));
        let z = f.codomain().tangent_projection(&j.value, &raw);
        let w: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = lemma2_residuals(&j, &s, &z, &w);
        w1 = w1.max(a);
        w2 = w2.max(b);
    }
    o.residual("sigma_pairing", w1);
    o.residual("trace_identity", w2);
    o.below("sigma_pairing", w1, scene.tol().lemma2);
    o.below("trace_identity", w2, scene.tol().lemma2);
    o.result("points", 100);
    Ok(())
}

fn check_lemma3(scene: &Scene, o: &mut Outcome) -> CliResult<()> {
    let f = scene.map()?;
    let fam = projected_fields(f.domain(), None)?;
    let mut rng = scene.rng();
    let mut t = Table::new("lemma3", &["point", "field", "lhs", "rhs", "residual"]);
    let mut worst = 0.0f64;
    for p in 0..20 {
        let x = random_point(f.domain(), &mut rng);
        let zs = fam.domain_components(&x);
        for (k, z) in zs.iter().enumerate() {
            let r = lemma3_residual(&f, z, &x)?;
            worst = worst.max(r.residual);
            t.push([
                p.to_string(),
                k.to_string(),
                fmt(r.lhs),
                fmt(r.rhs),
                fmt(r.residual),
            ]);
        }
    }
    o.residual("max_residual", worst);
    o.below("pointwise expansion", worst, scene.tol().lemma3);
    o.result("points", 20);
    o.tables.push(t);
    Ok(())
}

fn check_lemma4(scene: &Scene, dim: Option<usize>, o: &mut Outcome) -> CliResult<()> {
    let m = sphere_dim(scene, dim, false)?;
    let map = match &scene.config.map {
        Some(_) => {
            let f = scene.map()?;
            if f.domain() != &Manifold::sphere(m)? {
                return Err(CliError::Config(format!(
                    "the map's domain {} is not S^{m}",
                    f.domain().label()
                )));
            }
            f
        }
        None => Preset::LatitudeWobble { a: 0.3, dim: m }.build()?,
    };
    let s = Manifold::sphere(m)?;
    let mut rng = scene.rng();
    let (mut a, mut b, mut c) = (0.0f64, 0.0f64, 0.0f64);
    let mut t = Table::new(
        "lemma4",
        &[
            "point",
            "function",
            "laplacian",
            "operator",
            "frame",
            "energy",
        ],
    );
    for p in 0..10 {
        let x = random_point(&s, &mut rng);
        for (name, u) in test_polynomials() {
            let r = lemma4_check(m, u, &x, Some(&map))?;
            a = a.max(r.a);
            b = b.max(r.b);
            c = c.max(r.c.unwrap_or(0.0));
            t.push([
                p.to_string(),
                name.to_string(),
                fmt(r.laplacian),
                fmt(r.a),
                fmt(r.b),
                fmt(r.c.unwrap_or(0.0)),
            ]);
        }
    }
    o.result("dim", m);
    o.result("map", map.name());
    o.residual("operator_vs_laplacian", a);
    o.residual("frame_completeness", b);
    o.residual("energy_trace", c);
    o.below("operator_vs_laplacian", a, scene.tol().lemma4_operator);
    o.below("frame_completeness", b, scene.tol().lemma4_frame);
    o.below("energy_trace", c, scene.tol().lemma4_frame);
    o.tables.push(t);
    Ok(())
}

fn check_lemma5(scene: &Scene, dim: Option<usize>, o: &mut Outcome) -> CliResult<()> {
    let n = sphere_dim(scene, dim, true)?;
    let s = Manifold::sphere(n)?;
    let fam = projected_fields(&s, None)?;
    let mut rng = scene.rng();
    let (mut ns, mut ps, mut cs) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let r = fam.residuals_at(&random_point(&s, &mut rng))?;
        ns = ns.max(r.norm_sum);
        ps = ps.max(r.phi_sum);
        cs = cs.max(r.completeness);
    }
    o.result("dim", n);
    o.result("points", 100);
    o.residual("norm_sum", ns);
    o.residual("phi_sum", ps);
    o.residual("completeness", cs);
    o.below("sum of |Z_k|^2 equals n", ns, scene.tol().lemma5);
    o.below("sum of phi_k^2 equals 1", ps, scene.tol().lemma5);
    Ok(())
}

fn check_thm1(scene: &Scene, o: &mut Outcome) -> CliResult<()> {
    let f = scene.map()?;
    let g = scene.grid_for(&f)?;
    let tol = scene.tol();
    let t = theorem1_terms(&f, &g, tol.stationarity)?;
    let p = t.phi_value;
    let m = f.domain().dim() as f64;
    o.result("terms", &t);
    let mut table = Table::new("thm1_terms", &["term", "value"]);
    for (name, v) in [
        ("I", t.i),
        ("II", t.ii),
        ("III", t.iii),
        ("IV", t.iv),
        ("V", t.v),
        ("total", t.total),
        ("phi", p),
        ("l_sum", t.l_sum),
    ] {
        table.push([name.to_string(), fmt(v)]);
    }
    o.tables.push(table);
    o.residual("total_vs_l_sum", (t.total - t.l_sum).abs());
    if p < 1e-12 {
        let worst = [t.i, t.ii, t.iii, t.iv, t.v]
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        o.below(
            "all terms vanish on a conformal map",
            worst,
            tol.thm1_conformal,
        );
        return Ok(());
    }
    o.below(
        "I vanishes (relative to phi)",
        t.i.abs() / p,
        tol.thm1_vanishing,
    );
    o.below(
        "IV vanishes (relative to phi)",
        t.iv.abs() / p,
        tol.thm1_vanishing,
    );
    let iii = (t.iii + (m - 1.0) * p).abs() / ((m - 1.0) * p);
    let v = (t.v - 3.0 * p).abs() / (3.0 * p);
    o.residual("iii_relative", iii);
    o.residual("v_relative", v);
    o.below("III equals -(m-1) phi", iii, tol.thm1_relative);
    o.below("V equals 3 phi", v, tol.thm1_relative);
    Ok(())
}

fn check_thm2(scene: &Scene, o: &mut Outcome) -> CliResult<()> {
    let f = scene.map()?;
    let g = scene.grid_for(&f)?;
    let t = theorem2_terms(&f, &g)?;
    let n = f.codomain().dim() as f64;
    o.result("terms", t);
    o.result("expected_ratio", 4.0 - n);
    o.residual("total_vs_l_sum", (t.total - t.l_sum).abs());
    if t.phi_value < 1e-12 {
        o.below("total vanishes on a conformal map", t.total.abs(), 1e-10);
        return Ok(());
    }
    let ratio = t.total / t.phi_value;
    o.result("ratio", ratio);
    let rel = (ratio - (4.0 - n)).abs() / (4.0 - n).abs().max(1.0);
    o.residual("ratio_relative", rel);
    o.below("total equals (4 - n) phi", rel, scene.tol().thm2_relative);
    Ok(())
}

fn check_gamma(scene: &Scene, o: &mut Outcome) -> CliResult<()> {
    let f = scene.map()?;
    let g = scene.grid_for(&f)?;
    let mut t = Table::new("gamma", &["k", "lhs", "rhs", "residual"]);
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for k in 0..f.domain().ambient_dim() {
        let r = gamma_div_identity(&f, k, &g)?;
        worst = worst.max(r.residual / (1.0 + r.rhs.abs()));
        t.push([k.to_string(), fmt(r.lhs), fmt(r.rhs), fmt(r.residual)]);
        rows.push(r);
    }
    o.result("per_field", rows);
    o.residual("max_scaled_residual", worst);
    o.below("integrated identity", worst, scene.tol().gamma);
    o.tables.push(t);
    Ok(())
}

fn check_matrix(scene: &Scene, dim: Option<usize>, o: &mut Outcome) -> CliResult<()> {
    let sizes: Vec<usize> = match dim {
        Some(0) => return Err(CliError::Config("--dim must be at least 1".into())),
        Some(n) => vec![n],
        None => (1..=6).collect(),
    };
    let mut rng = scene.rng();
    let mut t = Table::new("matrix_ineq", &["n", "samples", "min_value"]);
    let mut worst = f64::INFINITY;
    let mut equality = 0.0f64;
    for &n in &sizes {
        let mut min = f64::INFINITY;
        for _ in 0..10_000 {
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            min = min.min(matrix_inequality_check(&a));
        }
        worst = worst.min(min);
        t.push([n.to_string(), "10000".into(), fmt(min)]);
        equality = equality.max(matrix_inequality_check(&DMatrix::identity(n, n)).abs());
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        equality = equality.max(matrix_inequality_check(&(&b - b.transpose())).abs());
    }
    o.result("sizes", &sizes);
    o.residual("min_value", worst);
    o.residual("equality_defect", equality);
    o.at_least("non-negative", worst, scene.tol().matrix_inequality);
    o.below("equality at identity and antisymmetric", equality, 1e-12);
    o.tables.push(t);
    Ok(())
}

fn check_example_form(scene: &Scene, o: &mut Outcome) -> CliResult<()> {
    let (ell, k) = match scene.preset() {
        Some(Preset::TorusScaling { ell, k }) => (ell, k),
        Some(_) => {
            return Err(CliError::Config(
                "example-form needs the torus_scaling preset (or no map)".into(),
            ))
        }
        None => (3, 0.97),
    };
    let mut rng = scene.rng();
    let mut min = f64::INFINITY;
    for _ in 0..1000 {
        let a = DMatrix::from_fn(ell, ell, |_, _| rng.gen_range(-1.0..1.0));
        min = min.min(example_quadratic_form(ell, k, &a));
    }
    o.result("ell", ell);
    o.result("k", k);
    o.result("samples", 1000);
    o.residual("min_value", min);
    if k <= 1.0 && 1.0 - k <= 0.05 {
        o.at_least(
            "non-negative near the isometry",
            min,
            scene.tol().example_form,
        );
    }
    // integrated form against the second variation on Fourier fields
    let f = Preset::TorusScaling { ell, k }.build()?;
    let g = f.domain().quadrature_grid(scene.config.grid.resolution)?;
    let mut worst = 0.0f64;
    let mut t = Table::new(
        "example_form",
        &["field", "integrated_form", "second_variation"],
    );
    for i in 0..3 {
        // ψ_j = Σ_p c[j][p] cos x_p + s[j][p] sin x_p
        let c: Vec<Vec<f64>> = (0..ell)
            .map(|_| (0..ell).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let s: Vec<Vec<f64>> = (0..ell)
            .map(|_| (0..ell).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let (cc, sc) = (c.clone(), s.clone());
        let x = VariationField::frame_components(&f, format!("fourier {i}"), move |x| {
            (0..ell)
                .map(|j| {
                    (0..ell)
                        .map(|p| cc[j][p] * x[p].cos() + sc[j][p] * x[p].sin())
                        .sum()
                })
                .collect()
        })?;
        let values: Vec<f64> = g
            .nodes
            .iter()
            .map(|x| {
                let a = DMatrix::from_fn(ell, ell, |i, j| {
                    -c[j][i] * x[i].sin() + s[j][i] * x[i].cos()
                });
                example_quadratic_form(ell, k, &a)
            })
            .collect();
        let integrated = g.integrate(&values);
        let sv = second_variation(&f, &x, &x, &g)?.total;
        worst = worst.max((integrated - sv).abs() / (1.0 + sv.abs()));
        t.push([i.to_string(), fmt(integrated), fmt(sv)]);
    }
    o.residual("integrated_vs_second_variation", worst);
    o.below(
        "integrated form equals second variation",
        worst,
        scene.tol().example_form_consistency,
    );
    o.tables.push(t);
    Ok(())
}

fn cmd_check(scene: &Scene, suite: Suite, dim: Option<usize>) -> CliResult<Outcome> {
    let mut o = Outcome {
        identity: Some(suite.identity().into()),
        ..Outcome::default()
    };
    match suite {
        Suite::Lemma1 => check_lemma1(scene, &mut o)?,
        Suite::Lemma2 => check_lemma2(scene, &mut o)?,
        Suite::Lemma3 => check_lemma3(scene, &mut o)?,
        Suite::Lemma4 => check_lemma4(scene, dim, &mut o)?,
        Suite::Lemma5 => check_lemma5(scene, dim, &mut o)?,
        Suite::Thm1Terms => check_thm1(scene, &mut o)?,
        Suite::Thm2Terms => check_thm2(scene, &mut o)?,
        Suite::Gamma => check_gamma(scene, &mut o)?,
        Suite::MatrixIneq => check_matrix(scene, dim, &mut o)?,
        Suite::ExampleForm => check_example_form(scene, &mut o)?,
    }
    Ok(o)
}

fn cmd_presets() -> Outcome {
    let mut o = Outcome::default();
    let cat = catalog();
    let mut t = Table::new("presets", &["name", "domain", "codomain", "description"]);
    for p in &cat {
        t.push([
            p.name.into(),
            p.domain.into(),
            p.codomain.into(),
            p.description.into(),
        ]);
    }
    o.result("catalog", &cat);
    o.tables.push(t);
    o
}

fn command_name(c: &Command) -> String {
    match c {
        Command::Phi => "phi".into(),
        Command::Residual => "residual".into(),
        Command::Variation { order, .. } => format!(
            "variation {}",
            if *order == VariationOrder::First {
                "first"
            } else {
                "second"
            }
        ),
        Command::Stability { .. } => "stability".into(),
        Command::Flow { .. } => "flow".into(),
        Command::Check { suite } => format!("check {}", suite.name()),
        Command::Presets { .. } => "presets list".into(),
    }
}

fn command_args(c: &Command, dim: Option<usize>) -> Value {
    match c {
        Command::Variation { degree, .. } | Command::Stability { degree } => {
            json!({ "degree": degree })
        }
        Command::Flow { steps, tau } => json!({ "steps": steps, "tau": tau }),
        Command::Check { .. } => json!({ "dim": dim }),
        _ => json!({}),
    }
}

type Executed = (Report, Vec<Table>, Vec<(String, GridFile)>);

fn execute(cli: &Cli) -> CliResult<Executed> {
    let start = Instant::now();
    let scene = Scene::load(cli.config.as_deref(), cli.seed)?;
    let o = match &cli.command {
        Command::Phi => cmd_phi(&scene)?,
        Command::Residual => cmd_residual(&scene)?,
        Command::Variation { order, degree } => cmd_variation(&scene, *order, *degree)?,
        Command::Stability { degree } => cmd_stability(&scene, *degree)?,
        Command::Flow { steps, tau } => cmd_flow(&scene, *steps, *tau)?,
        Command::Check { suite } => cmd_check(&scene, *suite, cli.dim)?,
        Command::Presets { .. } => cmd_presets(),
    };
    let pass = o.assertions.iter().all(|a| a.pass);
    let report = Report {
        command: command_name(&cli.command),
        identity: o.identity,
        inputs: json!({
            "config": cli.config.as_ref().map(|p| p.display().to_string()),
            "scene": scene.config,
            "seed": scene.seed,
            "args": command_args(&cli.command, cli.dim),
        }),
        results: o.results,
        residuals: o.residuals,
        assertions: o.assertions,
        pass,
        runtime_ms: cli.timing.then(|| start.elapsed().as_secs_f64() * 1e3),
    };
    Ok((report, o.tables, o.grid_files))
}

fn configure_threads() {
    if let Some(n) = std::env::var("CONFLAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

/// Parse `args` (including the program name), run the command and print its
/// report. Returns the exit code: 0 when every assertion passes, 1 when one
/// fails, 2 for usage, config or evaluation errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    let (report, tables, grids) = match execute(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    if let Some(dir) = &cli.out {
        let written = std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))
            .and_then(|_| tables.iter().try_for_each(|t| t.write(dir)))
            .and_then(|_| {
                grids.iter().try_for_each(|(name, gf)| {
                    let path = dir.join(format!("{name}.json"));
                    let text = serde_json::to_string(gf).expect("grid files serialize");
                    std::fs::write(&path, text)
                        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
                })
            });
        if let Err(e) = written {
            eprintln!("{e}");
            return 2;
        }
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("reports serialize")
    );
    if report.pass {
        0
    } else {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_match_the_command_line() {
        assert_eq!(Suite::Thm1Terms.name(), "thm1-terms");
        assert_eq!(Suite::MatrixIneq.name(), "matrix-ineq");
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let err =
            serde_json::from_str::<SceneConfig>(r#"{"grid": {"resolution": 8}, "colour": 1}"#)
                .unwrap_err();
        assert!(err.to_string().contains("colour"));
        assert!(err.line() >= 1);
    }

    #[test]
    fn partial_tolerances_keep_defaults() {
        let cfg: SceneConfig = serde_json::from_str(r#"{"tolerances": {"gamma": 0.5}}"#).unwrap();
        assert_eq!(cfg.tolerances.gamma, 0.5);
        assert_eq!(cfg.tolerances.lemma1, Tolerances::default().lemma1);
    }

    #[test]
    fn report_round_trips() {
        let r = Report {
            command: "phi".into(),
            identity: None,
            inputs: json!({"seed": 1}),
            results: BTreeMap::from([("phi".to_string(), json!(177.65287921960845))]),
            residuals: BTreeMap::from([("x".to_string(), 1.25e-13)]),
            assertions: vec![Assertion {
                name: "a".into(),
                value: 0.1,
                condition: "value < 1e0".into(),
                pass: true,
            }],
            pass: true,
            runtime_ms: None,
        };
        let text = serde_json::to_string_pretty(&r).unwrap();
        assert_eq!(serde_json::from_str::<Report>(&text).unwrap(), r);
    }

    #[test]
    fn grid_file_round_trips() {
        let f = Preset::TorusScaling { ell: 2, k: 1.5 }.build().unwrap();
        let g = f.sample_to_grid(8).unwrap();
        let gf = GridFile::from_map(&g).unwrap();
        let text = serde_json::to_string(&gf).unwrap();
        let back: GridFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, gf);
        let h = back.into_map().unwrap();
        assert_eq!(h.grid().unwrap().values, g.grid().unwrap().values);
    }
}

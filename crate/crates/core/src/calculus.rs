//! Pointwise calculus of maps between manifolds: jets, the pull-back metric,
//! the conformality tensor `T_f = f*h − (1/m)‖df‖² g`, the one-form
//! `σ_f(X) = Σ_j T_f(X, e_j) df(e_j)`, its divergence and the energy
//! `Φ(f) = ∫ ‖T_f‖² dv_g`.
//!
//! Codomain quantities are ambient vectors. Derivatives of analytic maps are
//! eighth-order central differences in chart coordinates; grid maps on
//! circle products use exact periodic spectral differentiation at nodes.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::{ChartPoint, Manifold, QuadratureGrid};
use crate::numerics::{periodic_cardinal, periodic_diff_matrix, FIRST_DERIV_8, SECOND_DERIV_8};

/// Finite-difference step sizes in chart radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdConfig {
    /// Step of the first-derivative stencil (also used to differentiate σ_f
    /// and variation fields).
    pub step_first: f64,
    /// Step of the second-derivative stencil.
    pub step_second: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            step_first: 1e-2,
            step_second: 1e-2,
        }
    }
}

impl FdConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("step_first", self.step_first),
            ("step_second", self.step_second),
        ] {
            if !(v > 0.0 && v <= 1e-2) {
                return Err(LabError::InvalidArgument(format!(
                    "{name} = {v} is outside (0, 1e-2]"
                )));
            }
        }
        Ok(())
    }
}

pub type AmbientFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;

/// Node values of a map on a uniform grid of a circle-product domain,
/// stored as ambient codomain points in quadrature-grid node order.
#[derive(Clone, Debug)]
pub struct GridMap {
    pub resolution: usize,
    pub values: Vec<DVector<f64>>,
    diff: Arc<Vec<f64>>,
}

impl GridMap {
    pub fn new(resolution: usize, values: Vec<DVector<f64>>) -> Self {
        GridMap {
            resolution,
            values,
            diff: Arc::new(periodic_diff_matrix(resolution)),
        }
    }

    fn axes(&self) -> usize {
        let mut k = 0;
        let mut n = 1;
        while n < self.values.len() {
            n *= self.resolution;
            k += 1;
        }
        k
    }

    /// Spectral derivative along `axis` of a scalar field sampled at nodes.
    pub(crate) fn differentiate(&self, field: &[f64], axis: usize) -> Vec<f64> {
        let n = self.resolution;
        let ell = self.axes();
        let stride = n.pow((ell - 1 - axis) as u32);
        let mut out = vec![0.0; field.len()];
        for (idx, o) in out.iter_mut().enumerate() {
            let i = (idx / stride) % n;
            let base = idx - i * stride;
            let row = &self.diff[i * n..(i + 1) * n];
            *o = row
                .iter()
                .enumerate()
                .map(|(j, d)| d * field[base + j * stride])
                .sum();
        }
        out
    }

    /// Spectral derivative along `axis` of an ambient-vector field.
    pub(crate) fn differentiate_vectors(
        &self,
        field: &[DVector<f64>],
        axis: usize,
    ) -> Vec<DVector<f64>> {
        let dim = field[0].len();
        let mut out = vec![DVector::zeros(dim); field.len()];
        for c in 0..dim {
            let comp: Vec<f64> = field.iter().map(|v| v[c]).collect();
            for (o, d) in out.iter_mut().zip(self.differentiate(&comp, axis)) {
                o[c] = d;
            }
        }
        out
    }

    /// Trigonometric interpolation of the ambient node values (not yet
    /// retracted onto the codomain).
    fn interpolate(&self, x: &[f64]) -> DVector<f64> {
        let n = self.resolution;
        let ell = x.len();
        let h = 2.0 * PI / n as f64;
        let card: Vec<Vec<f64>> = x
            .iter()
            .map(|xa| {
                (0..n)
                    .map(|j| periodic_cardinal(n, xa - j as f64 * h))
                    .collect()
            })
            .collect();
        let dim = self.values[0].len();
        let mut out = DVector::zeros(dim);
        for (idx, v) in self.values.iter().enumerate() {
            let mut w = 1.0;
            let mut rem = idx;
            for a in (0..ell).rev() {
                w *= card[a][rem % n];
                rem /= n;
            }
            if w != 0.0 {
                out.axpy(w, v, 1.0);
            }
        }
        out
    }
}

#[derive(Clone)]
pub enum MapRule {
    /// Closed-form rule in chart coordinates, returning ambient codomain points.
    Analytic { name: String, eval: AmbientFn },
    /// Node values with periodic trigonometric interpolation.
    Grid(Arc<GridMap>),
}

/// A smooth map between two manifolds.
#[derive(Clone)]
pub struct SmoothMap {
    domain: Manifold,
    codomain: Manifold,
    rule: MapRule,
    fd: FdConfig,
}

impl fmt::Debug for SmoothMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothMap")
            .field("name", &self.name())
            .field("domain", &self.domain.label())
            .field("codomain", &self.codomain.label())
            .finish()
    }
}

impl SmoothMap {
    pub fn analytic<F>(
        name: impl Into<String>,
        domain: Manifold,
        codomain: Manifold,
        eval: F,
    ) -> Self
    where
        F: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        SmoothMap {
            domain,
            codomain,
            rule: MapRule::Analytic {
                name: name.into(),
                eval: Arc::new(eval),
            },
            fd: FdConfig::default(),
        }
    }

    /// A grid-rule map. The domain must be a circle product and the values
    /// must be listed in the node order of `domain.quadrature_grid(resolution)`.
    pub fn from_grid(domain: Manifold, codomain: Manifold, grid: GridMap) -> Result<Self> {
        if domain.is_sphere() {
            return Err(LabError::InvalidArgument(
                "grid maps need a circle-product domain".into(),
            ));
        }
        let expected = grid.resolution.pow(domain.dim() as u32);
        if grid.values.len() != expected {
            return Err(LabError::DimensionMismatch(format!(
                "grid map has {} nodes, expected {expected}",
                grid.values.len()
            )));
        }
        if let Some(v) = grid
            .values
            .iter()
            .find(|v| v.len() != codomain.ambient_dim())
        {
            return Err(LabError::DimensionMismatch(format!(
                "node value has {} ambient coordinates, codomain needs {}",
                v.len(),
                codomain.ambient_dim()
            )));
        }
        Ok(SmoothMap {
            domain,
            codomain,
            rule: MapRule::Grid(Arc::new(grid)),
            fd: FdConfig::default(),
        })
    }

    /// Samples any map at the nodes of a uniform circle-product grid.
    pub fn sample_to_grid(&self, resolution: usize) -> Result<Self> {
        let grid = self.domain.quadrature_grid(resolution)?;
        let values = grid.nodes.iter().map(|x| self.eval(x)).collect();
        Ok(Self::from_grid(
            self.domain.clone(),
            self.codomain.clone(),
            GridMap::new(resolution, values),
        )?
        .with_fd(self.fd))
    }

    pub fn with_fd(mut self, fd: FdConfig) -> Self {
        self.fd = fd;
        self
    }

    pub fn fd(&self) -> FdConfig {
        self.fd
    }

    pub fn domain(&self) -> &Manifold {
        &self.domain
    }

    pub fn codomain(&self) -> &Manifold {
        &self.codomain
    }

    pub fn rule(&self) -> &MapRule {
        &self.rule
    }

    pub fn name(&self) -> &str {
        match &self.rule {
            MapRule::Analytic { name, .. } => name,
            MapRule::Grid(_) => "grid",
        }
    }

    pub fn grid(&self) -> Option<&GridMap> {
        match &self.rule {
            MapRule::Grid(g) => Some(g),
            _ => None,
        }
    }

    /// Ambient image of a chart point.
    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        match &self.rule {
            MapRule::Analytic { eval, .. } => eval(x),
            MapRule::Grid(g) => self.codomain.retract(&g.interpolate(x)),
        }
    }

    /// True when `grid` is the node set a grid-rule map is stored on.
    pub(crate) fn matches_grid(&self, grid: &QuadratureGrid) -> bool {
        match &self.rule {
            MapRule::Grid(g) => grid.manifold == self.domain && grid.resolution == g.resolution,
            _ => false,
        }
    }
}

/// Value, differential and (optionally) second fundamental form of a map at
/// a point, all in ambient codomain coordinates against the domain's
/// orthonormal frame.
#[derive(Clone, Debug)]
pub struct MapJet {
    pub point: ChartPoint,
    pub value: DVector<f64>,
    /// `df[i] = df(e_i)`.
    pub df: Vec<DVector<f64>>,
    /// `hess[i][j] = (∇_{e_i} df)(e_j)`.
    pub hess: Option<Vec<Vec<DVector<f64>>>>,
}

impl MapJet {
    pub fn dim(&self) -> usize {
        self.df.len()
    }

    /// `df(v)` for `v` in frame components.
    pub fn df_apply(&self, v: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.value.len());
        for (vi, d) in v.iter().zip(&self.df) {
            out.axpy(*vi, d, 1.0);
        }
        out
    }

    /// `Hess_f(u, v)` for frame-component vectors. Panics without a Hessian.
    pub fn hess_apply(&self, u: &[f64], v: &[f64]) -> DVector<f64> {
        let hess = self
            .hess
            .as_ref()
            .expect("jet computed without second derivatives");
        let mut out = DVector::zeros(self.value.len());
        for (i, ui) in u.iter().enumerate() {
            for (j, vj) in v.iter().enumerate() {
                let c = ui * vj;
                if c != 0.0 {
                    out.axpy(c, &hess[i][j], 1.0);
                }
            }
        }
        out
    }

    /// Matrix of `h(df(e_i), E_a)` (row `a`, column `i`) against the
    /// codomain's orthonormal frame at the image point.
    pub fn df_components(&self, codomain: &Manifold) -> Result<DMatrix<f64>> {
        let frame = codomain.ambient_frame_at(&self.value)?;
        Ok(DMatrix::from_fn(frame.len(), self.df.len(), |a, i| {
            frame[a].dot(&self.df[i])
        }))
    }
}

/// Pointwise conformality data.
#[derive(Clone, Debug)]
pub struct ConformalityState {
    /// `(f*h)(e_i, e_j)`.
    pub pullback: DMatrix<f64>,
    /// `‖df‖²`.
    pub energy_density: f64,
    /// `T_f(e_i, e_j)`.
    pub t: DMatrix<f64>,
    /// `σ_f(e_i)` as ambient codomain vectors.
    pub sigma: Vec<DVector<f64>>,
    /// `‖T_f‖²`.
    pub t_norm_sq: f64,
}

impl ConformalityState {
    /// `σ_f(v)` for `v` in frame components.
    pub fn sigma_apply(&self, v: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.sigma[0].len());
        for (vi, s) in v.iter().zip(&self.sigma) {
            out.axpy(*vi, s, 1.0);
        }
        out
    }

    pub fn t_norm(&self) -> f64 {
        self.t_norm_sq.sqrt()
    }
}

pub fn conformality_state(jet: &MapJet, m: usize) -> ConformalityState {
    let n = jet.df.len();
    let pullback = DMatrix::from_fn(n, n, |i, j| jet.df[i].dot(&jet.df[j]));
    let energy_density = pullback.trace();
    let mut t = pullback.clone();
    for i in 0..n {
        t[(i, i)] -= energy_density / m as f64;
    }
    let sigma = (0..n)
        .map(|i| {
            let mut s = DVector::zeros(jet.value.len());
            for j in 0..n {
                s.axpy(t[(i, j)], &jet.df[j], 1.0);
            }
            s
        })
        .collect();
    let t_norm_sq = t.iter().map(|v| v * v).sum();
    ConformalityState {
        pullback,
        energy_density,
        t,
        sigma,
        t_norm_sq,
    }
}

/// Absolute defects of the algebraic identities satisfied by `T_f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Residuals {
    /// `max |T(e_i,e_j) − T(e_j,e_i)|`
    pub symmetry: f64,
    /// `|Σ_i T(e_i,e_i)|`
    pub trace: f64,
    /// `|(f*h, T) − ‖T‖²|`
    pub pairing_d: f64,
    /// `|‖T‖² − (‖f*h‖² − ‖df‖⁴/m)|`
    pub identity_e: f64,
}

impl Lemma1Residuals {
    pub fn max(&self) -> f64 {
        self.symmetry
            .max(self.trace)
            .max(self.pairing_d)
            .max(self.identity_e)
    }
}

pub fn lemma1_report(jet: &MapJet, m: usize) -> Lemma1Residuals {
    let s = conformality_state(jet, m);
    let symmetry = (&s.t - s.t.transpose()).amax();
    let trace = s.t.trace().abs();
    let pairing: f64 = s.pullback.iter().zip(s.t.iter()).map(|(a, b)| a * b).sum();
    let pullback_sq: f64 = s.pullback.iter().map(|v| v * v).sum();
    let e = pullback_sq - s.energy_density.powi(2) / m as f64;
    Lemma1Residuals {
        symmetry,
        trace,
        pairing_d: (pairing - s.t_norm_sq).abs(),
        identity_e: (s.t_norm_sq - e).abs(),
    }
}

/// Defects of `Σ_j h(Z, df e_j) T(W, e_j) = h(Z, σ(W))` for the given `Z`
/// (ambient codomain vector) and `W` (frame components), and of
/// `‖T‖² = Σ_i h(df e_i, σ e_i)`.
pub fn lemma2_residuals(
    jet: &MapJet,
    state: &ConformalityState,
    z: &DVector<f64>,
    w: &[f64],
) -> (f64, f64) {
    let n = jet.df.len();
    let mut lhs = 0.0;
    for j in 0..n {
        let tw: f64 = (0..n).map(|i| w[i] * state.t[(i, j)]).sum();
        lhs += z.dot(&jet.df[j]) * tw;
    }
    let rhs = z.dot(&state.sigma_apply(w));
    let trace: f64 = (0..n).map(|i| jet.df[i].dot(&state.sigma[i])).sum();
    ((lhs - rhs).abs(), (state.t_norm_sq - trace).abs())
}

/// Largest step `≤ h` for which a stencil reaching `4·step` along `dir`
/// stays within 80% of the distance to the nearest pole.
pub(crate) fn pole_safe_step(domain: &Manifold, x: &[f64], dir: &[f64], h: f64) -> f64 {
    if !domain.is_sphere() {
        return h;
    }
    let d = domain.dim();
    let mut step = h;
    for a in 0..d - 1 {
        if dir[a] != 0.0 {
            let margin = x[a].min(PI - x[a]);
            step = step.min(0.2 * margin / dir[a].abs());
        }
    }
    step
}

fn offset(x: &[f64], dir: &[f64], s: f64) -> Vec<f64> {
    x.iter().zip(dir).map(|(a, b)| a + s * b).collect()
}

pub(crate) fn check_finite(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(LabError::NonFiniteDerivative(what.to_string()))
    }
}

/// First derivative of an ambient-valued function along a chart direction.
pub(crate) fn chart_d1<F>(
    domain: &Manifold,
    f: F,
    x: &[f64],
    dir: &[f64],
    h: f64,
) -> Result<DVector<f64>>
where
    F: Fn(&[f64]) -> Result<DVector<f64>>,
{
    let h = pole_safe_step(domain, x, dir, h);
    let mut acc: Option<DVector<f64>> = None;
    for (p, c) in FIRST_DERIV_8.iter().enumerate() {
        let s = (p + 1) as f64 * h;
        let diff = f(&offset(x, dir, s))? - f(&offset(x, dir, -s))?;
        match acc.as_mut() {
            Some(a) => a.axpy(*c, &diff, 1.0),
            None => acc = Some(diff * *c),
        }
    }
    let out = acc.expect("stencil is non-empty") / h;
    check_finite(&out, "first derivative")?;
    Ok(out)
}

/// Second derivative of an ambient-valued function along a chart direction.
pub(crate) fn chart_d2<F>(
    domain: &Manifold,
    f: F,
    x: &[f64],
    center: &DVector<f64>,
    dir: &[f64],
    h: f64,
) -> Result<DVector<f64>>
where
    F: Fn(&[f64]) -> Result<DVector<f64>>,
{
    let h = pole_safe_step(domain, x, dir, h);
    // Σ c_p (f(x+s) + f(x−s) − 2f(x)), the centre weight being −2Σ c_p
    let mut acc = DVector::zeros(center.len());
    for (p, c) in SECOND_DERIV_8.iter().enumerate() {
        let s = (p + 1) as f64 * h;
        let sum = f(&offset(x, dir, s))? + f(&offset(x, dir, -s))? - center * 2.0;
        acc.axpy(*c, &sum, 1.0);
    }
    let out = acc / (h * h);
    check_finite(&out, "second derivative")?;
    Ok(out)
}

pub(crate) fn unit(d: usize, a: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[a] = 1.0;
    v
}

/// Jet at a chart point without the pole guard; finite-difference stencils
/// are shortened near poles instead.
pub(crate) fn jet_unchecked(f: &SmoothMap, x: &[f64], with_hess: bool) -> Result<MapJet> {
    let domain = f.domain();
    let codomain = f.codomain();
    let d = domain.dim();
    let fd = f.fd();
    let eval = |p: &[f64]| Ok(f.eval(p));
    let value = f.eval(x);
    check_finite(&value, "map value")?;
    let h = domain.scale_factors(x);
    let partials: Vec<DVector<f64>> = (0..d)
        .map(|a| chart_d1(domain, eval, x, &unit(d, a), fd.step_first))
        .collect::<Result<_>>()?;
    let df: Vec<DVector<f64>> = partials
        .iter()
        .zip(&h)
        .map(|(p, ha)| codomain.tangent_projection(&value, p) / *ha)
        .collect();
    let hess = if with_hess {
        let gamma = domain.christoffel(x);
        let mut second = vec![vec![DVector::zeros(value.len()); d]; d];
        for a in 0..d {
            second[a][a] = chart_d2(domain, eval, x, &value, &unit(d, a), fd.step_second)?;
        }
        for a in 0..d {
            for b in a + 1..d {
                let mut plus = vec![0.0; d];
                plus[a] = 1.0;
                plus[b] = 1.0;
                let mut minus = plus.clone();
                minus[b] = -1.0;
                let dp = chart_d2(domain, eval, x, &value, &plus, fd.step_second)?;
                let dm = chart_d2(domain, eval, x, &value, &minus, fd.step_second)?;
                let mixed = (dp - dm) * 0.25;
                second[a][b] = mixed.clone();
                second[b][a] = mixed;
            }
        }
        let mut hess = vec![vec![DVector::zeros(value.len()); d]; d];
        for a in 0..d {
            for b in a..d {
                let mut v = second[a][b].clone();
                for (c, p) in partials.iter().enumerate() {
                    let g = gamma.get(c, a, b);
                    if g != 0.0 {
                        v.axpy(-g, p, 1.0);
                    }
                }
                let v = codomain.tangent_projection(&value, &v) / (h[a] * h[b]);
                hess[a][b] = v.clone();
                hess[b][a] = v;
            }
        }
        Some(hess)
    } else {
        None
    };
    Ok(MapJet {
        point: ChartPoint(x.to_vec()),
        value,
        df,
        hess,
    })
}

/// Full jet (value, `df`, `∇df`) at a chart-interior point.
pub fn jet(f: &SmoothMap, x: &[f64]) -> Result<MapJet> {
    f.domain().validate_chart(x)?;
    jet_unchecked(f, x, true)
}

/// Value and `df` only.
pub fn first_jet(f: &SmoothMap, x: &[f64]) -> Result<MapJet> {
    f.domain().validate_chart(x)?;
    jet_unchecked(f, x, false)
}

/// Covariant derivative `∇_{e_i}` along the map of an ambient-valued section
/// `field` of `f⁻¹TN`, evaluated at `x`: tangent projection of the ambient
/// chart derivative, scaled to the unit frame vector.
pub(crate) fn section_derivative<F>(
    f: &SmoothMap,
    field: F,
    x: &[f64],
    value: &DVector<f64>,
    i: usize,
) -> Result<DVector<f64>>
where
    F: Fn(&[f64]) -> Result<DVector<f64>>,
{
    let domain = f.domain();
    let d = domain.dim();
    let h = domain.scale_factors(x);
    let raw = chart_d1(domain, field, x, &unit(d, i), f.fd().step_first)?;
    Ok(f.codomain().tangent_projection(value, &raw) / h[i])
}

pub(crate) fn div_sigma_unchecked(f: &SmoothMap, x: &[f64]) -> Result<DVector<f64>> {
    let domain = f.domain();
    let d = domain.dim();
    let m = d;
    let center = jet_unchecked(f, x, false)?;
    let state = conformality_state(&center, m);
    let frame_conn = domain.orthonormal_frame_unchecked(x);
    let mut div = DVector::zeros(center.value.len());
    for i in 0..d {
        let sigma_i = |p: &[f64]| -> Result<DVector<f64>> {
            let j = jet_unchecked(f, p, false)?;
            let s = conformality_state(&j, m);
            Ok(s.sigma[i].clone())
        };
        div += section_derivative(f, sigma_i, x, &center.value, i)?;
        for k in 0..d {
            let w = frame_conn[i][i][k];
            if w != 0.0 {
                div.axpy(-w, &state.sigma[k], 1.0);
            }
        }
    }
    Ok(div)
}

/// Euler–Lagrange residual `div σ_f = Σ_i (∇_{e_i} σ_f)(e_i)`.
pub fn div_sigma(f: &SmoothMap, x: &[f64]) -> Result<DVector<f64>> {
    f.domain().validate_chart(x)?;
    div_sigma_unchecked(f, x)
}

/// Per-node first-order data of a map on a quadrature grid.
#[derive(Clone, Debug)]
pub struct MapSample {
    pub jets: Vec<MapJet>,
    pub states: Vec<ConformalityState>,
}

impl MapSample {
    pub fn t_norm_sq(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t_norm_sq).collect()
    }
}

/// Node jets of a grid-rule map by spectral differentiation.
fn spectral_jets(f: &SmoothMap, g: &GridMap, grid: &QuadratureGrid) -> Vec<MapJet> {
    let domain = f.domain();
    let codomain = f.codomain();
    let d = domain.dim();
    let h = domain.scale_factors(&grid.nodes[0]);
    let partials: Vec<Vec<DVector<f64>>> = (0..d)
        .map(|a| g.differentiate_vectors(&g.values, a))
        .collect();
    grid.nodes
        .iter()
        .enumerate()
        .map(|(n, x)| {
            let value = g.values[n].clone();
            let df = (0..d)
                .map(|a| codomain.tangent_projection(&value, &partials[a][n]) / h[a])
                .collect();
            MapJet {
                point: x.clone(),
                value,
                df,
                hess: None,
            }
        })
        .collect()
}

/// First-order jets and conformality states at every grid node.
pub fn sample_map(f: &SmoothMap, grid: &QuadratureGrid) -> Result<MapSample> {
    if grid.manifold != *f.domain() {
        return Err(LabError::DimensionMismatch(format!(
            "grid is built on {}, map domain is {}",
            grid.manifold.label(),
            f.domain().label()
        )));
    }
    let m = f.domain().dim();
    let jets: Vec<MapJet> = match f.grid() {
        Some(g) if f.matches_grid(grid) => spectral_jets(f, g, grid),
        _ => grid
            .nodes
            .par_iter()
            .map(|x| first_jet(f, x))
            .collect::<Result<_>>()?,
    };
    let states = jets.iter().map(|j| conformality_state(j, m)).collect();
    Ok(MapSample { jets, states })
}

/// `div σ_f` at every grid node.
pub fn div_sigma_on_grid(
    f: &SmoothMap,
    grid: &QuadratureGrid,
    sample: &MapSample,
) -> Result<Vec<DVector<f64>>> {
    match f.grid() {
        Some(g) if f.matches_grid(grid) => {
            let d = f.domain().dim();
            let h = f.domain().scale_factors(&grid.nodes[0]);
            let mut div = vec![DVector::zeros(f.codomain().ambient_dim()); grid.len()];
            for i in 0..d {
                let sig: Vec<DVector<f64>> =
                    sample.states.iter().map(|s| s.sigma[i].clone()).collect();
                let ds = g.differentiate_vectors(&sig, i);
                for (n, v) in div.iter_mut().enumerate() {
                    *v += f
                        .codomain()
                        .tangent_projection(&sample.jets[n].value, &ds[n])
                        / h[i];
                }
            }
            Ok(div)
        }
        _ => grid.nodes.par_iter().map(|x| div_sigma(f, x)).collect(),
    }
}

/// `Φ(f) = ∫ ‖T_f‖² dv_g` by quadrature.
pub fn phi(f: &SmoothMap, grid: &QuadratureGrid) -> Result<f64> {
    let sample = sample_map(f, grid)?;
    Ok(grid.integrate(&sample.t_norm_sq()))
}

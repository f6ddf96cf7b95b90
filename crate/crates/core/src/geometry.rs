//! Constant-curvature manifolds: unit spheres `S^d` in iterated spherical
//! coordinates and products of circles with arbitrary radii.
//!
//! Both kinds carry an isometric embedding into Euclidean space. Codomain
//! calculus is done entirely in ambient coordinates: covariant derivatives
//! along a map are tangent projections of ambient derivatives, which is the
//! Levi-Civita connection of any isometrically embedded submanifold.
//!
//! Chart conventions for `S^d` (coordinates `c_0 .. c_{d-1}`): the first
//! `d - 1` coordinates are polar angles in `(0, π)`, the last one is the
//! azimuth. The embedding is
//! `x_d = cos c_0`, `x_{d-1} = sin c_0 cos c_1`, …,
//! `(x_0, x_1) = Π sin c_a · (cos φ, sin φ)`, so `S^2` reads
//! `(sin θ cos φ, sin θ sin φ, cos θ)`.

use std::f64::consts::PI;
use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numerics::{compensated_sum, gauss_legendre, wrap_angle};

/// Polar angles closer than this to `0` or `π` are rejected.
pub const POLE_GUARD: f64 = 1e-9;

/// Minimum quadrature resolution per axis.
pub const MIN_RESOLUTION: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub enum ManifoldKind {
    /// Unit sphere of the given dimension.
    Sphere { dim: usize },
    /// Product of circles, one radius per factor.
    CircleProduct { radii: Vec<f64> },
}

/// Wire form of a manifold: `{"sphere": 2}` or `{"circle_product": [1.0, 1.0]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifoldSpec {
    Sphere(usize),
    CircleProduct(Vec<f64>),
}

/// A constant-curvature space with chart, frames and embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ManifoldSpec", into = "ManifoldSpec")]
pub struct Manifold {
    kind: ManifoldKind,
}

pub type ManifoldDescriptor = Manifold;

impl TryFrom<ManifoldSpec> for Manifold {
    type Error = LabError;
    fn try_from(spec: ManifoldSpec) -> Result<Self> {
        match spec {
            ManifoldSpec::Sphere(d) => Manifold::sphere(d),
            ManifoldSpec::CircleProduct(r) => Manifold::circle_product(r),
        }
    }
}

impl From<Manifold> for ManifoldSpec {
    fn from(m: Manifold) -> Self {
        match m.kind {
            ManifoldKind::Sphere { dim } => ManifoldSpec::Sphere(dim),
            ManifoldKind::CircleProduct { radii } => ManifoldSpec::CircleProduct(radii),
        }
    }
}

/// Coordinates of a point in the manifold's chart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChartPoint(pub Vec<f64>);

impl Deref for ChartPoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ChartPoint {
    fn from(v: Vec<f64>) -> Self {
        ChartPoint(v)
    }
}

/// Orthonormal frame `e_i = ∂_i / |∂_i|` at a chart point.
#[derive(Clone, Debug)]
pub struct FrameData {
    /// Chart components of each `e_i` (row `i`).
    pub frame: DMatrix<f64>,
    /// The same vectors in ambient coordinates.
    pub ambient: Vec<DVector<f64>>,
    /// `connection[i][j][k]`: `∇_{e_i} e_j = Σ_k connection[i][j][k] e_k`.
    pub connection: Vec<Vec<Vec<f64>>>,
    /// Unit outer normal in ambient coordinates (spheres only).
    pub normal: Option<DVector<f64>>,
}

/// Coordinate Christoffel symbols, indexed `gamma[c][a][b] = Γ^c_{ab}`.
#[derive(Clone, Debug)]
pub struct Christoffel {
    dim: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn get(&self, c: usize, a: usize, b: usize) -> f64 {
        self.data[(c * self.dim + a) * self.dim + b]
    }
}

/// Product quadrature rule realizing `∫_M · dv_g`.
#[derive(Clone, Debug)]
pub struct QuadratureGrid {
    pub manifold: Manifold,
    pub resolution: usize,
    pub nodes: Vec<ChartPoint>,
    pub weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ_n w_n v_n` with compensated summation in node order.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        crate::numerics::weighted_sum(&self.weights, values)
    }

    pub fn total_weight(&self) -> f64 {
        compensated_sum(self.weights.iter().copied())
    }
}

impl Manifold {
    pub fn sphere(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(LabError::InvalidManifold(
                "sphere dimension must be ≥ 1".into(),
            ));
        }
        Ok(Manifold {
            kind: ManifoldKind::Sphere { dim },
        })
    }

    pub fn circle_product(radii: Vec<f64>) -> Result<Self> {
        if radii.is_empty() {
            return Err(LabError::InvalidManifold(
                "circle product needs at least one factor".into(),
            ));
        }
        if let Some(r) = radii.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(LabError::InvalidManifold(format!(
                "circle radius {r} is not positive"
            )));
        }
        Ok(Manifold {
            kind: ManifoldKind::CircleProduct { radii },
        })
    }

    /// Flat torus with unit radii.
    pub fn unit_torus(dim: usize) -> Result<Self> {
        Self::circle_product(vec![1.0; dim])
    }

    pub fn kind(&self) -> &ManifoldKind {
        &self.kind
    }

    pub fn is_sphere(&self) -> bool {
        matches!(self.kind, ManifoldKind::Sphere { .. })
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            ManifoldKind::Sphere { dim } => *dim,
            ManifoldKind::CircleProduct { radii } => radii.len(),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match &self.kind {
            ManifoldKind::Sphere { dim } => dim + 1,
            ManifoldKind::CircleProduct { radii } => 2 * radii.len(),
        }
    }

    /// Constant sectional curvature (1 for the unit sphere, 0 when flat).
    pub fn curvature(&self) -> f64 {
        if self.is_sphere() {
            1.0
        } else {
            0.0
        }
    }

    pub fn volume(&self) -> f64 {
        match &self.kind {
            ManifoldKind::Sphere { dim } => sphere_volume(*dim),
            ManifoldKind::CircleProduct { radii } => radii.iter().map(|r| 2.0 * PI * r).product(),
        }
    }

    pub fn label(&self) -> String {
        match &self.kind {
            ManifoldKind::Sphere { dim } => format!("S^{dim}"),
            ManifoldKind::CircleProduct { radii } => {
                let r: Vec<String> = radii.iter().map(|r| format!("{r}")).collect();
                format!("T^{}({})", radii.len(), r.join(","))
            }
        }
    }

    /// Checks length and, for spheres, that polar angles avoid the poles.
    pub fn validate_chart(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(LabError::DimensionMismatch(format!(
                "chart point has {} coordinates, {} expects {}",
                x.len(),
                self.label(),
                self.dim()
            )));
        }
        if let Some(i) = x.iter().position(|c| !c.is_finite()) {
            return Err(LabError::InvalidArgument(format!(
                "chart coordinate {i} is not finite"
            )));
        }
        if let ManifoldKind::Sphere { dim } = self.kind {
            for (index, &angle) in x.iter().take(dim - 1).enumerate() {
                if angle <= POLE_GUARD || angle >= PI - POLE_GUARD {
                    return Err(LabError::ChartSingularity {
                        index,
                        angle,
                        guard: POLE_GUARD,
                    });
                }
            }
        }
        Ok(())
    }

    /// Ambient image of a chart point. Smooth in the chart coordinates
    /// everywhere, including across the chart boundary, so finite-difference
    /// stencils may straddle a pole.
    pub fn embed(&self, x: &[f64]) -> DVector<f64> {
        match &self.kind {
            ManifoldKind::Sphere { dim } => {
                let d = *dim;
                let mut y = DVector::zeros(d + 1);
                let mut prod = 1.0;
                for a in 0..d - 1 {
                    y[d - a] = prod * x[a].cos();
                    prod *= x[a].sin();
                }
                let phi = x[d - 1];
                y[0] = prod * phi.cos();
                y[1] = prod * phi.sin();
                y
            }
            ManifoldKind::CircleProduct { radii } => {
                let mut y = DVector::zeros(2 * radii.len());
                for (i, r) in radii.iter().enumerate() {
                    y[2 * i] = r * x[i].cos();
                    y[2 * i + 1] = r * x[i].sin();
                }
                y
            }
        }
    }

    /// Ambient coordinate tangent vectors `∂_a ι` at a chart point.
    pub fn coordinate_tangents(&self, x: &[f64]) -> Vec<DVector<f64>> {
        match &self.kind {
            ManifoldKind::Sphere { dim } => {
                let d = *dim;
                let (s, c): (Vec<f64>, Vec<f64>) = x.iter().map(|t| (t.sin(), t.cos())).unzip();
                let mut out = vec![DVector::zeros(d + 1); d];
                for (b, tb) in out.iter_mut().enumerate() {
                    // polar components x[d-a] = Π_{j<a} s_j · c_a
                    for a in 0..d - 1 {
                        let v = if b < a {
                            let p: f64 = (0..a).filter(|&j| j != b).map(|j| s[j]).product();
                            p * c[b] * c[a]
                        } else if b == a {
                            let p: f64 = (0..a).map(|j| s[j]).product();
                            -p * s[a]
                        } else {
                            0.0
                        };
                        tb[d - a] = v;
                    }
                    let phi = x[d - 1];
                    if b < d - 1 {
                        let p: f64 = (0..d - 1).filter(|&j| j != b).map(|j| s[j]).product();
                        tb[0] = p * c[b] * phi.cos();
                        tb[1] = p * c[b] * phi.sin();
                    } else {
                        let p: f64 = (0..d - 1).map(|j| s[j]).product();
                        tb[0] = -p * phi.sin();
                        tb[1] = p * phi.cos();
                    }
                }
                out
            }
            ManifoldKind::CircleProduct { radii } => {
                let n = radii.len();
                (0..n)
                    .map(|a| {
                        let mut t = DVector::zeros(2 * n);
                        t[2 * a] = -radii[a] * x[a].sin();
                        t[2 * a + 1] = radii[a] * x[a].cos();
                        t
                    })
                    .collect()
            }
        }
    }

    /// Lengths `h_a = |∂_a|` of the (mutually orthogonal) coordinate vectors.
    pub fn scale_factors(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            ManifoldKind::Sphere { dim } => {
                let mut h = Vec::with_capacity(*dim);
                let mut prod = 1.0;
                for a in 0..*dim {
                    h.push(prod);
                    if a + 1 < *dim {
                        prod *= x[a].sin();
                    }
                }
                h
            }
            ManifoldKind::CircleProduct { radii } => radii.clone(),
        }
    }

    /// `∂_b h_a` for the diagonal metric `g_aa = h_a²`.
    fn scale_factor_derivatives(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut dh = vec![vec![0.0; d]; d];
        if self.is_sphere() {
            for (a, row) in dh.iter_mut().enumerate() {
                for (b, v) in row.iter_mut().enumerate().take(a) {
                    // h_a = Π_{j<a} sin x_j
                    let p: f64 = (0..a).filter(|&j| j != b).map(|j| x[j].sin()).product();
                    *v = p * x[b].cos();
                }
            }
        }
        dh
    }

    /// Metric matrix in chart coordinates.
    pub fn metric_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.validate_chart(x)?;
        let h = self.scale_factors(x);
        Ok(DMatrix::from_diagonal(&DVector::from_iterator(
            h.len(),
            h.iter().map(|v| v * v),
        )))
    }

    /// Coordinate Christoffel symbols of the diagonal metric.
    pub fn christoffel(&self, x: &[f64]) -> Christoffel {
        let d = self.dim();
        let h = self.scale_factors(x);
        let dh = self.scale_factor_derivatives(x);
        // ∂_a g_bb = 2 h_b ∂_a h_b
        let dg = |a: usize, b: usize| 2.0 * h[b] * dh[b][a];
        let mut data = vec![0.0; d * d * d];
        for c in 0..d {
            let gcc = h[c] * h[c];
            for a in 0..d {
                for b in 0..d {
                    let mut v = 0.0;
                    if b == c {
                        v += dg(a, c);
                    }
                    if a == c {
                        v += dg(b, c);
                    }
                    if a == b {
                        v -= dg(c, a);
                    }
                    data[(c * d + a) * d + b] = 0.5 * v / gcc;
                }
            }
        }
        Christoffel { dim: d, data }
    }

    /// Orthonormal frame obtained by normalizing the coordinate vectors.
    pub fn orthonormal_frame(&self, x: &[f64]) -> Result<FrameData> {
        self.validate_chart(x)?;
        let d = self.dim();
        let h = self.scale_factors(x);
        let frame = DMatrix::from_fn(d, d, |i, a| if i == a { 1.0 / h[i] } else { 0.0 });
        let ambient = self
            .coordinate_tangents(x)
            .into_iter()
            .zip(&h)
            .map(|(t, hi)| t / *hi)
            .collect();
        let connection = self.orthonormal_frame_unchecked(x);
        let normal = if self.is_sphere() {
            Some(self.embed(x))
        } else {
            None
        };
        Ok(FrameData {
            frame,
            ambient,
            connection,
            normal,
        })
    }

    /// Connection coefficients of the normalized coordinate frame,
    /// `[i][j][k]` with `∇_{e_i} e_j = Σ_k c[i][j][k] e_k`. No pole check.
    pub fn orthonormal_frame_unchecked(&self, x: &[f64]) -> Vec<Vec<Vec<f64>>> {
        let d = self.dim();
        let h = self.scale_factors(x);
        let dh = self.scale_factor_derivatives(x);
        let gamma = self.christoffel(x);
        // ∇_{e_i} e_j = (1/h_i) [ ∂_i(1/h_j) ∂_j + (1/h_j) Γ^k_ij ∂_k ]
        let mut connection = vec![vec![vec![0.0; d]; d]; d];
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let mut v = h[k] / h[j] * gamma.get(k, i, j);
                    if j == k {
                        v -= dh[j][i] / h[j];
                    }
                    connection[i][j][k] = v / h[i];
                }
            }
        }
        connection
    }

    /// Curvature operator `R(U, V)W` for tangent vectors expressed in any
    /// orthonormal representation (frame components or ambient coordinates).
    pub fn riemann_apply(
        &self,
        u: &DVector<f64>,
        v: &DVector<f64>,
        w: &DVector<f64>,
    ) -> DVector<f64> {
        if self.is_sphere() {
            u * v.dot(w) - v * u.dot(w)
        } else {
            DVector::zeros(u.len())
        }
    }

    /// Time-one geodesic from `x` with initial velocity `v` in frame components.
    pub fn exp_map(&self, x: &[f64], v: &[f64]) -> Result<ChartPoint> {
        self.validate_chart(x)?;
        if v.len() != self.dim() {
            return Err(LabError::DimensionMismatch("tangent vector length".into()));
        }
        match &self.kind {
            ManifoldKind::Sphere { .. } => {
                let frame = self.orthonormal_frame(x)?;
                let mut amb = DVector::zeros(self.ambient_dim());
                for (vi, e) in v.iter().zip(&frame.ambient) {
                    amb += e * *vi;
                }
                let y = self.ambient_exp(&self.embed(x), &amb);
                self.chart_of(&y)
            }
            ManifoldKind::CircleProduct { radii } => Ok(ChartPoint(
                x.iter()
                    .zip(v)
                    .zip(radii)
                    .map(|((xi, vi), r)| wrap_angle(xi + vi / r))
                    .collect(),
            )),
        }
    }

    /// Chart coordinates of an ambient point on the manifold.
    pub fn chart_of(&self, y: &DVector<f64>) -> Result<ChartPoint> {
        match &self.kind {
            ManifoldKind::Sphere { dim } => {
                let d = *dim;
                let mut c = vec![0.0; d];
                for a in 0..d - 1 {
                    let rest: f64 = (0..d - a).map(|j| y[j] * y[j]).sum::<f64>().sqrt();
                    c[a] = rest.atan2(y[d - a]);
                }
                c[d - 1] = wrap_angle(y[1].atan2(y[0]));
                let p = ChartPoint(c);
                self.validate_chart(&p)?;
                Ok(p)
            }
            ManifoldKind::CircleProduct { radii } => Ok(ChartPoint(
                (0..radii.len())
                    .map(|i| wrap_angle(y[2 * i + 1].atan2(y[2 * i])))
                    .collect(),
            )),
        }
    }

    /// Tangential projection `E − ⟨E, ν⟩ν` onto `T_y S^d`.
    pub fn project_to_tangent(&self, y: &DVector<f64>, e: &DVector<f64>) -> Result<DVector<f64>> {
        if !self.is_sphere() {
            return Err(LabError::NotEmbedded(self.label()));
        }
        let norm = y.norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(LabError::InvalidArgument(format!(
                "ambient point has norm {norm}, expected 1"
            )));
        }
        Ok(e - y * y.dot(e))
    }

    /// Orthogonal projection of an ambient vector onto the tangent space at
    /// the ambient point `y`, for either manifold kind.
    pub fn tangent_projection(&self, y: &DVector<f64>, e: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            ManifoldKind::Sphere { .. } => e - y * (y.dot(e) / y.norm_squared()),
            ManifoldKind::CircleProduct { .. } => {
                let mut out = DVector::zeros(e.len());
                for i in 0..e.len() / 2 {
                    let (t0, t1) = circle_tangent(y[2 * i], y[2 * i + 1]);
                    let c = e[2 * i] * t0 + e[2 * i + 1] * t1;
                    out[2 * i] = c * t0;
                    out[2 * i + 1] = c * t1;
                }
                out
            }
        }
    }

    /// Geodesic through ambient point `y` with ambient tangent velocity `v`.
    pub fn ambient_exp(&self, y: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            ManifoldKind::Sphere { .. } => {
                let n = v.norm();
                if n == 0.0 {
                    return y.clone();
                }
                y * n.cos() + v * (n.sin() / n)
            }
            ManifoldKind::CircleProduct { radii } => {
                let mut out = DVector::zeros(y.len());
                for (i, r) in radii.iter().enumerate() {
                    let (t0, t1) = circle_tangent(y[2 * i], y[2 * i + 1]);
                    let speed = v[2 * i] * t0 + v[2 * i + 1] * t1;
                    let angle = y[2 * i + 1].atan2(y[2 * i]) + speed / r;
                    out[2 * i] = r * angle.cos();
                    out[2 * i + 1] = r * angle.sin();
                }
                out
            }
        }
    }

    /// Closest point on the manifold to an ambient point.
    pub fn retract(&self, y: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            ManifoldKind::Sphere { .. } => y / y.norm(),
            ManifoldKind::CircleProduct { radii } => {
                let mut out = y.clone();
                for (i, r) in radii.iter().enumerate() {
                    let n = (y[2 * i].powi(2) + y[2 * i + 1].powi(2)).sqrt();
                    out[2 * i] *= r / n;
                    out[2 * i + 1] *= r / n;
                }
                out
            }
        }
    }

    /// Distance from an ambient point to the manifold's defining constraint.
    pub fn constraint_defect(&self, y: &DVector<f64>) -> f64 {
        match &self.kind {
            ManifoldKind::Sphere { .. } => (y.norm() - 1.0).abs(),
            ManifoldKind::CircleProduct { radii } => radii
                .iter()
                .enumerate()
                .map(|(i, r)| ((y[2 * i].powi(2) + y[2 * i + 1].powi(2)).sqrt() - r).abs())
                .fold(0.0, f64::max),
        }
    }

    /// Orthonormal tangent frame at an ambient point, in ambient coordinates.
    pub fn ambient_frame_at(&self, y: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        match &self.kind {
            ManifoldKind::Sphere { .. } => Ok(self.orthonormal_frame(&self.chart_of(y)?)?.ambient),
            ManifoldKind::CircleProduct { radii } => Ok((0..radii.len())
                .map(|i| {
                    let (t0, t1) = circle_tangent(y[2 * i], y[2 * i + 1]);
                    let mut e = DVector::zeros(y.len());
                    e[2 * i] = t0;
                    e[2 * i + 1] = t1;
                    e
                })
                .collect()),
        }
    }

    /// Product quadrature grid with `resolution` nodes per axis.
    ///
    /// Periodic axes use the trapezoid rule. Polar axes use Gauss–Legendre
    /// nodes in the angle itself, with the `sin^p` volume factor folded into
    /// the weights, so no node sits on a pole.
    pub fn quadrature_grid(&self, resolution: usize) -> Result<QuadratureGrid> {
        if resolution < MIN_RESOLUTION {
            return Err(LabError::ResolutionTooSmall {
                got: resolution,
                min: MIN_RESOLUTION,
            });
        }
        let periodic: Vec<(f64, f64)> = (0..resolution)
            .map(|j| {
                (
                    2.0 * PI * j as f64 / resolution as f64,
                    2.0 * PI / resolution as f64,
                )
            })
            .collect();
        let axes: Vec<Vec<(f64, f64)>> = match &self.kind {
            ManifoldKind::CircleProduct { radii } => radii
                .iter()
                .map(|r| periodic.iter().map(|(x, w)| (*x, w * r)).collect())
                .collect(),
            ManifoldKind::Sphere { dim } => {
                let (t, w) = gauss_legendre(resolution);
                let mut axes = Vec::with_capacity(*dim);
                for a in 0..dim - 1 {
                    let power = (dim - 1 - a) as i32;
                    axes.push(
                        t.iter()
                            .zip(&w)
                            .map(|(t, w)| {
                                let theta = 0.5 * PI * (t + 1.0);
                                (theta, 0.5 * PI * w * theta.sin().powi(power))
                            })
                            .collect(),
                    );
                }
                axes.push(periodic.clone());
                axes
            }
        };
        let total: usize = axes.iter().map(|a| a.len()).product();
        let mut nodes = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; axes.len()];
        for _ in 0..total {
            nodes.push(ChartPoint(
                idx.iter().zip(&axes).map(|(i, ax)| ax[*i].0).collect(),
            ));
            weights.push(idx.iter().zip(&axes).map(|(i, ax)| ax[*i].1).product());
            for a in (0..axes.len()).rev() {
                idx[a] += 1;
                if idx[a] < axes[a].len() {
                    break;
                }
                idx[a] = 0;
            }
        }
        Ok(QuadratureGrid {
            manifold: self.clone(),
            resolution,
            nodes,
            weights,
        })
    }
}

fn circle_tangent(a: f64, b: f64) -> (f64, f64) {
    let n = (a * a + b * b).sqrt();
    (-b / n, a / n)
}

/// `vol(S^d) = 2π^{(d+1)/2} / Γ((d+1)/2)` via the recursion `V_d = 2π/(d-1) V_{d-2}`.
pub fn sphere_volume(d: usize) -> f64 {
    match d {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => 2.0 * PI / (d as f64 - 1.0) * sphere_volume(d - 2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn torus_metric_is_radius_squared() {
        let t = Manifold::circle_product(vec![1.0, 1.0]).unwrap();
        assert_eq!(t.metric_at(&[0.3, 4.0]).unwrap(), DMatrix::identity(2, 2));
        let t = Manifold::circle_product(vec![2.0, 1.0]).unwrap();
        let g = t.metric_at(&[0.3, 4.0]).unwrap();
        assert_eq!(
            g,
            DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]))
        );
    }

    #[test]
    fn sphere_metric_matches_embedding_pullback() {
        let s = Manifold::sphere(2).unwrap();
        let x = [PI / 2.0, 0.7];
        let g = s.metric_at(&x).unwrap();
        // finite-difference pullback of the ambient metric
        let h = 1e-6;
        let d = |a: usize| {
            let mut p = x;
            let mut m = x;
            p[a] += h;
            m[a] -= h;
            (s.embed(&p) - s.embed(&m)) / (2.0 * h)
        };
        for a in 0..2 {
            for b in 0..2 {
                assert!(close(g[(a, b)], d(a).dot(&d(b)), 1e-9));
            }
        }
        assert!(close(g[(0, 0)], 1.0, 1e-15) && close(g[(1, 1)], 1.0, 1e-15));
    }

    #[test]
    fn radius_k_circle_metric_matches_arclength() {
        let k = 2.0;
        let t = Manifold::circle_product(vec![k, 1.0]).unwrap();
        // arclength of the embedded first factor over a full turn is 2πk
        let n = 1000;
        let len: f64 = (0..n)
            .map(|j| {
                let a = 2.0 * PI * j as f64 / n as f64;
                let b = 2.0 * PI * (j + 1) as f64 / n as f64;
                (t.embed(&[b, 0.0]) - t.embed(&[a, 0.0])).norm()
            })
            .sum();
        assert!(close(len, 2.0 * PI * k, 1e-4));
        assert!(close(t.metric_at(&[0.1, 0.2]).unwrap()[(0, 0)], 4.0, 0.0));
    }

    #[test]
    fn chart_singularity_near_poles() {
        let s = Manifold::sphere(2).unwrap();
        assert!(matches!(
            s.metric_at(&[1e-10, 0.0]),
            Err(LabError::ChartSingularity { .. })
        ));
        assert!(matches!(
            s.orthonormal_frame(&[PI, 0.0]),
            Err(LabError::ChartSingularity { .. })
        ));
        assert!(s.metric_at(&[1e-8, 0.0]).is_ok());
    }

    #[test]
    fn sphere2_frame_is_dtheta_and_scaled_dphi() {
        let s = Manifold::sphere(2).unwrap();
        let x = [0.8, 2.0];
        let f = s.orthonormal_frame(&x).unwrap();
        assert!(close(f.frame[(0, 0)], 1.0, 1e-15));
        assert!(close(f.frame[(1, 1)], 1.0 / 0.8f64.sin(), 1e-15));
        let g = s.metric_at(&x).unwrap();
        let gram = &f.frame * &g * f.frame.transpose();
        assert!((gram - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn christoffels_match_embedding() {
        // Γ^c_ab h_c² = ⟨∂_a∂_b ι, ∂_c ι⟩, second derivatives by differences
        for m in [Manifold::sphere(2).unwrap(), Manifold::sphere(4).unwrap()] {
            let d = m.dim();
            let x: Vec<f64> = (0..d).map(|i| 0.6 + 0.37 * i as f64).collect();
            let gamma = m.christoffel(&x);
            let tang = m.coordinate_tangents(&x);
            let h = m.scale_factors(&x);
            let step = 1e-4;
            for a in 0..d {
                for b in 0..d {
                    let shifted = |sa: f64, sb: f64| {
                        let mut p = x.clone();
                        p[a] += sa;
                        p[b] += sb;
                        m.embed(&p)
                    };
                    let dd = (shifted(step, step) - shifted(step, -step) - shifted(-step, step)
                        + shifted(-step, -step))
                        / (4.0 * step * step);
                    for c in 0..d {
                        let expect = dd.dot(&tang[c]) / (h[c] * h[c]);
                        assert!(
                            close(gamma.get(c, a, b), expect, 1e-6),
                            "Γ^{c}_{a}{b}: {} vs {}",
                            gamma.get(c, a, b),
                            expect
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn frame_connection_matches_ambient_derivative() {
        let m = Manifold::sphere(3).unwrap();
        let x = [0.9, 1.3, 0.4];
        let fr = m.orthonormal_frame(&x).unwrap();
        let h = m.scale_factors(&x);
        let step = 1e-5;
        for i in 0..3 {
            for j in 0..3 {
                let mut p = x;
                let mut q = x;
                p[i] += step;
                q[i] -= step;
                let ej = |pt: &[f64]| m.orthonormal_frame(pt).unwrap().ambient[j].clone();
                let de = (ej(&p) - ej(&q)) / (2.0 * step * h[i]);
                let y = m.embed(&x);
                let cov = m.tangent_projection(&y, &de);
                for k in 0..3 {
                    assert!(close(cov.dot(&fr.ambient[k]), fr.connection[i][j][k], 1e-8));
                }
            }
        }
    }

    #[test]
    fn sphere2_curvature_example() {
        let s = Manifold::sphere(2).unwrap();
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let e2 = DVector::from_vec(vec![0.0, 1.0]);
        assert_eq!(s.riemann_apply(&e1, &e2, &e2), e1);
        assert_eq!(s.riemann_apply(&e1, &e1, &e2), DVector::zeros(2));
        let t = Manifold::unit_torus(2).unwrap();
        assert_eq!(t.riemann_apply(&e1, &e2, &e2), DVector::zeros(2));
    }

    #[test]
    fn exp_map_examples() {
        let t = Manifold::unit_torus(2).unwrap();
        let p = t.exp_map(&[0.0, 0.0], &[PI, PI / 2.0]).unwrap();
        assert!(close(p[0], PI, 1e-15) && close(p[1], PI / 2.0, 1e-15));
        let s = Manifold::sphere(2).unwrap();
        let x = [1.1, 0.3];
        let same = s.exp_map(&x, &[0.0, 0.0]).unwrap();
        assert!(close(same[0], x[0], 1e-14) && close(same[1], x[1], 1e-14));
        // from the equator, a quarter turn along -∂θ reaches the north pole
        let r = s.exp_map(&[PI / 2.0, 0.0], &[-PI / 2.0, 0.0]);
        assert!(matches!(r, Err(LabError::ChartSingularity { .. })));
    }

    #[test]
    fn projection_example() {
        let s = Manifold::sphere(2).unwrap();
        let y = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let e = DVector::from_vec(vec![1.0, 0.0, 1.0]);
        let p = s.project_to_tangent(&y, &e).unwrap();
        assert_eq!(p, DVector::from_vec(vec![1.0, 0.0, 0.0]));
        assert_eq!(s.project_to_tangent(&y, &y).unwrap(), DVector::zeros(3));
        let t = Manifold::unit_torus(2).unwrap();
        assert!(matches!(
            t.project_to_tangent(&y, &e),
            Err(LabError::NotEmbedded(_))
        ));
    }

    #[test]
    fn quadrature_examples() {
        let t = Manifold::unit_torus(2).unwrap();
        let g = t.quadrature_grid(16).unwrap();
        assert!(close(g.total_weight(), (2.0 * PI).powi(2), 1e-10));
        let s = Manifold::sphere(2).unwrap();
        let g = s.quadrature_grid(24).unwrap();
        assert!(close(g.total_weight(), 4.0 * PI, 1e-10));
        let vals: Vec<f64> = g.nodes.iter().map(|x| x[0].cos().powi(2)).collect();
        assert!(close(g.integrate(&vals), 4.0 * PI / 3.0, 1e-8));
        assert!(matches!(
            s.quadrature_grid(3),
            Err(LabError::ResolutionTooSmall { .. })
        ));
        assert!(g.nodes.iter().all(|x| s.validate_chart(x).is_ok()));
    }

    #[test]
    fn chart_roundtrip() {
        let s = Manifold::sphere(4).unwrap();
        let x = [0.4, 2.2, 1.0, 5.5];
        let c = s.chart_of(&s.embed(&x)).unwrap();
        for (a, b) in c.iter().zip(&x) {
            assert!(close(*a, *b, 1e-12));
        }
    }
}

//! First and second variation of Φ, their finite-difference oracles along
//! geodesic deformations, stability spectra over finite bases and an
//! L²-gradient flow for grid-rule maps.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{
    div_sigma_on_grid, phi, sample_map, section_derivative, ConformalityState, GridMap, MapJet,
    MapSample, SmoothMap,
};
use crate::error::{LabError, Result};
use crate::geometry::{Manifold, QuadratureGrid};
use crate::numerics::compensated_sum;

/// Ambient vector field along a map, as a function of the chart point and
/// the image point. Values are projected onto the codomain tangent space.
pub type FieldFn = Arc<dyn Fn(&[f64], &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// A section of `f⁻¹TN`.
#[derive(Clone)]
pub struct VariationField {
    base: SmoothMap,
    label: String,
    rule: FieldFn,
}

impl std::fmt::Debug for VariationField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VariationField")
            .field("label", &self.label)
            .field("base", &self.base)
            .finish()
    }
}

impl VariationField {
    /// Field given by an ambient rule `(x, f(x)) ↦ V`, projected to `T_{f(x)}N`.
    pub fn analytic<F>(base: &SmoothMap, label: impl Into<String>, rule: F) -> Self
    where
        F: Fn(&[f64], &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        VariationField {
            base: base.clone(),
            label: label.into(),
            rule: Arc::new(rule),
        }
    }

    /// `X = Σ_a ψ_a E_a` over the parallel frame of a circle-product codomain.
    pub fn frame_components<F>(base: &SmoothMap, label: impl Into<String>, psi: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        let codomain = base.codomain().clone();
        if codomain.is_sphere() {
            return Err(LabError::InvalidArgument(
                "frame-component fields need a circle-product codomain".into(),
            ));
        }
        Ok(Self::analytic(base, label, move |x, y| {
            let frame = codomain
                .ambient_frame_at(y)
                .expect("circle frames exist everywhere");
            let mut v = DVector::zeros(y.len());
            for (c, e) in psi(x).iter().zip(&frame) {
                v.axpy(*c, e, 1.0);
            }
            v
        }))
    }

    /// Tangential projection of a constant ambient vector.
    pub fn projected_constant(base: &SmoothMap, e: DVector<f64>) -> Self {
        Self::analytic(base, "projected constant", move |_, _| e.clone())
    }

    pub fn zero(base: &SmoothMap) -> Self {
        let n = base.codomain().ambient_dim();
        Self::analytic(base, "zero", move |_, _| DVector::zeros(n))
    }

    /// `Σ c_a X_a` over the base of the first field.
    pub fn linear_combination(
        label: impl Into<String>,
        terms: &[(f64, VariationField)],
    ) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| LabError::InvalidArgument("empty linear combination".into()))?;
        let base = first.1.base.clone();
        let rules: Vec<(f64, FieldFn)> = terms.iter().map(|(c, x)| (*c, x.rule.clone())).collect();
        let n = base.codomain().ambient_dim();
        Ok(Self::analytic(&base, label, move |x, y| {
            let mut v = DVector::zeros(n);
            for (c, r) in &rules {
                v.axpy(*c, &r(x, y), 1.0);
            }
            v
        }))
    }

    /// Pointwise product with a scalar function on the domain.
    pub fn times<F>(&self, label: impl Into<String>, factor: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let rule = self.rule.clone();
        Self::analytic(&self.base, label, move |x, y| rule(x, y) * factor(x))
    }

    pub fn base(&self) -> &SmoothMap {
        &self.base
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Value over an arbitrary image point `y` (tangent-projected).
    pub fn value_with(&self, codomain: &Manifold, x: &[f64], y: &DVector<f64>) -> DVector<f64> {
        codomain.tangent_projection(y, &(self.rule)(x, y))
    }

    /// `X(x)` over the base map.
    pub fn value_at(&self, x: &[f64]) -> DVector<f64> {
        let y = self.base.eval(x);
        self.value_with(self.base.codomain(), x, &y)
    }

    /// The geodesic deformation `f_t(x) = exp_{f(x)}(t X(x))`. Grid-rule
    /// bases deform node values and stay grid-rule maps.
    pub fn deform(&self, t: f64) -> Result<SmoothMap> {
        let base = self.base.clone();
        deform_over(&base, self, t)
    }
}

fn deform_over(f: &SmoothMap, field: &VariationField, t: f64) -> Result<SmoothMap> {
    let codomain = f.codomain().clone();
    if let Some(g) = f.grid() {
        let grid = f.domain().quadrature_grid(g.resolution)?;
        let values = grid
            .nodes
            .iter()
            .zip(&g.values)
            .map(|(x, y)| codomain.ambient_exp(y, &(field.value_with(&codomain, x, y) * t)))
            .collect();
        return Ok(SmoothMap::from_grid(
            f.domain().clone(),
            codomain,
            GridMap::new(g.resolution, values),
        )?
        .with_fd(f.fd()));
    }
    let base = f.clone();
    let field = field.clone();
    let cod = codomain.clone();
    Ok(SmoothMap::analytic(
        format!("{} deformed", f.name()),
        f.domain().clone(),
        codomain,
        move |x| {
            let y = base.eval(x);
            cod.ambient_exp(&y, &(field.value_with(&cod, x, &y) * t))
        },
    )
    .with_fd(f.fd()))
}

/// `∇_{e_i} X` in the pulled-back connection, at a chart-interior point.
pub fn field_covariant_derivative(
    field: &VariationField,
    x: &[f64],
    i: usize,
) -> Result<DVector<f64>> {
    let f = field.base();
    f.domain().validate_chart(x)?;
    let y = f.eval(x);
    let cod = f.codomain();
    section_derivative(f, |p| Ok(field.value_with(cod, p, &f.eval(p))), x, &y, i)
}

/// Values and frame covariant derivatives of a field at every grid node.
#[derive(Clone, Debug)]
pub struct FieldSample {
    pub values: Vec<DVector<f64>>,
    /// `derivs[node][i] = ∇_{e_i} X`.
    pub derivs: Vec<Vec<DVector<f64>>>,
}

/// Samples `field`, evaluated over `f`, at the nodes of `grid`.
pub fn sample_field(
    f: &SmoothMap,
    field: &VariationField,
    grid: &QuadratureGrid,
    sample: &MapSample,
) -> Result<FieldSample> {
    let cod = f.codomain();
    let d = f.domain().dim();
    let values: Vec<DVector<f64>> = grid
        .nodes
        .iter()
        .zip(&sample.jets)
        .map(|(x, j)| field.value_with(cod, x, &j.value))
        .collect();
    let derivs = match f.grid() {
        Some(g) if grid.manifold == *f.domain() && grid.resolution == g.resolution => {
            let h = f.domain().scale_factors(&grid.nodes[0]);
            let partials: Vec<Vec<DVector<f64>>> = (0..d)
                .map(|a| g.differentiate_vectors(&values, a))
                .collect();
            (0..grid.len())
                .map(|n| {
                    (0..d)
                        .map(|a| {
                            cod.tangent_projection(&sample.jets[n].value, &partials[a][n]) / h[a]
                        })
                        .collect()
                })
                .collect()
        }
        _ => grid
            .nodes
            .par_iter()
            .zip(&sample.jets)
            .map(|(x, j)| {
                (0..d)
                    .map(|i| {
                        section_derivative(
                            f,
                            |p| Ok(field.value_with(cod, p, &f.eval(p))),
                            x,
                            &j.value,
                            i,
                        )
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?,
    };
    Ok(FieldSample { values, derivs })
}

/// `Φ'(0) = −4 ∫ h(X, div σ_f)`.
pub fn first_variation(
    f: &SmoothMap,
    field: &VariationField,
    grid: &QuadratureGrid,
) -> Result<f64> {
    let sample = sample_map(f, grid)?;
    let div = div_sigma_on_grid(f, grid, &sample)?;
    let cod = f.codomain();
    let integrand: Vec<f64> = grid
        .nodes
        .iter()
        .zip(&sample.jets)
        .zip(&div)
        .map(|((x, j), d)| field.value_with(cod, x, &j.value).dot(d))
        .collect();
    Ok(-4.0 * grid.integrate(&integrand))
}

/// Central difference `(Φ(f_h) − Φ(f_{−h})) / 2h` along the geodesic deformation.
pub fn first_variation_fd(
    f: &SmoothMap,
    field: &VariationField,
    grid: &QuadratureGrid,
    step: f64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(LabError::InvalidArgument(format!(
            "step must be positive, got {step}"
        )));
    }
    let plus = phi(&deform_over(f, field, step)?, grid)?;
    let minus = phi(&deform_over(f, field, -step)?, grid)?;
    Ok((plus - minus) / (2.0 * step))
}

/// The five integrals of the second variation after the Hessian term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SecondVariationTerms {
    /// `∫ Σ h(∇_i X, ∇_j Y) T_ij`
    pub t_coupling: f64,
    /// `∫ Σ h(∇_i X, df_j) h(∇_i Y, df_j)`
    pub gram: f64,
    /// `∫ Σ h(∇_i X, df_j) h(df_i, ∇_j Y)`
    pub mixed: f64,
    /// `−(2/m) ∫ (Σ h(∇_i X, df_i)) (Σ h(∇_j Y, df_j))`
    pub trace_penalty: f64,
    /// `∫ Σ h(R(X, df_i) Y, df_j) T_ij`
    pub curvature: f64,
    pub total: f64,
    /// The curvature term in the form `∫ Σ_i h(R(X, df_i) Y, σ_f(e_i))`.
    pub curvature_via_sigma: f64,
}

/// Pointwise integrands in the order of `SecondVariationTerms`, the last
/// entry being the σ-form of the curvature term.
#[allow(clippy::too_many_arguments)]
pub(crate) fn l_integrands(
    cod: &Manifold,
    jet: &MapJet,
    state: &ConformalityState,
    m: usize,
    xv: &DVector<f64>,
    dx: &[DVector<f64>],
    yv: &DVector<f64>,
    dy: &[DVector<f64>],
) -> [f64; 6] {
    let d = dx.len();
    let t = &state.t;
    let mut out = [0.0; 6];
    let mut tx = 0.0;
    let mut ty = 0.0;
    for i in 0..d {
        tx += dx[i].dot(&jet.df[i]);
        ty += dy[i].dot(&jet.df[i]);
        for j in 0..d {
            out[0] += dx[i].dot(&dy[j]) * t[(i, j)];
            out[1] += dx[i].dot(&jet.df[j]) * dy[i].dot(&jet.df[j]);
            out[2] += dx[i].dot(&jet.df[j]) * jet.df[i].dot(&dy[j]);
        }
    }
    out[3] = -2.0 / m as f64 * tx * ty;
    if cod.is_sphere() {
        for i in 0..d {
            let r = cod.riemann_apply(xv, &jet.df[i], yv);
            for j in 0..d {
                out[4] += r.dot(&jet.df[j]) * t[(i, j)];
            }
            out[5] += r.dot(&state.sigma[i]);
        }
    }
    out
}

fn terms_from(sums: [f64; 6]) -> SecondVariationTerms {
    SecondVariationTerms {
        t_coupling: sums[0],
        gram: sums[1],
        mixed: sums[2],
        trace_penalty: sums[3],
        curvature: sums[4],
        total: compensated_sum(sums[..5].iter().copied()),
        curvature_via_sigma: sums[5],
    }
}

fn second_variation_sampled(
    f: &SmoothMap,
    grid: &QuadratureGrid,
    sample: &MapSample,
    xs: &FieldSample,
    ys: &FieldSample,
) -> SecondVariationTerms {
    let m = f.domain().dim();
    let per_node: Vec<[f64; 6]> = (0..grid.len())
        .map(|n| {
            l_integrands(
                f.codomain(),
                &sample.jets[n],
                &sample.states[n],
                m,
                &xs.values[n],
                &xs.derivs[n],
                &ys.values[n],
                &ys.derivs[n],
            )
        })
        .collect();
    let mut sums = [0.0; 6];
    for (c, s) in sums.iter_mut().enumerate() {
        let col: Vec<f64> = per_node.iter().map(|v| v[c]).collect();
        *s = grid.integrate(&col);
    }
    terms_from(sums)
}

/// The quadratic form `L(X, Y)`: the five integrals after the Hessian term.
pub fn second_variation(
    f: &SmoothMap,
    x: &VariationField,
    y: &VariationField,
    grid: &QuadratureGrid,
) -> Result<SecondVariationTerms> {
    let sample = sample_map(f, grid)?;
    let xs = sample_field(f, x, grid, &sample)?;
    let ys = sample_field(f, y, grid, &sample)?;
    Ok(second_variation_sampled(f, grid, &sample, &xs, &ys))
}

/// `¼ d²Φ(f_t)/dt²` at `t = 0` by the five-point stencil along the
/// geodesic deformation.
pub fn second_variation_fd(
    f: &SmoothMap,
    field: &VariationField,
    grid: &QuadratureGrid,
    step: f64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(LabError::InvalidArgument(format!(
            "step must be positive, got {step}"
        )));
    }
    let p = |t: f64| -> Result<f64> {
        if t == 0.0 {
            phi(f, grid)
        } else {
            phi(&deform_over(f, field, t)?, grid)
        }
    };
    let v = -p(2.0 * step)? + 16.0 * p(step)? - 30.0 * p(0.0)? + 16.0 * p(-step)? - p(-2.0 * step)?;
    Ok(0.25 * v / (12.0 * step * step))
}

/// Gram condition numbers above this are treated as a degenerate basis.
pub const GRAM_CONDITION_LIMIT: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub basis_size: usize,
    pub min_eigenvalue: f64,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub gram_condition: f64,
}

/// Generalized eigenvalues of the symmetrized second-variation matrix
/// against the L² Gram matrix of `basis`.
pub fn stability_spectrum(
    f: &SmoothMap,
    basis: &[VariationField],
    grid: &QuadratureGrid,
) -> Result<StabilityReport> {
    if basis.is_empty() {
        return Err(LabError::InvalidArgument("empty variation basis".into()));
    }
    let sample = sample_map(f, grid)?;
    let fields: Vec<FieldSample> = basis
        .iter()
        .map(|b| sample_field(f, b, grid, &sample))
        .collect::<Result<_>>()?;
    let nb = basis.len();
    let pairs: Vec<(usize, usize)> = (0..nb).flat_map(|a| (a..nb).map(move |b| (a, b))).collect();
    let entries: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let lab = second_variation_sampled(f, grid, &sample, &fields[a], &fields[b]).total;
            let lba = if a == b {
                lab
            } else {
                second_variation_sampled(f, grid, &sample, &fields[b], &fields[a]).total
            };
            let gram: Vec<f64> = fields[a]
                .values
                .iter()
                .zip(&fields[b].values)
                .map(|(u, v)| u.dot(v))
                .collect();
            (0.5 * (lab + lba), grid.integrate(&gram))
        })
        .collect();
    let mut q = DMatrix::zeros(nb, nb);
    let mut g = DMatrix::zeros(nb, nb);
    for (&(a, b), (qv, gv)) in pairs.iter().zip(entries) {
        q[(a, b)] = qv;
        q[(b, a)] = qv;
        g[(a, b)] = gv;
        g[(b, a)] = gv;
    }
    let geig = SymmetricEigen::new(g.clone()).eigenvalues;
    let gmax = geig.max();
    let gmin = geig.min();
    let condition = if gmin > 0.0 {
        gmax / gmin
    } else {
        f64::INFINITY
    };
    if !(condition <= GRAM_CONDITION_LIMIT) {
        return Err(LabError::DegenerateBasis {
            condition,
            limit: GRAM_CONDITION_LIMIT,
        });
    }
    let chol = g.cholesky().ok_or(LabError::DegenerateBasis {
        condition,
        limit: GRAM_CONDITION_LIMIT,
    })?;
    let l = chol.l();
    let linv = l.clone().try_inverse().ok_or(LabError::DegenerateBasis {
        condition,
        limit: GRAM_CONDITION_LIMIT,
    })?;
    let c = &linv * q * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| a.total_cmp(b));
    Ok(StabilityReport {
        basis_size: nb,
        min_eigenvalue: eigenvalues[0],
        eigenvalues,
        gram_condition: condition,
    })
}

/// Smallest step size tried before the flow gives up.
pub const MIN_TAU: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub step: usize,
    pub phi: f64,
    /// Step size used to reach this record (0 for the initial state).
    pub tau: f64,
    /// `sup |div σ_f|` at this record's map.
    pub residual_sup: f64,
}

#[derive(Clone, Debug)]
pub struct FlowTrajectory {
    pub records: Vec<FlowRecord>,
    /// Node values after every `snapshot_every` steps, with the step index.
    pub snapshots: Vec<(usize, SmoothMap)>,
    pub final_map: SmoothMap,
    /// True when the flow stopped early at a (numerically) stationary map.
    pub converged: bool,
}

impl FlowTrajectory {
    pub fn phi_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.phi).collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FlowOptions {
    pub tau: f64,
    pub steps: usize,
    pub snapshot_every: Option<usize>,
}

fn flow_state(f: &SmoothMap, grid: &QuadratureGrid) -> Result<(f64, Vec<DVector<f64>>)> {
    let sample = sample_map(f, grid)?;
    let phi = grid.integrate(&sample.t_norm_sq());
    let div = div_sigma_on_grid(f, grid, &sample)?;
    Ok((phi, div))
}

/// Gradient descent `y ← exp_y(τ div σ_f)` on the node values of a grid-rule
/// map, halving τ whenever Φ would increase.
pub fn gradient_flow(f0: &SmoothMap, opts: FlowOptions) -> Result<FlowTrajectory> {
    let g0 = f0
        .grid()
        .ok_or_else(|| LabError::InvalidArgument("gradient flow needs a grid-rule map".into()))?;
    if !(opts.tau > 0.0) {
        return Err(LabError::InvalidArgument(format!(
            "tau must be positive, got {}",
            opts.tau
        )));
    }
    let grid = f0.domain().quadrature_grid(g0.resolution)?;
    let cod = f0.codomain().clone();
    let mut f = f0.clone();
    let (mut phi_cur, mut div) = flow_state(&f, &grid)?;
    let sup = |d: &[DVector<f64>]| d.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut records = vec![FlowRecord {
        step: 0,
        phi: phi_cur,
        tau: 0.0,
        residual_sup: sup(&div),
    }];
    let mut snapshots = Vec::new();
    let mut tau = opts.tau;
    let mut converged = false;
    for step in 1..=opts.steps {
        if phi_cur < 1e-14 || sup(&div) < 1e-12 {
            converged = true;
            break;
        }
        let values = &f.grid().expect("flow keeps grid maps").values;
        loop {
            let next: Vec<DVector<f64>> = values
                .iter()
                .zip(&div)
                .map(|(y, d)| cod.ambient_exp(y, &(d * tau)))
                .collect();
            let cand = SmoothMap::from_grid(
                f.domain().clone(),
                cod.clone(),
                GridMap::new(g0.resolution, next),
            )?
            .with_fd(f.fd());
            let (phi_new, div_new) = flow_state(&cand, &grid)?;
            if phi_new <= phi_cur {
                f = cand;
                phi_cur = phi_new;
                div = div_new;
                records.push(FlowRecord {
                    step,
                    phi: phi_cur,
                    tau,
                    residual_sup: sup(&div),
                });
                break;
            }
            tau *= 0.5;
            if tau < MIN_TAU {
                return Err(LabError::StepFailure {
                    step,
                    min_tau: MIN_TAU,
                });
            }
        }
        if let Some(every) = opts.snapshot_every {
            if every > 0 && step % every == 0 {
                snapshots.push((step, f.clone()));
            }
        }
    }
    Ok(FlowTrajectory {
        records,
        snapshots,
        final_map: f,
        converged,
    })
}

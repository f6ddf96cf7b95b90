//! Identities specific to round spheres: the projected parallel fields
//! `Z_k = E_k − ⟨E_k, ν⟩ν`, the pointwise Hessian identity for `‖T_f‖²`,
//! the operator identities for `Z_k`, the five-term decomposition for maps
//! out of `S^m`, the `γ_k` divergence identity and the three-term
//! decomposition for maps into `S^n`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{
    chart_d1, chart_d2, conformality_state, div_sigma_unchecked, jet_unchecked, section_derivative,
    unit, ConformalityState, MapJet, SmoothMap,
};
use crate::error::{LabError, Result};
use crate::geometry::{Manifold, QuadratureGrid};
use crate::variation::l_integrands;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilySite {
    /// Fields on the domain sphere, `ν = x`.
    Domain,
    /// Fields on the codomain sphere pulled back through a map, `ν = f(x)`.
    Codomain,
}

/// The fields `Z_k = p(E_k)` for an orthonormal ambient frame `E_k`.
#[derive(Clone, Debug)]
pub struct ProjectedFieldFamily {
    sphere: Manifold,
    site: FamilySite,
    through: Option<SmoothMap>,
    /// Columns are the ambient frame vectors `E_k`.
    frame: DMatrix<f64>,
}

/// Defects of the family's pointwise invariants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyResiduals {
    /// `|Σ_k φ_k² − 1|`
    pub phi_sum: f64,
    /// `|Σ_k h(Z_k, Z_k) − n|`
    pub norm_sum: f64,
    /// `max_v ‖Σ_k h(v, Z_k) Z_k − v‖` over an orthonormal tangent basis.
    pub completeness: f64,
}

pub fn projected_fields(
    sphere: &Manifold,
    through: Option<&SmoothMap>,
) -> Result<ProjectedFieldFamily> {
    if !sphere.is_sphere() {
        return Err(LabError::NotASphere(sphere.label()));
    }
    let site = match through {
        Some(f) => {
            if f.codomain() != sphere {
                return Err(LabError::DimensionMismatch(format!(
                    "map lands in {}, family lives on {}",
                    f.codomain().label(),
                    sphere.label()
                )));
            }
            FamilySite::Codomain
        }
        None => FamilySite::Domain,
    };
    let n = sphere.ambient_dim();
    Ok(ProjectedFieldFamily {
        sphere: sphere.clone(),
        site,
        through: through.cloned(),
        frame: DMatrix::identity(n, n),
    })
}

impl ProjectedFieldFamily {
    /// Same family built from a rotated ambient frame (columns of `q`).
    pub fn with_frame(mut self, q: DMatrix<f64>) -> Result<Self> {
        let n = self.sphere.ambient_dim();
        if q.nrows() != n || q.ncols() != n {
            return Err(LabError::DimensionMismatch(format!(
                "frame must be {n}x{n}"
            )));
        }
        if (q.transpose() * &q - DMatrix::identity(n, n)).amax() > 1e-12 {
            return Err(LabError::InvalidArgument("frame is not orthonormal".into()));
        }
        self.frame = q;
        Ok(self)
    }

    pub fn site(&self) -> FamilySite {
        self.site
    }

    pub fn len(&self) -> usize {
        self.frame.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `φ_k = ⟨E_k, ν⟩` at the sphere point `nu`.
    pub fn phi_at(&self, nu: &DVector<f64>) -> Vec<f64> {
        (0..self.len())
            .map(|k| self.frame.column(k).dot(nu))
            .collect()
    }

    /// `Z_k` at the sphere point `nu`, ambient coordinates.
    pub fn fields_at(&self, nu: &DVector<f64>) -> Vec<DVector<f64>> {
        (0..self.len())
            .map(|k| {
                let e: DVector<f64> = self.frame.column(k).into_owned();
                let p = e.dot(nu);
                e - nu * p
            })
            .collect()
    }

    /// The sphere point `ν` the family is evaluated at for the chart point `x`.
    pub fn normal_at(&self, x: &[f64]) -> DVector<f64> {
        match &self.through {
            Some(f) => f.eval(x),
            None => self.sphere.embed(x),
        }
    }

    pub fn residuals_at(&self, x: &[f64]) -> Result<FamilyResiduals> {
        let nu = self.normal_at(x);
        let phi = self.phi_at(&nu);
        let z = self.fields_at(&nu);
        let n = self.sphere.dim() as f64;
        let tangent = match self.site {
            FamilySite::Domain => self.sphere.orthonormal_frame(x)?.ambient,
            FamilySite::Codomain => self.sphere.ambient_frame_at(&nu)?,
        };
        let completeness = tangent
            .iter()
            .map(|v| {
                let mut s = DVector::zeros(nu.len());
                for zk in &z {
                    s.axpy(v.dot(zk), zk, 1.0);
                }
                (s - v).norm()
            })
            .fold(0.0, f64::max);
        Ok(FamilyResiduals {
            phi_sum: (phi.iter().map(|p| p * p).sum::<f64>() - 1.0).abs(),
            norm_sum: (z.iter().map(|v| v.norm_squared()).sum::<f64>() - n).abs(),
            completeness,
        })
    }

    /// For a pulled-back family: `max_{i,k} ‖∇_{e_i} W_k + φ_k df(e_i)‖` with
    /// the left side by finite differences.
    pub fn pulled_back_derivative_residual(&self, x: &[f64]) -> Result<f64> {
        let f = self.through.as_ref().ok_or_else(|| {
            LabError::InvalidArgument("family is not pulled back through a map".into())
        })?;
        f.domain().validate_chart(x)?;
        let j = jet_unchecked(f, x, false)?;
        let phi = self.phi_at(&j.value);
        let mut worst: f64 = 0.0;
        for k in 0..self.len() {
            for i in 0..f.domain().dim() {
                let d = section_derivative(
                    f,
                    |p| Ok(self.fields_at(&f.eval(p))[k].clone()),
                    x,
                    &j.value,
                    i,
                )?;
                worst = worst.max((d + &j.df[i] * phi[k]).norm());
            }
        }
        Ok(worst)
    }

    /// Frame components `g(Z_k, e_a)` on the domain sphere at `x`.
    pub fn domain_components(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let e = self.sphere.coordinate_tangents(x);
        let h = self.sphere.scale_factors(x);
        let nu = self.sphere.embed(x);
        self.fields_at(&nu)
            .iter()
            .map(|z| e.iter().zip(&h).map(|(t, ha)| z.dot(t) / ha).collect())
            .collect()
    }
}

/// `∇_{e_i} Z_k = −φ_k e_i` on the domain sphere, ambient coordinates.
pub fn domain_field_derivative_rule(
    m: usize,
    x: &[f64],
    i: usize,
    k: usize,
) -> Result<DVector<f64>> {
    let s = Manifold::sphere(m)?;
    let frame = s.orthonormal_frame(x)?;
    if i >= m || k > m {
        return Err(LabError::InvalidArgument(format!(
            "indices i={i}, k={k} out of range for S^{m}"
        )));
    }
    let phi_k = frame.normal.as_ref().expect("sphere frames carry a normal")[k];
    Ok(&frame.ambient[i] * -phi_k)
}

/// The same derivative by finite differences of the ambient field `Z_k`
/// along `e_i`, projected to the tangent plane.
pub fn domain_field_derivative_fd(
    m: usize,
    x: &[f64],
    i: usize,
    k: usize,
    step: f64,
) -> Result<DVector<f64>> {
    let s = Manifold::sphere(m)?;
    s.validate_chart(x)?;
    let fam = projected_fields(&s, None)?;
    let h = s.scale_factors(x);
    let raw = chart_d1(
        &s,
        |p| Ok(fam.fields_at(&s.embed(p))[k].clone()),
        x,
        &unit(m, i),
        step,
    )?;
    Ok(s.tangent_projection(&s.embed(x), &raw) / h[i])
}

/// First chart partials and frame Hessian of a scalar function.
fn scalar_derivatives<F>(
    domain: &Manifold,
    u: F,
    x: &[f64],
    h1: f64,
    h2: f64,
) -> Result<(Vec<f64>, DMatrix<f64>)>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let d = domain.dim();
    let uv = |p: &[f64]| -> Result<DVector<f64>> { Ok(DVector::from_element(1, u(p)?)) };
    let center = uv(x)?;
    let grad: Vec<f64> = (0..d)
        .map(|a| Ok(chart_d1(domain, uv, x, &unit(d, a), h1)?[0]))
        .collect::<Result<_>>()?;
    let mut second = DMatrix::zeros(d, d);
    for a in 0..d {
        second[(a, a)] = chart_d2(domain, uv, x, &center, &unit(d, a), h2)?[0];
        for b in a + 1..d {
            let mut plus = vec![0.0; d];
            plus[a] = 1.0;
            plus[b] = 1.0;
            let mut minus = plus.clone();
            minus[b] = -1.0;
            let v = 0.25
                * (chart_d2(domain, uv, x, &center, &plus, h2)?[0]
                    - chart_d2(domain, uv, x, &center, &minus, h2)?[0]);
            second[(a, b)] = v;
            second[(b, a)] = v;
        }
    }
    let gamma = domain.christoffel(x);
    let s = domain.scale_factors(x);
    let hess = DMatrix::from_fn(d, d, |a, b| {
        let corr: f64 = (0..d).map(|c| gamma.get(c, a, b) * grad[c]).sum();
        (second[(a, b)] - corr) / (s[a] * s[b])
    });
    Ok((grad, hess))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma4Residuals {
    /// `|Σ_k (Z_k(Z_k u) − (∇_{Z_k} Z_k) u) − Δu|`
    pub a: f64,
    /// `max_i ‖Σ_k g(e_i, Z_k) Z_k − e_i‖`
    pub b: f64,
    /// `|Σ_{k,i} h(df Z_k, df e_i) T(Z_k, e_i) − ‖T‖²|`, when a map is given.
    pub c: Option<f64>,
    /// `Δu` by the coordinate Laplace–Beltrami formula.
    pub laplacian: f64,
}

/// Operator identities of the fields `Z_k` on `S^m` at `x`, for a scalar
/// test function `u` of the ambient position.
pub fn lemma4_check<U>(m: usize, u: U, x: &[f64], f: Option<&SmoothMap>) -> Result<Lemma4Residuals>
where
    U: Fn(&DVector<f64>) -> f64 + Sync,
{
    let s = Manifold::sphere(m)?;
    s.validate_chart(x)?;
    let fam = projected_fields(&s, None)?;
    let step = 1e-2;
    let ux = |p: &[f64]| -> Result<f64> { Ok(u(&s.embed(p))) };
    let (grad, hess) = scalar_derivatives(&s, ux, x, step, step)?;
    let laplacian = hess.trace();

    // chart components of Z_k: (Z_k · ∂_a) / h_a²
    let chart_z = |p: &[f64], k: usize| -> Vec<f64> {
        let t = s.coordinate_tangents(p);
        let z = &fam.fields_at(&s.embed(p))[k];
        t.iter().map(|ta| z.dot(ta) / ta.norm_squared()).collect()
    };
    let z_u = |p: &[f64], k: usize| -> Result<f64> {
        let zc = chart_z(p, k);
        let mut acc = 0.0;
        for (a, za) in zc.iter().enumerate() {
            if *za != 0.0 {
                acc += za
                    * chart_d1(
                        &s,
                        |q| Ok(DVector::from_element(1, u(&s.embed(q)))),
                        p,
                        &unit(m, a),
                        step,
                    )?[0];
            }
        }
        Ok(acc)
    };
    let nu = s.embed(x);
    let phi = fam.phi_at(&nu);
    let mut op = 0.0;
    for k in 0..fam.len() {
        let zc = chart_z(x, k);
        let mut zzu = 0.0;
        for (a, za) in zc.iter().enumerate() {
            if *za != 0.0 {
                zzu += za
                    * chart_d1(
                        &s,
                        |q| Ok(DVector::from_element(1, z_u(q, k)?)),
                        x,
                        &unit(m, a),
                        step,
                    )?[0];
            }
        }
        let zu: f64 = zc.iter().zip(&grad).map(|(a, b)| a * b).sum();
        // ∇_{Z_k} Z_k = −φ_k Z_k
        op += zzu + phi[k] * zu;
    }

    let frame = s.orthonormal_frame(x)?;
    let z = fam.fields_at(&nu);
    let b = frame
        .ambient
        .iter()
        .map(|e| {
            let mut acc = DVector::zeros(nu.len());
            for zk in &z {
                acc.axpy(e.dot(zk), zk, 1.0);
            }
            (acc - e).norm()
        })
        .fold(0.0, f64::max);

    let c = match f {
        Some(f) => {
            if f.domain() != &s {
                return Err(LabError::DimensionMismatch(
                    "map domain must be the test sphere".into(),
                ));
            }
            let j = jet_unchecked(f, x, false)?;
            let st = conformality_state(&j, m);
            let comps = fam.domain_components(x);
            let mut acc = 0.0;
            for zc in &comps {
                let dfz = j.df_apply(zc);
                for i in 0..m {
                    let tzi: f64 = (0..m).map(|a| zc[a] * st.t[(a, i)]).sum();
                    acc += dfz.dot(&j.df[i]) * tzi;
                }
            }
            Some((acc - st.t_norm_sq).abs())
        }
        None => None,
    };
    Ok(Lemma4Residuals {
        a: (op - laplacian).abs(),
        b,
        c,
        laplacian,
    })
}

/// `∇³f(e_i; e_a, e_b) = (∇_{e_i} ∇df)(e_a, e_b)` as `[i][a][b]`.
pub fn third_derivative(f: &SmoothMap, x: &[f64]) -> Result<Vec<Vec<Vec<DVector<f64>>>>> {
    let domain = f.domain();
    let d = domain.dim();
    let center = jet_unchecked(f, x, true)?;
    let hess = center.hess.as_ref().expect("requested");
    let conn = domain.orthonormal_frame_unchecked(x);
    let n = center.value.len();
    let stacked = |p: &[f64]| -> Result<DVector<f64>> {
        let j = jet_unchecked(f, p, true)?;
        let hs = j.hess.expect("requested");
        let mut v = DVector::zeros(d * d * n);
        for a in 0..d {
            for b in 0..d {
                v.rows_mut((a * d + b) * n, n).copy_from(&hs[a][b]);
            }
        }
        Ok(v)
    };
    let scale = domain.scale_factors(x);
    let mut out = vec![vec![vec![DVector::zeros(n); d]; d]; d];
    for i in 0..d {
        let raw = chart_d1(domain, stacked, x, &unit(d, i), f.fd().step_first)?;
        for a in 0..d {
            for b in 0..d {
                let r: DVector<f64> = raw.rows((a * d + b) * n, n).into_owned();
                let mut v = f.codomain().tangent_projection(&center.value, &r) / scale[i];
                for c in 0..d {
                    let w = conn[i][a][c];
                    if w != 0.0 {
                        v.axpy(-w, &hess[c][b], 1.0);
                    }
                    let w = conn[i][b][c];
                    if w != 0.0 {
                        v.axpy(-w, &hess[a][c], 1.0);
                    }
                }
                out[i][a][b] = v;
            }
        }
    }
    Ok(out)
}

/// Both sides of the pointwise identity for `¼ Hess(‖T_f‖²)(Z, Z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma3Report {
    pub lhs: f64,
    /// The seven right-hand terms in display order.
    pub terms: [f64; 7],
    pub rhs: f64,
    pub residual: f64,
}

/// `H(Z, e_i)` for frame components `z`.
fn hess_z(jet: &MapJet, z: &[f64], i: usize) -> DVector<f64> {
    let d = jet.dim();
    jet.hess_apply(z, &unit(d, i))
}

/// Pointwise identity for `¼ Hess(‖T_f‖²)(Z, Z)` with `Z` given by its
/// frame components at `x`.
pub fn lemma3_residual(f: &SmoothMap, z: &[f64], x: &[f64]) -> Result<Lemma3Report> {
    let domain = f.domain();
    domain.validate_chart(x)?;
    let m = domain.dim();
    if z.len() != m {
        return Err(LabError::DimensionMismatch(format!(
            "Z has {} components, domain has dim {m}",
            z.len()
        )));
    }
    let u = |p: &[f64]| -> Result<f64> {
        Ok(conformality_state(&jet_unchecked(f, p, false)?, m).t_norm_sq)
    };
    let (_, hu) = scalar_derivatives(domain, u, x, f.fd().step_first, f.fd().step_second)?;
    let zv = DVector::from_column_slice(z);
    let lhs = 0.25 * (zv.transpose() * &hu * &zv)[(0, 0)];

    let jet = jet_unchecked(f, x, true)?;
    let st = conformality_state(&jet, m);
    let third = third_derivative(f, x)?;
    let t = &st.t;
    let hz: Vec<DVector<f64>> = (0..m).map(|i| hess_z(&jet, z, i)).collect();
    let mut terms = [0.0; 7];
    for i in 0..m {
        let mut t3 = DVector::zeros(jet.value.len());
        for a in 0..m {
            for b in 0..m {
                t3.axpy(z[a] * z[b], &third[i][a][b], 1.0);
            }
        }
        terms[0] += t3.dot(&st.sigma[i]);
    }
    let mut tr = 0.0;
    let dfz = jet.df_apply(z);
    for i in 0..m {
        tr += hz[i].dot(&jet.df[i]);
        let rm = domain.riemann_apply(&zv, &DVector::from_vec(unit(m, i)), &zv);
        let df_rm = jet.df_apply(rm.as_slice());
        let rn = f.codomain().riemann_apply(&dfz, &jet.df[i], &dfz);
        for j in 0..m {
            terms[1] += hz[i].dot(&hz[j]) * t[(i, j)];
            terms[2] += hz[i].dot(&jet.df[j]).powi(2);
            terms[3] += hz[i].dot(&jet.df[j]) * jet.df[i].dot(&hz[j]);
            terms[5] -= df_rm.dot(&jet.df[j]) * t[(i, j)];
            terms[6] += rn.dot(&jet.df[j]) * t[(i, j)];
        }
    }
    terms[4] = -2.0 / m as f64 * tr * tr;
    let rhs: f64 = terms.iter().sum();
    Ok(Lemma3Report {
        lhs,
        terms,
        rhs,
        residual: (lhs - rhs).abs(),
    })
}

fn require_sphere_domain(f: &SmoothMap) -> Result<()> {
    if !f.domain().is_sphere() {
        return Err(LabError::NotASphere(format!(
            "domain {}",
            f.domain().label()
        )));
    }
    Ok(())
}

fn require_grid(f: &SmoothMap, grid: &QuadratureGrid) -> Result<()> {
    if grid.manifold != *f.domain() {
        return Err(LabError::DimensionMismatch(format!(
            "grid is built on {}, map domain is {}",
            grid.manifold.label(),
            f.domain().label()
        )));
    }
    Ok(())
}

/// The five integrals for maps out of `S^m`, summed over the domain family
/// `Z_k`, with their signs and coefficients included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Terms {
    /// `¼ ∫ Σ_k Hess(‖T‖²)(Z_k, Z_k)`
    pub i: f64,
    /// `−∫ Σ_k Σ_i h(∇³f(e_i; Z_k, Z_k), σ(e_i))`
    pub ii: f64,
    /// `∫ Σ_k Σ_ij h(df(R(Z_k, e_i) Z_k), df e_j) T_ij`
    pub iii: f64,
    /// `−6 ∫ Σ_k φ_k Σ_ij h(∇df(e_i, Z_k), df e_j) T_ij`
    pub iv: f64,
    /// `3 ∫ Σ_k φ_k² ‖T‖²`
    pub v: f64,
    pub total: f64,
    pub phi_value: f64,
    /// `Σ_k L(df Z_k, df Z_k)` from the pointwise second-variation integrands.
    pub l_sum: f64,
    /// `sup |div σ_f|` over the grid.
    pub residual_sup: f64,
    /// Set when `total < −tol` although `residual_sup < tol` for a
    /// C-stationary map on `S^m`, `m ≥ 5`.
    pub contradiction: bool,
}

pub fn theorem1_terms(
    f: &SmoothMap,
    grid: &QuadratureGrid,
    stationarity_tol: f64,
) -> Result<Theorem1Terms> {
    require_sphere_domain(f)?;
    require_grid(f, grid)?;
    let m = f.domain().dim();
    if m < 2 {
        return Err(LabError::InvalidArgument(
            "the decomposition needs m >= 2".into(),
        ));
    }
    let domain = f.domain().clone();
    let fam = projected_fields(&domain, None)?;
    let per_node: Vec<([f64; 7], f64)> = grid
        .nodes
        .par_iter()
        .map(|x| -> Result<([f64; 7], f64)> {
            let jet = jet_unchecked(f, x, true)?;
            let st = conformality_state(&jet, m);
            let u = |p: &[f64]| -> Result<f64> {
                Ok(conformality_state(&jet_unchecked(f, p, false)?, m).t_norm_sq)
            };
            let (_, hu) = scalar_derivatives(&domain, u, x, f.fd().step_first, f.fd().step_second)?;
            let third = third_derivative(f, x)?;
            let nu = domain.embed(x);
            let phi = fam.phi_at(&nu);
            let comps = fam.domain_components(x);
            let mut out = [0.0; 7];
            for (k, z) in comps.iter().enumerate() {
                let zv = DVector::from_column_slice(z);
                out[0] += 0.25 * (zv.transpose() * &hu * &zv)[(0, 0)];
                let hz: Vec<DVector<f64>> = (0..m).map(|i| hess_z(&jet, z, i)).collect();
                for i in 0..m {
                    let mut t3 = DVector::zeros(jet.value.len());
                    for a in 0..m {
                        for b in 0..m {
                            t3.axpy(z[a] * z[b], &third[i][a][b], 1.0);
                        }
                    }
                    out[1] -= t3.dot(&st.sigma[i]);
                    let rm = domain.riemann_apply(&zv, &DVector::from_vec(unit(m, i)), &zv);
                    let df_rm = jet.df_apply(rm.as_slice());
                    for j in 0..m {
                        out[2] += df_rm.dot(&jet.df[j]) * st.t[(i, j)];
                        out[3] -= 6.0 * phi[k] * hz[i].dot(&jet.df[j]) * st.t[(i, j)];
                    }
                }
                out[4] += 3.0 * phi[k] * phi[k] * st.t_norm_sq;
                // L(df Z_k, df Z_k) with ∇_i(df Z_k) = ∇df(e_i, Z_k) − φ_k df(e_i)
                let xv = jet.df_apply(z);
                let dx: Vec<DVector<f64>> = (0..m).map(|i| &hz[i] - &jet.df[i] * phi[k]).collect();
                let l = l_integrands(f.codomain(), &jet, &st, m, &xv, &dx, &xv, &dx);
                out[5] += l[..5].iter().sum::<f64>();
            }
            out[6] = st.t_norm_sq;
            let div = div_sigma_unchecked(f, x)?;
            Ok((out, div.norm()))
        })
        .collect::<Result<_>>()?;
    let col = |c: usize| -> f64 {
        let v: Vec<f64> = per_node.iter().map(|(o, _)| o[c]).collect();
        grid.integrate(&v)
    };
    let (i, ii, iii, iv, v, l_sum, phi_value) =
        (col(0), col(1), col(2), col(3), col(4), col(5), col(6));
    let total = crate::numerics::compensated_sum([i, ii, iii, iv, v]);
    let residual_sup = per_node.iter().map(|(_, r)| *r).fold(0.0, f64::max);
    let contradiction =
        m >= 5 && residual_sup < stationarity_tol && total < -stationarity_tol * (1.0 + phi_value);
    Ok(Theorem1Terms {
        i,
        ii,
        iii,
        iv,
        v,
        total,
        phi_value,
        l_sum,
        residual_sup,
        contradiction,
    })
}

/// Both sides of the integrated `γ_k` identity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaReport {
    pub k: usize,
    /// `∫ Σ_i h(∇df(e_i, Z_k), σ(e_i))`
    pub lhs: f64,
    /// `−∫ h(df Z_k, div σ) + ∫ φ_k ‖T‖²`
    pub rhs: f64,
    pub residual: f64,
}

pub fn gamma_div_identity(f: &SmoothMap, k: usize, grid: &QuadratureGrid) -> Result<GammaReport> {
    require_sphere_domain(f)?;
    require_grid(f, grid)?;
    let m = f.domain().dim();
    if k > m {
        return Err(LabError::InvalidArgument(format!(
            "k = {k} out of range for S^{m}"
        )));
    }
    let domain = f.domain().clone();
    let fam = projected_fields(&domain, None)?;
    let per_node: Vec<[f64; 3]> = grid
        .nodes
        .par_iter()
        .map(|x| -> Result<[f64; 3]> {
            let jet = jet_unchecked(f, x, true)?;
            let st = conformality_state(&jet, m);
            let z = &fam.domain_components(x)[k];
            let phi_k = fam.phi_at(&domain.embed(x))[k];
            let lhs: f64 = (0..m).map(|i| hess_z(&jet, z, i).dot(&st.sigma[i])).sum();
            let div = div_sigma_unchecked(f, x)?;
            Ok([lhs, -jet.df_apply(z).dot(&div), phi_k * st.t_norm_sq])
        })
        .collect::<Result<_>>()?;
    let col = |c: usize| -> f64 {
        let v: Vec<f64> = per_node.iter().map(|o| o[c]).collect();
        grid.integrate(&v)
    };
    let lhs = col(0);
    let rhs = col(1) + col(2);
    Ok(GammaReport {
        k,
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
    })
}

/// The three integrals for maps into `S^n`, summed over the pulled-back
/// family `W_k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Terms {
    /// `3 ∫ Σ_k h(E_k, ν)² ‖T‖²`
    pub term1: f64,
    /// `−∫ Σ_k h(W_k, W_k) ‖T‖²`
    pub term2: f64,
    /// `∫ Σ_k Σ_ij h(W_k, df e_i) h(W_k, df e_j) T_ij`
    pub term3: f64,
    pub total: f64,
    pub phi_value: f64,
    /// `Σ_k L(W_k, W_k)` from the pointwise second-variation integrands.
    pub l_sum: f64,
}

fn theorem2_node(
    cod: &Manifold,
    fam: &ProjectedFieldFamily,
    jet: &MapJet,
    st: &ConformalityState,
    m: usize,
) -> [f64; 5] {
    let phi = fam.phi_at(&jet.value);
    let w = fam.fields_at(&jet.value);
    let mut out = [0.0; 5];
    for (k, wk) in w.iter().enumerate() {
        out[0] += 3.0 * phi[k] * phi[k] * st.t_norm_sq;
        out[1] -= wk.norm_squared() * st.t_norm_sq;
        for i in 0..m {
            for j in 0..m {
                out[2] += wk.dot(&jet.df[i]) * wk.dot(&jet.df[j]) * st.t[(i, j)];
            }
        }
        let dw: Vec<DVector<f64>> = jet.df.iter().map(|d| d * -phi[k]).collect();
        let l = l_integrands(cod, jet, st, m, wk, &dw, wk, &dw);
        out[3] += l[..5].iter().sum::<f64>();
    }
    out[4] = st.t_norm_sq;
    out
}

pub fn theorem2_terms(f: &SmoothMap, grid: &QuadratureGrid) -> Result<Theorem2Terms> {
    if !f.codomain().is_sphere() {
        return Err(LabError::NotASphere(format!(
            "codomain {}",
            f.codomain().label()
        )));
    }
    require_grid(f, grid)?;
    let m = f.domain().dim();
    let fam = projected_fields(f.codomain(), Some(f))?;
    let sample = crate::calculus::sample_map(f, grid)?;
    let per_node: Vec<[f64; 5]> = sample
        .jets
        .iter()
        .zip(&sample.states)
        .map(|(j, s)| theorem2_node(f.codomain(), &fam, j, s, m))
        .collect();
    let col = |c: usize| -> f64 {
        let v: Vec<f64> = per_node.iter().map(|o| o[c]).collect();
        grid.integrate(&v)
    };
    let (term1, term2, term3, l_sum, phi_value) = (col(0), col(1), col(2), col(3), col(4));
    Ok(Theorem2Terms {
        term1,
        term2,
        term3,
        total: term1 + term2 + term3,
        phi_value,
        l_sum,
    })
}

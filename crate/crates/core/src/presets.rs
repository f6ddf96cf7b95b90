//! Catalog of closed-form maps, the torus scaling example with its
//! analytic conformality data, and variation-field bases.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calculus::SmoothMap;
use crate::error::{LabError, Result};
use crate::geometry::Manifold;
use crate::variation::VariationField;

/// Named map with its parameters. JSON form:
/// `{"preset": "torus_scaling", "params": {"ell": 2, "k": 2.0}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "preset",
    content = "params",
    rename_all = "snake_case",
    deny_unknown_fields
)]
pub enum Preset {
    Identity { manifold: Manifold },
    TorusScaling { ell: usize, k: f64 },
    AzimuthDoubling,
    StereographicPower { degree: u32 },
    LatitudeWobble { a: f64, dim: usize },
    TorusToSphere { a: f64 },
}

pub const PRESET_NAMES: [&str; 6] = [
    "identity",
    "torus_scaling",
    "azimuth_doubling",
    "stereographic_power",
    "latitude_wobble",
    "torus_to_sphere",
];

/// One catalog line per preset.
#[derive(Clone, Debug, Serialize)]
pub struct PresetInfo {
    pub name: &'static str,
    pub domain: &'static str,
    pub codomain: &'static str,
    pub description: &'static str,
    pub example: Preset,
}

pub fn catalog() -> Vec<PresetInfo> {
    vec![
        PresetInfo {
            name: "identity",
            domain: "any",
            codomain: "same",
            description: "identity map of a sphere or circle product",
            example: Preset::Identity {
                manifold: Manifold::sphere(2).expect("valid"),
            },
        },
        PresetInfo {
            name: "torus_scaling",
            domain: "T^ell (unit radii)",
            codomain: "S^1_k x S^1 x ... x S^1",
            description: "angle identity onto a product whose first circle has radius k",
            example: Preset::TorusScaling { ell: 2, k: 2.0 },
        },
        PresetInfo {
            name: "azimuth_doubling",
            domain: "S^2",
            codomain: "S^2",
            description: "(theta, phi) -> (theta, 2 phi); smooth away from the poles",
            example: Preset::AzimuthDoubling,
        },
        PresetInfo {
            name: "stereographic_power",
            domain: "S^2",
            codomain: "S^2",
            description: "z -> z^degree in stereographic coordinates; weakly conformal",
            example: Preset::StereographicPower { degree: 2 },
        },
        PresetInfo {
            name: "latitude_wobble",
            domain: "S^dim",
            codomain: "S^dim",
            description: "first polar angle theta -> theta + a sin(theta), |a| < 1",
            example: Preset::LatitudeWobble { a: 0.3, dim: 2 },
        },
        PresetInfo {
            name: "torus_to_sphere",
            domain: "T^2",
            codomain: "S^2",
            description: "(x, y) -> (theta = pi/2 + a sin x, phi = y), |a| < pi/2",
            example: Preset::TorusToSphere { a: 0.5 },
        },
    ]
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Identity { .. } => "identity",
            Preset::TorusScaling { .. } => "torus_scaling",
            Preset::AzimuthDoubling => "azimuth_doubling",
            Preset::StereographicPower { .. } => "stereographic_power",
            Preset::LatitudeWobble { .. } => "latitude_wobble",
            Preset::TorusToSphere { .. } => "torus_to_sphere",
        }
    }

    pub fn domain(&self) -> Result<Manifold> {
        match self {
            Preset::Identity { manifold } => Ok(manifold.clone()),
            Preset::TorusScaling { ell, .. } => Manifold::unit_torus(*ell),
            Preset::AzimuthDoubling | Preset::StereographicPower { .. } => Manifold::sphere(2),
            Preset::LatitudeWobble { dim, .. } => Manifold::sphere(*dim),
            Preset::TorusToSphere { .. } => Manifold::unit_torus(2),
        }
    }

    pub fn codomain(&self) -> Result<Manifold> {
        match self {
            Preset::TorusScaling { ell, k } => {
                let mut radii = vec![1.0; *ell];
                if let Some(r) = radii.first_mut() {
                    *r = *k;
                }
                Manifold::circle_product(radii)
            }
            Preset::TorusToSphere { .. } => Manifold::sphere(2),
            other => other.domain(),
        }
    }

    pub fn build(&self) -> Result<SmoothMap> {
        let domain = self.domain()?;
        let codomain = self.codomain()?;
        let target = codomain.clone();
        let name = self.name();
        let map = match *self {
            Preset::Identity { .. } => {
                SmoothMap::analytic(name, domain, codomain, move |x| target.embed(x))
            }
            Preset::TorusScaling { ell, k } => {
                if ell < 2 {
                    return Err(LabError::InvalidArgument(format!(
                        "torus_scaling needs ell >= 2, got {ell}"
                    )));
                }
                if !(k > 0.0 && k.is_finite()) {
                    return Err(LabError::InvalidArgument(format!(
                        "torus_scaling needs k > 0, got {k}"
                    )));
                }
                SmoothMap::analytic(name, domain, codomain, move |x| target.embed(x))
            }
            Preset::AzimuthDoubling => SmoothMap::analytic(name, domain, codomain, move |x| {
                target.embed(&[x[0], 2.0 * x[1]])
            }),
            Preset::StereographicPower { degree } => {
                if degree == 0 {
                    return Err(LabError::InvalidArgument(
                        "stereographic_power needs degree >= 1".into(),
                    ));
                }
                let d = degree as i32;
                SmoothMap::analytic(name, domain, codomain, move |x| {
                    let s = (0.5 * x[0]).sin().powi(d);
                    let c = (0.5 * x[0]).cos().powi(d);
                    let den = c * c + s * s;
                    let sin_t = 2.0 * s * c / den;
                    let cos_t = (c * c - s * s) / den;
                    let az = d as f64 * x[1];
                    DVector::from_vec(vec![sin_t * az.cos(), sin_t * az.sin(), cos_t])
                })
            }
            Preset::LatitudeWobble { a, dim } => {
                if !(a.abs() < 1.0) {
                    return Err(LabError::InvalidArgument(format!(
                        "latitude_wobble needs |a| < 1, got {a}"
                    )));
                }
                if dim < 2 {
                    return Err(LabError::InvalidArgument(
                        "latitude_wobble needs dim >= 2".into(),
                    ));
                }
                SmoothMap::analytic(name, domain, codomain, move |x| {
                    let mut p = x.to_vec();
                    p[0] += a * x[0].sin();
                    target.embed(&p)
                })
            }
            Preset::TorusToSphere { a } => {
                if !(a.abs() < 0.5 * PI) {
                    return Err(LabError::InvalidArgument(format!(
                        "torus_to_sphere needs |a| < pi/2, got {a}"
                    )));
                }
                SmoothMap::analytic(name, domain, codomain, move |x| {
                    target.embed(&[0.5 * PI + a * x[0].sin(), x[1]])
                })
            }
        };
        Ok(map)
    }
}

/// Builds a preset map from its name and JSON parameters.
pub fn make_preset(name: &str, params: &serde_json::Value) -> Result<SmoothMap> {
    if !PRESET_NAMES.contains(&name) {
        return Err(LabError::UnknownPreset(name.to_string()));
    }
    let mut obj = serde_json::Map::new();
    obj.insert("preset".into(), serde_json::Value::String(name.to_string()));
    if !(params.is_null()
        || params.as_object().is_some_and(|o| o.is_empty()) && name == "azimuth_doubling")
    {
        obj.insert("params".into(), params.clone());
    }
    let preset: Preset = serde_json::from_value(serde_json::Value::Object(obj))
        .map_err(|e| LabError::InvalidArgument(format!("parameters of `{name}`: {e}")))?;
    preset.build()
}

/// Closed-form conformality data of the torus scaling map with parameters
/// `ell` and `k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusScalingExample {
    pub ell: usize,
    pub k: f64,
    pub c_first: f64,
    pub c_rest: f64,
    pub t_norm_sq: f64,
}

impl TorusScalingExample {
    pub fn new(ell: usize, k: f64) -> Self {
        let l = ell as f64;
        let q = k * k - 1.0;
        TorusScalingExample {
            ell,
            k,
            c_first: q * (l - 1.0) / l,
            c_rest: -q / l,
            t_norm_sq: q * q * (l - 1.0) / l,
        }
    }

    /// `T_f` in the unit frame.
    pub fn t_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.ell, self.ell, |i, j| match (i, j) {
            (0, 0) => self.c_first,
            (i, j) if i == j => self.c_rest,
            _ => 0.0,
        })
    }

    /// Coefficients of `σ_f(e_i)` against the codomain frame `E_i`.
    pub fn sigma_coefficients(&self) -> Vec<f64> {
        (0..self.ell)
            .map(|i| {
                if i == 0 {
                    self.k * self.c_first
                } else {
                    self.c_rest
                }
            })
            .collect()
    }

    /// `Φ` over the unit torus.
    pub fn phi(&self) -> f64 {
        self.t_norm_sq * (2.0 * PI).powi(self.ell as i32)
    }

    pub fn map(&self) -> Result<SmoothMap> {
        Preset::TorusScaling {
            ell: self.ell,
            k: self.k,
        }
        .build()
    }
}

/// Pointwise quadratic form of the torus scaling example in the derivative
/// matrix `a[(i, j)] = ∇_{e_i} ψ_j` of a field `X = Σ ψ_j E_j`.
///
/// This is the form after the cross terms `a_11 a_ii` have been traded for
/// `a_1i a_i1` by integration by parts, so its integral (not its value at
/// each point) equals the second variation.
pub fn example_quadratic_form(ell: usize, k: f64, a: &DMatrix<f64>) -> f64 {
    let l = ell as f64;
    let k2 = k * k;
    let mut v = (l - 1.0) / l * (3.0 * k2 - 1.0) * a[(0, 0)].powi(2);
    let edge = (k2 * (l - 1.0) + 1.0) / l;
    for i in 1..ell {
        v += 2.0 * k * (1.0 - 2.0 / l) * a[(0, i)] * a[(i, 0)];
        v += edge * (a[(0, i)].powi(2) + a[(i, 0)].powi(2));
    }
    let mut sq = 0.0;
    let mut cross = 0.0;
    let mut tr = 0.0;
    for i in 1..ell {
        tr += a[(i, i)];
        for j in 1..ell {
            sq += a[(i, j)].powi(2);
            cross += a[(i, j)] * a[(j, i)];
        }
    }
    v + (1.0 - k2) / l * sq + (sq + cross - 2.0 / l * tr * tr)
}

/// `‖A‖² + Tr(A²) − (2/n)(Tr A)²` for an `n × n` matrix.
pub fn matrix_inequality_check(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let norm_sq: f64 = a.iter().map(|v| v * v).sum();
    let tr_sq = (a * a).trace();
    let tr = a.trace();
    norm_sq + tr_sq - 2.0 / n as f64 * tr * tr
}

type ScalarFactor = (String, std::sync::Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>);

fn domain_factors(domain: &Manifold, degree: usize) -> Vec<ScalarFactor> {
    use std::sync::Arc;
    let mut out: Vec<ScalarFactor> = vec![("1".into(), Arc::new(|_: &[f64]| 1.0))];
    if domain.is_sphere() {
        // monomials in the ambient coordinates, the last one to power ≤ 1
        let n = domain.ambient_dim();
        let mut exps: Vec<Vec<usize>> = vec![vec![0; n]];
        for total in 1..=degree {
            let mut level = Vec::new();
            collect_exponents(n, total, &mut vec![0; n], 0, &mut level);
            exps.extend(level.into_iter().filter(|e| e[n - 1] <= 1));
        }
        out.clear();
        for e in exps {
            let label = if e.iter().all(|&p| p == 0) {
                "1".to_string()
            } else {
                e.iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0)
                    .map(|(c, p)| {
                        if *p == 1 {
                            format!("y{c}")
                        } else {
                            format!("y{c}^{p}")
                        }
                    })
                    .collect::<Vec<_>>()
                    .join("*")
            };
            let m = domain.clone();
            out.push((
                label,
                Arc::new(move |x: &[f64]| {
                    let y = m.embed(x);
                    e.iter()
                        .enumerate()
                        .map(|(c, &p)| y[c].powi(p as i32))
                        .product()
                }),
            ));
        }
    } else {
        for axis in 0..domain.dim() {
            for n in 1..=degree {
                let nf = n as f64;
                out.push((
                    format!("cos({n}x{axis})"),
                    Arc::new(move |x: &[f64]| (nf * x[axis]).cos()),
                ));
                out.push((
                    format!("sin({n}x{axis})"),
                    Arc::new(move |x: &[f64]| (nf * x[axis]).sin()),
                ));
            }
        }
    }
    out
}

fn collect_exponents(
    n: usize,
    remaining: usize,
    cur: &mut Vec<usize>,
    pos: usize,
    out: &mut Vec<Vec<usize>>,
) {
    if pos == n - 1 {
        cur[pos] = remaining;
        out.push(cur.clone());
        return;
    }
    for p in (0..=remaining).rev() {
        cur[pos] = p;
        collect_exponents(n, remaining - p, cur, pos + 1, out);
    }
}

/// Variation fields over `f`: domain factors up to `degree` (Fourier modes
/// per axis on circle products, ambient monomials on spheres) times the
/// codomain's parallel frame `E_a` (circle products) or the projected
/// constant fields `Z_k` (spheres).
pub fn variation_basis(f: &SmoothMap, degree: usize) -> Result<Vec<VariationField>> {
    let factors = domain_factors(f.domain(), degree);
    let cod = f.codomain();
    let mut out = Vec::new();
    for (label, factor) in factors {
        if cod.is_sphere() {
            for k in 0..cod.ambient_dim() {
                let factor = factor.clone();
                let mut e = DVector::zeros(cod.ambient_dim());
                e[k] = 1.0;
                out.push(VariationField::analytic(
                    f,
                    format!("{label} Z{k}"),
                    move |x, _| &e * factor(x),
                ));
            }
        } else {
            let dim = cod.dim();
            for a in 0..dim {
                let factor = factor.clone();
                out.push(VariationField::frame_components(
                    f,
                    format!("{label} E{a}"),
                    move |x| {
                        let mut c = vec![0.0; dim];
                        c[a] = factor(x);
                        c
                    },
                )?);
            }
        }
    }
    Ok(out)
}

/// Random combination of `variation_basis(f, degree)` with coefficients
/// uniform in `[-amplitude, amplitude]`, reproducible from `seed`.
pub fn random_field(
    f: &SmoothMap,
    degree: usize,
    amplitude: f64,
    seed: u64,
) -> Result<VariationField> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let terms: Vec<(f64, VariationField)> = variation_basis(f, degree)?
        .into_iter()
        .map(|b| (rng.gen_range(-amplitude..=amplitude), b))
        .collect();
    VariationField::linear_combination(format!("random(seed={seed}, degree={degree})"), &terms)
}

/// `f` moved along seeded Fourier noise of frequencies 1..=3 in every frame
/// component, sampled to a grid of the given resolution. Needs circle
/// products on both sides.
pub fn fourier_noise(
    f: &SmoothMap,
    resolution: usize,
    amplitude: f64,
    seed: u64,
) -> Result<SmoothMap> {
    use rand::{Rng, SeedableRng};
    if f.domain().is_sphere() {
        return Err(LabError::InvalidArgument(
            "fourier noise needs a circle-product domain".into(),
        ));
    }
    let (m, n) = (f.domain().dim(), f.codomain().dim());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    // (component, axis, frequency, cos coefficient, sin coefficient)
    let mut modes = Vec::new();
    for c in 0..n {
        for axis in 0..m {
            for freq in 1..=3 {
                let a = rng.gen_range(-amplitude..=amplitude);
                let b = rng.gen_range(-amplitude..=amplitude);
                modes.push((c, axis, freq as f64, a, b));
            }
        }
    }
    let noise = VariationField::frame_components(f, "fourier noise", move |x| {
        let mut psi = vec![0.0; n];
        for &(c, axis, freq, a, b) in &modes {
            psi[c] += a * (freq * x[axis]).cos() + b * (freq * x[axis]).sin();
        }
        psi
    })?;
    noise.deform(1.0)?.sample_to_grid(resolution)
}

/// Torus scaling map with [`fourier_noise`], the usual flow starting point.
pub fn perturbed_torus_scaling(
    ell: usize,
    k: f64,
    resolution: usize,
    amplitude: f64,
    seed: u64,
) -> Result<SmoothMap> {
    fourier_noise(
        &Preset::TorusScaling { ell, k }.build()?,
        resolution,
        amplitude,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::{conformality_state, first_jet, phi};

    #[test]
    fn serde_form_of_presets() {
        let p: Preset =
            serde_json::from_str(r#"{"preset":"torus_scaling","params":{"ell":2,"k":2.0}}"#)
                .unwrap();
        assert_eq!(p, Preset::TorusScaling { ell: 2, k: 2.0 });
        let p: Preset =
            serde_json::from_str(r#"{"preset":"identity","params":{"manifold":{"sphere":3}}}"#)
                .unwrap();
        assert_eq!(p.domain().unwrap(), Manifold::sphere(3).unwrap());
        let p: Preset = serde_json::from_str(r#"{"preset":"azimuth_doubling"}"#).unwrap();
        assert_eq!(p, Preset::AzimuthDoubling);
        assert!(serde_json::from_str::<Preset>(
            r#"{"preset":"torus_scaling","params":{"ell":2,"k":2,"z":1}}"#
        )
        .is_err());
    }

    #[test]
    fn unknown_preset() {
        assert_eq!(
            make_preset("mobius", &serde_json::json!({})).unwrap_err(),
            LabError::UnknownPreset("mobius".into())
        );
        assert!(make_preset("azimuth_doubling", &serde_json::json!({})).is_ok());
        assert!(make_preset("azimuth_doubling", &serde_json::Value::Null).is_ok());
    }

    #[test]
    fn identity_s3_has_zero_phi() {
        let f = make_preset("identity", &serde_json::json!({"manifold": {"sphere": 3}})).unwrap();
        let g = f.domain().quadrature_grid(6).unwrap();
        assert!(phi(&f, &g).unwrap() < 1e-12);
    }

    #[test]
    fn stereographic_power_is_weakly_conformal() {
        let f = Preset::StereographicPower { degree: 2 }.build().unwrap();
        let g = f.domain().quadrature_grid(16).unwrap();
        for x in &g.nodes {
            let j = first_jet(&f, x).unwrap();
            assert!(conformality_state(&j, 2).t_norm() < 1e-8);
        }
    }

    #[test]
    fn closed_forms_match_calculus() {
        for ell in [2usize, 3, 4] {
            for k in [0.5, 0.97, 1.0, 1.5, 2.0] {
                let ex = TorusScalingExample::new(ell, k);
                let f = ex.map().unwrap();
                let x: Vec<f64> = (0..ell).map(|i| 0.3 + 0.7 * i as f64).collect();
                let j = first_jet(&f, &x).unwrap();
                let s = conformality_state(&j, ell);
                assert!((&s.t - ex.t_matrix()).amax() < 1e-12);
                let frame = f.codomain().ambient_frame_at(&j.value).unwrap();
                for (i, c) in ex.sigma_coefficients().iter().enumerate() {
                    assert!((&s.sigma[i] - &frame[i] * *c).amax() < 1e-12);
                }
            }
        }
        let ex = TorusScalingExample::new(2, 2.0);
        assert!((ex.phi() - 177.652879).abs() < 1e-6);
        let g = ex.map().unwrap().domain().quadrature_grid(8).unwrap();
        let v = phi(&ex.map().unwrap(), &g).unwrap();
        assert!((v / ex.phi() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn matrix_inequality_equality_cases() {
        for n in 1..=5 {
            assert!(matrix_inequality_check(&DMatrix::identity(n, n)).abs() < 1e-12);
            let b = DMatrix::from_fn(n, n, |i, j| (i as f64 + 1.0) * 0.3 - j as f64 * 0.7);
            let anti = &b - b.transpose();
            assert!(matrix_inequality_check(&anti).abs() < 1e-12);
        }
    }

    #[test]
    fn example_form_zero_and_isometry() {
        assert_eq!(example_quadratic_form(3, 0.97, &DMatrix::zeros(3, 3)), 0.0);
        let a = DMatrix::from_fn(3, 3, |i, j| ((i * 3 + j) as f64 * 0.77).sin());
        assert!(example_quadratic_form(3, 1.0, &a) >= 0.0);
    }

    #[test]
    fn basis_counts() {
        let f = Preset::TorusScaling { ell: 2, k: 2.0 }.build().unwrap();
        assert_eq!(variation_basis(&f, 0).unwrap().len(), 2);
        assert_eq!(variation_basis(&f, 1).unwrap().len(), 10);
        let s = Preset::AzimuthDoubling.build().unwrap();
        assert_eq!(variation_basis(&s, 0).unwrap().len(), 3);
        // monomials on S² up to degree 2 with y2 to power ≤ 1: 1, 3, 5
        assert_eq!(variation_basis(&s, 2).unwrap().len(), 3 * 9);
    }

    #[test]
    fn basis_fields_are_tangent() {
        let s = Preset::TorusToSphere { a: 0.5 }.build().unwrap();
        for b in variation_basis(&s, 1).unwrap() {
            let x = [0.4, 2.2];
            assert!(b.value_at(&x).dot(&s.eval(&x)).abs() < 1e-12);
        }
    }
}

//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::f64::consts::PI;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use conflab::calculus::{
    conformality_state, div_sigma, first_jet, lemma1_report, lemma2_residuals, phi, SmoothMap,
};
use conflab::geometry::Manifold;
use conflab::presets::{
    matrix_inequality_check, random_field, variation_basis, Preset, TorusScalingExample,
};
use conflab::sphere_identities::{
    gamma_div_identity, lemma3_residual, lemma4_check, projected_fields, theorem1_terms,
    theorem2_terms,
};
use conflab::variation::{
    first_variation, first_variation_fd, gradient_flow, second_variation, second_variation_fd,
    stability_spectrum, FlowOptions, VariationField,
};

mod tol {
    pub const LEMMA1: f64 = 1e-10;
    pub const LEMMA2: f64 = 1e-12;
    pub const EXAMPLE_T: f64 = 1e-12;
    pub const EXAMPLE_DIV: f64 = 1e-8;
    pub const EXAMPLE_PHI_ABS: f64 = 1e-6;
    pub const FIRST_VARIATION: f64 = 1e-4;
    pub const SECOND_VARIATION: f64 = 1e-3;
    pub const STABILITY_K097: f64 = -1e-8;
    pub const STABILITY_K1: f64 = -1e-9;
    pub const MATRIX: f64 = -1e-12;
    pub const LEMMA4_A: f64 = 1e-5;
    pub const LEMMA4_BC: f64 = 1e-8;
    pub const FAMILY: f64 = 1e-12;
    pub const THM1_I: f64 = 1e-4;
    pub const THM1_REL: f64 = 1e-3;
    pub const THM1_IDENTITY: f64 = 1e-10;
    pub const THM2_REL: f64 = 1e-4;
    pub const GAMMA: f64 = 1e-3;
    pub const LEMMA3: f64 = 1e-3;
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_point(m: &Manifold, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = m.dim();
    (0..d)
        .map(|a| {
            if m.is_sphere() && a < d - 1 {
                rng.gen_range(0.1..PI - 0.1)
            } else {
                rng.gen_range(0.0..2.0 * PI)
            }
        })
        .collect()
}

fn preset_maps() -> Vec<SmoothMap> {
    [
        Preset::Identity {
            manifold: Manifold::sphere(2).unwrap(),
        },
        Preset::Identity {
            manifold: Manifold::sphere(3).unwrap(),
        },
        Preset::Identity {
            manifold: Manifold::unit_torus(2).unwrap(),
        },
        Preset::TorusScaling { ell: 2, k: 2.0 },
        Preset::TorusScaling { ell: 3, k: 0.97 },
        Preset::AzimuthDoubling,
        Preset::StereographicPower { degree: 2 },
        Preset::StereographicPower { degree: 3 },
        Preset::LatitudeWobble { a: 0.3, dim: 2 },
        Preset::LatitudeWobble { a: -0.4, dim: 4 },
        Preset::TorusToSphere { a: 0.5 },
    ]
    .iter()
    .map(|p| p.build().unwrap())
    .collect()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for f in preset_maps() {
        let m = f.domain().dim();
        for _ in 0..100 {
            let x = random_point(f.domain(), &mut rng);
            worst = worst.max(lemma1_report(&first_jet(&f, &x).unwrap(), m).max());
        }
    }
    outcome(
        worst < tol::LEMMA1,
        format!("max residual {worst:.2e} over 11 presets x 100 points"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut w1, mut w2): (f64, f64) = (0.0, 0.0);
    for f in preset_maps() {
        let m = f.domain().dim();
        for _ in 0..100 {
            let x = random_point(f.domain(), &mut rng);
            let j = first_jet(&f, &x).unwrap();
            let s = conformality_state(&j, m);
            let raw = DVector::from_fn(f.codomain().ambient_dim(), |_, _| rng.gen_range(-1.0..1.0));
            let z = f.codomain().tangent_projection(&j.value, &raw);
            let w: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (a, b) = lemma2_residuals(&j, &s, &z, &w);
            w1 = w1.max(a);
            w2 = w2.max(b);
        }
    }
    outcome(
        w1 < tol::LEMMA2 && w2 < tol::LEMMA2,
        format!("sigma pairing {w1:.2e}, trace identity {w2:.2e}"),
    )
}

fn criterion_3() -> Outcome {
    let ex = TorusScalingExample::new(2, 2.0);
    let f = ex.map().unwrap();
    let g = f.domain().quadrature_grid(16).unwrap();
    let mut t_err: f64 = 0.0;
    let mut s_err: f64 = 0.0;
    let mut div: f64 = 0.0;
    let expected_t = DMatrix::from_diagonal(&DVector::from_vec(vec![1.5, -1.5]));
    for x in &g.nodes {
        let j = first_jet(&f, x).unwrap();
        let s = conformality_state(&j, 2);
        t_err = t_err.max((&s.t - &expected_t).amax());
        let frame = f.codomain().ambient_frame_at(&j.value).unwrap();
        s_err = s_err
            .max((&s.sigma[0] - &frame[0] * 3.0).amax())
            .max((&s.sigma[1] + &frame[1] * 1.5).amax());
        div = div.max(div_sigma(&f, x).unwrap().norm());
    }
    let p = phi(&f, &g).unwrap();
    let pass = t_err < tol::EXAMPLE_T
        && s_err < tol::EXAMPLE_T
        && div < tol::EXAMPLE_DIV
        && (p - 177.652879).abs() < tol::EXAMPLE_PHI_ABS;
    outcome(
        pass,
        format!("T err {t_err:.1e}, sigma err {s_err:.1e}, sup|div sigma| {div:.1e}, Phi {p:.6}"),
    )
}

/// The three map families of the variation oracles.
fn variation_maps() -> Vec<(&'static str, SmoothMap, usize)> {
    let base = Preset::TorusScaling { ell: 2, k: 1.5 }.build().unwrap();
    let bend = VariationField::frame_components(&base, "bend", |x| {
        vec![
            0.3 * x[1].sin() + 0.1 * (2.0 * x[0]).cos(),
            0.2 * x[0].sin(),
        ]
    })
    .unwrap();
    vec![
        ("T2->T2", bend.deform(1.0).unwrap(), 16),
        (
            "T2->S2",
            Preset::TorusToSphere { a: 0.5 }.build().unwrap(),
            16,
        ),
        (
            "S2->S2",
            Preset::LatitudeWobble { a: 0.3, dim: 2 }.build().unwrap(),
            20,
        ),
    ]
}

fn criterion_4() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for (name, f, res) in variation_maps() {
        let g = f.domain().quadrature_grid(res).unwrap();
        for seed in 0..3 {
            let x = random_field(&f, 1, 0.5, 40 + seed).unwrap();
            let a = first_variation(&f, &x, &g).unwrap();
            let b = first_variation_fd(&f, &x, &g, 1e-3).unwrap();
            let r = (a - b).abs() / (1.0 + b.abs());
            worst = worst.max(r);
            if seed == 0 {
                lines.push(format!("{name}: {a:.6} vs {b:.6}"));
            }
        }
    }
    outcome(
        worst <= tol::FIRST_VARIATION,
        format!("max scaled gap {worst:.2e} ({})", lines.join("; ")),
    )
}

fn criterion_5() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for (name, f, res) in variation_maps() {
        let g = f.domain().quadrature_grid(res).unwrap();
        for seed in 0..3 {
            let x = random_field(&f, 1, 0.5, 50 + seed).unwrap();
            let a = second_variation(&f, &x, &x, &g).unwrap().total;
            let b = second_variation_fd(&f, &x, &g, 1e-2).unwrap();
            let r = (a - b).abs() / (1.0 + b.abs());
            worst = worst.max(r);
            if seed == 0 {
                lines.push(format!("{name}: {a:.6} vs {b:.6}"));
            }
        }
    }
    outcome(
        worst <= tol::SECOND_VARIATION,
        format!("max scaled gap {worst:.2e} ({})", lines.join("; ")),
    )
}

fn criterion_6() -> Outcome {
    let mut mins = Vec::new();
    for (ell, k) in [(3usize, 0.97), (3, 1.0)] {
        let f = Preset::TorusScaling { ell, k }.build().unwrap();
        let g = f.domain().quadrature_grid(8).unwrap();
        let basis = variation_basis(&f, 2).unwrap();
        mins.push(stability_spectrum(&f, &basis, &g).unwrap().min_eigenvalue);
    }
    outcome(
        mins[0] >= tol::STABILITY_K097 && mins[1] >= tol::STABILITY_K1,
        format!(
            "min eigenvalue k=0.97: {:.3e}, k=1: {:.3e} (39 fields)",
            mins[0], mins[1]
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = f64::INFINITY;
    let mut eq: f64 = 0.0;
    for n in 1..=6 {
        for _ in 0..10_000 {
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            worst = worst.min(matrix_inequality_check(&a));
        }
        eq = eq.max(matrix_inequality_check(&DMatrix::identity(n, n)).abs());
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        eq = eq.max(matrix_inequality_check(&(&b - b.transpose())).abs());
    }
    outcome(
        worst >= tol::MATRIX && eq < 1e-12,
        format!("min value {worst:.3e}, equality-case defect {eq:.1e}"),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut a, mut bc, mut fam_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for m in [2usize, 3, 5] {
        let s = Manifold::sphere(m).unwrap();
        let map = if m == 2 {
            Preset::AzimuthDoubling
        } else {
            Preset::LatitudeWobble { a: 0.3, dim: m }
        }
        .build()
        .unwrap();
        let polys: [fn(&DVector<f64>) -> f64; 3] = [
            |y| y[0],
            |y| y[0] * y[1] + y[y.len() - 1].powi(2),
            |y| y[1].powi(3) - 2.0 * y[0] * y[y.len() - 1] + 0.5,
        ];
        for _ in 0..5 {
            let x: Vec<f64> = (0..m)
                .map(|i| {
                    if i < m - 1 {
                        rng.gen_range(0.3..PI - 0.3)
                    } else {
                        rng.gen_range(0.0..2.0 * PI)
                    }
                })
                .collect();
            for u in &polys {
                let r = lemma4_check(m, u, &x, Some(&map)).unwrap();
                a = a.max(r.a);
                bc = bc.max(r.b).max(r.c.unwrap());
            }
            let dom = projected_fields(&s, None)
                .unwrap()
                .residuals_at(&x)
                .unwrap();
            let cod = projected_fields(&s, Some(&map))
                .unwrap()
                .residuals_at(&x)
                .unwrap();
            fam_err = fam_err
                .max(dom.phi_sum)
                .max(dom.norm_sum)
                .max(cod.phi_sum)
                .max(cod.norm_sum);
        }
    }
    outcome(
        a < tol::LEMMA4_A && bc < tol::LEMMA4_BC && fam_err < tol::FAMILY,
        format!("(a) {a:.2e}, (b)/(c) {bc:.2e}, sum Z.Z and sum phi^2 {fam_err:.1e}"),
    )
}

fn criterion_9() -> Outcome {
    let f = Preset::AzimuthDoubling.build().unwrap();
    let g = f.domain().quadrature_grid(20).unwrap();
    let t = theorem1_terms(&f, &g, 1e-6).unwrap();
    let p = t.phi_value;
    let ok_az = t.i.abs() < tol::THM1_I * p
        && ((t.iii + p) / p).abs() < tol::THM1_REL
        && ((t.v - 3.0 * p) / (3.0 * p)).abs() < tol::THM1_REL;
    let id = Preset::Identity {
        manifold: Manifold::sphere(5).unwrap(),
    }
    .build()
    .unwrap();
    let gi = id.domain().quadrature_grid(4).unwrap();
    let ti = theorem1_terms(&id, &gi, 1e-6).unwrap();
    let id_max = [ti.i, ti.ii, ti.iii, ti.iv, ti.v]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    outcome(
        ok_az && id_max < tol::THM1_IDENTITY,
        format!(
            "Phi {p:.4}: I {:.2e}, III/Phi {:.6}, V/Phi {:.6}; identity S^5 max term {id_max:.1e}",
            t.i,
            t.iii / p,
            t.v / p
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, p, res) in [
        ("azimuth_doubling", Preset::AzimuthDoubling, 20),
        ("torus_to_sphere", Preset::TorusToSphere { a: 0.5 }, 16),
    ] {
        let f = p.build().unwrap();
        let g = f.domain().quadrature_grid(res).unwrap();
        let t = theorem2_terms(&f, &g).unwrap();
        let ratio = t.total / t.phi_value;
        worst = worst.max(((ratio - 2.0) / 2.0).abs());
        parts.push(format!("{name} total/Phi {ratio:.8}"));
    }
    outcome(worst < tol::THM2_REL, parts.join(", "))
}

fn criterion_11() -> Outcome {
    let f = Preset::AzimuthDoubling.build().unwrap();
    let g = f.domain().quadrature_grid(20).unwrap();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for k in 0..3 {
        let r = gamma_div_identity(&f, k, &g).unwrap();
        worst = worst.max(r.residual / (1.0 + r.rhs.abs()));
        parts.push(format!("k={k}: {:.3e}", r.residual));
    }
    outcome(worst < tol::GAMMA, parts.join(", "))
}

fn criterion_12() -> Outcome {
    let f = Preset::AzimuthDoubling.build().unwrap();
    let fam = projected_fields(f.domain(), None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x = vec![rng.gen_range(0.2..PI - 0.2), rng.gen_range(0.0..2.0 * PI)];
        let z = fam.domain_components(&x)[0].clone();
        worst = worst.max(lemma3_residual(&f, &z, &x).unwrap().residual);
    }
    outcome(
        worst < tol::LEMMA3,
        format!("max residual {worst:.2e} at 20 points"),
    )
}

fn criterion_13() -> Outcome {
    let f0 = conflab::presets::perturbed_torus_scaling(2, 1.2, 16, 0.07, 13).unwrap();
    let tr = gradient_flow(
        &f0,
        FlowOptions {
            tau: 0.05,
            steps: 200,
            snapshot_every: None,
        },
    )
    .unwrap();
    let p = tr.phi_values();
    let monotone = p.windows(2).all(|w| w[1] <= w[0]);
    let first = p[0];
    let last = *p.last().unwrap();
    outcome(
        monotone && last < 0.5 * first,
        format!(
            "Phi {first:.4} -> {last:.4} over {} steps, monotone={monotone}",
            p.len() - 1
        ),
    )
}

fn criterion_14() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scene.json");
    std::fs::write(
        &cfg,
        r#"{"map": {"preset": "torus_to_sphere", "params": {"a": 0.5}}, "grid": {"resolution": 12}, "seed": 3}"#,
    )
    .unwrap();
    let bin = env!("CARGO_BIN_EXE_conflab");
    let run = |args: &[&str]| -> Vec<u8> {
        let out = Command::new(bin).args(args).output().unwrap();
        out.stdout
    };
    let c = cfg.to_str().unwrap();
    let mut same = true;
    let mut bytes = 0;
    for args in [
        vec!["variation", "first", "--config", c, "--seed", "11"],
        vec!["check", "thm2-terms", "--config", c],
        vec!["check", "lemma2", "--config", c, "--seed", "5"],
    ] {
        let a = run(&args);
        let b = run(&args);
        same &= !a.is_empty() && a == b;
        bytes += a.len();
    }
    outcome(
        same,
        format!("3 commands run twice, {bytes} bytes compared"),
    )
}

fn main() {
    type Criterion = (usize, &'static str, fn() -> Outcome);
    let criteria: Vec<Criterion> = vec![
        (1, "conformality tensor identities", criterion_1),
        (2, "sigma pairing identities", criterion_2),
        (3, "torus scaling example", criterion_3),
        (4, "first variation vs FD", criterion_4),
        (5, "second variation vs FD", criterion_5),
        (6, "torus example stability", criterion_6),
        (7, "matrix inequality", criterion_7),
        (8, "projected field operator identities", criterion_8),
        (9, "five-term decomposition on S^m", criterion_9),
        (10, "three-term decomposition into S^n", criterion_10),
        (11, "gamma divergence identity", criterion_11),
        (12, "pointwise Hessian identity", criterion_12),
        (13, "gradient flow", criterion_13),
        (14, "determinism", criterion_14),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        let start = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {n:2} {}: {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}

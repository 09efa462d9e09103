use kaclab::densities::{random_symmetric_mixture, GaussianMixture};
use kaclab::dissipation::*;
use kaclab::kernels::{eval_a_mat, project_matrix, PotentialSpec};
use kaclab::stats::mean_se;
use kaclab::{Mat3, Vec3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn landau(gamma: f64, eps: f64) -> Flow {
    Flow::Landau(PotentialSpec::new(gamma, eps).unwrap())
}

fn mixture(n: usize, seed: u64) -> GaussianMixture {
    random_symmetric_mixture(n, 3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn heat_flow_on_a_standard_normal() {
    let g = GaussianMixture::isotropic(3, 1.0).unwrap();
    let r = dissipation_report(&g, &Flow::Heat, 100_000, 1).unwrap();
    assert!(
        r.entropy_defining.agrees_with(-3.0, 3.0, 1e-12),
        "{:?}",
        r.entropy_defining
    );
    assert!(r.entropy_closed.agrees_with(-3.0, 3.0, 1e-12), "{:?}", r.entropy_closed);
}

#[test]
fn heat_flow_fisher_derivative_of_isotropic_gaussians() {
    for sigma2 in [0.5, 1.0, 2.0] {
        let g = GaussianMixture::isotropic(3, sigma2).unwrap();
        let f = gateaux_fisher(&g, &Flow::Heat, 100_000, 2).unwrap();
        let want = -6.0 / (sigma2 * sigma2);
        assert!(f.agrees_with(want, 3.0, 1e-10 * want.abs()), "sigma2 {sigma2}: {f:?}");
    }
}

#[test]
fn heat_terms_of_a_product_gaussian() {
    let g = GaussianMixture::isotropic(6, 1.0).unwrap();
    let r = dissipation_report(&g, &Flow::Heat, 50_000, 3).unwrap();
    assert!(r.term_pair.agrees_with(-6.0, 3.0, 1e-10), "{:?}", r.term_pair);
    assert!(r.term_triple.value.abs() < 1e-12, "{:?}", r.term_triple);
    assert!(r.triple_max <= 0.0);
}

#[test]
fn landau_flow_leaves_the_maxwellian_fixed() {
    let g = GaussianMixture::isotropic(9, 1.0).unwrap();
    for flow in [landau(-3.0, 0.5), landau(0.0, 0.25)] {
        let r = dissipation_report(&g, &flow, 20_000, 4).unwrap();
        for e in [&r.entropy_defining, &r.entropy_closed, &r.fisher_raw, &r.fisher_form1] {
            assert!(e.agrees_with(0.0, 3.0, 1e-10), "{}: {e:?}", flow.label());
        }
    }
}

#[test]
fn landau_operator_conserves_mass() {
    let g = mixture(2, 5);
    let flow = landau(-3.0, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let values: Vec<f64> = g
        .sample(&mut rng, 50_000)
        .iter()
        .map(|x| apply_q_over_g(&g, &flow, x).unwrap())
        .collect();
    let m = mean_se(&values);
    assert!(m.agrees_with(0.0, 3.0, 0.0), "{m:?}");
}

/// `Q(g)` from central differences of the flux `A(v1 - v2) (grad_1 - grad_2) g`.
fn q_by_flux_divergence(g: &GaussianMixture, spec: &PotentialSpec, x: &[f64]) -> f64 {
    let flux = |y: &[f64]| -> Vec3 {
        let z = Vec3::new(y[0] - y[3], y[1] - y[4], y[2] - y[5]);
        let dens = g.log_density(y).unwrap().exp();
        let s = g.score(y).unwrap();
        let grad = Vec3::new(s[0] - s[3], s[1] - s[4], s[2] - s[5]) * dens;
        eval_a_mat(&z, spec).unwrap() * grad
    };
    let h = 1e-5;
    let mut div = 0.0;
    for c in 0..3 {
        for (block, sign) in [(0usize, 1.0), (1usize, -1.0)] {
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[3 * block + c] += h;
            dn[3 * block + c] -= h;
            div += sign * (flux(&up)[c] - flux(&dn)[c]) / (2.0 * h);
        }
    }
    // (1/2N) sum over the two ordered pairs, N = 2.
    div / 2.0
}

#[test]
fn landau_operator_matches_flux_divergence() {
    let g = GaussianMixture::gaussian(vec![0.3, -0.2, 0.1, -0.3, 0.2, 0.0], {
        let mut c = vec![0.0; 36];
        for i in 0..6 {
            c[i * 6 + i] = 1.0;
        }
        c[1] = 0.3;
        c[6] = 0.3;
        c[3 * 6 + 4] = -0.2;
        c[4 * 6 + 3] = -0.2;
        c
    })
    .unwrap();
    let spec = PotentialSpec::new(-3.0, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for x in g.sample(&mut rng, 10) {
        let want = q_by_flux_divergence(&g, &spec, &x);
        let got = apply_q(&g, &Flow::Landau(spec), &x).unwrap();
        assert!((got - want).abs() <= 1e-6 * want.abs().max(1e-3), "{got} vs {want}");
    }
}

#[test]
fn landau_fisher_forms_agree_at_large_sample_size() {
    let g = mixture(3, 8);
    let r = dissipation_report(&g, &landau(-3.0, 0.5), 100_000, 9).unwrap();
    let se = (r.fisher_raw.std_error.powi(2) + r.fisher_form1.std_error.powi(2)).sqrt();
    assert!(r.fisher_form_gap.value.abs() <= 3.0 * se, "{:?}", r.fisher_form_gap);
    let se = (r.entropy_defining.std_error.powi(2) + r.entropy_closed.std_error.powi(2)).sqrt();
    assert!(r.entropy_gap.value.abs() <= 3.0 * se, "{:?}", r.entropy_gap);
}

#[test]
fn two_particle_triple_term_is_exactly_zero() {
    let g = mixture(2, 10);
    let r = dissipation_report(&g, &landau(-1.0, 0.25), 5_000, 11).unwrap();
    assert_eq!(r.term_triple.value, 0.0);
    assert_eq!(r.triple_max, 0.0);
}

#[test]
fn decomposition_holds_for_three_particle_landau() {
    let g = mixture(3, 12);
    let r = dissipation_report(&g, &landau(-3.0, 0.25), 50_000, 13).unwrap();
    assert!(r.triple_max <= 0.0);
    let se = [&r.fisher_raw, &r.term_pair, &r.term_triple]
        .iter()
        .map(|e| e.std_error * e.std_error)
        .sum::<f64>()
        .sqrt();
    assert!(
        r.decomposition_residual.value.abs() <= 3.0 * se,
        "{:?}",
        r.decomposition_residual
    );
    assert!(r.fisher_raw.value <= 3.0 * r.fisher_raw.std_error, "{:?}", r.fisher_raw);
}

#[test]
fn flipped_kernel_reverses_the_fisher_sign() {
    let g = mixture(2, 14);
    let spec = PotentialSpec::new(-3.0, 0.5).unwrap();
    let r = dissipation_report(&g, &Flow::FlippedLandau(spec), 20_000, 15).unwrap();
    assert!(r.fisher_raw.value > 3.0 * r.fisher_raw.std_error, "{:?}", r.fisher_raw);
}

#[test]
fn finite_differences_match_the_heat_flow_oracle() {
    let g = GaussianMixture::isotropic(3, 1.0).unwrap();
    let fd = finite_difference_check(&g, &Flow::Heat, 1.0, FD_STEPS, 20_000, 16).unwrap();
    let last = fd.steps.last().unwrap().1.value;
    assert!((last + 6.0).abs() <= 0.05 * 6.0, "{fd:?}");
    assert!((fd.convergence_order - 1.0).abs() < 0.2, "{fd:?}");
}

#[test]
fn finite_differences_match_the_landau_derivative() {
    let g = mixture(2, 17);
    let fd = finite_difference_check(&g, &landau(-3.0, 0.5), 1.0, FD_STEPS, 5_000, 18).unwrap();
    assert!(fd.relative_error <= FD_REL_TOL, "{fd:?}");
    assert!((fd.convergence_order - 1.0).abs() < 0.3, "{fd:?}");
}

#[test]
fn bochner_identity_on_a_gaussian_and_mixtures() {
    let g = GaussianMixture::isotropic(6, 0.7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for x in g.sample(&mut rng, 10) {
        for i in 0..2 {
            assert!(bochner_residual(&g, &x, i).unwrap().abs() <= 1e-12);
        }
    }
    let g = mixture(2, 20);
    for x in g.sample(&mut rng, 100) {
        for i in 0..2 {
            assert!(bochner_residual(&g, &x, i).unwrap().abs() <= BOCHNER_TOL);
        }
    }
}

#[test]
fn matrix_identity_examples() {
    let z = Vec3::new(0.3, -1.0, 2.0);
    let pi = project_matrix(&z).unwrap();
    assert!(matrix_identities(&pi, &pi, &z, &z).iter().all(|r| *r < 1e-14));
    assert!((pi * z).norm() < 1e-14);
    let id = Mat3::identity();
    let pm = pi * id;
    assert!((id.component_mul(&pm).sum() - 2.0).abs() < 1e-14);
    assert!((pm.component_mul(&pm).sum() - 2.0).abs() < 1e-14);
}

#[test]
fn suite_rows_are_reproducible() {
    let cfg = SuiteConfig {
        n_densities: 2,
        n_base_components: 2,
        particle_counts: vec![2],
        flows: vec![Flow::Heat, landau(0.0, 0.25)],
        n_samples: 2_000,
        bochner_points: 5,
        fd_samples: 0,
        seed: 21,
    };
    let a = run_suite(&cfg).unwrap();
    let b = run_suite(&cfg).unwrap();
    assert_eq!(a.len(), 4);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.report.fisher_raw.value.to_bits(), y.report.fisher_raw.value.to_bits());
    }
}

fn vec3<R: Rng>(rng: &mut R) -> Vec3 {
    Vec3::new(
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matrix_identities_hold(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = vec3(&mut rng);
        prop_assume!(z.norm() > 1e-3);
        let pi = project_matrix(&z).unwrap();
        let g = Mat3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let m = g + g.transpose();
        let r = matrix_identities(&m, &pi, &vec3(&mut rng), &vec3(&mut rng));
        prop_assert!(r.iter().all(|v| *v <= 1e-12), "{r:?}");
    }

    #[test]
    fn closed_entropy_and_triple_integrands_are_nonpositive(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_symmetric_mixture(3, 2, &mut rng).unwrap();
        let flow = landau([-3.0, -1.0, 0.0][seed as usize % 3], 0.25);
        for x in g.sample(&mut rng, 5) {
            let p = point_values(&g, &flow, &x).unwrap();
            prop_assert!(p.entropy_closed() <= 0.0);
            prop_assert!(p.term_triple() <= 0.0);
        }
    }

    #[test]
    fn q_over_g_routes_agree_pointwise(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_symmetric_mixture(2, 2, &mut rng).unwrap();
        let flow = landau(-3.0, 0.5);
        let x = g.sample(&mut rng, 1).remove(0);
        let p = point_values(&g, &flow, &x).unwrap();
        let q = apply_q_over_g(&g, &flow, &x).unwrap();
        prop_assert!((p.q_over_g - q).abs() <= 1e-10 * q.abs().max(1.0));
    }
}

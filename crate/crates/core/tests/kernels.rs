use approx::assert_abs_diff_eq;
use kaclab::kernels::*;
use kaclab::{Mat3, Vec3};
use proptest::prelude::*;

fn coulomb_bare() -> PotentialSpec {
    PotentialSpec::new(-3.0, 0.0).unwrap()
}

fn max_abs(m: &Mat3) -> f64 {
    m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

#[test]
fn projection_examples() {
    let p = project_matrix(&Vec3::new(1.0, 0.0, 0.0)).unwrap();
    assert!(max_abs(&(p - Mat3::from_diagonal(&Vec3::new(0.0, 1.0, 1.0)))) < 1e-15);
    let p = project_matrix(&Vec3::new(0.0, 0.0, 2.0)).unwrap();
    assert!(max_abs(&(p - Mat3::from_diagonal(&Vec3::new(1.0, 1.0, 0.0)))) < 1e-15);
}

#[test]
fn projection_of_zero_vector_is_a_domain_error() {
    assert!(matches!(project_matrix(&Vec3::zeros()), Err(kaclab::Error::Domain(_))));
}

#[test]
fn scalar_kernel_examples() {
    assert_abs_diff_eq!(eval_a(2.0, &coulomb_bare()).unwrap(), 0.5, epsilon = 1e-15);
    let compact = PotentialSpec::new(-3.0, 1.0).unwrap().with_chi(ChiProfile::Compact);
    assert_eq!(eval_a(0.5, &compact).unwrap(), 0.0);
    let maxwell = PotentialSpec::new(0.0, 0.0).unwrap();
    assert_abs_diff_eq!(eval_a(3.0, &maxwell).unwrap(), 9.0, epsilon = 1e-12);
}

#[test]
fn bare_coulomb_at_origin_is_a_domain_error() {
    assert!(eval_a(0.0, &coulomb_bare()).is_err());
}

#[test]
fn drift_kernel_examples() {
    let b = eval_b(&Vec3::new(1.0, 0.0, 0.0), &coulomb_bare()).unwrap();
    assert!((b - Vec3::new(-2.0, 0.0, 0.0)).norm() < 1e-15);
    let compact = PotentialSpec::new(-3.0, 1.0).unwrap().with_chi(ChiProfile::Compact);
    let b = eval_b(&Vec3::new(0.5, 0.0, 0.0), &compact).unwrap();
    assert_eq!(b, Vec3::zeros());
}

#[test]
fn matrix_kernel_at_unit_distance_is_the_projection() {
    let e1 = Vec3::new(1.0, 0.0, 0.0);
    let a = eval_a_mat(&e1, &coulomb_bare()).unwrap();
    assert!(max_abs(&(a - project_matrix(&e1).unwrap())) < 1e-15);
}

#[test]
fn log_derivative_examples() {
    let r = verify_log_derivative_bound(&coulomb_bare()).unwrap();
    assert_abs_diff_eq!(r.max_ratio, 1.0, epsilon = 1e-9);
    let r = verify_log_derivative_bound(&PotentialSpec::new(1.0, 0.0).unwrap()).unwrap();
    assert_abs_diff_eq!(r.max_ratio, 3.0, epsilon = 1e-9);
    let r = verify_log_derivative_bound(&PotentialSpec::new(-3.0, 1.0).unwrap()).unwrap();
    assert!(r.within_bound && r.max_ratio <= 4.6904, "{r:?}");
}

#[test]
fn every_shipped_preset_satisfies_the_bound() {
    for spec in PotentialSpec::shipped_presets() {
        let r = verify_log_derivative_bound(&spec).unwrap();
        assert!(r.within_bound, "{spec:?}: {r:?}");
        assert!(
            r.max_ratio <= 2f64.max((spec.gamma + 2.0).abs()) + 1e-9,
            "{spec:?}: {r:?}"
        );
    }
}

#[test]
fn compact_profile_fails_the_bound() {
    let spec = PotentialSpec::new(-3.0, 1.0).unwrap().with_chi(ChiProfile::Compact);
    assert!(!verify_log_derivative_bound(&spec).unwrap().within_bound);
}

#[test]
fn maxwell_kernel_does_not_depend_on_the_cutoff() {
    let z = Vec3::new(0.1, -0.2, 0.05);
    let a = eval_a_mat(&z, &PotentialSpec::new(0.0, 1.0).unwrap()).unwrap();
    let b = eval_a_mat(&z, &PotentialSpec::new(0.0, 0.0).unwrap()).unwrap();
    assert!(max_abs(&(a - b)) < 1e-15);
}

fn vec3() -> impl Strategy<Value = Vec3> {
    (-4.0f64..4.0, -4.0f64..4.0, -4.0f64..4.0)
        .prop_filter("away from the origin", |(x, y, z)| x * x + y * y + z * z > 1e-4)
        .prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn spec() -> impl Strategy<Value = PotentialSpec> {
    (
        prop::sample::select(vec![-3.0, -2.0, -1.0, -0.5, 0.0, 1.0]),
        prop::sample::select(vec![0.25, 0.5, 1.0]),
    )
        .prop_map(|(g, e)| PotentialSpec::new(g, e).unwrap())
}

proptest! {
    #[test]
    fn projection_is_an_idempotent_rank_two_projector(z in vec3()) {
        let p = project_matrix(&z).unwrap();
        prop_assert!(max_abs(&(p * p - p)) < 1e-12);
        prop_assert!(max_abs(&(p - p.transpose())) < 1e-15);
        prop_assert!((p * z).norm() < 1e-12 * z.norm());
        prop_assert!((p.trace() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn kernel_parity_and_square_root(z in vec3(), s in spec()) {
        let a = eval_a_mat(&z, &s).unwrap();
        let scale = a.norm().max(1.0);
        prop_assert!(max_abs(&(a - eval_a_mat(&(-z), &s).unwrap())) <= 1e-12 * scale);
        let b = eval_b(&z, &s).unwrap();
        prop_assert!((b + eval_b(&(-z), &s).unwrap()).norm() <= 1e-12 * b.norm().max(1.0));
        let r = sqrt_a_mat(&z, &s).unwrap();
        prop_assert!(max_abs(&(r * r - a)) <= 1e-12 * scale);
    }

    #[test]
    fn drift_is_the_divergence_of_the_matrix_kernel(z in vec3(), s in spec()) {
        let h = 1e-5;
        let mut div = Vec3::zeros();
        for c in 0..3 {
            let mut e = Vec3::zeros();
            e[c] = h;
            let d = (eval_a_mat(&(z + e), &s).unwrap() - eval_a_mat(&(z - e), &s).unwrap()) / (2.0 * h);
            for al in 0..3 {
                div[al] += d[(al, c)];
            }
        }
        let b = eval_b(&z, &s).unwrap();
        prop_assert!((div - b).norm() <= 1e-6 * b.norm().max(1.0), "fd {div:?} vs {b:?}");
    }

    #[test]
    fn jet_matches_the_plain_evaluators(z in vec3(), s in spec()) {
        let j = s.jet(&z).unwrap();
        prop_assert!(max_abs(&(j.a_mat - eval_a_mat(&z, &s).unwrap())) <= 1e-14 * j.a_mat.norm().max(1.0));
        prop_assert!((j.b - eval_b(&z, &s).unwrap()).norm() <= 1e-14 * j.b.norm().max(1.0));
        let h = 1e-6;
        for c in 0..3 {
            let mut e = Vec3::zeros();
            e[c] = h;
            let fd = (eval_b(&(z + e), &s).unwrap() - eval_b(&(z - e), &s).unwrap()) / (2.0 * h);
            for al in 0..3 {
                prop_assert!((fd[al] - j.db[(al, c)]).abs() <= 1e-5 * j.db.norm().max(1.0));
            }
        }
    }

    #[test]
    fn kernel_is_nonnegative_and_annihilates_z(z in vec3(), s in spec()) {
        let a = eval_a_mat(&z, &s).unwrap();
        prop_assert!((a * z).norm() <= 1e-12 * a.norm().max(1.0) * z.norm());
        let eig = a.symmetric_eigenvalues();
        prop_assert!(eig.iter().all(|&l| l >= -1e-12 * a.norm().max(1.0)));
    }
}

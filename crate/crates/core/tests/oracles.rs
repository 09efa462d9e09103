use kaclab::densities::GaussianMixture;
use kaclab::kernels::PotentialSpec;
use kaclab::oracles::*;
use kaclab::simulator::{run, InitialCondition, SimConfig};
use kaclab::{Error, Mat3, Vec3};
use proptest::prelude::*;

fn max_abs(m: &Mat3) -> f64 {
    m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

fn anisotropic() -> Mat3 {
    Mat3::from_diagonal(&Vec3::new(2.0, 0.5, 0.5))
}

#[test]
fn coulomb_sphere_rate_at_radius_two() {
    let spec = PotentialSpec::new(-3.0, 0.25).unwrap();
    assert!((sphere_decay_rate(&spec, 2.0).unwrap() - 0.5).abs() < 1e-14);
    let numeric = sphere_decay_rate_numeric(&spec, 2.0, Vec3::new(1.0, 2.0, -0.5)).unwrap();
    assert!((numeric - 0.5).abs() < 5e-5, "{numeric}");
}

#[test]
fn sphere_oracle_refuses_an_active_cutoff() {
    let spec = PotentialSpec::new(-3.0, 0.5).unwrap();
    assert!(matches!(sphere_decay_rate(&spec, 2.0), Err(Error::Config(_))));
    assert!(sphere_decay_rate(&PotentialSpec::new(-3.0, 0.25).unwrap(), 0.0).is_err());
}

#[test]
fn spherical_brownian_motion_decays_at_twice_its_diffusivity() {
    let r = spherical_bm_decay_rate(0.25, 1.0, 1e-3, 4000, 5).unwrap();
    assert!(r.agrees_with(0.5, 3.0, 0.01), "{r:?}");
}

#[test]
fn maxwell_reference_limits() {
    let s0 = anisotropic();
    assert!(max_abs(&(maxwell_moment_reference(&s0, 0.0) - s0)) < 1e-15);
    assert!(max_abs(&(maxwell_moment_reference(&s0, 10.0) - Mat3::identity())) < 1e-12);
    assert!(max_abs(&(maxwell_moment_reference_n(&s0, 7, 0.0) - s0)) < 1e-15);
    let far = maxwell_moment_reference_n(&s0, 1_000_000, 0.3);
    assert!(max_abs(&(far - maxwell_moment_reference(&s0, 0.3))) < 1e-6);
}

#[test]
fn maxwell_trace_in_continuous_and_euler_references() {
    let s0 = anisotropic();
    for t in [0.0, 0.1, 1.0] {
        assert!((maxwell_moment_reference_n(&s0, 16, t).trace() - 3.0).abs() < 1e-13);
    }
    // The Euler scheme gains energy: each step scales the fluctuating part
    // of the trace by 1 + 16 dt^2.
    let (dt, steps) = (1e-2f64, 50i32);
    let want = 3.0 / 16.0 + (3.0 - 3.0 / 16.0) * (1.0 + 16.0 * dt * dt).powi(steps);
    let got = maxwell_moment_reference_euler(&s0, 16, dt, steps as usize).trace();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn euler_recursion_converges_to_the_continuous_reference() {
    let s0 = anisotropic();
    let t = 0.2;
    let exact = maxwell_moment_reference_n(&s0, 8, t);
    let err = |steps: usize| max_abs(&(maxwell_moment_reference_euler(&s0, 8, t / steps as f64, steps) - exact));
    let (e1, e2) = (err(100), err(200));
    assert!(e1 < 1e-2);
    assert!((e1 / e2 - 2.0).abs() < 0.1, "{e1} {e2}");
}

#[test]
fn cubature_rate_matches_the_moment_equation() {
    let s0 = Mat3::new(1.5, 0.2, 0.0, 0.2, 1.0, -0.1, 0.0, -0.1, 0.5);
    let spec = PotentialSpec::new(0.0, 0.0).unwrap();
    let rate = maxwell_moment_rate_cubature(&s0, &spec).unwrap();
    let want = Mat3::identity() * (4.0 * s0.trace()) - s0 * 12.0;
    assert!(max_abs(&(rate - want)) < 1e-12, "{rate} vs {want}");
    let h = 1e-6;
    let fd = (maxwell_moment_reference(&s0, h) - maxwell_moment_reference(&s0, -h)) / (2.0 * h);
    assert!(max_abs(&(fd - want)) < 1e-6);
}

#[test]
fn moment_reference_needs_maxwell_molecules() {
    let spec = PotentialSpec::new(-3.0, 0.25).unwrap();
    assert!(matches!(require_maxwell(&spec), Err(Error::Config(_))));
    assert!(maxwell_moment_rate_cubature(&Mat3::identity(), &spec).is_err());
}

#[test]
fn small_maxwell_ensemble_follows_the_euler_recursion() {
    let s0 = anisotropic();
    let law = GaussianMixture::gaussian(vec![0.0; 3], s0.transpose().as_slice().to_vec()).unwrap();
    let (dt, steps) = (1e-3, 200);
    let mut cfg = SimConfig::new(
        16,
        PotentialSpec::new(0.0, 0.0).unwrap(),
        dt,
        dt * steps as f64,
        InitialCondition::Law(law),
    );
    cfg.ensemble_size = 200;
    cfg.record_every = 100;
    cfg.seed = 3;
    let ens = run(&cfg).unwrap();
    let moments = ensemble_second_moment(&ens);
    for (k, row) in moments.iter().enumerate() {
        let want = maxwell_moment_reference_euler(&s0, 16, dt, k * 100);
        for a in 0..3 {
            let e = row[a][a];
            assert!(
                e.agrees_with(want[(a, a)], 3.0, 0.0),
                "t index {k} entry {a}: {e:?} vs {}",
                want[(a, a)]
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symbolic_and_numeric_sphere_rates_agree(
        gamma in prop::sample::select(vec![-3.0, -2.0, -1.0, 0.0, 1.0]),
        r0 in 0.5f64..4.0,
        x in -1.0f64..1.0, y in -1.0f64..1.0, z in 0.1f64..1.0,
    ) {
        let spec = PotentialSpec::new(gamma, r0 / 8.0).unwrap();
        let sym = sphere_decay_rate(&spec, r0).unwrap();
        let num = sphere_decay_rate_numeric(&spec, r0, Vec3::new(x, y, z)).unwrap();
        prop_assert!((sym - num).abs() <= 1e-4 * sym, "{sym} vs {num}");
    }
}

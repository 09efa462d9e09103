use kaclab::densities::GaussianMixture;
use kaclab::kernels::PotentialSpec;
use kaclab::rng::{NoiseTag, PairNoise};
use kaclab::simulator::*;
use kaclab::stats::mean_se;
use kaclab::{Error, Vec3};

fn coulomb() -> PotentialSpec {
    PotentialSpec::new(-3.0, 0.25).unwrap()
}

fn maxwell() -> PotentialSpec {
    PotentialSpec::new(0.0, 0.0).unwrap()
}

fn standard_law() -> InitialCondition {
    InitialCondition::Law(GaussianMixture::isotropic(3, 1.0).unwrap())
}

fn base(n: usize, spec: PotentialSpec, dt: f64, t_end: f64) -> SimConfig {
    let mut cfg = SimConfig::new(n, spec, dt, t_end, standard_law());
    cfg.seed = 42;
    cfg
}

#[test]
fn two_particle_step_is_antisymmetric() {
    let cfg = base(2, coulomb(), 1e-2, 1.0);
    let mut v = vec![Vec3::new(0.3, -0.1, 0.2), Vec3::new(-0.4, 0.5, 0.0)];
    let v0 = v.clone();
    let mut stepper = Stepper::new(&cfg, 0);
    stepper.step(&mut v, 0).unwrap();
    let d1 = v[0] - v0[0];
    let d2 = v[1] - v0[1];
    assert!(d1.norm() > 0.0);
    assert!((d1 + d2).norm() <= 1e-15, "{d1:?} {d2:?}");
}

#[test]
fn momentum_is_conserved_over_ten_thousand_steps() {
    let mut cfg = base(16, coulomb(), 1e-3, 10.0);
    cfg.record_every = 1000;
    let ens = run(&cfg).unwrap();
    let p0 = ens.runs[0].snapshots[0].momentum;
    for s in &ens.runs[0].snapshots {
        let drift = (0..3).map(|a| (s.momentum[a] - p0[a]).powi(2)).sum::<f64>().sqrt();
        assert!(drift <= 1e-10, "t {}: {drift:e}", s.t);
    }
}

#[test]
fn independent_pair_noise_breaks_momentum_conservation() {
    let mut cfg = base(8, coulomb(), 1e-3, 0.01);
    cfg.noise_mode = NoiseMode::IndependentControl;
    let ens = run(&cfg).unwrap();
    let s = ens.runs[0].snapshots.last().unwrap();
    let p0 = ens.runs[0].snapshots[0].momentum;
    let drift = (0..3).map(|a| (s.momentum[a] - p0[a]).powi(2)).sum::<f64>().sqrt();
    assert!(drift > 1e-6, "{drift:e}");
}

#[test]
fn fixed_seed_gives_bit_identical_runs_on_any_thread_count() {
    let mut cfg = base(12, coulomb(), 1e-2, 0.2);
    cfg.ensemble_size = 6;
    let energies = |threads: usize| -> Vec<u64> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let ens = pool.install(|| run(&cfg)).unwrap();
        ens.runs
            .iter()
            .flat_map(|r| r.snapshots.iter().map(|s| s.energy.to_bits()))
            .collect()
    };
    let a = energies(1);
    assert_eq!(a, energies(1));
    assert_eq!(a, energies(3));
}

#[test]
fn bare_coulomb_needs_a_cutoff() {
    let cfg = base(4, PotentialSpec::new(-3.0, 0.0).unwrap(), 1e-3, 0.1);
    assert!(matches!(run(&cfg), Err(Error::CutoffRequired { .. })));
}

#[test]
fn invalid_configurations_are_rejected() {
    let mut cfg = base(1, coulomb(), 1e-3, 0.1);
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    cfg.n_particles = 4;
    cfg.dt = 0.0;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    cfg.dt = 1e-3;
    cfg.initial = InitialCondition::Fixed(vec![Vec3::zeros(); 3]);
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}

#[test]
fn projection_examples() {
    let mut s = VelocityState {
        v: vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(0.0, 2.0, -2.0),
            Vec3::new(0.0, -2.0, 2.0),
        ],
    };
    let before = s.clone();
    let e = s.energy();
    project_energy(&mut s, e).unwrap();
    for (a, b) in s.v.iter().zip(&before.v) {
        assert!((a - b).norm() < 1e-15);
    }
    project_energy(&mut s, e / 4.0).unwrap();
    for (a, b) in s.v.iter().zip(&before.v) {
        assert!((a - b * 0.5).norm() < 1e-15);
    }
    assert!((s.energy() - e / 4.0).abs() <= 1e-12);
}

#[test]
fn projection_keeps_momentum_and_hits_the_target() {
    let mut s = VelocityState {
        v: (0..10)
            .map(|i| Vec3::new(i as f64 * 0.3, (i * i) as f64 * 0.05 - 1.0, 0.7))
            .collect(),
    };
    let p = s.momentum();
    project_energy(&mut s, 40.0).unwrap();
    assert!((s.energy() - 40.0).abs() <= 1e-12);
    assert!((s.momentum() - p).norm() <= 1e-12);
}

#[test]
fn projection_of_a_zero_state_fails() {
    let mut s = VelocityState {
        v: vec![Vec3::zeros(); 3],
    };
    assert!(matches!(project_energy(&mut s, 1.0), Err(Error::Domain(_))));
}

#[test]
fn projected_runs_conserve_energy() {
    let mut cfg = base(16, coulomb(), 1e-2, 1.0);
    cfg.energy_projection = true;
    cfg.record_every = 10;
    let ens = run(&cfg).unwrap();
    let e0 = ens.runs[0].snapshots[0].energy;
    for s in &ens.runs[0].snapshots {
        assert!((s.energy - e0).abs() <= 1e-12 * e0);
    }
}

#[test]
fn pair_statistic_examples() {
    let s = VelocityState {
        v: vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)],
    };
    assert!((pair_inverse_distance(&s, 3.0, 100.0).unwrap() - 0.5).abs() < 1e-15);
    let s = VelocityState {
        v: vec![Vec3::new(0.5, 0.0, 0.0); 2],
    };
    assert_eq!(pair_inverse_distance(&s, 3.0, 100.0).unwrap(), 100.0);
    let s = VelocityState {
        v: vec![Vec3::new(5.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)],
    };
    assert_eq!(pair_inverse_distance(&s, 3.0, 100.0).unwrap(), 0.0);
}

#[test]
fn energy_change_matches_its_compensator_in_expectation() {
    for (spec, eps_d) in [(maxwell(), 0.0), (coulomb(), 0.0), (maxwell(), 0.05)] {
        let mut cfg = base(8, spec, 2e-2, 0.5);
        cfg.ensemble_size = 400;
        cfg.record_every = 25;
        cfg.eps_diffusion = eps_d;
        let ens = run(&cfg).unwrap();
        let resid: Vec<f64> = ens
            .runs
            .iter()
            .map(|r| {
                let (a, b) = (&r.snapshots[0], r.snapshots.last().unwrap());
                b.energy - a.energy - b.energy_compensator
            })
            .collect();
        let m = mean_se(&resid);
        assert!(
            m.agrees_with(0.0, 3.0, 0.0),
            "gamma {} eps_d {eps_d}: {m:?}",
            spec.gamma
        );
    }
}

#[test]
fn initial_moments_match_the_law() {
    let mut cfg = base(32, coulomb(), 1e-2, 0.0);
    cfg.ensemble_size = 200;
    let ens = run(&cfg).unwrap();
    for a in 0..3 {
        let m1: Vec<f64> = ens.runs.iter().map(|r| r.snapshots[0].moments[a][0]).collect();
        assert!(mean_se(&m1).agrees_with(0.0, 3.0, 0.0));
        let m2: Vec<f64> = ens.runs.iter().map(|r| r.snapshots[0].moments[a][1]).collect();
        assert!(mean_se(&m2).agrees_with(1.0, 3.0, 0.0));
        let m4: Vec<f64> = ens.runs.iter().map(|r| r.snapshots[0].moments[a][3]).collect();
        assert!(mean_se(&m4).agrees_with(3.0, 3.0, 0.0));
    }
}

#[test]
fn mean_velocity_stays_zero() {
    let mut cfg = base(16, coulomb(), 1e-2, 1.0);
    cfg.ensemble_size = 100;
    cfg.record_every = 50;
    let ens = run(&cfg).unwrap();
    for k in 0..3 {
        for row in ens.across_runs(|s| s.moments[k][0]) {
            assert!(row.mean.abs() <= 3.0 * row.se, "{row:?}");
        }
    }
}

#[test]
fn relabelled_system_gives_the_permuted_trajectory() {
    let n = 6;
    let cfg = base(n, coulomb(), 1e-2, 1.0);
    let v0: Vec<Vec3> = (0..n)
        .map(|i| Vec3::new(i as f64 * 0.4 - 1.0, (i % 3) as f64 * 0.5 - 0.5, 0.1 * i as f64))
        .collect();
    let perm = [3usize, 0, 5, 1, 4, 2];
    let mut a = v0.clone();
    let mut b: Vec<Vec3> = perm.iter().map(|&p| v0[p]).collect();
    let mut sa = Stepper::new(&cfg, 0);
    let mut sb = Stepper::new(&cfg, 0)
        .with_labels(perm.iter().map(|&p| p as u32).collect())
        .unwrap();
    for k in 0..100 {
        sa.step(&mut a, k).unwrap();
        sb.step(&mut b, k).unwrap();
    }
    for (slot, &p) in perm.iter().enumerate() {
        assert!((b[slot] - a[p]).norm() <= 1e-10, "particle {p}");
    }
}

#[test]
fn bad_labels_are_rejected() {
    let cfg = base(3, coulomb(), 1e-2, 1.0);
    assert!(Stepper::new(&cfg, 0).with_labels(vec![0, 0, 1]).is_err());
}

#[test]
fn noise_substeps_share_the_brownian_path() {
    // Both runs start each step from the same state, so the kernel factor
    // is shared and only the Brownian increments are compared.
    let spec = maxwell();
    let v = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)];
    let mut coarse = base(2, spec, 2e-2, 1.0);
    coarse.noise_substeps = 2;
    let fine = base(2, spec, 1e-2, 1.0);
    let mut sc = Stepper::new(&coarse, 0);
    let mut vc = v.clone();
    sc.step(&mut vc, 0).unwrap();
    let total = sc.last_noise()[0];
    let mut sf = Stepper::new(&fine, 0);
    let mut sum = Vec3::zeros();
    for k in 0..2 {
        let mut vf = v.clone();
        sf.step(&mut vf, k).unwrap();
        sum += sf.last_noise()[0];
    }
    assert!((total - sum).norm() <= 1e-14, "{total:?} vs {sum:?}");
}

#[test]
fn pair_noise_is_counter_based() {
    let a = PairNoise::new(7, 3);
    let b = PairNoise::new(7, 3);
    assert_eq!(a.normal3(10, 1, 2, NoiseTag::Pair), b.normal3(10, 1, 2, NoiseTag::Pair));
    assert_ne!(a.normal3(10, 1, 2, NoiseTag::Pair), a.normal3(10, 1, 3, NoiseTag::Pair));
    assert_ne!(a.normal3(10, 1, 2, NoiseTag::Pair), a.normal3(11, 1, 2, NoiseTag::Pair));
    assert_ne!(a.normal3(10, 1, 2, NoiseTag::Pair), a.normal3(10, 1, 2, NoiseTag::Heat));
    assert_ne!(
        a.normal3(10, 1, 2, NoiseTag::Pair),
        PairNoise::new(7, 4).normal3(10, 1, 2, NoiseTag::Pair)
    );
}

use momsynth::duality::random::{dualization_instance, primal_instance, spd_matrix};
use momsynth::duality::{
    check_dual_lmi, check_primal_lmi, dualization_check, project_sigma33, stationary_gap,
    transform_to_moments, StabilityCertificate,
};
use momsynth::linalg::{min_eigenvalue, spectral_radius};
use momsynth::moments::MomentMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn primal_and_dual_agree_on_random_certificates() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..200 {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=2);
        let (stage, cert) = primal_instance(&mut rng, n, m);
        let primal = check_primal_lmi(&cert, &stage).unwrap();
        assert!(primal.feasible && primal.margin > 1e-6, "{primal:?}");
        let dual = check_dual_lmi(&cert, &stage).unwrap();
        assert!(dual.feasible && dual.margin > 0.0, "{dual:?}");
    }
}

#[test]
fn unstable_closed_loops_fail_on_both_sides() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..100 {
        let (mut stage, cert) = primal_instance(&mut rng, 2, 1);
        // Rescale the closed loop to spectral radius 1.5.
        let a_k = cert
            .closed_loop(&stage)
            .unwrap()
            .view((1, 1), (2, 2))
            .into_owned();
        let scale = 1.5 / spectral_radius(&a_k);
        stage.a = &a_k * scale - &stage.b * cert.gain.view((0, 1), (1, 2));
        assert!(!check_primal_lmi(&cert, &stage).unwrap().feasible);
        assert!(!check_dual_lmi(&cert, &stage).unwrap().feasible);
    }
}

#[test]
fn transform_lands_on_relaxed_propagation() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..200 {
        let (n, m) = (rng.random_range(1..=3), rng.random_range(1..=2));
        let (stage, cert) = primal_instance(&mut rng, n, m);
        let sigma = transform_to_moments(&cert).unwrap();
        assert!(min_eigenvalue(sigma.matrix()) > -1e-9 * sigma.matrix().norm());
        let gap = stationary_gap(&sigma, &stage).unwrap();
        assert!(min_eigenvalue(&gap) >= -1e-8 * gap.norm().max(1.0));
    }
}

#[test]
fn reverse_transform_after_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for _ in 0..100 {
        let (stage, cert) = primal_instance(&mut rng, 2, 2);
        let image = transform_to_moments(&cert).unwrap();
        // Extra input variance keeps Σ ⪰ 0 and only enlarges F̃.
        let extra = spd_matrix(&mut rng, 2, 0.0) * 0.1;
        let mut data = image.matrix().clone();
        let mut block = data.view_mut((3, 3), (2, 2));
        block += &extra;
        let sigma = MomentMatrix::new(data, 2, 2).unwrap();
        assert!(min_eigenvalue(sigma.matrix()) >= -1e-9);

        let projected = project_sigma33(&sigma, 1e-12).unwrap();
        assert!(min_eigenvalue(projected.matrix()) >= -1e-8 * projected.matrix().norm());
        let gap = stationary_gap(&projected, &stage).unwrap();
        assert!(min_eigenvalue(&gap) >= -1e-8 * gap.norm().max(1.0));

        let back = StabilityCertificate::from_moments(&projected).unwrap();
        assert!(check_dual_lmi(&back, &stage).unwrap().feasible);
        assert!((back.gain - &cert.gain).amax() < 1e-6 * cert.gain.amax().max(1.0));
    }
}

#[test]
fn dualization_lemma_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    for _ in 0..300 {
        let (k, l) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let (m, w) = dualization_instance(&mut rng, k, l);
        let r = dualization_check(&m, &w).unwrap();
        assert!(r.primal_holds, "{r:?}");
        assert!(r.dual_holds, "{r:?}");
    }
}

#[test]
fn dual_side_of_lemma_rejects_sign_flip() {
    let (m, w) = dualization_instance(&mut ChaCha8Rng::seed_from_u64(46), 2, 2);
    let r = dualization_check(&(-m), &w).unwrap();
    assert!(!r.primal_holds && !r.dual_holds);
}

use hoi_core::config::ExperimentConfig;
use hoi_core::contact::ContactGraphState;
use hoi_core::demo::{generate, DemoScript};
use hoi_core::metrics::{contact_accuracy, evaluate, mpjpe};
use hoi_core::physics::{ArticulatedModel, DiscObject};
use hoi_core::rl::{state_len, PolicyModel};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn mpjpe_matches_per_joint_distances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let (t, j) = (rng.gen_range(1..8), rng.gen_range(1..6));
        let a = Array3::from_shape_fn((t, j, 2), |_| rng.gen_range(-2.0..2.0));
        let b = Array3::from_shape_fn((t, j, 2), |_| rng.gen_range(-2.0..2.0));
        let mut sum = 0.0f64;
        for f in 0..t {
            for k in 0..j {
                let dx: f64 = a[[f, k, 0]] - b[[f, k, 0]];
                let dy: f64 = a[[f, k, 1]] - b[[f, k, 1]];
                sum += (dx * dx + dy * dy).sqrt();
            }
        }
        let oracle = 1000.0 * sum / (t * j) as f64;
        assert!((mpjpe(a.view(), b.view()).unwrap() - oracle).abs() < 1e-9 * oracle.max(1.0));
    }
}

#[test]
fn contact_accuracy_matches_a_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let (n, e) = (rng.gen_range(1..20), rng.gen_range(1..7));
        let mut seq = || -> Vec<ContactGraphState> {
            (0..n).map(|_| ContactGraphState::from_edges((0..e).map(|_| rng.gen_range(0..2)).collect())).collect()
        };
        let (a, b) = (seq(), seq());
        let mut total = 0.0;
        for f in 0..n {
            let mut sq = 0.0;
            for k in 0..e {
                let d = a[f].edges[k] as f64 - b[f].edges[k] as f64;
                sq += d * d;
            }
            total += sq / e as f64;
        }
        let value = contact_accuracy(&a, &b).unwrap();
        assert!((value - total / n as f64).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&value));
    }
}

#[test]
fn untrained_policy_fails_toss_catch_and_repeats_agree() {
    let model = ArticulatedModel::toy_arm();
    let seq = generate(&DemoScript::toss_catch(), &model, &DiscObject::ball()).unwrap();
    let cfg = ExperimentConfig::default();
    let obs = state_len(&seq.layout, seq.object_count(), seq.edge_count());
    let policy = PolicyModel::new(obs, model.dof(), &cfg.ppo.hidden, cfg.ppo.init_log_std, &mut ChaCha8Rng::seed_from_u64(0));
    let one = evaluate(&policy, &cfg, &seq, 1).unwrap();
    assert!(one.succ < 0.2, "{}", one.succ);
    let three = evaluate(&policy, &cfg, &seq, 3).unwrap();
    assert_eq!((one.succ, one.e_b_mpjpe, one.e_o_mpjpe, one.e_cg), (three.succ, three.e_b_mpjpe, three.e_o_mpjpe, three.e_cg));
}

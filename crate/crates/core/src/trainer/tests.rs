use proptest::prelude::*;
use rand::SeedableRng;

use super::*;
use crate::agents::SoftActionSet;

fn toy_sim() -> SimConfig {
    SimConfig {
        map_width: 30,
        map_height: 30,
        num_sources: 4,
        num_edges: 2,
        r_move: 4,
        r_obs: 12,
        r_collect: 8.0,
        ..SimConfig::default()
    }
}

fn toy_train() -> TrainConfig {
    TrainConfig {
        batch: 8,
        buffer_capacity: 64,
        max_epochs: 40,
        arch: ArchConfig { conv_channels: 2, conv_kernel: 3, hidden: 16 },
        ..TrainConfig::default()
    }
}

fn pv(v: &[f64]) -> ParamVector {
    ParamVector(v.to_vec())
}

#[test]
fn federated_identity_at_one() {
    let ps = vec![pv(&[1.0, 2.0]), pv(&[3.0, -1.0]), pv(&[0.5, 0.5])];
    assert_eq!(federated_update(&ps, 1.0).unwrap(), ps);
}

#[test]
fn federated_uniform_average_at_inverse_n() {
    let ps = vec![pv(&[1.0, 2.0, 7.0]), pv(&[3.0, -1.0, 0.1]), pv(&[0.5, 0.5, -4.0]), pv(&[9.0, 1.0, 2.0])];
    let out = federated_update(&ps, 0.25).unwrap();
    for j in 0..3 {
        let mean = ps.iter().map(|p| p.0[j]).sum::<f64>() / 4.0;
        for p in &out {
            assert!((p.0[j] - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn federated_matches_matrix_multiply_on_basis() {
    let basis: Vec<ParamVector> = (0..4).map(|k| pv(&(0..4).map(|j| (j == k) as u8 as f64).collect::<Vec<_>>())).collect();
    let out = federated_update(&basis, 0.5).unwrap();
    let omega = [[0.5, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0]; 4];
    for k in 0..4 {
        for j in 0..4 {
            // Coordinate j of agent k: sum_i theta_i[j] * Omega[i][k] with theta_i = e_i.
            let expected = if j == k { omega[0][0] } else { omega[0][1] };
            assert!((out[k].0[j] - expected).abs() < 1e-15);
        }
    }
}

#[test]
fn mixing_matrix_is_doubly_stochastic_and_symmetric() {
    for n in 2..=8 {
        let m = FederatedUpdater::new(n, 0.6).unwrap().matrix();
        for i in 0..n {
            assert!((m[i].iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert_eq!(m[i][i], 0.6);
            for j in 0..n {
                assert_eq!(m[i][j], m[j][i]);
            }
        }
    }
}

#[test]
fn federated_rejects_bad_inputs() {
    assert!(federated_update(&[pv(&[1.0])], 1.0).is_err());
    assert!(federated_update(&[pv(&[1.0]), pv(&[1.0, 2.0])], 0.5).is_err());
    assert!(federated_update(&[pv(&[1.0]), pv(&[2.0])], 0.4).is_err());
    assert!(federated_update(&[pv(&[1.0]), pv(&[2.0])], 1.1).is_err());
}

fn spread(ps: &[ParamVector]) -> f64 {
    let n = ps.len() as f64;
    let len = ps[0].len();
    let mean: Vec<f64> = (0..len).map(|j| ps.iter().map(|p| p.0[j]).sum::<f64>() / n).collect();
    ps.iter().map(|p| p.0.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sum()
}

proptest! {
    #[test]
    fn federated_preserves_mean_and_shrinks_spread(
        n in 2usize..7,
        frac in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ps: Vec<ParamVector> = (0..n).map(|_| ParamVector((0..5).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect())).collect();
        let omega = 1.0 / n as f64 + frac * (1.0 - 1.0 / n as f64);
        let out = federated_update(&ps, omega).unwrap();
        for j in 0..5 {
            let before: f64 = ps.iter().map(|p| p.0[j]).sum();
            let after: f64 = out.iter().map(|p| p.0[j]).sum();
            prop_assert!((before - after).abs() < 1e-10);
        }
        let (s0, s1) = (spread(&ps), spread(&out));
        prop_assert!(s1 <= s0 * (1.0 + 1e-12));
        if omega < 1.0 - 1e-9 {
            prop_assert!(s1 < s0);
        }
    }
}

#[test]
fn target_update_extremes_and_contraction() {
    let sim = toy_sim();
    let arch = toy_train().arch;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let online = ActorNet::edge(&sim, &arch, &mut rng).unwrap();
    let original = ActorNet::edge(&sim, &arch, &mut rng).unwrap();

    let mut t = original.clone();
    target_update(&mut t, &online, 1.0).unwrap();
    assert_eq!(t.export_params(), original.export_params());
    target_update(&mut t, &online, 0.0).unwrap();
    assert_eq!(t.export_params(), online.export_params());

    let mut t = original.clone();
    let mut d = t.export_params().distance_sq(&online.export_params()).sqrt();
    for _ in 0..5 {
        target_update(&mut t, &online, 0.8).unwrap();
        let nd = t.export_params().distance_sq(&online.export_params()).sqrt();
        assert!((nd - 0.8 * d).abs() < 1e-9 * d.max(1.0));
        d = nd;
    }
}

#[test]
fn schedule_counts_are_ceilings() {
    for period in 1..12u64 {
        for total in 1..60u64 {
            let count = (1..=total).filter(|&t| is_scheduled(t, period)).count() as u64;
            assert_eq!(count, total.div_ceil(period));
        }
    }
}

#[test]
fn zero_discount_regresses_scaled_penalty() {
    let sim = toy_sim();
    let cfg = TrainConfig { gamma: 0.0, ..toy_train() };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut critic = CriticNet::center(&sim, &cfg.arch, &mut rng).unwrap();
    let ta = ActorNet::center(&sim, &cfg.arch, &mut rng).unwrap();
    let tc = critic.clone();
    let s = AgentState::unmasked(None, vec![0.3; critic_feature_len(&sim)]);
    let e = Experience { state: s.clone(), action: vec![0.5, 0.5], penalty: 42.0, next_state: s.clone() };
    let q = critic.evaluate(&s, &e.action).unwrap();
    let loss = critic_step(&mut critic, &ta, &tc, &[&e], &cfg).unwrap();
    assert!((loss - (q - 0.42).powi(2)).abs() < 1e-15);
}

fn critic_feature_len(sim: &SimConfig) -> usize {
    sim.num_edges * crate::env::center_features_per_edge(sim)
}

#[test]
fn actor_follows_quadratic_critic() {
    let sim = toy_sim();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let arch = ArchConfig { hidden: 8, ..ArchConfig::default() };
    let mut actor = ActorNet::center(&sim, &arch, &mut rng).unwrap();
    let states: Vec<AgentState> = (0..4)
        .map(|i| AgentState::unmasked(None, (0..critic_feature_len(&sim)).map(|j| ((i + j) % 3) as f64 * 0.2).collect()))
        .collect();
    let refs: Vec<&AgentState> = states.iter().collect();
    let target = [0.8, 0.2];
    let quad = |_: &AgentState, a: &[f64]| -> Result<(f64, Vec<f64>)> {
        let q = a.iter().zip(&target).map(|(x, t)| (x - t).powi(2)).sum();
        Ok((q, a.iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect()))
    };
    let mut last = f64::INFINITY;
    for _ in 0..100 {
        let stats = actor_step(&mut actor, &refs, 0.5, 0.0, quad).unwrap();
        assert!(stats.actor_loss < last, "{} !< {last}", stats.actor_loss);
        last = stats.actor_loss;
    }
    let SoftActionSet { blocks } = actor.predict(&states[0]).unwrap();
    assert!((blocks[0][0] - 0.8).abs() < 0.1);
}

#[test]
fn replay_update_leaves_targets_and_reports_none_when_cold() {
    let sim = toy_sim();
    let cfg = toy_train();
    let mut ens = AgentEnsemble::new(&sim, &cfg).unwrap();
    let mut rng = stream(0, Stream::Replay);
    assert!(replay_update(&mut ens.center, &cfg, &mut rng).unwrap().is_none());

    let mut world = World::new(sim.clone()).unwrap();
    let mut log_cfg = cfg.clone();
    log_cfg.max_epochs = 12;
    let before_ta = ens.edges[0].target_actor.export_params();
    let before_tc = ens.edges[0].target_critic.export_params();
    let before_actor = ens.edges[0].actor.export_params();
    // Period longer than the run beyond epoch 1 keeps targets fixed after the first sync.
    log_cfg.target_period = 1000;
    log_cfg.tau = 1.0;
    train_loop(&mut world, &mut ens, &log_cfg, None).unwrap();
    assert_eq!(ens.edges[0].target_actor.export_params(), before_ta);
    assert_eq!(ens.edges[0].target_critic.export_params(), before_tc);
    assert_ne!(ens.edges[0].actor.export_params(), before_actor);
}

#[test]
fn fresh_edges_share_one_initialization() {
    let ens = AgentEnsemble::new(&toy_sim(), &toy_train()).unwrap();
    for u in &ens.edges[1..] {
        assert_eq!(u.actor.export_params(), ens.edges[0].actor.export_params());
        assert_eq!(u.critic.export_params(), ens.edges[0].critic.export_params());
    }
}

#[test]
fn federate_touches_only_edge_actors() {
    let sim = toy_sim();
    let cfg = toy_train();
    let mut ens = AgentEnsemble::new(&sim, &cfg).unwrap();
    for (k, u) in ens.edges.iter_mut().enumerate() {
        let shifted = ParamVector(u.actor.export_params().0.iter().map(|p| p + k as f64).collect());
        u.actor.import_params(&shifted).unwrap();
    }
    let snapshot = ens.clone();
    ens.federate(0.5, false).unwrap();
    assert_ne!(ens.edges[0].actor.export_params(), snapshot.edges[0].actor.export_params());
    for (a, b) in ens.edges.iter().zip(&snapshot.edges) {
        assert_eq!(a.critic.export_params(), b.critic.export_params());
        assert_eq!(a.target_actor.export_params(), b.target_actor.export_params());
        assert_eq!(a.target_critic.export_params(), b.target_critic.export_params());
    }
    assert_eq!(ens.center.actor.export_params(), snapshot.center.actor.export_params());
}

#[test]
fn ensemble_targets_start_equal() {
    let ens = AgentEnsemble::new(&toy_sim(), &toy_train()).unwrap();
    for u in ens.edges.iter().chain([&ens.center]) {
        assert_eq!(u.actor.export_params(), u.target_actor.export_params());
        assert_eq!(u.critic.export_params(), u.target_critic.export_params());
        assert_eq!(u.actor.describe(), u.target_actor.describe());
    }
}

#[test]
fn training_is_deterministic() {
    let sim = toy_sim();
    let cfg = toy_train();
    let run = || {
        let mut world = World::new(sim.clone()).unwrap();
        let mut ens = AgentEnsemble::new(&sim, &cfg).unwrap();
        train_loop(&mut world, &mut ens, &cfg, None).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.metrics_csv(), b.metrics_csv());
    assert_eq!(a.records.len(), 40);
    assert!(a.records[20].agents.iter().all(Option::is_some));
    assert!(a.records[3].agents.iter().all(Option::is_none));
}

#[test]
fn metrics_csv_round_trip() {
    let sim = toy_sim();
    let cfg = toy_train();
    let mut world = World::new(sim.clone()).unwrap();
    let mut ens = AgentEnsemble::new(&sim, &cfg).unwrap();
    let log = train_loop(&mut world, &mut ens, &cfg, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    log.write_dir(dir.path()).unwrap();
    let back = MetricsLog::read_dir(dir.path()).unwrap();
    assert_eq!(back, log);
}

#[test]
fn checkpoints_written_on_schedule() {
    let sim = toy_sim();
    let cfg = TrainConfig { checkpoint_every: 20, ..toy_train() };
    let mut world = World::new(sim.clone()).unwrap();
    let mut ens = AgentEnsemble::new(&sim, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    train_loop(&mut world, &mut ens, &cfg, Some(dir.path())).unwrap();
    let (hash, v) = ParamVector::read_file(&dir.path().join("epoch_40/edge1_actor.params")).unwrap();
    assert_eq!(hash, ens.edges[1].actor.arch_hash());
    assert_eq!(v, ens.edges[1].actor.export_params());
    assert!(dir.path().join("epoch_20/center_critic.params").exists());
}

#[test]
fn config_validation_names_fields() {
    let bad = |f: fn(&mut TrainConfig), field: &str| {
        let mut c = TrainConfig::default();
        f(&mut c);
        match c.validate(4) {
            Err(Error::InvalidConfig { field: got, .. }) => assert_eq!(got, field),
            other => panic!("expected {field} error, got {other:?}"),
        }
    };
    bad(|c| c.gamma = 1.5, "gamma");
    bad(|c| c.tau = -0.1, "tau");
    bad(|c| c.epsilon = 2.0, "epsilon");
    bad(|c| c.target_period = 0, "target_period");
    bad(|c| c.fed_period = 0, "fed_period");
    bad(|c| c.omega = 0.2, "omega");
    bad(|c| c.lr_actor = 0.0, "lr_actor");
    bad(|c| c.lr_critic = -1.0, "lr_critic");
    bad(|c| c.batch = 0, "batch");
    bad(|c| c.buffer_capacity = 10, "buffer_capacity");
    bad(|c| c.penalty_scale = 0.0, "penalty_scale");
    TrainConfig::default().validate(4).unwrap();
}

#[test]
fn baseline_kinds_parse() {
    assert_eq!("greedy".parse::<BaselineKind>().unwrap(), BaselineKind::Greedy);
    assert!("ddpg".parse::<BaselineKind>().is_err());
}

fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = ys.iter().enumerate().map(|(i, y)| (i as f64 - mx) * (y - my)).sum();
    let var: f64 = (0..ys.len()).map(|i| (i as f64 - mx).powi(2)).sum();
    cov / var
}

#[test]
fn random_baseline_age_grows_on_sparse_map() {
    let sim = SimConfig { map_width: 200, map_height: 200, num_sources: 6, num_edges: 2, ..SimConfig::default() };
    for seed in 0..5 {
        let sim = SimConfig { seed, ..sim.clone() };
        let cfg = TrainConfig { seed, max_epochs: 1500, ..TrainConfig::default() };
        let mut world = World::new(sim).unwrap();
        let log = run_baseline(BaselineKind::Random, &mut world, &cfg).unwrap();
        assert!(slope(&log.avg_ages()) > 0.0, "seed {seed}");
    }
}

#[test]
fn greedy_baseline_keeps_toy_ages_bounded() {
    let sim = SimConfig {
        map_width: 20,
        map_height: 20,
        num_sources: 2,
        num_edges: 1,
        r_move: 4,
        r_obs: 20,
        r_collect: 6.0,
        ..SimConfig::default()
    };
    let cfg = TrainConfig { max_epochs: 3000, ..TrainConfig::default() };
    let mut world = World::new(sim).unwrap();
    let log = run_baseline(BaselineKind::Greedy, &mut world, &cfg).unwrap();
    let ages = log.avg_ages();
    let early: f64 = ages[1000..2000].iter().sum::<f64>() / 1000.0;
    let late: f64 = ages[2000..].iter().sum::<f64>() / 1000.0;
    assert!(late < 100.0, "late mean {late}");
    assert!((late - early).abs() < 0.25 * early.max(1.0), "early {early} late {late}");
    assert!(log.deliveries.len() > 50);
}

#[test]
fn centralized_baseline_trains() {
    let sim = toy_sim();
    let cfg = toy_train();
    let mut world = World::new(sim).unwrap();
    let log = run_baseline(BaselineKind::Centralized, &mut world, &cfg).unwrap();
    assert_eq!(log.agent_names, vec!["central".to_string()]);
    assert!(log.records.last().unwrap().agents[0].is_some());
}

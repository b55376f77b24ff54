use std::sync::Arc;

use mixedlane::dynamics::{Role, VehicleState};
use mixedlane::env::*;
use mixedlane::track::Track;
use mixedlane_oracles::boxes::{all_pairs, Rect};
use mixedlane_oracles::straight;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(cfg: EnvConfig<f64>) -> (Arc<EnvConfig<f64>>, Arc<Track<f64>>) {
    let track = Arc::new(cfg.build_track().unwrap());
    (Arc::new(cfg), track)
}

fn default_setup() -> (Arc<EnvConfig<f64>>, Arc<Track<f64>>) {
    setup(EnvConfig::default())
}

/// A vehicle on the bottom straight of `lane`, `x` metres from the lap start.
fn on_straight(track: &Track<f64>, lane: usize, x: f64, role: Role) -> VehicleState<f64> {
    let p = track.lanes()[lane].point_at(0.0);
    let mut v = VehicleState::at_rest(p.x + x, p.y, 0.0, lane, role);
    if role != Role::Obstacle {
        v.target_speed = 0.8;
    }
    v
}

fn rects(world: &World<f64>, cfg: &EnvConfig<f64>) -> Vec<Rect> {
    world
        .vehicles
        .iter()
        .map(|v| {
            let half = cfg.geometry.body_length / 2.0;
            Rect {
                cx: v.x + half * v.heading.cos(),
                cy: v.y + half * v.heading.sin(),
                heading: v.heading,
                half_length: half,
                half_width: cfg.geometry.body_width / 2.0,
            }
        })
        .collect()
}

fn random_action(rng: &mut ChaCha8Rng) -> ActionPair {
    ActionPair::new(LaneAction::ALL[rng.gen_range(0..3)], AccelAction::ALL[rng.gen_range(0..3)])
}

#[test]
fn same_seed_same_world() {
    let (cfg, track) = default_setup();
    let a = randomize_scenario(&cfg, &track, 42).unwrap();
    let b = randomize_scenario(&cfg, &track, 42).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, randomize_scenario(&cfg, &track, 43).unwrap());
}

#[test]
fn scenarios_respect_placement_rules_and_start_collision_free() {
    let (cfg, track) = default_setup();
    let m = track.lane_count();
    let ref_len = track.lanes()[track.reference_lane()].total_length();
    for seed in 0..10_000 {
        let w = randomize_scenario(&cfg, &track, seed).unwrap();
        assert_eq!(w.len(), cfg.vehicles + cfg.obstacles);
        assert_eq!(w.vehicles[AGENT].role, Role::Agent);
        let obstacles: Vec<usize> = (0..w.len()).filter(|&i| w.vehicles[i].role == Role::Obstacle).collect();
        assert_eq!(obstacles.len(), cfg.obstacles);
        for lane in 0..m {
            assert!(obstacles.iter().any(|&i| w.vehicles[i].lane == lane), "seed {seed}: lane {lane} has no obstacle");
        }
        for (n, &i) in obstacles.iter().enumerate() {
            for &j in &obstacles[n + 1..] {
                let d = (w.reference_arc(i, &track) - w.reference_arc(j, &track)).rem_euclid(ref_len);
                assert!(d.min(ref_len - d) >= 4.0 * cfg.geometry.body_length - 1e-9, "seed {seed}: obstacles {i},{j} {d}");
            }
        }
        for v in &w.vehicles {
            let speed_ok = if v.role == Role::Obstacle {
                v.target_speed == 0.0
            } else {
                (cfg.target_speed_min_mps..=cfg.target_speed_max_mps).contains(&v.target_speed)
            };
            assert!(speed_ok && v.speed == 0.0, "seed {seed}: {v:?}");
        }
        let pairs = all_pairs(&rects(&w, &cfg));
        assert!(pairs.is_empty(), "seed {seed}: initial overlap {pairs:?}");
    }
}

#[test]
fn too_many_vehicles_is_infeasible() {
    let (cfg, track) = setup(EnvConfig { vehicles: 400, ..EnvConfig::default() });
    assert!(matches!(randomize_scenario(&cfg, &track, 0), Err(EnvError::Infeasible(_))));
}

#[test]
fn episodes_are_deterministic() {
    let (cfg, track) = default_setup();
    let run = || {
        let mut env = Env::new(cfg.clone(), track.clone(), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut out = Vec::new();
        for _ in 0..1500 {
            let r = env.step(random_action(&mut rng)).unwrap();
            let done = r.done;
            out.push(r);
            if done {
                env.reset(11).unwrap();
            }
        }
        out
    };
    let (a, b) = (run(), run());
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x, y);
        assert_eq!(x.reward.to_bits(), y.reward.to_bits());
    }
}

#[test]
fn empty_road_gives_six_nulls() {
    let (cfg, track) = default_setup();
    let w = World::from_vehicles(vec![on_straight(&track, 1, 0.0, Role::Agent)], &track, 0).unwrap();
    let o = observe(&w, &track, &cfg, AGENT);
    assert_eq!(o.null, [true; 6]);
    for n in o.neighbors {
        assert_eq!(n, [cfg.vision_radius_m, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }
    assert_eq!(o.self_obs, [0.0, 0.8, 1.0, 1.0, 0.0]);
}

#[test]
fn neighbour_dead_ahead() {
    let (cfg, track) = default_setup();
    let mut me = on_straight(&track, 1, 0.0, Role::Agent);
    let mut other = on_straight(&track, 1, 0.5, Role::Background);
    me.speed = 0.6;
    other.speed = 0.6;
    let w = World::from_vehicles(vec![me, other], &track, 0).unwrap();
    let o = observe(&w, &track, &cfg, AGENT);
    let n = o.neighbors[0];
    assert!((n[0] - 0.5).abs() < 1e-12, "{n:?}");
    assert!((n[1] - 1.0).abs() < 1e-12 && n[2].abs() < 1e-12);
    assert!(n[3].abs() < 1e-12 && n[4] == 0.0 && n[5] == 0.0);
    assert_eq!(o.ids[0], Some(1));
    assert_eq!(o.null, [false, true, true, true, true, true]);
}

#[test]
fn eight_neighbours_keep_the_nearest_six() {
    let (cfg, track) = default_setup();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let mut vehicles = vec![on_straight(&track, 1, 0.0, Role::Agent)];
        for _ in 0..8 {
            let lane = rng.gen_range(0..3);
            let x = rng.gen_range(-1.4..1.4);
            vehicles.push(on_straight(&track, lane, x, Role::Background));
        }
        let w = World::from_vehicles(vehicles, &track, 0).unwrap();
        let me = w.vehicles[0];
        let mut oracle: Vec<(f64, usize)> = (1..w.len())
            .map(|k| ((w.vehicles[k].x - me.x).hypot(w.vehicles[k].y - me.y), k))
            .filter(|&(d, _)| d <= cfg.vision_radius_m)
            .collect();
        oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
        oracle.truncate(6);
        let o = observe(&w, &track, &cfg, AGENT);
        let got: Vec<usize> = o.ids.iter().flatten().copied().collect();
        let want: Vec<usize> = oracle.iter().map(|&(_, k)| k).collect();
        assert_eq!(got, want);
        for (slot, &(d, k)) in oracle.iter().enumerate() {
            let n = o.neighbors[slot];
            assert!((n[0] - d).abs() < 1e-12);
            assert!((n[1] * n[1] + n[2] * n[2] - 1.0).abs() < 1e-9);
            assert_eq!(n[4], w.vehicles[k].lane as f64 - 1.0);
        }
    }
}

#[test]
fn accelerate_raises_command_by_one_step() {
    let (cfg, track) = default_setup();
    let mut w = World::from_vehicles(vec![on_straight(&track, 1, 0.0, Role::Agent)], &track, 0).unwrap();
    w.vehicles[0].commanded_speed = 0.5;
    apply_action(&mut w, &track, &cfg, AGENT, ActionPair::new(LaneAction::Keep, AccelAction::Accelerate)).unwrap();
    assert!((w.vehicles[0].commanded_speed - 0.51).abs() < 1e-15);
    apply_action(&mut w, &track, &cfg, AGENT, ActionPair::new(LaneAction::Keep, AccelAction::Decelerate)).unwrap();
    assert!((w.vehicles[0].commanded_speed - 0.5).abs() < 1e-15);
    w.vehicles[0].commanded_speed = 0.0;
    apply_action(&mut w, &track, &cfg, AGENT, ActionPair::new(LaneAction::Keep, AccelAction::Decelerate)).unwrap();
    assert_eq!(w.vehicles[0].commanded_speed, 0.0);
}

#[test]
fn lane_requests_are_masked_at_the_edges() {
    let (cfg, track) = default_setup();
    let mut w = World::from_vehicles(vec![on_straight(&track, 0, 0.0, Role::Agent)], &track, 0).unwrap();
    let before = w.clone();
    apply_action(&mut w, &track, &cfg, AGENT, ActionPair::new(LaneAction::Left, AccelAction::Hold)).unwrap();
    assert_eq!(w, before);
    apply_action(&mut w, &track, &cfg, AGENT, ActionPair::new(LaneAction::Right, AccelAction::Hold)).unwrap();
    assert!(w.vehicles[0].lane_change.is_active());
    assert_eq!(w.vehicles[0].lane_change.target(), Some(1));
    // a second request while changing is ignored
    let during = w.clone();
    apply_action(&mut w, &track, &cfg, AGENT, ActionPair::new(LaneAction::Right, AccelAction::Hold)).unwrap();
    assert_eq!(w, during);
}

#[test]
fn two_vehicle_trace_matches_hand_stepping() {
    let (cfg, track) = default_setup();
    // the follower's gap keeps its IDM loss below the MOBIL threshold, so it
    // stays in lane (the oracle does not model lane changes)
    let mut agent = on_straight(&track, 1, 1.0, Role::Agent);
    agent.y += 0.03;
    agent.heading = 0.04;
    agent.speed = 0.5;
    agent.commanded_speed = 0.5;
    agent.target_speed = 0.7;
    let mut bg = on_straight(&track, 1, -1.3, Role::Background);
    bg.speed = 0.3;
    bg.commanded_speed = 0.3;
    bg.target_speed = 0.4;
    let world = World::from_vehicles(vec![agent, bg], &track, 0).unwrap();
    let mut env = Env::from_world(cfg.clone(), track.clone(), world).unwrap();

    let p = straight::Params {
        lane_y: (0..3).map(|l| track.lanes()[l].point_at(0.0).y).collect(),
        dt: cfg.dt_s,
        wheel_base: cfg.geometry.wheel_base,
        body_length: cfg.geometry.body_length,
        accel_step: cfg.accel_step_mps2,
        accel_limit: cfg.speed_accel_limit_mps2,
        v_max: cfg.max_speed_mps,
        gain: cfg.steering.gain,
        damping: cfg.steering.damping,
        max_steer: cfg.steering.max_steer,
        idm_alpha: cfg.idm.max_accel,
        idm_beta: cfg.idm.comfortable_decel,
        idm_delta: cfg.idm.exponent,
        idm_s0: cfg.idm.jam_distance,
        idm_t: cfg.idm.time_headway,
        c0: cfg.reward.c0,
        c1: cfg.reward.c1,
        c2: cfg.reward.c2,
        lane_width: track.lane_width(),
    };
    let car = |v: &VehicleState<f64>, background| straight::Car {
        x: v.x,
        y: v.y,
        heading: v.heading,
        speed: v.speed,
        commanded: v.commanded_speed,
        target: v.target_speed,
        lane: v.lane,
        background,
    };
    let mut cars = vec![car(&agent, false), car(&bg, true)];
    let accels = [1, 1, 0, -1, 1, 0, 0, 1, -1, 1];
    for (t, &a) in accels.iter().enumerate() {
        let action = ActionPair::new(LaneAction::Keep, AccelAction::ALL[(a + 1) as usize]);
        let r = env.step(action).unwrap();
        straight::tick(&p, &mut cars, a);
        for (v, c) in env.world().vehicles.iter().zip(&cars) {
            for (got, want) in [(v.x, c.x), (v.y, c.y), (v.heading, c.heading), (v.speed, c.speed), (v.commanded_speed, c.commanded)] {
                assert!((got - want).abs() < 1e-12, "tick {t}: {v:?} vs {c:?}");
            }
            assert_eq!(v.lane, c.lane);
        }
        assert!((r.reward - straight::reward(&p, &cars)).abs() < 1e-12, "tick {t}");
        assert!(!r.done && r.events.collisions.is_empty());
    }
}

#[test]
fn collisions_match_all_pairs_oracle() {
    let (cfg, track) = setup(EnvConfig { terminate_on_collision: false, ..EnvConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut seen = 0;
    for seed in 0..4 {
        let mut env = Env::new(cfg.clone(), track.clone(), seed).unwrap();
        for _ in 0..1500 {
            let r = env.step(random_action(&mut rng)).unwrap();
            let want = all_pairs(&rects(env.world(), &cfg));
            assert_eq!(r.events.collisions, want);
            assert_eq!(r.events.agent_collision, want.iter().any(|&(a, _)| a == AGENT));
            seen += want.len();
        }
    }
    assert!(seen > 0, "random driving should produce some contact");
}

#[test]
fn agent_hitting_an_obstacle_ends_the_episode() {
    let (cfg, track) = default_setup();
    let mut agent = on_straight(&track, 1, 0.0, Role::Agent);
    agent.speed = 1.0;
    agent.commanded_speed = 1.0;
    let obstacle = on_straight(&track, 1, 0.33, Role::Obstacle);
    let world = World::from_vehicles(vec![agent, obstacle], &track, 0).unwrap();
    let mut env = Env::from_world(cfg, track, world).unwrap();
    let r = env.step(ActionPair::NOOP).unwrap();
    assert_eq!(r.events.collisions, vec![(0, 1)]);
    assert!(r.events.agent_collision_onset && r.done);
}

#[test]
fn rewards_are_never_positive() {
    let (cfg, track) = default_setup();
    let params = cfg.reward_params();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut env = Env::new(cfg.clone(), track.clone(), 1).unwrap();
    for _ in 0..3000 {
        let r = env.step(random_action(&mut rng)).unwrap();
        assert!(r.reward <= 0.0);
        let w = env.world();
        let me = &w.vehicles[AGENT];
        let near = w.vehicles[1..].iter().map(|o| (o.x - me.x).hypot(o.y - me.y)).fold(f64::INFINITY, f64::min);
        let calm = me.speed == me.target_speed && near >= params.c2 * params.lane_separation && near >= params.c1 * params.vehicle_length;
        assert_eq!(r.reward == 0.0, calm);
        if r.done {
            env.reset(rng.gen()).unwrap();
        }
        for (n, null) in r.observation.neighbors.iter().zip(r.observation.null) {
            if !null {
                assert!((n[1] * n[1] + n[2] * n[2] - 1.0).abs() < 1e-9);
                assert!(n[0] <= cfg.vision_radius_m);
            }
        }
    }
}

#[test]
fn batch_matches_separate_stepping() {
    let (cfg, track) = default_setup();
    let mut batch = VecEnv::new(cfg.clone(), track.clone(), 21, 8).unwrap();
    let mut seeds = SeedStream::new(21);
    let mut singles: Vec<Env<f64>> = (0..8).map(|_| Env::new(cfg.clone(), track.clone(), seeds.next_seed()).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..400 {
        let actions: Vec<ActionPair> = (0..8).map(|_| random_action(&mut rng)).collect();
        let got = batch.step_many(&actions).unwrap();
        for (i, env) in singles.iter_mut().enumerate() {
            let mut want = env.step(actions[i]).unwrap();
            if want.done {
                let seed = seeds.next_seed();
                want.observation = env.reset(seed).unwrap();
                want.reset_seed = Some(seed);
            }
            assert_eq!(got[i], want);
        }
    }
    assert!(matches!(batch.step_many(&[ActionPair::NOOP]), Err(EnvError::BatchSize { envs: 8, actions: 1 })));
}

#[test]
fn batch_of_one_is_a_plain_step() {
    let (cfg, track) = default_setup();
    let mut seeds = SeedStream::new(2);
    let mut env = Env::new(cfg.clone(), track.clone(), seeds.next_seed()).unwrap();
    let mut batch = VecEnv::new(cfg, track, 2, 1).unwrap();
    for _ in 0..100 {
        let a = ActionPair::new(LaneAction::Keep, AccelAction::Accelerate);
        assert_eq!(batch.step_many(&[a]).unwrap()[0], env.step(a).unwrap());
    }
}

#[test]
fn terminal_env_in_a_batch_is_reset() {
    let (cfg, track) = default_setup();
    let mut seeds = SeedStream::new(9);
    let mut envs: Vec<Env<f64>> = (0..5).map(|_| Env::new(cfg.clone(), track.clone(), seeds.next_seed()).unwrap()).collect();
    let mut agent = on_straight(&track, 1, 0.0, Role::Agent);
    agent.speed = 1.0;
    agent.commanded_speed = 1.0;
    let crash = World::from_vehicles(vec![agent, on_straight(&track, 1, 0.33, Role::Obstacle)], &track, 0).unwrap();
    envs[3] = Env::from_world(cfg.clone(), track.clone(), crash).unwrap();
    let mut batch = VecEnv::from_envs(envs, seeds.clone());
    let out = batch.step_many(&[ActionPair::NOOP; 5]).unwrap();
    assert!(out[3].done);
    let seed = out[3].reset_seed.expect("reset seed reported");
    assert_eq!(seed, seeds.next_seed());
    let fresh = Env::new(cfg, track, seed).unwrap();
    assert_eq!(out[3].observation, fresh.observe());
    assert_eq!(batch.envs()[3].world(), fresh.world());
    assert!(out.iter().enumerate().all(|(i, r)| i == 3 || r.reset_seed.is_none()));
}

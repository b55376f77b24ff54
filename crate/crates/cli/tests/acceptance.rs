//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 1-7 and 11 are exact checks and fail the run. Criteria 8-10 are
//! stochastic desk-scale experiments; their lines report what was measured
//! and do not fail the run. The throughput half of criterion 6 needs four
//! cores and is only enforced when they are available.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use mixedlane::bridge::protocol::{COMMAND_LEN, POSE_LEN};
use mixedlane::bridge::transport::UdpEndpoint;
use mixedlane::bridge::{CommandMessage, InProcessPlant, Message, PlantConfig, PlantServer, PlantThread, PoseMessage, RemotePlant};
use mixedlane::config::RunConfig;
use mixedlane::dynamics::{boxes_collide, OrientedBox};
use mixedlane::env::{AccelAction, ActionPair, Env, EnvConfig, LaneAction, Observation, NEIGHBOR_DIM, NEIGHBOR_SLOTS, SELF_DIM};
use mixedlane::geom::Vec2;
use mixedlane::net::{forward, save_checkpoint, Checkpoint, NetworkParams, NetworkShape};
use mixedlane::track::{build_arc_table, BezierSegment, OvalSpec, Track};
use mixedlane::traffic::{idm_acceleration, mobil_decision, IdmParams, LaneNeighbors, MobilChoice, MobilContext, MobilParams, Neighbor};
use mixedlane::train::*;
use mixedlane_cli::commands::{cmd_adapt, cmd_eval, cmd_plot};
use mixedlane_cli::plot::count_class;
use mixedlane_cli::PlantMode;
use mixedlane_oracles::boxes::{overlap_by_sampling, tangency_margin, Rect};
use mixedlane_oracles::curves;
use mixedlane_oracles::returns::returns as oracle_returns;
use mixedlane_oracles::serial::serial_train;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn line(n: u32, name: &str, o: &Outcome, elapsed: Duration) {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {n:>2} {name:<26} {verdict}  {} [{:.1} s]", o.detail, elapsed.as_secs_f64()).unwrap();
    out.flush().unwrap();
}

// ---------------------------------------------------------------- 1

fn cps(s: &BezierSegment<f64>) -> [curves::P; 4] {
    [[s.p0.x, s.p0.y], [s.p1.x, s.p1.y], [s.p2.x, s.p2.y], [s.p3.x, s.p3.y]]
}

fn geometry() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_arc: f64 = 0.0;
    for _ in 0..300 {
        let mut p = Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let mut pts = [p; 4];
        for q in pts.iter_mut().skip(1) {
            p += Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            *q = p;
        }
        let seg = BezierSegment::new(pts[0], pts[1], pts[2], pts[3]).unwrap();
        let want = curves::arc_length(&cps(&seg), 20_000);
        worst_arc = worst_arc.max((build_arc_table(&[seg], 0.02).total_length() - want).abs() / want);
    }
    let track = Track::<f64>::oval(&OvalSpec::default()).unwrap();
    let mut worst_proj: f64 = 0.0;
    for (i, lane) in track.lanes().iter().enumerate() {
        let want: f64 = lane.segments().iter().map(|s| curves::arc_length(&cps(s), 20_000)).sum();
        worst_arc = worst_arc.max((lane.total_length() - want).abs() / want);
        for _ in 0..2000 {
            let s = rng.gen_range(0.0..lane.total_length());
            let p = lane.point_at(s);
            let q = track.project(i, p).unwrap();
            worst_proj = worst_proj.max(lane.point_at(q.s).dist(p));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_arc <= 1e-5 && worst_proj <= 1e-4 && secs < 10.0,
        format!("arc rel err {worst_arc:.1e} (<= 1e-5), projection err {worst_proj:.1e} m (<= 1e-4), {secs:.1} s (< 10)"),
    )
}

// ---------------------------------------------------------------- 2

fn collision() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let random_box = |rng: &mut ChaCha8Rng| {
        let (cx, cy) = (rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4));
        let heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let (hl, hw) = (rng.gen_range(0.05..0.3), rng.gen_range(0.03..0.15));
        (OrientedBox::new(Vec2::new(cx, cy), heading, hl, hw).unwrap(), Rect { cx, cy, heading, half_length: hl, half_width: hw })
    };
    let (mut compared, mut disagree, mut skipped) = (0, 0, 0);
    for _ in 0..10_000 {
        let (a, ra) = random_box(&mut rng);
        let (b, rb) = random_box(&mut rng);
        if tangency_margin(&ra, &rb) < 1e-9 {
            skipped += 1;
            continue;
        }
        compared += 1;
        disagree += usize::from(boxes_collide(&a, &b) != overlap_by_sampling(&ra, &rb, 100));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(disagree == 0 && secs < 30.0, format!("{disagree} disagreements in {compared} pairs ({skipped} within tangency margin), {secs:.1} s (< 30)"))
}

// ---------------------------------------------------------------- 3

fn idm_reference(v: f64, v0: f64, s: f64, dv: f64, p: &IdmParams<f64>) -> f64 {
    let s_star = (p.jam_distance + v * p.time_headway + v * dv / (2.0 * (p.max_accel * p.comfortable_decel).sqrt())).max(p.jam_distance);
    p.max_accel * (1.0 - (v / v0).powf(p.exponent) - (s_star / s).powi(2))
}

fn traffic() -> Outcome {
    let p = IdmParams::<f64>::default();
    let mut bad = Vec::new();
    let free = [0.3, 0.8, 1.2].iter().all(|&v0| idm_acceleration(v0, v0, f64::INFINITY, 0.0, &p).unwrap().abs() < 1e-12);
    let jam = idm_acceleration(0.0, 1.0, p.jam_distance, 0.0, &p).unwrap().abs() < 1e-12;
    if !(free && jam) {
        bad.push("equilibria".to_string());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let a = |v: f64, s: f64, dv: f64| idm_acceleration(v, 1.0, s, dv, &p).unwrap();
    let mut monotone_violations = 0;
    for _ in 0..100_000 {
        let (v, s, dv, h) = (rng.gen_range(0.0..1.5), rng.gen_range(0.05..4.0), rng.gen_range(-1.0..1.0), rng.gen_range(1e-4..0.2));
        let ok = a(v, s + h, dv) >= a(v, s, dv) && a(v, s, dv + h) <= a(v, s, dv) && a(v + h, s, dv) <= a(v, s, dv);
        monotone_violations += usize::from(!ok);
    }
    let mobil = MobilParams::default();
    let neighbor = |rng: &mut ChaCha8Rng| {
        rng.gen_bool(0.7).then(|| Neighbor { gap: rng.gen_range(-0.05..2.0), speed: rng.gen_range(0.0..1.5), target_speed: rng.gen_range(0.3..1.5) })
    };
    let lane = |rng: &mut ChaCha8Rng| LaneNeighbors { leader: neighbor(rng), follower: neighbor(rng) };
    let (mut changes, mut veto_violations) = (0, 0);
    for _ in 0..100_000 {
        let ctx = MobilContext {
            speed: rng.gen_range(0.0..1.5),
            target_speed: rng.gen_range(0.3..1.5),
            body_length: 0.32,
            current: lane(&mut rng),
            left: rng.gen_bool(0.8).then(|| lane(&mut rng)),
            right: rng.gen_bool(0.8).then(|| lane(&mut rng)),
        };
        let side = match mobil_decision(&ctx, &mobil, &p).unwrap() {
            MobilChoice::Left => ctx.left.unwrap(),
            MobilChoice::Right => ctx.right.unwrap(),
            MobilChoice::None => continue,
        };
        changes += 1;
        if let Some(f) = side.follower {
            let imposed = idm_reference(f.speed, f.target_speed, f.gap, f.speed - ctx.speed, &p).max(-p.hard_decel());
            veto_violations += usize::from(!(f.gap > 0.0 && imposed >= -mobil.safe_decel));
        }
    }
    let pass = bad.is_empty() && monotone_violations == 0 && veto_violations == 0;
    outcome(
        pass,
        format!("equilibria {}, monotonicity violations {monotone_violations}/1e5, veto violations {veto_violations} over 1e5 decisions ({changes} lane changes)", if bad.is_empty() { "exact" } else { "WRONG" }),
    )
}

// ---------------------------------------------------------------- 4

fn losses() -> Outcome {
    let cfg = TrainConfig::<f64>::default();
    let u = [1.0_f64 / 3.0; 3];
    let r = compute_returns(&[1.0_f64, 1.0], 0.9, 10.0, false);
    let rt = compute_returns(&[1.0_f64, 1.0], 0.9, 10.0, true);
    let checks = [
        ("R0", r[0], 10.0),
        ("R1", r[1], 10.0),
        ("terminal R0", rt[0], 1.9),
        ("ppo clip +", ppo_clip_loss(&[1.5], &[1.0], 0.1), -1.1),
        ("ppo clip -", ppo_clip_loss(&[0.5], &[-1.0], 0.1), 0.9),
        ("entropy", entropy(&u, &u), 2.0 * 3f64.ln()),
        ("weighted total", total_loss(-1.1, 2.0, -2.1972, &cfg), -9.0065916),
    ];
    let worst = checks.iter().map(|(_, got, want)| (got - want).abs()).fold(0.0, f64::max);
    let failed: Vec<&str> = checks.iter().filter(|(_, g, w)| (g - w).abs() > 1e-9).map(|c| c.0).collect();
    outcome(failed.is_empty(), format!("{} hand values, max abs err {worst:.1e} (<= 1e-9){}", checks.len(), if failed.is_empty() { String::new() } else { format!("; wrong: {failed:?}") }))
}

// ---------------------------------------------------------------- 5

fn random_obs(rng: &mut ChaCha8Rng) -> Observation<f64> {
    let mut o = Observation { self_obs: [0.0; SELF_DIM], neighbors: [[0.0; NEIGHBOR_DIM]; NEIGHBOR_SLOTS], ids: [None; NEIGHBOR_SLOTS], null: [false; NEIGHBOR_SLOTS] };
    for v in o.self_obs.iter_mut().chain(o.neighbors.iter_mut().flatten()) {
        *v = rng.gen_range(-2.0..2.0);
    }
    o
}

fn random_action(rng: &mut ChaCha8Rng) -> ActionPair {
    ActionPair::new(LaneAction::ALL[rng.gen_range(0..3)], AccelAction::ALL[rng.gen_range(0..3)])
}

type Sample = (Observation<f64>, ActionPair, f64, f64, f64);

/// Weighted loss with returns, advantages and behaviour log-probabilities fixed.
fn batch_loss(params: &NetworkParams<f64>, theta: &[f64], data: &[Sample], cfg: &TrainConfig<f64>) -> f64 {
    let mut total = 0.0;
    for (o, a, mu, ret, adv) in data {
        let f = forward(params.layout(), theta, o);
        let rho = (f.policy.log_lane[a.lane.index()] + f.policy.log_accel[a.accel.index()] - mu).exp();
        let ppo = -(rho * adv).min(rho.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * adv);
        let critic = (ret - f.v1).powi(2) + (ret - f.v2).powi(2);
        let h: f64 = f.policy.lane.iter().chain(&f.policy.accel).map(|p| -p * p.ln()).sum();
        total += cfg.actor_weight * ppo + cfg.critic_weight * critic - cfg.entropy_weight * h;
    }
    total / data.len() as f64
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let cfg = TrainConfig { network: NetworkShape { hidden: 8, features: 3 }, entropy_weight: 0.3, ..TrainConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let (mut worst, mut kinks, mut failures) = (0.0_f64, 0, 0);
    for batch in 0..10 {
        let params = NetworkParams::init(cfg.network, &mut ChaCha8Rng::seed_from_u64(batch)).unwrap();
        let steps: Vec<Step<f64>> = (0..6)
            .map(|_| Step {
                observation: random_obs(&mut rng),
                action: random_action(&mut rng),
                behaviour_logp: rng.gen_range(-2.6..-1.8),
                reward: rng.gen_range(-1.0..0.0),
                done: false,
                collision: false,
            })
            .collect();
        let traj = Trajectory { steps, bootstrap: random_obs(&mut rng) };
        let (grad, _) = batch_gradient(&params, std::slice::from_ref(&traj), &cfg);
        let (b1, b2) = params.values(&traj.bootstrap);
        let rewards: Vec<f64> = traj.steps.iter().map(|s| s.reward).collect();
        let rets = oracle_returns(&rewards, cfg.gamma, (b1 + b2) / 2.0, false);
        let data: Vec<Sample> = traj
            .steps
            .iter()
            .zip(&rets)
            .map(|(s, &r)| {
                let (v1, v2) = params.values(&s.observation);
                let base = if (r - v1).abs() <= (r - v2).abs() { v1 } else { v2 };
                (s.observation, s.action, s.behaviour_logp, r, r - base)
            })
            .collect();
        let h = 1e-6;
        for _ in 0..100 {
            let i = rng.gen_range(0..params.online.len());
            let (mut plus, mut minus) = (params.online.clone(), params.online.clone());
            plus[i] += h;
            minus[i] -= h;
            let (lp, lm) = (batch_loss(&params, &plus, &data, &cfg), batch_loss(&params, &minus, &data, &cfg));
            let rel = |x: f64| (grad[i] - x).abs() / grad[i].abs().max(x.abs()).max(1e-4);
            let central = rel((lp - lm) / (2.0 * h));
            if central < 1e-4 {
                worst = worst.max(central);
                continue;
            }
            // a ReLU or max-pool tie at this point: the one-sided slopes
            // differ and the analytic value must match one of them
            let base = batch_loss(&params, &params.online, &data, &cfg);
            let (fwd, bwd) = (rel((lp - base) / h), rel((base - lm) / h));
            if (fwd >= 1e-4 || bwd >= 1e-4) && fwd.min(bwd) < 1e-3 {
                kinks += 1;
            } else {
                failures += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failures == 0 && secs < 60.0,
        format!("1000 probes over 10 batches: max rel err {worst:.1e} (< 1e-4), {kinks} at activation kinks, {failures} mismatches, {secs:.1} s (< 60)"),
    )
}

// ---------------------------------------------------------------- 6

fn env_setup(cfg: EnvConfig<f64>) -> (Arc<EnvConfig<f64>>, Arc<Track<f64>>) {
    let track = Arc::new(cfg.build_track().unwrap());
    (Arc::new(cfg), track)
}

fn distributed() -> Outcome {
    let (env_cfg, track) = env_setup(EnvConfig::default());
    let cfg = TrainConfig { total_frames: 10_000, ..TrainConfig::default() };
    let init = NetworkParams::init(cfg.network, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let fast = run_pretraining(env_cfg.clone(), track.clone(), &cfg, init.clone(), 61).unwrap();
    let slow = serial_train(env_cfg.clone(), track.clone(), &cfg, init.clone(), 61);
    let same_bits = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
    let identical = fast.updates == slow.updates
        && same_bits(&fast.params.online, &slow.online)
        && same_bits(&fast.params.target, &slow.target)
        && fast.metrics.len() == slow.frames.len()
        && fast.metrics.iter().zip(&slow.frames).all(|(m, s)| m.reward.to_bits() == s.0.to_bits() && m.collision == s.1);

    let frames = 16_384;
    let rate = |workers: usize, envs: usize| {
        let c = TrainConfig { total_frames: frames, workers, envs_per_worker: envs, ..TrainConfig::default() };
        let t = Instant::now();
        run_pretraining(env_cfg.clone(), track.clone(), &c, init.clone(), 62).unwrap();
        frames as f64 / t.elapsed().as_secs_f64()
    };
    let (one, many) = (rate(1, 1), rate(4, 8));
    let ratio = many / one;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let fast_enough = ratio >= 3.0;
    let detail = format!(
        "1x1 vs serial oracle over 1e4 frames: {}; throughput 4x8 / 1x1 = {ratio:.2} (>= 3 on 4 cores; host has {cores} core{})",
        if identical { "bit-identical" } else { "DIFFERENT" },
        if cores == 1 { "" } else { "s" }
    );
    Outcome { pass: identical && fast_enough, detail }
}

// ---------------------------------------------------------------- 7

fn protocol() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let f = |rng: &mut ChaCha8Rng| f64::from_bits(rng.gen());
    let mut round_trip_failures = 0;
    let mut sizes_ok = POSE_LEN == 45 && COMMAND_LEN == 29;
    for _ in 0..1_000_000 {
        let m = if rng.gen_bool(0.5) {
            Message::Pose(PoseMessage { vehicle_id: rng.gen(), timestamp_us: rng.gen(), x: f(&mut rng), y: f(&mut rng), heading: f(&mut rng), speed: f(&mut rng) })
        } else {
            Message::Command(CommandMessage { vehicle_id: rng.gen(), timestamp_us: rng.gen(), steering: f(&mut rng), target_speed: f(&mut rng) })
        };
        let bytes = m.encode();
        sizes_ok &= bytes.len() == if matches!(m, Message::Pose(_)) { 45 } else { 29 };
        round_trip_failures += usize::from(Message::decode(&bytes).map(|b| b.encode()) != Ok(bytes));
    }

    let (cfg, track) = env_setup(EnvConfig::default());
    let (wb, lim, dt) = (cfg.geometry.wheel_base, cfg.speed_accel_limit_mps2, cfg.dt_s);
    let compare = |mut sim: Env<f64>, mut bridged: Env<f64>, ticks: usize| -> (bool, usize) {
        sim.set_recording(true);
        bridged.set_recording(true);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (mut same, mut collisions) = (true, 0);
        for _ in 0..ticks {
            let a = random_action(&mut rng);
            let (x, y) = (sim.step(a).unwrap(), bridged.step(a).unwrap());
            same &= x.reward.to_bits() == y.reward.to_bits() && x.observation == y.observation && x.done == y.done && x.events.collisions == y.events.collisions;
            collisions += usize::from(x.events.agent_collision_onset);
            if x.done {
                let seed = rng.gen();
                same &= sim.reset(seed).unwrap() == bridged.reset(seed).unwrap();
            }
        }
        same &= sim.take_recording().unwrap().events == bridged.take_recording().unwrap().events;
        (same, collisions)
    };
    let in_process = Env::with_external(cfg.clone(), track.clone(), 5, Box::new(InProcessPlant::new(PlantConfig::ideal(), wb, lim, dt))).unwrap();
    let (same_a, coll_a) = compare(Env::new(cfg.clone(), track.clone(), 5).unwrap(), in_process, 3000);
    let endpoint = UdpEndpoint::bind("127.0.0.1:0").unwrap();
    let addr = endpoint.local_addr().unwrap();
    let _plant = PlantThread::spawn(endpoint, PlantServer::new(PlantConfig::ideal(), wb, lim, dt));
    let remote = RemotePlant::udp(addr, dt, Duration::from_secs(5), Duration::from_secs(5)).unwrap();
    let udp = Env::with_external(cfg.clone(), track.clone(), 8, Box::new(remote)).unwrap();
    let (same_b, coll_b) = compare(Env::new(cfg.clone(), track.clone(), 8).unwrap(), udp, 3000);
    outcome(
        round_trip_failures == 0 && sizes_ok && same_a && same_b,
        format!(
            "1e6 round trips: {round_trip_failures} failures; sizes 45/29 {}; zero-perturbation in-process {} and UDP loopback {} ({} agent collisions)",
            if sizes_ok { "exact" } else { "WRONG" },
            if same_a { "bit-identical" } else { "DIFFERENT" },
            if same_b { "bit-identical" } else { "DIFFERENT" },
            coll_a + coll_b
        ),
    )
}

// ---------------------------------------------------------------- 8, 9

struct PretrainRun {
    seed: u64,
    outcome: TrainOutcome<f64>,
}

fn pretrain_runs(seeds: &[u64]) -> Vec<PretrainRun> {
    let (env_cfg, track) = env_setup(EnvConfig::default());
    let cfg = TrainConfig { total_frames: 50_000, ..TrainConfig::default() };
    seeds
        .iter()
        .map(|&seed| {
            let init = NetworkParams::init(cfg.network, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            PretrainRun { seed, outcome: run_pretraining(env_cfg.clone(), track.clone(), &cfg, init, seed).unwrap() }
        })
        .collect()
}

fn trend(runs: &[PretrainRun]) -> Outcome {
    let mut good = 0;
    let mut parts = Vec::new();
    for r in runs {
        let (a, b) = (&r.outcome.metrics[9_999], &r.outcome.metrics[49_999]);
        let ok = b.window_cpm <= 0.5 * a.window_cpm && b.window_reward > a.window_reward;
        good += usize::from(ok);
        parts.push(format!("seed {}: cpm {:.2}->{:.2}, reward {:.3}->{:.3}", r.seed, a.window_cpm, b.window_cpm, a.window_reward, b.window_reward));
    }
    outcome(good >= 4, format!("{good}/5 seeds halve collisions and raise reward from frame 10k to 50k (need 4); {}", parts.join("; ")))
}

fn mirroring(runs: &[PretrainRun]) -> Outcome {
    let mut negative = 0;
    let mut rs = Vec::new();
    for r in runs {
        let x: Vec<f64> = r.outcome.metrics.iter().map(|m| m.window_reward).collect();
        let y: Vec<f64> = r.outcome.metrics.iter().map(|m| m.window_cpm).collect();
        let c = pearson(&x, &y).unwrap_or(f64::NAN);
        negative += usize::from(c < 0.0);
        rs.push(format!("{c:.2}"));
    }
    outcome(negative >= 4, format!("{negative}/5 seeds with negative reward/collision correlation (need 4); r = [{}]", rs.join(", ")))
}

// ---------------------------------------------------------------- 10, 11

fn adaptation(dir: &Path, pretrained: &NetworkParams<f64>) -> Outcome {
    let cfg = RunConfig { output_dir: dir.to_path_buf(), plant: PlantConfig::deepracer_like(), ..RunConfig::default() };
    let before = dir.join("pretrained.ckpt");
    save_checkpoint(&before, &Checkpoint::new(pretrained.clone()).with_meta("config_hash", cfg.hash())).unwrap();
    let adapted = cmd_adapt(&cfg, &before, &PlantMode::InProcess).unwrap();
    let report = cmd_eval(&cfg, &before, &adapted.checkpoint, &PlantMode::InProcess).unwrap();
    let (cb, ca) = report.median_collisions();
    let (rb, ra) = report.median_reward();
    let pass = ca < cb && ra > rb && report.collisions.p_value < 0.05 && report.reward.p_value < 0.05;
    outcome(
        pass,
        format!(
            "{} adaptation frames, 20 scenarios x 120 s on the perturbed plant: median collisions {cb} -> {ca} (sign p = {:.3}), median reward {rb:.1} -> {ra:.1} (sign p = {:.3})",
            adapted.outcome.metrics.len(),
            report.collisions.p_value,
            report.reward.p_value
        ),
    )
}

fn plot(dir: &Path) -> Outcome {
    let (trace, events) = (dir.join("adapt_trace.csv"), dir.join("adapt_events.csv"));
    let rows = |path: &Path| -> Vec<csv::StringRecord> {
        csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap().records().map(Result::unwrap).collect()
    };
    let (trace_rows, event_rows) = (rows(&trace), rows(&events));

    // the episode with the most collisions, so markers are exercised
    let mut per_episode: BTreeMap<usize, usize> = BTreeMap::new();
    for r in trace_rows.iter() {
        per_episode.entry(r[0].parse().unwrap()).or_default();
    }
    for r in event_rows.iter().filter(|r| &r[4] == "collision") {
        *per_episode.entry(r[0].parse().unwrap()).or_default() += 1;
    }
    let episode = per_episode.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(&e, _)| e).unwrap();
    let svg_path = dir.join("adapt_trace.svg");
    if let Err(e) = cmd_plot(&trace, Some(&events), Some(episode), &svg_path) {
        return outcome(false, format!("plot failed: {e}"));
    }
    let svg = std::fs::read_to_string(&svg_path).unwrap();

    // expected counts straight from the CSV text
    let ep = episode.to_string();
    let mut vehicles = BTreeSet::new();
    let mut obstacles = BTreeSet::new();
    for r in trace_rows.iter().filter(|r| r[0] == *ep) {
        if &r[4] == "obstacle" {
            obstacles.insert(r[3].to_string());
        } else {
            vehicles.insert(r[3].to_string());
        }
    }
    let collisions = event_rows.iter().filter(|r| r[0] == *ep && &r[4] == "collision").count();
    let want = (vehicles.len(), obstacles.len(), collisions);
    let got = (count_class(&svg, "vehicle"), count_class(&svg, "obstacle"), count_class(&svg, "collision"));

    let horizontal = svg.lines().filter(|l| l.contains(r#"class="obstacle""#)).all(|l| {
        let attr = |name: &str| l.split(&format!(" {name}=\"")).nth(1).and_then(|r| r.split('"').next()).map(str::to_string);
        attr("y1").is_some() && attr("y1") == attr("y2")
    });
    let agent_thick = svg.contains(r#"class="vehicle" data-id="0" stroke-width="3""#);
    let colours: BTreeSet<&str> = svg.lines().filter(|l| l.starts_with("<polyline")).filter_map(|l| l.split("stroke=\"").nth(1)?.split('"').next()).collect();
    outcome(
        got == want && horizontal && agent_thick && colours.len() > 1,
        format!(
            "episode {episode}: vehicles/obstacles/collision markers {got:?} vs trace {want:?}; obstacle lines horizontal {horizontal}, agent thicker {agent_thick}, {} speed colours",
            colours.len()
        ),
    )
}

fn run(n: u32, name: &str, f: &mut dyn FnMut() -> Outcome) -> Outcome {
    let t = Instant::now();
    let o = f();
    line(n, name, &o, t.elapsed());
    o
}

fn main() {
    let mut hard_failures = Vec::new();
    let mut enforce = |n: u32, o: Outcome| {
        if !o.pass {
            hard_failures.push(n);
        }
    };
    enforce(1, run(1, "geometry", &mut geometry));
    enforce(2, run(2, "collision (SAT)", &mut collision));
    enforce(3, run(3, "IDM/MOBIL", &mut traffic));
    enforce(4, run(4, "losses", &mut losses));
    enforce(5, run(5, "gradients", &mut gradients));
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let o6 = run(6, "distributed", &mut distributed);
    // bit identity is always enforced; throughput only where it can be measured
    let identical = o6.detail.contains("bit-identical");
    enforce(6, outcome(identical && (cores < 4 || o6.pass), ""));
    enforce(7, run(7, "protocol", &mut protocol));

    let t = Instant::now();
    let runs = pretrain_runs(&[1, 2, 3, 4, 5]);
    let pretrain_secs = t.elapsed();
    run(8, "pre-training trend", &mut || trend(&runs));
    run(9, "mirroring", &mut || mirroring(&runs));
    let dir = tempfile::tempdir().unwrap();
    let pretrained = runs[0].outcome.params.clone();
    run(10, "adaptation effect", &mut || adaptation(dir.path(), &pretrained));
    enforce(11, run(11, "space-time plot", &mut || plot(dir.path())));
    println!("(5 pre-training runs of 50k frames took {:.0} s)", pretrain_secs.as_secs_f64());

    if !hard_failures.is_empty() {
        eprintln!("enforced criteria failed: {hard_failures:?}");
        std::process::exit(1);
    }
}

//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the summary is always printed. The
//! process fails when a criterion fails, except for criteria listed as
//! documented gaps, which must instead reproduce the analysed behaviour.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use simbav2::config::TrainConfig;
use simbav2::distributional::ReturnSupport;
use simbav2::gradcheck::{check, numeric_grad, rel_err};
use simbav2::hypersphere::{init_orthonormal, lerp};
use simbav2::network::{actor_sample, Actor, Critic, CriticKind, EncoderConfig};
use simbav2::normalizers::RewardScaler;
use simbav2::sac::{actor_loss, bc_penalty, critic_loss, temperature_loss, CriticTarget};
use simbav2::telemetry::{drift_ratio, TelemetryRecord};
use simbav2::trainer::{MemorySink, Trainer};
use simbav2::{Graph, Tensor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn desk_config() -> TrainConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/pendulum_desk.cfg");
    TrainConfig::load(&path).expect("desk preset")
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

// ---------------------------------------------------------------------------

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut prim: f64 = 0.0;
    type Build = fn(&mut Graph, &[simbav2::Var]) -> simbav2::Result<simbav2::Var>;
    // Second operand: none, transposed shape (matmul), or same shape.
    enum Rhs {
        None,
        Transposed,
        Same,
    }
    let ops: [(Build, Rhs); 8] = [
        (|g, v| g.matmul(v[0], v[1]), Rhs::Transposed),
        (|g, v| g.mul(v[0], v[1]), Rhs::Same),
        (|g, v| Ok(g.tanh(v[0])), Rhs::None),
        (|g, v| Ok(g.softplus(v[0])), Rhs::None),
        (|g, v| Ok(g.softmax_lastaxis(v[0])), Rhs::None),
        (|g, v| Ok(g.l2_normalize_lastaxis(v[0], 1e-8)), Rhs::None),
        (|g, v| Ok(g.layer_norm_lastaxis(v[0], 1e-5)), Rhs::None),
        (|g, v| Ok(g.exp(v[0])), Rhs::None),
    ];
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, c) = (rng.gen_range(1..4), rng.gen_range(3..6));
        for (op, rhs) in &ops {
            let mut inputs = vec![randn(&mut rng, &[r, c])];
            match rhs {
                Rhs::Transposed => inputs.push(randn(&mut rng, &[c, r])),
                Rhs::Same => inputs.push(randn(&mut rng, &[r, c])),
                Rhs::None => {}
            }
            prim = prim.max(check(&inputs, 1e-6, op).unwrap());
        }
    }

    let support = ReturnSupport::new(-5.0, 5.0, 11).unwrap();
    let (mut kl, mut actor, mut temp, mut bc): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 77);
        let (od, ad, b) = (2, 1, 3);
        let critic = Critic::create(&EncoderConfig::new(od + ad, 4, 1), od, CriticKind::Categorical(support.clone()), &mut rng).unwrap();
        let obs = randn(&mut rng, &[b, od]);
        let act = randn(&mut rng, &[b, ad]).map(f64::tanh);
        let mut t = randn(&mut rng, &[b, 11]).map(f64::exp);
        for r in 0..b {
            let s: f64 = t.row(r).iter().sum();
            t.row_mut(r).iter_mut().for_each(|x| *x /= s);
        }
        let target = CriticTarget::Categorical(t);
        let pass = critic_loss(&critic, &obs, &act, &target).unwrap();
        kl = kl.max(store_check(&critic.store, &pass.grads, |s| {
            let mut c = critic.clone();
            c.store = s;
            critic_loss(&c, &obs, &act, &target).unwrap().loss
        }));

        let policy = Actor::create(&EncoderConfig::new(od, 4, 1), ad, &mut rng).unwrap();
        let noise = randn(&mut rng, &[b, ad]);
        let critics = vec![critic.clone()];
        let ap = actor_loss(&policy, &critics, &obs, &noise, 0.2, None).unwrap();
        actor = actor.max(store_check(&policy.store, &ap.grads, |s| {
            let mut a = policy.clone();
            a.store = s;
            actor_loss(&a, &critics, &obs, &noise, 0.2, None).unwrap().loss
        }));

        let bc_loss = |a: &Actor, g: &mut Graph| {
            let bound = a.store.bind(g, true);
            let o = g.constant(obs.clone());
            let pol = a.forward(g, &bound, o).unwrap();
            let s = actor_sample(g, pol.mean, pol.log_std, &noise).unwrap();
            (bound, bc_penalty(g, s.action, &act, 1.5).unwrap())
        };
        let mut g = Graph::new();
        let (bound, l) = bc_loss(&policy, &mut g);
        g.backward(l).unwrap();
        let grads = policy.store.grads(&g, &bound);
        bc = bc.max(store_check(&policy.store, &grads, |s| {
            let mut a = policy.clone();
            a.store = s;
            let mut g = Graph::new();
            let (_, l) = bc_loss(&a, &mut g);
            g.value(l).data()[0]
        }));

        let logp: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let la = rng.gen_range(-4.0..0.5);
        let (_, grad) = temperature_loss(la, &logp, -0.5);
        temp = temp.max(rel_err(&[grad], &numeric_grad(&[la], 1e-6, |x| temperature_loss(x[0], &logp, -0.5).0)));
    }
    let composite = kl.max(actor).max(temp).max(bc);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        prim < 1e-5 && composite < 1e-4 && secs < 60.0,
        format!("primitives max rel err {prim:.2e}; KL {kl:.2e}, actor {actor:.2e}, temperature {temp:.2e}, BC {bc:.2e}; {secs:.1}s"),
    )
}

/// Finite differences over every scalar in `store`.
fn store_check(store: &simbav2::params::ParamStore, analytic: &[Tensor], loss: impl Fn(simbav2::params::ParamStore) -> f64) -> f64 {
    let mut a = Vec::new();
    let mut n = Vec::new();
    for (i, p) in store.iter().enumerate() {
        let base = p.value.data().to_vec();
        n.extend(numeric_grad(&base, 1e-6, |x| {
            let mut s = store.clone();
            s.iter_mut().nth(i).unwrap().value.data_mut().copy_from_slice(x);
            loss(s)
        }));
        a.extend_from_slice(analytic[i].data());
    }
    rel_err(&a, &n)
}

// ---------------------------------------------------------------------------

struct InvariantRun {
    updates: u64,
    feature_dev: f64,
    weight_dev: f64,
    q_min: f64,
    q_max: f64,
    secs: f64,
}

fn unit_row_deviation(t: &Tensor) -> f64 {
    t.row_norms().iter().map(|n| (n - 1.0).abs()).fold(0.0, f64::max)
}

/// 5,000 updates with every update captured and checked.
fn invariant_run() -> InvariantRun {
    let start = Instant::now();
    let mut cfg = desk_config();
    cfg.learning_starts = 1000;
    cfg.total_steps = 3500;
    cfg.telemetry_every = 1;
    cfg.eval_every = 0;
    let mut trainer = Trainer::new(&cfg).unwrap();
    let (mut feature_dev, mut weight_dev, mut q_min, mut q_max) = (0.0f64, 0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    let mut observer = |agent: &simbav2::sac::Agent, info: &simbav2::sac::UpdateInfo| {
        weight_dev = weight_dev.max(agent.max_row_norm_deviation());
        let cap = info.capture.as_ref().expect("captured every update");
        for f in cap.critic_encoder_features.iter().chain(&cap.actor_encoder_features) {
            feature_dev = feature_dev.max(unit_row_deviation(f));
        }
        for &q in &cap.q {
            q_min = q_min.min(q);
            q_max = q_max.max(q);
        }
        Ok(())
    };
    trainer.run(&mut MemorySink::default(), Some(&mut observer)).unwrap();
    InvariantRun { updates: trainer.agent.updates, feature_dev, weight_dev, q_min, q_max, secs: start.elapsed().as_secs_f64() }
}

fn criterion_2(run: &InvariantRun) -> Outcome {
    outcome(
        run.updates == 5000 && run.feature_dev <= 1e-6 && run.weight_dev <= 1e-9 && run.secs < 600.0,
        format!(
            "{} updates; max |feature norm - 1| {:.2e}; max |row norm - 1| {:.2e}; {:.0}s",
            run.updates, run.feature_dev, run.weight_dev, run.secs
        ),
    )
}

// ---------------------------------------------------------------------------

/// Mean of `||s * W h||^2` at the default scaler for `d_h = 512`.
fn scaler_monte_carlo() -> (f64, f64) {
    let d = 512;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = init_orthonormal(d, d, &mut rng);
    let s = (2.0 / d as f64).sqrt();
    let trials = 10_000;
    let mut total = 0.0;
    for _ in 0..trials {
        let h = unit(&mut rng, d);
        let mut sq = 0.0;
        for r in 0..d {
            let z: f64 = w.row(r).iter().zip(&h).map(|(a, b)| a * b).sum();
            sq += (s * z).powi(2);
        }
        total += sq;
    }
    (total / trials as f64, s)
}

fn criterion_3() -> (Outcome, bool) {
    let start = Instant::now();
    let (mean, s) = scaler_monte_carlo();
    let d = 512.0;
    let claimed = 1.0;
    // A square orthonormal W preserves norms, so ||W h||^2 = 1 exactly and
    // the mean is d_h * s^2 / d_h = s^2 = 2 / d_h.
    let analytic = s * s;
    let pass = (mean - claimed).abs() <= 0.05 * claimed;
    let matches_analysis = (mean - analytic).abs() <= 1e-9 && (analytic - 2.0 / d).abs() < 1e-15;
    (
        outcome(
            pass,
            format!(
                "mean ||s*Wh||^2 = {mean:.6} over 10000 trials (target 1 +/- 5%); norm-preserving W gives exactly 2/d_h = {analytic:.6}; {:.1}s",
                start.elapsed().as_secs_f64()
            ),
        ),
        matches_analysis,
    )
}

// ---------------------------------------------------------------------------

/// Distance between the LERP point and the exact geodesic step.
fn lerp_geodesic_error(h: &[f64], h_tilde: &[f64], a: f64) -> f64 {
    let dot: f64 = h.iter().zip(h_tilde).map(|(x, y)| x * y).sum();
    let v: Vec<f64> = h.iter().zip(h_tilde).map(|(x, y)| y - dot * x).collect();
    let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let t = a * vn;
    let geo: Vec<f64> = h.iter().zip(&v).map(|(x, vi)| t.cos() * x + t.sin() * vi / vn).collect();
    let alpha = vec![a; h.len()];
    let l = lerp(h, h_tilde, &alpha);
    l.iter().zip(&geo).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_lo: f64 = 1.0;
    let mut worst_hi: f64 = 0.0;
    for _ in 0..50 {
        let h = unit(&mut rng, 16);
        let ht = unit(&mut rng, 16);
        let ratio = lerp_geodesic_error(&h, &ht, 1e-3) / lerp_geodesic_error(&h, &ht, 1e-2);
        worst_lo = worst_lo.min(ratio);
        worst_hi = worst_hi.max(ratio);
    }
    outcome(
        worst_lo >= 0.005 && worst_hi <= 0.02,
        format!("error(1e-3)/error(1e-2) within [{worst_lo:.5}, {worst_hi:.5}] over 50 random pairs"),
    )
}

// ---------------------------------------------------------------------------

fn criterion_5(runs: &[(&str, f64, f64)]) -> Outcome {
    let support = ReturnSupport::new(-5.0, 5.0, 101).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mass_err: f64 = 0.0;
    let mut ident_err: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..200);
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-8.0..8.0)).collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let out = support.project(&values, &probs);
        mass_err = mass_err.max((out.iter().sum::<f64>() - 1.0).abs());
        assert!(out.iter().all(|p| *p >= 0.0));

        let p = probs_of(&mut rng, support.len());
        let id = support.project(support.atoms(), &p);
        ident_err = ident_err.max(id.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let q_ok = runs.iter().all(|(_, lo, hi)| *lo >= -5.0 && *hi <= 5.0);
    let ranges: Vec<String> = runs.iter().map(|(name, lo, hi)| format!("{name} Q in [{lo:.3}, {hi:.3}]")).collect();
    outcome(
        mass_err <= 1e-12 && ident_err <= 1e-12 && q_ok,
        format!("mass error {mass_err:.1e}; identity error {ident_err:.1e}; {}", ranges.join("; ")),
    )
}

fn probs_of(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|p| p / total).collect()
}

// ---------------------------------------------------------------------------

fn criterion_6() -> Outcome {
    let g_max = 5.0;
    let mut scaler = RewardScaler::new(0.99, g_max, 1e-8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut largest_raw: f64 = 0.0;
    let mut start = true;
    for t in 0..10_000 {
        // Large positive rewards with occasional outliers; episodes of 500.
        let r = if rng.gen::<f64>() < 0.01 { 2_000.0 } else { rng.gen_range(50.0..150.0) };
        scaler.step(r, start);
        start = (t + 1) % 500 == 0;
        let g = scaler.running_return();
        largest_raw = largest_raw.max(g);
        worst = worst.max(g / scaler.denominator());
    }
    outcome(
        worst <= g_max + 1e-6,
        format!("max scaled return target {worst:.6} (bound {g_max}); raw returns reach {largest_raw:.0}"),
    )
}

// ---------------------------------------------------------------------------

struct LearningRun {
    final_return: f64,
    solved: bool,
    telemetry: Vec<TelemetryRecord>,
    q_range: (f64, f64),
}

fn learning_run(cfg: &TrainConfig) -> LearningRun {
    let mut trainer = Trainer::new(cfg).unwrap();
    let mut sink = MemorySink::default();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut observer = |_: &simbav2::sac::Agent, info: &simbav2::sac::UpdateInfo| {
        if let Some(cap) = &info.capture {
            for &q in &cap.q {
                lo = lo.min(q);
                hi = hi.max(q);
            }
        }
        Ok(())
    };
    trainer.run(&mut sink, Some(&mut observer)).unwrap();
    let final_return = sink.evals.last().map(|e| e.return_mean).unwrap_or(f64::NEG_INFINITY);
    LearningRun {
        final_return,
        solved: sink.evals.iter().any(|e| e.return_mean >= -300.0),
        telemetry: sink.telemetry,
        q_range: (lo, hi),
    }
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const TRIPLE: &str = "mse_loss+no_reward_scaling+no_l2";

fn criterion_7(default: &[LearningRun], triple: &[LearningRun], secs: f64) -> Outcome {
    let solved = default.iter().filter(|r| r.solved).count();
    let mean = |rs: &[LearningRun]| rs.iter().map(|r| r.final_return).sum::<f64>() / rs.len() as f64;
    let (d, t) = (mean(default), mean(triple));
    let finals = |rs: &[LearningRun]| rs.iter().map(|r| format!("{:.0}", r.final_return)).collect::<Vec<_>>().join(",");
    outcome(
        solved >= 4 && t <= d && secs < 3600.0,
        format!(
            "{solved}/5 seeds reach >= -300; mean final return default {d:.1} [{}] vs {TRIPLE} {t:.1} [{}]; {:.0}s",
            finals(default),
            finals(triple),
            secs
        ),
    )
}

fn encoder_elr_drift(run: &LearningRun) -> f64 {
    let series: Vec<f64> = run.telemetry.iter().map(|r| r.encoder.elr).collect();
    drift_ratio(&series).unwrap_or(f64::INFINITY)
}

fn criterion_8(default: &[LearningRun], layernorm: &[LearningRun]) -> Outcome {
    let pairs: Vec<(f64, f64)> = layernorm.iter().zip(default).map(|(ln, v2)| (encoder_elr_drift(v2), encoder_elr_drift(ln))).collect();
    let pass = pairs.iter().all(|(v2, ln)| v2 < ln);
    let text: Vec<String> = pairs.iter().enumerate().map(|(s, (v2, ln))| format!("seed {s}: {v2:.2} vs {ln:.2}")).collect();
    outcome(pass, format!("encoder ELR max/min over second half, hyperspherical vs layernorm: {}", text.join("; ")))
}

// ---------------------------------------------------------------------------

fn criterion_9() -> Outcome {
    let mut cfg = desk_config();
    cfg.total_steps = 1600;
    cfg.learning_starts = 1000;
    cfg.eval_every = 200;
    cfg.eval_episodes = 2;
    let run = |cfg: &TrainConfig| {
        let mut t = Trainer::new(cfg).unwrap();
        let mut sink = MemorySink::default();
        t.run(&mut sink, None).unwrap();
        sink
    };
    let csv = |s: &MemorySink| s.evals.iter().map(|e| e.csv_row()).collect::<Vec<_>>().join("\n");
    let a = run(&cfg);
    let b = run(&cfg);
    let same_seed = csv(&a) == csv(&b);

    let mut first = Trainer::new(&cfg).unwrap();
    let mut head = MemorySink::default();
    first.run_until(1300, &mut head, None).unwrap();
    let bytes = simbav2::checkpoint::Checkpoint::capture(&first).to_bytes();
    drop(first);
    let mut resumed = simbav2::checkpoint::Checkpoint::from_bytes(&bytes).unwrap().restore().unwrap();
    let mut tail = MemorySink::default();
    resumed.run(&mut tail, None).unwrap();
    let spliced: Vec<_> = head.evals.iter().chain(&tail.evals).copied().collect();
    let resume_exact = spliced == a.evals && head.telemetry.iter().chain(&tail.telemetry).eq(a.telemetry.iter());
    outcome(
        same_seed && resume_exact,
        format!("same seed identical: {same_seed}; resume at step 1300 reproduces the remaining {} evaluations and telemetry exactly: {resume_exact}", tail.evals.len()),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    // libtest-style flags (e.g. --nocapture) are accepted and ignored; a
    // filter that does not mention this target skips it.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if args.iter().any(|a| !"acceptance".contains(a.as_str())) {
        return;
    }

    let mut lines: Vec<(u8, Outcome)> = Vec::new();
    let mut documented_gaps_hold = true;

    lines.push((1, criterion_1()));
    let inv = invariant_run();
    lines.push((2, criterion_2(&inv)));
    let (c3, c3_analysis) = criterion_3();
    documented_gaps_hold &= c3_analysis;
    lines.push((3, c3));
    lines.push((4, criterion_4()));
    lines.push((6, criterion_6()));

    let start = Instant::now();
    let base = desk_config();
    let default: Vec<LearningRun> = SEEDS
        .iter()
        .map(|&s| {
            let mut c = base.clone();
            c.seed = s;
            learning_run(&c)
        })
        .collect();
    let triple: Vec<LearningRun> = SEEDS
        .iter()
        .map(|&s| {
            let mut c = base.ablate_all(TRIPLE).unwrap();
            c.seed = s;
            learning_run(&c)
        })
        .collect();
    let c7_secs = start.elapsed().as_secs_f64();
    lines.push((7, criterion_7(&default, &triple, c7_secs)));

    let layernorm: Vec<LearningRun> = SEEDS[..LAYERNORM_SEEDS]
        .iter()
        .map(|&s| {
            let mut c = base.ablate("use_layernorm").unwrap();
            c.seed = s;
            learning_run(&c)
        })
        .collect();
    lines.push((8, criterion_8(&default, &layernorm)));

    let mut q_runs = vec![("invariant run", inv.q_min, inv.q_max)];
    for r in default.iter().chain(&layernorm) {
        q_runs.push(("pendulum", r.q_range.0, r.q_range.1));
    }
    let (lo, hi) = q_runs[1..].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), r| (l.min(r.1), h.max(r.2)));
    q_runs.truncate(1);
    q_runs.push(("learning runs", lo, hi));
    lines.push((5, criterion_5(&q_runs)));
    lines.push((9, criterion_9()));
    lines.sort_by_key(|(id, _)| *id);

    println!();
    for (id, o) in &lines {
        let tag = if o.pass {
            "PASS"
        } else if DOCUMENTED_GAPS.contains(id) {
            "FAIL (documented gap)"
        } else {
            "FAIL"
        };
        println!("criterion {id}: {tag} - {}", o.detail);
    }
    let unexpected: Vec<u8> = lines.iter().filter(|(id, o)| !o.pass && !DOCUMENTED_GAPS.contains(id)).map(|(id, _)| *id).collect();
    if !documented_gaps_hold {
        println!("a documented gap no longer matches its analysis");
    }
    if !unexpected.is_empty() || !documented_gaps_hold {
        println!("acceptance: FAILED {unexpected:?}");
        std::process::exit(1);
    }
    println!("acceptance: ok ({} of {} criteria pass)", lines.iter().filter(|(_, o)| o.pass).count(), lines.len());
}

/// Criteria whose target is shown to be unreachable; they must still match
/// the analysis printed in their detail line.
const DOCUMENTED_GAPS: &[u8] = &[3];

/// Seeds used for the layernorm side of the ELR contrast.
const LAYERNORM_SEEDS: usize = 2;

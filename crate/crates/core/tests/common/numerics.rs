use der_core::filter::ObservationFilter;
use der_core::learner::{Learner, LearnerConfig, TrainBatch};
use der_core::netlib::{flatten_grads, AdamConfig, AdamState, Mlp, OutputActivation};
use der_core::rng::{seed_streams, Stream};
use der_core::types::{ACTION_DIM, OBS_DIM};
use ndarray::{Array1, Array2};
use rand::Rng;

const H: f64 = 1e-6;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-7 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn uniform(rng: &mut Stream, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// `sum(output * upstream)` evaluated one sample at a time.
fn probe_loss(net: &Mlp, x: &Array2<f64>, up: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for (row, u) in x.rows().into_iter().zip(up.rows()) {
        let out = net.forward(row.as_slice().unwrap()).unwrap();
        total += out.iter().zip(u.iter()).map(|(o, u)| o * u).sum::<f64>();
    }
    total
}

/// Worst relative error between backprop and central differences, over
/// parameters and inputs of `count` random networks.
pub fn mlp_fd_check(count: usize, seed: u64) -> f64 {
    let mut rng = seed_streams(seed, "fd-mlp");
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let depth = rng.random_range(1..=3);
        let mut widths = vec![rng.random_range(1..=5)];
        for _ in 0..depth {
            widths.push(rng.random_range(1..=6));
        }
        widths.push(rng.random_range(1..=4));
        let act = if rng.random_bool(0.5) {
            OutputActivation::Tanh
        } else {
            OutputActivation::Identity
        };
        let mut net = Mlp::new(&widths, act, &mut rng);
        let x = uniform(&mut rng, 3, widths[0]);
        let up = uniform(&mut rng, 3, *widths.last().unwrap());
        let cache = net.forward_batch(x.view()).unwrap();
        let (grads, input_grad) = net.backward(&cache, up.view()).unwrap();
        let analytic = flatten_grads(&grads);

        let base = net.flatten();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += H;
            net.set_flat(&p).unwrap();
            let plus = probe_loss(&net, &x, &up);
            p[i] -= 2.0 * H;
            net.set_flat(&p).unwrap();
            let minus = probe_loss(&net, &x, &up);
            worst = worst.max(rel_err(analytic[i], (plus - minus) / (2.0 * H)));
        }
        net.set_flat(&base).unwrap();
        for r in 0..x.nrows() {
            for c in 0..x.ncols() {
                let mut xp = x.clone();
                xp[[r, c]] += H;
                let plus = probe_loss(&net, &xp, &up);
                xp[[r, c]] -= 2.0 * H;
                let minus = probe_loss(&net, &xp, &up);
                worst = worst.max(rel_err(input_grad[[r, c]], (plus - minus) / (2.0 * H)));
            }
        }
    }
    worst
}

fn random_batch(rng: &mut Stream, n: usize) -> TrainBatch {
    TrainBatch {
        states: uniform(rng, n, OBS_DIM),
        actions: uniform(rng, n, ACTION_DIM),
        next_states: uniform(rng, n, OBS_DIM),
        rewards: Array1::from_shape_fn(n, |_| rng.random_range(-2.0..2.0)),
        done: Array1::from_shape_fn(n, |_| if rng.random_bool(0.2) { 1.0 } else { 0.0 }),
        weights: Array1::from_shape_fn(n, |_| rng.random_range(0.1..1.0)),
    }
}

fn small_learner(rng: &mut Stream, hidden: Vec<usize>) -> Learner {
    let cfg = LearnerConfig {
        hidden,
        ..LearnerConfig::default()
    };
    Learner::new(cfg, 0.05, ObservationFilter::default(), rng)
}

fn concat(s: &[f64], a: &[f64]) -> Vec<f64> {
    s.iter().chain(a).copied().collect()
}

/// Weighted squared TD loss recomputed sample by sample.
fn critic_loss_oracle(critic: &Mlp, b: &TrainBatch, y: &Array1<f64>, coef: f64) -> f64 {
    let n = b.len();
    let mut total = 0.0;
    for i in 0..n {
        let x = concat(b.states.row(i).as_slice().unwrap(), b.actions.row(i).as_slice().unwrap());
        let q = critic.forward(&x).unwrap()[0];
        total += b.weights[i] * (y[i] - q).powi(2);
    }
    coef * total / n as f64
}

fn actor_loss_oracle(actor: &Mlp, critic: &Mlp, b: &TrainBatch, coef: f64) -> f64 {
    let n = b.len();
    let mut total = 0.0;
    for i in 0..n {
        let s = b.states.row(i);
        let a = actor.forward(s.as_slice().unwrap()).unwrap();
        total += critic.forward(&concat(s.as_slice().unwrap(), &a)).unwrap()[0];
    }
    -coef * total / n as f64
}

pub fn critic_fd_check(count: usize, seed: u64) -> f64 {
    let mut rng = seed_streams(seed, "fd-critic");
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let hidden = vec![rng.random_range(2..=6), rng.random_range(2..=6)];
        let l = small_learner(&mut rng, hidden);
        let b = random_batch(&mut rng, 8);
        let y = Array1::from_shape_fn(b.len(), |_| rng.random_range(-3.0..3.0));
        let coef = l.config().critic_loss_coef;
        let (loss, grad, _) = l.critic_gradients(&b, &y);
        let oracle = critic_loss_oracle(l.critic(), &b, &y, coef);
        worst = worst.max(rel_err(loss, oracle));
        let mut critic = l.critic().clone();
        let base = critic.flatten();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += H;
            critic.set_flat(&p).unwrap();
            let plus = critic_loss_oracle(&critic, &b, &y, coef);
            p[i] -= 2.0 * H;
            critic.set_flat(&p).unwrap();
            let minus = critic_loss_oracle(&critic, &b, &y, coef);
            worst = worst.max(rel_err(grad[i], (plus - minus) / (2.0 * H)));
        }
    }
    worst
}

pub fn actor_fd_check(count: usize, seed: u64) -> f64 {
    let mut rng = seed_streams(seed, "fd-actor");
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let hidden = vec![rng.random_range(2..=6), rng.random_range(2..=6)];
        let l = small_learner(&mut rng, hidden);
        let b = random_batch(&mut rng, 8);
        let coef = l.config().actor_loss_coef;
        let (loss, grad) = l.actor_gradients(&b);
        worst = worst.max(rel_err(loss, actor_loss_oracle(l.actor(), l.critic(), &b, coef)));
        let mut actor = l.actor().clone();
        let base = actor.flatten();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += H;
            actor.set_flat(&p).unwrap();
            let plus = actor_loss_oracle(&actor, l.critic(), &b, coef);
            p[i] -= 2.0 * H;
            actor.set_flat(&p).unwrap();
            let minus = actor_loss_oracle(&actor, l.critic(), &b, coef);
            worst = worst.max(rel_err(grad[i], (plus - minus) / (2.0 * H)));
        }
    }
    worst
}

/// Runs the optimizer and a textbook Adam side by side on a quadratic
/// bowl; returns the largest parameter deviation over `steps` steps.
pub fn adam_oracle_trace(steps: usize) -> f64 {
    let cfg = AdamConfig::default();
    let centers = [0.5, -1.25, 3.0, 0.0];
    let mut params = vec![1.0, 2.0, -0.5, 0.25];
    let mut reference = params.clone();
    let mut opt = AdamState::new(cfg, params.len());
    let (mut m, mut v) = (vec![0.0; 4], vec![0.0; 4]);
    let mut worst: f64 = 0.0;
    for t in 1..=steps {
        let g: Vec<f64> = params.iter().zip(&centers).map(|(p, c)| 2.0 * (p - c)).collect();
        opt.step(&mut params, &g).unwrap();

        let g_ref: Vec<f64> = reference.iter().zip(&centers).map(|(p, c)| 2.0 * (p - c)).collect();
        for i in 0..4 {
            m[i] = 0.9 * m[i] + 0.1 * g_ref[i];
            v[i] = 0.999 * v[i] + 0.001 * g_ref[i] * g_ref[i];
            let m_hat = m[i] / (1.0 - 0.9f64.powf(t as f64));
            let v_hat = v[i] / (1.0 - 0.999f64.powf(t as f64));
            reference[i] -= 1e-3 * m_hat / (v_hat.sqrt() + 1e-8);
        }
        for (a, b) in params.iter().zip(&reference) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Largest deviation of batched TD targets and priorities from their
/// per-sample recomputation.
pub fn td_oracle_check(n: usize, seed: u64) -> f64 {
    let mut rng = seed_streams(seed, "td-oracle");
    let mut l = small_learner(&mut rng, vec![16, 16]);
    // Move the online nets away from the targets.
    let warm = random_batch(&mut rng, 32);
    for _ in 0..3 {
        l.apply_batch(&warm);
    }
    let b = random_batch(&mut rng, n);
    let y = l.td_targets(&b);
    let prio = l.compute_priorities(&b, &y);
    let gamma = l.config().gamma;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let s2 = b.next_states.row(i);
        let a2 = l.target_actor().forward(s2.as_slice().unwrap()).unwrap();
        let q2 = l.target_critic().forward(&concat(s2.as_slice().unwrap(), &a2)).unwrap()[0];
        let y_ref = l.config().reward_scale * b.rewards[i] + gamma * (1.0 - b.done[i]) * q2;
        let x = concat(b.states.row(i).as_slice().unwrap(), b.actions.row(i).as_slice().unwrap());
        let q = l.critic().forward(&x).unwrap()[0];
        worst = worst.max((y[i] - y_ref).abs()).max((prio[i] - (y_ref - q).abs()).abs());
        if b.done[i] == 1.0 {
            worst = worst.max((y[i] - b.rewards[i]).abs());
        }
    }
    worst
}

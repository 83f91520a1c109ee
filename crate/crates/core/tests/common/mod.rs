//! Shared generators, independent oracles and a stub chat endpoint.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use opeforge::bandit::{EnvParams, PolicyKind, RewardNoise, RewardTable};
use opeforge::estimators::{Direction, EstimatorKind, Objective, ObjectiveMetric, RewardModelKind};
use opeforge::spec::{DataParams, ExperimentSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random distribution over `k` outcomes; all entries positive when
/// `full_support`, otherwise some may be zero.
pub fn random_distribution(rng: &mut ChaCha8Rng, k: usize, full_support: bool) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..k)
            .map(|_| {
                if !full_support && rng.random_bool(0.3) {
                    0.0
                } else {
                    rng.random_range(0.05..1.0)
                }
            })
            .collect();
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            return w.iter().map(|v| v / total).collect();
        }
    }
}

pub fn random_env_params(rng: &mut ChaCha8Rng) -> EnvParams {
    let contexts = rng.random_range(1..=5);
    let actions = rng.random_range(2..=5);
    let r_max = [1.0, 2.0, 0.5][rng.random_range(0..3)];
    let context_probs = rng
        .random_bool(0.5)
        .then(|| random_distribution(rng, contexts, true));
    let rewards = if rng.random_bool(0.5) {
        RewardTable::Explicit(
            (0..contexts)
                .map(|_| (0..actions).map(|_| rng.random::<f64>() * r_max).collect())
                .collect(),
        )
    } else {
        RewardTable::Generated { seed: rng.random() }
    };
    let noise = if rng.random_bool(0.5) {
        RewardNoise::Bernoulli
    } else {
        RewardNoise::TruncatedGaussian {
            sigma: rng.random_range(0.0..0.5),
        }
    };
    EnvParams {
        contexts,
        actions,
        r_max,
        context_probs,
        rewards,
        noise,
    }
}

pub fn random_policy_kind(rng: &mut ChaCha8Rng, contexts: usize, actions: usize, full_support: bool) -> PolicyKind {
    match rng.random_range(0..3) {
        0 => PolicyKind::UniformRandom,
        1 => {
            let eps: f64 = if full_support {
                rng.random_range(0.05..=1.0)
            } else {
                rng.random_range(0.0..=1.0)
            };
            PolicyKind::EpsilonGreedy(eps)
        }
        _ => PolicyKind::Explicit(
            (0..contexts)
                .map(|_| random_distribution(rng, actions, full_support))
                .collect(),
        ),
    }
}

/// A random valid spec. Behavior policies have full support so every
/// estimator is defined.
pub fn random_spec(rng: &mut ChaCha8Rng) -> ExperimentSpec {
    let env = random_env_params(rng);
    let behavior = random_policy_kind(rng, env.contexts, env.actions, true);
    let target = random_policy_kind(rng, env.contexts, env.actions, false);
    let reward_model = if rng.random_bool(0.5) {
        RewardModelKind::Tabular {
            alpha: rng.random_range(0.1..5.0),
        }
    } else {
        RewardModelKind::Kernel {
            bandwidth: rng.random_range(0.2..3.0),
            learning_rate: rng.random_range(1e-5..1e-3),
        }
    };
    let mut estimators: BTreeSet<EstimatorKind> = EstimatorKind::ALL
        .into_iter()
        .filter(|_| rng.random_bool(0.6))
        .collect();
    if estimators.is_empty() {
        estimators.insert(EstimatorKind::ALL[rng.random_range(0..4)]);
    }
    let chosen: Vec<EstimatorKind> = estimators.iter().copied().collect();
    let k = chosen[rng.random_range(0..chosen.len())];
    let metric = match rng.random_range(0..3) {
        0 => ObjectiveMetric::RelativeEe(k),
        1 => ObjectiveMetric::Estimate(k),
        _ => ObjectiveMetric::RelativePolicyValue(k),
    };
    let direction = if rng.random_bool(0.5) {
        Direction::Minimize
    } else {
        Direction::Maximize
    };
    ExperimentSpec {
        env,
        behavior,
        target,
        data: DataParams {
            n: rng.random_range(50..=1500),
            seed: rng.random(),
        },
        reward_model,
        estimators,
        weight_cap: if rng.random_bool(0.5) {
            f64::INFINITY
        } else {
            rng.random_range(1.0..50.0)
        },
        objective: Objective { metric, direction },
    }
}

/// Policy value by enumerating every (context, action) outcome with its
/// joint probability, then summing in sorted order.
pub fn brute_force_value(context_probs: &[f64], q: &[Vec<f64>], pi: &[Vec<f64>]) -> f64 {
    let mut outcomes: Vec<(f64, f64)> = Vec::new();
    for (x, px) in context_probs.iter().enumerate() {
        for (a, pa) in pi[x].iter().enumerate() {
            outcomes.push((px * pa, q[x][a]));
        }
    }
    outcomes.sort_by(|l, r| l.0.total_cmp(&r.0));
    // compensated summation
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for (p, r) in outcomes {
        let y = p * r - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Random text of up to `max_lines` lines drawn from a small vocabulary so
/// that repeated lines (and hence ambiguous contexts) are common.
pub fn random_text(rng: &mut ChaCha8Rng, max_lines: usize) -> String {
    let n = rng.random_range(0..=max_lines);
    let mut s: String = (0..n)
        .map(|_| format!("line {}\n", rng.random_range(0..12)))
        .collect();
    if !s.is_empty() && rng.random_bool(0.1) {
        s.pop();
    }
    s
}

/// Applies a few random line edits (replace, insert, delete) to `text`.
pub fn mutate(rng: &mut ChaCha8Rng, text: &str) -> String {
    let mut lines: Vec<String> = text.split_inclusive('\n').map(String::from).collect();
    for _ in 0..rng.random_range(0..6) {
        let pick = rng.random_range(0..3);
        let fresh = format!("edit {}\n", rng.random_range(0..1000));
        match pick {
            0 if !lines.is_empty() => {
                let i = rng.random_range(0..lines.len());
                lines[i] = fresh;
            }
            1 => {
                let i = rng.random_range(0..=lines.len());
                lines.insert(i, fresh);
            }
            _ if !lines.is_empty() => {
                let i = rng.random_range(0..lines.len());
                lines.remove(i);
            }
            _ => {}
        }
    }
    let mut out: String = lines.concat();
    if rng.random_bool(0.1) && out.ends_with('\n') {
        out.pop();
    }
    out
}

pub enum StubReply {
    /// 200 with a chat-completions body whose message content is this text.
    Content(String),
    /// Sleep, then close without answering.
    Hang(Duration),
    Status(u16),
}

/// A loopback HTTP server answering chat requests via `handler`, which
/// receives the request body. Returns the endpoint URL and a request counter.
pub fn spawn_stub<F>(handler: F) -> (String, Arc<AtomicUsize>)
where
    F: Fn(&str) -> StubReply + Send + Sync + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub");
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let handler = Arc::new(handler);
    let count = Arc::new(AtomicUsize::new(0));
    let counter = count.clone();
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let handler = handler.clone();
            counter.fetch_add(1, Ordering::SeqCst);
            thread::spawn(move || serve(stream, handler.as_ref()));
        }
    });
    (url, count)
}

fn serve(stream: TcpStream, handler: &(dyn Fn(&str) -> StubReply + Send + Sync)) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            content_length = v.trim().parse().unwrap_or(0);
        }
        if line == "\r\n" {
            break;
        }
    }
    let mut body = vec![0u8; content_length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let body = String::from_utf8_lossy(&body).into_owned();
    let mut stream = stream;
    match handler(&body) {
        StubReply::Content(text) => {
            let payload = serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": text}}]
            })
            .to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                payload.len(),
                payload
            );
        }
        StubReply::Hang(d) => thread::sleep(d),
        StubReply::Status(code) => {
            let _ = write!(
                stream,
                "HTTP/1.1 {code} Error\r\nContent-Length: 0\r\nConnection: close\r\n\r\n"
            );
        }
    }
}

/// Whether a chat request body carries the coder prompt.
pub fn is_coder_request(body: &str) -> bool {
    body.contains("You edit experiment spec files")
}

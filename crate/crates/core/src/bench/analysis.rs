//! Pure post-processing of agent logs. Same logs in, same numbers out.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Producer,
    Consumer,
}

/// One event as seen by an agent, in microseconds since the shared epoch.
/// Producers log enqueue and delivery-report times; consumers log when the
/// fetch that returned the record was issued and when it arrived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub start_us: u64,
    pub end_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentLog {
    pub agent: String,
    pub role: Role,
    pub samples: Vec<Sample>,
    pub failures: u64,
    #[serde(default)]
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub agent: String,
    pub events: u64,
    pub first_ms: f64,
    pub last_ms: f64,
    pub failures: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub n: u64,
    pub t1_ms: f64,
    pub t2_ms: f64,
    pub throughput: f64,
    pub latency_median_ms: Option<f64>,
    pub latency_p99_ms: Option<f64>,
    pub failures: u64,
    pub agents: Vec<AgentSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub label: String,
    pub rounds_used: u32,
    pub n: u64,
    pub throughput: f64,
    pub latency_median_ms: Option<f64>,
    pub latency_p99_ms: Option<f64>,
    pub failures: u64,
    pub rounds: Vec<RoundReport>,
}

/// Smallest sample whose rank is at least `ceil(p * n)`; `p` in (0, 1].
pub fn nearest_rank(samples: &[f64], p: f64) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (p * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

/// Events per second for `n` events spanning `t1_ms..t2_ms`.
pub fn throughput(n: u64, t1_ms: f64, t2_ms: f64) -> Option<f64> {
    (t2_ms > t1_ms).then(|| n as f64 / ((t2_ms - t1_ms) / 1000.0))
}

fn us_to_ms(us: u64) -> f64 {
    us as f64 / 1000.0
}

/// Aggregates one round. `None` when there are no events or the window is
/// empty.
pub fn analyze_round(round: u32, logs: &[AgentLog]) -> Option<RoundReport> {
    let mut t1 = u64::MAX;
    let mut t2 = 0u64;
    let mut n = 0u64;
    let mut latencies = Vec::new();
    let mut agents = Vec::with_capacity(logs.len());
    for log in logs {
        let first = log.samples.iter().map(|s| s.start_us).min();
        let last = log.samples.iter().map(|s| s.end_us).max();
        if let (Some(f), Some(l)) = (first, last) {
            t1 = t1.min(f);
            t2 = t2.max(l);
        }
        n += log.samples.len() as u64;
        if log.role == Role::Producer {
            latencies.extend(
                log.samples
                    .iter()
                    .map(|s| us_to_ms(s.end_us.saturating_sub(s.start_us))),
            );
        }
        agents.push(AgentSummary {
            agent: log.agent.clone(),
            events: log.samples.len() as u64,
            first_ms: first.map_or(0.0, us_to_ms),
            last_ms: last.map_or(0.0, us_to_ms),
            failures: log.failures,
        });
    }
    if n == 0 {
        return None;
    }
    let (t1_ms, t2_ms) = (us_to_ms(t1), us_to_ms(t2));
    Some(RoundReport {
        round,
        n,
        t1_ms,
        t2_ms,
        throughput: throughput(n, t1_ms, t2_ms)?,
        latency_median_ms: nearest_rank(&latencies, 0.5),
        latency_p99_ms: nearest_rank(&latencies, 0.99),
        failures: logs.iter().map(|l| l.failures).sum(),
        agents,
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Means of the per-round values.
pub fn combine(label: &str, rounds: Vec<RoundReport>) -> BenchReport {
    BenchReport {
        label: label.to_string(),
        rounds_used: rounds.len() as u32,
        n: rounds.iter().map(|r| r.n).sum(),
        throughput: mean(rounds.iter().map(|r| r.throughput)).unwrap_or(0.0),
        latency_median_ms: mean(rounds.iter().filter_map(|r| r.latency_median_ms)),
        latency_p99_ms: mean(rounds.iter().filter_map(|r| r.latency_p99_ms)),
        failures: rounds.iter().map(|r| r.failures).sum(),
        rounds,
    }
}

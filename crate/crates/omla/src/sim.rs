//! Discrete-time Monte Carlo simulation of the arrival/assignment process,
//! driving any [`Policy`] and aggregating episode rewards.
//!
//! All randomness flows from one seed through labeled substreams keyed by
//! `(seed, episode, purpose)`. The four purposes (arrival, accept, delay,
//! policy) never share draws, so swapping the policy leaves the arrival
//! sequence untouched: policy comparisons run on common random numbers.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::model::{DelayDist, Instance, MachineId, TaskId};
use crate::policies::{Decision, Policy, SimState};
use crate::{Error, Result};

/// Substream purposes; one independent generator per purpose per episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Arrival,
    Accept,
    Delay,
    Policy,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Arrival => 0x41,
            Purpose::Accept => 0x43,
            Purpose::Delay => 0x44,
            Purpose::Policy => 0x50,
        }
    }
}

/// Root of all randomness for one run: a seed from which per-episode,
/// per-purpose substreams are derived. Identical `(seed, episode, purpose)`
/// labels give identical draws on every platform and thread schedule.
#[derive(Clone, Copy, Debug)]
pub struct RandomStream {
    seed: u64,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        RandomStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn substream(&self, episode: u64, purpose: Purpose) -> Substream {
        let mut state = splitmix64(self.seed ^ 0x6f6d6c61); // "omla"
        state = splitmix64(state ^ episode);
        state = splitmix64(state ^ purpose.tag());
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        Substream {
            rng: ChaCha8Rng::from_seed(key),
        }
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One labeled generator. Consumers draw uniforms in a fixed order.
pub struct Substream {
    rng: ChaCha8Rng,
}

impl Substream {
    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform index in `0..n`; one draw regardless of `n`.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }
}

/// The four substreams one episode consumes.
pub struct EpisodeStreams {
    pub arrival: Substream,
    pub accept: Substream,
    pub delay: Substream,
    pub policy: Substream,
}

impl EpisodeStreams {
    pub fn new(stream: &RandomStream, episode: u64) -> Self {
        EpisodeStreams {
            arrival: stream.substream(episode, Purpose::Arrival),
            accept: stream.substream(episode, Purpose::Accept),
            delay: stream.substream(episode, Purpose::Delay),
            policy: stream.substream(episode, Purpose::Policy),
        }
    }
}

/// One step of an episode, in time order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Arrival {
        t: usize,
        v: TaskId,
    },
    NoArrival {
        t: usize,
    },
    Assigned {
        t: usize,
        u: MachineId,
        v: TaskId,
        l: usize,
    },
    Accepted {
        t: usize,
        u: MachineId,
        d: usize,
    },
    Rejected {
        t: usize,
        u: MachineId,
        theta: u32,
    },
    Removed {
        t: usize,
        u: MachineId,
    },
    Discarded {
        t: usize,
    },
}

/// Full record of one episode.
#[derive(Clone, Debug)]
pub struct EpisodeTrace {
    pub events: Vec<Event>,
    pub reward: f64,
}

impl EpisodeTrace {
    /// JSON-lines export: one event per line, a closing total-reward line.
    pub fn write_jsonl(&self, out: &mut dyn Write) -> Result<()> {
        for event in &self.events {
            serde_json::to_writer(&mut *out, event)?;
            writeln!(out)?;
        }
        writeln!(
            out,
            "{}",
            serde_json::json!({ "event": "total", "reward": self.reward })
        )?;
        Ok(())
    }
}

/// Run one episode: per slot, sample at most one arrival from the
/// categorical `{p_{v,t}}` (task-id order, residual mass = no arrival),
/// query the policy, and resolve acceptance, delay and budget. Rewards are
/// credited at acceptance time; a machine occupied past T never returns.
pub fn run_episode(
    instance: &Instance,
    policy: &dyn Policy,
    streams: &mut EpisodeStreams,
) -> Result<EpisodeTrace> {
    let mut state = SimState::new(instance);
    let mut events = Vec::new();
    let mut reward = 0.0;

    for t in 1..=instance.horizon() {
        state.t = t;
        let arrival = sample_arrival(instance, t, streams.arrival.uniform());
        let v = match arrival {
            Some(v) => v,
            None => {
                events.push(Event::NoArrival { t });
                continue;
            }
        };
        events.push(Event::Arrival { t, v });

        match policy.decide(instance, &state, v, &mut streams.policy)? {
            Decision::Discard => events.push(Event::Discarded { t }),
            Decision::Assign {
                machine,
                level,
                edge,
            } => {
                check_assignment(instance, &state, v, machine, level, edge)?;
                events.push(Event::Assigned {
                    t,
                    u: machine,
                    v,
                    l: level,
                });
                let edge_data = instance.edge(edge);
                if streams.accept.uniform() < edge_data.accept_prob {
                    reward += instance.reward(edge, level);
                    let d = sample_delay(instance.delay(level), streams.delay.uniform());
                    state.occupied_until[machine] = t + d;
                    events.push(Event::Accepted { t, u: machine, d });
                } else {
                    let theta = instance.theta(level);
                    events.push(Event::Rejected {
                        t,
                        u: machine,
                        theta,
                    });
                    if state.register_rejection(machine, theta) {
                        events.push(Event::Removed { t, u: machine });
                    }
                }
            }
        }
    }

    Ok(EpisodeTrace { events, reward })
}

fn sample_arrival(instance: &Instance, t: usize, draw: f64) -> Option<TaskId> {
    let mut cum = 0.0;
    for v in 0..instance.num_tasks() {
        cum += instance.arrival(v, t);
        if draw < cum {
            return Some(v);
        }
    }
    None
}

fn sample_delay(dist: &DelayDist, draw: f64) -> usize {
    let mut cum = 0.0;
    let mut last = 1;
    for (d, p) in dist.iter() {
        cum += p;
        last = d;
        if draw < cum {
            return d;
        }
    }
    last
}

/// The simulator's per-step contract assertions over policy output.
pub(crate) fn check_assignment(
    instance: &Instance,
    state: &SimState,
    v: TaskId,
    machine: MachineId,
    level: usize,
    edge: crate::model::EdgeId,
) -> Result<()> {
    let fail = |msg: String| {
        Err(Error::Contract(format!(
            "illegal decision at t={}: {msg}",
            state.t
        )))
    };
    if edge >= instance.num_edges() {
        return fail(format!("edge {edge} out of range"));
    }
    let e = instance.edge(edge);
    if e.machine != machine || e.task != v {
        return fail(format!(
            "edge {edge} connects machine {} and task {}, not ({machine}, {v})",
            e.machine, e.task
        ));
    }
    if level < 1 || level > instance.num_levels() {
        return fail(format!("level {level} out of range"));
    }
    if !state.available(machine) {
        return fail(format!(
            "machine {machine} occupied until {}",
            state.occupied_until[machine]
        ));
    }
    if !state.alive(machine) {
        return fail(format!("machine {machine} has exhausted its budget"));
    }
    Ok(())
}

/// Aggregate of a Monte Carlo run.
#[derive(Clone, Debug, Serialize)]
pub struct SimSummary {
    pub policy: String,
    pub n: u64,
    pub seed: u64,
    pub mean: f64,
    pub variance: f64,
    pub stderr: f64,
}

/// `n` independent episodes with substreams derived from `seed`.
/// Episodes may run concurrently; the reduction is a fixed-order pass over
/// episode-indexed rewards, so the summary is byte-identical for any job
/// count.
pub fn monte_carlo(
    instance: &Instance,
    policy: &dyn Policy,
    n: u64,
    seed: u64,
) -> Result<SimSummary> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "episode count must be at least 1".to_string(),
        ));
    }
    let stream = RandomStream::new(seed);
    let rewards = episode_rewards(instance, policy, n, &stream)?;

    let mean = rewards.iter().sum::<f64>() / n as f64;
    let variance = if n > 1 {
        rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Ok(SimSummary {
        policy: policy.name().to_string(),
        n,
        seed,
        mean,
        variance,
        stderr: (variance / n as f64).sqrt(),
    })
}

fn episode_rewards(
    instance: &Instance,
    policy: &dyn Policy,
    n: u64,
    stream: &RandomStream,
) -> Result<Vec<f64>> {
    (0..n)
        .into_par_iter()
        .map(|episode| {
            let mut streams = EpisodeStreams::new(stream, episode);
            run_episode(instance, policy, &mut streams).map(|trace| trace.reward)
        })
        .collect()
}

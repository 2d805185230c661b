//! Help-request campaigns: the source phone broadcasts HelpRequests at a
//! fixed rate, responder phones answer with HelpOffers, and every request is
//! scored by its first offer.

use std::collections::HashMap;

use emesh::access::{AccessMessage, EmergencyKind, EmergencyMessage};
use emesh::address::Address;
use emesh::pdu::Ttl;
use emesh::sim::{NodeId, SimTime, Trace, TraceEvent};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{build_world, BuildError, ScenarioConfig};

pub const RATES: [u32; 3] = [5, 10, 20];
pub const DURATION_MIN: u32 = 12;
pub const REPETITIONS: u32 = 5;

#[derive(Debug, Error, PartialEq)]
pub enum ExperimentError {
    #[error("experiment must be 1, 2 or 3, got {0}")]
    UnknownExperiment(u8),
    #[error("received ttl {received} exceeds initial ttl {initial}")]
    InvalidTtlPair { initial: u8, received: u8 },
    #[error("rate must divide one minute evenly, got {0}/min")]
    InvalidRate(u32),
}

/// Hops inferred from the TTL a receiver observed.
pub fn hop_count(initial_ttl: u8, received_ttl: u8) -> Result<u8, ExperimentError> {
    initial_ttl
        .checked_sub(received_ttl)
        .ok_or(ExperimentError::InvalidTtlPair { initial: initial_ttl, received: received_ttl })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub experiment: u8,
    /// Help requests per minute.
    pub rate: u32,
    pub duration_min: u32,
    pub repetitions: u32,
    pub seed: u64,
}

impl ExperimentPlan {
    /// Experiments 1, 2 and 3 send 5, 10 and 20 requests per minute for 12 minutes.
    pub fn numbered(experiment: u8, seed: u64) -> Result<Self, ExperimentError> {
        let rate = *RATES
            .get((experiment as usize).wrapping_sub(1))
            .ok_or(ExperimentError::UnknownExperiment(experiment))?;
        Ok(ExperimentPlan { experiment, rate, duration_min: DURATION_MIN, repetitions: REPETITIONS, seed })
    }

    pub fn with_repetitions(mut self, reps: u32) -> Self {
        self.repetitions = reps;
        self
    }

    pub fn requests_per_repetition(&self) -> u32 {
        self.rate * self.duration_min
    }

    pub fn interval_ms(&self) -> Result<SimTime, ExperimentError> {
        if self.rate == 0 || 60_000 % self.rate != 0 {
            return Err(ExperimentError::InvalidRate(self.rate));
        }
        Ok(60_000 / self.rate as SimTime)
    }

    /// Seeds differ per repetition and per experiment.
    pub fn repetition_seed(&self, rep: u32) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add((self.experiment as u64) << 32 | rep as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub request_id: u32,
    pub send_ms: u64,
    pub first_offer_ms: Option<u64>,
    pub answered: bool,
    /// Hops the request took to the responder whose offer arrived first.
    pub hops_out: Option<u8>,
    /// Hops the first offer took back to the requester.
    pub hops_back: Option<u8>,
    pub responder: Option<String>,
}

impl MessageRecord {
    pub fn response_ms(&self) -> Option<u64> {
        self.first_offer_ms.map(|t| t - self.send_ms)
    }

    /// Mean of the outbound and return hop counts.
    pub fn hops(&self) -> Option<f64> {
        Some((self.hops_out? as f64 + self.hops_back? as f64) / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator), 0 for a single value.
    pub std_dev: f64,
    pub median: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_dev = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Stats { n, mean, std_dev, median: quantile(&sorted, 0.5) })
    }
}

/// Linear interpolation between closest ranks; `sorted` must be nonempty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub requests: usize,
    pub answered: usize,
    pub hops: Option<Stats>,
    pub response_ms: Option<Stats>,
    pub loss_pct: f64,
}

impl Aggregates {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a MessageRecord>) -> Aggregates {
        let mut hops = Vec::new();
        let mut resp = Vec::new();
        let mut requests = 0;
        for r in records {
            requests += 1;
            if let Some(h) = r.hops() {
                hops.push(h);
            }
            if let Some(t) = r.response_ms() {
                resp.push(t as f64);
            }
        }
        let answered = resp.len();
        let loss_pct = if requests == 0 { 0.0 } else { 100.0 * (requests - answered) as f64 / requests as f64 };
        Aggregates { requests, answered, hops: Stats::of(&hops), response_ms: Stats::of(&resp), loss_pct }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub repetition: u32,
    pub seed: u64,
    pub records: Vec<MessageRecord>,
    pub aggregates: Aggregates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub scenario: String,
    pub plan: ExperimentPlan,
    pub repetitions: Vec<RepetitionResult>,
    /// Over all repetitions' records pooled.
    pub aggregates: Aggregates,
}

impl ExperimentResult {
    pub fn records(&self) -> impl Iterator<Item = &MessageRecord> {
        self.repetitions.iter().flat_map(|r| r.records.iter())
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}

/// One repetition: builds a fresh world, injects the requests and scores them
/// from the trace. Returns the trace too, for export.
pub fn run_repetition(
    cfg: &ScenarioConfig,
    plan: &ExperimentPlan,
    rep: u32,
) -> Result<(RepetitionResult, Trace), RunError> {
    let seed = plan.repetition_seed(rep);
    let mut w = build_world(cfg, seed)?;
    let interval = plan.interval_ms()?;
    let n = plan.requests_per_repetition();
    for id in 0..n {
        let msg = EmergencyMessage::new(EmergencyKind::HelpRequest, id);
        w.sim.schedule_emergency(id as SimTime * interval, w.source, msg, Address::BROADCAST);
    }
    w.sim.run_to_completion();

    let phones: HashMap<Address, (NodeId, String)> = w
        .responders
        .iter()
        .map(|&r| {
            let node = w.sim.node(r);
            (node.state.unicast(), (r, node.label.clone()))
        })
        .collect();
    let trace = w.sim.into_trace();
    let sends: Vec<SimTime> = (0..n).map(|id| id as SimTime * interval).collect();
    let records = score(&trace, w.source, &phones, w.initial_ttl, &sends)?;
    let aggregates = Aggregates::from_records(&records);
    Ok((RepetitionResult { repetition: rep, seed, records, aggregates }, trace))
}

/// Request `i` was sent at `sends[i]`. Offers from nodes other than the
/// listed responders are ignored.
fn score(
    trace: &Trace,
    source: NodeId,
    responders: &HashMap<Address, (NodeId, String)>,
    initial: Ttl,
    sends: &[SimTime],
) -> Result<Vec<MessageRecord>, ExperimentError> {
    let initial = initial.get();
    let mut req_ttl: HashMap<(u32, NodeId), u8> = HashMap::new();
    let mut first_offer: HashMap<u32, (SimTime, u8, Address)> = HashMap::new();
    for e in trace.iter() {
        let TraceEvent::Dispatch { t, node, src, ttl, message: AccessMessage::Emergency(m), .. } = e else {
            continue;
        };
        match m.kind {
            EmergencyKind::HelpRequest if *node != source => {
                req_ttl.entry((m.request_id, *node)).or_insert(*ttl);
            }
            EmergencyKind::HelpOffer if *node == source && responders.contains_key(src) => {
                first_offer.entry(m.request_id).or_insert((*t, *ttl, *src));
            }
            _ => {}
        }
    }

    let mut out = Vec::with_capacity(sends.len());
    for (id, &send_ms) in sends.iter().enumerate() {
        let id = id as u32;
        let mut rec = MessageRecord {
            request_id: id,
            send_ms,
            first_offer_ms: None,
            answered: false,
            hops_out: None,
            hops_back: None,
            responder: None,
        };
        if let Some(&(t, ttl, src)) = first_offer.get(&id) {
            let (node, label) = &responders[&src];
            rec.first_offer_ms = Some(t);
            rec.answered = true;
            rec.hops_back = Some(hop_count(initial, ttl)?);
            // a responder only offers after receiving the request
            let out_ttl = req_ttl[&(id, *node)];
            rec.hops_out = Some(hop_count(initial, out_ttl)?);
            rec.responder = Some(label.clone());
        }
        out.push(rec);
    }
    Ok(out)
}

/// Runs every repetition of `plan`, in parallel, and pools the records.
pub fn run_experiment(cfg: &ScenarioConfig, plan: &ExperimentPlan) -> Result<ExperimentResult, RunError> {
    let mut reps = (0..plan.repetitions)
        .into_par_iter()
        .map(|rep| run_repetition(cfg, plan, rep).map(|(r, _)| r))
        .collect::<Result<Vec<_>, _>>()?;
    reps.sort_by_key(|r| r.repetition);
    let aggregates = Aggregates::from_records(reps.iter().flat_map(|r| r.records.iter()));
    Ok(ExperimentResult { scenario: cfg.name.clone(), plan: *plan, repetitions: reps, aggregates })
}

/// Experiments 1 to 3 with `reps` repetitions each.
pub fn run_campaign(cfg: &ScenarioConfig, seed: u64, reps: u32) -> Result<Vec<ExperimentResult>, RunError> {
    (1..=3u8)
        .into_par_iter()
        .map(|k| {
            let plan = ExperimentPlan::numbered(k, seed)?.with_repetitions(reps);
            run_experiment(cfg, &plan)
        })
        .collect()
}

/// Pooled aggregates over several experiments.
pub fn campaign_aggregates(results: &[ExperimentResult]) -> Aggregates {
    Aggregates::from_records(results.iter().flat_map(|r| r.records()))
}

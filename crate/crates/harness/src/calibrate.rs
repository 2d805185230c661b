//! Fits the two radio knobs of a scenario to observed end-to-end figures:
//! `interference_loss` to a target request loss rate, and the radio range
//! to a target mean hop count. The two interact (a longer range gives more
//! redundant paths and fewer hops), so the searches alternate.

use serde::Serialize;

use crate::experiment::{campaign_aggregates, run_campaign, Aggregates, RunError};
use crate::scenario::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationTarget {
    pub loss_pct: f64,
    pub hops: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOptions {
    pub seed: u64,
    /// Repetitions per experiment in each evaluation.
    pub reps: u32,
    pub rounds: u32,
    pub bisection_steps: u32,
    /// Stop bisecting once measured loss is this close to the target.
    pub loss_tolerance: f64,
    /// Range multipliers tried against the scenario's own range.
    pub range_factors: Vec<f64>,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            seed: 0xCA1,
            reps: 5,
            rounds: 2,
            bisection_steps: 12,
            loss_tolerance: 0.5,
            range_factors: vec![0.8, 0.9, 1.0, 1.1, 1.2, 1.35, 1.5, 1.75, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub target: CalibrationTarget,
    pub interference_loss: f64,
    pub range_m: f64,
    pub loss_pct: f64,
    pub hops: Option<f64>,
    pub response_ms: Option<f64>,
    pub evaluations: u32,
}

struct Evaluator<'a> {
    opts: &'a CalibrationOptions,
    count: u32,
}

impl Evaluator<'_> {
    fn eval(&mut self, cfg: &ScenarioConfig) -> Result<Aggregates, RunError> {
        self.count += 1;
        Ok(campaign_aggregates(&run_campaign(cfg, self.opts.seed, self.opts.reps)?))
    }
}

/// Returns the scenario with calibrated `interference_loss` and `range`.
pub fn calibrate(
    cfg: &ScenarioConfig,
    target: CalibrationTarget,
    opts: &CalibrationOptions,
) -> Result<(ScenarioConfig, CalibrationReport), RunError> {
    let mut ev = Evaluator { opts, count: 0 };
    let mut cur = cfg.clone();
    let base_range = cfg.sim.radio.range_m;
    let mut last = None;
    for _ in 0..opts.rounds.max(1) {
        fit_loss(&mut cur, target.loss_pct, &mut ev)?;
        fit_range(&mut cur, base_range, target.hops, &mut ev)?;
        last = Some(fit_loss(&mut cur, target.loss_pct, &mut ev)?);
    }
    let agg = last.expect("at least one round");
    let report = CalibrationReport {
        target,
        interference_loss: cur.sim.radio.interference_loss,
        range_m: cur.sim.radio.range_m,
        loss_pct: agg.loss_pct,
        hops: agg.hops.map(|s| s.mean),
        response_ms: agg.response_ms.map(|s| s.mean),
        evaluations: ev.count,
    };
    Ok((cur, report))
}

/// Bisection on `interference_loss`; measured loss grows with it.
fn fit_loss(cfg: &mut ScenarioConfig, target: f64, ev: &mut Evaluator<'_>) -> Result<Aggregates, RunError> {
    let (mut lo, mut hi) = (0.0, (1.0 - cfg.sim.radio.base_loss).max(0.0));
    let mut best: Option<(f64, f64, Aggregates)> = None;
    for _ in 0..ev.opts.bisection_steps {
        let mid = (lo + hi) / 2.0;
        cfg.sim.radio.interference_loss = mid;
        let agg = ev.eval(cfg)?;
        let err = (agg.loss_pct - target).abs();
        let done = err <= ev.opts.loss_tolerance;
        if agg.loss_pct < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if best.as_ref().is_none_or(|b| err < b.1) {
            best = Some((mid, err, agg));
        }
        if done {
            break;
        }
    }
    let (p, _, agg) = best.expect("bisection_steps > 0");
    cfg.sim.radio.interference_loss = p;
    Ok(agg)
}

/// Grid search over range multipliers, keeping current loss parameters.
/// Ties go to the multiplier closest to 1.
fn fit_range(cfg: &mut ScenarioConfig, base: f64, target: f64, ev: &mut Evaluator<'_>) -> Result<(), RunError> {
    let mut best: Option<(f64, f64)> = None;
    for &f in &ev.opts.range_factors {
        let mut trial = cfg.clone();
        trial.sim.radio.range_m = base * f;
        let Some(h) = ev.eval(&trial)?.hops.map(|s| s.mean) else { continue };
        let key = ((h - target).abs(), (f - 1.0).abs());
        if best.is_none_or(|(bf, be)| key < (be, (bf - 1.0f64).abs())) {
            best = Some((f, key.0));
        }
    }
    if let Some((f, _)) = best {
        cfg.sim.radio.range_m = base * f;
    }
    Ok(())
}

//! Closed learning loop for one student: smooth the incoming signal, trace
//! mastery, recommend the next activity, and take one proximal gradient step
//! on the tracing parameters.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::allocation::{engagement_weight, EngagementCurve};
use crate::bkt::{learn_transition, posterior_update, predict_correct, BktParams, MasteryState};
use crate::error::{Error, Result};
use crate::event::SignalEvent;
use crate::metrics::{log_loss, NLL_CLIP};
use crate::signal::{SmootherState, DEFAULT_ALPHA, DEFAULT_WINDOW};

/// Mastery cut points: below `low` is foundational, at or above `high` is
/// advanced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bands {
    pub low: f64,
    pub high: f64,
}

impl Default for Bands {
    fn default() -> Self {
        Self { low: 0.4, high: 0.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Foundational,
    Practice,
    Advanced,
}

impl Bands {
    pub fn tier(&self, mastery: f64) -> Tier {
        if mastery < self.low {
            Tier::Foundational
        } else if mastery < self.high {
            Tier::Practice
        } else {
            Tier::Advanced
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlywheelConfig {
    pub alpha: f64,
    pub window: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub bands: Bands,
    pub engagement: EngagementCurve,
}

impl Default for FlywheelConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            window: DEFAULT_WINDOW,
            learning_rate: 0.01,
            regularization: 0.0,
            bands: Bands::default(),
            engagement: EngagementCurve::default(),
        }
    }
}

impl FlywheelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::ParameterDomain(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return Err(Error::ParameterDomain(format!(
                "regularization {} must be >= 0",
                self.regularization
            )));
        }
        let b = self.bands;
        if !(0.0 <= b.low && b.low <= b.high && b.high <= 1.0) {
            return Err(Error::ParameterDomain(format!("bands {b:?} must satisfy 0 <= low <= high <= 1")));
        }
        self.engagement.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub student_id: String,
    /// Index of the event that triggered this recommendation.
    pub event_index: u64,
    pub timestamp: u64,
    pub tier: Tier,
    pub target_skill: String,
    /// Skill whose mastery set the tier.
    pub banded_skill: String,
    pub mastery: f64,
    /// Engagement weight of the target skill.
    pub engagement_weight: f64,
}

/// Latent model state `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Latent {
    pub mastery: BTreeMap<String, MasteryState>,
    /// Posterior after each skill's latest observation, before the
    /// learning transition.
    pub last_posterior: BTreeMap<String, f64>,
    pub smoothed: Option<Vec<f64>>,
    /// Window mean of the smoothed features.
    pub aggregate: Option<Vec<f64>>,
    pub events: u64,
    pub last_timestamp: Option<u64>,
    pub last_recommendation: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub params: BTreeMap<String, BktParams>,
    pub bands: Bands,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlywheelState {
    pub student_id: String,
    pub latent: Latent,
    pub smoother: SmootherState,
    pub policy: Policy,
    pub config: FlywheelConfig,
}

/// Where the mastery used for a prediction came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MasteryPrior {
    /// First observation of the skill: `P(L) = L0`.
    Initial,
    /// Later observation: `P(L) = q + (1 - q) T` for the previous
    /// posterior `q`.
    AfterPosterior(f64),
}

impl MasteryPrior {
    pub fn mastery(self, params: &BktParams) -> f64 {
        match self {
            Self::Initial => params.l0,
            Self::AfterPosterior(q) => learn_transition(q, params),
        }
    }

    /// `d pred / d [l0, learn, slip, guess]`, holding the previous
    /// posterior fixed.
    pub fn prediction_gradient(self, params: &BktParams) -> [f64; 4] {
        let p = self.mastery(params);
        let spread = 1.0 - params.slip - params.guess;
        let (d_l0, d_learn) = match self {
            Self::Initial => (spread, 0.0),
            Self::AfterPosterior(q) => (0.0, spread * (1.0 - q)),
        };
        [d_l0, d_learn, -p, 1.0 - p]
    }
}

/// Binary cross-entropy, with the prediction clipped away from 0 and 1.
pub fn policy_loss(predicted: f64, observed: bool) -> f64 {
    log_loss(predicted, observed)
}

/// Loss of the mean prediction over the tagged skills and its gradient with
/// respect to each skill's parameters.
pub fn loss_and_gradient(skills: &[(MasteryPrior, BktParams)], observed: bool) -> (f64, Vec<[f64; 4]>) {
    if skills.is_empty() {
        return (0.0, Vec::new());
    }
    let k = skills.len() as f64;
    let mean = skills.iter().map(|(m, p)| predict_correct(m.mastery(p), p)).sum::<f64>() / k;
    let loss = policy_loss(mean, observed);
    let clipped = mean.clamp(NLL_CLIP, 1.0 - NLL_CLIP);
    let outer = if clipped != mean {
        0.0
    } else {
        let y = observed as u8 as f64;
        (mean - y) / (mean * (1.0 - mean))
    };
    let grads = skills
        .iter()
        .map(|(m, p)| m.prediction_gradient(p).map(|g| outer * g / k))
        .collect();
    (loss, grads)
}

/// `clip((theta - step * gradient) / (1 + step * reg), bounds)`
pub fn proximal_update(
    policy: &[f64],
    gradient: &[f64],
    step: f64,
    reg: f64,
    bounds: &[(f64, f64)],
) -> Result<Vec<f64>> {
    for len in [gradient.len(), bounds.len()] {
        if len != policy.len() {
            return Err(Error::Shape {
                expected: policy.len(),
                actual: len,
            });
        }
    }
    Ok(policy
        .iter()
        .zip(gradient)
        .zip(bounds)
        .map(|((&t, &g), &(lo, hi))| ((t - step * g) / (1.0 + step * reg)).clamp(lo, hi))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub recommendation: Recommendation,
    /// Mean predicted correctness before seeing the outcome.
    pub predicted: f64,
    pub loss: f64,
}

impl FlywheelState {
    /// Fresh state; mastery of every skill starts at its `l0`.
    pub fn new(student_id: impl Into<String>, params: BTreeMap<String, BktParams>, config: FlywheelConfig) -> Result<Self> {
        config.validate()?;
        if params.is_empty() {
            return Err(Error::InvalidProblem("flywheel needs at least one skill".into()));
        }
        for (skill, p) in &params {
            for (name, v) in p.named() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::ParameterDomain(format!("{skill}.{name} = {v} not in [0, 1]")));
                }
            }
        }
        let mastery = params
            .iter()
            .map(|(s, p)| (s.clone(), MasteryState::new(s.clone(), p)))
            .collect();
        Ok(Self {
            student_id: student_id.into(),
            latent: Latent { mastery, ..Latent::default() },
            smoother: SmootherState::new(config.alpha, config.window)?,
            policy: Policy { params, bands: config.bands },
            config,
        })
    }

    /// Tier from `skill`'s mastery; target is the tracked skill with the
    /// largest engagement weight (first in id order on ties).
    pub fn recommend(&self, skill: &str) -> Result<Recommendation> {
        let banded = self
            .latent
            .mastery
            .get(skill)
            .ok_or_else(|| Error::UnknownSkill(skill.into()))?;
        let (target, weight) = self.engagement_target();
        Ok(Recommendation {
            student_id: self.student_id.clone(),
            event_index: self.latent.events,
            timestamp: self.latent.last_timestamp.unwrap_or(0),
            tier: self.policy.bands.tier(banded.p_mastery),
            target_skill: target,
            banded_skill: skill.into(),
            mastery: banded.p_mastery,
            engagement_weight: weight,
        })
    }

    fn engagement_target(&self) -> (String, f64) {
        let mut best: Option<(&String, f64)> = None;
        for (s, m) in &self.latent.mastery {
            let w = engagement_weight(m.p_mastery, &self.config.engagement);
            if best.is_none_or(|(_, b)| w > b) {
                best = Some((s, w));
            }
        }
        let (s, w) = best.expect("at least one skill");
        (s.clone(), w)
    }

    fn check(&self, ev: &SignalEvent) -> Result<()> {
        if ev.student_id != self.student_id {
            return Err(Error::StudentMismatch {
                expected: self.student_id.clone(),
                found: ev.student_id.clone(),
            });
        }
        if let Some(prev) = self.latent.last_timestamp {
            if ev.timestamp < prev {
                return Err(Error::OutOfOrder {
                    previous: prev,
                    current: ev.timestamp,
                });
            }
        }
        ev.validate()?;
        if let Some(s) = ev.skill_ids.iter().find(|s| !self.policy.params.contains_key(*s)) {
            return Err(Error::UnknownSkill(s.clone()));
        }
        if let Some(d) = self.smoother.dim() {
            if d != ev.features.len() {
                return Err(Error::Shape {
                    expected: d,
                    actual: ev.features.len(),
                });
            }
        }
        Ok(())
    }

    /// Processes one event. On error the state is left untouched.
    pub fn step(&mut self, ev: &SignalEvent) -> Result<StepReport> {
        self.check(ev)?;

        // mastery updates are computed before anything is committed
        let mut priors = Vec::with_capacity(ev.skill_ids.len());
        let mut updates = Vec::with_capacity(ev.skill_ids.len());
        for skill in &ev.skill_ids {
            let params = self.policy.params[skill];
            let prior = self.latent.mastery[skill].p_mastery;
            let source = match self.latent.last_posterior.get(skill) {
                None => MasteryPrior::Initial,
                Some(&q) => MasteryPrior::AfterPosterior(q),
            };
            let post = posterior_update(prior, &params, ev.correct)?;
            priors.push((source, params, prior));
            updates.push((skill, post, learn_transition(post, &params)));
        }

        let mut smoother = self.smoother.clone();
        let smoothed = smoother.smooth(&ev.features)?;
        let aggregate = smoother.aggregate_window()?;
        self.smoother = smoother;
        self.latent.smoothed = Some(smoothed);
        self.latent.aggregate = Some(aggregate);

        for &(skill, post, next) in &updates {
            self.latent.last_posterior.insert(skill.clone(), post);
            let m = self.latent.mastery.get_mut(skill).expect("checked skill");
            m.p_mastery = next;
            m.observation_count += 1;
        }
        self.latent.last_timestamp = Some(ev.timestamp);

        let banded = match ev.skill_ids.first() {
            Some(s) => s.clone(),
            None => self.engagement_target().0,
        };
        let recommendation = self.recommend(&banded)?;

        // Predictions use the mastery held before this event, which is what
        // the gradient differentiates.
        let sources: Vec<(MasteryPrior, BktParams)> = priors.iter().map(|&(s, p, _)| (s, p)).collect();
        let predicted = if priors.is_empty() {
            f64::NAN
        } else {
            priors.iter().map(|&(_, p, m)| predict_correct(m, &p)).sum::<f64>() / priors.len() as f64
        };
        let (loss, grads) = loss_and_gradient(&sources, ev.correct);
        let bounds = BktParams::estimation_bounds();
        for (skill, g) in ev.skill_ids.iter().zip(&grads) {
            let p = self.policy.params[skill];
            let next = proximal_update(&p.to_array(), g, self.config.learning_rate, self.config.regularization, &bounds)?;
            self.policy.params.insert(skill.clone(), BktParams::from_array([next[0], next[1], next[2], next[3]]));
        }

        self.latent.last_recommendation = Some(self.latent.events);
        self.latent.events += 1;
        Ok(StepReport { recommendation, predicted, loss })
    }
}

//! Bayesian knowledge tracing over a two-state (unlearned / learned) hidden
//! process with slip and guess emissions.
//!
//! Per observation the update order is fixed: predict correctness from the
//! current mastery, condition on the outcome, then apply the learning
//! transition.

mod fit;

pub use fit::{fit_parameters, sequence_log_likelihood, FitConfig, FitResult};

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::SignalEvent;

/// Lower and upper margin kept away from 0 and 1 for estimated parameters.
pub const PARAM_EPS: f64 = 1e-3;
/// Upper bound on slip and guess while fitting and during policy updates.
/// Rules out the label-flipped mirror solution.
pub const SLIP_GUESS_MAX: f64 = 0.5 - PARAM_EPS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BktParams {
    /// Initial mastery probability.
    pub l0: f64,
    /// Probability of moving from unlearned to learned after an opportunity.
    pub learn: f64,
    /// Probability of answering incorrectly despite mastery.
    pub slip: f64,
    /// Probability of answering correctly without mastery.
    pub guess: f64,
}

impl BktParams {
    /// Validated constructor: every field in `[PARAM_EPS, 1 - PARAM_EPS]`
    /// and `slip + guess < 1`.
    pub fn new(l0: f64, learn: f64, slip: f64, guess: f64) -> Result<Self> {
        let p = Self { l0, learn, slip, guess };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !(PARAM_EPS..=1.0 - PARAM_EPS).contains(&v) {
                return Err(Error::ParameterDomain(format!(
                    "{name} = {v} outside [{PARAM_EPS}, {}]",
                    1.0 - PARAM_EPS
                )));
            }
        }
        if self.slip + self.guess >= 1.0 {
            return Err(Error::ParameterDomain(format!(
                "slip + guess = {} must be below 1",
                self.slip + self.guess
            )));
        }
        Ok(())
    }

    pub fn named(&self) -> [(&'static str, f64); 4] {
        [
            ("l0", self.l0),
            ("learn", self.learn),
            ("slip", self.slip),
            ("guess", self.guess),
        ]
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.l0, self.learn, self.slip, self.guess]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            l0: a[0],
            learn: a[1],
            slip: a[2],
            guess: a[3],
        }
    }

    /// Per-field bounds used when estimating parameters.
    pub fn estimation_bounds() -> [(f64, f64); 4] {
        let prob = (PARAM_EPS, 1.0 - PARAM_EPS);
        let emit = (PARAM_EPS, SLIP_GUESS_MAX);
        [prob, prob, emit, emit]
    }

    /// Clamps each field into [`BktParams::estimation_bounds`].
    pub fn clamped(self) -> Self {
        let b = Self::estimation_bounds();
        let a = self.to_array();
        Self::from_array(core::array::from_fn(|i| a[i].clamp(b[i].0, b[i].1)))
    }
}

impl Default for BktParams {
    fn default() -> Self {
        Self {
            l0: 0.3,
            learn: 0.1,
            slip: 0.1,
            guess: 0.2,
        }
    }
}

/// Current mastery estimate for one skill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasteryState {
    pub skill_id: String,
    pub p_mastery: f64,
    pub observation_count: u64,
}

impl MasteryState {
    pub fn new(skill_id: impl Into<String>, params: &BktParams) -> Self {
        Self {
            skill_id: skill_id.into(),
            p_mastery: params.l0,
            observation_count: 0,
        }
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::ParameterDomain(format!("{name} = {p} not in [0, 1]")))
    }
}

/// Conditions mastery on one observed outcome.
pub fn posterior_update(prior: f64, params: &BktParams, correct: bool) -> Result<f64> {
    check_probability("prior", prior)?;
    let (num, other) = if correct {
        (prior * (1.0 - params.slip), (1.0 - prior) * params.guess)
    } else {
        (prior * params.slip, (1.0 - prior) * (1.0 - params.guess))
    };
    let den = num + other;
    if den <= 0.0 {
        return Err(Error::ParameterDomain(format!(
            "observation has zero probability under prior {prior} and {params:?}"
        )));
    }
    Ok((num / den).clamp(0.0, 1.0))
}

/// Applies one learning opportunity to a conditioned mastery estimate.
pub fn learn_transition(posterior: f64, params: &BktParams) -> f64 {
    (posterior + (1.0 - posterior) * params.learn).clamp(0.0, 1.0)
}

/// Probability of a correct response given mastery.
pub fn predict_correct(p_mastery: f64, params: &BktParams) -> f64 {
    p_mastery * (1.0 - params.slip) + (1.0 - p_mastery) * params.guess
}

/// One (event, skill) step of a traced trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Position of the source event in the traced slice.
    pub event_index: usize,
    pub timestamp: u64,
    pub item_id: String,
    pub skill_id: String,
    pub prior: f64,
    pub posterior: f64,
    /// Mastery after the learning transition; the next prior for this skill.
    pub next: f64,
    pub predicted_correct: f64,
    pub observed: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MasteryTrajectory {
    pub records: Vec<TraceRecord>,
}

impl MasteryTrajectory {
    /// Event-level correctness predictions: the mean of the per-skill
    /// predictions of each event, paired with the observed outcome.
    pub fn event_predictions(&self) -> Vec<(f64, bool)> {
        let mut out: Vec<(f64, bool)> = Vec::new();
        let mut i = 0;
        while i < self.records.len() {
            let idx = self.records[i].event_index;
            let mut j = i;
            let mut sum = 0.0;
            while j < self.records.len() && self.records[j].event_index == idx {
                sum += self.records[j].predicted_correct;
                j += 1;
            }
            out.push((sum / (j - i) as f64, self.records[i].observed));
            i = j;
        }
        out
    }

    /// Log-likelihood of the observed outcomes under the event-level
    /// predictions.
    pub fn log_likelihood(&self) -> f64 {
        self.event_predictions()
            .iter()
            .map(|&(p, y)| if y { p.ln() } else { (1.0 - p).ln() })
            .sum()
    }
}

/// Replays one student's events through per-skill tracing.
///
/// Each tagged skill of an event is predicted from its current mastery,
/// conditioned on the shared outcome, then advanced by its learning
/// transition.
pub fn trace_student(
    events: &[SignalEvent],
    params: &BTreeMap<String, BktParams>,
) -> Result<MasteryTrajectory> {
    let mut mastery: BTreeMap<&str, f64> = BTreeMap::new();
    let mut records = Vec::new();
    let mut last: Option<&SignalEvent> = None;
    for (event_index, ev) in events.iter().enumerate() {
        if let Some(prev) = last {
            if prev.student_id != ev.student_id {
                return Err(Error::StudentMismatch {
                    expected: prev.student_id.clone(),
                    found: ev.student_id.clone(),
                });
            }
            if ev.timestamp < prev.timestamp {
                return Err(Error::OutOfOrder {
                    previous: prev.timestamp,
                    current: ev.timestamp,
                });
            }
        }
        last = Some(ev);
        for skill in &ev.skill_ids {
            let p = params
                .get(skill)
                .ok_or_else(|| Error::UnknownSkill(skill.clone()))?;
            let prior = *mastery.get(skill.as_str()).unwrap_or(&p.l0);
            let predicted = predict_correct(prior, p);
            let posterior = posterior_update(prior, p, ev.correct)?;
            let next = learn_transition(posterior, p);
            mastery.insert(skill.as_str(), next);
            records.push(TraceRecord {
                event_index,
                timestamp: ev.timestamp,
                item_id: ev.item_id.clone(),
                skill_id: skill.clone(),
                prior,
                posterior,
                next,
                predicted_correct: predicted,
                observed: ev.correct,
            });
        }
    }
    Ok(MasteryTrajectory { records })
}

/// Per-skill outcome sequences of each student, in event order. Students
/// and skills come out sorted by id.
pub fn skill_sequences(events: &[SignalEvent]) -> BTreeMap<String, Vec<Vec<bool>>> {
    let mut per_student: BTreeMap<&str, BTreeMap<&str, Vec<bool>>> = BTreeMap::new();
    for ev in events {
        let skills = per_student.entry(ev.student_id.as_str()).or_default();
        for s in &ev.skill_ids {
            skills.entry(s.as_str()).or_default().push(ev.correct);
        }
    }
    let mut out: BTreeMap<String, Vec<Vec<bool>>> = BTreeMap::new();
    for skills in per_student.into_values() {
        for (skill, seq) in skills {
            out.entry(skill.into()).or_default().push(seq);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Channel;
    use alloc::vec;
    use proptest::prelude::*;

    const SG: BktParams = BktParams {
        l0: 0.5,
        learn: 0.3,
        slip: 0.1,
        guess: 0.2,
    };

    #[test]
    fn certainty_is_absorbing() {
        assert_eq!(posterior_update(1.0, &SG, true).unwrap(), 1.0);
        assert_eq!(posterior_update(0.0, &SG, true).unwrap(), 0.0);
        assert_eq!(learn_transition(1.0, &SG), 1.0);
    }

    #[test]
    fn hand_evaluated_updates() {
        let up = posterior_update(0.5, &SG, true).unwrap();
        assert!((up - 0.45 / 0.55).abs() < 1e-12);
        assert!((up - 0.8182).abs() < 1e-4);
        let down = posterior_update(0.5, &SG, false).unwrap();
        assert!((down - 0.05 / 0.45).abs() < 1e-12);
        assert!((down - 0.1111).abs() < 1e-4);
        let next = learn_transition(0.45 / 0.55, &SG);
        assert!((next - (0.45 / 0.55 + (0.1 / 0.55) * 0.3)).abs() < 1e-12);
        assert!((next - 0.8727).abs() < 1e-4);
    }

    #[test]
    fn no_learning_keeps_posterior() {
        let p = BktParams { learn: 0.0, ..SG };
        assert_eq!(learn_transition(0.5, &p), 0.5);
    }

    #[test]
    fn prediction_examples() {
        let p = BktParams { slip: 0.1, guess: 0.25, ..SG };
        assert!((predict_correct(1.0, &p) - 0.9).abs() < 1e-15);
        assert_eq!(predict_correct(0.0, &p), 0.25);
        assert!((predict_correct(0.6, &p) - 0.64).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_observation_is_domain_error() {
        let p = BktParams { l0: 0.0, learn: 0.0, slip: 0.0, guess: 0.0 };
        assert!(matches!(
            posterior_update(0.0, &p, true),
            Err(Error::ParameterDomain(_))
        ));
        assert!(posterior_update(1.2, &SG, true).is_err());
    }

    #[test]
    fn validated_constructor() {
        assert!(BktParams::new(0.3, 0.2, 0.1, 0.2).is_ok());
        assert!(BktParams::new(0.0, 0.2, 0.1, 0.2).is_err());
        assert!(BktParams::new(0.3, 0.2, 0.6, 0.5).is_err());
    }

    fn ev(t: u64, skills: &[&str], correct: bool) -> SignalEvent {
        SignalEvent {
            student_id: "s1".into(),
            timestamp: t,
            item_id: format!("i{t}"),
            skill_ids: skills.iter().map(|s| String::from(*s)).collect(),
            correct,
            features: vec![0.0; 5],
            present: vec![false; 5],
            channel: Channel::Submission,
        }
    }

    fn table(p: BktParams) -> BTreeMap<String, BktParams> {
        let mut m = BTreeMap::new();
        m.insert("a".into(), p);
        m
    }

    #[test]
    fn trace_deterministic_mastery() {
        let p = BktParams { l0: 1.0, learn: 0.2, slip: 0.0, guess: 0.0 };
        let tr = trace_student(&[ev(1, &["a"], true)], &table(p)).unwrap();
        let r = &tr.records[0];
        assert_eq!((r.prior, r.posterior, r.predicted_correct), (1.0, 1.0, 1.0));
    }

    #[test]
    fn trace_chains_posterior_then_transition() {
        let tr = trace_student(&[ev(1, &["a"], true)], &table(SG)).unwrap();
        let r = &tr.records[0];
        assert!((r.posterior - 0.45 / 0.55).abs() < 1e-12);
        assert!((r.next - 0.8727).abs() < 1e-4);
        assert!((r.predicted_correct - predict_correct(0.5, &SG)).abs() < 1e-15);
    }

    #[test]
    fn trace_empty_and_errors() {
        assert!(trace_student(&[], &table(SG)).unwrap().records.is_empty());
        assert_eq!(
            trace_student(&[ev(1, &["zz"], true)], &table(SG)),
            Err(Error::UnknownSkill("zz".into()))
        );
        assert_eq!(
            trace_student(&[ev(5, &["a"], true), ev(4, &["a"], true)], &table(SG)),
            Err(Error::OutOfOrder { previous: 5, current: 4 })
        );
    }

    #[test]
    fn multi_skill_prediction_is_mean() {
        let mut params = table(SG);
        params.insert("b".into(), BktParams { l0: 0.9, ..SG });
        let tr = trace_student(&[ev(1, &["a", "b"], false)], &params).unwrap();
        assert_eq!(tr.records.len(), 2);
        let preds = tr.event_predictions();
        let expect = (predict_correct(0.5, &SG) + predict_correct(0.9, &SG)) / 2.0;
        assert_eq!(preds.len(), 1);
        assert!((preds[0].0 - expect).abs() < 1e-15);
        assert!(!preds[0].1);
    }

    #[test]
    fn skill_sequences_split_by_student_and_skill() {
        let mut evs = vec![ev(1, &["a"], true), ev(2, &["a", "b"], false)];
        let mut other = ev(3, &["a"], false);
        other.student_id = "s0".into();
        evs.push(other);
        let seqs = skill_sequences(&evs);
        assert_eq!(seqs["a"], vec![vec![false], vec![true, false]]);
        assert_eq!(seqs["b"], vec![vec![false]]);
    }

    fn params_strategy() -> impl Strategy<Value = BktParams> {
        (0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..1.0, 0.0f64..1.0)
            .prop_filter("slip + guess < 1", |(_, _, s, g)| s + g < 1.0 - 1e-9)
            .prop_map(|(l0, learn, slip, guess)| BktParams { l0, learn, slip, guess })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn evidence_moves_mastery_monotonically(
            prior in 1e-6f64..(1.0 - 1e-6),
            p in params_strategy(),
        ) {
            let up = posterior_update(prior, &p, true).unwrap();
            let down = posterior_update(prior, &p, false).unwrap();
            prop_assert!(up > prior, "up {up} prior {prior} {p:?}");
            prop_assert!(down < prior, "down {down} prior {prior} {p:?}");
        }

        #[test]
        fn update_chain_stays_in_unit_interval(
            prior in 0.0f64..=1.0,
            p in params_strategy(),
            y: bool,
        ) {
            if let Ok(post) = posterior_update(prior, &p, y) {
                let next = learn_transition(post, &p);
                prop_assert!((0.0..=1.0).contains(&post));
                prop_assert!((0.0..=1.0).contains(&next));
            }
        }

        #[test]
        fn prediction_is_increasing_affine(
            a in 0.0f64..=1.0,
            b in 0.0f64..=1.0,
            p in params_strategy(),
        ) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-9);
            let (plo, phi) = (predict_correct(lo, &p), predict_correct(hi, &p));
            prop_assert!(phi > plo);
            let mid = predict_correct(0.5 * (lo + hi), &p);
            prop_assert!((mid - 0.5 * (plo + phi)).abs() < 1e-12);
            let (g, s1) = (p.guess, 1.0 - p.slip);
            prop_assert!(plo >= g.min(s1) - 1e-15 && phi <= g.max(s1) + 1e-15);
        }
    }
}

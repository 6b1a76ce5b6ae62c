//! Seeded simulation of the two-state learning process, with the hidden
//! mastery path logged for oracle checks.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bkt::BktParams;
use crate::error::{Error, Result};
use crate::event::{fill_gaps, Channel, SignalEvent, FEATURE_DIM};

/// Epoch offset of the first simulated event (2020-09-13T12:26:40Z).
pub const SYNTHETIC_EPOCH_MS: u64 = 1_600_000_000_000;
/// Spacing between consecutive simulated events of one student.
pub const SYNTHETIC_STEP_MS: u64 = 60_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Generating parameters per skill. Only `[0, 1]` is required, so
    /// degenerate chains (no slip, certain learning) can be simulated.
    pub params: BTreeMap<String, BktParams>,
    pub students: usize,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenState {
    pub student_id: String,
    pub skill_id: String,
    pub step: usize,
    pub mastered: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SyntheticData {
    pub events: Vec<SignalEvent>,
    /// Latent mastery at the moment each event was emitted, in event order.
    pub hidden: Vec<HiddenState>,
}

fn check(params: &BktParams) -> Result<()> {
    for (name, v) in params.named() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::ParameterDomain(format!("{name} = {v} not in [0, 1]")));
        }
    }
    Ok(())
}

/// Simulates one chain, returning `(observed, mastered)` per step.
fn simulate_chain(p: &BktParams, steps: usize, rng: &mut ChaCha8Rng) -> Vec<(bool, bool)> {
    let mut mastered = rng.random::<f64>() < p.l0;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let p_correct = if mastered { 1.0 - p.slip } else { p.guess };
        let y = rng.random::<f64>() < p_correct;
        out.push((y, mastered));
        if !mastered {
            mastered = rng.random::<f64>() < p.learn;
        }
    }
    out
}

pub fn student_name(index: usize) -> String {
    format!("u{index:05}")
}

/// Simulates every student on every skill.
///
/// Each student's chains run per skill in sorted skill order; events are
/// then interleaved round-robin over skills, one minute apart.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.params.values().try_for_each(check)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let skills: Vec<(&String, &BktParams)> = cfg.params.iter().collect();
    let mut data = SyntheticData::default();
    for s in 0..cfg.students {
        let student = student_name(s);
        let chains: Vec<Vec<(bool, bool)>> = skills
            .iter()
            .map(|(_, p)| simulate_chain(p, cfg.steps, &mut rng))
            .collect();
        let mut ordinal = 0u64;
        for step in 0..cfg.steps {
            for (k, (skill, _)) in skills.iter().enumerate() {
                let (y, mastered) = chains[k][step];
                let mut features = vec![0.0; FEATURE_DIM];
                let mut present = vec![false; FEATURE_DIM];
                features[0] = 1.0;
                present[0] = true;
                data.events.push(SignalEvent {
                    student_id: student.clone(),
                    timestamp: SYNTHETIC_EPOCH_MS + ordinal * SYNTHETIC_STEP_MS,
                    item_id: format!("{skill}-q{step}"),
                    skill_ids: vec![(*skill).clone()],
                    correct: y,
                    features,
                    present,
                    channel: Channel::Submission,
                });
                data.hidden.push(HiddenState {
                    student_id: student.clone(),
                    skill_id: (*skill).clone(),
                    step,
                    mastered,
                });
                ordinal += 1;
            }
        }
    }
    fill_gaps(&mut data.events);
    Ok(data)
}

/// Outcome sequences of a single simulated skill, one per student.
pub fn generate_sequences(params: &BktParams, students: usize, steps: usize, seed: u64) -> Vec<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..students)
        .map(|_| simulate_chain(params, steps, &mut rng).into_iter().map(|(y, _)| y).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(p: BktParams, students: usize, steps: usize, seed: u64) -> SyntheticConfig {
        let mut params = BTreeMap::new();
        params.insert("k".into(), p);
        SyntheticConfig { params, students, steps, seed }
    }

    #[test]
    fn deterministic_chain_is_wrong_then_right() {
        let p = BktParams { l0: 0.0, learn: 1.0, slip: 0.0, guess: 0.0 };
        let data = generate_synthetic(&single(p, 20, 6, 1)).unwrap();
        for chunk in data.events.chunks(6) {
            let ys: Vec<bool> = chunk.iter().map(|e| e.correct).collect();
            assert_eq!(ys, vec![false, true, true, true, true, true]);
        }
    }

    #[test]
    fn certain_guess_is_always_correct() {
        let p = BktParams { l0: 0.3, learn: 0.2, slip: 0.0, guess: 1.0 };
        let data = generate_synthetic(&single(p, 50, 10, 2)).unwrap();
        assert!(data.events.iter().all(|e| e.correct));
    }

    #[test]
    fn first_step_marginal_matches_analytic_rate() {
        let p = BktParams { l0: 0.3, learn: 0.2, slip: 0.1, guess: 0.2 };
        let n = 10_000;
        let seqs = generate_sequences(&p, n, 1, 77);
        let rate = seqs.iter().filter(|s| s[0]).count() as f64 / n as f64;
        let expect = p.l0 * (1.0 - p.slip) + (1.0 - p.l0) * p.guess;
        assert!((expect - 0.41).abs() < 1e-12);
        let sigma = (expect * (1.0 - expect) / n as f64).sqrt();
        assert!((rate - expect).abs() <= 3.0 * sigma, "rate {rate}");
    }

    #[test]
    fn emissions_conditioned_on_hidden_state() {
        let p = BktParams { l0: 0.3, learn: 0.2, slip: 0.1, guess: 0.2 };
        let data = generate_synthetic(&single(p, 400, 25, 5)).unwrap();
        let (mut m, mut m_ok, mut u, mut u_ok) = (0.0, 0.0, 0.0, 0.0);
        for (e, h) in data.events.iter().zip(&data.hidden) {
            if h.mastered {
                m += 1.0;
                m_ok += e.correct as u8 as f64;
            } else {
                u += 1.0;
                u_ok += e.correct as u8 as f64;
            }
        }
        let band = |p: f64, n: f64| 4.0 * (p * (1.0 - p) / n).sqrt();
        assert!((m_ok / m - 0.9).abs() < band(0.9, m));
        assert!((u_ok / u - 0.2).abs() < band(0.2, u));
    }

    #[test]
    fn same_seed_same_output() {
        let p = BktParams::default();
        let a = generate_synthetic(&single(p, 10, 5, 42)).unwrap();
        let b = generate_synthetic(&single(p, 10, 5, 42)).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.hidden, b.hidden);
    }

    #[test]
    fn rejects_out_of_range_probabilities() {
        let p = BktParams { l0: 1.5, ..BktParams::default() };
        assert!(generate_synthetic(&single(p, 1, 1, 0)).is_err());
    }
}

//! Maximum-likelihood estimation of [`BktParams`] by expectation-maximization
//! (Baum-Welch on the two-state chain) with seeded random restarts.

use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BktParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub restarts: usize,
    pub max_iterations: usize,
    /// EM stops once an iteration gains less than this much log-likelihood.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            restarts: 5,
            max_iterations: 200,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: BktParams,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Log-likelihood before each M-step of the winning restart, followed by
    /// the final value.
    pub history: Vec<f64>,
}

// Hidden state 0 = unlearned, 1 = learned.
#[inline]
fn emission(p: &BktParams, state: usize, correct: bool) -> f64 {
    match (state, correct) {
        (0, true) => p.guess,
        (0, false) => 1.0 - p.guess,
        (_, true) => 1.0 - p.slip,
        (_, false) => p.slip,
    }
}

/// Scaled forward pass. Returns the sequence log-likelihood and, when
/// `alphas` is given, the normalized filtered state distributions and the
/// per-step scale factors.
fn forward(p: &BktParams, seq: &[bool], mut trace: Option<(&mut Vec<[f64; 2]>, &mut Vec<f64>)>) -> f64 {
    let mut ll = 0.0;
    let mut a = [1.0 - p.l0, p.l0];
    for (t, &y) in seq.iter().enumerate() {
        if t > 0 {
            a = [a[0] * (1.0 - p.learn), a[1] + a[0] * p.learn];
        }
        let w = [a[0] * emission(p, 0, y), a[1] * emission(p, 1, y)];
        let c = w[0] + w[1];
        a = [w[0] / c, w[1] / c];
        ll += c.ln();
        if let Some((alphas, scales)) = trace.as_mut() {
            alphas.push(a);
            scales.push(c);
        }
    }
    ll
}

/// Log-likelihood of one outcome sequence by the forward algorithm.
pub fn sequence_log_likelihood(params: &BktParams, seq: &[bool]) -> f64 {
    forward(params, seq, None)
}

#[derive(Default)]
struct Counts {
    l0: [f64; 2],
    learn: [f64; 2],
    slip: [f64; 2],
    guess: [f64; 2],
}

impl Counts {
    fn add(&mut self, o: &Counts) {
        for (a, b) in [
            (&mut self.l0, &o.l0),
            (&mut self.learn, &o.learn),
            (&mut self.slip, &o.slip),
            (&mut self.guess, &o.guess),
        ] {
            a[0] += b[0];
            a[1] += b[1];
        }
    }
}

/// E-step for one sequence: expected sufficient statistics as
/// (numerator, denominator) pairs, plus the sequence log-likelihood.
fn expectations(
    p: &BktParams,
    seq: &[bool],
    alphas: &mut Vec<[f64; 2]>,
    scales: &mut Vec<f64>,
) -> (Counts, f64) {
    alphas.clear();
    scales.clear();
    let ll = forward(p, seq, Some((alphas, scales)));
    let n = seq.len();
    let mut c = Counts::default();
    let mut beta = [1.0, 1.0];
    for t in (0..n).rev() {
        let a = alphas[t];
        let gamma = [a[0] * beta[0], a[1] * beta[1]];
        let y = seq[t];
        c.slip[1] += gamma[1];
        if !y {
            c.slip[0] += gamma[1];
        }
        c.guess[1] += gamma[0];
        if y {
            c.guess[0] += gamma[0];
        }
        if t == 0 {
            c.l0 = [gamma[1], 1.0];
        } else {
            // transition t-1 -> t
            let prev = alphas[t - 1];
            let e = [emission(p, 0, y), emission(p, 1, y)];
            let s = scales[t];
            let xi_01 = prev[0] * p.learn * e[1] * beta[1] / s;
            c.learn[0] += xi_01;
            let next_beta = [
                ((1.0 - p.learn) * e[0] * beta[0] + p.learn * e[1] * beta[1]) / s,
                e[1] * beta[1] / s,
            ];
            c.learn[1] += prev[0] * next_beta[0];
            beta = next_beta;
        }
    }
    (c, ll)
}

fn m_step(counts: &Counts, current: &BktParams) -> BktParams {
    let ratio = |nd: [f64; 2], fallback: f64| if nd[1] > 0.0 { nd[0] / nd[1] } else { fallback };
    BktParams {
        l0: ratio(counts.l0, current.l0),
        learn: ratio(counts.learn, current.learn),
        slip: ratio(counts.slip, current.slip),
        guess: ratio(counts.guess, current.guess),
    }
    // Each field's expected complete-data log-likelihood is a*ln(p) +
    // b*ln(1-p), so clamping the unconstrained maximizer gives the
    // constrained one.
    .clamped()
}

fn run_em(start: BktParams, sequences: &[Vec<bool>], cfg: &FitConfig) -> FitResult {
    let mut params = start.clamped();
    let mut history = Vec::new();
    let mut alphas = Vec::new();
    let mut scales = Vec::new();
    let mut iterations = 0;
    loop {
        let mut total = Counts::default();
        let mut ll = 0.0;
        for seq in sequences {
            let (c, l) = expectations(&params, seq, &mut alphas, &mut scales);
            total.add(&c);
            ll += l;
        }
        if let Some(&prev) = history.last() {
            if ll - prev < cfg.tolerance || iterations >= cfg.max_iterations {
                history.push(ll);
                return FitResult {
                    params,
                    log_likelihood: ll,
                    iterations,
                    history,
                };
            }
        }
        history.push(ll);
        params = m_step(&total, &params);
        iterations += 1;
    }
}

/// Fits one skill's parameters to per-student outcome sequences.
///
/// Runs `cfg.restarts` EM chains from starting points drawn with
/// `cfg.seed` and keeps the highest final log-likelihood (earliest restart
/// on ties).
pub fn fit_parameters(sequences: &[Vec<bool>], cfg: &FitConfig) -> Result<FitResult> {
    let data: Vec<Vec<bool>> = sequences.iter().filter(|s| !s.is_empty()).cloned().collect();
    if data.is_empty() {
        return Err(Error::InsufficientData(
            "need at least one non-empty outcome sequence".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<FitResult> = None;
    for _ in 0..cfg.restarts.max(1) {
        let start = BktParams {
            l0: rng.random_range(0.05..0.95),
            learn: rng.random_range(0.02..0.5),
            slip: rng.random_range(0.02..0.3),
            guess: rng.random_range(0.02..0.4),
        };
        let res = run_em(start, &data, cfg);
        if best.as_ref().is_none_or(|b| res.log_likelihood > b.log_likelihood) {
            best = Some(res);
        }
    }
    Ok(best.expect("at least one restart"))
}

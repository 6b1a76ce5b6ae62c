//! Run configuration: built-in defaults, overridden by a JSON config file,
//! overridden by command-line flags.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tutorflow_core::allocation::{EngagementCurve, ObjectiveMode, SolverOptions};
use tutorflow_core::bkt::{BktParams, FitConfig};
use tutorflow_core::flywheel::{Bands, FlywheelConfig};
use tutorflow_core::signal::{DEFAULT_ALPHA, DEFAULT_WINDOW};

use crate::error::{AppError, AppResult};
use crate::formats::read_json;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub restarts: Option<usize>,
    pub max_iterations: Option<usize>,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub students: Option<usize>,
    pub steps: Option<usize>,
    pub params: Option<BTreeMap<String, BktParams>>,
}

/// Contents of a `--config` file; every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub train_fraction: Option<f64>,
    pub alpha: Option<f64>,
    pub window: Option<usize>,
    pub objective: Option<ObjectiveMode>,
    pub max_errors: Option<usize>,
    pub learning_rate: Option<f64>,
    pub regularization: Option<f64>,
    pub bands: Option<Bands>,
    pub engagement: Option<EngagementCurve>,
    pub fit: Option<FitSection>,
    pub fallback: Option<BktParams>,
    pub solver: Option<SolverOptions>,
    pub simulate: Option<SimulateSection>,
}

/// Values given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub train_fraction: Option<f64>,
    pub alpha: Option<f64>,
    pub window: Option<usize>,
    pub objective: Option<ObjectiveMode>,
    pub max_errors: Option<usize>,
    pub students: Option<usize>,
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Simulation {
    pub students: usize,
    pub steps: usize,
    pub params: BTreeMap<String, BktParams>,
}

/// Fully resolved configuration, echoed into every manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Effective {
    pub seed: u64,
    /// 0 lets the thread pool pick.
    pub threads: usize,
    pub train_fraction: f64,
    /// Overrides the problem file's objective when set.
    pub objective: Option<ObjectiveMode>,
    /// `None` means unlimited.
    pub max_errors: Option<usize>,
    pub fit: FitConfig,
    pub fallback: BktParams,
    pub flywheel: FlywheelConfig,
    pub solver: SolverOptions,
    pub simulate: Simulation,
}

pub fn default_truth() -> BTreeMap<String, BktParams> {
    let mut m = BTreeMap::new();
    m.insert("k1".to_string(), BktParams { l0: 0.3, learn: 0.2, slip: 0.1, guess: 0.2 });
    m
}

impl Effective {
    pub fn resolve(file: Option<&Path>, flags: &Overrides) -> AppResult<Self> {
        let cfg: ConfigFile = match file {
            Some(p) => read_json(p)?,
            None => ConfigFile::default(),
        };
        let fit_file = cfg.fit.clone().unwrap_or_default();
        let sim_file = cfg.simulate.clone().unwrap_or_default();
        let seed = flags.seed.or(cfg.seed).unwrap_or(0);
        let defaults = FitConfig::default();
        let fit = FitConfig {
            restarts: fit_file.restarts.unwrap_or(defaults.restarts),
            max_iterations: fit_file.max_iterations.unwrap_or(defaults.max_iterations),
            tolerance: fit_file.tolerance.unwrap_or(defaults.tolerance),
            seed,
        };
        let fdef = FlywheelConfig::default();
        let flywheel = FlywheelConfig {
            alpha: flags.alpha.or(cfg.alpha).unwrap_or(DEFAULT_ALPHA),
            window: flags.window.or(cfg.window).unwrap_or(DEFAULT_WINDOW),
            learning_rate: cfg.learning_rate.unwrap_or(fdef.learning_rate),
            regularization: cfg.regularization.unwrap_or(fdef.regularization),
            bands: cfg.bands.unwrap_or(fdef.bands),
            engagement: cfg.engagement.unwrap_or(fdef.engagement),
        };
        let eff = Self {
            seed,
            threads: flags.threads.or(cfg.threads).unwrap_or(0),
            train_fraction: flags.train_fraction.or(cfg.train_fraction).unwrap_or(0.8),
            objective: flags.objective.or(cfg.objective),
            max_errors: flags.max_errors.or(cfg.max_errors),
            fit,
            fallback: cfg.fallback.unwrap_or_default(),
            flywheel,
            solver: cfg.solver.unwrap_or_default(),
            simulate: Simulation {
                students: flags.students.or(sim_file.students).unwrap_or(500),
                steps: flags.steps.or(sim_file.steps).unwrap_or(50),
                params: sim_file.params.unwrap_or_else(default_truth),
            },
        };
        eff.validate()?;
        Ok(eff)
    }

    fn validate(&self) -> AppResult<()> {
        let bad = |m: String| Err(AppError::Validation(m));
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad(format!("train_fraction {} not in (0, 1]", self.train_fraction));
        }
        if !(0.0..=1.0).contains(&self.flywheel.alpha) {
            return bad(format!("alpha {} not in [0, 1]", self.flywheel.alpha));
        }
        if self.flywheel.window == 0 {
            return bad("window must be at least 1".into());
        }
        self.flywheel.validate()?;
        if self.fit.restarts == 0 || self.fit.max_iterations == 0 || !(self.fit.tolerance > 0.0) {
            return bad("fit needs restarts >= 1, max_iterations >= 1 and tolerance > 0".into());
        }
        self.fallback.validate()?;
        let b = &self.solver.barrier;
        if !(b.mu > 1.0) || !(b.gap_tolerance > 0.0) || !(b.newton_tolerance > 0.0) {
            return bad("solver needs mu > 1 and positive tolerances".into());
        }
        if self.simulate.params.is_empty() {
            return bad("simulate.params must name at least one skill".into());
        }
        Ok(())
    }
}

//! Loss assembly, ray batching and the optimisation loop.

mod loss;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use loss::{
    ball_points, color_loss, eikonal_deviation, eikonal_loss, eikonal_residual, evaluate, plan_batch, BatchPlan, LossParts,
    RayDecision, RayPlan, RaySpec,
};

use crate::consistency::ConsistencyConfig;
use crate::field::checkpoint::save_checkpoint;
use crate::field::{FieldArch, FieldError, FieldParams};
use crate::optim::{Adam, LrSchedule};
use crate::renderer::SampleCounts;
use crate::scene::Scene;

pub const METRICS_HEADER: &str = "step,L_color,L_eik,L_feat,L,lr,crossing_frac";
const EMA_DECAY: f64 = 0.9;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: FieldArch,
    pub steps: usize,
    pub warmup_steps: usize,
    pub rays_per_batch: usize,
    pub eikonal_points: usize,
    pub samples: SampleCounts,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub consistency: ConsistencyConfig,
    /// Steps between intermediate checkpoints; 0 disables them.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl TrainConfig {
    /// Full-size settings.
    pub fn paper() -> Self {
        Self {
            arch: FieldArch::default(),
            steps: 300_000,
            warmup_steps: 5_000,
            rays_per_batch: 512,
            eikonal_points: 512,
            samples: SampleCounts::default(),
            lambda1: 0.1,
            lambda2: 0.5,
            lr_peak: 5e-3,
            lr_final: 2.5e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            consistency: ConsistencyConfig::default(),
            checkpoint_every: 10_000,
        }
    }

    /// Settings sized for a few minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            arch: FieldArch::desk(),
            steps: 3000,
            warmup_steps: 100,
            rays_per_batch: 64,
            eikonal_points: 128,
            samples: SampleCounts { coarse: 32, fine: 32 },
            checkpoint_every: 1000,
            ..Self::paper()
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule { peak: self.lr_peak, min: self.lr_final, warmup_steps: self.warmup_steps, total_steps: self.steps }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        self.schedule().lr_at(step)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad(format!("loss weights must be non-negative, got {} and {}", self.lambda1, self.lambda2));
        }
        if !(self.lr_final <= self.lr_peak && self.lr_final >= 0.0) {
            return bad(format!("need 0 <= lr_final <= lr_peak, got {} and {}", self.lr_final, self.lr_peak));
        }
        if self.warmup_steps > self.steps {
            return bad(format!("warmup {} exceeds step budget {}", self.warmup_steps, self.steps));
        }
        if self.rays_per_batch == 0 || self.samples.coarse < 2 {
            return bad("need at least one ray and two coarse samples".into());
        }
        self.consistency.validate().map_err(TrainError::InvalidConfig)
    }
}

/// One line of training telemetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub color: f64,
    pub eikonal: f64,
    pub feature: f64,
    pub total: f64,
    pub lr: f64,
    pub crossing_frac: f64,
    pub ema_color: f64,
    pub ema_eikonal: f64,
    pub ema_feature: f64,
    pub ema_total: f64,
}

impl StepReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.color, self.eikonal, self.feature, self.total, self.lr, self.crossing_frac
        )
    }
}

/// `L_color + l1 * L_eik + l2 * L_feat`.
pub fn total_loss(color: f64, eikonal: f64, feature: f64, lambda1: f64, lambda2: f64) -> f64 {
    color + lambda1 * eikonal + lambda2 * feature
}

/// How a [`Trainer::run`] ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    Finished,
    Interrupted { at_step: usize },
}

pub struct Trainer<'a> {
    scene: &'a Scene,
    cfg: TrainConfig,
    params: FieldParams,
    adam: Adam,
    grad: Vec<f64>,
    step: usize,
    ema: Option<[f64; 4]>,
    decisions: Vec<RayDecision>,
}

impl<'a> Trainer<'a> {
    pub fn new(scene: &'a Scene, cfg: TrainConfig) -> Result<Self, TrainError> {
        let params = FieldParams::new(cfg.arch, cfg.seed);
        Self::with_params(scene, cfg, params)
    }

    pub fn with_params(scene: &'a Scene, cfg: TrainConfig, params: FieldParams) -> Result<Self, TrainError> {
        cfg.validate()?;
        if scene.n_views() == 0 {
            return Err(TrainError::InvalidConfig("scene has no views".into()));
        }
        if *params.arch() != cfg.arch {
            return Err(TrainError::InvalidConfig("parameter architecture differs from config".into()));
        }
        let mut adam = Adam::new(params.len());
        adam.beta1 = cfg.beta1;
        adam.beta2 = cfg.beta2;
        adam.eps = cfg.adam_eps;
        let grad = params.zero_grad();
        Ok(Self { scene, cfg, params, adam, grad, step: 0, ema: None, decisions: Vec::new() })
    }

    pub fn params(&self) -> &FieldParams {
        &self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    /// Per-ray choices made during the most recent step.
    pub fn last_decisions(&self) -> &[RayDecision] {
        &self.decisions
    }

    /// Loss of the batch that step `step` would draw, without updating.
    pub fn probe(&self, step: usize) -> LossParts {
        let plan = plan_batch(&self.params, self.scene, &self.cfg, step);
        evaluate(&self.params, self.scene, &self.cfg, &plan, None, None).0
    }

    /// One optimisation step.
    pub fn step(&mut self) -> StepReport {
        let plan = plan_batch(&self.params, self.scene, &self.cfg, self.step);
        let (parts, decisions) = evaluate(&self.params, self.scene, &self.cfg, &plan, None, Some(&mut self.grad));
        self.decisions = decisions;
        let lr = self.cfg.lr_at(self.step);
        self.adam.update(&mut self.params.values, &self.grad, lr);
        let now = [parts.color, parts.eikonal, parts.feature, parts.total];
        let ema = match self.ema {
            None => now,
            Some(prev) => std::array::from_fn(|i| EMA_DECAY * prev[i] + (1.0 - EMA_DECAY) * now[i]),
        };
        self.ema = Some(ema);
        let report = StepReport {
            step: self.step,
            color: parts.color,
            eikonal: parts.eikonal,
            feature: parts.feature,
            total: parts.total,
            lr,
            crossing_frac: parts.crossing_frac,
            ema_color: ema[0],
            ema_eikonal: ema[1],
            ema_feature: ema[2],
            ema_total: ema[3],
        };
        self.step += 1;
        report
    }

    /// Trains up to the configured step budget, writing `metrics.csv`,
    /// periodic `checkpoint_{step}.nsrw` files and a final `checkpoint.nsrw`
    /// into `out`. When `stop` becomes set the current parameters are
    /// flushed and the run ends early.
    pub fn run(
        &mut self,
        out: &Path,
        stop: Option<&AtomicBool>,
        mut on_report: impl FnMut(&StepReport),
    ) -> Result<RunOutcome, TrainError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| TrainError::Io { path, source }
        };
        std::fs::create_dir_all(out).map_err(io(out))?;
        let metrics_path = out.join("metrics.csv");
        let mut metrics = BufWriter::new(File::create(&metrics_path).map_err(io(&metrics_path))?);
        writeln!(metrics, "{METRICS_HEADER}").map_err(io(&metrics_path))?;
        let mut outcome = RunOutcome::Finished;
        while self.step < self.cfg.steps {
            if stop.is_some_and(|s| s.load(Ordering::SeqCst)) {
                outcome = RunOutcome::Interrupted { at_step: self.step };
                break;
            }
            let report = self.step();
            writeln!(metrics, "{}", report.csv_row()).map_err(io(&metrics_path))?;
            on_report(&report);
            if self.cfg.checkpoint_every > 0 && self.step.is_multiple_of(self.cfg.checkpoint_every) && self.step < self.cfg.steps {
                metrics.flush().map_err(io(&metrics_path))?;
                save_checkpoint(&self.params, &out.join(format!("checkpoint_{:06}.nsrw", self.step)))?;
            }
        }
        metrics.flush().map_err(io(&metrics_path))?;
        save_checkpoint(&self.params, &out.join("checkpoint.nsrw"))?;
        Ok(outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::paper();
        assert_eq!((c.lambda1, c.lambda2), (0.1, 0.5));
        assert_eq!(c.rays_per_batch, 512);
        assert_eq!((c.lr_peak, c.lr_final), (5e-3, 2.5e-5));
        assert_eq!((c.beta1, c.beta2, c.adam_eps), (0.9, 0.999, 1e-8));
        let d = TrainConfig::desk();
        assert_eq!((d.steps, d.warmup_steps), (3000, 100));
        assert!(c.validate().is_ok() && d.validate().is_ok());
    }

    #[test]
    fn schedule_endpoints() {
        let d = TrainConfig::desk();
        assert_eq!(d.lr_at(0), 0.0);
        assert!((d.lr_at(100) - 5e-3).abs() < 1e-15);
        assert!((d.lr_at(3000) - 2.5e-5).abs() < 1e-15);
    }

    #[test]
    fn total_arithmetic() {
        assert!((total_loss(0.4, 0.2, 0.1, 0.1, 0.5) - 0.47).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = TrainConfig::desk();
        c.lambda2 = -1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::desk();
        c.lr_final = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::desk();
        c.warmup_steps = c.steps + 1;
        assert!(c.validate().is_err());
    }
}

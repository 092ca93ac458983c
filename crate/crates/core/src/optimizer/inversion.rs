//! Scene inversion: Adam on raw volume parameters against the weighted loss.

use std::io::Write;

use crate::geometry::PinholeCamera;
use crate::render::RenderConfig;
use crate::volume::{CanonicalVolume, RenderCube};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState, DEFAULT_LR};
use super::losses::{DEFAULT_PYRAMID, INIT_DENSITY_THRESHOLD};
use super::objective::{LossBreakdown, LossWeights, Objective, TargetView};
use super::params::VolumeParams;
use super::LossError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub steps: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    /// Std of the Gaussian noise added to raw parameters before each forward
    /// pass; decays linearly to zero at `exploration_until`.
    pub exploration_noise: f64,
    pub exploration_until: usize,
    /// Steps over which the render density noise decays linearly to zero.
    pub density_noise_decay_steps: usize,
    pub bkg_decay: f64,
    pub bkg_decay_every: usize,
    pub render: RenderConfig,
    pub weights: LossWeights,
    pub pyramid: Vec<usize>,
    pub init_threshold: f64,
    pub seed: u64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            lr: DEFAULT_LR,
            lr_decay: 0.1,
            lr_decay_every: 750,
            beta1: 0.5,
            beta2: 0.999,
            exploration_noise: 0.5,
            exploration_until: 1500,
            density_noise_decay_steps: 100_000,
            bkg_decay: 0.8,
            bkg_decay_every: 10,
            render: RenderConfig::default(),
            weights: LossWeights::default(),
            pyramid: DEFAULT_PYRAMID.to_vec(),
            init_threshold: INIT_DENSITY_THRESHOLD,
            seed: 0,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        self.weights.validate()?;
        self.render.validate()?;
        let bad = |what: &str| Err(LossError::InvalidConfig(what.into()));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("learning rate must be positive");
        }
        if self.lr_decay_every == 0 || self.bkg_decay_every == 0 {
            return bad("decay intervals must be >= 1");
        }
        if !(self.exploration_noise >= 0.0) {
            return bad("exploration noise must be >= 0");
        }
        Ok(())
    }

    /// Learning rate in effect at `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let mut lr = self.lr;
        for _ in 0..step / self.lr_decay_every {
            lr *= self.lr_decay;
        }
        lr
    }

    pub fn exploration_std_at(&self, step: usize) -> f64 {
        if self.exploration_until == 0 {
            return 0.0;
        }
        self.exploration_noise * (1.0 - step as f64 / self.exploration_until as f64).max(0.0)
    }

    /// Background-loss weight after `epoch` passes over the targets.
    pub fn bkg_weight_at(&self, epoch: usize) -> f64 {
        let mut w = self.weights.w_bkg;
        for _ in 0..epoch / self.bkg_decay_every {
            w *= self.bkg_decay;
        }
        w
    }

    pub fn density_noise_at(&self, step: usize) -> f64 {
        if self.density_noise_decay_steps == 0 {
            return 0.0;
        }
        self.render.density_noise_sigma * (1.0 - step as f64 / self.density_noise_decay_steps as f64).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct InversionResult {
    pub volume: CanonicalVolume,
    pub trace: Vec<LossRecord>,
}

/// Writes `step,total,rec,bkg,eq,proj,init,geo` rows.
pub fn write_loss_trace<W: Write>(mut out: W, trace: &[LossRecord]) -> std::io::Result<()> {
    writeln!(out, "step,total,rec,bkg,eq,proj,init,geo")?;
    for r in trace {
        let l = &r.loss;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.step, l.total, l.rec, l.bkg, l.eq, l.proj, l.init, l.geo
        )?;
    }
    Ok(())
}

/// Fits the volume to the targets. Each step is one pass over all targets;
/// the recorded loss is the one the step's gradient was taken at.
pub fn invert_scene(
    targets: &[TargetView],
    init: &CanonicalVolume,
    cam: &PinholeCamera,
    cube: &RenderCube,
    cfg: &InversionConfig,
    geo_reference: Option<&CanonicalVolume>,
) -> Result<InversionResult, LossError> {
    invert_scene_with(targets, init, cam, cube, cfg, geo_reference, |_| {})
}

/// As `invert_scene`, calling `progress` after every step.
#[allow(clippy::too_many_arguments)]
pub fn invert_scene_with(
    targets: &[TargetView],
    init: &CanonicalVolume,
    cam: &PinholeCamera,
    cube: &RenderCube,
    cfg: &InversionConfig,
    geo_reference: Option<&CanonicalVolume>,
    mut progress: impl FnMut(&LossRecord),
) -> Result<InversionResult, LossError> {
    cfg.validate()?;
    if targets.is_empty() {
        return Err(LossError::InvalidConfig("no target views".into()));
    }
    if cfg.steps == 0 {
        return Ok(InversionResult {
            volume: init.clone(),
            trace: Vec::new(),
        });
    }
    let mut params = VolumeParams::from_volume(init);
    let mut adam = AdamState::new(params.len(), cfg.lr);
    adam.beta1 = cfg.beta1;
    adam.beta2 = cfg.beta2;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut obj = Objective::new(*cam, *cube, cfg.render);
    obj.pyramid = cfg.pyramid.clone();
    obj.init_threshold = cfg.init_threshold;
    obj.geo_reference = geo_reference;
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        obj.weights = cfg.weights;
        obj.weights.w_bkg = cfg.bkg_weight_at(step);
        obj.render.density_noise_sigma = cfg.density_noise_at(step);
        obj.render.seed = cfg.render.seed.wrapping_add((step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));

        let std = cfg.exploration_std_at(step);
        let (loss, grad) = if std > 0.0 {
            let normal = Normal::new(0.0, std).expect("finite std");
            let mut noisy = params.clone();
            noisy.values.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
            obj.loss_and_grad(&noisy, targets)?
        } else {
            obj.loss_and_grad(&params, targets)?
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(LossError::NonFinite { step });
        }
        adam.lr = cfg.lr_at(step);
        adam_step(&mut params.values, &grad, &mut adam)?;
        if params.values.iter().any(|v| !v.is_finite()) {
            return Err(LossError::NonFinite { step });
        }
        let record = LossRecord { step, loss };
        progress(&record);
        trace.push(record);
    }
    Ok(InversionResult {
        volume: params.to_volume(),
        trace,
    })
}

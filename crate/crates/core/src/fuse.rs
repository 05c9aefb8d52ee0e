//! Per-frame class likelihoods and their Bayesian accumulation along a track.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SplitMix64;
use crate::species::{Species, NUM_CLASSES};

pub const POSTERIOR_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FuseError {
    #[error("likelihood has no positive mass: {0:?}")]
    DegenerateLikelihood([f64; NUM_CLASSES]),
    #[error("invalid confusion model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassPosterior {
    pub p: [f64; NUM_CLASSES],
}

impl ClassPosterior {
    pub fn uniform() -> Self {
        Self {
            p: [1.0 / NUM_CLASSES as f64; NUM_CLASSES],
        }
    }

    /// Normalizes and floors an arbitrary non-negative vector.
    pub fn from_weights(w: [f64; NUM_CLASSES]) -> Result<Self, FuseError> {
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().all(|v| *v <= 0.0) {
            return Err(FuseError::DegenerateLikelihood(w));
        }
        let s: f64 = w.iter().sum();
        Ok(Self {
            p: apply_floor(w.map(|v| v / s)),
        })
    }

    pub fn get(&self, s: Species) -> f64 {
        self.p[s.index()]
    }

    pub fn kite(&self) -> f64 {
        self.get(Species::Kite)
    }

    /// Highest-probability class; ties resolve to the lower class index.
    pub fn argmax(&self) -> Species {
        let mut best = 0;
        for i in 1..NUM_CLASSES {
            if self.p[i] > self.p[best] {
                best = i;
            }
        }
        Species::from_index(best)
    }
}

impl Default for ClassPosterior {
    fn default() -> Self {
        Self::uniform()
    }
}

/// Pins components below the floor to it and rescales the rest so the
/// vector still sums to one.
fn apply_floor(mut p: [f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let mut pinned = [false; NUM_CLASSES];
    loop {
        let mut changed = false;
        for i in 0..NUM_CLASSES {
            if !pinned[i] && p[i] < POSTERIOR_FLOOR {
                pinned[i] = true;
                changed = true;
            }
        }
        let n_pinned = pinned.iter().filter(|&&b| b).count();
        let free: f64 = (0..NUM_CLASSES).filter(|&i| !pinned[i]).map(|i| p[i]).sum();
        let target = 1.0 - n_pinned as f64 * POSTERIOR_FLOOR;
        for i in 0..NUM_CLASSES {
            p[i] = if pinned[i] { POSTERIOR_FLOOR } else { p[i] * target / free };
        }
        if !changed {
            return p;
        }
    }
}

/// Bayes product rule in log space with likelihood tempering `beta`.
pub fn bayes_update(
    posterior: &ClassPosterior,
    likelihood: &[f64; NUM_CLASSES],
    beta: f64,
) -> Result<ClassPosterior, FuseError> {
    if likelihood.iter().any(|v| !v.is_finite() || *v < 0.0) || likelihood.iter().all(|v| *v <= 0.0)
    {
        return Err(FuseError::DegenerateLikelihood(*likelihood));
    }
    let mut logs = [0.0; NUM_CLASSES];
    for i in 0..NUM_CLASSES {
        logs[i] = posterior.p[i].ln() + beta * likelihood[i].ln();
    }
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w = logs.map(|l| (l - m).exp());
    let s: f64 = w.iter().sum();
    Ok(ClassPosterior {
        p: apply_floor(w.map(|v| v / s)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodMode {
    /// Column of the confusion matrix for the reported class.
    #[default]
    Column,
    /// Indicator of the reported class.
    OneHot,
}

/// Row `i` is the distribution of reported classes for true class `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionModel {
    pub near: [[f64; NUM_CLASSES]; NUM_CLASSES],
    pub far: [[f64; NUM_CLASSES]; NUM_CLASSES],
    pub d_near: f64,
    pub d_far: f64,
}

fn symmetric_matrix(accuracy: f64) -> [[f64; NUM_CLASSES]; NUM_CLASSES] {
    let off = (1.0 - accuracy) / (NUM_CLASSES - 1) as f64;
    let mut m = [[off; NUM_CLASSES]; NUM_CLASSES];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = accuracy;
    }
    m
}

impl ConfusionModel {
    /// Same symmetric matrix at every size.
    pub fn symmetric(accuracy: f64) -> Self {
        let m = symmetric_matrix(accuracy);
        Self {
            near: m,
            far: m,
            d_near: 16.0,
            d_far: 4.0,
        }
    }

    pub fn identity() -> Self {
        Self::symmetric(1.0)
    }

    pub fn from_json(text: &str) -> Result<Self, FuseError> {
        let m: Self = serde_json::from_str(text).map_err(|e| FuseError::InvalidModel(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), FuseError> {
        for (name, m) in [("near", &self.near), ("far", &self.far)] {
            for (i, row) in m.iter().enumerate() {
                if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(FuseError::InvalidModel(format!("{name} row {i} has a negative entry")));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(FuseError::InvalidModel(format!("{name} row {i} sums to {s}")));
                }
            }
        }
        for i in 0..NUM_CLASSES {
            if self.near[i][i] < self.far[i][i] {
                return Err(FuseError::InvalidModel(format!(
                    "near diagonal {i} below far diagonal"
                )));
            }
        }
        if !(self.d_near > self.d_far && self.d_far > 0.0) {
            return Err(FuseError::InvalidModel("need d_near > d_far > 0".into()));
        }
        Ok(())
    }

    /// Interpolation weight toward the near matrix for a blob diagonal.
    pub fn near_weight(&self, diag: f64) -> f64 {
        ((diag - self.d_far) / (self.d_near - self.d_far)).clamp(0.0, 1.0)
    }

    pub fn effective(&self, diag: f64) -> [[f64; NUM_CLASSES]; NUM_CLASSES] {
        let w = self.near_weight(diag);
        let mut m = self.far;
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += w * (self.near[i][j] - self.far[i][j]);
            }
        }
        m
    }
}

impl Default for ConfusionModel {
    fn default() -> Self {
        Self {
            near: symmetric_matrix(0.982),
            far: symmetric_matrix(0.85),
            d_near: 16.0,
            d_far: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassReport {
    pub reported: Species,
    pub likelihood: [f64; NUM_CLASSES],
}

/// Draws a reported class for one observation and returns the likelihood it
/// induces; the stream is keyed by `(seed, key...)`.
pub fn synthetic_classify(
    truth: Species,
    diag: f64,
    model: &ConfusionModel,
    mode: LikelihoodMode,
    seed: u64,
    key: &[u64],
) -> ClassReport {
    let m = model.effective(diag);
    let row = &m[truth.index()];
    let u = SplitMix64::stream(seed, key).next_f64();
    let mut acc = 0.0;
    let mut reported = NUM_CLASSES - 1;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            reported = j;
            break;
        }
    }
    let likelihood = match mode {
        LikelihoodMode::Column => std::array::from_fn(|i| m[i][reported]),
        LikelihoodMode::OneHot => std::array::from_fn(|i| if i == reported { 1.0 } else { 0.0 }),
    };
    ClassReport {
        reported: Species::from_index(reported),
        likelihood,
    }
}

/// Seconds from `confirmed_s` until the true-class posterior first reaches
/// `threshold`. Samples before confirmation are ignored.
pub fn time_to_confidence(
    series: &[(f64, ClassPosterior)],
    truth: Species,
    confirmed_s: f64,
    threshold: f64,
) -> Option<f64> {
    assert!(threshold > 0.0 && threshold < 1.0);
    series
        .iter()
        .find(|(t, p)| *t >= confirmed_s && p.get(truth) >= threshold)
        .map(|(t, _)| t - confirmed_s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionSettings {
    pub beta: f64,
    pub mode: LikelihoodMode,
}

impl Default for FusionSettings {
    fn default() -> Self {
        Self {
            beta: 1.0,
            mode: LikelihoodMode::Column,
        }
    }
}

/// Posterior after each of `frames` independent observations of one track.
pub fn simulate_track(
    truth: Species,
    diag: f64,
    model: &ConfusionModel,
    settings: FusionSettings,
    frames: usize,
    seed: u64,
    track: u64,
) -> Vec<ClassPosterior> {
    let mut post = ClassPosterior::uniform();
    let mut out = Vec::with_capacity(frames);
    for k in 0..frames {
        let r = synthetic_classify(truth, diag, model, settings.mode, seed, &[0xc1a55, track, k as u64]);
        post = bayes_update(&post, &r.likelihood, settings.beta).expect("model rows are positive");
        out.push(post);
    }
    out
}

pub fn write_posterior_csv<W: std::io::Write>(
    w: W,
    series: &[(f64, ClassPosterior)],
) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["t_s".to_string()];
    header.extend(Species::ALL.iter().map(|s| s.name().to_lowercase()));
    wr.write_record(&header)?;
    for (t, p) in series {
        let mut rec = vec![format!("{t}")];
        rec.extend(p.p.iter().map(|v| format!("{v}")));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

//! Labeled samples, datasets, loss functions and the model / loss-oracle
//! contracts consumed by the rest of the crate.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A feature vector with its label. Classification labels are stored as
/// integer-valued reals so one type serves both tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample<T> {
    pub features: Vec<T>,
    pub label: T,
    pub id: Option<String>,
}

impl<T: Real> LabeledSample<T> {
    pub fn new(features: Vec<T>, label: T) -> Self {
        Self {
            features,
            label,
            id: None,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    fn is_finite(&self) -> bool {
        self.label.is_finite() && self.features.iter().all(|v| v.is_finite())
    }
}

/// Ordered collection of samples sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    samples: Vec<LabeledSample<T>>,
    dim: usize,
}

impl<T: Real> Dataset<T> {
    pub fn empty(dim: usize) -> Self {
        Self {
            samples: Vec::new(),
            dim,
        }
    }

    /// Builds a dataset, checking the shared dimension and finiteness.
    pub fn new(dim: usize, samples: Vec<LabeledSample<T>>) -> Result<Self> {
        for s in &samples {
            if s.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.dim(),
                });
            }
            if !s.is_finite() {
                return Err(Error::InvalidInput(
                    "sample contains a non-finite value".into(),
                ));
            }
        }
        Ok(Self { samples, dim })
    }

    pub fn push(&mut self, sample: LabeledSample<T>) -> Result<()> {
        if sample.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: sample.dim(),
            });
        }
        if !sample.is_finite() {
            return Err(Error::InvalidInput(
                "sample contains a non-finite value".into(),
            ));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[LabeledSample<T>] {
        &self.samples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledSample<T>> {
        self.samples.iter()
    }

    pub fn into_samples(self) -> Vec<LabeledSample<T>> {
        self.samples
    }

    pub fn labels(&self) -> impl Iterator<Item = T> + '_ {
        self.samples.iter().map(|s| s.label)
    }

    /// First `n` samples (or all of them).
    pub fn head(&self, n: usize) -> Self {
        Self {
            samples: self.samples.iter().take(n).cloned().collect(),
            dim: self.dim,
        }
    }

    /// Assigns `"{prefix}{index}"` ids to every sample lacking one.
    pub fn fill_ids(&mut self, prefix: &str) {
        for (i, s) in self.samples.iter_mut().enumerate() {
            if s.id.is_none() {
                s.id = Some(format!("{prefix}{i}"));
            }
        }
    }
}

impl<'a, T> IntoIterator for &'a Dataset<T> {
    type Item = &'a LabeledSample<T>;
    type IntoIter = std::slice::Iter<'a, LabeledSample<T>>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

/// Converts an integer-valued label to a class index.
pub fn class_index<T: Real>(label: T) -> Option<usize> {
    let r = label.round();
    if !label.is_finite() || r < T::zero() || (label - r).abs() > T::from_f64_lossy(1e-6) {
        return None;
    }
    r.to_usize()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    ZeroOne,
    MeanAbsoluteError,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::ZeroOne => f.write_str("zero-one"),
            LossKind::MeanAbsoluteError => f.write_str("mae"),
        }
    }
}

/// Per-sample loss of `prediction` against `label`.
pub fn loss<T: Real>(kind: LossKind, prediction: T, label: T) -> Result<T> {
    if !prediction.is_finite() || !label.is_finite() {
        return Err(Error::InvalidInput("non-finite prediction or label".into()));
    }
    Ok(match kind {
        LossKind::ZeroOne => {
            if prediction == label {
                T::zero()
            } else {
                T::one()
            }
        }
        LossKind::MeanAbsoluteError => (prediction - label).abs(),
    })
}

/// A deterministic predictor over a fixed feature dimension.
pub trait Predictor<T: Real>: Send + Sync {
    fn dim(&self) -> usize;

    fn predict(&self, features: &[T]) -> Result<T>;
}

/// Shared handle to a fitted predictor.
#[derive(Clone)]
pub struct ModelHandle<T> {
    predictor: Arc<dyn Predictor<T>>,
    name: String,
}

impl<T: Real> ModelHandle<T> {
    pub fn new(name: impl Into<String>, predictor: impl Predictor<T> + 'static) -> Self {
        Self {
            predictor: Arc::new(predictor),
            name: name.into(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.predictor.dim()
    }

    pub fn predict(&self, features: &[T]) -> Result<T> {
        if features.len() != self.predictor.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.predictor.dim(),
                got: features.len(),
            });
        }
        self.predictor.predict(features)
    }
}

impl<T> fmt::Debug for ModelHandle<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelHandle").field("name", &self.name).finish()
    }
}

/// Mean loss of `model` over `data`.
pub fn mean_loss<T: Real>(model: &ModelHandle<T>, data: &Dataset<T>, kind: LossKind) -> Result<T> {
    if data.is_empty() {
        return Err(Error::EmptyInput("dataset"));
    }
    let losses = data
        .samples()
        .par_iter()
        .map(|s| loss(kind, model.predict(&s.features)?, s.label))
        .collect::<Result<Vec<T>>>()?;
    Ok(mean(&losses))
}

pub(crate) fn mean<T: Real>(values: &[T]) -> T {
    values.iter().copied().sum::<T>() / T::from_usize_lossy(values.len())
}

/// Anything that can score a labeled sample with a bounded loss.
///
/// The bound machinery only ever sees losses, so externally computed loss
/// tables and in-process models share this contract.
pub trait LossOracle<T: Real>: Send + Sync {
    fn loss(&self, sample: &LabeledSample<T>) -> Result<T>;

    /// `C_h`, the supremum of the loss.
    fn loss_bound(&self) -> T;

    fn kind(&self) -> LossKind;

    fn losses(&self, data: &Dataset<T>) -> Result<Vec<T>> {
        data.samples().par_iter().map(|s| self.loss(s)).collect()
    }

    fn mean_loss(&self, data: &Dataset<T>) -> Result<T> {
        if data.is_empty() {
            return Err(Error::EmptyInput("dataset"));
        }
        Ok(mean(&self.losses(data)?))
    }
}

/// What to do with an MAE loss above the configured `C_h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverflowPolicy {
    /// Report the loss as `C_h`. Clipping can only lower the loss, so a lower
    /// bound on the clipped loss is still a lower bound on the raw one.
    Clip,
    Error,
}

/// A fitted model scored under a [`LossKind`].
#[derive(Debug, Clone)]
pub struct ModelLoss<T> {
    model: ModelHandle<T>,
    kind: LossKind,
    bound: T,
    overflow: OverflowPolicy,
}

impl<T: Real> ModelLoss<T> {
    pub fn zero_one(model: ModelHandle<T>) -> Self {
        Self {
            model,
            kind: LossKind::ZeroOne,
            bound: T::one(),
            overflow: OverflowPolicy::Error,
        }
    }

    pub fn mae(model: ModelHandle<T>, bound: T, overflow: OverflowPolicy) -> Result<Self> {
        if !(bound > T::zero()) || !bound.is_finite() {
            return Err(Error::parameter(
                "loss_bound",
                bound.as_f64(),
                "must be positive and finite",
            ));
        }
        Ok(Self {
            model,
            kind: LossKind::MeanAbsoluteError,
            bound,
            overflow,
        })
    }

    /// Builds the oracle for `kind`; MAE uses [`default_mae_bound`] over
    /// the model's losses on `reference`.
    pub fn for_kind(model: ModelHandle<T>, kind: LossKind, reference: &Dataset<T>) -> Result<Self> {
        match kind {
            LossKind::ZeroOne => Ok(Self::zero_one(model)),
            LossKind::MeanAbsoluteError => {
                let raw = reference
                    .samples()
                    .par_iter()
                    .map(|s| loss(kind, model.predict(&s.features)?, s.label))
                    .collect::<Result<Vec<T>>>()?;
                let bound = default_mae_bound(&raw)?;
                Self::mae(model, bound, OverflowPolicy::Clip)
            }
        }
    }

    pub fn model(&self) -> &ModelHandle<T> {
        &self.model
    }
}

/// Default `C_h` for MAE: 1.5 times the largest loss observed on the
/// reference set, floored so that a perfect fit still yields a positive bound.
pub fn default_mae_bound<T: Real>(losses: &[T]) -> Result<T> {
    if losses.is_empty() {
        return Err(Error::EmptyInput("reference losses"));
    }
    let max = losses.iter().copied().fold(T::zero(), T::max);
    Ok((max * T::from_f64_lossy(1.5)).max(T::from_f64_lossy(1e-12)))
}

impl<T: Real> LossOracle<T> for ModelLoss<T> {
    fn loss(&self, sample: &LabeledSample<T>) -> Result<T> {
        let value = loss(self.kind, self.model.predict(&sample.features)?, sample.label)?;
        if value > self.bound {
            return match self.overflow {
                OverflowPolicy::Clip => Ok(self.bound),
                OverflowPolicy::Error => Err(Error::LossExceedsBound {
                    loss: value.as_f64(),
                    bound: self.bound.as_f64(),
                }),
            };
        }
        Ok(value)
    }

    fn loss_bound(&self) -> T {
        self.bound
    }

    fn kind(&self) -> LossKind {
        self.kind
    }
}

/// Precomputed per-sample losses keyed by sample id.
#[derive(Debug, Clone)]
pub struct LossTable<T> {
    losses: HashMap<String, T>,
    kind: LossKind,
    bound: T,
}

impl<T: Real> LossTable<T> {
    pub fn new(losses: HashMap<String, T>, kind: LossKind, bound: T) -> Result<Self> {
        if let Some((id, v)) = losses.iter().find(|(_, v)| **v < T::zero() || **v > bound) {
            return Err(Error::InvalidInput(format!(
                "loss {v} for id {id:?} outside [0, {bound}]"
            )));
        }
        Ok(Self {
            losses,
            kind,
            bound,
        })
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }
}

impl<T: Real> LossOracle<T> for LossTable<T> {
    fn loss(&self, sample: &LabeledSample<T>) -> Result<T> {
        let id = sample
            .id
            .as_deref()
            .ok_or_else(|| Error::InvalidInput("sample without id".into()))?;
        self.losses
            .get(id)
            .copied()
            .ok_or_else(|| Error::Join(id.to_string()))
    }

    fn loss_bound(&self) -> T {
        self.bound
    }

    fn kind(&self) -> LossKind {
        self.kind
    }
}

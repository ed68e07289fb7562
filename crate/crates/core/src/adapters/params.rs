//! Flat, ordered views over the trainable adapter factors.

use std::fmt;

use crate::error::{Error, Result};
use crate::numcore::{global_l2_norm, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Factor {
    A,
    B,
}

/// Identifies one trainable tensor: which layer, which factor.
///
/// Ordering is the canonical parameter order: layer ascending, `A` before `B`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamKey {
    pub layer: usize,
    pub factor: Factor,
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.factor {
            Factor::A => "a",
            Factor::B => "b",
        };
        write!(f, "layer{}.{}", self.layer, name)
    }
}

impl ParamKey {
    pub fn parse(s: &str) -> Option<Self> {
        let rest = s.strip_prefix("layer")?;
        let (idx, factor) = rest.split_once('.')?;
        let factor = match factor {
            "a" => Factor::A,
            "b" => Factor::B,
            _ => return None,
        };
        Some(Self {
            layer: idx.parse().ok()?,
            factor,
        })
    }
}

/// Owned collection of tensors keyed by [`ParamKey`], in canonical order.
///
/// Used for parameter snapshots, gradients, optimizer moments and
/// perturbations alike; two vectors are *aligned* when their keys and
/// shapes match entry by entry.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    entries: Vec<(ParamKey, Matrix)>,
}

impl ParamVector {
    pub fn new(entries: Vec<(ParamKey, Matrix)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::usage("a parameter vector needs at least one tensor"));
        }
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::usage(
                "parameter entries must be in canonical order without duplicates",
            ));
        }
        Ok(Self { entries })
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|m| Matrix::zeros(m.rows(), m.cols()))
    }

    /// Same keys as `self`, new tensors; shapes must match.
    pub fn with_tensors(&self, tensors: Vec<Matrix>) -> Result<Self> {
        if tensors.len() != self.entries.len()
            || self
                .entries
                .iter()
                .zip(&tensors)
                .any(|((_, a), b)| a.shape() != b.shape())
        {
            return Err(Error::usage("tensors do not match parameter layout"));
        }
        Ok(Self {
            entries: self.entries.iter().map(|(k, _)| *k).zip(tensors).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamKey, &Matrix)> {
        self.entries.iter().map(|(k, m)| (k, m))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&ParamKey, &mut Matrix)> {
        self.entries.iter_mut().map(|(k, m)| (&*k, m))
    }

    pub fn keys(&self) -> impl Iterator<Item = ParamKey> + '_ {
        self.entries.iter().map(|(k, _)| *k)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Matrix> {
        self.entries.iter().map(|(_, m)| m)
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.entries.iter().map(|(_, m)| m.shape()).collect()
    }

    pub fn get(&self, key: ParamKey) -> Option<&Matrix> {
        self.entries.iter().find(|(k, _)| *k == key).map(|(_, m)| m)
    }

    /// Every scalar in canonical order.
    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors().flat_map(|m| m.data().iter().copied())
    }

    pub fn is_aligned(&self, other: &ParamVector) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((ka, a), (kb, b))| ka == kb && a.shape() == b.shape())
    }

    pub(crate) fn check_aligned(&self, other: &ParamVector, what: &str) -> Result<()> {
        if self.is_aligned(other) {
            Ok(())
        } else {
            Err(Error::usage(format!(
                "{what}: parameter vectors are not aligned ({:?} vs {:?})",
                self.keys().collect::<Vec<_>>(),
                other.keys().collect::<Vec<_>>()
            )))
        }
    }

    pub fn global_norm(&self) -> f64 {
        global_l2_norm(self.tensors()).expect("parameter vectors are nonempty")
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_aligned(other, "dot")?;
        Ok(self
            .tensors()
            .zip(other.tensors())
            .map(|(a, b)| a.dot(b).expect("aligned"))
            .sum())
    }

    /// Cosine similarity; `None` when either side has zero norm.
    pub fn cosine(&self, other: &ParamVector) -> Result<Option<f64>> {
        let dot = self.dot(other)?;
        let denom = self.global_norm() * other.global_norm();
        Ok((denom > 0.0).then(|| dot / denom))
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) -> Result<()> {
        self.check_aligned(other, "axpy")?;
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            a.axpy(scale, b)?;
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|m| m.scale(s))
    }

    pub fn map(&self, f: impl Fn(&Matrix) -> Matrix) -> Self {
        Self {
            entries: self.entries.iter().map(|(k, m)| (*k, f(m))).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(Matrix::is_finite)
    }

    pub fn bitwise_eq(&self, other: &ParamVector) -> bool {
        self.is_aligned(other)
            && self
                .tensors()
                .zip(other.tensors())
                .all(|(a, b)| a.bitwise_eq(b))
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        if !self.is_aligned(other) {
            return f64::INFINITY;
        }
        self.tensors()
            .zip(other.tensors())
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}

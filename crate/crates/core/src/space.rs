//! Domain-randomization parameter spaces, vectors and running statistics.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;

/// Standard-deviation floor used when normalizing degenerate dimensions.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimKind {
    Continuous,
    Integer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dim {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub kind: DimKind,
}

impl Dim {
    pub fn continuous(name: &str, lo: f64, hi: f64) -> Self {
        Self {
            name: name.to_string(),
            lo,
            hi,
            kind: DimKind::Continuous,
        }
    }

    pub fn integer(name: &str, lo: f64, hi: f64) -> Self {
        Self {
            name: name.to_string(),
            lo,
            hi,
            kind: DimKind::Integer,
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// A point in DR-parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl fmt::Display for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, v) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:.4}")?;
        }
        write!(f, ")")
    }
}

/// Box-shaped DR parameter space `[lo, hi]` per named dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpace {
    dims: Vec<Dim>,
}

impl ParamSpace {
    pub fn new(dims: Vec<Dim>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidSpace("no dimensions".into()));
        }
        for (k, d) in dims.iter().enumerate() {
            if !(d.lo.is_finite() && d.hi.is_finite()) || d.lo >= d.hi {
                return Err(Error::InvalidSpace(format!(
                    "dimension `{}` has lo {} >= hi {}",
                    d.name, d.lo, d.hi
                )));
            }
            if dims[..k].iter().any(|o| o.name == d.name) {
                return Err(Error::InvalidSpace(format!(
                    "duplicate dimension name `{}`",
                    d.name
                )));
            }
        }
        Ok(Self { dims })
    }

    pub fn dims(&self) -> &[Dim] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.dims.iter().map(|d| d.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.ndim() {
            return Err(Error::DimensionMismatch {
                expected: self.ndim(),
                actual: n,
            });
        }
        Ok(())
    }

    /// Componentwise midpoint of the box.
    pub fn center(&self) -> ParamVector {
        ParamVector(self.dims.iter().map(|d| 0.5 * (d.lo + d.hi)).collect())
    }

    /// Clamps into the box; integer dimensions are rounded first.
    pub fn clamp(&self, phi: &ParamVector) -> Result<ParamVector> {
        self.check_dim(phi.len())?;
        Ok(ParamVector(
            self.dims
                .iter()
                .zip(&phi.0)
                .map(|(d, &v)| {
                    let v = match d.kind {
                        DimKind::Integer => v.round(),
                        DimKind::Continuous => v,
                    };
                    v.clamp(d.lo, d.hi)
                })
                .collect(),
        ))
    }

    pub fn contains(&self, phi: &ParamVector) -> bool {
        phi.len() == self.ndim()
            && self
                .dims
                .iter()
                .zip(&phi.0)
                .all(|(d, &v)| v >= d.lo && v <= d.hi)
    }

    pub fn check_contains(&self, phi: &ParamVector) -> Result<()> {
        self.check_dim(phi.len())?;
        for (d, &v) in self.dims.iter().zip(&phi.0) {
            if !(v >= d.lo && v <= d.hi) {
                return Err(Error::OutsideSpace {
                    name: d.name.clone(),
                    value: v,
                    lo: d.lo,
                    hi: d.hi,
                });
            }
        }
        Ok(())
    }

    /// Each component uniform in `[lo, hi]`, deterministic in `seed`.
    pub fn uniform_sample(&self, seed: u64) -> ParamVector {
        self.uniform_sample_with(&mut rng::rng_for(seed))
    }

    pub fn uniform_sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        ParamVector(
            self.dims
                .iter()
                .map(|d| (d.lo + rng.random::<f64>() * d.width()).clamp(d.lo, d.hi))
                .collect(),
        )
    }

    /// Per-dimension normal around `center`, truncated to the box by
    /// rejection. Zero std returns the clamped center.
    pub fn sample_truncated_normal<R: Rng + ?Sized>(
        &self,
        center: &ParamVector,
        std: &[f64],
        rng: &mut R,
    ) -> ParamVector {
        ParamVector(
            self.dims
                .iter()
                .zip(&center.0)
                .zip(std)
                .map(|((d, &c), &s)| truncated_normal(c, s, d.lo, d.hi, rng))
                .collect(),
        )
    }

    /// Maps into the unit box.
    pub fn to_unit(&self, phi: &ParamVector) -> Vec<f64> {
        self.dims
            .iter()
            .zip(&phi.0)
            .map(|(d, &v)| (v - d.lo) / d.width())
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> ParamVector {
        ParamVector(
            self.dims
                .iter()
                .zip(u)
                .map(|(d, &x)| d.lo + x * d.width())
                .collect(),
        )
    }
}

fn truncated_normal<R: Rng + ?Sized>(center: f64, std: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    if std <= 0.0 {
        return center.clamp(lo, hi);
    }
    for _ in 0..64 {
        let z: f64 = StandardNormal.sample(rng);
        let v = center + std * z;
        if (lo..=hi).contains(&v) {
            return v;
        }
    }
    center.clamp(lo, hi)
}

/// Running mean and population standard deviation (Welford).
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningStats {
    pub fn new(ndim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; ndim],
            m2: vec![0.0; ndim],
        }
    }

    pub fn from_samples<'a>(
        ndim: usize,
        samples: impl IntoIterator<Item = &'a ParamVector>,
    ) -> Result<Self> {
        let mut stats = Self::new(ndim);
        for s in samples {
            stats.push(s)?;
        }
        Ok(stats)
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn ndim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.ndim()];
        }
        self.m2
            .iter()
            .map(|m2| (m2 / self.count as f64).max(0.0).sqrt())
            .collect()
    }

    pub fn push(&mut self, phi: &ParamVector) -> Result<()> {
        if phi.len() != self.ndim() {
            return Err(Error::DimensionMismatch {
                expected: self.ndim(),
                actual: phi.len(),
            });
        }
        self.count += 1;
        let n = self.count as f64;
        for ((mean, m2), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(&phi.0) {
            let delta = x - *mean;
            *mean += delta / n;
            *m2 += delta * (x - *mean);
        }
        Ok(())
    }

    /// Value-returning form of [`RunningStats::push`].
    pub fn update(&self, phi: &ParamVector) -> Result<Self> {
        let mut next = self.clone();
        next.push(phi)?;
        Ok(next)
    }

    /// `(phi - mean) / max(std, eps)` componentwise.
    pub fn normalize(&self, phi: &ParamVector, eps: f64) -> Result<ParamVector> {
        if phi.len() != self.ndim() {
            return Err(Error::DimensionMismatch {
                expected: self.ndim(),
                actual: phi.len(),
            });
        }
        let std = self.std();
        Ok(ParamVector(
            phi.0
                .iter()
                .zip(&self.mean)
                .zip(&std)
                .map(|((&x, &mu), &s)| (x - mu) / s.max(eps))
                .collect(),
        ))
    }

    /// Euclidean distance between normalized `a` and `b`.
    pub fn normalized_distance(&self, a: &ParamVector, b: &ParamVector) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                actual: b.len(),
            });
        }
        let na = self.normalize(a, STD_FLOOR)?;
        let nb = self.normalize(b, STD_FLOOR)?;
        Ok(na
            .0
            .iter()
            .zip(&nb.0)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt())
    }
}

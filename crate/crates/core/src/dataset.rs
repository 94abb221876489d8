use crate::error::{Error, Result};

/// A 2-D spatial location.
pub type Location = [f64; 2];

/// N instances of (feature vector, location), with optional oracle labels.
///
/// Features are stored row-major. Labels are zero-based component indices
/// in memory; file formats use one-based labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    p: usize,
    features: Vec<f64>,
    locations: Vec<Location>,
    labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        p: usize,
        features: Vec<f64>,
        locations: Vec<Location>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = locations.len();
        if p == 0 {
            return Err(Error::InvalidInput("feature dimension must be positive".into()));
        }
        if n == 0 {
            return Err(Error::InvalidInput("dataset must contain at least one row".into()));
        }
        if features.len() != n * p {
            return Err(Error::DimensionMismatch {
                expected: n * p,
                found: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite())
            || locations.iter().flatten().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput("dataset contains non-finite values".into()));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: l.len(),
                });
            }
        }
        Ok(Self {
            p,
            features,
            locations,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.p..(i + 1) * self.p]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn location(&self, i: usize) -> Location {
        self.locations[i]
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Copy of the dataset without oracle labels.
    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    /// Check that labels, when present, lie in `0..k`.
    pub fn check_labels(&self, k: usize) -> Result<()> {
        match &self.labels {
            Some(l) if l.iter().any(|&y| y >= k) => Err(Error::InvalidInput(format!(
                "labels must lie in 1..={k}"
            ))),
            _ => Ok(()),
        }
    }
}

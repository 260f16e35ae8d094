use serde::{Deserialize, Serialize};

/// A magnitude that is either a finite number or an explicit unbounded marker.
///
/// Reports never carry float infinities; the sign of an unbounded extent is
/// implied by the field that holds it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extent {
    Finite(f64),
    Unbounded,
}

impl Extent {
    pub fn finite(self) -> Option<f64> {
        match self {
            Extent::Finite(v) => Some(v),
            Extent::Unbounded => None,
        }
    }

    pub fn is_unbounded(self) -> bool {
        matches!(self, Extent::Unbounded)
    }

    /// Scale a finite value; the unbounded marker is invariant under positive scaling.
    pub fn scaled(self, alpha: f64) -> Extent {
        match self {
            Extent::Finite(v) => Extent::Finite(alpha * v),
            Extent::Unbounded => Extent::Unbounded,
        }
    }
}

impl From<f64> for Extent {
    fn from(v: f64) -> Self {
        Extent::Finite(v)
    }
}

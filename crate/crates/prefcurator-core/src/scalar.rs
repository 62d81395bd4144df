//! Scalar abstraction for the numeric kernels.
//!
//! Rank statistics and the toy DPO machinery are generic over the
//! floating-point type; records and file formats are pinned to `f64`.

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the statistics and DPO kernels.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + core::iter::Sum
    + core::fmt::Debug
    + core::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Lossless widening to `f64` for reporting.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }

    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

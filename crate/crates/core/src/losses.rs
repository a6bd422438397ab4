//! Registration losses: mean SSD similarity and bending-energy smoothness.
//!
//! Both terms are means (over voxels, and over interior voxels × components
//! respectively), so the deformation weight `alpha` does not depend on the
//! volume size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::transforms::{warp_volume, DisplacementField};
use crate::volume::Volume;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 10.0 }
    }
}

impl LossWeights {
    pub fn new(alpha: f32) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("deformation weight must be >= 0, got {alpha}")));
        }
        Ok(Self { alpha })
    }
}

pub fn ssd(warped: &Volume, fixed: &Volume) -> Result<f32> {
    warped.expect_same_grid(fixed, "ssd")?;
    let mut tape = Tape::new();
    let a = tape.constant(warped.grid().clone());
    let b = tape.constant(fixed.grid().clone());
    let l = tape.ssd(a, b)?;
    Ok(tape.value(l).item())
}

pub fn bending_energy(ddf: &DisplacementField) -> Result<f32> {
    let mut tape = Tape::new();
    let u = tape.constant(ddf.tensor().clone());
    let l = tape.bending_energy(u)?;
    Ok(tape.value(l).item())
}

/// `ssd(warp(moving, ddf), fixed) + alpha · bending_energy(ddf)`.
pub fn total_loss(moving: &Volume, fixed: &Volume, ddf: &DisplacementField, w: LossWeights) -> Result<f32> {
    moving.expect_same_grid(fixed, "total_loss")?;
    let warped = warp_volume(moving, ddf)?;
    let sim = ssd(&warped, fixed)?;
    let def = bending_energy(ddf)?;
    Ok(sim + w.alpha * def)
}

/// Records the total loss for a displacement field already on `tape`.
pub fn record_total_loss(tape: &mut Tape, moving: Var, fixed: Var, ddf: Var, w: LossWeights) -> Result<Var> {
    let warped = tape.warp(moving, ddf)?;
    let sim = tape.ssd(warped, fixed)?;
    let def = tape.bending_energy(ddf)?;
    let weighted = tape.scale(def, w.alpha);
    tape.add(sim, weighted)
}

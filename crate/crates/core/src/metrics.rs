//! Evaluation metrics: Dice overlap and landmark target registration error.

use crate::error::{Error, Result};
use crate::transforms::{warp_mask, DisplacementField};
use crate::volume::Volume;

/// `2|A∩B| / (|A|+|B|)`, defined as 1 when both masks are empty.
pub fn dice(a: &Volume, b: &Volume) -> Result<f64> {
    a.expect_same_grid(b, "dice")?;
    if !a.is_binary() || !b.is_binary() {
        return Err(Error::invalid("dice expects binary {0,1} masks"));
    }
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x == 1.0, y == 1.0);
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Landmark {
    pub name: String,
    /// Centroid in millimetres, voxel `(0,0,0)` at the origin.
    pub centroid_mm: [f64; 3],
    pub radius_mm: f64,
}

pub const DEFAULT_LANDMARK_RADIUS_MM: f64 = 2.0;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LandmarkSet {
    pub landmarks: Vec<Landmark>,
}

impl LandmarkSet {
    pub fn new(landmarks: Vec<Landmark>) -> Result<Self> {
        for l in &landmarks {
            if !(l.radius_mm > 0.0) {
                return Err(Error::invalid(format!("landmark `{}` radius must be positive", l.name)));
            }
            if l.name.is_empty() || l.name.contains(char::is_whitespace) {
                return Err(Error::invalid(format!("invalid landmark name `{}`", l.name)));
            }
        }
        Ok(Self { landmarks })
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Landmark> {
        self.landmarks.iter().find(|l| l.name == name)
    }

    /// Checks that every centroid lies within the physical extent of a grid.
    pub fn check_inside(&self, extent: [usize; 3], spacing: f64) -> Result<()> {
        for l in &self.landmarks {
            let inside = (0..3).all(|i| l.centroid_mm[i] >= 0.0 && l.centroid_mm[i] <= (extent[i] - 1) as f64 * spacing);
            if !inside {
                return Err(Error::invalid(format!("landmark `{}` lies outside the image", l.name)));
            }
        }
        Ok(())
    }
}

/// Binary sphere of voxels whose centres lie within the landmark radius.
pub fn rasterize(landmark: &Landmark, extent: [usize; 3], spacing: f64) -> Volume {
    let r2 = landmark.radius_mm * landmark.radius_mm;
    let c = landmark.centroid_mm;
    Volume::from_fn(extent, spacing, |x, y, z| {
        let d2 = (x as f64 * spacing - c[0]).powi(2) + (y as f64 * spacing - c[1]).powi(2) + (z as f64 * spacing - c[2]).powi(2);
        if d2 <= r2 {
            1.0
        } else {
            0.0
        }
    })
}

/// Centroid of a binary mask in millimetres, `None` when empty.
pub fn mask_centroid_mm(mask: &Volume) -> Option<[f64; 3]> {
    let ext = mask.extent();
    let mut acc = [0.0f64; 3];
    let mut n = 0usize;
    for z in 0..ext[2] {
        for y in 0..ext[1] {
            for x in 0..ext[0] {
                if mask.get(x, y, z) != 0.0 {
                    acc[0] += x as f64;
                    acc[1] += y as f64;
                    acc[2] += z as f64;
                    n += 1;
                }
            }
        }
    }
    (n > 0).then(|| acc.map(|v| v / n as f64 * mask.spacing()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreResult {
    /// Root-mean-square centroid distance over the landmarks that survived
    /// warping.
    pub rms_mm: f64,
    pub used: usize,
    /// Landmarks whose warped sphere came out empty.
    pub excluded: Vec<String>,
}

/// Target registration error: each moving landmark is rasterized, warped by
/// `ddf`, and its centroid compared with the fixed landmark of the same name.
pub fn tre(moving: &LandmarkSet, fixed: &LandmarkSet, ddf: &DisplacementField, spacing: f64) -> Result<TreResult> {
    if moving.len() != fixed.len() {
        return Err(Error::invalid(format!(
            "landmark count mismatch: {} moving vs {} fixed",
            moving.len(),
            fixed.len()
        )));
    }
    let extent = ddf.extent();
    let mut names: Vec<&str> = moving.landmarks.iter().map(|l| l.name.as_str()).collect();
    names.sort_unstable();
    let mut sum_sq = 0.0f64;
    let mut used = 0usize;
    let mut excluded = Vec::new();
    for name in names {
        let m = moving.get(name).expect("name taken from set");
        let f = fixed
            .get(name)
            .ok_or_else(|| Error::invalid(format!("no fixed landmark named `{name}`")))?;
        let sphere = rasterize(m, extent, spacing);
        let warped = warp_mask(&sphere, ddf, 0.5)?;
        match mask_centroid_mm(&warped) {
            Some(c) => {
                sum_sq += (0..3).map(|i| (c[i] - f.centroid_mm[i]).powi(2)).sum::<f64>();
                used += 1;
            }
            None => excluded.push(name.to_string()),
        }
    }
    if used == 0 {
        return Err(Error::invalid("every warped landmark mask is empty"));
    }
    Ok(TreResult {
        rms_mm: (sum_sq / used as f64).sqrt(),
        used,
        excluded,
    })
}

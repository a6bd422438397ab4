//! Synthetic gland phantoms with a known deformation.
//!
//! Each phantom is a continuous intensity function: a soft-edged random
//! ellipsoid over a background plus smooth lattice noise, faded to zero near
//! the grid border so zero-padded resampling sees the same values the
//! generator does. The moving image
//! samples it on the grid; the fixed image samples it at `p + u(p)` where `u`
//! is the ground-truth field, so the generator never goes through the warp
//! operator it is later checked against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::{Landmark, LandmarkSet, DEFAULT_LANDMARK_RADIUS_MM};
use crate::transforms::{warp_mask, AffineParams, DisplacementField};
use crate::volume::{Volume, DEFAULT_SPACING_MM};

/// Control points per axis of the coarse ground-truth displacement lattice.
pub const CONTROL_POINTS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub seed: u64,
    pub deform_magnitude: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomCase {
    pub image: Volume,
    pub gland_mask: Volume,
    pub landmarks: LandmarkSet,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CasePair {
    pub moving: PhantomCase,
    pub fixed: PhantomCase,
    pub ground_truth_ddf: DisplacementField,
}

impl CasePair {
    pub fn extent(&self) -> [usize; 3] {
        self.moving.image.extent()
    }

    pub fn spacing(&self) -> f64 {
        self.moving.image.spacing()
    }
}

/// Smooth noise: a random value lattice interpolated trilinearly.
struct Lattice {
    n: usize,
    values: Vec<f64>,
    scale: [f64; 3],
}

impl Lattice {
    fn new(rng: &mut ChaCha8Rng, n: usize, extent: [usize; 3]) -> Self {
        let values = (0..n * n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Self {
            n,
            values,
            scale: extent.map(|e| (n - 1) as f64 / (e as f64 - 1.0).max(1.0)),
        }
    }

    fn at(&self, p: [f64; 3]) -> f64 {
        let n = self.n;
        let q: [f64; 3] = std::array::from_fn(|i| (p[i] * self.scale[i]).clamp(0.0, (n - 1) as f64));
        let i0 = q.map(|v| (v.floor() as usize).min(n - 2));
        let f: [f64; 3] = std::array::from_fn(|i| q[i] - i0[i] as f64);
        let mut acc = 0.0;
        for corner in 0..8 {
            let o = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let w: f64 = (0..3).map(|i| if o[i] == 1 { f[i] } else { 1.0 - f[i] }).product();
            let idx = (i0[0] + o[0]) + n * ((i0[1] + o[1]) + n * (i0[2] + o[2]));
            acc += w * self.values[idx];
        }
        acc
    }
}

struct Ellipsoid {
    center: [f64; 3],
    axes: [f64; 3],
    /// Rows are the principal directions.
    rotation: [[f64; 3]; 3],
}

impl Ellipsoid {
    /// Normalized radius: < 1 inside, 1 on the surface.
    fn radius(&self, p: [f64; 3]) -> f64 {
        let d: [f64; 3] = std::array::from_fn(|i| p[i] - self.center[i]);
        (0..3)
            .map(|k| {
                let r = &self.rotation[k];
                let t = (r[0] * d[0] + r[1] * d[1] + r[2] * d[2]) / self.axes[k];
                t * t
            })
            .sum::<f64>()
            .sqrt()
    }
}

struct Phantom {
    gland: Ellipsoid,
    coarse: Lattice,
    fine: Lattice,
    edge: f64,
    extent: [usize; 3],
}

const BACKGROUND: f64 = 0.1;
const CONTRAST: f64 = 0.6;
const COARSE_TEXTURE: f64 = 0.15;
const FINE_TEXTURE: f64 = 0.2;
/// Intensity is zero within `BORDER` voxels of a face and ramps up to full
/// over the next `RAMP` voxels.
const BORDER: f64 = 1.0;
const RAMP: f64 = 3.0;

impl Phantom {
    fn window(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|i| {
                let d = p[i].min(self.extent[i] as f64 - 1.0 - p[i]) - BORDER;
                let t = (d / RAMP).clamp(0.0, 1.0);
                t * t * (3.0 - 2.0 * t)
            })
            .product()
    }

    fn intensity(&self, p: [f64; 3]) -> f32 {
        let r = self.gland.radius(p);
        let inside = 1.0 / (1.0 + ((r - 1.0) * self.edge).exp());
        let texture = COARSE_TEXTURE * self.coarse.at(p) + FINE_TEXTURE * self.fine.at(p);
        let value = self.window(p) * (BACKGROUND + CONTRAST * inside + texture);
        value.clamp(0.0, 1.0) as f32
    }

    fn inside(&self, p: [f64; 3]) -> bool {
        self.gland.radius(p) <= 1.0
    }
}

/// Ground-truth deformation: coarse lattice displacement followed by a small
/// affine, both as pull-back maps.
struct Deformation {
    lattice: Vec<[f64; 3]>,
    affine: AffineParams,
    extent: [usize; 3],
}

impl Deformation {
    fn sample_point(&self, p: [f64; 3]) -> [f64; 3] {
        let n = CONTROL_POINTS;
        let q: [f64; 3] = std::array::from_fn(|i| {
            let s = (n - 1) as f64 / (self.extent[i] as f64 - 1.0);
            (p[i] * s).clamp(0.0, (n - 1) as f64)
        });
        let i0 = q.map(|v| (v.floor() as usize).min(n - 2));
        let f: [f64; 3] = std::array::from_fn(|i| q[i] - i0[i] as f64);
        let mut u = [0.0f64; 3];
        for corner in 0..8 {
            let o = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let w: f64 = (0..3).map(|i| if o[i] == 1 { f[i] } else { 1.0 - f[i] }).product();
            let v = self.lattice[(i0[0] + o[0]) + n * ((i0[1] + o[1]) + n * (i0[2] + o[2]))];
            (0..3).for_each(|c| u[c] += w * v[c]);
        }
        let warped: [f64; 3] = std::array::from_fn(|i| p[i] + u[i]);
        let center = crate::transforms::volume_center(self.extent);
        self.affine.invert_point(warped, center)
    }

    fn displacement(&self, p: [f64; 3]) -> [f64; 3] {
        let s = self.sample_point(p);
        std::array::from_fn(|i| s[i] - p[i])
    }

    /// Solves `q + u(q) = target` by fixed-point iteration.
    fn preimage(&self, target: [f64; 3]) -> [f64; 3] {
        let mut q = target;
        for _ in 0..100 {
            let u = self.displacement(q);
            let next: [f64; 3] = std::array::from_fn(|i| target[i] - u[i]);
            let step = (0..3).map(|i| (next[i] - q[i]).abs()).fold(0.0, f64::max);
            q = next;
            if step < 1e-10 {
                break;
            }
        }
        q
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let p = AffineParams {
        rotation: std::array::from_fn(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)),
        ..AffineParams::identity()
    };
    p.linear()
}

fn sample_gland(rng: &mut ChaCha8Rng, extent: [usize; 3]) -> Result<Ellipsoid> {
    for _ in 0..64 {
        let center = extent.map(|e| e as f64 / 2.0 - 0.5 + rng.gen_range(-0.06..0.06) * e as f64);
        let axes = extent.map(|e| rng.gen_range(0.25..0.34) * e as f64);
        if axes.iter().any(|&a| a < 3.0) {
            continue;
        }
        let rotation = random_rotation(rng);
        return Ok(Ellipsoid { center, axes, rotation });
    }
    Err(Error::invalid(format!("extent {extent:?} is too small for a phantom gland")))
}

fn rasterize_volume(extent: [usize; 3], spacing: f64, f: impl Fn([f64; 3]) -> f32) -> Volume {
    Volume::from_fn(extent, spacing, |x, y, z| f([x as f64, y as f64, z as f64]))
}

/// Generates a moving/fixed phantom pair with its ground-truth field.
///
/// `deform_magnitude` (voxels) bounds each lattice displacement component
/// and scales the accompanying affine; zero yields identical images.
pub fn gen_phantom_pair(seed: u64, extent: [usize; 3], deform_magnitude: f64) -> Result<CasePair> {
    gen_phantom_pair_with_spacing(seed, extent, deform_magnitude, DEFAULT_SPACING_MM)
}

pub fn gen_phantom_pair_with_spacing(seed: u64, extent: [usize; 3], deform_magnitude: f64, spacing: f64) -> Result<CasePair> {
    if extent.iter().any(|&n| n == 0 || n % 4 != 0) {
        return Err(Error::invalid(format!("phantom extent must be divisible by 4, got {extent:?}")));
    }
    if !(deform_magnitude >= 0.0 && deform_magnitude.is_finite()) {
        return Err(Error::invalid("deformation magnitude must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gland = sample_gland(&mut rng, extent)?;
    let mean_axis = gland.axes.iter().sum::<f64>() / 3.0;
    let phantom = Phantom {
        edge: mean_axis / 0.8,
        gland,
        coarse: Lattice::new(&mut rng, 5, extent),
        fine: Lattice::new(&mut rng, 9, extent),
        extent,
    };

    let mag = deform_magnitude;
    let lattice = (0..CONTROL_POINTS.pow(3))
        .map(|_| {
            std::array::from_fn(|_| if mag > 0.0 { rng.gen_range(-mag..=mag) } else { 0.0 })
        })
        .collect();
    let sym = |rng: &mut ChaCha8Rng, h: f64| if h > 0.0 { rng.gen_range(-h..=h) } else { 0.0 };
    let affine = AffineParams {
        rotation: std::array::from_fn(|_| sym(&mut rng, 0.05 * mag)),
        scale: std::array::from_fn(|_| 1.0 + sym(&mut rng, 0.03 * mag)),
        translation: std::array::from_fn(|_| sym(&mut rng, mag)),
        shear: [0.0; 3],
    };
    let deformation = Deformation { lattice, affine, extent };

    let moving_image = rasterize_volume(extent, spacing, |p| phantom.intensity(p));
    let moving_mask = rasterize_volume(extent, spacing, |p| phantom.inside(p) as u8 as f32);
    let fixed_image = rasterize_volume(extent, spacing, |p| phantom.intensity(deformation.sample_point(p)));
    let ddf = DisplacementField::from_fn(extent, |x, y, z| {
        deformation.displacement([x as f64, y as f64, z as f64]).map(|v| v as f32)
    });
    // The label is carried along by the same warp used at evaluation time, so
    // the ground-truth field reproduces it exactly.
    let fixed_mask = warp_mask(&moving_mask, &ddf, 0.5)?;

    // Centroid and the two poles of the longest axis, snapped to voxel centres.
    let g = &phantom.gland;
    let long = (0..3).max_by(|&a, &b| g.axes[a].total_cmp(&g.axes[b])).expect("three axes");
    let dir = g.rotation[long];
    let reach = 0.6 * g.axes[long];
    let points = [
        ("centroid", g.center),
        ("apex", std::array::from_fn(|i| g.center[i] + reach * dir[i])),
        ("base", std::array::from_fn(|i| g.center[i] - reach * dir[i])),
    ];
    let mut moving_lms = Vec::new();
    let mut fixed_lms = Vec::new();
    for (name, p) in points {
        let snapped: [f64; 3] = std::array::from_fn(|i| p[i].round().clamp(0.0, (extent[i] - 1) as f64));
        let q = deformation.preimage(snapped);
        moving_lms.push(Landmark {
            name: name.to_string(),
            centroid_mm: snapped.map(|v| v * spacing),
            radius_mm: DEFAULT_LANDMARK_RADIUS_MM,
        });
        fixed_lms.push(Landmark {
            name: name.to_string(),
            centroid_mm: q.map(|v| v * spacing),
            radius_mm: DEFAULT_LANDMARK_RADIUS_MM,
        });
    }

    let provenance = Provenance {
        seed,
        deform_magnitude,
    };
    Ok(CasePair {
        moving: PhantomCase {
            image: moving_image,
            gland_mask: moving_mask,
            landmarks: LandmarkSet::new(moving_lms)?,
            provenance: provenance.clone(),
        },
        fixed: PhantomCase {
            image: fixed_image,
            gland_mask: fixed_mask,
            landmarks: LandmarkSet::new(fixed_lms)?,
            provenance,
        },
        ground_truth_ddf: ddf,
    })
}

//! Browser bindings: generate a phantom pair, register it interactively with
//! Adam on a dense displacement field, and read back image slices and
//! metrics.

use wasm_bindgen::prelude::*;

use metareg::data::{gen_phantom_pair, CasePair};
use metareg::losses::{record_total_loss, LossWeights};
use metareg::metrics::{dice, tre};
use metareg::models::DirectDdfModel;
use metareg::optim::{AdamConfig, AdamState};
use metareg::tape::Tape;
use metareg::transforms::{warp_mask, warp_volume, DisplacementField};
use metareg::Volume;

pub const EXTENT: usize = 32;

fn js_err(e: metareg::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[wasm_bindgen]
pub struct PhantomDemo {
    pair: CasePair,
    model: DirectDdfModel,
    adam: Option<(AdamState, f32)>,
    iterations: u32,
}

#[wasm_bindgen]
impl PhantomDemo {
    /// Generates a 32³ phantom pair.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, deform_magnitude: f64) -> Result<PhantomDemo, JsValue> {
        let pair = gen_phantom_pair(seed as u64, [EXTENT; 3], deform_magnitude).map_err(js_err)?;
        Ok(Self {
            model: DirectDdfModel::zeros(pair.extent()),
            pair,
            adam: None,
            iterations: 0,
        })
    }

    pub fn extent(&self) -> usize {
        EXTENT
    }

    pub fn iterations(&self) -> u32 {
        self.iterations
    }

    /// Discards the current field and optimizer state.
    pub fn reset(&mut self) {
        self.model = DirectDdfModel::zeros(self.pair.extent());
        self.adam = None;
        self.iterations = 0;
    }

    /// Replaces the current field with the generator's ground truth.
    pub fn use_ground_truth(&mut self) {
        self.model = DirectDdfModel::from_field(&self.pair.ground_truth_ddf);
        self.adam = None;
    }

    /// Runs `steps` Adam updates of the dense field on the total loss and
    /// returns the loss before the last update.
    pub fn register(&mut self, steps: u32, lr: f32, alpha: f32) -> Result<f32, JsValue> {
        let weights = LossWeights::new(alpha).map_err(js_err)?;
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(JsValue::from_str("learning rate must be positive"));
        }
        if self.adam.as_ref().is_none_or(|(_, l)| *l != lr) {
            self.adam = Some((AdamState::new(AdamConfig::with_lr(lr), self.model.params()), lr));
        }
        let (adam, _) = self.adam.as_mut().expect("optimizer initialized above");
        let mut last = f32::NAN;
        for _ in 0..steps {
            let mut tape = Tape::new();
            let m = tape.constant(self.pair.moving.image.grid().clone());
            let f = tape.constant(self.pair.fixed.image.grid().clone());
            let (ddf, bound) = self.model.record(&mut tape);
            let loss = record_total_loss(&mut tape, m, f, ddf, weights).map_err(js_err)?;
            last = tape.value(loss).item();
            if !last.is_finite() {
                return Err(JsValue::from_str("loss is not finite"));
            }
            let mut grads = tape.backward(loss).map_err(js_err)?;
            let next = adam.step(self.model.params(), &bound.gradient(&mut grads)).map_err(js_err)?;
            self.model.set_params(next).map_err(js_err)?;
            self.iterations += 1;
        }
        Ok(last)
    }

    /// Gland DSC before registration.
    pub fn baseline_dsc(&self) -> Result<f64, JsValue> {
        dice(&self.pair.moving.gland_mask, &self.pair.fixed.gland_mask).map_err(js_err)
    }

    /// Gland DSC under the current field.
    pub fn dsc(&self) -> Result<f64, JsValue> {
        let warped = warp_mask(&self.pair.moving.gland_mask, &self.model.field(), 0.5).map_err(js_err)?;
        dice(&warped, &self.pair.fixed.gland_mask).map_err(js_err)
    }

    /// Landmark TRE in millimetres under the current field.
    pub fn tre_mm(&self) -> Result<f64, JsValue> {
        let p = &self.pair;
        tre(&p.moving.landmarks, &p.fixed.landmarks, &self.model.field(), p.spacing())
            .map(|t| t.rms_mm)
            .map_err(js_err)
    }

    /// RGBA pixels of axial slice `z` (row-major, x fastest) for one of the
    /// views `moving`, `fixed`, `warped` or `difference`. The gland outline of
    /// the fixed label is drawn in red and the warped moving label in green.
    pub fn slice_rgba(&self, view: &str, z: usize) -> Result<Vec<u8>, JsValue> {
        if z >= EXTENT {
            return Err(JsValue::from_str("slice index out of range"));
        }
        let field = self.model.field();
        let warped = || warp_volume(&self.pair.moving.image, &field).map_err(js_err);
        let image = match view {
            "moving" => self.pair.moving.image.clone(),
            "fixed" => self.pair.fixed.image.clone(),
            "warped" => warped()?,
            "difference" => difference(&warped()?, &self.pair.fixed.image).map_err(js_err)?,
            other => return Err(JsValue::from_str(&format!("unknown view `{other}`"))),
        };
        let moved = warp_mask(&self.pair.moving.gland_mask, &field, 0.5).map_err(js_err)?;
        Ok(render_slice(&image, &self.pair.fixed.gland_mask, &moved, z))
    }
}

fn difference(a: &Volume, b: &Volume) -> metareg::Result<Volume> {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).collect();
    a.with_data(data)
}

fn on_outline(mask: &Volume, x: usize, y: usize, z: usize) -> bool {
    if mask.get(x, y, z) == 0.0 {
        return false;
    }
    let [nx, ny, _] = mask.extent();
    let neighbours = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)];
    neighbours.iter().any(|&(dx, dy)| {
        let (u, v) = (x as i64 + dx, y as i64 + dy);
        u < 0 || v < 0 || u >= nx as i64 || v >= ny as i64 || mask.get(u as usize, v as usize, z) == 0.0
    })
}

/// Grey-level slice with the two label outlines overlaid.
pub fn render_slice(image: &Volume, fixed_mask: &Volume, moved_mask: &Volume, z: usize) -> Vec<u8> {
    let [nx, ny, _] = image.extent();
    let mut out = Vec::with_capacity(nx * ny * 4);
    for y in 0..ny {
        for x in 0..nx {
            let g = (image.get(x, y, z).clamp(0.0, 1.0) * 255.0).round() as u8;
            let px = if on_outline(fixed_mask, x, y, z) {
                [230, 40, 40, 255]
            } else if on_outline(moved_mask, x, y, z) {
                [40, 220, 80, 255]
            } else {
                [g, g, g, 255]
            };
            out.extend_from_slice(&px);
        }
    }
    out
}

impl PhantomDemo {
    /// Current field, for native callers.
    pub fn field(&self) -> DisplacementField {
        self.model.field()
    }
}

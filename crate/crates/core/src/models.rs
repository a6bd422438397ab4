//! Transformation models: a direct dense field and a compact convolutional
//! registration network.
//!
//! The network maps a `(moving, fixed)` pair to a displacement field with a
//! two-level encoder/decoder:
//!
//! ```text
//! [2,X]  -conv3 s1-> enc1 [c1,X]   ----------------------------.
//!        -conv3 s2-> enc2 [c2,X/2] -----------.                |
//!        -conv3 s2-> enc3 [c3,X/4]            |                |
//!        -conv3 s1-> bott [c4,X/4]            |                |
//!        -up×2, cat enc2, conv3-> dec2 [c5,X/2]                |
//!        -up×2, cat enc1, conv3-> dec1 [c6,X]                  |
//!        -conv1 (linear)-> ddf [3,X]
//! ```
//!
//! Every hidden conv is followed by a leaky ReLU. The head starts at zero,
//! so an untrained network predicts the identity transform.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_f32le, write_f32le, write_text, KeyValues};
use crate::params::{BoundParams, Layout, ParamVector};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::transforms::DisplacementField;
use crate::volume::Volume;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegNetConfig {
    pub enc1: usize,
    pub enc2: usize,
    pub enc3: usize,
    pub bottleneck: usize,
    pub dec2: usize,
    pub dec1: usize,
    pub leaky_slope: f32,
}

impl Default for RegNetConfig {
    fn default() -> Self {
        Self {
            enc1: 16,
            enc2: 16,
            enc3: 32,
            bottleneck: 32,
            dec2: 16,
            dec1: 8,
            leaky_slope: 0.2,
        }
    }
}

struct ConvSpec {
    name: &'static str,
    cout: usize,
    cin: usize,
    k: usize,
}

impl RegNetConfig {
    fn convs(&self) -> [ConvSpec; 7] {
        let c = |name, cout, cin, k| ConvSpec { name, cout, cin, k };
        [
            c("enc1", self.enc1, 2, 3),
            c("enc2", self.enc2, self.enc1, 3),
            c("enc3", self.enc3, self.enc2, 3),
            c("bottleneck", self.bottleneck, self.enc3, 3),
            c("dec2", self.dec2, self.bottleneck + self.enc2, 3),
            c("dec1", self.dec1, self.dec2 + self.enc1, 3),
            c("head", 3, self.dec1, 1),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [self.enc1, self.enc2, self.enc3, self.bottleneck, self.dec2, self.dec1];
        if widths.contains(&0) {
            return Err(Error::invalid("channel widths must be positive"));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::invalid("leaky slope must be in [0, 1)"));
        }
        Ok(())
    }

    /// Parameter layout; a pure function of the config.
    pub fn layout(&self) -> Layout {
        let mut layout = Layout::new();
        for s in self.convs() {
            layout.push(format!("{}.weight", s.name), &[s.cout, s.cin, s.k, s.k, s.k]);
            layout.push(format!("{}.bias", s.name), &[s.cout]);
        }
        layout
    }

    /// Uniform half-width for hidden kernels, chosen so the weight variance
    /// is `2 / ((1 + slope²)·fan_in)`.
    pub fn init_bound(&self, fan_in: usize) -> f32 {
        let a = self.leaky_slope as f64;
        (6.0 / ((1.0 + a * a) * fan_in as f64)).sqrt() as f32
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegNet {
    config: RegNetConfig,
    params: ParamVector,
}

/// Network inputs recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct PairVars {
    pub moving: Var,
    pub fixed: Var,
    pub stacked: Var,
}

/// Records a moving/fixed pair as constants on `tape`.
pub fn record_pair(tape: &mut Tape, moving: &Volume, fixed: &Volume) -> Result<PairVars> {
    moving.expect_same_grid(fixed, "record_pair")?;
    let [x, y, z] = moving.extent();
    let mut data = Vec::with_capacity(2 * moving.len());
    data.extend_from_slice(moving.data());
    data.extend_from_slice(fixed.data());
    let stacked = tape.constant(Tensor::new(&[2, x, y, z], data)?);
    Ok(PairVars {
        moving: tape.constant(moving.grid().clone()),
        fixed: tape.constant(fixed.grid().clone()),
        stacked,
    })
}

impl RegNet {
    /// Hidden kernels uniform fan-in scaled; head kernel and every bias zero.
    pub fn init<R: Rng + ?Sized>(config: RegNetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(config.layout());
        let mut params = ParamVector::zeros(Arc::clone(&layout));
        for s in config.convs() {
            if s.name == "head" {
                continue;
            }
            let seg = layout.segment(&format!("{}.weight", s.name)).expect("layout segment");
            let bound = config.init_bound(s.cin * s.k * s.k * s.k);
            for v in &mut params.values_mut()[seg.offset..seg.offset + seg.len()] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: RegNetConfig, params: ParamVector) -> Result<Self> {
        config.validate()?;
        if **params.layout() != config.layout() {
            return Err(Error::Layout("RegNet::from_params"));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &RegNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }

    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        Self::from_params(self.config, params)
    }

    pub fn check_extent(extent: [usize; 3]) -> Result<()> {
        if extent.iter().any(|&n| n == 0 || n % 4 != 0) {
            return Err(Error::invalid(format!(
                "network input extent must be divisible by 4, got {extent:?}"
            )));
        }
        Ok(())
    }

    /// Records the forward pass with the given parameter leaves and returns
    /// the predicted displacement field node `[3, X, Y, Z]`.
    pub fn record(&self, tape: &mut Tape, params: &BoundParams, input: &PairVars) -> Result<Var> {
        let ext = tape.value(input.stacked).spatial()?;
        Self::check_extent(ext)?;
        let slope = self.config.leaky_slope;
        let conv = |tape: &mut Tape, name: &str, x: Var, stride: usize| -> Result<Var> {
            let w = params.var(&format!("{name}.weight")).expect("weight segment");
            let b = params.var(&format!("{name}.bias")).expect("bias segment");
            tape.conv3d(x, w, Some(b), stride)
        };
        let act = |tape: &mut Tape, x: Var| tape.leaky_relu(x, slope);

        let e1 = conv(tape, "enc1", input.stacked, 1)?;
        let e1 = act(tape, e1);
        let e2 = conv(tape, "enc2", e1, 2)?;
        let e2 = act(tape, e2);
        let e3 = conv(tape, "enc3", e2, 2)?;
        let e3 = act(tape, e3);
        let b = conv(tape, "bottleneck", e3, 1)?;
        let b = act(tape, b);

        let u2 = tape.upsample2(b)?;
        let d2 = tape.concat(u2, e2)?;
        let d2 = conv(tape, "dec2", d2, 1)?;
        let d2 = act(tape, d2);
        let u1 = tape.upsample2(d2)?;
        let d1 = tape.concat(u1, e1)?;
        let d1 = conv(tape, "dec1", d1, 1)?;
        let d1 = act(tape, d1);
        conv(tape, "head", d1, 1)
    }

    /// Predicts the displacement field for a pair.
    pub fn predict(&self, moving: &Volume, fixed: &Volume) -> Result<DisplacementField> {
        let mut tape = Tape::new();
        let input = record_pair(&mut tape, moving, fixed)?;
        let bound = self.params.record(&mut tape);
        let ddf = self.record(&mut tape, &bound, &input)?;
        DisplacementField::new(tape.value(ddf).clone())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let c = &self.config;
        let mut m = String::new();
        m.push_str("format = metareg-checkpoint\nversion = 1\narch = regnet\n");
        m.push_str(&format!(
            "enc1 = {}\nenc2 = {}\nenc3 = {}\nbottleneck = {}\ndec2 = {}\ndec1 = {}\nleaky_slope = {}\n",
            c.enc1, c.enc2, c.enc3, c.bottleneck, c.dec2, c.dec1, c.leaky_slope
        ));
        m.push_str(&format!("param_count = {}\ndtype = f32le\nblob = {PARAMS_FILE}\n", self.params.len()));
        for s in self.params.layout().segments() {
            let dims: Vec<String> = s.dims.iter().map(|d| d.to_string()).collect();
            m.push_str(&format!("segment = {} {} {}\n", s.name, s.offset, dims.join("x")));
        }
        write_text(&dir.join(MANIFEST_FILE), &m)?;
        write_f32le(&dir.join(PARAMS_FILE), self.params.values())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let kv = KeyValues::load(&path)?;
        if kv.require("format")? != "metareg-checkpoint" || kv.require("arch")? != "regnet" {
            return Err(kv.parse_err("format", "not a regnet checkpoint"));
        }
        let dtype = kv.require("dtype")?;
        if dtype != "f32le" {
            return Err(Error::UnknownDtype {
                path,
                dtype: dtype.to_string(),
            });
        }
        let config = RegNetConfig {
            enc1: kv.parse_value("enc1")?,
            enc2: kv.parse_value("enc2")?,
            enc3: kv.parse_value("enc3")?,
            bottleneck: kv.parse_value("bottleneck")?,
            dec2: kv.parse_value("dec2")?,
            dec1: kv.parse_value("dec1")?,
            leaky_slope: kv.parse_value("leaky_slope")?,
        };
        config.validate()?;
        let layout = config.layout();
        let count: usize = kv.parse_value("param_count")?;
        if count != layout.total() {
            return Err(kv.parse_err("param_count", format!("expected {} for this architecture", layout.total())));
        }
        let table: Vec<(&str, usize)> = kv.all("segment").collect();
        if table.len() != layout.segments().len() {
            return Err(kv.parse_err("segment", "layout table does not match the architecture"));
        }
        for ((line, _), seg) in table.iter().zip(layout.segments()) {
            let dims: Vec<String> = seg.dims.iter().map(|d| d.to_string()).collect();
            let want = format!("{} {} {}", seg.name, seg.offset, dims.join("x"));
            if *line != want {
                return Err(kv.parse_err("segment", format!("expected `{want}`, got `{line}`")));
            }
        }
        let blob = kv.require("blob")?;
        let values = read_f32le(&dir.join(blob), count)?;
        Self::from_params(config, ParamVector::from_values(Arc::new(layout), values)?)
    }
}

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const PARAMS_FILE: &str = "params.f32";

/// A displacement field optimized directly, one parameter per component
/// and voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectDdfModel {
    params: ParamVector,
}

impl DirectDdfModel {
    pub fn zeros(extent: [usize; 3]) -> Self {
        let mut layout = Layout::new();
        layout.push("ddf", &[3, extent[0], extent[1], extent[2]]);
        Self {
            params: ParamVector::zeros(Arc::new(layout)),
        }
    }

    pub fn from_field(field: &DisplacementField) -> Self {
        let mut m = Self::zeros(field.extent());
        m.params.values_mut().copy_from_slice(field.tensor().data());
        m
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        self.params.check_layout(&params, "DirectDdfModel::set_params")?;
        self.params = params;
        Ok(())
    }

    /// Records the parameters as the displacement field node.
    pub fn record(&self, tape: &mut Tape) -> (Var, BoundParams) {
        let bound = self.params.record(tape);
        (bound.vars()[0], bound)
    }

    pub fn field(&self) -> DisplacementField {
        let t = self.params.tensors().pop().expect("single segment");
        DisplacementField::new(t).expect("finite parameters")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{record_total_loss, LossWeights};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> RegNetConfig {
        RegNetConfig {
            enc1: 4,
            enc2: 4,
            enc3: 8,
            bottleneck: 8,
            dec2: 4,
            dec1: 4,
            leaky_slope: 0.2,
        }
    }

    fn pair(ext: [usize; 3]) -> (Volume, Volume) {
        let m = Volume::from_fn(ext, 0.8, |x, y, z| ((x + 2 * y + 3 * z) % 5) as f32 / 5.0);
        let f = Volume::from_fn(ext, 0.8, |x, y, z| ((2 * x + y + z) % 7) as f32 / 7.0);
        (m, f)
    }

    #[test]
    fn fresh_network_predicts_zero_field() {
        let net = RegNet::init(RegNetConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(net.params().segment_values("head.weight").unwrap().iter().all(|&v| v == 0.0));
        let (m, f) = pair([8, 8, 12]);
        let ddf = net.predict(&m, &f).unwrap();
        assert_eq!(ddf.extent(), [8, 8, 12]);
        assert!(ddf.is_zero());
    }

    #[test]
    fn rejects_indivisible_extent() {
        let net = RegNet::init(small(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (m, f) = pair([8, 6, 8]);
        assert!(net.predict(&m, &f).is_err());
    }

    #[test]
    fn same_seed_same_network_and_output() {
        let a = RegNet::init(small(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = RegNet::init(small(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        let mut perturbed = a.params().clone();
        perturbed.values_mut().iter_mut().for_each(|v| *v += 0.01);
        let a = a.with_params(perturbed.clone()).unwrap();
        let b = b.with_params(perturbed).unwrap();
        let (m, f) = pair([8, 8, 8]);
        let da = a.predict(&m, &f).unwrap();
        assert_eq!(da, b.predict(&m, &f).unwrap());
        assert!(!da.is_zero());
    }

    #[test]
    fn hidden_weight_variance_matches_fan_in_rule() {
        // dec2 holds (16)·(48·27) = 20736 draws with fan-in 1296
        let cfg = RegNetConfig::default();
        let net = RegNet::init(cfg, &mut ChaCha8Rng::seed_from_u64(17)).unwrap();
        let w = net.params().segment_values("dec2.weight").unwrap();
        assert!(w.len() >= 10_000);
        let mean = w.iter().map(|&v| v as f64).sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        let fan_in = 48.0 * 27.0;
        let want = 2.0 / ((1.0 + 0.04) * fan_in);
        assert!((var - want).abs() / want < 0.2, "variance {var} vs {want}");
    }

    #[test]
    fn direct_model_is_an_identity_parameterization() {
        let ext = [6, 6, 6];
        let field = DisplacementField::from_fn(ext, |x, y, z| [x as f32 * 0.1, -(y as f32) * 0.05, z as f32 * 0.02]);
        let model = DirectDdfModel::from_field(&field);
        assert_eq!(model.field(), field);
        assert_eq!(model.params().values(), field.tensor().data());
        assert!(DirectDdfModel::zeros(ext).field().is_zero());

        // gradient w.r.t. params equals gradient w.r.t. the field itself
        let (m, f) = pair(ext);
        let w = LossWeights::default();
        let mut t1 = Tape::new();
        let (u, bound) = model.record(&mut t1);
        let mv = t1.constant(m.grid().clone());
        let fv = t1.constant(f.grid().clone());
        let l = record_total_loss(&mut t1, mv, fv, u, w).unwrap();
        let mut g1 = t1.backward(l).unwrap();
        let gp = bound.gradient(&mut g1);

        let mut t2 = Tape::new();
        let u2 = t2.param(field.tensor().clone());
        let mv = t2.constant(m.grid().clone());
        let fv = t2.constant(f.grid().clone());
        let l2 = record_total_loss(&mut t2, mv, fv, u2, w).unwrap();
        let g2 = t2.backward(l2).unwrap();
        assert_eq!(gp.values(), g2.get(u2).unwrap().data());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut net = RegNet::init(small(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        net.params_mut().values_mut()[0] = f32::from_bits(0x3f80_0001);
        net.save(dir.path()).unwrap();
        let back = RegNet::load(dir.path()).unwrap();
        assert_eq!(back.params().values(), net.params().values());
        assert_eq!(back.config(), net.config());
        let (m, f) = pair([8, 8, 8]);
        assert_eq!(back.predict(&m, &f).unwrap(), net.predict(&m, &f).unwrap());
    }

    #[test]
    fn checkpoint_with_short_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let net = RegNet::init(small(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        net.save(dir.path()).unwrap();
        std::fs::write(dir.path().join(PARAMS_FILE), [0u8; 16]).unwrap();
        assert!(matches!(RegNet::load(dir.path()), Err(Error::SizeMismatch { .. })));
    }
}

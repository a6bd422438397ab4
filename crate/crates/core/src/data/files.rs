//! On-disk volumes, displacement fields, landmark lists, and case directories.
//!
//! A volume is a text header (`dims`, `spacing_mm`, `dtype`, `order`) next to
//! a raw little-endian `f32` file with the same stem and a `.raw` extension.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::{read_f32le, read_text, write_f32le, write_text, KeyValues};
use crate::metrics::{Landmark, LandmarkSet};
use crate::tensor::Tensor;
use crate::transforms::DisplacementField;
use crate::volume::Volume;

use super::phantom::{CasePair, PhantomCase, Provenance};

const DTYPE: &str = "f32le";
const ORDER: &str = "x-fastest";

fn raw_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

fn write_grid(header: &Path, dims: &[usize], spacing: f64, data: &[f32]) -> Result<()> {
    let dims_text: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
    let text = format!(
        "dims = {}\nspacing_mm = {spacing} {spacing} {spacing}\ndtype = {DTYPE}\norder = {ORDER}\n",
        dims_text.join(" ")
    );
    write_text(header, &text)?;
    write_f32le(&raw_path(header), data)
}

fn read_grid(header: &Path, rank: usize) -> Result<(Vec<usize>, f64, Vec<f32>)> {
    let kv = KeyValues::load(header)?;
    let dtype = kv.require("dtype")?;
    if dtype != DTYPE {
        return Err(Error::UnknownDtype {
            path: header.to_path_buf(),
            dtype: dtype.to_string(),
        });
    }
    let order = kv.require("order")?;
    if order != ORDER {
        return Err(kv.parse_err("order", format!("unsupported order `{order}`")));
    }
    let dims: Vec<usize> = kv.parse_list("dims")?;
    if dims.len() != rank || dims.contains(&0) {
        return Err(kv.parse_err("dims", format!("expected {rank} positive sizes, got {dims:?}")));
    }
    let spacing: Vec<f64> = kv.parse_list("spacing_mm")?;
    let ok = spacing.len() == 3 && spacing.iter().all(|&s| s > 0.0 && s == spacing[0]);
    if !ok {
        return Err(kv.parse_err("spacing_mm", "expected three equal positive spacings"));
    }
    let data = read_f32le(&raw_path(header), dims.iter().product())?;
    Ok((dims, spacing[0], data))
}

pub fn save_volume(header: &Path, volume: &Volume) -> Result<()> {
    write_grid(header, volume.grid().dims(), volume.spacing(), volume.data())
}

pub fn load_volume(header: &Path) -> Result<Volume> {
    let (dims, spacing, data) = read_grid(header, 3)?;
    Volume::new(Tensor::new(&dims, data)?, spacing)
}

pub fn save_ddf(header: &Path, ddf: &DisplacementField, spacing: f64) -> Result<()> {
    write_grid(header, ddf.tensor().dims(), spacing, ddf.tensor().data())
}

pub fn load_ddf(header: &Path) -> Result<DisplacementField> {
    let (dims, _, data) = read_grid(header, 4)?;
    if dims[0] != 3 {
        return Err(Error::Parse {
            path: header.to_path_buf(),
            line: 0,
            msg: format!("displacement field needs 3 components, got {}", dims[0]),
        });
    }
    DisplacementField::new(Tensor::new(&dims, data)?)
}

/// One `name x y z radius` line per landmark, millimetres.
pub fn save_landmarks(path: &Path, set: &LandmarkSet) -> Result<()> {
    let mut text = String::from("# name x_mm y_mm z_mm radius_mm\n");
    for lm in &set.landmarks {
        let [x, y, z] = lm.centroid_mm;
        text.push_str(&format!("{} {x} {y} {z} {}\n", lm.name, lm.radius_mm));
    }
    write_text(path, &text)
}

pub fn load_landmarks(path: &Path) -> Result<LandmarkSet> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(err(format!("expected `name x y z radius`, got `{line}`")));
        }
        let nums = fields[1..]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| err(format!("cannot parse `{t}`"))))
            .collect::<Result<Vec<f64>>>()?;
        out.push(Landmark {
            name: fields[0].to_string(),
            centroid_mm: [nums[0], nums[1], nums[2]],
            radius_mm: nums[3],
        });
    }
    LandmarkSet::new(out)
}

fn save_case(dir: &Path, prefix: &str, case: &PhantomCase) -> Result<()> {
    save_volume(&dir.join(format!("{prefix}_image.hdr")), &case.image)?;
    save_volume(&dir.join(format!("{prefix}_mask.hdr")), &case.gland_mask)?;
    save_landmarks(&dir.join(format!("{prefix}_landmarks.txt")), &case.landmarks)
}

fn load_case(dir: &Path, prefix: &str, provenance: &Provenance) -> Result<PhantomCase> {
    let image = load_volume(&dir.join(format!("{prefix}_image.hdr")))?;
    let gland_mask = load_volume(&dir.join(format!("{prefix}_mask.hdr")))?;
    image.expect_same_grid(&gland_mask, "load_case")?;
    if !gland_mask.is_binary() {
        return Err(Error::invalid(format!("{}: gland mask is not binary", dir.display())));
    }
    Ok(PhantomCase {
        image,
        gland_mask,
        landmarks: load_landmarks(&dir.join(format!("{prefix}_landmarks.txt")))?,
        provenance: provenance.clone(),
    })
}

const PROVENANCE_FILE: &str = "provenance.txt";

/// Writes one case pair into `dir`, creating it if needed.
pub fn save_case_pair(dir: &Path, pair: &CasePair) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_case(dir, "moving", &pair.moving)?;
    save_case(dir, "fixed", &pair.fixed)?;
    save_ddf(&dir.join("ground_truth_ddf.hdr"), &pair.ground_truth_ddf, pair.spacing())?;
    let p = &pair.moving.provenance;
    write_text(
        &dir.join(PROVENANCE_FILE),
        &format!("seed = {}\ndeform_magnitude = {}\n", p.seed, p.deform_magnitude),
    )
}

pub fn load_case_pair(dir: &Path) -> Result<CasePair> {
    let kv = KeyValues::load(&dir.join(PROVENANCE_FILE))?;
    let provenance = Provenance {
        seed: kv.parse_value("seed")?,
        deform_magnitude: kv.parse_value("deform_magnitude")?,
    };
    let moving = load_case(dir, "moving", &provenance)?;
    let fixed = load_case(dir, "fixed", &provenance)?;
    moving.image.expect_same_grid(&fixed.image, "load_case_pair")?;
    let ground_truth_ddf = load_ddf(&dir.join("ground_truth_ddf.hdr"))?;
    if ground_truth_ddf.extent() != moving.image.extent() {
        return Err(Error::Shape {
            op: "load_case_pair",
            expected: moving.image.extent().to_vec(),
            actual: ground_truth_ddf.extent().to_vec(),
        });
    }
    Ok(CasePair {
        moving,
        fixed,
        ground_truth_ddf,
    })
}

/// Directory name for case `id` inside a dataset root.
pub fn case_dir(root: &Path, id: usize) -> PathBuf {
    root.join(format!("case_{id:03}"))
}

/// Writes each `(id, pair)` under `root/case_NNN` with `NNN = id`.
pub fn save_dataset(root: &Path, cases: &[(usize, CasePair)]) -> Result<()> {
    for (id, pair) in cases {
        save_case_pair(&case_dir(root, *id), pair)?;
    }
    Ok(())
}

fn case_id(name: &str) -> Option<usize> {
    name.strip_prefix("case_")?.parse().ok()
}

/// Loads every `case_NNN` directory under `root`, ordered by id.
pub fn load_dataset(root: &Path) -> Result<Vec<(usize, CasePair)>> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let name = entry.file_name();
        if let Some(id) = case_id(&name.to_string_lossy()) {
            if entry.path().is_dir() {
                dirs.push((id, entry.path()));
            }
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::invalid(format!("no case_* directories under {}", root.display())));
    }
    dirs.into_iter().map(|(id, d)| Ok((id, load_case_pair(&d)?))).collect()
}

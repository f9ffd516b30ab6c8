//! Procedural labelled "faces" whose attributes are recoverable by rule.
//!
//! Geometry is defined on a 32 x 32 canvas and scaled to the target
//! resolution. Race sets the hue of a filled ellipse, age group shrinks its
//! vertical radius and adds one horizontal wrinkle line per group, gender 1
//! adds a dark hair band above the ellipse.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use adgan_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};
use crate::attributes::{AttributeLabel, AttributeSpace};

/// Hue in degrees of each race index.
pub const RACE_HUES: [f64; 6] = [0.0, 120.0, 240.0, 60.0, 180.0, 300.0];

pub(crate) const FACE_SATURATION: f64 = 0.85;
pub(crate) const FACE_VALUE: f64 = 0.9;
pub(crate) const WRINKLE_SHADE: f64 = 0.6;
pub(crate) const HAIR_VALUE: f64 = 0.15;
pub(crate) const HAIR_THICKNESS: f64 = 3.0;
pub(crate) const WRINKLE_SPACING: i32 = 3;
pub(crate) const BASE: f64 = 32.0;
pub(crate) const RX: f64 = 8.0;
const RY_MAX: f64 = 11.0;
const RY_MIN: f64 = 6.0;
const JITTER: i32 = 1;

/// Representative ages (years) of the first five UTK-style groups, used as
/// the age column of exported manifests.
const EXPORT_AGES: [i64; 5] = [3, 8, 13, 18, 25];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub resolution: usize,
    pub n_age: usize,
    pub n_gender: usize,
    pub n_race: usize,
    pub per_label: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Synthetic(m));
        if self.resolution < 32 || self.resolution % 16 != 0 {
            return bad(format!(
                "resolution {} must be a multiple of 16 and at least 32",
                self.resolution
            ));
        }
        if !(1..=5).contains(&self.n_age) {
            return bad(format!("n_age {} outside 1..=5", self.n_age));
        }
        if !(1..=2).contains(&self.n_gender) {
            return bad(format!("n_gender {} outside 1..=2", self.n_gender));
        }
        if !(1..=RACE_HUES.len()).contains(&self.n_race) {
            return bad(format!("n_race {} outside 1..={}", self.n_race, RACE_HUES.len()));
        }
        if self.per_label == 0 {
            return bad("per_label must be at least 1".into());
        }
        Ok(())
    }

    pub fn space(&self) -> AttributeSpace {
        AttributeSpace {
            n_age: self.n_age,
            n_gender: self.n_gender,
            n_race: self.n_race,
        }
    }

    /// `per_label` images of every label, in flat-index order.
    pub fn generate(&self) -> crate::Result<Dataset> {
        self.validate()?;
        let space = self.space();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut images = Vec::with_capacity(space.len() * self.per_label);
        for label in space.labels() {
            for _ in 0..self.per_label {
                images.push((label, synth_generate(label, self, &mut rng)));
            }
        }
        Dataset::from_images(space, self.resolution, images)
    }
}

/// Vertical radius (32-pixel canvas units) of an age group.
pub(crate) fn radius_y(age: usize, n_age: usize) -> f64 {
    if n_age <= 1 {
        RY_MAX
    } else {
        RY_MAX - age as f64 * (RY_MAX - RY_MIN) / (n_age - 1) as f64
    }
}

/// Face placement and markings in 32-pixel canvas units.
#[derive(Clone, Debug)]
pub(crate) struct Face {
    pub cx: f64,
    pub cy: f64,
    pub ry: f64,
    pub wrinkle_rows: Vec<f64>,
    pub hair: bool,
    pub rgb: [f64; 3],
    pub background: f64,
}

impl Face {
    pub fn new(label: AttributeLabel, n_age: usize, dx: i32, dy: i32, background: f64) -> Self {
        let cy = 17 + dy;
        let g = label.age as i32;
        let start = cy - (WRINKLE_SPACING * (g - 1).max(0)) / 2;
        Face {
            cx: (16 + dx) as f64,
            cy: cy as f64,
            ry: radius_y(label.age, n_age),
            wrinkle_rows: (0..g).map(|k| (start + WRINKLE_SPACING * k) as f64).collect(),
            hair: label.gender == 1,
            rgb: hsv_to_rgb(RACE_HUES[label.race], FACE_SATURATION, FACE_VALUE),
            background,
        }
    }

    fn inside(&self, u: f64, v: f64) -> bool {
        let a = (u - self.cx) / RX;
        let b = (v - self.cy) / self.ry;
        a * a + b * b <= 1.0
    }

    /// Colour at canvas point `(u, v)`.
    pub fn shade(&self, u: f64, v: f64) -> [f64; 3] {
        if self.inside(u, v) {
            let wrinkle = self.inside(u - 1.0, v)
                && self.inside(u + 1.0, v)
                && self.wrinkle_rows.iter().any(|&r| v >= r && v < r + 1.0);
            let k = if wrinkle { WRINKLE_SHADE } else { 1.0 };
            return self.rgb.map(|c| c * k);
        }
        let top = self.cy - self.ry;
        if self.hair && v >= top - HAIR_THICKNESS && v < top && (u - self.cx).abs() <= RX - 2.0 {
            return [HAIR_VALUE; 3];
        }
        [self.background; 3]
    }

    /// Planar `[3, res, res]` image in `[-1, 1]`, sampled at pixel centres.
    pub fn render(&self, resolution: usize) -> Tensor<f32> {
        let s = resolution as f64 / BASE;
        let plane = resolution * resolution;
        let mut data = vec![0.0f32; 3 * plane];
        for y in 0..resolution {
            for x in 0..resolution {
                let rgb = self.shade((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
                for c in 0..3 {
                    data[c * plane + y * resolution + x] = (2.0 * rgb[c] - 1.0) as f32;
                }
            }
        }
        Tensor::new(vec![3, resolution, resolution], data).expect("plane sizes agree")
    }
}

pub(crate) fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// One synthetic image of `label`, with seeded position jitter of up to one
/// canvas pixels and a seeded background grey level.
pub fn synth_generate<R: Rng + ?Sized>(
    label: AttributeLabel,
    spec: &SyntheticSpec,
    rng: &mut R,
) -> Tensor<f32> {
    let dx = rng.random_range(-JITTER..=JITTER);
    let dy = rng.random_range(-JITTER..=JITTER);
    let background = rng.random_range(0.45..0.6);
    Face::new(label, spec.n_age, dx, dy, background).render(spec.resolution)
}

/// Writes every image of `spec.generate()` as PNG plus a `manifest.csv`
/// loadable with UTK binning; returns the number of images written.
pub fn synth_export(spec: &SyntheticSpec, dir: &Path) -> crate::Result<usize> {
    let ds = spec.generate()?;
    let werr = |path: &Path, e: &dyn std::fmt::Display| DataError::Write {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    fs::create_dir_all(dir).map_err(|e| werr(dir, &e))?;
    let manifest_path = dir.join("manifest.csv");
    let mut manifest = String::from("path,age,gender,race\n");
    let mut counts = vec![0usize; ds.space().len()];
    for i in 0..ds.len() {
        let l = ds.label(i);
        let t = ds.space().flat_index(l)?;
        let name = format!("a{}_g{}_r{}_{:04}.png", l.age, l.gender, l.race, counts[t]);
        counts[t] += 1;
        let path = dir.join(&name);
        let img = ds.image(i).expect("in-memory image");
        crate::grid::grid_emit(&[img], 1, 0, &path)?;
        manifest.push_str(&format!("{name},{},{},{}\n", EXPORT_AGES[l.age], l.gender, l.race));
    }
    fs::File::create(&manifest_path)
        .and_then(|mut f| f.write_all(manifest.as_bytes()))
        .map_err(|e| werr(&manifest_path, &e))?;
    Ok(ds.len())
}

//! Rule-based decoder of synthetic images back to attribute labels.

use adgan_tensor::{Real, Tensor};

use super::synthetic::{Face, BASE, FACE_VALUE, RACE_HUES, RX, WRINKLE_SHADE};
use crate::attributes::{AttributeLabel, AttributeSpace};

const FACE_CHROMA: f64 = 0.25;
const MIN_HUE_RESULTANT: f64 = 0.8;
const ROW_FRACTION: f64 = 0.25;
const HAIR_MAX_VALUE: f64 = 0.35;
const HAIR_MAX_CHROMA: f64 = 0.3;
const HAIR_MIN_FRACTION: f64 = 0.3;
const HAIR_WINDOW: f64 = 5.0;
const WRINKLE_WEIGHT: f64 = 0.25;

/// Raw measurements behind a decision; `label` is `None` when the image
/// holds no recognisable face.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleReading {
    pub face_pixels: usize,
    pub hue_resultant: f64,
    pub hue: f64,
    /// Vertical extent of the face in 32-pixel canvas units.
    pub height: f64,
    pub wrinkles: usize,
    /// Dark pixels in the band above the face over the full band area.
    pub hair_fraction: f64,
    pub label: Option<AttributeLabel>,
}

/// Decoder for one attribute space and resolution.
#[derive(Clone, Debug)]
pub struct Oracle {
    space: AttributeSpace,
    resolution: usize,
    heights: Vec<f64>,
    min_face_pixels: usize,
}

struct Pixel {
    chroma: f64,
    value: f64,
    hue: f64,
}

fn pixel(r: f64, g: f64, b: f64) -> Pixel {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let c = max - min;
    let hue = if c <= 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / c).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / c + 2.0)
    } else {
        60.0 * ((r - g) / c + 4.0)
    };
    Pixel {
        chroma: c,
        value: max,
        hue,
    }
}

fn hue_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

impl Oracle {
    pub fn new(space: AttributeSpace, resolution: usize) -> Self {
        let mut oracle = Oracle {
            space,
            resolution,
            heights: Vec::new(),
            min_face_pixels: 0,
        };
        let mut min_area = usize::MAX;
        for age in 0..space.n_age {
            let face = Face::new(AttributeLabel::new(age, 0, 0), space.n_age, 0, 0, 0.5);
            let r = oracle.measure(&face.render(resolution));
            oracle.heights.push(r.height);
            min_area = min_area.min(r.face_pixels);
        }
        oracle.min_face_pixels = (min_area as f64 * 0.4) as usize;
        oracle
    }

    pub fn space(&self) -> AttributeSpace {
        self.space
    }

    /// Template face heights per age group, canvas units.
    pub fn template_heights(&self) -> &[f64] {
        &self.heights
    }

    /// Decodes a `[3, res, res]` image in `[-1, 1]`.
    pub fn classify<T: Real>(&self, image: &Tensor<T>) -> Option<AttributeLabel> {
        self.measure(image).label
    }

    pub fn measure<T: Real>(&self, image: &Tensor<T>) -> OracleReading {
        let res = self.resolution;
        let scale = res as f64 / BASE;
        let mut reading = OracleReading {
            face_pixels: 0,
            hue_resultant: 0.0,
            hue: 0.0,
            height: 0.0,
            wrinkles: 0,
            hair_fraction: 0.0,
            label: None,
        };
        if image.shape() != [3, res, res] {
            return reading;
        }
        let plane = res * res;
        let d = image.data();
        let unit = |v: T| ((v.as_f64() + 1.0) * 0.5).clamp(0.0, 1.0);
        let px: Vec<Pixel> = (0..plane)
            .map(|p| pixel(unit(d[p]), unit(d[plane + p]), unit(d[2 * plane + p])))
            .collect();
        let mask: Vec<bool> = px.iter().map(|p| p.chroma > FACE_CHROMA).collect();

        let face_pixels = mask.iter().filter(|&&m| m).count();
        reading.face_pixels = face_pixels;
        if face_pixels == 0 {
            return reading;
        }

        let (mut sx, mut sy) = (0.0, 0.0);
        for (p, _) in px.iter().zip(&mask).filter(|(_, &m)| m) {
            let t = p.hue.to_radians();
            sx += t.cos();
            sy += t.sin();
        }
        reading.hue_resultant = (sx * sx + sy * sy).sqrt() / face_pixels as f64;
        reading.hue = sy.atan2(sx).to_degrees().rem_euclid(360.0);

        let row_counts: Vec<usize> = (0..res)
            .map(|y| mask[y * res..(y + 1) * res].iter().filter(|&&m| m).count())
            .collect();
        let widest = *row_counts.iter().max().unwrap();
        let threshold = (ROW_FRACTION * widest as f64).max(2.0);
        let rows: Vec<usize> = (0..res).filter(|&y| row_counts[y] as f64 >= threshold).collect();
        let (top, bottom) = match (rows.first(), rows.last()) {
            (Some(&t), Some(&b)) => (t, b),
            _ => return reading,
        };
        reading.height = (bottom - top + 1) as f64 / scale;

        let dark_cut = FACE_VALUE * (1.0 + WRINKLE_SHADE) / 2.0;
        let mut in_run = false;
        for y in top..=bottom {
            let vals: Vec<f64> = (0..res)
                .filter(|&x| mask[y * res + x])
                .map(|x| px[y * res + x].value)
                .collect();
            let dark = vals.len() >= 3 && vals.iter().sum::<f64>() / (vals.len() as f64) < dark_cut;
            if dark && !in_run {
                reading.wrinkles += 1;
            }
            in_run = dark;
        }

        let cx = (0..plane).filter(|&p| mask[p]).map(|p| (p % res) as f64 + 0.5).sum::<f64>()
            / face_pixels as f64;
        let half = (RX - 2.0) * scale;
        let band_top = (top as f64 - HAIR_WINDOW * scale).max(0.0) as usize;
        let mut dark = 0usize;
        for y in band_top..top {
            for x in 0..res {
                if ((x as f64 + 0.5) - cx).abs() > half {
                    continue;
                }
                let p = &px[y * res + x];
                if p.value < HAIR_MAX_VALUE && p.chroma < HAIR_MAX_CHROMA {
                    dark += 1;
                }
            }
        }
        let band_area = 3.0 * scale * (2.0 * half + 1.0);
        reading.hair_fraction = dark as f64 / band_area;

        if self.heights.len() != self.space.n_age
            || face_pixels < self.min_face_pixels
            || reading.hue_resultant < MIN_HUE_RESULTANT
        {
            return reading;
        }
        let race = (0..self.space.n_race)
            .min_by(|&a, &b| {
                hue_distance(reading.hue, RACE_HUES[a])
                    .total_cmp(&hue_distance(reading.hue, RACE_HUES[b]))
            })
            .unwrap();
        let spacing = self
            .heights
            .windows(2)
            .map(|w| (w[0] - w[1]).abs())
            .fold(f64::INFINITY, f64::min);
        let spacing = if spacing.is_finite() && spacing > 0.0 { spacing } else { 1.0 };
        let age = (0..self.space.n_age)
            .map(|g| {
                let wr = (reading.wrinkles as f64 - g as f64).abs().min(2.0);
                ((reading.height - self.heights[g]).abs() / spacing + WRINKLE_WEIGHT * wr, g)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap()
            .1;
        let gender = usize::from(self.space.n_gender > 1 && reading.hair_fraction >= HAIR_MIN_FRACTION);
        reading.label = Some(AttributeLabel::new(age, gender, race));
        reading
    }
}

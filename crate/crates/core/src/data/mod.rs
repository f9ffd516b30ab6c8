//! Datasets of labelled face images: CSV manifests of real photographs and
//! the procedural synthetic set with its rule-based oracle.

mod manifest;
mod oracle;
mod synthetic;

use std::cell::OnceCell;
use std::fmt;
use std::path::{Path, PathBuf};

use adgan_tensor::{Real, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use manifest::{load_manifest, read_manifest, ManifestRecord};
pub use oracle::{Oracle, OracleReading};
pub use synthetic::{synth_export, synth_generate, SyntheticSpec, RACE_HUES};

use crate::attributes::{AttributeLabel, AttributeSpace};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode image {path}: {detail}")]
    Decode { path: PathBuf, detail: String },
    #[error("{path}, line {line}: {detail}")]
    Malformed {
        path: PathBuf,
        line: u64,
        detail: String,
    },
    #[error("{0}: manifest lists zero records")]
    Empty(PathBuf),
    #[error("no samples for {} label class(es): {}", .0.len(), LabelList(.0))]
    EmptyClasses(Vec<AttributeLabel>),
    #[error("no decodable image after {0} draws")]
    Undecodable(usize),
    #[error("invalid synthetic spec: {0}")]
    Synthetic(String),
    #[error("cannot write {path}: {detail}")]
    Write { path: PathBuf, detail: String },
}

struct LabelList<'a>(&'a [AttributeLabel]);

impl fmt::Display for LabelList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "(age {}, gender {}, race {})", l.age, l.gender, l.race)?;
        }
        Ok(())
    }
}

/// Paired content and style samples, `[N, 3, H, W]` each, values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub content: Tensor<T>,
    pub content_labels: Vec<AttributeLabel>,
    pub style: Tensor<T>,
    pub style_labels: Vec<AttributeLabel>,
}

impl<T: Real> Batch<T> {
    pub fn len(&self) -> usize {
        self.content_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.content_labels.is_empty()
    }
}

#[derive(Clone, Debug)]
enum Source {
    Memory(Tensor<f32>),
    File(PathBuf),
}

#[derive(Clone, Debug)]
struct Item {
    label: AttributeLabel,
    source: Source,
    decoded: OnceCell<Option<Tensor<f32>>>,
}

/// Labelled images at one resolution. File-backed images are decoded on
/// first use and cached.
#[derive(Clone, Debug)]
pub struct Dataset {
    space: AttributeSpace,
    resolution: usize,
    items: Vec<Item>,
}

impl Dataset {
    /// In-memory images `[3, resolution, resolution]` in `[-1, 1]`.
    pub fn from_images(
        space: AttributeSpace,
        resolution: usize,
        images: Vec<(AttributeLabel, Tensor<f32>)>,
    ) -> crate::Result<Self> {
        let mut items = Vec::with_capacity(images.len());
        for (label, img) in images {
            space.validate(label)?;
            if img.shape() != [3, resolution, resolution] {
                return Err(crate::Error::Config(format!(
                    "dataset image shape {:?}, expected [3, {resolution}, {resolution}]",
                    img.shape()
                )));
            }
            items.push(Item {
                label,
                source: Source::Memory(img),
                decoded: OnceCell::new(),
            });
        }
        Ok(Dataset {
            space,
            resolution,
            items,
        })
    }

    pub(crate) fn from_files(
        space: AttributeSpace,
        resolution: usize,
        files: Vec<(AttributeLabel, PathBuf)>,
    ) -> Self {
        let items = files
            .into_iter()
            .map(|(label, path)| Item {
                label,
                source: Source::File(path),
                decoded: OnceCell::new(),
            })
            .collect();
        Dataset {
            space,
            resolution,
            items,
        }
    }

    pub fn space(&self) -> AttributeSpace {
        self.space
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn label(&self, i: usize) -> AttributeLabel {
        self.items[i].label
    }

    /// Image `i`, or `None` when its file cannot be decoded (logged once).
    pub fn image(&self, i: usize) -> Option<&Tensor<f32>> {
        let item = &self.items[i];
        match &item.source {
            Source::Memory(t) => Some(t),
            Source::File(path) => item
                .decoded
                .get_or_init(|| match decode_image(path, self.resolution) {
                    Ok(t) => Some(t),
                    Err(e) => {
                        log::warn!("skipping {}: {e}", path.display());
                        None
                    }
                })
                .as_ref(),
        }
    }

    /// Sample counts indexed by `flat_index`.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.space.len()];
        for item in &self.items {
            if let Ok(t) = self.space.flat_index(item.label) {
                h[t] += 1;
            }
        }
        h
    }

    /// Labels of the space without any sample, in flat-index order.
    pub fn missing_classes(&self) -> Vec<AttributeLabel> {
        let h = self.class_histogram();
        self.space.labels().filter(|l| h[self.space.flat_index(*l).unwrap()] == 0).collect()
    }

    pub fn require_all_classes(&self) -> Result<(), DataError> {
        let missing = self.missing_classes();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(DataError::EmptyClasses(missing))
        }
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            space: self.space,
            resolution: self.resolution,
            items: idx.iter().map(|&i| self.items[i].clone()).collect(),
        }
    }

    /// Per-class seeded split; each class keeps at least one training sample.
    pub fn split(&self, test_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_class = vec![Vec::new(); self.space.len()];
        for (i, item) in self.items.iter().enumerate() {
            by_class[self.space.flat_index(item.label).unwrap()].push(i);
        }
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for mut idx in by_class {
            idx.shuffle(&mut rng);
            let n_test = ((idx.len() as f64 * test_fraction).floor() as usize)
                .min(idx.len().saturating_sub(1));
            test.extend_from_slice(&idx[..n_test]);
            train.extend_from_slice(&idx[n_test..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        (self.subset(&train), self.subset(&test))
    }

    /// Index of a decodable sample drawn uniformly; undecodable draws are
    /// skipped.
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize, DataError> {
        let limit = 16 * self.items.len().max(1);
        for _ in 0..limit {
            let i = rng.random_range(0..self.items.len());
            if self.image(i).is_some() {
                return Ok(i);
            }
        }
        Err(DataError::Undecodable(limit))
    }

    /// `batch_size` content samples and `batch_size` independent style
    /// samples, drawn uniformly with replacement.
    pub fn sample_batch<T: Real, R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> crate::Result<Batch<T>> {
        if self.items.is_empty() {
            return Err(DataError::Undecodable(0).into());
        }
        let mut pick = || -> crate::Result<(Vec<Tensor<T>>, Vec<AttributeLabel>)> {
            let mut imgs = Vec::with_capacity(batch_size);
            let mut labels = Vec::with_capacity(batch_size);
            for _ in 0..batch_size {
                let i = self.draw(rng)?;
                imgs.push(self.image(i).unwrap().cast());
                labels.push(self.items[i].label);
            }
            Ok((imgs, labels))
        };
        let (content, content_labels) = pick()?;
        let (style, style_labels) = pick()?;
        Ok(Batch {
            content: Tensor::stack(&content)?,
            content_labels,
            style: Tensor::stack(&style)?,
            style_labels,
        })
    }
}

/// Decodes an image file, bilinearly resizes it to `size x size` and maps
/// 8-bit RGB linearly onto `[-1, 1]`.
pub fn decode_image(path: &Path, size: usize) -> Result<Tensor<f32>, image::ImageError> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let img = if (w as usize, h as usize) == (size, size) {
        img
    } else {
        image::imageops::resize(
            &img,
            size as u32,
            size as u32,
            image::imageops::FilterType::Triangle,
        )
    };
    Ok(rgb8_to_tensor(img.as_raw(), size))
}

/// Interleaved 8-bit RGB to planar `[3, size, size]` in `[-1, 1]`.
pub(crate) fn rgb8_to_tensor(raw: &[u8], size: usize) -> Tensor<f32> {
    let plane = size * size;
    let mut data = vec![0.0f32; 3 * plane];
    for (p, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + p] = px[c] as f32 / 127.5 - 1.0;
        }
    }
    Tensor::new(vec![3, size, size], data).expect("rgb buffer matches size")
}

//! Image pairs, datasets on disk, synthetic generation and patch sampling.
//!
//! On disk a dataset is `<root>/{train,eval}/<id>/{blur,sharp}.ppm`.

mod ppm;
mod synth;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

pub use ppm::{decode_ppm, encode_ppm, read_image, to_byte, write_image};
pub use synth::{synth_blur, synth_pair, SynthParams};

use crate::error::{Error, Result};
use crate::init::Rng;
use crate::tensor::Tensor;

pub const BLUR_FILE: &str = "blur.ppm";
pub const SHARP_FILE: &str = "sharp.ppm";

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub id: String,
    pub blurry: Tensor<f32>,
    pub sharp: Tensor<f32>,
}

impl ImagePair {
    pub fn new(id: impl Into<String>, blurry: Tensor<f32>, sharp: Tensor<f32>) -> Result<Self> {
        if blurry.shape() != sharp.shape() {
            return Err(Error::ShapeMismatch {
                op: "image_pair",
                left: blurry.shape(),
                right: sharp.shape(),
            });
        }
        let [n, c, _, _] = blurry.shape();
        if n != 1 || c != 3 {
            return Err(Error::invalid(
                "image_pair",
                format!("expected 1x3xHxW, got {:?}", blurry.shape()),
            ));
        }
        Ok(Self {
            id: id.into(),
            blurry,
            sharp,
        })
    }

    pub fn height(&self) -> usize {
        self.blurry.h()
    }

    pub fn width(&self) -> usize {
        self.blurry.w()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            _ => Err(Error::Config(format!(
                "unknown split `{s}` (expected train or eval)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pairs: Vec<ImagePair>,
}

impl Dataset {
    /// Fails on duplicate ids.
    pub fn new(split: Split, pairs: Vec<ImagePair>) -> Result<Self> {
        let mut seen = HashSet::new();
        if let Some(dup) = pairs.iter().find(|p| !seen.insert(p.id.as_str())) {
            return Err(Error::Config(format!(
                "duplicate pair id `{}` in {split} split",
                dup.id
            )));
        }
        Ok(Self { split, pairs })
    }

    pub fn pairs(&self) -> &[ImagePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Reads `<root>/<split>/<id>/` directories in lexicographic id order.
    pub fn load(root: impl AsRef<Path>, split: Split) -> Result<Self> {
        let dir = root.as_ref().join(split.dir_name());
        let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut ids = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if entry.path().is_dir() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        let pairs = ids
            .into_iter()
            .map(|id| {
                let d = dir.join(&id);
                ImagePair::new(
                    id,
                    read_image(d.join(BLUR_FILE))?,
                    read_image(d.join(SHARP_FILE))?,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(split, pairs)
    }

    pub fn save(&self, root: impl AsRef<Path>) -> Result<()> {
        let dir = root.as_ref().join(self.split.dir_name());
        for p in &self.pairs {
            let d = dir.join(&p.id);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            write_image(&p.blurry, d.join(BLUR_FILE))?;
            write_image(&p.sharp, d.join(SHARP_FILE))?;
        }
        Ok(())
    }
}

/// Train and eval halves of one generated or loaded collection.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub eval: Dataset,
}

impl SplitDataset {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        Ok(Self {
            train: Dataset::load(root, Split::Train)?,
            eval: Dataset::load(root, Split::Eval)?,
        })
    }

    pub fn save(&self, root: impl AsRef<Path>) -> Result<()> {
        self.train.save(&root)?;
        self.eval.save(&root)
    }

    pub fn get(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Eval => &self.eval,
        }
    }
}

/// Number of training pairs out of `count`: the first two thirds by index.
pub fn train_count(count: usize) -> usize {
    count * 2 / 3
}

pub fn generate_synthetic_dataset(
    count: usize,
    size: (usize, usize),
    rng: &mut Rng,
) -> Result<SplitDataset> {
    generate_synthetic_dataset_with(count, size, &SynthParams::default(), rng)
}

pub fn generate_synthetic_dataset_with(
    count: usize,
    (h, w): (usize, usize),
    params: &SynthParams,
    rng: &mut Rng,
) -> Result<SplitDataset> {
    if count == 0 {
        return Err(Error::invalid(
            "generate_synthetic_dataset",
            "count must be at least 1",
        ));
    }
    if h == 0 || w == 0 {
        return Err(Error::invalid(
            "generate_synthetic_dataset",
            format!("image size {h}x{w}"),
        ));
    }
    let mut pairs = (0..count)
        .map(|i| synth_pair(format!("{i:05}"), h, w, params, rng))
        .collect::<Result<Vec<_>>>()?;
    let eval = pairs.split_off(train_count(count));
    Ok(SplitDataset {
        train: Dataset::new(Split::Train, pairs)?,
        eval: Dataset::new(Split::Eval, eval)?,
    })
}

/// Crops the same `size × size` window from both images, with the offset
/// uniform over all valid positions.
pub fn sample_patch(pair: &ImagePair, size: usize, rng: &mut Rng) -> Result<ImagePair> {
    let (h, w) = (pair.height(), pair.width());
    if size == 0 || size > h || size > w {
        return Err(Error::invalid(
            "sample_patch",
            format!("patch {size} does not fit a {h}x{w} image"),
        ));
    }
    let top = rng.range_inclusive(0, h - size);
    let left = rng.range_inclusive(0, w - size);
    ImagePair::new(
        pair.id.clone(),
        pair.blurry.crop(top, left, size, size)?,
        pair.sharp.crop(top, left, size, size)?,
    )
}

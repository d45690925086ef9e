use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Mask, Tensor};

use super::idx::{load_idx_images, load_idx_labels};
use super::masks::MaskSpec;
use super::{Example, TaskData};

pub const MNIST_SIDE: usize = 28;
pub const LABEL_UNITS: usize = 28;
pub const NUM_CLASSES: usize = 10;
/// 28 image rows plus one label row of 28 units.
pub const SUPERVISED_UNITS: usize = MNIST_SIDE * MNIST_SIDE + LABEL_UNITS;

/// Class `c` turns on units `2c` and `2c + 1`; the other 26 are off.
pub fn encode_label(class: usize) -> Result<Tensor> {
    if class >= NUM_CLASSES {
        return Err(Error::InvalidArgument(format!("class {class} outside 0..10")));
    }
    Ok(Tensor::from_fn(&[LABEL_UNITS], |i| {
        if i / 2 == class && i < 2 * NUM_CLASSES {
            0.999
        } else {
            -0.999
        }
    }))
}

/// Class whose unit pair has the largest sum; ties go to the smaller class.
pub fn decode_label(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for c in 0..NUM_CLASSES {
        let s = row[2 * c] + row[2 * c + 1];
        if s > best_score {
            best = c;
            best_score = s;
        }
    }
    best
}

/// Flattened `[812]` visible target: image rows followed by the label row.
pub fn supervised_target(image: &Tensor, class: usize) -> Result<Tensor> {
    if image.shape() != [MNIST_SIDE, MNIST_SIDE] {
        return Err(Error::Shape(format!(
            "MNIST image must be 28×28, got {:?}",
            image.shape()
        )));
    }
    let mut data = image.data().to_vec();
    data.extend_from_slice(encode_label(class)?.data());
    Tensor::new(vec![SUPERVISED_UNITS], data)
}

/// Label row of a flattened supervised visible vector.
pub fn label_row(visible: &[f64]) -> &[f64] {
    &visible[MNIST_SIDE * MNIST_SIDE..SUPERVISED_UNITS]
}

/// Pixel mask from `spec` plus a fully hidden label row.
pub fn supervised_example(image: &Tensor, class: usize, spec: &MaskSpec, rng: &mut ChaCha8Rng) -> Result<Example> {
    let target = supervised_target(image, class)?;
    let pixels = spec.image_mask(image, rng)?;
    let mut bits = pixels.bits().to_vec();
    bits.extend(std::iter::repeat_n(false, LABEL_UNITS));
    Example::new(target, Mask::new(vec![SUPERVISED_UNITS], bits)?)
}

/// MNIST images with labels, served as supervised completion examples.
#[derive(Clone, Debug)]
pub struct MnistSupervised {
    /// `[N, 28, 28]` in activation units.
    pub images: Tensor,
    pub labels: Vec<u8>,
    pub mask: MaskSpec,
}

impl MnistSupervised {
    pub fn new(images: Tensor, labels: Vec<u8>, mask: MaskSpec) -> Result<Self> {
        if images.rank() != 3 || images.shape()[1..] != [MNIST_SIDE, MNIST_SIDE] {
            return Err(Error::Shape(format!(
                "MNIST images must be [N, 28, 28], got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Format(format!("label {bad} outside 0..10")));
        }
        mask.validate()?;
        Ok(MnistSupervised { images, labels, mask })
    }

    pub fn load(images: &Path, labels: &Path, mask: MaskSpec) -> Result<Self> {
        MnistSupervised::new(load_idx_images(images)?, load_idx_labels(labels)?, mask)
    }

    /// First `n` items only.
    pub fn truncate(mut self, n: usize) -> Self {
        if n < self.labels.len() {
            let keep = n * MNIST_SIDE * MNIST_SIDE;
            self.images = Tensor::new(vec![n, MNIST_SIDE, MNIST_SIDE], self.images.data()[..keep].to_vec())
                .expect("prefix of a valid tensor");
            self.labels.truncate(n);
        }
        self
    }

    pub fn with_mask(&self, mask: MaskSpec) -> Result<Self> {
        MnistSupervised::new(self.images.clone(), self.labels.clone(), mask)
    }

    pub fn image(&self, index: usize) -> Tensor {
        self.images.batch_item(index)
    }
}

impl TaskData for MnistSupervised {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn item_shape(&self) -> Vec<usize> {
        vec![SUPERVISED_UNITS]
    }

    fn example(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<Example> {
        supervised_example(&self.image(index), self.labels[index] as usize, &self.mask, rng)
    }

    fn class(&self, index: usize) -> Option<usize> {
        Some(self.labels[index] as usize)
    }
}

//! Task generators, loaders and observation masks.

mod bars;
mod idx;
mod images;
mod masks;
mod mnist;
mod superres;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Mask, Tensor};

pub use bars::{count_consistent, gen_bar_evidence, gen_bar_patterns, BAR_SIDE};
pub use idx::{
    byte_to_activation, encode_idx, load_idx_images, load_idx_labels, parse_idx, read_idx, write_idx, IdxArray,
};
pub use images::{activation_to_byte, encode_pnm, load_image_folder, parse_pnm, read_pnm, tile_grid, write_pnm, Image};
pub use masks::{bernoulli_mask, mask_coherence, perlin_mask, perlin_noise, square_patch_mask, MaskSpec};
pub use mnist::{
    decode_label, encode_label, label_row, supervised_example, supervised_target, MnistSupervised, LABEL_UNITS,
    MNIST_SIDE, NUM_CLASSES, SUPERVISED_UNITS,
};
pub use superres::{degrade2, SuperResolution};

/// One completion problem: the full visible target and which units are
/// observed. Evidence is the target restricted to the mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub target: Tensor,
    pub mask: Mask,
}

impl Example {
    pub fn new(target: Tensor, mask: Mask) -> Result<Self> {
        if target.shape() != mask.shape() {
            return Err(Error::Shape(format!(
                "target {:?} vs mask {:?}",
                target.shape(),
                mask.shape()
            )));
        }
        let observed = mask.count_true();
        if observed == 0 || observed == mask.len() {
            return Err(Error::InvalidArgument(
                "an example needs at least one observed and one hidden unit".into(),
            ));
        }
        Ok(Example { target, mask })
    }

    /// Target values on observed units, 0 elsewhere.
    pub fn evidence_values(&self) -> Tensor {
        Tensor::new(
            self.target.shape().to_vec(),
            self.target
                .data()
                .iter()
                .zip(self.mask.bits())
                .map(|(&v, &m)| if m { v } else { 0.0 })
                .collect(),
        )
        .expect("same shape as target")
    }
}

/// A source of training or evaluation examples. Masks may be redrawn on
/// every call from the supplied generator.
pub trait TaskData: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Shape of one visible item.
    fn item_shape(&self) -> Vec<usize>;

    fn example(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<Example>;

    /// Class label of an item, for tasks that have one.
    fn class(&self, _index: usize) -> Option<usize> {
        None
    }
}

/// The 20 bar images, each served with freshly drawn unique-completion
/// evidence. Items are flattened to `[25]` for fully-connected nets.
#[derive(Clone, Debug)]
pub struct BarTask {
    patterns: Vec<Tensor>,
}

impl Default for BarTask {
    fn default() -> Self {
        BarTask {
            patterns: gen_bar_patterns(),
        }
    }
}

impl BarTask {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn patterns(&self) -> &[Tensor] {
        &self.patterns
    }
}

impl TaskData for BarTask {
    fn len(&self) -> usize {
        self.patterns.len()
    }

    fn item_shape(&self) -> Vec<usize> {
        vec![BAR_SIDE * BAR_SIDE]
    }

    fn example(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<Example> {
        let ex = gen_bar_evidence(&self.patterns[index], rng)?;
        let flat = [BAR_SIDE * BAR_SIDE];
        Example::new(ex.target.reshape(&flat)?, ex.mask.reshape(&flat)?)
    }
}

/// Generic image completion: each `[c, h, w]` image masked per `mask`, with
/// the mask drawn on the channel-mean luminance and shared by all channels.
#[derive(Clone, Debug)]
pub struct ImageCompletion {
    pub images: Vec<Tensor>,
    pub mask: MaskSpec,
    /// Flatten items to one axis for fully-connected nets.
    pub flatten: bool,
}

impl ImageCompletion {
    pub fn new(images: Vec<Tensor>, mask: MaskSpec, flatten: bool) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidArgument("no images".into()))?;
        if first.rank() != 3 {
            return Err(Error::Shape(format!(
                "images must be [c, h, w], got {:?}",
                first.shape()
            )));
        }
        if let Some(bad) = images.iter().find(|t| t.shape() != first.shape()) {
            return Err(Error::Shape(format!(
                "images differ in shape: {:?} vs {:?}",
                first.shape(),
                bad.shape()
            )));
        }
        mask.validate()?;
        Ok(ImageCompletion { images, mask, flatten })
    }

    /// Draws a mask for one `[c, h, w]` image.
    pub fn mask_for(&self, image: &Tensor, rng: &mut ChaCha8Rng) -> Result<Mask> {
        let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
        let lum = Tensor::from_fn(&[h, w], |p| {
            (0..c).map(|ch| image.data()[ch * h * w + p]).sum::<f64>() / c as f64
        });
        let m = self.mask.image_mask(&lum, rng)?;
        let bits: Vec<bool> = (0..c).flat_map(|_| m.bits().iter().copied()).collect();
        Mask::new(image.shape().to_vec(), bits)
    }
}

impl TaskData for ImageCompletion {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn item_shape(&self) -> Vec<usize> {
        let s = self.images[0].shape();
        if self.flatten {
            vec![s.iter().product()]
        } else {
            s.to_vec()
        }
    }

    fn example(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<Example> {
        let img = &self.images[index];
        let mask = self.mask_for(img, rng)?;
        let shape = self.item_shape();
        Example::new(img.reshape(&shape)?, mask.reshape(&shape)?)
    }
}

/// Builds batched evidence inputs from examples: stacked targets `[n, …]`
/// and the matching stacked mask.
pub fn stack_examples(examples: &[Example]) -> Result<(Tensor, Mask)> {
    let targets: Vec<Tensor> = examples.iter().map(|e| e.target.clone()).collect();
    let masks: Vec<Mask> = examples.iter().map(|e| e.mask.clone()).collect();
    Ok((Tensor::stack(&targets)?, Mask::stack(&masks)?))
}

/// A random permutation of `0..n`.
pub fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

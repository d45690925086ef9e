use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{avg_pool2, nn_upsample2, Mask, Tensor};

use super::{Example, TaskData};

/// ×2 super-resolution on random square crops. Each item is `[2c, p, p]`:
/// the first `c` channels hold the crop reduced by 2×2 block means and
/// blown back up, the last `c` the crop itself. Only the first half is
/// observed, which matches the replicated evidence layout.
#[derive(Clone, Debug)]
pub struct SuperResolution {
    pub images: Vec<Tensor>,
    pub patch: usize,
}

/// Low-resolution version of a `[c, h, w]` image at its original size.
pub fn degrade2(image: &Tensor) -> Result<Tensor> {
    nn_upsample2(&avg_pool2(image)?)
}

impl SuperResolution {
    pub fn new(images: Vec<Tensor>, patch: usize) -> Result<Self> {
        if patch == 0 || !patch.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "patch size must be even and positive, got {patch}"
            )));
        }
        if images.is_empty() {
            return Err(Error::InvalidArgument("no images".into()));
        }
        let c = images[0].shape().first().copied().unwrap_or(0);
        for img in &images {
            let s = img.shape();
            if s.len() != 3 || s[0] != c || s[1] < patch || s[2] < patch {
                return Err(Error::Shape(format!(
                    "super-resolution images must be [{c}, ≥{patch}, ≥{patch}], got {s:?}"
                )));
            }
        }
        Ok(SuperResolution { images, patch })
    }

    fn channels(&self) -> usize {
        self.images[0].shape()[0]
    }

    /// Builds the item for one high-resolution crop `[c, p, p]`.
    pub fn item(crop: &Tensor) -> Result<Example> {
        let low = degrade2(crop)?;
        let mut shape = crop.shape().to_vec();
        shape[0] *= 2;
        let mut data = low.into_data();
        data.extend_from_slice(crop.data());
        let half = crop.len();
        let bits = (0..2 * half).map(|i| i < half).collect();
        Example::new(Tensor::new(shape.clone(), data)?, Mask::new(shape, bits)?)
    }
}

impl TaskData for SuperResolution {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn item_shape(&self) -> Vec<usize> {
        vec![2 * self.channels(), self.patch, self.patch]
    }

    fn example(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<Example> {
        let img = &self.images[index];
        let (c, h, w, p) = (img.shape()[0], img.shape()[1], img.shape()[2], self.patch);
        let y0 = rng.random_range(0..=h - p);
        let x0 = rng.random_range(0..=w - p);
        let crop = Tensor::from_fn(&[c, p, p], |k| {
            let (ch, y, x) = (k / (p * p), k / p % p, k % p);
            img.data()[(ch * h + y0 + y) * w + x0 + x]
        });
        Self::item(&crop)
    }
}

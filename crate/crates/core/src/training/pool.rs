//! History buffer of generated images for discriminator updates.

use ndarray::{Array3, Array4, Axis};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePool {
    capacity: usize,
    images: Vec<Array3<f32>>,
}

impl ImagePool {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, images: Vec::with_capacity(capacity) }
    }

    pub fn from_images(capacity: usize, images: Vec<Array3<f32>>) -> Self {
        Self { capacity, images }
    }

    pub fn images(&self) -> &[Array3<f32>] {
        &self.images
    }

    /// Returns a batch for the discriminator. While filling, every new image
    /// is stored and returned; afterwards each image is, with probability
    /// one half, swapped for a random stored one.
    pub fn query<R: Rng + ?Sized>(&mut self, batch: &Array4<f32>, rng: &mut R) -> Array4<f32> {
        if self.capacity == 0 {
            return batch.clone();
        }
        let mut out = batch.clone();
        for (i, img) in batch.outer_iter().enumerate() {
            if self.images.len() < self.capacity {
                self.images.push(img.to_owned());
            } else if rng.random::<f64>() < 0.5 {
                let k = rng.random_range(0..self.capacity);
                out.index_axis_mut(Axis(0), i).assign(&self.images[k]);
                self.images[k] = img.to_owned();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch(v: f32) -> Array4<f32> {
        Array4::from_elem((1, 1, 2, 2), v)
    }

    #[test]
    fn disabled_pool_passes_through() {
        let mut p = ImagePool::new(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(p.query(&batch(1.0), &mut rng), batch(1.0));
        assert!(p.images().is_empty());
    }

    #[test]
    fn fills_then_swaps() {
        let mut p = ImagePool::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for v in 0..3 {
            assert_eq!(p.query(&batch(v as f32), &mut rng), batch(v as f32));
        }
        assert_eq!(p.images().len(), 3);
        let mut swapped = 0;
        for v in 3..200 {
            let out = p.query(&batch(v as f32), &mut rng);
            swapped += usize::from(out != batch(v as f32));
            assert_eq!(p.images().len(), 3);
        }
        assert!((60..140).contains(&swapped), "swapped {swapped}");
    }
}

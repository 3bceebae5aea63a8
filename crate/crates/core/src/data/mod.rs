//! Image and mask tensors, corruption, and the enlarged inputs of the
//! semantic learner.
//!
//! Images live in `[-1, 1]` with layout `(batch, 3, H, W)`; masks are
//! `(batch, 1, H, W)` with `1` marking missing pixels.

mod images;
mod masks;
mod pairing;

pub use images::{load_image_dir, preprocess, synthetic_scene, to_rgb_image, ImageSet};
pub use masks::{
    bucket_of, generate_irregular_mask, load_mask_dir, load_mask_png, mask_ratio, save_mask_png,
    MaskSet, RatioBucket,
};
pub use pairing::{build_eval_pairing, Pairing};

use ndarray::{concatenate, s, Array4, ArrayView4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tch::{Kind, Tensor};

use crate::error::{Result, SplError};

/// Value written into missing pixels of the corrupted image.
pub const DEFAULT_FILL: f32 = 0.0;

/// Independent RNG stream for a worker, derived from `(seed, worker)`.
pub fn worker_rng(seed: u64, worker: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(worker);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor(Array4<f32>);

impl ImageTensor {
    pub fn new(data: Array4<f32>) -> Result<Self> {
        let (_, c, h, w) = data.dim();
        if c != 3 {
            return Err(SplError::Dimension(format!(
                "image tensor must have 3 channels, got {c}"
            )));
        }
        check_divisible(h, w)?;
        if let Some(v) = data.iter().find(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(SplError::Value(format!(
                "image values must be finite and within [-1, 1], found {v}"
            )));
        }
        Ok(ImageTensor(data))
    }

    /// Builds from a torch tensor of shape `(B, 3, H, W)`; any float kind.
    pub fn from_tch(t: &Tensor) -> Result<Self> {
        Self::new(tensor_to_array(t)?)
    }

    pub fn to_tch(&self, kind: Kind) -> Tensor {
        array_to_tensor(&self.0, kind)
    }

    pub fn data(&self) -> &Array4<f32> {
        &self.0
    }

    pub fn into_inner(self) -> Array4<f32> {
        self.0
    }

    pub fn batch(&self) -> usize {
        self.0.dim().0
    }

    pub fn height(&self) -> usize {
        self.0.dim().2
    }

    pub fn width(&self) -> usize {
        self.0.dim().3
    }

    /// The `i`-th sample as a batch of one.
    pub fn item(&self, i: usize) -> ImageTensor {
        ImageTensor(self.0.slice(s![i..i + 1, .., .., ..]).to_owned())
    }

    pub fn concat(items: &[&ImageTensor]) -> Result<ImageTensor> {
        let views: Vec<ArrayView4<f32>> = items.iter().map(|t| t.0.view()).collect();
        concatenate(Axis(0), &views)
            .map(ImageTensor)
            .map_err(|e| SplError::Dimension(format!("cannot batch images: {e}")))
    }

    /// Values rescaled from `[-1, 1]` to `[0, 1]`.
    pub fn to_unit_range(&self) -> Array4<f32> {
        self.0.mapv(|v| (v + 1.0) * 0.5)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskTensor(Array4<f32>);

impl MaskTensor {
    pub fn new(data: Array4<f32>) -> Result<Self> {
        let (_, c, h, w) = data.dim();
        if c != 1 {
            return Err(SplError::Dimension(format!(
                "mask tensor must have 1 channel, got {c}"
            )));
        }
        check_divisible(h, w)?;
        if let Some(v) = data.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(SplError::Value(format!("mask must be binary, found {v}")));
        }
        Ok(MaskTensor(data))
    }

    pub fn zeros(batch: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(Array4::zeros((batch, 1, height, width)))
    }

    pub fn ones(batch: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(Array4::ones((batch, 1, height, width)))
    }

    pub fn from_tch(t: &Tensor) -> Result<Self> {
        Self::new(tensor_to_array(t)?)
    }

    pub fn to_tch(&self, kind: Kind) -> Tensor {
        array_to_tensor(&self.0, kind)
    }

    pub fn data(&self) -> &Array4<f32> {
        &self.0
    }

    pub fn batch(&self) -> usize {
        self.0.dim().0
    }

    pub fn height(&self) -> usize {
        self.0.dim().2
    }

    pub fn width(&self) -> usize {
        self.0.dim().3
    }

    pub fn item(&self, i: usize) -> MaskTensor {
        MaskTensor(self.0.slice(s![i..i + 1, .., .., ..]).to_owned())
    }

    pub fn concat(items: &[&MaskTensor]) -> Result<MaskTensor> {
        let views: Vec<ArrayView4<f32>> = items.iter().map(|t| t.0.view()).collect();
        concatenate(Axis(0), &views)
            .map(MaskTensor)
            .map_err(|e| SplError::Dimension(format!("cannot batch masks: {e}")))
    }
}

fn check_divisible(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
        return Err(SplError::Dimension(format!(
            "spatial size {h}x{w} must be non-empty and divisible by 4"
        )));
    }
    Ok(())
}

fn tensor_to_array(t: &Tensor) -> Result<Array4<f32>> {
    let dims: Vec<usize> = t.size().iter().map(|&d| d as usize).collect();
    if dims.len() != 4 {
        return Err(SplError::Dimension(format!(
            "expected a 4-d tensor, got shape {dims:?}"
        )));
    }
    let flat = t.detach().to_kind(Kind::Float).contiguous().view([-1]);
    let values = Vec::<f32>::try_from(&flat)?;
    Array4::from_shape_vec((dims[0], dims[1], dims[2], dims[3]), values)
        .map_err(|e| SplError::Dimension(e.to_string()))
}

fn array_to_tensor(a: &Array4<f32>, kind: Kind) -> Tensor {
    let shape: Vec<i64> = a.shape().iter().map(|&d| d as i64).collect();
    let values: Vec<f32> = a.iter().copied().collect();
    Tensor::from_slice(&values).view(shape.as_slice()).to_kind(kind)
}

/// `image ⊙ (1 − mask) + fill · mask`.
pub fn corrupt(image: &ImageTensor, mask: &MaskTensor, fill: f32) -> Result<ImageTensor> {
    let (b, _, h, w) = image.0.dim();
    let (mb, _, mh, mw) = mask.0.dim();
    if (b, h, w) != (mb, mh, mw) {
        return Err(SplError::Dimension(format!(
            "image {b}x{h}x{w} and mask {mb}x{mh}x{mw} disagree"
        )));
    }
    let mut out = image.0.clone();
    for ((n, _, y, x), v) in out.indexed_iter_mut() {
        if mask.0[[n, 0, y, x]] == 1.0 {
            *v = fill;
        }
    }
    ImageTensor::new(out)
}

/// Bilinear ×2 upsampling with half-pixel centres (edges clamped).
fn upsample_bilinear_x2(a: &Array4<f32>) -> Array4<f32> {
    let (b, c, h, w) = a.dim();
    let taps = |n: usize, o: usize| -> (usize, usize, f32) {
        let src = ((o as f32 + 0.5) * 0.5 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, src - i0 as f32)
    };
    let rows: Vec<_> = (0..2 * h).map(|o| taps(h, o)).collect();
    let cols: Vec<_> = (0..2 * w).map(|o| taps(w, o)).collect();
    let mut out = Array4::zeros((b, c, 2 * h, 2 * w));
    for ((n, ch, y, x), v) in out.indexed_iter_mut() {
        let (y0, y1, fy) = rows[y];
        let (x0, x1, fx) = cols[x];
        let top = a[[n, ch, y0, x0]] * (1.0 - fx) + a[[n, ch, y0, x1]] * fx;
        let bottom = a[[n, ch, y1, x0]] * (1.0 - fx) + a[[n, ch, y1, x1]] * fx;
        *v = (top * (1.0 - fy) + bottom * fy).clamp(-1.0, 1.0);
    }
    out
}

fn upsample_nearest_x2(a: &Array4<f32>) -> Array4<f32> {
    let (b, c, h, w) = a.dim();
    Array4::from_shape_fn((b, c, 2 * h, 2 * w), |(n, ch, y, x)| a[[n, ch, y / 2, x / 2]])
}

/// Enlarges an image/mask pair by two: bilinear for the image, nearest for
/// the mask. The enlarged corrupted image is rebuilt from the enlarged pair
/// so hole boundaries stay exact.
pub fn upsample_pair(
    image: &ImageTensor,
    mask: &MaskTensor,
    fill: f32,
) -> Result<(ImageTensor, ImageTensor, MaskTensor)> {
    let (b, _, h, w) = image.0.dim();
    if (b, h, w) != (mask.batch(), mask.height(), mask.width()) {
        return Err(SplError::Dimension(format!(
            "image {b}x{h}x{w} and mask {}x{}x{} disagree",
            mask.batch(),
            mask.height(),
            mask.width()
        )));
    }
    let image_up = ImageTensor::new(upsample_bilinear_x2(&image.0))?;
    let mask_up = MaskTensor::new(upsample_nearest_x2(&mask.0))?;
    let corrupted_up = corrupt(&image_up, &mask_up, fill)?;
    Ok((image_up, corrupted_up, mask_up))
}

/// A training or evaluation sample with its enlarged counterparts.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSample {
    pub image: ImageTensor,
    pub mask: MaskTensor,
    pub corrupted: ImageTensor,
    pub image_up: ImageTensor,
    pub corrupted_up: ImageTensor,
    pub mask_up: MaskTensor,
}

impl MaskedSample {
    pub fn new(image: ImageTensor, mask: MaskTensor, fill: f32) -> Result<Self> {
        let corrupted = corrupt(&image, &mask, fill)?;
        let (image_up, corrupted_up, mask_up) = upsample_pair(&image, &mask, fill)?;
        Ok(MaskedSample {
            image,
            mask,
            corrupted,
            image_up,
            corrupted_up,
            mask_up,
        })
    }

    pub fn batch(&self) -> usize {
        self.image.batch()
    }

    pub fn concat(items: &[&MaskedSample]) -> Result<MaskedSample> {
        let images: Vec<_> = items.iter().map(|s| &s.image).collect();
        let masks: Vec<_> = items.iter().map(|s| &s.mask).collect();
        let corrupted: Vec<_> = items.iter().map(|s| &s.corrupted).collect();
        let images_up: Vec<_> = items.iter().map(|s| &s.image_up).collect();
        let corrupted_up: Vec<_> = items.iter().map(|s| &s.corrupted_up).collect();
        let masks_up: Vec<_> = items.iter().map(|s| &s.mask_up).collect();
        Ok(MaskedSample {
            image: ImageTensor::concat(&images)?,
            mask: MaskTensor::concat(&masks)?,
            corrupted: ImageTensor::concat(&corrupted)?,
            image_up: ImageTensor::concat(&images_up)?,
            corrupted_up: ImageTensor::concat(&corrupted_up)?,
            mask_up: MaskTensor::concat(&masks_up)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageTensor {
        ImageTensor::new(Array4::from_shape_fn((1, 3, h, w), |_| rng.gen_range(-1.0..=1.0))).unwrap()
    }

    fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> MaskTensor {
        MaskTensor::new(Array4::from_shape_fn((1, 1, h, w), |_| {
            if rng.gen_bool(0.3) {
                1.0
            } else {
                0.0
            }
        }))
        .unwrap()
    }

    #[test]
    fn rejects_non_binary_mask_and_bad_sizes() {
        assert!(MaskTensor::new(Array4::from_elem((1, 1, 4, 4), 0.5)).is_err());
        assert!(MaskTensor::zeros(1, 6, 4).is_err());
        assert!(ImageTensor::new(Array4::zeros((1, 3, 4, 10))).is_err());
        assert!(ImageTensor::new(Array4::from_elem((1, 3, 4, 4), 1.5)).is_err());
    }

    #[test]
    fn corrupt_empty_and_full_masks() {
        let mut rng = worker_rng(1, 0);
        let img = random_image(&mut rng, 8, 8);
        let empty = MaskTensor::zeros(1, 8, 8).unwrap();
        assert_eq!(corrupt(&img, &empty, 0.0).unwrap(), img);
        let full = MaskTensor::ones(1, 8, 8).unwrap();
        assert!(corrupt(&img, &full, 0.0).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn corrupt_hand_example() {
        // 2x2 payload padded to the minimum 4x4 extent; only the top-left block matters.
        let mut img = Array4::zeros((1, 3, 4, 4));
        let mut mask = Array4::zeros((1, 1, 4, 4));
        for c in 0..3 {
            img.slice_mut(s![0, c, 0..2, 0..2]).assign(&array![[1.0, -1.0], [0.5, 0.0]]);
        }
        mask.slice_mut(s![0, 0, 0..2, 0..2]).assign(&array![[1.0, 0.0], [0.0, 1.0]]);
        let out = corrupt(&ImageTensor::new(img).unwrap(), &MaskTensor::new(mask).unwrap(), 0.0).unwrap();
        for c in 0..3 {
            assert_eq!(out.data().slice(s![0, c, 0..2, 0..2]), array![[0.0, -1.0], [0.5, 0.0]]);
        }
    }

    #[test]
    fn corrupt_shape_mismatch() {
        let img = ImageTensor::new(Array4::zeros((1, 3, 8, 8))).unwrap();
        let mask = MaskTensor::zeros(1, 4, 8).unwrap();
        assert!(matches!(corrupt(&img, &mask, 0.0), Err(SplError::Dimension(_))));
    }

    #[test]
    fn nearest_mask_upsampling_replicates_blocks() {
        let mut m = Array4::zeros((1, 1, 4, 4));
        m[[0, 0, 0, 0]] = 1.0;
        let img = ImageTensor::new(Array4::zeros((1, 3, 4, 4))).unwrap();
        let (_, _, up) = upsample_pair(&img, &MaskTensor::new(m).unwrap(), 0.0).unwrap();
        assert_eq!(up.height(), 8);
        for y in 0..8 {
            for x in 0..8 {
                let expect = if y < 2 && x < 2 { 1.0 } else { 0.0 };
                assert_eq!(up.data()[[0, 0, y, x]], expect);
            }
        }
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = ImageTensor::new(Array4::from_elem((2, 3, 8, 12), 0.25)).unwrap();
        let mask = MaskTensor::zeros(2, 8, 12).unwrap();
        let (up, cup, _) = upsample_pair(&img, &mask, 0.0).unwrap();
        assert_eq!(up.data().dim(), (2, 3, 16, 24));
        assert!(up.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
        assert_eq!(up, cup);
    }

    #[test]
    fn upsampled_masks_stay_binary_over_many_random_masks() {
        let mut rng = worker_rng(2024, 3);
        let img = ImageTensor::new(Array4::zeros((1, 3, 8, 8))).unwrap();
        for _ in 0..1000 {
            let mask = random_mask(&mut rng, 8, 8);
            let (_, _, up) = upsample_pair(&img, &mask, 0.0).unwrap();
            assert!(up.data().iter().all(|&v| v == 0.0 || v == 1.0));
            assert!((mask_ratio(&up) - mask_ratio(&mask)).abs() < 1e-6);
        }
    }

    #[test]
    fn masked_sample_invariants() {
        let mut rng = worker_rng(5, 1);
        let image = random_image(&mut rng, 8, 8);
        let mask = random_mask(&mut rng, 8, 8);
        let s = MaskedSample::new(image.clone(), mask.clone(), DEFAULT_FILL).unwrap();
        assert_eq!(s.corrupted, corrupt(&image, &mask, DEFAULT_FILL).unwrap());
        assert_eq!(s.image_up.data().dim(), (1, 3, 16, 16));
        assert_eq!(s.corrupted_up.data().dim(), (1, 3, 16, 16));
        assert_eq!(s.mask_up.data().dim(), (1, 1, 16, 16));
        let batch = MaskedSample::concat(&[&s, &s]).unwrap();
        assert_eq!(batch.batch(), 2);
        assert_eq!(batch.image.item(1), image);
    }

    #[test]
    fn tensor_round_trip() {
        let mut rng = worker_rng(9, 0);
        let img = random_image(&mut rng, 4, 8);
        let back = ImageTensor::from_tch(&img.to_tch(Kind::Float)).unwrap();
        assert_eq!(back, img);
    }

    proptest! {
        #[test]
        fn corrupt_keeps_valid_pixels_and_is_idempotent(seed in 0u64..10_000, fill in -1.0f32..=1.0) {
            let mut rng = worker_rng(seed, 0);
            let img = random_image(&mut rng, 8, 4);
            let mask = random_mask(&mut rng, 8, 4);
            let once = corrupt(&img, &mask, fill).unwrap();
            for ((n, c, y, x), &v) in once.data().indexed_iter() {
                if mask.data()[[n, 0, y, x]] == 0.0 {
                    prop_assert_eq!(v, img.data()[[n, c, y, x]]);
                }
            }
            prop_assert_eq!(corrupt(&once, &mask, fill).unwrap(), once);
        }
    }
}

use std::path::Path;

use image::{imageops::FilterType, DynamicImage, Rgb, RgbImage};
use ndarray::Array4;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ImageTensor;
use crate::error::{Result, SplError};

/// Decoded RGB image → `(1, 3, size, size)` tensor in `[-1, 1]`.
///
/// With `center_crop` the largest centred square is cut out first; otherwise
/// the image is resized directly.
pub fn preprocess(raw: &DynamicImage, target_size: usize, center_crop: bool) -> Result<ImageTensor> {
    if target_size == 0 || target_size % 4 != 0 {
        return Err(SplError::Config(format!(
            "target size {target_size} must be a positive multiple of 4"
        )));
    }
    if !raw.color().has_color() {
        return Err(SplError::Decode(format!(
            "expected an RGB image, got {:?}",
            raw.color()
        )));
    }
    let mut rgb = raw.to_rgb8();
    let (w, h) = rgb.dimensions();
    if w == 0 || h == 0 {
        return Err(SplError::Decode("image has no pixels".into()));
    }
    if center_crop && w != h {
        let side = w.min(h);
        rgb = image::imageops::crop_imm(&rgb, (w - side) / 2, (h - side) / 2, side, side).to_image();
    }
    let size = target_size as u32;
    if rgb.dimensions() != (size, size) {
        rgb = image::imageops::resize(&rgb, size, size, FilterType::Triangle);
    }
    ImageTensor::new(Array4::from_shape_fn(
        (1, 3, target_size, target_size),
        |(_, c, y, x)| rgb.get_pixel(x as u32, y as u32)[c] as f32 / 127.5 - 1.0,
    ))
}

/// Sample `index` of an image tensor as 8-bit RGB.
pub fn to_rgb_image(image: &ImageTensor, index: usize) -> RgbImage {
    let data = image.data();
    RgbImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        let px = |c: usize| {
            let v = data[[index, c, y as usize, x as usize]];
            ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
        };
        Rgb([px(0), px(1), px(2)])
    })
}

/// A procedurally drawn scene: a two-colour gradient with a few flat shapes.
pub fn synthetic_scene(seed: u64, size: usize) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let color = |rng: &mut ChaCha8Rng| [rng.gen::<u8>(), rng.gen::<u8>(), rng.gen::<u8>()];
    let top = color(&mut rng);
    let bottom = color(&mut rng);
    let horizontal = rng.gen_bool(0.5);
    let s = size as f32;
    let mut img = RgbImage::from_fn(size as u32, size as u32, |x, y| {
        let t = if horizontal { x as f32 } else { y as f32 } / (s - 1.0).max(1.0);
        let mix = |a: u8, b: u8| (a as f32 * (1.0 - t) + b as f32 * t).round() as u8;
        Rgb([mix(top[0], bottom[0]), mix(top[1], bottom[1]), mix(top[2], bottom[2])])
    });
    let shapes = rng.gen_range(2..5);
    for _ in 0..shapes {
        let fill = color(&mut rng);
        let cx = rng.gen_range(0.0..s);
        let cy = rng.gen_range(0.0..s);
        let r = rng.gen_range(0.08..0.3) * s;
        let circle = rng.gen_bool(0.5);
        for (x, y, px) in img.enumerate_pixels_mut() {
            let (dx, dy) = (x as f32 - cx, y as f32 - cy);
            let inside = if circle {
                dx * dx + dy * dy <= r * r
            } else {
                dx.abs() <= r && dy.abs() <= r * 0.6
            };
            if inside {
                *px = Rgb(fill);
            }
        }
    }
    img
}

/// Images addressed by id, each a batch of one.
#[derive(Debug, Clone, Default)]
pub struct ImageSet {
    pub ids: Vec<String>,
    pub images: Vec<ImageTensor>,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageTensor> {
        self.ids.iter().position(|i| i == id).map(|i| &self.images[i])
    }

    pub fn synthetic(seed: u64, count: usize, size: usize) -> Result<ImageSet> {
        let mut set = ImageSet::default();
        for i in 0..count {
            let raw = DynamicImage::ImageRgb8(synthetic_scene(seed.wrapping_add(i as u64), size));
            set.images.push(preprocess(&raw, size, false)?);
            set.ids.push(format!("scene_{i:05}"));
        }
        Ok(set)
    }
}

/// Loads every PNG/JPEG in `dir`, sorted by file name; ids are file stems.
pub fn load_image_dir(dir: &Path, size: usize, center_crop: bool) -> Result<ImageSet> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| SplError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().and_then(|e| e.to_str()).is_some_and(|e| {
                ["png", "jpg", "jpeg"]
                    .iter()
                    .any(|ext| e.eq_ignore_ascii_case(ext))
            })
        })
        .collect();
    paths.sort();
    let mut set = ImageSet::default();
    for p in paths {
        let raw = image::open(&p).map_err(|e| SplError::Decode(format!("{}: {e}", p.display())))?;
        set.images.push(preprocess(&raw, size, center_crop)?);
        set.ids.push(
            p.file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| SplError::Decode(format!("bad file name {}", p.display())))?
                .to_string(),
        );
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma};

    #[test]
    fn constant_gray_maps_to_expected_value() {
        let raw = DynamicImage::ImageRgb8(RgbImage::from_pixel(37, 53, Rgb([128, 128, 128])));
        let t = preprocess(&raw, 256, false).unwrap();
        assert_eq!(t.data().dim(), (1, 3, 256, 256));
        let expect = 128.0 / 127.5 - 1.0;
        assert!(t.data().iter().all(|&v| (v - expect).abs() < 1e-6));
        assert!((expect - 0.00392).abs() < 1e-5);
    }

    #[test]
    fn center_crop_takes_middle_square() {
        // 300x200: left and right 50-column bands are red, centre is blue.
        let raw = RgbImage::from_fn(300, 200, |x, _| {
            if (50..250).contains(&x) {
                Rgb([0, 0, 255])
            } else {
                Rgb([255, 0, 0])
            }
        });
        let t = preprocess(&DynamicImage::ImageRgb8(raw), 256, true).unwrap();
        // Only blue survives the crop.
        assert!(t.data().slice(ndarray::s![0, 0, .., ..]).iter().all(|&v| v == -1.0));
        assert!(t.data().slice(ndarray::s![0, 2, .., ..]).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn endpoint_mapping() {
        let mut raw = RgbImage::from_pixel(256, 256, Rgb([0, 0, 0]));
        raw.put_pixel(0, 0, Rgb([255, 0, 0]));
        let t = preprocess(&DynamicImage::ImageRgb8(raw), 256, false).unwrap();
        assert_eq!(t.data()[[0, 0, 0, 0]], 1.0);
        assert_eq!(t.data()[[0, 1, 0, 0]], -1.0);
        assert_eq!(t.data()[[0, 2, 0, 0]], -1.0);
    }

    #[test]
    fn errors() {
        let gray = DynamicImage::ImageLuma8(GrayImage::from_pixel(8, 8, Luma([3])));
        assert!(matches!(preprocess(&gray, 8, false), Err(SplError::Decode(_))));
        let rgb = DynamicImage::ImageRgb8(RgbImage::new(8, 8));
        assert!(matches!(preprocess(&rgb, 10, false), Err(SplError::Config(_))));
    }

    #[test]
    fn rgb_round_trip_is_exact() {
        let raw = synthetic_scene(3, 32);
        let t = preprocess(&DynamicImage::ImageRgb8(raw.clone()), 32, false).unwrap();
        assert_eq!(to_rgb_image(&t, 0), raw);
    }

    #[test]
    fn synthetic_set_is_deterministic() {
        let a = ImageSet::synthetic(1, 3, 16).unwrap();
        let b = ImageSet::synthetic(1, 3, 16).unwrap();
        assert_eq!(a.images, b.images);
        assert_ne!(a.images[0], a.images[1]);
    }

    #[test]
    fn directory_loading() {
        let dir = tempfile::tempdir().unwrap();
        synthetic_scene(1, 40).save(dir.path().join("b.png")).unwrap();
        synthetic_scene(2, 24).save(dir.path().join("a.png")).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let set = load_image_dir(dir.path(), 16, true).unwrap();
        assert_eq!(set.ids, vec!["a", "b"]);
        assert_eq!(set.images[0].height(), 16);
    }
}

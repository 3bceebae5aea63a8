use std::fmt;
use std::path::Path;

use image::{imageops::FilterType, GrayImage, Luma};
use ndarray::Array4;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::MaskTensor;
use crate::error::{Result, SplError};

const BUCKET_LABELS: [&str; 6] = ["0%-10%", "10%-20%", "20%-30%", "30%-40%", "40%-50%", "50%-60%"];

/// One of the six half-open mask-ratio intervals `[k/10, (k+1)/10)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RatioBucket(u8);

impl RatioBucket {
    pub const COUNT: usize = 6;

    pub fn all() -> impl Iterator<Item = RatioBucket> {
        (0..Self::COUNT as u8).map(RatioBucket)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn from_index(i: usize) -> Option<RatioBucket> {
        (i < Self::COUNT).then_some(RatioBucket(i as u8))
    }

    pub fn label(self) -> &'static str {
        BUCKET_LABELS[self.index()]
    }

    pub fn from_label(label: &str) -> Result<RatioBucket> {
        BUCKET_LABELS
            .iter()
            .position(|l| *l == label)
            .map(|i| RatioBucket(i as u8))
            .ok_or_else(|| SplError::Config(format!("unknown mask bucket `{label}`")))
    }

    pub fn lower(self) -> f64 {
        self.0 as f64 / 10.0
    }

    pub fn upper(self) -> f64 {
        (self.0 + 1) as f64 / 10.0
    }

    pub fn contains(self, ratio: f64) -> bool {
        ratio >= self.lower() && ratio < self.upper()
    }
}

impl fmt::Display for RatioBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Fraction of missing pixels over the whole tensor.
pub fn mask_ratio(mask: &MaskTensor) -> f64 {
    let data = mask.data();
    let ones = data.iter().filter(|&&v| v == 1.0).count();
    ones as f64 / data.len() as f64
}

/// Bucket containing `ratio`; a ratio on a boundary belongs to the upper interval.
pub fn bucket_of(ratio: f64) -> Result<RatioBucket> {
    RatioBucket::all()
        .find(|b| b.contains(ratio))
        .ok_or(SplError::OutOfProtocol(ratio))
}

const MAX_ATTEMPTS: usize = 64;

/// Free-form stroke mask whose ratio falls inside `bucket`.
///
/// Strokes are random walks stamped with square brushes; stamping stops as
/// soon as a target ratio drawn inside the bucket is reached. Brushes are
/// small enough that a single stamp cannot jump across the remaining margin,
/// so retries are rare.
pub fn generate_irregular_mask(
    seed: u64,
    bucket: RatioBucket,
    height: usize,
    width: usize,
) -> Result<MaskTensor> {
    if height == 0 || width == 0 || height % 4 != 0 || width % 4 != 0 {
        return Err(SplError::Dimension(format!(
            "mask size {height}x{width} must be non-empty and divisible by 4"
        )));
    }
    let total = height * width;
    let span = bucket.upper() - bucket.lower();
    // Largest radius whose square stamp covers at most 1.5% of the image.
    let max_radius = {
        let side = (0.015 * total as f64).sqrt();
        (((side - 1.0) / 2.0).floor().max(0.0)) as i64
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut achieved = 0.0;
    for _ in 0..MAX_ATTEMPTS {
        let target = bucket.lower() + rng.gen_range(0.15..0.8) * span;
        let mut grid = vec![false; total];
        let mut ones = 0usize;
        let mut reached = false;
        while !reached {
            let radius = rng.gen_range(0..=max_radius);
            let mut y = rng.gen_range(0..height) as f64;
            let mut x = rng.gen_range(0..width) as f64;
            let mut angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let vertices = rng.gen_range(3..10);
            let max_step = (height.max(width) / 4).max(2);
            'walk: for _ in 0..vertices {
                angle += rng.gen_range(-1.2..1.2);
                let length = rng.gen_range(1..=max_step);
                for _ in 0..length {
                    ones += stamp(&mut grid, height, width, y as i64, x as i64, radius);
                    if ones as f64 / total as f64 >= target {
                        reached = true;
                        break 'walk;
                    }
                    y = (y + angle.sin()).clamp(0.0, (height - 1) as f64);
                    x = (x + angle.cos()).clamp(0.0, (width - 1) as f64);
                }
            }
        }
        achieved = ones as f64 / total as f64;
        if bucket.contains(achieved) {
            let data = Array4::from_shape_fn((1, 1, height, width), |(_, _, y, x)| {
                if grid[y * width + x] {
                    1.0
                } else {
                    0.0
                }
            });
            return MaskTensor::new(data);
        }
    }
    Err(SplError::Generation {
        bucket: bucket.label().to_string(),
        achieved,
    })
}

fn stamp(grid: &mut [bool], h: usize, w: usize, cy: i64, cx: i64, r: i64) -> usize {
    let mut added = 0;
    for y in (cy - r).max(0)..=(cy + r).min(h as i64 - 1) {
        for x in (cx - r).max(0)..=(cx + r).min(w as i64 - 1) {
            let cell = &mut grid[y as usize * w + x as usize];
            if !*cell {
                *cell = true;
                added += 1;
            }
        }
    }
    added
}

/// Loads a single-channel PNG mask; pixels `>= 128` become `1`. The mask is
/// resized with nearest-neighbour sampling when its size differs.
pub fn load_mask_png(path: &Path, height: usize, width: usize) -> Result<MaskTensor> {
    let img = image::open(path)
        .map_err(|e| SplError::Decode(format!("{}: {e}", path.display())))?
        .to_luma8();
    let img = if img.dimensions() != (width as u32, height as u32) {
        image::imageops::resize(&img, width as u32, height as u32, FilterType::Nearest)
    } else {
        img
    };
    let data = Array4::from_shape_fn((1, 1, height, width), |(_, _, y, x)| {
        if img.get_pixel(x as u32, y as u32)[0] >= 128 {
            1.0
        } else {
            0.0
        }
    });
    MaskTensor::new(data)
}

pub fn save_mask_png(mask: &MaskTensor, path: &Path) -> Result<()> {
    let (h, w) = (mask.height() as u32, mask.width() as u32);
    let img = GrayImage::from_fn(w, h, |x, y| {
        Luma([if mask.data()[[0, 0, y as usize, x as usize]] == 1.0 { 255 } else { 0 }])
    });
    img.save(path)
        .map_err(|e| SplError::Decode(format!("{}: {e}", path.display())))
}

/// A pool of masks addressed by id.
#[derive(Debug, Clone, Default)]
pub struct MaskSet {
    pub ids: Vec<String>,
    pub masks: Vec<MaskTensor>,
}

impl MaskSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&MaskTensor> {
        self.ids.iter().position(|i| i == id).map(|i| &self.masks[i])
    }

    /// `count` generated masks spread round-robin over `buckets`.
    pub fn generate(
        seed: u64,
        count: usize,
        buckets: &[RatioBucket],
        height: usize,
        width: usize,
    ) -> Result<MaskSet> {
        if buckets.is_empty() {
            return Err(SplError::Config("no mask buckets configured".into()));
        }
        let mut set = MaskSet::default();
        for i in 0..count {
            let bucket = buckets[i % buckets.len()];
            let mask_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            set.masks
                .push(generate_irregular_mask(mask_seed, bucket, height, width)?);
            set.ids.push(format!("mask_{i:05}"));
        }
        Ok(set)
    }
}

/// Loads every `*.png` in `dir` (sorted by file name); ids are file stems.
pub fn load_mask_dir(dir: &Path, height: usize, width: usize) -> Result<MaskSet> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| SplError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    paths.sort();
    let mut set = MaskSet::default();
    for p in paths {
        let id = p
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| SplError::Decode(format!("bad file name {}", p.display())))?
            .to_string();
        set.masks.push(load_mask_png(&p, height, width)?);
        set.ids.push(id);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::worker_rng;

    #[test]
    fn ratio_counts() {
        let mut m = Array4::zeros((1, 1, 4, 4));
        for i in 0..4 {
            m[[0, 0, i, 0]] = 1.0;
        }
        assert_eq!(mask_ratio(&MaskTensor::new(m).unwrap()), 0.25);
        assert_eq!(mask_ratio(&MaskTensor::zeros(1, 4, 4).unwrap()), 0.0);
    }

    #[test]
    fn ratio_matches_brute_force_count() {
        let mut rng = worker_rng(77, 0);
        let m = MaskTensor::new(Array4::from_shape_fn((1, 1, 64, 64), |_| {
            if rng.gen_bool(0.37) {
                1.0
            } else {
                0.0
            }
        }))
        .unwrap();
        let mut count = 0usize;
        for y in 0..64 {
            for x in 0..64 {
                if m.data()[[0, 0, y, x]] > 0.5 {
                    count += 1;
                }
            }
        }
        assert_eq!(mask_ratio(&m), count as f64 / 4096.0);
    }

    #[test]
    fn bucket_membership() {
        assert_eq!(bucket_of(0.25).unwrap().label(), "20%-30%");
        assert_eq!(bucket_of(0.10).unwrap().label(), "10%-20%");
        assert_eq!(bucket_of(0.0).unwrap().label(), "0%-10%");
        assert_eq!(bucket_of(0.5999).unwrap().label(), "50%-60%");
        assert!(matches!(bucket_of(0.6), Err(SplError::OutOfProtocol(_))));
        assert!(bucket_of(-0.1).is_err());
    }

    #[test]
    fn boundaries_go_up_for_every_interval() {
        for b in RatioBucket::all().skip(1) {
            assert_eq!(bucket_of(b.lower()).unwrap(), b);
        }
    }

    #[test]
    fn generated_mask_hits_bucket() {
        let b = RatioBucket::from_label("20%-30%").unwrap();
        let m = generate_irregular_mask(0, b, 64, 64).unwrap();
        let r = mask_ratio(&m);
        assert!((0.2..0.3).contains(&r), "ratio {r}");
    }

    #[test]
    fn generation_is_deterministic() {
        let b = RatioBucket::from_label("30%-40%").unwrap();
        assert_eq!(
            generate_irregular_mask(11, b, 64, 64).unwrap(),
            generate_irregular_mask(11, b, 64, 64).unwrap()
        );
    }

    #[test]
    fn generation_sweep_forty_to_fifty() {
        let b = RatioBucket::from_label("40%-50%").unwrap();
        for seed in 0..100 {
            let r = mask_ratio(&generate_irregular_mask(seed, b, 64, 64).unwrap());
            assert!((0.4..0.5).contains(&r), "seed {seed}: ratio {r}");
        }
    }

    #[test]
    fn every_bucket_is_reachable_at_several_sizes() {
        for b in RatioBucket::all() {
            for &(h, w) in &[(16, 16), (64, 32), (256, 256)] {
                let r = mask_ratio(&generate_irregular_mask(3, b, h, w).unwrap());
                assert!(b.contains(r), "{b} at {h}x{w}: {r}");
            }
        }
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = RatioBucket::from_label("10%-20%").unwrap();
        let m = generate_irregular_mask(4, b, 32, 32).unwrap();
        let path = dir.path().join("m.png");
        save_mask_png(&m, &path).unwrap();
        assert_eq!(load_mask_png(&path, 32, 32).unwrap(), m);
        let set = load_mask_dir(dir.path(), 32, 32).unwrap();
        assert_eq!(set.ids, vec!["m".to_string()]);
    }

    #[test]
    fn pool_partitions_into_buckets() {
        let buckets: Vec<_> = RatioBucket::all().collect();
        let pool = MaskSet::generate(1, 24, &buckets, 32, 32).unwrap();
        let mut counts = [0usize; RatioBucket::COUNT];
        for m in &pool.masks {
            counts[bucket_of(mask_ratio(m)).unwrap().index()] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), pool.len());
        assert_eq!(counts, [4; 6]);
    }
}

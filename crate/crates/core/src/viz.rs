//! Cluster maps of learned priors and simple image grids.

use image::{Rgb, RgbImage};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tch::{Kind, Tensor};

use crate::data::MaskedSample;
use crate::error::{Result, SplError};
use crate::model::{model_inputs, SplModel};

pub const DEFAULT_K: usize = 8;
pub const MAX_ITERATIONS: usize = 100;

/// Fixed cluster colours; which cluster gets which colour carries no meaning.
pub const PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [0, 0, 128],
];

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub iterations: usize,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

fn count_distinct(points: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points.iter().map(|p| p.iter().map(|v| v.to_bits()).collect()).collect();
    keys.sort();
    keys.dedup();
    keys.len()
}

/// Seeded k-means with k-means++ initialization. Stops when assignments
/// no longer change or after `max_iterations`; returned labels are always
/// nearest-centroid assignments for the returned centroids.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iterations: usize) -> Result<Clustering> {
    if k < 2 {
        return Err(SplError::Config(format!("k-means needs k >= 2, got {k}")));
    }
    if points.is_empty() {
        return Err(SplError::Value("k-means on an empty point set".into()));
    }
    let distinct = count_distinct(points);
    let k = if distinct < k {
        log::warn!("only {distinct} distinct points; clustering with k = {distinct} instead of {k}");
        distinct
    } else {
        k
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    while centroids.len() < k {
        let weights: Vec<f64> = points
            .iter()
            .map(|p| centroids.iter().map(|c| dist2(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let pick = WeightedIndex::new(&weights)
            .map_err(|e| SplError::Value(format!("k-means++ seeding: {e}")))?
            .sample(&mut rng);
        centroids.push(points[pick].clone());
    }

    let assign = |cs: &[Vec<f64>]| points.iter().map(|p| nearest(p, cs)).collect::<Vec<_>>();
    let mut labels = assign(&centroids);
    let mut iterations = 0;
    while iterations < max_iterations {
        iterations += 1;
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for (c, (sum, n)) in centroids.iter_mut().zip(sums.into_iter().zip(counts)) {
            if n > 0 {
                *c = sum.into_iter().map(|s| s / n as f64).collect();
            }
        }
        let next = assign(&centroids);
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(Clustering {
        centroids,
        labels,
        iterations,
    })
}

/// One point per spatial position of a `(1, C, H, W)` tensor, row-major.
pub fn feature_points(features: &Tensor) -> Result<Vec<Vec<f64>>> {
    let (n, c, h, w) = crate::nn::check_rank4(features, "feature map")?;
    if n != 1 {
        return Err(SplError::Dimension(format!("expected a single feature map, got batch {n}")));
    }
    let flat = features
        .detach()
        .to_kind(Kind::Double)
        .view([c, h * w])
        .tr()
        .contiguous()
        .view([-1]);
    let values = Vec::<f64>::try_from(&flat)?;
    Ok(values.chunks(c as usize).map(<[f64]>::to_vec).collect())
}

/// Colours a `height × width` label grid and enlarges it to
/// `out_height × out_width` by nearest neighbour.
pub fn label_map_image(labels: &[usize], height: u32, width: u32, out_height: u32, out_width: u32) -> RgbImage {
    RgbImage::from_fn(out_width, out_height, |x, y| {
        let sy = (y as u64 * height as u64 / out_height as u64) as usize;
        let sx = (x as u64 * width as u64 / out_width as u64) as usize;
        Rgb(PALETTE[labels[sy * width as usize + sx] % PALETTE.len()])
    })
}

/// Clusters the semantic learner's output for one sample and returns the
/// colour map at input resolution.
pub fn visualize_priors(model: &SplModel, sample: &MaskedSample, k: usize, seed: u64) -> Result<(RgbImage, Clustering)> {
    if sample.batch() != 1 {
        return Err(SplError::Dimension("prior visualization takes one sample".into()));
    }
    let (_, enlarged) = model_inputs(sample, model.kind())?;
    let prior = tch::no_grad(|| model.generator.semantic_encode(&enlarged));
    let (h, w) = crate::nn::spatial_dims(&prior);
    let clustering = kmeans(&feature_points(&prior)?, k, seed, MAX_ITERATIONS)?;
    let img = label_map_image(
        &clustering.labels,
        h as u32,
        w as u32,
        sample.image.height() as u32,
        sample.image.width() as u32,
    );
    Ok((img, clustering))
}

/// Places images left to right; heights may differ.
pub fn hconcat(images: &[RgbImage]) -> RgbImage {
    let width = images.iter().map(|i| i.width()).sum();
    let height = images.iter().map(|i| i.height()).max().unwrap_or(0);
    let mut out = RgbImage::new(width, height);
    let mut x0 = 0;
    for img in images {
        image::imageops::replace(&mut out, img, x0 as i64, 0);
        x0 += img.width();
    }
    out
}

//! Bucketed evaluation over a fixed image–mask pairing.

use serde::{Deserialize, Serialize};

use crate::data::{bucket_of, mask_ratio, ImageSet, ImageTensor, MaskSet, MaskedSample, Pairing, RatioBucket};
use crate::error::{Result, SplError};
use crate::metrics::{metric_triple, MetricTriple};
use crate::model::{composite, SplModel};

/// Anything that fills holes.
pub trait Inpainter {
    /// Raw output for a sample, in `[-1, 1]`.
    fn inpaint(&self, sample: &MaskedSample) -> Result<ImageTensor>;
}

impl Inpainter for SplModel {
    fn inpaint(&self, sample: &MaskedSample) -> Result<ImageTensor> {
        self.infer(sample)
    }
}

/// Returns the ground truth; every metric hits its best value.
#[derive(Debug, Clone, Copy)]
pub struct IdentityInpainter;

impl Inpainter for IdentityInpainter {
    fn inpaint(&self, sample: &MaskedSample) -> Result<ImageTensor> {
        Ok(sample.image.clone())
    }
}

/// Fills the whole frame with one value.
#[derive(Debug, Clone, Copy)]
pub struct ConstantInpainter(pub f32);

impl Inpainter for ConstantInpainter {
    fn inpaint(&self, sample: &MaskedSample) -> Result<ImageTensor> {
        ImageTensor::new(ndarray::Array4::from_elem(sample.image.data().dim(), self.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image_id: String,
    pub mask_id: String,
    pub mask_ratio: f64,
    pub bucket: String,
    pub metrics: MetricTriple,
}

/// Sample-weighted means over one group of samples; `None` when empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub label: String,
    pub count: usize,
    pub means: Option<MetricTriple>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketedReport {
    pub composite: bool,
    /// Six buckets, then "20%-40%", "40%-60%" and "All".
    pub rows: Vec<BucketRow>,
    pub samples: Vec<SampleRecord>,
}

pub const AGGREGATES: [(&str, [usize; 2]); 2] = [("20%-40%", [2, 3]), ("40%-60%", [4, 5])];

fn mean_row(label: &str, records: &[&SampleRecord]) -> BucketRow {
    let n = records.len();
    let means = (n > 0).then(|| {
        let (mut p, mut s, mut m) = (0.0, 0.0, 0.0);
        for r in records {
            p += r.metrics.psnr;
            s += r.metrics.ssim;
            m += r.metrics.mae;
        }
        MetricTriple {
            psnr: p / n as f64,
            ssim: s / n as f64,
            mae: m / n as f64,
        }
    });
    BucketRow {
        label: label.to_string(),
        count: n,
        means,
    }
}

impl BucketedReport {
    pub fn from_samples(samples: Vec<SampleRecord>, composite: bool) -> Self {
        let mut rows = Vec::new();
        for b in RatioBucket::all() {
            let members: Vec<_> = samples.iter().filter(|r| r.bucket == b.label()).collect();
            rows.push(mean_row(b.label(), &members));
        }
        for (label, idx) in AGGREGATES {
            let labels: Vec<&str> = idx.iter().map(|&i| RatioBucket::from_index(i).expect("bucket").label()).collect();
            let members: Vec<_> = samples.iter().filter(|r| labels.contains(&r.bucket.as_str())).collect();
            rows.push(mean_row(label, &members));
        }
        rows.push(mean_row("All", &samples.iter().collect::<Vec<_>>()));
        BucketedReport {
            composite,
            rows,
            samples,
        }
    }

    pub fn row(&self, label: &str) -> Option<&BucketRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    fn csv_body(&self, prefix: &str, out: &mut String) {
        let fields: [(&str, fn(&MetricTriple) -> f64); 3] =
            [("psnr", |m| m.psnr), ("ssim", |m| m.ssim), ("mae", |m| m.mae)];
        for (name, get) in fields {
            out.push_str(prefix);
            out.push_str(name);
            for r in &self.rows {
                match &r.means {
                    Some(m) => out.push_str(&format!(",{:.6}", get(m))),
                    None => out.push_str(",-"),
                }
            }
            out.push('\n');
        }
        out.push_str(prefix);
        out.push_str("count");
        for r in &self.rows {
            out.push_str(&format!(",{}", r.count));
        }
        out.push('\n');
    }

    fn header(&self) -> String {
        self.rows.iter().map(|r| format!(",{}", r.label)).collect()
    }

    /// Rows are metrics, columns are buckets then aggregates.
    pub fn to_csv(&self) -> String {
        let mut out = format!("metric{}\n", self.header());
        self.csv_body("", &mut out);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Side-by-side table of several named reports.
pub fn comparison_csv(runs: &[(&str, &BucketedReport)]) -> String {
    let Some((_, first)) = runs.first() else {
        return String::new();
    };
    let mut out = format!("run,metric{}\n", first.header());
    for (name, report) in runs {
        report.csv_body(&format!("{name},"), &mut out);
    }
    out
}

/// Runs `model` on every manifest pair and aggregates by mask ratio.
pub fn evaluate(
    model: &dyn Inpainter,
    images: &ImageSet,
    masks: &MaskSet,
    pairing: &Pairing,
    composite_output: bool,
    fill: f32,
) -> Result<BucketedReport> {
    let missing: Vec<String> = pairing
        .pairs()
        .iter()
        .flat_map(|(i, m)| {
            let a = images.get(i).is_none().then(|| format!("image {i}"));
            let b = masks.get(m).is_none().then(|| format!("mask {m}"));
            a.into_iter().chain(b)
        })
        .collect();
    if !missing.is_empty() {
        return Err(SplError::Protocol(format!("manifest references unknown ids: {}", missing.join(", "))));
    }
    let mut samples = Vec::with_capacity(pairing.len());
    for (image_id, mask_id) in pairing.pairs() {
        let image = images.get(image_id).expect("checked");
        let mask = masks.get(mask_id).expect("checked");
        let sample = MaskedSample::new(image.clone(), mask.clone(), fill)?;
        let raw = model.inpaint(&sample)?;
        let result = if composite_output {
            composite(&raw, &sample.image, &sample.mask)?
        } else {
            raw
        };
        let ratio = mask_ratio(mask);
        samples.push(SampleRecord {
            image_id: image_id.clone(),
            mask_id: mask_id.clone(),
            mask_ratio: ratio,
            bucket: bucket_of(ratio)?.label().to_string(),
            metrics: metric_triple(&sample.image.to_unit_range(), &result.to_unit_range())?,
        });
    }
    Ok(BucketedReport::from_samples(samples, composite_output))
}

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SplError};

/// Fixed one-mask-per-image assignment shared by every evaluation run.
///
/// Serialized as UTF-8 text, one `image_id\tmask_id` line per pair, LF endings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pairing {
    pairs: Vec<(String, String)>,
}

impl Pairing {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self> {
        for (img, mask) in &pairs {
            for id in [img, mask] {
                if id.is_empty() || id.contains(['\t', '\n', '\r']) {
                    return Err(SplError::Config(format!("invalid id `{id}` in pairing")));
                }
            }
        }
        Ok(Pairing { pairs })
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn to_manifest(&self) -> String {
        let mut out = String::new();
        for (img, mask) in &self.pairs {
            out.push_str(img);
            out.push('\t');
            out.push_str(mask);
            out.push('\n');
        }
        out
    }

    pub fn parse_manifest(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (img, mask) = line.split_once('\t').ok_or_else(|| {
                SplError::Protocol(format!("manifest line {} has no tab separator", n + 1))
            })?;
            pairs.push((img.to_string(), mask.to_string()));
        }
        Pairing::new(pairs)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_manifest()).map_err(|e| SplError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SplError::io(path, e))?;
        Self::parse_manifest(&text)
    }
}

/// Assigns one mask per image. Masks are drawn from seeded shuffles of the
/// pool; when there are more images than masks the pool is reshuffled and
/// reused.
pub fn build_eval_pairing(image_ids: &[String], mask_ids: &[String], seed: u64) -> Result<Pairing> {
    if image_ids.is_empty() || mask_ids.is_empty() {
        return Err(SplError::Config(
            "pairing needs non-empty image and mask pools".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = Vec::new();
    let mut pairs = Vec::with_capacity(image_ids.len());
    for img in image_ids {
        if order.is_empty() {
            order = (0..mask_ids.len()).collect();
            order.shuffle(&mut rng);
        }
        let m = order.pop().expect("refilled above");
        pairs.push((img.clone(), mask_ids[m].clone()));
    }
    Pairing::new(pairs)
}

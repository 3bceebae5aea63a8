//! Named-tensor archives in the safetensors format, with atomic writes.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use tch::{Kind, Tensor};

use crate::error::{Result, SplError};

fn tensor_bytes(t: &Tensor) -> Result<(Dtype, Vec<u8>)> {
    let flat = t.detach().contiguous().view([-1]);
    Ok(match t.kind() {
        Kind::Float => (
            Dtype::F32,
            Vec::<f32>::try_from(&flat)?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
        Kind::Double => (
            Dtype::F64,
            Vec::<f64>::try_from(&flat)?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
        Kind::Int64 => (
            Dtype::I64,
            Vec::<i64>::try_from(&flat)?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
        k => return Err(SplError::Value(format!("cannot archive tensors of kind {k:?}"))),
    })
}

fn view_to_tensor(name: &str, view: &TensorView<'_>) -> Result<Tensor> {
    let shape: Vec<i64> = view.shape().iter().map(|&d| d as i64).collect();
    let data = view.data();
    let t = match view.dtype() {
        Dtype::F32 => {
            let v: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_slice(&v)
        }
        Dtype::F64 => {
            let v: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_slice(&v)
        }
        Dtype::I64 => {
            let v: Vec<i64> = data.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_slice(&v)
        }
        d => return Err(SplError::Load(format!("tensor {name} has unsupported dtype {d:?}"))),
    };
    Ok(t.view(shape.as_slice()))
}

/// Metadata is packed under this single key as a sorted JSON object so the
/// header bytes do not depend on hash-map iteration order.
const PACKED_KEY: &str = "spl";

/// Serializes named tensors plus string metadata. Equal inputs give equal
/// bytes.
pub fn to_bytes(tensors: &BTreeMap<String, Tensor>, metadata: BTreeMap<String, String>) -> Result<Vec<u8>> {
    let mut raw = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        let (dtype, bytes) = tensor_bytes(t)?;
        let shape: Vec<usize> = t.size().iter().map(|&d| d as usize).collect();
        raw.push((name.as_str(), dtype, shape, bytes));
    }
    let views = raw
        .iter()
        .map(|(name, dtype, shape, bytes)| {
            TensorView::new(*dtype, shape.clone(), bytes)
                .map(|v| (*name, v))
                .map_err(|e| SplError::Value(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let packed = HashMap::from([(
        PACKED_KEY.to_string(),
        serde_json::to_string(&metadata).expect("string map serializes"),
    )]);
    safetensors::serialize(views, Some(packed)).map_err(|e| SplError::Value(e.to_string()))
}

/// Parses an archive; any structural problem is a load error. Plain
/// top-level metadata keys written by other tools are returned as well.
pub fn from_bytes(bytes: &[u8]) -> Result<(BTreeMap<String, Tensor>, BTreeMap<String, String>)> {
    let (_, meta) = SafeTensors::read_metadata(bytes).map_err(|e| SplError::Load(e.to_string()))?;
    let st = SafeTensors::deserialize(bytes).map_err(|e| SplError::Load(e.to_string()))?;
    let mut tensors = BTreeMap::new();
    for (name, view) in st.tensors() {
        let t = view_to_tensor(&name, &view)?;
        tensors.insert(name, t);
    }
    let mut out = BTreeMap::new();
    for (k, v) in meta.metadata().clone().unwrap_or_default() {
        if k == PACKED_KEY {
            let inner: BTreeMap<String, String> =
                serde_json::from_str(&v).map_err(|e| SplError::Load(format!("archive metadata: {e}")))?;
            out.extend(inner);
        } else {
            out.insert(k, v);
        }
    }
    Ok((tensors, out))
}

pub fn read(path: &Path) -> Result<(BTreeMap<String, Tensor>, BTreeMap<String, String>)> {
    let bytes = std::fs::read(path).map_err(|e| SplError::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        SplError::Load(msg) => SplError::Load(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Writes to a sibling temporary file and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| SplError::io(dir, e))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("archive")
    ));
    let mut f = std::fs::File::create(&tmp).map_err(|e| SplError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| SplError::io(&tmp, e))?;
    f.sync_all().map_err(|e| SplError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| SplError::io(path, e))
}

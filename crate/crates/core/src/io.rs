//! Binary tensor containers, PGM export and CSV tables.
//!
//! All integers and floats are little-endian. A tensor file is
//! `"PATT" | u32 rank | u32 dims[rank] | f32 payload (row-major)`.
//! A named container is `"PATW" | u32 count | (u16 name_len | name |
//! tensor file)* | JSON manifest` where the manifest runs to end of file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::cs::{MeasKind, MeasMatrix};
use crate::error::{PatError, Result};
use crate::geometry::ImageGrid;
use crate::image::Image;
use crate::l1::TraceRow;
use crate::nn::{NetArch, NetParams, TrainConfig};

pub const TENSOR_MAGIC: &[u8; 4] = b"PATT";
pub const NAMED_MAGIC: &[u8; 4] = b"PATW";

fn format_err(msg: impl Into<String>) -> PatError {
    PatError::Format(msg.into())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_magic(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)
        .map_err(|_| format_err("file too short for magic"))?;
    if &m != magic {
        return Err(format_err(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

pub fn write_tensor(w: &mut impl Write, t: &ArrayD<f32>) -> Result<()> {
    let rank = u32::try_from(t.ndim()).map_err(|_| format_err("rank too large"))?;
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&rank.to_le_bytes())?;
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| format_err("dimension too large"))?;
        w.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(4 * t.len());
    for v in t.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor(r: &mut impl Read) -> Result<ArrayD<f32>> {
    read_magic(r, TENSOR_MAGIC)?;
    let rank = read_u32(r)? as usize;
    if rank > 16 {
        return Err(format_err(format!("implausible rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(read_u32(r)? as usize);
    }
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err("tensor size overflows"))?;
    let mut bytes = vec![0u8; 4 * len];
    r.read_exact(&mut bytes)
        .map_err(|_| format_err(format!("payload shorter than {} bytes", 4 * len)))?;
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| format_err(e.to_string()))
}

pub fn save_tensor(path: &Path, t: &ArrayD<f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

/// Reads a tensor file and rejects trailing bytes.
pub fn load_tensor(path: &Path) -> Result<ArrayD<f32>> {
    let mut r = BufReader::new(File::open(path)?);
    let t = read_tensor(&mut r)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(format_err(format!(
            "{} trailing bytes after tensor payload",
            rest.len()
        )));
    }
    Ok(t)
}

pub fn to_f32(a: &ArrayD<f64>) -> ArrayD<f32> {
    a.mapv(|v| v as f32)
}

pub fn to_f64(a: &ArrayD<f32>) -> ArrayD<f64> {
    a.mapv(f64::from)
}

/// Stores a matrix-valued quantity (image, traces, measurements) as rank 2.
pub fn save_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    save_tensor(path, &m.mapv(|v| v as f32).into_dyn())
}

pub fn load_matrix(path: &Path) -> Result<Array2<f64>> {
    let t = load_tensor(path)?;
    if t.ndim() != 2 {
        return Err(format_err(format!("expected a rank-2 tensor, got rank {}", t.ndim())));
    }
    Ok(to_f64(&t).into_dimensionality().expect("rank checked"))
}

pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    save_matrix(path, &img.values)
}

/// Loads an image tensor onto `grid`, checking the shape.
pub fn load_image(path: &Path, grid: ImageGrid) -> Result<Image> {
    Image::new(grid, load_matrix(path)?)
}

pub fn write_named(w: &mut impl Write, tensors: &[(String, ArrayD<f32>)], manifest: &serde_json::Value) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    w.write_all(NAMED_MAGIC)?;
    w.write_all(&(u32::try_from(tensors.len()).map_err(|_| format_err("too many tensors"))?).to_le_bytes())?;
    for (name, t) in tensors {
        if !seen.insert(name.as_str()) {
            return Err(format_err(format!("duplicate tensor name {name}")));
        }
        let len = u16::try_from(name.len()).map_err(|_| format_err("tensor name too long"))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        write_tensor(w, t)?;
    }
    w.write_all(
        serde_json::to_string(manifest)
            .map_err(|e| format_err(e.to_string()))?
            .as_bytes(),
    )?;
    Ok(())
}

pub type NamedTensors = Vec<(String, ArrayD<f32>)>;

pub fn read_named(r: &mut impl Read) -> Result<(NamedTensors, serde_json::Value)> {
    read_magic(r, NAMED_MAGIC)?;
    let count = read_u32(r)? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let mut lb = [0u8; 2];
        r.read_exact(&mut lb)?;
        let mut name = vec![0u8; u16::from_le_bytes(lb) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| format_err("tensor name is not UTF-8"))?;
        if tensors.iter().any(|(n, _): &(String, _)| *n == name) {
            return Err(format_err(format!("duplicate tensor name {name}")));
        }
        tensors.push((name, read_tensor(r)?));
    }
    let mut rest = String::new();
    r.read_to_string(&mut rest)
        .map_err(|_| format_err("manifest is not UTF-8"))?;
    let manifest = serde_json::from_str(&rest).map_err(|e| format_err(format!("manifest: {e}")))?;
    Ok((tensors, manifest))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsManifest {
    pub arch: NetArch,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub seed: Option<u64>,
    tensors: Vec<TensorEntry>,
}

/// Saves network parameters in single precision with a self-describing
/// manifest.
pub fn save_weights(path: &Path, params: &NetParams, train: Option<&TrainConfig>) -> Result<()> {
    let tensors: NamedTensors = params.tensors.iter().map(|(n, t)| (n.clone(), to_f32(t))).collect();
    let manifest = WeightsManifest {
        arch: params.arch,
        train: train.copied(),
        seed: train.map(|t| t.seed),
        tensors: params
            .tensors
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let value = serde_json::to_value(&manifest).map_err(|e| format_err(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    write_named(&mut w, &tensors, &value)?;
    w.flush()?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<(NetParams, WeightsManifest)> {
    let (tensors, value) = read_named(&mut BufReader::new(File::open(path)?))?;
    let manifest: WeightsManifest =
        serde_json::from_value(value).map_err(|e| format_err(format!("weights manifest: {e}")))?;
    if manifest.tensors.len() != tensors.len()
        || manifest
            .tensors
            .iter()
            .zip(&tensors)
            .any(|(e, (n, t))| e.name != *n || e.shape != t.shape())
    {
        return Err(format_err("tensors do not match the manifest"));
    }
    let params = NetParams::from_tensors(
        manifest.arch,
        tensors.into_iter().map(|(n, t)| (n, to_f64(&t))).collect(),
    )?;
    Ok((params, manifest))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixManifest {
    kind: MeasKind,
    seed: Option<u64>,
}

/// Measurement matrices are stored as a named container with one tensor
/// `S` and the generating kind and seed. Seeded Bernoulli matrices are
/// regenerated on load (and checked against the stored values) so the
/// round trip is exact despite single-precision storage.
pub fn save_meas_matrix(path: &Path, s: &MeasMatrix) -> Result<()> {
    let manifest = serde_json::to_value(MatrixManifest {
        kind: s.kind,
        seed: s.seed,
    })
    .map_err(|e| format_err(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    write_named(
        &mut w,
        &[("S".to_string(), s.entries.mapv(|v| v as f32).into_dyn())],
        &manifest,
    )?;
    w.flush()?;
    Ok(())
}

pub fn load_meas_matrix(path: &Path) -> Result<MeasMatrix> {
    let (tensors, value) = read_named(&mut BufReader::new(File::open(path)?))?;
    let manifest: MatrixManifest =
        serde_json::from_value(value).map_err(|e| format_err(format!("matrix manifest: {e}")))?;
    let [(name, t)]: [(String, ArrayD<f32>); 1] = tensors
        .try_into()
        .map_err(|_| format_err("expected exactly one tensor"))?;
    if name != "S" || t.ndim() != 2 {
        return Err(format_err("expected a rank-2 tensor named S"));
    }
    let stored: Array2<f32> = t.into_dimensionality().expect("rank checked");
    if let (MeasKind::Bernoulli, Some(seed)) = (manifest.kind, manifest.seed) {
        let s = crate::cs::bernoulli_matrix(stored.nrows(), stored.ncols(), seed)?;
        if s.entries.mapv(|v| v as f32) != stored {
            return Err(format_err("stored Bernoulli entries do not match their seed"));
        }
        return Ok(s);
    }
    Ok(MeasMatrix {
        entries: stored.mapv(f64::from),
        kind: manifest.kind,
        seed: manifest.seed,
    })
}

/// 8-bit binary PGM after min-max normalization; the first row written is
/// the one with the largest `y`.
pub fn write_pgm(w: &mut impl Write, img: &Image) -> Result<()> {
    let (ny, nx) = img.values.dim();
    let (lo, hi) = (img.min(), img.max());
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    write!(w, "P5\n{nx} {ny}\n255\n")?;
    let mut buf = Vec::with_capacity(nx * ny);
    for iy in (0..ny).rev() {
        for ix in 0..nx {
            buf.push(((img.values[[iy, ix]] - lo) * scale).round().clamp(0.0, 255.0) as u8);
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn save_pgm(path: &Path, img: &Image) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pgm(&mut w, img)?;
    w.flush()?;
    Ok(())
}

/// Parses a binary PGM with maxval 255 into `(width, height, pixels)`.
pub fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(format_err(format!("not a P5 file: {}", fields[0])));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| format_err(format!("bad PGM number {s}")))
    };
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(format_err(format!("unsupported maxval {maxval}")));
    }
    let data = &bytes[pos + 1..];
    if data.len() != w * h {
        return Err(format_err(format!("expected {} pixels, found {}", w * h, data.len())));
    }
    Ok((w, h, data.to_vec()))
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub phantom: String,
    pub matrix: String,
    pub method: String,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub seconds: f64,
}

fn csv_err(e: csv::Error) -> PatError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => PatError::Io(io),
        other => format_err(format!("csv: {other:?}")),
    }
}

pub fn write_csv<T: Serialize>(w: impl Write, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    for row in rows {
        writer.serialize(row).map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    if rows.is_empty() {
        std::fs::write(path, "phantom,matrix,method,mse,psnr,ssim,seconds\n")?;
        return Ok(());
    }
    write_csv(File::create(path)?, rows)
}

pub fn save_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    write_csv(File::create(path)?, rows)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    reader.deserialize().map(|r| r.map_err(csv_err)).collect()
}

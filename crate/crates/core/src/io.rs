//! On-disk formats: projection sets, volumes, raw float arrays, graymap
//! images and key-value reports.
//!
//! Arrays are flat little-endian `f64`, row-major with `x` fastest. Metadata
//! is a small TOML file next to the data. Floats are written in shortest
//! round-trip form so a write/read cycle is bit-exact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::born_forward::{ContrastImage, ForwardModel, ProjectionSet};
use crate::dt_recon::DtVolume;
use crate::error::{Error, Result};
use crate::metrics::ErrorReport;
use crate::numerics::{Beam, Field2, Grid2, Grid3, Volume3};

pub const FORMAT_VERSION: u32 = 1;
pub const SET_METADATA: &str = "projections.toml";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub z0: f64,
}

impl From<&Grid3> for GridMeta {
    fn from(g: &Grid3) -> Self {
        let p = g.plane();
        Self {
            nx: p.nx(),
            ny: p.ny(),
            nz: g.nz(),
            dx: p.dx(),
            dy: p.dy(),
            dz: g.dz(),
            z0: g.z0(),
        }
    }
}

impl GridMeta {
    pub fn to_grid(&self) -> Result<Grid3> {
        Grid3::new(Grid2::new(self.nx, self.ny, self.dx, self.dy)?, self.nz, self.dz, self.z0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SetMetadata {
    format: u32,
    grid: GridMeta,
    e_volts: f64,
    defocus: f64,
    model: String,
    angles: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeMetadata {
    pub format: u32,
    pub grid: GridMeta,
    pub units: String,
    pub method: String,
    pub provenance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imag_residual: Option<f64>,
    /// Dimensions `[nx, ny, nz]` of the reciprocal coverage mask, if written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_dims: Option<[usize; 3]>,
}

impl VolumeMetadata {
    pub fn new(grid: &Grid3, method: &str, provenance: &str) -> Self {
        Self {
            format: FORMAT_VERSION,
            grid: grid.into(),
            units: "volts".into(),
            method: method.into(),
            provenance: provenance.into(),
            coverage: None,
            imag_residual: None,
            mask_dims: None,
        }
    }
}

fn with_path(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn write_f64s(path: &Path, data: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 * data.len());
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| with_path(e, path))
}

pub fn read_f64s(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| with_path(e, path))?;
    if bytes.len() != 8 * expected {
        return Err(Error::Format(format!(
            "{}: {} bytes, expected {} values",
            path.display(),
            bytes.len(),
            expected
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| with_path(e, path))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| with_path(e, path))
}

fn to_toml<T: Serialize>(v: &T) -> Result<String> {
    toml::to_string(v).map_err(|e| Error::Format(e.to_string()))
}

fn from_toml<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn image_name(i: usize) -> String {
    format!("image_{i:05}.f64")
}

/// Write a projection set into `dir`, creating it if needed.
pub fn write_projection_set(dir: &Path, ps: &ProjectionSet) -> Result<()> {
    ps.validate()?;
    fs::create_dir_all(dir).map_err(|e| with_path(e, dir))?;
    let meta = SetMetadata {
        format: FORMAT_VERSION,
        grid: (&ps.grid).into(),
        e_volts: ps.beam.e_volts(),
        defocus: ps.defocus,
        model: ps.model.tag().into(),
        angles: ps.angles(),
    };
    write_text(&dir.join(SET_METADATA), &to_toml(&meta)?)?;
    for (i, im) in ps.images.iter().enumerate() {
        write_f64s(&dir.join(image_name(i)), im.field.data())?;
    }
    Ok(())
}

pub fn read_projection_set(dir: &Path) -> Result<ProjectionSet> {
    let path = dir.join(SET_METADATA);
    let meta: SetMetadata = from_toml(&read_text(&path)?, &path)?;
    if meta.format != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {}", meta.format)));
    }
    let grid = meta.grid.to_grid()?;
    let beam = Beam::new(meta.e_volts)?;
    let model = ForwardModel::from_tag(&meta.model)?;
    let plane = *grid.plane();
    let images = meta
        .angles
        .iter()
        .enumerate()
        .map(|(i, &theta)| {
            let data = read_f64s(&dir.join(image_name(i)), plane.len())?;
            Ok(ContrastImage {
                field: Field2::from_vec(plane, data)?,
                defocus: meta.defocus,
                theta,
                model,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ProjectionSet::new(grid, beam, meta.defocus, model, images)
}

fn volume_paths(stem: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (stem.with_extension("f64"), stem.with_extension("toml"), stem.with_extension("mask"))
}

/// Write `stem.f64`, `stem.toml` and, when given, the coverage mask as one
/// byte per reciprocal voxel in `stem.mask`.
pub fn write_volume(stem: &Path, v: &Volume3<f64>, meta: &VolumeMetadata, mask: Option<&Volume3<u8>>) -> Result<()> {
    if meta.grid != GridMeta::from(v.grid()) {
        return Err(Error::GridMismatch("metadata grid differs from the volume".into()));
    }
    if let Some(dir) = stem.parent() {
        fs::create_dir_all(dir).map_err(|e| with_path(e, dir))?;
    }
    let (data, side, mask_path) = volume_paths(stem);
    let mut meta = meta.clone();
    if let Some(m) = mask {
        let g = m.grid();
        meta.mask_dims = Some([g.nx(), g.ny(), g.nz()]);
        fs::write(&mask_path, m.data()).map_err(|e| with_path(e, &mask_path))?;
    }
    write_f64s(&data, v.data())?;
    write_text(&side, &to_toml(&meta)?)
}

pub fn write_dt_volume(stem: &Path, v: &DtVolume, provenance: &str) -> Result<()> {
    let mut meta = VolumeMetadata::new(v.volume.grid(), "dt", provenance);
    meta.coverage = Some(v.coverage);
    meta.imag_residual = Some(v.imag_residual);
    write_volume(stem, &v.volume, &meta, Some(&v.mask))
}

pub fn read_volume(stem: &Path) -> Result<(Volume3<f64>, VolumeMetadata)> {
    let (data, side, _) = volume_paths(stem);
    let meta: VolumeMetadata = from_toml(&read_text(&side)?, &side)?;
    let grid = meta.grid.to_grid()?;
    let values = read_f64s(&data, grid.len())?;
    Ok((Volume3::from_vec(grid, values)?, meta))
}

/// Raw mask bytes as written by [`write_volume`].
pub fn read_mask(stem: &Path) -> Result<Vec<u8>> {
    let p = stem.with_extension("mask");
    fs::read(&p).map_err(|e| with_path(e, &p))
}

/// Linear 8-bit graymap. Values are mapped from `[lo, hi]` to `[0, 255]`
/// with clamping; `None` uses the data range.
pub fn write_pgm(path: &Path, f: &Field2<f64>, range: Option<(f64, f64)>) -> Result<()> {
    let g = f.grid();
    write_pgm_raw(path, f.data(), g.nx(), g.ny(), range)
}

pub fn write_pgm_raw(path: &Path, data: &[f64], nx: usize, ny: usize, range: Option<(f64, f64)>) -> Result<()> {
    if data.len() != nx * ny {
        return Err(Error::Format(format!("{} values for a {nx}×{ny} image", data.len())));
    }
    let (lo, hi) = range.unwrap_or_else(|| {
        data.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    // image rows run top to bottom, so flip y
    for iy in (0..ny).rev() {
        for ix in 0..nx {
            let t = ((data[iy * nx + ix] - lo) / span).clamp(0.0, 1.0);
            out.push((255.0 * t).round() as u8);
        }
    }
    let mut file = fs::File::create(path).map_err(|e| with_path(e, path))?;
    file.write_all(&out).map_err(|e| with_path(e, path))
}

/// Human-readable `name.txt` and machine-readable `name.kv`.
pub fn write_report(dir: &Path, name: &str, report: &ErrorReport, extra: &[(&str, String)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| with_path(e, dir))?;
    let mut kv = String::new();
    for (k, v) in extra {
        kv.push_str(&format!("{k} = {v}\n"));
    }
    kv.push_str(&report.to_key_values());
    write_text(&dir.join(format!("{name}.kv")), &kv)?;
    write_text(&dir.join(format!("{name}.txt")), &format!("{name}: {}\n", report.summary()))
}

/// Parse `key = value` lines, ignoring blanks and `#` comments.
pub fn parse_key_values(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

//! Error maps and summary statistics for comparing images and volumes.
//!
//! Image errors are expressed relative to the incident intensity, so inputs
//! are intensities normalised to `I_in = 1`. Contrast images `K = 1 - I/I_in`
//! give the same differences and may be passed directly.

use crate::error::{Error, Result};
use crate::numerics::{Field2, Volume3};

/// Reference deviation from the unit background above which a pixel counts
/// as part of the object.
pub const OBJECT_CONTRAST: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub enum ErrorMap {
    Image(Field2<f64>),
    Volume(Volume3<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    /// Mean of the per-pixel relative error over all pixels (%).
    pub mean_pct: f64,
    /// Largest per-pixel relative error (%).
    pub max_pct: f64,
    /// Mean relative error restricted to object pixels (%). `None` for
    /// volumes or when no pixel qualifies.
    pub object_mean_pct: Option<f64>,
    /// Root-mean-square difference in the units of the inputs.
    pub rms: f64,
    /// `rms` divided by the largest absolute reference value.
    pub rms_relative: f64,
    pub correlation: f64,
    /// Per-pixel or per-voxel absolute difference.
    pub map: ErrorMap,
    /// Signed reconstructed value at each requested site (volumes only).
    pub peaks: Vec<f64>,
}

impl ErrorReport {
    /// Error map with values below `threshold_pct` set to zero (images only),
    /// expressed in percent.
    pub fn thresholded_map(&self, threshold_pct: f64) -> Option<Field2<f64>> {
        match &self.map {
            ErrorMap::Image(m) => Some(m.map(|&v| {
                let pct = 100.0 * v;
                if pct >= threshold_pct {
                    pct
                } else {
                    0.0
                }
            })),
            ErrorMap::Volume(_) => None,
        }
    }

    pub fn all_peaks_positive(&self) -> bool {
        !self.peaks.is_empty() && self.peaks.iter().all(|&p| p > 0.0)
    }

    pub fn negative_peaks(&self) -> usize {
        self.peaks.iter().filter(|&&p| p < 0.0).count()
    }

    /// Machine-readable `key = value` lines.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        put("mean_pct", format!("{:e}", self.mean_pct));
        put("max_pct", format!("{:e}", self.max_pct));
        if let Some(o) = self.object_mean_pct {
            put("object_mean_pct", format!("{o:e}"));
        }
        put("rms", format!("{:e}", self.rms));
        put("rms_relative", format!("{:e}", self.rms_relative));
        put("correlation", format!("{:e}", self.correlation));
        if !self.peaks.is_empty() {
            let list: Vec<String> = self.peaks.iter().map(|p| format!("{p:e}")).collect();
            put("peaks", list.join(" "));
            put("negative_peaks", self.negative_peaks().to_string());
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "mean {:.4}%  max {:.4}%  rms {:.4e} ({:.3}% of peak)  correlation {:.4}",
            self.mean_pct,
            self.max_pct,
            self.rms,
            100.0 * self.rms_relative,
            self.correlation
        );
        if let Some(o) = self.object_mean_pct {
            s.push_str(&format!("  object mean {o:.4}%"));
        }
        if !self.peaks.is_empty() {
            s.push_str(&format!(
                "  peaks {}/{} positive",
                self.peaks.len() - self.negative_peaks(),
                self.peaks.len()
            ));
        }
        s
    }
}

/// Pearson correlation. Two constant inputs correlate perfectly when equal
/// and not at all otherwise.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

fn rms_diff(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

fn peak(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, &v| m.max(v.abs()))
}

/// Per-pixel relative error `|I_test - I_ref| / I_in` of two normalised
/// intensity images.
pub fn image_error(test: &Field2<f64>, reference: &Field2<f64>) -> Result<ErrorReport> {
    if !test.grid().same_sampling(reference.grid()) {
        return Err(Error::GridMismatch("images have different grids".into()));
    }
    let (t, r) = (test.data(), reference.data());
    let map = Field2::from_fn(*test.grid(), |ix, iy| (test.get(ix, iy) - reference.get(ix, iy)).abs());
    let e = map.data();
    let n = e.len() as f64;
    let mean_pct = 100.0 * e.iter().sum::<f64>() / n;
    let max_pct = 100.0 * e.iter().fold(0.0, |m: f64, &v| m.max(v));
    // the background is 1 for intensities and 0 for contrasts
    let background = if r.iter().sum::<f64>() / n > 0.5 { 1.0 } else { 0.0 };
    let object: Vec<f64> = e
        .iter()
        .zip(r)
        .filter(|(_, &v)| (v - background).abs() > OBJECT_CONTRAST)
        .map(|(&d, _)| d)
        .collect();
    let object_mean_pct = (!object.is_empty()).then(|| 100.0 * object.iter().sum::<f64>() / object.len() as f64);
    let rms = rms_diff(t, r);
    let scale = r.iter().fold(0.0, |m: f64, &v| m.max((v - background).abs()));
    Ok(ErrorReport {
        mean_pct,
        max_pct,
        object_mean_pct,
        rms,
        rms_relative: if scale > 0.0 { rms / scale } else { 0.0 },
        correlation: correlation(t, r),
        map: ErrorMap::Image(map),
        peaks: Vec::new(),
    })
}

/// Nearest voxel to a position `(x, y, w)` relative to the axis and the
/// mid-plane, or `None` outside the grid.
pub fn site_voxel(v: &Volume3<f64>, site: [f64; 3]) -> Option<[usize; 3]> {
    let g = v.grid();
    let p = g.plane();
    let idx = |c: f64, d: f64, n: usize| {
        let i = (c / d).round() + (n / 2) as f64;
        (i >= 0.0 && i < n as f64).then_some(i as usize)
    };
    Some([idx(site[0], p.dx(), p.nx())?, idx(site[1], p.dy(), p.ny())?, idx(site[2], g.dz(), g.nz())?])
}

/// Value of largest magnitude in the 3×3×3 neighbourhood of `voxel`, with
/// its sign.
pub fn neighbourhood_extremum(v: &Volume3<f64>, voxel: [usize; 3]) -> f64 {
    let g = v.grid();
    let dims = [g.nx(), g.ny(), g.nz()];
    let range = |i: usize, n: usize| i.saturating_sub(1)..(i + 2).min(n);
    let mut best = 0.0f64;
    for iz in range(voxel[2], dims[2]) {
        for iy in range(voxel[1], dims[1]) {
            for ix in range(voxel[0], dims[0]) {
                let val = *v.get(ix, iy, iz);
                if val.abs() > best.abs() {
                    best = val;
                }
            }
        }
    }
    best
}

/// Compare volumes and sample the test volume at `sites` (positions relative
/// to the axis and mid-plane, as from `Phantom::relative_atoms`).
pub fn volume_error(test: &Volume3<f64>, reference: &Volume3<f64>, sites: &[[f64; 3]]) -> Result<ErrorReport> {
    let (gt, gr) = (test.grid(), reference.grid());
    if !gt.plane().same_sampling(gr.plane()) || gt.nz() != gr.nz() || gt.dz() != gr.dz() {
        return Err(Error::GridMismatch("volumes have different grids".into()));
    }
    let (t, r) = (test.data(), reference.data());
    let scale = peak(r);
    let map = Volume3::from_vec(*gt, t.iter().zip(r).map(|(a, b)| (a - b).abs()).collect())?;
    let e = map.data();
    let rel = if scale > 0.0 { 100.0 / scale } else { 0.0 };
    let rms = rms_diff(t, r);
    let peaks = sites
        .iter()
        .map(|&s| {
            site_voxel(test, s)
                .map(|vx| neighbourhood_extremum(test, vx))
                .ok_or_else(|| Error::Domain(format!("site {s:?} lies outside the volume")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorReport {
        mean_pct: rel * e.iter().sum::<f64>() / e.len() as f64,
        max_pct: rel * e.iter().fold(0.0, |m: f64, &v| m.max(v)),
        object_mean_pct: None,
        rms,
        rms_relative: if scale > 0.0 { rms / scale } else { 0.0 },
        correlation: correlation(t, r),
        map: ErrorMap::Volume(map),
        peaks,
    })
}

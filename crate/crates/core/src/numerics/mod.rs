//! Sampling grids, field containers, Fourier transforms with physical
//! scaling, and the electron-optical constants.
//!
//! Conventions used throughout the crate:
//!
//! * lengths in Å, potentials and accelerating voltage in volts, intensities
//!   normalised to the incident intensity;
//! * real-space samples are centred: `x_i = (i - n/2) dx`, so the sample at
//!   index `n/2` sits on the optical axis;
//! * frequencies use wrap-around order: index `k` carries `k dq` for
//!   `k < n/2` and `(k - n) dq` otherwise, with zero frequency at index 0;
//! * the continuous transform kernel is `exp(-i 2π q·r)` with no 2π in the
//!   measure; the discrete transforms carry the pixel area so that
//!   `fft2_forward` approximates that integral directly.

mod fft;

pub use fft::{
    fft2_forward, fft2_forward_real, fft2_inverse, fft2_inverse_real, fft3_forward,
    fft3_forward_real, fft3_inverse, fft3_inverse_real,
};
pub(crate) use fft::{fft_axis, raw_fft2, Direction};

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planck constant, J s.
const PLANCK: f64 = 6.626_070_15e-34;
/// Electron rest mass, kg.
const ELECTRON_MASS: f64 = 9.109_383_701_5e-31;
/// Elementary charge, C.
const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Speed of light, m/s.
const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Relativistic de Broglie wavelength (Å) of electrons accelerated through
/// `e_volts` volts.
pub fn electron_wavelength(e_volts: f64) -> Result<f64> {
    if !(e_volts > 0.0) || !e_volts.is_finite() {
        return Err(Error::Domain(format!(
            "accelerating voltage must be positive, got {e_volts}"
        )));
    }
    let energy = ELEMENTARY_CHARGE * e_volts;
    let rest = ELECTRON_MASS * SPEED_OF_LIGHT * SPEED_OF_LIGHT;
    let momentum = (2.0 * ELECTRON_MASS * energy * (1.0 + energy / (2.0 * rest))).sqrt();
    Ok(PLANCK / momentum * 1e10)
}

/// Minimal Fresnel number `a² / (λ t)` of the smallest feature `a` over an
/// object of thickness `t`. Values well above one mean the projection
/// approximation holds.
pub fn fresnel_number(feature: f64, wavelength: f64, thickness: f64) -> Result<f64> {
    for (name, v) in [
        ("feature size", feature),
        ("wavelength", wavelength),
        ("thickness", thickness),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(feature * feature / (wavelength * thickness))
}

/// Uniform 2D sampling of the transverse plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid2")]
pub struct Grid2 {
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
}

#[derive(Deserialize)]
struct RawGrid2 {
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
}

impl TryFrom<RawGrid2> for Grid2 {
    type Error = Error;

    fn try_from(raw: RawGrid2) -> Result<Self> {
        Grid2::new(raw.nx, raw.ny, raw.dx, raw.dy)
    }
}

fn check_count(name: &str, n: usize) -> Result<()> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::Domain(format!(
            "{name} must be even and at least 2, got {n}"
        )));
    }
    Ok(())
}

fn check_spacing(name: &str, d: f64) -> Result<()> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Domain(format!("{name} must be positive, got {d}")));
    }
    Ok(())
}

/// Signed frequency index in wrap-around order.
#[inline]
pub(crate) fn signed_index(k: usize, n: usize) -> i64 {
    if k < n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

impl Grid2 {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64) -> Result<Self> {
        check_count("nx", nx)?;
        check_count("ny", ny)?;
        check_spacing("dx", dx)?;
        check_spacing("dy", dy)?;
        Ok(Self { nx, ny, dx, dy })
    }

    pub fn square(n: usize, d: f64) -> Result<Self> {
        Self::new(n, n, d, d)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    #[inline]
    pub fn x(&self, ix: usize) -> f64 {
        (ix as f64 - (self.nx / 2) as f64) * self.dx
    }

    #[inline]
    pub fn y(&self, iy: usize) -> f64 {
        (iy as f64 - (self.ny / 2) as f64) * self.dy
    }

    pub fn dqx(&self) -> f64 {
        1.0 / (self.nx as f64 * self.dx)
    }

    pub fn dqy(&self) -> f64 {
        1.0 / (self.ny as f64 * self.dy)
    }

    /// Nyquist frequency along x.
    pub fn q_max_x(&self) -> f64 {
        0.5 / self.dx
    }

    pub fn q_max_y(&self) -> f64 {
        0.5 / self.dy
    }

    #[inline]
    pub fn qx(&self, kx: usize) -> f64 {
        signed_index(kx, self.nx) as f64 * self.dqx()
    }

    #[inline]
    pub fn qy(&self, ky: usize) -> f64 {
        signed_index(ky, self.ny) as f64 * self.dqy()
    }

    /// Squared transverse frequency `q⊥²` of the spectral sample `(kx, ky)`.
    #[inline]
    pub fn q2(&self, kx: usize, ky: usize) -> f64 {
        let qx = self.qx(kx);
        let qy = self.qy(ky);
        qx * qx + qy * qy
    }

    /// Index of the sample at `-x` (periodic; the first column maps to itself).
    #[inline]
    pub fn mirror_x(&self, ix: usize) -> usize {
        (self.nx - ix) % self.nx
    }

    /// Half-widths of the sampled field of view, measured from the axis.
    pub fn half_extent(&self) -> (f64, f64) {
        (
            (self.nx / 2) as f64 * self.dx,
            (self.ny / 2) as f64 * self.dy,
        )
    }

    /// Same pixel size with a different sample count.
    pub fn resized(&self, nx: usize, ny: usize) -> Result<Self> {
        Self::new(nx, ny, self.dx, self.dy)
    }

    pub fn same_sampling(&self, other: &Grid2) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && (self.dx - other.dx).abs() <= 1e-12 * self.dx
            && (self.dy - other.dy).abs() <= 1e-12 * self.dy
    }
}

/// Uniform 3D sampling. The object occupies the slab `[z0, 0]`; the volume is
/// centred on the slab mid-plane `z0/2`, which also carries the rotation axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid3")]
pub struct Grid3 {
    plane: Grid2,
    nz: usize,
    dz: f64,
    z0: f64,
}

#[derive(Deserialize)]
struct RawGrid3 {
    plane: Grid2,
    nz: usize,
    dz: f64,
    z0: f64,
}

impl TryFrom<RawGrid3> for Grid3 {
    type Error = Error;

    fn try_from(raw: RawGrid3) -> Result<Self> {
        Grid3::new(raw.plane, raw.nz, raw.dz, raw.z0)
    }
}

impl Grid3 {
    pub fn new(plane: Grid2, nz: usize, dz: f64, z0: f64) -> Result<Self> {
        check_count("nz", nz)?;
        check_spacing("dz", dz)?;
        if !(z0 < 0.0) || !z0.is_finite() {
            return Err(Error::Domain(format!("slab origin z0 must be negative, got {z0}")));
        }
        if nz as f64 * dz < -z0 * (1.0 - 1e-12) {
            return Err(Error::Domain(format!(
                "slab of thickness {} Å does not fit in {nz} x {dz} Å",
                -z0
            )));
        }
        Ok(Self { plane, nz, dz, z0 })
    }

    /// Cubic grid whose depth sampling matches the transverse pixel size.
    pub fn cube(n: usize, d: f64, z0: f64) -> Result<Self> {
        Self::new(Grid2::square(n, d)?, n, d, z0)
    }

    pub fn plane(&self) -> &Grid2 {
        &self.plane
    }

    pub fn nx(&self) -> usize {
        self.plane.nx
    }

    pub fn ny(&self) -> usize {
        self.plane.ny
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn z0(&self) -> f64 {
        self.z0
    }

    /// Slab mid-plane (absolute z).
    pub fn center(&self) -> f64 {
        0.5 * self.z0
    }

    pub fn len(&self) -> usize {
        self.plane.len() * self.nz
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.plane.ny + iy) * self.plane.nx + ix
    }

    /// Depth of sample `iz` relative to the slab mid-plane.
    #[inline]
    pub fn w(&self, iz: usize) -> f64 {
        (iz as f64 - (self.nz / 2) as f64) * self.dz
    }

    /// Absolute z of sample `iz`.
    #[inline]
    pub fn z(&self, iz: usize) -> f64 {
        self.center() + self.w(iz)
    }

    pub fn dqz(&self) -> f64 {
        1.0 / (self.nz as f64 * self.dz)
    }

    #[inline]
    pub fn qz(&self, kz: usize) -> f64 {
        signed_index(kz, self.nz) as f64 * self.dqz()
    }

    pub fn voxel_volume(&self) -> f64 {
        self.plane.dx * self.plane.dy * self.dz
    }

    /// Half-depth of the sampled volume around the mid-plane.
    pub fn half_depth(&self) -> f64 {
        (self.nz / 2) as f64 * self.dz
    }
}

/// Monochromatic plane-wave illumination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBeam")]
pub struct Beam {
    e_volts: f64,
    wavelength: f64,
    intensity: f64,
}

#[derive(Deserialize)]
struct RawBeam {
    e_volts: f64,
    wavelength: f64,
    intensity: f64,
}

impl TryFrom<RawBeam> for Beam {
    type Error = Error;

    fn try_from(raw: RawBeam) -> Result<Self> {
        Beam::with_wavelength(raw.e_volts, raw.wavelength)?.with_intensity(raw.intensity)
    }
}

impl Beam {
    pub fn new(e_volts: f64) -> Result<Self> {
        let wavelength = electron_wavelength(e_volts)?;
        Ok(Self {
            e_volts,
            wavelength,
            intensity: 1.0,
        })
    }

    /// Beam with an explicitly supplied wavelength; it must agree with the
    /// relativistic value to within 0.1%.
    pub fn with_wavelength(e_volts: f64, wavelength: f64) -> Result<Self> {
        let expected = electron_wavelength(e_volts)?;
        if !((wavelength - expected).abs() <= 1e-3 * expected) {
            return Err(Error::Domain(format!(
                "wavelength {wavelength} Å inconsistent with {e_volts} V (expected {expected:.6} Å)"
            )));
        }
        Ok(Self {
            e_volts,
            wavelength,
            intensity: 1.0,
        })
    }

    pub fn with_intensity(mut self, intensity: f64) -> Result<Self> {
        if !(intensity > 0.0) || !intensity.is_finite() {
            return Err(Error::Domain(format!(
                "incident intensity must be positive, got {intensity}"
            )));
        }
        self.intensity = intensity;
        Ok(self)
    }

    pub fn e_volts(&self) -> f64 {
        self.e_volts
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    /// `k = 1/λ`.
    pub fn wave_number(&self) -> f64 {
        1.0 / self.wavelength
    }

    /// `π/(λE)`: phase per unit projected potential (rad per V·Å).
    pub fn interaction(&self) -> f64 {
        PI / (self.wavelength * self.e_volts)
    }
}

/// Samples bound to a [`Grid2`], x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Field2<T> {
    grid: Grid2,
    data: Vec<T>,
}

impl<T: Clone + Default> Field2<T> {
    pub fn zeros(grid: Grid2) -> Self {
        Self {
            grid,
            data: vec![T::default(); grid.len()],
        }
    }

    pub fn from_vec(grid: Grid2, data: Vec<T>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} samples for a {}x{} grid",
                data.len(),
                grid.nx,
                grid.ny
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn from_fn(grid: Grid2, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                data.push(f(ix, iy));
            }
        }
        Self { grid, data }
    }

    pub fn grid(&self) -> &Grid2 {
        &self.grid
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> &T {
        &self.data[self.grid.index(ix, iy)]
    }

    #[inline]
    pub fn get_mut(&mut self, ix: usize, iy: usize) -> &mut T {
        let i = self.grid.index(ix, iy);
        &mut self.data[i]
    }

    pub fn map<U: Clone + Default>(&self, f: impl Fn(&T) -> U) -> Field2<U> {
        Field2 {
            grid: self.grid,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Reflection `x -> -x` about the rotation axis.
    pub fn mirror_x(&self) -> Self {
        let g = self.grid;
        Self::from_fn(g, |ix, iy| self.get(g.mirror_x(ix), iy).clone())
    }
}

impl Field2<f64> {
    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_complex(&self) -> Field2<Complex64> {
        self.map(|&v| Complex64::new(v, 0.0))
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|&v| v * s)
    }
}

impl Field2<Complex64> {
    pub fn intensity(&self) -> Field2<f64> {
        self.map(|v| v.norm_sqr())
    }

    pub fn real(&self) -> Field2<f64> {
        self.map(|v| v.re)
    }

    pub fn norm_sqr_sum(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Samples bound to a [`Grid3`], x fastest and z slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3<T> {
    grid: Grid3,
    data: Vec<T>,
}

impl<T: Clone + Default> Volume3<T> {
    pub fn zeros(grid: Grid3) -> Self {
        Self {
            grid,
            data: vec![T::default(); grid.len()],
        }
    }

    pub fn from_vec(grid: Grid3, data: Vec<T>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} samples for a {}x{}x{} grid",
                data.len(),
                grid.nx(),
                grid.ny(),
                grid.nz
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn from_fn(grid: Grid3, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for iz in 0..grid.nz {
            for iy in 0..grid.ny() {
                for ix in 0..grid.nx() {
                    data.push(f(ix, iy, iz));
                }
            }
        }
        Self { grid, data }
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> &T {
        &self.data[self.grid.index(ix, iy, iz)]
    }

    #[inline]
    pub fn get_mut(&mut self, ix: usize, iy: usize, iz: usize) -> &mut T {
        let i = self.grid.index(ix, iy, iz);
        &mut self.data[i]
    }

    pub fn map<U: Clone + Default>(&self, f: impl Fn(&T) -> U) -> Volume3<U> {
        Volume3 {
            grid: self.grid,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// The `(x, z)` plane at row `iy`, x fastest.
    pub fn axial_slice(&self, iy: usize) -> Vec<T> {
        let g = self.grid;
        let mut out = Vec::with_capacity(g.nx() * g.nz);
        for iz in 0..g.nz {
            for ix in 0..g.nx() {
                out.push(self.get(ix, iy, iz).clone());
            }
        }
        out
    }
}

impl Volume3<f64> {
    pub fn max(&self) -> f64 {
        self.data.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    pub fn to_complex(&self) -> Volume3<Complex64> {
        self.map(|&v| Complex64::new(v, 0.0))
    }
}

/// Inverse of the transverse Laplacian, `-1 / (4π² q⊥² + alpha)` in Fourier
/// space. The zero-frequency output is always zero.
pub fn inverse_laplacian_2d(f: &Field2<f64>, alpha: f64) -> Result<Field2<f64>> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!(
            "regulariser must be non-negative, got {alpha}"
        )));
    }
    let g = *f.grid();
    let mut spec = raw_fft2(&f.to_complex(), Direction::Forward);
    for ky in 0..g.ny {
        for kx in 0..g.nx {
            let i = g.index(kx, ky);
            if kx == 0 && ky == 0 {
                spec[i] = Complex64::new(0.0, 0.0);
                continue;
            }
            let denom = 4.0 * PI * PI * g.q2(kx, ky) + alpha;
            spec[i] *= -1.0 / denom;
        }
    }
    let field = Field2::from_vec(g, spec)?;
    let out = raw_fft2(&field, Direction::Inverse);
    let n = g.len() as f64;
    Field2::from_vec(g, out.into_iter().map(|v| v.re / n).collect())
}

/// Forward transverse Laplacian evaluated spectrally.
pub fn laplacian_2d(f: &Field2<f64>) -> Field2<f64> {
    let g = *f.grid();
    let mut spec = raw_fft2(&f.to_complex(), Direction::Forward);
    for ky in 0..g.ny {
        for kx in 0..g.nx {
            spec[g.index(kx, ky)] *= -4.0 * PI * PI * g.q2(kx, ky);
        }
    }
    let field = Field2 { grid: g, data: spec };
    let n = g.len() as f64;
    let out = raw_fft2(&field, Direction::Inverse);
    Field2 {
        grid: g,
        data: out.into_iter().map(|v| v.re / n).collect(),
    }
}

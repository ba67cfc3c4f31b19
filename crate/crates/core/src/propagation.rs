//! Free-space Fresnel propagation, phase gratings and the multislice forward
//! model.
//!
//! Plane positions are measured along the beam from the slab mid-plane (the
//! rotation axis), so a defocus of `z` means an image plane a distance `z`
//! downstream of the axis for every orientation. The transfer function of free
//! space over a distance `d` is `exp(-iπλd q⊥²)`; with this sign a weak phase
//! object `φ` produces `I/I_in = 1 + 2 sin(πλz q⊥²) φ̂`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{fft_axis, Beam, Direction, Field2, Grid2, Grid3};
use crate::phantom::{stamp_gaussian, Atom, Phantom};

/// Fraction of the Nyquist frequency kept by the multislice aperture.
pub const BANDLIMIT_FRACTION: f64 = 2.0 / 3.0;

/// Largest phase (rad) one multislice slice may impart.
pub const MAX_SLICE_PHASE: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Propagator {
    /// `exp(-iπλd q²)`.
    #[default]
    Paraxial,
    /// `exp(i2πd(√(1/λ² - q²) - 1/λ))`; evanescent components are dropped.
    Exact,
}

/// Complex amplitude on a transverse plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Wavefield {
    field: Field2<Complex64>,
    beam: Beam,
    z: f64,
}

impl Wavefield {
    pub fn new(field: Field2<Complex64>, beam: Beam, z: f64) -> Self {
        Self { field, beam, z }
    }

    /// Uniform incident wave of intensity `I_in`.
    pub fn plane_wave(grid: Grid2, beam: Beam, z: f64) -> Self {
        let amp = Complex64::new(beam.intensity().sqrt(), 0.0);
        Self::new(Field2::from_fn(grid, |_, _| amp), beam, z)
    }

    pub fn field(&self) -> &Field2<Complex64> {
        &self.field
    }

    pub fn into_field(self) -> Field2<Complex64> {
        self.field
    }

    pub fn beam(&self) -> &Beam {
        &self.beam
    }

    pub fn grid(&self) -> &Grid2 {
        self.field.grid()
    }

    /// Plane position relative to the slab mid-plane (Å).
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn intensity(&self) -> Field2<f64> {
        self.field.intensity()
    }

    pub fn mean_intensity(&self) -> f64 {
        self.field.norm_sqr_sum() / self.grid().len() as f64
    }

    /// Contrast `K = 1 - I/I_in`.
    pub fn contrast(&self) -> Field2<f64> {
        let inv = 1.0 / self.beam.intensity();
        self.field.map(|u| 1.0 - u.norm_sqr() * inv)
    }
}

/// Transfer function of free space for `distance`, in wrap-around order.
/// Frequencies above `cutoff` (if any) are removed.
fn transfer(grid: &Grid2, wavelength: f64, distance: f64, kind: Propagator, cutoff: Option<f64>) -> Vec<Complex64> {
    let k = 1.0 / wavelength;
    let cut2 = cutoff.map(|c| c * c);
    let mut h = Vec::with_capacity(grid.len());
    for ky in 0..grid.ny() {
        for kx in 0..grid.nx() {
            let q2 = grid.q2(kx, ky);
            if cut2.is_some_and(|c| q2 > c) {
                h.push(Complex64::new(0.0, 0.0));
                continue;
            }
            let phase = match kind {
                Propagator::Paraxial => -PI * wavelength * distance * q2,
                Propagator::Exact => {
                    if q2 >= k * k {
                        h.push(Complex64::new(0.0, 0.0));
                        continue;
                    }
                    // k(√(1 - q²/k²) - 1) without cancellation
                    let s = q2 / (k * k);
                    2.0 * PI * distance * k * (-s / (1.0 + (1.0 - s).sqrt()))
                }
            };
            h.push(Complex64::from_polar(1.0, phase));
        }
    }
    h
}

/// Multiply the spectrum of `data` by `h`. Both are in wrap-around order and
/// the centring phase cancels because it is applied on the way in and out.
fn filter_in_place(data: &mut [Complex64], grid: &Grid2, h: &[Complex64]) {
    let shape = [grid.ny(), grid.nx()];
    fft_axis(data, &shape, 1, Direction::Forward);
    fft_axis(data, &shape, 0, Direction::Forward);
    let scale = 1.0 / grid.len() as f64;
    for (u, t) in data.iter_mut().zip(h) {
        *u *= t * scale;
    }
    fft_axis(data, &shape, 0, Direction::Inverse);
    fft_axis(data, &shape, 1, Direction::Inverse);
}

/// Paraxial propagation by `distance` along the beam.
pub fn propagate(w: &Wavefield, distance: f64) -> Wavefield {
    propagate_with(w, distance, Propagator::Paraxial, None)
}

/// Propagation with an explicit kernel and optional aperture (Å⁻¹).
pub fn propagate_with(
    w: &Wavefield,
    distance: f64,
    kind: Propagator,
    cutoff: Option<f64>,
) -> Wavefield {
    if distance == 0.0 && cutoff.is_none() {
        return w.clone();
    }
    let grid = *w.grid();
    let h = transfer(&grid, w.beam.wavelength(), distance, kind, cutoff);
    let mut data = w.field.data().to_vec();
    filter_in_place(&mut data, &grid, &h);
    Wavefield {
        field: Field2::from_vec(grid, data).expect("length preserved"),
        beam: w.beam,
        z: w.z + distance,
    }
}

/// Transmit through a slice with projected potential `slice` (V·Å).
pub fn phase_grating(w: &Wavefield, slice: &Field2<f64>) -> Result<Wavefield> {
    if !w.grid().same_sampling(slice.grid()) {
        return Err(Error::GridMismatch("slice and wavefield grids differ".into()));
    }
    let sigma = w.beam.interaction();
    let mut out = w.clone();
    for (u, v) in out.field.data_mut().iter_mut().zip(slice.data()) {
        *u *= Complex64::from_polar(1.0, sigma * v);
    }
    Ok(out)
}

/// Move a wavefield to the plane `to_plane` (relative to the mid-plane).
pub fn refocus(w: &Wavefield, to_plane: f64) -> Wavefield {
    propagate(w, to_plane - w.z)
}

/// Projection approximation: the whole object collapsed onto the mid-plane.
pub fn projection_exit_wave(p: &Phantom, grid: &Grid3, beam: &Beam, theta: f64) -> Wavefield {
    let projected = p.line_projection(grid.plane(), theta);
    let amp = beam.intensity().sqrt();
    let sigma = beam.interaction();
    let field = projected.map(|v| Complex64::from_polar(amp, sigma * v));
    Wavefield::new(field, *beam, 0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultisliceOptions {
    pub propagator: Propagator,
    /// Apply the `BANDLIMIT_FRACTION` aperture at every propagation step.
    pub bandlimit: bool,
    pub max_slice_phase: f64,
}

impl Default for MultisliceOptions {
    fn default() -> Self {
        Self {
            propagator: Propagator::Paraxial,
            bandlimit: true,
            max_slice_phase: MAX_SLICE_PHASE,
        }
    }
}

impl MultisliceOptions {
    fn cutoff(&self, grid: &Grid2) -> Option<f64> {
        self.bandlimit
            .then(|| BANDLIMIT_FRACTION * grid.q_max_x().min(grid.q_max_y()))
    }
}

/// Atoms relative to the mid-plane after rotation, checked against the grid.
pub(crate) fn rotated_relative_atoms(p: &Phantom, grid: &Grid3, theta: f64) -> Result<Vec<Atom>> {
    let atoms = p.rotate_y(theta).relative_atoms();
    let (hx, hy) = grid.plane().half_extent();
    let hz = grid.half_depth();
    for (index, a) in atoms.iter().enumerate() {
        let [x, y, w] = a.position;
        if x.abs() > hx || y.abs() > hy || w.abs() > hz {
            return Err(Error::AtomOutsideGrid { index, x, y, z: w });
        }
    }
    Ok(atoms)
}

/// Projected potential (V·Å) of each grid-aligned slice. Slice `m` spans
/// `[w_m, w_{m+1}]` with `w_m = (m - nz/2) dz`; the first and last slices
/// extend to infinity so that Gaussian tails are never lost. Slices without
/// any atom within the cutoff are `None`.
pub fn slice_potentials(atoms: &[Atom], grid: &Grid3) -> Vec<Option<Field2<f64>>> {
    let nz = grid.nz();
    let bound = |m: usize| -> f64 {
        if m == 0 {
            f64::NEG_INFINITY
        } else if m == nz {
            f64::INFINITY
        } else {
            grid.w(0) + m as f64 * grid.dz()
        }
    };
    (0..nz)
        .map(|m| {
            let (lo, hi) = (bound(m), bound(m + 1));
            let mut slice: Option<Field2<f64>> = None;
            for a in atoms {
                let w = a.position[2];
                if w + a.cutoff() < lo || w - a.cutoff() > hi {
                    continue;
                }
                let weight = Atom::depth_integral(w, a.width, lo, hi);
                if weight == 0.0 {
                    continue;
                }
                let field = slice.get_or_insert_with(|| Field2::zeros(*grid.plane()));
                stamp_gaussian(field, a, a.amplitude * weight);
            }
            slice
        })
        .collect()
}

/// Multislice simulation of the phantom rotated by `theta`, returning the
/// wave on the plane `exit_defocus` downstream of the mid-plane.
pub fn multislice(
    p: &Phantom,
    grid: &Grid3,
    beam: &Beam,
    theta: f64,
    exit_defocus: f64,
    opts: &MultisliceOptions,
) -> Result<Wavefield> {
    let atoms = rotated_relative_atoms(p, grid, theta)?;
    multislice_atoms(&atoms, grid, beam, exit_defocus, opts)
}

/// Multislice through atoms already expressed relative to the mid-plane.
pub(crate) fn multislice_atoms(
    atoms: &[Atom],
    grid: &Grid3,
    beam: &Beam,
    exit_defocus: f64,
    opts: &MultisliceOptions,
) -> Result<Wavefield> {
    let plane = *grid.plane();
    let slices = slice_potentials(atoms, grid);
    let sigma = beam.interaction();
    let peak = slices
        .iter()
        .flatten()
        .map(|s| s.max_abs())
        .fold(0.0, f64::max);
    if sigma * peak > opts.max_slice_phase {
        let needed = grid.dz() * opts.max_slice_phase / (sigma * peak);
        return Err(Error::Precondition(format!(
            "slice phase {:.3} rad exceeds {} rad; use dz <= {needed:.4} Å",
            sigma * peak,
            opts.max_slice_phase
        )));
    }

    let cutoff = opts.cutoff(&plane);
    let wavelength = beam.wavelength();
    let step = transfer(&plane, wavelength, grid.dz(), opts.propagator, cutoff);
    let amp = Complex64::new(beam.intensity().sqrt(), 0.0);
    let mut data = vec![amp; plane.len()];
    // gratings sit at slice midpoints
    let mut z = grid.w(0);
    for (m, slice) in slices.iter().enumerate() {
        let mid = grid.w(m) + 0.5 * grid.dz();
        let Some(slice) = slice else {
            continue;
        };
        let pending = mid - z;
        if pending != 0.0 {
            let h = if (pending - grid.dz()).abs() < 1e-12 * grid.dz() {
                step.clone()
            } else {
                transfer(&plane, wavelength, pending, opts.propagator, cutoff)
            };
            filter_in_place(&mut data, &plane, &h);
        }
        z = mid;
        for (u, v) in data.iter_mut().zip(slice.data()) {
            *u *= Complex64::from_polar(1.0, sigma * v);
        }
    }
    let last = exit_defocus - z;
    if last != 0.0 || cutoff.is_some() {
        let h = transfer(&plane, wavelength, last, opts.propagator, cutoff);
        filter_in_place(&mut data, &plane, &h);
    }
    Ok(Wavefield::new(
        Field2::from_vec(plane, data).expect("length preserved"),
        *beam,
        exit_defocus,
    ))
}

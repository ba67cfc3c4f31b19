//! First-Born contrast generators and the projection sets built from them.
//!
//! All Born models here are linear in the potential and are evaluated per
//! atom in Fourier space, where Gaussian atoms have closed forms. Multislice
//! and projection-approximation contrasts are provided alongside so the same
//! [`ProjectionSet`] type carries every forward model.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{fft2_forward_real, fft2_inverse_real, Beam, Field2, Grid2, Grid3};
use crate::phantom::{Atom, Phantom};
use crate::propagation::{
    multislice_atoms, projection_exit_wave, propagate, rotated_relative_atoms, MultisliceOptions,
};

/// Sign relating the weak-phase intensity law to the contrast. Defocus `z`
/// turns a phase `φ` into `I/I_in = 1 + 2 sin(πλz q²) φ̂`, and because the
/// contrast is `K = 1 - I/I_in` every Born formula in this crate carries this
/// factor in front of `2 sin(...)`.
pub const CONTRAST_SIGN: f64 = -1.0;

/// Phases above this (rad) leave the weak-phase regime; second-order terms
/// reach a few percent.
pub const WEAK_PHASE_LIMIT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardModel {
    /// Straight-ray phase with free-space defocus from the mid-plane.
    Projection,
    /// Continuum first-Born contrast.
    Born,
    /// Incoherent sum over thin slabs.
    Sliced,
    /// Phase-grating multislice.
    Multislice,
    /// Sum of single-atom multislice contrasts.
    PerAtom,
}

impl ForwardModel {
    pub fn tag(&self) -> &'static str {
        match self {
            ForwardModel::Projection => "projection",
            ForwardModel::Born => "born",
            ForwardModel::Sliced => "sliced",
            ForwardModel::Multislice => "multislice",
            ForwardModel::PerAtom => "per-atom",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        Ok(match tag {
            "projection" => ForwardModel::Projection,
            "born" => ForwardModel::Born,
            "sliced" => ForwardModel::Sliced,
            "multislice" => ForwardModel::Multislice,
            "per-atom" => ForwardModel::PerAtom,
            other => return Err(Error::Format(format!("unknown forward model `{other}`"))),
        })
    }
}

/// Contrast `K(r⊥, z) = 1 - I/I_in` for one orientation.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastImage {
    pub field: Field2<f64>,
    /// Image plane, downstream of the mid-plane (Å).
    pub defocus: f64,
    pub theta: f64,
    pub model: ForwardModel,
}

impl ContrastImage {
    pub fn grid(&self) -> &Grid2 {
        self.field.grid()
    }
}

/// Spectrum of the thin-object contrast: `F₂K = -2 sin(πλz q²) F₂φ`.
pub fn thin_object_spectrum(phi_spec: &Field2<Complex64>, beam: &Beam, z: f64) -> Field2<Complex64> {
    let g = *phi_spec.grid();
    let lambda = beam.wavelength();
    let mut out = phi_spec.clone();
    for ky in 0..g.ny() {
        for kx in 0..g.nx() {
            let s = (PI * lambda * z * g.q2(kx, ky)).sin();
            *out.get_mut(kx, ky) *= CONTRAST_SIGN * 2.0 * s;
        }
    }
    out
}

/// Weak-phase contrast of a thin object with phase map `phi` (rad) imaged
/// at defocus `z`.
pub fn forward_thin(phi: &Field2<f64>, beam: &Beam, z: f64) -> ContrastImage {
    let peak = phi.max_abs();
    if peak > WEAK_PHASE_LIMIT {
        log::warn!("phase {peak:.3} rad exceeds the weak-phase limit {WEAK_PHASE_LIMIT}");
    }
    let spec = thin_object_spectrum(&fft2_forward_real(phi), beam, z);
    ContrastImage {
        field: fft2_inverse_real(&spec),
        defocus: z,
        theta: 0.0,
        model: ForwardModel::Born,
    }
}

/// True for the unpaired Nyquist row or column of an even grid.
#[inline]
pub(crate) fn is_nyquist(g: &Grid2, kx: usize, ky: usize) -> bool {
    kx == g.nx() / 2 || ky == g.ny() / 2
}

/// Real image of a Hermitian spectrum. The Nyquist row and column have no
/// conjugate partner on an even grid and are dropped, so the transform of
/// the result reproduces every other bin exactly.
pub(crate) fn real_from_spectrum(mut spec: Field2<Complex64>) -> Field2<f64> {
    let g = *spec.grid();
    for ky in 0..g.ny() {
        for kx in 0..g.nx() {
            if is_nyquist(&g, kx, ky) {
                *spec.get_mut(kx, ky) = Complex64::new(0.0, 0.0);
            }
        }
    }
    fft2_inverse_real(&spec)
}

/// Per-atom transverse factor `V0 2πσ² exp(-2π²σ²q²) exp(-i2π q·r⊥)` on the
/// spectral grid, passed to `f` together with `q²` for each bin.
fn for_each_atom_bin(g: &Grid2, atom: &Atom, mut f: impl FnMut(usize, Complex64, f64)) {
    let s2 = atom.width * atom.width;
    let scale = atom.amplitude * 2.0 * PI * s2;
    let [x, y, _] = atom.position;
    let px: Vec<Complex64> = (0..g.nx())
        .map(|kx| Complex64::from_polar(1.0, -2.0 * PI * g.qx(kx) * x))
        .collect();
    for ky in 0..g.ny() {
        let py = Complex64::from_polar(1.0, -2.0 * PI * g.qy(ky) * y);
        for (kx, pxk) in px.iter().enumerate() {
            let q2 = g.q2(kx, ky);
            let mag = scale * (-2.0 * PI * PI * s2 * q2).exp();
            f(g.index(kx, ky), pxk * py * mag, q2);
        }
    }
}

/// Continuum Born contrast spectrum for atoms given relative to the
/// mid-plane, imaged `z` downstream of it:
/// `F₂K = -(2π/(λE)) ∫ sin[πλ(z - w)q²] (F₂V)(q, w) dw`.
pub(crate) fn born_spectrum_atoms(atoms: &[Atom], grid: &Grid2, beam: &Beam, z: f64) -> Field2<Complex64> {
    let lambda = beam.wavelength();
    let pref = CONTRAST_SIGN * 2.0 * beam.interaction();
    let mut spec = Field2::<Complex64>::zeros(*grid);
    let data = spec.data_mut();
    for atom in atoms {
        let depth = atom.width * (2.0 * PI).sqrt();
        let wa = atom.position[2];
        for_each_atom_bin(grid, atom, |i, t, q2| {
            let a = PI * lambda * q2;
            let envelope = (-0.5 * (a * atom.width).powi(2)).exp();
            data[i] += t * (pref * depth * envelope * (a * (z - wa)).sin());
        });
    }
    spec
}

/// Continuum first-Born contrast of the phantom rotated by `theta`.
pub fn born_contrast(p: &Phantom, grid: &Grid3, beam: &Beam, theta: f64, z: f64) -> Result<ContrastImage> {
    let atoms = rotated_relative_atoms(p, grid, theta)?;
    let spec = born_spectrum_atoms(&atoms, grid.plane(), beam, z);
    Ok(ContrastImage {
        field: real_from_spectrum(spec),
        defocus: z,
        theta,
        model: ForwardModel::Born,
    })
}

/// Numerical reference for the depth integral inside [`born_contrast`]:
/// composite Gauss-Legendre over `±GAUSSIAN_CUTOFF σ` with `panels` panels.
pub fn born_depth_quadrature(atom: &Atom, a: f64, z: f64, panels: usize) -> f64 {
    // 5-point Gauss-Legendre nodes and weights on [-1, 1]
    const NODES: [f64; 5] = [
        0.0,
        -0.538_469_310_105_683_1,
        0.538_469_310_105_683_1,
        -0.906_179_845_938_664,
        0.906_179_845_938_664,
    ];
    const WEIGHTS: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let wa = atom.position[2];
    let reach = crate::phantom::GAUSSIAN_CUTOFF * atom.width;
    let h = 2.0 * reach / panels as f64;
    let mut sum = 0.0;
    for p in 0..panels {
        let mid = wa - reach + (p as f64 + 0.5) * h;
        for (x, wt) in NODES.iter().zip(WEIGHTS) {
            let w = mid + 0.5 * h * x;
            let g = (-(w - wa).powi(2) / (2.0 * atom.width * atom.width)).exp();
            sum += 0.5 * h * wt * g * (a * (z - w)).sin();
        }
    }
    sum
}

/// Incoherent sum over `m` equal slabs of the rotated phantom's extent, each
/// treated as a thin object at its mid-plane. The outer slabs extend to
/// infinity so no part of any atom is lost.
pub fn sliced_contrast(
    p: &Phantom,
    grid: &Grid3,
    beam: &Beam,
    theta: f64,
    z: f64,
    m: usize,
) -> Result<ContrastImage> {
    if m == 0 {
        return Err(Error::Domain("slice count must be at least 1".into()));
    }
    let rotated = p.rotate_y(theta);
    let half = 0.5 * rotated.thickness();
    let atoms = rotated_relative_atoms(p, grid, theta)?;
    let g = *grid.plane();
    let lambda = beam.wavelength();
    let pref = CONTRAST_SIGN * 2.0 * beam.interaction();
    let step = 2.0 * half / m as f64;
    let bound = |k: usize| -> f64 {
        if k == 0 {
            f64::NEG_INFINITY
        } else if k == m {
            f64::INFINITY
        } else {
            -half + k as f64 * step
        }
    };
    let centres: Vec<f64> = (0..m).map(|k| -half + (k as f64 + 0.5) * step).collect();
    let mut spec = Field2::<Complex64>::zeros(g);
    let data = spec.data_mut();
    for atom in &atoms {
        let wa = atom.position[2];
        let weights: Vec<(f64, f64)> = (0..m)
            .filter_map(|k| {
                let w = Atom::depth_integral(wa, atom.width, bound(k), bound(k + 1));
                (w != 0.0).then_some((centres[k], w))
            })
            .collect();
        for_each_atom_bin(&g, atom, |i, t, q2| {
            let a = PI * lambda * q2;
            let sum: f64 = weights.iter().map(|&(c, w)| w * (a * (z - c)).sin()).sum();
            data[i] += t * (pref * sum);
        });
    }
    Ok(ContrastImage {
        field: real_from_spectrum(spec),
        defocus: z,
        theta,
        model: ForwardModel::Sliced,
    })
}

/// Contrast of the full multislice wave on the plane `z`.
pub fn multislice_contrast(
    p: &Phantom,
    grid: &Grid3,
    beam: &Beam,
    theta: f64,
    z: f64,
    opts: &MultisliceOptions,
) -> Result<ContrastImage> {
    let atoms = rotated_relative_atoms(p, grid, theta)?;
    let w = multislice_atoms(&atoms, grid, beam, z, opts)?;
    Ok(ContrastImage {
        field: w.contrast(),
        defocus: z,
        theta,
        model: ForwardModel::Multislice,
    })
}

/// Projection approximation: straight-ray exit wave on the mid-plane,
/// propagated to the plane `z`.
pub fn projection_contrast(p: &Phantom, grid: &Grid3, beam: &Beam, theta: f64, z: f64) -> ContrastImage {
    let w = propagate(&projection_exit_wave(p, grid, beam, theta), z);
    ContrastImage {
        field: w.contrast(),
        defocus: z,
        theta,
        model: ForwardModel::Projection,
    }
}

/// Sum of the multislice contrasts of each atom on its own. Differences from
/// the full multislice image isolate multiple scattering.
pub fn per_atom_composite(
    p: &Phantom,
    grid: &Grid3,
    beam: &Beam,
    theta: f64,
    z: f64,
    opts: &MultisliceOptions,
) -> Result<ContrastImage> {
    let atoms = rotated_relative_atoms(p, grid, theta)?;
    let mut total = Field2::<f64>::zeros(*grid.plane());
    for atom in &atoms {
        let k = multislice_atoms(std::slice::from_ref(atom), grid, beam, z, opts)?.contrast();
        for (t, v) in total.data_mut().iter_mut().zip(k.data()) {
            *t += v;
        }
    }
    Ok(ContrastImage {
        field: total,
        defocus: z,
        theta,
        model: ForwardModel::PerAtom,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub model: ForwardModel,
    /// Slab count for [`ForwardModel::Sliced`].
    pub slices: usize,
    pub multislice: MultisliceOptions,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            model: ForwardModel::Multislice,
            slices: 64,
            multislice: MultisliceOptions::default(),
        }
    }
}

/// Contrast of one orientation under the selected model.
pub fn simulate_one(
    p: &Phantom,
    grid: &Grid3,
    beam: &Beam,
    theta: f64,
    z: f64,
    opts: &SimulationOptions,
) -> Result<ContrastImage> {
    match opts.model {
        ForwardModel::Projection => {
            // same grid check as the other models
            rotated_relative_atoms(p, grid, theta)?;
            Ok(projection_contrast(p, grid, beam, theta, z))
        }
        ForwardModel::Born => born_contrast(p, grid, beam, theta, z),
        ForwardModel::Sliced => sliced_contrast(p, grid, beam, theta, z, opts.slices),
        ForwardModel::Multislice => multislice_contrast(p, grid, beam, theta, z, &opts.multislice),
        ForwardModel::PerAtom => per_atom_composite(p, grid, beam, theta, z, &opts.multislice),
    }
}

/// `n` angles `2πk/n` covering a full turn.
pub fn uniform_angles(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect()
}

/// Contrast images of one object over a full rotation at a single defocus.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionSet {
    pub grid: Grid3,
    pub beam: Beam,
    pub defocus: f64,
    pub model: ForwardModel,
    pub images: Vec<ContrastImage>,
}

/// Relative tolerance on angle spacing.
const ANGLE_TOL: f64 = 1e-9;

impl ProjectionSet {
    pub fn new(
        grid: Grid3,
        beam: Beam,
        defocus: f64,
        model: ForwardModel,
        images: Vec<ContrastImage>,
    ) -> Result<Self> {
        let set = Self {
            grid,
            beam,
            defocus,
            model,
            images,
        };
        set.validate()?;
        Ok(set)
    }

    /// Simulate every angle in parallel. Results are collected in angle order
    /// so the output does not depend on scheduling.
    pub fn simulate(
        p: &Phantom,
        grid: &Grid3,
        beam: &Beam,
        angles: &[f64],
        z: f64,
        opts: &SimulationOptions,
    ) -> Result<Self> {
        let images = angles
            .par_iter()
            .map(|&theta| simulate_one(p, grid, beam, theta, z, opts))
            .collect::<Result<Vec<_>>>()?;
        Self::new(*grid, *beam, z, opts.model, images)
    }

    pub fn angles(&self) -> Vec<f64> {
        self.images.iter().map(|im| im.theta).collect()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Shared grid, defocus, strictly increasing angles in `[0, 2π)` with a
    /// uniform step.
    pub fn validate(&self) -> Result<()> {
        for im in &self.images {
            if !im.grid().same_sampling(self.grid.plane()) {
                return Err(Error::GridMismatch(format!(
                    "image at θ = {} has a different grid",
                    im.theta
                )));
            }
            if im.defocus != self.defocus {
                return Err(Error::Precondition(format!(
                    "image at θ = {} has defocus {} instead of {}",
                    im.theta, im.defocus, self.defocus
                )));
            }
        }
        check_uniform_angles(&self.angles())
    }

    /// Index of the image at `θ + π` for each image, or the angles lacking a
    /// partner.
    pub fn partners(&self) -> Result<Vec<usize>> {
        partner_indices(&self.angles())
    }
}

/// Angles must be strictly increasing, inside `[0, 2π)` and evenly spaced.
pub fn check_uniform_angles(angles: &[f64]) -> Result<()> {
    if angles.is_empty() {
        return Ok(());
    }
    if angles.iter().any(|&a| !(0.0..2.0 * PI).contains(&a)) {
        return Err(Error::Precondition("angles must lie in [0, 2π)".into()));
    }
    if angles.len() == 1 {
        return Ok(());
    }
    let step = angles[1] - angles[0];
    for pair in angles.windows(2) {
        let d = pair[1] - pair[0];
        if !(d > 0.0) {
            return Err(Error::Precondition("angles must be strictly increasing".into()));
        }
        if (d - step).abs() > ANGLE_TOL * (1.0 + step) {
            return Err(Error::Precondition(format!(
                "angle step {d} differs from {step}; angles must be uniform"
            )));
        }
    }
    Ok(())
}

/// For every angle, the index of the angle `θ + π (mod 2π)`.
pub fn partner_indices(angles: &[f64]) -> Result<Vec<usize>> {
    let tol = 1e-9;
    let mut out = Vec::with_capacity(angles.len());
    let mut missing = Vec::new();
    for &a in angles {
        let target = (a + PI).rem_euclid(2.0 * PI);
        let found = angles.iter().position(|&b| {
            let d = (b - target).rem_euclid(2.0 * PI);
            d < tol || 2.0 * PI - d < tol
        });
        match found {
            Some(i) => out.push(i),
            None => missing.push(a),
        }
    }
    if missing.is_empty() {
        Ok(out)
    } else {
        Err(Error::MissingPartners(missing))
    }
}

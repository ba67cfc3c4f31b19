//! Synthetic electrostatic potentials built from isotropic Gaussian atoms.
//!
//! An atom contributes `V0 exp(-|r - r_a|² / (2σ²))` volts. Gaussians keep
//! the ground truth analytic in real and reciprocal space, so every
//! reconstruction can be checked against exact values.
//!
//! Coordinates are absolute with the exit plane at `z = 0` and the object in
//! the slab `[z0, 0]`. Rotations act about the `y` axis through `x = 0` and
//! the slab mid-plane `z = z0/2`.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Field2, Grid2, Grid3, Volume3};

/// Gaussians are evaluated out to this many widths; `exp(-32)` is below
/// double-precision relevance for every quantity compared in this crate.
pub const GAUSSIAN_CUTOFF: f64 = 8.0;

/// Minimum clearance, in widths, between an atom and the slab faces.
pub const SLAB_MARGIN: f64 = 3.0;

/// Default surrogate atom amplitude (V).
pub const DEFAULT_AMPLITUDE: f64 = 50.0;
/// Default surrogate atom width σ (Å).
pub const DEFAULT_WIDTH: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    /// `(x, y, z)` in Å.
    pub position: [f64; 3],
    /// Peak potential `V0` in volts.
    pub amplitude: f64,
    /// Gaussian width σ in Å.
    pub width: f64,
}

impl Atom {
    pub fn new(position: [f64; 3], amplitude: f64, width: f64) -> Result<Self> {
        if !(amplitude > 0.0) || !amplitude.is_finite() {
            return Err(Error::Domain(format!("atom amplitude must be positive, got {amplitude}")));
        }
        if !(width > 0.0) || !width.is_finite() {
            return Err(Error::Domain(format!("atom width must be positive, got {width}")));
        }
        if position.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain(format!("non-finite atom position {position:?}")));
        }
        Ok(Self {
            position,
            amplitude,
            width,
        })
    }

    /// Line integral through the atom centre, `V0 σ √(2π)` (V·Å).
    pub fn projected_peak(&self) -> f64 {
        self.amplitude * self.width * (2.0 * PI).sqrt()
    }

    /// Volume integral `V0 (2πσ²)^{3/2}` (V·Å³).
    pub fn integrated(&self) -> f64 {
        self.amplitude * (2.0 * PI * self.width * self.width).powf(1.5)
    }

    /// `∫_lo^hi exp(-(z - z_a)² / (2σ²)) dz`, for `z_a` given explicitly.
    /// Either bound may be infinite.
    pub(crate) fn depth_integral(z_a: f64, width: f64, lo: f64, hi: f64) -> f64 {
        let s = SQRT_2 * width;
        let a = (lo - z_a) / s;
        let b = (hi - z_a) / s;
        let scale = width * (PI / 2.0).sqrt();
        // erfc keeps precision in the tails
        let diff = if a >= 0.0 {
            libm::erfc(a) - libm::erfc(b)
        } else if b <= 0.0 {
            libm::erfc(-b) - libm::erfc(-a)
        } else {
            libm::erf(b) - libm::erf(a)
        };
        scale * diff
    }

    pub(crate) fn cutoff(&self) -> f64 {
        GAUSSIAN_CUTOFF * self.width
    }
}

/// Sparse list of atoms inside the slab `[z0, 0]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    atoms: Vec<Atom>,
    z0: f64,
}

/// Parameters for [`Phantom::random`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomPhantom {
    pub n_atoms: usize,
    /// Slab thickness `|z0|` in Å.
    pub thickness: f64,
    /// Atoms are drawn with `|y|` below this bound.
    pub half_height: f64,
    pub amplitude: f64,
    pub width: f64,
    /// Minimum centre-to-centre distance between atoms.
    pub min_separation: f64,
}

impl Default for RandomPhantom {
    fn default() -> Self {
        Self {
            n_atoms: 20,
            thickness: 80.0,
            half_height: 30.0,
            amplitude: DEFAULT_AMPLITUDE,
            width: DEFAULT_WIDTH,
            min_separation: 4.0,
        }
    }
}

impl Phantom {
    pub fn new(atoms: Vec<Atom>, z0: f64) -> Result<Self> {
        if !(z0 < 0.0) || !z0.is_finite() {
            return Err(Error::Domain(format!("slab origin must be negative, got {z0}")));
        }
        for (i, a) in atoms.iter().enumerate() {
            Atom::new(a.position, a.amplitude, a.width)?;
            let margin = SLAB_MARGIN * a.width;
            let z = a.position[2];
            // small tolerance absorbs rounding in rotated coordinates
            let tol = 1e-9 * (1.0 + z0.abs());
            if z < z0 + margin - tol || z > -margin + tol {
                return Err(Error::Domain(format!(
                    "atom {i} at z = {z:.4} Å is closer than {SLAB_MARGIN}σ to the slab [{z0}, 0]"
                )));
            }
        }
        Ok(Self { atoms, z0 })
    }

    pub fn empty(z0: f64) -> Result<Self> {
        Self::new(Vec::new(), z0)
    }

    /// Build a phantom from atoms whose coordinates are given relative to the
    /// rotation axis (`x = 0, z = 0`). The slab is made just thick enough that
    /// every rotation about `y` keeps all atoms inside with the required margin.
    pub fn enclosing(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Domain("cannot size a slab around zero atoms".into()));
        }
        let half = atoms
            .iter()
            .map(|a| a.position[0].hypot(a.position[2]) + SLAB_MARGIN * a.width)
            .fold(0.0, f64::max);
        let shifted = atoms
            .into_iter()
            .map(|mut a| {
                a.position[2] -= half;
                a
            })
            .collect();
        Self::new(shifted, -2.0 * half)
    }

    /// Random atoms in a cylinder about the rotation axis, so the slab of the
    /// requested thickness holds the object at every orientation.
    pub fn random(spec: &RandomPhantom, seed: u64) -> Result<Self> {
        let radius = 0.5 * spec.thickness - SLAB_MARGIN * spec.width;
        if !(radius > 0.0) {
            return Err(Error::Domain(format!(
                "slab of {} Å too thin for atoms of width {}",
                spec.thickness, spec.width
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut atoms: Vec<Atom> = Vec::with_capacity(spec.n_atoms);
        let min2 = spec.min_separation * spec.min_separation;
        let mut attempts = 0usize;
        while atoms.len() < spec.n_atoms {
            attempts += 1;
            if attempts > 100_000 {
                return Err(Error::Domain(format!(
                    "could not place {} atoms with separation {} Å",
                    spec.n_atoms, spec.min_separation
                )));
            }
            let r = radius * rng.gen::<f64>().sqrt();
            let phi = 2.0 * PI * rng.gen::<f64>();
            let y = spec.half_height * (2.0 * rng.gen::<f64>() - 1.0);
            let p = [r * phi.cos(), y, r * phi.sin()];
            let clear = atoms.iter().all(|a| {
                let d = [
                    a.position[0] - p[0],
                    a.position[1] - p[1],
                    a.position[2] - p[2],
                ];
                d[0] * d[0] + d[1] * d[1] + d[2] * d[2] >= min2
            });
            if clear {
                atoms.push(Atom::new(p, spec.amplitude, spec.width)?);
            }
        }
        let half = 0.5 * spec.thickness;
        for a in atoms.iter_mut() {
            a.position[2] -= half;
        }
        Self::new(atoms, -spec.thickness)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn z0(&self) -> f64 {
        self.z0
    }

    pub fn thickness(&self) -> f64 {
        -self.z0
    }

    /// Slab mid-plane, on which the rotation axis lies.
    pub fn center(&self) -> f64 {
        0.5 * self.z0
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Same slab, a subset of the atoms.
    pub fn with_atoms(&self, atoms: Vec<Atom>) -> Result<Self> {
        Self::new(atoms, self.z0)
    }

    /// Atoms with `z` measured from the slab mid-plane.
    pub fn relative_atoms(&self) -> Vec<Atom> {
        let c = self.center();
        self.atoms
            .iter()
            .map(|a| {
                let mut b = *a;
                b.position[2] -= c;
                b
            })
            .collect()
    }

    /// Rotate by `theta` about the `y` axis through the slab mid-plane
    /// (right-handed: `x' = x cosθ + z sinθ`, `z' = -x sinθ + z cosθ`, with `z`
    /// relative to the mid-plane). The slab grows symmetrically if the rotated
    /// atoms need more room; the rotation centre stays on the new mid-plane.
    pub fn rotate_y(&self, theta: f64) -> Phantom {
        if theta == 0.0 {
            return self.clone();
        }
        let (s, c) = theta.sin_cos();
        let center = self.center();
        let rotated: Vec<Atom> = self
            .atoms
            .iter()
            .map(|a| {
                let x = a.position[0];
                let w = a.position[2] - center;
                let mut b = *a;
                b.position[0] = x * c + w * s;
                b.position[2] = -x * s + w * c;
                b
            })
            .collect();
        let half = rotated
            .iter()
            .map(|a| a.position[2].abs() + SLAB_MARGIN * a.width)
            .fold(0.5 * self.thickness(), f64::max);
        let atoms = rotated
            .into_iter()
            .map(|mut a| {
                a.position[2] -= half;
                a
            })
            .collect();
        Phantom { atoms, z0: -2.0 * half }
    }

    /// Total integrated potential `Σ V0 (2πσ²)^{3/2}`.
    pub fn integrated(&self) -> f64 {
        self.atoms.iter().map(Atom::integrated).sum()
    }

    /// Exact 3D Fourier transform `(F₃V)(q)`, kernel `exp(-i2π q·r)`, in the
    /// phantom's absolute coordinates.
    pub fn analytic_ft3(&self, q: [f64; 3]) -> Complex64 {
        ft3_of(&self.atoms, q)
    }

    /// [`Self::analytic_ft3`] with `z` measured from the slab mid-plane. This is
    /// the frame of reconstructed volumes.
    pub fn analytic_ft3_centered(&self, q: [f64; 3]) -> Complex64 {
        ft3_of(&self.relative_atoms(), q)
    }

    /// Sample `V(r)` on the grid. Voxels outside the slab are zero.
    pub fn potential_on_grid(&self, grid: &Grid3) -> Result<Volume3<f64>> {
        let plane = grid.plane();
        let (hx, hy) = plane.half_extent();
        let z_lo = grid.center() - grid.half_depth();
        let z_hi = grid.center() + grid.half_depth();
        let tol = 1e-9 * grid.dz();
        if self.z0 < z_lo - tol || 0.0 > z_hi + tol {
            return Err(Error::Precondition(format!(
                "slab [{}, 0] does not fit in grid depth [{z_lo}, {z_hi}]",
                self.z0
            )));
        }
        for (index, a) in self.atoms.iter().enumerate() {
            let [x, y, z] = a.position;
            if x.abs() > hx || y.abs() > hy || z < z_lo || z > z_hi {
                return Err(Error::AtomOutsideGrid { index, x, y, z });
            }
        }
        let mut vol = Volume3::zeros(*grid);
        for a in &self.atoms {
            let xs = axis_window(a.position[0], a, plane.nx(), |i| plane.x(i));
            let ys = axis_window(a.position[1], a, plane.ny(), |i| plane.y(i));
            let zs = axis_window(a.position[2], a, grid.nz(), |i| grid.z(i));
            for &(iz, gz) in &zs {
                let z = grid.z(iz);
                if z < self.z0 || z > 0.0 {
                    continue;
                }
                for &(iy, gy) in &ys {
                    let gzy = a.amplitude * gz * gy;
                    for &(ix, gx) in &xs {
                        *vol.get_mut(ix, iy, iz) += gzy * gx;
                    }
                }
            }
        }
        Ok(vol)
    }

    /// Straight-line integral `∫V dz` of the phantom rotated by `theta`
    /// (V·Å), sampled on `grid`.
    pub fn line_projection(&self, grid: &Grid2, theta: f64) -> Field2<f64> {
        let rotated = self.rotate_y(theta);
        let mut out = Field2::zeros(*grid);
        for a in rotated.atoms() {
            stamp_gaussian(&mut out, a, a.projected_peak());
        }
        out
    }
}

fn ft3_of(atoms: &[Atom], q: [f64; 3]) -> Complex64 {
    let q2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2];
    atoms
        .iter()
        .map(|a| {
            let s2 = a.width * a.width;
            let mag = a.integrated() * (-2.0 * PI * PI * s2 * q2).exp();
            let arg = -2.0 * PI * (q[0] * a.position[0] + q[1] * a.position[1] + q[2] * a.position[2]);
            Complex64::from_polar(mag, arg)
        })
        .sum()
}

/// Indices within the cutoff of `center` along one axis and the 1D Gaussian
/// factor at each.
fn axis_window(
    center: f64,
    atom: &Atom,
    n: usize,
    coord: impl Fn(usize) -> f64,
) -> Vec<(usize, f64)> {
    let reach = atom.cutoff();
    let inv = 1.0 / (2.0 * atom.width * atom.width);
    (0..n)
        .filter_map(|i| {
            let d = coord(i) - center;
            (d.abs() <= reach).then(|| (i, (-d * d * inv).exp()))
        })
        .collect()
}

/// Add `peak · exp(-ρ²/(2σ²))` centred on the atom's transverse position.
pub(crate) fn stamp_gaussian(field: &mut Field2<f64>, atom: &Atom, peak: f64) {
    let g = *field.grid();
    let xs = axis_window(atom.position[0], atom, g.nx(), |i| g.x(i));
    let ys = axis_window(atom.position[1], atom, g.ny(), |i| g.y(i));
    for &(iy, gy) in &ys {
        let row = peak * gy;
        for &(ix, gx) in &xs {
            *field.get_mut(ix, iy) += row * gx;
        }
    }
}

/// Parse the plain-text atom list: one `x y z V0 sigma` record per line,
/// whitespace separated, `#` starts a comment.
pub fn parse_atom_list(text: &str) -> Result<Vec<Atom>> {
    let mut atoms = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::Format(format!(
                "line {}: expected `x y z V0 sigma`, got {} fields",
                lineno + 1,
                fields.len()
            )));
        }
        let mut v = [0.0; 5];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|_| {
                Error::Format(format!("line {}: cannot parse `{f}` as a number", lineno + 1))
            })?;
        }
        atoms.push(Atom::new([v[0], v[1], v[2]], v[3], v[4])?);
    }
    Ok(atoms)
}

pub fn format_atom_list(atoms: &[Atom]) -> String {
    let mut out = String::from("# x y z V0 sigma (Å, Å, Å, V, Å)\n");
    for a in atoms {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            a.position[0], a.position[1], a.position[2], a.amplitude, a.width
        ));
    }
    out
}

/// Per-element surrogate parameters `(V0, σ)` used when reading
/// `element x y z` coordinate files.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeciesTable {
    entries: BTreeMap<String, (f64, f64)>,
}

impl Default for SpeciesTable {
    /// Desk-scale guesses, not fitted scattering factors.
    fn default() -> Self {
        let entries = [
            ("H", 15.0, 0.6),
            ("C", 50.0, 0.8),
            ("N", 55.0, 0.8),
            ("O", 60.0, 0.8),
            ("P", 85.0, 0.9),
            ("S", 90.0, 0.9),
        ]
        .into_iter()
        .map(|(el, v, s)| (el.to_string(), (v, s)))
        .collect();
        Self { entries }
    }
}

impl SpeciesTable {
    /// Parse `element V0 sigma` lines; entries override the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Format(format!(
                    "line {}: expected `element V0 sigma`",
                    lineno + 1
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Format(format!("line {}: bad number `{s}`", lineno + 1)))
            };
            table
                .entries
                .insert(fields[0].to_string(), (parse(fields[1])?, parse(fields[2])?));
        }
        Ok(table)
    }

    pub fn get(&self, element: &str) -> Option<(f64, f64)> {
        self.entries.get(element).copied()
    }

    /// Convert an `element x y z` coordinate file into atoms.
    pub fn atoms_from_coordinates(&self, text: &str) -> Result<Vec<Atom>> {
        let mut atoms = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::Format(format!(
                    "line {}: expected `element x y z`",
                    lineno + 1
                )));
            }
            let (v0, sigma) = self.get(fields[0]).ok_or_else(|| {
                Error::Format(format!("line {}: unknown element `{}`", lineno + 1, fields[0]))
            })?;
            let mut p = [0.0; 3];
            for (slot, f) in p.iter_mut().zip(&fields[1..]) {
                *slot = f.parse().map_err(|_| {
                    Error::Format(format!("line {}: bad coordinate `{f}`", lineno + 1))
                })?;
            }
            atoms.push(Atom::new(p, v0, sigma)?);
        }
        Ok(atoms)
    }
}

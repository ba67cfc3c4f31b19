//! Diffraction tomography from defocused contrast pairs.
//!
//! Two images of the same object rotated by `π` determine the 3D transform
//! of the potential on the Ewald paraboloid `(q⊥, -(λ/2)q⊥²)` of the first
//! view. Gathering those sheets over all orientations fills reciprocal space,
//! which is then inverted to the potential.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::born_forward::{is_nyquist, ContrastImage, ProjectionSet};
use crate::error::{Error, Result};
use crate::numerics::{fft2_forward, fft3_inverse, Beam, Field2, Grid2, Grid3, Volume3};

/// Tikhonov regulariser for the `sin(2πλz q²)` division.
pub const DEFAULT_EPS: f64 = 0.1;

/// Samples beyond this fraction of the Nyquist frequency are discarded.
pub const BAND_FRACTION: f64 = 0.9;

/// Angle pairs processed per parallel batch; bounds the memory held in
/// unspread samples.
const BATCH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtOptions {
    pub eps: f64,
    /// Reciprocal-grid refinement factor (images are zero-padded by it).
    pub oversampling: usize,
    pub band_fraction: f64,
    /// Minimum fraction of the band-limited ball that must receive samples.
    pub min_coverage: f64,
}

impl Default for DtOptions {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            oversampling: 2,
            band_fraction: BAND_FRACTION,
            min_coverage: 0.5,
        }
    }
}

/// `(F₃V)` at one reciprocal point in the object frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParaboloidSample {
    pub q: [f64; 3],
    pub value: Complex64,
    /// Confidence `s² + eps²`; the accumulator averages with these weights.
    pub weight: f64,
}

/// Forward relation behind the inversion: the contrast spectra `(F₂K)(q⊥)`
/// and `(F₂K_π)(q⊥⁻)` produced by `plus = (F₃V)(q⊥, +λq²/2)` and
/// `minus = (F₃V)(q⊥, -λq²/2)`.
pub fn contrast_from_paraboloids(
    plus: Complex64,
    minus: Complex64,
    q2: f64,
    z: f64,
    beam: &Beam,
) -> (Complex64, Complex64) {
    let chi = PI * beam.wavelength() * z * q2;
    let c = Complex64::new(0.0, beam.interaction());
    let e = Complex64::from_polar(1.0, chi);
    let k = c * (e * plus - e.conj() * minus);
    let k_pi = c * (e * minus - e.conj() * plus);
    (k, k_pi)
}

/// Unregularised numerator and `s = sin(2πλz q²)` of the paraboloid solve.
fn solve_parts(k_spec: Complex64, kpi_mirrored: Complex64, q2: f64, z: f64, beam: &Beam) -> (Complex64, f64) {
    let lambda = beam.wavelength();
    let chi = PI * lambda * z * q2;
    let e = Complex64::from_polar(1.0, chi);
    let raw = -(lambda * beam.e_volts() / (2.0 * PI)) * (e.conj() * k_spec + e * kpi_mirrored);
    (raw, (2.0 * chi).sin())
}

/// `(F₃V)(q⊥, -(λ/2)q⊥²)` from the contrast spectra of a view and its
/// `π`-rotated partner. `kpi_mirrored` must already be evaluated at
/// `q⊥⁻ = (-q_x, q_y)`.
pub fn solve_paraboloid_sample(
    k_spec: Complex64,
    kpi_mirrored: Complex64,
    q_perp: [f64; 2],
    z: f64,
    beam: &Beam,
    eps: f64,
) -> Result<Complex64> {
    if z == 0.0 {
        return Err(Error::Domain(
            "in-focus contrast of a phase object vanishes; defocus must be nonzero".into(),
        ));
    }
    let q2 = q_perp[0] * q_perp[0] + q_perp[1] * q_perp[1];
    let (raw, s) = solve_parts(k_spec, kpi_mirrored, q2, z, beam);
    if s == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    Ok(raw * (s / (s * s + eps * eps)))
}

/// Beam-frame paraboloid point `(q⊥, -(λ/2)q⊥²)` rotated by `-θ` about `q_y`
/// into the object frame.
pub fn paraboloid_point(q_perp: [f64; 2], wavelength: f64, theta: f64) -> [f64; 3] {
    let qz = -0.5 * wavelength * (q_perp[0] * q_perp[0] + q_perp[1] * q_perp[1]);
    let (s, c) = theta.sin_cos();
    [q_perp[0] * c - qz * s, q_perp[1], q_perp[0] * s + qz * c]
}

/// Zero-pad a centred field by an integer factor, keeping the centre pixel.
pub(crate) fn pad_centered(f: &Field2<f64>, factor: usize) -> Result<Field2<f64>> {
    if factor == 1 {
        return Ok(f.clone());
    }
    let g = f.grid();
    let big = g.resized(g.nx() * factor, g.ny() * factor)?;
    let (ox, oy) = (big.nx() / 2 - g.nx() / 2, big.ny() / 2 - g.ny() / 2);
    let mut out = Field2::zeros(big);
    for iy in 0..g.ny() {
        for ix in 0..g.nx() {
            *out.get_mut(ix + ox, iy + oy) = *f.get(ix, iy);
        }
    }
    Ok(out)
}

fn check_pair(k: &ContrastImage, k_pi: &ContrastImage) -> Result<()> {
    if !k.grid().same_sampling(k_pi.grid()) {
        return Err(Error::GridMismatch("paired images have different grids".into()));
    }
    if k.defocus != k_pi.defocus {
        return Err(Error::Precondition(format!(
            "paired images have defocus {} and {}",
            k.defocus, k_pi.defocus
        )));
    }
    let d = (k_pi.theta - k.theta - PI).rem_euclid(2.0 * PI);
    if d.min(2.0 * PI - d) > 1e-9 {
        return Err(Error::Precondition(format!(
            "angles {} and {} are not π apart",
            k.theta, k_pi.theta
        )));
    }
    if k.defocus == 0.0 {
        return Err(Error::Domain("defocus must be nonzero".into()));
    }
    Ok(())
}

/// All paraboloid samples from one pair, on the spectral grid of the images
/// zero-padded by `oversampling`. Samples beyond `q_limit` (Å⁻¹) and the
/// unpaired Nyquist bins are skipped.
pub fn pair_samples(
    k: &ContrastImage,
    k_pi: &ContrastImage,
    beam: &Beam,
    eps: f64,
    oversampling: usize,
    q_limit: f64,
) -> Result<Vec<ParaboloidSample>> {
    check_pair(k, k_pi)?;
    let a = fft2_forward(&pad_centered(&k.field, oversampling)?.to_complex());
    let b = fft2_forward(&pad_centered(&k_pi.field, oversampling)?.to_complex());
    let g = *a.grid();
    let lambda = beam.wavelength();
    let limit2 = q_limit * q_limit;
    let mut out = Vec::with_capacity(g.len());
    for ky in 0..g.ny() {
        for kx in 0..g.nx() {
            if is_nyquist(&g, kx, ky) {
                continue;
            }
            let q = [g.qx(kx), g.qy(ky)];
            let q2 = g.q2(kx, ky);
            let point = paraboloid_point(q, lambda, k.theta);
            if point.iter().map(|c| c * c).sum::<f64>() > limit2 {
                continue;
            }
            let (raw, s) = solve_parts(*a.get(kx, ky), *b.get(g.mirror_x(kx), ky), q2, k.defocus, beam);
            let weight = s * s + eps * eps;
            out.push(ParaboloidSample {
                q: point,
                value: raw * (s / weight),
                weight,
            });
        }
    }
    Ok(out)
}

/// Weighted reciprocal-space accumulator on an oversampled grid.
#[derive(Clone, Debug)]
pub struct ParaboloidAccumulator {
    target: Grid3,
    fine: Grid3,
    num: Vec<Complex64>,
    den: Vec<f64>,
    opts: DtOptions,
}

/// Volume recovered from an accumulator, with diagnostics.
#[derive(Clone, Debug)]
pub struct DtVolume {
    pub volume: Volume3<f64>,
    /// RMS of the discarded imaginary part over RMS of the real part.
    pub imag_residual: f64,
    /// Fraction of the band-limited ball that received samples.
    pub coverage: f64,
    /// Per-voxel sample flags on the oversampled reciprocal grid.
    pub mask: Volume3<u8>,
}

impl ParaboloidAccumulator {
    pub fn new(target: Grid3, opts: DtOptions) -> Result<Self> {
        if opts.oversampling == 0 {
            return Err(Error::Domain("oversampling must be at least 1".into()));
        }
        if !(opts.eps >= 0.0) {
            return Err(Error::Domain(format!("eps must be non-negative, got {}", opts.eps)));
        }
        let os = opts.oversampling;
        let p = target.plane();
        let plane = Grid2::new(p.nx() * os, p.ny() * os, p.dx(), p.dy())?;
        let fine = Grid3::new(plane, target.nz() * os, target.dz(), target.z0())?;
        Ok(Self {
            target,
            fine,
            num: vec![Complex64::new(0.0, 0.0); fine.len()],
            den: vec![0.0; fine.len()],
            opts,
        })
    }

    pub fn target(&self) -> &Grid3 {
        &self.target
    }

    /// Band limit in Å⁻¹: the configured fraction of the smallest Nyquist
    /// frequency of the target grid.
    pub fn q_limit(&self) -> f64 {
        let p = self.target.plane();
        self.opts.band_fraction * p.q_max_x().min(p.q_max_y()).min(0.5 / self.target.dz())
    }

    /// Spread one sample with trilinear weights.
    pub fn push(&mut self, s: &ParaboloidSample) {
        let f = &self.fine;
        let p = f.plane();
        let coords = [s.q[0] / p.dqx(), s.q[1] / p.dqy(), s.q[2] / f.dqz()];
        let dims = [f.nx() as i64, f.ny() as i64, f.nz() as i64];
        let mut base = [0i64; 3];
        let mut frac = [0.0; 3];
        for k in 0..3 {
            let fl = coords[k].floor();
            base[k] = fl as i64;
            frac[k] = coords[k] - fl;
        }
        let wrap = |i: i64, n: i64| i.rem_euclid(n) as usize;
        for dz in 0..2 {
            let wz = if dz == 0 { 1.0 - frac[2] } else { frac[2] };
            if wz == 0.0 {
                continue;
            }
            let iz = wrap(base[2] + dz, dims[2]);
            for dy in 0..2 {
                let wy = if dy == 0 { 1.0 - frac[1] } else { frac[1] };
                if wy == 0.0 {
                    continue;
                }
                let iy = wrap(base[1] + dy, dims[1]);
                for dx in 0..2 {
                    let wx = if dx == 0 { 1.0 - frac[0] } else { frac[0] };
                    if wx == 0.0 {
                        continue;
                    }
                    let ix = wrap(base[0] + dx, dims[0]);
                    let w = wx * wy * wz * s.weight;
                    let i = f.index(ix, iy, iz);
                    self.num[i] += s.value * w;
                    self.den[i] += w;
                }
            }
        }
    }

    /// Solve one `θ / θ+π` pair and spread its samples.
    pub fn accumulate_angle(&mut self, k: &ContrastImage, k_pi: &ContrastImage, beam: &Beam) -> Result<()> {
        self.check_image(k)?;
        let samples = pair_samples(k, k_pi, beam, self.opts.eps, self.opts.oversampling, self.q_limit())?;
        for s in &samples {
            self.push(s);
        }
        Ok(())
    }

    fn check_image(&self, k: &ContrastImage) -> Result<()> {
        if !k.grid().same_sampling(self.target.plane()) {
            return Err(Error::GridMismatch("image grid differs from the reconstruction grid".into()));
        }
        Ok(())
    }

    /// Every view of the set paired with its `π` partner. Solving is done in
    /// parallel batches; spreading is sequential in angle order, so the
    /// result does not depend on the thread count.
    pub fn accumulate_set(&mut self, set: &ProjectionSet) -> Result<()> {
        set.validate()?;
        let partners = set.partners()?;
        if let Some(first) = set.images.first() {
            self.check_image(first)?;
        }
        let q_limit = self.q_limit();
        let opts = self.opts;
        let order: Vec<usize> = (0..set.len()).collect();
        for batch in order.chunks(BATCH) {
            let solved = batch
                .par_iter()
                .map(|&i| {
                    pair_samples(
                        &set.images[i],
                        &set.images[partners[i]],
                        &set.beam,
                        opts.eps,
                        opts.oversampling,
                        q_limit,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            for samples in &solved {
                for s in samples {
                    self.push(s);
                }
            }
        }
        Ok(())
    }

    /// Fraction of oversampled voxels inside the band-limited ball that hold
    /// at least one sample.
    pub fn coverage(&self) -> f64 {
        let f = &self.fine;
        let p = f.plane();
        let lim2 = self.q_limit().powi(2);
        let (mut inside, mut hit) = (0usize, 0usize);
        for kz in 0..f.nz() {
            let qz = f.qz(kz);
            for ky in 0..f.ny() {
                let qy = p.qy(ky);
                for kx in 0..f.nx() {
                    let qx = p.qx(kx);
                    if qx * qx + qy * qy + qz * qz <= lim2 {
                        inside += 1;
                        if self.den[f.index(kx, ky, kz)] > 0.0 {
                            hit += 1;
                        }
                    }
                }
            }
        }
        if inside == 0 {
            0.0
        } else {
            hit as f64 / inside as f64
        }
    }

    /// Normalise, inverse transform, crop to the target grid and undo the
    /// `sinc²` taper of trilinear gridding.
    pub fn invert_to_volume(&self) -> Result<DtVolume> {
        let coverage = self.coverage();
        if coverage < self.opts.min_coverage {
            return Err(Error::Coverage {
                covered: coverage,
                required: self.opts.min_coverage,
            });
        }
        let f = self.fine;
        let values: Vec<Complex64> = self
            .num
            .iter()
            .zip(&self.den)
            .map(|(n, &d)| if d > 0.0 { n / d } else { Complex64::new(0.0, 0.0) })
            .collect();
        let mask = Volume3::from_vec(f, self.den.iter().map(|&d| u8::from(d > 0.0)).collect())?;
        let spatial = fft3_inverse(&Volume3::from_vec(f, values)?);

        let t = self.target;
        let (ox, oy, oz) = (
            f.nx() / 2 - t.nx() / 2,
            f.ny() / 2 - t.ny() / 2,
            f.nz() / 2 - t.nz() / 2,
        );
        let fp = f.plane();
        let taper = |u: f64| {
            if u == 0.0 {
                1.0
            } else {
                (u.sin() / u).powi(2)
            }
        };
        let (mut re2, mut im2) = (0.0, 0.0);
        let volume = Volume3::from_fn(t, |ix, iy, iz| {
            let v = *spatial.get(ix + ox, iy + oy, iz + oz);
            let apod = taper(PI * t.plane().x(ix) * fp.dqx())
                * taper(PI * t.plane().y(iy) * fp.dqy())
                * taper(PI * t.w(iz) * f.dqz());
            let v = v / apod;
            re2 += v.re * v.re;
            im2 += v.im * v.im;
            v.re
        });
        let imag_residual = if re2 > 0.0 { (im2 / re2).sqrt() } else { 0.0 };
        Ok(DtVolume {
            volume,
            imag_residual,
            coverage,
            mask,
        })
    }
}

/// Full diffraction-tomography reconstruction on the sets' grid. Several
/// sets (e.g. different defocus distances of the same object) are merged by
/// confidence-weighted averaging.
pub fn dt_reconstruct(sets: &[&ProjectionSet], opts: &DtOptions) -> Result<DtVolume> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Precondition("no projection sets supplied".into()))?;
    let mut acc = ParaboloidAccumulator::new(first.grid, *opts)?;
    for set in sets {
        if !set.grid.plane().same_sampling(first.grid.plane()) {
            return Err(Error::GridMismatch("projection sets use different grids".into()));
        }
        acc.accumulate_set(set)?;
    }
    acc.invert_to_volume()
}

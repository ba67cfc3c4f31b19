//! Transport-of-intensity reconstruction: symmetrise each view with its
//! `π`-rotated partner, retrieve the phase by inverting the transverse
//! Laplacian, and back-project the resulting line integrals.
//!
//! The filtered back-projection kernel here is shared with the CT baseline so
//! that every method differs only in how it prepares projections.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::born_forward::{check_uniform_angles, ContrastImage, ProjectionSet};
use crate::error::{Error, Result};
use crate::numerics::{fft_axis, inverse_laplacian_2d, Beam, Direction, Field2, Grid3, Volume3};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Filter {
    /// Pure ramp.
    #[default]
    RamLak,
    /// Ramp with a Hann roll-off reaching zero at Nyquist.
    Hann,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FbpOptions {
    pub filter: Filter,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TieOptions {
    /// Regulariser of the inverse Laplacian (Å⁻²). `None` selects
    /// `1e-6 · 4π² q_max²` for the image grid.
    pub alpha: Option<f64>,
    /// Fraction by which images are zero-padded before the inversion.
    pub pad_fraction: f64,
    pub fbp: FbpOptions,
}

impl Default for TieOptions {
    fn default() -> Self {
        Self {
            alpha: None,
            pad_fraction: 0.25,
            fbp: FbpOptions::default(),
        }
    }
}

/// `K̃_θ = [K_θ(x, y) + K_{θ+π}(-x, y)] / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetrizedContrast {
    pub field: Field2<f64>,
    pub theta: f64,
    pub defocus: f64,
}

pub fn symmetrize(k: &ContrastImage, k_pi: &ContrastImage) -> Result<SymmetrizedContrast> {
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
    let mirrored = k_pi.field.mirror_x();
    let mut field = k.field.clone();
    for (a, b) in field.data_mut().iter_mut().zip(mirrored.data()) {
        *a = 0.5 * (*a + b);
    }
    Ok(SymmetrizedContrast {
        field,
        theta: k.theta,
        defocus: k.defocus,
    })
}

/// Smallest even size at least `n (1 + fraction)`.
fn padded_size(n: usize, fraction: f64) -> usize {
    let target = (n as f64 * (1.0 + fraction)).ceil() as usize;
    target + target % 2
}

/// Phase `φ_θ = (2π/(λz)) ∇⊥⁻² K̃_θ` (rad).
pub fn tie_phase(ks: &SymmetrizedContrast, beam: &Beam, opts: &TieOptions) -> Result<Field2<f64>> {
    if ks.defocus == 0.0 {
        return Err(Error::Domain("transport-of-intensity retrieval needs nonzero defocus".into()));
    }
    let g = *ks.field.grid();
    let alpha = opts
        .alpha
        .unwrap_or_else(|| 1e-6 * 4.0 * PI * PI * g.q_max_x().max(g.q_max_y()).powi(2));
    let (px, py) = (padded_size(g.nx(), opts.pad_fraction), padded_size(g.ny(), opts.pad_fraction));
    let big = g.resized(px, py)?;
    let (ox, oy) = (px / 2 - g.nx() / 2, py / 2 - g.ny() / 2);
    let mut padded = Field2::zeros(big);
    for iy in 0..g.ny() {
        for ix in 0..g.nx() {
            *padded.get_mut(ix + ox, iy + oy) = *ks.field.get(ix, iy);
        }
    }
    let inv = inverse_laplacian_2d(&padded, alpha)?;
    let scale = 2.0 * PI / (beam.wavelength() * ks.defocus);
    Ok(Field2::from_fn(g, |ix, iy| scale * inv.get(ix + ox, iy + oy)))
}

/// Ramp filter applied along `x` to every row of a projection. The
/// spatial-domain Ram-Lak kernel is used so the filter has the correct
/// zero-frequency response on a finite grid.
pub(crate) fn ramp_filter(p: &Field2<f64>, filter: Filter) -> Field2<f64> {
    let g = *p.grid();
    let n = g.nx();
    let np = 2 * n;
    let d = g.dx();
    // kernel in wrap-around order, pre-scaled by the pixel width
    let mut kernel: Vec<Complex64> = (0..np)
        .map(|i| {
            let k = if i <= np / 2 { i as i64 } else { i as i64 - np as i64 };
            let v = if k == 0 {
                1.0 / (4.0 * d * d)
            } else if k % 2 != 0 {
                -1.0 / (PI * PI * (k * k) as f64 * d * d)
            } else {
                0.0
            };
            Complex64::new(v * d, 0.0)
        })
        .collect();
    fft_axis(&mut kernel, &[np], 0, Direction::Forward);
    if filter == Filter::Hann {
        for (i, h) in kernel.iter_mut().enumerate() {
            let k = if i <= np / 2 { i as f64 } else { i as f64 - np as f64 };
            *h *= 0.5 * (1.0 + (PI * k / (np as f64 / 2.0)).cos());
        }
    }
    let mut rows = vec![Complex64::new(0.0, 0.0); np * g.ny()];
    for iy in 0..g.ny() {
        for ix in 0..n {
            rows[iy * np + ix] = Complex64::new(*p.get(ix, iy), 0.0);
        }
    }
    let shape = [g.ny(), np];
    fft_axis(&mut rows, &shape, 1, Direction::Forward);
    for row in rows.chunks_exact_mut(np) {
        for (v, h) in row.iter_mut().zip(&kernel) {
            *v *= h / np as f64;
        }
    }
    fft_axis(&mut rows, &shape, 1, Direction::Inverse);
    Field2::from_fn(g, |ix, iy| rows[iy * np + ix].re)
}

/// Filtered back-projection of line integrals `∫V dz` (V·Å) taken at
/// uniformly spaced angles covering a half or full turn. Each `y` row of the
/// volume is an independent 2D reconstruction.
pub fn fbp_reconstruct(
    sinograms: &[Field2<f64>],
    angles: &[f64],
    grid: &Grid3,
    opts: &FbpOptions,
) -> Result<Volume3<f64>> {
    if sinograms.len() != angles.len() {
        return Err(Error::Precondition(format!(
            "{} projections for {} angles",
            sinograms.len(),
            angles.len()
        )));
    }
    if sinograms.is_empty() {
        return Err(Error::Precondition("no projections".into()));
    }
    check_uniform_angles(angles)?;
    let n = angles.len();
    let span = if n > 1 {
        (angles[1] - angles[0]) * n as f64
    } else {
        0.0
    };
    let full = (span - 2.0 * PI).abs() < 1e-6;
    let half = (span - PI).abs() < 1e-6;
    if !(full || half) {
        return Err(Error::Precondition(format!(
            "angles span {span:.6} rad; back-projection needs a uniform half or full turn"
        )));
    }
    let plane = *grid.plane();
    for s in sinograms {
        if !s.grid().same_sampling(&plane) {
            return Err(Error::GridMismatch("projection grid differs from the volume grid".into()));
        }
    }
    let filtered: Vec<Field2<f64>> = sinograms
        .par_iter()
        .map(|s| ramp_filter(s, opts.filter))
        .collect();
    let weight = PI / n as f64;
    let trig: Vec<(f64, f64)> = angles.iter().map(|a| a.sin_cos()).collect();
    let (nx, nz) = (plane.nx(), grid.nz());
    let centre = (nx / 2) as f64;
    let inv_dx = 1.0 / plane.dx();

    let rows: Vec<Vec<f64>> = (0..plane.ny())
        .into_par_iter()
        .map(|iy| {
            let mut slab = vec![0.0; nx * nz];
            for (q, &(s, c)) in filtered.iter().zip(&trig) {
                let row = &q.data()[iy * nx..(iy + 1) * nx];
                for iz in 0..nz {
                    let base = grid.w(iz) * s;
                    let out = &mut slab[iz * nx..(iz + 1) * nx];
                    for (ix, v) in out.iter_mut().enumerate() {
                        let t = (plane.x(ix) * c + base) * inv_dx + centre;
                        let i0 = t.floor();
                        let f = t - i0;
                        let i0 = i0 as isize;
                        if i0 < 0 || i0 as usize + 1 >= nx {
                            continue;
                        }
                        let i0 = i0 as usize;
                        *v += row[i0] * (1.0 - f) + row[i0 + 1] * f;
                    }
                }
            }
            slab
        })
        .collect();

    let mut vol = Volume3::zeros(*grid);
    for (iy, slab) in rows.iter().enumerate() {
        for iz in 0..nz {
            for ix in 0..nx {
                *vol.get_mut(ix, iy, iz) = weight * slab[iz * nx + ix];
            }
        }
    }
    Ok(vol)
}

/// Symmetrise, retrieve and convert every view to line integrals
/// `(λE/π) φ_θ`, in angle order.
pub fn tie_line_integrals(ps: &ProjectionSet, opts: &TieOptions) -> Result<Vec<Field2<f64>>> {
    ps.validate()?;
    let partners = ps.partners()?;
    let to_potential = 1.0 / ps.beam.interaction();
    (0..ps.len())
        .into_par_iter()
        .map(|i| {
            let ks = symmetrize(&ps.images[i], &ps.images[partners[i]])?;
            Ok(tie_phase(&ks, &ps.beam, opts)?.scaled(to_potential))
        })
        .collect()
}

/// Symmetrise, retrieve the phase and back-project.
pub fn tie_dt_pipeline(ps: &ProjectionSet, opts: &TieOptions) -> Result<Volume3<f64>> {
    let lines = tie_line_integrals(ps, opts)?;
    fbp_reconstruct(&lines, &ps.angles(), &ps.grid, &opts.fbp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::born_forward::{uniform_angles, ForwardModel, SimulationOptions};
    use crate::numerics::{laplacian_2d, Grid2};
    use crate::phantom::{Atom, Phantom};

    fn beam() -> Beam {
        Beam::new(200e3).unwrap()
    }

    fn image(field: Field2<f64>, theta: f64, z: f64) -> ContrastImage {
        ContrastImage {
            field,
            defocus: z,
            theta,
            model: ForwardModel::Projection,
        }
    }

    fn bump(g: Grid2, x0: f64, y0: f64) -> Field2<f64> {
        Field2::from_fn(g, |ix, iy| {
            let r2 = (g.x(ix) - x0).powi(2) + (g.y(iy) - y0).powi(2);
            (-r2 / 2.0).exp()
        })
    }

    #[test]
    fn symmetrize_mirror_pairs() {
        let g = Grid2::square(32, 0.5).unwrap();
        let k = bump(g, 2.0, 1.0);
        let kpi = k.mirror_x();
        let s = symmetrize(&image(k.clone(), 0.3, 45.0), &image(kpi.clone(), 0.3 + PI, 45.0)).unwrap();
        assert_eq!(s.field, k);
        let neg = kpi.scaled(-1.0);
        let z = symmetrize(&image(k.clone(), 0.3, 45.0), &image(neg, 0.3 + PI, 45.0)).unwrap();
        assert!(z.field.data().iter().all(|&v| v == 0.0));
        // symmetric input stays put
        let again = symmetrize(&image(s.field.clone(), 0.3, 45.0), &image(s.field.mirror_x(), 0.3 + PI, 45.0)).unwrap();
        assert_eq!(again.field, s.field);
        assert!(symmetrize(&image(k.clone(), 0.3, 45.0), &image(k.clone(), 0.4 + PI, 45.0)).is_err());
        assert!(symmetrize(&image(k.clone(), 0.3, 45.0), &image(k, 0.3 + PI, 40.0)).is_err());
    }

    #[test]
    fn in_focus_projection_pair_cancels() {
        // at the mid-plane a pure phase object has K_π(q⁻) = -K(q), modelled
        // here by the first-order contrast of opposite defocus
        let g = Grid3::cube(64, 0.5, -20.0).unwrap();
        let b = beam();
        let p = Phantom::new(
            vec![
                Atom::new([2.0, 1.0, -6.0], 50.0, 0.8).unwrap(),
                Atom::new([-3.0, 0.0, -14.0], 50.0, 0.8).unwrap(),
            ],
            -20.0,
        )
        .unwrap();
        let k = crate::born_forward::born_contrast(&p, &g, &b, 0.4, 0.0).unwrap();
        let kpi = crate::born_forward::born_contrast(&p, &g, &b, 0.4 + PI, 0.0).unwrap();
        let s = symmetrize(&k, &kpi).unwrap();
        let scale = k.field.max_abs();
        assert!(scale > 1e-4);
        assert!(s.field.max_abs() < 1e-12 * scale.max(1.0));
    }

    #[test]
    fn tie_inverts_the_forward_transport_equation() {
        let g = Grid2::square(64, 0.5).unwrap();
        let b = beam();
        let z = 20.0;
        // zero-mean smooth phase built from periodic modes
        let phi = Field2::from_fn(g, |ix, iy| {
            let (x, y) = (g.x(ix) / 32.0, g.y(iy) / 32.0);
            0.1 * (2.0 * PI * 2.0 * x).cos() + 0.05 * (2.0 * PI * (3.0 * x + y)).sin()
        });
        let k = laplacian_2d(&phi).scaled(b.wavelength() * z / (2.0 * PI));
        let ks = SymmetrizedContrast {
            field: k,
            theta: 0.0,
            defocus: z,
        };
        let opts = TieOptions {
            alpha: Some(0.0),
            pad_fraction: 0.0,
            ..Default::default()
        };
        let got = tie_phase(&ks, &b, &opts).unwrap();
        let rms = (got
            .data()
            .iter()
            .zip(phi.data())
            .map(|(a, c)| (a - c).powi(2))
            .sum::<f64>()
            / g.len() as f64)
            .sqrt();
        assert!(rms < 1e-6, "{rms}");
        assert!(tie_phase(&SymmetrizedContrast { defocus: 0.0, ..ks.clone() }, &b, &opts).is_err());
        let zero = SymmetrizedContrast {
            field: Field2::zeros(g),
            ..ks
        };
        assert!(tie_phase(&zero, &b, &TieOptions::default())
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn padded_inversion_recovers_a_compact_phase_up_to_a_constant() {
        let g = Grid2::square(64, 0.5).unwrap();
        let b = beam();
        let z = 20.0;
        let phi = bump(g, 1.0, -2.0).scaled(0.2);
        let k = laplacian_2d(&phi).scaled(b.wavelength() * z / (2.0 * PI));
        let got = tie_phase(
            &SymmetrizedContrast {
                field: k,
                theta: 0.0,
                defocus: z,
            },
            &b,
            &TieOptions {
                alpha: Some(0.0),
                ..Default::default()
            },
        )
        .unwrap();
        let offset = got.get(0, 0) - phi.get(0, 0);
        let worst = got
            .data()
            .iter()
            .zip(phi.data())
            .map(|(a, c)| (a - c - offset).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-6 * 0.2, "{worst}");
    }

    fn gaussian_column(grid: &Grid3, s: f64) -> Volume3<f64> {
        Volume3::from_fn(*grid, |ix, _, iz| {
            let r2 = grid.plane().x(ix).powi(2) + grid.w(iz).powi(2);
            (-r2 / (2.0 * s * s)).exp()
        })
    }

    #[test]
    fn fbp_recovers_an_analytic_radon_pair() {
        let plane = Grid2::new(128, 2, 0.5, 0.5).unwrap();
        let grid = Grid3::new(plane, 128, 0.5, -64.0).unwrap();
        let s = 4.0;
        let angles = uniform_angles(1800);
        let proj = Field2::from_fn(plane, |ix, _| {
            s * (2.0 * PI).sqrt() * (-plane.x(ix).powi(2) / (2.0 * s * s)).exp()
        });
        let sinos = vec![proj; angles.len()];
        let rec = fbp_reconstruct(&sinos, &angles, &grid, &FbpOptions::default()).unwrap();
        let truth = gaussian_column(&grid, s);
        let (mut err, mut count) = (0.0, 0);
        for iz in 0..grid.nz() {
            for ix in 0..plane.nx() {
                let r = plane.x(ix).hypot(grid.w(iz));
                if r < 16.0 {
                    err += (rec.get(ix, 0, iz) - truth.get(ix, 0, iz)).powi(2);
                    count += 1;
                }
            }
        }
        let rms = (err / count as f64).sqrt();
        assert!(rms < 0.01, "{rms}");
    }

    #[test]
    fn fbp_places_an_off_centre_atom() {
        let grid = Grid3::new(Grid2::new(64, 16, 0.5, 0.5).unwrap(), 64, 0.5, -32.0).unwrap();
        let p = Phantom::new(vec![Atom::new([5.0, 1.0, -16.0 - 7.0], 50.0, 0.8).unwrap()], -32.0).unwrap();
        let angles = uniform_angles(360);
        let sinos: Vec<_> = angles.iter().map(|&a| p.line_projection(grid.plane(), a)).collect();
        let rec = fbp_reconstruct(&sinos, &angles, &grid, &FbpOptions::default()).unwrap();
        let (mut best, mut at) = (f64::MIN, (0, 0, 0));
        for iz in 0..grid.nz() {
            for iy in 0..grid.ny() {
                for ix in 0..grid.nx() {
                    if *rec.get(ix, iy, iz) > best {
                        best = *rec.get(ix, iy, iz);
                        at = (ix, iy, iz);
                    }
                }
            }
        }
        let pos = [grid.plane().x(at.0), grid.plane().y(at.1), grid.w(at.2)];
        let d = ((pos[0] - 5.0).powi(2) + (pos[1] - 1.0).powi(2) + (pos[2] + 7.0).powi(2)).sqrt();
        assert!(d <= 0.5 * 3f64.sqrt() + 1e-9, "{pos:?}");
    }

    #[test]
    fn fbp_input_validation() {
        let grid = Grid3::cube(16, 0.5, -8.0).unwrap();
        let z = vec![Field2::zeros(*grid.plane()); 8];
        let angles = uniform_angles(8);
        let rec = fbp_reconstruct(&z, &angles, &grid, &FbpOptions::default()).unwrap();
        assert!(rec.data().iter().all(|&v| v == 0.0));
        assert!(fbp_reconstruct(&z[..7], &angles, &grid, &FbpOptions::default()).is_err());
        let uneven = [0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert!(fbp_reconstruct(&z, &uneven, &grid, &FbpOptions::default()).is_err());
        let short: Vec<f64> = (0..8).map(|k| k as f64 * 0.1).collect();
        assert!(fbp_reconstruct(&z, &short, &grid, &FbpOptions::default()).is_err());
    }

    #[test]
    fn hann_filter_lowers_the_peak() {
        let g = Grid2::new(64, 2, 0.5, 0.5).unwrap();
        let p = Field2::from_fn(g, |ix, _| (-(g.x(ix).powi(2)) / 8.0).exp());
        let a = ramp_filter(&p, Filter::RamLak);
        let h = ramp_filter(&p, Filter::Hann);
        assert!(h.max_abs() < a.max_abs());
        let c = g.nx() / 2;
        assert!(*a.get(c, 0) > 0.0 && *h.get(c, 0) > 0.0);
        assert!(*a.get(c + 12, 0) < 0.0);
    }

    #[test]
    fn tie_pipeline_on_born_data() {
        let grid = Grid3::new(Grid2::new(64, 32, 0.5, 0.5).unwrap(), 64, 0.5, -32.0).unwrap();
        let p = Phantom::new(
            vec![
                Atom::new([4.0, 2.0, -10.0], 50.0, 1.0).unwrap(),
                Atom::new([-5.0, -3.0, -22.0], 50.0, 1.0).unwrap(),
                Atom::new([0.0, 5.0, -16.0], 50.0, 1.0).unwrap(),
            ],
            -32.0,
        )
        .unwrap();
        let b = beam();
        let opts = SimulationOptions {
            model: ForwardModel::Born,
            ..Default::default()
        };
        let set = ProjectionSet::simulate(&p, &grid, &b, &uniform_angles(360), 45.0, &opts).unwrap();
        let rec = tie_dt_pipeline(&set, &TieOptions::default()).unwrap();
        let c = p.center();
        for a in p.atoms() {
            let ix = (a.position[0] / 0.5) as isize + 32;
            let iy = (a.position[1] / 0.5) as isize + 16;
            let iz = ((a.position[2] - c) / 0.5) as isize + 32;
            assert!(*rec.get(ix as usize, iy as usize, iz as usize) > 0.0);
        }
        let empty = ProjectionSet::simulate(
            &Phantom::empty(-32.0).unwrap(),
            &grid,
            &b,
            &uniform_angles(8),
            45.0,
            &opts,
        )
        .unwrap();
        let zero = tie_dt_pipeline(&empty, &TieOptions::default()).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
        let odd = ProjectionSet {
            images: set.images[..3].to_vec(),
            ..set.clone()
        };
        assert!(tie_dt_pipeline(&odd, &TieOptions::default()).is_err());
    }
}

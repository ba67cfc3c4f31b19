use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use once_cell::sync::Lazy;
use rustfft::{Fft, FftPlanner};

use super::{Field2, Volume3};

static PLANNER: Lazy<Mutex<FftPlanner<f64>>> = Lazy::new(|| Mutex::new(FftPlanner::new()));

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Direction {
    Forward,
    Inverse,
}

fn plan(n: usize, dir: Direction) -> Arc<dyn Fft<f64>> {
    let mut planner = PLANNER.lock().unwrap_or_else(|e| e.into_inner());
    match dir {
        Direction::Forward => planner.plan_fft_forward(n),
        Direction::Inverse => planner.plan_fft_inverse(n),
    }
}

/// Unnormalised in-place DFT along one axis of a row-major array whose
/// `shape` lists dimensions slowest first.
pub(crate) fn fft_axis(data: &mut [Complex64], shape: &[usize], axis: usize, dir: Direction) {
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    debug_assert_eq!(data.len(), n * inner * outer);
    let fft = plan(n, dir);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    if inner == 1 {
        fft.process_with_scratch(data, &mut scratch);
        return;
    }
    // gather every line of one outer block at once so the transform runs
    // over contiguous memory
    let mut lines = vec![Complex64::default(); n * inner];
    for block in data.chunks_exact_mut(n * inner) {
        for k in 0..n {
            for j in 0..inner {
                lines[j * n + k] = block[k * inner + j];
            }
        }
        fft.process_with_scratch(&mut lines, &mut scratch);
        for k in 0..n {
            for j in 0..inner {
                block[k * inner + j] = lines[j * n + k];
            }
        }
    }
}

pub(crate) fn raw_fft2(field: &Field2<Complex64>, dir: Direction) -> Vec<Complex64> {
    let g = field.grid();
    let mut data = field.data().to_vec();
    let shape = [g.ny(), g.nx()];
    fft_axis(&mut data, &shape, 1, dir);
    fft_axis(&mut data, &shape, 0, dir);
    data
}

#[inline]
fn parity(k: usize) -> f64 {
    if k % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Continuous 2D Fourier transform of a centred field, sampled on the
/// wrap-around frequency grid.
pub fn fft2_forward(f: &Field2<Complex64>) -> Field2<Complex64> {
    let g = *f.grid();
    let mut data = raw_fft2(f, Direction::Forward);
    let area = g.dx() * g.dy();
    for ky in 0..g.ny() {
        for kx in 0..g.nx() {
            data[g.index(kx, ky)] *= area * parity(kx + ky);
        }
    }
    Field2 { grid: g, data }
}

pub fn fft2_forward_real(f: &Field2<f64>) -> Field2<Complex64> {
    fft2_forward(&f.to_complex())
}

/// Inverse of [`fft2_forward`].
pub fn fft2_inverse(spec: &Field2<Complex64>) -> Field2<Complex64> {
    let g = *spec.grid();
    let mut tmp = spec.clone();
    for ky in 0..g.ny() {
        for kx in 0..g.nx() {
            tmp.data[g.index(kx, ky)] *= parity(kx + ky);
        }
    }
    let scale = g.dqx() * g.dqy();
    let data = raw_fft2(&tmp, Direction::Inverse)
        .into_iter()
        .map(|v| v * scale)
        .collect();
    Field2 { grid: g, data }
}

/// Real part of [`fft2_inverse`].
pub fn fft2_inverse_real(spec: &Field2<Complex64>) -> Field2<f64> {
    fft2_inverse(spec).real()
}

fn raw_fft3(data: &mut [Complex64], shape: [usize; 3], dir: Direction) {
    for axis in (0..3).rev() {
        fft_axis(data, &shape, axis, dir);
    }
}

/// Continuous 3D Fourier transform of a volume, with the spatial origin at the
/// volume centre (the slab mid-plane on the axis).
pub fn fft3_forward(v: &Volume3<Complex64>) -> Volume3<Complex64> {
    let g = *v.grid();
    let mut data = v.data().to_vec();
    raw_fft3(&mut data, [g.nz(), g.ny(), g.nx()], Direction::Forward);
    let dv = g.voxel_volume();
    for kz in 0..g.nz() {
        for ky in 0..g.ny() {
            for kx in 0..g.nx() {
                data[g.index(kx, ky, kz)] *= dv * parity(kx + ky + kz);
            }
        }
    }
    Volume3 { grid: g, data }
}

pub fn fft3_forward_real(v: &Volume3<f64>) -> Volume3<Complex64> {
    fft3_forward(&v.to_complex())
}

/// Inverse of [`fft3_forward`].
pub fn fft3_inverse(spec: &Volume3<Complex64>) -> Volume3<Complex64> {
    let g = *spec.grid();
    let mut data = spec.data().to_vec();
    for kz in 0..g.nz() {
        for ky in 0..g.ny() {
            for kx in 0..g.nx() {
                data[g.index(kx, ky, kz)] *= parity(kx + ky + kz);
            }
        }
    }
    raw_fft3(&mut data, [g.nz(), g.ny(), g.nx()], Direction::Inverse);
    let scale = 1.0 / (g.len() as f64 * g.voxel_volume());
    for v in data.iter_mut() {
        *v *= scale;
    }
    Volume3 { grid: g, data }
}

pub fn fft3_inverse_real(spec: &Volume3<Complex64>) -> Volume3<f64> {
    fft3_inverse(spec).map(|v| v.re)
}

#[cfg(test)]
mod tests {
    use super::super::{Grid2, Grid3};
    use super::*;
    use std::f64::consts::PI;

    fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn constant_field_is_dc_only() {
        let g = Grid2::new(16, 8, 0.5, 0.25).unwrap();
        let f = Field2::from_fn(g, |_, _| Complex64::new(1.0, 0.0));
        let s = fft2_forward(&f);
        let dc = 0.5 * 0.25 * 128.0;
        assert!((s.get(0, 0) - dc).norm() < 1e-12);
        for (i, v) in s.data().iter().enumerate().skip(1) {
            assert!(v.norm() < 1e-12, "bin {i}");
        }
    }

    fn gaussian_spectrum_error(a: f64, aliases: i64) -> f64 {
        let g = Grid2::square(64, 0.25).unwrap();
        let f = Field2::from_fn(g, |ix, iy| {
            let r2 = g.x(ix).powi(2) + g.y(iy).powi(2);
            Complex64::new((-PI * r2 / (a * a)).exp(), 0.0)
        });
        let s = fft2_forward(&f);
        // the DFT samples the periodised spectrum; sum the nearest images
        let period = 1.0 / g.dx();
        let pair = |q: f64| -> f64 {
            (-aliases..=aliases)
                .map(|m| (-PI * a * a * (q + m as f64 * period).powi(2)).exp())
                .sum()
        };
        let mut worst: f64 = 0.0;
        for ky in 0..g.ny() {
            for kx in 0..g.nx() {
                let expect = a * a * pair(g.qx(kx)) * pair(g.qy(ky));
                worst = worst.max((s.get(kx, ky) - expect).norm() / (a * a));
            }
        }
        worst
    }

    #[test]
    fn gaussian_pair_2d() {
        // at a = 4dx the Nyquist-edge spectrum is exp(-4π) ≈ 3.5e-6, which
        // aliases; against the periodised pair the transform is exact
        assert!(gaussian_spectrum_error(1.0, 2) < 1e-12);
        assert!(gaussian_spectrum_error(1.0, 0) < 1e-5);
        assert!(gaussian_spectrum_error(1.25, 0) < 1e-6);
    }

    #[test]
    fn round_trip_2d() {
        let g = Grid2::new(16, 32, 0.3, 0.7).unwrap();
        let f = Field2::from_fn(g, |ix, iy| {
            Complex64::new((ix as f64 * 0.37).sin() + iy as f64, (iy as f64).cos())
        });
        let back = fft2_inverse(&fft2_forward(&f));
        assert!(rel_err(back.data(), f.data()) < 1e-12);
    }

    #[test]
    fn constant_volume_is_dc_only() {
        let g = Grid3::new(Grid2::new(8, 4, 0.5, 0.5).unwrap(), 6, 2.0, -10.0).unwrap();
        let v = Volume3::from_fn(g, |_, _, _| Complex64::new(1.0, 0.0));
        let s = fft3_forward(&v);
        assert!((s.get(0, 0, 0) - g.voxel_volume() * g.len() as f64).norm() < 1e-12);
        let rest: f64 = s.data().iter().skip(1).map(|v| v.norm()).sum();
        assert!(rest < 1e-10);
    }

    #[test]
    fn gaussian_pair_3d_and_round_trip() {
        let g = Grid3::new(Grid2::new(32, 32, 0.5, 0.6).unwrap(), 24, 0.55, -12.0).unwrap();
        let (ax, ay, az) = (2.5, 3.0, 2.75);
        let v = Volume3::from_fn(g, |ix, iy, iz| {
            let x = g.plane().x(ix);
            let y = g.plane().y(iy);
            let w = g.w(iz);
            Complex64::new(
                (-PI * (x * x / (ax * ax) + y * y / (ay * ay) + w * w / (az * az))).exp(),
                0.0,
            )
        });
        let s = fft3_forward(&v);
        let peak = ax * ay * az;
        let mut worst: f64 = 0.0;
        for kz in 0..g.nz() {
            for ky in 0..g.ny() {
                for kx in 0..g.nx() {
                    let (qx, qy, qz) = (g.plane().qx(kx), g.plane().qy(ky), g.qz(kz));
                    let expect = peak
                        * (-PI * (ax * ax * qx * qx + ay * ay * qy * qy + az * az * qz * qz))
                            .exp();
                    worst = worst.max((s.get(kx, ky, kz) - expect).norm() / peak);
                }
            }
        }
        assert!(worst < 1e-6, "{worst}");
        let back = fft3_inverse(&s);
        assert!(rel_err(back.data(), v.data()) < 1e-12);
    }
}

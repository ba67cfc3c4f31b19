use std::f64::consts::PI;

use emtomo::born_forward::{multislice_contrast, uniform_angles, ForwardModel, ProjectionSet, SimulationOptions};
use emtomo::ct_baseline::{ct_from_contrast, ct_true_phase, ctf_correct_naive};
use emtomo::dt_recon::{dt_reconstruct, DtOptions};
use emtomo::metrics::volume_error;
use emtomo::propagation::{multislice, MultisliceOptions};
use emtomo::tie_recon::{fbp_reconstruct, tie_dt_pipeline, FbpOptions, TieOptions};
use emtomo::{Atom, Beam, Grid2, Grid3, Phantom, Volume3};

fn beam() -> Beam {
    Beam::new(200e3).unwrap()
}

fn born() -> SimulationOptions {
    SimulationOptions {
        model: ForwardModel::Born,
        ..Default::default()
    }
}

fn five_atoms() -> Phantom {
    Phantom::enclosing(vec![
        Atom::new([4.0, 2.0, -5.0], 50.0, 1.0).unwrap(),
        Atom::new([-6.0, -3.0, 3.0], 50.0, 1.0).unwrap(),
        Atom::new([0.0, 5.0, 8.0], 50.0, 1.0).unwrap(),
        Atom::new([7.0, -5.0, 6.0], 50.0, 1.0).unwrap(),
        Atom::new([-3.0, 0.0, -9.0], 50.0, 1.0).unwrap(),
    ])
    .unwrap()
}

fn sites(p: &Phantom) -> Vec<[f64; 3]> {
    p.relative_atoms().iter().map(|a| a.position).collect()
}

#[test]
fn tie_on_born_data_at_the_reference_geometry() {
    let p = five_atoms();
    let grid = Grid3::new(Grid2::square(64, 0.5).unwrap(), 64, 0.5, p.z0()).unwrap();
    let angles = uniform_angles(1800);
    let set = ProjectionSet::simulate(&p, &grid, &beam(), &angles, 45.0, &born()).unwrap();
    let truth = p.potential_on_grid(&grid).unwrap();
    let tie = tie_dt_pipeline(&set, &TieOptions::default()).unwrap();
    let r = volume_error(&tie, &truth, &sites(&p)).unwrap();
    assert!(r.all_peaks_positive(), "{:?}", r.peaks);
    assert!(r.correlation >= 0.95, "{}", r.correlation);
    // defocused contrast read as line integrals does worse
    let ct = ct_from_contrast(&set, &FbpOptions::default()).unwrap();
    let rc = volume_error(&ct, &truth, &sites(&p)).unwrap();
    assert!(rc.rms > r.rms, "{} vs {}", rc.rms, r.rms);
}

#[test]
fn tie_and_paraboloid_paths_agree_at_small_defocus() {
    let p = five_atoms();
    let grid = Grid3::new(Grid2::square(64, 0.5).unwrap(), 64, 0.5, p.z0()).unwrap();
    let angles = uniform_angles(360);
    let mut diffs = Vec::new();
    for z in [10.0, 80.0] {
        let set = ProjectionSet::simulate(&p, &grid, &beam(), &angles, z, &born()).unwrap();
        let tie = tie_dt_pipeline(&set, &TieOptions::default()).unwrap();
        // noise-free data: a negligible regulariser keeps the comparison about
        // the approximation rather than about damping near sin 2χ = 0
        let opts = DtOptions {
            eps: 1e-6,
            ..Default::default()
        };
        let dt = dt_reconstruct(&[&set], &opts).unwrap().volume;
        let r = volume_error(&tie, &dt, &[]).unwrap();
        diffs.push(r.rms_relative);
    }
    assert!(diffs[0] < 0.05, "{diffs:?}");
    assert!(diffs[0] < diffs[1], "{diffs:?}");
}

#[test]
fn fbp_is_covariant_under_rotation_of_the_angles() {
    let p = Phantom::enclosing(vec![Atom::new([5.0, 0.0, 2.0], 50.0, 1.0).unwrap()]).unwrap();
    let grid = Grid3::new(Grid2::new(64, 8, 0.5, 0.5).unwrap(), 64, 0.5, p.z0()).unwrap();
    let angles = uniform_angles(360);
    let fbp = FbpOptions::default();
    let base = ct_true_phase(&p, &grid, &angles, &fbp).unwrap();
    // shifting every view by a quarter turn rotates the object by the same
    let step = angles.len() / 4;
    let lines: Vec<_> = (0..angles.len())
        .map(|i| p.line_projection(grid.plane(), angles[(i + step) % angles.len()]))
        .collect();
    let rotated = fbp_reconstruct(&lines, &angles, &grid, &fbp).unwrap();
    // object point (x, w) appears at (x cos Δ + w sin Δ, -x sin Δ + w cos Δ) = (w, -x)
    let n = grid.nx();
    let expect = Volume3::from_fn(grid, |ix, iy, iz| {
        let (sx, sz) = (n - iz, ix);
        if sx < n && sz < n {
            *base.get(sx, iy, sz)
        } else {
            0.0
        }
    });
    let r = volume_error(&rotated, &expect, &[]).unwrap();
    assert!(r.correlation > 0.999, "{}", r.correlation);
}

#[test]
fn refocusing_on_one_atom_nulls_its_contrast() {
    let p = Phantom::enclosing(vec![Atom::new([0.0, 0.0, 10.0], 50.0, 0.8).unwrap()]).unwrap();
    let grid = Grid3::new(Grid2::square(64, 0.5).unwrap(), 64, 0.5, p.z0()).unwrap();
    let w = multislice(&p, &grid, &beam(), 0.0, 45.0, &MultisliceOptions::default()).unwrap();
    let defocused = w.contrast().max_abs();
    let focused = ctf_correct_naive(&w, 10.0).max_abs();
    assert!(focused < 0.01 * defocused, "{focused} vs {defocused}");
    // centre refocusing leaves this off-centre atom defocused
    assert!(ctf_correct_naive(&w, 0.0).max_abs() > 0.1 * defocused);
}

#[test]
fn two_separated_atoms_cannot_both_be_focused() {
    let p = Phantom::enclosing(vec![
        Atom::new([-4.0, 0.0, -15.0], 50.0, 0.8).unwrap(),
        Atom::new([4.0, 0.0, 15.0], 50.0, 0.8).unwrap(),
    ])
    .unwrap();
    let grid = Grid3::new(Grid2::square(64, 0.5).unwrap(), 96, 0.5, p.z0()).unwrap();
    let w = multislice(&p, &grid, &beam(), 0.0, 45.0, &MultisliceOptions::default()).unwrap();
    for plane in [-15.0, 0.0, 15.0] {
        assert!(ctf_correct_naive(&w, plane).max_abs() > 1e-3, "plane {plane}");
    }
}

#[test]
fn multislice_opposite_views_differ_but_projection_views_mirror() {
    let p = Phantom::enclosing(vec![
        Atom::new([-4.0, 0.0, -15.0], 50.0, 0.8).unwrap(),
        Atom::new([4.0, 0.0, 15.0], 50.0, 0.8).unwrap(),
    ])
    .unwrap();
    let grid = Grid3::new(Grid2::square(64, 0.5).unwrap(), 96, 0.5, p.z0()).unwrap();
    let b = beam();
    let ms = MultisliceOptions::default();
    let a = multislice_contrast(&p, &grid, &b, 0.0, 45.0, &ms).unwrap();
    let c = multislice_contrast(&p, &grid, &b, PI, 45.0, &ms).unwrap();
    let diff = a
        .field
        .data()
        .iter()
        .zip(c.field.mirror_x().data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(diff > 0.1 * a.field.max_abs());
}

#[test]
fn true_phase_ct_improves_with_more_views() {
    let p = five_atoms();
    let grid = Grid3::new(Grid2::square(64, 0.5).unwrap(), 64, 0.5, p.z0()).unwrap();
    let truth = p.potential_on_grid(&grid).unwrap();
    let err = |n: usize| {
        let v = ct_true_phase(&p, &grid, &uniform_angles(n), &FbpOptions::default()).unwrap();
        volume_error(&v, &truth, &sites(&p)).unwrap()
    };
    let (coarse, fine) = (err(32), err(360));
    assert!(fine.rms < coarse.rms);
    assert!(fine.rms_relative < 0.02, "{}", fine.rms_relative);
    assert!(fine.all_peaks_positive());
}

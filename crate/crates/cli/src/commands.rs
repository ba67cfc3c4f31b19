use std::fs;
use std::path::{Path, PathBuf};

use emtomo::born_forward::{ForwardModel, ProjectionSet};
use emtomo::ct_baseline::{ct_from_contrast, ct_true_phase, CtMode};
use emtomo::dt_recon::dt_reconstruct;
use emtomo::io::{
    read_projection_set, read_volume, write_dt_volume, write_pgm, write_pgm_raw, write_projection_set, write_report,
    write_volume, VolumeMetadata, SET_METADATA,
};
use emtomo::metrics::{image_error, volume_error};
use emtomo::numerics::{electron_wavelength, fresnel_number};
use emtomo::phantom::{format_atom_list, parse_atom_list};
use emtomo::propagation::{propagate, Wavefield};
use emtomo::tie_recon::{fbp_reconstruct, tie_dt_pipeline, FbpOptions};
use emtomo::{Field2, Grid2, Grid3, Phantom, Volume3};

use crate::config::{Method, RunConfig};
use crate::CliError;

/// Display threshold for error maps (%).
pub const ERROR_MAP_THRESHOLD: f64 = 3.0;

fn io_err(e: std::io::Error, path: &Path) -> CliError {
    CliError::Core(emtomo::Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(e, path))
}

/// Record how an output directory was produced.
fn write_provenance(out: &Path, cfg: &RunConfig, raw: Option<&str>) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| io_err(e, out))?;
    let resolved = cfg.to_toml();
    write(&out.join("config.toml"), raw.unwrap_or(&resolved))?;
    write(&out.join("resolved.toml"), &resolved)?;
    let args: Vec<String> = std::env::args().collect();
    write(
        &out.join("provenance.txt"),
        &format!(
            "program = emtomo {}\ncommand = {}\nseed = {}\n",
            env!("CARGO_PKG_VERSION"),
            args.join(" "),
            cfg.run.seed
        ),
    )
}

pub fn set_dir_name(defocus: f64) -> String {
    format!("projections_z{defocus}")
}

pub fn simulate(cfg: &RunConfig, raw: Option<&str>) -> Result<Vec<PathBuf>, CliError> {
    cfg.validate()?;
    let phantom = cfg.phantom()?;
    let grid = cfg.grid()?;
    let beam = cfg.beam()?;
    let opts = cfg.simulation_options()?;
    let angles = cfg.angles();
    let out = &cfg.run.output;
    write_provenance(out, cfg, raw)?;
    write(
        &out.join("phantom.txt"),
        &format!("# slab z0 = {}\n{}", phantom.z0(), format_atom_list(phantom.atoms())),
    )?;
    let mut dirs = Vec::new();
    for &z in &cfg.simulation.defocus {
        let set = ProjectionSet::simulate(&phantom, &grid, &beam, &angles, z, &opts)?;
        let dir = out.join(set_dir_name(z));
        write_projection_set(&dir, &set)?;
        println!(
            "simulated {} views ({}) at z = {z} Å into {}",
            set.len(),
            set.model.tag(),
            dir.display()
        );
        dirs.push(dir);
    }
    Ok(dirs)
}

fn load_truth(path: &Path, grid: &Grid3) -> Result<Phantom, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(e, path))?;
    Ok(Phantom::new(parse_atom_list(&text)?, grid.z0())?)
}

pub fn reconstruct(
    cfg: &RunConfig,
    raw: Option<&str>,
    projections: &[PathBuf],
    truth: Option<&Path>,
) -> Result<PathBuf, CliError> {
    cfg.validate()?;
    let method = cfg.method()?;
    let sets = projections
        .iter()
        .map(|p| read_projection_set(p))
        .collect::<Result<Vec<_>, _>>()?;
    let first = sets
        .first()
        .ok_or_else(|| CliError::Usage("no projection directories given".into()))?;
    let grid = first.grid;
    let truth = truth.map(|p| load_truth(p, &grid)).transpose()?;
    let out = &cfg.run.output;
    write_provenance(out, cfg, raw)?;
    let stem = out.join("volume");
    let provenance = format!("emtomo {} from {}", env!("CARGO_PKG_VERSION"), projections
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", "));
    let single = || -> Result<&ProjectionSet, CliError> {
        if sets.len() != 1 {
            return Err(CliError::Usage(format!(
                "{} needs exactly one projection set, got {}",
                cfg.reconstruction.method,
                sets.len()
            )));
        }
        Ok(first)
    };
    let (volume, tag) = match method {
        Method::Dt => {
            let refs: Vec<&ProjectionSet> = sets.iter().collect();
            let v = dt_reconstruct(&refs, &cfg.dt_options())?;
            write_dt_volume(&stem, &v, &provenance)?;
            println!("coverage {:.4}, imaginary residual {:.4e}", v.coverage, v.imag_residual);
            (v.volume, "dt")
        }
        Method::TieDt => {
            let v = tie_dt_pipeline(single()?, &cfg.tie_options()?)?;
            write_volume(&stem, &v, &VolumeMetadata::new(&grid, "tie_dt", &provenance), None)?;
            (v, "tie_dt")
        }
        Method::Ct(CtMode::IntensityAsProjection) => {
            let v = ct_from_contrast(single()?, &cfg.fbp_options()?)?;
            write_volume(&stem, &v, &VolumeMetadata::new(&grid, "ct-intensity", &provenance), None)?;
            (v, "ct-intensity")
        }
        Method::Ct(CtMode::TruePhase) => {
            let p = truth
                .as_ref()
                .ok_or_else(|| CliError::Usage("ct true-phase mode needs --truth".into()))?;
            let v = ct_true_phase(p, &grid, &single()?.angles(), &cfg.fbp_options()?)?;
            write_volume(&stem, &v, &VolumeMetadata::new(&grid, "ct-true-phase", &provenance), None)?;
            (v, "ct-true-phase")
        }
    };
    println!("wrote {tag} volume to {}", stem.with_extension("f64").display());
    if let Some(p) = &truth {
        let reference = p.potential_on_grid(&grid)?;
        let sites: Vec<[f64; 3]> = p.relative_atoms().iter().map(|a| a.position).collect();
        let report = volume_error(&volume, &reference, &sites)?;
        write_report(out, "report", &report, &[("method", tag.to_string())])?;
        println!("{tag}: {}", report.summary());
    }
    Ok(stem)
}

fn find_sets(run: &Path) -> Vec<PathBuf> {
    let mut found = Vec::new();
    if run.join(SET_METADATA).exists() {
        found.push(run.to_path_buf());
    }
    if let Ok(entries) = fs::read_dir(run) {
        let mut subdirs: Vec<PathBuf> = entries.flatten().map(|e| e.path()).filter(|p| p.is_dir()).collect();
        subdirs.sort();
        found.extend(subdirs.into_iter().filter(|d| d.join(SET_METADATA).exists()));
    }
    found
}

fn find_volumes(run: &Path) -> Vec<PathBuf> {
    let stem = run.join("volume");
    if stem.with_extension("f64").exists() && stem.with_extension("toml").exists() {
        vec![stem]
    } else {
        Vec::new()
    }
}

fn label(path: &Path) -> String {
    let parts: Vec<String> = path
        .components()
        .rev()
        .take(2)
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect();
    parts.into_iter().rev().collect::<Vec<_>>().join("_").replace(['.', ' '], "_")
}

fn symmetric_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let m = values.fold(0.0, |m: f64, v| m.max(v.abs()));
    let m = if m > 0.0 { m } else { 1.0 };
    (-m, m)
}

/// Axial `x`-`z` section through the middle of the `y` range, laid out with
/// `x` across and `z` down.
fn axial_section(v: &Volume3<f64>) -> (Vec<f64>, usize, usize) {
    let g = v.grid();
    (v.axial_slice(g.ny() / 2), g.nx(), g.nz())
}

pub fn figures(runs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut sets = Vec::new();
    let mut volumes = Vec::new();
    for run in runs {
        if !run.is_dir() {
            return Err(CliError::Usage(format!("{} is not a directory", run.display())));
        }
        for dir in find_sets(run) {
            sets.push((label(&dir), read_projection_set(&dir)?));
        }
        for stem in find_volumes(run) {
            let (v, meta) = read_volume(&stem)?;
            volumes.push((format!("{}_{}", label(run), meta.method), v));
        }
    }
    if sets.is_empty() && volumes.is_empty() {
        return Err(CliError::Usage("no projection sets or volumes found in the given runs".into()));
    }
    fs::create_dir_all(out).map_err(|e| io_err(e, out))?;
    let mut written = Vec::new();

    // opposite views: the first view against its mirrored partner
    for (name, set) in &sets {
        let partners = set.partners()?;
        let a = &set.images[0].field;
        let b = set.images[partners[0]].field.mirror_x();
        let diff = Field2::from_vec(*a.grid(), a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect())?;
        let range = symmetric_range(a.data().iter().chain(b.data()).copied());
        for (suffix, f) in [("view", a), ("opposite_mirrored", &b), ("difference", &diff)] {
            let path = out.join(format!("opposite_{name}_{suffix}.pgm"));
            write_pgm(&path, f, Some(range))?;
            written.push(path);
        }
    }

    // error maps of every other model against multislice on matching views
    for (ref_name, reference) in sets.iter().filter(|(_, s)| s.model == ForwardModel::Multislice) {
        for (name, other) in sets.iter().filter(|(_, s)| s.model != ForwardModel::Multislice) {
            if other.defocus != reference.defocus || other.angles() != reference.angles() {
                continue;
            }
            let report = image_error(&other.images[0].field, &reference.images[0].field)?;
            let map = report.thresholded_map(ERROR_MAP_THRESHOLD).expect("image report");
            let path = out.join(format!("error_{name}_vs_{ref_name}.pgm"));
            write_pgm(&path, &map, Some((0.0, report.max_pct.max(ERROR_MAP_THRESHOLD))))?;
            write_report(out, &format!("error_{name}_vs_{ref_name}"), &report, &[("model", other.model.tag().into())])?;
            written.push(path);
        }
    }

    // axial sections, singly and side by side
    if !volumes.is_empty() {
        let range = symmetric_range(volumes.iter().flat_map(|(_, v)| v.data().iter().copied()));
        let sections: Vec<_> = volumes.iter().map(|(n, v)| (n, axial_section(v))).collect();
        for (name, (data, nx, nz)) in &sections {
            let path = out.join(format!("section_{name}.pgm"));
            write_pgm_raw(&path, data, *nx, *nz, Some(range))?;
            written.push(path);
        }
        let (_, (_, nx0, nz0)) = &sections[0];
        if sections.len() > 1 && sections.iter().all(|(_, (_, nx, nz))| nx == nx0 && nz == nz0) {
            let width = nx0 * sections.len();
            let mut strip = vec![0.0; width * nz0];
            for (k, (_, (data, nx, _))) in sections.iter().enumerate() {
                for iz in 0..*nz0 {
                    for ix in 0..*nx {
                        strip[iz * width + k * nx + ix] = data[iz * nx + ix];
                    }
                }
            }
            let path = out.join("sections_side_by_side.pgm");
            write_pgm_raw(&path, &strip, width, *nz0, Some(range))?;
            written.push(path);
        }
    }
    for p in &written {
        println!("wrote {}", p.display());
    }
    Ok(written)
}

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

/// Quick numerical health checks. Returns the number of failures.
pub fn selftest() -> Result<usize, CliError> {
    let mut checks = Vec::new();

    let lambda = electron_wavelength(200e3)?;
    checks.push(Check {
        name: "wavelength",
        pass: ((lambda - 0.025) / 0.025).abs() < 0.01,
        detail: format!("λ(200 kV) = {lambda:.6} Å"),
    });

    let nf = fresnel_number(1.0, 0.025, 100.0)?;
    checks.push(Check {
        name: "fresnel-number",
        pass: nf == 0.4,
        detail: format!("N_F = {nf}"),
    });

    let g = Grid2::square(64, 0.5)?;
    let beam = emtomo::Beam::new(200e3)?;
    let field = Field2::from_fn(g, |ix, iy| {
        let (x, y) = (g.x(ix), g.y(iy));
        emtomo::Complex64::from_polar(1.0 + 0.3 * (0.4 * x).sin() * (0.3 * y).cos(), 0.7 * (0.2 * x + 0.1 * y).sin())
    });
    let mut w = Wavefield::new(field, beam, 0.0);
    let before = w.mean_intensity();
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        w = propagate(&w, 37.0 * ((k as f64) * 1.7).sin());
        worst = worst.max((w.mean_intensity() - before).abs() / before);
    }
    checks.push(Check {
        name: "propagator-unitarity",
        pass: worst < 1e-10,
        detail: format!("max relative drift {worst:.2e} over 100 steps"),
    });

    let plane = Grid2::new(64, 2, 0.5, 0.5)?;
    let grid = Grid3::new(plane, 64, 0.5, -32.0)?;
    let s = 3.0;
    let angles: Vec<f64> = (0..360).map(|k| 2.0 * std::f64::consts::PI * k as f64 / 360.0).collect();
    let proj = Field2::from_fn(plane, |ix, _| {
        s * (2.0 * std::f64::consts::PI).sqrt() * (-plane.x(ix).powi(2) / (2.0 * s * s)).exp()
    });
    let rec = fbp_reconstruct(&vec![proj; angles.len()], &angles, &grid, &FbpOptions::default())?;
    let (mut err, mut n) = (0.0, 0);
    for iz in 0..grid.nz() {
        for ix in 0..plane.nx() {
            let r2 = plane.x(ix).powi(2) + grid.w(iz).powi(2);
            if r2 < 100.0 {
                err += (rec.get(ix, 0, iz) - (-r2 / (2.0 * s * s)).exp()).powi(2);
                n += 1;
            }
        }
    }
    let rms = (err / n as f64).sqrt();
    checks.push(Check {
        name: "fbp-gaussian",
        pass: rms < 0.02,
        detail: format!("interior RMS {rms:.2e} of peak"),
    });

    let mut failures = 0;
    for c in &checks {
        println!("{} {:<22} {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        failures += usize::from(!c.pass);
    }
    Ok(failures)
}

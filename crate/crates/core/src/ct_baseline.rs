//! Conventional tomography baseline: treat each view as a straight-ray
//! projection and back-project it with the same kernel as the TIE pipeline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::born_forward::{ContrastImage, ForwardModel, ProjectionSet};
use crate::error::{Error, Result};
use crate::numerics::{Beam, Field2, Grid3, Volume3};
use crate::phantom::Phantom;
use crate::propagation::{multislice, refocus, MultisliceOptions, Wavefield};
use crate::tie_recon::{fbp_reconstruct, FbpOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CtMode {
    /// Back-project `(λE/π) K` as if the contrast were a phase projection.
    IntensityAsProjection,
    /// Back-project the exact line integrals of the phantom.
    TruePhase,
}

impl CtMode {
    pub fn tag(&self) -> &'static str {
        match self {
            CtMode::IntensityAsProjection => "intensity",
            CtMode::TruePhase => "true-phase",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "intensity" => Ok(CtMode::IntensityAsProjection),
            "true-phase" => Ok(CtMode::TruePhase),
            other => Err(Error::Format(format!("unknown CT mode `{other}`"))),
        }
    }
}

/// Refocus a detected wave back to `to_plane` (normally the mid-plane) and
/// return its intensity contrast. This is the naive defocus correction: it
/// removes the propagation blur of a single plane and nothing else.
pub fn ctf_correct_naive(w: &Wavefield, to_plane: f64) -> Field2<f64> {
    refocus(w, to_plane).contrast()
}

/// Multislice views on the detector plane `z` together with the same waves
/// refocused to the mid-plane.
pub fn simulate_with_correction(
    p: &Phantom,
    grid: &Grid3,
    beam: &Beam,
    angles: &[f64],
    z: f64,
    opts: &MultisliceOptions,
) -> Result<(ProjectionSet, ProjectionSet)> {
    let pairs = angles
        .par_iter()
        .map(|&theta| {
            let w = multislice(p, grid, beam, theta, z, opts)?;
            let detected = ContrastImage {
                field: w.contrast(),
                defocus: z,
                theta,
                model: ForwardModel::Multislice,
            };
            let corrected = ContrastImage {
                field: ctf_correct_naive(&w, 0.0),
                defocus: 0.0,
                theta,
                model: ForwardModel::Multislice,
            };
            Ok((detected, corrected))
        })
        .collect::<Result<Vec<_>>>()?;
    let (detected, corrected): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok((
        ProjectionSet::new(*grid, *beam, z, ForwardModel::Multislice, detected)?,
        ProjectionSet::new(*grid, *beam, 0.0, ForwardModel::Multislice, corrected)?,
    ))
}

/// FBP of the contrast images, each scaled by `λE/π` into V·Å.
pub fn ct_from_contrast(ps: &ProjectionSet, opts: &FbpOptions) -> Result<Volume3<f64>> {
    ps.validate()?;
    let scale = 1.0 / ps.beam.interaction();
    let lines: Vec<_> = ps.images.iter().map(|im| im.field.scaled(scale)).collect();
    fbp_reconstruct(&lines, &ps.angles(), &ps.grid, opts)
}

/// FBP of the exact line integrals of `p`.
pub fn ct_true_phase(p: &Phantom, grid: &Grid3, angles: &[f64], opts: &FbpOptions) -> Result<Volume3<f64>> {
    let lines: Vec<_> = angles
        .par_iter()
        .map(|&a| p.line_projection(grid.plane(), a))
        .collect();
    fbp_reconstruct(&lines, angles, grid, opts)
}

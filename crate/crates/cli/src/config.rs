//! Run configuration: a sectioned TOML file whose fields can be overridden
//! from the command line.

use std::f64::consts::PI;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use emtomo::born_forward::{ForwardModel, SimulationOptions};
use emtomo::ct_baseline::CtMode;
use emtomo::dt_recon::DtOptions;
use emtomo::phantom::{parse_atom_list, RandomPhantom};
use emtomo::tie_recon::{FbpOptions, Filter, TieOptions};
use emtomo::{Beam, Grid2, Grid3, Phantom};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub phantom: PhantomSection,
    pub grid: GridSection,
    pub beam: BeamSection,
    pub simulation: SimulationSection,
    pub reconstruction: ReconSection,
    pub run: RunSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSection {
    /// Atom list (`x y z V0 sigma`, absolute `z` inside `[-thickness, 0]`).
    /// A random phantom is drawn when absent.
    pub path: Option<PathBuf>,
    pub thickness: f64,
    pub n_atoms: usize,
    pub half_height: f64,
    pub amplitude: f64,
    pub width: f64,
    pub min_separation: f64,
}

impl Default for PhantomSection {
    fn default() -> Self {
        let r = RandomPhantom::default();
        Self {
            path: None,
            thickness: r.thickness,
            n_atoms: r.n_atoms,
            half_height: r.half_height,
            amplitude: r.amplitude,
            width: r.width,
            min_separation: r.min_separation,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            nx: 128,
            ny: 128,
            nz: 128,
            dx: 0.75,
            dy: 0.75,
            dz: 0.75,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamSection {
    /// Accelerating voltage (V).
    pub e_volts: f64,
}

impl Default for BeamSection {
    fn default() -> Self {
        Self { e_volts: 200e3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    /// Detector planes downstream of the mid-plane (Å).
    pub defocus: Vec<f64>,
    /// Number of views. Must be even so every view has its opposite.
    pub angles: usize,
    /// Rotation span in degrees. Only a full turn supplies opposite views.
    pub range_deg: f64,
    pub model: String,
    pub slices: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            defocus: vec![45.0],
            angles: 720,
            range_deg: 360.0,
            model: ForwardModel::Multislice.tag().into(),
            slices: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconSection {
    /// `tie_dt`, `dt` or `ct`.
    pub method: String,
    /// `intensity` or `true-phase`, used by `ct`.
    pub ct_mode: String,
    pub eps: f64,
    pub alpha: Option<f64>,
    /// `ram-lak` or `hann`.
    pub filter: String,
    pub oversampling: usize,
    pub min_coverage: f64,
}

impl Default for ReconSection {
    fn default() -> Self {
        let d = DtOptions::default();
        Self {
            method: "tie_dt".into(),
            ct_mode: CtMode::IntensityAsProjection.tag().into(),
            eps: d.eps,
            alpha: None,
            filter: "ram-lak".into(),
            oversampling: d.oversampling,
            min_coverage: d.min_coverage,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub output: PathBuf,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            output: PathBuf::from("run"),
            threads: 0,
            seed: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    TieDt,
    Dt,
    Ct(CtMode),
}

/// Command-line overrides, one flag per config field.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    #[arg(long)]
    pub phantom: Option<PathBuf>,
    #[arg(long)]
    pub thickness: Option<f64>,
    #[arg(long)]
    pub n_atoms: Option<usize>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    #[arg(long)]
    pub nz: Option<usize>,
    #[arg(long)]
    pub dx: Option<f64>,
    #[arg(long)]
    pub dy: Option<f64>,
    #[arg(long)]
    pub dz: Option<f64>,
    /// Accelerating voltage (V).
    #[arg(long)]
    pub energy: Option<f64>,
    /// Comma-separated defocus list (Å).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub defocus: Option<Vec<f64>>,
    #[arg(long)]
    pub angles: Option<usize>,
    #[arg(long)]
    pub range_deg: Option<f64>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub ct_mode: Option<String>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub filter: Option<String>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

macro_rules! set {
    ($target:expr, $value:expr) => {
        if let Some(v) = $value.clone() {
            $target = v;
        }
    };
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if o.phantom.is_some() {
            self.phantom.path = o.phantom.clone();
        }
        set!(self.phantom.thickness, o.thickness);
        set!(self.phantom.n_atoms, o.n_atoms);
        set!(self.grid.nx, o.nx);
        set!(self.grid.ny, o.ny);
        set!(self.grid.nz, o.nz);
        set!(self.grid.dx, o.dx);
        set!(self.grid.dy, o.dy);
        set!(self.grid.dz, o.dz);
        set!(self.beam.e_volts, o.energy);
        set!(self.simulation.defocus, o.defocus);
        set!(self.simulation.angles, o.angles);
        set!(self.simulation.range_deg, o.range_deg);
        set!(self.simulation.model, o.model);
        set!(self.reconstruction.method, o.method);
        set!(self.reconstruction.ct_mode, o.ct_mode);
        set!(self.reconstruction.eps, o.eps);
        if o.alpha.is_some() {
            self.reconstruction.alpha = o.alpha;
        }
        set!(self.reconstruction.filter, o.filter);
        set!(self.run.output, o.output);
        set!(self.run.threads, o.threads);
        set!(self.run.seed, o.seed);
    }

    /// Check every field against the library preconditions before any work.
    pub fn validate(&self) -> Result<(), CliError> {
        self.grid()?;
        self.beam()?;
        self.model()?;
        self.method()?;
        CtMode::from_tag(&self.reconstruction.ct_mode)?;
        self.filter()?;
        let s = &self.simulation;
        if s.angles < 2 || s.angles % 2 != 0 {
            return Err(CliError::Config(format!(
                "angle count must be even and at least 2 so every view has its opposite, got {}",
                s.angles
            )));
        }
        if (s.range_deg - 360.0).abs() > 1e-9 {
            return Err(CliError::Config(format!(
                "angle range must be 360 degrees to include opposite views, got {}",
                s.range_deg
            )));
        }
        if s.defocus.is_empty() || s.defocus.iter().any(|z| !z.is_finite()) {
            return Err(CliError::Config("defocus list must hold finite values".into()));
        }
        let r = &self.reconstruction;
        if !(r.eps > 0.0) {
            return Err(CliError::Config(format!("eps must be positive, got {}", r.eps)));
        }
        if let Some(a) = r.alpha {
            if !(a >= 0.0) {
                return Err(CliError::Config(format!("alpha must be non-negative, got {a}")));
            }
        }
        if r.oversampling == 0 || !(0.0..=1.0).contains(&r.min_coverage) {
            return Err(CliError::Config("oversampling must be positive and min_coverage in [0, 1]".into()));
        }
        if !(self.phantom.thickness > 0.0) {
            return Err(CliError::Config("phantom thickness must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid3, CliError> {
        let g = &self.grid;
        let plane = Grid2::new(g.nx, g.ny, g.dx, g.dy)?;
        Ok(Grid3::new(plane, g.nz, g.dz, -self.phantom.thickness)?)
    }

    pub fn beam(&self) -> Result<Beam, CliError> {
        Ok(Beam::new(self.beam.e_volts)?)
    }

    pub fn model(&self) -> Result<ForwardModel, CliError> {
        Ok(ForwardModel::from_tag(&self.simulation.model)?)
    }

    pub fn method(&self) -> Result<Method, CliError> {
        match self.reconstruction.method.as_str() {
            "tie_dt" => Ok(Method::TieDt),
            "dt" => Ok(Method::Dt),
            "ct" => Ok(Method::Ct(CtMode::from_tag(&self.reconstruction.ct_mode)?)),
            other => Err(CliError::Config(format!(
                "unknown method `{other}` (expected tie_dt, dt or ct)"
            ))),
        }
    }

    pub fn filter(&self) -> Result<Filter, CliError> {
        match self.reconstruction.filter.as_str() {
            "ram-lak" => Ok(Filter::RamLak),
            "hann" => Ok(Filter::Hann),
            other => Err(CliError::Config(format!("unknown filter `{other}` (expected ram-lak or hann)"))),
        }
    }

    pub fn angles(&self) -> Vec<f64> {
        let n = self.simulation.angles;
        (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect()
    }

    pub fn simulation_options(&self) -> Result<SimulationOptions, CliError> {
        Ok(SimulationOptions {
            model: self.model()?,
            slices: self.simulation.slices,
            ..Default::default()
        })
    }

    pub fn dt_options(&self) -> DtOptions {
        let r = &self.reconstruction;
        DtOptions {
            eps: r.eps,
            oversampling: r.oversampling,
            min_coverage: r.min_coverage,
            ..Default::default()
        }
    }

    pub fn fbp_options(&self) -> Result<FbpOptions, CliError> {
        Ok(FbpOptions { filter: self.filter()? })
    }

    pub fn tie_options(&self) -> Result<TieOptions, CliError> {
        Ok(TieOptions {
            alpha: self.reconstruction.alpha,
            fbp: self.fbp_options()?,
            ..Default::default()
        })
    }

    /// The configured atom list, or a random phantom drawn with `run.seed`.
    pub fn phantom(&self) -> Result<Phantom, CliError> {
        let p = &self.phantom;
        match &p.path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Core(emtomo::Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))))?;
                Ok(Phantom::new(parse_atom_list(&text)?, -p.thickness)?)
            }
            None => {
                let spec = RandomPhantom {
                    n_atoms: p.n_atoms,
                    thickness: p.thickness,
                    half_height: p.half_height,
                    amplitude: p.amplitude,
                    width: p.width,
                    min_separation: p.min_separation,
                };
                Ok(Phantom::random(&spec, self.run.seed)?)
            }
        }
    }
}

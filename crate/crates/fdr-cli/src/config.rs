//! Run configuration: a TOML file with one section per pipeline stage,
//! overridable by command-line flags. The resolved configuration is
//! embedded verbatim in the run manifest so any run can be reproduced
//! from its output directory alone.

use fdr_core::grid::{BinningOptions, GridSpec, PointCloud};
use fdr_core::inference::SubsamplingConfig;
use fdr_core::simulate::{GridRule, McProtocol, Scenario, ThetaRule};
use fdr_core::solver::SolverConfig;
use fdr_core::sure::SureConfig;
use fdr_core::{FdrError, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Input CSV with columns x1..xd,y; unused by `simulate`.
    pub input: Option<PathBuf>,
    /// Output directory, created if missing.
    pub out: PathBuf,
    /// Base seed added to every per-section seed.
    pub seed: u64,
    /// Worker threads; 0 keeps the library default.
    pub workers: usize,
    pub grid: GridSection,
    pub binning: BinningOptions,
    pub solver: SolverConfig,
    pub sure: SureConfig,
    pub inference: InferenceSection,
    pub simulate: Option<SimulateSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// Explicit cells per axis; excludes the other two sizing rules.
    pub n_cells: Option<Vec<usize>>,
    /// One cell per this many points along each axis.
    pub points_per_cell: Option<f64>,
    /// Total cell budget as a fraction of the sample size.
    pub cell_fraction: Option<f64>,
    pub s_levels: usize,
    pub padding: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            n_cells: None,
            points_per_cell: None,
            cell_fraction: None,
            s_levels: 32,
            padding: 0.05,
        }
    }
}

impl GridSection {
    pub fn rule(&self) -> Result<GridRule> {
        let given = [
            self.n_cells.is_some(),
            self.points_per_cell.is_some(),
            self.cell_fraction.is_some(),
        ]
        .iter()
        .filter(|&&g| g)
        .count();
        if given > 1 {
            return Err(FdrError::BadConfig(
                "give at most one of n_cells, points_per_cell, cell_fraction".into(),
            ));
        }
        if let Some(cells) = &self.n_cells {
            return Ok(GridRule::Fixed(cells.clone()));
        }
        if let Some(frac) = self.cell_fraction {
            return Ok(GridRule::CellFraction(frac));
        }
        Ok(GridRule::PointsPerCell(self.points_per_cell.unwrap_or(20.0)))
    }

    pub fn build(&self, cloud: &PointCloud) -> Result<GridSpec> {
        let cells = self.rule()?.n_cells(cloud.len(), cloud.dim())?;
        fdr_core::grid::make_grid(cloud, &cells, self.s_levels, self.padding)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BandMethod {
    #[default]
    Conformal,
    Subsampling,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSection {
    pub method: BandMethod,
    pub alpha: f64,
    pub seed: u64,
    /// Subsampling only.
    pub j_reps: usize,
    pub block_sizes: Vec<usize>,
    pub quantile_pairs: Vec<(f64, f64)>,
}

impl Default for InferenceSection {
    fn default() -> Self {
        let sub = SubsamplingConfig::default();
        Self {
            method: BandMethod::Conformal,
            alpha: 0.05,
            seed: 0,
            j_reps: sub.j_reps,
            block_sizes: sub.block_sizes,
            quantile_pairs: sub.quantile_pairs,
        }
    }
}

impl InferenceSection {
    pub fn subsampling(&self, base_seed: u64) -> SubsamplingConfig {
        SubsamplingConfig {
            j_reps: self.j_reps,
            block_sizes: self.block_sizes.clone(),
            alpha: self.alpha,
            quantile_pairs: self.quantile_pairs.clone(),
            seed: base_seed.wrapping_add(self.seed),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub reps: usize,
    #[serde(default = "default_grid_rule")]
    pub grid_rule: GridRule,
    #[serde(default = "default_theta")]
    pub theta: ThetaRule,
    pub scenario: Vec<Scenario>,
}

fn default_grid_rule() -> GridRule {
    GridRule::PointsPerCell(20.0)
}

fn default_theta() -> ThetaRule {
    ThetaRule::Fixed {
        lambda: SolverConfig::default().lambda,
        nu: SolverConfig::default().nu,
    }
}

impl RunConfig {
    /// Resolved SURE settings with the base seed folded in.
    pub fn sure_config(&self) -> SureConfig {
        SureConfig {
            seed: self.seed.wrapping_add(self.sure.seed),
            ..self.sure.clone()
        }
    }

    /// Monte Carlo protocol assembled from the simulate section and the
    /// shared binning and solver sections, with scenario seeds offset by
    /// the base seed.
    pub fn protocol(&self) -> Result<McProtocol> {
        let section = self
            .simulate
            .as_ref()
            .ok_or_else(|| FdrError::BadConfig("missing [simulate] section".into()))?;
        if section.scenario.is_empty() {
            return Err(FdrError::BadConfig("no [[simulate.scenario]] given".into()));
        }
        let theta = match &section.theta {
            ThetaRule::Fixed { lambda, nu } => ThetaRule::Fixed {
                lambda: *lambda,
                nu: *nu,
            },
            ThetaRule::Sure(sure) => ThetaRule::Sure(SureConfig {
                seed: self.seed.wrapping_add(sure.seed),
                ..sure.clone()
            }),
        };
        Ok(McProtocol {
            scenarios: section
                .scenario
                .iter()
                .map(|s| Scenario {
                    seed: self.seed.wrapping_add(s.seed),
                    ..*s
                })
                .collect(),
            reps: section.reps,
            grid_rule: section.grid_rule.clone(),
            s_levels: self.grid.s_levels,
            padding: self.grid.padding,
            binning: self.binning,
            solver: self.solver.clone(),
            theta,
        })
    }

    pub fn input_path(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| FdrError::BadConfig("missing input path".into()))
    }
}

/// Manifest written next to every run's outputs. `config_toml` holds the
/// fully resolved configuration, so pointing `--config` at a manifest
/// reproduces the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config_toml: String,
}

/// Loads either a TOML configuration or a JSON manifest produced by an
/// earlier run.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let toml_text = if path.extension().is_some_and(|e| e == "json") {
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| FdrError::BadConfig(format!("{}: {e}", path.display())))?;
        manifest.config_toml
    } else {
        text
    };
    toml::from_str(&toml_text).map_err(|e| FdrError::BadConfig(format!("{}: {e}", path.display())))
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            out: PathBuf::from("fdr-out"),
            seed: 0,
            workers: 0,
            grid: GridSection::default(),
            binning: BinningOptions::default(),
            solver: SolverConfig::default(),
            sure: SureConfig::default(),
            inference: InferenceSection::default(),
            simulate: None,
        }
    }
}

//! Run configuration. JSON with a mandatory `version` field; unknown
//! fields are rejected so archived configs stay reproducible.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use repsys::{static_repair_rate, steady_state, SpatialGrid, SystemState, TargetProfile};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub lambda: f64,
    #[serde(rename = "L")]
    pub length: f64,
    pub target: TargetSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    pub t_f: f64,
    #[serde(default)]
    pub alpha: AlphaPolicy,
    pub grid: GridSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_i_max")]
    pub i_max: usize,
    /// Open-loop run horizon and step; `dt` defaults to one cell width.
    #[serde(default)]
    pub open_loop: OpenLoopSpec,
    /// Single-stage closed-loop run parameters.
    #[serde(default)]
    pub stage: StageSpec,
    /// Cross-validation study parameters.
    #[serde(default)]
    pub compare: CompareSpec,
    /// Feedback-hazard boundedness scan parameters; when present, the
    /// control command also runs the scan.
    #[serde(default)]
    pub scan: Option<ScanSpec>,
    /// Times at which wide per-node density snapshots are written.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Directory of the config file; relative table paths resolve here.
    #[serde(skip)]
    base_dir: PathBuf,
}

fn default_i_max() -> usize {
    40
}

#[derive(Debug, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    LinearDecay,
    QuadraticDecay,
    Tabulated { table_path: PathBuf },
}

#[derive(Debug, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSpec {
    #[default]
    PointMassGood,
    UniformFailure,
    SteadyState,
    Tabulated { table_path: PathBuf, p0: f64 },
}

#[derive(Debug, Deserialize, Default)]
#[serde(tag = "policy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AlphaPolicy {
    #[default]
    Auto,
    Fixed {
        value: f64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub cells: usize,
    #[serde(default = "default_steps")]
    pub steps_per_stage: usize,
}

fn default_steps() -> usize {
    64
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_final_error")]
    pub final_error: f64,
    #[serde(default = "default_mass")]
    pub mass: f64,
    #[serde(default = "default_negativity")]
    pub negativity: f64,
    #[serde(default = "default_validation")]
    pub validation: f64,
}

fn default_final_error() -> f64 {
    1e-3
}
fn default_mass() -> f64 {
    1e-6
}
fn default_negativity() -> f64 {
    1e-12
}
fn default_validation() -> f64 {
    1e-10
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            final_error: default_final_error(),
            mass: default_mass(),
            negativity: default_negativity(),
            validation: default_validation(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenLoopSpec {
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    pub dt: Option<f64>,
}

fn default_t_end() -> f64 {
    5.0
}

impl Default for OpenLoopSpec {
    fn default() -> Self {
        Self {
            t_end: default_t_end(),
            dt: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    #[serde(default = "default_stage_index")]
    pub index: usize,
    /// Stage gain; defaults to the alpha policy's fixed value, else 1.
    pub alpha: Option<f64>,
    #[serde(default = "default_stage_duration")]
    pub duration: f64,
    pub dt: Option<f64>,
}

fn default_stage_index() -> usize {
    1
}
fn default_stage_duration() -> f64 {
    0.3
}

impl Default for StageSpec {
    fn default() -> Self {
        Self {
            index: default_stage_index(),
            alpha: None,
            duration: default_stage_duration(),
            dt: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    #[serde(default = "default_levels")]
    pub levels: Vec<usize>,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default = "default_compare_t_end")]
    pub t_end: f64,
    #[serde(default = "default_stage_duration")]
    pub stage_duration: f64,
    #[serde(default = "default_min_order")]
    pub min_order: f64,
}

fn default_levels() -> Vec<usize> {
    vec![128, 256, 512]
}
fn default_cfl() -> f64 {
    0.9
}
fn default_compare_t_end() -> f64 {
    1.0
}
fn default_min_order() -> f64 {
    0.9
}

impl Default for CompareSpec {
    fn default() -> Self {
        Self {
            levels: default_levels(),
            cfl: default_cfl(),
            t_end: default_compare_t_end(),
            stage_duration: default_stage_duration(),
            min_order: default_min_order(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSpec {
    #[serde(default = "default_l_frac")]
    pub l_frac: f64,
}

fn default_l_frac() -> f64 {
    0.9
}

impl Default for ScanSpec {
    fn default() -> Self {
        Self {
            l_frac: default_l_frac(),
        }
    }
}

fn interp_table(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let j = xs.partition_point(|&v| v <= x) - 1;
    let theta = (x - xs[j]) / (xs[j + 1] - xs[j]);
    ys[j] + theta * (ys[j + 1] - ys[j])
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| format!("cannot parse config {}: {e}", path.display()))?;
        if config.version != 1 {
            return Err(format!(
                "unsupported config version {} (expected 1)",
                config.version
            ));
        }
        if !(config.lambda > 0.0) || !(config.length > 0.0) || !(config.t_f > 0.0) {
            return Err("lambda, L, t_f must be positive".into());
        }
        config.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(config)
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn build_grid(&self) -> Result<SpatialGrid, String> {
        self.build_grid_with_cells(self.grid.cells)
    }

    pub fn build_grid_with_cells(&self, cells: usize) -> Result<SpatialGrid, String> {
        SpatialGrid::uniform(self.length, cells).map_err(|e| e.to_string())
    }

    pub fn build_target(&self) -> Result<TargetProfile, String> {
        match &self.target {
            TargetSpec::LinearDecay => {
                TargetProfile::linear(self.lambda, self.length).map_err(|e| e.to_string())
            }
            TargetSpec::QuadraticDecay => {
                TargetProfile::quadratic(self.lambda, self.length).map_err(|e| e.to_string())
            }
            TargetSpec::Tabulated { table_path } => {
                let table_path = self.resolve(table_path);
                if !table_path.exists() {
                    return Err(format!("table path {} does not exist", table_path.display()));
                }
                TargetProfile::from_csv_path(self.lambda, &table_path)
                    .map_err(|e| e.to_string())
            }
        }
    }

    pub fn target_table_path(&self) -> Option<String> {
        match &self.target {
            TargetSpec::Tabulated { table_path } => {
                Some(table_path.display().to_string())
            }
            _ => None,
        }
    }

    pub fn build_initial(
        &self,
        target: &TargetProfile,
        grid: &SpatialGrid,
    ) -> Result<SystemState, String> {
        match &self.initial {
            InitialSpec::PointMassGood => Ok(SystemState::point_mass_good(grid)),
            InitialSpec::UniformFailure => Ok(SystemState::uniform_failure(grid)),
            InitialSpec::SteadyState => {
                let plan = static_repair_rate(target).map_err(|e| e.to_string())?;
                steady_state(&plan, self.lambda, grid).map_err(|e| e.to_string())
            }
            InitialSpec::Tabulated { table_path, p0 } => {
                let table_path = self.resolve(table_path);
                if !table_path.exists() {
                    return Err(format!("table path {} does not exist", table_path.display()));
                }
                let (xs, ys) =
                    repsys::read_table_csv(&table_path).map_err(|e| e.to_string())?;
                if xs.len() < 2 || !xs.windows(2).all(|w| w[1] > w[0]) {
                    return Err("initial-state table must be strictly ascending".into());
                }
                let p1 = grid
                    .nodes()
                    .iter()
                    .map(|&x| interp_table(&xs, &ys, x))
                    .collect();
                Ok(SystemState {
                    p0: *p0,
                    p1,
                    t: 0.0,
                })
            }
        }
    }
}

//! Experiment harness: runs method comparisons over a grid of measurement
//! rates, SNRs, view counts, and seeds, and writes plot-ready reports.
//!
//! Each cell (method, rate, snr, views, seed) builds its instance from a
//! seed derived from the whole cell key, so extending any list leaves every
//! other cell's randomness untouched. Runs are deterministic; with one
//! worker the emitted CSV is byte-identical across repeats when timing
//! capture is disabled.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_gradient, baseline_ignore_p, BaselineConfig};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::metrics::nmse;
use crate::ot::{IpotParams, SolverKind};
use crate::recovery::{default_prototype_init, recover, RecoveryConfig};
use crate::seeds::derive_seed;
use crate::signal::{Signal, SupportSet};
use crate::synthdata::{build_instance, Instance, Letter, PerturbSpec, SceneSpec};

/// Header of the raw record file.
pub const RECORDS_HEADER: &str = "method,rate,snr_db,views,seed,nmse,wall_time_s,iters";
/// Header of the aggregate summary file.
pub const SUMMARY_HEADER: &str = "method,rate,snr_db,views,n,mean_nmse,std_nmse";

/// The methods a sweep can compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Transport-regularized alternating recovery.
    Proposed,
    /// Relaxed-permutation alternating gradient descent.
    Gradient,
    /// Least squares that ignores the scrambles.
    IgnoreP,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Proposed, Method::Gradient, Method::IgnoreP];

    /// Stable name used in reports and seed derivation.
    pub fn name(&self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Gradient => "gradient",
            Method::IgnoreP => "ignore_p",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Method::Proposed),
            "gradient" => Ok(Method::Gradient),
            "ignore_p" => Ok(Method::IgnoreP),
            other => Err(Error::config(format!(
                "unknown method {other:?}; expected proposed, gradient, or ignore_p"
            ))),
        }
    }
}

/// Serde adapter for SNR lists; elements are numbers or `"noiseless"`.
mod snr_list_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Item(#[serde(with = "crate::metrics::snr_serde")] f64);

    pub fn serialize<S: Serializer>(
        values: &[f64],
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let items: Vec<Item> = values.iter().map(|&v| Item(v)).collect();
        items.serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Vec<f64>, D::Error> {
        let items = Vec::<Item>::deserialize(deserializer)?;
        Ok(items.into_iter().map(|Item(v)| v).collect())
    }
}

/// Scalar tuning of the proposed method, independent of any particular
/// scene. Materialized into a [`RecoveryConfig`] once the scene support is
/// known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryTuning {
    pub beta: f64,
    pub lambda: f64,
    pub step_size: f64,
    pub step_decay: f64,
    pub inner_tmax: usize,
    pub outer_tmax: usize,
    pub solver: SolverKind,
    pub ipot: IpotParams,
    pub project_support: bool,
}

impl Default for RecoveryTuning {
    fn default() -> Self {
        // Single source of truth: mirror the recovery defaults.
        let c = RecoveryConfig::new(
            SupportSet::new(vec![0]).expect("nonempty"),
            1,
        );
        Self {
            beta: c.beta,
            lambda: c.lambda,
            step_size: c.step_size,
            step_decay: c.step_decay,
            inner_tmax: c.inner_tmax,
            outer_tmax: c.outer_tmax,
            solver: c.solver,
            ipot: c.ipot,
            project_support: c.project_support,
        }
    }
}

impl RecoveryTuning {
    /// Binds the tuning to a concrete scene support.
    pub fn to_config(&self, support: SupportSet, support_size_per_view: usize) -> RecoveryConfig {
        let mut c = RecoveryConfig::new(support, support_size_per_view);
        c.beta = self.beta;
        c.lambda = self.lambda;
        c.step_size = self.step_size;
        c.step_decay = self.step_decay;
        c.inner_tmax = self.inner_tmax;
        c.outer_tmax = self.outer_tmax;
        c.solver = self.solver;
        c.ipot = self.ipot.clone();
        c.project_support = self.project_support;
        c
    }
}

fn default_grid_rows() -> usize {
    16
}
fn default_grid_cols() -> usize {
    32
}
fn default_level() -> f64 {
    1.0
}
fn default_letter() -> Letter {
    Letter::E
}
fn default_radius() -> usize {
    2
}
fn default_shift() -> usize {
    1
}
fn default_workers() -> usize {
    1
}

/// Full description of a sweep. Mirrors the JSON config file field for
/// field; everything but the experimental grid has defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub methods: Vec<Method>,
    pub rates: Vec<f64>,
    #[serde(with = "snr_list_serde")]
    pub snrs_db: Vec<f64>,
    pub views: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_letter")]
    pub letter: Letter,
    #[serde(default = "default_grid_rows")]
    pub grid_rows: usize,
    #[serde(default = "default_grid_cols")]
    pub grid_cols: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_radius")]
    pub displacement_radius: usize,
    #[serde(default = "default_shift")]
    pub max_component_shift: usize,
    #[serde(default)]
    pub recovery: RecoveryTuning,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Capture per-call wall time. Off by default so single-worker reruns
    /// emit byte-identical reports.
    #[serde(default)]
    pub record_timing: bool,
    /// Default report directory; a CLI flag may override it.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl SweepConfig {
    /// A minimal sweep over the given seeds with every other knob at its
    /// default.
    pub fn single_cell(method: Method, rate: f64, snr_db: f64, views: usize, seeds: Vec<u64>) -> Self {
        Self {
            methods: vec![method],
            rates: vec![rate],
            snrs_db: vec![snr_db],
            views: vec![views],
            seeds,
            letter: default_letter(),
            grid_rows: default_grid_rows(),
            grid_cols: default_grid_cols(),
            level: default_level(),
            displacement_radius: default_radius(),
            max_component_shift: default_shift(),
            recovery: RecoveryTuning::default(),
            baseline: BaselineConfig::default(),
            workers: 1,
            record_timing: false,
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, empty) in [
            ("methods", self.methods.is_empty()),
            ("rates", self.rates.is_empty()),
            ("snrs_db", self.snrs_db.is_empty()),
            ("views", self.views.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if empty {
                return Err(Error::config(format!("{name} must be nonempty")));
            }
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::config("seeds must be distinct"));
        }
        for &r in &self.rates {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::config(format!("rate {r} outside (0, 1]")));
            }
        }
        for &s in &self.snrs_db {
            if s.is_nan() || s == f64::NEG_INFINITY {
                return Err(Error::config(format!("invalid SNR {s}")));
            }
        }
        if self.views.iter().any(|&k| k == 0) {
            return Err(Error::config("view counts must be at least 1"));
        }
        if self.workers == 0 {
            return Err(Error::config("workers must be at least 1"));
        }
        self.baseline.validate()?;
        // Scene validity (letter fit, level) is checked here too so a sweep
        // fails fast instead of producing all-error rows.
        self.scene()?;
        Ok(())
    }

    pub fn scene(&self) -> Result<SceneSpec> {
        SceneSpec::new(
            self.letter,
            Grid::new(self.grid_rows, self.grid_cols)?,
            self.level,
        )
    }

    pub fn perturb(&self) -> PerturbSpec {
        PerturbSpec::new(self.displacement_radius, self.max_component_shift)
    }

    fn cells(&self) -> Vec<CellKey> {
        let mut cells = Vec::new();
        for &method in &self.methods {
            for &rate in &self.rates {
                for &snr_db in &self.snrs_db {
                    for &views in &self.views {
                        for &seed in &self.seeds {
                            cells.push(CellKey {
                                method,
                                rate,
                                snr_db,
                                views,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy)]
struct CellKey {
    method: Method,
    rate: f64,
    snr_db: f64,
    views: usize,
    seed: u64,
}

impl CellKey {
    /// Instance seed folding in the whole cell key, so adding methods or
    /// grid points never shifts the randomness of existing cells.
    fn instance_seed(&self) -> u64 {
        derive_seed(
            self.seed,
            &[
                self.method.name().as_bytes(),
                &self.rate.to_bits().to_le_bytes(),
                &self.snr_db.to_bits().to_le_bytes(),
                &(self.views as u64).to_le_bytes(),
            ],
        )
    }
}

/// One finished cell. Failed cells carry NaN NMSE and zero iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub method: Method,
    pub rate: f64,
    pub snr_db: f64,
    pub views: usize,
    pub seed: u64,
    pub nmse: f64,
    pub wall_time_s: f64,
    pub iters: usize,
}

/// Per-cell aggregate over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: Method,
    pub rate: f64,
    pub snr_db: f64,
    pub views: usize,
    /// Number of non-failed records in the cell.
    pub n: usize,
    pub mean_nmse: f64,
    pub std_nmse: f64,
}

/// All records of a sweep, in deterministic cell order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
}

impl SweepResult {
    /// Mean and sample standard deviation of NMSE per (method, rate, snr,
    /// views) cell, in first-appearance order. Failed records are excluded;
    /// a cell with no finite records reports NaN.
    pub fn aggregates(&self) -> Vec<AggregateRow> {
        let mut order: Vec<(Method, u64, u64, usize)> = Vec::new();
        let mut rows: Vec<AggregateRow> = Vec::new();
        for record in &self.records {
            let key = (
                record.method,
                record.rate.to_bits(),
                record.snr_db.to_bits(),
                record.views,
            );
            let idx = match order.iter().position(|&k| k == key) {
                Some(i) => i,
                None => {
                    order.push(key);
                    rows.push(AggregateRow {
                        method: record.method,
                        rate: record.rate,
                        snr_db: record.snr_db,
                        views: record.views,
                        n: 0,
                        mean_nmse: 0.0,
                        std_nmse: 0.0,
                    });
                    rows.len() - 1
                }
            };
            if record.nmse.is_finite() {
                // First pass accumulates sums; finalized below.
                rows[idx].n += 1;
                rows[idx].mean_nmse += record.nmse;
                rows[idx].std_nmse += record.nmse * record.nmse;
            }
        }
        for row in &mut rows {
            if row.n == 0 {
                row.mean_nmse = f64::NAN;
                row.std_nmse = f64::NAN;
                continue;
            }
            let n = row.n as f64;
            let mean = row.mean_nmse / n;
            let sum_sq = row.std_nmse;
            row.mean_nmse = mean;
            row.std_nmse = if row.n > 1 {
                ((sum_sq - n * mean * mean).max(0.0) / (n - 1.0)).sqrt()
            } else {
                0.0
            };
        }
        rows
    }
}

fn backprojection_init(instance: &Instance) -> Result<Signal> {
    let grid = instance.x_true.grid();
    let mut sum = ndarray::Array1::zeros(grid.len());
    for view in &instance.views {
        sum += &view.f().apply_transpose(&view.a().apply_transpose(view.y()));
    }
    sum /= instance.views.len() as f64;
    Signal::new(grid, sum)
}

/// Runs one method on one instance; returns NMSE and an iteration count.
///
/// Iterations are the outer rounds actually run for the alternating
/// methods and zero for the direct least-squares baseline.
pub fn run_method(
    method: Method,
    instance: &Instance,
    scene: &SceneSpec,
    tuning: &RecoveryTuning,
    baseline: &BaselineConfig,
) -> Result<(f64, usize)> {
    let (x_hat, iters) = match method {
        Method::Proposed => {
            let support = scene.support();
            let k_s = support.len();
            let cfg = tuning.to_config(support, k_s);
            let x_init =
                default_prototype_init(&instance.views, instance.x_true.grid(), &cfg.support)?;
            let (x_hat, state) = recover(&instance.views, &cfg, &x_init)?;
            (x_hat, state.objective_trace.len().saturating_sub(1))
        }
        Method::Gradient => {
            let x_init = backprojection_init(instance)?;
            let x_hat = baseline_gradient(&instance.views, baseline, &x_init)?;
            (x_hat, baseline.outer_tmax)
        }
        Method::IgnoreP => {
            let x_init = backprojection_init(instance)?;
            let x_hat = baseline_ignore_p(&instance.views, baseline, &x_init)?;
            (x_hat, 0)
        }
    };
    Ok((nmse(&x_hat, &instance.x_true)?, iters))
}

fn run_cell(cell: &CellKey, cfg: &SweepConfig, scene: &SceneSpec) -> SweepRecord {
    let outcome = build_instance(
        scene,
        &cfg.perturb(),
        cell.views,
        cell.rate,
        cell.snr_db,
        cell.instance_seed(),
    )
    .and_then(|instance| {
        let start = Instant::now();
        let (nmse, iters) =
            run_method(cell.method, &instance, scene, &cfg.recovery, &cfg.baseline)?;
        let wall = if cfg.record_timing {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        Ok((nmse, wall, iters))
    });
    let (nmse, wall_time_s, iters) = match outcome {
        Ok(v) => v,
        Err(err) => {
            log::warn!(
                "cell {} rate {} snr {} views {} seed {} failed: {err}",
                cell.method,
                cell.rate,
                cell.snr_db,
                cell.views,
                cell.seed
            );
            (f64::NAN, 0.0, 0)
        }
    };
    SweepRecord {
        method: cell.method,
        rate: cell.rate,
        snr_db: cell.snr_db,
        views: cell.views,
        seed: cell.seed,
        nmse,
        wall_time_s,
        iters,
    }
}

/// Runs every cell of the sweep. Cell order in the result follows the
/// config's list order (methods, then rates, SNRs, views, seeds); failures
/// become NaN records and the run continues.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let scene = cfg.scene()?;
    let cells = cfg.cells();
    let records: Vec<SweepRecord> = if cfg.workers == 1 {
        cells.iter().map(|c| run_cell(c, cfg, &scene)).collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::config(format!("worker pool: {e}")))?;
        pool.install(|| {
            cells
                .par_iter()
                .map(|c| run_cell(c, cfg, &scene))
                .collect()
        })
    };
    Ok(SweepResult { records })
}

fn write_lines(path: &Path, header: &str, lines: &[String]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let emit = |w: &mut BufWriter<File>, s: &str| -> Result<()> {
        writeln!(w, "{s}").map_err(|e| Error::io(path, e))
    };
    emit(&mut w, header)?;
    for line in lines {
        emit(&mut w, line)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `records.csv` (raw rows) and `summary.csv` (mean and standard
/// deviation per cell) into `dir`; returns both paths.
///
/// Floats use Rust's shortest round-trip formatting; the noiseless SNR
/// sentinel appears as `inf`, failed cells as `NaN`.
pub fn emit_report(result: &SweepResult, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if result.records.is_empty() {
        return Err(Error::EmptyResult);
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let records_path = dir.join("records.csv");
    let record_lines: Vec<String> = result
        .records
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{}",
                r.method, r.rate, r.snr_db, r.views, r.seed, r.nmse, r.wall_time_s, r.iters
            )
        })
        .collect();
    write_lines(&records_path, RECORDS_HEADER, &record_lines)?;

    let summary_path = dir.join("summary.csv");
    let summary_lines: Vec<String> = result
        .aggregates()
        .iter()
        .map(|a| {
            format!(
                "{},{},{},{},{},{},{}",
                a.method, a.rate, a.snr_db, a.views, a.n, a.mean_nmse, a.std_nmse
            )
        })
        .collect();
    write_lines(&summary_path, SUMMARY_HEADER, &summary_lines)?;
    Ok((records_path, summary_path))
}

/// Reads a sweep config from a JSON file.
pub fn load_config(path: &Path) -> Result<SweepConfig> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let cfg: SweepConfig =
        serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::serde(path, e))?;
    cfg.validate()?;
    Ok(cfg)
}

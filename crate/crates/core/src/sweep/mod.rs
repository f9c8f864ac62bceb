//! (ν_d, J0) sweeps with an orientation grid evaluated inside every cell.
//!
//! Cells are independent tasks on a worker pool; a single writer emits rows
//! in ν-major order as soon as the completed prefix grows, and appends every
//! finished cell to an optional checkpoint so an interrupted run can resume.
//! Rows are formatted once and replayed verbatim from the checkpoint, so a
//! resumed run is byte-identical to an uninterrupted one.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrology::{self, MetrologyReport, MetrologySettings, OrientationGrid, OrientationResult};
use crate::model::config::hex_digest;
use crate::model::{ModulationSpec, RadicalPairModel};

/// Column order of sweep output files.
pub const SWEEP_COLUMNS: [&str; 11] = [
    "nu_MHz",
    "J0_over_2pi_MHz",
    "theta",
    "phi",
    "singlet_yield",
    "gamma",
    "cfi",
    "qfi",
    "ratio",
    "mean_ratio",
    "flags",
];

/// Column order of orientation-scan output files.
pub const ORIENTATION_COLUMNS: [&str; 8] = [
    "theta",
    "phi",
    "singlet_yield",
    "singlet_probability",
    "cfi",
    "qfi",
    "ratio",
    "flags",
];

/// Marker for an undefined numeric field.
pub const ABSENT: &str = "NA";

/// Evenly spaced values on a linear or logarithmic scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
    pub log: bool,
}

impl Axis {
    pub fn new(min: f64, max: f64, count: usize, log: bool) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config("axis needs at least one value".into()));
        }
        if !(min.is_finite() && max.is_finite() && min <= max) {
            return Err(Error::Config(format!("axis range [{min}, {max}] is not ordered")));
        }
        if log && min <= 0.0 {
            return Err(Error::Config(format!("log axis needs a positive minimum, got {min}")));
        }
        Ok(Self { min, max, count, log })
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|i| {
                if i + 1 == self.count {
                    return self.max;
                }
                let s = i as f64 / last;
                if self.log {
                    (self.min.ln() + s * (self.max.ln() - self.min.ln())).exp()
                } else {
                    self.min + s * (self.max - self.min)
                }
            })
            .collect()
    }
}

/// Orientation grid dimensions, written `NxM` (θ points × φ points).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GridSpec {
    pub n_theta: usize,
    pub n_phi: usize,
}

impl GridSpec {
    pub fn grid(&self) -> Result<OrientationGrid> {
        OrientationGrid::uniform(self.n_theta, self.n_phi)
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("grid '{s}' must look like NxM with N, M >= 1"));
        let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let n_theta: usize = a.trim().parse().map_err(|_| bad())?;
        let n_phi: usize = b.trim().parse().map_err(|_| bad())?;
        if n_theta == 0 || n_phi == 0 {
            return Err(bad());
        }
        Ok(Self { n_theta, n_phi })
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.n_theta, self.n_phi)
    }
}

/// Which cells are marked `filtered`, relative to the anisotropy Γ_ref of
/// the undriven model without exchange (J0 = 0) on the same grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum FilterMode {
    None,
    /// Keep cells with Γ ≥ Γ_ref.
    AnisotropyMaintained,
    /// Keep cells with Γ ≥ fraction · Γ_ref.
    AnisotropyThreshold { fraction: f64 },
}

impl FilterMode {
    pub const DEFAULT_FRACTION: f64 = 0.1;

    fn threshold(&self) -> Option<f64> {
        match self {
            Self::None => None,
            Self::AnisotropyMaintained => Some(1.0),
            Self::AnisotropyThreshold { fraction } => Some(*fraction),
        }
    }
}

impl FromStr for FilterMode {
    type Err = Error;

    /// `none`, `anisotropy-maintained`, `anisotropy-threshold` (10%) or
    /// `anisotropy-threshold:<fraction>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "anisotropy-maintained" => Ok(Self::AnisotropyMaintained),
            "anisotropy-threshold" => Ok(Self::AnisotropyThreshold {
                fraction: Self::DEFAULT_FRACTION,
            }),
            _ => {
                let fraction = s
                    .strip_prefix("anisotropy-threshold:")
                    .and_then(|f| f.parse::<f64>().ok())
                    .filter(|f| f.is_finite() && *f >= 0.0)
                    .ok_or_else(|| Error::Config(format!("unknown filter '{s}'")))?;
                Ok(Self::AnisotropyThreshold { fraction })
            }
        }
    }
}

/// Everything that defines a sweep besides the base model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    /// Driving frequency in MHz; zero means undriven.
    pub nu: Axis,
    /// J0/2π in MHz.
    pub j: Axis,
    pub grid: GridSpec,
    pub dipolar: bool,
    pub exchange: bool,
    /// Random-field relaxation rate γ in µs⁻¹.
    pub rfr_gamma: f64,
    /// Driving amplitude Δ_d in Å.
    pub delta_a: f64,
    pub filter: FilterMode,
}

impl SweepSpec {
    /// Base model with this sweep's toggles and relaxation rate.
    pub fn apply(&self, model: &RadicalPairModel) -> Result<RadicalPairModel> {
        let mut m = model.clone();
        m.geometry = m.geometry.with_flags(self.dipolar, self.exchange);
        m.relaxation = self.rfr_gamma;
        RadicalPairModel::new(m.system, m.geometry, m.rates, m.relaxation, m.b0_ut)
    }

    pub fn cell_count(&self) -> usize {
        self.nu.count * self.j.count
    }

    /// Cells in ν-major order.
    pub fn cells(&self) -> Vec<Cell> {
        let js = self.j.values();
        self.nu
            .values()
            .into_iter()
            .flat_map(|nu| js.iter().map(move |&j| (nu, j)))
            .enumerate()
            .map(|(index, (nu_mhz, j0_mhz))| Cell { index, nu_mhz, j0_mhz })
            .collect()
    }
}

/// Harmonic drive at `nu_mhz`, or no drive when it is zero.
pub fn drive(nu_mhz: f64, delta_a: f64) -> Result<ModulationSpec> {
    if nu_mhz == 0.0 {
        Ok(ModulationSpec::Static)
    } else {
        ModulationSpec::harmonic(nu_mhz, delta_a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub nu_mhz: f64,
    pub j0_mhz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RowFlags {
    /// Fails the anisotropy filter.
    pub filtered: bool,
    /// Some orientation's Fisher estimate failed the step-halving check.
    pub non_converged: bool,
    /// Some orientation's ratio was clamped to 1.
    pub clamped: bool,
    /// Some propagation violated probability conservation.
    pub non_conserving: bool,
}

impl RowFlags {
    fn absorb(&mut self, p: &OrientationResult) {
        self.non_converged |= p.flags.non_converged;
        self.clamped |= p.flags.clamped;
        self.non_conserving |= p.flags.non_conserving;
    }
}

impl fmt::Display for RowFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [
            (self.filtered, "filtered"),
            (self.non_converged, "non_converged"),
            (self.clamped, "clamped"),
            (self.non_conserving, "non_conserving"),
        ]
        .iter()
        .filter_map(|&(on, name)| on.then_some(name))
        .collect();
        if names.is_empty() {
            f.write_str("ok")
        } else {
            f.write_str(&names.join("|"))
        }
    }
}

/// One sweep cell. The orientation columns and Φ_S refer to the grid point
/// of largest QCRB ratio (the first point when no ratio is defined); F_θ
/// and 𝓕_θ are grid maxima, alongside the maximum and mean ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub nu_mhz: f64,
    pub j0_mhz: f64,
    pub theta: f64,
    pub phi: f64,
    pub singlet_yield: f64,
    pub gamma: Option<f64>,
    pub cfi: f64,
    pub qfi: f64,
    pub ratio: Option<f64>,
    pub mean_ratio: Option<f64>,
    pub flags: RowFlags,
}

fn num(x: f64) -> String {
    format!("{x:.8e}")
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| ABSENT.to_string(), num)
}

impl SweepRow {
    pub fn from_report(cell: &Cell, report: &MetrologyReport, threshold: Option<f64>) -> Self {
        let at = report.max_ratio.map_or(0, |(_, i)| i);
        let best = &report.points[at];
        let mut flags = RowFlags::default();
        report.points.iter().for_each(|p| flags.absorb(p));
        let gamma = report.anisotropy.map(|a| a.gamma);
        flags.filtered = match (threshold, gamma) {
            (Some(t), Some(g)) => g < t,
            (Some(_), None) => true,
            (None, _) => false,
        };
        Self {
            nu_mhz: cell.nu_mhz,
            j0_mhz: cell.j0_mhz,
            theta: best.theta,
            phi: best.phi,
            singlet_yield: best.singlet_yield,
            gamma,
            cfi: report.max_cfi,
            qfi: report.max_qfi,
            ratio: report.max_ratio.map(|(r, _)| r),
            mean_ratio: report.mean_ratio,
            flags,
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            num(self.nu_mhz),
            num(self.j0_mhz),
            num(self.theta),
            num(self.phi),
            num(self.singlet_yield),
            opt(self.gamma),
            num(self.cfi),
            num(self.qfi),
            opt(self.ratio),
            opt(self.mean_ratio),
            self.flags
        )
    }
}

/// Per-orientation CSV of a single report.
pub fn write_orientations<W: Write>(mut w: W, report: &MetrologyReport) -> std::io::Result<()> {
    writeln!(w, "{}", ORIENTATION_COLUMNS.join(","))?;
    for p in &report.points {
        let mut flags = RowFlags::default();
        flags.absorb(p);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            num(p.theta),
            num(p.phi),
            num(p.singlet_yield),
            num(p.singlet_probability),
            num(p.cfi),
            num(p.qfi),
            opt(p.ratio),
            flags
        )?;
    }
    Ok(())
}

/// Machine-readable description of an output file.
#[derive(Debug, Clone, Serialize)]
pub struct Sidecar<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub kind: &'static str,
    pub config_hash: &'a str,
    pub columns: &'a [&'a str],
    pub rows: usize,
    pub complete: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<&'a SweepSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
}

impl<'a> Sidecar<'a> {
    pub fn new(kind: &'static str, config_hash: &'a str, columns: &'a [&'a str], rows: usize) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            kind,
            config_hash,
            columns,
            rows,
            complete: true,
            sweep: None,
            reference_gamma: None,
            extra: None,
        }
    }

    pub fn write(&self, data_path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.into()))?;
        std::fs::write(sidecar_path(data_path), text + "\n")?;
        Ok(())
    }
}

/// `<file>.meta.json` next to a data file.
pub fn sidecar_path(data_path: &Path) -> PathBuf {
    let mut name = data_path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    data_path.with_file_name(name)
}

/// Sweep over one base model.
#[derive(Debug, Clone)]
pub struct Sweep {
    model: RadicalPairModel,
    spec: SweepSpec,
    grid: OrientationGrid,
    settings: MetrologySettings,
    config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub rows: usize,
    /// Cells taken from the checkpoint rather than computed.
    pub resumed: usize,
    pub reference_gamma: Option<f64>,
}

impl Sweep {
    /// `config_hash` identifies the base model's source in the sidecar and
    /// checkpoint.
    pub fn new(
        model: &RadicalPairModel,
        spec: SweepSpec,
        settings: MetrologySettings,
        config_hash: impl Into<String>,
    ) -> Result<Self> {
        Ok(Self {
            model: spec.apply(model)?,
            grid: spec.grid.grid()?,
            spec,
            settings,
            config_hash: config_hash.into(),
        })
    }

    pub fn spec(&self) -> &SweepSpec {
        &self.spec
    }

    pub fn model(&self) -> &RadicalPairModel {
        &self.model
    }

    /// Γ of the undriven model with J0 = 0, when a filter needs it.
    pub fn reference_gamma(&self) -> Result<Option<f64>> {
        if self.spec.filter == FilterMode::None {
            return Ok(None);
        }
        let reference = self.model.with_j0_mhz(0.0);
        let report = metrology::evaluate(&reference, &ModulationSpec::Static, &self.grid, &self.settings)?;
        match report.anisotropy {
            Some(a) => Ok(Some(a.gamma)),
            None => Err(Error::Config("anisotropy filters need at least two orientations".into())),
        }
    }

    pub fn report(&self, cell: &Cell) -> Result<MetrologyReport> {
        let model = self.model.with_j0_mhz(cell.j0_mhz);
        let modulation = drive(cell.nu_mhz, self.spec.delta_a)?;
        metrology::evaluate(&model, &modulation, &self.grid, &self.settings)
    }

    pub fn evaluate_cell(&self, cell: &Cell, reference_gamma: Option<f64>) -> Result<SweepRow> {
        let threshold = self.spec.filter.threshold().zip(reference_gamma).map(|(f, g)| f * g);
        Ok(SweepRow::from_report(cell, &self.report(cell)?, threshold))
    }

    fn fingerprint(&self) -> String {
        let spec = serde_json::to_string(&self.spec).unwrap_or_default();
        hex_digest(format!("{}|{}|{spec}", env!("CARGO_PKG_VERSION"), self.config_hash).as_bytes())
    }

    /// Run on `workers` threads, writing `out`, its sidecar and (if given)
    /// appending to `checkpoint`. Cells already present in the checkpoint are
    /// not recomputed. On failure the completed prefix of `out` is kept.
    pub fn run(&self, workers: usize, out: &Path, checkpoint: Option<&Path>) -> Result<SweepSummary> {
        let total = self.spec.cell_count();
        let fingerprint = self.fingerprint();
        let mut done: BTreeMap<usize, String> = match checkpoint {
            Some(path) if path.exists() => read_checkpoint(path, &fingerprint, total)?,
            _ => BTreeMap::new(),
        };
        let resumed = done.len();
        let mut ckpt = match checkpoint {
            Some(path) => Some(open_checkpoint(path, &fingerprint, &done)?),
            None => None,
        };

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        let reference_gamma = if done.len() < total {
            pool.install(|| self.reference_gamma())?
        } else {
            None
        };

        let mut writer = RowWriter::create(out, total)?;
        for (&i, line) in &done {
            writer.insert(i, line.clone())?;
        }
        let pending: Vec<Cell> = self
            .spec
            .cells()
            .into_iter()
            .filter(|c| !done.contains_key(&c.index))
            .collect();

        let abort = AtomicBool::new(false);
        let (tx, rx) = mpsc::channel::<(usize, Result<String>)>();
        let mut failure = None;
        std::thread::scope(|scope| {
            let abort = &abort;
            let pool = &pool;
            let pending = &pending;
            scope.spawn(move || {
                pool.install(|| {
                    pending.par_iter().for_each_with(tx, |tx, cell| {
                        if abort.load(Ordering::Relaxed) {
                            return;
                        }
                        let line = self.evaluate_cell(cell, reference_gamma).map(|r| r.csv_line());
                        let _ = tx.send((cell.index, line));
                    });
                });
            });
            // Single writer: the checkpoint and the output are only touched here.
            for (index, line) in rx {
                let result = line.and_then(|line| {
                    if let Some(c) = ckpt.as_mut() {
                        writeln!(c, "{index},{line}")?;
                        c.flush()?;
                    }
                    writer.insert(index, line.clone())?;
                    done.insert(index, line);
                    Ok(())
                });
                if let Err(e) = result {
                    abort.store(true, Ordering::Relaxed);
                    failure.get_or_insert(e);
                }
            }
        });

        let complete = failure.is_none() && done.len() == total;
        writer.finish()?;
        let mut sidecar = Sidecar::new("sweep", &self.config_hash, &SWEEP_COLUMNS, writer.written);
        sidecar.complete = complete;
        sidecar.sweep = Some(&self.spec);
        sidecar.reference_gamma = reference_gamma;
        sidecar.write(out)?;
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(SweepSummary {
            rows: total,
            resumed,
            reference_gamma,
        })
    }
}

/// Writes rows in index order as the completed prefix grows.
struct RowWriter {
    out: BufWriter<File>,
    pending: BTreeMap<usize, String>,
    written: usize,
    total: usize,
}

impl RowWriter {
    fn create(path: &Path, total: usize) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", SWEEP_COLUMNS.join(","))?;
        Ok(Self {
            out,
            pending: BTreeMap::new(),
            written: 0,
            total,
        })
    }

    fn insert(&mut self, index: usize, line: String) -> Result<()> {
        self.pending.insert(index, line);
        while let Some(line) = self.pending.remove(&self.written) {
            writeln!(self.out, "{line}")?;
            self.written += 1;
        }
        if self.written == self.total {
            self.out.flush()?;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

fn checkpoint_header(fingerprint: &str) -> String {
    format!("# radmag sweep checkpoint {fingerprint}")
}

/// Rewrites the checkpoint with the rows already known, dropping anything
/// unreadable, and leaves it open for appending.
fn open_checkpoint(path: &Path, fingerprint: &str, done: &BTreeMap<usize, String>) -> Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", checkpoint_header(fingerprint))?;
    for (i, line) in done {
        writeln!(w, "{i},{line}")?;
    }
    w.flush()?;
    Ok(w)
}

fn valid_row(row: &str) -> bool {
    let fields: Vec<&str> = row.split(',').collect();
    let Some((flags, numbers)) = fields.split_last() else {
        return false;
    };
    fields.len() == SWEEP_COLUMNS.len()
        && numbers.iter().all(|f| *f == ABSENT || f.parse::<f64>().is_ok())
        && (*flags == "ok"
            || flags
                .split('|')
                .all(|f| ["filtered", "non_converged", "clamped", "non_conserving"].contains(&f)))
}

/// Completed rows by cell index. Only newline-terminated, well-formed lines
/// count, so a line torn by an interrupted write is recomputed; a checkpoint
/// from a different sweep is an error.
fn read_checkpoint(path: &Path, fingerprint: &str, total: usize) -> Result<BTreeMap<usize, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.split_inclusive('\n').filter_map(|l| l.strip_suffix('\n'));
    let Some(header) = lines.next() else {
        return Ok(BTreeMap::new());
    };
    if header != checkpoint_header(fingerprint) {
        return Err(Error::Config(format!(
            "checkpoint {} belongs to a different sweep or configuration",
            path.display()
        )));
    }
    let mut done = BTreeMap::new();
    for line in lines {
        let Some((index, row)) = line.split_once(',') else {
            continue;
        };
        match index.parse::<usize>() {
            Ok(index) if index < total && valid_row(row) => {
                done.insert(index, row.to_string());
            }
            _ => {}
        }
    }
    Ok(done)
}

//! C-MAPSS ingestion: parsing, sensor pruning, min-max scaling, sliding
//! windows with piecewise-linear RUL labels, and engine-level sub-sampling.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numkit::SeededRng;

pub mod synth;

/// Raw sensor channels per cycle in the source files.
pub const RAW_SENSORS: usize = 21;
/// Columns per row: unit, cycle, three operating settings, 21 sensors.
pub const COLUMNS: usize = 26;
/// Sensors that stay flat over an engine's life and carry no RUL signal.
pub const DEFAULT_DROPPED: [usize; 7] = [1, 5, 6, 10, 16, 18, 19];
pub const DEFAULT_RUL_MAX: f64 = 125.0;
pub const DEFAULT_WINDOW: usize = 40;

/// One of the four benchmark subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum DatasetId {
    FD001,
    FD002,
    FD003,
    FD004,
}

/// Fixed description of a subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DatasetMeta {
    pub id: DatasetId,
    pub train_engines: usize,
    pub test_engines: usize,
    pub conditions: usize,
    pub fault_modes: usize,
}

impl DatasetId {
    pub const ALL: [DatasetId; 4] = [DatasetId::FD001, DatasetId::FD002, DatasetId::FD003, DatasetId::FD004];

    pub fn meta(self) -> DatasetMeta {
        let (train_engines, test_engines, conditions, fault_modes) = match self {
            DatasetId::FD001 => (100, 100, 1, 1),
            DatasetId::FD002 => (260, 259, 6, 1),
            DatasetId::FD003 => (100, 100, 1, 2),
            DatasetId::FD004 => (249, 248, 6, 2),
        };
        DatasetMeta {
            id: self,
            train_engines,
            test_engines,
            conditions,
            fault_modes,
        }
    }

    pub fn train_file(self, dir: &Path) -> PathBuf {
        dir.join(format!("train_{self}.txt"))
    }

    pub fn test_file(self, dir: &Path) -> PathBuf {
        dir.join(format!("test_{self}.txt"))
    }

    pub fn rul_file(self, dir: &Path) -> PathBuf {
        dir.join(format!("RUL_{self}.txt"))
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for DatasetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FD001" => Ok(DatasetId::FD001),
            "FD002" => Ok(DatasetId::FD002),
            "FD003" => Ok(DatasetId::FD003),
            "FD004" => Ok(DatasetId::FD004),
            _ => Err(Error::Config(format!("unknown dataset {s}"))),
        }
    }
}

/// One engine's run: cycles `1..=T`, operating settings and sensor rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineTrajectory {
    pub unit_id: u32,
    pub cycles: Vec<u32>,
    pub op_settings: Vec<[f64; 3]>,
    /// One row per cycle.
    pub sensors: Vec<Vec<f64>>,
    /// 1-based source index of each sensor column.
    pub sensor_ids: Vec<usize>,
}

impl EngineTrajectory {
    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.sensor_ids.len()
    }

    fn validate(&self) -> Result<()> {
        for (i, &c) in self.cycles.iter().enumerate() {
            if c as usize != i + 1 {
                return Err(Error::Validation(format!(
                    "unit {}: cycles must run 1,2,3,… but position {} holds cycle {c}",
                    self.unit_id,
                    i + 1
                )));
            }
        }
        if self.sensors.len() != self.cycles.len() || self.op_settings.len() != self.cycles.len() {
            return Err(Error::Validation(format!("unit {}: row counts disagree", self.unit_id)));
        }
        Ok(())
    }
}

/// Which file of a subset is being read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Train,
    Test,
    Rul,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Parsed {
    Trajectories(Vec<EngineTrajectory>),
    Rul(Vec<f64>),
}

pub fn parse_cmapss(path: &Path, kind: FileKind) -> Result<Parsed> {
    match kind {
        FileKind::Train | FileKind::Test => parse_trajectories(path).map(Parsed::Trajectories),
        FileKind::Rul => parse_rul(path).map(Parsed::Rul),
    }
}

pub fn parse_trajectories(path: &Path) -> Result<Vec<EngineTrajectory>> {
    let text = std::fs::read_to_string(path)?;
    parse_trajectories_str(&text, path)
}

pub fn parse_trajectories_str(text: &str, path: &Path) -> Result<Vec<EngineTrajectory>> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut units: BTreeMap<u32, EngineTrajectory> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != COLUMNS {
            return Err(perr(
                lineno,
                format!("expected {COLUMNS} columns, found {}", fields.len()),
            ));
        }
        let nums = fields
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| perr(lineno, format!("non-numeric field {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let as_index = |v: f64, what: &str| -> Result<u32> {
            if v.fract() != 0.0 || v < 1.0 || v > u32::MAX as f64 {
                return Err(perr(lineno, format!("{what} must be a positive integer, got {v}")));
            }
            Ok(v as u32)
        };
        let unit = as_index(nums[0], "unit id")?;
        let cycle = as_index(nums[1], "cycle")?;
        let t = units.entry(unit).or_insert_with(|| EngineTrajectory {
            unit_id: unit,
            cycles: Vec::new(),
            op_settings: Vec::new(),
            sensors: Vec::new(),
            sensor_ids: (1..=RAW_SENSORS).collect(),
        });
        t.cycles.push(cycle);
        t.op_settings.push([nums[2], nums[3], nums[4]]);
        t.sensors.push(nums[5..].to_vec());
    }
    let trajs: Vec<EngineTrajectory> = units.into_values().collect();
    for t in &trajs {
        t.validate()?;
    }
    Ok(trajs)
}

pub fn parse_rul(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            [v] => out.push(v.parse::<f64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("non-numeric RUL {v:?}"),
            })?),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("expected 1 column, found {}", fields.len()),
                })
            }
        }
    }
    Ok(out)
}

/// Render trajectories back to the whitespace-separated source format.
/// Numbers use the shortest representation that parses back to the same `f64`.
pub fn to_cmapss_text(trajs: &[EngineTrajectory]) -> String {
    let mut s = String::new();
    for t in trajs {
        for ((c, op), row) in t.cycles.iter().zip(&t.op_settings).zip(&t.sensors) {
            s.push_str(&format!("{} {}", t.unit_id, c));
            for v in op.iter().chain(row) {
                s.push_str(&format!(" {v}"));
            }
            s.push('\n');
        }
    }
    s
}

/// Sensors removed before modelling (1-based source indices).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SensorSelection {
    pub dropped: BTreeSet<usize>,
}

impl Default for SensorSelection {
    fn default() -> Self {
        Self {
            dropped: DEFAULT_DROPPED.into_iter().collect(),
        }
    }
}

impl SensorSelection {
    pub fn new(dropped: impl IntoIterator<Item = usize>) -> Result<Self> {
        let s = Self {
            dropped: dropped.into_iter().collect(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn kept_count(&self) -> usize {
        RAW_SENSORS - self.dropped.len()
    }

    pub fn kept(&self) -> Vec<usize> {
        (1..=RAW_SENSORS).filter(|i| !self.dropped.contains(i)).collect()
    }

    fn validate(&self) -> Result<()> {
        if let Some(bad) = self.dropped.iter().find(|&&i| !(1..=RAW_SENSORS).contains(&i)) {
            return Err(Error::Config(format!("sensor index {bad} outside 1..={RAW_SENSORS}")));
        }
        if self.kept_count() == 0 {
            return Err(Error::Config("sensor selection drops every channel".into()));
        }
        Ok(())
    }
}

pub fn select_sensors(traj: &EngineTrajectory, sel: &SensorSelection) -> Result<EngineTrajectory> {
    sel.validate()?;
    let cols: Vec<usize> = traj
        .sensor_ids
        .iter()
        .enumerate()
        .filter(|(_, id)| !sel.dropped.contains(id))
        .map(|(j, _)| j)
        .collect();
    if cols.is_empty() {
        return Err(Error::Config("sensor selection drops every channel".into()));
    }
    Ok(EngineTrajectory {
        unit_id: traj.unit_id,
        cycles: traj.cycles.clone(),
        op_settings: traj.op_settings.clone(),
        sensors: traj
            .sensors
            .iter()
            .map(|row| cols.iter().map(|&j| row[j]).collect())
            .collect(),
        sensor_ids: cols.iter().map(|&j| traj.sensor_ids[j]).collect(),
    })
}

/// Per-channel extrema of the training split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

pub fn fit_minmax(trajs: &[EngineTrajectory]) -> Result<NormStats> {
    let first = trajs
        .iter()
        .find(|t| !t.is_empty())
        .ok_or_else(|| Error::Contract("min-max fit needs at least one non-empty trajectory".into()))?;
    let m = first.channels();
    let mut min = vec![f64::INFINITY; m];
    let mut max = vec![f64::NEG_INFINITY; m];
    for t in trajs {
        if t.channels() != m {
            return Err(Error::shape("fit_minmax", &[m], &[t.channels()]));
        }
        for row in &t.sensors {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
    }
    Ok(NormStats { min, max })
}

impl NormStats {
    /// `(x − min)/(max − min)` clipped to `[0, 1]`; constant channels map to 0.
    pub fn scale(&self, j: usize, x: f64) -> f64 {
        let span = self.max[j] - self.min[j];
        if span <= 0.0 {
            return 0.0;
        }
        ((x - self.min[j]) / span).clamp(0.0, 1.0)
    }

    pub fn constant_channels(&self) -> Vec<usize> {
        (0..self.min.len()).filter(|&j| self.max[j] <= self.min[j]).collect()
    }
}

pub fn apply_minmax(traj: &EngineTrajectory, stats: &NormStats) -> Result<EngineTrajectory> {
    if traj.channels() != stats.min.len() {
        return Err(Error::shape("apply_minmax", &[stats.min.len()], &[traj.channels()]));
    }
    let mut out = traj.clone();
    for row in &mut out.sensors {
        for (j, v) in row.iter_mut().enumerate() {
            *v = stats.scale(j, *v);
        }
    }
    Ok(out)
}

/// `L×M` window with its capped RUL label.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub unit_id: u32,
    pub end_cycle: u32,
    /// `L` rows of `M` channels.
    pub values: Vec<Vec<f64>>,
    pub rul_label: f64,
}

/// Every length-`len` window of a training engine, labelled
/// `min(T − end_cycle, cap)`. Engines shorter than `len` yield nothing.
pub fn make_windows(traj: &EngineTrajectory, len: usize, cap: f64) -> Vec<WindowSample> {
    let t = traj.len();
    if len == 0 || t < len {
        return Vec::new();
    }
    (0..=t - len)
        .map(|start| {
            let end = start + len;
            WindowSample {
                unit_id: traj.unit_id,
                end_cycle: traj.cycles[end - 1],
                values: traj.sensors[start..end].to_vec(),
                rul_label: ((t - end) as f64).min(cap),
            }
        })
        .collect()
}

/// The last `len` cycles of a test engine labelled `min(rul, cap)`.
/// Engines shorter than `len` are left-padded by repeating their first row.
pub fn make_test_window(traj: &EngineTrajectory, len: usize, rul: f64, cap: f64) -> Result<WindowSample> {
    if traj.is_empty() || len == 0 {
        return Err(Error::Contract(format!("unit {}: empty test trajectory", traj.unit_id)));
    }
    let t = traj.len();
    let values = if t >= len {
        traj.sensors[t - len..].to_vec()
    } else {
        let mut v = vec![traj.sensors[0].clone(); len - t];
        v.extend_from_slice(&traj.sensors);
        v
    };
    Ok(WindowSample {
        unit_id: traj.unit_id,
        end_cycle: traj.cycles[t - 1],
        values,
        rul_label: rul.min(cap),
    })
}

/// Engine-level subset used for few-shot training.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FewShotPlan {
    pub ratio: f64,
    pub seed: u64,
    pub selected_units: Vec<u32>,
}

/// `max(1, round(ratio·n))` engines chosen by a seeded shuffle, reported in
/// their original order.
pub fn fewshot_subsample(units: &[u32], ratio: f64, seed: u64) -> Result<FewShotPlan> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("few-shot ratio {ratio} outside (0, 1]")));
    }
    if units.is_empty() {
        return Err(Error::Contract("few-shot sampling over zero units".into()));
    }
    let k = ((ratio * units.len() as f64).round() as usize).clamp(1, units.len());
    let mut order: Vec<usize> = (0..units.len()).collect();
    if k < units.len() {
        SeededRng::new(seed).shuffle(&mut order);
        order.truncate(k);
        order.sort_unstable();
    }
    Ok(FewShotPlan {
        ratio,
        seed,
        selected_units: order.into_iter().map(|i| units[i]).collect(),
    })
}

/// Seeded engine-level holdout: `round(fraction·n)` units, at least one when
/// two or more are available, none otherwise. Returns `(train, holdout)`.
pub fn holdout_split(units: &[u32], fraction: f64, seed: u64) -> (Vec<u32>, Vec<u32>) {
    if units.len() < 2 || fraction <= 0.0 {
        return (units.to_vec(), Vec::new());
    }
    let k = ((fraction * units.len() as f64).round() as usize).clamp(1, units.len() - 1);
    let mut order: Vec<usize> = (0..units.len()).collect();
    SeededRng::new(seed).fork(0x5EED).shuffle(&mut order);
    let held: BTreeSet<usize> = order[..k].iter().copied().collect();
    let mut train = Vec::new();
    let mut hold = Vec::new();
    for (i, &u) in units.iter().enumerate() {
        if held.contains(&i) {
            hold.push(u);
        } else {
            train.push(u);
        }
    }
    (train, hold)
}

/// Options for [`DatasetBundle::load`].
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub window_len: usize,
    pub rul_max: f64,
    pub selection: SensorSelection,
    /// Keep only the first `n` training engines (0 = all).
    pub engine_limit: usize,
    pub fewshot_ratio: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            window_len: DEFAULT_WINDOW,
            rul_max: DEFAULT_RUL_MAX,
            selection: SensorSelection::default(),
            engine_limit: 0,
            fewshot_ratio: 1.0,
            val_fraction: 0.1,
            seed: 42,
        }
    }
}

/// Fully prepared subset: normalised trajectories and windows for the
/// train, validation and test splits.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub meta: DatasetMeta,
    pub stats: NormStats,
    pub sensor_ids: Vec<usize>,
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
    pub train_units: Vec<u32>,
    pub val_units: Vec<u32>,
    pub fewshot: FewShotPlan,
    pub manifest: DatasetManifest,
}

/// Reproducibility record for an ingest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetManifest {
    pub dataset: DatasetId,
    pub train_engines_in_file: usize,
    pub test_engines_in_file: usize,
    pub pool_engines: usize,
    pub train_units: Vec<u32>,
    pub val_units: Vec<u32>,
    pub train_windows: usize,
    pub val_windows: usize,
    pub test_windows: usize,
    pub skipped_short_engines: usize,
    pub padded_test_engines: usize,
    pub window_len: usize,
    pub rul_max: f64,
    pub dropped_sensors: Vec<usize>,
    pub kept_sensors: Vec<usize>,
    pub norm_min: Vec<f64>,
    pub norm_max: Vec<f64>,
    pub seed: u64,
    pub fewshot_ratio: f64,
}

impl DatasetBundle {
    pub fn load(dir: &Path, id: DatasetId, opts: &LoadOptions) -> Result<Self> {
        let train_raw = parse_trajectories(&id.train_file(dir))?;
        let test_raw = parse_trajectories(&id.test_file(dir))?;
        let rul = parse_rul(&id.rul_file(dir))?;
        Self::from_parts(id, train_raw, test_raw, rul, opts)
    }

    pub fn from_parts(
        id: DatasetId,
        train_raw: Vec<EngineTrajectory>,
        test_raw: Vec<EngineTrajectory>,
        rul: Vec<f64>,
        opts: &LoadOptions,
    ) -> Result<Self> {
        if rul.len() != test_raw.len() {
            return Err(Error::Validation(format!(
                "RUL file has {} values for {} test engines",
                rul.len(),
                test_raw.len()
            )));
        }
        let (n_train_file, n_test_file) = (train_raw.len(), test_raw.len());
        let mut pool: Vec<EngineTrajectory> = train_raw
            .iter()
            .map(|t| select_sensors(t, &opts.selection))
            .collect::<Result<_>>()?;
        if opts.engine_limit > 0 {
            pool.truncate(opts.engine_limit);
        }
        let pool_units: Vec<u32> = pool.iter().map(|t| t.unit_id).collect();
        let fewshot = fewshot_subsample(&pool_units, opts.fewshot_ratio, opts.seed)?;
        let (train_units, val_units) = holdout_split(&fewshot.selected_units, opts.val_fraction, opts.seed);
        let keep: BTreeSet<u32> = fewshot.selected_units.iter().copied().collect();
        pool.retain(|t| keep.contains(&t.unit_id));

        let fit_on: Vec<EngineTrajectory> = pool
            .iter()
            .filter(|t| train_units.contains(&t.unit_id))
            .cloned()
            .collect();
        let stats = fit_minmax(&fit_on)?;
        for j in stats.constant_channels() {
            log::warn!("channel {j} is constant on the training split; it normalises to 0");
        }

        let mut skipped = 0;
        let mut train = Vec::new();
        let mut val = Vec::new();
        for t in &pool {
            let n = apply_minmax(t, &stats)?;
            let w = make_windows(&n, opts.window_len, opts.rul_max);
            if w.is_empty() {
                skipped += 1;
                continue;
            }
            if val_units.contains(&t.unit_id) {
                val.extend(w);
            } else {
                train.extend(w);
            }
        }
        if skipped > 0 {
            log::warn!(
                "{skipped} training engines shorter than {} cycles skipped",
                opts.window_len
            );
        }

        let mut test = Vec::with_capacity(test_raw.len());
        let mut padded = 0;
        for (t, &r) in test_raw.iter().zip(&rul) {
            let t = apply_minmax(&select_sensors(t, &opts.selection)?, &stats)?;
            if t.len() < opts.window_len {
                padded += 1;
            }
            test.push(make_test_window(&t, opts.window_len, r, opts.rul_max)?);
        }

        let sensor_ids = opts.selection.kept();
        let manifest = DatasetManifest {
            dataset: id,
            train_engines_in_file: n_train_file,
            test_engines_in_file: n_test_file,
            pool_engines: pool_units.len(),
            train_units: train_units.clone(),
            val_units: val_units.clone(),
            train_windows: train.len(),
            val_windows: val.len(),
            test_windows: test.len(),
            skipped_short_engines: skipped,
            padded_test_engines: padded,
            window_len: opts.window_len,
            rul_max: opts.rul_max,
            dropped_sensors: opts.selection.dropped.iter().copied().collect(),
            kept_sensors: sensor_ids.clone(),
            norm_min: stats.min.clone(),
            norm_max: stats.max.clone(),
            seed: opts.seed,
            fewshot_ratio: opts.fewshot_ratio,
        };
        Ok(Self {
            meta: id.meta(),
            stats,
            sensor_ids,
            train,
            val,
            test,
            train_units,
            val_units,
            fewshot,
            manifest,
        })
    }
}

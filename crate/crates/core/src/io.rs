//! File formats: board descriptions, per-tool measurement files, session
//! files, calibration output and experiment report tables.
//!
//! Everything on disk declares its unit; values are converted to meters on
//! load. Calibration files are always written in meters with quaternions in
//! `(w, x, y, z)` order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::board::BoardModel;
use crate::error::{Error, Result};
use crate::frame::{relative, CalibrationResult, MeasurementSet, ToolId};
use crate::geom::{Point3, RigidTransform, UnitQuaternion};
use crate::metrics::DeviationRow;
use crate::registration::RansacParams;
use crate::sim::TrajectoryTrial;

pub const CALIBRATION_FORMAT: &str = "rigcal-calibration/1";

/// Reserved name addressing the common frame in transform queries.
pub const COMMON_FRAME: &str = "common";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum Units {
    #[default]
    #[serde(rename = "m")]
    #[value(name = "m")]
    Meters,
    #[serde(rename = "mm")]
    #[value(name = "mm")]
    Millimeters,
}

impl Units {
    /// Meters per unit.
    pub fn scale(self) -> f64 {
        match self {
            Units::Meters => 1.0,
            Units::Millimeters => 1e-3,
        }
    }

    pub fn to_meters(self, p: Point3) -> Point3 {
        p * self.scale()
    }

    pub fn from_meters(self, p: Point3) -> Point3 {
        p / self.scale()
    }
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: display(path),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: display(dir),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| Error::Io {
        path: display(path),
        source,
    })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::parse(display(path), e))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

/// `{ "radius_m": 0.05, "dot_angles_deg": [0,90,180,270], "above_height_m": 0.05 }`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoardFile {
    pub radius_m: f64,
    pub dot_angles_deg: Vec<f64>,
    pub above_height_m: f64,
}

impl Default for BoardFile {
    fn default() -> Self {
        Self::from(&BoardModel::default())
    }
}

impl From<&BoardModel> for BoardFile {
    fn from(b: &BoardModel) -> Self {
        Self {
            radius_m: b.radius(),
            dot_angles_deg: b.dot_angles().iter().map(|a| a.to_degrees()).collect(),
            above_height_m: b.above_height(),
        }
    }
}

impl BoardFile {
    pub fn to_model(&self) -> Result<BoardModel> {
        BoardModel::from_degrees(self.radius_m, &self.dot_angles_deg, self.above_height_m)
    }
}

pub fn read_board(path: &Path) -> Result<BoardModel> {
    read_json::<BoardFile>(path)?
        .to_model()
        .map_err(|e| Error::parse(display(path), e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointKind {
    Dot,
    Above,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointRow {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub kind: PointKind,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonMeasurement {
    units: Option<Units>,
    rows: Vec<PointRow>,
}

/// Reads `x,y,z,kind` rows (CSV) or `{ "units": .., "rows": [..] }` (JSON,
/// chosen by a `.json` extension). Returned points are in meters. A JSON
/// file's own `units` wins over `default_units`; a CSV file has none.
pub fn read_point_rows(path: &Path, default_units: Option<Units>) -> Result<Vec<(Point3, PointKind)>> {
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let (units, rows) = if is_json {
        let m: JsonMeasurement = read_json(path)?;
        (m.units.or(default_units), m.rows)
    } else {
        let text = read_text(path)?;
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| Error::parse(display(path), e))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["x", "y", "z", "kind"] {
            return Err(Error::parse(
                display(path),
                format!("expected header `x,y,z,kind`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
            ));
        }
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<PointRow>, _>>()
            .map_err(|e| Error::parse(display(path), e))?;
        (default_units, rows)
    };
    let units = units.ok_or_else(|| Error::parse(display(path), "no unit declared (\"m\" or \"mm\")"))?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let p = Point3::new(r.x, r.y, r.z);
            if !p.is_finite() {
                return Err(Error::parse(display(path), format!("row {} is not finite", i + 1)));
            }
            Ok((units.to_meters(p), r.kind))
        })
        .collect()
}

/// Loads one tool's touches: dots in touch order, final row `above`.
pub fn read_measurement(path: &Path, tool: ToolId, default_units: Option<Units>) -> Result<MeasurementSet> {
    let rows = read_point_rows(path, default_units)?;
    let above_rows = rows.iter().filter(|(_, k)| *k == PointKind::Above).count();
    if above_rows != 1 || rows.last().map(|r| r.1) != Some(PointKind::Above) {
        return Err(Error::parse(
            display(path),
            "exactly one `above` row is required and it must be the final row",
        ));
    }
    let mut pts: Vec<Point3> = rows.into_iter().map(|(p, _)| p).collect();
    let above = pts.pop().expect("checked above");
    MeasurementSet::new(tool, pts, above)
}

pub fn write_measurement_csv(path: &Path, m: &MeasurementSet, units: Units) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let above = m.above_point();
    let rows = m
        .dot_points()
        .iter()
        .map(|p| (p, PointKind::Dot))
        .chain([(&above, PointKind::Above)]);
    for (p, kind) in rows {
        let q = units.from_meters(*p);
        w.serialize(PointRow {
            x: q.x,
            y: q.y,
            z: q.z,
            kind,
        })
        .map_err(|e| Error::parse(display(path), e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::parse(display(path), e))?;
    write_text(path, &String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Session ransac block; the threshold is in session units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacSection {
    pub inlier_threshold: Option<f64>,
    pub max_iterations: usize,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacSection {
    fn default() -> Self {
        let d = RansacParams::default();
        Self {
            inlier_threshold: None,
            max_iterations: d.max_iterations,
            min_inliers: d.min_inliers,
            seed: d.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoardRef {
    Path(PathBuf),
    Inline(BoardFile),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementRef {
    pub tool: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionFile {
    pub board: Option<BoardRef>,
    pub units: Units,
    pub measurements: Vec<MeasurementRef>,
    #[serde(default)]
    pub ransac: RansacSection,
    /// Cross-check translation above which a warning is raised, session units.
    pub warn_threshold: Option<f64>,
}

/// A session with every referenced file loaded.
#[derive(Clone, Debug)]
pub struct Session {
    pub board: Option<BoardModel>,
    pub measurements: Vec<MeasurementSet>,
    pub ransac: RansacParams,
    /// Meters.
    pub warn_threshold: f64,
}

pub const DEFAULT_WARN_THRESHOLD: f64 = 2e-3;

/// Parses a session file and everything it references. Relative paths are
/// resolved against the session file's directory.
pub fn load_session(path: &Path) -> Result<Session> {
    let file: SessionFile = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let bad = |m: String| Error::parse(display(path), m);
    let scale = file.units.scale();

    let board = match &file.board {
        None => None,
        Some(BoardRef::Inline(b)) => Some(b.to_model().map_err(|e| bad(e.to_string()))?),
        Some(BoardRef::Path(p)) => Some(read_board(&base.join(p))?),
    };

    if file.measurements.len() < 2 {
        return Err(bad(format!(
            "a session needs at least 2 measurements, got {}",
            file.measurements.len()
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut measurements = Vec::with_capacity(file.measurements.len());
    for m in &file.measurements {
        let tool = ToolId::new(m.tool.clone()).map_err(|e| bad(e.to_string()))?;
        if m.tool == COMMON_FRAME {
            return Err(bad(format!("`{COMMON_FRAME}` is reserved and cannot name a tool")));
        }
        if !seen.insert(m.tool.clone()) {
            return Err(bad(format!("duplicate tool `{}`", m.tool)));
        }
        let set = read_measurement(&base.join(&m.path), tool, Some(file.units))?;
        if let Some(b) = &board {
            if set.dot_points().len() != b.dot_count() {
                return Err(Error::for_tool(
                    m.tool.as_str(),
                    Error::OrderMismatch(format!(
                        "{} dots measured, board has {}",
                        set.dot_points().len(),
                        b.dot_count()
                    )),
                ));
            }
        }
        measurements.push(set);
    }

    let defaults = RansacParams::default();
    let ransac = RansacParams {
        inlier_threshold: file
            .ransac
            .inlier_threshold
            .map_or(defaults.inlier_threshold, |t| t * scale),
        max_iterations: file.ransac.max_iterations,
        min_inliers: file.ransac.min_inliers,
        seed: file.ransac.seed,
    };
    ransac.validate().map_err(|e| bad(e.to_string()))?;
    let warn_threshold = file.warn_threshold.map_or(DEFAULT_WARN_THRESHOLD, |t| t * scale);
    if !(warn_threshold.is_finite() && warn_threshold >= 0.0) {
        return Err(bad("warn_threshold must be nonnegative".into()));
    }

    Ok(Session {
        board,
        measurements,
        ransac,
        warn_threshold,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformEntry {
    pub rotation_wxyz: [f64; 4],
    pub translation_m: [f64; 3],
}

impl From<&RigidTransform> for TransformEntry {
    fn from(t: &RigidTransform) -> Self {
        Self {
            rotation_wxyz: t.rotation.to_wxyz(),
            translation_m: t.translation.to_array(),
        }
    }
}

impl TransformEntry {
    pub fn to_transform(&self) -> Result<RigidTransform> {
        let t = Point3::from_array(self.translation_m);
        if !t.is_finite() {
            return Err(Error::InvalidInput("translation is not finite".into()));
        }
        Ok(RigidTransform::new(UnitQuaternion::from_wxyz(self.rotation_wxyz)?, t))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolEntry {
    pub tool_to_common: TransformEntry,
    pub origin_m: [f64; 3],
    pub plane_normal: [f64; 3],
    pub plane_offset_m: f64,
    pub inliers: Vec<usize>,
    pub inlier_rms_m: f64,
    pub residual_rms_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub from: String,
    pub to: String,
    pub transform: TransformEntry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossCheckEntry {
    pub a: String,
    pub b: String,
    pub translation_m: f64,
    pub rotation_rad: f64,
    pub warning: bool,
}

/// On-disk calibration. Pairwise entries map `from` coordinates to `to`
/// coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub format: String,
    pub units: String,
    pub quaternion_order: String,
    pub dot_count: usize,
    pub tools: BTreeMap<String, ToolEntry>,
    pub pairwise: Vec<PairEntry>,
    pub cross_check: Vec<CrossCheckEntry>,
    pub warn_threshold_m: f64,
    pub warning: bool,
}

impl CalibrationFile {
    pub fn from_result(r: &CalibrationResult, warn_threshold: f64) -> Self {
        let tools = r
            .frames
            .iter()
            .map(|(id, f)| {
                let entry = ToolEntry {
                    tool_to_common: (&f.tool_to_common).into(),
                    origin_m: f.origin.to_array(),
                    plane_normal: f.plane_fit.plane.normal().to_array(),
                    plane_offset_m: f.plane_fit.plane.offset(),
                    inliers: f.plane_fit.inliers.clone(),
                    inlier_rms_m: f.plane_fit.rms_residual,
                    residual_rms_m: r.residuals[id],
                };
                (id.to_string(), entry)
            })
            .collect();
        let mut pairwise = Vec::new();
        for a in r.tools() {
            for b in r.tools().filter(|b| *b != a) {
                let t = r.tool_to_tool(a, b).expect("both tools present");
                pairwise.push(PairEntry {
                    from: a.to_string(),
                    to: b.to_string(),
                    transform: (&t).into(),
                });
            }
        }
        let cross_check: Vec<CrossCheckEntry> = r
            .cross_check
            .iter()
            .map(|((a, b), c)| CrossCheckEntry {
                a: a.to_string(),
                b: b.to_string(),
                translation_m: c.translation,
                rotation_rad: c.rotation,
                warning: c.translation > warn_threshold,
            })
            .collect();
        let warning = cross_check.iter().any(|c| c.warning);
        Self {
            format: CALIBRATION_FORMAT.into(),
            units: "m".into(),
            quaternion_order: "wxyz".into(),
            dot_count: r.dot_count,
            tools,
            pairwise,
            cross_check,
            warn_threshold_m: warn_threshold,
            warning,
        }
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let f: CalibrationFile = serde_json::from_str(text).map_err(|e| Error::parse(origin, e))?;
        if f.format != CALIBRATION_FORMAT || f.units != "m" || f.quaternion_order != "wxyz" {
            return Err(Error::parse(
                origin,
                format!(
                    "unsupported calibration file (format `{}`, units `{}`, quaternion order `{}`)",
                    f.format, f.units, f.quaternion_order
                ),
            ));
        }
        for (name, t) in &f.tools {
            t.tool_to_common
                .to_transform()
                .map_err(|e| Error::parse(origin, format!("tool `{name}`: {e}")))?;
        }
        Ok(f)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, &display(path))
    }

    /// Tool-to-common map; [`COMMON_FRAME`] maps to the identity.
    pub fn tool_to_common(&self, tool: &str) -> Result<RigidTransform> {
        if tool == COMMON_FRAME {
            return Ok(RigidTransform::IDENTITY);
        }
        self.tools
            .get(tool)
            .ok_or_else(|| Error::UnknownTool(tool.to_string()))?
            .tool_to_common
            .to_transform()
    }

    pub fn tool_to_tool(&self, from: &str, to: &str) -> Result<RigidTransform> {
        Ok(relative(&self.tool_to_common(from)?, &self.tool_to_common(to)?))
    }
}

#[derive(Debug, Serialize)]
struct Table1Row<'a> {
    tool: &'a str,
    x_mm: f64,
    y_mm: f64,
    z_mm: f64,
    error_mm: f64,
}

/// One reached grasp point: arm, position (common frame, meters), error (meters).
pub struct GraspRow<'a> {
    pub tool: &'a str,
    pub reached: Point3,
    pub error: f64,
}

fn csv_string<T: Serialize>(rows: impl IntoIterator<Item = T>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

/// `tool,x_mm,y_mm,z_mm,error_mm`
pub fn table1_csv<'a>(rows: impl IntoIterator<Item = GraspRow<'a>>) -> String {
    let s = csv_string(rows.into_iter().map(|r| Table1Row {
        tool: r.tool,
        x_mm: r.reached.x * 1e3,
        y_mm: r.reached.y * 1e3,
        z_mm: r.reached.z * 1e3,
        error_mm: r.error * 1e3,
    }));
    if s.is_empty() {
        "tool,x_mm,y_mm,z_mm,error_mm\n".into()
    } else {
        s
    }
}

#[derive(Debug, Serialize)]
struct Table2Row {
    radius_mm: f64,
    std_mm: f64,
    maxdev_mm: f64,
}

/// `radius_mm,std_mm,maxdev_mm`
pub fn table2_csv(rows: &[DeviationRow]) -> String {
    let s = csv_string(rows.iter().map(|r| Table2Row {
        radius_mm: r.radius_mm,
        std_mm: r.std_dev_mm,
        maxdev_mm: r.max_dev_mm,
    }));
    if s.is_empty() {
        "radius_mm,std_mm,maxdev_mm\n".into()
    } else {
        s
    }
}

#[derive(Debug, Serialize)]
struct WaypointRow<'a> {
    radius_mm: f64,
    series: &'a str,
    index: usize,
    x_mm: f64,
    y_mm: f64,
    z_mm: f64,
}

/// Plot data: `radius_mm,series,index,x_mm,y_mm,z_mm`, one series for the
/// commanded circle and one per arm.
pub fn trajectories_csv(trials: &[TrajectoryTrial]) -> String {
    let mut rows = Vec::new();
    for t in trials {
        let radius_mm = t.radius * 1e3;
        let series = std::iter::once(("commanded", &t.waypoints))
            .chain(t.executed.iter().map(|(k, v)| (k.as_str(), v)));
        for (name, pts) in series {
            for (index, p) in pts.iter().enumerate() {
                rows.push(WaypointRow {
                    radius_mm,
                    series: name,
                    index,
                    x_mm: p.x * 1e3,
                    y_mm: p.y * 1e3,
                    z_mm: p.z * 1e3,
                });
            }
        }
    }
    let s = csv_string(rows);
    if s.is_empty() {
        "radius_mm,series,index,x_mm,y_mm,z_mm\n".into()
    } else {
        s
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json(value))
}

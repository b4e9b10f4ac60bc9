//! Dataset readers, output writers and the command-line surface.

pub mod cli;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::fit::FitConfig;
use crate::geom::Point;
use crate::prep::{binarize_thin, cluster_strokes, ClusterMethod, InkPolarity, PrepConfig, RasterImage};
use crate::vectorize::to_exact_json;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Sequence,
    Raster,
}

/// One input sketch as polylines.
#[derive(Clone, Debug, PartialEq)]
pub struct SketchRecord {
    pub strokes: Vec<Vec<Point>>,
    pub label: Option<String>,
    pub source: Source,
}

impl SketchRecord {
    /// Sequence order is meaningful only for waypoint data.
    pub fn ordered(&self) -> bool {
        self.source == Source::Sequence
    }
}

/// Records read from an NDJSON file plus the number of skipped lines.
#[derive(Clone, Debug, PartialEq)]
pub struct NdjsonRead {
    pub records: Vec<SketchRecord>,
    pub warnings: Vec<String>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses one `{"drawing": [[xs, ys, ...], ...]}` object.
fn parse_drawing(value: &Value) -> std::result::Result<SketchRecord, String> {
    let drawing = value
        .get("drawing")
        .and_then(Value::as_array)
        .ok_or("missing \"drawing\" array")?;
    let mut strokes = Vec::with_capacity(drawing.len());
    for (k, stroke) in drawing.iter().enumerate() {
        let arr = stroke
            .as_array()
            .filter(|a| a.len() >= 2)
            .ok_or_else(|| format!("stroke {k} is not [xs, ys, ...]"))?;
        let coords = |axis: usize| -> std::result::Result<Vec<f64>, String> {
            arr[axis]
                .as_array()
                .ok_or_else(|| format!("stroke {k} axis {axis} is not an array"))?
                .iter()
                .map(|v| {
                    v.as_f64()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| format!("stroke {k} has a non-numeric coordinate"))
                })
                .collect()
        };
        let (xs, ys) = (coords(0)?, coords(1)?);
        if xs.len() != ys.len() {
            return Err(format!("stroke {k} has {} xs but {} ys", xs.len(), ys.len()));
        }
        if xs.len() >= 2 {
            strokes.push(xs.into_iter().zip(ys).map(|(x, y)| Point::new(x, y)).collect());
        }
    }
    if strokes.is_empty() {
        return Err("no stroke with at least 2 points".into());
    }
    let label = value
        .get("word")
        .or_else(|| value.get("label"))
        .and_then(Value::as_str)
        .map(str::to_owned);
    let source = match value.get("source").and_then(Value::as_str) {
        None | Some("sequence") => Source::Sequence,
        Some("raster") => Source::Raster,
        Some(other) => return Err(format!("unknown source {other:?}")),
    };
    Ok(SketchRecord {
        strokes,
        label,
        source,
    })
}

/// Reads simplified-drawing NDJSON: one object per line with a `"drawing"`
/// list of `[xs, ys]` strokes. Malformed lines are skipped and reported.
pub fn read_ndjson(path: &Path) -> Result<NdjsonRead> {
    parse_ndjson(&read_text(path)?, path)
}

pub fn parse_ndjson(text: &str, path: &Path) -> Result<NdjsonRead> {
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Value>(line)
            .map_err(|e| e.to_string())
            .and_then(|v| parse_drawing(&v));
        match parsed {
            Ok(rec) => records.push(rec),
            Err(msg) => warnings.push(format!("{}:{}: {msg}", path.display(), i + 1)),
        }
    }
    if records.is_empty() {
        return Err(Error::NoRecords {
            path: path.to_path_buf(),
            skipped: warnings.len(),
        });
    }
    Ok(NdjsonRead { records, warnings })
}

#[derive(Deserialize)]
struct PointsDoc {
    strokes: Vec<Vec<Point>>,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    source: Source,
}

/// Reads `{"strokes": [[[x, y], ...], ...]}`.
pub fn read_points_json(path: &Path) -> Result<SketchRecord> {
    let doc: PointsDoc = serde_json::from_str(&read_text(path)?)
        .map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))?;
    let strokes: Vec<Vec<Point>> = doc.strokes.into_iter().filter(|s| s.len() >= 2).collect();
    if strokes.is_empty() || strokes.iter().flatten().any(|p| !p.is_finite()) {
        return Err(Error::Malformed(format!(
            "{}: needs at least one finite stroke with 2 or more points",
            path.display()
        )));
    }
    Ok(SketchRecord {
        strokes,
        label: doc.label,
        source: doc.source,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterOptions {
    pub threshold: u8,
    pub polarity: InkPolarity,
    pub cluster: ClusterMethod,
    /// Spectral cluster count; defaults to the connected-path count.
    pub k_hint: Option<usize>,
}

impl Default for RasterOptions {
    fn default() -> Self {
        RasterOptions {
            threshold: 128,
            polarity: InkPolarity::DarkOnLight,
            cluster: ClusterMethod::Components,
            k_hint: None,
        }
    }
}

pub fn read_raster(path: &Path) -> Result<SketchRecord> {
    read_raster_with(path, &RasterOptions::default())
}

/// PGM → binarize and thin → cluster into ordered polylines, sorted by their
/// leftmost point.
pub fn read_raster_with(path: &Path, opts: &RasterOptions) -> Result<SketchRecord> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = RasterImage::from_pgm(&bytes)?;
    let skeleton = binarize_thin(&img, opts.threshold, opts.polarity);
    if skeleton.is_empty() {
        return Err(Error::EmptyInk(path.display().to_string()));
    }
    let k = match (opts.cluster, opts.k_hint) {
        (_, Some(k)) => k,
        (ClusterMethod::Spectral, None) => {
            cluster_strokes(&skeleton, ClusterMethod::Components, 1)?.len()
        }
        (ClusterMethod::Components, None) => 1,
    };
    let mut strokes: Vec<Vec<Point>> = cluster_strokes(&skeleton, opts.cluster, k)?
        .into_iter()
        .filter(|s| s.len() >= 2)
        .collect();
    if strokes.is_empty() {
        return Err(Error::EmptyInk(format!(
            "{}: no stroke with 2 or more skeleton pixels",
            path.display()
        )));
    }
    strokes.sort_by(|a, b| leftmost(a).partial_cmp(&leftmost(b)).expect("finite points"));
    Ok(SketchRecord {
        strokes,
        label: path.file_stem().map(|s| s.to_string_lossy().into_owned()),
        source: Source::Raster,
    })
}

fn leftmost(stroke: &[Point]) -> (f64, f64) {
    stroke
        .iter()
        .map(|p| (p.x, p.y))
        .fold((f64::INFINITY, f64::INFINITY), |a, b| if b < a { b } else { a })
}

/// Dispatches on extension: `.pgm` raster, `.json` points document,
/// anything else NDJSON.
pub fn read_sketches(path: &Path, raster: &RasterOptions) -> Result<NdjsonRead> {
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "pgm" => Ok(NdjsonRead {
            records: vec![read_raster_with(path, raster)?],
            warnings: Vec::new(),
        }),
        "json" => Ok(NdjsonRead {
            records: vec![read_points_json(path)?],
            warnings: Vec::new(),
        }),
        _ => read_ndjson(path),
    }
}

/// One NDJSON line for `record`, readable by [`read_ndjson`].
pub fn record_to_ndjson(record: &SketchRecord) -> Result<String> {
    #[derive(Serialize)]
    struct Line<'a> {
        #[serde(skip_serializing_if = "Option::is_none")]
        word: Option<&'a str>,
        source: Source,
        drawing: Vec<[Vec<f64>; 2]>,
    }
    let drawing = record
        .strokes
        .iter()
        .map(|s| [s.iter().map(|p| p.x).collect(), s.iter().map(|p| p.y).collect()])
        .collect();
    to_exact_json(&Line {
        word: record.label.as_deref(),
        source: record.source,
        drawing,
    })
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileOutcome {
    pub input: PathBuf,
    pub record: usize,
    pub status: String,
    pub outputs: Vec<PathBuf>,
    pub strokes: usize,
    pub stored_points: usize,
}

/// Everything needed to reproduce a batch run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub inputs: Vec<PathBuf>,
    pub seed: u64,
    pub fit: FitConfig,
    pub prep: PrepConfig,
    pub raster: RasterOptions,
    pub warnings: Vec<String>,
    pub outcomes: Vec<FileOutcome>,
}

impl RunManifest {
    pub fn new(command: &str, inputs: Vec<PathBuf>, fit: FitConfig, prep: PrepConfig, raster: RasterOptions) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            inputs,
            seed: fit.seed,
            fit,
            prep,
            raster,
            warnings: Vec::new(),
            outcomes: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        to_exact_json(self).map(|s| s + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Malformed(format!("manifest: {e}")))
    }
}

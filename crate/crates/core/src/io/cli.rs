//! Command-line argument definitions and command implementations.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use super::{read_sketches, record_to_ndjson, write_file, FileOutcome, RasterOptions, RunManifest, SketchRecord};
use crate::error::{Error, Result};
use crate::fit::{fit_stroke, FitConfig};
use crate::geom::Point;
use crate::losses::{LossBreakdown, LossConfig, LossKind, SliceSet};
use crate::prep::{
    normalize_sketch, prepare_in_frame, prepare_sketch, ClusterMethod, InkPolarity, PrepConfig,
    SketchFrame, StrokeCloud,
};
use crate::vectorize::{
    eval_fit, from_json, length_stats, to_exact_json, to_json, to_svg, vectorize_sketch, EvalMetric,
    ParametricSketch, SvgOptions, VectorizeReport,
};

fn parse_min_usize(s: &str, min: usize) -> std::result::Result<usize, String> {
    let v: usize = s.parse().map_err(|_| format!("expected an integer >= {min}"))?;
    if v < min {
        return Err(format!("must be >= {min}"));
    }
    Ok(v)
}

fn at_least_1(s: &str) -> std::result::Result<usize, String> {
    parse_min_usize(s, 1)
}

fn at_least_2(s: &str) -> std::result::Result<usize, String> {
    parse_min_usize(s, 2)
}

fn finite(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| "expected a number".to_string())?;
    if !v.is_finite() {
        return Err("must be finite".into());
    }
    Ok(v)
}

fn non_negative(s: &str) -> std::result::Result<f64, String> {
    let v = finite(s)?;
    if v < 0.0 {
        return Err("must be >= 0".into());
    }
    Ok(v)
}

fn positive(s: &str) -> std::result::Result<f64, String> {
    let v = finite(s)?;
    if v <= 0.0 {
        return Err("must be > 0".into());
    }
    Ok(v)
}

fn angle(s: &str) -> std::result::Result<f64, String> {
    let v = finite(s)?;
    if !(0.0..=180.0).contains(&v) {
        return Err("must lie in [0, 180]".into());
    }
    Ok(v)
}

#[derive(Debug, Parser)]
#[command(name = "curvecloud", version, about = "Variable-degree Bezier fitting and sketch vectorization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one stroke and emit the fit result and loss trace.
    FitStroke(FitStrokeArgs),
    /// Vectorize sketches into JSON and SVG.
    Vectorize(VectorizeArgs),
    /// Segment a raster image into strokes, written as NDJSON.
    Segment(SegmentArgs),
    /// Mean test loss of a vectorized sketch against ground-truth strokes.
    Eval(EvalArgs),
    /// Control-point histograms over vectorized sketches.
    Stats(StatsArgs),
}

#[derive(Clone, Debug, Args)]
pub struct FitArgs {
    #[arg(long, default_value_t = 9, value_parser = at_least_1)]
    pub max_degree: usize,
    #[arg(long, default_value_t = 128, value_parser = at_least_2)]
    pub granularity: usize,
    #[arg(long, default_value_t = 1e-3, value_parser = non_negative)]
    pub lambda_d: f64,
    #[arg(long, default_value_t = 5e-2, value_parser = non_negative)]
    pub lambda_c: f64,
    #[arg(long, default_value_t = LossKind::Swd)]
    pub loss: LossKind,
    /// Weight of the MSE term under `swd+mse`.
    #[arg(long, default_value_t = 1.0, value_parser = non_negative)]
    pub mse_weight: f64,
    #[arg(long, default_value_t = 64, value_parser = at_least_1)]
    pub slices: usize,
    #[arg(long, default_value_t = 0.1, value_parser = positive)]
    pub tau: f64,
    /// Draw fresh slice directions every iteration.
    #[arg(long)]
    pub resample_slices: bool,
    #[arg(long, default_value_t = 500, value_parser = at_least_1)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.02, value_parser = positive)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Early-stop threshold on total-loss improvement.
    #[arg(long, default_value_t = 1e-8, value_parser = non_negative)]
    pub tol: f64,
    /// Adam steps refining the exported hard-degree curve.
    #[arg(long, default_value_t = 200)]
    pub polish_iters: usize,
}

impl FitArgs {
    pub fn to_config(&self) -> Result<FitConfig> {
        if self.granularity < self.max_degree + 1 {
            return Err(Error::invalid(format!(
                "--granularity ({}) must be >= --max-degree + 1 ({})",
                self.granularity,
                self.max_degree + 1
            )));
        }
        let cfg = FitConfig {
            max_degree: self.max_degree,
            granularity: self.granularity,
            loss: LossConfig {
                kind: self.loss,
                lambda_d: self.lambda_d,
                lambda_c: self.lambda_c,
                mse_weight: self.mse_weight,
                slices: self.slices,
                tau: self.tau,
                resample_slices: self.resample_slices,
            },
            iters: self.iters,
            lr: self.lr,
            seed: self.seed,
            tol: self.tol,
            polish_iters: self.polish_iters,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Args)]
pub struct PrepArgs {
    /// Split strokes at vertices turning by more than this many degrees.
    #[arg(long, default_value_t = 60.0, value_parser = angle)]
    pub angle_thresh: f64,
    #[arg(long, default_value_t = 100, value_parser = at_least_2)]
    pub max_stroke_points: usize,
    /// Simplification tolerance for raster strokes, in input units.
    #[arg(long, default_value_t = 1.0, value_parser = non_negative)]
    pub raster_simplify: f64,
}

impl PrepArgs {
    pub fn to_config(&self, granularity: usize) -> PrepConfig {
        PrepConfig {
            granularity,
            angle_thresh_deg: self.angle_thresh,
            max_stroke_points: self.max_stroke_points,
            raster_simplify_tol: self.raster_simplify,
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct RasterArgs {
    #[arg(long, default_value = "components")]
    pub cluster: ClusterMethod,
    /// Stroke count for spectral clustering; defaults to the path count.
    #[arg(long, value_parser = at_least_1)]
    pub k: Option<usize>,
    /// Ink threshold in 0..=255.
    #[arg(long, default_value_t = 128)]
    pub threshold: u8,
    /// Treat light pixels as ink.
    #[arg(long)]
    pub light_on_dark: bool,
}

impl RasterArgs {
    pub fn to_options(&self) -> RasterOptions {
        RasterOptions {
            threshold: self.threshold,
            polarity: if self.light_on_dark {
                InkPolarity::LightOnDark
            } else {
                InkPolarity::DarkOnLight
            },
            cluster: self.cluster,
            k_hint: self.k,
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct FitStrokeArgs {
    /// NDJSON, points JSON or PGM file.
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub record: usize,
    #[arg(long, default_value_t = 0)]
    pub stroke: usize,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub raster: RasterArgs,
    #[arg(long)]
    pub out_json: Option<PathBuf>,
    /// Loss trace with columns iter,fit,degree_reg,ctrl_reg,total.
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct VectorizeArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub prep: PrepArgs,
    #[command(flatten)]
    pub raster: RasterArgs,
    /// Sketch document path; needs exactly one input sketch.
    #[arg(long)]
    pub out_json: Option<PathBuf>,
    /// SVG path; needs exactly one input sketch.
    #[arg(long)]
    pub out_svg: Option<PathBuf>,
    /// Per-sketch reports as a JSON array.
    #[arg(long)]
    pub out_report: Option<PathBuf>,
    /// Batch output directory: one JSON and SVG per sketch plus a manifest.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Manifest path; defaults to `<out-dir>/manifest.json` in batch mode.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 64, value_parser = at_least_2)]
    pub samples_per_curve: usize,
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub stroke_width: f64,
    /// Emit every curve as a sampled polyline.
    #[arg(long)]
    pub no_exact_low_degree: bool,
}

#[derive(Clone, Debug, Args)]
pub struct SegmentArgs {
    /// PGM image.
    pub input: PathBuf,
    #[command(flatten)]
    pub raster: RasterArgs,
    /// NDJSON output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum MetricArg {
    Swd,
    Mse,
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    /// Sketch document produced by `vectorize`.
    pub sketch: PathBuf,
    /// Ground-truth sketch file (NDJSON, points JSON or PGM).
    pub ground_truth: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub record: usize,
    #[arg(long, value_enum, default_value_t = MetricArg::Swd)]
    pub metric: MetricArg,
    #[arg(long, default_value_t = 128, value_parser = at_least_2)]
    pub granularity: usize,
    #[arg(long, default_value_t = 64, value_parser = at_least_1)]
    pub slices: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub prep: PrepArgs,
    #[command(flatten)]
    pub raster: RasterArgs,
}

#[derive(Clone, Debug, Args)]
pub struct StatsArgs {
    /// Sketch documents produced by `vectorize`.
    #[arg(required = true)]
    pub sketches: Vec<PathBuf>,
    /// Points-per-stroke histogram CSV.
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    /// Points-per-sketch histogram CSV.
    #[arg(long)]
    pub out_sketch_csv: Option<PathBuf>,
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::FitStroke(a) => cmd_fit_stroke(a, out),
        Command::Vectorize(a) => cmd_vectorize(a, out),
        Command::Segment(a) => cmd_segment(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Stats(a) => cmd_stats(a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn select_record(path: &Path, raster: &RasterOptions, index: usize) -> Result<SketchRecord> {
    let mut read = read_sketches(path, raster)?;
    if index >= read.records.len() {
        return Err(Error::invalid(format!(
            "--record {index} is out of range: {} has {} records",
            path.display(),
            read.records.len()
        )));
    }
    Ok(read.records.swap_remove(index))
}

#[derive(Serialize)]
struct FitStrokeDoc<'a> {
    input: &'a Path,
    record: usize,
    stroke: usize,
    degree: usize,
    r: f64,
    raw_degree_param: f64,
    converged: bool,
    degenerate: bool,
    iterations: usize,
    loss_kind: LossKind,
    loss: LossBreakdown,
    frame: SketchFrame,
    offset: Point,
    active_points: &'a [Point],
    control_points: &'a [Point],
    /// The refined hard-degree curve, as exported by `vectorize`.
    curve: &'a [Point],
    curve_loss: LossBreakdown,
    config: &'a FitConfig,
}

/// Loss trace CSV with columns `iter,fit,degree_reg,ctrl_reg,total`.
pub fn trace_csv(trace: &[LossBreakdown]) -> String {
    let mut s = String::from("iter,fit,degree_reg,ctrl_reg,total\n");
    for (i, l) in trace.iter().enumerate() {
        s.push_str(&format!(
            "{i},{:e},{:e},{:e},{:e}\n",
            l.fit_term, l.degree_term, l.ctrl_term, l.total
        ));
    }
    s
}

pub fn cmd_fit_stroke(args: &FitStrokeArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = args.fit.to_config()?;
    let rec = select_record(&args.input, &args.raster.to_options(), args.record)?;
    let line = rec.strokes.get(args.stroke).ok_or_else(|| {
        Error::invalid(format!(
            "--stroke {} is out of range: record has {} strokes",
            args.stroke,
            rec.strokes.len()
        ))
    })?;
    let normalized = normalize_sketch(std::slice::from_ref(line))?;
    let stroke = StrokeCloud::from_polyline(&normalized.strokes[0], cfg.granularity, rec.ordered())
        .or_else(|_| {
            let pts = vec![Point::ORIGIN; cfg.granularity];
            StrokeCloud::new(pts, normalized.strokes[0][0], rec.ordered())
        })?;
    let res = fit_stroke(&stroke, &cfg)?;
    let doc = FitStrokeDoc {
        input: &args.input,
        record: args.record,
        stroke: args.stroke,
        degree: res.degree,
        r: res.degree_param.r(),
        raw_degree_param: res.degree_param.raw(),
        converged: res.converged,
        degenerate: res.degenerate,
        iterations: res.iterations(),
        loss_kind: res.loss_kind,
        loss: res.loss,
        frame: normalized.frame,
        offset: stroke.offset(),
        active_points: res.active_points(),
        control_points: res.polygon.points(),
        curve: &res.curve,
        curve_loss: res.curve_loss,
        config: &cfg,
    };
    let json = to_exact_json(&doc)? + "\n";
    match &args.out_json {
        Some(p) => write_file(p, &json)?,
        None => emit(out, &json)?,
    }
    if let Some(p) = &args.out_csv {
        write_file(p, &trace_csv(&res.trace))?;
    }
    Ok(())
}

/// Output of vectorizing one record.
pub struct Vectorized {
    pub sketch: ParametricSketch,
    pub report: VectorizeReport,
    pub json: String,
    pub svg: String,
}

/// Preprocess, fit and serialize one record.
pub fn vectorize_record(
    rec: &SketchRecord,
    fit: &FitConfig,
    prep: &PrepConfig,
    svg: &SvgOptions,
) -> Result<Vectorized> {
    let prepared = prepare_sketch(&rec.strokes, rec.ordered(), prep)?;
    let (sketch, report) = vectorize_sketch(&prepared.strokes, prepared.frame, fit)?;
    let opts = SvgOptions {
        flip_y: !rec.ordered(),
        ..svg.clone()
    };
    Ok(Vectorized {
        json: to_json(&sketch)? + "\n",
        svg: to_svg(&sketch, &opts)?,
        sketch,
        report,
    })
}

#[derive(Serialize)]
struct ReportEntry<'a> {
    input: &'a Path,
    record: usize,
    label: Option<&'a str>,
    report: &'a VectorizeReport,
}

pub fn cmd_vectorize(args: &VectorizeArgs, out: &mut dyn Write) -> Result<()> {
    let fit = args.fit.to_config()?;
    let prep = args.prep.to_config(fit.granularity);
    prep.validate()?;
    let raster = args.raster.to_options();
    let svg_opts = SvgOptions {
        samples_per_curve: args.samples_per_curve,
        stroke_width: args.stroke_width,
        exact_low_degree: !args.no_exact_low_degree,
        flip_y: false,
    };

    let mut manifest = RunManifest::new("vectorize", args.inputs.clone(), fit.clone(), prep.clone(), raster.clone());
    let mut jobs: Vec<(PathBuf, usize, usize, SketchRecord)> = Vec::new();
    for input in &args.inputs {
        let read = read_sketches(input, &raster)?;
        manifest.warnings.extend(read.warnings);
        let n = read.records.len();
        for (i, rec) in read.records.into_iter().enumerate() {
            jobs.push((input.clone(), i, n, rec));
        }
    }
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    let single = args.out_json.is_some() || args.out_svg.is_some();
    if single && jobs.len() != 1 {
        return Err(Error::invalid(format!(
            "--out-json/--out-svg need exactly one input sketch, got {}; use --out-dir",
            jobs.len()
        )));
    }
    if !single && args.out_dir.is_none() && args.out_report.is_none() {
        return Err(Error::invalid("give --out-json/--out-svg, --out-dir or --out-report"));
    }

    let mut entries = Vec::new();
    let mut results = Vec::new();
    for (input, idx, n, rec) in &jobs {
        let res = vectorize_record(rec, &fit, &prep, &svg_opts);
        let mut outputs = Vec::new();
        let outcome = match &res {
            Ok(v) => {
                if single {
                    if let Some(p) = &args.out_json {
                        write_file(p, &v.json)?;
                        outputs.push(p.clone());
                    }
                    if let Some(p) = &args.out_svg {
                        write_file(p, &v.svg)?;
                        outputs.push(p.clone());
                    }
                } else if let Some(dir) = &args.out_dir {
                    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "sketch".into());
                    let name = if *n > 1 { format!("{stem}-{idx:04}") } else { stem };
                    for (ext, text) in [("json", &v.json), ("svg", &v.svg)] {
                        let p = dir.join(format!("{name}.{ext}"));
                        write_file(&p, text)?;
                        outputs.push(p);
                    }
                }
                emit(
                    out,
                    &format!(
                        "{}#{idx}: strokes={} stored_points={} mean_fit={:e}\n",
                        input.display(),
                        v.sketch.curves.len(),
                        v.report.points_per_sketch,
                        v.report.mean_fit_term
                    ),
                )?;
                FileOutcome {
                    input: input.clone(),
                    record: *idx,
                    status: "ok".into(),
                    outputs,
                    strokes: v.sketch.curves.len(),
                    stored_points: v.report.points_per_sketch,
                }
            }
            Err(e) => {
                eprintln!("error: {}#{idx}: {e}", input.display());
                FileOutcome {
                    input: input.clone(),
                    record: *idx,
                    status: format!("error: {e}"),
                    outputs,
                    strokes: 0,
                    stored_points: 0,
                }
            }
        };
        manifest.outcomes.push(outcome);
        results.push((input, *idx, rec.label.as_deref(), res));
    }
    for (input, record, label, res) in &results {
        if let Ok(v) = res {
            entries.push(ReportEntry {
                input,
                record: *record,
                label: *label,
                report: &v.report,
            });
        }
    }
    if let Some(p) = &args.out_report {
        write_file(p, &(to_exact_json(&entries)? + "\n"))?;
    }
    let manifest_path = args
        .manifest
        .clone()
        .or_else(|| args.out_dir.as_ref().map(|d| d.join("manifest.json")));
    if let Some(p) = manifest_path {
        write_file(&p, &manifest.to_json()?)?;
    }
    let failed = results.iter().filter(|r| r.3.is_err()).count();
    if single && failed > 0 {
        return Err(results.into_iter().find_map(|r| r.3.err()).expect("one failure"));
    }
    if failed == results.len() {
        return Err(Error::invalid("every input sketch failed to vectorize"));
    }
    Ok(())
}

pub fn cmd_segment(args: &SegmentArgs, out: &mut dyn Write) -> Result<()> {
    let rec = super::read_raster_with(&args.input, &args.raster.to_options())?;
    let line = record_to_ndjson(&rec)? + "\n";
    match &args.out {
        Some(p) => write_file(p, &line),
        None => emit(out, &line),
    }
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let text = std::fs::read_to_string(&args.sketch).map_err(|e| Error::io(&args.sketch, e))?;
    let sketch = from_json(&text)?;
    let rec = select_record(&args.ground_truth, &args.raster.to_options(), args.record)?;
    let prep = args.prep.to_config(args.granularity);
    let gt = prepare_in_frame(&rec.strokes, rec.ordered(), sketch.frame, &prep)?;
    let metric = match args.metric {
        MetricArg::Swd => EvalMetric::Swd(SliceSet::random(args.slices, args.seed)?),
        MetricArg::Mse => EvalMetric::Mse,
    };
    let loss = eval_fit(&sketch, &gt.strokes, &metric)?;
    emit(out, &format!("{loss:e}\n"))
}

pub fn cmd_stats(args: &StatsArgs, out: &mut dyn Write) -> Result<()> {
    let sketches: Vec<ParametricSketch> = args
        .sketches
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            from_json(&text)
        })
        .collect::<Result<_>>()?;
    let stats = length_stats(&sketches)?;
    let csv = |h: &std::collections::BTreeMap<usize, usize>| {
        let mut s = String::from("points,count\n");
        for (k, v) in h {
            s.push_str(&format!("{k},{v}\n"));
        }
        s
    };
    let per_stroke = csv(&stats.points_per_stroke);
    let per_sketch = csv(&stats.points_per_sketch);
    match &args.out_csv {
        Some(p) => write_file(p, &per_stroke)?,
        None => emit(out, &format!("# points per stroke\n{per_stroke}"))?,
    }
    match &args.out_sketch_csv {
        Some(p) => write_file(p, &per_sketch)?,
        None => emit(out, &format!("# points per sketch\n{per_sketch}"))?,
    }
    Ok(())
}

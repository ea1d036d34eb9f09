//! Dataset ingestion, run configuration and result files.
//!
//! Input tables are comma-separated with a header row. Every column except
//! the optional label column must be numeric.
//!
//! Output files (all UTF-8, tab-separated, numbers with 12 significant
//! digits):
//!
//! * `report.txt`: one `key<TAB>value` per line. Keys, in order:
//!   `lta`, `k`, `n_source_eval`, `accuracy.<label>`, `count.<label>`,
//!   `transported_mass`, `final_objective`, `outer_iters`, `converged`,
//!   `marginal_residual_source`, `marginal_residual_target`, `epsilon`,
//!   `radius`, `config.<field>` echoes, then `map_converged`. Absent data is
//!   omitted.
//! * `aligned.tsv`: header `dim_0 ... dim_{q-1} label`, one row per source
//!   point in input order (the label column only when labels exist).
//! * `trace.tsv`: header `iteration objective`, iterations counted from 1.
//! * `cost_map.tsv`: header `in_0 ... in_{p-1}`, then the `q` rows of `M`.
//! * `plan_summary.txt`: `key<TAB>value` lines describing the plan.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::evaluation::{EvalReport, SubsampleScheme};
use crate::types::{
    CouplingMatrix, DiscreteMeasure, EntropySpec, LinearCostMap, PointCloud, SolveConfig,
    SolveResult,
};

pub const REPORT_FILE: &str = "report.txt";
pub const ALIGNED_FILE: &str = "aligned.tsv";
pub const TRACE_FILE: &str = "trace.tsv";
pub const COST_MAP_FILE: &str = "cost_map.tsv";
pub const PLAN_SUMMARY_FILE: &str = "plan_summary.txt";

/// Formats `v` with 12 significant digits.
pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.11e}")
    } else {
        // "inf", "-inf", "NaN": all accepted by `str::parse::<f64>`.
        format!("{v}")
    }
}

/// Reads a CSV table into a cloud with uniform weights `1/n`.
pub fn load_dataset(
    path: impl AsRef<Path>,
    label_column: Option<&str>,
) -> Result<(PointCloud, DiscreteMeasure)> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(e, path))?;

    let headers = reader.headers().map_err(|e| csv_error(e, path))?.clone();
    let label_idx = match label_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "label column {name:?} not found in {}",
                        path.display()
                    ))
                })?,
        ),
        None => None,
    };
    let n_features = headers.len() - usize::from(label_idx.is_some());
    if n_features == 0 {
        return Err(Error::EmptyDataset(format!(
            "{} has no feature columns",
            path.display()
        )));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(e, path))?;
        let line = record.position().map_or(n + 2, |p| p.line() as usize);
        for (col, field) in record.iter().enumerate() {
            if Some(col) == label_idx {
                labels.push(field.trim().to_string());
                continue;
            }
            let v: f64 = field.trim().parse().map_err(|_| Error::NonNumericFeature {
                line,
                column: col + 1,
                value: field.to_string(),
            })?;
            values.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyDataset(format!(
            "{} has no data rows",
            path.display()
        )));
    }

    let points = Array2::from_shape_vec((n, n_features), values)
        .expect("csv reader enforces equal record lengths");
    let name = path.file_stem().map_or_else(
        || "dataset".to_string(),
        |s| s.to_string_lossy().into_owned(),
    );
    let cloud = PointCloud::new(points, label_idx.map(|_| labels), name)?;
    let measure = DiscreteMeasure::uniform(n)?;
    Ok((cloud, measure))
}

/// [`load_dataset`] followed by per-column z-scoring when `standardize`.
pub fn load_prepared(
    path: impl AsRef<Path>,
    label_column: Option<&str>,
    standardize: bool,
) -> Result<(PointCloud, DiscreteMeasure)> {
    let (cloud, measure) = load_dataset(path, label_column)?;
    Ok(if standardize {
        (cloud.standardized(), measure)
    } else {
        (cloud, measure)
    })
}

fn csv_error(e: csv::Error, path: &Path) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            Error::FileNotFound(path.to_path_buf())
        }
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => Error::ParseError {
            line,
            column: (*len.min(expected_len) + 1) as usize,
            message: format!("expected {expected_len} fields, found {len}"),
        },
        _ => Error::ParseError {
            line,
            column: 0,
            message: e.to_string(),
        },
    }
}

/// Writes a cloud as CSV (`dim_0, ..., label`), readable by [`load_dataset`].
pub fn write_dataset(cloud: &PointCloud, path: impl AsRef<Path>, label_column: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_io)?;
    let mut header: Vec<String> = (0..cloud.dim()).map(|k| format!("dim_{k}")).collect();
    if cloud.labels().is_some() {
        header.push(label_column.to_string());
    }
    w.write_record(&header).map_err(csv_io)?;
    for i in 0..cloud.len() {
        let mut row: Vec<String> = cloud.point(i).iter().map(|&v| fmt_num(v)).collect();
        if let Some(labels) = cloud.labels() {
            row.push(labels[i].clone());
        }
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// The `lambda` entry of a run config: a positive number or `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lambda(pub f64);

impl Lambda {
    pub fn spec(self) -> Result<EntropySpec> {
        EntropySpec::from_lambda(self.0)
    }
}

impl std::str::FromStr for Lambda {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let v = match t.to_ascii_lowercase().as_str() {
            "inf" | "+inf" | "infinity" => f64::INFINITY,
            _ => t.parse().map_err(|_| {
                Error::Config(format!("lambda must be a number or \"inf\", got {s:?}"))
            })?,
        };
        if !(v > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {s}")));
        }
        Ok(Lambda(v))
    }
}

impl std::fmt::Display for Lambda {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Lambda {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Lambda {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Text(String),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Num(v) => v.to_string(),
            Raw::Int(v) => v.to_string(),
            Raw::Text(s) => s,
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-side subsampling of the loaded data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsampleSpec {
    pub source: Option<SubsampleScheme>,
    pub target: Option<SubsampleScheme>,
}

/// Everything a batch run needs, read from a TOML file.
///
/// `lambda` sets both marginal penalties and overrides `solve.entropy1`/`2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub source_path: PathBuf,
    pub target_path: PathBuf,
    #[serde(default)]
    pub label_column: Option<String>,
    #[serde(default)]
    pub solve: SolveConfig,
    pub lambda: Lambda,
    /// Inner entropic parameter of the map; defaults to `solve.epsilon`.
    #[serde(default)]
    pub inner_epsilon: Option<f64>,
    #[serde(default = "default_k")]
    pub knn_k: usize,
    #[serde(default)]
    pub subsample: Option<SubsampleSpec>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_k() -> usize {
    5
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    /// Parses TOML text. Relative paths are kept as written.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths resolve against its directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        let mut cfg = Self::from_toml_str(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.source_path,
            &mut cfg.target_path,
            &mut cfg.output_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.solve_config()?.validate()?;
        if let Some(e) = self.inner_epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Config(format!(
                    "inner_epsilon must be positive, got {e}"
                )));
            }
        }
        if self.knn_k == 0 {
            return Err(Error::Config("knn_k must be at least 1".into()));
        }
        if let Some(s) = &self.subsample {
            for scheme in [&s.source, &s.target].into_iter().flatten() {
                scheme.validate()?;
            }
        }
        Ok(())
    }

    /// Solver settings with both marginal penalties taken from `lambda`.
    pub fn solve_config(&self) -> Result<SolveConfig> {
        self.solve.clone().with_lambda(self.lambda.0)
    }

    pub fn inner_epsilon(&self) -> f64 {
        self.inner_epsilon.unwrap_or(self.solve.epsilon)
    }

    fn echo(&self) -> Vec<(String, String)> {
        let s = &self.solve;
        vec![
            (
                "config.source_path".into(),
                self.source_path.display().to_string(),
            ),
            (
                "config.target_path".into(),
                self.target_path.display().to_string(),
            ),
            (
                "config.label_column".into(),
                self.label_column.clone().unwrap_or_default(),
            ),
            ("config.lambda".into(), self.lambda.to_string()),
            ("config.epsilon".into(), fmt_num(s.epsilon)),
            ("config.inner_epsilon".into(), fmt_num(self.inner_epsilon())),
            ("config.radius".into(), fmt_num(s.radius)),
            (
                "config.max_outer_iters".into(),
                s.max_outer_iters.to_string(),
            ),
            (
                "config.max_sinkhorn_iters".into(),
                s.max_sinkhorn_iters.to_string(),
            ),
            ("config.sinkhorn_tol".into(), fmt_num(s.sinkhorn_tol)),
            ("config.outer_tol".into(), fmt_num(s.outer_tol)),
            ("config.m_init".into(), format!("{:?}", s.m_init)),
            ("config.standardize".into(), s.standardize.to_string()),
            ("config.knn_k".into(), self.knn_k.to_string()),
        ]
    }
}

/// `key<TAB>value` lines of the report document.
pub fn report_document(
    report: Option<&EvalReport>,
    result: Option<&SolveResult>,
    config: Option<&RunConfig>,
) -> Result<String> {
    let mut entries: Vec<(String, String)> = Vec::new();
    if let Some(r) = report {
        entries.push(("lta".into(), fmt_num(r.lta)));
        if r.n_source_eval > 0 {
            entries.push(("k".into(), r.k.to_string()));
            entries.push(("n_source_eval".into(), r.n_source_eval.to_string()));
        }
        for (label, acc) in &r.per_label_accuracy {
            entries.push((format!("accuracy.{label}"), fmt_num(*acc)));
        }
        for (label, n) in &r.per_label_count {
            entries.push((format!("count.{label}"), n.to_string()));
        }
        if let Some(m) = r.transported_mass {
            entries.push(("transported_mass".into(), fmt_num(m)));
        }
    }
    if let Some(res) = result {
        if report.and_then(|r| r.transported_mass).is_none() {
            entries.push(("transported_mass".into(), fmt_num(res.plan.total_mass())));
        }
        entries.push(("final_objective".into(), fmt_num(res.final_objective())));
        entries.push(("outer_iters".into(), res.outer_iters_used.to_string()));
        entries.push(("converged".into(), res.converged.to_string()));
        entries.push((
            "marginal_residual_source".into(),
            fmt_num(res.marginal_residuals.0),
        ));
        entries.push((
            "marginal_residual_target".into(),
            fmt_num(res.marginal_residuals.1),
        ));
        entries.push(("epsilon".into(), fmt_num(res.epsilon)));
        entries.push(("radius".into(), fmt_num(res.cost_map.radius())));
    }
    if let Some(cfg) = config {
        entries.extend(cfg.echo());
    }

    let mut out = String::new();
    for (k, v) in entries {
        if k.contains(['\t', '\n', '\r']) || v.contains(['\t', '\n', '\r']) {
            return Err(Error::InvalidParameter(format!(
                "report entry {k:?} contains a tab or line break"
            )));
        }
        writeln!(out, "{k}\t{v}").expect("writing to a String");
    }
    Ok(out)
}

/// Parses a `key<TAB>value` document. Later duplicates win.
pub fn parse_document(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('\t').ok_or_else(|| Error::ParseError {
            line: i + 1,
            column: 1,
            message: "expected key<TAB>value".into(),
        })?;
        map.insert(k.to_string(), v.to_string());
    }
    Ok(map)
}

/// Rebuilds the evaluation part of a parsed report document.
pub fn eval_report_from_document(doc: &BTreeMap<String, String>) -> Result<EvalReport> {
    fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| Error::Config(format!("report value for {key} is not numeric: {v:?}")))
    }
    let lta = doc
        .get("lta")
        .ok_or_else(|| Error::Config("report has no lta entry".into()))?;
    let mut per_label_accuracy = BTreeMap::new();
    let mut per_label_count = BTreeMap::new();
    for (k, v) in doc {
        if let Some(label) = k.strip_prefix("accuracy.") {
            per_label_accuracy.insert(label.to_string(), num(k, v)?);
        } else if let Some(label) = k.strip_prefix("count.") {
            per_label_count.insert(label.to_string(), num(k, v)?);
        }
    }
    fn opt<T: std::str::FromStr>(doc: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
        doc.get(key).map(|v| num(key, v)).transpose()
    }
    Ok(EvalReport {
        lta: num("lta", lta)?,
        k: opt(doc, "k")?.unwrap_or(0),
        n_source_eval: opt(doc, "n_source_eval")?.unwrap_or(0),
        per_label_accuracy,
        per_label_count,
        transported_mass: opt(doc, "transported_mass")?,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Points and labels of `cloud` as TSV (see the module docs).
pub fn aligned_table(cloud: &PointCloud) -> String {
    let mut out = (0..cloud.dim())
        .map(|k| format!("dim_{k}"))
        .collect::<Vec<_>>()
        .join("\t");
    if cloud.labels().is_some() {
        out.push_str("\tlabel");
    }
    out.push('\n');
    for i in 0..cloud.len() {
        let row: Vec<String> = cloud.point(i).iter().map(|&v| fmt_num(v)).collect();
        out.push_str(&row.join("\t"));
        if let Some(labels) = cloud.labels() {
            out.push('\t');
            out.push_str(&labels[i]);
        }
        out.push('\n');
    }
    out
}

pub fn trace_table(trace: &[f64]) -> String {
    let mut out = String::from("iteration\tobjective\n");
    for (i, j) in trace.iter().enumerate() {
        writeln!(out, "{}\t{}", i + 1, fmt_num(*j)).expect("writing to a String");
    }
    out
}

pub fn matrix_table(m: ArrayView2<f64>, prefix: &str) -> String {
    let mut out = (0..m.ncols())
        .map(|k| format!("{prefix}_{k}"))
        .collect::<Vec<_>>()
        .join("\t");
    out.push('\n');
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|&v| fmt_num(v)).collect();
        out.push_str(&cells.join("\t"));
        out.push('\n');
    }
    out
}

/// Reads a table written by [`matrix_table`] or [`aligned_table`], numeric
/// columns only.
pub fn read_matrix_table(text: &str) -> Result<Array2<f64>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::EmptyDataset("empty table".into()))?;
    let ncols = header.split('\t').filter(|h| *h != "label").count();
    let mut values = Vec::new();
    let mut nrows = 0;
    for (i, line) in lines.enumerate() {
        for (col, cell) in line.split('\t').take(ncols).enumerate() {
            values.push(cell.parse().map_err(|_| Error::NonNumericFeature {
                line: i + 2,
                column: col + 1,
                value: cell.to_string(),
            })?);
        }
        nrows += 1;
    }
    Array2::from_shape_vec((nrows, ncols), values).map_err(|e| Error::ParseError {
        line: 0,
        column: 0,
        message: e.to_string(),
    })
}

pub fn plan_summary(plan: &CouplingMatrix, result: Option<&SolveResult>) -> String {
    let (n, m) = plan.shape();
    let p = plan.entries();
    let rows = plan.row_marginal();
    let cols = plan.col_marginal();
    let min = |v: ndarray::ArrayView1<f64>| v.fold(f64::INFINITY, |a, &b| a.min(b));
    let max = |v: ndarray::ArrayView1<f64>| v.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut entries = vec![
        ("n_source", n.to_string()),
        ("n_target", m.to_string()),
        ("total_mass", fmt_num(plan.total_mass())),
        ("max_entry", fmt_num(p.fold(0.0, |a: f64, &b| a.max(b)))),
        ("row_marginal_min", fmt_num(min(rows))),
        ("row_marginal_max", fmt_num(max(rows))),
        ("col_marginal_min", fmt_num(min(cols))),
        ("col_marginal_max", fmt_num(max(cols))),
    ];
    if let Some(res) = result {
        entries.push((
            "marginal_residual_source",
            fmt_num(res.marginal_residuals.0),
        ));
        entries.push((
            "marginal_residual_target",
            fmt_num(res.marginal_residuals.1),
        ));
    }
    let mut out = String::new();
    for (k, v) in entries {
        writeln!(out, "{k}\t{v}").expect("writing to a String");
    }
    out
}

/// Files produced by one run. `None` parts are skipped.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunArtifacts<'a> {
    pub result: Option<&'a SolveResult>,
    pub report: Option<&'a EvalReport>,
    pub aligned: Option<&'a PointCloud>,
    pub config: Option<&'a RunConfig>,
    /// Convergence of the inner solve behind the entropic map.
    pub map_converged: Option<bool>,
}

impl RunArtifacts<'_> {
    /// Writes the artifacts into `dir` (created if missing) and returns the
    /// paths written.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: &str, text: String| -> Result<()> {
            let path = dir.join(name);
            write_text(&path, &text)?;
            written.push(path);
            Ok(())
        };
        if self.report.is_some() || self.result.is_some() {
            let mut doc = report_document(self.report, self.result, self.config)?;
            if let Some(c) = self.map_converged {
                doc.push_str(&format!("map_converged\t{c}\n"));
            }
            put(REPORT_FILE, doc)?;
        }
        if let Some(res) = self.result {
            put(TRACE_FILE, trace_table(&res.objective_trace))?;
            put(COST_MAP_FILE, matrix_table(res.cost_map.matrix(), "in"))?;
            put(PLAN_SUMMARY_FILE, plan_summary(&res.plan, Some(res)))?;
        }
        if let Some(cloud) = self.aligned {
            put(ALIGNED_FILE, aligned_table(cloud))?;
        }
        Ok(written)
    }
}

/// Reads back a cost map written as `cost_map.tsv`.
pub fn read_cost_map(path: impl AsRef<Path>, radius: f64) -> Result<LinearCostMap> {
    let text = fs::read_to_string(path.as_ref())?;
    LinearCostMap::new(read_matrix_table(&text)?, radius)
}

//! File formats: dataset CSV, model bundle JSON, and report tables.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compensation::{EnergyLedger, TraceRow};
use crate::dataset::{Dataset, FeatureLayout, Provenance, Sample, Standardizer, Truth};
use crate::error::{Error, Result};
use crate::evaluation::{ConfusionCounts, DragMetrics, EquilibriumRow, RenderingComparison, StiffnessMetrics};
use crate::mixture::{Identification, IterationRecord, MixtureState, TrainingSet};

pub const DATASET_SCHEMA_VERSION: u32 = 1;
pub const BUNDLE_SCHEMA_VERSION: u32 = 1;

const DATASET_MAGIC: &str = "gpmix-dataset";
const BASE_COLUMNS: [&str; 6] = ["t", "theta", "theta_dot", "theta_ddot", "sgn", "tau"];
const TRUTH_COLUMNS: [&str; 2] = ["true_mode", "tau_ext"];

/// A dataset together with the feature layout it is meant to be fitted with.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile {
    pub layout: FeatureLayout,
    pub dataset: Dataset,
}

fn layout_name(layout: FeatureLayout) -> &'static str {
    match layout {
        FeatureLayout::Nominal => "nominal",
        FeatureLayout::WithSign => "with_sign",
    }
}

fn parse_layout(s: &str) -> Result<FeatureLayout> {
    match s {
        "nominal" => Ok(FeatureLayout::Nominal),
        "with_sign" => Ok(FeatureLayout::WithSign),
        _ => Err(Error::Schema(format!("unknown feature layout {s:?}"))),
    }
}

/// Writes the `#` header block and one CSV row per sample. Floats use the
/// shortest representation that parses back to the same bits.
pub fn write_dataset<W: Write>(out: W, file: &DatasetFile) -> Result<()> {
    let d = &file.dataset;
    d.validate()?;
    let mut out = BufWriter::new(out);
    let truth = d.has_truth();
    writeln!(out, "# {DATASET_MAGIC}")?;
    writeln!(out, "# schema_version = {DATASET_SCHEMA_VERSION}")?;
    writeln!(out, "# sample_rate = {}", d.sample_rate)?;
    writeln!(out, "# layout = {}", layout_name(file.layout))?;
    writeln!(out, "# provenance = {}", d.provenance.label())?;
    writeln!(out, "# truth = {truth}")?;
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let mut header: Vec<&str> = BASE_COLUMNS.to_vec();
        if truth {
            header.extend(TRUTH_COLUMNS);
        }
        w.write_record(&header)?;
        for s in &d.samples {
            let mut row = vec![
                s.time.to_string(),
                s.position.to_string(),
                s.velocity.to_string(),
                s.acceleration.to_string(),
                s.sign.to_string(),
                s.torque.to_string(),
            ];
            if let Some(t) = s.truth {
                row.push(t.mode.to_string());
                row.push(t.external_torque.to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    out.flush()?;
    Ok(())
}

fn header_value<'a>(header: &'a [(String, String)], key: &str) -> Result<&'a str> {
    header
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::Schema(format!("dataset header lacks {key:?}")))
}

fn parse_field<T: std::str::FromStr>(s: &str, row: usize, column: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Schema(format!("row {row}, column {column}: cannot parse {s:?}")))
}

pub fn read_dataset<R: Read>(input: R) -> Result<DatasetFile> {
    let mut reader = BufReader::new(input);
    let mut header = Vec::new();
    let mut magic = false;
    let mut body = String::new();
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let Some(comment) = line.strip_prefix('#') else {
            body.push_str(&line);
            break;
        };
        let comment = comment.trim();
        if comment == DATASET_MAGIC {
            magic = true;
        } else if let Some((k, v)) = comment.split_once('=') {
            header.push((k.trim().to_owned(), v.trim().to_owned()));
        }
    }
    reader.read_to_string(&mut body)?;
    if !magic {
        return Err(Error::Schema(format!("missing '# {DATASET_MAGIC}' header line")));
    }
    let version: u32 = parse_field(header_value(&header, "schema_version")?, 0, "schema_version")?;
    if version != DATASET_SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "dataset schema version {version}, expected {DATASET_SCHEMA_VERSION}"
        )));
    }
    let sample_rate: f64 = parse_field(header_value(&header, "sample_rate")?, 0, "sample_rate")?;
    let layout = parse_layout(header_value(&header, "layout")?)?;
    let provenance = Provenance::parse(header_value(&header, "provenance")?)?;
    let truth: bool = parse_field(header_value(&header, "truth")?, 0, "truth")?;

    let mut expected: Vec<&str> = BASE_COLUMNS.to_vec();
    if truth {
        expected.extend(TRUTH_COLUMNS);
    }
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let columns: Vec<String> = rd.headers()?.iter().map(|c| c.trim().to_owned()).collect();
    if columns != expected {
        return Err(Error::Schema(format!("columns {columns:?}, expected {expected:?}")));
    }
    let mut samples = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() != expected.len() {
            return Err(Error::Schema(format!(
                "row {i} has {} fields, expected {}",
                rec.len(),
                expected.len()
            )));
        }
        let f = |j: usize| -> Result<f64> { parse_field(&rec[j], i, expected[j]) };
        samples.push(Sample {
            time: f(0)?,
            position: f(1)?,
            velocity: f(2)?,
            acceleration: f(3)?,
            sign: parse_field(&rec[4], i, "sgn")?,
            torque: f(5)?,
            truth: if truth {
                Some(Truth {
                    mode: parse_field(&rec[6], i, "true_mode")?,
                    external_torque: f(7)?,
                })
            } else {
                None
            },
        });
    }
    let dataset = Dataset::new(sample_rate, provenance, samples)?;
    Ok(DatasetFile { layout, dataset })
}

pub fn save_dataset(path: impl AsRef<Path>, file: &DatasetFile) -> Result<()> {
    write_dataset(File::create(path)?, file)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<DatasetFile> {
    read_dataset(File::open(path)?)
}

/// Everything needed to reuse an identified mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub schema_version: u32,
    /// Hash of the run configuration that produced the bundle.
    pub config_hash: String,
    /// Provenance of the training dataset.
    pub dataset: String,
    pub seed: u64,
    pub standardizer: Standardizer,
    /// Standardized inputs and torques the modes were fitted on.
    pub training: TrainingSet,
    /// Labels, per-mode kernel parameters, Σ_d and π.
    pub state: MixtureState,
    pub trace: Vec<IterationRecord>,
}

impl ModelBundle {
    pub fn new(
        config_hash: String,
        dataset: &Dataset,
        seed: u64,
        standardizer: Standardizer,
        training: TrainingSet,
        id: Identification,
    ) -> Self {
        Self {
            schema_version: BUNDLE_SCHEMA_VERSION,
            config_hash,
            dataset: dataset.provenance.label(),
            seed,
            standardizer,
            training,
            state: id.state,
            trace: id.trace,
        }
    }

    pub fn layout(&self) -> FeatureLayout {
        self.standardizer.layout
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != BUNDLE_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "bundle schema version {}, expected {BUNDLE_SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        let dim = self.layout().dim();
        if self.training.inputs.iter().any(|x| x.len() != dim) {
            return Err(Error::Schema(format!("training inputs are not {dim}-dimensional")));
        }
        self.state.validate(self.training.len())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let b: Self = serde_json::from_str(text)?;
        b.validate()?;
        Ok(b)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// A CSV table preceded by a `# config_hash = …` line.
pub struct Report<W: Write> {
    out: BufWriter<W>,
    columns: usize,
}

impl<W: Write> Report<W> {
    pub fn new(out: W, config_hash: &str, columns: &[&str]) -> Result<Self> {
        let mut out = BufWriter::new(out);
        writeln!(out, "# config_hash = {config_hash}")?;
        writeln!(out, "{}", columns.join(","))?;
        Ok(Self {
            out,
            columns: columns.len(),
        })
    }

    pub fn row<I, T>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = T>,
        T: ToString,
    {
        let fields: Vec<String> = fields.into_iter().map(|f| f.to_string()).collect();
        if fields.len() != self.columns {
            return Err(Error::LengthMismatch(self.columns, fields.len()));
        }
        writeln!(self.out, "{}", fields.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

fn create(dir: &Path, name: &str) -> Result<File> {
    Ok(File::create(dir.join(name))?)
}

/// `true_mode, pred_mode, count` for every cell of the aligned confusion
/// matrix.
pub fn write_classification(dir: &Path, hash: &str, c: &ConfusionCounts) -> Result<()> {
    let mut r = Report::new(create(dir, "classification.csv")?, hash, &["true_mode", "pred_mode", "count"])?;
    for t in 0..c.modes() {
        for p in 0..c.modes() {
            r.row([t, p, c.count(t, p)])?;
        }
    }
    r.finish()
}

/// Per-sample posteriors with the arg-max label.
pub fn write_posteriors(dir: &Path, hash: &str, times: &[f64], posteriors: &[Vec<f64>]) -> Result<()> {
    let k = posteriors.first().map_or(0, Vec::len);
    let mut cols = vec!["t".to_owned()];
    cols.extend((0..k).map(|j| format!("p{j}")));
    cols.push("pred_mode".to_owned());
    let names: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut r = Report::new(create(dir, "posteriors.csv")?, hash, &names)?;
    for (t, p) in times.iter().zip(posteriors) {
        let mut row = vec![t.to_string()];
        row.extend(p.iter().map(f64::to_string));
        row.push(crate::evaluation::argmax(p).to_string());
        r.row(row)?;
    }
    r.finish()
}

pub fn write_trace(dir: &Path, name: &str, hash: &str, rows: &[(&str, &[TraceRow])]) -> Result<()> {
    let mut r = Report::new(
        create(dir, name)?,
        hash,
        &["condition", "t", "theta", "theta_dot", "tau_cmd", "tau_ext"],
    )?;
    for (label, trace) in rows {
        for row in trace.iter() {
            r.row([
                label.to_string(),
                row.time.to_string(),
                row.position.to_string(),
                row.velocity.to_string(),
                row.command.to_string(),
                row.external.to_string(),
            ])?;
        }
    }
    r.finish()
}

/// Paired rows, uncompensated first.
pub fn write_zero_impedance(dir: &Path, hash: &str, z: &RenderingComparison<DragMetrics>) -> Result<()> {
    let mut r = Report::new(
        create(dir, "zero_impedance.csv")?,
        hash,
        &["condition", "rms_torque", "peak_torque", "breakaway_peak"],
    )?;
    for (label, m) in [("uncompensated", z.uncompensated), ("compensated", z.compensated)] {
        r.row([
            label.to_string(),
            m.rms_torque.to_string(),
            m.peak_torque.to_string(),
            m.breakaway_peak.to_string(),
        ])?;
    }
    r.finish()?;
    write_trace(
        dir,
        "zero_impedance_trace.csv",
        hash,
        &[
            ("uncompensated", &z.uncompensated_trace),
            ("compensated", &z.compensated_trace),
        ],
    )
}

pub fn write_stiffness(dir: &Path, hash: &str, s: &RenderingComparison<StiffnessMetrics>) -> Result<()> {
    let mut r = Report::new(
        create(dir, "stiffness.csv")?,
        hash,
        &["condition", "max_deviation", "hysteresis_width", "mean_hysteresis", "rest_error"],
    )?;
    for (label, m) in [("uncompensated", s.uncompensated), ("compensated", s.compensated)] {
        r.row([
            label.to_string(),
            m.max_deviation.to_string(),
            m.hysteresis_width.to_string(),
            m.mean_hysteresis.to_string(),
            m.rest_error.to_string(),
        ])?;
    }
    r.finish()?;
    write_trace(
        dir,
        "stiffness_trace.csv",
        hash,
        &[
            ("uncompensated", &s.uncompensated_trace),
            ("compensated", &s.compensated_trace),
        ],
    )
}

/// Summary row with S₀ and the minimum margin, then the power/energy trace.
pub fn write_passivity(dir: &Path, hash: &str, ledger: &EnergyLedger) -> Result<()> {
    let mut r = Report::new(
        create(dir, "passivity.csv")?,
        hash,
        &["initial_storage", "min_margin", "max_extracted", "final_energy", "tolerance", "passed"],
    )?;
    r.row([
        ledger.initial_storage.to_string(),
        ledger.min_margin.to_string(),
        ledger.max_extracted().to_string(),
        ledger.final_energy().to_string(),
        ledger.tolerance.to_string(),
        ledger.passed().to_string(),
    ])?;
    r.finish()?;
    let mut r = Report::new(create(dir, "power_energy.csv")?, hash, &["t", "power", "energy", "margin"])?;
    for rec in &ledger.records {
        r.row([rec.time, rec.power, rec.energy, ledger.initial_storage + rec.energy])?;
    }
    r.finish()
}

pub fn write_equilibrium(dir: &Path, hash: &str, rows: &[EquilibriumRow]) -> Result<()> {
    let mut r = Report::new(
        create(dir, "equilibrium.csv")?,
        hash,
        &["stiffness", "deflection", "iterations", "converged"],
    )?;
    for row in rows {
        r.row([
            row.stiffness.to_string(),
            row.deflection.to_string(),
            row.iterations.to_string(),
            row.converged.to_string(),
        ])?;
    }
    r.finish()
}

/// Writes any serializable summary as pretty JSON.
pub fn write_summary<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut f = BufWriter::new(create(dir, name)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

/// Reads a summary written by [`write_summary`].
pub fn read_summary<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(truth: bool) -> DatasetFile {
        let samples = (0..5)
            .map(|i| Sample {
                time: i as f64 * 0.05,
                position: 0.1 * i as f64 - 1e-17,
                velocity: -0.0,
                acceleration: 1.0 / 3.0,
                sign: (i as i8 % 3) - 1,
                torque: 2.0f64.sqrt() * 1e-300,
                truth: truth.then_some(Truth {
                    mode: i % 2,
                    external_torque: 0.1 + 0.2,
                }),
            })
            .collect();
        DatasetFile {
            layout: FeatureLayout::Nominal,
            dataset: Dataset::new(20.0, Provenance::Simulator("ab12".into()), samples).unwrap(),
        }
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        for truth in [false, true] {
            let f = tiny(truth);
            let mut buf = Vec::new();
            write_dataset(&mut buf, &f).unwrap();
            let back = read_dataset(buf.as_slice()).unwrap();
            assert_eq!(back, f);
            for (a, b) in back.dataset.samples.iter().zip(&f.dataset.samples) {
                assert_eq!(a.velocity.to_bits(), b.velocity.to_bits());
                assert_eq!(a.torque.to_bits(), b.torque.to_bits());
            }
        }
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let mut buf = Vec::new();
        write_dataset(&mut buf, &tiny(false)).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("schema_version = 1", "schema_version = 7");
        assert!(matches!(read_dataset(text.as_bytes()), Err(Error::Schema(_))));
    }

    #[test]
    fn short_rows_are_rejected() {
        let mut buf = Vec::new();
        write_dataset(&mut buf, &tiny(true)).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        text.push_str("9,0,0,0,0,0\n");
        assert!(read_dataset(text.as_bytes()).is_err());
    }
}

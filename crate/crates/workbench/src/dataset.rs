//! Tabular datasets with a two-line CSV header (column names, then units)
//! and a JSON provenance sidecar.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use triplet_sense::coherent::CoherenceTrace;
use triplet_sense::inference::{OrientationDataset, OrientationPoint, PolarizationScan};
use triplet_sense::photophysics::OdmrSpectrum;
use triplet_sense::spin::{FieldVector, Pair};

use crate::error::{Result, WorkbenchError};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Spectrum,
    Trace,
    Polarization,
    CpmgPoints,
    OrientationPoints,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 5] = [
        DatasetKind::Spectrum,
        DatasetKind::Trace,
        DatasetKind::Polarization,
        DatasetKind::CpmgPoints,
        DatasetKind::OrientationPoints,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Spectrum => "spectrum",
            DatasetKind::Trace => "trace",
            DatasetKind::Polarization => "polarization",
            DatasetKind::CpmgPoints => "cpmg-points",
            DatasetKind::OrientationPoints => "orientation-points",
        }
    }

    pub fn columns(self) -> &'static [&'static str] {
        match self {
            DatasetKind::Spectrum => &["freq_mhz", "contrast"],
            DatasetKind::Trace => &["t_us", "signal"],
            DatasetKind::Polarization => &["angle_deg", "counts"],
            DatasetKind::CpmgPoints => &["n_pulses", "t2_us"],
            DatasetKind::OrientationPoints => &["bx_mt", "by_mt", "bz_mt", "pair", "freq_mhz", "sigma_mhz"],
        }
    }

    pub fn units(self) -> &'static [&'static str] {
        match self {
            DatasetKind::Spectrum => &["MHz", "relative"],
            DatasetKind::Trace => &["us", "relative"],
            DatasetKind::Polarization => &["deg", "counts"],
            DatasetKind::CpmgPoints => &["count", "us"],
            DatasetKind::OrientationPoints => &["mT", "mT", "mT", "label", "MHz", "MHz"],
        }
    }

    /// Index of the text column, if any.
    fn label_column(self) -> Option<usize> {
        (self == DatasetKind::OrientationPoints).then_some(3)
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = WorkbenchError;

    fn from_str(s: &str) -> Result<Self> {
        DatasetKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let valid: Vec<_> = DatasetKind::ALL.iter().map(|k| k.name()).collect();
            WorkbenchError::Usage(format!("unknown dataset kind '{s}' (valid: {})", valid.join(", ")))
        })
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    /// `generator` or `import`.
    pub origin: String,
    pub tool_version: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub config: serde_json::Value,
}

impl Provenance {
    pub fn generator(description: impl Into<String>, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            origin: "generator".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            description: description.into(),
            seed,
            config,
        }
    }

    pub fn import(path: &Path) -> Self {
        Self {
            origin: "import".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            description: format!("read from {}", path.display()),
            seed: None,
            config: serde_json::Value::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numbers(Vec<f64>),
    Pairs(Vec<Pair>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numbers(v) => v.len(),
            Column::Pairs(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn cell(&self, row: usize) -> String {
        match self {
            Column::Numbers(v) => format!("{}", v[row]),
            Column::Pairs(v) => v[row].label().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub columns: Vec<Column>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(kind: DatasetKind, columns: Vec<Column>, provenance: Provenance) -> Result<Self> {
        let d = Self {
            kind,
            columns,
            provenance,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| WorkbenchError::schema(Path::new(self.kind.name()), m);
        if self.columns.len() != self.kind.columns().len() {
            return Err(bad(format!(
                "{} columns given, {} expected",
                self.columns.len(),
                self.kind.columns().len()
            )));
        }
        for (i, c) in self.columns.iter().enumerate() {
            let text = Some(i) == self.kind.label_column();
            if text != matches!(c, Column::Pairs(_)) {
                return Err(bad(format!("column '{}' has the wrong type", self.kind.columns()[i])));
            }
            if c.len() != self.rows() {
                return Err(bad("column lengths differ".into()));
            }
        }
        if self.provenance.origin.is_empty() || self.provenance.description.is_empty() {
            return Err(bad("provenance is empty".into()));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Column::len)
    }

    pub fn numbers(&self, index: usize) -> &[f64] {
        match &self.columns[index] {
            Column::Numbers(v) => v,
            Column::Pairs(_) => panic!("column {index} holds labels"),
        }
    }

    fn xy(kind: DatasetKind, samples: &[(f64, f64)], provenance: Provenance) -> Result<Self> {
        Dataset::new(
            kind,
            vec![
                Column::Numbers(samples.iter().map(|s| s.0).collect()),
                Column::Numbers(samples.iter().map(|s| s.1).collect()),
            ],
            provenance,
        )
    }

    fn pairs_of(&self) -> Vec<(f64, f64)> {
        self.numbers(0).iter().copied().zip(self.numbers(1).iter().copied()).collect()
    }

    fn expect(&self, kind: DatasetKind) -> Result<()> {
        if self.kind != kind {
            return Err(WorkbenchError::Usage(format!("expected a {kind} dataset, got {}", self.kind)));
        }
        Ok(())
    }

    pub fn from_spectrum(s: &OdmrSpectrum, provenance: Provenance) -> Result<Self> {
        Dataset::xy(DatasetKind::Spectrum, &s.samples, provenance)
    }

    pub fn from_trace(t: &CoherenceTrace, provenance: Provenance) -> Result<Self> {
        let samples: Vec<_> = t.times().into_iter().zip(t.signal()).collect();
        Dataset::xy(DatasetKind::Trace, &samples, provenance)
    }

    pub fn from_polarization(s: &PolarizationScan, provenance: Provenance) -> Result<Self> {
        Dataset::xy(DatasetKind::Polarization, &s.samples, provenance)
    }

    pub fn from_cpmg_points(points: &[(f64, f64)], provenance: Provenance) -> Result<Self> {
        Dataset::xy(DatasetKind::CpmgPoints, points, provenance)
    }

    pub fn from_orientation(data: &OrientationDataset, provenance: Provenance) -> Result<Self> {
        let p = &data.points;
        let field = |k: usize| Column::Numbers(p.iter().map(|x| x.field.vector()[k]).collect());
        Dataset::new(
            DatasetKind::OrientationPoints,
            vec![
                field(0),
                field(1),
                field(2),
                Column::Pairs(p.iter().map(|x| x.pair).collect()),
                Column::Numbers(p.iter().map(|x| x.frequency).collect()),
                Column::Numbers(p.iter().map(|x| x.sigma).collect()),
            ],
            provenance,
        )
    }

    pub fn to_spectrum(&self) -> Result<OdmrSpectrum> {
        self.expect(DatasetKind::Spectrum)?;
        Ok(OdmrSpectrum::new(self.pairs_of())?)
    }

    pub fn to_trace(&self) -> Result<CoherenceTrace> {
        self.expect(DatasetKind::Trace)?;
        Ok(CoherenceTrace::new(self.pairs_of())?)
    }

    pub fn to_polarization(&self) -> Result<PolarizationScan> {
        self.expect(DatasetKind::Polarization)?;
        Ok(PolarizationScan::new(self.pairs_of())?)
    }

    pub fn to_cpmg_points(&self) -> Result<Vec<(f64, f64)>> {
        self.expect(DatasetKind::CpmgPoints)?;
        Ok(self.pairs_of())
    }

    pub fn to_orientation(&self) -> Result<OrientationDataset> {
        self.expect(DatasetKind::OrientationPoints)?;
        let Column::Pairs(pairs) = &self.columns[3] else {
            unreachable!("validated column types")
        };
        let points = (0..self.rows())
            .map(|i| {
                Ok(OrientationPoint {
                    field: FieldVector::new(self.numbers(0)[i], self.numbers(1)[i], self.numbers(2)[i])?,
                    pair: pairs[i],
                    frequency: self.numbers(4)[i],
                    sigma: self.numbers(5)[i],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(OrientationDataset::new(points)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.kind.columns().join(","));
        out.push('\n');
        out.push_str(&self.kind.units().join(","));
        out.push('\n');
        for r in 0..self.rows() {
            let cells: Vec<String> = self.columns.iter().map(|c| c.cell(r)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses CSV text of the given kind. Rows are reported by file line.
    pub fn from_csv(kind: DatasetKind, text: &str, path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut records = reader.records();
        let names = kind.columns();
        let mut header = |what: &str| -> Result<Vec<String>> {
            match records.next() {
                Some(Ok(r)) => Ok(r.iter().map(str::to_string).collect()),
                Some(Err(e)) => Err(WorkbenchError::schema(path, format!("unreadable {what} header: {e}"))),
                None => Err(WorkbenchError::schema(path, format!("missing {what} header"))),
            }
        };
        let got = header("column-name")?;
        if got != names {
            return Err(WorkbenchError::schema(
                path,
                format!("expected columns '{}', found '{}'", names.join(","), got.join(",")),
            ));
        }
        let units = header("units")?;
        if units != kind.units() {
            let looks_numeric = units.iter().any(|u| u.parse::<f64>().is_ok());
            let why = if looks_numeric { "missing units header" } else { "unexpected units header" };
            return Err(WorkbenchError::schema(
                path,
                format!("{why}: expected '{}', found '{}'", kind.units().join(","), units.join(",")),
            ));
        }
        let mut numbers: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        let mut pairs = Vec::new();
        for rec in records {
            let rec = rec.map_err(|e| WorkbenchError::Parse {
                path: path.display().to_string(),
                row: e.position().map_or(0, |p| p.line()),
                column: "-".into(),
                message: e.to_string(),
            })?;
            let row = rec.position().map_or(0, |p| p.line());
            let parse_err = |column: &str, message: String| WorkbenchError::Parse {
                path: path.display().to_string(),
                row,
                column: column.into(),
                message,
            };
            if rec.len() != names.len() {
                let column = names.get(rec.len()).unwrap_or(&"-");
                return Err(parse_err(column, format!("{} fields, {} expected", rec.len(), names.len())));
            }
            for (i, cell) in rec.iter().enumerate() {
                if Some(i) == kind.label_column() {
                    pairs.push(cell.parse::<Pair>().map_err(|e| parse_err(names[i], e.to_string()))?);
                    continue;
                }
                let v: f64 = cell
                    .parse()
                    .map_err(|_| parse_err(names[i], format!("'{cell}' is not a number")))?;
                if !v.is_finite() {
                    return Err(parse_err(names[i], format!("'{cell}' is not finite")));
                }
                numbers[i].push(v);
            }
        }
        let columns = numbers
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                if Some(i) == kind.label_column() {
                    Column::Pairs(std::mem::take(&mut pairs))
                } else {
                    Column::Numbers(v)
                }
            })
            .collect();
        let d = Dataset {
            kind,
            columns,
            provenance: Provenance::import(path),
        };
        if d.rows() == 0 {
            return Err(WorkbenchError::schema(path, "no data rows"));
        }
        Ok(d)
    }

    /// Writes `<stem>.csv` and `<stem>.provenance.json`.
    pub fn save(&self, out: &mut io::OutputDir, stem: &str) -> Result<PathBuf> {
        let p = out.write(&format!("{stem}.csv"), self.to_csv().as_bytes())?;
        out.write_json(&format!("{stem}.provenance.json"), &self.provenance)?;
        Ok(p)
    }

    /// Reads a dataset; the provenance sidecar is used when present.
    pub fn load(kind: DatasetKind, path: &Path) -> Result<Self> {
        let text = io::read_to_string(path)?;
        let mut d = Dataset::from_csv(kind, &text, path)?;
        let sidecar = provenance_path(path);
        if sidecar.exists() {
            let raw = io::read_to_string(&sidecar)?;
            d.provenance = serde_json::from_str(&raw)
                .map_err(|e| WorkbenchError::schema(&sidecar, format!("bad provenance: {e}")))?;
        }
        d.validate()?;
        Ok(d)
    }

    /// Reads the kind from the column-name line of a file.
    pub fn sniff_kind(path: &Path) -> Result<DatasetKind> {
        let text = io::read_to_string(path)?;
        let first = text.lines().find(|l| !l.starts_with('#')).unwrap_or("").trim();
        DatasetKind::ALL
            .into_iter()
            .find(|k| k.columns().join(",") == first)
            .ok_or_else(|| WorkbenchError::schema(path, format!("no dataset schema has columns '{first}'")))
    }
}

pub fn provenance_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    csv_path.with_file_name(format!("{stem}.provenance.json"))
}

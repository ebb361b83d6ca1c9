//! SCADA/fault data model, CSV ingestion and logbook labelling.
//!
//! Records live on a uniform 5-minute UTC grid. A tag value is `None` when
//! missing. Logbook fault events are discretized onto the grid with inclusive
//! bounds and concurrent faults are resolved by severity, then by how often
//! each class occurs that day, then by smallest class id.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of SCADA tags per record.
pub const N_TAGS: usize = 11;
/// Grid spacing in seconds.
pub const GRID_STEP_SECS: i64 = 300;
/// Grid samples per calendar day.
pub const SAMPLES_PER_DAY: usize = 288;
/// Label used for normal operation.
pub const NORMAL: u32 = 0;

pub type ClassId = u32;
pub type TagValues = [Option<f64>; N_TAGS];

/// SCADA tags, in the fixed feature-vector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    IDc,
    VDc,
    PDc,
    IAc,
    VAc,
    PAc,
    TInt,
    TMod,
    TAmb,
    Gti,
    Ghi,
}

impl Tag {
    pub const ALL: [Tag; N_TAGS] = [
        Tag::IDc,
        Tag::VDc,
        Tag::PDc,
        Tag::IAc,
        Tag::VAc,
        Tag::PAc,
        Tag::TInt,
        Tag::TMod,
        Tag::TAmb,
        Tag::Gti,
        Tag::Ghi,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Tag::IDc => "i_dc",
            Tag::VDc => "v_dc",
            Tag::PDc => "p_dc",
            Tag::IAc => "i_ac",
            Tag::VAc => "v_ac",
            Tag::PAc => "p_ac",
            Tag::TInt => "t_int",
            Tag::TMod => "t_mod",
            Tag::TAmb => "t_amb",
            Tag::Gti => "gti",
            Tag::Ghi => "ghi",
        }
    }

    pub fn from_name(name: &str) -> Option<Tag> {
        Tag::ALL.into_iter().find(|t| t.name() == name)
    }

    /// Tags that follow the solar cycle and are zero at night.
    pub fn is_periodic(self) -> bool {
        matches!(
            self,
            Tag::IDc | Tag::PDc | Tag::IAc | Tag::PAc | Tag::Gti | Tag::Ghi
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScadaRecord {
    pub timestamp: DateTime<Utc>,
    pub values: TagValues,
}

impl ScadaRecord {
    pub fn missing(timestamp: DateTime<Utc>) -> Self {
        ScadaRecord {
            timestamp,
            values: [None; N_TAGS],
        }
    }

    pub fn get(&self, tag: Tag) -> Option<f64> {
        self.values[tag.index()]
    }

    pub fn set(&mut self, tag: Tag, value: Option<f64>) {
        self.values[tag.index()] = value;
    }

    pub fn n_missing(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    pub fn date(&self) -> NaiveDate {
        self.timestamp.date_naive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultEvent {
    pub class_id: ClassId,
    pub t_start: DateTime<Utc>,
    pub t_end: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyEntry {
    pub class_id: ClassId,
    pub name: String,
    /// Smaller is more severe; equals declaration order.
    pub severity_rank: usize,
}

/// Fault catalog. Declaration order defines severity.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Taxonomy {
    entries: Vec<TaxonomyEntry>,
}

impl Taxonomy {
    pub fn new<S: Into<String>>(classes: impl IntoIterator<Item = (ClassId, S)>) -> Result<Self> {
        let mut entries = Vec::new();
        let mut ids = BTreeSet::new();
        let mut names = BTreeSet::new();
        for (rank, (class_id, name)) in classes.into_iter().enumerate() {
            let name = name.into();
            if class_id == NORMAL {
                return Err(Error::Schema("class_id 0 is reserved for normal operation".into()));
            }
            if !ids.insert(class_id) {
                return Err(Error::Schema(format!("duplicate class_id {class_id}")));
            }
            if !names.insert(name.clone()) {
                return Err(Error::Schema(format!("duplicate class name {name:?}")));
            }
            entries.push(TaxonomyEntry {
                class_id,
                name,
                severity_rank: rank,
            });
        }
        Ok(Taxonomy { entries })
    }

    pub fn entries(&self) -> &[TaxonomyEntry] {
        &self.entries
    }

    pub fn get(&self, class_id: ClassId) -> Option<&TaxonomyEntry> {
        self.entries.iter().find(|e| e.class_id == class_id)
    }

    pub fn contains(&self, class_id: ClassId) -> bool {
        self.get(class_id).is_some()
    }

    /// Matches a logbook class field against names first, then numeric ids.
    pub fn lookup(&self, class: &str) -> Option<&TaxonomyEntry> {
        let class = class.trim();
        self.entries
            .iter()
            .find(|e| e.name == class)
            .or_else(|| class.parse::<ClassId>().ok().and_then(|id| self.get(id)))
    }

    pub fn severity_rank(&self, class_id: ClassId) -> usize {
        self.get(class_id).map_or(usize::MAX, |e| e.severity_rank)
    }
}

/// Inverter electrical datasheet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverterDatasheet {
    pub p_nom_kw: f64,
    pub gamma_pct_per_c: f64,
    pub max_active_power_kw: f64,
    pub tag_ranges: BTreeMap<String, TagRange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TagRange {
    pub min: f64,
    pub max: f64,
}

impl InverterDatasheet {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_nom_kw > 0.0) {
            return Err(Error::Schema("p_nom_kw must be > 0".into()));
        }
        if !(self.max_active_power_kw > 0.0) {
            return Err(Error::Schema("max_active_power_kw must be > 0".into()));
        }
        for (name, r) in &self.tag_ranges {
            if Tag::from_name(name).is_none() {
                return Err(Error::Schema(format!("unknown tag {name:?} in tag_ranges")));
            }
            if !(r.min < r.max) {
                return Err(Error::Schema(format!("range for {name} has min >= max")));
            }
        }
        Ok(())
    }

    pub fn range(&self, tag: Tag) -> Option<TagRange> {
        self.tag_ranges.get(tag.name()).copied()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ds: InverterDatasheet = serde_json::from_str(text)?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// SCADA records with one fault code per timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub records: Vec<ScadaRecord>,
    pub labels: Vec<ClassId>,
}

impl LabeledDataset {
    pub fn new(records: Vec<ScadaRecord>, labels: Vec<ClassId>) -> Result<Self> {
        if records.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} records but {} labels",
                records.len(),
                labels.len()
            )));
        }
        Ok(LabeledDataset { records, labels })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = SCADA_HEADER.to_vec();
        header.push("label");
        wtr.write_record(&header)?;
        for (rec, label) in self.records.iter().zip(&self.labels) {
            let mut row = record_fields(rec);
            row.push(label.to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io("<labeled csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let headers = rdr.headers()?.clone();
        let mut expected: Vec<&str> = SCADA_HEADER.to_vec();
        expected.push("label");
        check_header(&headers, &expected)?;
        let mut records = Vec::new();
        let mut labels = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            let rec = parse_record_row(&row, line)?;
            let label = row[N_TAGS + 1].trim().parse::<ClassId>().map_err(|e| Error::Row {
                line,
                message: format!("bad label: {e}"),
            })?;
            records.push(rec);
            labels.push(label);
        }
        LabeledDataset::new(records, labels)
    }
}

/// SCADA CSV header.
pub const SCADA_HEADER: [&str; N_TAGS + 1] = [
    "timestamp", "i_dc", "v_dc", "p_dc", "i_ac", "v_ac", "p_ac", "t_int", "t_mod", "t_amb", "gti",
    "ghi",
];

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Parses ISO-8601 UTC timestamps (`Z`/offset forms, or naive forms taken as UTC).
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(naive.and_utc());
        }
    }
    None
}

fn format_value(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn record_fields(rec: &ScadaRecord) -> Vec<String> {
    let mut row = Vec::with_capacity(N_TAGS + 2);
    row.push(format_timestamp(&rec.timestamp));
    row.extend(rec.values.iter().map(|v| format_value(*v)));
    row
}

fn check_header(headers: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    for col in expected {
        if !got.contains(col) {
            return Err(Error::Schema(format!("missing column {col:?}")));
        }
    }
    if got != expected {
        return Err(Error::Schema(format!(
            "header must be {:?}, got {:?}",
            expected.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

fn parse_record_row(row: &csv::StringRecord, line: u64) -> Result<ScadaRecord> {
    if row.len() < N_TAGS + 1 {
        return Err(Error::Row {
            line,
            message: format!("expected {} fields, got {}", N_TAGS + 1, row.len()),
        });
    }
    let timestamp = parse_timestamp(&row[0]).ok_or_else(|| Error::Row {
        line,
        message: format!("unparseable timestamp {:?}", &row[0]),
    })?;
    let mut values = [None; N_TAGS];
    for (i, slot) in values.iter_mut().enumerate() {
        let cell = row[i + 1].trim();
        if cell.is_empty() {
            continue;
        }
        let v: f64 = cell.parse().map_err(|_| Error::Row {
            line,
            message: format!("unparseable number {cell:?} in column {}", SCADA_HEADER[i + 1]),
        })?;
        if !v.is_finite() {
            return Err(Error::Row {
                line,
                message: format!("non-finite value in column {}", SCADA_HEADER[i + 1]),
            });
        }
        *slot = Some(v);
    }
    Ok(ScadaRecord { timestamp, values })
}

/// Parses SCADA CSV text, filling grid gaps with all-missing records.
pub fn read_scada_csv<R: Read>(r: R) -> Result<Vec<ScadaRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = rdr.headers()?.clone();
    check_header(&headers, &SCADA_HEADER)?;
    let mut out: Vec<ScadaRecord> = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let rec = parse_record_row(&row, line)?;
        if rec.timestamp.timestamp().rem_euclid(GRID_STEP_SECS) != 0 {
            return Err(Error::Row {
                line,
                message: format!("timestamp {} is off the 5-min grid", format_timestamp(&rec.timestamp)),
            });
        }
        if let Some(last) = out.last() {
            let gap = (rec.timestamp - last.timestamp).num_seconds();
            if gap <= 0 {
                return Err(Error::Row {
                    line,
                    message: "timestamps must be strictly increasing".into(),
                });
            }
            let mut t = last.timestamp;
            for _ in 1..gap / GRID_STEP_SECS {
                t += chrono::Duration::seconds(GRID_STEP_SECS);
                out.push(ScadaRecord::missing(t));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_scada_csv(path: impl AsRef<Path>) -> Result<Vec<ScadaRecord>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_scada_csv(std::io::BufReader::new(f))
}

pub fn write_scada_csv<W: Write>(records: &[ScadaRecord], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(SCADA_HEADER)?;
    for rec in records {
        wtr.write_record(record_fields(rec))?;
    }
    wtr.flush().map_err(|e| Error::io("<scada csv>", e))?;
    Ok(())
}

pub fn read_taxonomy<R: Read>(r: R) -> Result<Taxonomy> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = rdr.headers()?.clone();
    check_header(&headers, &["class_id", "name"])?;
    let mut classes = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let id = row[0].trim().parse::<ClassId>().map_err(|e| Error::Row {
            line,
            message: format!("bad class_id: {e}"),
        })?;
        classes.push((id, row[1].trim().to_string()));
    }
    Taxonomy::new(classes)
}

pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<Taxonomy> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_taxonomy(f)
}

pub fn write_taxonomy<W: Write>(taxonomy: &Taxonomy, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["class_id", "name"])?;
    for e in taxonomy.entries() {
        wtr.write_record([e.class_id.to_string(), e.name.clone()])?;
    }
    wtr.flush().map_err(|e| Error::io("<taxonomy csv>", e))?;
    Ok(())
}

/// A logbook row whose class is not in the taxonomy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnmatchedRow {
    pub line: u64,
    pub class: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LogbookImport {
    pub events: Vec<FaultEvent>,
    pub unmatched: Vec<UnmatchedRow>,
}

pub fn read_logbook<R: Read>(r: R, taxonomy: &Taxonomy) -> Result<LogbookImport> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Ok(LogbookImport::default());
    }
    check_header(&headers, &["class", "t_start", "t_end"])?;
    let mut out = LogbookImport::default();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let parse = |s: &str| {
            parse_timestamp(s).ok_or_else(|| Error::Row {
                line,
                message: format!("unparseable timestamp {s:?}"),
            })
        };
        let t_start = parse(&row[1])?;
        let t_end = parse(&row[2])?;
        if t_start > t_end {
            return Err(Error::Row {
                line,
                message: "t_start is after t_end".into(),
            });
        }
        match taxonomy.lookup(&row[0]) {
            Some(entry) => out.events.push(FaultEvent {
                class_id: entry.class_id,
                t_start,
                t_end,
            }),
            None => out.unmatched.push(UnmatchedRow {
                line,
                class: row[0].to_string(),
            }),
        }
    }
    Ok(out)
}

pub fn load_logbook(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<LogbookImport> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_logbook(f, taxonomy)
}

pub fn write_logbook<W: Write>(events: &[FaultEvent], taxonomy: &Taxonomy, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["class", "t_start", "t_end"])?;
    for ev in events {
        let class = taxonomy
            .get(ev.class_id)
            .map_or_else(|| ev.class_id.to_string(), |e| e.name.clone());
        wtr.write_record([class, format_timestamp(&ev.t_start), format_timestamp(&ev.t_end)])?;
    }
    wtr.flush().map_err(|e| Error::io("<logbook csv>", e))?;
    Ok(())
}

/// Assigns each event to every grid timestamp inside `[t_start, t_end]`.
pub fn discretize_faults(events: &[FaultEvent], grid: &[DateTime<Utc>]) -> Vec<BTreeSet<ClassId>> {
    let mut out = vec![BTreeSet::new(); grid.len()];
    for ev in events {
        let lo = grid.partition_point(|t| *t < ev.t_start);
        let hi = grid.partition_point(|t| *t <= ev.t_end);
        for set in &mut out[lo..hi.max(lo)] {
            set.insert(ev.class_id);
        }
    }
    out
}

/// Picks one class out of a set of concurrent faults.
///
/// Most severe first, then the class seen most often that day, then the
/// smallest class id. Returns `None` only for an empty set.
pub fn resolve_concurrent(
    faults: &BTreeSet<ClassId>,
    taxonomy: &Taxonomy,
    day_class_counts: &HashMap<ClassId, usize>,
) -> Option<ClassId> {
    faults.iter().copied().min_by(|&a, &b| {
        let count = |c| day_class_counts.get(&c).copied().unwrap_or(0);
        taxonomy
            .severity_rank(a)
            .cmp(&taxonomy.severity_rank(b))
            .then(count(b).cmp(&count(a)))
            .then(a.cmp(&b))
    })
}

/// Labels every record with its resolved fault class, or 0 when normal.
///
/// Per-day class counts are the number of grid timestamps of that day at
/// which the class is active.
pub fn label_dataset(
    records: Vec<ScadaRecord>,
    events: &[FaultEvent],
    taxonomy: &Taxonomy,
) -> Result<LabeledDataset> {
    for ev in events {
        if !taxonomy.contains(ev.class_id) {
            return Err(Error::InvalidInput(format!(
                "event class {} not in taxonomy",
                ev.class_id
            )));
        }
    }
    let grid: Vec<DateTime<Utc>> = records.iter().map(|r| r.timestamp).collect();
    let sets = discretize_faults(events, &grid);

    let mut day_counts: HashMap<NaiveDate, HashMap<ClassId, usize>> = HashMap::new();
    for (t, set) in grid.iter().zip(&sets) {
        let day = day_counts.entry(t.date_naive()).or_default();
        for &c in set {
            *day.entry(c).or_default() += 1;
        }
    }
    let empty = HashMap::new();
    let labels = grid
        .iter()
        .zip(&sets)
        .map(|(t, set)| {
            let counts = day_counts.get(&t.date_naive()).unwrap_or(&empty);
            resolve_concurrent(set, taxonomy, counts).unwrap_or(NORMAL)
        })
        .collect();
    LabeledDataset::new(records, labels)
}

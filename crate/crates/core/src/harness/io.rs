//! Spike, truth and event file formats.
//!
//! * Dense CSV: header of 1-based unit ids, then one row of `0`/`1` per step.
//! * Truth CSV: header of unit ids, then `p` rows of `Θ` (row `i` holds the
//!   coefficients of target unit `i`).
//! * Event CSV: `unit_id,event_time` rows with 1-based ids and times ≥ 0;
//!   a non-numeric first row is treated as a header.

use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SpikeData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpikeFormat {
    EventCsv,
    DenseCsv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeFileFormat {
    pub format: SpikeFormat,
    /// Time units per grid step (event files only).
    pub bin_width: f64,
}

impl SpikeFileFormat {
    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(Error::InvalidParameter(format!("bin width must be positive, got {}", self.bin_width)));
        }
        Ok(())
    }
}

fn header(p: usize) -> String {
    (1..=p).map(|k| k.to_string()).collect::<Vec<_>>().join(",")
}

pub fn write_dense_csv<W: Write>(spikes: &SpikeData, mut out: W) -> Result<()> {
    let mut buf = String::with_capacity(spikes.steps() * (2 * spikes.units() + 1) + 64);
    buf.push_str(&header(spikes.units()));
    buf.push('\n');
    for row in spikes.events().rows() {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                buf.push(',');
            }
            buf.push(if *v == 1 { '1' } else { '0' });
        }
        buf.push('\n');
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

fn check_header(record: &csv::StringRecord) -> Result<usize> {
    for (k, field) in record.iter().enumerate() {
        let id: usize = field
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("header field {field:?} is not a unit id")))?;
        if id != k + 1 {
            return Err(Error::Parse(format!("header expects unit id {} at column {}, found {id}", k + 1, k + 1)));
        }
    }
    Ok(record.len())
}

pub fn read_dense_csv<R: Read>(input: R) -> Result<SpikeData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let p = check_header(rdr.headers()?)?;
    if p == 0 {
        return Err(Error::Parse("spike file has no units".into()));
    }
    let mut data = Vec::new();
    let mut steps = 0;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != p {
            return Err(Error::Parse(format!("row {} has {} fields, expected {p}", line + 1, rec.len())));
        }
        for field in rec.iter() {
            match field.trim() {
                "0" => data.push(0u8),
                "1" => data.push(1u8),
                other => return Err(Error::Parse(format!("row {}: entry {other:?} is not 0 or 1", line + 1))),
            }
        }
        steps += 1;
    }
    if steps == 0 {
        return Err(Error::Parse("spike file has no rows".into()));
    }
    let events = Array2::from_shape_vec((steps, p), data).map_err(|e| Error::Parse(e.to_string()))?;
    SpikeData::new(events)
}

pub fn write_truth_csv<W: Write>(theta: &Array2<f64>, mut out: W) -> Result<()> {
    let mut buf = header(theta.ncols());
    buf.push('\n');
    for row in theta.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        buf.push_str(&line.join(","));
        buf.push('\n');
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

pub fn read_truth_csv<R: Read>(input: R) -> Result<Array2<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let p = check_header(rdr.headers()?)?;
    let mut data = Vec::with_capacity(p * p);
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != p {
            return Err(Error::Parse(format!("truth row {} has {} fields, expected {p}", rows + 1, rec.len())));
        }
        for f in rec.iter() {
            data.push(f.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad coefficient {f:?}")))?);
        }
        rows += 1;
    }
    if rows != p {
        return Err(Error::Parse(format!("truth matrix has {rows} rows, expected {p}")));
    }
    Array2::from_shape_vec((p, p), data).map_err(|e| Error::Parse(e.to_string()))
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    pub events: usize,
    pub units: usize,
    pub steps: usize,
    /// Events that landed in an already occupied bin.
    pub collisions: usize,
    pub collision_rate: f64,
    /// Events past the last bin when the number of steps is fixed.
    pub out_of_range: usize,
}

/// Bin `(unit_id, time)` events onto the unit grid: step `t` (1-based)
/// covers `[(t−1)·w, t·w)`. `units` and `steps` default to the largest id
/// and the last occupied bin.
pub fn ingest_events<R: Read>(
    input: R,
    bin_width: f64,
    units: Option<usize>,
    steps: Option<usize>,
) -> Result<(SpikeData, IngestReport)> {
    SpikeFileFormat {
        format: SpikeFormat::EventCsv,
        bin_width,
    }
    .validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);

    let mut parsed: Vec<(usize, usize)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rec.len() != 2 {
            return Err(Error::Parse(format!("event row {} has {} fields, expected 2", line + 1, rec.len())));
        }
        let unit = rec[0].parse::<usize>();
        let time = rec[1].parse::<f64>();
        let (unit, time) = match (unit, time) {
            (Ok(u), Ok(t)) => (u, t),
            _ if line == 0 => continue,
            _ => return Err(Error::Parse(format!("event row {} is malformed: {:?}", line + 1, rec))),
        };
        if unit == 0 {
            return Err(Error::Parse(format!("event row {}: unit ids start at 1", line + 1)));
        }
        if !(time >= 0.0 && time.is_finite()) {
            return Err(Error::Parse(format!("event row {}: time {time} must be finite and >= 0", line + 1)));
        }
        parsed.push((unit - 1, (time / bin_width).floor() as usize));
    }

    let max_unit = parsed.iter().map(|e| e.0 + 1).max();
    let p = match (units, max_unit) {
        (Some(p), Some(m)) if m > p => {
            return Err(Error::Parse(format!("unit id {m} exceeds the declared {p} units")));
        }
        (Some(p), _) => p,
        (None, Some(m)) => m,
        (None, None) => return Err(Error::Parse("no events and no unit count given".into())),
    };
    let t = match (steps, parsed.iter().map(|e| e.1 + 1).max()) {
        (Some(t), _) => t,
        (None, Some(t)) => t,
        (None, None) => return Err(Error::Parse("no events and no step count given".into())),
    };

    let mut events = Array2::<u8>::zeros((t, p));
    let mut collisions = 0;
    let mut out_of_range = 0;
    for &(u, bin) in &parsed {
        if bin >= t {
            out_of_range += 1;
            continue;
        }
        if events[[bin, u]] == 1 {
            collisions += 1;
        } else {
            events[[bin, u]] = 1;
        }
    }
    let n = parsed.len();
    let report = IngestReport {
        events: n,
        units: p,
        steps: t,
        collisions,
        collision_rate: if n > 0 { collisions as f64 / n as f64 } else { 0.0 },
        out_of_range,
    };
    Ok((SpikeData::new(events)?, report))
}

//! On-disk form of an [`EmissionRecord`]: a CSV of `jump_time,pulse_index`
//! rows (index empty under continuous drive) and a JSON metadata sidecar.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{EmissionRecord, PulseSchedule};
use crate::error::{Error, Result};
use crate::quantum::VSystemParams;

const HEADER: [&str; 2] = ["jump_time", "pulse_index"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub params: VSystemParams,
    pub schedule: PulseSchedule,
    pub seed: u64,
    pub stream: u64,
    pub total_duration: f64,
    pub n_jumps: usize,
}

#[derive(Serialize, Deserialize)]
struct Row {
    jump_time: f64,
    pulse_index: Option<usize>,
}

pub fn write_record_csv<W: Write>(record: &EmissionRecord, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(HEADER)?;
    for (t, k) in record.jump_times.iter().zip(&record.pulse_index) {
        w.serialize(Row {
            jump_time: *t,
            pulse_index: *k,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Parses the CSV part only; rows must be strictly increasing in time.
pub fn read_record_csv<R: Read>(input: R) -> Result<(Vec<f64>, Vec<Option<usize>>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut rows = r.records();
    match rows.next() {
        Some(h) => {
            let h = h?;
            if h.iter().collect::<Vec<_>>() != HEADER {
                return Err(Error::Parse(format!("unexpected record header {h:?}")));
            }
        }
        None => return Err(Error::Parse("empty record file".into())),
    }
    let mut times = Vec::new();
    let mut index = Vec::new();
    for (line, row) in rows.enumerate() {
        let row = row.map_err(|e| Error::Parse(format!("row {}: {e}", line + 2)))?;
        if row.len() != 2 {
            return Err(Error::Parse(format!("row {}: expected 2 fields", line + 2)));
        }
        let t: f64 = row[0]
            .parse()
            .map_err(|e| Error::Parse(format!("row {}: jump_time: {e}", line + 2)))?;
        let k = match &row[1] {
            "" => None,
            s => Some(
                s.parse::<usize>()
                    .map_err(|e| Error::Parse(format!("row {}: pulse_index: {e}", line + 2)))?,
            ),
        };
        if !t.is_finite() || times.last().is_some_and(|last| t <= *last) {
            return Err(Error::Parse(format!("row {}: jump times must increase", line + 2)));
        }
        times.push(t);
        index.push(k);
    }
    Ok((times, index))
}

pub fn record_meta(record: &EmissionRecord) -> RecordMeta {
    RecordMeta {
        params: record.params,
        schedule: record.schedule.clone(),
        seed: record.seed,
        stream: record.stream,
        total_duration: record.total_duration(),
        n_jumps: record.len(),
    }
}

/// Writes the CSV to `csv_out` and the sidecar to `meta_out`.
pub fn write_record<W1: Write, W2: Write>(record: &EmissionRecord, csv_out: W1, mut meta_out: W2) -> Result<()> {
    write_record_csv(record, csv_out)?;
    serde_json::to_writer_pretty(&mut meta_out, &record_meta(record))?;
    meta_out.write_all(b"\n")?;
    Ok(())
}

pub fn read_record<R1: Read, R2: Read>(csv_in: R1, meta_in: R2) -> Result<EmissionRecord> {
    let (jump_times, pulse_index) = read_record_csv(csv_in)?;
    let meta: RecordMeta =
        serde_json::from_reader(meta_in).map_err(|e| Error::Parse(format!("record metadata: {e}")))?;
    if meta.n_jumps != jump_times.len() {
        return Err(Error::Parse(format!(
            "metadata lists {} jumps, CSV has {}",
            meta.n_jumps,
            jump_times.len()
        )));
    }
    let record = EmissionRecord {
        jump_times,
        pulse_index,
        params: meta.params,
        schedule: meta.schedule,
        seed: meta.seed,
        stream: meta.stream,
    };
    record.validate().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jump::{run_continuous, run_trajectory, RunLength};

    fn round_trip(rec: &EmissionRecord) -> EmissionRecord {
        let mut csv = Vec::new();
        let mut meta = Vec::new();
        write_record(rec, &mut csv, &mut meta).unwrap();
        read_record(csv.as_slice(), meta.as_slice()).unwrap()
    }

    #[test]
    fn records_round_trip_exactly() {
        let p = VSystemParams::new(1.0, 40.0, 20.0).unwrap();
        let sched = PulseSchedule::new(1.0, 1.0, RunLength::Pulses(30)).unwrap();
        let rec = run_trajectory(&p, &sched, 5, 1).unwrap();
        assert_eq!(round_trip(&rec), rec);
        let cont = run_continuous(&p, 50.0, 5, 2).unwrap();
        assert_eq!(round_trip(&cont), cont);

        let mut csv = Vec::new();
        write_record_csv(&cont, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("jump_time,pulse_index"));
        assert!(lines.next().unwrap().ends_with(','));
    }

    #[test]
    fn corrupted_csv_is_a_parse_error() {
        let bad = "jump_time,pulse_index\n0.5,0\nabc,1\n";
        assert!(matches!(read_record_csv(bad.as_bytes()), Err(Error::Parse(_))));
        let unordered = "jump_time,pulse_index\n0.5,0\n0.4,0\n";
        assert!(matches!(read_record_csv(unordered.as_bytes()), Err(Error::Parse(_))));
        let header = "time,pulse\n0.5,0\n";
        assert!(matches!(read_record_csv(header.as_bytes()), Err(Error::Parse(_))));
        assert!(matches!(read_record_csv("".as_bytes()), Err(Error::Parse(_))));
    }
}

//! Record lists: the unit of dataset enumeration, plus worker sharding.

use super::{DataError, Result};
use std::path::Path;

/// Classification target: a single class index or a multi-hot index set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Label {
    Index(usize),
    MultiHot(Vec<usize>),
}

impl Label {
    /// Largest class index referenced by the label.
    pub fn max_index(&self) -> usize {
        match self {
            Label::Index(i) => *i,
            Label::MultiHot(v) => v.iter().copied().max().unwrap_or(0),
        }
    }
}

/// One enumerable video: a media path (file or frame directory), its label,
/// and an optional known duration.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVideoRecord {
    pub data_path: String,
    pub label: Label,
    pub duration_sec: Option<f64>,
}

impl LabeledVideoRecord {
    pub fn new(data_path: impl Into<String>, label: Label) -> Self {
        LabeledVideoRecord {
            data_path: data_path.into(),
            label,
            duration_sec: None,
        }
    }
}

/// Parses one record line: `path,label[,duration_sec]` (UTF-8, no header),
/// with the whitespace-separated variant of UCF/Kinetics-style lists also
/// accepted. Multi-hot labels are `;`-joined indices.
pub fn parse_record_line(line: &str) -> Result<LabeledVideoRecord> {
    let line = line.trim();
    if line.is_empty() {
        return Err(DataError::Format("empty record line".into()));
    }
    let fields: Vec<&str> = if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    };
    if fields.len() < 2 || fields.len() > 3 {
        return Err(DataError::Format(format!(
            "expected `path,label[,duration]`, got {line:?}"
        )));
    }
    if fields[0].is_empty() {
        return Err(DataError::Format("record path is empty".into()));
    }
    let label = if fields[1].contains(';') {
        let indices = fields[1]
            .split(';')
            .map(|s| {
                s.trim().parse::<usize>().map_err(|_| {
                    DataError::Format(format!("bad multi-hot label component {s:?}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Label::MultiHot(indices)
    } else {
        Label::Index(fields[1].parse::<usize>().map_err(|_| {
            DataError::Format(format!("bad label {:?} in {line:?}", fields[1]))
        })?)
    };
    let duration_sec = match fields.get(2) {
        Some(s) => Some(s.parse::<f64>().map_err(|_| {
            DataError::Format(format!("bad duration {s:?} in {line:?}"))
        })?),
        None => None,
    };
    Ok(LabeledVideoRecord {
        data_path: fields[0].to_string(),
        label,
        duration_sec,
    })
}

/// Reads a whole record-list file. Labels are checked against the class
/// count when one is supplied.
pub fn parse_record_list(path: &Path, num_classes: Option<usize>) -> Result<Vec<LabeledVideoRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DataError::Path(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_record_line(line)
            .map_err(|e| DataError::Format(format!("line {}: {e}", lineno + 1)))?;
        if let Some(n) = num_classes {
            if rec.label.max_index() >= n {
                return Err(DataError::Format(format!(
                    "line {}: label {} outside class count {}",
                    lineno + 1,
                    rec.label.max_index(),
                    n
                )));
            }
        }
        records.push(rec);
    }
    Ok(records)
}

/// Contiguous near-even partition for parallel loading: shards are disjoint,
/// cover all records, and differ in size by at most one.
pub fn shard_for_worker<T: Clone>(records: &[T], worker_id: usize, num_workers: usize) -> Result<Vec<T>> {
    if num_workers == 0 || worker_id >= num_workers {
        return Err(DataError::Config(format!(
            "worker_id {worker_id} out of range for {num_workers} workers"
        )));
    }
    let n = records.len();
    let base = n / num_workers;
    let rem = n % num_workers;
    let size = base + usize::from(worker_id < rem);
    let start = worker_id * base + worker_id.min(rem);
    Ok(records[start..start + size].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_csv_and_space_variants() {
        let a = parse_record_line("clips/v1,3,4.5").unwrap();
        assert_eq!(a.data_path, "clips/v1");
        assert_eq!(a.label, Label::Index(3));
        assert_eq!(a.duration_sec, Some(4.5));

        let b = parse_record_line("clips/v2 7").unwrap();
        assert_eq!(b.label, Label::Index(7));
        assert_eq!(b.duration_sec, None);

        let c = parse_record_line("clips/v3,1;4;9").unwrap();
        assert_eq!(c.label, Label::MultiHot(vec![1, 4, 9]));
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(parse_record_line("").is_err());
        assert!(parse_record_line("only_path").is_err());
        assert!(parse_record_line("p,notanint").is_err());
        assert!(parse_record_line("p,1,2,3").is_err());
    }

    #[test]
    fn sharding_partitions_evenly() {
        let records: Vec<usize> = (0..10).collect();
        let s0 = shard_for_worker(&records, 0, 2).unwrap();
        let s1 = shard_for_worker(&records, 1, 2).unwrap();
        assert_eq!(s0.len(), 5);
        assert_eq!(s1.len(), 5);

        let sizes: Vec<usize> = (0..3)
            .map(|w| shard_for_worker(&records, w, 3).unwrap().len())
            .collect();
        assert_eq!(sizes, vec![4, 3, 3]);

        let all = shard_for_worker(&records, 0, 1).unwrap();
        assert_eq!(all, records);
    }

    #[test]
    fn shards_are_disjoint_and_cover() {
        let records: Vec<usize> = (0..23).collect();
        for workers in 1..8 {
            let mut seen = Vec::new();
            for w in 0..workers {
                seen.extend(shard_for_worker(&records, w, workers).unwrap());
            }
            assert_eq!(seen, records, "workers = {workers}");
        }
    }

    #[test]
    fn bad_worker_ids_rejected() {
        let records = [1, 2, 3];
        assert!(shard_for_worker(&records, 2, 2).is_err());
        assert!(shard_for_worker(&records, 0, 0).is_err());
    }
}

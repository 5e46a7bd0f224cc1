//! IMU sidecar ingestion.
//!
//! Sidecars are CSV files with the header `t,ax,ay,az,gx,gy,gz` — seconds
//! plus SI accelerometer/gyroscope readings.

use super::{DataError, Result};
use ndarray::Array2;
use std::path::Path;

const HEADER: &str = "t,ax,ay,az,gx,gy,gz";

/// Loads the rows whose timestamp lies in `[start_sec, end_sec)`, sorted by
/// time. A window past the recording returns an empty 0x6 series.
pub fn load_imu_sidecar(path: &Path, window: (f64, f64)) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DataError::Path(format!("{}: {e}", path.display())))?;
    parse_imu(&text, window)
}

pub(crate) fn parse_imu(text: &str, window: (f64, f64)) -> Result<Array2<f64>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| DataError::Format("empty IMU sidecar".into()))?;
    if header.trim().replace(' ', "") != HEADER {
        return Err(DataError::Format(format!(
            "bad IMU header {header:?}, expected {HEADER:?}"
        )));
    }
    let (start, end) = window;
    let mut rows: Vec<[f64; 7]> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(DataError::Format(format!(
                "IMU row {} has {} fields, expected 7",
                lineno + 2,
                fields.len()
            )));
        }
        let mut row = [0.0f64; 7];
        for (i, f) in fields.iter().enumerate() {
            row[i] = f.parse::<f64>().map_err(|_| {
                DataError::Format(format!("IMU row {}: bad number {f:?}", lineno + 2))
            })?;
        }
        if row[0] >= start && row[0] < end {
            rows.push(row);
        }
    }
    rows.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
    let mut out = Array2::zeros((rows.len(), 6));
    for (i, row) in rows.iter().enumerate() {
        for j in 0..6 {
            out[[i, j]] = row[j + 1];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sidecar(hz: usize, seconds: f64) -> String {
        let mut s = String::from("t,ax,ay,az,gx,gy,gz\n");
        let n = (hz as f64 * seconds) as usize;
        for i in 0..n {
            let t = i as f64 / hz as f64;
            s.push_str(&format!("{t},{},{},{},{},{},{}\n", 0.1, 0.2, 9.8, 0.0, 0.0, 0.01));
        }
        s
    }

    #[test]
    fn full_window_returns_all_rows() {
        let text = sidecar(50, 2.0);
        let out = parse_imu(&text, (0.0, 10.0)).unwrap();
        assert_eq!(out.dim(), (100, 6));
        assert_eq!(out[[0, 2]], 9.8);
    }

    #[test]
    fn window_past_recording_is_empty_not_error() {
        let text = sidecar(50, 2.0);
        let out = parse_imu(&text, (5.0, 6.0)).unwrap();
        assert_eq!(out.dim(), (0, 6));
    }

    #[test]
    fn hundred_hz_one_second_window() {
        let text = sidecar(100, 3.0);
        let out = parse_imu(&text, (1.0, 2.0)).unwrap();
        assert_eq!(out.nrows(), 100);
    }

    #[test]
    fn format_errors() {
        assert!(parse_imu("time,ax,ay,az,gx,gy,gz\n", (0.0, 1.0)).is_err());
        assert!(parse_imu("t,ax,ay,az,gx,gy,gz\n0.0,1,2,3\n", (0.0, 1.0)).is_err());
        assert!(parse_imu("t,ax,ay,az,gx,gy,gz\n0.0,a,b,c,d,e,f\n", (0.0, 1.0)).is_err());
    }
}

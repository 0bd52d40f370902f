//! CSV emission with a reproducibility contract: re-running a config yields
//! byte-identical output except for the timestamp header line and the
//! wall-clock column (the last column, so it strips trivially).

use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::config::CliResult;

pub const COLUMNS: [&str; 14] = [
    "command",
    "preset",
    "param_json",
    "t",
    "x_json",
    "T",
    "n_paths",
    "n_steps",
    "dt",
    "seed",
    "estimate",
    "stderr",
    "extra_json",
    "wall_ms",
];

/// One emitted result row. Scalar floats are rendered with 17 significant
/// digits (round-trip exact for f64); list-valued cells are JSON-encoded.
#[derive(Debug, Clone)]
pub struct Row {
    pub command: &'static str,
    pub preset: String,
    pub param_json: String,
    pub t: f64,
    pub x_json: String,
    pub t_end: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub seed: u64,
    pub estimate: f64,
    pub stderr: Option<f64>,
    pub extra_json: String,
    pub wall_ms: u128,
}

/// 17 significant digits: enough to reproduce any f64 bit pattern exactly.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

impl Row {
    fn record(&self) -> [String; 14] {
        [
            self.command.to_string(),
            self.preset.clone(),
            self.param_json.clone(),
            fmt_float(self.t),
            self.x_json.clone(),
            fmt_float(self.t_end),
            self.n_paths.to_string(),
            self.n_steps.to_string(),
            fmt_float(self.dt),
            self.seed.to_string(),
            fmt_float(self.estimate),
            self.stderr.map(fmt_float).unwrap_or_default(),
            self.extra_json.clone(),
            self.wall_ms.to_string(),
        ]
    }
}

/// Writes the full artifact: comment header with version and timestamp,
/// column header, then one line per row.
pub fn write_csv(out: &mut dyn Write, timestamp: &str, rows: &[Row]) -> CliResult<()> {
    writeln!(out, "# ito-lab v{} {timestamp}", env!("CARGO_PKG_VERSION"))?;
    let mut writer = csv::Writer::from_writer(out);
    writer
        .write_record(COLUMNS)
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    for row in rows {
        writer
            .write_record(row.record())
            .map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    writer
        .flush()
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(())
}

/// Current time as an ISO 8601 UTC stamp (`2026-01-31T09:15:02Z`).
pub fn iso8601_now() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    iso8601_from_unix(secs)
}

fn iso8601_from_unix(secs: u64) -> String {
    let days = secs / 86_400;
    let rem = secs % 86_400;
    let (hh, mm, ss) = (rem / 3600, (rem % 3600) / 60, rem % 60);
    let (y, m, d) = civil_from_days(days as i64);
    format!("{y:04}-{m:02}-{d:02}T{hh:02}:{mm:02}:{ss:02}Z")
}

/// Proleptic Gregorian date from days since 1970-01-01 (the classic
/// era-based conversion used by most calendar libraries).
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_render_with_seventeen_significant_digits() {
        let s = fmt_float(std::f64::consts::PI);
        assert_eq!(s, "3.1415926535897931e0");
        assert_eq!(s.parse::<f64>().unwrap(), std::f64::consts::PI);
        // Round-trip exactness on awkward values.
        for v in [f64::MIN_POSITIVE, 0.1, 1e300, -2.5e-17] {
            assert_eq!(fmt_float(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn unix_conversion_matches_known_dates() {
        assert_eq!(iso8601_from_unix(0), "1970-01-01T00:00:00Z");
        assert_eq!(iso8601_from_unix(951_782_400), "2000-02-29T00:00:00Z");
        assert_eq!(iso8601_from_unix(1_700_000_000), "2023-11-14T22:13:20Z");
    }

    #[test]
    fn csv_quotes_json_cells() {
        let row = Row {
            command: "simulate",
            preset: "gbm".to_string(),
            param_json: r#"{"beta":0.1,"gamma":0.2}"#.to_string(),
            t: 0.0,
            x_json: "[1.0]".to_string(),
            t_end: 1.0,
            n_paths: 10,
            n_steps: 8,
            dt: 0.125,
            seed: 7,
            estimate: 1.5,
            stderr: None,
            extra_json: "{}".to_string(),
            wall_ms: 3,
        };
        let mut buf = Vec::new();
        write_csv(&mut buf, "2026-01-01T00:00:00Z", &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# ito-lab v"));
        assert_eq!(lines.next().unwrap(), COLUMNS.join(","));
        let data = lines.next().unwrap();
        // The JSON cell contains commas and quotes, so it must be quoted
        // with doubled inner quotes.
        assert!(data.contains(r#""{""beta"":0.1,""gamma"":0.2}""#), "{data}");
        // An absent stderr renders as an empty cell.
        assert!(data.contains(",,"), "{data}");
    }
}

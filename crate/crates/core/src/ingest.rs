// SPDX-License-Identifier: Apache-2.0

//! Request-trace loading and token-length statistics.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::Request;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceFormat {
    GenericCsv,
    Jsonl,
}

impl TraceFormat {
    /// `.jsonl`/`.ndjson` are JSON lines, everything else is csv.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => TraceFormat::Jsonl,
            _ => TraceFormat::GenericCsv,
        }
    }
}

/// Source column (csv) or member (jsonl) names for the two token counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub input_tokens: String,
    pub output_tokens: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self::new("input_tokens", "output_tokens")
    }
}

impl ColumnMap {
    pub fn new(input: impl Into<String>, output: impl Into<String>) -> Self {
        Self {
            input_tokens: input.into(),
            output_tokens: output.into(),
        }
    }

    /// Column names of the public BurstGPT csv release.
    pub fn burstgpt() -> Self {
        Self::new("Request tokens", "Response tokens")
    }

    /// Column names of the Azure LLM inference traces.
    pub fn azure() -> Self {
        Self::new("ContextTokens", "GeneratedTokens")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceSource {
    pub path: PathBuf,
    pub format: TraceFormat,
    pub column_map: ColumnMap,
}

impl TraceSource {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        Self {
            format: TraceFormat::from_path(&path),
            path,
            column_map: ColumnMap::default(),
        }
    }

    pub fn with_format(mut self, format: TraceFormat) -> Self {
        self.format = format;
        self
    }

    pub fn with_columns(mut self, column_map: ColumnMap) -> Self {
        self.column_map = column_map;
        self
    }
}

/// A data row that could not be turned into a [`Request`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    /// 1-based line in the source file.
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadedTrace {
    pub requests: Vec<Request>,
    /// Rows skipped in permissive mode. Always empty in strict mode.
    pub skipped: Vec<RowError>,
}

/// Loads a trace. Malformed rows abort the load unless `permissive` is set,
/// in which case they are skipped and reported in [`LoadedTrace::skipped`].
pub fn load_trace(source: &TraceSource, permissive: bool) -> Result<LoadedTrace> {
    let file = File::open(&source.path).map_err(|e| Error::io(&source.path, e))?;
    let (requests, errors) = match source.format {
        TraceFormat::GenericCsv => read_csv(file, source)?,
        TraceFormat::Jsonl => read_jsonl(file, source)?,
    };
    if !errors.is_empty() && !permissive {
        return Err(Error::MalformedRows(errors));
    }
    Ok(LoadedTrace {
        requests,
        skipped: errors,
    })
}

fn parse_tokens(raw: &str, column: &str) -> std::result::Result<u64, String> {
    let trimmed = raw.trim();
    trimmed
        .parse::<u64>()
        .map_err(|_| format!("`{column}`: `{trimmed}` is not a non-negative integer"))
}

type Parsed = (Vec<Request>, Vec<RowError>);

fn read_csv(file: File, source: &TraceSource) -> Result<Parsed> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::new(file));
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn {
                path: source.path.clone(),
                column: name.to_string(),
            })
    };
    let in_col = column(&source.column_map.input_tokens)?;
    let out_col = column(&source.column_map.output_tokens)?;

    let mut requests = Vec::new();
    let mut errors = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let line = reader.position().line();
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        }
        let line = record.position().map_or(line, |p| p.line());
        let field = |idx: usize, name: &str| {
            record
                .get(idx)
                .ok_or_else(|| format!("`{name}`: missing field"))
                .and_then(|raw| parse_tokens(raw, name))
        };
        match (
            field(in_col, &source.column_map.input_tokens),
            field(out_col, &source.column_map.output_tokens),
        ) {
            (Ok(i), Ok(o)) => requests.push(Request::new(i, o)),
            (Err(message), _) | (_, Err(message)) => errors.push(RowError { line, message }),
        }
    }
    Ok((requests, errors))
}

fn json_tokens(value: Option<&serde_json::Value>, name: &str) -> std::result::Result<u64, String> {
    match value {
        None => Err(format!("`{name}`: missing member")),
        Some(serde_json::Value::Number(n)) => n
            .as_u64()
            .ok_or_else(|| format!("`{name}`: `{n}` is not a non-negative integer")),
        Some(serde_json::Value::String(s)) => parse_tokens(s, name),
        Some(other) => Err(format!("`{name}`: unexpected value `{other}`")),
    }
}

fn read_jsonl(file: File, source: &TraceSource) -> Result<Parsed> {
    let mut requests = Vec::new();
    let mut errors = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx as u64 + 1;
        let text = line.map_err(|e| Error::io(&source.path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<serde_json::Value>(&text)
            .map_err(|e| e.to_string())
            .and_then(|v| {
                let obj = v.as_object().ok_or("expected a JSON object")?;
                let i = json_tokens(obj.get(&source.column_map.input_tokens), &source.column_map.input_tokens)?;
                let o = json_tokens(obj.get(&source.column_map.output_tokens), &source.column_map.output_tokens)?;
                Ok(Request::new(i, o))
            });
        match parsed {
            Ok(r) => requests.push(r),
            Err(message) => errors.push(RowError {
                line: line_no,
                message,
            }),
        }
    }
    Ok((requests, errors))
}

/// Summary statistics of one token-length column.
///
/// Median is the lower median, p99 is nearest-rank, std is the population form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub count: u64,
    pub mean: f64,
    pub std: f64,
    pub median: u64,
    pub p99: u64,
    pub max: u64,
}

/// 1-based nearest rank `ceil(p/100 * n)`, computed in integers.
fn nearest_rank(percent: u64, n: u64) -> u64 {
    (percent * n).div_ceil(100).max(1)
}

pub fn compute_stats(values: &[u64]) -> Result<TraceStats> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_unstable();

    let sum: u128 = sorted.iter().map(|&v| v as u128).sum();
    let mean = sum as f64 / n as f64;
    let var = sorted
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n as f64;

    Ok(TraceStats {
        count: n as u64,
        mean,
        std: var.sqrt(),
        median: sorted[(n - 1) / 2],
        p99: sorted[nearest_rank(99, n as u64) as usize - 1],
        max: sorted[n - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub input: TraceStats,
    pub output: TraceStats,
}

pub fn summarize_trace(requests: &[Request]) -> Result<TraceSummary> {
    let inputs: Vec<u64> = requests.iter().map(Request::input_tokens).collect();
    let outputs: Vec<u64> = requests.iter().map(Request::output_tokens).collect();
    Ok(TraceSummary {
        input: compute_stats(&inputs)?,
        output: compute_stats(&outputs)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_tmp(suffix: &str, body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_rows_in_order() {
        let f = write_tmp(".csv", "input_tokens,output_tokens\n215,7\n1038,478\n");
        let t = load_trace(&TraceSource::new(f.path()), false).unwrap();
        assert_eq!(t.requests, vec![Request::new(215, 7), Request::new(1038, 478)]);
        assert!(t.skipped.is_empty());
    }

    #[test]
    fn header_only_is_empty() {
        let f = write_tmp(".csv", "input_tokens,output_tokens\n");
        let t = load_trace(&TraceSource::new(f.path()), false).unwrap();
        assert!(t.requests.is_empty());
    }

    #[test]
    fn negative_token_is_row_error_with_line() {
        let f = write_tmp(".csv", "input_tokens,output_tokens\n10,1\n-3,4\n");
        match load_trace(&TraceSource::new(f.path()), false) {
            Err(Error::MalformedRows(rows)) => {
                assert_eq!(rows.len(), 1);
                assert_eq!(rows[0].line, 3);
                assert!(rows[0].message.contains("-3"));
            }
            other => panic!("expected malformed rows, got {other:?}"),
        }
    }

    #[test]
    fn permissive_mode_skips_and_counts() {
        let f = write_tmp(".csv", "input_tokens,output_tokens\n10,1\nx,4\n5,\n7,7\n");
        let t = load_trace(&TraceSource::new(f.path()), true).unwrap();
        assert_eq!(t.requests.len(), 2);
        assert_eq!(t.skipped.len(), 2);
        assert_eq!(t.requests.len() + t.skipped.len(), 4);
    }

    #[test]
    fn column_map_and_extra_columns() {
        let f = write_tmp(
            ".csv",
            "Timestamp,Model,Request tokens,Response tokens,Total tokens\n0,gpt,215,7,222\n",
        );
        let src = TraceSource::new(f.path()).with_columns(ColumnMap::burstgpt());
        let t = load_trace(&src, false).unwrap();
        assert_eq!(t.requests, vec![Request::new(215, 7)]);
    }

    #[test]
    fn missing_column_is_file_error() {
        let f = write_tmp(".csv", "prompt,output_tokens\n1,2\n");
        assert!(matches!(
            load_trace(&TraceSource::new(f.path()), true),
            Err(Error::MissingColumn { .. })
        ));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_trace(&TraceSource::new("/nonexistent/trace.csv"), false),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn jsonl_members() {
        let f = write_tmp(
            ".jsonl",
            "{\"ContextTokens\": 929, \"GeneratedTokens\": 41, \"ts\": 1}\n\n{\"ContextTokens\": \"12\", \"GeneratedTokens\": 0}\n{\"ContextTokens\": -1, \"GeneratedTokens\": 0}\n",
        );
        let src = TraceSource::new(f.path()).with_columns(ColumnMap::azure());
        assert_eq!(src.format, TraceFormat::Jsonl);
        let t = load_trace(&src, true).unwrap();
        assert_eq!(t.requests, vec![Request::new(929, 41), Request::new(12, 0)]);
        assert_eq!(t.skipped.len(), 1);
        assert_eq!(t.skipped[0].line, 4);
    }

    #[test]
    fn singleton_stats() {
        let s = compute_stats(&[5]).unwrap();
        assert_eq!(
            s,
            TraceStats {
                count: 1,
                mean: 5.0,
                std: 0.0,
                median: 5,
                p99: 5,
                max: 5
            }
        );
    }

    #[test]
    fn even_count_uses_lower_median() {
        let s = compute_stats(&[4, 1, 3, 2]).unwrap();
        assert_eq!(s.median, 2);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - 1.25f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn nearest_rank_p99() {
        let values: Vec<u64> = (1..=1000).collect();
        assert_eq!(compute_stats(&values).unwrap().p99, 990);
    }

    #[test]
    fn empty_stats_rejected() {
        assert!(matches!(compute_stats(&[]), Err(Error::EmptyInput)));
        assert!(summarize_trace(&[]).is_err());
    }

    #[test]
    fn summarize_columns_independently() {
        let s = summarize_trace(&[Request::new(10, 1), Request::new(20, 3)]).unwrap();
        assert_eq!(s.input.mean, 15.0);
        assert_eq!(s.output.mean, 2.0);
        let z = summarize_trace(&[Request::new(0, 0)]).unwrap();
        assert_eq!(z.input.mean, 0.0);
        assert_eq!(z.output.mean, 0.0);
    }

    proptest! {
        #[test]
        fn permutation_invariant(mut v in prop::collection::vec(0u64..100_000, 1..300), seed in any::<u64>()) {
            let a = compute_stats(&v).unwrap();
            let k = (seed as usize) % v.len();
            v.rotate_left(k);
            v.reverse();
            let b = compute_stats(&v).unwrap();
            prop_assert_eq!(a.median, b.median);
            prop_assert_eq!(a.p99, b.p99);
            prop_assert_eq!(a.max, b.max);
            prop_assert!((a.mean - b.mean).abs() <= 1e-9 * a.mean.max(1.0));
            prop_assert!((a.std - b.std).abs() <= 1e-9 * a.std.max(1.0));
        }

        #[test]
        fn constant_sequences(c in 0u64..1_000_000, n in 1usize..500) {
            let s = compute_stats(&vec![c; n]).unwrap();
            prop_assert_eq!(s.std, 0.0);
            prop_assert_eq!(s.mean, c as f64);
            prop_assert_eq!((s.median, s.p99, s.max), (c, c, c));
        }

        #[test]
        fn ordering_of_order_statistics(v in prop::collection::vec(0u64..10_000, 1..500)) {
            let s = compute_stats(&v).unwrap();
            prop_assert!(s.median <= s.p99 && s.p99 <= s.max);
            prop_assert!(s.std >= 0.0);
        }
    }
}

//! Runtime features from recorded artifacts: system-call traces become
//! n-gram counts, CPU/memory sample tables become per-metric aggregates.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::payload::{AppVersion, NgramFeature, ResourceFeature};

pub const DEFAULT_NGRAM_N: u32 = 2;
pub const MAX_NGRAM_N: u32 = 5;
pub const AGGREGATES: [&str; 3] = ["mean", "max", "last"];

/// Metrics shipped as the default resource schema.
pub fn default_resource_schema() -> Vec<String> {
    [
        "total_cpu",
        "user_cpu",
        "kernel_cpu",
        "total_heap_size",
        "total_heap_free",
        "total_heap_allocated",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DynamicError {
    #[error("trace contains no system calls")]
    EmptyTrace,
    #[error("trace token {0} contains whitespace")]
    BadToken(usize),
    #[error("n-gram size must be at least 1, got {0}")]
    InvalidN(u32),
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column {column}: not a finite number")]
    NonNumeric { line: usize, column: usize },
    #[error("sample file has no data rows")]
    EmptyFile,
    #[error("header line is empty or repeats a metric name")]
    BadHeader,
    #[error("no samples to aggregate")]
    NoSamples,
    #[error("samples lack metric {0:?} required by the schema")]
    MissingMetric(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyscallTrace {
    pub app: AppVersion,
    pub calls: Vec<String>,
}

/// Splits on commas and newlines. Tokens are trimmed; empty ones skipped.
/// `BadToken` positions count the non-empty tokens before the offender.
pub fn parse_syscall_trace(text: &str, app: &AppVersion) -> Result<SyscallTrace, DynamicError> {
    let mut calls = Vec::new();
    for token in text.split([',', '\n']) {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        if token.chars().any(char::is_whitespace) {
            return Err(DynamicError::BadToken(calls.len()));
        }
        calls.push(token.to_string());
    }
    if calls.is_empty() {
        return Err(DynamicError::EmptyTrace);
    }
    Ok(SyscallTrace {
        app: app.clone(),
        calls,
    })
}

pub fn syscall_ngrams(trace: &SyscallTrace, n: u32) -> Result<NgramFeature, DynamicError> {
    if n == 0 {
        return Err(DynamicError::InvalidN(n));
    }
    let mut counts = BTreeMap::new();
    for window in trace.calls.windows(n as usize) {
        *counts.entry(window.join("|")).or_insert(0u64) += 1;
    }
    Ok(NgramFeature {
        app_id: trace.app.app_id.clone(),
        version_code: trace.app.version_code,
        n,
        counts,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceSamples {
    pub app: AppVersion,
    pub schema: Vec<String>,
    /// Row-major, one value per schema metric.
    pub samples: Vec<Vec<f64>>,
}

impl ResourceSamples {
    pub fn column(&self, metric: &str) -> Option<Vec<f64>> {
        let i = self.schema.iter().position(|m| m == metric)?;
        Some(self.samples.iter().map(|row| row[i]).collect())
    }
}

/// Header row of metric names, then numeric rows. Blank lines are ignored;
/// line numbers are 1-based.
pub fn parse_resource_samples(text: &str, app: &AppVersion) -> Result<ResourceSamples, DynamicError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (_, header) = lines.next().ok_or(DynamicError::EmptyFile)?;
    let schema: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut unique = schema.clone();
    unique.sort();
    unique.dedup();
    if unique.len() != schema.len() || schema.iter().any(String::is_empty) {
        return Err(DynamicError::BadHeader);
    }

    let mut samples = Vec::new();
    for (line, row) in lines {
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        if fields.len() != schema.len() {
            return Err(DynamicError::RaggedRow {
                line,
                expected: schema.len(),
                found: fields.len(),
            });
        }
        let values = fields
            .iter()
            .enumerate()
            .map(|(col, f)| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or(DynamicError::NonNumeric { line, column: col + 1 })
            })
            .collect::<Result<Vec<_>, _>>()?;
        samples.push(values);
    }
    if samples.is_empty() {
        return Err(DynamicError::EmptyFile);
    }
    Ok(ResourceSamples {
        app: app.clone(),
        schema,
        samples,
    })
}

/// Mean, max and last of every metric in `schema` (or of every sampled
/// metric when `schema` is `None`).
pub fn resource_features(samples: &ResourceSamples, schema: Option<&[String]>) -> Result<ResourceFeature, DynamicError> {
    if samples.samples.is_empty() {
        return Err(DynamicError::NoSamples);
    }
    let metrics = schema.unwrap_or(&samples.schema);
    let mut values = BTreeMap::new();
    for metric in metrics {
        let column = samples
            .column(metric)
            .ok_or_else(|| DynamicError::MissingMetric(metric.clone()))?;
        let mean = column.iter().sum::<f64>() / column.len() as f64;
        let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let last = *column.last().expect("non-empty");
        values.insert(format!("{metric}.mean"), mean);
        values.insert(format!("{metric}.max"), max);
        values.insert(format!("{metric}.last"), last);
    }
    Ok(ResourceFeature {
        app_id: samples.app.app_id.clone(),
        version_code: samples.app.version_code,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TRACE: &str = "open, read, write, fork, fstat, mprotect, read, fork, write, close";

    fn app() -> AppVersion {
        AppVersion::new("com.example", 1)
    }

    #[test]
    fn ten_call_trace() {
        let t = parse_syscall_trace(TRACE, &app()).unwrap();
        assert_eq!(
            t.calls,
            ["open", "read", "write", "fork", "fstat", "mprotect", "read", "fork", "write", "close"]
        );
        let uni = syscall_ngrams(&t, 1).unwrap();
        assert_eq!(uni.counts["read"], 2);
        assert_eq!(uni.counts["close"], 1);
        assert_eq!(uni.total(), 10);
        let bi = syscall_ngrams(&t, 2).unwrap();
        assert_eq!(bi.total(), 9);
        assert_eq!(bi.counts["read|write"], 1);
        assert_eq!(bi.counts["fork|fstat"], 1);
        let full = syscall_ngrams(&t, 10).unwrap();
        assert_eq!(full.counts.len(), 1);
        assert_eq!(full.total(), 1);
    }

    #[test]
    fn trace_edge_cases() {
        assert_eq!(parse_syscall_trace("open", &app()).unwrap().calls, ["open"]);
        assert_eq!(parse_syscall_trace("", &app()), Err(DynamicError::EmptyTrace));
        assert_eq!(parse_syscall_trace(" ,\n\n, ", &app()), Err(DynamicError::EmptyTrace));
        assert_eq!(parse_syscall_trace("open\nre ad", &app()), Err(DynamicError::BadToken(1)));
        assert_eq!(parse_syscall_trace("open\r\nread\n", &app()).unwrap().calls, ["open", "read"]);
    }

    #[test]
    fn n_longer_than_trace_is_empty() {
        let t = parse_syscall_trace("a,b", &app()).unwrap();
        assert!(syscall_ngrams(&t, 3).unwrap().counts.is_empty());
        assert_eq!(syscall_ngrams(&t, 2).unwrap().counts.len(), 1);
        assert_eq!(syscall_ngrams(&t, 0), Err(DynamicError::InvalidN(0)));
    }

    #[test]
    fn samples_and_aggregates() {
        let csv = "total_cpu,user_cpu,kernel_cpu,total_heap_size,total_heap_free,total_heap_allocated\n\
                   10,5,5,100,40,60\n30,20,10,120,30,90\n";
        let s = parse_resource_samples(csv, &app()).unwrap();
        assert_eq!(s.samples.len(), 2);
        assert_eq!(s.schema, default_resource_schema());
        let f = resource_features(&s, None).unwrap();
        assert_eq!(f.values.len(), 18);
        assert_eq!(f.values["total_cpu.mean"], 20.0);
        assert_eq!(f.values["total_cpu.max"], 30.0);
        assert_eq!(f.values["total_cpu.last"], 30.0);
    }

    #[test]
    fn sample_errors() {
        assert_eq!(parse_resource_samples("a,b\n", &app()), Err(DynamicError::EmptyFile));
        assert_eq!(parse_resource_samples("", &app()), Err(DynamicError::EmptyFile));
        assert_eq!(
            parse_resource_samples("a,b,c,d,e,f\n1,2,3,4,5\n", &app()),
            Err(DynamicError::RaggedRow {
                line: 2,
                expected: 6,
                found: 5
            })
        );
        assert_eq!(
            parse_resource_samples("a,b\n1,x\n", &app()),
            Err(DynamicError::NonNumeric { line: 2, column: 2 })
        );
        assert_eq!(parse_resource_samples("a,b\n1,inf\n", &app()).unwrap_err(), DynamicError::NonNumeric { line: 2, column: 2 });
        assert_eq!(parse_resource_samples("a,a\n1,2\n", &app()), Err(DynamicError::BadHeader));
    }

    #[test]
    fn single_sample_aggregates_coincide() {
        let s = parse_resource_samples("cpu\n7.5\n", &app()).unwrap();
        let f = resource_features(&s, None).unwrap();
        assert!(AGGREGATES.iter().all(|a| f.values[&format!("cpu.{a}")] == 7.5));
    }

    #[test]
    fn schema_must_be_present() {
        let s = parse_resource_samples("cpu\n1\n", &app()).unwrap();
        let schema = vec!["heap".to_string()];
        assert_eq!(
            resource_features(&s, Some(&schema)),
            Err(DynamicError::MissingMetric("heap".into()))
        );
        let empty = ResourceSamples {
            app: app(),
            schema: vec!["cpu".into()],
            samples: vec![],
        };
        assert_eq!(resource_features(&empty, None), Err(DynamicError::NoSamples));
    }

    proptest! {
        #[test]
        fn ngram_mass_is_conserved(calls in prop::collection::vec("[a-z]{1,6}", 1..40), n in 1u32..=50) {
            let trace = SyscallTrace { app: app(), calls: calls.clone() };
            let f = syscall_ngrams(&trace, n).unwrap();
            let expected = (calls.len() as u64 + 1).saturating_sub(n as u64);
            prop_assert_eq!(f.total(), expected);
        }

        #[test]
        fn mean_lies_within_bounds(rows in prop::collection::vec(-1e6f64..1e6, 1..30)) {
            let csv = std::iter::once("m".to_string())
                .chain(rows.iter().map(|v| format!("{v}")))
                .collect::<Vec<_>>()
                .join("\n");
            let s = parse_resource_samples(&csv, &app()).unwrap();
            let f = resource_features(&s, None).unwrap();
            let min = rows.iter().copied().fold(f64::INFINITY, f64::min);
            let mean = f.values["m.mean"];
            prop_assert!(mean >= min - 1e-6 && mean <= f.values["m.max"] + 1e-6);
            prop_assert_eq!(f.values.len(), 3);
        }

        #[test]
        fn trace_reparse_is_stable(calls in prop::collection::vec("[a-z_]{1,8}", 1..20)) {
            let text = calls.join(", ");
            let a = parse_syscall_trace(&text, &app()).unwrap();
            let b = parse_syscall_trace(&text, &app()).unwrap();
            prop_assert_eq!(&a.calls, &calls);
            prop_assert_eq!(a, b);
        }
    }
}

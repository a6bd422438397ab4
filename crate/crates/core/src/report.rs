//! Per-pair evaluation of the four registration methods, metric records,
//! and the summary table.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::config::RunConfig;
use crate::data::CasePair;
use crate::error::{Error, Result};
use crate::io::{read_text, write_text};
use crate::meta::{classical_register, test_time_optimize, ImagePair};
use crate::metrics::{dice, tre};
use crate::models::RegNet;
use crate::seeds::{rng, Stream};
use crate::transforms::{warp_mask, DisplacementField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Classical,
    Conventional,
    Meta,
    MetaTto,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Classical, Method::Conventional, Method::Meta, Method::MetaTto];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Classical => "classical",
            Method::Conventional => "conventional",
            Method::Meta => "meta",
            Method::MetaTto => "meta_tto",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub method: Method,
    pub pair_id: usize,
    pub dsc: f64,
    pub tre_mm: f64,
    pub wall_time_s: f64,
}

pub const CSV_HEADER: &str = "method,pair_id,dsc,tre_mm,wall_time_s";

/// Gland DSC and landmark TRE of a predicted field.
pub fn score(case: &CasePair, ddf: &DisplacementField) -> Result<(f64, f64)> {
    let warped = warp_mask(&case.moving.gland_mask, ddf, 0.5)?;
    let dsc = dice(&warped, &case.fixed.gland_mask)?;
    let t = tre(&case.moving.landmarks, &case.fixed.landmarks, ddf, case.spacing())?;
    Ok((dsc, t.rms_mm))
}

/// Trained networks available to the learned methods.
#[derive(Clone, Debug, Default)]
pub struct Models {
    pub conventional: Option<RegNet>,
    pub meta: Option<RegNet>,
}

impl Models {
    fn require(&self, method: Method) -> Result<Option<&RegNet>> {
        let net = match method {
            Method::Classical => return Ok(None),
            Method::Conventional => self.conventional.as_ref(),
            Method::Meta | Method::MetaTto => self.meta.as_ref(),
        };
        net.map(Some)
            .ok_or_else(|| Error::invalid(format!("method {method} needs a checkpoint")))
    }
}

/// Registers one pair and returns the field with the wall time of the
/// registration call alone.
pub fn register(
    method: Method,
    pair: &ImagePair,
    models: &Models,
    cfg: &RunConfig,
) -> Result<(DisplacementField, f64)> {
    let net = models.require(method)?;
    let start = Instant::now();
    let ddf = match (method, net) {
        (Method::Classical, _) => classical_register(&pair.moving, &pair.fixed, &cfg.classical)?.ddf,
        (Method::MetaTto, Some(net)) => {
            let mut r = rng(cfg.seed, Stream::Evaluation, pair.id as u64);
            test_time_optimize(net, pair, &cfg.tto, &mut r)?.ddf
        }
        (_, Some(net)) => net.predict(&pair.moving, &pair.fixed)?,
        (_, None) => unreachable!("require returned a network for every learned method"),
    };
    Ok((ddf, start.elapsed().as_secs_f64()))
}

/// Outcome of evaluating several methods: records in (method, pair) order
/// and the methods that could not run.
#[derive(Debug, Default)]
pub struct Evaluation {
    pub records: Vec<MetricsRecord>,
    pub failures: Vec<(Method, Error)>,
}

/// Evaluates every method on every case. A method that fails is reported in
/// `failures` and the remaining methods still run.
pub fn evaluate(
    cases: &[(usize, CasePair)],
    methods: &[Method],
    models: &Models,
    cfg: &RunConfig,
    mut observe: impl FnMut(&MetricsRecord),
) -> Evaluation {
    let mut out = Evaluation::default();
    for &method in methods {
        let mut rows = Vec::with_capacity(cases.len());
        let run = cases.iter().try_for_each(|(id, case)| {
            let pair = ImagePair::from_case(*id, case);
            let (ddf, wall_time_s) = register(method, &pair, models, cfg)?;
            let (dsc, tre_mm) = score(case, &ddf)?;
            let rec = MetricsRecord {
                method,
                pair_id: *id,
                dsc,
                tre_mm,
                wall_time_s,
            };
            observe(&rec);
            rows.push(rec);
            Ok(())
        });
        match run {
            Ok(()) => out.records.extend(rows),
            Err(e) => out.failures.push((method, e)),
        }
    }
    out
}

pub fn records_to_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{},{},{},{},{}", r.method, r.pair_id, r.dsc, r.tre_mm, r.wall_time_s);
    }
    s
}

pub fn records_from_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::invalid(format!("metrics CSV must start with `{CSV_HEADER}`")));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::invalid(format!("expected 5 fields, got `{line}`")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::invalid(format!("bad number `{s}`")));
            Ok(MetricsRecord {
                method: f[0].parse()?,
                pair_id: f[1].parse().map_err(|_| Error::invalid(format!("bad pair id `{}`", f[1])))?,
                dsc: num(f[2])?,
                tre_mm: num(f[3])?,
                wall_time_s: num(f[4])?,
            })
        })
        .collect()
}

pub fn save_records(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    write_text(path, &records_to_csv(records))
}

pub fn load_records(path: &Path) -> Result<Vec<MetricsRecord>> {
    records_from_csv(&read_text(path)?)
}

/// Mean and sample (n − 1) standard deviation; the deviation is zero for a
/// single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub method: Method,
    pub pairs: usize,
    pub dsc_mean: f64,
    pub dsc_std: f64,
    pub tre_mean: f64,
    pub tre_std: f64,
    pub time_mean: f64,
}

/// One summary per method, in order of first appearance.
pub fn summarize(records: &[MetricsRecord]) -> Vec<Summary> {
    let mut order: Vec<Method> = Vec::new();
    for r in records {
        if !order.contains(&r.method) {
            order.push(r.method);
        }
    }
    order
        .into_iter()
        .map(|method| {
            let rows: Vec<&MetricsRecord> = records.iter().filter(|r| r.method == method).collect();
            let col = |f: fn(&MetricsRecord) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let (dsc_mean, dsc_std) = mean_std(&col(|r| r.dsc));
            let (tre_mean, tre_std) = mean_std(&col(|r| r.tre_mm));
            let (time_mean, _) = mean_std(&col(|r| r.wall_time_s));
            Summary {
                method,
                pairs: rows.len(),
                dsc_mean,
                dsc_std,
                tre_mean,
                tre_std,
                time_mean,
            }
        })
        .collect()
}

pub const SUMMARY_HEADER: &str = "method,pairs,dsc_mean,dsc_std,tre_mean_mm,tre_std_mm,wall_time_mean_s";

pub fn summary_to_csv(summaries: &[Summary]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for m in summaries {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            m.method, m.pairs, m.dsc_mean, m.dsc_std, m.tre_mean, m.tre_std, m.time_mean
        );
    }
    s
}

/// Human-readable report: the summary table followed by the resolved config.
pub fn render_report(summaries: &[Summary], failures: &[(Method, String)], cfg: &RunConfig) -> Result<String> {
    let mut s = String::from("# Registration comparison\n\n");
    s.push_str("| method | pairs | time (s) | DSC | TRE (mm) |\n|---|---|---|---|---|\n");
    for m in summaries {
        let _ = writeln!(
            s,
            "| {} | {} | {:.3} | {:.3} ± {:.3} | {:.3} ± {:.3} |",
            m.method, m.pairs, m.time_mean, m.dsc_mean, m.dsc_std, m.tre_mean, m.tre_std
        );
    }
    if !failures.is_empty() {
        s.push_str("\n## Failed methods\n\n");
        for (m, e) in failures {
            let _ = writeln!(s, "- {m}: {e}");
        }
    }
    s.push_str("\n## Configuration\n\n```toml\n");
    s.push_str(&cfg.to_toml()?);
    s.push_str("```\n");
    Ok(s)
}

/// Recovers the embedded configuration from a rendered report.
pub fn config_from_report(report: &str) -> Result<RunConfig> {
    let start = report
        .find("```toml\n")
        .ok_or_else(|| Error::invalid("report has no embedded configuration"))?
        + "```toml\n".len();
    let len = report[start..]
        .find("```")
        .ok_or_else(|| Error::invalid("unterminated configuration block"))?;
    RunConfig::from_toml(&report[start..start + len])
}

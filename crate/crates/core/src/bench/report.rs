use std::path::Path;

use super::metrics::MetricSet;
use super::run::{BenchmarkReport, ClusterMetrics};
use super::BenchError;

pub const METRICS_HEADER: [&str; 17] = [
    "cluster",
    "label",
    "layer",
    "vmag_mae_pu",
    "vmag_maxae_pu",
    "vmag_mape_pct",
    "vmag_maxape_pct",
    "vang_a_mae_deg",
    "vang_a_maxae_deg",
    "vang_b_mae_deg",
    "vang_b_maxae_deg",
    "vang_c_mae_deg",
    "vang_c_maxae_deg",
    "s_mae_pu",
    "s_maxae_pu",
    "s_mape_pct",
    "s_maxape_pct",
];

fn io(path: &Path, e: impl std::fmt::Display) -> BenchError {
    BenchError::Io(format!("{}: {e}", path.display()))
}

/// Shortest representation that parses back to the same float.
fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn metric_fields(m: Option<&MetricSet>, relative: bool) -> Vec<String> {
    let mut out = vec![opt(m.map(|m| m.mae)), opt(m.map(|m| m.maxae))];
    if relative {
        out.push(opt(m.and_then(|m| m.mape)));
        out.push(opt(m.and_then(|m| m.maxape)));
    }
    out
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, BenchError> {
    csv::Writer::from_path(path).map_err(|e| io(path, e))
}

/// Writes `metrics.csv` (one row per cluster), `timing.csv` (one row per
/// cluster), `summary.csv` (batch totals) and one scatter file per cluster
/// and quantity.
pub fn emit_report(r: &BenchmarkReport, dir: &Path) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;

    let p = dir.join("metrics.csv");
    let mut w = writer(&p)?;
    w.write_record(METRICS_HEADER).map_err(|e| io(&p, e))?;
    for c in &r.clusters {
        let mut rec = vec![c.cluster.to_string(), c.label.clone(), c.layer.to_string()];
        rec.extend(metric_fields(Some(&c.vmag), true));
        for k in 0..3 {
            rec.extend(metric_fields(c.vang[k].as_ref(), false));
        }
        rec.extend(metric_fields(c.head_s.as_ref(), true));
        w.write_record(&rec).map_err(|e| io(&p, e))?;
    }
    w.flush().map_err(|e| io(&p, e))?;

    let p = dir.join("timing.csv");
    let mut w = writer(&p)?;
    w.write_record(["cluster", "label", "layer", "seconds"]).map_err(|e| io(&p, e))?;
    for c in &r.clusters {
        let t = r.timing.cluster_seconds.get(c.cluster).copied().unwrap_or(0.0);
        w.write_record([c.cluster.to_string(), c.label.clone(), c.layer.to_string(), num(t)])
            .map_err(|e| io(&p, e))?;
    }
    w.flush().map_err(|e| io(&p, e))?;

    let p = dir.join("summary.csv");
    let mut w = writer(&p)?;
    w.write_record(["key", "value"]).map_err(|e| io(&p, e))?;
    if !r.clusters.is_empty() {
        let rows = [
            ("rows", r.rows.to_string()),
            ("excluded_rows", r.excluded.len().to_string()),
            ("t_ats_seconds", num(r.timing.t_ats)),
            ("cluster_seconds_total", num(r.timing.total())),
            ("oracle_seconds", num(r.oracle_seconds)),
            ("speedup", num(r.speedup)),
        ];
        for (k, v) in rows {
            w.write_record([k, v.as_str()]).map_err(|e| io(&p, e))?;
        }
    }
    w.flush().map_err(|e| io(&p, e))?;

    for s in &r.scatter {
        let label = r.clusters.iter().find(|c| c.cluster == s.cluster).map_or_else(|| s.cluster.to_string(), |c| c.label.clone());
        let p = dir.join(format!("scatter_{label}_{}.csv", s.quantity));
        let mut w = writer(&p)?;
        w.write_record(["truth", "predicted", "bus", "phase", "sample"]).map_err(|e| io(&p, e))?;
        for row in &s.rows {
            w.write_record([num(row.truth), num(row.predicted), row.bus.clone(), row.phase.clone(), row.sample.to_string()])
                .map_err(|e| io(&p, e))?;
        }
        w.flush().map_err(|e| io(&p, e))?;
    }
    Ok(())
}

/// Parses `metrics.csv` back into per-cluster metric sets.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<ClusterMetrics>, BenchError> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| io(path, e))?;
    let header = rd.headers().map_err(|e| io(path, e))?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(io(path, "unexpected header"));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| io(path, e))?;
        let f = |i: usize| -> Result<Option<f64>, BenchError> {
            let s = &rec[i];
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|e| io(path, e))
            }
        };
        let int = |i: usize| -> Result<usize, BenchError> { rec[i].parse().map_err(|e| io(path, e)) };
        let set = |i: usize, rel: bool| -> Result<Option<MetricSet>, BenchError> {
            Ok(match (f(i)?, f(i + 1)?) {
                (Some(mae), Some(maxae)) => Some(MetricSet {
                    mae,
                    maxae,
                    mape: if rel { f(i + 2)? } else { None },
                    maxape: if rel { f(i + 3)? } else { None },
                }),
                _ => None,
            })
        };
        out.push(ClusterMetrics {
            cluster: int(0)?,
            label: rec[1].to_string(),
            layer: int(2)?,
            vmag: set(3, true)?.ok_or_else(|| io(path, "missing voltage metrics"))?,
            vang: [set(7, false)?, set(9, false)?, set(11, false)?],
            head_s: set(13, true)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_writes_headers_only() {
        let dir = std::env::temp_dir().join(format!("hpf-empty-report-{}", std::process::id()));
        emit_report(&BenchmarkReport::empty(), &dir).unwrap();
        for name in ["metrics.csv", "timing.csv", "summary.csv"] {
            let text = std::fs::read_to_string(dir.join(name)).unwrap();
            assert_eq!(text.lines().count(), 1, "{name}");
        }
        assert!(read_metrics_csv(&dir.join("metrics.csv")).unwrap().is_empty());
        std::fs::remove_dir_all(&dir).ok();
    }
}

use std::collections::BTreeMap;

use fbdrift_core::stats::linear_fit;

use crate::error::{CliError, CliResult};
use crate::experiments::Table;
use crate::record::ResultRecord;

pub const VIEWS: [&str; 3] = ["prop2i", "prop1", "criticality"];

fn value(r: &ResultRecord) -> f64 {
    r.value.unwrap_or(f64::NAN)
}

/// Flow norm against `t` with the anchored envelope `K t^(1/(2r))`.
fn flow_view(records: &[ResultRecord]) -> Table {
    let mut t = Table::new("prop2i", &["t", "norm", "envelope", "r"]);
    let mut k: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for rec in records {
        if let Some(r) = rec.label("r") {
            let entry = k.entry(r.to_bits()).or_insert((f64::NAN, f64::NAN));
            match rec.metric.as_str() {
                "flow_envelope_k" => entry.0 = value(rec),
                "flow_envelope_exponent" => entry.1 = value(rec),
                _ => {}
            }
        }
    }
    for rec in records.iter().filter(|r| r.metric == "flow_norm") {
        let (Some(r), Some(x)) = (rec.label("r"), rec.label("t")) else {
            continue;
        };
        let (kk, e) = k.get(&r.to_bits()).copied().unwrap_or((f64::NAN, f64::NAN));
        let e = if e.is_nan() { 1.0 / (2.0 * r) } else { e };
        t.push(&[x, value(rec), kk * x.powf(e), r]);
    }
    t
}

/// Terminal mass `<U^2(T1)>` against the order `n` with a geometric fit.
fn cascade_view(records: &[ResultRecord]) -> Table {
    let mut t = Table::new("prop1", &["n", "U2_terminal", "geometric_fit"]);
    let masses: Vec<&ResultRecord> = records
        .iter()
        .filter(|r| r.metric == "terminal_mass" && r.label("n").is_some())
        .collect();
    // the order sweep runs at the base length, which is the length of the lowest order
    let base = masses
        .iter()
        .min_by(|a, b| a.label("n").unwrap().total_cmp(&b.label("n").unwrap()))
        .and_then(|r| r.label("length"));
    let mut by_n: BTreeMap<u64, f64> = BTreeMap::new();
    for rec in masses.iter().filter(|r| r.label("length") == base) {
        by_n.entry(rec.label("n").unwrap() as u64)
            .or_insert(value(rec));
    }
    let pts: Vec<(f64, f64)> = by_n.iter().map(|(n, m)| (*n as f64, *m)).collect();
    let positive: Vec<&(f64, f64)> = pts.iter().filter(|p| p.1 > 0.0).collect();
    let fit = linear_fit(
        &positive.iter().map(|p| p.0).collect::<Vec<_>>(),
        &positive.iter().map(|p| p.1.ln()).collect::<Vec<_>>(),
    );
    for (n, m) in pts {
        let g = fit
            .as_ref()
            .map_or(f64::NAN, |f| (f.intercept + f.slope * n).exp());
        t.push(&[n, m, g]);
    }
    t
}

fn criticality_view(records: &[ResultRecord]) -> Table {
    let mut t = Table::new("criticality", &["delta", "collapse_fraction", "stderr"]);
    for rec in records.iter().filter(|r| r.metric == "collapse_fraction") {
        if let Some(d) = rec.label("delta") {
            t.push(&[d, value(rec), rec.std_error.unwrap_or(f64::NAN)]);
        }
    }
    t
}

/// Builds the named plot table; unknown views are usage errors.
pub fn emit_plotdata(records: &[ResultRecord], view: &str) -> CliResult<Table> {
    match view {
        "prop2i" => Ok(flow_view(records)),
        "prop1" => Ok(cascade_view(records)),
        "criticality" => Ok(criticality_view(records)),
        other => Err(CliError::Usage(format!(
            "unknown view '{other}', expected one of {}",
            VIEWS.join(", ")
        ))),
    }
}

/// CSV text of a table.
pub fn to_csv(table: &Table) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| CliError::Io(e.to_string()))?)
        .map_err(|e| CliError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::Metric;

    #[test]
    fn empty_records_give_header_only() {
        for v in VIEWS {
            let csv = to_csv(&emit_plotdata(&[], v).unwrap()).unwrap();
            assert_eq!(csv.lines().count(), 1, "{v}: {csv}");
        }
        assert_eq!(
            to_csv(&emit_plotdata(&[], "criticality").unwrap()).unwrap(),
            "delta,collapse_fraction,stderr\n"
        );
        assert!(matches!(
            emit_plotdata(&[], "nope"),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn flow_envelope_is_recomputed_from_records() {
        let recs: Vec<ResultRecord> = [
            Metric::new("flow_norm", 0.1).at("r", 1.0).at("t", 0.25),
            Metric::new("flow_norm", 0.2).at("r", 1.0).at("t", 1.0),
            Metric::new("flow_envelope_k", 0.2).at("r", 1.0),
            Metric::new("flow_envelope_exponent", 0.5).at("r", 1.0),
        ]
        .into_iter()
        .map(|m| m.stamp("e", "d", 0.0))
        .collect();
        let t = emit_plotdata(&recs, "prop2i").unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0], vec!["0.25", "0.1", "0.1", "1"]);
    }

    #[test]
    fn geometric_fit_is_exact_for_geometric_masses() {
        let recs: Vec<ResultRecord> = (2..=4)
            .map(|n| {
                Metric::new("terminal_mass", 0.5f64.powi(n))
                    .at("n", n as f64)
                    .at("length", 0.1)
                    .stamp("e", "d", 0.0)
            })
            .collect();
        let t = emit_plotdata(&recs, "prop1").unwrap();
        for row in &t.rows {
            let (m, g): (f64, f64) = (row[1].parse().unwrap(), row[2].parse().unwrap());
            assert!((m - g).abs() < 1e-12 * m, "{row:?}");
        }
    }
}

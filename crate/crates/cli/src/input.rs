//! CSV input and output.
//!
//! Subject files need the columns `subject_id, arm, events, exposure`.
//! Covariate, stratum and period columns are optional and named on the
//! command line. Arms are indexed in order of first appearance unless a
//! control label is given, which always becomes arm 0.

use std::collections::HashMap;
use std::io::{Read, Write};

use countrate::meta::StratumResult;
use countrate::{Dataset, SubjectRecord};

use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub covariates: Vec<String>,
    pub strata_column: Option<String>,
    pub period_column: Option<String>,
    pub control: Option<String>,
    /// Exposures are divided by this on input (e.g. 365.25 for days to years).
    pub exposure_divisor: f64,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            covariates: Vec::new(),
            strata_column: None,
            period_column: None,
            control: None,
            exposure_divisor: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub arm_labels: Vec<String>,
    /// One dataset per period, in order of first appearance. A file without a
    /// period column yields a single unlabeled entry.
    pub periods: Vec<(Option<String>, Dataset)>,
}

struct Row {
    period: Option<String>,
    arm_label: String,
    record: SubjectRecord,
}

fn schema(row: usize, column: &str, message: impl Into<String>) -> CliError {
    CliError::Schema {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize, CliError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| schema(0, name, "required column is missing from the header"))
}

pub fn read_subject_csv<R: Read>(reader: R, opts: &CsvOptions) -> Result<LoadedData, CliError> {
    if !(opts.exposure_divisor > 0.0 && opts.exposure_divisor.is_finite()) {
        return Err(CliError::Usage("exposure divisor must be positive".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| schema(0, "", format!("unreadable header: {e}")))?
        .clone();
    let id_col = column(&headers, "subject_id")?;
    let arm_col = column(&headers, "arm")?;
    let ev_col = column(&headers, "events")?;
    let ex_col = column(&headers, "exposure")?;
    let cov_cols = opts
        .covariates
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<Vec<_>, _>>()?;
    let stratum_col = opts
        .strata_column
        .as_deref()
        .map(|c| column(&headers, c))
        .transpose()?;
    let period_col = opts
        .period_column
        .as_deref()
        .map(|c| column(&headers, c))
        .transpose()?;

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| schema(row, "", e.to_string()))?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let subject_id = field(id_col);
        if subject_id.is_empty() {
            return Err(schema(row, "subject_id", "empty subject id"));
        }
        let arm_label = field(arm_col);
        if arm_label.is_empty() {
            return Err(schema(row, "arm", "empty arm label"));
        }
        let ev = field(ev_col);
        let count: u64 = ev.parse().map_err(|_| {
            if ev.starts_with('-') {
                schema(row, "events", format!("negative event count {ev}"))
            } else {
                schema(row, "events", format!("not a nonnegative integer: '{ev}'"))
            }
        })?;
        let ex = field(ex_col);
        let raw: f64 = ex
            .parse()
            .map_err(|_| schema(row, "exposure", format!("not a number: '{ex}'")))?;
        if !(raw > 0.0 && raw.is_finite()) {
            return Err(schema(
                row,
                "exposure",
                format!("exposure must be positive, got {ex}"),
            ));
        }
        let mut covariates = Vec::with_capacity(cov_cols.len());
        for (name, &c) in opts.covariates.iter().zip(&cov_cols) {
            let v = field(c);
            if v.is_empty() || v.eq_ignore_ascii_case("na") {
                return Err(schema(row, name, "missing covariate value"));
            }
            let x: f64 = v
                .parse()
                .map_err(|_| schema(row, name, format!("not a number: '{v}'")))?;
            if !x.is_finite() {
                return Err(schema(row, name, "covariate must be finite"));
            }
            covariates.push(x);
        }
        let mut record = SubjectRecord::new(subject_id, 0, count, raw / opts.exposure_divisor)
            .with_covariates(covariates);
        if let (Some(c), Some(name)) = (stratum_col, opts.strata_column.as_deref()) {
            let s = field(c);
            if s.is_empty() {
                return Err(schema(row, name, "missing stratum"));
            }
            record = record.with_stratum(s);
        }
        rows.push(Row {
            period: period_col.map(|c| field(c).to_string()),
            arm_label: arm_label.to_string(),
            record,
        });
    }
    if rows.is_empty() {
        return Err(CliError::Data("input has no data rows".into()));
    }

    let mut arm_labels: Vec<String> = Vec::new();
    if let Some(control) = &opts.control {
        if !rows.iter().any(|r| &r.arm_label == control) {
            return Err(CliError::Usage(format!(
                "control arm '{control}' does not occur in the data"
            )));
        }
        arm_labels.push(control.clone());
    }
    for r in &rows {
        if !arm_labels.contains(&r.arm_label) {
            arm_labels.push(r.arm_label.clone());
        }
    }
    if arm_labels.len() < 2 {
        return Err(CliError::Data("at least two arms are required".into()));
    }
    let arm_index: HashMap<&str, usize> = arm_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let mut period_order: Vec<Option<String>> = Vec::new();
    let mut grouped: HashMap<Option<String>, Vec<SubjectRecord>> = HashMap::new();
    for r in rows {
        let mut record = r.record;
        record.arm = arm_index[r.arm_label.as_str()];
        if !grouped.contains_key(&r.period) {
            period_order.push(r.period.clone());
        }
        grouped.entry(r.period).or_default().push(record);
    }
    let mut periods = Vec::with_capacity(period_order.len());
    for p in period_order {
        let records = grouped.remove(&p).unwrap_or_default();
        let data =
            Dataset::new(records, arm_labels.len(), opts.covariates.clone()).map_err(|e| {
                let label = p
                    .as_deref()
                    .map(|s| format!("period '{s}': "))
                    .unwrap_or_default();
                CliError::Data(format!("{label}{e}"))
            })?;
        periods.push((p, data));
    }
    Ok(LoadedData {
        arm_labels,
        periods,
    })
}

/// Writes `data` in the subject CSV layout; re-reading it with the same
/// covariate names (and `stratum` when present) gives the same dataset.
pub fn write_subject_csv<W: Write>(
    writer: W,
    data: &Dataset,
    arm_labels: &[String],
) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Data(format!("writing CSV: {e}"));
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "subject_id".to_string(),
        "arm".into(),
        "events".into(),
        "exposure".into(),
    ];
    header.extend(data.covariate_names().iter().cloned());
    if data.has_strata() {
        header.push("stratum".into());
    }
    w.write_record(&header).map_err(err)?;
    for r in data.records() {
        let mut row = vec![
            r.subject_id.clone(),
            arm_labels
                .get(r.arm)
                .cloned()
                .unwrap_or_else(|| r.arm.to_string()),
            r.count.to_string(),
            r.exposure.to_string(),
        ];
        row.extend(r.covariates.iter().map(f64::to_string));
        if let Some(s) = &r.stratum {
            row.push(s.clone());
        }
        w.write_record(&row).map_err(err)?;
    }
    w.flush()
        .map_err(|e| CliError::Data(format!("writing CSV: {e}")))
}

/// Reads per-stratum rate ratios. Needs `stratum, weight` and either
/// `lambda, var_lambda` or `log_lambda, var_log`.
pub fn read_strata_csv<R: Read>(reader: R) -> Result<Vec<StratumResult>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| schema(0, "", format!("unreadable header: {e}")))?
        .clone();
    let has = |n: &str| headers.iter().any(|h| h == n);
    let stratum = column(&headers, "stratum")?;
    let weight = column(&headers, "weight")?;
    let log_scale = !has("lambda") && has("log_lambda");
    let (value, var) = if log_scale {
        (
            column(&headers, "log_lambda")?,
            column(&headers, "var_log")?,
        )
    } else {
        (column(&headers, "lambda")?, column(&headers, "var_lambda")?)
    };
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| schema(row, "", e.to_string()))?;
        let num = |c: usize| -> Result<f64, CliError> {
            let v = rec.get(c).unwrap_or("");
            v.parse()
                .map_err(|_| schema(row, &headers[c], format!("not a number: '{v}'")))
        };
        let label = rec.get(stratum).unwrap_or("").to_string();
        let r = if log_scale {
            StratumResult::from_log(label, num(value)?, num(var)?, num(weight)?)
        } else {
            StratumResult::new(label, num(value)?, num(var)?, num(weight)?)
        };
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str, opts: &CsvOptions) -> Result<LoadedData, CliError> {
        read_subject_csv(text.as_bytes(), opts)
    }

    #[test]
    fn control_override_becomes_arm_zero() {
        let text = "subject_id,arm,events,exposure\n1,drug,1,1\n2,drug,0,1\n3,pbo,2,1\n4,pbo,1,2\n";
        let first = read(text, &CsvOptions::default()).unwrap();
        assert_eq!(first.arm_labels, ["drug", "pbo"]);
        let opts = CsvOptions {
            control: Some("pbo".into()),
            ..CsvOptions::default()
        };
        let loaded = read(text, &opts).unwrap();
        assert_eq!(loaded.arm_labels, ["pbo", "drug"]);
        assert_eq!(loaded.periods[0].1.aggregate(0).events, 3);
        let opts = CsvOptions {
            control: Some("nope".into()),
            ..CsvOptions::default()
        };
        assert!(matches!(read(text, &opts), Err(CliError::Usage(_))));
    }

    #[test]
    fn schema_errors_name_row_and_column() {
        let cases = [
            ("subject_id,arm,events,exposure\n1,a,x,1\n", 1, "events"),
            (
                "subject_id,arm,events,exposure\n1,a,1,1\n2,b,1,0\n",
                2,
                "exposure",
            ),
            ("subject_id,arm,events,exposure\n1,,1,1\n", 1, "arm"),
            ("subject_id,arm,events\n1,a,1\n", 0, "exposure"),
        ];
        for (text, row, col) in cases {
            match read(text, &CsvOptions::default()) {
                Err(CliError::Schema { row: r, column, .. }) => {
                    assert_eq!((r, column.as_str()), (row, col), "{text}");
                }
                other => panic!("{text}: {other:?}"),
            }
        }
        let opts = CsvOptions {
            covariates: vec!["age".into()],
            ..CsvOptions::default()
        };
        let text = "subject_id,arm,events,exposure,age\n1,a,1,1,NA\n";
        assert!(
            matches!(read(text, &opts), Err(CliError::Schema { column, .. }) if column == "age")
        );
    }

    #[test]
    fn one_arm_is_a_data_error() {
        let text = "subject_id,arm,events,exposure\n1,a,1,1\n2,a,0,1\n";
        assert!(matches!(
            read(text, &CsvOptions::default()),
            Err(CliError::Data(_))
        ));
    }

    #[test]
    fn strata_file_on_either_scale() {
        let nat =
            read_strata_csv("stratum,weight,lambda,var_lambda\ns1,2,1.5,0.1\n".as_bytes()).unwrap();
        assert_eq!(nat[0].lambda_hat, 1.5);
        let log =
            read_strata_csv("stratum,weight,log_lambda,var_log\ns1,2,0,0.1\n".as_bytes()).unwrap();
        assert_eq!(log[0].lambda_hat, 1.0);
        assert!(read_strata_csv("stratum,weight\ns1,2\n".as_bytes()).is_err());
    }
}

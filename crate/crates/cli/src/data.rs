//! CSV ingestion.

use std::path::Path;

use survsel::design::SurvivalDataset;
use survsel::nalgebra::DMatrix;

use crate::config::RunConfig;
use crate::CliError;

/// A parsed input table: responses plus the raw covariate matrix.
pub struct Table {
    pub data: SurvivalDataset,
    /// Status column as read (the outcome for probit).
    pub status: Vec<bool>,
    pub dummies: Vec<bool>,
}

fn find(headers: &[String], name: &str) -> Result<usize, CliError> {
    headers.iter().position(|h| h == name).ok_or_else(|| CliError::Data(format!("column `{name}` not found in the header")))
}

pub fn read_table(path: &Path, cfg: &RunConfig) -> Result<Table, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = rdr.headers().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?.iter().map(String::from).collect();
    let probit = cfg.backend == survsel::model::Backend::Probit;
    let time_col = if probit { headers.iter().position(|h| *h == cfg.time) } else { Some(find(&headers, &cfg.time)?) };
    let status_col = find(&headers, &cfg.status)?;
    let cov_cols: Vec<usize> = if cfg.covariates.is_empty() {
        (0..headers.len()).filter(|&c| Some(c) != time_col && c != status_col).collect()
    } else {
        cfg.covariates.iter().map(|n| find(&headers, n)).collect::<Result<_, _>>()?
    };
    if cov_cols.is_empty() {
        return Err(CliError::Data("no covariate columns".into()));
    }
    for d in &cfg.dummies {
        if !cov_cols.iter().any(|&c| headers[c] == *d) {
            return Err(CliError::Data(format!("dummy `{d}` is not among the covariates")));
        }
    }
    let mut y = Vec::new();
    let mut status = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        // Line numbers count the header as line 1.
        let line = k + 2;
        let rec = rec.map_err(|e| CliError::Data(format!("line {line}: {e}")))?;
        let cell = |c: usize| -> Result<f64, CliError> {
            let s = rec.get(c).unwrap_or("");
            if s.is_empty() || s.eq_ignore_ascii_case("na") {
                return Err(CliError::Data(format!("line {line}, column `{}`: missing value", headers[c])));
            }
            s.parse::<f64>().map_err(|_| CliError::Data(format!("line {line}, column `{}`: `{s}` is not a number", headers[c])))
        };
        let st = cell(status_col)?;
        if st != 0.0 && st != 1.0 {
            return Err(CliError::Data(format!("line {line}, column `{}`: status must be 0 or 1, got {st}", headers[status_col])));
        }
        status.push(st == 1.0);
        match time_col {
            Some(tc) if !probit => {
                let t = cell(tc)?;
                if cfg.log_time {
                    if !t.is_finite() {
                        return Err(CliError::Data(format!("line {line}, column `{}`: log time must be finite", headers[tc])));
                    }
                    y.push(t);
                } else {
                    if !(t > 0.0) || !t.is_finite() {
                        return Err(CliError::Data(format!("line {line}, column `{}`: times must be positive, got {t}", headers[tc])));
                    }
                    y.push(t.ln());
                }
            }
            _ => y.push(0.0),
        }
        for &c in &cov_cols {
            let v = cell(c)?;
            if !v.is_finite() {
                return Err(CliError::Data(format!("line {line}, column `{}`: non-finite value", headers[c])));
            }
            xs.push(v);
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(CliError::Data("the input has no data rows".into()));
    }
    let p = cov_cols.len();
    let x = DMatrix::from_row_slice(n, p, &xs);
    let names: Vec<String> = cov_cols.iter().map(|&c| headers[c].clone()).collect();
    let dummies = names.iter().map(|nm| cfg.dummies.contains(nm)).collect();
    let d = if probit { vec![false; n] } else { status.clone() };
    let data = SurvivalDataset::with_names(y, d, x, names).map_err(CliError::Model)?;
    Ok(Table { data, status, dummies })
}

/// Writes a dataset in the input schema (natural-scale times).
pub fn write_dataset(path: &Path, data: &SurvivalDataset) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut header = vec!["time".to_string(), "status".to_string()];
    header.extend(data.names.iter().cloned());
    w.write_record(&header).map_err(|e| CliError::Io(e.to_string()))?;
    for i in 0..data.n() {
        let mut row = vec![format!("{}", data.y[i].exp()), if data.d[i] { "1".into() } else { "0".into() }];
        row.extend((0..data.p()).map(|j| format!("{}", data.x[(i, j)])));
        w.write_record(&row).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

//! Comma-separated feature tables.
//!
//! Header is mandatory. Columns named `label`, `domain` and `split` are
//! metadata; every other column is a feature, in header order. `split` is
//! exactly `train` or `test`.

use std::path::Path;

use super::{DomainPool, DomainSplit, Sample};
use crate::error::{Error, Result};

pub fn load_features_table(path: &Path) -> Result<DomainPool> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing `{name}` column"),
        })
    };
    let (label_col, domain_col, split_col) = (find("label")?, find("domain")?, find("split")?);
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != label_col && i != domain_col && i != split_col)
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no feature columns".into(),
        });
    }

    let mut rows: Vec<(Sample, bool)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let bad = |what: &str, tok: &str| Error::Parse {
            line,
            message: format!("invalid {what} `{tok}`"),
        };
        let mut features = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let tok = &record[c];
            let v: f64 = tok.parse().map_err(|_| bad("feature", tok))?;
            if !v.is_finite() {
                return Err(bad("non-finite feature", tok));
            }
            features.push(v);
        }
        let label = record[label_col].parse().map_err(|_| bad("label", &record[label_col]))?;
        let domain = record[domain_col].parse().map_err(|_| bad("domain", &record[domain_col]))?;
        let is_train = match &record[split_col] {
            "train" => true,
            "test" => false,
            other => return Err(bad("split", other)),
        };
        rows.push((
            Sample {
                features,
                label,
                domain,
            },
            is_train,
        ));
    }
    if rows.is_empty() {
        return Err(Error::Validation("feature table has no rows".into()));
    }

    let num_classes = rows.iter().map(|(s, _)| s.label).max().unwrap() + 1;
    let num_domains = rows.iter().map(|(s, _)| s.domain).max().unwrap() + 1;
    let mut domains = vec![DomainSplit::default(); num_domains];
    for (s, is_train) in rows {
        let dom = &mut domains[s.domain];
        if is_train {
            dom.train.push(s);
        } else {
            dom.test.push(s);
        }
    }
    let pool = DomainPool {
        dim: feature_cols.len(),
        num_classes,
        domains,
    };
    pool.validate()?;
    Ok(pool)
}

pub fn write_features_table(pool: &DomainPool, path: &Path) -> Result<()> {
    let io = |e: csv::Error| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header: Vec<String> = (0..pool.dim).map(|i| format!("f{i}")).collect();
    header.extend(["label", "domain", "split"].map(String::from));
    w.write_record(&header).map_err(io)?;
    for dom in &pool.domains {
        for (split, samples) in [("train", &dom.train), ("test", &dom.test)] {
            for s in samples {
                let mut rec: Vec<String> = s.features.iter().map(|x| format!("{x:?}")).collect();
                rec.push(s.label.to_string());
                rec.push(s.domain.to_string());
                rec.push(split.to_string());
                w.write_record(&rec).map_err(io)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

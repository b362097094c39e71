//! Observational data model: case records, datasets, CSV ingestion and
//! persistence, and deterministic fold splitting.
//!
//! The on-disk format is a plain CSV with reserved leading columns
//! `id,treatment,outcome` followed by the covariate columns. Floats are
//! written with 17 significant digits so a write/load round trip is
//! lossless.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

/// One observational unit: covariates, binary treatment, binary outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub id: u64,
    pub covariates: Vec<f64>,
    /// 1 = treated (bail set), 0 = released.
    pub treatment: u8,
    /// 1 = adverse event (failure to appear).
    pub outcome: u8,
}

/// Immutable column-oriented collection of case records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Vec<String>,
    records: Vec<CaseRecord>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(schema: Vec<String>, records: Vec<CaseRecord>, provenance: String) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.covariates.len() != schema.len() {
                return Err(Error::Validation(format!(
                    "record id {} has {} covariates, schema declares {}",
                    r.id,
                    r.covariates.len(),
                    schema.len()
                )));
            }
            if r.treatment > 1 {
                return Err(Error::Validation(format!(
                    "record id {} has non-binary treatment {}",
                    r.id, r.treatment
                )));
            }
            if r.outcome > 1 {
                return Err(Error::Validation(format!(
                    "record id {} has non-binary outcome {}",
                    r.id, r.outcome
                )));
            }
            if !seen.insert(r.id) {
                return Err(Error::Validation(format!("duplicate record id {}", r.id)));
            }
        }
        Ok(Self { schema, records, provenance })
    }

    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn records(&self) -> &[CaseRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.id).collect()
    }

    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.schema
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    }

    /// Column of one covariate across all records, in record order.
    pub fn covariate_column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self.covariate_index(name)?;
        Ok(self.records.iter().map(|r| r.covariates[idx]).collect())
    }

    pub fn treatments(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.treatment).collect()
    }

    pub fn outcomes(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.outcome).collect()
    }

    /// New dataset containing the records with the given ids, preserving
    /// this dataset's record order.
    pub fn subset(&self, ids: &HashSet<u64>) -> Dataset {
        let records: Vec<CaseRecord> =
            self.records.iter().filter(|r| ids.contains(&r.id)).cloned().collect();
        Dataset {
            schema: self.schema.clone(),
            records,
            provenance: self.provenance.clone(),
        }
    }
}

/// Disjoint partition of a dataset's ids into policy/nuisance/eval folds.
#[derive(Debug, Clone)]
pub struct FoldSplit {
    pub policy_fold: HashSet<u64>,
    pub nuisance_fold: HashSet<u64>,
    pub eval_fold: HashSet<u64>,
}

/// Deterministically partition ids into three folds.
///
/// Sizes follow the floor rule: |policy| = floor(n*f_policy),
/// |nuisance| = floor(n*f_nuisance), remainder to eval.
pub fn split_folds(d: &Dataset, seed: u64, fractions: (f64, f64, f64)) -> Result<FoldSplit> {
    let (fp, fn_, fe) = fractions;
    if fp <= 0.0 || fn_ <= 0.0 || fe <= 0.0 {
        return Err(Error::Domain(format!("fold fractions must be positive, got {fractions:?}")));
    }
    if (fp + fn_ + fe - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "fold fractions must sum to 1, got {}",
            fp + fn_ + fe
        )));
    }
    let n = d.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 records to split folds, got {n}"
        )));
    }
    // Tolerant floor absorbs representation error when a fraction encodes an
    // exact integer count (count/n).
    let floor_of = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let n_policy = floor_of(fp);
    let n_nuisance = floor_of(fn_);

    let mut ids = d.ids();
    ids.sort_unstable();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let policy_fold: HashSet<u64> = ids[..n_policy].iter().copied().collect();
    let nuisance_fold: HashSet<u64> = ids[n_policy..n_policy + n_nuisance].iter().copied().collect();
    let eval_fold: HashSet<u64> = ids[n_policy + n_nuisance..].iter().copied().collect();
    Ok(FoldSplit { policy_fold, nuisance_fold, eval_fold })
}

/// Fractions encoding "exactly `eval_count` eval units, remainder halved",
/// constructed so the floor rule reproduces the counts.
pub fn fractions_with_eval_count(n: usize, eval_count: usize) -> Result<(f64, f64, f64)> {
    if eval_count == 0 || eval_count >= n {
        return Err(Error::Domain(format!(
            "eval_count {eval_count} must be in (0, {n})"
        )));
    }
    let rem = n - eval_count;
    let n_policy = rem - rem / 2; // larger half to the policy fold
    let n_nuisance = rem / 2;
    Ok((
        n_policy as f64 / n as f64,
        n_nuisance as f64 / n as f64,
        eval_count as f64 / n as f64,
    ))
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Load a dataset from CSV, validating the header and every cell.
pub fn load_dataset(path: &Path, schema: &[String]) -> Result<Dataset> {
    let path_str = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Csv { path: path_str.clone(), source: e })?;

    let mut expected: Vec<String> =
        vec!["id".to_string(), "treatment".to_string(), "outcome".to_string()];
    expected.extend(schema.iter().cloned());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Csv { path: path_str.clone(), source: e })?
        .clone();
    let got: Vec<String> = headers.iter().map(|h| h.to_string()).collect();
    if got != expected {
        return Err(Error::Schema(format!(
            "header mismatch in {path_str}: expected {expected:?}, got {got:?}"
        )));
    }

    let mut records = Vec::new();
    for (row_idx, rec) in rdr.records().enumerate() {
        let row = row_idx + 1; // 1-based data row number
        let rec = rec.map_err(|e| Error::Csv { path: path_str.clone(), source: e })?;
        if rec.len() != expected.len() {
            return Err(Error::Schema(format!(
                "row {row}: expected {} fields, got {}",
                expected.len(),
                rec.len()
            )));
        }
        let parse_cell = |col: usize, what: &str| -> Result<f64> {
            let raw = rec.get(col).unwrap_or("");
            raw.trim().parse::<f64>().map_err(|_| {
                Error::Parse(format!(
                    "row {row}, column '{}': cannot parse {what} value '{raw}'",
                    expected[col]
                ))
            })
        };
        let id = {
            let raw = rec.get(0).unwrap_or("");
            raw.trim().parse::<u64>().map_err(|_| {
                Error::Parse(format!("row {row}, column 'id': cannot parse id value '{raw}'"))
            })?
        };
        let parse_binary = |col: usize, what: &str| -> Result<u8> {
            let v = parse_cell(col, what)?;
            if v == 0.0 {
                Ok(0)
            } else if v == 1.0 {
                Ok(1)
            } else {
                Err(Error::Validation(format!(
                    "row {row}: {what} must be 0 or 1, got '{v}'"
                )))
            }
        };
        let treatment = parse_binary(1, "treatment")?;
        let outcome = parse_binary(2, "outcome")?;
        let mut covariates = Vec::with_capacity(schema.len());
        for (j, _) in schema.iter().enumerate() {
            covariates.push(parse_cell(3 + j, "covariate")?);
        }
        records.push(CaseRecord { id, covariates, treatment, outcome });
    }

    Dataset::new(schema.to_vec(), records, format!("loaded from {path_str}"))
}

/// Write a dataset to CSV in the reserved-column format.
pub fn write_dataset(d: &Dataset, path: &Path) -> Result<()> {
    let path_str = path.display().to_string();
    let mut out = String::new();
    out.push_str("id,treatment,outcome");
    for name in d.schema() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for r in d.records() {
        write!(out, "{},{},{}", r.id, r.treatment, r.outcome).unwrap();
        for c in &r.covariates {
            out.push(',');
            out.push_str(&fmt_float(*c));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::Io { path: path_str, source: e })
}

/// Cell in a results table.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Float(v) => write!(f, "{}", fmt_float(*v)),
            Cell::Text(s) => write!(f, "{s}"),
        }
    }
}

/// Named-column table for tidy CSV exports, one estimate per row.
#[derive(Debug, Clone, Default)]
pub struct ResultsTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultsTable {
    pub fn new(headers: &[&str]) -> Self {
        Self { headers: headers.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.headers.len(), "row width must match header");
        self.rows.push(row);
    }
}

/// Write a results table as CSV with a header row.
pub fn write_results(table: &ResultsTable, path: &Path) -> Result<()> {
    let path_str = path.display().to_string();
    let mut out = String::new();
    out.push_str(&table.headers.join(","));
    out.push('\n');
    for row in &table.rows {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::Io { path: path_str, source: e })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::io::Write;

    fn schema2() -> Vec<String> {
        vec!["age".to_string(), "score".to_string()]
    }

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn load_well_formed() {
        let f = write_tmp(
            "id,treatment,outcome,age,score\n1,0,1,23,0.5\n2,1,0,34,1.5\n3,0,0,45,-0.25\n4,1,1,56,2.0\n",
        );
        let d = load_dataset(f.path(), &schema2()).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.ids(), vec![1, 2, 3, 4]);
        assert_eq!(d.records()[2].covariates, vec![45.0, -0.25]);
    }

    #[test]
    fn non_binary_treatment_names_row() {
        let f = write_tmp(
            "id,treatment,outcome,age,score\n1,0,1,23,0.5\n2,1,0,34,1.5\n3,2,0,45,-0.25\n",
        );
        let err = load_dataset(f.path(), &schema2()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 3"), "expected row 3 in: {msg}");
        assert!(msg.contains("treatment"));
    }

    #[test]
    fn unparseable_cell_named() {
        let f = write_tmp("id,treatment,outcome,age,score\n1,0,1,abc,0.5\n");
        let err = load_dataset(f.path(), &schema2()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 1") && msg.contains("age"), "{msg}");
    }

    #[test]
    fn header_mismatch_is_schema_error() {
        let f = write_tmp("id,treatment,outcome,age\n1,0,1,23\n");
        match load_dataset(f.path(), &schema2()) {
            Err(Error::Schema(_)) => {}
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let f = write_tmp("id,treatment,outcome,age,score\n1,0,1,23,0.5\n1,1,0,34,1.5\n");
        let err = load_dataset(f.path(), &schema2()).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    // Round-trip oracle: a random 100-row dataset survives write/load
    // field-for-field.
    #[test]
    fn round_trip_random_dataset() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(13);
        let records: Vec<CaseRecord> = (0..100)
            .map(|i| CaseRecord {
                id: i as u64 + 1,
                covariates: vec![
                    rng.random_range(-50.0..50.0),
                    rng.random::<f64>() * 1e-8,
                    rng.random_range(1e6..1e9),
                ],
                treatment: rng.random_range(0..=1),
                outcome: rng.random_range(0..=1),
            })
            .collect();
        let schema = vec!["a".into(), "b".into(), "c".into()];
        let d = Dataset::new(schema.clone(), records, "test".into()).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_dataset(&d, f.path()).unwrap();
        let d2 = load_dataset(f.path(), &schema).unwrap();
        assert_eq!(d.len(), d2.len());
        for (a, b) in d.records().iter().zip(d2.records()) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.treatment, b.treatment);
            assert_eq!(a.outcome, b.outcome);
            assert_eq!(a.covariates, b.covariates);
        }
    }

    #[test]
    fn empty_results_table_is_header_only() {
        let t = ResultsTable::new(&["threshold", "release_rate", "value"]);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_results(&t, f.path()).unwrap();
        let content = std::fs::read_to_string(f.path()).unwrap();
        assert_eq!(content, "threshold,release_rate,value\n");
    }

    #[test]
    fn results_rows_in_order() {
        let mut t = ResultsTable::new(&["threshold", "release_rate", "value"]);
        t.push(vec![Cell::Float(0.1), Cell::Float(0.5), Cell::Float(0.12)]);
        t.push(vec![Cell::Float(0.2), Cell::Float(0.7), Cell::Float(0.13)]);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_results(&t, f.path()).unwrap();
        let content = std::fs::read_to_string(f.path()).unwrap();
        let lines: Vec<&str> = content.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1.0000000000000001e-1"));
        assert!(lines[2].starts_with("2.0000000000000001e-1"));
    }

    fn tiny_dataset(n: usize) -> Dataset {
        let records: Vec<CaseRecord> = (0..n)
            .map(|i| CaseRecord {
                id: i as u64,
                covariates: vec![i as f64],
                treatment: (i % 2) as u8,
                outcome: ((i / 2) % 2) as u8,
            })
            .collect();
        Dataset::new(vec!["x".into()], records, "tiny".into()).unwrap()
    }

    #[test]
    fn fold_sizes_follow_floor_rule() {
        let d = tiny_dataset(10);
        let s = split_folds(&d, 42, (0.5, 0.3, 0.2)).unwrap();
        assert_eq!(s.policy_fold.len(), 5);
        assert_eq!(s.nuisance_fold.len(), 3);
        assert_eq!(s.eval_fold.len(), 2);
    }

    #[test]
    fn fold_split_deterministic() {
        let d = tiny_dataset(97);
        let a = split_folds(&d, 7, (0.4, 0.4, 0.2)).unwrap();
        let b = split_folds(&d, 7, (0.4, 0.4, 0.2)).unwrap();
        assert_eq!(a.policy_fold, b.policy_fold);
        assert_eq!(a.nuisance_fold, b.nuisance_fold);
        assert_eq!(a.eval_fold, b.eval_fold);
        let c = split_folds(&d, 8, (0.4, 0.4, 0.2)).unwrap();
        assert_ne!(a.policy_fold, c.policy_fold);
    }

    #[test]
    fn paper_scale_split_with_forced_eval_count() {
        // 165,055 cases, eval fold forced to 10,000, remainder halved
        let n = 165_055;
        let fr = fractions_with_eval_count(n, 10_000).unwrap();
        let records: Vec<CaseRecord> = (0..n)
            .map(|i| CaseRecord {
                id: i as u64,
                covariates: vec![],
                treatment: 0,
                outcome: 0,
            })
            .collect();
        let d = Dataset::new(vec![], records, "big".into()).unwrap();
        let s = split_folds(&d, 1, fr).unwrap();
        assert_eq!(s.eval_fold.len(), 10_000);
        let (a, b) = (s.policy_fold.len(), s.nuisance_fold.len());
        assert!(a == 77_527 || a == 77_528, "{a}");
        assert!(b == 77_527 || b == 77_528, "{b}");
        assert_eq!(a + b, 155_055);
    }

    #[test]
    fn too_small_dataset_rejected() {
        let d = tiny_dataset(2);
        match split_folds(&d, 0, (0.4, 0.4, 0.2)) {
            Err(Error::InsufficientData(_)) => {}
            other => panic!("expected insufficient data, got {other:?}"),
        }
    }

    #[test]
    fn bad_fractions_rejected() {
        let d = tiny_dataset(10);
        assert!(split_folds(&d, 0, (0.5, 0.5, 0.1)).is_err());
        assert!(split_folds(&d, 0, (0.5, 0.5, -0.0)).is_err());
    }
}

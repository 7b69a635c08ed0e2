//! Trial and historical-control datasets, CSV ingestion, and the centered
//! design matrix shared by the Bayesian and frequentist fits.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub outcome: f64,
    pub treated: bool,
    pub score: f64,
}

impl SubjectRecord {
    pub fn new(outcome: f64, treated: bool, score: f64) -> Self {
        SubjectRecord {
            outcome,
            treated,
            score,
        }
    }

    pub fn treatment(&self) -> f64 {
        if self.treated {
            1.0
        } else {
            0.0
        }
    }
}

/// A randomized trial: at least four subjects, both arms present and a
/// non-degenerate prognostic score.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialDataset {
    subjects: Vec<SubjectRecord>,
}

impl TrialDataset {
    pub fn new(subjects: Vec<SubjectRecord>) -> Result<Self> {
        validate_trial(&subjects)?;
        Ok(TrialDataset { subjects })
    }

    /// Build from parallel columns; `treatment` entries must be exactly 0 or 1.
    pub fn from_columns(outcomes: &[f64], treatment: &[f64], scores: &[f64]) -> Result<Self> {
        if outcomes.len() != treatment.len() || outcomes.len() != scores.len() {
            return Err(Error::invalid(format!(
                "column lengths differ: y={}, w={}, m={}",
                outcomes.len(),
                treatment.len(),
                scores.len()
            )));
        }
        let mut subjects = Vec::with_capacity(outcomes.len());
        for (i, ((&y, &w), &m)) in outcomes.iter().zip(treatment).zip(scores).enumerate() {
            let treated = parse_treatment(w).ok_or_else(|| Error::Validation {
                row: Some(i + 1),
                message: format!("treatment must be 0 or 1, got {w}"),
            })?;
            subjects.push(SubjectRecord::new(y, treated, m));
        }
        Self::new(subjects)
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn treated_count(&self) -> usize {
        self.subjects.iter().filter(|s| s.treated).count()
    }
}

fn parse_treatment(w: f64) -> Option<bool> {
    if w == 0.0 {
        Some(false)
    } else if w == 1.0 {
        Some(true)
    } else {
        None
    }
}

fn validate_trial(subjects: &[SubjectRecord]) -> Result<()> {
    for (i, s) in subjects.iter().enumerate() {
        if !s.outcome.is_finite() || !s.score.is_finite() {
            return Err(Error::NonFinite(format!("subject {} has a non-finite value", i + 1)));
        }
    }
    if subjects.len() < 4 {
        return Err(Error::Validation {
            row: None,
            message: format!("trial needs at least 4 subjects, got {}", subjects.len()),
        });
    }
    let treated = subjects.iter().filter(|s| s.treated).count();
    if treated == 0 || treated == subjects.len() {
        return Err(Error::RankDeficient(
            "all subjects are in the same arm; treatment is collinear with the intercept".into(),
        ));
    }
    let first = subjects[0].score;
    if subjects.iter().all(|s| s.score == first) {
        return Err(Error::RankDeficient("prognostic scores are all equal".into()));
    }
    Ok(())
}

/// Historical control data: outcomes and prognostic scores, no treatment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistoricalDataset {
    outcomes: Vec<f64>,
    scores: Vec<f64>,
}

impl HistoricalDataset {
    pub fn new(outcomes: Vec<f64>, scores: Vec<f64>) -> Result<Self> {
        if outcomes.len() != scores.len() {
            return Err(Error::invalid(format!(
                "column lengths differ: y={}, m={}",
                outcomes.len(),
                scores.len()
            )));
        }
        if let Some(i) = outcomes
            .iter()
            .zip(&scores)
            .position(|(y, m)| !y.is_finite() || !m.is_finite())
        {
            return Err(Error::NonFinite(format!("historical row {} has a non-finite value", i + 1)));
        }
        if outcomes.len() < 4 {
            return Err(Error::Validation {
                row: None,
                message: format!("historical data needs at least 4 rows, got {}", outcomes.len()),
            });
        }
        if scores.iter().all(|&m| m == scores[0]) {
            return Err(Error::RankDeficient("historical prognostic scores are all equal".into()));
        }
        Ok(HistoricalDataset { outcomes, scores })
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }
}

/// Rows `(1, w_i, m_i - m̄)` with outcomes shifted to `y_i - m̄`, plus the
/// sufficient statistics every conjugate update needs.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    rows: Vec<[f64; 3]>,
    m_bar: f64,
    y_centered: Vec<f64>,
    gram: Matrix3<f64>,
    cross: Vector3<f64>,
}

impl DesignMatrix {
    pub fn rows(&self) -> &[[f64; 3]] {
        &self.rows
    }

    pub fn m_bar(&self) -> f64 {
        self.m_bar
    }

    pub fn y_centered(&self) -> &[f64] {
        &self.y_centered
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// `VᵀV`.
    pub fn gram(&self) -> &Matrix3<f64> {
        &self.gram
    }

    /// `Vᵀy⁽ᶜ⁾`.
    pub fn cross(&self) -> &Vector3<f64> {
        &self.cross
    }

    pub fn row(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.rows[i])
    }

    /// `‖y⁽ᶜ⁾ − Vβ‖²`, accumulated row by row.
    pub fn residual_ss(&self, beta: &Vector3<f64>) -> f64 {
        self.rows
            .iter()
            .zip(&self.y_centered)
            .map(|(v, y)| {
                let r = y - (v[0] * beta[0] + v[1] * beta[1] + v[2] * beta[2]);
                r * r
            })
            .sum()
    }
}

pub fn build_design(trial: &TrialDataset) -> Result<DesignMatrix> {
    let subjects = trial.subjects();
    validate_trial(subjects)?;
    let n = subjects.len() as f64;
    let m_bar = subjects.iter().map(|s| s.score).sum::<f64>() / n;
    let rows: Vec<[f64; 3]> = subjects
        .iter()
        .map(|s| [1.0, s.treatment(), s.score - m_bar])
        .collect();
    let y_centered: Vec<f64> = subjects.iter().map(|s| s.outcome - m_bar).collect();

    let mut gram = Matrix3::zeros();
    let mut cross = Vector3::zeros();
    for (r, &y) in rows.iter().zip(&y_centered) {
        let v = Vector3::from(*r);
        gram += v * v.transpose();
        cross += v * y;
    }
    check_rank(&gram)?;
    Ok(DesignMatrix {
        rows,
        m_bar,
        y_centered,
        gram,
        cross,
    })
}

/// Rank test on the unit-diagonal rescaling of `VᵀV`, so that the threshold
/// does not depend on the units of the score.
fn check_rank(gram: &Matrix3<f64>) -> Result<()> {
    let d = gram.diagonal().map(|x| 1.0 / x.sqrt());
    let scaled = Matrix3::from_diagonal(&d) * gram * Matrix3::from_diagonal(&d);
    let det = scaled.determinant();
    if !(det > 1e-12) {
        return Err(Error::RankDeficient(format!(
            "design columns are (nearly) collinear; normalized det(VᵀV) = {det:.3e}"
        )));
    }
    Ok(())
}

/// Column names used when reading CSV files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvColumns {
    pub outcome: String,
    pub treatment: String,
    pub score: String,
}

impl Default for CsvColumns {
    fn default() -> Self {
        CsvColumns {
            outcome: "y".into(),
            treatment: "w".into(),
            score: "m".into(),
        }
    }
}

pub fn load_trial_csv(path: impl AsRef<Path>) -> Result<TrialDataset> {
    load_trial_csv_with(path, &CsvColumns::default())
}

pub fn load_trial_csv_with(path: impl AsRef<Path>, columns: &CsvColumns) -> Result<TrialDataset> {
    let path = path.as_ref();
    let table = read_numeric_columns(
        path,
        &[&columns.outcome, &columns.treatment, &columns.score],
    )?;
    let mut subjects = Vec::with_capacity(table.len());
    for (i, row) in table.iter().enumerate() {
        let treated = parse_treatment(row[1]).ok_or_else(|| Error::Validation {
            row: Some(i + 1),
            message: format!("column '{}' must be 0 or 1, got {}", columns.treatment, row[1]),
        })?;
        subjects.push(SubjectRecord::new(row[0], treated, row[2]));
    }
    TrialDataset::new(subjects)
}

pub fn load_historical_csv(path: impl AsRef<Path>) -> Result<HistoricalDataset> {
    load_historical_csv_with(path, &CsvColumns::default())
}

pub fn load_historical_csv_with(
    path: impl AsRef<Path>,
    columns: &CsvColumns,
) -> Result<HistoricalDataset> {
    let path = path.as_ref();
    let table = read_numeric_columns(path, &[&columns.outcome, &columns.score])?;
    let (y, m) = table.iter().map(|r| (r[0], r[1])).unzip();
    HistoricalDataset::new(y, m)
}

fn read_numeric_columns(path: &Path, wanted: &[&str]) -> Result<Vec<Vec<f64>>> {
    let parse_err = |row: Option<usize>, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        message,
    };
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| parse_err(None, e.to_string()))?
        .clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(parse_err(None, "file is empty or has no header row".into()));
    }
    let mut index = Vec::with_capacity(wanted.len());
    for name in wanted {
        let pos = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| parse_err(None, format!("missing column '{name}'")))?;
        index.push(pos);
    }

    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| parse_err(Some(row), e.to_string()))?;
        let mut values = Vec::with_capacity(index.len());
        for (&pos, name) in index.iter().zip(wanted) {
            let field = record
                .get(pos)
                .ok_or_else(|| parse_err(Some(row), format!("missing field '{name}'")))?;
            if field.is_empty() {
                return Err(parse_err(Some(row), format!("missing value in column '{name}'")));
            }
            let v: f64 = field.parse().map_err(|_| {
                parse_err(Some(row), format!("column '{name}': cannot parse '{field}' as a number"))
            })?;
            if !v.is_finite() {
                return Err(Error::Validation {
                    row: Some(row),
                    message: format!("column '{name}' is not finite"),
                });
            }
            values.push(v);
        }
        out.push(values);
    }
    Ok(out)
}

pub fn write_trial_csv(path: impl AsRef<Path>, trial: &TrialDataset) -> Result<()> {
    let mut text = String::from("y,w,m\n");
    for s in trial.subjects() {
        text.push_str(&format!("{},{},{}\n", s.outcome, u8::from(s.treated), s.score));
    }
    write_file(path.as_ref(), &text)
}

pub fn write_historical_csv(path: impl AsRef<Path>, hist: &HistoricalDataset) -> Result<()> {
    let mut text = String::from("y,m\n");
    for (y, m) in hist.outcomes().iter().zip(hist.scores()) {
        text.push_str(&format!("{y},{m}\n"));
    }
    write_file(path.as_ref(), &text)
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

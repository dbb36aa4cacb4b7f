//! Writing run artifacts and re-reading replicate tables for `report`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::run::{RunOutput, VERSION};
use crate::summary::{MergeError, ReplicateSet, StatRow, Table};

pub const LEVELS_CSV: &str = "levels.csv";
pub const REPLICATES_CSV: &str = "replicates.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_CSV: &str = "summary.csv";

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Merge { path: PathBuf, source: MergeError },
    #[error("cannot encode JSON: {0}")]
    Json(#[from] serde_json::Error),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io { path: path.to_path_buf(), source }
}

pub fn table_to_csv(table: &Table) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

pub fn read_table(path: &Path) -> Result<Table, OutputError> {
    let csv_err = |source| OutputError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()
        .map_err(csv_err)?;
    Ok(Table { header, rows })
}

fn stats_table(rows: &[StatRow]) -> Table {
    let mut t = Table::new(["statistic", "mean", "variance", "std_err", "count"]);
    for s in rows {
        t.push_text(vec![
            s.name.clone(),
            s.mean.to_string(),
            s.variance.to_string(),
            s.std_err.to_string(),
            s.count.to_string(),
        ]);
    }
    t
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), OutputError> {
    fs::write(path, bytes).map_err(io(path))
}

fn write_csv(path: &Path, table: &Table) -> Result<(), OutputError> {
    let bytes = table_to_csv(table).map_err(|source| OutputError::Csv { path: path.to_path_buf(), source })?;
    write(path, &bytes)
}

/// Writes `levels.csv`, `replicates.csv`, `summary.csv`, `summary.json` and
/// any artifacts into `dir`, returning the paths written.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<Vec<PathBuf>, OutputError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();
    let mut emit = |name: &str, f: &dyn Fn(&Path) -> Result<(), OutputError>| {
        let p = dir.join(name);
        f(&p)?;
        written.push(p);
        Ok::<_, OutputError>(())
    };
    emit(LEVELS_CSV, &|p| write_csv(p, &out.levels))?;
    emit(REPLICATES_CSV, &|p| write_csv(p, &out.replicates))?;
    emit(SUMMARY_CSV, &|p| write_csv(p, &stats_table(&out.summary.statistics)))?;
    emit(SUMMARY_JSON, &|p| write(p, serde_json::to_string_pretty(&out.summary)?.as_bytes()))?;
    for (name, bytes) in &out.artifacts {
        emit(name, &|p| write(p, bytes))?;
    }
    Ok(written)
}

#[derive(Debug, Clone, Serialize)]
pub struct MergedReport {
    pub version: String,
    pub sources: Vec<PathBuf>,
    pub replicates: usize,
    pub statistics: Vec<StatRow>,
}

/// Merges the replicate tables of several run directories (union by seed)
/// and summarizes every column.
pub fn merge_runs(dirs: &[PathBuf]) -> Result<(MergedReport, Table), OutputError> {
    let mut merged = ReplicateSet::default();
    for dir in dirs {
        let path = dir.join(REPLICATES_CSV);
        let table = read_table(&path)?;
        let wrap = |source| OutputError::Merge { path: path.clone(), source };
        merged = merged.merge(ReplicateSet::from_table(&table).map_err(wrap)?).map_err(wrap)?;
    }
    let statistics = merged.summaries();
    let table = stats_table(&statistics);
    Ok((
        MergedReport { version: VERSION.into(), sources: dirs.to_vec(), replicates: merged.rows.len(), statistics },
        table,
    ))
}

pub fn write_merged(dir: &Path, report: &MergedReport, table: &Table) -> Result<(), OutputError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    write_csv(&dir.join(SUMMARY_CSV), table)?;
    write(&dir.join(SUMMARY_JSON), serde_json::to_string_pretty(report)?.as_bytes())
}

//! CSV and JSON artifacts: cohorts, truth, assignments, splits, profiles,
//! trajectories, loss histories and model files.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use pheno_core::cohort::{
    fio2_fraction, Cohort, ObservationRow, Outcome, PatientSeries, VitalChannel, N_CHANNELS, N_OUTCOMES,
};
use pheno_core::eval::ClusterProfile;
use pheno_core::preprocess::GridSpec;
use pheno_core::Matrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, Result};

pub const COHORT_HEADER: [&str; N_CHANNELS + 3] = [
    "patient_id",
    "hours_to_outcome",
    "HR",
    "RR",
    "DBP",
    "SBP",
    "SPO2",
    "TEMP",
    "AVPU",
    "FIO2",
    "outcome",
];
pub const PROFILE_HEADER: [&str; N_OUTCOMES + 2] =
    ["cluster", "size", "p_discharge", "p_icu", "p_cardiac_arrest", "p_death"];

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(f)))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::io(path, source),
        kind => CliError::Parse {
            path: path.into(),
            line,
            msg: format!("{kind:?}"),
        },
    }
}

fn finish(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| CliError::io(path, e))
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, path: &Path, expected: &[&str]) -> Result<()> {
    let h = rdr.headers().map_err(|e| csv_err(path, e))?;
    if h.iter().ne(expected.iter().copied()) {
        return Err(CliError::Parse {
            path: path.into(),
            line: 1,
            msg: format!(
                "expected header `{}`, found `{}`",
                expected.join(","),
                h.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| CliError::Parse {
        path: path.into(),
        line,
        msg: format!("cannot parse {name} `{s}`"),
    })
}

fn parse_f64(path: &Path, line: u64, name: &str, s: &str) -> Result<f64> {
    let v: f64 = parse_field(path, line, name, s)?;
    if !v.is_finite() {
        return Err(CliError::Parse {
            path: path.into(),
            line,
            msg: format!("{name} must be finite"),
        });
    }
    Ok(v)
}

fn line_of(r: &csv::StringRecord) -> u64 {
    r.position().map_or(0, |p| p.line())
}

pub fn load_cohort(path: &Path) -> Result<Cohort> {
    read_cohort(open(path)?, path)
}

/// Parses the cohort CSV. Rows are grouped by patient (first-appearance
/// order) and sorted chronologically; FIO2 percentages become fractions.
/// Patient id, outcome and timed rows.
type Group = (String, Outcome, Vec<(f64, ObservationRow)>);

pub fn read_cohort<R: Read>(src: R, path: &Path) -> Result<Cohort> {
    let mut rdr = reader(src);
    check_header(&mut rdr, path, &COHORT_HEADER)?;
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<Group> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = line_of(&rec);
        let id = rec[0].trim();
        if id.is_empty() {
            return Err(CliError::Parse {
                path: path.into(),
                line,
                msg: "empty patient_id".into(),
            });
        }
        let hours = parse_f64(path, line, "hours_to_outcome", &rec[1])?;
        let mut row: ObservationRow = [None; N_CHANNELS];
        for ch in VitalChannel::ALL {
            let cell = rec[ch.index() + 2].trim();
            if !cell.is_empty() {
                let v = parse_f64(path, line, ch.name(), cell)?;
                row[ch.index()] = Some(if ch == VitalChannel::Fio2 { fio2_fraction(v) } else { v });
            }
        }
        let outcome = Outcome::parse(rec[N_CHANNELS + 2].trim())
            .map_err(|e| CliError::validation(format!("{}:{line}: {e}", path.display())))?;
        let slot = *index.entry(id.to_string()).or_insert_with(|| {
            groups.push((id.to_string(), outcome, Vec::new()));
            groups.len() - 1
        });
        if groups[slot].1 != outcome {
            return Err(CliError::validation(format!(
                "{}:{line}: patient {id} has conflicting outcomes {} and {outcome}",
                path.display(),
                groups[slot].1
            )));
        }
        groups[slot].2.push((hours, row));
    }
    let mut patients = Vec::with_capacity(groups.len());
    let mut labels = Vec::with_capacity(groups.len());
    for (id, outcome, rows) in groups {
        patients.push(PatientSeries::from_observations(id, rows)?);
        labels.push(outcome);
    }
    Ok(Cohort::new(patients, labels)?)
}

pub fn save_cohort(cohort: &Cohort, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(COHORT_HEADER).map_err(|e| csv_err(path, e))?;
    for (p, outcome) in cohort.patients().iter().zip(cohort.labels()) {
        for (i, t) in p.times().iter().enumerate() {
            let mut rec = Vec::with_capacity(COHORT_HEADER.len());
            rec.push(p.patient_id().to_string());
            rec.push(t.to_string());
            for ch in VitalChannel::ALL {
                rec.push(p.reading(i, ch).map(|v| v.to_string()).unwrap_or_default());
            }
            rec.push(outcome.to_string());
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
    }
    finish(w, path)
}

fn write_pairs<T: ToString>(path: &Path, header: [&str; 2], rows: &[(String, T)]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for (id, v) in rows {
        w.write_record([id.as_str(), &v.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    finish(w, path)
}

fn read_pairs<T: std::str::FromStr>(path: &Path, header: [&str; 2]) -> Result<Vec<(String, T)>> {
    let mut rdr = reader(open(path)?);
    check_header(&mut rdr, path, &header)?;
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = line_of(&rec);
        let id = rec[0].trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(CliError::Parse {
                path: path.into(),
                line,
                msg: format!("duplicate patient_id `{id}`"),
            });
        }
        out.push((id, parse_field(path, line, header[1], &rec[1])?));
    }
    Ok(out)
}

const TRUTH_HEADER: [&str; 2] = ["patient_id", "phenotype_id"];
const ASSIGNMENT_HEADER: [&str; 2] = ["patient_id", "cluster"];
const SPLIT_HEADER: [&str; 2] = ["patient_id", "split"];

pub fn save_truth(path: &Path, rows: &[(String, usize)]) -> Result<()> {
    write_pairs(path, TRUTH_HEADER, rows)
}

pub fn load_truth(path: &Path) -> Result<Vec<(String, usize)>> {
    read_pairs(path, TRUTH_HEADER)
}

pub fn save_assignments(path: &Path, rows: &[(String, usize)]) -> Result<()> {
    write_pairs(path, ASSIGNMENT_HEADER, rows)
}

pub fn load_assignments(path: &Path) -> Result<Vec<(String, usize)>> {
    read_pairs(path, ASSIGNMENT_HEADER)
}

pub fn save_split(path: &Path, rows: &[(String, crate::split::Part)]) -> Result<()> {
    write_pairs(path, SPLIT_HEADER, rows)
}

pub fn load_split(path: &Path) -> Result<Vec<(String, crate::split::Part)>> {
    read_pairs(path, SPLIT_HEADER)
}

/// `<stem>.truth.csv` next to the cohort file.
pub fn truth_path(cohort: &Path) -> PathBuf {
    let stem = cohort
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    cohort.with_file_name(format!("{stem}.truth.csv"))
}

pub fn trajectory_path(dir: &Path, cluster: usize) -> PathBuf {
    dir.join(format!("trajectory_cluster_{cluster}.csv"))
}

fn write_trajectory(path: &Path, grid: &GridSpec, m: &Matrix) -> Result<()> {
    let mut w = create(path)?;
    let header: Vec<&str> = std::iter::once("hours_to_outcome")
        .chain(VitalChannel::ALL.map(|c| c.name()))
        .collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (i, row) in m.iter_rows().enumerate() {
        let rec: Vec<String> = std::iter::once(grid.bin_center(i))
            .chain(row.iter().copied())
            .map(|v| v.to_string())
            .collect();
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    finish(w, path)
}

/// Hours column and matrix of a trajectory CSV.
pub fn read_trajectory(path: &Path) -> Result<(Vec<f64>, Matrix)> {
    let mut rdr = reader(open(path)?);
    let header: Vec<&str> = std::iter::once("hours_to_outcome")
        .chain(VitalChannel::ALL.map(|c| c.name()))
        .collect();
    check_header(&mut rdr, path, &header)?;
    let mut hours = Vec::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = line_of(&rec);
        let vals = rec
            .iter()
            .enumerate()
            .map(|(j, s)| parse_f64(path, line, header[j], s))
            .collect::<Result<Vec<f64>>>()?;
        hours.push(vals[0]);
        rows.push(vals[1..].to_vec());
    }
    if rows.is_empty() {
        return Err(CliError::Parse {
            path: path.into(),
            line: 1,
            msg: "trajectory has no rows".into(),
        });
    }
    Ok((hours, Matrix::from_rows(&rows)?))
}

/// Writes `profiles.csv` plus one trajectory CSV per cluster into `dir`.
pub fn save_profiles(dir: &Path, grid: &GridSpec, profiles: &[ClusterProfile]) -> Result<()> {
    let path = dir.join("profiles.csv");
    let mut w = create(&path)?;
    w.write_record(PROFILE_HEADER).map_err(|e| csv_err(&path, e))?;
    for p in profiles {
        let rec: Vec<String> = [p.cluster.to_string(), p.size.to_string()]
            .into_iter()
            .chain(p.outcome_distribution.iter().map(|v| v.to_string()))
            .collect();
        w.write_record(&rec).map_err(|e| csv_err(&path, e))?;
        write_trajectory(&trajectory_path(dir, p.cluster), grid, &p.mean_trajectory)?;
    }
    finish(w, &path)
}

/// Reads `profiles.csv` and the per-cluster trajectories; also returns the
/// trajectory hours column.
pub fn load_profiles(dir: &Path) -> Result<(Vec<ClusterProfile>, Vec<f64>)> {
    let path = dir.join("profiles.csv");
    let mut rdr = reader(open(&path)?);
    check_header(&mut rdr, &path, &PROFILE_HEADER)?;
    let mut out = Vec::new();
    let mut hours = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&path, e))?;
        let line = line_of(&rec);
        let cluster: usize = parse_field(&path, line, "cluster", &rec[0])?;
        let size: usize = parse_field(&path, line, "size", &rec[1])?;
        let dist = (0..N_OUTCOMES)
            .map(|c| parse_f64(&path, line, PROFILE_HEADER[c + 2], &rec[c + 2]))
            .collect::<Result<Vec<f64>>>()?;
        let (h, traj) = read_trajectory(&trajectory_path(dir, cluster))?;
        hours = h;
        out.push(ClusterProfile {
            cluster,
            size,
            outcome_distribution: dist,
            mean_trajectory: traj,
        });
    }
    Ok((out, hours))
}

/// `stage,epoch,loss` rows.
pub fn save_loss_history(path: &Path, stages: &[(&str, &[f64])]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["stage", "epoch", "loss"])
        .map_err(|e| csv_err(path, e))?;
    for (stage, hist) in stages {
        for (i, l) in hist.iter().enumerate() {
            w.write_record([stage.to_string(), i.to_string(), l.to_string()])
                .map_err(|e| csv_err(path, e))?;
        }
    }
    finish(w, path)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.into(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.into(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}

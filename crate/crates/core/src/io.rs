//! On-disk artifacts: the trajectory CSV, JSON reports, record and field
//! dumps, and the sweep summary.
//!
//! The CSV layout is frozen: optional `#` provenance lines, then the header
//! `t,mass,l2,h_s,control_effort`, one row per sample, shortest round-trip
//! decimal formatting with `.` as separator.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{DriveKind, TrajectoryRecord};
use crate::error::{KdvError, Result};
use crate::experiment::{generator, CellResult, RunOutcome, SteerOutcome};
use crate::spectral::{Field, SpectralGrid};

pub const CSV_HEADER: &str = "t,mass,l2,h_s,control_effort";

pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const REPORT_JSON: &str = "report.json";
pub const RECORD_JSON: &str = "record.json";
pub const FIELDS_JSON: &str = "fields.json";
pub const CONTROL_JSON: &str = "control.json";
pub const SUMMARY_CSV: &str = "summary.csv";

/// Writes the trajectory CSV. `provenance` lines are prefixed with `# `.
pub fn write_csv(w: &mut impl Write, rec: &TrajectoryRecord, provenance: &[String]) -> Result<()> {
    for line in provenance {
        for part in line.lines() {
            writeln!(w, "# {part}")?;
        }
    }
    writeln!(w, "{CSV_HEADER}")?;
    for i in 0..rec.len() {
        writeln!(
            w,
            "{},{},{},{},{}",
            rec.times[i], rec.mass[i], rec.l2[i], rec.hs[i], rec.control_effort[i]
        )?;
    }
    Ok(())
}

/// Columns of a trajectory CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvColumns {
    pub provenance: Vec<String>,
    pub t: Vec<f64>,
    pub mass: Vec<f64>,
    pub l2: Vec<f64>,
    pub h_s: Vec<f64>,
    pub control_effort: Vec<f64>,
}

pub fn read_csv(r: impl std::io::Read) -> Result<CsvColumns> {
    let mut out = CsvColumns::default();
    let mut header_seen = false;
    for (lineno, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if let Some(rest) = line.strip_prefix('#') {
            out.provenance.push(rest.trim_start().to_string());
            continue;
        }
        if !header_seen {
            if line.trim() != CSV_HEADER {
                return Err(KdvError::Config(format!(
                    "line {}: expected header `{CSV_HEADER}`, found `{line}`",
                    lineno + 1
                )));
            }
            header_seen = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| KdvError::Config(format!("line {}: {e}", lineno + 1)))?;
        if vals.len() != 5 {
            return Err(KdvError::Config(format!("line {}: expected 5 columns", lineno + 1)));
        }
        out.t.push(vals[0]);
        out.mass.push(vals[1]);
        out.l2.push(vals[2]);
        out.h_s.push(vals[3]);
        out.control_effort.push(vals[4]);
    }
    if !header_seen {
        return Err(KdvError::Config("missing CSV header".into()));
    }
    Ok(out)
}

/// Everything in a [`TrajectoryRecord`] except the sampled fields.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecordDump {
    pub drive: DriveKind,
    pub dt: f64,
    pub s: f64,
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    pub l2: Vec<f64>,
    pub hs: Vec<f64>,
    pub control_effort: Vec<f64>,
    pub work: Vec<f64>,
    pub max_l2_increase: f64,
    pub n: usize,
    pub final_state: Vec<f64>,
}

impl RecordDump {
    pub fn from_record(rec: &TrajectoryRecord) -> Self {
        RecordDump {
            drive: rec.drive,
            dt: rec.dt,
            s: rec.s,
            times: rec.times.clone(),
            mass: rec.mass.clone(),
            l2: rec.l2.clone(),
            hs: rec.hs.clone(),
            control_effort: rec.control_effort.clone(),
            work: rec.work.clone(),
            max_l2_increase: rec.max_l2_increase,
            n: rec.final_state.grid().n(),
            final_state: rec.final_state.to_physical(),
        }
    }

    pub fn into_record(self) -> Result<TrajectoryRecord> {
        let len = self.times.len();
        for (name, col) in [
            ("mass", &self.mass),
            ("l2", &self.l2),
            ("hs", &self.hs),
            ("control_effort", &self.control_effort),
            ("work", &self.work),
        ] {
            if col.len() != len {
                return Err(KdvError::Config(format!("record column `{name}` has the wrong length")));
            }
        }
        let grid = SpectralGrid::new(self.n)?;
        Ok(TrajectoryRecord {
            drive: self.drive,
            dt: self.dt,
            s: self.s,
            times: self.times,
            mass: self.mass,
            l2: self.l2,
            hs: self.hs,
            control_effort: self.control_effort,
            work: self.work,
            fields: Vec::new(),
            max_l2_increase: self.max_l2_increase,
            final_state: Field::from_physical(&self.final_state, &grid)?,
        })
    }
}

/// Sampled fields in physical space, `values[i][j] = u(x_j, times[i])`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldDump {
    pub n: usize,
    pub x: Vec<f64>,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl FieldDump {
    /// Builds the dump from a record, adding back the mean `mu`.
    pub fn from_record(rec: &TrajectoryRecord, mu: f64) -> Result<Self> {
        if rec.fields.len() != rec.times.len() {
            return Err(KdvError::Usage("record was run without keep_fields".into()));
        }
        let grid = rec.final_state.grid();
        Ok(FieldDump {
            n: grid.n(),
            x: grid.points(),
            times: rec.times.clone(),
            values: rec
                .fields
                .iter()
                .map(|f| f.to_physical().into_iter().map(|v| v + mu).collect())
                .collect(),
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = fs::File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

fn provenance(config_json: &serde_json::Value, drive: &str) -> Result<Vec<String>> {
    Ok(vec![
        generator(),
        format!("drive: {drive}"),
        format!("config: {}", serde_json::to_string(config_json)?),
    ])
}

fn write_trajectory(dir: &Path, rec: &TrajectoryRecord, prov: &[String]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(dir.join(TRAJECTORY_CSV))?);
    write_csv(&mut f, rec, prov)?;
    f.flush()?;
    Ok(())
}

/// Writes `trajectory.csv`, `report.json`, `record.json` and (when fields
/// were kept) `fields.json` into `dir`. Returns the paths written.
pub fn write_run(dir: &Path, out: &RunOutcome) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let cfg = serde_json::to_value(&out.report.config)?;
    let prov = provenance(&cfg, &out.report.drive)?;
    write_trajectory(dir, &out.record, &prov)?;
    write_json(&dir.join(REPORT_JSON), &out.report)?;
    write_json(&dir.join(RECORD_JSON), &RecordDump::from_record(&out.record))?;
    let mut paths = vec![dir.join(TRAJECTORY_CSV), dir.join(REPORT_JSON), dir.join(RECORD_JSON)];
    if !out.record.fields.is_empty() {
        write_json(&dir.join(FIELDS_JSON), &FieldDump::from_record(&out.record, out.report.mu)?)?;
        paths.push(dir.join(FIELDS_JSON));
    }
    Ok(paths)
}

/// Writes the control file, the replay trajectory and the steering report.
pub fn write_steer(dir: &Path, out: &SteerOutcome) -> Result<Vec<PathBuf>> {
    let samples = out
        .report
        .config
        .steer
        .as_ref()
        .map_or(2000, |s| s.export_samples);
    let dump = out.control.to_dump(&out.profile, samples)?;
    fs::create_dir_all(dir)?;
    write_json(&dir.join(CONTROL_JSON), &dump)?;
    let cfg = serde_json::to_value(&out.report.config)?;
    let prov = provenance(&cfg, "open_loop")?;
    write_trajectory(dir, &out.replay, &prov)?;
    write_json(&dir.join(REPORT_JSON), &out.report)?;
    let mut paths = vec![dir.join(CONTROL_JSON), dir.join(TRAJECTORY_CSV), dir.join(REPORT_JSON)];
    if !out.replay.fields.is_empty() {
        write_json(&dir.join(FIELDS_JSON), &FieldDump::from_record(&out.replay, out.report.config.physics.mu)?)?;
        paths.push(dir.join(FIELDS_JSON));
    }
    Ok(paths)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Writes one directory per successful cell plus `summary.csv`.
pub fn write_sweep(dir: &Path, results: &[CellResult]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let names: Vec<String> = results
        .first()
        .map(|r| r.cell.overrides.iter().map(|(k, _)| k.clone()).collect())
        .unwrap_or_default();
    let mut w = std::io::BufWriter::new(fs::File::create(dir.join(SUMMARY_CSV))?);
    writeln!(w, "# {}", generator())?;
    writeln!(
        w,
        "cell,{}{}status,rate,fit_residual,energy_residual,delta,final_l2,message",
        names.join(","),
        if names.is_empty() { "" } else { "," }
    )?;
    for r in results {
        let params: Vec<String> = r.cell.overrides.iter().map(|(_, v)| v.to_string().replace(',', ";")).collect();
        let lead = format!("{},{}{}", r.cell.index, params.join(","), if params.is_empty() { "" } else { "," });
        match &r.outcome {
            Ok(out) => {
                write_run(&dir.join(format!("cell_{:03}", r.cell.index)), out)?;
                let rep = &out.report;
                writeln!(
                    w,
                    "{lead}ok,{},{},{},{},{},",
                    opt(rep.fit.as_ref().map(|f| f.rate)),
                    opt(rep.fit.as_ref().map(|f| f.residual)),
                    opt(rep.energy_residual),
                    opt(rep.observability.as_ref().map(|o| o.delta)),
                    rep.final_l2
                )?;
            }
            Err(e) => {
                let msg = e.to_string().replace([',', '\n'], ";");
                writeln!(w, "{lead}failed,,,,,,{msg}")?;
            }
        }
    }
    w.flush()?;
    Ok(dir.join(SUMMARY_CSV))
}

//! Output directory handling: staged writes that land together, and the
//! report rebuilt from whatever record files the directory holds.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use falsify_core::metrics::{write_curves_csv, write_records_csv, BASELINE, EVALUATE, META_TEST_UNIFORM, META_TEST_WARM, META_TRAIN};
use falsify_core::{PhaseOutput, RunReport, TrialRecord};

pub const RECORD_SETS: [&str; 5] = [BASELINE, META_TRAIN, EVALUATE, META_TEST_WARM, META_TEST_UNIFORM];
pub const REPORT: &str = "report.json";
pub const RECORDS_CSV: &str = "records.csv";
pub const CURVES_CSV: &str = "curves.csv";

pub fn records_file(set: &str) -> String {
    format!("{set}_records.jsonl")
}

/// Files written to temporaries first and renamed into place only once all
/// of them exist.
#[derive(Default)]
pub struct Staged {
    files: Vec<(PathBuf, PathBuf)>,
}

impl Staged {
    pub fn add(&mut self, path: PathBuf, bytes: &[u8]) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let name = path.file_name().context("output path has no file name")?.to_string_lossy();
        let tmp = path.with_file_name(format!(".{name}.tmp"));
        if let Err(e) = fs::write(&tmp, bytes) {
            self.discard();
            return Err(e).with_context(|| format!("writing {}", tmp.display()));
        }
        self.files.push((tmp, path));
        Ok(())
    }

    pub fn commit(mut self) -> Result<Vec<PathBuf>> {
        let files = std::mem::take(&mut self.files);
        let mut done = Vec::new();
        for (tmp, path) in files {
            fs::rename(&tmp, &path).with_context(|| format!("moving {} into place", path.display()))?;
            done.push(path);
        }
        Ok(done)
    }

    fn discard(&mut self) {
        for (tmp, _) in self.files.drain(..) {
            let _ = fs::remove_file(tmp);
        }
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        self.discard();
    }
}

/// Record sets already in `dir`, keyed by set name.
pub fn read_sets(dir: &Path) -> Result<BTreeMap<String, Vec<TrialRecord>>> {
    let mut sets = BTreeMap::new();
    for set in RECORD_SETS {
        let path = dir.join(records_file(set));
        if !path.is_file() {
            continue;
        }
        let file = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        let out = PhaseOutput::read_jsonl(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
        sets.insert(set.to_owned(), out.records);
    }
    Ok(sets)
}

/// Stages the report and both tables for `sets`.
pub fn stage_report(staged: &mut Staged, dir: &Path, sets: &BTreeMap<String, Vec<TrialRecord>>) -> Result<RunReport> {
    let report = RunReport::build(sets);
    staged.add(dir.join(REPORT), report.to_json()?.as_bytes())?;
    let mut records = Vec::new();
    write_records_csv(sets, &mut records)?;
    staged.add(dir.join(RECORDS_CSV), &records)?;
    let mut curves = Vec::new();
    write_curves_csv(&report, &mut curves)?;
    staged.add(dir.join(CURVES_CSV), &curves)?;
    Ok(report)
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::basin::{BasinCurve, RateEstimate};
use crate::error::Result;

use super::record::ExperimentRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Csv,
    Json,
    Plotdata,
}

#[derive(Debug, Default)]
pub struct ReportOutput {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "record".into())
}

fn curve_csv(c: &BasinCurve) -> String {
    crate::basin::curves_to_csv(std::slice::from_ref(c))
}

fn plot_curve_csv(c: &BasinCurve) -> String {
    let mut out = String::from("n,log_fraction\n");
    for r in &c.rows {
        out.push_str(&format!("{},{}\n", r.n, r.log_fraction()));
    }
    out
}

fn plot_sweep_csv(estimates: &[RateEstimate]) -> String {
    let mut out = String::from("epsilon,slope,stderr\n");
    for e in estimates {
        out.push_str(&format!("{},{},{}\n", e.epsilon, e.slope, e.stderr));
    }
    out
}

#[derive(Serialize)]
struct MergedEntry<'a> {
    source: String,
    config_hash: &'a str,
    curves: Vec<&'a BasinCurve>,
    estimates: Vec<RateEstimate>,
    verdict: Option<crate::basin::Verdict>,
    unstable_integral: Option<f64>,
    entropy_rate: Option<f64>,
    residual: Option<f64>,
}

#[derive(Serialize)]
struct Merged<'a> {
    family_size: usize,
    records: Vec<MergedEntry<'a>>,
}

/// Writes report files for the given records into `out_dir`.
///
/// Distances are only comparable within one test-function family, so
/// records are grouped by family size and each group is written separately;
/// more than one group produces a warning.
pub fn report(records: &[PathBuf], format: ReportFormat, out_dir: &Path) -> Result<ReportOutput> {
    let loaded: Vec<(PathBuf, ExperimentRecord)> = records
        .iter()
        .map(|p| ExperimentRecord::load(p).map(|r| (p.clone(), r)))
        .collect::<Result<_>>()?;
    std::fs::create_dir_all(out_dir)?;
    let mut groups: BTreeMap<usize, Vec<&(PathBuf, ExperimentRecord)>> = BTreeMap::new();
    for entry in &loaded {
        groups.entry(entry.1.family.k).or_default().push(entry);
    }
    let mut out = ReportOutput::default();
    if groups.len() > 1 {
        out.warnings.push(format!(
            "records use different family sizes {:?}; tables are not merged across them",
            groups.keys().collect::<Vec<_>>()
        ));
    }
    let mut write = |name: String, body: String| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, body)?;
        out.files.push(path);
        Ok(())
    };
    match format {
        ReportFormat::Csv => {
            for (path, rec) in &loaded {
                for c in rec.curves() {
                    write(format!("{}_eps{}.csv", stem(path), c.epsilon), curve_csv(c))?;
                }
            }
        }
        ReportFormat::Plotdata => {
            for (path, rec) in &loaded {
                for c in rec.curves() {
                    write(
                        format!("{}_eps{}.plot.csv", stem(path), c.epsilon),
                        plot_curve_csv(c),
                    )?;
                }
                if let Some(s) = &rec.sweep {
                    write(
                        format!("{}.sweep.csv", stem(path)),
                        plot_sweep_csv(&s.estimates()),
                    )?;
                }
            }
        }
        ReportFormat::Json => {
            let single = groups.len() == 1;
            for (k, group) in &groups {
                let merged = Merged {
                    family_size: *k,
                    records: group
                        .iter()
                        .map(|(path, rec)| MergedEntry {
                            source: path.display().to_string(),
                            config_hash: &rec.config_hash,
                            curves: rec.curves(),
                            estimates: rec
                                .sweep
                                .as_ref()
                                .map(|s| s.estimates())
                                .unwrap_or_default(),
                            verdict: rec.verdict,
                            unstable_integral: rec.unstable_integral,
                            entropy_rate: rec.entropy.as_ref().map(|e| e.rate),
                            residual: rec.residual,
                        })
                        .collect(),
                };
                let name = if single {
                    "merged.json".to_string()
                } else {
                    format!("merged_k{k}.json")
                };
                write(name, serde_json::to_string_pretty(&merged)?)?;
            }
        }
    }
    Ok(out)
}

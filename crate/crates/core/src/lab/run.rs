use std::path::PathBuf;

use chrono::Utc;
use log::info;

use crate::basin::{
    curves_to_csv, epsilon_sweep, pesin_defect, rate_formula_residual,
    weak_pseudo_physical_verdict, SlopeTrend, SweepParams,
};
use crate::error::Result;
use crate::lyapunov::unstable_integral;
use crate::markov::{cat_map_partition, entropy_rate_estimate, EntropyEstimate};
use crate::weak_star::moments;

use super::config::{ExperimentConfig, Prepared};
use super::record::{Check, EnvironmentStamp, ExperimentRecord, StageError};

fn shown<T: std::fmt::Debug>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |v| format!("{v:?}"))
}

fn in_range(v: f64, r: [f64; 2]) -> bool {
    v >= r[0] && v <= r[1]
}

fn entropy_stage(
    config: &ExperimentConfig,
    prepared: &Prepared,
) -> Result<Option<EntropyEstimate>> {
    let Some(spec) = &config.entropy else {
        return Ok(None);
    };
    let partition = cat_map_partition()?;
    let source = config
        .target
        .cylinder_source(&prepared.map, spec.samples, spec.orbit_start)?;
    entropy_rate_estimate(&prepared.map, &partition, &source, &spec.depths).map(Some)
}

/// Runs every configured stage in memory. A failing stage is recorded and
/// the independent stages still run.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    let prepared = config.prepare()?;
    let started_at = Utc::now().to_rfc3339();
    let mut warnings = Vec::new();
    let mut stage_errors = Vec::new();
    let mut fail = |stage: &str, e: crate::Error| {
        stage_errors.push(StageError {
            stage: stage.to_string(),
            message: e.to_string(),
        });
    };

    let target_moments = moments(&prepared.target, &prepared.family);

    let mut sweep = None;
    if !config.epsilons.is_empty() {
        info!("basin sweep over {} ε values", config.epsilons.len());
        let params = SweepParams {
            eps_list: config.epsilons.clone(),
            n_range: prepared.n_values.clone(),
            window: prepared.window,
            min_hits: config.min_hits,
        };
        match epsilon_sweep(
            &prepared.map,
            &target_moments,
            &params,
            &config.grid,
            &prepared.family,
        ) {
            Ok(s) => sweep = Some(s),
            Err(e) => fail("basin", e),
        }
    }
    let verdict = sweep
        .as_ref()
        .map(|s| weak_pseudo_physical_verdict(&s.estimates(), config.verdict_tolerance));
    if let Some(s) = &sweep {
        for e in &s.entries {
            if let Some(msg) = &e.error {
                warnings.push(format!("ε = {}: {msg}", e.epsilon));
            }
        }
    }

    info!("unstable integral");
    let integral = match unstable_integral(
        &prepared.map,
        &prepared.target,
        config.warmup,
        config.quadrature_resolution,
    ) {
        Ok(v) => Some(v),
        Err(e) => {
            fail("unstable_integral", e);
            None
        }
    };

    info!("entropy");
    let entropy = match entropy_stage(config, &prepared) {
        Ok(e) => e,
        Err(e) => {
            fail("entropy", e);
            None
        }
    };
    if let Some(e) = &entropy {
        warnings.extend(e.warnings.iter().cloned());
    }

    let final_slope = sweep
        .as_ref()
        .and_then(|s| s.last_valid.as_ref())
        .map(|r| r.slope);
    let h = entropy.as_ref().map(|e| e.rate);
    let residual = match (final_slope, h, integral) {
        (Some(a), Some(h), Some(i)) => Some(rate_formula_residual(a, h, i)),
        _ => None,
    };
    let defect = match (h, integral) {
        (Some(h), Some(i)) => Some(pesin_defect(h, i)),
        _ => None,
    };

    let mut checks = Vec::new();
    let x = &config.expectations;
    let mut check = |name: &str, pass: bool, detail: String| {
        checks.push(Check {
            name: name.to_string(),
            pass,
            detail,
        });
    };
    if let Some(want) = x.verdict {
        check(
            "verdict",
            verdict == Some(want),
            format!(
                "expected {want}, got {}",
                verdict.map_or_else(|| "none".to_string(), |v| v.to_string())
            ),
        );
    }
    if let Some(r) = x.slope_range {
        let slopes: Vec<f64> = sweep
            .iter()
            .flat_map(|s| s.estimates())
            .map(|e| e.slope)
            .collect();
        let pass = !slopes.is_empty() && slopes.iter().all(|s| in_range(*s, r));
        check(
            "slope_range",
            pass,
            format!("slopes {slopes:?} against {r:?}"),
        );
    }
    if let Some(r) = x.final_slope_range {
        check(
            "final_slope_range",
            final_slope.is_some_and(|s| in_range(s, r)),
            format!("slope {} against {r:?}", shown(final_slope)),
        );
    }
    if let Some(want) = x.slopes_decreasing {
        let trend = sweep.as_ref().map(|s| s.trend);
        check(
            "slopes_decreasing",
            (trend == Some(SlopeTrend::Decreasing)) == want,
            format!("trend {}", shown(trend)),
        );
    }
    if let Some(m) = x.max_abs_residual {
        check(
            "residual",
            residual.is_some_and(|r| r.abs() <= m),
            format!("residual {}, bound {m}", shown(residual)),
        );
    }
    if let Some(r) = x.entropy_range {
        check(
            "entropy_range",
            h.is_some_and(|v| in_range(v, r)),
            format!("entropy {} against {r:?}", shown(h)),
        );
    }
    if let Some(m) = x.min_final_fraction {
        let fractions: Vec<f64> = sweep
            .iter()
            .flat_map(|s| s.entries.iter())
            .filter_map(|e| e.curve.rows.last().map(|r| r.fraction()))
            .collect();
        let pass = !fractions.is_empty() && fractions.iter().all(|f| *f >= m);
        check(
            "min_final_fraction",
            pass,
            format!("final fractions {fractions:?}, bound {m}"),
        );
    }

    Ok(ExperimentRecord {
        config: config.clone(),
        config_hash: config.content_hash(),
        started_at,
        finished_at: Utc::now().to_rfc3339(),
        environment: EnvironmentStamp::current(),
        family: prepared.family.spec(),
        target_moments: Some(target_moments),
        sweep,
        verdict,
        unstable_integral: integral,
        entropy,
        residual,
        pesin_defect: defect,
        checks,
        warnings,
        stage_errors,
    })
}

fn entropy_csv(e: &EntropyEstimate) -> String {
    let mut out = String::from("n,entropy,rate,cylinders,samples,adequate\n");
    for r in &e.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.n, r.entropy, r.rate, r.cylinders, r.samples, r.adequate
        ));
    }
    out
}

/// Executes the config and writes `<name>.json` plus CSV sidecars into the
/// configured output directory. Returns the record and the written paths.
pub fn run(config: &ExperimentConfig) -> Result<(ExperimentRecord, Vec<PathBuf>)> {
    let record = execute(config)?;
    std::fs::create_dir_all(&config.output_dir)?;
    let mut written = Vec::new();
    let json = config.output_dir.join(format!("{}.json", config.name));
    record.save(&json)?;
    written.push(json);
    if let Some(s) = &record.sweep {
        let curves: Vec<_> = s.entries.iter().map(|e| e.curve.clone()).collect();
        let path = config
            .output_dir
            .join(format!("{}.curves.csv", config.name));
        std::fs::write(&path, curves_to_csv(&curves))?;
        written.push(path);
    }
    if let Some(e) = &record.entropy {
        let path = config
            .output_dir
            .join(format!("{}.entropy.csv", config.name));
        std::fs::write(&path, entropy_csv(e))?;
        written.push(path);
    }
    Ok((record, written))
}

use crate::scenario::{FitKind, Scenario};
use crate::{output_dir, CliError, RunOptions, Summary};
use blockade_core::analysis::{fit_oscillation, FitModel};
use blockade_core::io::read_numeric_csv;
use blockade_core::TWO_PI;
use std::path::PathBuf;

pub fn command(s: &Scenario, opts: &RunOptions) -> Result<PathBuf, CliError> {
    let f = s.file.fit.as_ref().ok_or_else(|| CliError::Parse("missing table [fit]".into()))?;
    let path = s.resolve(&f.data);
    let text = std::fs::read_to_string(&path)?;
    if text.trim().is_empty() {
        return Err(CliError::Parse(format!("{}: empty data file", path.display())));
    }
    let (header, cols) = read_numeric_csv(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .map(|i| cols[i].clone())
            .ok_or_else(|| CliError::Parse(format!("{}: missing column {name:?}", path.display())))
    };
    let (t, y) = (col("t")?, col("y")?);
    let model = match f.model {
        FitKind::Ramsey => FitModel::Ramsey,
        FitKind::CavityRamsey => FitModel::CavityRamsey { alphas: col("alpha")?, kerr_range: f.kerr_range_hz.map(|k| TWO_PI * k) },
    };
    let report = fit_oscillation(&t, &y, &model)?;
    let mut sum = Summary::default();
    sum.put("scenario", &s.file.name);
    sum.put("command", "fit");
    sum.put("samples", t.len());
    for (i, name) in report.names.iter().enumerate() {
        sum.num(*name, report.values[i]);
        sum.num(format!("{name}_sigma"), report.sigmas[i]);
    }
    if let FitKind::CavityRamsey = f.model {
        sum.num("omega_hz", report.values[0] / TWO_PI);
        sum.num("kerr_hz", report.values[1] / TWO_PI);
    }
    sum.num("residual_rms", report.residual_rms);
    sum.put("converged", report.converged);
    sum.put("degenerate", report.degenerate);
    sum.put("termination", &report.termination);
    let dir = output_dir(opts, &s.file.name)?;
    let out = dir.join("summary.txt");
    sum.write(&out)?;
    if opts.strict && (!report.converged || report.degenerate) {
        return Err(CliError::NotConverged(format!("fit ended with {}", report.termination)));
    }
    Ok(out)
}

//! The subcommands as library calls. Each returns the text the binary
//! prints; files are written as a side effect.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use laggard::archive::{read_archive, write_archive, FORMAT_VERSION};
use laggard::data::simulate::{simulate_dataset, SimulationConfig};
use laggard::data::{pivot_time_series, Dataset, ModifierColumn, PivotSpec, Table};
use laggard::diagnostics::{diagnose, gelman_split_rhat, series, DiagnosticsReport, Param, SplitRhat};
use laggard::inference::{render_run_info, render_text, summarize, FitSummary, MarginalizePolicy, RunInfo};
use laggard::mcmc::{run_chains, PosteriorFit};
use laggard::{Error, Result};
use serde::Serialize;

use crate::config::FitConfig;

/// Archive path for chain `c` (0-based) of `n`: the plain path for a
/// single chain, `<stem>.chain<c+1>.<ext>` otherwise.
pub fn chain_path(out: &Path, c: usize, n: usize) -> PathBuf {
    if n == 1 {
        return out.to_path_buf();
    }
    let stem = out.file_stem().map_or_else(|| "fit".into(), |s| s.to_string_lossy().into_owned());
    let name = match out.extension() {
        Some(ext) => format!("{stem}.chain{}.{}", c + 1, ext.to_string_lossy()),
        None => format!("{stem}.chain{}", c + 1),
    };
    out.with_file_name(name)
}

pub struct FitOutput {
    pub header: String,
    pub archives: Vec<PathBuf>,
    pub fits: Vec<PosteriorFit>,
}

pub fn cmd_fit(config: &FitConfig, progress: bool) -> Result<FitOutput> {
    let out = config
        .out
        .clone()
        .ok_or_else(|| Error::Config("no output archive given".into()))?;
    let data = config.load_data()?;
    let spec = config.model_spec(&data)?;
    let mut control = config.control();
    control.progress = progress;
    let fits = run_chains(&data, &spec, &control)?;
    let mut archives = Vec::with_capacity(fits.len());
    for (c, f) in fits.iter().enumerate() {
        let path = chain_path(&out, c, fits.len());
        write_archive(f, &path)?;
        archives.push(path);
    }
    let mut header = format!("---\n{} fit\n\n", spec.model_class().to_uppercase());
    header.push_str(&render_run_info(&RunInfo::from_fit(&fits[0])));
    if spec.mixture {
        let _ = writeln!(header, "- exposures: {}", fits[0].meta.exposure_names.join(", "));
    }
    if spec.het {
        let _ = writeln!(header, "- modifiers: {}", fits[0].meta.modifier_names.join(", "));
    }
    for p in &archives {
        let _ = writeln!(header, "- archive: {}", p.display());
    }
    Ok(FitOutput { header, archives, fits })
}

/// The machine-readable summary document.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryDocument<'a> {
    pub format_version: &'static str,
    #[serde(flatten)]
    pub summary: &'a FitSummary,
}

pub fn summary_document(summary: &FitSummary) -> Result<String> {
    let doc = SummaryDocument {
        format_version: FORMAT_VERSION,
        summary,
    };
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

pub fn cmd_summary(archive: &Path, conf: f64, policy: &MarginalizePolicy, json: Option<&Path>) -> Result<String> {
    let fit = read_archive(archive)?;
    let summary = summarize(&fit, conf, policy)?;
    if let Some(path) = json {
        fs::write(path, summary_document(&summary)?)?;
    }
    Ok(render_text(&summary))
}

pub struct PivotArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    pub spec: PivotSpec,
    pub delimiter: u8,
}

/// Returns the number of rows written.
pub fn cmd_pivot(args: &PivotArgs) -> Result<usize> {
    let table = Table::read(&args.input, args.delimiter)?;
    let wide = pivot_time_series(&table, &args.spec)?;
    let file = fs::File::create(&args.output)?;
    wide.write(std::io::BufWriter::new(file), args.delimiter)?;
    Ok(wide.rows.len())
}

/// Wide layout of a dataset that reads back to the same design: the
/// outcome `y`, numeric covariates, `<exposure>_<lag>` columns and the raw
/// modifier columns. Dummy columns of a categorical modifier are not
/// written; list the modifier as a covariate to rebuild them.
pub fn dataset_table(data: &Dataset) -> Table {
    let mods = data.modifiers();
    let is_dummy = |name: &str| {
        mods.names().iter().zip(mods.columns()).any(|(m, c)| match c {
            ModifierColumn::Continuous { .. } => false,
            ModifierColumn::Categorical { levels, .. } => levels.iter().any(|l| name == format!("{m}{l}")),
        })
    };
    let design = data.design();
    let cov: Vec<usize> = (1..design.cols())
        .filter(|&j| {
            let name = &design.names()[j];
            !is_dummy(name) && !mods.names().contains(name)
        })
        .collect();
    let mut headers = vec!["y".to_string()];
    headers.extend(cov.iter().map(|&j| design.names()[j].clone()));
    for e in data.exposures() {
        headers.extend((1..=e.lags()).map(|t| format!("{}_{t}", e.name())));
    }
    headers.extend(mods.names().iter().cloned());
    let rows = (0..data.rows())
        .map(|i| {
            let mut row = vec![data.outcome()[i].to_string()];
            row.extend(cov.iter().map(|&j| design.row(i)[j].to_string()));
            for e in data.exposures() {
                row.extend(e.row(i).iter().map(f64::to_string));
            }
            for c in mods.columns() {
                row.push(match c {
                    ModifierColumn::Continuous { values } => values[i].to_string(),
                    ModifierColumn::Categorical { levels, codes } => levels[codes[i] as usize].clone(),
                });
            }
            row
        })
        .collect();
    Table { headers, rows }
}

/// Simulate from a TOML configuration; writes the wide table and, if asked,
/// the truth as JSON. Returns the row count.
pub fn cmd_simulate(config: &Path, seed: u64, out: &Path, truth: Option<&Path>) -> Result<usize> {
    let text = fs::read_to_string(config)?;
    let sim = simulate_dataset(&SimulationConfig::from_toml(&text)?, seed)?;
    let file = fs::File::create(out)?;
    dataset_table(&sim.data).write(std::io::BufWriter::new(file), b',')?;
    if let Some(path) = truth {
        fs::write(path, serde_json::to_string_pretty(&sim.truth)? + "\n")?;
    }
    Ok(sim.data.rows())
}

#[derive(Debug, Clone, Serialize)]
pub struct RhatRow {
    pub name: String,
    #[serde(flatten)]
    pub rhat: SplitRhat,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsDocument {
    pub format_version: &'static str,
    pub archives: Vec<String>,
    pub reports: Vec<DiagnosticsReport>,
    /// Present when more than one archive is given.
    pub rhat: Option<Vec<RhatRow>>,
}

fn rate(r: Option<f64>) -> String {
    r.map_or_else(|| "n/a".into(), |v| format!("{v:.3}"))
}

pub fn cmd_diagnose(archives: &[PathBuf], params: &[Param], out: Option<&Path>) -> Result<String> {
    if archives.is_empty() {
        return Err(Error::InvalidArgument("no archive given".into()));
    }
    let fits = archives.iter().map(|p| read_archive(p)).collect::<Result<Vec<_>>>()?;
    let reports = fits.iter().map(|f| diagnose(f, params)).collect::<Result<Vec<_>>>()?;
    let rhat = if fits.len() > 1 {
        let names: Vec<String> = reports[0].traces.iter().map(|t| t.name.clone()).collect();
        let selections: Vec<Param> = if params.is_empty() {
            laggard::diagnostics::default_params(&fits[0])
        } else {
            params.to_vec()
        };
        let mut rows = Vec::new();
        for (p, name) in selections.iter().zip(names) {
            let chains = fits.iter().map(|f| series(f, p).map(|s| s.1)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
            rows.push(RhatRow {
                name,
                rhat: gelman_split_rhat(&refs)?,
            });
        }
        Some(rows)
    } else {
        None
    };
    let mut text = String::new();
    for (path, r) in archives.iter().zip(&reports) {
        let _ = writeln!(text, "{}", path.display());
        let _ = writeln!(text, "  DLM tree acceptance: {}", rate(r.dlm_acceptance.overall.rate));
        if let Some(m) = &r.modifier_acceptance {
            let _ = writeln!(text, "  modifier tree acceptance: {}", rate(m.overall.rate));
        }
        for t in &r.traces {
            let _ = writeln!(text, "  {:<24} mean {:>10.4}  mc se {:.4}", t.name, t.mean, t.mc_se);
        }
        if !r.ledger_consistent {
            text.push_str("  move ledger is inconsistent\n");
        }
    }
    if let Some(rows) = &rhat {
        text.push_str("split R-hat:\n");
        for r in rows {
            let _ = writeln!(text, "  {:<24} {:.4}", r.name, r.rhat.rhat);
        }
    }
    if let Some(path) = out {
        let doc = DiagnosticsDocument {
            format_version: FORMAT_VERSION,
            archives: archives.iter().map(|p| p.display().to_string()).collect(),
            reports,
            rhat,
        };
        fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_paths() {
        let p = Path::new("out/fit.lgf");
        assert_eq!(chain_path(p, 0, 1), PathBuf::from("out/fit.lgf"));
        assert_eq!(chain_path(p, 1, 3), PathBuf::from("out/fit.chain2.lgf"));
        assert_eq!(chain_path(Path::new("fit"), 0, 2), PathBuf::from("fit.chain1"));
    }
}

//! Argument parsing and dispatch.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use laggard::archive::read_archive;
use laggard::data::PivotSpec;
use laggard::diagnostics::Param;
use laggard::inference::MarginalizePolicy;
use laggard::{Error, Result};

use crate::api::{serve, AppState};
use crate::commands::{cmd_diagnose, cmd_fit, cmd_pivot, cmd_simulate, cmd_summary, PivotArgs};
use crate::config::FitConfig;

#[derive(Debug, Parser)]
#[command(name = "laggard", version, about = "Tree-structured distributed lag models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reshape a daily series into one row per date with lagged columns.
    Pivot(PivotCmd),
    /// Write a synthetic dataset with known effects.
    Simulate(SimulateCmd),
    /// Fit a model and write the posterior archive.
    Fit(Box<FitCmd>),
    /// Print posterior summaries of an archive.
    Summary(SummaryCmd),
    /// Convergence and mixing report for one or more archives.
    Diagnose(DiagnoseCmd),
    /// Serve the JSON API for one archive.
    Serve(ServeCmd),
}

#[derive(Debug, Args)]
pub struct PivotCmd {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "date")]
    pub date: String,
    /// Columns copied at the reference date.
    #[arg(long, value_delimiter = ',')]
    pub keep: Vec<String>,
    /// Columns expanded into `<name>_<lag>`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub lagged: Vec<String>,
    #[arg(long)]
    pub lags: usize,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
}

#[derive(Debug, Args)]
pub struct SimulateCmd {
    /// TOML simulation settings.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the injected truth as JSON.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

/// Flags override the values read from `--config`.
#[derive(Debug, Args)]
pub struct FitCmd {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub outcome: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// `NAME` for columns `NAME_1..`, or `NAME=PREFIX`.
    #[arg(long, value_delimiter = ',')]
    pub exposures: Option<Vec<String>>,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub dlm_type: Option<String>,
    #[arg(long)]
    pub mixture: bool,
    #[arg(long)]
    pub interactions: Option<String>,
    #[arg(long)]
    pub het: bool,
    #[arg(long, value_delimiter = ',')]
    pub modifiers: Option<Vec<String>>,
    #[arg(long)]
    pub modifier_splits: Option<usize>,
    #[arg(long)]
    pub modifier_sparsity: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub tau_scale: Option<f64>,
    #[arg(long)]
    pub burn: Option<usize>,
    #[arg(long)]
    pub iter: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// `none` or `iqr`.
    #[arg(long)]
    pub scale: Option<String>,
    #[arg(long)]
    pub delimiter: Option<char>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// No progress output.
    #[arg(long)]
    pub quiet: bool,
}

impl FitCmd {
    pub fn resolve(&self) -> Result<FitConfig> {
        let mut c = match &self.config {
            Some(p) => FitConfig::from_toml_file(p)?,
            None => FitConfig::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    c.$f = v.clone().into();
                }
            )*};
        }
        take!(data, outcome, covariates, exposures, family, dlm_type, interactions, modifiers);
        take!(modifier_splits, modifier_sparsity, kappa, trees, alpha, beta, tau_scale);
        take!(burn, iter, thin, seed, chains, scale, delimiter, out);
        c.mixture |= self.mixture;
        c.het |= self.het;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct SummaryCmd {
    pub archive: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub conf: f64,
    /// `mean`, `qNN`, `pooled-qNN` or `levels=v1,v2,...`.
    #[arg(long, default_value = "mean")]
    pub marginalize: String,
    /// Also write the summary as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseCmd {
    #[arg(required = true)]
    pub archives: Vec<PathBuf>,
    /// `sigma2`, `tau2`, `gamma:NAME`, `theta:EXPOSURE:LAG` or
    /// `cumulative[:EXPOSURE]`; repeatable.
    #[arg(long = "param")]
    pub params: Vec<String>,
    /// Write the full report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeCmd {
    pub archive: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

fn delimiter(c: char) -> Result<u8> {
    if c.is_ascii() {
        Ok(c as u8)
    } else {
        Err(Error::Config("delimiter must be a single ASCII character".into()))
    }
}

/// Run one parsed command, writing normal output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Pivot(a) => {
            let rows = cmd_pivot(&PivotArgs {
                input: a.input,
                output: a.output.clone(),
                spec: PivotSpec {
                    date: a.date,
                    keep: a.keep,
                    lagged: a.lagged,
                    lags: a.lags,
                },
                delimiter: delimiter(a.delimiter)?,
            })?;
            writeln!(out, "wrote {rows} rows to {}", a.output.display())?;
        }
        Command::Simulate(a) => {
            let rows = cmd_simulate(&a.config, a.seed, &a.out, a.truth.as_deref())?;
            writeln!(out, "wrote {rows} rows to {}", a.out.display())?;
        }
        Command::Fit(a) => {
            let config = a.resolve()?;
            let fit = cmd_fit(&config, !a.quiet)?;
            out.write_all(fit.header.as_bytes())?;
        }
        Command::Summary(a) => {
            let policy: MarginalizePolicy = a.marginalize.parse()?;
            let text = cmd_summary(&a.archive, a.conf, &policy, a.json.as_deref())?;
            out.write_all(text.as_bytes())?;
        }
        Command::Diagnose(a) => {
            let params = a.params.iter().map(|p| p.parse()).collect::<Result<Vec<Param>>>()?;
            let text = cmd_diagnose(&a.archives, &params, a.out.as_deref())?;
            out.write_all(text.as_bytes())?;
        }
        Command::Serve(a) => {
            let state = AppState::new(read_archive(&a.archive)?)?;
            serve(state, &a.host, a.port, |addr| {
                eprintln!("serving {} on http://{addr}", a.archive.display());
            })?;
        }
    }
    Ok(())
}

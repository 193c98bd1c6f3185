//! Command-line surface: `gen`, `score`, `eval`, `repeat` and `sweep`.
//!
//! Every command persists its effective configuration as `config.toml` and a
//! `manifest.json` carrying the seed and the SHA-256 of that configuration.
//! Output files are written atomically; numbers use Rust's shortest
//! round-trip formatting so repeated runs are byte-identical.

mod config;
mod report;

pub use config::{RunConfig, DEFAULT_OUT_DIR, OUT_DIR_ENV};
pub use report::{histogram, read_report, ReportRow, HISTOGRAM_BINS};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::cad::{fit_task_scaler, FeatureWeighting};
use crate::data::{read_snapshot, write_snapshot, Dataset, Role};
use crate::error::{io, Error, Result};
use crate::eval::{agreement_score, repeat_with_seeds, roc_auc, ExperimentTable, Method};
use crate::io::write_atomic;

#[derive(Parser, Debug)]
#[command(
    name = "softhad",
    version,
    about = "Conditional anomaly detection by soft harmonic label propagation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample (or ingest) a dataset, flip labels and write a snapshot
    Gen(ConfigArgs),
    /// Score recent instances; writes report.csv and histogram.csv
    Score(ConfigArgs),
    /// Agreement of score reports with the true scores of a snapshot
    Eval(EvalArgs),
    /// Generate, score and evaluate over derived seeds; writes table.csv
    Repeat(ConfigArgs),
    /// Repeat over a grid of gamma_g values or graph sizes; writes curve.csv
    Sweep(SweepArgs),
}

/// Flags mirror the fields of the config file and override it.
#[derive(Args, Debug, Default, Clone)]
pub struct ConfigArgs {
    /// Flat TOML config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in mixture: d1, d2 or d3
    #[arg(long)]
    pub preset: Option<String>,
    /// Mixture description file (TOML)
    #[arg(long)]
    pub mixture: Option<PathBuf>,
    /// Numeric CSV with an ordinal response column
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Column holding the ordinal response
    #[arg(long)]
    pub response_column: Option<String>,
    /// Snapshot directory written by `gen`
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Past rows drawn per class
    #[arg(long)]
    pub n_per_class: Option<usize>,
    /// Recent rows drawn per class
    #[arg(long)]
    pub n_recent_per_class: Option<usize>,
    /// Fraction of labels switched in each set
    #[arg(long)]
    pub flip_rate: Option<f64>,
    /// softhad, wknn or qda
    #[arg(long)]
    pub method: Option<Method>,
    /// Methods compared by repeat and sweep
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// Neighbors per node
    #[arg(long)]
    pub k: Option<usize>,
    /// Fixed RBF length scale instead of the heuristic
    #[arg(long)]
    pub sigma: Option<f64>,
    /// uniform or wilcoxon
    #[arg(long)]
    pub feature_weights: Option<FeatureWeighting>,
    /// Label-fit weight
    #[arg(long)]
    pub c_l: Option<f64>,
    /// Diagonal regularizer (sink weight)
    #[arg(long)]
    pub gamma_g: Option<f64>,
    /// Relative residual tolerance of the solver
    #[arg(long)]
    pub tol: Option<f64>,
    /// Backbone centroids per class (default: every past row)
    #[arg(long)]
    pub k_per_class: Option<usize>,
    /// Leave the scaled column empty
    #[arg(long)]
    pub no_scaling: bool,
    /// Base seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Repetitions for repeat and sweep
    #[arg(long)]
    pub runs: Option<usize>,
    /// Output directory (default: $SOFTHAD_OUT_DIR, then ./softhad-out)
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    c.$f = v.clone().into();
                }
            )*};
        }
        take!(
            preset,
            mixture,
            csv,
            response_column,
            data,
            n_per_class,
            n_recent_per_class
        );
        take!(
            flip_rate,
            method,
            methods,
            k,
            sigma,
            feature_weights,
            c_l,
            gamma_g,
            tol
        );
        take!(k_per_class, seed, runs);
        if self.no_scaling {
            c.scaling = false;
        }
        if let Some(o) = &self.out {
            c.out_dir = Some(o.clone());
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Report written by `score`; repeat for side-by-side rows
    #[arg(long = "report", required = true)]
    pub reports: Vec<PathBuf>,
    /// Snapshot directory holding the true scores
    #[arg(long)]
    pub truth: PathBuf,
    /// Add a row scoring the true scores against themselves
    #[arg(long)]
    pub include_truth: bool,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    #[value(name = "gamma_g")]
    GammaG,
    /// Total backbone centroids (half per class)
    #[value(name = "graph_size")]
    GraphSize,
}

impl SweepAxis {
    fn name(self) -> &'static str {
        match self {
            SweepAxis::GammaG => "gamma_g",
            SweepAxis::GraphSize => "graph_size",
        }
    }

    /// Grid used when `--grid` is not given.
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            SweepAxis::GammaG => vec![0.0, 0.5, 1.0, 2.0, 5.0],
            SweepAxis::GraphSize => vec![100.0, 200.0, 300.0, 400.0, 500.0],
        }
    }
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_enum)]
    pub axis: SweepAxis,
    /// Comma-separated grid values (default: 0,0.5,1,2,5 for gamma_g and
    /// 100,200,300,400,500 for graph_size)
    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<f64>,
}

/// Runs one command; returns the lines to print on success.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a.resolve()?),
        Command::Score(a) => cmd_score(&a.resolve()?),
        Command::Eval(a) => cmd_eval(&a),
        Command::Repeat(a) => cmd_repeat(&a.resolve()?),
        Command::Sweep(a) => {
            let grid = if a.grid.is_empty() {
                a.axis.default_grid()
            } else {
                a.grid
            };
            cmd_sweep(&a.config.resolve()?, a.axis, &grid)
        }
    }
}

/// Machine-readable error record printed on stderr.
pub fn error_json(kind: &str, message: &str) -> String {
    json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    write_atomic(&p, text.as_bytes())?;
    Ok(p)
}

fn write_manifest(
    dir: &Path,
    cfg: &RunConfig,
    command: &str,
    details: serde_json::Value,
) -> Result<()> {
    write_text(dir, "config.toml", &cfg.to_toml())?;
    let m = json!({
        "command": command,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "source": cfg.source_name(),
        "details": details,
    });
    write_text(
        dir,
        "manifest.json",
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&m).expect("manifest serializes")
        ),
    )?;
    Ok(())
}

fn flipped_with_role(ds: &Dataset, role: Role) -> Vec<usize> {
    ds.flipped
        .iter()
        .copied()
        .filter(|&i| ds.roles[i] == role)
        .collect()
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<String> {
    let ds = cfg.dataset()?;
    let dir = cfg.out_dir();
    write_snapshot(&dir, &ds)?;
    let flipped_past = flipped_with_role(&ds, Role::Past);
    let flipped_recent = flipped_with_role(&ds, Role::Recent);
    write_manifest(
        &dir,
        cfg,
        "gen",
        json!({
            "n_past": ds.indices_with_role(Role::Past).len(),
            "n_recent": ds.indices_with_role(Role::Recent).len(),
            "dim": ds.dim(),
            "flipped_past": flipped_past,
            "flipped_recent": flipped_recent,
        }),
    )?;
    Ok(format!(
        "wrote {} rows ({} flipped) to {}",
        ds.len(),
        ds.flipped.len(),
        dir.display()
    ))
}

pub fn cmd_score(cfg: &RunConfig) -> Result<String> {
    let ds = cfg.dataset()?;
    let past_idx = ds.indices_with_role(Role::Past);
    let recent_idx = ds.indices_with_role(Role::Recent);
    let (past, recent) = (ds.subset(&past_idx), ds.subset(&recent_idx));
    let (train, scores) = cfg
        .method
        .score_with_training(&past, &recent, &cfg.params())?;
    let scores = if cfg.scaling {
        scores.with_scaler(&fit_task_scaler(&train.raw)?)
    } else {
        scores
    };

    let ranks = scores.ranks();
    let mut report = format!("{}\n", report::REPORT_HEADER);
    for (local, &id) in recent_idx.iter().enumerate() {
        let scaled = scores
            .scaled
            .as_ref()
            .map(|s| s[local].to_string())
            .unwrap_or_default();
        let _ = writeln!(
            report,
            "{id},main,{},{},{scaled},{}",
            cfg.method, scores.raw[local], ranks[local]
        );
    }
    let dir = cfg.out_dir();
    write_text(&dir, "report.csv", &report)?;
    write_text(&dir, "histogram.csv", &histogram(&scores.raw))?;
    let top: Vec<usize> = scores
        .ranking
        .iter()
        .take(5)
        .map(|&l| recent_idx[l])
        .collect();
    write_manifest(
        &dir,
        cfg,
        "score",
        json!({
            "method": cfg.method.name(),
            "n_past": past.len(),
            "n_recent": recent.len(),
            "flipped_recent": flipped_with_role(&ds, Role::Recent),
            "top5": top,
        }),
    )?;
    Ok(format!(
        "scored {} instances with {} into {}",
        recent.len(),
        cfg.method,
        dir.display()
    ))
}

struct EvalRow {
    method: String,
    task: String,
    n: usize,
    agreement: f64,
    n_pairs: u64,
    auc_flipped: Option<f64>,
}

fn evaluate_group(
    method: &str,
    task: &str,
    ids: &[usize],
    raw: &[f64],
    ds: &Dataset,
) -> Result<EvalRow> {
    let truth = ds
        .true_scores()
        .ok_or_else(|| Error::InvalidParameter("snapshot has no true scores".into()))?;
    let t: Vec<f64> = ids.iter().map(|&i| truth[i]).collect();
    let a = agreement_score(raw, &t)?;
    let flipped: Vec<bool> = ids
        .iter()
        .map(|i| ds.flipped.binary_search(i).is_ok())
        .collect();
    let auc_flipped = roc_auc(raw, &flipped).ok();
    Ok(EvalRow {
        method: method.to_string(),
        task: task.to_string(),
        n: ids.len(),
        agreement: a.score,
        n_pairs: a.n_pairs,
        auc_flipped,
    })
}

pub fn cmd_eval(args: &EvalArgs) -> Result<String> {
    let ds = read_snapshot(&args.truth)?;
    let mut rows = Vec::new();
    let mut reference: Option<Vec<usize>> = None;
    let mut hasher = Sha256::new();
    for path in &args.reports {
        let bytes = std::fs::read(path).map_err(|e| io(path, e))?;
        hasher.update(&bytes);
        for group in report::group_rows(read_report(path)?) {
            let mut ids: Vec<usize> = group.rows.iter().map(|r| r.instance_id).collect();
            if let Some(&bad) = ids.iter().find(|&&i| i >= ds.len()) {
                return Err(Error::MismatchedIds(format!(
                    "{}: instance {bad} not in the truth snapshot ({} rows)",
                    path.display(),
                    ds.len()
                )));
            }
            let raw: Vec<f64> = group.rows.iter().map(|r| r.raw).collect();
            rows.push(evaluate_group(&group.method, &group.task, &ids, &raw, &ds)?);
            ids.sort_unstable();
            match &reference {
                None => reference = Some(ids),
                Some(r) if *r == ids => {}
                Some(_) => {
                    return Err(Error::MismatchedIds(format!(
                        "{} ({}/{}) covers different instances than the first report",
                        path.display(),
                        group.method,
                        group.task
                    )))
                }
            }
        }
    }
    if args.include_truth {
        let ids = reference.clone().unwrap_or_default();
        let truth = ds.true_scores().unwrap_or_default();
        let raw: Vec<f64> = ids.iter().map(|&i| truth[i]).collect();
        rows.push(evaluate_group("truth", "main", &ids, &raw, &ds)?);
    }

    let mut table = String::from("method,task,n,agreement,n_pairs,auc_flipped\n");
    for r in &rows {
        let auc = r
            .auc_flipped
            .map(|v| v.to_string())
            .unwrap_or_else(|| "NA".into());
        let _ = writeln!(
            table,
            "{},{},{},{},{},{auc}",
            r.method, r.task, r.n, r.agreement, r.n_pairs
        );
    }
    let dir = args
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    write_text(&dir, "eval.csv", &table)?;
    let m = json!({
        "command": "eval",
        "inputs_hash": hex::encode(hasher.finalize()),
        "reports": args.reports.len(),
        "rows": rows.len(),
    });
    write_text(
        &dir,
        "eval_manifest.json",
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&m).expect("manifest serializes")
        ),
    )?;
    Ok(table)
}

fn seeds(cfg: &RunConfig) -> Vec<u64> {
    (0..cfg.runs)
        .map(|r| crate::seed::derive_seed(cfg.seed, r as u64))
        .collect()
}

fn runs_csv(t: &ExperimentTable) -> String {
    let mut s = String::from("run,seed,method,agreement\n");
    for r in &t.records {
        let _ = writeln!(s, "{},{},{},{}", r.run, r.seed, r.method, r.agreement);
    }
    s
}

pub fn cmd_repeat(cfg: &RunConfig) -> Result<String> {
    let t = repeat_with_seeds(&cfg.experiment()?, &seeds(cfg))?;
    let dir = cfg.out_dir();
    let table = t.to_csv();
    write_text(&dir, "table.csv", &table)?;
    write_text(&dir, "runs.csv", &runs_csv(&t))?;
    write_manifest(
        &dir,
        cfg,
        "repeat",
        json!({ "runs": cfg.runs, "seeds": seeds(cfg) }),
    )?;
    Ok(table)
}

pub const CURVE_HEADER: &str = "axis,value,method,runs,mean,variance";

pub fn cmd_sweep(cfg: &RunConfig, axis: SweepAxis, grid: &[f64]) -> Result<String> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty sweep grid".into()));
    }
    let run_seeds = seeds(cfg);
    let mut curve = format!("{CURVE_HEADER}\n");
    for &v in grid {
        let mut point = cfg.clone();
        match axis {
            SweepAxis::GammaG => point.gamma_g = v,
            SweepAxis::GraphSize => {
                if !(v >= 2.0 && v.fract() == 0.0 && (v as u64).is_multiple_of(2)) {
                    return Err(Error::InvalidParameter(format!(
                        "graph size must be an even integer >= 2, got {v}"
                    )));
                }
                point.k_per_class = Some((v as usize) / 2);
            }
        }
        point.validate()?;
        let t = repeat_with_seeds(&point.experiment()?, &run_seeds)?;
        for m in &t.summaries {
            let _ = writeln!(
                curve,
                "{},{v},{},{},{},{}",
                axis.name(),
                m.method,
                m.summary.runs,
                m.summary.mean,
                m.summary.variance
            );
        }
    }
    let dir = cfg.out_dir();
    write_text(&dir, "curve.csv", &curve)?;
    write_manifest(
        &dir,
        cfg,
        "sweep",
        json!({ "axis": axis.name(), "grid": grid, "seeds": run_seeds }),
    )?;
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "gamma_g = 2.0\nk = 10\nseed = 4\n").unwrap();
        let args = ConfigArgs {
            config: Some(p),
            k: Some(12),
            no_scaling: true,
            ..ConfigArgs::default()
        };
        let c = args.resolve().unwrap();
        assert_eq!((c.gamma_g, c.k, c.seed, c.scaling), (2.0, 12, 4, false));
    }

    #[test]
    fn odd_graph_size_rejected() {
        let cfg = RunConfig {
            n_per_class: 20,
            n_recent_per_class: 10,
            runs: 2,
            out_dir: Some(tempfile::tempdir().unwrap().path().to_path_buf()),
            ..RunConfig::default()
        };
        assert!(cmd_sweep(&cfg, SweepAxis::GraphSize, &[101.0]).is_err());
    }

    #[test]
    fn error_record_shape() {
        let v: serde_json::Value = serde_json::from_str(&error_json("io", "boom")).unwrap();
        assert_eq!(v["error"]["kind"], "io");
        assert_eq!(v["error"]["message"], "boom");
    }
}

//! `oodp`: compute protectiveness metrics for OOD candidate sets, rank them,
//! evaluate detectors and run the bundled toy experiments.
//!
//! Exit codes: 0 on success, 2 for invalid input or arguments, 3 for
//! filesystem errors. Output files are written atomically, so a failed run
//! never leaves a partial file behind.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use oodp_core::eval::{average_unseen, score_eval, score_evals_to_csv, DEFAULT_TPR_TARGET};
use oodp_core::experiments::{fgs, ranking, two_moon, FgsConfig, RankingConfig, TwoMoonConfig};
use oodp_core::io::{equalize_sizes, load_embedding_set, write_atomic};
use oodp_core::metrics::{metric_report, rank_candidates, DEFAULT_EPSILON_REL, DEFAULT_K};
use oodp_core::{Error, Format, MetricReport, RankedCandidate};

const EXIT_INPUT: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "oodp",
    version,
    about = "Protectiveness metrics for out-of-distribution training sets"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Nearest neighbours per OOD point.
    #[arg(long, global = true, default_value_t = DEFAULT_K)]
    k: usize,
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Relative tolerance under which SE and CR count as equal when ranking.
    #[arg(long, global = true, default_value_t = DEFAULT_EPSILON_REL)]
    epsilon_rel: f64,
    /// Weight of the OOD term in the generalization-gap objective.
    #[arg(long, global = true, default_value_t = oodp_core::gap::DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Json)]
    format: OutputFormat,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// SE, CR and CD of each OOD candidate against an in-distribution set.
    ///
    /// Embedding files ending in `.bin` are read as packed binary, anything
    /// else as CSV. Candidates are subsampled to a common size first.
    Metrics {
        /// In-distribution embeddings.
        in_set: PathBuf,
        /// OOD candidate embeddings, each with predicted classes.
        #[arg(required = true)]
        ood_sets: Vec<PathBuf>,
        /// Compare unit-normalized features instead of raw ones.
        #[arg(long)]
        normalize: bool,
    },
    /// Order metric reports from most to least protective.
    ///
    /// Reads JSON (`.json`) or CSV report files; the winner is printed on
    /// the last line of standard output.
    Rank {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// AUROC and FPR at a fixed TPR for detector scores.
    ///
    /// Score files hold one number per line; blank lines and lines starting
    /// with `#` are skipped. Higher scores mean "more in-distribution".
    Eval {
        in_scores: PathBuf,
        #[arg(required = true)]
        ood_scores: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TPR_TARGET)]
        tpr: f64,
        /// OOD set seen in training; left out of the average.
        #[arg(long)]
        seen: Option<String>,
    },
    /// Run one of the bundled toy experiments and write its artifacts.
    Demo {
        #[arg(value_enum)]
        experiment: Experiment,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Experiment {
    TwoMoon,
    Ranking,
    Fgs,
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn input(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            msg: msg.into(),
        }
    }

    fn io(path: &Path, err: std::io::Error) -> Self {
        Self {
            code: EXIT_IO,
            msg: format!("{}: {err}", path.display()),
        }
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Self {
            code: if err.is_io() { EXIT_IO } else { EXIT_INPUT },
            msg: err.to_string(),
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("oodp: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn configure_threads() -> Outcome {
    let Ok(raw) = std::env::var("OODP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::input(format!("OODP_THREADS = {raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::input(format!("cannot size the thread pool: {e}")))
}

fn run(cli: Cli) -> Outcome {
    let c = &cli.common;
    match &cli.command {
        Command::Metrics {
            in_set,
            ood_sets,
            normalize,
        } => cmd_metrics(c, in_set, ood_sets, *normalize),
        Command::Rank { reports } => cmd_rank(c, reports),
        Command::Eval {
            in_scores,
            ood_scores,
            tpr,
            seen,
        } => cmd_eval(c, in_scores, ood_scores, *tpr, seen.as_deref()),
        Command::Demo { experiment, out_dir } => cmd_demo(c, *experiment, out_dir),
    }
}

fn check_exists(paths: &[&PathBuf]) -> Outcome {
    for p in paths {
        if !p.exists() {
            return Err(Failure::io(
                p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
            ));
        }
    }
    Ok(())
}

/// Writes `text` to `--out` atomically, or to standard output.
fn emit(c: &Common, text: &str) -> Outcome {
    match &c.out {
        Some(path) => write_atomic(path, text.as_bytes()).map_err(|e| Failure::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory values serialize");
    s.push('\n');
    s
}

fn cmd_metrics(c: &Common, in_path: &PathBuf, ood_paths: &[PathBuf], normalize: bool) -> Outcome {
    let mut all: Vec<&PathBuf> = vec![in_path];
    all.extend(ood_paths);
    check_exists(&all)?;

    let in_set = load_embedding_set(in_path, Format::from_path(in_path))?;
    let candidates = ood_paths
        .iter()
        .map(|p| load_embedding_set(p, Format::from_path(p)))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(bad) = candidates.iter().find(|s| s.predicted().is_none()) {
        return Err(Failure::input(format!(
            "OOD candidate {:?} carries no predicted classes",
            bad.name()
        )));
    }
    let candidates = equalize_sizes(&candidates, c.seed)?;
    let opts = oodp_core::KnnOptions { normalize };
    let reports = candidates
        .iter()
        .map(|s| {
            if normalize {
                oodp_core::metrics::metric_report_with(&in_set, s, c.k, opts)
            } else {
                metric_report(&in_set, s, c.k)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let text = match c.format {
        OutputFormat::Json => to_json(&reports),
        OutputFormat::Csv => MetricReport::to_csv(&reports),
    };
    emit(c, &text)
}

fn read_reports(path: &Path) -> Outcome<Vec<MetricReport>> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let is_json =
        path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) || text.trim_start().starts_with(['[', '{']);
    if !is_json {
        return MetricReport::from_csv(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())));
    }
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let parsed = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|r| vec![r])
    };
    parsed.map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn ranking_csv(ranked: &[RankedCandidate]) -> String {
    let mut out = String::from("rank,ood_set,score,se,cr,cd,rule\n");
    for (i, r) in ranked.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            i + 1,
            r.name,
            r.score,
            r.se,
            r.cr,
            r.cd,
            r.rule.tag()
        );
    }
    out
}

fn cmd_rank(c: &Common, paths: &[PathBuf]) -> Outcome {
    let mut reports = Vec::new();
    for p in paths {
        reports.extend(read_reports(p)?);
    }
    let ranked = rank_candidates(&reports, c.epsilon_rel)?;
    let text = match c.format {
        OutputFormat::Json => to_json(&ranked),
        OutputFormat::Csv => ranking_csv(&ranked),
    };
    emit(c, &text)?;
    println!("{}", ranked[0].name);
    Ok(())
}

fn read_scores(path: &Path) -> Outcome<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let mut scores = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| Failure::input(format!("{}:{}: {line:?} is not a number", path.display(), i + 1)))?;
        scores.push(v);
    }
    Ok(scores)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn cmd_eval(c: &Common, in_path: &Path, ood_paths: &[PathBuf], tpr: f64, seen: Option<&str>) -> Outcome {
    let in_scores = read_scores(in_path)?;
    let evals = ood_paths
        .iter()
        .map(|p| {
            let ood = read_scores(p)?;
            score_eval(&stem(p), &in_scores, &ood, tpr).map_err(Failure::from)
        })
        .collect::<Outcome<Vec<_>>>()?;
    let text = match c.format {
        OutputFormat::Json => {
            let avg = average_unseen(&evals, seen)
                .map(|(auroc, fpr)| serde_json::json!({ "auroc": auroc, "fpr_at_tpr": fpr, "excluded": seen }));
            to_json(&serde_json::json!({ "evals": evals, "average_unseen": avg }))
        }
        OutputFormat::Csv => score_evals_to_csv(&evals, seen),
    };
    emit(c, &text)
}

fn cmd_demo(c: &Common, experiment: Experiment, out_dir: &Path) -> Outcome {
    fs::create_dir_all(out_dir).map_err(|e| Failure::io(out_dir, e))?;
    let artifacts: Vec<(&str, String)> = match experiment {
        Experiment::TwoMoon => {
            let r = two_moon(c.seed, &TwoMoonConfig::default())?;
            println!(
                "vanilla mean max confidence on far probes: {:.3}",
                r.vanilla_mean_max_conf
            );
            println!(
                "probes rejected: ring {:.2}, collapsed blob {:.2}",
                r.ring_probe_rejection, r.blob_probe_rejection
            );
            vec![
                ("two_moon_probes.csv", r.probes_csv()),
                ("two_moon_summary.json", to_json(&r)),
            ]
        }
        Experiment::Ranking => {
            let cfg = RankingConfig {
                k: c.k,
                epsilon_rel: c.epsilon_rel,
                lambda: c.lambda,
                ..RankingConfig::default()
            };
            let r = ranking(c.seed, &cfg)?;
            let mut cmp = String::from("ood_set,metric_rank,gap_rank,objective,mean_unseen_rejection\n");
            for (i, m) in r.metric_ranking.iter().enumerate() {
                let gap_rank = r.gap_ranking.iter().position(|n| *n == m.name).map_or(0, |p| p + 1);
                let o = r.outcomes.iter().find(|o| o.name == m.name);
                let _ = writeln!(
                    cmp,
                    "{},{},{},{},{}",
                    m.name,
                    i + 1,
                    gap_rank,
                    o.map_or(f64::NAN, |o| o.gap.objective),
                    o.map_or(f64::NAN, |o| o.mean_unseen_rejection)
                );
            }
            println!("metric winner: {}", r.metric_winner);
            println!("gap-criterion winner: {}", r.gap_winner);
            println!("agree: {} (spearman {:.2})", r.top_agree, r.spearman);
            println!(
                "ranking by mean unseen rejection: {} (spearman {:.2})",
                r.rejection_ranking.join(" > "),
                r.rejection_spearman
            );
            vec![
                ("ranking_metrics.csv", MetricReport::to_csv(&r.reports)),
                ("ranking_comparison.csv", cmp),
                ("ranking_report.json", to_json(&r)),
            ]
        }
        Experiment::Fgs => {
            let cfg = FgsConfig {
                k: c.k,
                ..FgsConfig::default()
            };
            let r = fgs(c.seed, &cfg)?;
            for row in &r.rows {
                println!(
                    "alpha {:.2}: vanilla err {:.3}, augmented err {:.3}, rejected {:.3}, CD {:.3}",
                    row.alpha, row.vanilla_err, row.aug_err, row.aug_rej, row.cd
                );
            }
            vec![("fgs_sweep.csv", r.to_csv()), ("fgs_sweep.json", to_json(&r))]
        }
    };
    for (name, text) in artifacts {
        let path = out_dir.join(name);
        write_atomic(&path, text.as_bytes()).map_err(|e| Failure::io(&path, e))?;
    }
    Ok(())
}

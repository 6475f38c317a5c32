//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::io::{self, AffinityFile, PermutationEntry, SolveFile};
use crate::losses::{gradient_suite, GradCheckConfig};
use crate::metrics::{evaluate, DEFAULT_STMA_WINDOWS};
use crate::solver::{consistency_solve, extract_permutations, pairwise_accuracy, rounded_matrix};
use crate::synthetic::{generate_assignment_instance, generate_scenario, AssignmentParams, ScenarioParams};
use crate::tracker;

#[derive(Debug, Parser)]
#[command(name = "mvmhat", version, about = "Multi-view multi-human association and tracking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track a dataset directory and write `tracks.csv`.
    Track {
        /// JSON configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a track file against a ground-truth directory.
    Evaluate {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// STMA window lengths.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_STMA_WINDOWS)]
        stma: Vec<u32>,
        /// Directory receiving `report.txt` and `report.kv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write synthetic data.
    Generate {
        #[command(subcommand)]
        what: Generate,
    },
    /// Solve a global affinity file for a consistent assignment.
    Solve {
        #[arg(long)]
        affinity: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare analytic and numeric gradients of every loss.
    CheckGradients {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum Generate {
    /// Affinity/assignment pair as a JSON file.
    Assignment(AssignmentArgs),
    /// Multi-view sequence as a dataset directory, ground truth under `gt/`.
    Scenario(ScenarioArgs),
}

#[derive(Debug, Args)]
pub struct AssignmentArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub n_ids: usize,
    #[arg(long, default_value_t = 3)]
    pub views: usize,
    #[arg(long, default_value_t = 0.1)]
    pub error_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    pub visibility: f64,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub n_ids: usize,
    #[arg(long, default_value_t = 3)]
    pub views: usize,
    #[arg(long, default_value_t = 200)]
    pub frames: u32,
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.0)]
    pub occlusion_prob: f64,
    #[arg(long, default_value_t = 0.0)]
    pub box_noise: f64,
    #[arg(long, default_value_t = 0.0)]
    pub embedding_noise: f64,
}

fn load_config(path: &Option<PathBuf>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<()> {
    let say = |out: &mut dyn Write, text: String| {
        let _ = out.write_all(text.as_bytes());
    };
    match cmd {
        Command::Track { config, data, out: dir } => {
            let cfg = load_config(&config)?;
            let bundles = io::load_dataset(&data)?;
            let records = tracker::run(&bundles, &cfg.tracker())?;
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let path = dir.join("tracks.csv");
            io::write_tracks(&records, &path)?;
            say(out, format!("wrote {} records to {}\n", records.len(), path.display()));
        }
        Command::Evaluate { gt, pred, stma, out: dir } => {
            if stma.contains(&0) {
                return Err(Error::InvalidParameter("STMA window lengths must be positive".into()));
            }
            let gt = io::load_ground_truth(&gt)?;
            let pred = io::load_tracks(&pred)?;
            let report = evaluate(&gt, &pred, &stma);
            say(out, io::format_report_table(&report));
            if let Some(dir) = dir {
                io::write_report(&report, &dir)?;
            }
        }
        Command::Generate { what: Generate::Assignment(a) } => {
            let params = AssignmentParams {
                n_ids: a.n_ids,
                views: a.views,
                error_rate: a.error_rate,
                visibility: a.visibility,
                ..AssignmentParams::default()
            };
            let inst = generate_assignment_instance(&params, a.seed)?;
            io::write_json(&AffinityFile::from_instance(&inst.affinity, Some(&inst.a_gt), Some(a.seed)), &a.out)?;
            say(out, format!("wrote {} ({} subjects)\n", a.out.display(), inst.a_gt.nrows()));
        }
        Command::Generate { what: Generate::Scenario(s) } => {
            let params = ScenarioParams {
                n_ids: s.n_ids,
                views: s.views,
                frames: s.frames,
                dim: s.dim,
                occlusion_prob: s.occlusion_prob,
                box_noise: s.box_noise,
                embedding_noise: s.embedding_noise,
                ..ScenarioParams::default()
            };
            let sc = generate_scenario(&params, s.seed)?;
            let gt_dir = s.out.join("gt");
            io::write_dataset(&s.out, &sc.bundles, Some((&gt_dir, &sc.truth_table())))?;
            say(out, format!("wrote {} frames to {}\n", sc.bundles.len(), s.out.display()));
        }
        Command::Solve { affinity, out: path, config } => {
            let cfg = load_config(&config)?;
            let file = AffinityFile::load(&affinity)?;
            let x = file.affinity()?;
            let solver = cfg.solver_config();
            let a = consistency_solve(&x, &solver)?;
            let perms = extract_permutations(&a, solver.m);
            let accuracy = file.ground_truth()?.map(|gt| pairwise_accuracy(&x.layout, &perms, &gt));
            let result = SolveFile {
                layout: io::layout_entries(&x.layout),
                a: io::rows_of(&a.values),
                permutations: perms
                    .iter()
                    .map(|(&(from, to), p)| PermutationEntry {
                        from,
                        to,
                        links: p.links.iter().map(|l| (l.row, l.col, l.score)).collect(),
                    })
                    .collect(),
                pairwise_accuracy: accuracy,
            };
            io::write_json(&result, &path)?;
            let ones = rounded_matrix(&x.layout, &perms).iter().filter(|&&v| v == 1.0).count();
            say(out, format!("wrote {} ({} rounded links)\n", path.display(), ones));
            if let Some(acc) = accuracy {
                say(out, format!("pairwise accuracy {acc:.6}\n"));
            }
        }
        Command::CheckGradients { seed } => {
            let entries = gradient_suite(seed, &GradCheckConfig::default())?;
            let mut failed = None;
            for e in &entries {
                let verdict = if e.report.passed { "pass" } else { "FAIL" };
                say(
                    out,
                    format!(
                        "{:<18} max_rel_error={:.3e} checked={} {verdict}\n",
                        e.loss, e.report.max_rel_error, e.report.checked
                    ),
                );
                if !e.report.passed && failed.is_none() {
                    failed = Some(e.loss);
                }
            }
            if let Some(loss) = failed {
                return Err(Error::Numeric { routine: loss, input_hash: seed });
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Normal output goes to `out`, diagnostics to standard error.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

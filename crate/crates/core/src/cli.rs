//! Command-line front end: `run` localizes queries of a dataset and writes
//! viewer exports and benchmark tables, `synth` writes a synthetic dataset.
//!
//! `--config FILE` reads `key=value` lines whose keys are long flag names.
//! They are applied before the command-line flags, so flags win.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::benchmark::{
    generate_synthetic_scene, write_dataset, BenchmarkReport, QueryRow, ReportThresholds, SceneParams,
};
use crate::dataset::{load_dataset, load_query_list, DatasetPaths};
use crate::export::{default_glyph_scale, export_ply, export_query, fmt_num, MESH_FILE};
use crate::index::{DescriptorIndex, IndexParams};
use crate::quality::InlierMetric;
use crate::ransac::{Localizer, LocalizerParams, Mode, PoseEstimate, RansacError, SolverChoice};
use crate::sfm::{QueryImage, SfmError};

#[derive(Debug, Parser)]
#[command(name = "pointloc", version, about = "Localize photographs in a bundler point cloud")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Localize queries against a model.
    Run(Box<RunArgs>),
    /// Write a synthetic dataset directory.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Basic,
    Advanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Auto,
    P3p,
    P4pf,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    /// Point-to-ray distance in world units.
    Ray,
    /// Reprojection error in pixels.
    Pixel,
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    /// Dataset directory with bundle.out, list.txt, keys/ and queries.txt;
    /// individual path flags override its entries.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Bundler reconstruction.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Bundler image list naming the cameras of the model (default:
    /// list.txt beside the model).
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    /// Directory of keyfiles.
    #[arg(long)]
    pub keys: Option<PathBuf>,
    /// Query list (`name width height [focal_px]` per line).
    #[arg(long)]
    pub list: Option<PathBuf>,
    /// Directory holding the query images, copied into the exports.
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// `all` or a query name.
    #[arg(long)]
    pub query: Option<String>,
    #[arg(long, value_enum, default_value = "auto")]
    pub solver: SolverArg,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Compare against golden poses and write benchmark tables.
    #[arg(long)]
    pub benchmark: bool,
    /// Skip the per-query viewer exports.
    #[arg(long)]
    pub no_export: bool,
    /// key=value file with defaults for any long flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Index cache file, built on first use.
    #[arg(long)]
    pub index_cache: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "ray")]
    pub metric: MetricArg,
    /// Inlier threshold (world units for `ray`, pixels for `pixel`).
    #[arg(long, default_value_t = 0.5)]
    pub inlier_threshold: f64,
    #[arg(long, default_value_t = 0.7)]
    pub basic_ratio: f64,
    #[arg(long, default_value_t = 0.9)]
    pub advanced_ratio: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 0.1)]
    pub stop_fraction: f64,
    #[arg(long, default_value_t = 12)]
    pub stop_count: usize,
    #[arg(long, default_value_t = 6)]
    pub min_fitted: usize,
    #[arg(long, default_value_t = 100)]
    pub iterations_per_phase: usize,
    #[arg(long, default_value_t = 0.1)]
    pub skip_fraction: f64,
    #[arg(long, default_value_t = 12)]
    pub skip_count: usize,
    #[arg(long, default_value_t = 5.0)]
    pub k_sigmoid: f64,
    #[arg(long, default_value_t = 30)]
    pub dead_end_limit: usize,
    #[arg(long, default_value_t = 5)]
    pub min_seed_cameras: usize,
    #[arg(long, default_value_t = 100)]
    pub max_restarts: usize,
    #[arg(long, default_value_t = 2)]
    pub knn: usize,
    #[arg(long, default_value_t = 100)]
    pub target_backmatches: usize,
    #[arg(long, default_value_t = 0.7)]
    pub backmatch_ratio: f64,
    #[arg(long, default_value_t = 10)]
    pub priority_booster: i64,
    #[arg(long, default_value_t = 50)]
    pub pops_per_target: usize,
    /// Backmatch against every model point, not only co-visible ones.
    #[arg(long)]
    pub backmatch_all_points: bool,
    #[arg(long, default_value_t = 8)]
    pub trees: usize,
    #[arg(long, default_value_t = 8000)]
    pub checks: usize,
    #[arg(long, default_value_t = 8)]
    pub leaf_size: usize,
    /// Camera glyph size (default: 1% of the model bounding-box diagonal).
    #[arg(long)]
    pub glyph_scale: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub good_translation: f64,
    #[arg(long, default_value_t = 30.0)]
    pub wrong_translation: f64,
    #[arg(long, default_value_t = 1000.0)]
    pub focal_split: f64,
}

#[derive(Debug, Clone, clap::Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    pub points: usize,
    #[arg(long, default_value_t = 50)]
    pub cameras: usize,
    #[arg(long, default_value_t = 100)]
    pub queries: usize,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.3)]
    pub outliers: f64,
    /// Leave the focal length out of the query list.
    #[arg(long)]
    pub unknown_focal: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// Parses `key=value` lines; `#` starts a comment.
pub fn parse_config<R: BufRead>(reader: R) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected key=value, found `{line}`", i + 1);
        };
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Inserts the config file's settings as flags right after the `run`
/// subcommand so that explicit flags, which come later, override them.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let Some(run_pos) = args.iter().position(|a| a == "run") else {
        return Ok(args);
    };
    let file = File::open(&path).with_context(|| format!("cannot open config {}", path.display()))?;
    let entries = parse_config(BufReader::new(file)).with_context(|| format!("in {}", path.display()))?;

    let cmd = Cli::command();
    let run = cmd.find_subcommand("run").expect("run subcommand");
    let mut injected = Vec::new();
    for (key, value) in entries {
        let Some(arg) = run.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            bail!("{}: unknown key `{key}`", path.display());
        };
        if key == "config" {
            bail!("{}: config files cannot include other config files", path.display());
        }
        if arg.get_action().takes_values() {
            injected.push(OsString::from(format!("--{key}={value}")));
        } else {
            match value.as_str() {
                "true" | "1" | "yes" => injected.push(OsString::from(format!("--{key}"))),
                "false" | "0" | "no" => {}
                _ => bail!("{}: `{key}` takes true or false, found `{value}`", path.display()),
            }
        }
    }
    let mut out = args[..=run_pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[run_pos + 1..]);
    Ok(out)
}

impl RunArgs {
    pub fn localizer_params(&self) -> LocalizerParams {
        let metric = match self.metric {
            MetricArg::Ray => InlierMetric::RayDistance(self.inlier_threshold),
            MetricArg::Pixel => InlierMetric::Pixel(self.inlier_threshold),
        };
        let solver = match self.solver {
            SolverArg::Auto => SolverChoice::Auto,
            SolverArg::P3p => SolverChoice::P3p,
            SolverArg::P4pf => SolverChoice::P4pf,
            SolverArg::Both => SolverChoice::Both,
        };
        let mut p = LocalizerParams {
            mode: match self.mode {
                Some(ModeArg::Advanced) => Mode::Advanced,
                _ => Mode::Basic,
            },
            basic_ratio: self.basic_ratio,
            advanced_ratio: self.advanced_ratio,
            ..Default::default()
        };
        p.basic.max_iterations = self.max_iterations;
        p.basic.metric = metric;
        p.basic.stop_fraction = self.stop_fraction;
        p.basic.stop_count = self.stop_count;
        p.basic.min_fitted = self.min_fitted;
        p.basic.solver = solver;
        p.basic.rng_seed = self.seed;
        p.advanced.iterations_per_phase = self.iterations_per_phase;
        p.advanced.metric = metric;
        p.advanced.skip_fraction = self.skip_fraction;
        p.advanced.skip_count = self.skip_count;
        p.advanced.k_sigmoid = self.k_sigmoid;
        p.advanced.dead_end_limit = self.dead_end_limit;
        p.advanced.min_seed_cameras = self.min_seed_cameras;
        p.advanced.max_restarts = self.max_restarts;
        p.advanced.min_fitted = self.min_fitted;
        p.advanced.solver = solver;
        p.advanced.rng_seed = self.seed;
        p.backmatch.knn = self.knn;
        p.backmatch.target_backmatches = self.target_backmatches;
        p.backmatch.ratio = self.backmatch_ratio;
        p.backmatch.priority_booster = self.priority_booster;
        p.backmatch.pops_per_target = self.pops_per_target;
        p.backmatch.all_points = self.backmatch_all_points;
        p
    }

    pub fn index_params(&self) -> IndexParams {
        IndexParams {
            trees: self.trees,
            checks: self.checks,
            leaf_size: self.leaf_size,
            ..Default::default()
        }
    }

    fn dataset_paths(&self) -> Result<DatasetPaths> {
        let base = self.data.as_deref().map(DatasetPaths::in_dir);
        let pick = |flag: &Option<PathBuf>, from_base: Option<PathBuf>, name: &str| {
            flag.clone()
                .or(from_base)
                .with_context(|| format!("--{name} is required (or --data)"))
        };
        let model = pick(&self.model, base.as_ref().map(|b| b.model.clone()), "model")?;
        let cameras = self
            .cameras
            .clone()
            .or(base.as_ref().map(|b| b.cameras.clone()))
            .unwrap_or_else(|| model.with_file_name("list.txt"));
        let paths = DatasetPaths {
            keys: pick(&self.keys, base.as_ref().map(|b| b.keys.clone()), "keys")?,
            queries: pick(&self.list, base.as_ref().map(|b| b.queries.clone()), "list")?,
            model,
            cameras,
        };
        for (what, p) in [
            ("model", &paths.model),
            ("camera list", &paths.cameras),
            ("keyfile directory", &paths.keys),
            ("query list", &paths.queries),
        ] {
            if !p.exists() {
                bail!("{what} {} does not exist", p.display());
            }
        }
        Ok(paths)
    }

    /// Checks everything that can be checked without loading the model.
    fn validate(&self) -> Result<()> {
        let positive = [
            ("max-iterations", self.max_iterations),
            ("iterations-per-phase", self.iterations_per_phase),
            ("trees", self.trees),
            ("checks", self.checks),
            ("leaf-size", self.leaf_size),
            ("knn", self.knn),
            ("pops-per-target", self.pops_per_target),
        ];
        for (name, v) in positive {
            if v == 0 {
                bail!("--{name} must be positive");
            }
        }
        if self.knn < 2 {
            bail!("--knn must be at least 2 for the ratio test");
        }
        for (name, v) in [
            ("basic-ratio", self.basic_ratio),
            ("advanced-ratio", self.advanced_ratio),
            ("backmatch-ratio", self.backmatch_ratio),
        ] {
            if !(v > 0.0 && v < 1.0) {
                bail!("--{name} must lie in (0, 1), got {v}");
            }
        }
        for (name, v) in [("stop-fraction", self.stop_fraction), ("skip-fraction", self.skip_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                bail!("--{name} must lie in [0, 1], got {v}");
            }
        }
        if !(self.inlier_threshold > 0.0) || !(self.k_sigmoid > 0.0) {
            bail!("--inlier-threshold and --k-sigmoid must be positive");
        }
        if matches!(self.glyph_scale, Some(s) if !(s > 0.0)) {
            bail!("--glyph-scale must be positive");
        }
        if self.jobs == Some(0) {
            bail!("--jobs must be positive");
        }
        Ok(())
    }
}

fn prompt(question: &str) -> Result<String> {
    eprint!("{question} ");
    std::io::stderr().flush()?;
    let mut line = String::new();
    std::io::stdin().read_line(&mut line)?;
    Ok(line.trim().to_string())
}

/// Resolves the pipeline mode and query selection, asking on a terminal
/// when they were not given.
fn resolve_choices(args: &mut RunArgs, names: &[String]) -> Result<Option<Vec<String>>> {
    let interactive = std::io::stdin().is_terminal();
    if args.mode.is_none() {
        args.mode = Some(if interactive {
            match prompt("Pipeline [basic/advanced]:")?.as_str() {
                "" | "basic" | "b" => ModeArg::Basic,
                "advanced" | "a" => ModeArg::Advanced,
                other => bail!("unknown mode `{other}`"),
            }
        } else {
            ModeArg::Basic
        });
    }
    let query = match args.query.clone() {
        Some(q) => q,
        None if interactive => {
            eprintln!("{} queries available:", names.len());
            for n in names.iter().take(20) {
                eprintln!("  {n}");
            }
            if names.len() > 20 {
                eprintln!("  ...");
            }
            let a = prompt("Query name or `all`:")?;
            if a.is_empty() {
                "all".to_string()
            } else {
                a
            }
        }
        None => "all".to_string(),
    };
    if query == "all" {
        return Ok(None);
    }
    if !names.contains(&query) {
        return Err(SfmError::UnknownQuery(query).into());
    }
    Ok(Some(vec![query]))
}

struct QueryOutcome {
    name: String,
    result: std::result::Result<PoseEstimate, RansacError>,
    seconds: f64,
}

/// Executes `run`. Returns the number of queries that produced a pose.
pub fn run(mut args: RunArgs) -> Result<usize> {
    args.validate()?;
    let paths = args.dataset_paths()?;
    let out = args.out.clone().context("--out is required")?;
    let names: Vec<String> = load_query_list(&paths.queries)?.into_iter().map(|q| q.0).collect();
    let selected = resolve_choices(&mut args, &names)?;
    let params = args.localizer_params();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = args.jobs {
        pool = pool.num_threads(j);
    }
    let pool = pool.build()?;
    pool.install(|| run_with(&args, &paths, &out, selected.as_deref(), &params))
}

fn run_with(
    args: &RunArgs,
    paths: &DatasetPaths,
    out: &Path,
    selected: Option<&[String]>,
    params: &LocalizerParams,
) -> Result<usize> {
    let ds = load_dataset(paths, selected)?;
    log::info!(
        "model: {} cameras, {} points ({} dropped with the queries), loaded in {:.1} s",
        ds.model.cameras.len(),
        ds.model.points.len(),
        ds.dropped_points,
        ds.load_seconds
    );
    let index = build_index(&ds.model, args)?;
    let localizer = Localizer::with_index(ds.model, index);
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;

    let glyph = args
        .glyph_scale
        .unwrap_or_else(|| default_glyph_scale(&localizer.model));
    let mesh_path = out.join(MESH_FILE);
    if !args.no_export {
        export_ply(&localizer.model, &mesh_path).with_context(|| format!("writing {}", mesh_path.display()))?;
    }

    let outcomes: Vec<QueryOutcome> = ds
        .queries
        .par_iter()
        .map(|q| -> Result<QueryOutcome> {
            let start = Instant::now();
            let result = localizer.localize(q, params);
            let seconds = start.elapsed().as_secs_f64();
            match &result {
                Ok(est) => {
                    log::info!(
                        "{}: {} fitted, q = {:.3}, {} iterations{}, {:.2} s",
                        q.name,
                        est.fitted.len(),
                        est.quality.q,
                        est.iterations_used,
                        if est.used_backmatching { ", backmatched" } else { "" },
                        seconds
                    );
                    if !args.no_export {
                        export_one(out, &mesh_path, &localizer, q, est, glyph, args.images.as_deref())?;
                    }
                }
                Err(e) => log::warn!("{}: not localized: {e}", q.name),
            }
            Ok(QueryOutcome {
                name: q.name.clone(),
                result,
                seconds,
            })
        })
        .collect::<Result<_>>()?;

    write_results(&out.join("results.csv"), &outcomes)?;
    let registered = outcomes.iter().filter(|o| o.result.is_ok()).count();

    if args.benchmark {
        let rows: Vec<QueryRow> = outcomes
            .iter()
            .map(|o| {
                let golden = ds
                    .golden
                    .get(&o.name)
                    .with_context(|| format!("no golden pose for {}", o.name))?;
                Ok(QueryRow::new(&o.name, &o.result, golden, o.seconds))
            })
            .collect::<Result<_>>()?;
        let thresholds = ReportThresholds {
            good_translation: args.good_translation,
            wrong_translation: args.wrong_translation,
            focal_split_px: args.focal_split,
        };
        let mut report = BenchmarkReport::from_rows(rows, thresholds);
        report.load_seconds = Some(ds.load_seconds);
        report.write_csv(out)?;
        println!("{}", report.summary());
    }
    println!("{registered}/{} queries localized", outcomes.len());
    Ok(registered)
}

fn build_index(model: &crate::sfm::SfmModel, args: &RunArgs) -> Result<DescriptorIndex> {
    let params = args.index_params();
    let start = Instant::now();
    if let Some(cache) = &args.index_cache {
        if cache.exists() {
            let descriptors = crate::index::model_descriptors(model)?;
            match File::open(cache)
                .map_err(crate::index::IndexError::from)
                .and_then(|f| DescriptorIndex::load_cache(&descriptors, BufReader::new(f)))
            {
                Ok(idx) if idx.params() == params => {
                    log::info!("index loaded from {}", cache.display());
                    return Ok(idx);
                }
                Ok(_) => log::info!("index cache {} has other parameters, rebuilding", cache.display()),
                Err(e) => log::info!("index cache {} not usable ({e}), rebuilding", cache.display()),
            }
        }
    }
    let index = DescriptorIndex::from_model(model, params)?;
    log::info!("index over {} points built in {:.1} s", index.len(), start.elapsed().as_secs_f64());
    if let Some(cache) = &args.index_cache {
        let f = File::create(cache).with_context(|| format!("cannot write {}", cache.display()))?;
        index.save_cache(BufWriter::new(f))?;
    }
    Ok(index)
}

fn export_one(
    out: &Path,
    mesh_path: &Path,
    localizer: &Localizer,
    q: &QueryImage,
    est: &PoseEstimate,
    glyph: f64,
    images: Option<&Path>,
) -> Result<()> {
    let stem = Path::new(&q.name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| q.name.clone());
    let image = images.map(|d| d.join(&q.name));
    export_query(
        &out.join(stem),
        mesh_path,
        &localizer.model,
        q,
        est,
        glyph,
        image.as_deref(),
    )
    .with_context(|| format!("exporting {}", q.name))?;
    Ok(())
}

/// Pose table without timings, so that it is reproducible under `--seed`.
fn write_results(path: &Path, outcomes: &[QueryOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "name", "status", "fitted", "quality", "iterations", "backmatched", "focal_px", "cx", "cy", "cz", "r00",
        "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22",
    ])?;
    let mut sorted: Vec<&QueryOutcome> = outcomes.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    for o in sorted {
        let mut rec = vec![o.name.clone()];
        match &o.result {
            Ok(e) => {
                let p = &e.pose;
                rec.extend([
                    "ok".to_string(),
                    e.fitted.len().to_string(),
                    fmt_num(e.quality.q),
                    e.iterations_used.to_string(),
                    e.used_backmatching.to_string(),
                    fmt_num(p.focal_px),
                ]);
                rec.extend(p.center.iter().map(|&v| fmt_num(v)));
                for i in 0..3 {
                    rec.extend((0..3).map(|j| fmt_num(p.rotation[(i, j)])));
                }
            }
            Err(err) => {
                rec.push(err.to_string());
                rec.extend(std::iter::repeat_n(String::new(), 17));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let params = SceneParams {
        n_points: args.points,
        n_cameras: args.cameras,
        n_queries: args.queries,
        noise_px: args.noise,
        outlier_fraction: args.outliers,
        query_focal_known: !args.unknown_focal,
        seed: args.seed,
        ..Default::default()
    };
    let scene = generate_synthetic_scene(&params)?;
    write_dataset(&scene, &args.out)?;
    println!(
        "wrote {} cameras, {} points, {} queries to {}",
        scene.full.cameras.len(),
        scene.full.points.len(),
        scene.queries.len(),
        args.out.display()
    );
    Ok(())
}

/// Parses `args` (including the program name), applying any config file.
pub fn parse_args(args: Vec<OsString>) -> Result<Cli> {
    let args = expand_config(args)?;
    Ok(Cli::try_parse_from(args)?)
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => run(*args).map(|_| ()),
        Command::Synth(args) => synth(&args),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    fn run_args(cli: Cli) -> RunArgs {
        match cli.command {
            Command::Run(a) => *a,
            _ => panic!("expected run"),
        }
    }

    #[test]
    fn config_lines() {
        let c = parse_config("# comment\nstop_count = 20\n\nmode=advanced # trailing\n".as_bytes()).unwrap();
        assert_eq!(
            c,
            vec![("stop-count".into(), "20".into()), ("mode".into(), "advanced".into())]
        );
        assert!(parse_config("nonsense\n".as_bytes()).is_err());
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "stop-count=20\nmode=advanced\nseed=3\nbenchmark=true\n").unwrap();
        let cfg = cfg.to_str().unwrap();
        let a = run_args(parse_args(os(&["pointloc", "run", "--config", cfg, "--seed", "9"])).unwrap());
        assert_eq!(a.stop_count, 20);
        assert_eq!(a.mode, Some(ModeArg::Advanced));
        assert_eq!(a.seed, Some(9));
        assert!(a.benchmark);
        let p = a.localizer_params();
        assert_eq!(p.mode, Mode::Advanced);
        assert_eq!(p.basic.stop_count, 20);
        assert_eq!(p.advanced.rng_seed, Some(9));

        std::fs::write(dir.path().join("bad.cfg"), "no-such-key=1\n").unwrap();
        let bad = dir.path().join("bad.cfg");
        assert!(parse_args(os(&["pointloc", "run", "--config", bad.to_str().unwrap()])).is_err());
    }

    #[test]
    fn defaults_match_library() {
        let a = run_args(parse_args(os(&["pointloc", "run"])).unwrap());
        let p = a.localizer_params();
        let d = LocalizerParams::default();
        assert_eq!(p.basic, d.basic);
        assert_eq!(p.advanced, d.advanced);
        assert_eq!(p.backmatch, d.backmatch);
        assert_eq!(p.basic_ratio, d.basic_ratio);
        assert_eq!(p.advanced_ratio, d.advanced_ratio);
        assert_eq!(a.index_params(), IndexParams::default());
        let t = ReportThresholds::default();
        assert_eq!(
            (a.good_translation, a.wrong_translation, a.focal_split),
            (t.good_translation, t.wrong_translation, t.focal_split_px)
        );
    }

    #[test]
    fn invalid_values_rejected_early() {
        let a = run_args(parse_args(os(&["pointloc", "run", "--basic-ratio", "1.5"])).unwrap());
        assert!(a.validate().is_err());
        assert!(parse_args(os(&["pointloc", "run", "--mode", "fast"])).is_err());
    }
}

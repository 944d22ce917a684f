//! `frr` — benchmark CLI for the robust-regression toolkit: generate
//! synthetic ionosphere scenes, fit one method against a held-out
//! station, tune parameters by random search, compare methods across
//! seeds, and run the invariant verification suite.
//!
//! Exit codes: 0 success, 1 usage error, 2 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use frr_core::error::FrrError;
use frr_core::estimators::PredictionMode;
use frr_core::harness::defaults::{
    default_linear_scheme, tuned_method_spec, tuned_method_specs, DESK_EPSILON,
};
use frr_core::harness::{
    compare_methods, mix_seed, random_search_tune, run_linear_experiment, run_scene_experiment,
    scene_tuning_objective, verify_suite, write_compare_outputs, LinearMethod,
    LinearScenarioConfig, MethodKind, MethodSpec, TuningRanges,
};
use frr_core::ionosim::{
    gen_scene, load_scene, observed_daily_ratios, save_scene, CorruptionSchedule, Scene,
    SceneConfig,
};

#[derive(Parser)]
#[command(
    name = "frr",
    version,
    about = "Robust-regression benchmark harness for synthetic ionosphere vTEC scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Master RNG seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Scene file (JSON lines) produced by `gen`.
    #[arg(long, global = true)]
    scene: Option<PathBuf>,
    /// Success threshold for double-difference predictions.
    #[arg(long, global = true, default_value_t = DESK_EPSILON)]
    epsilon: f64,
    /// vTEC prediction mode.
    #[arg(long, global = true, default_value = "paper", value_parser = parse_mode)]
    mode: PredictionMode,
    /// Held-out station index.
    #[arg(long, global = true, default_value_t = 0)]
    station: usize,
}

fn parse_mode(s: &str) -> Result<PredictionMode, String> {
    s.parse()
}

fn parse_method(s: &str) -> Result<MethodKind, String> {
    s.parse()
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene file.
    Gen {
        #[command(flatten)]
        common: CommonArgs,
        /// Output path for the scene (JSON lines).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 17)]
        stations: usize,
        #[arg(long, default_value_t = 8)]
        satellites: usize,
        /// Scene length in seconds (one frame per second).
        #[arg(long, default_value_t = 30)]
        duration: usize,
        /// Corruption schedule: `table`, `constant:<ratio>`, or
        /// `sinusoidal:<min>,<max>,<period-seconds>`.
        #[arg(long, default_value = "table")]
        corruption: String,
    },
    /// Fit one method on a scene (or the default linear scenario) and
    /// print its metrics record with per-frame timing.
    Fit {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_parser = parse_method, default_value = "frr")]
        method: MethodKind,
        /// JSON file with a tuned method spec (overrides the frozen defaults).
        #[arg(long)]
        params: Option<PathBuf>,
        /// Run the linear scenario instead of a scene.
        #[arg(long, default_value_t = false)]
        linear: bool,
        /// Linear scenario dimension.
        #[arg(long, default_value_t = 10)]
        linear_d: usize,
        /// Linear scenario clean-set size.
        #[arg(long, default_value_t = 700)]
        linear_clean: usize,
        /// Linear scenario noisy-set size.
        #[arg(long, default_value_t = 300)]
        linear_noisy: usize,
        /// Write the metrics record to this path as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random-search parameter tuning on a training scene.
    Tune {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_parser = parse_method, default_value = "frr")]
        method: MethodKind,
        /// Number of random candidates to evaluate.
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Write the best parameters to this path as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare methods across fresh scenes; writes JSON-lines records and
    /// a CSV summary.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated method list (default: all seven).
        #[arg(long)]
        methods: Option<String>,
        /// Number of evaluation seeds (scenes) per method.
        #[arg(long, default_value_t = 5)]
        num_seeds: usize,
        /// Output prefix: writes <out>.jsonl and <out>.csv.
        #[arg(long)]
        out: PathBuf,
        /// JSON file with an array of method specs (overrides defaults).
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Run the library's invariant checks and print one line per check.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap help/version are not usage errors
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    init_thread_pool();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// FRR_THREADS caps rayon's worker count; unset keeps the default.
fn init_thread_pool() {
    if let Ok(v) = std::env::var("FRR_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn parse_corruption(s: &str) -> Result<CorruptionSchedule, FrrError> {
    if s == "table" {
        return Ok(CorruptionSchedule::Cycle {
            ratios: observed_daily_ratios(),
        });
    }
    if let Some(ratio) = s.strip_prefix("constant:") {
        let ratio: f64 = ratio
            .parse()
            .map_err(|_| FrrError::Invalid(format!("bad constant ratio `{ratio}`")))?;
        return Ok(CorruptionSchedule::Constant { ratio });
    }
    if let Some(rest) = s.strip_prefix("sinusoidal:") {
        let parts: Vec<&str> = rest.split(',').collect();
        if parts.len() == 3 {
            let parse = |p: &str| -> Result<f64, FrrError> {
                p.parse()
                    .map_err(|_| FrrError::Invalid(format!("bad number `{p}`")))
            };
            return Ok(CorruptionSchedule::Sinusoidal {
                min: parse(parts[0])?,
                max: parse(parts[1])?,
                period_seconds: parse(parts[2])?,
            });
        }
    }
    Err(FrrError::Invalid(format!(
        "bad corruption schedule `{s}` (expected table, constant:<r>, or sinusoidal:<min>,<max>,<period>)"
    )))
}

fn load_scene_arg(common: &CommonArgs) -> Result<Scene, FrrError> {
    match &common.scene {
        Some(path) => load_scene(path),
        None => {
            // no scene file: a default scene derived from the seed
            let config = SceneConfig {
                duration_seconds: 10,
                ..SceneConfig::default()
            };
            gen_scene(&config, common.seed)
        }
    }
}

fn read_spec_file(path: &PathBuf) -> Result<MethodSpec, FrrError> {
    let text = std::fs::read_to_string(path)?;
    let spec: MethodSpec = serde_json::from_str(&text)
        .map_err(|e| FrrError::Invalid(format!("bad params file: {e}")))?;
    spec.validate()?;
    Ok(spec)
}

fn linear_method(kind: MethodKind) -> LinearMethod {
    match kind {
        MethodKind::Frr => LinearMethod::Frr {
            scheme: default_linear_scheme(),
        },
        MethodKind::CleanOnly => LinearMethod::CleanOnly,
        MethodKind::PooledLs => LinearMethod::PooledLs,
        MethodKind::Hit => LinearMethod::Hit { rho: 0.7 },
        MethodKind::Huber => LinearMethod::Huber { threshold: 2.0 },
        MethodKind::Irls => LinearMethod::Irls,
        MethodKind::Ransac => LinearMethod::Ransac { rho: 0.7 },
    }
}

fn run(cli: Cli) -> Result<(), FrrError> {
    match cli.command {
        Command::Gen {
            common,
            out,
            stations,
            satellites,
            duration,
            corruption,
        } => {
            let config = SceneConfig {
                num_stations: stations,
                num_satellites: satellites,
                duration_seconds: duration,
                corruption_schedule: parse_corruption(&corruption)?,
                ..SceneConfig::default()
            };
            let scene = gen_scene(&config, common.seed)?;
            save_scene(&scene, &out)?;
            println!(
                "wrote {} frames ({} stations, {} satellites) to {}",
                scene.frames.len(),
                stations,
                satellites,
                out.display()
            );
            Ok(())
        }
        Command::Fit {
            common,
            method,
            params,
            linear,
            linear_d,
            linear_clean,
            linear_noisy,
            out,
        } => {
            let record = if linear {
                let config = LinearScenarioConfig {
                    d: linear_d,
                    n_clean: linear_clean,
                    m_noisy: linear_noisy,
                    ..LinearScenarioConfig::default()
                };
                run_linear_experiment(&config, &linear_method(method), common.epsilon, common.seed)?
                    .record
            } else {
                let scene = load_scene_arg(&common)?;
                let spec = match params {
                    Some(path) => read_spec_file(&path)?,
                    None => tuned_method_spec(method),
                };
                run_scene_experiment(
                    &scene,
                    common.station,
                    &spec,
                    common.mode,
                    common.epsilon,
                    common.seed,
                )?
            };
            let json = serde_json::to_string_pretty(&record)
                .map_err(|e| FrrError::Invalid(format!("json: {e}")))?;
            println!("{json}");
            if let Some(path) = out {
                std::fs::write(path, json)?;
            }
            Ok(())
        }
        Command::Tune {
            common,
            method,
            trials,
            out,
        } => {
            let scene = load_scene_arg(&common)?;
            let ranges = TuningRanges {
                num_trials: trials,
                ..Default::default()
            };
            let objective = scene_tuning_objective(
                &scene,
                common.station,
                common.mode,
                common.epsilon,
                mix_seed(common.seed, 1),
            )?;
            let outcome = random_search_tune(&ranges, method, &objective, common.seed)?;
            let json = serde_json::to_string_pretty(&outcome.best)
                .map_err(|e| FrrError::Invalid(format!("json: {e}")))?;
            eprintln!(
                "best of {} trials: score {:.4} (trial {})",
                trials, outcome.best_score, outcome.best_trial
            );
            println!("{json}");
            if let Some(path) = out {
                std::fs::write(path, json)?;
            }
            Ok(())
        }
        Command::Compare {
            common,
            methods,
            num_seeds,
            out,
            params,
        } => {
            let config = match &common.scene {
                Some(path) => load_scene(path)?.config,
                None => SceneConfig {
                    duration_seconds: 10,
                    ..SceneConfig::default()
                },
            };
            let specs: Vec<MethodSpec> = match (methods, params) {
                (_, Some(path)) => {
                    let text = std::fs::read_to_string(&path)?;
                    let specs: Vec<MethodSpec> = serde_json::from_str(&text)
                        .map_err(|e| FrrError::Invalid(format!("bad params file: {e}")))?;
                    for spec in &specs {
                        spec.validate()?;
                    }
                    specs
                }
                (Some(list), None) => list
                    .split(',')
                    .map(|name| {
                        name.trim()
                            .parse::<MethodKind>()
                            .map(tuned_method_spec)
                            .map_err(FrrError::Invalid)
                    })
                    .collect::<Result<Vec<_>, _>>()?,
                (None, None) => tuned_method_specs(),
            };
            if num_seeds == 0 {
                return Err(FrrError::Invalid("--num-seeds must be >= 1".into()));
            }
            let seeds: Vec<u64> = (0..num_seeds)
                .map(|i| mix_seed(common.seed, i as u64))
                .collect();
            let table = compare_methods(
                &config,
                common.station,
                &specs,
                common.mode,
                common.epsilon,
                &seeds,
            )?;
            let jsonl = out.with_extension("jsonl");
            let csv = out.with_extension("csv");
            write_compare_outputs(&table, &jsonl, &csv)?;
            println!("method,seeds,median_success_ratio");
            for s in &table.summaries {
                println!("{},{},{}", s.method, s.seeds, s.median_success_ratio);
            }
            for (method, seed, error) in &table.failed_cells {
                eprintln!("cell failed: {method} seed {seed}: {error}");
            }
            eprintln!("wrote {} and {}", jsonl.display(), csv.display());
            Ok(())
        }
        Command::Verify { common } => {
            let checks = verify_suite(common.seed);
            let mut all_ok = true;
            for c in &checks {
                let status = if c.passed { "PASS" } else { "FAIL" };
                println!("[{status}] {}: {}", c.name, c.detail);
                all_ok &= c.passed;
            }
            if all_ok {
                Ok(())
            } else {
                Err(FrrError::Tuning(
                    "verification suite reported failures".into(),
                ))
            }
        }
    }
}

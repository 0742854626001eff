//! `foviq`: foveated model-observer image quality metrics.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use foviq_cli::commands::{self, FitMode, FsmRunArgs, TimeSchemeArgs};
use foviq_cli::config::{self, parse_bins, parse_dims, Settings};
use foviq_cli::pipeline::{
    parse_method, parse_model, parse_modality, parse_scheme, parse_signal, run_pipeline,
};
use foviq_core::stimulus::Modality;
use foviq_core::weighting::WeightScheme;
use foviq_core::Error;

#[derive(Parser)]
#[command(name = "foviq", version, about = "Foveated model-observer image quality metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate power-law filtered noise volumes (.vol)
    GenStimuli {
        /// Volume dimensions, WxHxD
        #[arg(long)]
        dims: String,
        #[arg(long, default_value_t = 128.0)]
        mean: f64,
        #[arg(long, default_value_t = 25.0)]
        sd: f64,
        /// Power-spectrum exponent (power follows f^exponent)
        #[arg(long, default_value_t = -2.8)]
        exponent: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Number of volumes; > 1 writes bg_NNNN.vol files into OUT as a directory
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an eccentricity-indexed observer template set (.tset)
    BuildTemplates {
        /// Observer model: fcho | fnpwe
        #[arg(long)]
        model: String,
        /// Target: mcalc | mass
        #[arg(long)]
        signal: String,
        /// Eccentricity bins, start:step:stop in degrees
        #[arg(long, default_value = "0:1:9")]
        bins: String,
        /// Background volume (.vol) for covariance estimation; white noise assumed if absent
        #[arg(long)]
        bg_samples: Option<PathBuf>,
        /// White-noise sd used when no background samples are given
        #[arg(long, default_value_t = 25.0)]
        noise_sd: f64,
        #[arg(long, default_value_t = 36.0)]
        px_per_deg: f64,
        /// Template window side in pixels
        #[arg(long, default_value_t = 64)]
        window: usize,
        /// 2d | 3d
        #[arg(long, default_value = "2d")]
        modality: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the per-eccentricity d' curve for a template set
    DprimeCurve {
        #[arg(long)]
        templates: PathBuf,
        /// empirical | analytic | fourier
        #[arg(long, default_value = "analytic")]
        method: String,
        /// Monte Carlo trials per bin (empirical method)
        #[arg(long, default_value_t = 10000)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Background noise sd
        #[arg(long, default_value_t = 25.0)]
        noise_sd: f64,
        /// Power-law exponent of the background spectrum; white noise if omitted
        #[arg(long)]
        noise_exponent: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute an eccentricity weight vector
    Weights {
        /// avg | dprime | et | time
        #[arg(long)]
        scheme: String,
        #[arg(long, default_value = "0:1:9")]
        bins: String,
        /// d' curve (dprime scheme)
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Fixation log, JSON lines (et scheme)
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value_t = 36.0)]
        px_per_deg: f64,
        /// Median fixation time in ms (time scheme)
        #[arg(long)]
        fix_time_ms: Option<f64>,
        /// Median response time in s (time scheme)
        #[arg(long)]
        resp_time_s: Option<f64>,
        /// Display size WxH in pixels (time scheme)
        #[arg(long)]
        display: Option<String>,
        /// Slice count (time scheme, 3d)
        #[arg(long, default_value_t = 1)]
        slices: usize,
        /// 2d | 3d (time scheme)
        #[arg(long, default_value = "2d")]
        modality: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collapse a d' curve and weight vector into one figure of merit
    Fom {
        #[arg(long)]
        curve: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// csv | json
        #[arg(long, default_value = "json")]
        format: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the foveated search model over a stimulus set
    FsmRun {
        /// Directory of background volumes (.vol)
        #[arg(long)]
        stimuli: PathBuf,
        #[arg(long)]
        templates: PathBuf,
        /// Recorded fixation log (JSON lines); synthetic grid scanpaths if omitted
        #[arg(long)]
        scanpaths: Option<PathBuf>,
        /// Decision threshold on the likelihood ratio
        #[arg(long, default_value_t = 1.0)]
        threshold: f64,
        /// Candidate-location stride in pixels
        #[arg(long, default_value_t = 4)]
        stride: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Background patches per bin for response calibration
        #[arg(long, default_value_t = 2000)]
        calib_patches: usize,
        /// Median fixation time in ms for synthetic scanpaths
        #[arg(long)]
        fix_time_ms: Option<f64>,
        /// Median response time in s for synthetic scanpaths
        #[arg(long)]
        resp_time_s: Option<f64>,
        /// Verdict output (JSON lines); a .summary.json is written alongside
        #[arg(long)]
        out: PathBuf,
    },
    /// Goodness of fit between reference d' values and model predictions
    Fit {
        /// Reference points: [{label, human_dprime, stderr}]
        #[arg(long)]
        reference: PathBuf,
        /// Predictions: {label: dprime}
        #[arg(long)]
        predictions: PathBuf,
        /// raw | ratio (mcalc/mass quotient per label group)
        #[arg(long, default_value = "raw")]
        on: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline from a config file
    Pipeline {
        /// INI-style key=value config
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (overrides the out_dir config key)
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Root seed (overrides the seed config key)
        #[arg(long)]
        seed: Option<u64>,
        /// Extra key=value overrides, highest precedence
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::EmptyBank { .. } => 2,
        Error::Io(_) | Error::Data(_) | Error::Serde(_) => 3,
        Error::Numerical(_) | Error::Degenerate(_) => 4,
    }
}

fn run(cli: Cli) -> foviq_core::Result<()> {
    match cli.command {
        Command::GenStimuli { dims, mean, sd, exponent, seed, count, out } => {
            commands::gen_stimuli(parse_dims(&dims)?, mean, sd, exponent, seed, count, &out)
        }
        Command::BuildTemplates {
            model,
            signal,
            bins,
            bg_samples,
            noise_sd,
            px_per_deg,
            window,
            modality,
            out,
        } => commands::build_templates(
            parse_model(&model)?,
            parse_signal(&signal)?,
            &parse_bins(&bins)?,
            bg_samples.as_deref(),
            noise_sd,
            px_per_deg,
            window,
            parse_modality(&modality)?,
            &out,
        ),
        Command::DprimeCurve { templates, method, trials, seed, noise_sd, noise_exponent, out } => {
            commands::dprime_curve_cmd(
                &templates,
                parse_method(&method)?,
                trials,
                seed,
                noise_sd,
                noise_exponent,
                &out,
            )
        }
        Command::Weights {
            scheme,
            bins,
            curve,
            log,
            px_per_deg,
            fix_time_ms,
            resp_time_s,
            display,
            slices,
            modality,
            out,
        } => {
            let scheme = parse_scheme(&scheme)?;
            let modality = parse_modality(&modality)?;
            let time_args = if scheme == WeightScheme::TimeClosest {
                let display_spec = display
                    .ok_or_else(|| Error::invalid("time scheme needs --display WxH"))?;
                let (w, h, _) = parse_dims(&display_spec)?;
                Some(TimeSchemeArgs {
                    fix_time_ms: fix_time_ms.unwrap_or(match modality {
                        Modality::TwoD => 250.0,
                        Modality::ThreeD => 500.0,
                    }),
                    resp_time_s: resp_time_s.unwrap_or(match modality {
                        Modality::TwoD => 3.16,
                        Modality::ThreeD => 22.62,
                    }),
                    display: (w, h),
                    n_slices: slices,
                    px_per_deg,
                    modality,
                })
            } else {
                None
            };
            commands::weights_cmd(
                scheme,
                &parse_bins(&bins)?,
                curve.as_deref(),
                log.as_deref(),
                px_per_deg,
                time_args,
                &out,
            )
        }
        Command::Fom { curve, weights, format, out } => {
            let fmt: foviq_core::io::TableFormat = format.parse()?;
            let mut hash_input = Settings::default();
            hash_input.set("curve", curve.display().to_string());
            hash_input.set("weights", weights.display().to_string());
            commands::fom_cmd(&curve, &weights, fmt, config::config_hash(&hash_input), &out)
        }
        Command::FsmRun {
            stimuli,
            templates,
            scanpaths,
            threshold,
            stride,
            seed,
            calib_patches,
            fix_time_ms,
            resp_time_s,
            out,
        } => {
            let summary = commands::fsm_run(&FsmRunArgs {
                stimuli_dir: stimuli,
                templates,
                scanpaths,
                threshold,
                stride,
                seed,
                calib_patches,
                fix_time_ms,
                resp_time_s,
                out,
            })?;
            println!("{}", serde_json::to_string(&summary)?);
            Ok(())
        }
        Command::Fit { reference, predictions, on, out } => {
            let mode = match on.as_str() {
                "raw" => FitMode::Raw,
                "ratio" => FitMode::Ratio,
                other => return Err(Error::invalid(format!("--on must be raw|ratio, got '{other}'"))),
            };
            commands::fit_cmd(&reference, &predictions, mode, &out)
        }
        Command::Pipeline { config, out_dir, seed, sets } => {
            let mut settings = match config {
                Some(path) => Settings::from_ini(&path)?,
                None => Settings::default(),
            };
            settings.apply_env();
            if let Some(dir) = out_dir {
                settings.set("out_dir", dir.display().to_string());
            }
            if let Some(s) = seed {
                settings.set("seed", s.to_string());
            }
            for kv in &sets {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::invalid(format!("--set expects KEY=VALUE, got '{kv}'")))?;
                settings.set(k.trim(), v.trim());
            }
            let records = run_pipeline(&settings)?;
            eprintln!("pipeline wrote {} records", records.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own message; usage problems map to code 2
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help { ExitCode::SUCCESS } else { ExitCode::from(2) };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

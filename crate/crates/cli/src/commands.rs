//! Subcommand implementations shared by the CLI front end and the pipeline.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use foviq_core::detectability::{dprime_curve, DPrimeMethod, NoiseStats};
use foviq_core::fsm::{
    calibrate_bins_from_volumes, run_batch, synthesize_scanpath, BatchResult, BatchTrial,
    Scanpath, ScanpathSource,
};
use foviq_core::io;
use foviq_core::stimulus::{
    absent_trial, extract_2d, generate_noise_volume, insert_signal, make_signal, power_law_nps,
    Modality, NoiseVolume, SignalKind, VoxelPos,
};
use foviq_core::templates::{build_template_set, BackgroundStats, ObserverModel};
use foviq_core::weighting::{
    aggregate_dprime, average_weights, dprime_weights, et_closest_fix_weights,
    time_closest_fix_weights, SearchTimingParams, WeightScheme, WeightVector,
};
use foviq_core::{fft, fit, Error, Result};

/// Seconds since the Unix epoch, honoring `SOURCE_DATE_EPOCH` for
/// reproducible runs.
pub fn timestamp() -> String {
    if let Ok(v) = std::env::var("SOURCE_DATE_EPOCH") {
        return v;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs().to_string())
        .unwrap_or_else(|_| "0".into())
}

/// Write JSON through a temp file and rename, so readers never see a
/// partial record.
pub fn atomic_write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn gen_stimuli(
    dims: (usize, usize, usize),
    mean: f64,
    sd: f64,
    exponent: f64,
    seed: u64,
    count: usize,
    out: &Path,
) -> Result<()> {
    if count == 0 {
        return Err(Error::invalid("count must be >= 1"));
    }
    if count == 1 {
        let v = generate_noise_volume(dims, mean, sd, exponent, seed)?;
        io::write_volume(out, &v)?;
        return Ok(());
    }
    std::fs::create_dir_all(out)?;
    for i in 0..count {
        let v = generate_noise_volume(dims, mean, sd, exponent, seed + i as u64)?;
        io::write_volume(&out.join(format!("bg_{i:04}.vol")), &v)?;
    }
    Ok(())
}

/// 2D noise power spectrum estimated from non-overlapping window-size
/// patches of a volume's slices (mean-subtracted periodogram average).
pub fn estimate_nps2d(volume: &NoiseVolume, window: usize) -> Result<Array2<f64>> {
    let (w, h, d) = volume.dims();
    if window == 0 || window > w || window > h {
        return Err(Error::invalid(format!(
            "window {window} does not fit in {w}x{h} slices"
        )));
    }
    let m = (window * window) as f64;
    let mut nps = Array2::<f64>::zeros((window, window));
    let mut count = 0usize;
    for z in 0..d {
        let slice = volume.voxels.index_axis(ndarray::Axis(0), z);
        for by in 0..h / window {
            for bx in 0..w / window {
                let patch = slice.slice(ndarray::s![
                    by * window..(by + 1) * window,
                    bx * window..(bx + 1) * window
                ]);
                let mean = patch.sum() / m;
                let centered = patch.mapv(|v| v - mean);
                let spec = fft::fft2(&centered);
                for (acc, v) in nps.iter_mut().zip(spec.iter()) {
                    *acc += v.norm_sqr() / m;
                }
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Data("no patches available for NPS estimation".into()));
    }
    nps.mapv_inplace(|v| v / count as f64);
    Ok(nps)
}

#[allow(clippy::too_many_arguments)]
pub fn build_templates(
    model: ObserverModel,
    signal: SignalKind,
    bins: &[f64],
    bg_samples: Option<&Path>,
    noise_sd: f64,
    px_per_deg: f64,
    window: usize,
    modality: Modality,
    out: &Path,
) -> Result<()> {
    let nps2d = match bg_samples {
        Some(path) => estimate_nps2d(&io::read_volume(path)?, window)?,
        None => {
            // flat spectrum of a white field with the given sd
            Array2::from_elem((window, window), noise_sd * noise_sd)
        }
    };
    let profile = make_signal(signal, px_per_deg)?;
    let set = build_template_set(
        model,
        &profile,
        &BackgroundStats::Nps2d(nps2d),
        bins,
        px_per_deg,
        window,
        modality,
    )?;
    io::write_template_set(out, &set, None)?;
    Ok(())
}

/// Noise model on the template grid for curve and calibration runs.
pub fn template_noise(
    template_dim: (usize, usize, usize),
    sd: f64,
    exponent: Option<f64>,
) -> Result<NoiseStats> {
    match exponent {
        None => Ok(NoiseStats::White { sd }),
        Some(e) => {
            let (d, h, w) = template_dim;
            let shape: Vec<usize> = if d == 1 { vec![h, w] } else { vec![d, h, w] };
            Ok(NoiseStats::Nps(power_law_nps(&shape, sd, e)?))
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn dprime_curve_cmd(
    templates: &Path,
    method: DPrimeMethod,
    trials: usize,
    seed: u64,
    noise_sd: f64,
    noise_exponent: Option<f64>,
    out: &Path,
) -> Result<()> {
    let (set, _) = io::read_template_set(templates)?;
    let signal = make_signal(set.signal_kind, set.px_per_deg)?;
    let noise = template_noise(set.templates[0].dim(), noise_sd, noise_exponent)?;
    let trials_opt = match method {
        DPrimeMethod::Empirical => Some(trials),
        _ => None,
    };
    let curve = dprime_curve(&set, &signal, &noise, method, trials_opt, seed)?;
    io::write_curve(out, &curve)?;
    Ok(())
}

pub struct TimeSchemeArgs {
    pub fix_time_ms: f64,
    pub resp_time_s: f64,
    pub display: (usize, usize),
    pub n_slices: usize,
    pub px_per_deg: f64,
    pub modality: Modality,
}

#[allow(clippy::too_many_arguments)]
pub fn weights_cmd(
    scheme: WeightScheme,
    bins: &[f64],
    curve: Option<&Path>,
    log: Option<&Path>,
    px_per_deg: f64,
    time_args: Option<TimeSchemeArgs>,
    out: &Path,
) -> Result<()> {
    let wv = compute_weights(scheme, bins, curve, log, px_per_deg, time_args)?;
    io::write_weights(out, &wv)?;
    Ok(())
}

pub fn compute_weights(
    scheme: WeightScheme,
    bins: &[f64],
    curve: Option<&Path>,
    log: Option<&Path>,
    px_per_deg: f64,
    time_args: Option<TimeSchemeArgs>,
) -> Result<WeightVector> {
    match scheme {
        WeightScheme::Average => average_weights(bins),
        WeightScheme::DprimeWeighted => {
            let path = curve
                .ok_or_else(|| Error::invalid("d'-weighted scheme needs --curve"))?;
            let c = io::read_curve(path)?;
            if c.ecc_bins != bins {
                return Err(Error::invalid(
                    "curve bins do not match the requested bins",
                ));
            }
            dprime_weights(&c)
        }
        WeightScheme::EtClosest => {
            let path = log.ok_or_else(|| Error::invalid("ET scheme needs --log"))?;
            let fixlog = io::read_fixation_log(path)?;
            let (wv, skipped) = et_closest_fix_weights(&fixlog, bins, px_per_deg)?;
            if skipped > 0 {
                eprintln!("note: skipped {skipped} trials without usable fixations");
            }
            Ok(wv)
        }
        WeightScheme::TimeClosest => {
            let args = time_args
                .ok_or_else(|| Error::invalid("time scheme needs timing parameters"))?;
            let params = SearchTimingParams {
                median_fixation_time_ms: args.fix_time_ms,
                median_response_time_s: args.resp_time_s,
                display: args.display,
                n_slices: args.n_slices,
                px_per_deg: args.px_per_deg,
            };
            time_closest_fix_weights(&params, args.modality, bins)
        }
    }
}

pub fn fom_cmd(
    curve_path: &Path,
    weights_path: &Path,
    format: io::TableFormat,
    config_hash: String,
    out: &Path,
) -> Result<()> {
    let curve = io::read_curve(curve_path)?;
    let weights = io::read_weights(weights_path)?;
    let record = io::FigureOfMeritRecord {
        model: curve.model,
        signal: curve.signal,
        modality: curve.modality,
        scheme: weights.scheme,
        aggregate_dprime: aggregate_dprime(&curve, &weights)?,
        curve_ref: curve_path.display().to_string(),
        weights_ref: weights_path.display().to_string(),
        timestamp: timestamp(),
        config_hash,
    };
    io::export_table(out, &[record], format)?;
    Ok(())
}

pub struct FsmRunArgs {
    pub stimuli_dir: PathBuf,
    pub templates: PathBuf,
    pub scanpaths: Option<PathBuf>,
    pub threshold: f64,
    pub stride: usize,
    pub seed: u64,
    pub calib_patches: usize,
    pub fix_time_ms: Option<f64>,
    pub resp_time_s: Option<f64>,
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct FsmSummary {
    pub n_trials: usize,
    pub dprime: f64,
    pub pc: f64,
    pub threshold: f64,
    pub stride: usize,
    pub seed: u64,
}

fn sorted_volumes(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut vols: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "vol"))
        .collect();
    vols.sort();
    if vols.is_empty() {
        return Err(Error::Data(format!(
            "no .vol files in '{}'",
            dir.display()
        )));
    }
    Ok(vols)
}

pub fn fsm_run(args: &FsmRunArgs) -> Result<FsmSummary> {
    let (set, stored_calib) = io::read_template_set(&args.templates)?;
    let signal = make_signal(set.signal_kind, set.px_per_deg)?;
    let vol_paths = sorted_volumes(&args.stimuli_dir)?;
    let calib = match stored_calib {
        Some(c) => c,
        None => {
            // Calibrate decision statistics on patches drawn from the actual
            // stimulus backgrounds rather than a synthetic noise model, so
            // bin response moments match what the search stage will see.
            let calib_vols: Vec<_> = vol_paths
                .iter()
                .take(8)
                .map(|p| io::read_volume(p))
                .collect::<Result<_>>()?;
            let refs: Vec<&_> = calib_vols.iter().collect();
            calibrate_bins_from_volumes(
                &set,
                &signal,
                &refs,
                args.calib_patches,
                args.seed ^ 0x5eed_ca11,
            )?
        }
    };

    // Trials are produced lazily so only one volume is resident at a time.
    let result: BatchResult = match &args.scanpaths {
        None => {
            // synthetic grid scanpaths: one absent and one center-present
            // trial per background volume
            let make = |i: usize, path: &PathBuf| -> Result<Vec<BatchTrial>> {
                let vol = io::read_volume(path)?;
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("vol{i}"));
                let (w, h, d) = vol.dims();
                let center = VoxelPos { x: w / 2, y: h / 2, z: d / 2 };
                let present3 = insert_signal(&vol, &signal, center)?;
                let absent3 = absent_trial(&vol);
                let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
                rng.set_stream(0x517ce + i as u64);
                let mut pair = Vec::with_capacity(2);
                for (suffix, t3) in [("present", present3), ("absent", absent3)] {
                    let stim = match set.modality {
                        Modality::ThreeD => t3,
                        Modality::TwoD => extract_2d(&t3, &mut rng)?,
                    };
                    let (sd_, sh, sw) = stim.data.dim();
                    let params = SearchTimingParams {
                        median_fixation_time_ms: args.fix_time_ms.unwrap_or(match set.modality {
                            Modality::TwoD => 250.0,
                            Modality::ThreeD => 500.0,
                        }),
                        median_response_time_s: args.resp_time_s.unwrap_or(match set.modality {
                            Modality::TwoD => 3.16,
                            Modality::ThreeD => 22.62,
                        }),
                        display: (sw, sh),
                        n_slices: sd_,
                        px_per_deg: set.px_per_deg,
                    };
                    let scanpath = synthesize_scanpath(&params, set.modality, args.seed)?;
                    pair.push(BatchTrial {
                        id: format!("{stem}:{suffix}"),
                        stimulus: stim,
                        scanpath,
                    });
                }
                Ok(pair)
            };
            let trials = vol_paths.iter().enumerate().flat_map(|(i, p)| match make(i, p) {
                Ok(pair) => pair.into_iter().map(Ok).collect::<Vec<_>>(),
                Err(e) => vec![Err(e)],
            });
            run_batch(trials, &set, &calib, args.threshold, args.stride, args.seed)?
        }
        Some(log_path) => {
            let log = io::read_fixation_log(log_path)?;
            let make = |trial: &foviq_core::weighting::FixationTrial| -> Result<Option<BatchTrial>> {
                let vol_path = vol_paths.iter().find(|p| {
                    p.file_stem().is_some_and(|s| s.to_string_lossy() == trial.trial_id)
                });
                let Some(vol_path) = vol_path else {
                    eprintln!(
                        "note: no volume for logged trial '{}'; skipped",
                        trial.trial_id
                    );
                    return Ok(None);
                };
                let vol = io::read_volume(vol_path)?;
                let stim = if trial.signal_present {
                    let (x, y, z) = trial.signal_xyz.ok_or_else(|| {
                        Error::Data(format!(
                            "trial '{}' is signal-present but has no location",
                            trial.trial_id
                        ))
                    })?;
                    insert_signal(
                        &vol,
                        &signal,
                        VoxelPos { x: x as usize, y: y as usize, z: z as usize },
                    )?
                } else {
                    absent_trial(&vol)
                };
                let scanpath = Scanpath {
                    fixations: trial
                        .fixations
                        .iter()
                        .map(|&(x, y, z, _dur)| (x, y, z as usize))
                        .collect(),
                    source: ScanpathSource::Recorded,
                };
                Ok(Some(BatchTrial {
                    id: trial.trial_id.clone(),
                    stimulus: stim,
                    scanpath,
                }))
            };
            let trials = log.trials.iter().flat_map(|t| match make(t) {
                Ok(Some(trial)) => vec![Ok(trial)],
                Ok(None) => vec![],
                Err(e) => vec![Err(e)],
            });
            let result =
                run_batch(trials, &set, &calib, args.threshold, args.stride, args.seed)?;
            if result.verdicts.is_empty() {
                return Err(Error::Data("no logged trials matched any volume".into()));
            }
            result
        }
    };

    let n_trials = result.verdicts.len();
    io::write_verdicts(&args.out, &result.verdicts)?;
    let summary = FsmSummary {
        n_trials,
        dprime: result.dprime,
        pc: result.pc,
        threshold: args.threshold,
        stride: args.stride,
        seed: args.seed,
    };
    let mut summary_path = args.out.as_os_str().to_owned();
    summary_path.push(".summary.json");
    atomic_write_json(Path::new(&summary_path), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    Raw,
    Ratio,
}

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub mode: String,
    pub total_nll: f64,
    pub per_point: Vec<(String, f64)>,
}

/// Compare reference d' values (with standard errors) against model
/// predictions.
///
/// Raw mode pairs reference and prediction entries by label. Ratio mode
/// divides each prediction pair labeled `<group>:mcalc` / `<group>:mass`
/// and pairs the quotient with the reference entry labeled `<group>`.
pub fn fit_cmd(reference: &Path, predictions: &Path, mode: FitMode, out: &Path) -> Result<()> {
    let refs: Vec<fit::ReferencePoint> =
        serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(reference)?))?;
    let preds: std::collections::BTreeMap<String, f64> =
        serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(predictions)?))?;
    let mut per_point = Vec::new();
    let mut total = 0.0;
    for r in &refs {
        let model = match mode {
            FitMode::Raw => *preds.get(&r.label).ok_or_else(|| {
                Error::Data(format!("no prediction for label '{}'", r.label))
            })?,
            FitMode::Ratio => {
                let num = preds.get(&format!("{}:mcalc", r.label)).ok_or_else(|| {
                    Error::Data(format!("no prediction '{}:mcalc'", r.label))
                })?;
                let den = preds.get(&format!("{}:mass", r.label)).ok_or_else(|| {
                    Error::Data(format!("no prediction '{}:mass'", r.label))
                })?;
                if den.abs() < 1e-12 {
                    return Err(Error::Numerical(format!(
                        "zero mass d' in ratio for '{}'",
                        r.label
                    )));
                }
                num / den
            }
        };
        let nll = fit::neg_log_likelihood(r, model)?;
        total += nll;
        per_point.push((r.label.clone(), nll));
    }
    let report = FitReport {
        mode: match mode {
            FitMode::Raw => "raw".into(),
            FitMode::Ratio => "ratio".into(),
        },
        total_nll: total,
        per_point,
    };
    atomic_write_json(out, &report)?;
    Ok(())
}

//! End-to-end orchestration: stimuli, templates, d' curves, weights,
//! figures of merit, optional search-model runs, optional goodness-of-fit.

use std::collections::BTreeMap;
use std::path::Path;

use foviq_core::detectability::{dprime_curve, DPrimeMethod};
use foviq_core::io::{self, FigureOfMeritRecord, TableFormat};
use foviq_core::stimulus::{make_signal, Modality, SignalKind};
use foviq_core::templates::{build_template_set, BackgroundStats, ObserverModel};
use foviq_core::weighting::{aggregate_dprime, WeightScheme};
use foviq_core::{Error, Result};

use crate::commands::{
    self, atomic_write_json, gen_stimuli, template_noise, timestamp, FitMode, FsmRunArgs,
    TimeSchemeArgs,
};
use crate::config::{config_hash, parse_bins, parse_dims, parse_list, Settings};
use crate::lock::DirLock;

pub fn parse_model(s: &str) -> Result<ObserverModel> {
    match s.to_ascii_lowercase().as_str() {
        "fcho" => Ok(ObserverModel::Fcho),
        "fnpwe" => Ok(ObserverModel::Fnpwe),
        other => Err(Error::invalid(format!("unknown model '{other}'"))),
    }
}

pub fn parse_signal(s: &str) -> Result<SignalKind> {
    match s.to_ascii_lowercase().as_str() {
        "mcalc" => Ok(SignalKind::Mcalc),
        "mass" => Ok(SignalKind::Mass),
        other => Err(Error::invalid(format!("unknown signal '{other}'"))),
    }
}

pub fn parse_modality(s: &str) -> Result<Modality> {
    match s.to_ascii_lowercase().as_str() {
        "2d" => Ok(Modality::TwoD),
        "3d" => Ok(Modality::ThreeD),
        other => Err(Error::invalid(format!("unknown modality '{other}'"))),
    }
}

pub fn parse_scheme(s: &str) -> Result<WeightScheme> {
    match s.to_ascii_lowercase().as_str() {
        "avg" | "average" => Ok(WeightScheme::Average),
        "dprime" | "dprime-weighted" => Ok(WeightScheme::DprimeWeighted),
        "et" | "et-closest" => Ok(WeightScheme::EtClosest),
        "time" | "time-closest" => Ok(WeightScheme::TimeClosest),
        other => Err(Error::invalid(format!("unknown scheme '{other}'"))),
    }
}

pub fn parse_method(s: &str) -> Result<DPrimeMethod> {
    match s.to_ascii_lowercase().as_str() {
        "empirical" => Ok(DPrimeMethod::Empirical),
        "analytic" => Ok(DPrimeMethod::Analytic),
        "fourier" => Ok(DPrimeMethod::Fourier),
        other => Err(Error::invalid(format!("unknown d' method '{other}'"))),
    }
}

fn tag(model: ObserverModel, signal: SignalKind, modality: Modality) -> String {
    format!(
        "{}_{}_{}",
        match model {
            ObserverModel::Fcho => "fcho",
            ObserverModel::Fnpwe => "fnpwe",
        },
        match signal {
            SignalKind::Mcalc => "mcalc",
            SignalKind::Mass => "mass",
        },
        match modality {
            Modality::TwoD => "2d",
            Modality::ThreeD => "3d",
        }
    )
}

fn scheme_tag(s: WeightScheme) -> &'static str {
    match s {
        WeightScheme::Average => "avg",
        WeightScheme::DprimeWeighted => "dprime",
        WeightScheme::EtClosest => "et",
        WeightScheme::TimeClosest => "time",
    }
}

pub fn run_pipeline(settings: &Settings) -> Result<Vec<FigureOfMeritRecord>> {
    let out_dir = Path::new(
        settings
            .get("out_dir")
            .ok_or_else(|| Error::invalid("pipeline needs out_dir"))?,
    )
    .to_path_buf();
    let _lock = DirLock::acquire(&out_dir)?;

    let seed = settings.get_u64("seed", 1)?;
    let px_per_deg = settings.get_f64("px_per_deg", 36.0)?;
    let bins = parse_bins(settings.get_or("bins", "0:1:9"))?;
    let dims = parse_dims(settings.get_or("dims", "256x256x20"))?;
    let mean = settings.get_f64("mean", 128.0)?;
    let sd = settings.get_f64("sd", 25.0)?;
    let exponent = settings.get_f64("exponent", -2.8)?;
    let window = settings.get_usize("window", 64)?;
    let method = parse_method(settings.get_or("method", "fourier"))?;
    let trials = settings.get_usize("trials", 2000)?;
    let models = parse_list(settings.get_or("models", "fcho,fnpwe"), parse_model)?;
    let signals = parse_list(settings.get_or("signals", "mcalc,mass"), parse_signal)?;
    let modalities = parse_list(settings.get_or("modalities", "2d,3d"), parse_modality)?;
    let schemes = parse_list(settings.get_or("schemes", "avg,dprime,time"), parse_scheme)?;
    let log_path = settings.get("log").map(|s| s.to_string());
    let n_slices = settings.get_usize("n_slices", dims.2)?;
    let run_fsm = settings.get_bool("run_fsm", false)?;
    let hash = config_hash(settings);

    for sub in ["curves", "weights", "records"] {
        std::fs::create_dir_all(out_dir.join(sub))?;
    }

    #[derive(serde::Serialize)]
    struct RunManifest<'a> {
        seed: u64,
        config_hash: &'a str,
        timestamp: String,
        settings: String,
    }
    atomic_write_json(
        &out_dir.join("run_config.json"),
        &RunManifest {
            seed,
            config_hash: &hash,
            timestamp: timestamp(),
            settings: settings.canonical(),
        },
    )?;

    if run_fsm {
        let stimuli_dir = out_dir.join("stimuli");
        if !stimuli_dir.exists() {
            let n = settings.get_usize("fsm_backgrounds", 25)?;
            gen_stimuli(dims, mean, sd, exponent, seed.wrapping_add(0x0b57), n, &stimuli_dir)?;
        }
        std::fs::create_dir_all(out_dir.join("fsm"))?;
        std::fs::create_dir_all(out_dir.join("templates"))?;
    }

    let mut records = Vec::new();
    for &model in &models {
        for &signal in &signals {
            for &modality in &modalities {
                let combo = tag(model, signal, modality);
                let profile = make_signal(signal, px_per_deg)?;
                let nps2d = foviq_core::stimulus::power_law_nps(&[window, window], sd, exponent)?
                    .into_dimensionality::<ndarray::Ix2>()
                    .expect("2D shape");
                let set = build_template_set(
                    model,
                    &profile,
                    &BackgroundStats::Nps2d(nps2d),
                    &bins,
                    px_per_deg,
                    window,
                    modality,
                )?;
                let noise = match method {
                    DPrimeMethod::Analytic => template_noise(set.templates[0].dim(), sd, None)?,
                    _ => template_noise(set.templates[0].dim(), sd, Some(exponent))?,
                };
                let trials_opt = matches!(method, DPrimeMethod::Empirical).then_some(trials);
                let curve = dprime_curve(&set, &profile, &noise, method, trials_opt, seed)?;
                let curve_ref = format!("curves/{combo}.json");
                io::write_curve(&out_dir.join(&curve_ref), &curve)?;

                for &scheme in &schemes {
                    if scheme == WeightScheme::EtClosest && log_path.is_none() {
                        eprintln!(
                            "note: ET-closest scheme skipped for {combo}: no fixation log configured"
                        );
                        continue;
                    }
                    let time_args = TimeSchemeArgs {
                        fix_time_ms: match modality {
                            Modality::TwoD => settings.get_f64("fix_time_ms_2d", 250.0)?,
                            Modality::ThreeD => settings.get_f64("fix_time_ms_3d", 500.0)?,
                        },
                        resp_time_s: match modality {
                            Modality::TwoD => settings.get_f64("resp_time_s_2d", 3.16)?,
                            Modality::ThreeD => settings.get_f64("resp_time_s_3d", 22.62)?,
                        },
                        display: (dims.0, dims.1),
                        n_slices: match modality {
                            Modality::TwoD => 1,
                            Modality::ThreeD => n_slices,
                        },
                        px_per_deg,
                        modality,
                    };
                    let weights = commands::compute_weights(
                        scheme,
                        &bins,
                        Some(&out_dir.join(&curve_ref)),
                        log_path.as_deref().map(Path::new),
                        px_per_deg,
                        Some(time_args),
                    )?;
                    let weights_ref = format!("weights/{}_{combo}.json", scheme_tag(scheme));
                    io::write_weights(&out_dir.join(&weights_ref), &weights)?;

                    let record = FigureOfMeritRecord {
                        model,
                        signal,
                        modality,
                        scheme,
                        aggregate_dprime: aggregate_dprime(&curve, &weights)?,
                        curve_ref: curve_ref.clone(),
                        weights_ref,
                        timestamp: timestamp(),
                        config_hash: hash.clone(),
                    };
                    atomic_write_json(
                        &out_dir.join(format!(
                            "records/{combo}_{}.json",
                            scheme_tag(scheme)
                        )),
                        &record,
                    )?;
                    records.push(record);
                }

                if run_fsm {
                    let tset_ref = format!("templates/{combo}.tset");
                    io::write_template_set(&out_dir.join(&tset_ref), &set, None)?;
                    let fsm_args = FsmRunArgs {
                        stimuli_dir: out_dir.join("stimuli"),
                        templates: out_dir.join(&tset_ref),
                        scanpaths: log_path.as_ref().map(|p| p.into()),
                        threshold: settings.get_f64("threshold", 1.0)?,
                        stride: settings.get_usize("stride", 4)?,
                        seed,
                        calib_patches: settings.get_usize("calib_patches", 2000)?,
                        fix_time_ms: None,
                        resp_time_s: None,
                        out: out_dir.join(format!("fsm/{combo}.verdicts.jsonl")),
                    };
                    commands::fsm_run(&fsm_args)
                        .map_err(|e| Error::Data(format!("fsm stage for {combo}: {e}")))?;
                }
            }
        }
    }

    if records.is_empty() {
        return Err(Error::Data(
            "pipeline produced no records (all schemes skipped?)".into(),
        ));
    }
    io::export_table(&out_dir.join("fom.csv"), &records, TableFormat::Csv)?;
    io::export_table(&out_dir.join("fom.json"), &records, TableFormat::Json)?;

    if let Some(reference) = settings.get("fit_reference") {
        let preds: BTreeMap<String, f64> = records
            .iter()
            .map(|r| {
                (
                    format!(
                        "{}:{}",
                        tag(r.model, r.signal, r.modality),
                        scheme_tag(r.scheme)
                    ),
                    r.aggregate_dprime,
                )
            })
            .collect();
        let pred_path = out_dir.join("predictions.json");
        atomic_write_json(&pred_path, &preds)?;
        let mode = match settings.get_or("fit_on", "raw") {
            "raw" => FitMode::Raw,
            "ratio" => FitMode::Ratio,
            other => return Err(Error::invalid(format!("fit_on must be raw|ratio, got '{other}'"))),
        };
        commands::fit_cmd(
            Path::new(reference),
            &pred_path,
            mode,
            &out_dir.join("nll.json"),
        )
        .map_err(|e| Error::Data(format!("fit stage: {e}")))?;
    }

    Ok(records)
}

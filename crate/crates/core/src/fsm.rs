//! Foveated search model: per-fixation eccentricity-dependent template
//! responses over the image, likelihood-ratio integration across fixations
//! and scrolls, and a max-rule decision.

use ndarray::{s, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detectability::{
    decision_variable, empirical_dprime, internal_noise_attenuation, sample_background,
    signal_on_template_grid, template_response_sd, DecisionSample, NoiseStats, SampleClass,
};
use crate::error::{Error, Result};
use crate::stimulus::{Modality, SignalProfile, TrialStimulus};
use crate::templates::EccentricityTemplateSet;
use crate::weighting::{estimate_fixation_count, grid_fixations, SearchTimingParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanpathSource {
    Recorded,
    GridSynthetic,
}

/// Ordered fixation list for one trial; `(x px, y px, slice)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scanpath {
    pub fixations: Vec<(f64, f64, usize)>,
    pub source: ScanpathSource,
}

/// Per-bin decision-variable statistics used for the LR transform,
/// calibrated against background-only responses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinCalibration {
    /// Background response mean per bin.
    pub mu_n: Vec<f64>,
    /// Raw (pre-internal-noise) response sd per bin.
    pub sigma_raw: Vec<f64>,
    /// Total response sd per bin, internal noise included.
    pub sigma_lambda: Vec<f64>,
    /// Effective per-bin d', internal noise included.
    pub dprime: Vec<f64>,
}

/// Template responses on a stride grid for one fixation.
#[derive(Debug, Clone)]
pub struct ResponseMap {
    pub lambda: Array2<f64>,
    pub covered: Array2<bool>,
    pub ecc_bin: Array2<usize>,
    pub fixation: (f64, f64, usize),
    pub stride: usize,
}

/// Integrated log-likelihood-ratio map across fixations.
#[derive(Debug, Clone)]
pub struct IntegratedMap {
    pub log_lr: Array2<f64>,
    /// Slice of the fixation contributing the largest single log-LR
    /// at each location.
    pub best_slice: Array2<usize>,
    pub stride: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialVerdict {
    pub max_lr: f64,
    pub max_log_lr: f64,
    pub decision: bool,
    /// (x px, y px, slice); first location in row-major order on ties.
    pub argmax_location: (usize, usize, usize),
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_fixation_trace: Option<Vec<f64>>,
}

/// Calibrate per-bin background statistics by Monte Carlo: `n_patches`
/// background draws per bin under the noise model, plus the analytic
/// numerator for d'.
pub fn calibrate_bins(
    set: &EccentricityTemplateSet,
    signal: &SignalProfile,
    noise: &NoiseStats,
    background_mean: f64,
    n_patches: usize,
    seed: u64,
) -> Result<BinCalibration> {
    if n_patches < 2 {
        return Err(Error::invalid("need at least 2 calibration patches"));
    }
    let sig = signal_on_template_grid(signal, set);
    let atten = internal_noise_attenuation(set.internal_noise_k);
    let k = set.internal_noise_k;
    let mut mu_n = Vec::new();
    let mut sigma_raw = Vec::new();
    let mut sigma_lambda = Vec::new();
    let mut dprime = Vec::new();
    for (b, template) in set.templates.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64 + 1);
        let dc: f64 = template.sum() * background_mean;
        let mut lams = Vec::with_capacity(n_patches);
        for _ in 0..n_patches {
            let patch = sample_background(template.dim(), noise, &mut rng)?;
            lams.push(decision_variable(template.view(), patch.view())?);
        }
        let m = lams.iter().sum::<f64>() / n_patches as f64;
        let var = lams.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n_patches - 1) as f64;
        let sr = var.sqrt();
        if sr == 0.0 {
            return Err(Error::Degenerate(format!("zero response sd in bin {b}")));
        }
        let num = decision_variable(template.view(), sig.view())?;
        mu_n.push(dc + m);
        sigma_raw.push(sr);
        sigma_lambda.push(sr * (1.0 + k * k).sqrt());
        dprime.push((num / sr * atten).max(0.0));
    }
    Ok(BinCalibration {
        mu_n,
        sigma_raw,
        sigma_lambda,
        dprime,
    })
}

/// Calibrate per-bin background statistics from patches of real background
/// volumes (the stimulus ensemble itself), rather than a parametric noise
/// model. Patch positions are drawn uniformly from random volumes.
pub fn calibrate_bins_from_volumes(
    set: &EccentricityTemplateSet,
    signal: &SignalProfile,
    volumes: &[&crate::stimulus::NoiseVolume],
    n_patches: usize,
    seed: u64,
) -> Result<BinCalibration> {
    if n_patches < 2 {
        return Err(Error::invalid("need at least 2 calibration patches"));
    }
    if volumes.is_empty() {
        return Err(Error::invalid("need at least one background volume"));
    }
    let sig = signal_on_template_grid(signal, set);
    let atten = internal_noise_attenuation(set.internal_noise_k);
    let k = set.internal_noise_k;
    let mut mu_n = Vec::new();
    let mut sigma_raw = Vec::new();
    let mut sigma_lambda = Vec::new();
    let mut dprime = Vec::new();
    for (b, template) in set.templates.iter().enumerate() {
        let (td, th, tw) = template.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64 + 1);
        let mut lams = Vec::with_capacity(n_patches);
        for _ in 0..n_patches {
            let v = &volumes[rng.gen_range(0..volumes.len())].voxels;
            let (vd, vh, vw) = v.dim();
            if td > vd || th > vh || tw > vw {
                return Err(Error::invalid(format!(
                    "template {tw}x{th}x{td} exceeds background volume {vw}x{vh}x{vd}"
                )));
            }
            let z0 = rng.gen_range(0..=vd - td);
            let y0 = rng.gen_range(0..=vh - th);
            let x0 = rng.gen_range(0..=vw - tw);
            let patch = v.slice(s![z0..z0 + td, y0..y0 + th, x0..x0 + tw]);
            let mut acc = 0.0;
            for (w, g) in template.iter().zip(patch.iter()) {
                acc += w * g;
            }
            lams.push(acc);
        }
        let m = lams.iter().sum::<f64>() / n_patches as f64;
        let var = lams.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n_patches - 1) as f64;
        let sr = var.sqrt();
        if sr == 0.0 {
            return Err(Error::Degenerate(format!("zero response sd in bin {b}")));
        }
        let num = decision_variable(template.view(), sig.view())?;
        mu_n.push(m);
        sigma_raw.push(sr);
        sigma_lambda.push(sr * (1.0 + k * k).sqrt());
        dprime.push((num / sr * atten).max(0.0));
    }
    Ok(BinCalibration {
        mu_n,
        sigma_raw,
        sigma_lambda,
        dprime,
    })
}

/// Exact calibration from the noise model's second-order statistics
/// (zero sampling noise; useful for tests and white/stationary noise).
pub fn calibrate_bins_analytic(
    set: &EccentricityTemplateSet,
    signal: &SignalProfile,
    noise: &NoiseStats,
    background_mean: f64,
) -> Result<BinCalibration> {
    let sig = signal_on_template_grid(signal, set);
    let atten = internal_noise_attenuation(set.internal_noise_k);
    let k = set.internal_noise_k;
    let mut mu_n = Vec::new();
    let mut sigma_raw = Vec::new();
    let mut sigma_lambda = Vec::new();
    let mut dprime = Vec::new();
    for template in &set.templates {
        let sr = template_response_sd(template, noise)?;
        if sr == 0.0 {
            return Err(Error::Degenerate("zero response sd".into()));
        }
        let num = decision_variable(template.view(), sig.view())?;
        mu_n.push(template.sum() * background_mean);
        sigma_raw.push(sr);
        sigma_lambda.push(sr * (1.0 + k * k).sqrt());
        dprime.push((num / sr * atten).max(0.0));
    }
    Ok(BinCalibration {
        mu_n,
        sigma_raw,
        sigma_lambda,
        dprime,
    })
}

fn template_patch_dot(
    data: &Array3<f64>,
    template: &Array3<f64>,
    x: usize,
    y: usize,
    z_fix: usize,
) -> Option<f64> {
    let (vd, vh, vw) = data.dim();
    let (td, th, tw) = template.dim();
    let x0 = x as i64 - (tw / 2) as i64;
    let y0 = y as i64 - (th / 2) as i64;
    let z0 = z_fix as i64 - (td / 2) as i64;
    if x0 < 0
        || y0 < 0
        || z0 < 0
        || x0 + tw as i64 > vw as i64
        || y0 + th as i64 > vh as i64
        || z0 + td as i64 > vd as i64
    {
        return None;
    }
    let (x0, y0, z0) = (x0 as usize, y0 as usize, z0 as usize);
    let patch = data.slice(s![z0..z0 + td, y0..y0 + th, x0..x0 + tw]);
    let mut acc = 0.0;
    for (w, g) in template.iter().zip(patch.iter()) {
        acc += w * g;
    }
    Some(acc)
}

/// Template responses over a stride grid of candidate locations for one
/// fixation; each location uses the template of its eccentricity bin and
/// receives additive internal noise.
pub fn response_map(
    stimulus: &TrialStimulus,
    fixation: (f64, f64, usize),
    set: &EccentricityTemplateSet,
    calib: &BinCalibration,
    stride: usize,
    rng: &mut impl Rng,
) -> Result<ResponseMap> {
    if stride == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    let (_, vh, vw) = stimulus.data.dim();
    if vw % stride != 0 || vh % stride != 0 {
        log::warn!("stride {stride} does not divide display {vw}x{vh}; trailing locations dropped");
    }
    let (gx_n, gy_n) = (vw / stride, vh / stride);
    let (fx, fy, fz) = fixation;
    let k = set.internal_noise_k;
    let mut lambda = Array2::zeros((gy_n, gx_n));
    let mut covered = Array2::from_elem((gy_n, gx_n), false);
    let mut ecc_bin = Array2::zeros((gy_n, gx_n));
    for gy in 0..gy_n {
        for gx in 0..gx_n {
            let x = gx * stride;
            let y = gy * stride;
            let ecc =
                ((x as f64 - fx).powi(2) + (y as f64 - fy).powi(2)).sqrt() / set.px_per_deg;
            let b = set.bin_of(ecc);
            ecc_bin[[gy, gx]] = b;
            if let Some(raw) = template_patch_dot(&stimulus.data, &set.templates[b], x, y, fz) {
                let lam =
                    crate::detectability::add_internal_noise(raw, calib.sigma_raw[b], k, rng);
                lambda[[gy, gx]] = lam;
                covered[[gy, gx]] = true;
            }
        }
    }
    Ok(ResponseMap {
        lambda,
        covered,
        ecc_bin,
        fixation,
        stride,
    })
}

/// Equal-variance Gaussian log likelihood ratio:
/// `z = (lambda - mu_n) / sigma_lambda`, `log LR = d' z - d'^2 / 2`.
pub fn to_log_likelihood_ratio(lambda: f64, bin: usize, calib: &BinCalibration) -> Result<f64> {
    let sigma = calib.sigma_lambda[bin];
    if sigma <= 0.0 {
        return Err(Error::Degenerate(format!("zero sigma_lambda in bin {bin}")));
    }
    let d = calib.dprime[bin];
    let z = (lambda - calib.mu_n[bin]) / sigma;
    Ok(d * z - d * d / 2.0)
}

/// Multiply per-fixation likelihood ratios (sum in log space). Uncovered
/// locations contribute factor 1.
pub fn integrate_fixations(maps: &[ResponseMap], calib: &BinCalibration) -> Result<IntegratedMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::invalid("no response maps to integrate"))?;
    let shape = first.lambda.dim();
    let stride = first.stride;
    let mut log_lr = Array2::zeros(shape);
    let mut best_single = Array2::from_elem(shape, f64::NEG_INFINITY);
    let mut best_slice = Array2::zeros(shape);
    for map in maps {
        if map.lambda.dim() != shape || map.stride != stride {
            return Err(Error::invalid("response maps do not share geometry"));
        }
        for ((idx, lam), (&cov, &bin)) in map
            .lambda
            .indexed_iter()
            .zip(map.covered.iter().zip(map.ecc_bin.iter()))
        {
            if !cov {
                continue;
            }
            let llr = to_log_likelihood_ratio(*lam, bin, calib)?;
            log_lr[idx] += llr;
            if llr > best_single[idx] {
                best_single[idx] = llr;
                best_slice[idx] = map.fixation.2;
            }
        }
    }
    Ok(IntegratedMap {
        log_lr,
        best_slice,
        stride,
    })
}

/// Max-rule decision over the integrated map.
pub fn decide(map: &IntegratedMap, threshold_lr: f64) -> Result<TrialVerdict> {
    if map.log_lr.is_empty() {
        return Err(Error::invalid("empty likelihood-ratio map"));
    }
    let mut max = f64::NEG_INFINITY;
    let mut arg = (0usize, 0usize);
    for ((gy, gx), &v) in map.log_lr.indexed_iter() {
        if v > max {
            max = v;
            arg = (gy, gx);
        }
    }
    let (gy, gx) = arg;
    Ok(TrialVerdict {
        max_lr: max.exp(),
        max_log_lr: max,
        decision: max >= threshold_lr.ln(),
        argmax_location: (gx * map.stride, gy * map.stride, map.best_slice[[gy, gx]]),
        per_fixation_trace: None,
    })
}

/// Grid scanpath from timing parameters: one grid per slice in slice order
/// for 3D, a single grid for 2D. The seed is reserved for optional jitter
/// (off by default), so synthesis is deterministic.
pub fn synthesize_scanpath(
    params: &SearchTimingParams,
    modality: Modality,
    _seed: u64,
) -> Result<Scanpath> {
    let count = estimate_fixation_count(params, modality)?;
    let mut fixations = Vec::new();
    match modality {
        Modality::TwoD => {
            for (x, y) in grid_fixations(count.total, params.display)? {
                fixations.push((x, y, 0));
            }
        }
        Modality::ThreeD => {
            let per = count.per_slice.unwrap();
            let grid = grid_fixations(per, params.display)?;
            for z in 0..params.n_slices {
                for &(x, y) in &grid {
                    fixations.push((x, y, z));
                }
            }
        }
    }
    Ok(Scanpath {
        fixations,
        source: ScanpathSource::GridSynthetic,
    })
}

/// One trial of a batch run.
pub struct BatchTrial {
    pub id: String,
    pub stimulus: TrialStimulus,
    pub scanpath: Scanpath,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchVerdict {
    pub trial_id: String,
    pub decision: bool,
    pub max_lr: f64,
    pub max_log_lr: f64,
    pub argmax: (usize, usize, usize),
    pub truth: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchResult {
    pub verdicts: Vec<BatchVerdict>,
    /// d' of the max-log-LR distributions, present vs absent.
    pub dprime: f64,
    /// Proportion correct at the decision threshold.
    pub pc: f64,
}

/// Run the search model over a stream of trials. Per-trial RNGs are split
/// from the root seed by trial index, so results do not depend on upstream
/// RNG state.
pub fn run_batch(
    trials: impl IntoIterator<Item = Result<BatchTrial>>,
    set: &EccentricityTemplateSet,
    calib: &BinCalibration,
    threshold_lr: f64,
    stride: usize,
    seed: u64,
) -> Result<BatchResult> {
    let mut verdicts = Vec::new();
    let mut samples = Vec::new();
    for (i, trial) in trials.into_iter().enumerate() {
        let trial = trial?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let maps: Vec<ResponseMap> = trial
            .scanpath
            .fixations
            .iter()
            .map(|&f| response_map(&trial.stimulus, f, set, calib, stride, &mut rng))
            .collect::<Result<_>>()?;
        let integrated = integrate_fixations(&maps, calib)?;
        let verdict = decide(&integrated, threshold_lr)?;
        samples.push(DecisionSample {
            lambda: verdict.max_log_lr,
            class: if trial.stimulus.signal_present {
                SampleClass::Signal
            } else {
                SampleClass::Noise
            },
            eccentricity_bin: 0.0,
        });
        verdicts.push(BatchVerdict {
            trial_id: trial.id,
            decision: verdict.decision,
            max_lr: verdict.max_lr,
            max_log_lr: verdict.max_log_lr,
            argmax: verdict.argmax_location,
            truth: trial.stimulus.signal_present,
        });
    }
    let dprime = empirical_dprime(&samples).unwrap_or(0.0);
    let correct = verdicts
        .iter()
        .filter(|v| v.decision == v.truth)
        .count();
    let pc = correct as f64 / verdicts.len().max(1) as f64;
    Ok(BatchResult {
        verdicts,
        dprime,
        pc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stimulus::{make_signal, SignalKind};
    use crate::templates::{build_template_set, BackgroundStats, ObserverModel};
    use ndarray::Array2;

    fn small_set() -> (EccentricityTemplateSet, SignalProfile) {
        let signal = make_signal(SignalKind::Mass, 10.0).unwrap();
        let nps = Array2::from_elem((16, 16), 625.0);
        let set = build_template_set(
            ObserverModel::Fnpwe,
            &signal,
            &BackgroundStats::Nps2d(nps),
            &[0.0, 1.0, 2.0, 3.0],
            10.0,
            16,
            Modality::TwoD,
        )
        .unwrap();
        (set, signal)
    }

    fn flat_stimulus(w: usize, h: usize, value: f64) -> TrialStimulus {
        TrialStimulus {
            data: ndarray::Array3::from_elem((1, h, w), value),
            signal_present: false,
            signal_location: None,
            modality: Modality::TwoD,
        }
    }

    #[test]
    fn lr_identities() {
        let calib = BinCalibration {
            mu_n: vec![0.0],
            sigma_raw: vec![1.0],
            sigma_lambda: vec![1.0],
            dprime: vec![2.0],
        };
        // lambda = mu_n -> log LR = -d'^2/2 < 0
        let at_mu = to_log_likelihood_ratio(0.0, 0, &calib).unwrap();
        assert!((at_mu - (-2.0)).abs() < 1e-12);
        // z = d'/2 -> LR = 1
        let mid = to_log_likelihood_ratio(1.0, 0, &calib).unwrap();
        assert!(mid.abs() < 1e-12);
        // blind bin: d' = 0 -> LR = 1 regardless
        let blind = BinCalibration {
            mu_n: vec![0.0],
            sigma_raw: vec![1.0],
            sigma_lambda: vec![1.0],
            dprime: vec![0.0],
        };
        assert_eq!(to_log_likelihood_ratio(17.0, 0, &blind).unwrap(), 0.0);
    }

    #[test]
    fn lr_rejects_zero_sigma() {
        let calib = BinCalibration {
            mu_n: vec![0.0],
            sigma_raw: vec![0.0],
            sigma_lambda: vec![0.0],
            dprime: vec![1.0],
        };
        assert!(to_log_likelihood_ratio(1.0, 0, &calib).is_err());
    }

    #[test]
    fn response_map_uses_bin_zero_at_fixated_signal() {
        let (set, signal) = small_set();
        let noise = NoiseStats::White { sd: 25.0 };
        let calib = calibrate_bins_analytic(&set, &signal, &noise, 0.0).unwrap();
        let stim = flat_stimulus(64, 64, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let map = response_map(&stim, (32.0, 32.0, 0), &set, &calib, 4, &mut rng).unwrap();
        assert_eq!(map.ecc_bin[[8, 8]], 0); // location (32, 32) is the fixation
        assert!(map.ecc_bin[[0, 0]] > 0);
    }

    #[test]
    fn response_map_matches_naive_loop_at_stride_one() {
        let (set, signal) = small_set();
        let noise = NoiseStats::White { sd: 25.0 };
        let calib = calibrate_bins_analytic(&set, &signal, &noise, 0.0).unwrap();
        let mut data = ndarray::Array3::zeros((1, 32, 32));
        for ((_, y, x), v) in data.indexed_iter_mut() {
            *v = ((x * 7 + y * 3) % 13) as f64;
        }
        let stim = TrialStimulus {
            data,
            signal_present: false,
            signal_location: None,
            modality: Modality::TwoD,
        };
        // internal noise off for exact comparison
        let mut set0 = set.clone();
        set0.internal_noise_k = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let map = response_map(&stim, (16.0, 16.0, 0), &set0, &calib, 1, &mut rng).unwrap();
        for gy in 0..32 {
            for gx in 0..32 {
                let ecc = ((gx as f64 - 16.0).powi(2) + (gy as f64 - 16.0).powi(2)).sqrt() / 10.0;
                let b = set0.bin_of(ecc);
                match template_patch_dot(&stim.data, &set0.templates[b], gx, gy, 0) {
                    Some(want) => {
                        assert!(map.covered[[gy, gx]]);
                        assert!((map.lambda[[gy, gx]] - want).abs() < 1e-12);
                    }
                    None => assert!(!map.covered[[gy, gx]]),
                }
            }
        }
    }

    #[test]
    fn flat_image_no_noise_constant_per_bin() {
        let (set, signal) = small_set();
        let mut set0 = set;
        set0.internal_noise_k = 0.0;
        let noise = NoiseStats::White { sd: 25.0 };
        let calib = calibrate_bins_analytic(&set0, &signal, &noise, 5.0).unwrap();
        let stim = flat_stimulus(64, 64, 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let map = response_map(&stim, (32.0, 32.0, 0), &set0, &calib, 4, &mut rng).unwrap();
        let mut per_bin: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
        for ((idx, &lam), (&cov, &b)) in map
            .lambda
            .indexed_iter()
            .zip(map.covered.iter().zip(map.ecc_bin.iter()))
        {
            let _ = idx;
            if cov {
                per_bin.entry(b).or_default().push(lam);
            }
        }
        for (_, v) in per_bin {
            for x in &v {
                assert!((x - v[0]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn integration_is_commutative_and_log_exact() {
        let (set, signal) = small_set();
        let noise = NoiseStats::White { sd: 25.0 };
        let calib = calibrate_bins_analytic(&set, &signal, &noise, 0.0).unwrap();
        let stim = flat_stimulus(48, 48, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let fixes = [(12.0, 12.0, 0), (36.0, 24.0, 0), (20.0, 40.0, 0)];
        let maps: Vec<ResponseMap> = fixes
            .iter()
            .map(|&f| response_map(&stim, f, &set, &calib, 4, &mut rng).unwrap())
            .collect();
        let a = integrate_fixations(&maps, &calib).unwrap();
        let permuted: Vec<ResponseMap> = vec![maps[2].clone(), maps[0].clone(), maps[1].clone()];
        let b = integrate_fixations(&permuted, &calib).unwrap();
        for (x, y) in a.log_lr.iter().zip(b.log_lr.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
        // log of the product equals the sum of per-fixation log maps
        let mut manual = Array2::<f64>::zeros(a.log_lr.dim());
        for m in &maps {
            for ((idx, lam), (&cov, &bin)) in m
                .lambda
                .indexed_iter()
                .zip(m.covered.iter().zip(m.ecc_bin.iter()))
            {
                if cov {
                    manual[idx] += to_log_likelihood_ratio(*lam, bin, &calib).unwrap();
                }
            }
        }
        for (x, y) in a.log_lr.iter().zip(manual.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn single_map_integration_is_identity() {
        let (set, signal) = small_set();
        let noise = NoiseStats::White { sd: 25.0 };
        let calib = calibrate_bins_analytic(&set, &signal, &noise, 0.0).unwrap();
        let stim = flat_stimulus(48, 48, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let map = response_map(&stim, (24.0, 24.0, 0), &set, &calib, 4, &mut rng).unwrap();
        let one = integrate_fixations(std::slice::from_ref(&map), &calib).unwrap();
        for ((idx, lam), (&cov, &bin)) in map
            .lambda
            .indexed_iter()
            .zip(map.covered.iter().zip(map.ecc_bin.iter()))
        {
            let want = if cov {
                to_log_likelihood_ratio(*lam, bin, &calib).unwrap()
            } else {
                0.0
            };
            assert!((one.log_lr[idx] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn decide_threshold_and_tiebreak() {
        let map = IntegratedMap {
            log_lr: Array2::zeros((3, 3)),
            best_slice: Array2::zeros((3, 3)),
            stride: 4,
        };
        // threshold 1 -> log 0: all-zero map decides present at first location
        let v = decide(&map, 1.0).unwrap();
        assert!(v.decision);
        assert_eq!(v.argmax_location, (0, 0, 0));
        // threshold just above 1 -> absent
        let v2 = decide(&map, 1.001).unwrap();
        assert!(!v2.decision);
        // threshold ~0 -> always present
        let v3 = decide(&map, 1e-300).unwrap();
        assert!(v3.decision);
    }

    #[test]
    fn synthetic_scanpaths() {
        let params = SearchTimingParams {
            median_fixation_time_ms: 250.0,
            median_response_time_s: 0.25,
            display: (64, 64),
            n_slices: 10,
            px_per_deg: 10.0,
        };
        let p2 = synthesize_scanpath(&params, Modality::TwoD, 0).unwrap();
        assert_eq!(p2.fixations, vec![(32.0, 32.0, 0)]);
        let params3 = SearchTimingParams {
            median_response_time_s: 5.0,
            median_fixation_time_ms: 500.0,
            ..params
        };
        let p3 = synthesize_scanpath(&params3, Modality::ThreeD, 0).unwrap();
        assert_eq!(p3.fixations.len(), 10); // 1 per slice
        let slices: Vec<usize> = p3.fixations.iter().map(|f| f.2).collect();
        assert_eq!(slices, (0..10).collect::<Vec<_>>());
        // determinism with jitter off
        let p3b = synthesize_scanpath(&params3, Modality::ThreeD, 99).unwrap();
        assert_eq!(p3.fixations, p3b.fixations);
    }

    #[test]
    fn monotone_evidence_under_lr_ge_one_map() {
        let base = IntegratedMap {
            log_lr: Array2::from_shape_fn((4, 4), |(y, x)| (x as f64 - y as f64) * 0.1),
            best_slice: Array2::zeros((4, 4)),
            stride: 1,
        };
        let v1 = decide(&base, 1.0).unwrap();
        let mut boosted = base.clone();
        boosted.log_lr.mapv_inplace(|v| v + 0.3); // add a map >= 1 everywhere
        let v2 = decide(&boosted, 1.0).unwrap();
        assert!(v2.max_log_lr >= v1.max_log_lr);
    }

    #[test]
    fn volume_calibration_matches_white_noise_moments() {
        // Oracle: on white noise with sd s, the raw template response has
        // mean m*sum(w) and sd s*||w||; d' is w's/sigma_raw attenuated.
        let (set, signal) = small_set();
        let vol = crate::stimulus::generate_noise_volume((64, 64, 4), 100.0, 10.0, 0.0, 42)
            .unwrap();
        let calib =
            calibrate_bins_from_volumes(&set, &signal, &[&vol], 4000, 7).unwrap();
        let sig = signal_on_template_grid(&signal, &set);
        let atten = internal_noise_attenuation(set.internal_noise_k);
        for (b, t) in set.templates.iter().enumerate() {
            let wsum: f64 = t.iter().sum();
            let wnorm: f64 = t.iter().map(|v| v * v).sum::<f64>().sqrt();
            let exp_mu = 100.0 * wsum;
            let exp_sr = 10.0 * wnorm;
            assert!(
                (calib.mu_n[b] - exp_mu).abs() < 0.08 * exp_sr.max(1.0) + 1e-9,
                "bin {b}: mu {} vs {exp_mu}",
                calib.mu_n[b]
            );
            assert!(
                (calib.sigma_raw[b] - exp_sr).abs() / exp_sr < 0.06,
                "bin {b}: sigma {} vs {exp_sr}",
                calib.sigma_raw[b]
            );
            let num = decision_variable(t.view(), sig.view()).unwrap();
            let exp_d = (num / exp_sr * atten).max(0.0);
            assert!((calib.dprime[b] - exp_d).abs() < 0.08 * exp_d.max(0.5));
            assert!(
                (calib.sigma_lambda[b]
                    - calib.sigma_raw[b]
                        * (1.0 + set.internal_noise_k.powi(2)).sqrt())
                .abs()
                    < 1e-12
            );
        }
        // determinism
        let again =
            calibrate_bins_from_volumes(&set, &signal, &[&vol], 4000, 7).unwrap();
        assert_eq!(calib.mu_n, again.mu_n);
        assert_eq!(calib.dprime, again.dprime);
    }
}

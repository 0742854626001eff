//! Decision variables and the three d' estimators: empirical Monte Carlo,
//! analytic template/covariance, and Fourier stationary-noise, plus internal
//! decision noise.

use ndarray::{Array2, Array3, ArrayD, ArrayView3, ArrayViewD, Axis, IxDyn};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fft2, fft3, ifft2, ifft3};
use crate::stimulus::{Modality, SignalKind, SignalProfile};
use crate::templates::{embed_centered, EccentricityTemplateSet, ObserverModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleClass {
    Signal,
    Noise,
}

/// One scalar observer response.
#[derive(Debug, Clone, Copy)]
pub struct DecisionSample {
    pub lambda: f64,
    pub class: SampleClass,
    pub eccentricity_bin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DPrimeMethod {
    Empirical,
    Analytic,
    Fourier,
}

/// d' values over eccentricity bins for one (model, signal, modality) triple.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DPrimeCurve {
    pub model: ObserverModel,
    pub signal: SignalKind,
    pub modality: Modality,
    pub ecc_bins: Vec<f64>,
    pub dprime: Vec<f64>,
    pub method: DPrimeMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Second-order statistics of the background noise over the template support.
#[derive(Debug, Clone)]
pub enum NoiseStats {
    /// White Gaussian noise of the given standard deviation.
    White { sd: f64 },
    /// Full covariance over the flattened template support.
    Covariance(Array2<f64>),
    /// Stationary noise power spectrum on the template's DFT grid
    /// (DFT of the autocovariance; a flat spectrum sigma^2 is white noise).
    Nps(ArrayD<f64>),
}

/// lambda = w . g over all voxels.
pub fn decision_variable(template: ArrayView3<'_, f64>, patch: ArrayView3<'_, f64>) -> Result<f64> {
    if template.dim() != patch.dim() {
        return Err(Error::invalid(format!(
            "shape mismatch: template {:?} vs patch {:?}",
            template.dim(),
            patch.dim()
        )));
    }
    Ok(template.iter().zip(patch.iter()).map(|(w, g)| w * g).sum())
}

/// Add internal decision noise `eps ~ N(0, (k * sigma_lambda)^2)`.
pub fn add_internal_noise(
    lambda: f64,
    sigma_lambda: f64,
    k: f64,
    rng: &mut impl Rng,
) -> f64 {
    if k == 0.0 || sigma_lambda == 0.0 {
        return lambda;
    }
    let eps: f64 = rng.sample::<f64, _>(StandardNormal) * k * sigma_lambda;
    lambda + eps
}

/// Pooled-sd empirical d': `(mean_s - mean_n) / sqrt((var_s + var_n)/2)`.
pub fn empirical_dprime(samples: &[DecisionSample]) -> Result<f64> {
    let (mut s, mut n) = (Vec::new(), Vec::new());
    for x in samples {
        match x.class {
            SampleClass::Signal => s.push(x.lambda),
            SampleClass::Noise => n.push(x.lambda),
        }
    }
    if s.len() < 2 || n.len() < 2 {
        return Err(Error::invalid(format!(
            "need >= 2 samples per class, got {} signal / {} noise",
            s.len(),
            n.len()
        )));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64], m: f64| {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let (ms, mn) = (mean(&s), mean(&n));
    let pooled = ((var(&s, ms) + var(&n, mn)) / 2.0).sqrt();
    if pooled == 0.0 {
        return Err(Error::Degenerate("zero pooled variance".into()));
    }
    Ok((ms - mn) / pooled)
}

/// Analytic linear-observer d': `w^t s / sqrt(w^t K w)` over the flattened
/// template support.
pub fn analytic_dprime(
    template: ArrayViewD<'_, f64>,
    signal: ArrayViewD<'_, f64>,
    covariance: &Array2<f64>,
) -> Result<f64> {
    let m = template.len();
    if signal.len() != m {
        return Err(Error::invalid("template/signal length mismatch"));
    }
    if covariance.dim() != (m, m) {
        return Err(Error::invalid(format!(
            "covariance is {:?}, expected ({m}, {m})",
            covariance.dim()
        )));
    }
    let w: Vec<f64> = template.iter().cloned().collect();
    let num: f64 = w.iter().zip(signal.iter()).map(|(a, b)| a * b).sum();
    let mut quad = 0.0;
    for (i, wi) in w.iter().enumerate() {
        if *wi == 0.0 {
            continue;
        }
        let row = covariance.row(i);
        quad += wi * w.iter().zip(row.iter()).map(|(a, b)| a * b).sum::<f64>();
    }
    if quad <= 0.0 {
        return Err(Error::Degenerate(format!(
            "non-positive template variance {quad}"
        )));
    }
    Ok(num / quad.sqrt())
}

/// Analytic d' for white noise: `w^t s / (sd * ||w||)`.
pub fn analytic_dprime_white(
    template: ArrayViewD<'_, f64>,
    signal: ArrayViewD<'_, f64>,
    sd: f64,
) -> Result<f64> {
    let num: f64 = template.iter().zip(signal.iter()).map(|(a, b)| a * b).sum();
    let norm = template.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || sd <= 0.0 {
        return Err(Error::Degenerate("zero template norm or sd".into()));
    }
    Ok(num / (sd * norm))
}

/// Fourier-domain d' for stationary noise:
/// numerator `(1/M) sum Re(conj(W) S)`, denominator `sqrt((1/M) sum |W|^2 N)`.
///
/// With `N` the DFT of the autocovariance this equals the spatial form for
/// circulant covariance. The numerator's imaginary residue must be below
/// 1e-8 relative.
pub fn fourier_dprime(
    template_ft: ArrayViewD<'_, Complex64>,
    signal_ft: ArrayViewD<'_, Complex64>,
    nps: ArrayViewD<'_, f64>,
) -> Result<f64> {
    let m = template_ft.len();
    if signal_ft.len() != m || nps.len() != m {
        return Err(Error::invalid("frequency grids do not match"));
    }
    if nps.iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("negative NPS value"));
    }
    let mut num = Complex64::default();
    let mut mag = 0.0;
    let mut den2 = 0.0;
    for ((w, s), n) in template_ft.iter().zip(signal_ft.iter()).zip(nps.iter()) {
        let prod = w.conj() * s;
        num += prod;
        mag += prod.norm();
        den2 += w.norm_sqr() * n;
    }
    if mag > 0.0 && num.im.abs() / mag > 1e-8 {
        return Err(Error::Numerical(format!(
            "imaginary residue {} in Fourier numerator",
            num.im / mag
        )));
    }
    let mf = m as f64;
    let den = (den2 / mf).sqrt();
    if den == 0.0 {
        return Err(Error::Degenerate("zero Fourier denominator".into()));
    }
    Ok((num.re / mf) / den)
}

/// d' reduction from additive internal noise of multiplier `k`.
pub fn internal_noise_attenuation(k: f64) -> f64 {
    1.0 / (1.0 + k * k).sqrt()
}

/// Raw (pre-internal-noise) template response sd under the noise model.
pub fn template_response_sd(template: &Array3<f64>, noise: &NoiseStats) -> Result<f64> {
    match noise {
        NoiseStats::White { sd } => {
            let norm = template.iter().map(|v| v * v).sum::<f64>().sqrt();
            Ok(sd * norm)
        }
        NoiseStats::Covariance(k) => {
            let flat = template.view().into_dyn();
            let w: Vec<f64> = flat.iter().cloned().collect();
            if k.dim() != (w.len(), w.len()) {
                return Err(Error::invalid("covariance does not match template"));
            }
            let mut quad = 0.0;
            for (i, wi) in w.iter().enumerate() {
                quad += wi
                    * w.iter()
                        .zip(k.row(i).iter())
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
            }
            Ok(quad.max(0.0).sqrt())
        }
        NoiseStats::Nps(n) => {
            let ft = template_spectrum(template);
            if ft.len() != n.len() {
                return Err(Error::invalid("NPS grid does not match template"));
            }
            let den2: f64 = ft
                .iter()
                .zip(n.iter())
                .map(|(w, nv)| w.norm_sqr() * nv)
                .sum();
            Ok((den2 / n.len() as f64).sqrt())
        }
    }
}

/// DFT of a (possibly single-slice) 3D array, as a dynamic-dim array.
pub fn template_spectrum(arr: &Array3<f64>) -> ArrayD<Complex64> {
    let (d, h, w) = arr.dim();
    if d == 1 {
        let slice = arr.index_axis(Axis(0), 0).to_owned();
        fft2(&slice).into_dyn()
    } else {
        let _ = (h, w);
        fft3(arr).into_dyn()
    }
}

/// Draw a zero-mean background patch under the noise model.
pub fn sample_background(
    shape: (usize, usize, usize),
    noise: &NoiseStats,
    rng: &mut impl Rng,
) -> Result<Array3<f64>> {
    let (d, h, w) = shape;
    match noise {
        NoiseStats::White { sd } => Ok(Array3::from_shape_simple_fn(shape, || {
            rng.sample::<f64, _>(StandardNormal) * sd
        })),
        NoiseStats::Covariance(k) => {
            let m = d * h * w;
            if k.dim() != (m, m) {
                return Err(Error::invalid("covariance does not match patch shape"));
            }
            // one-off Cholesky per call site would be wasteful for batches;
            // batch users should prefer White or Nps
            let km = nalgebra::DMatrix::from_fn(m, m, |i, j| k[[i, j]]);
            let chol = km
                .cholesky()
                .ok_or_else(|| Error::Numerical("covariance not positive definite".into()))?;
            let z = nalgebra::DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = chol.l() * z;
            Ok(Array3::from_shape_vec(shape, x.iter().cloned().collect())
                .expect("shape product checked"))
        }
        NoiseStats::Nps(n) => {
            if n.len() != d * h * w {
                return Err(Error::invalid("NPS grid does not match patch shape"));
            }
            if d == 1 {
                let g =
                    Array2::from_shape_simple_fn((h, w), || rng.sample::<f64, _>(StandardNormal));
                let mut spec = fft2(&g);
                for (v, nv) in spec.iter_mut().zip(n.iter()) {
                    *v *= nv.sqrt();
                }
                ifft2(&mut spec);
                let mut out = Array3::zeros(shape);
                out.index_axis_mut(Axis(0), 0)
                    .assign(&spec.mapv(|v| v.re));
                Ok(out)
            } else {
                let g =
                    Array3::from_shape_simple_fn(shape, || rng.sample::<f64, _>(StandardNormal));
                let mut spec = fft3(&g);
                for (v, nv) in spec.iter_mut().zip(n.iter()) {
                    *v *= nv.sqrt();
                }
                ifft3(&mut spec);
                Ok(spec.mapv(|v| v.re))
            }
        }
    }
}

/// Monte Carlo decision samples for one template/signal pair.
///
/// Child RNGs follow a seed-splitting contract: stream = trial index within
/// a root-seeded ChaCha generator, so trials are independent and the batch
/// is reproducible.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_samples(
    template: &Array3<f64>,
    signal: &Array3<f64>,
    noise: &NoiseStats,
    internal_noise_k: f64,
    trials: usize,
    root_seed: u64,
    ecc_bin: f64,
    samples: &mut Vec<DecisionSample>,
) -> Result<()> {
    let sigma_raw = template_response_sd(template, noise)?;
    let shape = template.dim();
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
        rng.set_stream(t as u64 + 1);
        let bg = sample_background(shape, noise, &mut rng)?;
        let lam_n = decision_variable(template.view(), bg.view())?;
        let lam_n = add_internal_noise(lam_n, sigma_raw, internal_noise_k, &mut rng);
        let bg2 = sample_background(shape, noise, &mut rng)?;
        let present = &bg2 + signal;
        let lam_s = decision_variable(template.view(), present.view())?;
        let lam_s = add_internal_noise(lam_s, sigma_raw, internal_noise_k, &mut rng);
        samples.push(DecisionSample {
            lambda: lam_n,
            class: SampleClass::Noise,
            eccentricity_bin: ecc_bin,
        });
        samples.push(DecisionSample {
            lambda: lam_s,
            class: SampleClass::Signal,
            eccentricity_bin: ecc_bin,
        });
    }
    Ok(())
}

/// Embed the signal on the template grid of a set (per its modality).
pub fn signal_on_template_grid(
    signal: &SignalProfile,
    set: &EccentricityTemplateSet,
) -> Array3<f64> {
    let (depth, h, _w) = set.templates[0].dim();
    let window = h;
    match set.modality {
        Modality::TwoD => {
            let s2 = embed_centered(signal.central_slice(), window);
            let mut out = Array3::zeros((1, window, window));
            out.index_axis_mut(Axis(0), 0).assign(&s2);
            out
        }
        Modality::ThreeD => {
            let mut out = Array3::zeros((depth, window, window));
            let sd = signal.voxels.dim().0;
            for z in 0..depth.min(sd) {
                let s2 = embed_centered(signal.voxels.index_axis(Axis(0), z), window);
                out.index_axis_mut(Axis(0), z).assign(&s2);
            }
            out
        }
    }
}

/// Per-bin d' by the chosen method, internal noise applied per the set's K.
pub fn dprime_curve(
    set: &EccentricityTemplateSet,
    signal: &SignalProfile,
    noise: &NoiseStats,
    method: DPrimeMethod,
    trials: Option<usize>,
    seed: u64,
) -> Result<DPrimeCurve> {
    let sig = signal_on_template_grid(signal, set);
    let atten = internal_noise_attenuation(set.internal_noise_k);
    let mut dprime = Vec::with_capacity(set.ecc_bins.len());
    let mut n_trials = None;
    for (bin_idx, template) in set.templates.iter().enumerate() {
        let d = match method {
            DPrimeMethod::Analytic => {
                let raw = match noise {
                    NoiseStats::White { sd } => analytic_dprime_white(
                        template.view().into_dyn(),
                        sig.view().into_dyn(),
                        *sd,
                    )?,
                    NoiseStats::Covariance(k) => analytic_dprime(
                        template.view().into_dyn(),
                        sig.view().into_dyn(),
                        k,
                    )?,
                    NoiseStats::Nps(_) => {
                        return Err(Error::invalid(
                            "analytic method needs a covariance; use fourier for an NPS",
                        ))
                    }
                };
                raw * atten
            }
            DPrimeMethod::Fourier => {
                let nps: ArrayD<f64> = match noise {
                    NoiseStats::White { sd } => {
                        ArrayD::from_elem(IxDyn(template_spectrum(template).shape()), sd * sd)
                    }
                    NoiseStats::Nps(n) => n.clone(),
                    NoiseStats::Covariance(_) => {
                        return Err(Error::invalid(
                            "fourier method needs an NPS or white noise, not a covariance",
                        ))
                    }
                };
                let wft = template_spectrum(template);
                let sft = template_spectrum(&sig);
                fourier_dprime(wft.view(), sft.view(), nps.view())? * atten
            }
            DPrimeMethod::Empirical => {
                let t = trials.ok_or_else(|| Error::invalid("empirical method needs trials"))?;
                if t < 100 {
                    return Err(Error::invalid(format!("trials must be >= 100, got {t}")));
                }
                n_trials = Some(t);
                let mut samples = Vec::with_capacity(2 * t);
                let bin_seed = seed ^ ((bin_idx as u64 + 1) << 48);
                monte_carlo_samples(
                    template,
                    &sig,
                    noise,
                    set.internal_noise_k,
                    t,
                    bin_seed,
                    set.ecc_bins[bin_idx],
                    &mut samples,
                )?;
                empirical_dprime(&samples)?
            }
        };
        dprime.push(d);
    }
    Ok(DPrimeCurve {
        model: set.model,
        signal: signal.kind,
        modality: set.modality,
        ecc_bins: set.ecc_bins.clone(),
        dprime,
        method,
        n_trials,
        seed: Some(seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    fn vol(a: Array2<f64>) -> Array3<f64> {
        let (h, w) = a.dim();
        let mut out = Array3::zeros((1, h, w));
        out.index_axis_mut(Axis(0), 0).assign(&a);
        out
    }

    #[test]
    fn decision_variable_impulse_and_orthogonal() {
        let mut w = Array3::zeros((1, 2, 2));
        w[[0, 0, 0]] = 1.0;
        let g = w.clone();
        assert_eq!(decision_variable(w.view(), g.view()).unwrap(), 1.0);
        let mut g2 = Array3::zeros((1, 2, 2));
        g2[[0, 1, 1]] = 5.0;
        assert_eq!(decision_variable(w.view(), g2.view()).unwrap(), 0.0);
    }

    #[test]
    fn decision_variable_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = Array3::from_shape_simple_fn((1, 4, 4), || rng.gen::<f64>());
        let g = Array3::from_shape_simple_fn((1, 4, 4), || rng.gen::<f64>());
        let fast = decision_variable(w.view(), g.view()).unwrap();
        let mut naive = 0.0;
        for z in 0..1 {
            for y in 0..4 {
                for x in 0..4 {
                    naive += w[[z, y, x]] * g[[z, y, x]];
                }
            }
        }
        assert!((fast - naive).abs() < 1e-12);
    }

    #[test]
    fn decision_variable_rejects_shape_mismatch() {
        let w = Array3::<f64>::zeros((1, 2, 2));
        let g = Array3::<f64>::zeros((1, 3, 2));
        assert!(decision_variable(w.view(), g.view()).is_err());
    }

    #[test]
    fn internal_noise_zero_k_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(add_internal_noise(1.5, 2.0, 0.0, &mut rng), 1.5);
    }

    #[test]
    fn internal_noise_sd_matches_k_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = 2.78;
        let sigma = 3.0;
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| add_internal_noise(0.0, sigma, k, &mut rng))
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((sd - k * sigma).abs() / (k * sigma) < 0.02);
    }

    #[test]
    fn empirical_dprime_by_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut samples = Vec::new();
        for _ in 0..100_000 {
            samples.push(DecisionSample {
                lambda: rng.sample::<f64, _>(StandardNormal) + 1.0,
                class: SampleClass::Signal,
                eccentricity_bin: 0.0,
            });
            samples.push(DecisionSample {
                lambda: rng.sample::<f64, _>(StandardNormal),
                class: SampleClass::Noise,
                eccentricity_bin: 0.0,
            });
        }
        let d = empirical_dprime(&samples).unwrap();
        assert!((d - 1.0).abs() < 0.02);
    }

    #[test]
    fn empirical_dprime_identical_classes_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<DecisionSample> = (0..20_000)
            .map(|i| DecisionSample {
                lambda: rng.sample::<f64, _>(StandardNormal),
                class: if i % 2 == 0 {
                    SampleClass::Signal
                } else {
                    SampleClass::Noise
                },
                eccentricity_bin: 0.0,
            })
            .collect();
        assert!(empirical_dprime(&samples).unwrap().abs() < 0.05);
    }

    #[test]
    fn empirical_dprime_single_class_rejected() {
        let samples = vec![
            DecisionSample {
                lambda: 1.0,
                class: SampleClass::Signal,
                eccentricity_bin: 0.0,
            };
            10
        ];
        assert!(empirical_dprime(&samples).is_err());
    }

    #[test]
    fn analytic_matched_filter_white_noise() {
        let s = vol(array![[1.0, 2.0], [3.0, 4.0]]);
        let w = s.clone();
        let k = Array2::eye(4);
        let d = analytic_dprime(w.view().into_dyn(), s.view().into_dyn(), &k).unwrap();
        let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((d - norm).abs() < 1e-12);
    }

    #[test]
    fn analytic_two_by_two_hand_case() {
        // s = (1, 0), K = [[2, 0], [0, 1]], w = (1, 0) -> d' = 1/sqrt(2)
        let s = vol(array![[1.0, 0.0]]);
        let w = vol(array![[1.0, 0.0]]);
        let k = array![[2.0, 0.0], [0.0, 1.0]];
        let d = analytic_dprime(w.view().into_dyn(), s.view().into_dyn(), &k).unwrap();
        assert!((d - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn analytic_invariant_under_template_scaling() {
        let s = vol(array![[1.0, 2.0], [0.5, -1.0]]);
        let w = vol(array![[0.3, 1.0], [2.0, 0.1]]);
        let k = array![
            [2.0, 0.1, 0.0, 0.0],
            [0.1, 1.5, 0.2, 0.0],
            [0.0, 0.2, 1.0, 0.1],
            [0.0, 0.0, 0.1, 0.8]
        ];
        let d1 = analytic_dprime(w.view().into_dyn(), s.view().into_dyn(), &k).unwrap();
        let w2 = w.mapv(|v| 7.3 * v);
        let d2 = analytic_dprime(w2.view().into_dyn(), s.view().into_dyn(), &k).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
    }

    #[test]
    fn fourier_white_noise_matches_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s2 = Array2::from_shape_simple_fn((8, 8), || rng.gen::<f64>() - 0.5);
        let s = vol(s2);
        let sd = 2.5;
        let wft = template_spectrum(&s);
        let nps = ArrayD::from_elem(IxDyn(&[8, 8]), sd * sd);
        let d = fourier_dprime(wft.view(), wft.view(), nps.view()).unwrap();
        let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((d - norm / sd).abs() < 1e-6);
    }

    #[test]
    fn fourier_scaling_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = vol(Array2::from_shape_simple_fn((8, 8), || rng.gen::<f64>() - 0.5));
        let wft = template_spectrum(&s);
        let nps = ArrayD::from_shape_fn(IxDyn(&[8, 8]), |_| 1.0 + rng.gen::<f64>());
        let d1 = fourier_dprime(wft.view(), wft.view(), nps.view()).unwrap();
        let d2 = fourier_dprime(wft.view(), wft.view(), nps.mapv(|v| 2.0 * v).view()).unwrap();
        assert!((d1 / d2 - 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn internal_noise_law_on_monte_carlo() {
        // effective d' with internal noise = d' / sqrt(1 + k^2)
        let mut w = Array3::zeros((1, 8, 8));
        for ((_, y, x), v) in w.indexed_iter_mut() {
            *v = ((x + 2 * y) as f64 * 0.37).sin();
        }
        let sig = w.mapv(|v| 0.8 * v);
        let noise = NoiseStats::White { sd: 1.0 };
        let trials = 100_000;
        let mut plain = Vec::new();
        monte_carlo_samples(&w, &sig, &noise, 0.0, trials, 77, 0.0, &mut plain).unwrap();
        let mut noisy = Vec::new();
        let k = 2.78;
        monte_carlo_samples(&w, &sig, &noise, k, trials, 78, 0.0, &mut noisy).unwrap();
        let d0 = empirical_dprime(&plain).unwrap();
        let dk = empirical_dprime(&noisy).unwrap();
        let want = internal_noise_attenuation(k);
        assert!(
            (dk / d0 - want).abs() / want < 0.03,
            "ratio {} vs {}",
            dk / d0,
            want
        );
    }

    #[test]
    fn empirical_matches_analytic_white_noise() {
        let mut w = Array3::zeros((1, 8, 8));
        for ((_, y, x), v) in w.indexed_iter_mut() {
            *v = ((x as f64) - (y as f64) * 0.5).cos();
        }
        let sig = w.mapv(|v| 0.5 * v);
        let noise = NoiseStats::White { sd: 1.0 };
        let mut samples = Vec::new();
        monte_carlo_samples(&w, &sig, &noise, 0.0, 10_000, 11, 0.0, &mut samples).unwrap();
        let emp = empirical_dprime(&samples).unwrap();
        let ana =
            analytic_dprime_white(w.view().into_dyn(), sig.view().into_dyn(), 1.0).unwrap();
        assert!((emp - ana).abs() / ana < 0.05, "emp {emp} vs ana {ana}");
    }

    #[test]
    fn stationary_sampler_reproduces_nps_variance() {
        // flat NPS sigma^2 must give white noise of variance sigma^2
        let nps = ArrayD::from_elem(IxDyn(&[16, 16]), 9.0);
        let noise = NoiseStats::Nps(nps);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut acc = 0.0;
        let mut n = 0usize;
        for _ in 0..200 {
            let p = sample_background((1, 16, 16), &noise, &mut rng).unwrap();
            acc += p.iter().map(|v| v * v).sum::<f64>();
            n += p.len();
        }
        let var = acc / n as f64;
        assert!((var - 9.0).abs() / 9.0 < 0.05, "var {var}");
    }
}

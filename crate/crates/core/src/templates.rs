//! Eccentricity-dependent observer templates.
//!
//! The foveated CHO scales its Gabor channel bank with retinal eccentricity;
//! the foveated NPWE degrades its eye filter. 3D templates are stacks of the
//! per-slice 2D templates.

use ndarray::{Array2, Array3, Axis};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fft2, freq_cycles_per_sample, ifft2};
use crate::stimulus::{Modality, SignalProfile};

/// Foveal Gabor channel center frequencies, cycles/deg.
pub const FOVEAL_FREQS_CPD: [f64; 6] = [16.0, 8.0, 4.0, 2.0, 1.0, 0.5];
pub const N_ORIENTATIONS: usize = 8;
/// Channels below this center frequency are dropped.
pub const MIN_CHANNEL_FREQ_CPD: f64 = 0.15;
/// Channel-size scaling constants.
pub const SCALING_ALPHA: f64 = 0.7063;
pub const SCALING_BETA: f64 = 1.6953;
/// Internal-noise multipliers.
pub const FCHO_INTERNAL_NOISE_K: f64 = 2.78;
pub const FNPWE_INTERNAL_NOISE_K: f64 = 15.13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObserverModel {
    Fcho,
    Fnpwe,
}

impl ObserverModel {
    pub fn internal_noise_k(self) -> f64 {
        match self {
            ObserverModel::Fcho => FCHO_INTERNAL_NOISE_K,
            ObserverModel::Fnpwe => FNPWE_INTERNAL_NOISE_K,
        }
    }
}

/// Nonlinear channel-size scaling with eccentricity: `1 + 0.7063 E^1.6953`.
pub fn scaling_factor(eccentricity: f64) -> Result<f64> {
    if eccentricity < 0.0 {
        return Err(Error::invalid(format!(
            "eccentricity must be >= 0, got {eccentricity}"
        )));
    }
    Ok(1.0 + SCALING_ALPHA * eccentricity.powf(SCALING_BETA))
}

/// A bank of 2D Gabor channels for one eccentricity, rendered on a common
/// square window. Channels are ordered frequency-major, orientation-minor.
#[derive(Debug, Clone)]
pub struct ChannelBank {
    pub eccentricity: f64,
    pub channels: Vec<Array2<f64>>,
    pub center_freqs: Vec<f64>,
    pub orientations: Vec<f64>,
    pub px_per_deg: f64,
}

impl ChannelBank {
    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }
}

/// Even (cosine-phase) Gabor with a circular Gaussian envelope and 1-octave
/// FWHM frequency bandwidth, unit L2 norm.
fn gabor(window: usize, freq_cpd: f64, orientation: f64, px_per_deg: f64) -> Array2<f64> {
    // sigma for an octave bandwidth b: sqrt(ln2/2) * (2^b + 1) / ((2^b - 1) * pi * f)
    let sigma_deg = (0.5 * std::f64::consts::LN_2).sqrt() * 3.0 / (std::f64::consts::PI * freq_cpd);
    let sigma_px = sigma_deg * px_per_deg;
    let freq_cpp = freq_cpd / px_per_deg;
    let c = (window as f64 - 1.0) / 2.0;
    let (cos_t, sin_t) = (orientation.cos(), orientation.sin());
    let mut g = Array2::zeros((window, window));
    for ((y, x), v) in g.indexed_iter_mut() {
        let dx = x as f64 - c;
        let dy = y as f64 - c;
        let env = (-(dx * dx + dy * dy) / (2.0 * sigma_px * sigma_px)).exp();
        let phase = 2.0 * std::f64::consts::PI * freq_cpp * (dx * cos_t + dy * sin_t);
        *v = env * phase.cos();
    }
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        g.mapv_inplace(|v| v / norm);
    }
    g
}

/// Build the channel bank at eccentricity `e`: foveal frequencies divided by
/// the scaling factor, spatial extent multiplied by it, sub-0.15 c/deg
/// channels removed, all 8 orientations retained.
pub fn gabor_channel_bank(
    eccentricity: f64,
    px_per_deg: f64,
    window: usize,
) -> Result<ChannelBank> {
    let scale = scaling_factor(eccentricity)?;
    let freqs: Vec<f64> = FOVEAL_FREQS_CPD
        .iter()
        .map(|f| f / scale)
        .filter(|f| *f >= MIN_CHANNEL_FREQ_CPD)
        .collect();
    if freqs.is_empty() {
        return Err(Error::EmptyBank { eccentricity });
    }
    let mut channels = Vec::with_capacity(freqs.len() * N_ORIENTATIONS);
    let mut center_freqs = Vec::new();
    let mut orientations = Vec::new();
    for &f in &freqs {
        for k in 0..N_ORIENTATIONS {
            let theta = k as f64 * std::f64::consts::PI / N_ORIENTATIONS as f64;
            channels.push(gabor(window, f, theta, px_per_deg));
            center_freqs.push(f);
            orientations.push(theta);
        }
    }
    Ok(ChannelBank {
        eccentricity,
        channels,
        center_freqs,
        orientations,
        px_per_deg,
    })
}

/// Eye-filter parameters (contrast-sensitivity shape).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EyeFilterParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub n: f64,
}

impl Default for EyeFilterParams {
    fn default() -> Self {
        EyeFilterParams {
            alpha: 0.83,
            beta: 0.35,
            gamma: 0.4,
            n: 2.2,
        }
    }
}

/// Radial eye filter at one eccentricity.
///
/// The published form is degenerate at E = 0 (zero gain everywhere), so the
/// effective eccentricity factor is clamped: `f(E) = max(E, 1)^n`.
#[derive(Debug, Clone)]
pub struct EyeFilter {
    pub eccentricity: f64,
    pub params: EyeFilterParams,
    ecc_factor: f64,
}

impl EyeFilter {
    pub fn gain(&self, rho_cpd: f64) -> f64 {
        let u = rho_cpd * self.ecc_factor;
        if u <= 0.0 {
            return 0.0;
        }
        u.powf(self.params.alpha) * (-self.params.beta * u.powf(self.params.gamma)).exp()
    }

    /// Radial frequency of peak gain, cycles/deg.
    pub fn peak_freq(&self) -> f64 {
        let p = &self.params;
        (p.alpha / (p.beta * p.gamma)).powf(1.0 / p.gamma) / self.ecc_factor
    }

    /// Gain sampled on the DFT frequency grid of an `(h, w)` array.
    pub fn gain_grid(&self, shape: (usize, usize), px_per_deg: f64) -> Array2<f64> {
        let (h, w) = shape;
        Array2::from_shape_fn((h, w), |(ky, kx)| {
            let fy = freq_cycles_per_sample(ky, h) * px_per_deg;
            let fx = freq_cycles_per_sample(kx, w) * px_per_deg;
            self.gain((fx * fx + fy * fy).sqrt())
        })
    }
}

pub fn eye_filter(eccentricity: f64, params: EyeFilterParams) -> Result<EyeFilter> {
    if eccentricity < 0.0 {
        return Err(Error::invalid(format!(
            "eccentricity must be >= 0, got {eccentricity}"
        )));
    }
    let ecc_factor = eccentricity.max(1.0).powf(params.n);
    Ok(EyeFilter {
        eccentricity,
        params,
        ecc_factor,
    })
}

/// Background statistics used to prewhiten the FCHO.
#[derive(Debug, Clone)]
pub enum BackgroundStats {
    /// Background-only sample patches on the template window.
    Patches(Vec<Array2<f64>>),
    /// Stationary noise power spectrum on the template window's DFT grid
    /// (DFT of the autocovariance; flat spectrum of value sigma^2 is white
    /// noise of variance sigma^2).
    Nps2d(Array2<f64>),
}

/// Channel-space covariance of the background for a given bank.
pub fn channel_covariance(bank: &ChannelBank, background: &BackgroundStats) -> Result<Array2<f64>> {
    let nch = bank.len();
    match background {
        BackgroundStats::Patches(patches) => {
            if patches.len() < 10 * nch {
                return Err(Error::invalid(format!(
                    "need >= {} background patches for {} channels, got {}",
                    10 * nch,
                    nch,
                    patches.len()
                )));
            }
            let m = patches.len();
            let mut responses = Array2::<f64>::zeros((m, nch));
            for (j, p) in patches.iter().enumerate() {
                if p.dim() != bank.channels[0].dim() {
                    return Err(Error::invalid("patch shape does not match channel window"));
                }
                for (i, ch) in bank.channels.iter().enumerate() {
                    responses[[j, i]] = ch.iter().zip(p.iter()).map(|(a, b)| a * b).sum();
                }
            }
            let means: Vec<f64> = (0..nch)
                .map(|i| responses.column(i).sum() / m as f64)
                .collect();
            let mut cov = Array2::zeros((nch, nch));
            for i in 0..nch {
                for j in i..nch {
                    let c = responses
                        .rows()
                        .into_iter()
                        .map(|r| (r[i] - means[i]) * (r[j] - means[j]))
                        .sum::<f64>()
                        / (m - 1) as f64;
                    cov[[i, j]] = c;
                    cov[[j, i]] = c;
                }
            }
            Ok(cov)
        }
        BackgroundStats::Nps2d(nps) => {
            if nps.dim() != bank.channels[0].dim() {
                return Err(Error::invalid("NPS grid does not match channel window"));
            }
            let m = nps.len() as f64;
            let spectra: Vec<_> = bank.channels.iter().map(fft2).collect();
            let mut cov = Array2::zeros((nch, nch));
            for i in 0..nch {
                for j in i..nch {
                    let c = spectra[i]
                        .iter()
                        .zip(spectra[j].iter())
                        .zip(nps.iter())
                        .map(|((a, b), n)| (a.conj() * b).re * n)
                        .sum::<f64>()
                        / m;
                    cov[[i, j]] = c;
                    cov[[j, i]] = c;
                }
            }
            Ok(cov)
        }
    }
}

/// Hotelling template in channel space, mapped back to pixels:
/// `w = U (U^t K U + eps I)^-1 U^t s` with ridge `eps = 1e-6 tr(K)/dim`.
pub fn cho_template(
    bank: &ChannelBank,
    signal_slice: &Array2<f64>,
    channel_cov: &Array2<f64>,
) -> Result<Array2<f64>> {
    let nch = bank.len();
    if channel_cov.dim() != (nch, nch) {
        return Err(Error::invalid(format!(
            "channel covariance is {:?}, expected ({nch}, {nch})",
            channel_cov.dim()
        )));
    }
    if signal_slice.dim() != bank.channels[0].dim() {
        return Err(Error::invalid("signal slice does not match channel window"));
    }
    let v: Vec<f64> = bank
        .channels
        .iter()
        .map(|ch| ch.iter().zip(signal_slice.iter()).map(|(a, b)| a * b).sum())
        .collect();
    let trace: f64 = (0..nch).map(|i| channel_cov[[i, i]]).sum();
    let eps = 1e-6 * trace / nch as f64;
    let mut k = DMatrix::from_fn(nch, nch, |i, j| channel_cov[[i, j]]);
    for i in 0..nch {
        k[(i, i)] += eps;
    }
    let rhs = DVector::from_vec(v);
    let a = k
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .or_else(|| k.lu().solve(&rhs))
        .ok_or_else(|| Error::Numerical("regularized channel covariance is singular".into()))?;
    let (h, w) = bank.channels[0].dim();
    let mut template = Array2::zeros((h, w));
    for (coef, ch) in a.iter().zip(bank.channels.iter()) {
        template.scaled_add(*coef, ch);
    }
    Ok(template)
}

/// NPWE template: the signal passed twice through the eye filter,
/// `w = F^-1 [ E(rho)^2 S(u, v) ]`.
pub fn npwe_template(
    signal_slice: &Array2<f64>,
    filter: &EyeFilter,
    px_per_deg: f64,
) -> Array2<f64> {
    let gain = filter.gain_grid(signal_slice.dim(), px_per_deg);
    npwe_template_with_gain(signal_slice, &gain)
}

/// NPWE construction for an arbitrary filter gain grid.
pub fn npwe_template_with_gain(signal_slice: &Array2<f64>, gain: &Array2<f64>) -> Array2<f64> {
    let mut spec = fft2(signal_slice);
    for (v, g) in spec.iter_mut().zip(gain.iter()) {
        *v *= g * g;
    }
    ifft2(&mut spec);
    spec.mapv(|v| v.re)
}

/// Stack per-slice 2D templates into a 3D template.
pub fn stack_3d(slices: &[Array2<f64>]) -> Result<Array3<f64>> {
    if slices.is_empty() {
        return Err(Error::invalid("no slices to stack"));
    }
    let dim = slices[0].dim();
    if slices.iter().any(|s| s.dim() != dim) {
        return Err(Error::invalid("slice dimensions differ"));
    }
    let mut out = Array3::zeros((slices.len(), dim.0, dim.1));
    for (z, s) in slices.iter().enumerate() {
        out.index_axis_mut(Axis(0), z).assign(s);
    }
    Ok(out)
}

/// A family of observer templates indexed by eccentricity bin.
#[derive(Debug, Clone)]
pub struct EccentricityTemplateSet {
    pub model: ObserverModel,
    pub signal_kind: crate::stimulus::SignalKind,
    pub modality: Modality,
    pub ecc_bins: Vec<f64>,
    /// One template per bin; 2D templates have depth 1.
    pub templates: Vec<Array3<f64>>,
    pub internal_noise_k: f64,
    pub px_per_deg: f64,
}

impl EccentricityTemplateSet {
    /// Index of the eccentricity bin containing `ecc_dva`; the last bin is a
    /// catch-all for larger eccentricities.
    pub fn bin_of(&self, ecc_dva: f64) -> usize {
        let mut idx = 0;
        for (i, &lo) in self.ecc_bins.iter().enumerate() {
            if ecc_dva >= lo {
                idx = i;
            }
        }
        idx
    }
}

/// Embed `slice` centered in a `window`-square array, cropping if larger.
pub fn embed_centered(slice: ndarray::ArrayView2<'_, f64>, window: usize) -> Array2<f64> {
    let (sh, sw) = slice.dim();
    let mut out = Array2::zeros((window, window));
    for y in 0..window {
        for x in 0..window {
            let sy = y as i64 - window as i64 / 2 + sh as i64 / 2;
            let sx = x as i64 - window as i64 / 2 + sw as i64 / 2;
            if sy >= 0 && sx >= 0 && (sy as usize) < sh && (sx as usize) < sw {
                out[[y, x]] = slice[[sy as usize, sx as usize]];
            }
        }
    }
    out
}

fn signal_slices(signal: &SignalProfile, modality: Modality, window: usize) -> Vec<Array2<f64>> {
    match modality {
        Modality::TwoD => vec![embed_centered(signal.central_slice(), window)],
        Modality::ThreeD => signal
            .voxels
            .axis_iter(Axis(0))
            .map(|s| embed_centered(s, window))
            .collect(),
    }
}

/// Build one template per eccentricity bin for the requested observer model.
pub fn build_template_set(
    model: ObserverModel,
    signal: &SignalProfile,
    background: &BackgroundStats,
    ecc_bins: &[f64],
    px_per_deg: f64,
    window: usize,
    modality: Modality,
) -> Result<EccentricityTemplateSet> {
    if ecc_bins.is_empty() {
        return Err(Error::invalid("ecc_bins must be non-empty"));
    }
    if ecc_bins[0] != 0.0 {
        return Err(Error::invalid("ecc_bins must start at 0"));
    }
    if ecc_bins.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("ecc_bins must be strictly increasing"));
    }
    let slices = signal_slices(signal, modality, window);
    let mut templates = Vec::with_capacity(ecc_bins.len());
    for &e in ecc_bins {
        let per_slice: Vec<Array2<f64>> = match model {
            ObserverModel::Fcho => {
                let bank = gabor_channel_bank(e, px_per_deg, window)?;
                let cov = channel_covariance(&bank, background)?;
                slices
                    .iter()
                    .map(|s| cho_template(&bank, s, &cov))
                    .collect::<Result<_>>()?
            }
            ObserverModel::Fnpwe => {
                let filter = eye_filter(e, EyeFilterParams::default())?;
                slices
                    .iter()
                    .map(|s| npwe_template(s, &filter, px_per_deg))
                    .collect()
            }
        };
        templates.push(stack_3d(&per_slice)?);
    }
    Ok(EccentricityTemplateSet {
        model,
        signal_kind: signal.kind,
        modality,
        ecc_bins: ecc_bins.to_vec(),
        templates,
        internal_noise_k: model.internal_noise_k(),
        px_per_deg,
    })
}

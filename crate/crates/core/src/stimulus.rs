//! Synthetic stimulus generation: power-law filtered 3D noise volumes,
//! MCALC/MASS signal profiles, signal insertion, and 2D trial extraction.

use ndarray::{s, Array3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fft3, freq_index, ifft3};

/// Peak signal amplitude in gray levels over the background mean.
pub const SIGNAL_AMPLITUDE: f64 = 83.0;
/// MCALC sphere diameter in degrees of visual angle.
pub const MCALC_DIAMETER_DVA: f64 = 0.13;
/// MASS Gaussian: 3 standard deviations span this many degrees.
pub const MASS_3SIGMA_DVA: f64 = 0.66;
/// Profile support is cropped where values fall below this fraction of peak.
pub const PROFILE_CROP_FRACTION: f64 = 1e-3;
/// Default pixels per degree of visual angle.
pub const DEFAULT_PX_PER_DEG: f64 = 36.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    Mcalc,
    Mass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "3d")]
    ThreeD,
}

/// Voxel position, `x` along width, `y` along height, `z` the slice index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoxelPos {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

/// A power-law filtered Gaussian noise field. Voxels are indexed `[z, y, x]`.
#[derive(Debug, Clone)]
pub struct NoiseVolume {
    pub voxels: Array3<f64>,
    pub mean: f64,
    pub sd: f64,
    pub exponent: f64,
    pub seed: u64,
}

impl NoiseVolume {
    /// (width, height, depth) in voxels.
    pub fn dims(&self) -> (usize, usize, usize) {
        let (d, h, w) = self.voxels.dim();
        (w, h, d)
    }
}

/// Additive luminance profile of a target, cropped to its support.
#[derive(Debug, Clone)]
pub struct SignalProfile {
    pub kind: SignalKind,
    pub voxels: Array3<f64>,
    pub peak_amplitude: f64,
    pub angular_size: f64,
    pub px_per_deg: f64,
}

impl SignalProfile {
    /// Central slice of the profile (peak slice).
    pub fn central_slice(&self) -> ndarray::ArrayView2<'_, f64> {
        let (d, _, _) = self.voxels.dim();
        self.voxels.index_axis(ndarray::Axis(0), d / 2)
    }
}

/// One search/detection trial: background with an optional inserted signal.
#[derive(Debug, Clone)]
pub struct TrialStimulus {
    pub data: Array3<f64>,
    pub signal_present: bool,
    pub signal_location: Option<VoxelPos>,
    pub modality: Modality,
}

/// Generate a power-law filtered noise volume.
///
/// A white Gaussian field is transformed to the frequency domain, its
/// amplitude scaled by `f^(exponent/2)` on the 3D radial frequency index
/// (so the power spectrum follows `f^exponent`), inverse transformed, then
/// affinely renormalized to the requested mean and sd. Deterministic for a
/// fixed seed.
pub fn generate_noise_volume(
    dims: (usize, usize, usize),
    mean: f64,
    sd: f64,
    exponent: f64,
    seed: u64,
) -> Result<NoiseVolume> {
    let (w, h, d) = dims;
    if w == 0 || h == 0 || d == 0 {
        return Err(Error::invalid(format!("zero-sized dims {dims:?}")));
    }
    if sd <= 0.0 {
        return Err(Error::invalid(format!("sd must be positive, got {sd}")));
    }
    if exponent > 0.0 {
        log::warn!("spectral exponent {exponent} > 0: power increases with frequency");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white = Array3::from_shape_simple_fn((d, h, w), || rng.sample::<f64, _>(StandardNormal));

    let mut spectrum = fft3(&white);
    let half_exp = exponent / 2.0;
    for ((kz, ky, kx), v) in spectrum.indexed_iter_mut() {
        let fz = freq_index(kz, d);
        let fy = freq_index(ky, h);
        let fx = freq_index(kx, w);
        let f = (fx * fx + fy * fy + fz * fz).sqrt();
        if f == 0.0 {
            // DC is restored by the renormalization below
            *v = Complex64::default();
        } else {
            *v *= f.powf(half_exp);
        }
    }
    ifft3(&mut spectrum);
    let mut field = spectrum.mapv(|v| v.re);

    let n = field.len() as f64;
    let sample_mean = field.sum() / n;
    let sample_var = field.iter().map(|v| (v - sample_mean).powi(2)).sum::<f64>() / n;
    let sample_sd = sample_var.sqrt();
    if sample_sd == 0.0 {
        return Err(Error::Numerical("filtered field has zero variance".into()));
    }
    let scale = sd / sample_sd;
    field.mapv_inplace(|v| (v - sample_mean) * scale + mean);

    Ok(NoiseVolume {
        voxels: field,
        mean,
        sd,
        exponent,
        seed,
    })
}

/// Noise power spectrum of the power-law field on an arbitrary grid.
///
/// Matches the construction in [`generate_noise_volume`]: power follows the
/// radial frequency index raised to `exponent`, and the whole spectrum is
/// scaled so the implied field variance (mean of the spectrum over frequency
/// bins) equals `sd^2`. The DC bin is clamped to the radius-1 power: patches
/// of a larger field carry low-frequency power into their local mean, so a
/// zero-variance DC would wrongly present the patch mean as a noise-free
/// channel.
pub fn power_law_nps(shape: &[usize], sd: f64, exponent: f64) -> Result<ndarray::ArrayD<f64>> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::invalid(format!("bad NPS shape {shape:?}")));
    }
    if sd <= 0.0 {
        return Err(Error::invalid(format!("sd must be positive, got {sd}")));
    }
    use ndarray::Dimension;
    let mut nps = ndarray::ArrayD::zeros(ndarray::IxDyn(shape));
    for (idx, v) in nps.indexed_iter_mut() {
        let mut r2 = 0.0;
        for (axis, &k) in idx.slice().iter().enumerate() {
            let f = crate::fft::freq_index(k, shape[axis]);
            r2 += f * f;
        }
        *v = r2.sqrt().max(1.0).powf(exponent);
    }
    let m = nps.len() as f64;
    let mean_power = nps.sum() / m;
    if mean_power <= 0.0 {
        return Err(Error::Numerical("power spectrum is identically zero".into()));
    }
    nps.mapv_inplace(|v| v * sd * sd / mean_power);
    Ok(nps)
}

/// Synthesize a target luminance profile.
///
/// MCALC is a sharp-edged sphere of diameter 0.13 dva (a voxel belongs to the
/// sphere iff its center lies within the radius). MASS is an isotropic 3D
/// Gaussian with 3 sigma spanning 0.66 dva. Both peak at 83 gray levels; the
/// support array is the minimal bounding box holding all values above 1e-3 of
/// the peak.
pub fn make_signal(kind: SignalKind, px_per_deg: f64) -> Result<SignalProfile> {
    if px_per_deg <= 0.0 {
        return Err(Error::invalid(format!(
            "px_per_deg must be positive, got {px_per_deg}"
        )));
    }
    match kind {
        SignalKind::Mcalc => {
            let diameter_px = MCALC_DIAMETER_DVA * px_per_deg;
            if diameter_px < 1.0 {
                return Err(Error::invalid(format!(
                    "MCALC diameter {diameter_px:.3} px < 1 px at {px_per_deg} px/deg; signal unrepresentable"
                )));
            }
            let radius = diameter_px / 2.0;
            let half = radius.floor() as i64;
            let side = (2 * half + 1) as usize;
            let c = half as f64;
            let mut voxels = Array3::zeros((side, side, side));
            for ((z, y, x), v) in voxels.indexed_iter_mut() {
                let dz = z as f64 - c;
                let dy = y as f64 - c;
                let dx = x as f64 - c;
                if (dx * dx + dy * dy + dz * dz).sqrt() <= radius {
                    *v = SIGNAL_AMPLITUDE;
                }
            }
            Ok(SignalProfile {
                kind,
                voxels,
                peak_amplitude: SIGNAL_AMPLITUDE,
                angular_size: MCALC_DIAMETER_DVA,
                px_per_deg,
            })
        }
        SignalKind::Mass => {
            let sigma_px = MASS_3SIGMA_DVA / 3.0 * px_per_deg;
            // support radius where the Gaussian crosses the crop fraction
            let r_crop = sigma_px * (2.0 * (1.0 / PROFILE_CROP_FRACTION).ln()).sqrt();
            let half = r_crop.floor() as i64;
            let side = (2 * half + 1) as usize;
            let c = half as f64;
            let inv_two_sigma2 = 1.0 / (2.0 * sigma_px * sigma_px);
            let mut voxels = Array3::zeros((side, side, side));
            for ((z, y, x), v) in voxels.indexed_iter_mut() {
                let dz = z as f64 - c;
                let dy = y as f64 - c;
                let dx = x as f64 - c;
                let r2 = dx * dx + dy * dy + dz * dz;
                let g = SIGNAL_AMPLITUDE * (-r2 * inv_two_sigma2).exp();
                if g > PROFILE_CROP_FRACTION * SIGNAL_AMPLITUDE {
                    *v = g;
                }
            }
            Ok(SignalProfile {
                kind,
                voxels,
                peak_amplitude: SIGNAL_AMPLITUDE,
                angular_size: MASS_3SIGMA_DVA,
                px_per_deg,
            })
        }
    }
}

/// Add a signal profile to a copy of the volume, centered at `location`.
pub fn insert_signal(
    volume: &NoiseVolume,
    signal: &SignalProfile,
    location: VoxelPos,
) -> Result<TrialStimulus> {
    let (vd, vh, vw) = volume.voxels.dim();
    let (sd, sh, sw) = signal.voxels.dim();
    let z0 = location.z as i64 - (sd / 2) as i64;
    let y0 = location.y as i64 - (sh / 2) as i64;
    let x0 = location.x as i64 - (sw / 2) as i64;
    if z0 < 0
        || y0 < 0
        || x0 < 0
        || z0 + sd as i64 > vd as i64
        || y0 + sh as i64 > vh as i64
        || x0 + sw as i64 > vw as i64
    {
        return Err(Error::invalid(format!(
            "signal support {sw}x{sh}x{sd} does not fit at ({}, {}, {}) in {vw}x{vh}x{vd} volume",
            location.x, location.y, location.z
        )));
    }
    let mut data = volume.voxels.clone();
    let (z0, y0, x0) = (z0 as usize, y0 as usize, x0 as usize);
    let mut window = data.slice_mut(s![z0..z0 + sd, y0..y0 + sh, x0..x0 + sw]);
    window += &signal.voxels;
    Ok(TrialStimulus {
        data,
        signal_present: true,
        signal_location: Some(location),
        modality: Modality::ThreeD,
    })
}

/// A signal-absent 3D trial backed by the given volume.
pub fn absent_trial(volume: &NoiseVolume) -> TrialStimulus {
    TrialStimulus {
        data: volume.voxels.clone(),
        signal_present: false,
        signal_location: None,
        modality: Modality::ThreeD,
    }
}

/// Extract a 2D trial from a 3D one: the signal's central slice when
/// present, a uniformly random slice (from `rng`) when absent.
pub fn extract_2d(trial: &TrialStimulus, rng: &mut impl Rng) -> Result<TrialStimulus> {
    if trial.modality != Modality::ThreeD {
        return Err(Error::invalid("extract_2d requires a 3D trial"));
    }
    let (d, h, w) = trial.data.dim();
    let z = match trial.signal_location {
        Some(loc) => loc.z,
        None => rng.gen_range(0..d),
    };
    let mut data = Array3::zeros((1, h, w));
    data.index_axis_mut(ndarray::Axis(0), 0)
        .assign(&trial.data.index_axis(ndarray::Axis(0), z));
    Ok(TrialStimulus {
        data,
        signal_present: trial.signal_present,
        signal_location: trial.signal_location.map(|loc| VoxelPos { z: 0, ..loc }),
        modality: Modality::TwoD,
    })
}

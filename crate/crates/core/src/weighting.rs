//! Eccentricity weighting schemes and the aggregate figure of merit
//! `<d'> = sum_E m_E d'_E`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::detectability::DPrimeCurve;
use crate::error::{Error, Result};
use crate::stimulus::Modality;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    Average,
    DprimeWeighted,
    EtClosest,
    TimeClosest,
}

/// Weights m_E over eccentricity bins. Probability-style vectors sum to 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightVector {
    pub ecc_bins: Vec<f64>,
    pub weights: Vec<f64>,
    pub scheme: WeightScheme,
    pub provenance: String,
}

/// One recorded search trial with its fixation list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixationTrial {
    pub trial_id: String,
    pub modality: Modality,
    pub signal_present: bool,
    /// (x px, y px, slice); required when signal_present.
    pub signal_xyz: Option<(f64, f64, f64)>,
    /// (x px, y px, slice, duration ms) per fixation.
    pub fixations: Vec<(f64, f64, f64, f64)>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FixationLog {
    pub trials: Vec<FixationTrial>,
}

/// Timing and geometry used to synthesize fixation grids.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SearchTimingParams {
    pub median_fixation_time_ms: f64,
    pub median_response_time_s: f64,
    /// (width px, height px)
    pub display: (usize, usize),
    pub n_slices: usize,
    pub px_per_deg: f64,
}

impl SearchTimingParams {
    fn validate(&self) -> Result<()> {
        if self.median_fixation_time_ms <= 0.0
            || self.median_response_time_s <= 0.0
            || self.display.0 == 0
            || self.display.1 == 0
            || self.n_slices == 0
            || self.px_per_deg <= 0.0
        {
            return Err(Error::invalid("all timing parameters must be positive"));
        }
        Ok(())
    }
}

/// Bin index for an eccentricity; bins are `[k, k+1)`-style left edges and
/// the last bin is a catch-all.
pub fn bin_index(ecc_dva: f64, ecc_bins: &[f64]) -> usize {
    let mut idx = 0;
    for (i, &lo) in ecc_bins.iter().enumerate() {
        if ecc_dva >= lo {
            idx = i;
        }
    }
    idx
}

/// Simple average: m_E = 1/|bins|.
pub fn average_weights(ecc_bins: &[f64]) -> Result<WeightVector> {
    if ecc_bins.is_empty() {
        return Err(Error::invalid("ecc_bins must be non-empty"));
    }
    let n = ecc_bins.len();
    Ok(WeightVector {
        ecc_bins: ecc_bins.to_vec(),
        weights: vec![1.0 / n as f64; n],
        scheme: WeightScheme::Average,
        provenance: "uniform 1/n".into(),
    })
}

/// m_E proportional to the curve's own detectability: d'_E / sum d'_E.
pub fn dprime_weights(curve: &DPrimeCurve) -> Result<WeightVector> {
    let total: f64 = curve.dprime.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("all-zero d' curve".into()));
    }
    Ok(WeightVector {
        ecc_bins: curve.ecc_bins.clone(),
        weights: curve.dprime.iter().map(|d| d / total).collect(),
        scheme: WeightScheme::DprimeWeighted,
        provenance: format!("normalized {:?} curve", curve.method),
    })
}

/// Closest-fixation distribution measured from recorded eye movements:
/// per signal-present trial, the minimum in-slice distance from any fixation
/// to the signal, binned and normalized. Returns the weights and the number
/// of fixation-less trials skipped.
pub fn et_closest_fix_weights(
    log: &FixationLog,
    ecc_bins: &[f64],
    px_per_deg: f64,
) -> Result<(WeightVector, usize)> {
    if ecc_bins.is_empty() {
        return Err(Error::invalid("ecc_bins must be non-empty"));
    }
    let mut counts = vec![0usize; ecc_bins.len()];
    let mut used = 0usize;
    let mut skipped = 0usize;
    for trial in &log.trials {
        if !trial.signal_present {
            continue;
        }
        let (sx, sy, _) = trial
            .signal_xyz
            .ok_or_else(|| Error::invalid("signal-present trial without signal_xyz"))?;
        if trial.fixations.is_empty() {
            skipped += 1;
            continue;
        }
        let min_px = trial
            .fixations
            .iter()
            .map(|&(fx, fy, _, _)| ((fx - sx).powi(2) + (fy - sy).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        counts[bin_index(min_px / px_per_deg, ecc_bins)] += 1;
        used += 1;
    }
    if used == 0 {
        return Err(Error::invalid(
            "no usable signal-present trials in fixation log",
        ));
    }
    let weights = counts.iter().map(|&c| c as f64 / used as f64).collect();
    Ok((
        WeightVector {
            ecc_bins: ecc_bins.to_vec(),
            weights,
            scheme: WeightScheme::EtClosest,
            provenance: format!("{used} trials used, {skipped} fixation-less trials skipped"),
        },
        skipped,
    ))
}

/// Fixation count estimate from timing: total, and per-slice for 3D.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixationCount {
    pub total: usize,
    pub per_slice: Option<usize>,
}

pub fn estimate_fixation_count(
    params: &SearchTimingParams,
    modality: Modality,
) -> Result<FixationCount> {
    params.validate()?;
    let n = (params.median_response_time_s * 1000.0 / params.median_fixation_time_ms).round()
        as usize;
    let total = n.max(1);
    let per_slice = match modality {
        Modality::TwoD => None,
        Modality::ThreeD => Some((total / params.n_slices).max(1)),
    };
    Ok(FixationCount { total, per_slice })
}

/// Equidistant fixation points on a rectangular grid covering the display:
/// the (rows, cols) shape minimizes |rows/cols - h/w| subject to
/// rows*cols >= count; the first `count` points in row-major order are
/// returned, at cell centers.
pub fn grid_fixations(count: usize, display: (usize, usize)) -> Result<Vec<(f64, f64)>> {
    if count == 0 {
        return Err(Error::invalid("fixation count must be >= 1"));
    }
    let (w, h) = display;
    if w == 0 || h == 0 {
        return Err(Error::invalid("display dims must be positive"));
    }
    let target = h as f64 / w as f64;
    let mut best: Option<(usize, usize, f64)> = None;
    for rows in 1..=count {
        let cols = count.div_ceil(rows);
        let diff = (rows as f64 / cols as f64 - target).abs();
        let better = match best {
            None => true,
            Some((br, bc, bd)) => {
                diff < bd - 1e-12
                    || ((diff - bd).abs() <= 1e-12 && rows * cols < br * bc)
            }
        };
        if better {
            best = Some((rows, cols, diff));
        }
    }
    let (rows, cols, _) = best.expect("count >= 1");
    let mut points = Vec::with_capacity(count);
    'outer: for i in 0..rows {
        for j in 0..cols {
            points.push((
                (j as f64 + 0.5) * w as f64 / cols as f64,
                (i as f64 + 0.5) * h as f64 / rows as f64,
            ));
            if points.len() == count {
                break 'outer;
            }
        }
    }
    Ok(points)
}

/// Per-pixel minimum distance to any fixation, in pixels.
pub fn min_distance_map(fixations: &[(f64, f64)], display: (usize, usize)) -> Array2<f64> {
    let (w, h) = display;
    Array2::from_shape_fn((h, w), |(y, x)| {
        fixations
            .iter()
            .map(|&(fx, fy)| ((x as f64 - fx).powi(2) + (y as f64 - fy).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    })
}

/// Closest-fixation distribution estimated from timing and display geometry:
/// grid fixations, the per-pixel minimum distance map, binned into a
/// probability over eccentricity bins. Deterministic, no RNG.
pub fn time_closest_fix_weights(
    params: &SearchTimingParams,
    modality: Modality,
    ecc_bins: &[f64],
) -> Result<WeightVector> {
    if ecc_bins.is_empty() {
        return Err(Error::invalid("ecc_bins must be non-empty"));
    }
    let count = estimate_fixation_count(params, modality)?;
    let per_map = match modality {
        Modality::TwoD => count.total,
        Modality::ThreeD => count.per_slice.unwrap(),
    };
    let fixations = grid_fixations(per_map, params.display)?;
    let dmap = min_distance_map(&fixations, params.display);
    let mut weights = vec![0.0; ecc_bins.len()];
    for &d in dmap.iter() {
        weights[bin_index(d / params.px_per_deg, ecc_bins)] += 1.0;
    }
    let total = dmap.len() as f64;
    for wv in &mut weights {
        *wv /= total;
    }
    Ok(WeightVector {
        ecc_bins: ecc_bins.to_vec(),
        weights,
        scheme: WeightScheme::TimeClosest,
        provenance: format!(
            "{} fixations on {}x{} display, {:?}",
            per_map, params.display.0, params.display.1, modality
        ),
    })
}

/// `<d'> = sum_E m_E d'_E`.
pub fn aggregate_dprime(curve: &DPrimeCurve, weights: &WeightVector) -> Result<f64> {
    if curve.ecc_bins.len() != weights.ecc_bins.len()
        || curve
            .ecc_bins
            .iter()
            .zip(weights.ecc_bins.iter())
            .any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return Err(Error::invalid("curve and weights use different ecc bins"));
    }
    Ok(curve
        .dprime
        .iter()
        .zip(weights.weights.iter())
        .map(|(d, m)| d * m)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectability::DPrimeMethod;
    use crate::stimulus::SignalKind;
    use crate::templates::ObserverModel;

    fn curve(bins: Vec<f64>, dprime: Vec<f64>) -> DPrimeCurve {
        DPrimeCurve {
            model: ObserverModel::Fnpwe,
            signal: SignalKind::Mass,
            modality: Modality::TwoD,
            ecc_bins: bins,
            dprime,
            method: DPrimeMethod::Analytic,
            n_trials: None,
            seed: None,
        }
    }

    #[test]
    fn average_weights_uniform() {
        let w = average_weights(&[0.0]).unwrap();
        assert_eq!(w.weights, vec![1.0]);
        let w10 = average_weights(&(0..10).map(|i| i as f64).collect::<Vec<_>>()).unwrap();
        assert!(w10.weights.iter().all(|&v| (v - 0.1).abs() < 1e-12));
        let c = curve((0..10).map(|i| i as f64).collect(), vec![3.5; 10]);
        assert!((aggregate_dprime(&c, &w10).unwrap() - 3.5).abs() < 1e-12);
    }

    #[test]
    fn dprime_weights_hand_case() {
        let c = curve(vec![0.0, 1.0], vec![3.0, 1.0]);
        let w = dprime_weights(&c).unwrap();
        assert!((w.weights[0] - 0.75).abs() < 1e-12);
        assert!((w.weights[1] - 0.25).abs() < 1e-12);
        assert!((aggregate_dprime(&c, &w).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn dprime_weights_degenerate_curve() {
        let c = curve(vec![0.0, 1.0], vec![0.0, 0.0]);
        assert!(dprime_weights(&c).is_err());
    }

    fn present_trial(id: &str, sx: f64, sy: f64, fix: Vec<(f64, f64, f64, f64)>) -> FixationTrial {
        FixationTrial {
            trial_id: id.into(),
            modality: Modality::TwoD,
            signal_present: true,
            signal_xyz: Some((sx, sy, 0.0)),
            fixations: fix,
        }
    }

    #[test]
    fn et_weights_on_signal_all_mass_in_bin_zero() {
        let log = FixationLog {
            trials: (0..5)
                .map(|i| {
                    present_trial(
                        &format!("t{i}"),
                        100.0,
                        100.0,
                        vec![(100.0, 100.0, 0.0, 250.0), (300.0, 10.0, 0.0, 250.0)],
                    )
                })
                .collect(),
        };
        let bins: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let (w, skipped) = et_closest_fix_weights(&log, &bins, 36.0).unwrap();
        assert_eq!(skipped, 0);
        assert_eq!(w.weights[0], 1.0);
    }

    #[test]
    fn et_weights_direct_binning() {
        // minima 0.4 dva and 2.3 dva with unit bins -> (0.5, 0, 0.5, 0, 0)
        let ppd = 10.0;
        let log = FixationLog {
            trials: vec![
                present_trial("a", 0.0, 0.0, vec![(4.0, 0.0, 0.0, 250.0)]),
                present_trial("b", 0.0, 0.0, vec![(23.0, 0.0, 0.0, 250.0)]),
            ],
        };
        let bins: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let (w, _) = et_closest_fix_weights(&log, &bins, ppd).unwrap();
        assert_eq!(w.weights, vec![0.5, 0.0, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn et_weights_skip_fixationless() {
        let log = FixationLog {
            trials: vec![
                present_trial("a", 0.0, 0.0, vec![(1.0, 0.0, 0.0, 100.0)]),
                present_trial("b", 0.0, 0.0, vec![]),
            ],
        };
        let (w, skipped) = et_closest_fix_weights(&log, &[0.0, 1.0], 36.0).unwrap();
        assert_eq!(skipped, 1);
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn et_weights_need_present_trials() {
        let log = FixationLog {
            trials: vec![FixationTrial {
                trial_id: "x".into(),
                modality: Modality::TwoD,
                signal_present: false,
                signal_xyz: None,
                fixations: vec![(1.0, 1.0, 0.0, 100.0)],
            }],
        };
        assert!(et_closest_fix_weights(&log, &[0.0], 36.0).is_err());
    }

    #[test]
    fn et_weights_permutation_invariant() {
        let mut log = FixationLog {
            trials: vec![
                present_trial("a", 50.0, 50.0, vec![(0.0, 0.0, 0.0, 1.0), (60.0, 50.0, 0.0, 1.0)]),
                present_trial("b", 10.0, 10.0, vec![(200.0, 10.0, 0.0, 1.0)]),
            ],
        };
        let bins: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let (w1, _) = et_closest_fix_weights(&log, &bins, 36.0).unwrap();
        log.trials.reverse();
        log.trials[1].fixations.reverse();
        let (w2, _) = et_closest_fix_weights(&log, &bins, 36.0).unwrap();
        assert_eq!(w1.weights, w2.weights);
    }

    fn paper_params() -> SearchTimingParams {
        SearchTimingParams {
            median_fixation_time_ms: 250.0,
            median_response_time_s: 3.16,
            display: (1024, 820),
            n_slices: 100,
            px_per_deg: 36.0,
        }
    }

    #[test]
    fn fixation_counts_from_paper_timing() {
        let p2 = paper_params();
        let c2 = estimate_fixation_count(&p2, Modality::TwoD).unwrap();
        assert_eq!(c2.total, 13); // 3.16 s / 250 ms
        let p3 = SearchTimingParams {
            median_fixation_time_ms: 500.0,
            median_response_time_s: 22.62,
            ..p2
        };
        let c3 = estimate_fixation_count(&p3, Modality::ThreeD).unwrap();
        assert_eq!(c3.total, 45); // 22.62 s / 500 ms
        assert_eq!(c3.per_slice, Some(1)); // max(1, floor(45/100))
    }

    #[test]
    fn single_fixation_when_times_match() {
        let p = SearchTimingParams {
            median_fixation_time_ms: 250.0,
            median_response_time_s: 0.25,
            ..paper_params()
        };
        assert_eq!(estimate_fixation_count(&p, Modality::TwoD).unwrap().total, 1);
    }

    #[test]
    fn grid_single_point_is_center() {
        let pts = grid_fixations(1, (100, 60)).unwrap();
        assert_eq!(pts, vec![(50.0, 30.0)]);
    }

    #[test]
    fn grid_four_on_square() {
        let pts = grid_fixations(4, (100, 100)).unwrap();
        assert_eq!(
            pts,
            vec![(25.0, 25.0), (75.0, 25.0), (25.0, 75.0), (75.0, 75.0)]
        );
    }

    #[test]
    fn grid_six_is_landscape_three_by_two() {
        // aspect-ratio rule oracle: 2 rows x 3 cols on 1024x820
        let pts = grid_fixations(6, (1024, 820)).unwrap();
        assert_eq!(pts.len(), 6);
        let ys: std::collections::BTreeSet<i64> = pts.iter().map(|p| p.1 as i64).collect();
        let xs: std::collections::BTreeSet<i64> = pts.iter().map(|p| p.0 as i64).collect();
        assert_eq!(ys.len(), 2);
        assert_eq!(xs.len(), 3);
    }

    #[test]
    fn time_weights_single_central_fixation_annulus_areas() {
        let params = SearchTimingParams {
            median_fixation_time_ms: 250.0,
            median_response_time_s: 0.25,
            display: (400, 400),
            n_slices: 1,
            px_per_deg: 40.0,
        };
        let bins: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let w = time_closest_fix_weights(&params, Modality::TwoD, &bins).unwrap();
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // analytic annulus-area fractions for bins inside the inscribed circle
        let l = 400.0f64;
        for k in 0..2 {
            let r1 = k as f64 * 40.0;
            let r2 = (k + 1) as f64 * 40.0;
            let frac = std::f64::consts::PI * (r2 * r2 - r1 * r1) / (l * l);
            assert!(
                (w.weights[k] - frac).abs() / frac < 0.02,
                "bin {k}: {} vs {frac}",
                w.weights[k]
            );
        }
        // max distance is the corner, L/sqrt(2)
        let dmap = min_distance_map(&[(200.0, 200.0)], (400, 400));
        let maxd = dmap.iter().cloned().fold(0.0, f64::max);
        assert!((maxd - l / 2f64.sqrt()).abs() < 2.0);
    }

    #[test]
    fn time_weights_2d_more_foveal_than_3d() {
        let p2 = paper_params();
        let p3 = SearchTimingParams {
            median_fixation_time_ms: 500.0,
            median_response_time_s: 22.62,
            ..p2
        };
        let bins: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let w2 = time_closest_fix_weights(&p2, Modality::TwoD, &bins).unwrap();
        let w3 = time_closest_fix_weights(&p3, Modality::ThreeD, &bins).unwrap();
        assert!(w2.weights[0] > w3.weights[0]);
    }

    #[test]
    fn aggregate_is_convex_combination() {
        let c = curve(vec![0.0, 1.0], vec![2.0, 4.0]);
        let w = average_weights(&[0.0, 1.0]).unwrap();
        let a = aggregate_dprime(&c, &w).unwrap();
        assert!((a - 3.0).abs() < 1e-12);
        assert!(a >= 2.0 && a <= 4.0);
    }

    #[test]
    fn aggregate_rejects_bin_mismatch() {
        let c = curve(vec![0.0, 1.0], vec![2.0, 4.0]);
        let w = average_weights(&[0.0, 2.0]).unwrap();
        assert!(aggregate_dprime(&c, &w).is_err());
    }
}

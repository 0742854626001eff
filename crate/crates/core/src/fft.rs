//! Small FFT helpers over `ndarray` arrays, built on `rustfft`.
//!
//! Transforms are unnormalized forward and 1/N-normalized inverse, so
//! `ifft(fft(x)) == x`.

use ndarray::{Array2, Array3, ArrayViewMut2, ArrayViewMut3, Axis};
use num_complex::Complex64;
use rustfft::FftPlanner;

fn transform_axis_2d(data: &mut ArrayViewMut2<Complex64>, axis: Axis, inverse: bool) {
    let n = data.len_of(axis);
    if n <= 1 {
        return;
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let mut lane_buf = vec![Complex64::default(); n];
    for mut lane in data.lanes_mut(axis) {
        for (b, v) in lane_buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        fft.process(&mut lane_buf);
        for (v, b) in lane.iter_mut().zip(lane_buf.iter()) {
            *v = *b;
        }
    }
}

fn transform_axis_3d(data: &mut ArrayViewMut3<Complex64>, axis: Axis, inverse: bool) {
    let n = data.len_of(axis);
    if n <= 1 {
        return;
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let mut lane_buf = vec![Complex64::default(); n];
    for mut lane in data.lanes_mut(axis) {
        for (b, v) in lane_buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        fft.process(&mut lane_buf);
        for (v, b) in lane.iter_mut().zip(lane_buf.iter()) {
            *v = *b;
        }
    }
}

pub fn fft2(input: &Array2<f64>) -> Array2<Complex64> {
    let mut data = input.mapv(|v| Complex64::new(v, 0.0));
    transform_axis_2d(&mut data.view_mut(), Axis(0), false);
    transform_axis_2d(&mut data.view_mut(), Axis(1), false);
    data
}

pub fn fft2_complex(data: &mut Array2<Complex64>) {
    transform_axis_2d(&mut data.view_mut(), Axis(0), false);
    transform_axis_2d(&mut data.view_mut(), Axis(1), false);
}

pub fn ifft2(data: &mut Array2<Complex64>) {
    transform_axis_2d(&mut data.view_mut(), Axis(0), true);
    transform_axis_2d(&mut data.view_mut(), Axis(1), true);
    let scale = 1.0 / data.len() as f64;
    data.mapv_inplace(|v| v * scale);
}

pub fn fft3(input: &Array3<f64>) -> Array3<Complex64> {
    let mut data = input.mapv(|v| Complex64::new(v, 0.0));
    transform_axis_3d(&mut data.view_mut(), Axis(0), false);
    transform_axis_3d(&mut data.view_mut(), Axis(1), false);
    transform_axis_3d(&mut data.view_mut(), Axis(2), false);
    data
}

pub fn ifft3(data: &mut Array3<Complex64>) {
    transform_axis_3d(&mut data.view_mut(), Axis(0), true);
    transform_axis_3d(&mut data.view_mut(), Axis(1), true);
    transform_axis_3d(&mut data.view_mut(), Axis(2), true);
    let scale = 1.0 / data.len() as f64;
    data.mapv_inplace(|v| v * scale);
}

/// Signed DFT frequency index for bin `k` of an `n`-point transform,
/// in cycles per array length (`0, 1, ..., n/2, -(n/2-1), ..., -1`).
pub fn freq_index(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Frequency in cycles per sample for bin `k` of an `n`-point transform.
pub fn freq_cycles_per_sample(k: usize, n: usize) -> f64 {
    freq_index(k, n) / n as f64
}

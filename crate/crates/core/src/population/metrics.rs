use alloc::vec::Vec;

use crate::error::{invalid, Result};

/// Synchronization order parameter `|mean(exp(2πiφ))|` of phases in cycles.
/// Returns 0 for an empty slice.
pub fn order_parameter(phases: &[f64]) -> f64 {
    if phases.is_empty() {
        return 0.0;
    }
    let (mut re, mut im) = (0.0, 0.0);
    for &phi in phases {
        let a = 2.0 * core::f64::consts::PI * phi;
        re += libm::cos(a);
        im += libm::sin(a);
    }
    let n = phases.len() as f64;
    libm::hypot(re / n, im / n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Amplitude {
    pub peak_to_peak: f64,
    pub std: f64,
    pub mean: f64,
}

/// Indices of grid times inside `[start, end]`.
fn window_range(times: &[f64], start: f64, end: f64) -> core::ops::Range<usize> {
    let a = times.partition_point(|&t| t < start);
    let b = times.partition_point(|&t| t <= end);
    a..b.max(a)
}

/// Statistics of `values` sampled at `times` over the closed window
/// `[start, end]`. Population standard deviation.
pub fn oscillation_amplitude(times: &[f64], values: &[f64], start: f64, end: f64) -> Result<Amplitude> {
    if times.len() != values.len() {
        return Err(invalid("times and values differ in length"));
    }
    let range = window_range(times, start, end);
    if range.is_empty() {
        return Err(invalid(alloc::format!("no samples in window [{start}, {end}]")));
    }
    Ok(stats(&values[range]))
}

fn stats(xs: &[f64]) -> Amplitude {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    Amplitude {
        peak_to_peak: hi - lo,
        std: libm::sqrt(var),
        mean,
    }
}

/// Largest sample in `[start, end]`, with its time.
pub fn peak_in_window(times: &[f64], values: &[f64], start: f64, end: f64) -> Result<(f64, f64)> {
    if times.len() != values.len() {
        return Err(invalid("times and values differ in length"));
    }
    let range = window_range(times, start, end);
    range
        .map(|i| (times[i], values[i]))
        .fold(None, |best: Option<(f64, f64)>, (t, v)| match best {
            Some((_, bv)) if bv >= v => best,
            _ => Some((t, v)),
        })
        .ok_or_else(|| invalid(alloc::format!("no samples in window [{start}, {end}]")))
}

/// Hours after `from` until the first window of length `window` (starting
/// at a grid point at or after `from`) whose standard deviation is below
/// `fraction` of its mean. `None` if that never happens before the trace ends.
pub fn settling_time(times: &[f64], values: &[f64], from: f64, window: f64, fraction: f64) -> Result<Option<f64>> {
    if times.len() != values.len() {
        return Err(invalid("times and values differ in length"));
    }
    if !(window > 0.0) {
        return Err(invalid("window must be positive"));
    }
    // prefix sums over shifted values keep the variance numerically stable
    let shift = values.first().copied().unwrap_or(0.0);
    let mut s1 = Vec::with_capacity(values.len() + 1);
    let mut s2 = Vec::with_capacity(values.len() + 1);
    s1.push(0.0);
    s2.push(0.0);
    for &v in values {
        let d = v - shift;
        s1.push(s1.last().unwrap() + d);
        s2.push(s2.last().unwrap() + d * d);
    }
    let start = times.partition_point(|&t| t < from);
    let mut end = start;
    for a in start..times.len() {
        let limit = times[a] + window;
        if limit > *times.last().unwrap() {
            break;
        }
        while end < times.len() && times[end] <= limit {
            end += 1;
        }
        let n = (end - a) as f64;
        let m = (s1[end] - s1[a]) / n;
        let var = ((s2[end] - s2[a]) / n - m * m).max(0.0);
        let mean = m + shift;
        if libm::sqrt(var) < fraction * mean {
            return Ok(Some(times[a] - from));
        }
    }
    Ok(None)
}

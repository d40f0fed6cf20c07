use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn columns(signal: &Tensor, start: usize, len: usize) -> Tensor {
    let (c, t) = (signal.shape()[0], signal.shape()[1]);
    let mut data = Vec::with_capacity(c * len);
    for r in 0..c {
        data.extend_from_slice(&signal.data()[r * t + start..r * t + start + len]);
    }
    Tensor::from_parts(vec![c, len], data)
}

fn check_matrix(signal: &Tensor) -> Result<usize> {
    if signal.ndim() != 2 {
        return Err(Error::Shape(format!("expected C×T, got {:?}", signal.shape())));
    }
    Ok(signal.shape()[1])
}

/// Cuts a `C×T` stream into consecutive non-overlapping windows of
/// `round(delta_t_s · rate_hz)` samples; a trailing partial window is dropped.
pub fn segment_utterance(signal: &Tensor, delta_t_s: f64, rate_hz: f64) -> Result<Vec<Tensor>> {
    if !(delta_t_s > 0.0 && delta_t_s.is_finite()) || !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(Error::Argument(format!("window {delta_t_s} s at {rate_hz} Hz: both must be positive")));
    }
    let t = check_matrix(signal)?;
    let len = (delta_t_s * rate_hz).round();
    if len < 1.0 {
        return Err(Error::Argument(format!("{delta_t_s} s at {rate_hz} Hz is under one sample")));
    }
    let len = len as usize;
    Ok((0..t / len).map(|k| columns(signal, k * len, len)).collect())
}

/// Evenly spaced start offsets for `num_windows` windows of `window_len` inside `total`.
pub fn window_starts(total: usize, window_len: usize, num_windows: usize) -> Result<Vec<usize>> {
    if window_len == 0 || window_len > total {
        return Err(Error::Argument(format!("window of {window_len} does not fit a trial of {total}")));
    }
    if num_windows == 0 {
        return Err(Error::Argument("need at least one window".into()));
    }
    if num_windows == 1 {
        return Ok(vec![0]);
    }
    let span = (total - window_len) as f64;
    Ok((0..num_windows).map(|k| (k as f64 * span / (num_windows - 1) as f64).round() as usize).collect())
}

/// Overlapping-window augmentation of one `C×T` trial.
pub fn window_trial_overlapping(trial: &Tensor, window_len: usize, num_windows: usize) -> Result<Vec<Tensor>> {
    let t = check_matrix(trial)?;
    Ok(window_starts(t, window_len, num_windows)?.into_iter().map(|s| columns(trial, s, window_len)).collect())
}

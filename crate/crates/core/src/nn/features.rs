use ndarray::{Array2, ArrayView2, Axis};

/// Per-sequence, per-bin z-score of `ln(1 + magnitude)`. Bins with zero
/// variance map to 0. Statistics are computed from this sequence alone.
pub fn normalize_features(mag: ArrayView2<f64>) -> Array2<f64> {
    let mut log = mag.mapv(f64::ln_1p);
    let t = log.nrows() as f64;
    if t == 0.0 {
        return log;
    }
    let mean = log.sum_axis(Axis(0)) / t;
    log -= &mean;
    let var = log.mapv(|v| v * v).sum_axis(Axis(0)) / t;
    let inv_std = var.mapv(|v| if v > 1e-20 { 1.0 / v.sqrt() } else { 0.0 });
    log *= &inv_std;
    log
}

use super::AggregationError;

/// Overflow only when the exact total does not fit in `i64`.
pub fn agg_sum(values: &[i64]) -> Result<i64, AggregationError> {
    let total: i128 = values.iter().map(|&v| i128::from(v)).sum();
    i64::try_from(total).map_err(|_| AggregationError::Overflow)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistogramResult {
    pub counts: Vec<u64>,
    /// Values outside `[min, max)`.
    pub dropped: u64,
}

/// Uniform bins over `[min, max)`; out-of-range values land in `dropped`.
pub fn agg_histogram(values: &[f64], min: f64, max: f64, bins: u32) -> Result<HistogramResult, AggregationError> {
    check_histogram(min, max, bins)?;
    let n = bins as usize;
    let width = (max - min) / f64::from(bins);
    let edge = |i: usize| histogram_edge(min, max, bins, i);
    let mut counts = vec![0u64; n];
    let mut dropped = 0u64;
    for &v in values {
        if !(v >= min && v < max) {
            dropped += 1;
            continue;
        }
        let mut idx = (((v - min) / width).floor() as usize).min(n - 1);
        while idx > 0 && v < edge(idx) {
            idx -= 1;
        }
        while idx + 1 < n && v >= edge(idx + 1) {
            idx += 1;
        }
        counts[idx] += 1;
    }
    Ok(HistogramResult { counts, dropped })
}

/// Lower edge of bin `i`; edge `bins` is `max`. Bin `i` is
/// `[edge(i), edge(i + 1))`.
pub fn histogram_edge(min: f64, max: f64, bins: u32, i: usize) -> f64 {
    if i >= bins as usize {
        max
    } else {
        min + (i as f64 / f64::from(bins)) * (max - min)
    }
}

pub(crate) fn check_histogram(min: f64, max: f64, bins: u32) -> Result<(), AggregationError> {
    if !(min.is_finite() && max.is_finite() && min < max) {
        return Err(AggregationError::InvalidArgument(format!("histogram range [{min}, {max}) is empty")));
    }
    if bins == 0 {
        return Err(AggregationError::InvalidArgument("histogram needs at least one bin".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsfResult {
    pub c0: f64,
    pub c1: f64,
}

/// Ordinary least squares line `y = c0 + c1 x`, centered form.
pub fn agg_lsf(points: &[(f64, f64)]) -> Result<LsfResult, AggregationError> {
    if points.len() < 2 {
        return Err(AggregationError::DegenerateInput(format!("{} points, need at least 2", points.len())));
    }
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x, sy + y));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(x, y) in points {
        let dx = x - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        return Err(AggregationError::DegenerateInput("x has zero variance".into()));
    }
    let c1 = sxy / sxx;
    let c0 = my - c1 * mx;
    if !(c0.is_finite() && c1.is_finite()) {
        return Err(AggregationError::DegenerateInput("fit is not finite".into()));
    }
    Ok(LsfResult { c0, c1 })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZoneDistribution {
    pub zones_per_side: u32,
    /// Row-major: index `zy * zones_per_side + zx`.
    pub counts: Vec<u64>,
    pub out_of_bounds: u64,
}

impl ZoneDistribution {
    pub fn get(&self, zx: u32, zy: u32) -> u64 {
        self.counts[(zy * self.zones_per_side + zx) as usize]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub(crate) fn check_zones(grid_side: u32, zone_side: u32) -> Result<u32, AggregationError> {
    if grid_side == 0 || zone_side == 0 || !grid_side.is_multiple_of(zone_side) {
        return Err(AggregationError::InvalidArgument(format!(
            "zone side {zone_side} must be positive and divide grid side {grid_side}"
        )));
    }
    Ok(grid_side / zone_side)
}

/// Zone `k` spans `[k * zone, (k + 1) * zone)`; `c` is in `[0, grid)`.
fn zone_index(c: f64, zone: f64, per_side: u32) -> u32 {
    let mut k = ((c / zone).floor() as u32).min(per_side - 1);
    while k > 0 && c < f64::from(k) * zone {
        k -= 1;
    }
    while k + 1 < per_side && c >= f64::from(k + 1) * zone {
        k += 1;
    }
    k
}

pub fn agg_zone_count(
    positions: &[(f64, f64)],
    grid_side: u32,
    zone_side: u32,
) -> Result<ZoneDistribution, AggregationError> {
    let per_side = check_zones(grid_side, zone_side)?;
    let grid = f64::from(grid_side);
    let zone = f64::from(zone_side);
    let mut counts = vec![0u64; (per_side as usize) * (per_side as usize)];
    let mut out_of_bounds = 0;
    for &(x, y) in positions {
        if !(x >= 0.0 && x < grid && y >= 0.0 && y < grid) {
            out_of_bounds += 1;
            continue;
        }
        let zx = zone_index(x, zone, per_side);
        let zy = zone_index(y, zone, per_side);
        counts[(zy * per_side + zx) as usize] += 1;
    }
    if out_of_bounds > 0 {
        log::debug!("zone count ignored {out_of_bounds} out-of-bounds positions");
    }
    Ok(ZoneDistribution { zones_per_side: per_side, counts, out_of_bounds })
}

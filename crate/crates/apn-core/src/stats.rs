//! Sensors and cross-replication statistics.
//!
//! Sensors are computed online while a replication runs (piecewise-constant
//! integration between events), so traces can stay disabled for large runs.
//! [`aggregate`] folds per-replication samples into means, standard errors
//! and the Pearson correlation matrix.

use alloc::string::String;
use alloc::vec::Vec;

use crate::model::{Color, Net, PlaceId, Relation, SensorKind, Time, TransitionId};

/// Resolve every sensor's measurement window against the run horizon.
///
/// Priority: the sensor's own window, then `default_window` (e.g. a file- or
/// command-level override), then `[horizon/2, horizon]`.
pub fn resolve_windows(
    net: &Net,
    horizon: Time,
    default_window: Option<(Time, Time)>,
) -> Result<Vec<(Time, Time)>, WindowError> {
    let fallback = default_window.unwrap_or((horizon / 2.0, horizon));
    net.sensors()
        .iter()
        .map(|s| {
            let (t1, t2) = s.window.unwrap_or(fallback);
            if !(t1 >= 0.0 && t1 < t2 && t2 <= horizon) {
                return Err(WindowError {
                    sensor: s.name.clone(),
                    window: (t1, t2),
                    horizon,
                });
            }
            Ok((t1, t2))
        })
        .collect()
}

#[derive(Clone, PartialEq, Debug)]
pub struct WindowError {
    pub sensor: String,
    pub window: (Time, Time),
    pub horizon: Time,
}

impl core::fmt::Display for WindowError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "sensor {}: window [{}, {}] must satisfy 0 <= t1 < t2 <= horizon {}",
            self.sensor, self.window.0, self.window.1, self.horizon
        )
    }
}

struct SensorState {
    kind: SensorKind,
    window: (Time, Time),
    /// Current matching-token count (place sensors).
    count: u32,
    /// Integral of count over window (time_average) or time the relation held
    /// (threshold).
    accum: f64,
    /// Event counter (upcrossings, firing_count).
    events: u64,
}

impl SensorState {
    fn place_and_filter(&self) -> Option<(PlaceId, Option<&alloc::collections::BTreeSet<Color>>)> {
        match &self.kind {
            SensorKind::TimeAverage { place, filter } => Some((*place, filter.as_ref())),
            SensorKind::Threshold { place, .. } => Some((*place, None)),
            SensorKind::Upcrossings { place, .. } => Some((*place, None)),
            SensorKind::FiringCount { .. } => None,
        }
    }
}

/// Replication-local sensor evaluation, driven by the engine.
pub struct SensorAccumulator {
    sensors: Vec<SensorState>,
    by_place: Vec<Vec<usize>>,
    by_transition: Vec<Vec<usize>>,
    /// Crossings are not counted while the initial marking is laid down.
    live: bool,
}

impl SensorAccumulator {
    pub fn new(net: &Net, windows: &[(Time, Time)]) -> Self {
        assert_eq!(net.sensors().len(), windows.len());
        let sensors: Vec<SensorState> = net
            .sensors()
            .iter()
            .zip(windows)
            .map(|(s, &window)| SensorState {
                kind: s.kind.clone(),
                window,
                count: 0,
                accum: 0.0,
                events: 0,
            })
            .collect();
        let mut by_place = alloc::vec![Vec::new(); net.place_count()];
        let mut by_transition = alloc::vec![Vec::new(); net.transition_count()];
        for (i, s) in sensors.iter().enumerate() {
            match &s.kind {
                SensorKind::TimeAverage { place, .. }
                | SensorKind::Threshold { place, .. }
                | SensorKind::Upcrossings { place, .. } => by_place[place.0].push(i),
                SensorKind::FiringCount { transition } => by_transition[transition.0].push(i),
            }
        }
        SensorAccumulator { sensors, by_place, by_transition, live: false }
    }

    /// End of initial-marking placement; crossings count from here on.
    pub fn go_live(&mut self) {
        self.live = true;
    }

    /// Integrate the piecewise-constant counts over [from, to].
    pub fn advance(&mut self, from: Time, to: Time) {
        for s in &mut self.sensors {
            let (t1, t2) = s.window;
            let lo = if from > t1 { from } else { t1 };
            let hi = if to < t2 { to } else { t2 };
            if hi <= lo {
                continue;
            }
            let dt = hi - lo;
            match &s.kind {
                SensorKind::TimeAverage { .. } => s.accum += s.count as f64 * dt,
                SensorKind::Threshold { count, relation, .. } => {
                    let holds = match relation {
                        Relation::AtLeast => s.count >= *count,
                        Relation::AtMost => s.count <= *count,
                    };
                    if holds {
                        s.accum += dt;
                    }
                }
                _ => {}
            }
        }
    }

    /// A token of the given color entered (`delta = +1`) or left (`-1`) the
    /// place at time `at`.
    pub fn on_count_change(&mut self, place: PlaceId, color: Color, delta: i32, at: Time) {
        for &i in &self.by_place[place.0] {
            let s = &mut self.sensors[i];
            let matches = match s.place_and_filter() {
                Some((_, Some(filter))) => filter.contains(&color),
                _ => true,
            };
            if !matches {
                continue;
            }
            let old = s.count;
            s.count = (s.count as i64 + delta as i64) as u32;
            if let SensorKind::Upcrossings { count, .. } = &s.kind {
                if self.live && old < *count && s.count >= *count {
                    let (t1, t2) = s.window;
                    if at >= t1 && at <= t2 {
                        s.events += 1;
                    }
                }
            }
        }
    }

    pub fn on_fire(&mut self, transition: TransitionId, at: Time) {
        for &i in &self.by_transition[transition.0] {
            let s = &mut self.sensors[i];
            let (t1, t2) = s.window;
            if at >= t1 && at <= t2 {
                s.events += 1;
            }
        }
    }

    /// Per-sensor sample values for this replication.
    pub fn finalize(self) -> Vec<f64> {
        self.sensors
            .into_iter()
            .map(|s| {
                let (t1, t2) = s.window;
                match s.kind {
                    SensorKind::TimeAverage { .. } | SensorKind::Threshold { .. } => {
                        s.accum / (t2 - t1)
                    }
                    SensorKind::Upcrossings { .. } | SensorKind::FiringCount { .. } => {
                        s.events as f64
                    }
                }
            })
            .collect()
    }
}

/// Aggregated cross-replication statistics for one sensor.
#[derive(Clone, PartialEq, Debug)]
pub struct SensorStats {
    pub name: String,
    pub mean: f64,
    /// Unbiased sample standard deviation; NaN when fewer than 2 replications.
    pub std_dev: f64,
    /// `std_dev / sqrt(replications)`.
    pub std_error: f64,
    /// Constant across replications (or too few replications to tell).
    pub degenerate: bool,
}

/// Cross-replication report: per-sensor statistics plus the correlation
/// matrix of per-replication sensor values (symmetric, unit diagonal;
/// rows/columns of degenerate sensors are zero off the diagonal).
#[derive(Clone, PartialEq, Debug)]
pub struct SensorReport {
    pub replications: u64,
    pub sensors: Vec<SensorStats>,
    pub correlation: Vec<Vec<f64>>,
}

/// Fold per-replication samples (`samples[rep][sensor]`) into a report.
/// The fold is carried out in replication order, so the result does not
/// depend on the order replications finished.
pub fn aggregate(names: &[String], samples: &[Vec<f64>]) -> SensorReport {
    let n = samples.len();
    let k = names.len();
    let mut means = alloc::vec![0.0f64; k];
    for row in samples {
        assert_eq!(row.len(), k, "sample row length mismatch");
        for (m, &x) in means.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut means {
        *m /= n.max(1) as f64;
    }

    // Central co-moments, accumulated in replication order.
    let mut cov = alloc::vec![alloc::vec![0.0f64; k]; k];
    if n >= 2 {
        for row in samples {
            for i in 0..k {
                let di = row[i] - means[i];
                for j in i..k {
                    cov[i][j] += di * (row[j] - means[j]);
                }
            }
        }
        let denom = (n - 1) as f64;
        for i in 0..k {
            for j in i..k {
                cov[i][j] /= denom;
                cov[j][i] = cov[i][j];
            }
        }
    }

    let sensors: Vec<SensorStats> = (0..k)
        .map(|i| {
            let var = cov[i][i];
            let (std_dev, std_error, degenerate) = if n < 2 {
                (f64::NAN, f64::NAN, true)
            } else {
                let sd = libm::sqrt(var);
                (sd, sd / libm::sqrt(n as f64), var == 0.0)
            };
            SensorStats {
                name: names[i].clone(),
                mean: means[i],
                std_dev,
                std_error,
                degenerate,
            }
        })
        .collect();

    let mut correlation = alloc::vec![alloc::vec![0.0f64; k]; k];
    for i in 0..k {
        correlation[i][i] = 1.0;
        for j in (i + 1)..k {
            let r = if sensors[i].degenerate || sensors[j].degenerate {
                0.0
            } else {
                cov[i][j] / (sensors[i].std_dev * sensors[j].std_dev)
            };
            correlation[i][j] = r;
            correlation[j][i] = r;
        }
    }

    SensorReport { replications: n as u64, sensors, correlation }
}

/// Variance of a weighted sum of sensors, `w . x`, from the report:
/// `sum_ij w_i w_j r_ij s_i s_j` with `r` the correlation matrix and `s`
/// the sample standard deviations.
pub fn linear_combination_variance(report: &SensorReport, weights: &[f64]) -> f64 {
    let k = report.sensors.len();
    assert_eq!(weights.len(), k);
    let mut var = 0.0;
    for i in 0..k {
        for j in 0..k {
            var += weights[i]
                * weights[j]
                * report.correlation[i][j]
                * report.sensors[i].std_dev
                * report.sensors[j].std_dev;
        }
    }
    var
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| alloc::format!("s{i}")).collect()
    }

    #[test]
    fn identical_sensors_correlate_exactly_one() {
        let samples = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![5.0, 5.0]];
        let report = aggregate(&names(2), &samples);
        assert_eq!(report.correlation[0][1], 1.0);
    }

    #[test]
    fn negated_sensor_correlates_exactly_minus_one() {
        let samples = vec![vec![1.0, -1.0], vec![2.0, -2.0], vec![5.0, -5.0]];
        let report = aggregate(&names(2), &samples);
        assert_eq!(report.correlation[0][1], -1.0);
    }

    #[test]
    fn degenerate_sensor_is_flagged_with_zero_correlations() {
        let samples = vec![vec![1.0, 3.0], vec![2.0, 3.0], vec![4.0, 3.0]];
        let report = aggregate(&names(2), &samples);
        assert!(!report.sensors[0].degenerate);
        assert!(report.sensors[1].degenerate);
        assert_eq!(report.correlation[0][1], 0.0);
        assert_eq!(report.correlation[1][1], 1.0);
    }

    #[test]
    fn single_replication_is_degenerate_with_nan_error() {
        let report = aggregate(&names(1), &[vec![2.5]]);
        assert_eq!(report.sensors[0].mean, 2.5);
        assert!(report.sensors[0].std_error.is_nan());
        assert!(report.sensors[0].degenerate);
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let samples = vec![vec![1.0, 4.0], vec![2.0, 6.0], vec![3.0, 5.0], vec![0.5, 4.5]];
        let mut shuffled = samples.clone();
        shuffled.swap(0, 3);
        shuffled.swap(1, 2);
        let a = aggregate(&names(2), &samples);
        let b = aggregate(&names(2), &shuffled);
        for i in 0..2 {
            assert!((a.sensors[i].mean - b.sensors[i].mean).abs() < 1e-12);
            assert!((a.sensors[i].std_dev - b.sensors[i].std_dev).abs() < 1e-12);
        }
        assert!((a.correlation[0][1] - b.correlation[0][1]).abs() < 1e-12);
    }

    #[test]
    fn correlation_entries_stay_bounded() {
        let samples = vec![
            vec![1.0, 2.0, -1.0],
            vec![2.0, 3.5, 0.5],
            vec![3.0, 5.5, -2.0],
            vec![4.0, 7.0, 1.0],
        ];
        let report = aggregate(&names(3), &samples);
        for row in &report.correlation {
            for &r in row {
                assert!(r.abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn linear_combination_variance_matches_direct_computation() {
        let samples = vec![vec![1.0, 2.0], vec![2.0, 1.0], vec![4.0, 3.0], vec![3.0, 7.0]];
        let report = aggregate(&names(2), &samples);
        let w = [2.0, -1.5];
        let combined: Vec<f64> = samples.iter().map(|r| w[0] * r[0] + w[1] * r[1]).collect();
        let mean = combined.iter().sum::<f64>() / combined.len() as f64;
        let direct =
            combined.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (combined.len() - 1) as f64;
        let via_matrix = linear_combination_variance(&report, &w);
        assert!((direct - via_matrix).abs() < 1e-9, "{direct} vs {via_matrix}");
    }

    #[test]
    fn window_resolution_prefers_explicit_then_default() {
        let mut b = crate::model::NetBuilder::new();
        b.place("P");
        b.transition("t").from("P").to("P").wildcard(crate::model::DelayPolicy::fixed(1.0));
        b.sensor_time_average("explicit", "P").window(10.0, 20.0);
        b.sensor_time_average("defaulted", "P");
        let net = b.finish().unwrap();
        let w = resolve_windows(&net, 100.0, None).unwrap();
        // sensors sorted by name: defaulted, explicit
        assert_eq!(w, vec![(50.0, 100.0), (10.0, 20.0)]);
        let w = resolve_windows(&net, 100.0, Some((5.0, 25.0))).unwrap();
        assert_eq!(w, vec![(5.0, 25.0), (10.0, 20.0)]);
        assert!(resolve_windows(&net, 15.0, None).is_err());
    }
}

//! Frame normalization, decision windows, occupancy.

use crate::classify::Dataset;
use crate::ingest::{SensorFrame, SessionRecording};
use crate::{MAX_READING, SENSOR_COUNT};

pub const DEFAULT_WINDOW_LEN: usize = 20;
pub const DEFAULT_TAU_OCCUPIED: u32 = 400;
pub const WINDOW_FEATURE_DIM: usize = SENSOR_COUNT * 4;

/// Readings scaled into [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; SENSOR_COUNT]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn normalize_frame(frame: &SensorFrame) -> FeatureVector {
    let mut values = [0.0; SENSOR_COUNT];
    for (v, &r) in values.iter_mut().zip(frame.readings()) {
        *v = f64::from(r) / f64::from(MAX_READING);
    }
    FeatureVector(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window<'a> {
    pub frames: &'a [SensorFrame],
    pub start_index: usize,
}

/// Fully populated windows at offsets `0, stride, 2*stride, ...`; a trailing
/// partial window is dropped.
pub fn windows(frames: &[SensorFrame], window_len: usize, stride: usize) -> Vec<Window<'_>> {
    assert!(window_len >= 1 && stride >= 1, "window_len and stride must be positive");
    (0..)
        .map(|i| i * stride)
        .take_while(|&start| start + window_len <= frames.len())
        .map(|start| Window { frames: &frames[start..start + window_len], start_index: start })
        .collect()
}

/// Someone is seated when the summed readings reach `tau_occupied`.
pub fn occupancy(frame: &SensorFrame, tau_occupied: u32) -> bool {
    frame.total() >= tau_occupied
}

pub fn occupied_count(frames: &[SensorFrame], tau_occupied: u32) -> usize {
    frames.iter().filter(|f| occupancy(f, tau_occupied)).count()
}

/// Per sensor: normalized mean, population std, min, max; sensor-major, 64 values.
///
/// Moments are accumulated in integer counts so a constant sensor yields an
/// exact zero std and `mean == min == max`.
pub fn window_features(window: &Window<'_>) -> Vec<f64> {
    let n = window.frames.len() as u64;
    let scale = f64::from(MAX_READING);
    let mut out = Vec::with_capacity(WINDOW_FEATURE_DIM);
    for sensor in 0..SENSOR_COUNT {
        let counts = window.frames.iter().map(|f| u64::from(f.readings()[sensor]));
        let sum: u64 = counts.clone().sum();
        let sum_sq: u64 = counts.clone().map(|c| c * c).sum();
        let min = counts.clone().min().unwrap_or(0);
        let max = counts.max().unwrap_or(0);
        let nf = n.max(1) as f64;
        // n·Σc² − (Σc)² ≥ 0 exactly in integers.
        let spread = (n * sum_sq - sum * sum) as f64;
        out.extend([
            sum as f64 / nf / scale,
            spread.sqrt() / nf / scale,
            min as f64 / scale,
            max as f64 / scale,
        ]);
    }
    out
}

/// Classifier instance granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureMode {
    /// One instance per 0.5 s frame.
    #[default]
    Frame,
    /// One 64-dimensional aggregate per window.
    Window,
}

impl FeatureMode {
    pub fn name(self) -> &'static str {
        match self {
            FeatureMode::Frame => "frame",
            FeatureMode::Window => "window",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "frame" => Some(FeatureMode::Frame),
            "window" => Some(FeatureMode::Window),
            _ => None,
        }
    }

    pub fn dim(self) -> usize {
        match self {
            FeatureMode::Frame => SENSOR_COUNT,
            FeatureMode::Window => WINDOW_FEATURE_DIM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureConfig {
    pub mode: FeatureMode,
    pub window_len: usize,
    pub stride: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { mode: FeatureMode::Frame, window_len: DEFAULT_WINDOW_LEN, stride: DEFAULT_WINDOW_LEN }
    }
}

/// Appends the instances of one recording, labelled by its subject.
pub fn extend_dataset(data: &mut Dataset, recording: &SessionRecording, cfg: &FeatureConfig) {
    match cfg.mode {
        FeatureMode::Frame => {
            for f in recording.frames() {
                data.push(normalize_frame(f).as_slice(), recording.subject_id());
            }
        }
        FeatureMode::Window => {
            for w in windows(recording.frames(), cfg.window_len, cfg.stride) {
                data.push(&window_features(&w), recording.subject_id());
            }
        }
    }
}

pub fn dataset_from_recordings<'a>(
    recordings: impl IntoIterator<Item = &'a SessionRecording>,
    cfg: &FeatureConfig,
) -> Dataset {
    let mut data = Dataset::new(cfg.mode.dim());
    for r in recordings {
        extend_dataset(&mut data, r, cfg);
    }
    data
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(ts: u64, readings: [u16; SENSOR_COUNT]) -> SensorFrame {
        SensorFrame::new(ts, readings).unwrap()
    }

    fn blank(n: usize) -> Vec<SensorFrame> {
        (0..n).map(|i| SensorFrame::vacant(i as u64 * 500)).collect()
    }

    #[test]
    fn normalization_edges() {
        assert_eq!(normalize_frame(&frame(0, [0; 16])).0, [0.0; 16]);
        assert_eq!(normalize_frame(&frame(0, [1023; 16])).0, [1.0; 16]);
        let mut r = [0; 16];
        r[3] = 512;
        let v = normalize_frame(&frame(0, r));
        assert_eq!(v.0[3], 512.0 / 1023.0);
        assert!((v.0[3] - 0.50049).abs() < 1e-5);
        assert_eq!(v.0.iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn normalization_inverts_on_grid() {
        for c in 0..=1023u16 {
            let v = normalize_frame(&frame(0, [c; 16])).0[0];
            assert_eq!((v * 1023.0).round() as u16, c);
            if c > 0 {
                assert!(v > normalize_frame(&frame(0, [c - 1; 16])).0[0]);
            }
        }
    }

    #[test]
    fn window_counts() {
        assert_eq!(windows(&blank(1200), 20, 20).len(), 60);
        assert!(windows(&blank(19), 20, 20).is_empty());
        assert!(windows(&[], 20, 20).is_empty());
        let starts: Vec<_> = windows(&blank(45), 20, 10).iter().map(|w| w.start_index).collect();
        assert_eq!(starts, vec![0, 10, 20]);
    }

    #[test]
    fn non_overlapping_windows_tile() {
        let frames = blank(107);
        let ws = windows(&frames, 20, 20);
        for (i, w) in ws.iter().enumerate() {
            assert_eq!(w.frames.len(), 20);
            assert_eq!(w.start_index, i * 20);
        }
    }

    #[test]
    fn occupancy_threshold() {
        assert!(!occupancy(&frame(0, [0; 16]), 400));
        assert!(occupancy(&frame(0, [1023; 16]), 400));
        let mut r = [0; 16];
        r[7] = 400;
        assert!(occupancy(&frame(0, r), 400));
        r[7] = 399;
        assert!(!occupancy(&frame(0, r), 400));
    }

    #[test]
    fn constant_window_features() {
        let mut r = [0u16; 16];
        for (i, v) in r.iter_mut().enumerate() {
            *v = (i * 60) as u16;
        }
        let frames: Vec<_> = (0..20).map(|i| frame(i * 500, r)).collect();
        let f = window_features(&Window { frames: &frames, start_index: 0 });
        assert_eq!(f.len(), 64);
        for s in 0..16 {
            let v = f64::from(r[s]) / 1023.0;
            assert_eq!(f[4 * s + 1], 0.0);
            assert!((f[4 * s] - v).abs() < 1e-15);
            assert_eq!(f[4 * s + 2], v);
            assert_eq!(f[4 * s + 3], v);
        }
        let again = window_features(&Window { frames: &frames, start_index: 5 });
        assert_eq!(f, again);
    }

    #[test]
    fn alternating_sensor_features() {
        let frames: Vec<_> = (0..20)
            .map(|i| {
                let mut r = [0u16; 16];
                r[2] = if i % 2 == 0 { 0 } else { 1023 };
                frame(i * 500, r)
            })
            .collect();
        let f = window_features(&Window { frames: &frames, start_index: 0 });
        // Population std of a balanced 0/1 sequence is exactly 1/2.
        assert_eq!(&f[8..12], &[0.5, 0.5, 0.0, 1.0]);
    }
}

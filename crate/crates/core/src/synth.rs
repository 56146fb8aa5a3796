//! Synthetic subjects and sessions.
//!
//! A subject sits on a body-geometry `baseline` and moves between a handful of
//! posture offsets. Posture changes follow a renewal process with exponential
//! dwell times; each change ramps linearly from the current blend to the new
//! posture over `shift_duration_s`. Readings are
//! `round(clamp(weight_scale * (baseline + blend) + N(0, noise_sigma)))`.
//!
//! Default population spreads are calibrated so that a handful of
//! geometry-sensitive sensors (s00..s03) carry most of the identity signal and
//! the remaining sensors mostly carry noise, which is the regime where tree
//! ensembles beat plain euclidean neighbors. They are not derived from real
//! measurements.

use std::fmt::Write as _;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp, Normal};
use thiserror::Error;

use crate::ingest::{self, SensorFrame, SessionRecording};
use crate::{seed, FRAME_PERIOD_MS, MAX_READING, SENSOR_COUNT};

pub const SPEC_MAGIC: &str = "#popa-spec v1";

const MAX: f64 = MAX_READING as f64;
const DRIFT_STREAM: u64 = 0xD81F_7000;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible population ranges: {0}")]
    InfeasibleRanges(String),
    #[error("invalid subject spec: {0}")]
    InvalidSpec(String),
    #[error("spec file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unsupported spec version {0:?}")]
    VersionMismatch(String),
}

pub type Vector = [f64; SENSOR_COUNT];

/// Generative model of one person's posture repertoire.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSubjectSpec {
    pub subject_id: String,
    pub baseline: Vector,
    pub postures: Vec<Vector>,
    pub dwell_mean_s: f64,
    pub shift_duration_s: f64,
    pub noise_sigma: f64,
    pub weight_scale: f64,
    pub seed: u64,
}

impl SyntheticSubjectSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |msg: String| Err(SynthError::InvalidSpec(msg));
        if ingest::validate_label(&self.subject_id).is_err() {
            return fail(format!("bad subject id {:?}", self.subject_id));
        }
        if self.postures.is_empty() {
            return fail("at least one posture required".into());
        }
        let all_finite = self.baseline.iter().chain(self.postures.iter().flatten()).all(|v| v.is_finite());
        if !all_finite {
            return fail("non-finite baseline or posture component".into());
        }
        if !(self.shift_duration_s >= 0.0 && self.dwell_mean_s > self.shift_duration_s && self.dwell_mean_s.is_finite()) {
            return fail(format!(
                "need dwell_mean_s > shift_duration_s >= 0, got {} and {}",
                self.dwell_mean_s, self.shift_duration_s
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!("noise_sigma {} must be non-negative", self.noise_sigma));
        }
        if !(self.weight_scale > 0.0 && self.weight_scale.is_finite()) {
            return fail(format!("weight_scale {} must be positive", self.weight_scale));
        }
        Ok(())
    }

    /// Noise-free reading for a posture blend, before rounding.
    fn mean_reading(&self, blend: &Vector, sensor: usize) -> f64 {
        self.weight_scale * (self.baseline[sensor] + blend[sensor])
    }
}

/// Ranges that govern how a population of subjects is drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationParams {
    pub n_subjects: usize,
    pub baseline_mean: f64,
    /// Per-sensor half-width of the uniform baseline draw around `baseline_mean`.
    pub baseline_spread: Vector,
    /// Half-width of the uniform posture-offset draw, all sensors.
    pub posture_spread: f64,
    pub postures_min: usize,
    pub postures_max: usize,
    pub dwell_s: (f64, f64),
    pub shift_s: (f64, f64),
    pub noise_sigma: (f64, f64),
    pub weight_scale: (f64, f64),
    pub seed: u64,
}

/// Geometry-sensitive sensors get this spread by default.
pub const DEFAULT_SENSITIVE_SPREAD: f64 = 150.0;
pub const DEFAULT_SENSITIVE_SENSORS: usize = 4;
pub const DEFAULT_MINOR_SPREAD: f64 = 4.0;

impl Default for PopulationParams {
    fn default() -> Self {
        let mut baseline_spread = [DEFAULT_MINOR_SPREAD; SENSOR_COUNT];
        baseline_spread[..DEFAULT_SENSITIVE_SENSORS].fill(DEFAULT_SENSITIVE_SPREAD);
        PopulationParams {
            n_subjects: 30,
            baseline_mean: 400.0,
            baseline_spread,
            posture_spread: 20.0,
            postures_min: 2,
            postures_max: 3,
            dwell_s: (60.0, 120.0),
            shift_s: (2.0, 6.0),
            noise_sigma: (20.0, 40.0),
            weight_scale: (0.9, 1.1),
            seed: 1,
        }
    }
}

impl PopulationParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |msg: String| Err(SynthError::InfeasibleRanges(msg));
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if self.n_subjects == 0 {
            return fail("n_subjects must be at least 1".into());
        }
        if self.postures_min == 0 || self.postures_min > self.postures_max {
            return fail(format!("posture count range {}..={} invalid", self.postures_min, self.postures_max));
        }
        for (i, &spread) in self.baseline_spread.iter().enumerate() {
            let lo = self.baseline_mean - spread;
            let hi = self.baseline_mean + spread;
            if !(spread >= 0.0 && lo >= 0.0 && hi <= MAX) {
                return fail(format!("sensor {i}: baseline range [{lo}, {hi}] leaves [0, 1023]"));
            }
        }
        if !(self.posture_spread >= 0.0 && self.posture_spread <= MAX) {
            return fail(format!("posture_spread {} outside [0, 1023]", self.posture_spread));
        }
        for (name, range) in [
            ("dwell_s", self.dwell_s),
            ("shift_s", self.shift_s),
            ("noise_sigma", self.noise_sigma),
            ("weight_scale", self.weight_scale),
        ] {
            if !ordered(range) {
                return fail(format!("{name} range {range:?} is not ordered"));
            }
        }
        if self.shift_s.0 < 0.0 || self.dwell_s.0 <= self.shift_s.1 {
            return fail(format!(
                "need dwell_s.min > shift_s.max >= shift_s.min >= 0, got {:?} / {:?}",
                self.dwell_s, self.shift_s
            ));
        }
        if self.noise_sigma.0 < 0.0 {
            return fail("noise_sigma must be non-negative".into());
        }
        if self.weight_scale.0 <= 0.0 {
            return fail("weight_scale must be positive".into());
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Subject ids `s01`, `s02`, ... padded to the width of `n`.
pub fn subject_label(index: usize, n: usize) -> String {
    let width = n.to_string().len().max(2);
    format!("s{:0width$}", index + 1)
}

/// Draws `n_subjects` specs; subject `i` depends only on `(seed, i)`.
pub fn generate_population(params: &PopulationParams) -> Result<Vec<SyntheticSubjectSpec>, SynthError> {
    params.validate()?;
    let specs = (0..params.n_subjects)
        .map(|i| {
            let mut rng = seed::rng(seed::derive(params.seed, i as u64));
            // Baseline first: scaling a spread scales every pairwise distance.
            let mut baseline = [0.0; SENSOR_COUNT];
            for (b, &spread) in baseline.iter_mut().zip(&params.baseline_spread) {
                *b = params.baseline_mean + spread * uniform(&mut rng, -1.0, 1.0);
            }
            let k = rng.random_range(params.postures_min..=params.postures_max);
            let postures = (0..k)
                .map(|_| {
                    let mut p = [0.0; SENSOR_COUNT];
                    for v in &mut p {
                        *v = params.posture_spread * uniform(&mut rng, -1.0, 1.0);
                    }
                    p
                })
                .collect();
            SyntheticSubjectSpec {
                subject_id: subject_label(i, params.n_subjects),
                baseline,
                postures,
                dwell_mean_s: uniform(&mut rng, params.dwell_s.0, params.dwell_s.1),
                shift_duration_s: uniform(&mut rng, params.shift_s.0, params.shift_s.1),
                noise_sigma: uniform(&mut rng, params.noise_sigma.0, params.noise_sigma.1),
                weight_scale: uniform(&mut rng, params.weight_scale.0, params.weight_scale.1),
                seed: rng.next_u64(),
            }
        })
        .collect();
    Ok(specs)
}

pub fn baseline_distance(a: &SyntheticSubjectSpec, b: &SyntheticSubjectSpec) -> f64 {
    a.baseline.iter().zip(&b.baseline).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Smallest euclidean baseline distance over all subject pairs; infinite below two subjects.
pub fn min_pairwise_baseline_distance(specs: &[SyntheticSubjectSpec]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in specs.iter().enumerate() {
        for b in &specs[i + 1..] {
            best = best.min(baseline_distance(a, b));
        }
    }
    best
}

/// Tracks the posture blend through shifts.
struct PostureTrack<'a> {
    spec: &'a SyntheticSubjectSpec,
    current: usize,
    from: Vector,
    shift_start: f64,
}

impl PostureTrack<'_> {
    fn blend_at(&self, t: f64) -> Vector {
        let target = &self.spec.postures[self.current];
        let ramp = self.spec.shift_duration_s;
        let a = if ramp <= 0.0 { 1.0 } else { ((t - self.shift_start) / ramp).clamp(0.0, 1.0) };
        if a >= 1.0 {
            return *target;
        }
        let mut out = [0.0; SENSOR_COUNT];
        for (i, v) in out.iter_mut().enumerate() {
            *v = (1.0 - a) * self.from[i] + a * target[i];
        }
        out
    }
}

/// Simulates `floor(duration_s / 0.5)` frames at 500 ms spacing.
///
/// Output is a pure function of `(spec, duration_s, session_seed)`; the
/// session id is the decimal session seed.
pub fn simulate_session(
    spec: &SyntheticSubjectSpec,
    duration_s: f64,
    session_seed: u64,
) -> Result<SessionRecording, SynthError> {
    spec.validate()?;
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(SynthError::InvalidSpec(format!("duration_s {duration_s} must be positive")));
    }
    let period_s = FRAME_PERIOD_MS as f64 / 1000.0;
    let n = (duration_s / period_s).floor() as usize;
    let mut rng = seed::rng(seed::derive(spec.seed, session_seed));
    let k = spec.postures.len();
    let start = rng.random_range(0..k);
    let mut track = PostureTrack {
        spec,
        current: start,
        from: spec.postures[start],
        shift_start: f64::NEG_INFINITY,
    };
    let dwell = Exp::new(1.0 / spec.dwell_mean_s).expect("dwell validated positive");
    let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma validated"));
    let mut next_shift = if k > 1 { dwell.sample(&mut rng) } else { f64::INFINITY };

    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * period_s;
        while t >= next_shift {
            let from = track.blend_at(next_shift);
            let j = rng.random_range(0..k - 1);
            track.current = if j >= track.current { j + 1 } else { j };
            track.from = from;
            track.shift_start = next_shift;
            next_shift += dwell.sample(&mut rng);
        }
        let blend = track.blend_at(t);
        let mut readings = [0u16; SENSOR_COUNT];
        for (sensor, r) in readings.iter_mut().enumerate() {
            let eps = noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
            *r = (spec.mean_reading(&blend, sensor) + eps).clamp(0.0, MAX).round() as u16;
        }
        frames.push(SensorFrame::new(i as u64 * FRAME_PERIOD_MS, readings).expect("clamped"));
    }
    SessionRecording::new(spec.subject_id.clone(), session_seed.to_string(), frames)
        .map_err(|e| SynthError::InvalidSpec(e.to_string()))
}

/// Cross-session drift: perturbs baseline and postures by `N(0, drift_magnitude)`
/// per component and rescales the dwell mean by a factor in [0.8, 1.25].
///
/// The result carries a fresh seed, so repeated application compounds
/// independent perturbations. Zero drift returns the spec unchanged.
pub fn apply_session_drift(spec: &SyntheticSubjectSpec, drift_magnitude: f64) -> SyntheticSubjectSpec {
    if drift_magnitude <= 0.0 || !drift_magnitude.is_finite() {
        return spec.clone();
    }
    let mut rng = seed::rng(seed::derive(spec.seed, DRIFT_STREAM));
    let normal = Normal::new(0.0, drift_magnitude).expect("positive drift");
    let mut out = spec.clone();
    for v in out.baseline.iter_mut() {
        *v += normal.sample(&mut rng);
    }
    for p in out.postures.iter_mut() {
        for v in p.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let factor = uniform(&mut rng, 0.8f64.ln(), 1.25f64.ln()).exp();
    let dwell = spec.dwell_mean_s * factor;
    if dwell > spec.shift_duration_s {
        out.dwell_mean_s = dwell;
    }
    out.seed = rng.next_u64();
    out
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// `#popa-spec v1` text; floats use shortest round-trip formatting.
pub fn write_spec(spec: &SyntheticSubjectSpec) -> String {
    let mut out = String::new();
    out.push_str(SPEC_MAGIC);
    out.push('\n');
    let _ = writeln!(out, "subject_id={}", spec.subject_id);
    let _ = writeln!(out, "seed={}", spec.seed);
    let _ = writeln!(out, "baseline={}", join(&spec.baseline));
    for p in &spec.postures {
        let _ = writeln!(out, "posture={}", join(p));
    }
    let _ = writeln!(out, "dwell_mean_s={}", spec.dwell_mean_s);
    let _ = writeln!(out, "shift_duration_s={}", spec.shift_duration_s);
    let _ = writeln!(out, "noise_sigma={}", spec.noise_sigma);
    let _ = writeln!(out, "weight_scale={}", spec.weight_scale);
    out
}

pub fn parse_spec(text: &str) -> Result<SyntheticSubjectSpec, SynthError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, SPEC_MAGIC)) => {}
        Some((_, other)) if other.starts_with("#popa-spec") => {
            return Err(SynthError::VersionMismatch(other.to_string()))
        }
        _ => return Err(SynthError::Parse { line: 1, reason: format!("expected {SPEC_MAGIC}") }),
    }
    let err = |line: usize, reason: String| SynthError::Parse { line: line + 1, reason };
    let num = |line: usize, v: &str| v.parse::<f64>().map_err(|_| err(line, format!("bad number {v:?}")));
    let vector = |line: usize, v: &str| -> Result<Vector, SynthError> {
        let parts: Vec<&str> = v.split(',').collect();
        if parts.len() != SENSOR_COUNT {
            return Err(err(line, format!("expected {SENSOR_COUNT} components, got {}", parts.len())));
        }
        let mut out = [0.0; SENSOR_COUNT];
        for (o, p) in out.iter_mut().zip(parts) {
            *o = num(line, p)?;
        }
        Ok(out)
    };

    let (mut subject_id, mut seed, mut baseline) = (None, None, None);
    let mut postures = Vec::new();
    let (mut dwell, mut shift, mut noise, mut weight) = (None, None, None, None);
    for (i, line) in lines {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| err(i, "expected key=value".into()))?;
        match key {
            "subject_id" => subject_id = Some(value.to_string()),
            "seed" => seed = Some(value.parse::<u64>().map_err(|_| err(i, format!("bad seed {value:?}")))?),
            "baseline" => baseline = Some(vector(i, value)?),
            "posture" => postures.push(vector(i, value)?),
            "dwell_mean_s" => dwell = Some(num(i, value)?),
            "shift_duration_s" => shift = Some(num(i, value)?),
            "noise_sigma" => noise = Some(num(i, value)?),
            "weight_scale" => weight = Some(num(i, value)?),
            other => return Err(err(i, format!("unknown key {other:?}"))),
        }
    }
    let missing = |name: &str| SynthError::Parse { line: 0, reason: format!("missing key {name}") };
    let spec = SyntheticSubjectSpec {
        subject_id: subject_id.ok_or_else(|| missing("subject_id"))?,
        baseline: baseline.ok_or_else(|| missing("baseline"))?,
        postures,
        dwell_mean_s: dwell.ok_or_else(|| missing("dwell_mean_s"))?,
        shift_duration_s: shift.ok_or_else(|| missing("shift_duration_s"))?,
        noise_sigma: noise.ok_or_else(|| missing("noise_sigma"))?,
        weight_scale: weight.ok_or_else(|| missing("weight_scale"))?,
        seed: seed.ok_or_else(|| missing("seed"))?,
    };
    spec.validate()?;
    Ok(spec)
}

//! Continuous authentication: enrollment, per-window verdicts, de-authentication,
//! and one-to-n identification.
//!
//! ```text
//!  Enrolling(n) --enroll_frames collected--> Authenticated
//!  Authenticated --vacant window--> Vacant(1) --more vacant windows--> ... --> DeAuthenticated(WalkedAway)
//!  Authenticated | Vacant --rejected window--> DeAuthenticated(ImpostorSuspected)
//!  Vacant --accepted window--> Authenticated
//!  any --deauthenticate()--> DeAuthenticated(Manual)
//! ```
//!
//! Each subject's authenticator is a dedicated two-class model: the subject's
//! own frames labelled [`GENUINE`] against a background corpus relabelled
//! [`IMPOSTOR`].

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::classify::{self, AlgorithmSpec, ClassifyError, Dataset, TrainedModel};
use crate::features::{normalize_frame, occupancy, Window, DEFAULT_TAU_OCCUPIED, DEFAULT_WINDOW_LEN};
use crate::ingest::SensorFrame;
use crate::SENSOR_COUNT;

pub const GENUINE: &str = "genuine";
pub const IMPOSTOR: &str = "impostor";

#[derive(Debug, Error, PartialEq)]
pub enum SessionError {
    #[error("background corpus has no instances")]
    EmptyBackground,
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("session already de-authenticated ({0})")]
    SessionTerminated(DeauthReason),
    #[error("window is vacant")]
    WindowVacant,
    #[error("identification population is empty")]
    EmptyPopulation,
    #[error(transparent)]
    Classify(#[from] ClassifyError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    /// Frames collected before the first model is trained (600 = 5 minutes).
    pub enroll_frames: usize,
    pub window_len: usize,
    /// Minimum fraction of occupied frames classified genuine for acceptance.
    pub theta_accept: f64,
    /// Vacant windows tolerated before walking away is assumed.
    pub vacancy_grace_windows: usize,
    /// Accepted windows between retrains.
    pub retrain_interval_windows: usize,
    pub tau_occupied: u32,
    pub algorithm: AlgorithmSpec,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            enroll_frames: 600,
            window_len: DEFAULT_WINDOW_LEN,
            theta_accept: 0.5,
            vacancy_grace_windows: 0,
            retrain_interval_windows: 1,
            tau_occupied: DEFAULT_TAU_OCCUPIED,
            algorithm: AlgorithmSpec::default(),
            seed: 1,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |m: &str| Err(SessionError::InvalidConfig(m.into()));
        if self.window_len == 0 {
            return bad("window_len must be positive");
        }
        if self.enroll_frames < self.window_len {
            return bad("enroll_frames must be at least window_len");
        }
        if !(self.theta_accept > 0.0 && self.theta_accept <= 1.0) {
            return bad("theta_accept must lie in (0, 1]");
        }
        if self.retrain_interval_windows == 0 {
            return bad("retrain_interval_windows must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeauthReason {
    ImpostorSuspected,
    WalkedAway,
    Manual,
}

impl DeauthReason {
    pub fn name(self) -> &'static str {
        match self {
            DeauthReason::ImpostorSuspected => "ImpostorSuspected",
            DeauthReason::WalkedAway => "WalkedAway",
            DeauthReason::Manual => "Manual",
        }
    }
}

impl fmt::Display for DeauthReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Enrolling { collected: usize },
    Authenticated,
    /// Consecutive vacant windows so far.
    Vacant { windows: usize },
    DeAuthenticated(DeauthReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accepted,
    Rejected,
    ChairVacant,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Accepted => "Accepted",
            Verdict::Rejected => "Rejected",
            Verdict::ChairVacant => "ChairVacant",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuthDecision {
    /// Windows are numbered from 0 starting at the first post-enrollment frame.
    pub window_index: usize,
    /// Share of the window's occupied frames classified genuine; 0 for vacant windows.
    pub genuine_fraction: f64,
    pub verdict: Verdict,
}

impl AuthDecision {
    /// `window_index,verdict,genuine_fraction`
    pub fn log_line(&self) -> String {
        format!("{},{},{:.4}", self.window_index, self.verdict.name(), self.genuine_fraction)
    }
}

/// `DEAUTH,<reason>`
pub fn deauth_line(reason: DeauthReason) -> String {
    format!("DEAUTH,{reason}")
}

/// One subject's authentication session.
#[derive(Debug, Clone)]
pub struct SessionState {
    config: SessionConfig,
    phase: Phase,
    /// Background relabelled as impostor, followed by every genuine frame so far.
    training: Dataset,
    genuine_frames: usize,
    model: Option<Arc<TrainedModel>>,
    buffer: Vec<SensorFrame>,
    next_window: usize,
    accepted_since_retrain: usize,
}

/// Starts a session in `Enrolling { collected: 0 }`.
///
/// `background` holds normalized frame features of other people; its labels
/// are discarded.
pub fn new_session(config: SessionConfig, background: &Dataset) -> Result<SessionState, SessionError> {
    config.validate()?;
    if background.is_empty() {
        return Err(SessionError::EmptyBackground);
    }
    if background.dim() != SENSOR_COUNT {
        return Err(ClassifyError::DimensionMismatch { expected: SENSOR_COUNT, found: background.dim() }.into());
    }
    Ok(SessionState {
        buffer: Vec::with_capacity(config.window_len),
        config,
        phase: Phase::Enrolling { collected: 0 },
        training: background.relabeled(IMPOSTOR),
        genuine_frames: 0,
        model: None,
        next_window: 0,
        accepted_since_retrain: 0,
    })
}

impl SessionState {
    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn model(&self) -> Option<&TrainedModel> {
        self.model.as_deref()
    }

    /// Genuine frames in the training set.
    pub fn training_len(&self) -> usize {
        self.genuine_frames
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_terminated(&self) -> bool {
        matches!(self.phase, Phase::DeAuthenticated(_))
    }

    fn add_genuine(&mut self, frame: &SensorFrame) {
        self.training.push(normalize_frame(frame).as_slice(), GENUINE);
        self.genuine_frames += 1;
    }

    fn retrain(&mut self) -> Result<(), SessionError> {
        let model = classify::train(&self.training, &self.config.algorithm, self.config.seed)?;
        self.model = Some(Arc::new(model));
        self.accepted_since_retrain = 0;
        Ok(())
    }

    /// Feeds one frame. A decision is returned exactly when a window completes.
    pub fn ingest_frame(&mut self, frame: SensorFrame) -> Result<Option<AuthDecision>, SessionError> {
        match self.phase {
            Phase::DeAuthenticated(reason) => Err(SessionError::SessionTerminated(reason)),
            Phase::Enrolling { collected } => {
                self.add_genuine(&frame);
                let collected = collected + 1;
                if collected == self.config.enroll_frames {
                    self.retrain()?;
                    self.phase = Phase::Authenticated;
                } else {
                    self.phase = Phase::Enrolling { collected };
                }
                Ok(None)
            }
            Phase::Authenticated | Phase::Vacant { .. } => {
                self.buffer.push(frame);
                if self.buffer.len() < self.config.window_len {
                    return Ok(None);
                }
                let decision = self.decide()?;
                self.buffer.clear();
                Ok(Some(decision))
            }
        }
    }

    fn decide(&mut self) -> Result<AuthDecision, SessionError> {
        let window_index = self.next_window;
        self.next_window += 1;
        let tau = self.config.tau_occupied;
        let occupied: Vec<SensorFrame> = self.buffer.iter().filter(|f| occupancy(f, tau)).copied().collect();

        if occupied.len() * 2 <= self.config.window_len {
            let windows = match self.phase {
                Phase::Vacant { windows } => windows + 1,
                _ => 1,
            };
            self.phase = if windows > self.config.vacancy_grace_windows {
                Phase::DeAuthenticated(DeauthReason::WalkedAway)
            } else {
                Phase::Vacant { windows }
            };
            return Ok(AuthDecision { window_index, genuine_fraction: 0.0, verdict: Verdict::ChairVacant });
        }

        let model = self.model.clone().expect("model present after enrollment");
        let mut genuine = 0usize;
        for f in &occupied {
            if model.predict_label(normalize_frame(f).as_slice())? == GENUINE {
                genuine += 1;
            }
        }
        let genuine_fraction = genuine as f64 / occupied.len() as f64;
        if genuine_fraction < self.config.theta_accept {
            self.phase = Phase::DeAuthenticated(DeauthReason::ImpostorSuspected);
            return Ok(AuthDecision { window_index, genuine_fraction, verdict: Verdict::Rejected });
        }

        self.phase = Phase::Authenticated;
        for f in &occupied {
            self.add_genuine(f);
        }
        self.accepted_since_retrain += 1;
        if self.accepted_since_retrain >= self.config.retrain_interval_windows {
            self.retrain()?;
        }
        Ok(AuthDecision { window_index, genuine_fraction, verdict: Verdict::Accepted })
    }

    /// Ends the session. The first reason sticks: repeated calls keep it.
    pub fn deauthenticate(&mut self, reason: DeauthReason) {
        if !self.is_terminated() {
            self.phase = Phase::DeAuthenticated(reason);
            self.buffer.clear();
        }
    }
}

/// A one-to-n identifier: either a shared multi-class model or, for a
/// population of one, the lone subject.
#[derive(Debug, Clone, PartialEq)]
pub enum Population {
    Single(String),
    Shared(TrainedModel),
}

impl Population {
    /// Trains the shared model over frame features labelled by subject.
    pub fn train(data: &Dataset, algorithm: &AlgorithmSpec, seed: u64) -> Result<Self, SessionError> {
        let labels = data.label_set();
        match labels.len() {
            0 => Err(SessionError::EmptyPopulation),
            1 => Ok(Population::Single(labels.into_iter().next().unwrap_or_default())),
            _ => Ok(Population::Shared(classify::train(data, algorithm, seed)?)),
        }
    }

    pub fn subjects(&self) -> Vec<String> {
        match self {
            Population::Single(s) => vec![s.clone()],
            Population::Shared(m) => m.labels().to_vec(),
        }
    }
}

/// Majority subject over a window's occupied frames, with the winning vote
/// share as confidence. Ties go to the smaller subject id.
pub fn identify(window: &Window<'_>, population: &Population, tau_occupied: u32) -> Result<(String, f64), SessionError> {
    let occupied: Vec<&SensorFrame> = window.frames.iter().filter(|f| occupancy(f, tau_occupied)).collect();
    if occupied.is_empty() || occupied.len() * 2 <= window.frames.len() {
        return Err(SessionError::WindowVacant);
    }
    let model = match population {
        Population::Single(s) => return Ok((s.clone(), 1.0)),
        Population::Shared(m) => m,
    };
    let mut votes = vec![0usize; model.labels().len()];
    for f in &occupied {
        votes[model.predict_index(normalize_frame(f).as_slice())?] += 1;
    }
    // Labels are sorted, so the first maximum is the smallest id.
    let mut best = 0;
    for (i, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = i;
        }
    }
    Ok((model.labels()[best].clone(), votes[best] as f64 / occupied.len() as f64))
}

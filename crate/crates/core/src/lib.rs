//! Meeting analytics for four-person round-table sessions recorded with a
//! panoramic camera.
//!
//! The pipeline turns facial-landmark tracks and speaker-diarization segments
//! into per-frame gaze targets, speaking-time and attention-time metrics, and
//! a two-condition statistical comparison:
//!
//! 1. [`bundle`] loads and validates a session (layout, landmarks, diarization).
//! 2. [`pose`] recovers head orientation per frame with an iterative PnP solve.
//! 3. [`attention`] maps head orientation to the participant being looked at.
//! 4. [`alignment`] windows attention frames to the target's speech.
//! 5. [`stats`] runs outlier screening, normality, homogeneity, t-test and
//!    effect size per metric.
//! 6. [`report`] writes heatmap, chord chart and table exports.
//!
//! [`sim`] generates synthetic sessions with ray-cast ground truth and
//! [`pipeline`] chains the stages over a manifest of sessions.

pub mod alignment;
pub mod angles;
pub mod attention;
pub mod bundle;
pub mod error;
pub mod model;
pub mod pipeline;
pub mod pose;
pub mod report;
pub mod rotation;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
pub use model::{
    BBox, CameraModel, Condition, LandmarkFrame, Participant, ParticipantId, Role, Seat,
    SeatingLayout, Session, SpeechSegment,
};

//! Recording data model, file ingestion, and the synthetic generator.
//!
//! The central type is [`EmgRecording`]: a per-subject multichannel
//! signal with per-sample gesture (`stimulus`) and repetition labels,
//! validated on construction. Recordings arrive from three sources —
//! CSV ([`csv_io`]), a bounded subset of MATLAB v5 binary files
//! ([`mat`]), and a seeded synthetic generator ([`synth`]) used as a
//! ground-truth oracle in tests. All sources funnel through the same
//! validation, and recordings are immutable afterwards, so downstream
//! stages can share them freely across threads.

pub mod csv_io;
pub mod mat;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

/// Highest gesture label; 0 means rest.
pub const MAX_GESTURE_LABEL: u8 = 52;
/// Highest repetition index; 0 marks unassigned/rest samples.
pub const MAX_REPETITION: u8 = 6;

/// A labeled multichannel sEMG recording for one subject.
///
/// Channels are stored channel-major (`channels[c][t]`); `stimulus[t]`
/// and `repetition[t]` label sample `t`. Construction validates the
/// structural invariants (equal lengths, label ranges, finite samples)
/// and the struct is immutable afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct EmgRecording {
    subject_id: i32,
    sample_rate_hz: f64,
    channels: Vec<Vec<f64>>,
    stimulus: Vec<u8>,
    repetition: Vec<u8>,
}

impl EmgRecording {
    pub fn new(
        subject_id: i32,
        sample_rate_hz: f64,
        channels: Vec<Vec<f64>>,
        stimulus: Vec<u8>,
        repetition: Vec<u8>,
    ) -> Result<Self> {
        if !(sample_rate_hz > 0.0) || !sample_rate_hz.is_finite() {
            return Err(PipelineError::validation(format!(
                "sample rate must be positive and finite, got {sample_rate_hz}"
            )));
        }
        if channels.is_empty() {
            return Err(PipelineError::validation("recording has no channels"));
        }
        let n = channels[0].len();
        if n == 0 {
            return Err(PipelineError::validation("recording has no samples"));
        }
        for (c, ch) in channels.iter().enumerate() {
            if ch.len() != n {
                return Err(PipelineError::validation(format!(
                    "channel {} has {} samples but channel 1 has {}",
                    c + 1,
                    ch.len(),
                    n
                )));
            }
            if let Some(t) = ch.iter().position(|x| !x.is_finite()) {
                return Err(PipelineError::validation(format!(
                    "channel {} sample {} is not finite",
                    c + 1,
                    t
                )));
            }
        }
        if stimulus.len() != n {
            return Err(PipelineError::validation(format!(
                "stimulus has {} entries but channels have {} samples",
                stimulus.len(),
                n
            )));
        }
        if repetition.len() != n {
            return Err(PipelineError::validation(format!(
                "repetition has {} entries but channels have {} samples",
                repetition.len(),
                n
            )));
        }
        if let Some(t) = stimulus.iter().position(|&s| s > MAX_GESTURE_LABEL) {
            return Err(PipelineError::validation(format!(
                "stimulus value {} at sample {} exceeds {}",
                stimulus[t], t, MAX_GESTURE_LABEL
            )));
        }
        if let Some(t) = repetition.iter().position(|&r| r > MAX_REPETITION) {
            return Err(PipelineError::validation(format!(
                "repetition value {} at sample {} exceeds {}",
                repetition[t], t, MAX_REPETITION
            )));
        }
        Ok(EmgRecording {
            subject_id,
            sample_rate_hz,
            channels,
            stimulus,
            repetition,
        })
    }

    pub fn subject_id(&self) -> i32 {
        self.subject_id
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn n_samples(&self) -> usize {
        self.channels[0].len()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn stimulus(&self) -> &[u8] {
        &self.stimulus
    }

    pub fn repetition(&self) -> &[u8] {
        &self.repetition
    }

    /// Rebuilds the recording with transformed channel data, keeping
    /// labels and metadata. Used by preprocessing; the replacement is
    /// re-validated (lengths must match, samples must stay finite).
    pub fn with_channels(&self, channels: Vec<Vec<f64>>) -> Result<Self> {
        if channels.len() != self.n_channels() {
            return Err(PipelineError::validation(format!(
                "replacement has {} channels, recording has {}",
                channels.len(),
                self.n_channels()
            )));
        }
        EmgRecording::new(
            self.subject_id,
            self.sample_rate_hz,
            channels,
            self.stimulus.clone(),
            self.repetition.clone(),
        )
    }
}

/// A maximal contiguous run of identical `(stimulus, repetition)`
/// labels, rest included. The unit of windowing and of trial
/// extraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRun {
    pub gesture: u8,
    pub repetition: u8,
    pub start: usize,
    pub len: usize,
}

/// Splits a recording's timeline into maximal constant-label runs, in
/// order, covering every sample exactly once.
pub fn label_runs(rec: &EmgRecording) -> Vec<LabelRun> {
    let stim = rec.stimulus();
    let rep = rec.repetition();
    let mut runs = Vec::new();
    let mut start = 0usize;
    for t in 1..=stim.len() {
        let boundary = t == stim.len() || stim[t] != stim[start] || rep[t] != rep[start];
        if boundary {
            runs.push(LabelRun {
                gesture: stim[start],
                repetition: rep[start],
                start,
                len: t - start,
            });
            start = t;
        }
    }
    runs
}

/// One gesture execution: a maximal non-rest run copied out of its
/// source recording, channel-major like [`EmgRecording`].
#[derive(Clone, Debug, PartialEq)]
pub struct GestureTrial {
    pub subject_id: i32,
    pub gesture: u8,
    pub repetition: u8,
    pub start_index: usize,
    pub segment: Vec<Vec<f64>>,
}

impl GestureTrial {
    pub fn n_samples(&self) -> usize {
        self.segment[0].len()
    }

    pub fn n_channels(&self) -> usize {
        self.segment.len()
    }
}

/// Extracts one [`GestureTrial`] per maximal non-rest run, ordered by
/// start index. An all-rest recording yields an empty list.
pub fn extract_trials(rec: &EmgRecording) -> Vec<GestureTrial> {
    label_runs(rec)
        .into_iter()
        .filter(|run| run.gesture != 0)
        .map(|run| {
            let segment = rec
                .channels()
                .iter()
                .map(|ch| ch[run.start..run.start + run.len].to_vec())
                .collect();
            GestureTrial {
                subject_id: rec.subject_id(),
                gesture: run.gesture,
                repetition: run.repetition,
                start_index: run.start,
                segment,
            }
        })
        .collect()
}

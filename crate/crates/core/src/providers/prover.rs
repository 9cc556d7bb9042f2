//! Statement verification against a grounded moment.

use serde::{Deserialize, Serialize};

use super::{args, ProviderError, Session};
use crate::grounding::{resample_frames, Frame, GroundedMoment};

pub const POSITIVE_TOKEN: &str = "True";
pub const NEGATIVE_TOKEN: &str = "False";

/// How the prover consumes frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProverKind {
    /// One call with all `frames` attached.
    Video { frames: usize },
    /// One call per frame; the scores are averaged.
    Image { frames: usize },
}

impl ProverKind {
    pub fn frames(self) -> usize {
        match self {
            ProverKind::Video { frames } | ProverKind::Image { frames } => frames,
        }
    }
}

impl Default for ProverKind {
    fn default() -> Self {
        ProverKind::Video { frames: 8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProofScore {
    pub value: f64,
    pub low_fidelity: bool,
    /// Image prover frames whose call failed and were left out of the mean.
    pub failed_frames: usize,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Direct score of `statement` on the frames of `moment`.
///
/// `frames` are the video's sampled frames; `moment` indexes into them.
pub fn prove(
    session: &mut Session<'_>,
    statement: &str,
    moment: &GroundedMoment,
    frames: &[Frame],
    kind: ProverKind,
) -> Result<ProofScore, ProviderError> {
    let picked: Vec<&Frame> = resample_frames(moment, kind.frames().max(1))
        .into_iter()
        .filter_map(|i| frames.get(i))
        .collect();
    let ts = |i: usize| frames.get(i).map(|f| f.timestamp_s).unwrap_or(0.0);
    let call_args = args([
        ("moment_start", moment.start_index.to_string()),
        ("moment_end", moment.end_index.to_string()),
        ("start_s", format!("{:.2}", ts(moment.start_index))),
        ("end_s", format!("{:.2}", ts(moment.end_index))),
        ("statement", statement.to_string()),
    ]);
    match kind {
        ProverKind::Video { .. } => {
            let attachments = picked.iter().map(|f| f.attachment.clone()).collect();
            let s = session.score_binary("verify", call_args, attachments, POSITIVE_TOKEN, NEGATIVE_TOKEN)?;
            Ok(ProofScore {
                value: s.value,
                low_fidelity: s.low_fidelity,
                failed_frames: 0,
            })
        }
        ProverKind::Image { .. } => {
            let mut scores = Vec::with_capacity(picked.len());
            let mut low_fidelity = false;
            let mut last_err = None;
            for f in &picked {
                match session.score_binary(
                    "verify",
                    call_args.clone(),
                    vec![f.attachment.clone()],
                    POSITIVE_TOKEN,
                    NEGATIVE_TOKEN,
                ) {
                    Ok(s) => {
                        low_fidelity |= s.low_fidelity;
                        scores.push(s.value);
                    }
                    Err(e) => last_err = Some(e),
                }
            }
            let failed_frames = picked.len() - scores.len();
            if scores.is_empty() {
                return Err(last_err.unwrap_or_else(|| {
                    ProviderError::MalformedResponse("no frames to verify against".into())
                }));
            }
            if failed_frames > 0 {
                session.transcript_mut().flag_last("partial-frames");
            }
            Ok(ProofScore {
                value: mean(&scores),
                low_fidelity,
                failed_frames,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grounding::GroundedMoment;
    use crate::providers::{Attachment, BackendError, FnBackend, ModelResponse, ProviderSet, TokenDistribution};
    use std::sync::Arc;

    fn frames(n: usize) -> Vec<Frame> {
        (0..n)
            .map(|i| Frame {
                index: i,
                timestamp_s: i as f64,
                attachment: Attachment::named(format!("f{i}")),
            })
            .collect()
    }

    fn probs(p: f64) -> ModelResponse {
        ModelResponse {
            text: "True".into(),
            distribution: Some(TokenDistribution::from_probs([("True", p), ("False", 1.0 - p)])),
        }
    }

    #[test]
    fn image_prover_averages() {
        let set = ProviderSet::builder()
            .default_backend(Arc::new(FnBackend::new("p", |r| {
                let even = r.attachments[0].uri[1..].parse::<usize>().unwrap() % 2 == 0;
                Ok(probs(if even { 1.0 } else { 0.0 }))
            })))
            .build();
        let mut s = set.session();
        let m = GroundedMoment::external(0, 1, 24).unwrap();
        let got = prove(&mut s, "x", &m, &frames(24), ProverKind::Image { frames: 2 }).unwrap();
        assert_eq!(got.value, 0.5);
        assert_eq!(s.transcript().len(), 2);
    }

    #[test]
    fn image_prover_constant() {
        let set = ProviderSet::builder()
            .default_backend(Arc::new(FnBackend::new("p", |_| Ok(probs(0.6)))))
            .build();
        let mut s = set.session();
        let m = GroundedMoment::full_video(24).unwrap();
        let got = prove(&mut s, "x", &m, &frames(24), ProverKind::Image { frames: 8 }).unwrap();
        assert!((got.value - 0.6).abs() < 1e-12);
    }

    #[test]
    fn video_prover_attaches_resampled_frames() {
        let set = ProviderSet::builder()
            .default_backend(Arc::new(FnBackend::new("p", |_| Ok(probs(0.9)))))
            .build();
        let mut s = set.session();
        let m = GroundedMoment::external(10, 23, 24).unwrap();
        let got = prove(&mut s, "x", &m, &frames(24), ProverKind::Video { frames: 16 }).unwrap();
        assert!((got.value - 0.9).abs() < 1e-12);
        let e = &s.transcript().entries()[0];
        assert_eq!(e.attachments.len(), 16);
        assert_eq!(e.attachments.first().unwrap(), "f10");
        assert_eq!(e.attachments.last().unwrap(), "f23");
        assert_eq!(e.args["moment_start"], "10");
    }

    #[test]
    fn partial_image_failure_uses_successes() {
        let set = ProviderSet::builder()
            .default_backend(Arc::new(FnBackend::new("p", |r| {
                if r.attachments[0].uri == "f0" {
                    Err(BackendError::Rejected { status: 400, body: String::new() })
                } else {
                    Ok(probs(0.8))
                }
            })))
            .build();
        let mut s = set.session();
        let m = GroundedMoment::external(0, 3, 24).unwrap();
        let got = prove(&mut s, "x", &m, &frames(24), ProverKind::Image { frames: 4 }).unwrap();
        assert_eq!(got.failed_frames, 1);
        assert!((got.value - 0.8).abs() < 1e-12);
        assert!(s.transcript().has_flag("partial-frames"));
    }
}

use std::collections::VecDeque;
use std::sync::Mutex;

use super::{Backend, BackendError, ModelRequest, ModelResponse};

/// Backend driven by a closure.
pub struct FnBackend<F> {
    model_id: String,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&ModelRequest) -> Result<ModelResponse, BackendError> + Send + Sync,
{
    pub fn new(model_id: impl Into<String>, f: F) -> Self {
        FnBackend {
            model_id: model_id.into(),
            f,
        }
    }
}

impl<F> Backend for FnBackend<F>
where
    F: Fn(&ModelRequest) -> Result<ModelResponse, BackendError> + Send + Sync,
{
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn call(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        (self.f)(request)
    }
}

/// Replays a fixed list of outcomes, one per call; errors once exhausted.
pub struct SequenceBackend {
    model_id: String,
    queue: Mutex<VecDeque<Result<ModelResponse, BackendError>>>,
}

impl SequenceBackend {
    pub fn new(
        model_id: impl Into<String>,
        outcomes: Vec<Result<ModelResponse, BackendError>>,
    ) -> Self {
        SequenceBackend {
            model_id: model_id.into(),
            queue: Mutex::new(outcomes.into()),
        }
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }
}

impl Backend for SequenceBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn call(&self, _request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        self.queue
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(BackendError::Malformed("script exhausted".into())))
    }
}

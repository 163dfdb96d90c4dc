//! Downstream models that complete a DST prompt with a state string.

use crate::error::Result;

use super::prompt::STATE_PREFIX;

pub trait DstBackend: Send + Sync {
    /// Short label used in reports.
    fn name(&self) -> String;

    fn complete(&self, prompt: &str) -> Result<String>;
}

impl<T: DstBackend + ?Sized> DstBackend for &T {
    fn name(&self) -> String {
        (**self).name()
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        (**self).complete(prompt)
    }
}

/// Answers with the state of the exemplar nearest the test block, i.e. the
/// top-ranked retrieval.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoMock;

impl DstBackend for EchoMock {
    fn name(&self) -> String {
        "echo-mock".to_string()
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let last = prompt
            .lines()
            .filter_map(|l| l.strip_prefix(STATE_PREFIX))
            .filter(|rest| !rest.is_empty())
            .last()
            .unwrap_or("");
        Ok(last.trim().to_string())
    }
}

/// Remote completion model behind the chat wire contract.
#[cfg(feature = "remote")]
pub struct RemoteDst {
    client: crate::llm::ChatClient,
    retry: crate::retry::RetryPolicy,
}

#[cfg(feature = "remote")]
impl RemoteDst {
    pub fn new(config: crate::llm::ChatConfig, retry: crate::retry::RetryPolicy) -> Result<Self> {
        Ok(Self {
            client: crate::llm::ChatClient::new(config)?,
            retry,
        })
    }
}

#[cfg(feature = "remote")]
impl DstBackend for RemoteDst {
    fn name(&self) -> String {
        self.client.config().model.clone()
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        self.retry.run(|| self.client.complete(prompt))
    }
}

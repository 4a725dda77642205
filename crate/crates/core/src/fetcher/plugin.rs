use crate::gtfs::GtfsFeed;
use crate::http::{call, ClientError, PROTOBUF, ZIP};
use crate::realtime::RtFeedMessage;

/// A feed exactly as fetched: the source bytes and their parsed form.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedPayload {
    pub version: String,
    pub bytes: Vec<u8>,
    pub feed: GtfsFeed,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PluginError {
    #[error("plugin rejected the request: {0}")]
    Rejected(String),
    #[error("plugin unreachable: {0}")]
    Unavailable(String),
    #[error("operation not supported by this plugin")]
    Unsupported,
}

impl From<ClientError> for PluginError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Transport(m) => PluginError::Unavailable(m),
            ClientError::Status { status, body } => PluginError::Rejected(format!("HTTP {status}: {body}")),
        }
    }
}

/// The routing engine side of the fetcher. Loading the same
/// `(feed_id, version)` twice must be harmless.
pub trait RoutingEnginePlugin: Send + Sync {
    fn load_feed(&self, feed_id: &str, payload: &FeedPayload) -> Result<(), PluginError>;

    fn apply_realtime(&self, _rt: &RtFeedMessage) -> Result<(), PluginError> {
        Err(PluginError::Unsupported)
    }
}

/// Remote plugin reached over HTTP.
#[derive(Debug, Clone)]
pub struct HttpPlugin {
    base_url: String,
}

impl HttpPlugin {
    pub fn new(base_url: &str) -> Self {
        HttpPlugin { base_url: base_url.trim_end_matches('/').to_string() }
    }
}

impl RoutingEnginePlugin for HttpPlugin {
    fn load_feed(&self, feed_id: &str, payload: &FeedPayload) -> Result<(), PluginError> {
        let id: String = url::form_urlencoded::byte_serialize(feed_id.as_bytes()).collect();
        let url = format!("{}/plugin/feeds/{id}", self.base_url);
        call("POST", &url, &[("X-Feed-Version", &payload.version)], Some((ZIP, &payload.bytes)))?;
        Ok(())
    }

    fn apply_realtime(&self, rt: &RtFeedMessage) -> Result<(), PluginError> {
        let url = format!("{}/plugin/realtime", self.base_url);
        call("POST", &url, &[], Some((PROTOBUF, &rt.encode())))?;
        Ok(())
    }
}

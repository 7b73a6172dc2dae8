//! Messages exchanged between a client and the server in one round.

use serde::{Deserialize, Serialize};

use crate::allocation::AllocationMatrix;
use crate::client::UploadPayload;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRequest {
    pub client_id: usize,
    pub tau: Vec<u64>,
    pub hit_ratio: Vec<f64>,
    pub saved_time: Vec<f64>,
    pub budget_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheAllocation {
    pub client_id: usize,
    pub allocation: AllocationMatrix,
    /// Entries actually shipped (absent global entries are skipped).
    pub shipped_entries: usize,
    pub shipped_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RoundProtocolMessage {
    CacheRequest(CacheRequest),
    CacheAllocation(CacheAllocation),
    UpdateUpload(UploadPayload),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolCounts {
    pub cache_requests: u64,
    pub cache_allocations: u64,
    pub update_uploads: u64,
}

impl ProtocolCounts {
    pub fn record(&mut self, message: &RoundProtocolMessage) {
        match message {
            RoundProtocolMessage::CacheRequest(_) => self.cache_requests += 1,
            RoundProtocolMessage::CacheAllocation(_) => self.cache_allocations += 1,
            RoundProtocolMessage::UpdateUpload(_) => self.update_uploads += 1,
        }
    }

    /// True when every request was answered and followed by an upload.
    pub fn is_complete(&self) -> bool {
        self.cache_requests == self.cache_allocations && self.cache_allocations == self.update_uploads
    }
}

//! UDP tracker protocol: wire codecs, a blocking client, and an
//! in-process mock server for hermetic tests.

pub mod client;
pub mod mock;
pub mod wire;

pub use client::{
    AnnounceParams, AnnounceResult, ClientError, ConnectionToken, HarvestOutcome, HarvestReport,
    HarvestSchedule, PeerObservation, RetryPolicy, ScrapeEntry, TrackerClient,
};
pub use mock::{FaultProfile, MockStats, MockTracker, SwarmFixture};
pub use wire::{AnnounceEvent, DecodedPeers, PeerEndpoint, WireError};

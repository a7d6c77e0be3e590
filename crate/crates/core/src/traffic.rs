//! Poisson packet sources, one independent renewal stream per ordered pair.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::network::NodeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("packet rate must be positive and finite, got {0}")]
    Rate(f64),
    #[error("uniform draw {0} outside [0, 1)")]
    Uniform(f64),
    #[error("packet size must be positive, got {0}")]
    Size(f64),
    #[error("self-pair ({0}, {0}) is not allowed")]
    SelfPair(NodeId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficProfile {
    /// Mean packets per second for each ordered pair.
    pub lambda: f64,
    /// Packet size (bits).
    pub kappa: f64,
    pub pairs: Vec<(NodeId, NodeId)>,
}

impl TrafficProfile {
    pub fn new(lambda: f64, kappa: f64, pairs: Vec<(NodeId, NodeId)>) -> Result<Self, TrafficError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(TrafficError::Rate(lambda));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(TrafficError::Size(kappa));
        }
        if let Some(&(a, _)) = pairs.iter().find(|(a, b)| a == b) {
            return Err(TrafficError::SelfPair(a));
        }
        Ok(Self { lambda, kappa, pairs })
    }

    /// Profile that offers `rate` bits/s per pair with packets of `kappa` bits.
    pub fn from_bit_rate(rate: f64, kappa: f64, pairs: Vec<(NodeId, NodeId)>) -> Result<Self, TrafficError> {
        Self::new(rate / kappa, kappa, pairs)
    }

    /// Every ordered pair of distinct nodes among `0..nodes`.
    pub fn all_pairs(nodes: usize) -> Vec<(NodeId, NodeId)> {
        (0..nodes)
            .flat_map(|a| (0..nodes).filter(move |&b| b != a).map(move |b| (NodeId(a), NodeId(b))))
            .collect()
    }

    /// Mean offered bit rate of one pair.
    pub fn pair_rate(&self) -> f64 {
        self.lambda * self.kappa
    }
}

/// Inverse-CDF sample of an exponential interval with mean `1/lambda`.
pub fn sample_interval(lambda: f64, u: f64) -> Result<f64, TrafficError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(TrafficError::Rate(lambda));
    }
    if !(0.0..1.0).contains(&u) {
        return Err(TrafficError::Uniform(u));
    }
    Ok(-(-u).ln_1p() / lambda)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketEvent {
    pub time: f64,
    pub source: NodeId,
    pub destination: NodeId,
    pub size: f64,
}

/// Generator state for one ordered pair.
#[derive(Debug, Clone)]
pub struct PairStream {
    pub stream_id: u64,
    pub source: NodeId,
    pub destination: NodeId,
    lambda: f64,
    size: f64,
    clock: f64,
    rng: ChaCha8Rng,
}

/// Traffic pairs use stream ids from this offset upwards; lower ids are reserved.
pub const TRAFFIC_STREAM_BASE: u64 = 0x1000;

impl PairStream {
    pub fn new(seed: u64, stream_id: u64, source: NodeId, destination: NodeId, lambda: f64, size: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { stream_id, source, destination, lambda, size, clock: 0.0, rng }
    }

    /// The next packet of this pair; intervals are i.i.d. exponential.
    pub fn next_event(&mut self) -> PacketEvent {
        let interval = loop {
            let u: f64 = self.rng.gen();
            if let Ok(dt) = sample_interval(self.lambda, u) {
                break dt;
            }
        };
        self.clock += interval;
        PacketEvent { time: self.clock, source: self.source, destination: self.destination, size: self.size }
    }
}

/// One stream per pair of the profile, each on its own ChaCha stream.
pub fn streams(profile: &TrafficProfile, seed: u64) -> Vec<PairStream> {
    profile
        .pairs
        .iter()
        .enumerate()
        .map(|(i, &(s, d))| PairStream::new(seed, TRAFFIC_STREAM_BASE + i as u64, s, d, profile.lambda, profile.kappa))
        .collect()
}

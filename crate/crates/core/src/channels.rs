//! The four links q, r, n and m: transfer timing, priority scheduling,
//! error injection with duplex repair, and divergence measurement.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::bits::{self, ceil_log2, Bits};

/// Data bits per block.
pub const BLOCK_DATA_BITS: usize = 64;
/// Check bits per block.
pub const BLOCK_CHECK_BITS: usize = 8;
/// Re-requests per block before giving up.
pub const RETRY_CAP: u32 = 8;
/// Additive smoothing for divergence measurement.
pub const KL_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("unknown channel `{0}` (expected q, r, n or m)")]
    UnknownChannel(String),
    #[error("rate of channel {0} must be positive")]
    Rate(Channel),
    #[error("segments sum to {segments} bits, payload is {payload}")]
    Segments { segments: u64, payload: u64 },
    #[error("block {block} still corrupt after {RETRY_CAP} re-requests")]
    Unrecoverable { block: usize },
    #[error("distributions have different or empty support ({0} vs {1})")]
    Shape(usize, usize),
    #[error("distribution entries must be finite and non-negative")]
    Distribution,
}

pub type Result<T, E = ChannelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Q,
    R,
    N,
    M,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::Q, Channel::R, Channel::N, Channel::M];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Q => "q",
            Channel::R => "r",
            Channel::N => "n",
            Channel::M => "m",
        })
    }
}

impl FromStr for Channel {
    type Err = ChannelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "q" => Ok(Channel::Q),
            "r" => Ok(Channel::R),
            "n" => Ok(Channel::N),
            "m" => Ok(Channel::M),
            other => Err(ChannelError::UnknownChannel(other.to_string())),
        }
    }
}

/// Link rates in bits per tick plus error and repair settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelSet {
    pub rates: [f64; 4],
    pub bit_error_rate: [f64; 4],
    pub duplex_repair: bool,
}

impl ChannelSet {
    pub fn new(q: f64, r: f64, n: f64, m: f64) -> Result<Self> {
        let set = Self {
            rates: [q, r, n, m],
            bit_error_rate: [0.0; 4],
            duplex_repair: true,
        };
        for c in Channel::ALL {
            if !(set.rate(c) > 0.0) || !set.rate(c).is_finite() {
                return Err(ChannelError::Rate(c));
            }
        }
        Ok(set)
    }

    pub fn rate(&self, c: Channel) -> f64 {
        self.rates[c.index()]
    }

    pub fn set_rate(&mut self, c: Channel, rate: f64) -> Result<()> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(ChannelError::Rate(c));
        }
        self.rates[c.index()] = rate;
        Ok(())
    }

    pub fn ber(&self, c: Channel) -> f64 {
        self.bit_error_rate[c.index()]
    }

    pub fn with_ber(mut self, c: Channel, ber: f64) -> Self {
        self.bit_error_rate[c.index()] = ber;
        self
    }

    pub fn transfer_time(&self, c: Channel, payload_bits: u64) -> u64 {
        transfer_time(payload_bits, self.rate(c))
    }
}

/// `ceil(payload / rate)`, with quotients within 1e-9 of an integer snapped.
pub fn transfer_time(payload_bits: u64, rate: f64) -> u64 {
    if payload_bits == 0 {
        return 0;
    }
    let x = payload_bits as f64 / rate;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as u64
    } else {
        x.ceil() as u64
    }
}

/// Time to move a payload split evenly across `k` parallel links.
pub fn parallel_transfer_time(payload_bits: u64, rate: f64, k: u64) -> u64 {
    let k = k.max(1);
    let base = payload_bits / k;
    let extra = payload_bits % k;
    (0..k)
        .map(|i| transfer_time(base + u64::from(i < extra), rate))
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segment {
    pub bits: u64,
    /// Priority rank; 1 is the most important.
    pub rank: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferJob {
    pub id: u64,
    pub channel: Channel,
    pub payload_bits: u64,
    pub segments: Vec<Segment>,
}

impl TransferJob {
    pub fn new(id: u64, channel: Channel, payload_bits: u64) -> Self {
        Self {
            id,
            channel,
            payload_bits,
            segments: vec![Segment {
                bits: payload_bits,
                rank: 1,
            }],
        }
    }

    pub fn with_segments(id: u64, channel: Channel, segments: Vec<Segment>) -> Self {
        Self {
            id,
            channel,
            payload_bits: segments.iter().map(|s| s.bits).sum(),
            segments,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s: u64 = self.segments.iter().map(|s| s.bits).sum();
        if s != self.payload_bits {
            return Err(ChannelError::Segments {
                segments: s,
                payload: self.payload_bits,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Outstanding {
    job: u64,
    segment: usize,
    rank: u32,
    arrival: u64,
    remaining: f64,
    bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Service {
    pub tick: u64,
    pub job: u64,
    pub segment: usize,
    pub bits: f64,
}

/// Fluid priority scheduler on one link. Higher priority (lower rank) is
/// served strictly first; arrivals preempt whatever is in progress.
#[derive(Debug, Clone)]
pub struct PriorityScheduler {
    rate: f64,
    tick: u64,
    queue: Vec<Outstanding>,
    completions: BTreeMap<(u64, usize), u64>,
    arrivals: u64,
}

impl PriorityScheduler {
    pub fn new(rate: f64) -> Self {
        Self {
            rate,
            tick: 0,
            queue: Vec::new(),
            completions: BTreeMap::new(),
            arrivals: 0,
        }
    }

    pub fn submit(&mut self, job: &TransferJob) -> Result<()> {
        job.validate()?;
        for (i, s) in job.segments.iter().enumerate() {
            if s.bits == 0 {
                self.completions.insert((job.id, i), self.tick);
                continue;
            }
            self.queue.push(Outstanding {
                job: job.id,
                segment: i,
                rank: s.rank,
                arrival: self.arrivals,
                remaining: s.bits as f64,
                bits: s.bits,
            });
            self.arrivals += 1;
        }
        self.queue.sort_by_key(|o| (o.rank, o.arrival));
        Ok(())
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    /// Serves one tick; returns what was delivered.
    pub fn tick(&mut self) -> Vec<Service> {
        self.tick += 1;
        let mut budget = self.rate;
        let mut out = Vec::new();
        while budget > 1e-12 && !self.queue.is_empty() {
            let head = &mut self.queue[0];
            let take = budget.min(head.remaining);
            head.remaining -= take;
            budget -= take;
            out.push(Service {
                tick: self.tick,
                job: head.job,
                segment: head.segment,
                bits: take,
            });
            if head.remaining <= 1e-9 * head.bits as f64 {
                // Snap tiny float residue so exact splits complete on time.
                self.completions.insert((head.job, head.segment), self.tick);
                self.queue.remove(0);
            }
        }
        out
    }

    /// Tick at which each finished segment completed.
    pub fn completions(&self) -> &BTreeMap<(u64, usize), u64> {
        &self.completions
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrioritySchedule {
    /// Cumulative share of priority mass delivered after each tick.
    pub curve: Vec<f64>,
    /// Completion tick per segment, in job order.
    pub segment_completion: Vec<u64>,
    pub total_ticks: u64,
    pub services: Vec<Service>,
}

/// Runs one segmented job to completion. Each bit weighs `1 / rank`.
pub fn prioritized_implement(job: &TransferJob, set: &ChannelSet) -> Result<PrioritySchedule> {
    let rate = set.rate(job.channel);
    let mut sched = PriorityScheduler::new(rate);
    sched.submit(job)?;
    let mass: f64 = job
        .segments
        .iter()
        .map(|s| s.bits as f64 / s.rank.max(1) as f64)
        .sum();
    let weight: Vec<f64> = job
        .segments
        .iter()
        .map(|s| 1.0 / s.rank.max(1) as f64)
        .collect();
    let mut served = 0.0;
    let mut curve = Vec::new();
    let mut services = Vec::new();
    while !sched.is_idle() {
        for s in sched.tick() {
            served += s.bits * weight[s.segment];
            services.push(s);
        }
        curve.push(if mass > 0.0 {
            (served / mass).min(1.0)
        } else {
            1.0
        });
    }
    if let Some(last) = curve.last_mut() {
        *last = 1.0;
    }
    let segment_completion = (0..job.segments.len())
        .map(|i| sched.completions()[&(job.id, i)])
        .collect();
    Ok(PrioritySchedule {
        total_ticks: curve.len() as u64,
        curve,
        segment_completion,
        services,
    })
}

/// CRC-8 with polynomial x^8 + x^2 + x + 1.
pub fn crc8(data: &bits::BitStr) -> u8 {
    let mut crc: u8 = 0;
    for b in data.iter() {
        let top = (crc >> 7) & 1 == 1;
        crc <<= 1;
        if top ^ *b {
            crc ^= 0x07;
        }
    }
    crc
}

/// Source of bit flips for a frame transmission.
pub trait ErrorSource {
    /// Positions flipped in the frame of `block` on `attempt` (0 = first send).
    fn flips(&mut self, block: usize, attempt: u32, frame_len: usize) -> Vec<usize>;
}

/// Independent flips at a fixed rate. The stream for each frame is keyed by
/// (seed, channel, block, attempt), so raising the rate only adds flips.
#[derive(Debug, Clone)]
pub struct RandomErrors {
    pub seed: u64,
    pub channel: Channel,
    pub ber: f64,
}

impl ErrorSource for RandomErrors {
    fn flips(&mut self, block: usize, attempt: u32, frame_len: usize) -> Vec<usize> {
        if self.ber <= 0.0 {
            return Vec::new();
        }
        let key = format!("{}:{}:{}:{}", self.seed, self.channel, block, attempt);
        let mut rng = ChaCha8Rng::seed_from_u64(bits::fnv1a(key.as_bytes()));
        (0..frame_len)
            .filter(|_| rng.random::<f64>() < self.ber)
            .collect()
    }
}

/// Predetermined flips, for tests and replay.
#[derive(Debug, Clone, Default)]
pub struct ScriptedErrors(pub BTreeMap<(usize, u32), Vec<usize>>);

impl ErrorSource for ScriptedErrors {
    fn flips(&mut self, block: usize, attempt: u32, _frame_len: usize) -> Vec<usize> {
        self.0.get(&(block, attempt)).cloned().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferReport {
    #[serde(skip)]
    pub received: Bits,
    pub payload_bits: u64,
    pub redundancy_bits: u64,
    pub rerequested_bits: u64,
    /// Reverse-channel traffic naming corrupt blocks.
    pub nack_bits: u64,
    pub sent_bits: u64,
    pub corrupted_blocks: Vec<usize>,
    pub rerequests: u32,
    /// Bits still wrong after delivery.
    pub residual_error_bits: u64,
}

impl TransferReport {
    pub fn ticks(&self, rate: f64) -> u64 {
        transfer_time(self.sent_bits, rate)
    }
}

/// Sends `payload` in check-summed blocks. With duplex repair, blocks that
/// fail the check are re-requested until clean or the retry cap is hit.
pub fn transmit_with_errors(
    payload: &Bits,
    duplex_repair: bool,
    source: &mut dyn ErrorSource,
) -> Result<TransferReport> {
    let blocks: Vec<&bits::BitStr> = payload.chunks(BLOCK_DATA_BITS).collect();
    let nack_width = ceil_log2(blocks.len() as u64).max(1) as u64;
    let mut received = Bits::with_capacity(payload.len());
    let mut report = TransferReport {
        received: Bits::new(),
        payload_bits: payload.len() as u64,
        redundancy_bits: (blocks.len() * BLOCK_CHECK_BITS) as u64,
        rerequested_bits: 0,
        nack_bits: 0,
        sent_bits: 0,
        corrupted_blocks: Vec::new(),
        rerequests: 0,
        residual_error_bits: 0,
    };
    for (bi, block) in blocks.iter().enumerate() {
        let frame_len = block.len() + BLOCK_CHECK_BITS;
        let mut attempt = 0;
        loop {
            let mut frame = block.to_bitvec();
            bits::push_uint(&mut frame, crc8(block) as u64, BLOCK_CHECK_BITS as u32);
            for p in source.flips(bi, attempt, frame_len) {
                if p < frame_len {
                    let v = frame[p];
                    frame.set(p, !v);
                }
            }
            let data = &frame[..block.len()];
            let check = bits::read_uint(&frame, block.len(), BLOCK_CHECK_BITS as u32) as u8;
            let ok = crc8(data) == check;
            if !ok && attempt == 0 {
                report.corrupted_blocks.push(bi);
            }
            if ok || !duplex_repair {
                received.extend_from_bitslice(data);
                break;
            }
            if attempt == RETRY_CAP {
                return Err(ChannelError::Unrecoverable { block: bi });
            }
            attempt += 1;
            report.rerequests += 1;
            report.nack_bits += nack_width;
            report.rerequested_bits += frame_len as u64;
        }
    }
    report.sent_bits = report.payload_bits + report.redundancy_bits + report.rerequested_bits;
    report.residual_error_bits = bits::hamming(&received, payload) as u64;
    report.received = received;
    Ok(report)
}

/// `KL(observed || predicted)` in bits after additive smoothing.
pub fn measure_q(predicted: &[f64], observed: &[f64]) -> Result<f64> {
    if predicted.len() != observed.len() || predicted.is_empty() {
        return Err(ChannelError::Shape(predicted.len(), observed.len()));
    }
    if predicted
        .iter()
        .chain(observed)
        .any(|x| !x.is_finite() || *x < 0.0)
    {
        return Err(ChannelError::Distribution);
    }
    let smooth = |v: &[f64]| -> Vec<f64> {
        let total: f64 = v.iter().map(|x| x + KL_EPSILON).sum();
        v.iter().map(|x| (x + KL_EPSILON) / total).collect()
    };
    let p = smooth(predicted);
    let o = smooth(observed);
    let kl: f64 = o.iter().zip(&p).map(|(oi, pi)| oi * (oi / pi).log2()).sum();
    Ok(kl.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QReport {
    /// Quantized divergence per fragment; zero where masked out.
    pub values: Vec<f64>,
    pub q_bits: u64,
}

/// Restricts a q-map to the fragments the active configuration monitors and
/// quantizes each monitored divergence to `resolution_bits` over `[0, full_scale]`.
pub fn qr_mask_filter(
    q_map: &[f64],
    mask: &[bool],
    resolution_bits: u32,
    full_scale: f64,
) -> Result<QReport> {
    if q_map.len() != mask.len() {
        return Err(ChannelError::Shape(q_map.len(), mask.len()));
    }
    let levels = ((1u64 << resolution_bits.min(32)) - 1).max(1) as f64;
    let mut values = Vec::with_capacity(q_map.len());
    let mut q_bits = 0;
    for (v, m) in q_map.iter().zip(mask) {
        if *m {
            let x = (v / full_scale).clamp(0.0, 1.0);
            values.push((x * levels).round() / levels * full_scale);
            q_bits += resolution_bits as u64;
        } else {
            values.push(0.0);
        }
    }
    Ok(QReport { values, q_bits })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_timings() {
        let set = ChannelSet::new(1.0, 5.0, 128.0, 128.0).unwrap();
        assert_eq!(set.transfer_time(Channel::M, 2048), 16);
        assert_eq!(set.transfer_time(Channel::R, 10), 2);
        assert_eq!(set.transfer_time(Channel::Q, 3), 3);
        assert_eq!(set.transfer_time(Channel::N, 0), 0);
        assert_eq!(transfer_time(1, 3.0), 1);
        assert_eq!(transfer_time(3, 0.1), 30);
        assert_eq!(parallel_transfer_time(2048, 128.0, 2), 8);
        assert_eq!(
            "x".parse::<Channel>(),
            Err(ChannelError::UnknownChannel("x".into()))
        );
    }

    #[test]
    fn priority_two_equal_segments() {
        let set = ChannelSet::new(1.0, 1.0, 16.0, 16.0).unwrap();
        let job = TransferJob::with_segments(
            0,
            Channel::M,
            vec![Segment { bits: 64, rank: 1 }, Segment { bits: 64, rank: 2 }],
        );
        let s = prioritized_implement(&job, &set).unwrap();
        assert_eq!(s.total_ticks, 8);
        assert_eq!(s.segment_completion, [4, 8]);
        let single = prioritized_implement(&TransferJob::new(1, Channel::M, 100), &set).unwrap();
        assert_eq!(single.total_ticks, 7);
    }

    #[test]
    fn preemption_serves_new_top_priority() {
        let mut s = PriorityScheduler::new(10.0);
        s.submit(&TransferJob::with_segments(
            0,
            Channel::M,
            vec![Segment { bits: 50, rank: 3 }],
        ))
        .unwrap();
        s.tick();
        s.submit(&TransferJob::with_segments(
            1,
            Channel::M,
            vec![Segment { bits: 20, rank: 1 }],
        ))
        .unwrap();
        let served = s.tick();
        assert_eq!(served[0].job, 1);
        s.tick();
        assert_eq!(s.completions()[&(1, 0)], 3);
    }

    #[test]
    fn crc_detects_single_and_double_flips() {
        let data: Bits = (0..64).map(|i| i % 3 == 0).collect();
        let base = crc8(&data);
        for i in 0..64 {
            let mut d = data.clone();
            let v = d[i];
            d.set(i, !v);
            assert_ne!(crc8(&d), base);
        }
    }

    #[test]
    fn clean_and_scripted_transfers() {
        let payload: Bits = (0..200).map(|i| i % 5 == 0).collect();
        let r = transmit_with_errors(&payload, true, &mut ScriptedErrors::default()).unwrap();
        assert_eq!(r.received, payload);
        assert_eq!(r.rerequests, 0);
        assert_eq!(r.redundancy_bits, 4 * 8);
        let mut one = ScriptedErrors(BTreeMap::from([((1, 0), vec![5])]));
        let r = transmit_with_errors(&payload, true, &mut one).unwrap();
        assert_eq!(r.rerequests, 1);
        assert_eq!(r.rerequested_bits, 72);
        assert_eq!(r.received, payload);
        assert_eq!(r.sent_bits, 200 + 32 + 72);
        let mut one = ScriptedErrors(BTreeMap::from([((1, 0), vec![5, 9])]));
        let r = transmit_with_errors(&payload, false, &mut one).unwrap();
        assert_eq!(r.residual_error_bits, 2);
        let always: BTreeMap<_, _> = (0..=RETRY_CAP).map(|a| ((0, a), vec![0])).collect();
        assert_eq!(
            transmit_with_errors(&payload, true, &mut ScriptedErrors(always)).unwrap_err(),
            ChannelError::Unrecoverable { block: 0 }
        );
    }

    #[test]
    fn kl_values() {
        assert_eq!(measure_q(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let kl = measure_q(&[0.25, 0.75], &[0.5, 0.5]).unwrap();
        let hand = 0.5 * 2f64.log2() + 0.5 * (2.0f64 / 3.0).log2();
        assert!((kl - hand).abs() < 1e-6, "{kl}");
        assert!(measure_q(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn mask_filter() {
        let q = [0.5; 8];
        assert_eq!(qr_mask_filter(&q, &[false; 8], 4, 1.0).unwrap().q_bits, 0);
        assert_eq!(qr_mask_filter(&q, &[true; 8], 4, 1.0).unwrap().q_bits, 32);
        let half: Vec<bool> = (0..8).map(|i| i < 4).collect();
        assert_eq!(qr_mask_filter(&q, &half, 4, 1.0).unwrap().q_bits, 16);
        assert!(qr_mask_filter(&q, &[true], 4, 1.0).is_err());
    }
}

//! Data types and stage logic of the brake assistant.
//!
//! The stages are deterministic stand-ins: frames are synthetic byte
//! strings derived from their sequence number, and lane and vehicle
//! detection are cheap functions of those bytes. Each product carries the
//! sequence number of the frame it came from so that stages can detect
//! inputs that belong to different frames.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use sha2::{Digest, Sha256};

use crate::safe::safe_tag;
use crate::time::{Duration, Tag};

pub const FRAME_BYTES: usize = 64;
pub const DEFAULT_BRAKE_THRESHOLD_M: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("malformed {0} encoding")]
pub struct DecodeError(&'static str);

/// Synthetic image content of frame `seq`.
pub fn digest_expand(seq: u64) -> [u8; FRAME_BYTES] {
    let mut out = [0u8; FRAME_BYTES];
    for (i, chunk) in out.chunks_mut(32).enumerate() {
        let mut h = Sha256::new();
        h.update(seq.to_be_bytes());
        h.update([i as u8]);
        chunk.copy_from_slice(&h.finalize());
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub seq: u64,
    pub payload: [u8; FRAME_BYTES],
}

impl Frame {
    pub fn new(seq: u64) -> Self {
        Frame {
            seq,
            payload: digest_expand(seq),
        }
    }

    pub fn is_intact(&self) -> bool {
        self.payload == digest_expand(self.seq)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + FRAME_BYTES);
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        if bytes.len() != 8 + FRAME_BYTES {
            return Err(DecodeError("frame"));
        }
        Ok(Frame {
            seq: u64::from_be_bytes(bytes[..8].try_into().unwrap()),
            payload: bytes[8..].try_into().unwrap(),
        })
    }
}

/// Lane bounding box as `[left, top, right, bottom]` pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LaneInfo {
    pub source_seq: u64,
    pub bbox: [i32; 4],
}

impl LaneInfo {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24);
        out.extend_from_slice(&self.source_seq.to_be_bytes());
        for v in self.bbox {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        if bytes.len() != 24 {
            return Err(DecodeError("lane"));
        }
        let mut bbox = [0i32; 4];
        for (i, v) in bbox.iter_mut().enumerate() {
            *v = i32::from_be_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
        }
        Ok(LaneInfo {
            source_seq: u64::from_be_bytes(bytes[..8].try_into().unwrap()),
            bbox,
        })
    }
}

/// Distances in meters to vehicles detected in the lane.
#[derive(Clone, Debug, PartialEq)]
pub struct VehicleList {
    pub source_seq: u64,
    pub distances: Vec<f64>,
}

impl VehicleList {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.distances.len());
        out.extend_from_slice(&self.source_seq.to_be_bytes());
        out.extend_from_slice(&(self.distances.len() as u32).to_be_bytes());
        for d in &self.distances {
            out.extend_from_slice(&d.to_bits().to_be_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let err = DecodeError("vehicle list");
        if bytes.len() < 12 {
            return Err(err);
        }
        let n = u32::from_be_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if bytes.len() != 12 + 8 * n {
            return Err(err);
        }
        let distances = bytes[12..]
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_be_bytes(c.try_into().unwrap())))
            .collect();
        Ok(VehicleList {
            source_seq: u64::from_be_bytes(bytes[..8].try_into().unwrap()),
            distances,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BrakeDecision {
    pub source_seq: u64,
    pub brake: bool,
}

impl BrakeDecision {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9);
        out.extend_from_slice(&self.source_seq.to_be_bytes());
        out.push(self.brake as u8);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        match bytes {
            [seq @ .., b @ (0 | 1)] if seq.len() == 8 => Ok(BrakeDecision {
                source_seq: u64::from_be_bytes(seq.try_into().unwrap()),
                brake: *b == 1,
            }),
            _ => Err(DecodeError("brake decision")),
        }
    }
}

/// Lane detection stub.
pub fn preprocess(frame: &Frame) -> LaneInfo {
    let p = &frame.payload;
    let left = i32::from(p[0] % 64);
    let top = 240 + i32::from(p[1] % 64);
    LaneInfo {
        source_seq: frame.seq,
        bbox: [
            left,
            top,
            640 - i32::from(p[2] % 64),
            480 - i32::from(p[3] % 16),
        ],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("frame {frame_seq} paired with lane info of frame {lane_seq}")]
pub struct Misalignment {
    pub frame_seq: u64,
    pub lane_seq: u64,
}

/// Vehicle detection stub. Refuses to combine inputs from different frames.
pub fn computer_vision(frame: &Frame, lane: &LaneInfo) -> Result<VehicleList, Misalignment> {
    if frame.seq != lane.source_seq {
        return Err(Misalignment {
            frame_seq: frame.seq,
            lane_seq: lane.source_seq,
        });
    }
    let width = (lane.bbox[2] - lane.bbox[0]).max(1) as u32;
    let count = usize::from(frame.payload[8] % 4);
    let distances = frame.payload[9..9 + count]
        .iter()
        .map(|&b| 2.0 + f64::from((u32::from(b) * width) % 6000) / 100.0)
        .collect();
    Ok(VehicleList {
        source_seq: frame.seq,
        distances,
    })
}

/// Brakes iff some vehicle is closer than `threshold_m`.
pub fn eba(vehicles: &VehicleList, threshold_m: f64) -> BrakeDecision {
    BrakeDecision {
        source_seq: vehicles.source_seq,
        brake: vehicles.distances.iter().any(|&d| d < threshold_m),
    }
}

/// A single-value input cell. Writing while full loses the old value.
#[derive(Clone, Debug, PartialEq)]
pub struct OneSlotBuffer<T> {
    slot: Option<T>,
    overwrites: u64,
}

impl<T> Default for OneSlotBuffer<T> {
    fn default() -> Self {
        OneSlotBuffer {
            slot: None,
            overwrites: 0,
        }
    }
}

impl<T> OneSlotBuffer<T> {
    /// Stores `value`; returns true if an unread value was overwritten.
    pub fn write(&mut self, value: T) -> bool {
        let lost = self.slot.replace(value).is_some();
        self.overwrites += u64::from(lost);
        lost
    }

    pub fn take(&mut self) -> Option<T> {
        self.slot.take()
    }

    pub fn peek(&self) -> Option<&T> {
        self.slot.as_ref()
    }

    pub fn is_full(&self) -> bool {
        self.slot.is_some()
    }

    pub fn overwrite_count(&self) -> u64 {
        self.overwrites
    }
}

/// Per-stage error counters of one pipeline run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ErrorStats {
    pub frames: u64,
    pub dropped_pre: u64,
    pub dropped_frames_cv: u64,
    pub dropped_lanes_cv: u64,
    pub misaligned_cv: u64,
    pub dropped_eba: u64,
}

impl ErrorStats {
    pub const CSV_HEADER: &'static str = "trial,seed,frames,dropped_pre,dropped_frames_cv,dropped_lanes_cv,misaligned_cv,dropped_eba,error_rate";

    pub fn total_errors(&self) -> u64 {
        self.dropped_pre
            + self.dropped_frames_cv
            + self.dropped_lanes_cv
            + self.misaligned_cv
            + self.dropped_eba
    }

    /// Errors per frame, capped at 1.
    pub fn error_rate(&self) -> f64 {
        if self.frames == 0 {
            return 0.0;
        }
        (self.total_errors() as f64 / self.frames as f64).min(1.0)
    }

    pub fn is_clean(&self) -> bool {
        self.total_errors() == 0
    }

    pub fn csv_row(&self, trial: u32, seed: u64) -> String {
        format!(
            "{trial},{seed},{},{},{},{},{},{},{:.6}",
            self.frames,
            self.dropped_pre,
            self.dropped_frames_cv,
            self.dropped_lanes_cv,
            self.misaligned_cv,
            self.dropped_eba,
            self.error_rate()
        )
    }
}

impl fmt::Display for ErrorStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} frames: pre {} / cv frames {} / cv lanes {} / cv misaligned {} / eba {} ({:.4}%)",
            self.frames,
            self.dropped_pre,
            self.dropped_frames_cv,
            self.dropped_lanes_cv,
            self.misaligned_cv,
            self.dropped_eba,
            self.error_rate() * 100.0
        )
    }
}

/// Deadlines of the four reactor stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageDeadlines {
    pub video_adapter: Duration,
    pub preprocessing: Duration,
    pub computer_vision: Duration,
    pub eba: Duration,
}

impl Default for StageDeadlines {
    fn default() -> Self {
        StageDeadlines {
            video_adapter: Duration::from_millis(5),
            preprocessing: Duration::from_millis(25),
            computer_vision: Duration::from_millis(25),
            eba: Duration::from_millis(5),
        }
    }
}

impl StageDeadlines {
    pub fn as_array(&self) -> [Duration; 4] {
        [
            self.video_adapter,
            self.preprocessing,
            self.computer_vision,
            self.eba,
        ]
    }

    pub fn from_array(d: [Duration; 4]) -> Self {
        StageDeadlines {
            video_adapter: d[0],
            preprocessing: d[1],
            computer_vision: d[2],
            eba: d[3],
        }
    }
}

/// Tag of the brake signal for a frame inserted at `inserted`.
///
/// Three network hops each add their sender's deadline plus `L + E`; the
/// final stage adds only its own deadline before actuation.
pub fn planned_brake_tag(
    inserted: Tag,
    deadlines: &StageDeadlines,
    max_latency: Duration,
    max_skew: Duration,
) -> Tag {
    let hops = [
        deadlines.video_adapter,
        deadlines.preprocessing,
        deadlines.computer_vision,
    ];
    let at_eba = hops
        .iter()
        .fold(inserted, |t, &d| safe_tag(t, d, max_latency, max_skew));
    at_eba.delayed(deadlines.eba)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const MS: u64 = 1_000_000;

    #[test]
    fn stages_keep_provenance() {
        for k in [0, 1, 5, 999] {
            let frame = Frame::new(k);
            assert!(frame.is_intact());
            assert_eq!(preprocess(&frame).source_seq, k);
            let lane = preprocess(&frame);
            assert_eq!(computer_vision(&frame, &lane).unwrap().source_seq, k);
        }
    }

    #[test]
    fn mismatched_inputs_are_misaligned() {
        let lane = preprocess(&Frame::new(4));
        assert_eq!(
            computer_vision(&Frame::new(5), &lane),
            Err(Misalignment {
                frame_seq: 5,
                lane_seq: 4
            })
        );
    }

    #[test]
    fn eba_threshold() {
        let near = VehicleList {
            source_seq: 1,
            distances: vec![3.0],
        };
        let none = VehicleList {
            source_seq: 2,
            distances: vec![],
        };
        assert!(eba(&near, 10.0).brake);
        assert!(!eba(&none, 10.0).brake);
    }

    #[test]
    fn encodings_round_trip() {
        let frame = Frame::new(42);
        assert_eq!(Frame::decode(&frame.encode()), Ok(frame.clone()));
        let lane = preprocess(&frame);
        assert_eq!(LaneInfo::decode(&lane.encode()), Ok(lane));
        let v = computer_vision(&frame, &lane).unwrap();
        assert_eq!(VehicleList::decode(&v.encode()), Ok(v.clone()));
        let b = eba(&v, DEFAULT_BRAKE_THRESHOLD_M);
        assert_eq!(BrakeDecision::decode(&b.encode()), Ok(b));
        assert!(BrakeDecision::decode(&[0; 9][..8]).is_err());
    }

    #[test]
    fn overwriting_a_full_slot_counts() {
        let mut buf = OneSlotBuffer::default();
        assert!(!buf.write(1));
        assert!(buf.write(2));
        assert_eq!(buf.overwrite_count(), 1);
        assert_eq!(buf.take(), Some(2));
        assert!(!buf.write(3));
        assert_eq!(buf.overwrite_count(), 1);
    }

    #[test]
    fn error_rate_is_bounded() {
        let stats = ErrorStats {
            frames: 10,
            dropped_pre: 8,
            misaligned_cv: 8,
            ..Default::default()
        };
        assert_eq!(stats.error_rate(), 1.0);
        assert_eq!(ErrorStats::default().error_rate(), 0.0);
        let one = ErrorStats {
            frames: 4,
            dropped_eba: 1,
            ..Default::default()
        };
        assert_eq!(one.csv_row(0, 7), "0,7,4,0,0,0,0,1,0.250000");
    }

    #[test]
    fn planned_latency_sums_hop_increments() {
        let d = StageDeadlines::default();
        let ms = Duration::from_millis;
        let t = planned_brake_tag(Tag::at(100 * MS), &d, ms(5), ms(0));
        assert_eq!(t, Tag::at(175 * MS));
        let skewed = planned_brake_tag(Tag::at(100 * MS), &d, ms(5), ms(2));
        assert_eq!(skewed.since(Tag::at(100 * MS)), ms(75 + 3 * 2));

        let zero = StageDeadlines::from_array([Duration::ZERO; 4]);
        let t = planned_brake_tag(Tag::at(100 * MS), &zero, Duration::ZERO, Duration::ZERO);
        assert_eq!(t, Tag::new(100 * MS, 4));
        assert_eq!(t.since(Tag::at(100 * MS)), Duration::ZERO);
    }
}

use serde::{Deserialize, Serialize};

use super::manifest::{ImuSample, Manifest};

/// Timestamp clustering and drift limits, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncPolicy {
    pub drift_limit_us: i64,
    pub frame_interval_us: i64,
    pub cluster_tolerance_us: i64,
}

impl Default for SyncPolicy {
    fn default() -> Self {
        SyncPolicy {
            drift_limit_us: 17_000,
            frame_interval_us: 33_333,
            cluster_tolerance_us: 33_333 / 2,
        }
    }
}

/// IMU thresholds for discarding a session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionGate {
    /// rad/s²
    pub angular_limit: f64,
    /// m/s²
    pub linear_limit: f64,
}

impl Default for MotionGate {
    fn default() -> Self {
        MotionGate {
            angular_limit: 0.1,
            linear_limit: 1e-3,
        }
    }
}

/// One multi-view frame: the frame index of every camera, in manifest order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub reference_timestamp_us: i64,
    pub frames: Vec<usize>,
}

impl Cluster {
    pub fn spread_us(&self, m: &Manifest) -> i64 {
        let ts: Vec<i64> = self
            .frames
            .iter()
            .zip(&m.cameras)
            .map(|(&f, c)| c.frames[f].timestamp_us)
            .collect();
        ts.iter().max().unwrap_or(&0) - ts.iter().min().unwrap_or(&0)
    }
}

/// Greedy clustering against the camera with the lowest id. Every other
/// camera contributes its nearest unused frame within the tolerance (the
/// earlier one on ties); incomplete clusters are dropped.
pub fn sync_frames(m: &Manifest, policy: &SyncPolicy) -> Vec<Cluster> {
    let Some(reference) = (0..m.cameras.len()).min_by(|&a, &b| m.cameras[a].id.cmp(&m.cameras[b].id)) else {
        return Vec::new();
    };
    let mut used: Vec<Vec<bool>> = m.cameras.iter().map(|c| vec![false; c.frames.len()]).collect();
    let mut clusters = Vec::new();
    for (rf, rec) in m.cameras[reference].frames.iter().enumerate() {
        let t = rec.timestamp_us;
        let mut frames = vec![0; m.cameras.len()];
        let mut complete = true;
        for (ci, cam) in m.cameras.iter().enumerate() {
            if ci == reference {
                frames[ci] = rf;
                continue;
            }
            // frames are sorted, so scan the window around t
            let start = cam.frames.partition_point(|f| f.timestamp_us < t - policy.cluster_tolerance_us);
            let best = cam.frames[start..]
                .iter()
                .enumerate()
                .take_while(|(_, f)| f.timestamp_us <= t + policy.cluster_tolerance_us)
                .filter(|(j, _)| !used[ci][start + j])
                .min_by_key(|(j, f)| ((f.timestamp_us - t).abs(), *j))
                .map(|(j, _)| start + j);
            match best {
                Some(j) => frames[ci] = j,
                None => {
                    complete = false;
                    break;
                }
            }
        }
        if complete {
            for (ci, &f) in frames.iter().enumerate() {
                used[ci][f] = true;
            }
            clusters.push(Cluster {
                reference_timestamp_us: t,
                frames,
            });
        }
    }
    clusters
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "lowercase")]
pub enum GateDecision {
    Accept,
    Reject { reason: RejectReason, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RejectReason {
    Drift,
    Motion,
}

fn norm(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Rejects sessions whose clusters spread beyond the drift limit or whose
/// IMU magnitudes exceed the motion limits.
pub fn gate_session(m: &Manifest, policy: &SyncPolicy, gate: &MotionGate) -> GateDecision {
    let clusters = sync_frames(m, policy);
    if let Some((i, c)) = clusters
        .iter()
        .enumerate()
        .max_by_key(|(i, c)| (c.spread_us(m), std::cmp::Reverse(*i)))
    {
        let spread = c.spread_us(m);
        if spread > policy.drift_limit_us {
            return GateDecision::Reject {
                reason: RejectReason::Drift,
                detail: format!("cluster {i} spans {spread} us, limit {} us", policy.drift_limit_us),
            };
        }
    }
    let spike = |s: &ImuSample| norm(&s.angular_accel) > gate.angular_limit || norm(&s.linear_accel) > gate.linear_limit;
    if let Some(s) = m.imu.iter().find(|s| spike(s)) {
        return GateDecision::Reject {
            reason: RejectReason::Motion,
            detail: format!(
                "IMU at {} us: angular {:.4} rad/s2 (limit {}), linear {:.6} m/s2 (limit {})",
                s.timestamp_us,
                norm(&s.angular_accel),
                gate.angular_limit,
                norm(&s.linear_accel),
                gate.linear_limit
            ),
        };
    }
    GateDecision::Accept
}

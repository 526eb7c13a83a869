use std::collections::VecDeque;

use crate::world::RobotBody;

/// Width of one proprioceptive record: body velocity (2), yaw rate, tilt proxy (2),
/// height, previous action (4), body-frame command (3).
pub const RECORD_WIDTH: usize = 13;
pub const ACTION_DIM: usize = 4;
/// Privileged critic extras: 8 sectors x (gap, closing speed), collision flag, exact
/// barrier value, per-component limit flags (4), goal progress, time fraction.
pub const CRITIC_EXTRA_WIDTH: usize = 16 + 1 + 1 + 4 + 1 + 1;

const GRAVITY: f64 = 9.81;

/// Proprioceptive record for one control step.
pub fn proprio_record(robot: &RobotBody, prev_action: &[f64; ACTION_DIM], command_body: &[f64; 3]) -> [f64; RECORD_WIDTH] {
    let v = robot.body_velocity();
    let tilt = robot.body_accel() / GRAVITY;
    let mut r = [0.0; RECORD_WIDTH];
    r[0] = v.x;
    r[1] = v.y;
    r[2] = robot.omega_z;
    r[3] = tilt.x;
    r[4] = tilt.y;
    r[5] = robot.height;
    r[6..10].copy_from_slice(prev_action);
    r[10..13].copy_from_slice(command_body);
    r
}

/// Fixed-length window of proprioceptive records and raw scans, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsHistory {
    len: usize,
    records: VecDeque<[f64; RECORD_WIDTH]>,
    scans: VecDeque<Vec<f64>>,
}

impl ObsHistory {
    /// Every slot holds the initial record and scan.
    pub fn filled(len: usize, record: [f64; RECORD_WIDTH], scan: &[f64]) -> Self {
        assert!(len > 0, "history needs at least one slot");
        Self {
            len,
            records: std::iter::repeat_n(record, len).collect(),
            scans: std::iter::repeat_n(scan.to_vec(), len).collect(),
        }
    }

    pub fn push(&mut self, record: [f64; RECORD_WIDTH], scan: &[f64]) {
        self.records.pop_front();
        self.scans.pop_front();
        self.records.push_back(record);
        self.scans.push_back(scan.to_vec());
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn latest_record(&self) -> &[f64; RECORD_WIDTH] {
        self.records.back().expect("history is never empty")
    }

    /// `[records (len x RECORD_WIDTH) | scans (len x n_rays)]`.
    pub fn flatten(&self) -> Vec<f64> {
        let n_rays = self.scans[0].len();
        let mut out = Vec::with_capacity(self.len * (RECORD_WIDTH + n_rays));
        for r in &self.records {
            out.extend_from_slice(r);
        }
        for s in &self.scans {
            out.extend_from_slice(s);
        }
        out
    }
}

/// Layout of the flattened actor observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObsLayout {
    pub history: usize,
    pub n_rays: usize,
}

impl ObsLayout {
    pub fn records_width(&self) -> usize {
        self.history * RECORD_WIDTH
    }

    pub fn scans_width(&self) -> usize {
        self.history * self.n_rays
    }

    pub fn actor_width(&self) -> usize {
        self.records_width() + self.scans_width()
    }

    pub fn critic_width(&self) -> usize {
        self.actor_width() + CRITIC_EXTRA_WIDTH
    }
}

/// Actor input: proprioception, commands and raw scans only.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorObs(pub Vec<f64>);

/// Simulation-only extras appended to the actor observation for the critics.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticObs {
    pub actor: ActorObs,
    pub extras: [f64; CRITIC_EXTRA_WIDTH],
}

impl CriticObs {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.actor.0.clone();
        v.extend_from_slice(&self.extras);
        v
    }
}

pub fn actor_obs(history: &ObsHistory) -> ActorObs {
    ActorObs(history.flatten())
}

#[allow(clippy::too_many_arguments)]
pub fn critic_obs(
    actor: ActorObs,
    privileged: &[[f64; 2]; 8],
    collision: bool,
    h_exact: f64,
    limit_flags: &[bool; ACTION_DIM],
    progress: f64,
    time_fraction: f64,
) -> CriticObs {
    let mut extras = [0.0; CRITIC_EXTRA_WIDTH];
    for (i, s) in privileged.iter().enumerate() {
        extras[2 * i] = s[0];
        extras[2 * i + 1] = s[1];
    }
    extras[16] = f64::from(u8::from(collision));
    extras[17] = h_exact;
    for (i, f) in limit_flags.iter().enumerate() {
        extras[18 + i] = f64::from(u8::from(*f));
    }
    extras[22] = progress;
    extras[23] = time_fraction;
    CriticObs { actor, extras }
}

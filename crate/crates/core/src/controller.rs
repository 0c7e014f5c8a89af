//! Fixed two-group gait: leg grouping, motion sequencing and cascaded PI joint
//! tracking.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::genome::{perimeter_slots, LegSlot};
use crate::{Error, Result};

pub const MAX_JOINT_VELOCITY: f64 = 2.0;
pub const POSITION_KP: f64 = 2.0;
pub const POSITION_KI: f64 = 0.0;
pub const VELOCITY_KP: f64 = 10.0;
pub const VELOCITY_KI: f64 = 0.3;
/// Anti-windup clamp on the velocity-loop integrator.
pub const VELOCITY_INTEGRAL_LIMIT: f64 = 2.0;
/// A group's motion is complete when every joint is this close to target, rad.
pub const TARGET_TOLERANCE: f64 = 0.01;
/// A stalled group is forced on this long after the other group finished, s.
pub const STALL_TIMEOUT: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GaitGroup {
    One,
    Two,
}

impl GaitGroup {
    pub fn index(self) -> usize {
        match self {
            GaitGroup::One => 0,
            GaitGroup::Two => 1,
        }
    }

    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Motion {
    M1,
    M2,
    M3,
}

impl Motion {
    pub fn index(self) -> usize {
        match self {
            Motion::M1 => 0,
            Motion::M2 => 1,
            Motion::M3 => 2,
        }
    }
}

/// Joint-angle targets per motion, rad. Rows are M1, M2, M3; columns run
/// from hip to the distal joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaitTable {
    pub targets_2link: [[f64; 2]; 3],
    pub targets_3link: [[f64; 3]; 3],
}

impl Default for GaitTable {
    fn default() -> Self {
        GaitTable {
            targets_2link: [[-0.6, 0.9], [0.4, 0.3], [0.0, 0.0]],
            targets_3link: [[-0.6, 0.9, -0.3], [0.4, 0.3, 0.1], [0.0, 0.0, 0.0]],
        }
    }
}

impl GaitTable {
    pub fn zeros() -> Self {
        GaitTable {
            targets_2link: [[0.0; 2]; 3],
            targets_3link: [[0.0; 3]; 3],
        }
    }

    pub fn check(&self) -> Result<()> {
        let all = self
            .targets_2link
            .iter()
            .flatten()
            .chain(self.targets_3link.iter().flatten());
        for a in all {
            if !a.is_finite() || a.abs() > PI {
                return Err(Error::Config(format!("gait target {a} outside [-pi, pi]")));
            }
        }
        Ok(())
    }

    pub fn target(&self, links: usize, motion: Motion, joint: usize) -> f64 {
        match links {
            2 => self.targets_2link[motion.index()][joint],
            _ => self.targets_3link[motion.index()][joint],
        }
    }
}

/// Groups in perimeter order. Alternates clockwise from the front-left leg;
/// with the layout flag set the whole pattern is reflected, alternating
/// counter-clockwise from the front-right leg.
pub fn assign_groups(num_legs: usize, layout_mirror: bool) -> Vec<GaitGroup> {
    let alternate = |i: usize| {
        if i.is_multiple_of(2) {
            GaitGroup::One
        } else {
            GaitGroup::Two
        }
    };
    if !layout_mirror {
        return (0..num_legs).map(alternate).collect();
    }
    let reflected: Vec<LegSlot> = perimeter_slots(num_legs, false)
        .into_iter()
        .map(|s| LegSlot {
            side: s.side.opposite(),
            index: s.index,
        })
        .collect();
    perimeter_slots(num_legs, true)
        .iter()
        .map(|s| {
            alternate(
                reflected
                    .iter()
                    .position(|r| r == s)
                    .expect("reflected slot"),
            )
        })
        .collect()
}

pub fn group_sequence(group: GaitGroup) -> [Motion; 3] {
    match group {
        GaitGroup::One => [Motion::M1, Motion::M2, Motion::M3],
        GaitGroup::Two => [Motion::M2, Motion::M3, Motion::M1],
    }
}

/// Motion executed at a 1-based step of a group's repeating sequence.
pub fn motion_at(group: GaitGroup, step: usize) -> Motion {
    group_sequence(group)[(step.max(1) - 1) % 3]
}

/// Position loop output, clamped to the joint velocity limit.
pub fn commanded_velocity(error: f64, integral: f64) -> f64 {
    (POSITION_KP * error + POSITION_KI * integral).clamp(-MAX_JOINT_VELOCITY, MAX_JOINT_VELOCITY)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub angle: f64,
    pub velocity: f64,
    pub commanded: f64,
    pub position_integral: f64,
    pub velocity_integral: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupState {
    /// Motions completed so far; the current motion is `sequence[advances % 3]`.
    pub advances: usize,
    /// Time since the other group finished its motion while this one had not.
    pub waiting: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub joints: Vec<JointState>,
    /// Link count per leg, perimeter order.
    pub leg_links: Vec<usize>,
    pub leg_groups: Vec<GaitGroup>,
    pub groups: [GroupState; 2],
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepReport {
    pub advanced: [bool; 2],
}

impl ControllerState {
    /// All joints at zero, both groups at the start of their sequences.
    pub fn new(leg_links: Vec<usize>, leg_groups: Vec<GaitGroup>) -> Self {
        assert_eq!(leg_links.len(), leg_groups.len());
        let joints = vec![JointState::default(); leg_links.iter().sum()];
        ControllerState {
            joints,
            leg_links,
            leg_groups,
            groups: [GroupState::default(); 2],
        }
    }

    pub fn current_motion(&self, group: GaitGroup) -> Motion {
        group_sequence(group)[self.groups[group.index()].advances % 3]
    }

    pub fn angles(&self) -> impl Iterator<Item = f64> + '_ {
        self.joints.iter().map(|j| j.angle)
    }

    /// Joint angles of one leg.
    pub fn leg_angles(&self, leg: usize) -> &[JointState] {
        let start: usize = self.leg_links[..leg].iter().sum();
        &self.joints[start..start + self.leg_links[leg]]
    }

    pub fn step(&mut self, table: &GaitTable, dt: f64) -> StepReport {
        let motions = [
            self.current_motion(GaitGroup::One),
            self.current_motion(GaitGroup::Two),
        ];
        let mut at_target = [true; 2];
        let mut present = [false; 2];

        let mut j = 0;
        for (&links, &group) in self.leg_links.iter().zip(&self.leg_groups) {
            let gi = group.index();
            present[gi] = true;
            for k in 0..links {
                let target = table.target(links, motions[gi], k);
                let joint = &mut self.joints[j];
                track(joint, target, dt);
                if (target - joint.angle).abs() >= TARGET_TOLERANCE {
                    at_target[gi] = false;
                }
                j += 1;
            }
        }

        for g in &mut self.groups {
            if let Some(t) = g.waiting.as_mut() {
                *t += dt;
            }
        }
        let mut advance = [false; 2];
        for gi in 0..2 {
            let stalled = self.groups[gi]
                .waiting
                .is_some_and(|t| t >= STALL_TIMEOUT - 1e-9);
            advance[gi] = present[gi] && (at_target[gi] || stalled);
        }
        for gi in 0..2 {
            if advance[gi] {
                self.groups[gi].advances += 1;
                self.groups[gi].waiting = None;
                let other = 1 - gi;
                if !advance[other] && self.groups[other].waiting.is_none() {
                    self.groups[other].waiting = Some(0.0);
                }
            }
        }
        StepReport { advanced: advance }
    }
}

/// Cascaded position→velocity tracking of one joint, explicit Euler at `dt`.
fn track(joint: &mut JointState, target: f64, dt: f64) {
    let error = target - joint.angle;
    joint.position_integral += error * dt;
    let v_cmd = commanded_velocity(error, joint.position_integral);
    joint.commanded = v_cmd;

    let v_err = v_cmd - joint.velocity;
    joint.velocity_integral = (joint.velocity_integral + v_err * dt)
        .clamp(-VELOCITY_INTEGRAL_LIMIT, VELOCITY_INTEGRAL_LIMIT);
    let accel = VELOCITY_KP * v_err + VELOCITY_KI * joint.velocity_integral;
    joint.velocity = (joint.velocity + accel * dt).clamp(-MAX_JOINT_VELOCITY, MAX_JOINT_VELOCITY);
    joint.angle += joint.velocity * dt;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::Side;

    const DT: f64 = 0.005;

    fn labels(n: usize, mirror: bool) -> Vec<(String, u8)> {
        let slots = perimeter_slots(n, mirror);
        let (left, right) = crate::genome::side_counts(n, mirror);
        slots
            .iter()
            .zip(assign_groups(n, mirror))
            .map(|(s, g)| {
                let count = if s.side == Side::Left { left } else { right };
                let pos = if s.index == 0 {
                    "F"
                } else if s.index + 1 == count {
                    "R"
                } else {
                    "M"
                };
                let side = if s.side == Side::Left { "L" } else { "R" };
                (format!("{pos}{side}"), g.number())
            })
            .collect()
    }

    fn pairs(v: &[(&str, u8)]) -> Vec<(String, u8)> {
        v.iter().map(|(s, g)| (s.to_string(), *g)).collect()
    }

    #[test]
    fn quadruped_grouping() {
        assert_eq!(
            labels(4, false),
            pairs(&[("FL", 1), ("FR", 2), ("RR", 1), ("RL", 2)])
        );
    }

    #[test]
    fn biped_grouping() {
        assert_eq!(labels(2, false), pairs(&[("FL", 1), ("FR", 2)]));
    }

    #[test]
    fn five_legs_three_on_right() {
        assert_eq!(
            labels(5, false),
            pairs(&[("FL", 1), ("FR", 2), ("MR", 1), ("RR", 2), ("RL", 1)])
        );
    }

    #[test]
    fn layout_flag_reflects_the_grouping() {
        assert_eq!(
            labels(4, true),
            pairs(&[("FL", 2), ("FR", 1), ("RR", 2), ("RL", 1)])
        );
        assert_eq!(
            labels(5, true),
            pairs(&[("FL", 2), ("FR", 1), ("RR", 1), ("RL", 2), ("ML", 1)])
        );
        for n in 2..=6 {
            let a = perimeter_slots(n, false);
            let ga = assign_groups(n, false);
            for (s, g) in perimeter_slots(n, true).iter().zip(assign_groups(n, true)) {
                let i = a
                    .iter()
                    .position(|t| t.side == s.side.opposite() && t.index == s.index)
                    .unwrap();
                assert_eq!(ga[i], g);
            }
        }
    }

    #[test]
    fn sequences_cycle() {
        assert_eq!(motion_at(GaitGroup::One, 4), Motion::M1);
        assert_eq!(motion_at(GaitGroup::Two, 1), Motion::M2);
        assert_eq!(motion_at(GaitGroup::Two, 3), Motion::M1);
    }

    #[test]
    fn group_at_target_advances_immediately() {
        let mut s = ControllerState::new(vec![2, 2], vec![GaitGroup::One, GaitGroup::Two]);
        let table = GaitTable::zeros();
        let r = s.step(&table, DT);
        assert_eq!(r.advanced, [true, true]);
        assert_eq!(s.groups[0].advances, 1);
    }

    #[test]
    fn velocity_command_saturates() {
        assert_eq!(commanded_velocity(3.0, 0.0), 2.0);
        assert_eq!(commanded_velocity(-3.0, 0.0), -2.0);
        assert_eq!(commanded_velocity(0.5, 0.0), 1.0);
    }

    #[test]
    fn stalled_group_is_forced_on() {
        let mut s = ControllerState::new(vec![2, 2], vec![GaitGroup::One, GaitGroup::Two]);
        let table = GaitTable::default();
        s.groups[1].waiting = Some(STALL_TIMEOUT - DT);
        let r = s.step(&table, DT);
        assert!(r.advanced[1]);
        assert!(!r.advanced[0]);
        assert_eq!(s.current_motion(GaitGroup::Two), Motion::M3);
        // Group one's timer started when group two moved on.
        assert_eq!(s.groups[0].waiting, Some(0.0));
        assert_eq!(s.groups[1].waiting, None);
    }

    #[test]
    fn limits_hold_over_a_full_run() {
        let mut s = ControllerState::new(
            vec![2, 3, 3, 2, 3],
            vec![
                GaitGroup::One,
                GaitGroup::Two,
                GaitGroup::One,
                GaitGroup::Two,
                GaitGroup::One,
            ],
        );
        let table = GaitTable::default();
        let mut prev = [0usize; 2];
        for _ in 0..6000 {
            s.step(&table, DT);
            for j in &s.joints {
                assert!(j.commanded.abs() <= MAX_JOINT_VELOCITY);
                assert!(j.velocity.abs() <= MAX_JOINT_VELOCITY);
                assert!(j.velocity_integral.abs() <= VELOCITY_INTEGRAL_LIMIT);
            }
            for (p, g) in prev.iter_mut().zip(&s.groups) {
                assert!(g.advances - *p <= 1);
                *p = g.advances;
            }
        }
        // The gait actually cycles.
        assert!(s.groups[0].advances >= 6, "{:?}", s.groups);
        assert!(s.groups[1].advances >= 6, "{:?}", s.groups);
    }

    #[test]
    fn same_group_legs_track_identically() {
        let mut s = ControllerState::new(
            vec![3, 2, 3, 2],
            vec![
                GaitGroup::One,
                GaitGroup::Two,
                GaitGroup::One,
                GaitGroup::Two,
            ],
        );
        let table = GaitTable::default();
        for _ in 0..2000 {
            s.step(&table, DT);
            assert_eq!(s.leg_angles(0), s.leg_angles(2));
            assert_eq!(s.leg_angles(1), s.leg_angles(3));
        }
    }

    #[test]
    fn transition_is_pure() {
        let mut a = ControllerState::new(vec![2, 3], vec![GaitGroup::One, GaitGroup::Two]);
        let table = GaitTable::default();
        for _ in 0..500 {
            a.step(&table, DT);
        }
        let mut b = a.clone();
        let ra = a.step(&table, DT);
        let rb = b.step(&table, DT);
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn table_check_rejects_out_of_range() {
        let mut t = GaitTable::default();
        assert!(t.check().is_ok());
        t.targets_3link[0][2] = 4.0;
        assert!(t.check().is_err());
    }
}

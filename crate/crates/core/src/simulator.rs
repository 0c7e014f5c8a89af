//! Quasi-static anchor model of legged locomotion on a heightfield.
//!
//! Feet that touch the ground pin a world point. Each step the body takes
//! the planar rigid motion that best keeps the pinned feet on their anchors,
//! then drops or rises so the lowest anchored foot rests on the surface.
//! Roll and pitch stay at zero.
//!
//! Joint trajectories depend only on which link counts are present in each
//! gait group, so [`Simulator`] caches them per group makeup and reuses them
//! across genomes. [`Simulator::simulate_stepwise`] runs the same model
//! through the full [`ControllerState`] and must agree bit for bit.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::controller::{assign_groups, ControllerState, GaitGroup, GaitTable, MAX_JOINT_VELOCITY};
use crate::genome::{Genome, Side};
use crate::morphology::Morphology;
use crate::terrain::Terrain;
use crate::{Error, Result};

/// A foot is in contact within this height above the surface, cm.
pub const CONTACT_THRESHOLD: f64 = 0.25;
/// cm/s².
pub const GRAVITY: f64 = 981.0;
/// Fraction of planar motion kept while the body drags on the ground.
pub const BODY_DRAG: f64 = 0.3;
/// Body deeper than this below the surface counts as a fall, cm.
pub const KILL_DEPTH: f64 = 5.0;
/// Clearance of the longest leg's foot at placement, cm.
pub const START_CLEARANCE: f64 = 2.0;
/// Largest body yaw rate, rad/s; equal to the joint velocity limit.
pub const MAX_YAW_RATE: f64 = MAX_JOINT_VELOCITY;

pub fn fitness(dx: f64, dy: f64) -> f64 {
    dx - 0.5 * dy.abs()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub gait: GaitTable,
    /// Step size, s.
    pub dt: f64,
    /// Simulated time, s.
    pub duration: f64,
    /// Steps between recorded frames.
    pub frame_every: usize,
    pub record_frames: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            gait: GaitTable::default(),
            dt: 0.005,
            duration: 30.0,
            frame_every: 10,
            record_frames: false,
        }
    }
}

impl SimConfig {
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn with_frames(mut self) -> Self {
        self.record_frames = true;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: f64,
    pub pose: Pose,
    pub joint_angles: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub fitness: f64,
    pub dx: f64,
    pub dy: f64,
    pub fell_off: bool,
    pub frames: Vec<Frame>,
}

/// Rigid body kinematics of a compiled robot.
#[derive(Clone, Debug)]
pub struct BodyModel {
    pub dims: [f64; 3],
    pub attachments: Vec<[f64; 3]>,
    pub link_lengths: Vec<Vec<f64>>,
    pub groups: Vec<GaitGroup>,
    /// Leg pairs (left, right) by slot index, for side-symmetric summation.
    pairs: Vec<(Option<usize>, Option<usize>)>,
    longest: usize,
}

impl BodyModel {
    pub fn new(m: &Morphology, groups: Vec<GaitGroup>) -> Self {
        assert_eq!(groups.len(), m.legs.len());
        let lengths: Vec<f64> = m.leg_lengths();
        let mut longest = 0;
        for (i, l) in lengths.iter().enumerate() {
            if *l > lengths[longest] {
                longest = i;
            }
        }
        let per_side = m.legs.iter().map(|l| l.slot.index + 1).max().unwrap_or(0);
        let mut pairs = vec![(None, None); per_side];
        for (i, leg) in m.legs.iter().enumerate() {
            match leg.slot.side {
                Side::Left => pairs[leg.slot.index].0 = Some(i),
                Side::Right => pairs[leg.slot.index].1 = Some(i),
            }
        }
        BodyModel {
            dims: m.body_dims,
            attachments: m.legs.iter().map(|l| l.attachment).collect(),
            link_lengths: m
                .legs
                .iter()
                .map(|l| l.links.iter().map(|k| k.length()).collect())
                .collect(),
            groups,
            pairs,
            longest,
        }
    }

    pub fn from_genome(g: &Genome) -> Result<Self> {
        let m = Morphology::build(g)?;
        Ok(BodyModel::new(
            &m,
            assign_groups(g.legs.len(), g.layout_mirror),
        ))
    }

    pub fn num_legs(&self) -> usize {
        self.attachments.len()
    }

    /// Index of the longest leg; ties go to the first in perimeter order.
    pub fn longest_leg(&self) -> usize {
        self.longest
    }

    fn leg_links(&self) -> Vec<usize> {
        self.link_lengths.iter().map(Vec::len).collect()
    }

    /// Sum `f(leg)` pairing left and right legs of the same slot index first,
    /// so mirrored robots accumulate in the same order.
    #[inline]
    fn sym_sum(&self, mut f: impl FnMut(usize) -> Option<[f64; 3]>) -> ([f64; 3], usize) {
        let mut acc = [0.0; 3];
        let mut n = 0;
        for &(l, r) in &self.pairs {
            let a = l.and_then(&mut f);
            let b = r.and_then(&mut f);
            let part = match (a, b) {
                (Some(a), Some(b)) => {
                    n += 2;
                    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
                }
                (Some(v), None) | (None, Some(v)) => {
                    n += 1;
                    v
                }
                (None, None) => continue,
            };
            for k in 0..3 {
                acc[k] += part[k];
            }
        }
        (acc, n)
    }
}

/// Cumulative link angle sines and cosines of one leg.
pub type LinkTrig = [(f64, f64); 3];

pub fn link_trig(angles: &[f64]) -> LinkTrig {
    let mut out = [(0.0, 1.0); 3];
    let mut phi = 0.0;
    for (k, a) in angles.iter().enumerate() {
        phi += a;
        out[k] = phi.sin_cos();
    }
    out
}

/// Foot position in the body frame. Positive joint angles swing the foot
/// towards +x.
#[inline]
pub fn foot_offset(attachment: [f64; 3], lengths: &[f64], trig: &LinkTrig) -> [f64; 3] {
    let mut p = attachment;
    for (k, l) in lengths.iter().enumerate() {
        let (s, c) = trig[k];
        p[0] += l * s;
        p[2] -= l * c;
    }
    p
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanarTransform {
    pub cos: f64,
    pub sin: f64,
    pub tx: f64,
    pub ty: f64,
}

impl PlanarTransform {
    pub const IDENTITY: PlanarTransform = PlanarTransform {
        cos: 1.0,
        sin: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn angle(&self) -> f64 {
        self.sin.atan2(self.cos)
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.cos * p[0] - self.sin * p[1] + self.tx,
            self.sin * p[0] + self.cos * p[1] + self.ty,
        ]
    }
}

/// Least-squares rigid motion taking `src` onto `dst`. One point gives a
/// pure translation.
pub fn register_planar(src: &[[f64; 2]], dst: &[[f64; 2]]) -> PlanarTransform {
    assert_eq!(src.len(), dst.len());
    let n = src.len();
    match n {
        0 => PlanarTransform::IDENTITY,
        1 => PlanarTransform {
            tx: dst[0][0] - src[0][0],
            ty: dst[0][1] - src[0][1],
            ..PlanarTransform::IDENTITY
        },
        _ => {
            let mut cs = [0.0; 2];
            let mut cd = [0.0; 2];
            for (s, d) in src.iter().zip(dst) {
                cs[0] += s[0];
                cs[1] += s[1];
                cd[0] += d[0];
                cd[1] += d[1];
            }
            let nf = n as f64;
            let cs = [cs[0] / nf, cs[1] / nf];
            let cd = [cd[0] / nf, cd[1] / nf];
            let (mut dot, mut cross) = (0.0, 0.0);
            for (s, d) in src.iter().zip(dst) {
                let (sx, sy) = (s[0] - cs[0], s[1] - cs[1]);
                let (dx, dy) = (d[0] - cd[0], d[1] - cd[1]);
                dot += sx * dx + sy * dy;
                cross += sx * dy - sy * dx;
            }
            finish_registration(cs, cd, dot, cross)
        }
    }
}

/// Least-squares rigid motion with the rotation limited to `max_angle`;
/// the translation stays optimal for the limited angle.
fn clamp_rotation(
    t: PlanarTransform,
    cs: [f64; 2],
    cd: [f64; 2],
    max_angle: f64,
) -> PlanarTransform {
    let angle = t.angle();
    if angle.abs() <= max_angle {
        return t;
    }
    // A half turn ties in both directions; stay put.
    let a = if t.sin == 0.0 {
        0.0
    } else {
        max_angle.copysign(angle)
    };
    let (sin, cos) = a.sin_cos();
    PlanarTransform {
        cos,
        sin,
        tx: cd[0] - (cos * cs[0] - sin * cs[1]),
        ty: cd[1] - (sin * cs[0] + cos * cs[1]),
    }
}

fn finish_registration(cs: [f64; 2], cd: [f64; 2], dot: f64, cross: f64) -> PlanarTransform {
    let r = dot.hypot(cross);
    let (cos, sin) = if r > 0.0 {
        (dot / r, cross / r)
    } else {
        (1.0, 0.0)
    };
    PlanarTransform {
        cos,
        sin,
        tx: cd[0] - (cos * cs[0] - sin * cs[1]),
        ty: cd[1] - (sin * cs[0] + cos * cs[1]),
    }
}

/// Planar pose, vertical state and contact anchors of the body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    pub position: [f64; 3],
    /// (cos yaw, sin yaw).
    pub heading: [f64; 2],
    pub vz: f64,
    pub anchors: Vec<Option<[f64; 2]>>,
    pub body_contact: bool,
}

impl BodyState {
    pub fn pose(&self) -> Pose {
        Pose {
            x: self.position[0],
            y: self.position[1],
            z: self.position[2],
            yaw: self.heading[1].atan2(self.heading[0]),
        }
    }

    #[inline]
    fn to_world(&self, xy: [f64; 2], rel: [f64; 3]) -> [f64; 2] {
        let [c, s] = self.heading;
        [
            xy[0] + c * rel[0] - s * rel[1],
            xy[1] + s * rel[0] + c * rel[1],
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub body: BodyState,
    pub controller: ControllerState,
    pub elapsed: f64,
    pub steps: usize,
}

/// All joints at zero, the longest leg's foot `START_CLEARANCE` above the
/// surface directly beneath it.
pub fn initial_pose(model: &BodyModel, terrain: &Terrain) -> SimState {
    let leg = model.longest_leg();
    let a = model.attachments[leg];
    let length: f64 = model.link_lengths[leg].iter().sum();
    let ground = terrain.surface(a[0], a[1]);
    let z = ground + START_CLEARANCE + length - a[2];
    SimState {
        body: BodyState {
            position: [0.0, 0.0, z],
            heading: [1.0, 0.0],
            vz: 0.0,
            anchors: vec![None; model.num_legs()],
            body_contact: false,
        },
        controller: ControllerState::new(model.leg_links(), model.groups.clone()),
        elapsed: 0.0,
        steps: 0,
    }
}

/// One full step: controller, then body physics.
pub fn step(
    state: &mut SimState,
    model: &BodyModel,
    terrain: &Terrain,
    gait: &GaitTable,
    dt: f64,
) -> Result<()> {
    state.controller.step(gait, dt);
    let feet: Vec<[f64; 3]> = (0..model.num_legs())
        .map(|i| {
            let angles: Vec<f64> = state
                .controller
                .leg_angles(i)
                .iter()
                .map(|j| j.angle)
                .collect();
            foot_offset(
                model.attachments[i],
                &model.link_lengths[i],
                &link_trig(&angles),
            )
        })
        .collect();
    advance_body(&mut state.body, model, &feet, terrain, dt).map_err(|what| {
        Error::NumericFault {
            step: state.steps,
            what,
        }
    })?;
    state.elapsed += dt;
    state.steps += 1;
    Ok(())
}

/// Body update given this step's foot positions in the body frame.
pub fn advance_body(
    body: &mut BodyState,
    model: &BodyModel,
    feet: &[[f64; 3]],
    terrain: &Terrain,
    dt: f64,
) -> std::result::Result<(), &'static str> {
    let old_xy = [body.position[0], body.position[1]];
    let old_heading = body.heading;

    // Contacts against the pre-step pose.
    let mut world = [[0.0; 2]; 8];
    let mut any_anchor = false;
    for (i, rel) in feet.iter().enumerate() {
        let w = body.to_world(old_xy, *rel);
        world[i] = w;
        let foot_z = body.position[2] + rel[2];
        if foot_z <= terrain.surface(w[0], w[1]) + CONTACT_THRESHOLD {
            if body.anchors[i].is_none() {
                body.anchors[i] = Some(w);
            }
            any_anchor = true;
        } else {
            body.anchors[i] = None;
        }
    }

    // Planar registration of anchored feet.
    let anchors = &body.anchors;
    let (sum_s, n) = model.sym_sum(|i| anchors[i].map(|_| [world[i][0], world[i][1], 0.0]));
    let transform = match n {
        0 => PlanarTransform::IDENTITY,
        1 => {
            let (sum_d, _) = model.sym_sum(|i| anchors[i].map(|a| [a[0], a[1], 0.0]));
            PlanarTransform {
                tx: sum_d[0] - sum_s[0],
                ty: sum_d[1] - sum_s[1],
                ..PlanarTransform::IDENTITY
            }
        }
        _ => {
            let (sum_d, _) = model.sym_sum(|i| anchors[i].map(|a| [a[0], a[1], 0.0]));
            let nf = n as f64;
            let cs = [sum_s[0] / nf, sum_s[1] / nf];
            let cd = [sum_d[0] / nf, sum_d[1] / nf];
            let (terms, _) = model.sym_sum(|i| {
                anchors[i].map(|a| {
                    let (sx, sy) = (world[i][0] - cs[0], world[i][1] - cs[1]);
                    let (dx, dy) = (a[0] - cd[0], a[1] - cd[1]);
                    [sx * dx + sy * dy, sx * dy - sy * dx, 0.0]
                })
            });
            clamp_rotation(
                finish_registration(cs, cd, terms[0], terms[1]),
                cs,
                cd,
                MAX_YAW_RATE * dt,
            )
        }
    };

    let mut xy = transform.apply(old_xy);
    let mut heading = if n >= 2 {
        let [c, s] = old_heading;
        let nc = transform.cos * c - transform.sin * s;
        let ns = transform.sin * c + transform.cos * s;
        let norm = nc.hypot(ns);
        [nc / norm, ns / norm]
    } else {
        old_heading
    };

    body.heading = heading;
    let (mut z, mut vz, touching) = settle(body, model, feet, terrain, xy, any_anchor, dt);
    if touching {
        xy = [
            old_xy[0] + BODY_DRAG * (xy[0] - old_xy[0]),
            old_xy[1] + BODY_DRAG * (xy[1] - old_xy[1]),
        ];
        (z, vz, _) = settle(body, model, feet, terrain, xy, any_anchor, dt);
    }

    // Sliding contact with the valley's vertical wall.
    if let Some(wall) = terrain.wall_y() {
        if max_y(model, feet, xy, heading) > wall {
            xy[1] = old_xy[1];
            if max_y(model, feet, xy, heading) > wall {
                heading = old_heading;
                body.heading = heading;
            }
            (z, vz, _) = settle(body, model, feet, terrain, xy, any_anchor, dt);
        }
    }
    body.position = [xy[0], xy[1], z];
    body.vz = vz;
    body.body_contact = touching;

    // Anchored feet that slipped are pinned where they ended up.
    for (i, rel) in feet.iter().enumerate() {
        if body.anchors[i].is_some() {
            body.anchors[i] = Some(body.to_world(xy, *rel));
        }
    }

    if !(body.position.iter().all(|v| v.is_finite()) && body.heading.iter().all(|v| v.is_finite()))
    {
        return Err("non-finite body pose");
    }
    Ok(())
}

fn max_y(model: &BodyModel, feet: &[[f64; 3]], xy: [f64; 2], heading: [f64; 2]) -> f64 {
    let [c, s] = heading;
    let (hx, hy) = (model.dims[0] / 2.0, model.dims[1] / 2.0);
    let corners = [[hx, hy], [hx, -hy], [-hx, hy], [-hx, -hy]];
    corners
        .iter()
        .map(|p| [p[0], p[1], 0.0])
        .chain(feet.iter().copied())
        .map(|p| xy[1] + s * p[0] + c * p[1])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Vertical resolution: anchored feet hold the body up, otherwise it falls
/// until a foot or the underside lands. Returns (z, vz, body touching).
fn settle(
    body: &BodyState,
    model: &BodyModel,
    feet: &[[f64; 3]],
    terrain: &Terrain,
    xy: [f64; 2],
    any_anchor: bool,
    dt: f64,
) -> (f64, f64, bool) {
    let mut support = f64::NEG_INFINITY;
    let mut landing = f64::NEG_INFINITY;
    for (i, rel) in feet.iter().enumerate() {
        let w = body.to_world(xy, *rel);
        let needed = terrain.surface(w[0], w[1]) - rel[2];
        landing = landing.max(needed);
        if body.anchors[i].is_some() {
            support = support.max(needed);
        }
    }
    let (mut z, mut vz) = if any_anchor {
        (support, 0.0)
    } else {
        let vz = body.vz - GRAVITY * dt;
        let z = body.position[2] + vz * dt;
        if z <= landing {
            (landing, 0.0)
        } else {
            (z, vz)
        }
    };

    let (hx, hy, hz) = (
        model.dims[0] / 2.0,
        model.dims[1] / 2.0,
        model.dims[2] / 2.0,
    );
    let mut floor = f64::NEG_INFINITY;
    for sx in [-hx, 0.0, hx] {
        for sy in [-hy, 0.0, hy] {
            let w = body.to_world(xy, [sx, sy, 0.0]);
            floor = floor.max(terrain.surface(w[0], w[1]));
        }
    }
    let underside = floor + hz;
    let touching = z <= underside;
    if touching {
        z = underside;
        vz = 0.0;
    }
    (z, vz, touching)
}

/// Precomputed joint trajectory of one gait-group makeup: for each leg class
/// (group, link count) present, the angles and link trig at every step.
struct Track {
    classes: Vec<(GaitGroup, usize)>,
    angles: Vec<Vec<[f64; 3]>>,
    trig: Vec<Vec<LinkTrig>>,
}

impl Track {
    fn build(key: usize, gait: &GaitTable, dt: f64, steps: usize) -> Track {
        let classes: Vec<(GaitGroup, usize)> = (0..4)
            .filter(|b| key & (1 << b) != 0)
            .map(|b| {
                let group = if b < 2 {
                    GaitGroup::One
                } else {
                    GaitGroup::Two
                };
                (group, 2 + b % 2)
            })
            .collect();
        let mut ctrl = ControllerState::new(
            classes.iter().map(|c| c.1).collect(),
            classes.iter().map(|c| c.0).collect(),
        );
        let mut angles = vec![Vec::with_capacity(steps + 1); classes.len()];
        let mut trig = vec![Vec::with_capacity(steps + 1); classes.len()];
        let mut record = |ctrl: &ControllerState| {
            for c in 0..classes.len() {
                let mut a = [0.0; 3];
                for (k, j) in ctrl.leg_angles(c).iter().enumerate() {
                    a[k] = j.angle;
                }
                angles[c].push(a);
                trig[c].push(link_trig(&a[..classes[c].1]));
            }
        };
        record(&ctrl);
        for _ in 0..steps {
            ctrl.step(gait, dt);
            record(&ctrl);
        }
        Track {
            classes,
            angles,
            trig,
        }
    }

    fn class_of(&self, group: GaitGroup, links: usize) -> usize {
        self.classes
            .iter()
            .position(|c| *c == (group, links))
            .expect("leg class present in track")
    }
}

fn track_key(model: &BodyModel) -> usize {
    model
        .groups
        .iter()
        .zip(&model.link_lengths)
        .map(|(g, l)| 1 << (g.index() * 2 + (l.len() - 2)))
        .fold(0, |a, b| a | b)
}

/// Evaluates genomes on one terrain with one configuration. Shareable across
/// threads; joint trajectories are computed once per group makeup.
pub struct Simulator {
    terrain: Terrain,
    config: SimConfig,
    tracks: [OnceLock<Arc<Track>>; 16],
}

impl Simulator {
    pub fn new(terrain: Terrain, config: SimConfig) -> Result<Self> {
        terrain.check()?;
        config.gait.check()?;
        if !(config.dt > 0.0 && config.duration >= 0.0 && config.frame_every > 0) {
            return Err(Error::Config(
                "dt and frame interval must be positive".into(),
            ));
        }
        Ok(Simulator {
            terrain,
            config,
            tracks: Default::default(),
        })
    }

    pub fn terrain(&self) -> &Terrain {
        &self.terrain
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    fn track(&self, key: usize) -> &Track {
        self.tracks[key].get_or_init(|| {
            Arc::new(Track::build(
                key,
                &self.config.gait,
                self.config.dt,
                self.config.steps(),
            ))
        })
    }

    pub fn simulate(&self, g: &Genome) -> Result<SimResult> {
        let model = BodyModel::from_genome(g)?;
        self.simulate_model(&model)
    }

    /// Simulate with an explicit gait-group assignment in perimeter order.
    pub fn simulate_with_groups(&self, g: &Genome, groups: Vec<GaitGroup>) -> Result<SimResult> {
        let m = Morphology::build(g)?;
        if groups.len() != m.legs.len() {
            return Err(Error::Config("one gait group per leg required".into()));
        }
        self.simulate_model(&BodyModel::new(&m, groups))
    }

    pub fn simulate_model(&self, model: &BodyModel) -> Result<SimResult> {
        let cfg = &self.config;
        let track = self.track(track_key(model));
        let class: Vec<usize> = model
            .groups
            .iter()
            .zip(&model.link_lengths)
            .map(|(g, l)| track.class_of(*g, l.len()))
            .collect();
        let mut state = initial_pose(model, &self.terrain);
        let mut body = state.body.clone();
        let angles_at = |step: usize| -> Vec<f64> {
            class
                .iter()
                .zip(&model.link_lengths)
                .flat_map(|(&c, l)| track.angles[c][step][..l.len()].to_vec())
                .collect()
        };

        let mut frames = Vec::new();
        if cfg.record_frames {
            frames.push(Frame {
                t: 0.0,
                pose: body.pose(),
                joint_angles: angles_at(0),
            });
        }
        let mut feet = vec![[0.0; 3]; model.num_legs()];
        let mut fell_off = false;
        let mut last = 0;
        for s in 1..=cfg.steps() {
            for (i, f) in feet.iter_mut().enumerate() {
                *f = foot_offset(
                    model.attachments[i],
                    &model.link_lengths[i],
                    &track.trig[class[i]][s],
                );
            }
            advance_body(&mut body, model, &feet, &self.terrain, cfg.dt)
                .map_err(|what| Error::NumericFault { step: s, what })?;
            last = s;
            let fell = self.fell(&body);
            if cfg.record_frames && (s % cfg.frame_every == 0 || fell) {
                frames.push(Frame {
                    t: s as f64 * cfg.dt,
                    pose: body.pose(),
                    joint_angles: angles_at(s),
                });
            }
            if fell {
                fell_off = true;
                break;
            }
        }
        state.body = body;
        state.steps = last;
        Ok(finish(&state, fell_off, frames))
    }

    /// Reference path through the full controller state, one [`step`] at a time.
    pub fn simulate_stepwise(&self, g: &Genome) -> Result<SimResult> {
        let model = BodyModel::from_genome(g)?;
        let cfg = &self.config;
        let mut state = initial_pose(&model, &self.terrain);
        let angles = |s: &SimState| s.controller.angles().collect::<Vec<_>>();
        let mut frames = Vec::new();
        if cfg.record_frames {
            frames.push(Frame {
                t: 0.0,
                pose: state.body.pose(),
                joint_angles: angles(&state),
            });
        }
        let mut fell_off = false;
        for s in 1..=cfg.steps() {
            step(&mut state, &model, &self.terrain, &cfg.gait, cfg.dt)?;
            let fell = self.fell(&state.body);
            if cfg.record_frames && (s % cfg.frame_every == 0 || fell) {
                frames.push(Frame {
                    t: s as f64 * cfg.dt,
                    pose: state.body.pose(),
                    joint_angles: angles(&state),
                });
            }
            if fell {
                fell_off = true;
                break;
            }
        }
        Ok(finish(&state, fell_off, frames))
    }

    fn fell(&self, body: &BodyState) -> bool {
        let [x, y, z] = body.position;
        !self.terrain.in_bounds(x, y) || z < self.terrain.surface(x, y) - KILL_DEPTH
    }
}

fn finish(state: &SimState, fell_off: bool, frames: Vec<Frame>) -> SimResult {
    let dx = state.body.position[0];
    let dy = state.body.position[1];
    SimResult {
        fitness: fitness(dx, dy),
        dx,
        dy,
        fell_off,
        frames,
    }
}

/// Convenience wrapper building a one-off [`Simulator`].
pub fn simulate(g: &Genome, terrain: &Terrain, config: &SimConfig) -> Result<SimResult> {
    Simulator::new(terrain.clone(), config.clone())?.simulate(g)
}

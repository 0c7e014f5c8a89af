//! Direct-encoded robot genome: body shape and scale, leg layout, and per-link
//! shape and length scale.
//!
//! Legs are stored in perimeter order: front-left first, then the right side
//! front to back, then the left side back to front. The same order drives gait
//! group assignment in the controller.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub const BODY_SHAPE_RANGE: (i32, i32) = (1, 6);
pub const LINK_SHAPE_RANGE: (i32, i32) = (1, 7);
pub const NUM_LEGS_RANGE: (i32, i32) = (2, 6);
pub const LINKS_PER_LEG_RANGE: (usize, usize) = (2, 3);
pub const SCALE_RANGE: (f64, f64) = (0.5, 1.5);

/// Body prism dimensions (x, y, z) in cm, indexed by body shape id - 1.
pub const BODY_DIMS: [[f64; 3]; 6] = [
    [10.0, 10.0, 4.0],
    [15.0, 10.0, 4.0],
    [20.0, 10.0, 4.0],
    [10.0, 5.0, 4.0],
    [15.0, 5.0, 4.0],
    [7.0, 5.0, 4.0],
];

/// Link prism dimensions (x, y, z) in cm, indexed by link shape id - 1. Z is
/// the length axis.
pub const LINK_DIMS: [[f64; 3]; 7] = [
    [1.0, 1.0, 4.0],
    [4.0, 1.0, 4.0],
    [1.0, 4.0, 4.0],
    [1.0, 4.0, 2.0],
    [1.0, 4.0, 7.0],
    [1.0, 1.0, 7.0],
    [1.0, 1.0, 10.0],
];

/// Lower and upper bound of the body x-length feature, cm.
pub const BODY_LENGTH_BOUNDS: (f64, f64) = (3.5, 30.0);
/// Lower and upper bound of the leg-length standard deviation feature, cm.
pub const LEG_STD_BOUNDS: (f64, f64) = (0.0, 21.5);

/// Relative size of a real-valued mutation step, as a fraction of the gene range.
const REAL_MUTATION_SPAN: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkGenome {
    pub shape_id: i32,
    pub length_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LegGenome {
    pub links: Vec<LinkGenome>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub body_shape_id: i32,
    pub body_scale: [f64; 3],
    pub num_legs: i32,
    pub layout_mirror: bool,
    pub legs: Vec<LegGenome>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub body_length_x: f64,
    pub leg_length_std: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.field, self.message)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

/// Where a leg sits on the body: which side and its index on that side,
/// counted front to back.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LegSlot {
    pub side: Side,
    pub index: usize,
}

/// Number of legs on the (left, right) sides. For odd counts the right side
/// takes the extra leg unless `layout_mirror` is set.
pub fn side_counts(num_legs: usize, layout_mirror: bool) -> (usize, usize) {
    let small = num_legs / 2;
    let large = num_legs - small;
    if layout_mirror {
        (large, small)
    } else {
        (small, large)
    }
}

/// Body slots in perimeter order: front-left, then down the right side, then
/// back up the left side.
pub fn perimeter_slots(num_legs: usize, layout_mirror: bool) -> Vec<LegSlot> {
    let (left, right) = side_counts(num_legs, layout_mirror);
    let mut slots = Vec::with_capacity(num_legs);
    if left > 0 {
        slots.push(LegSlot {
            side: Side::Left,
            index: 0,
        });
    }
    slots.extend((0..right).map(|index| LegSlot {
        side: Side::Right,
        index,
    }));
    slots.extend((1..left).rev().map(|index| LegSlot {
        side: Side::Left,
        index,
    }));
    slots
}

/// One mutable gene, used to trace where mutation draws happened.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Gene {
    BodyShape,
    BodyScale(usize),
    NumLegs,
    LayoutMirror,
    LinkCount { leg: usize },
    LinkShape { leg: usize, link: usize },
    LinkScale { leg: usize, link: usize },
}

impl LinkGenome {
    pub fn length(&self) -> f64 {
        LINK_DIMS[(self.shape_id - 1) as usize][2] * self.length_scale
    }
}

impl LegGenome {
    pub fn length(&self) -> f64 {
        self.links.iter().map(LinkGenome::length).sum()
    }
}

impl Genome {
    /// The designer's starting robot: every control at the middle of its
    /// range, integer middles rounded down.
    pub fn neutral() -> Genome {
        let link = LinkGenome {
            shape_id: 4,
            length_scale: 1.0,
        };
        let leg = LegGenome {
            links: vec![link.clone(), link],
        };
        Genome {
            body_shape_id: 3,
            body_scale: [1.0, 1.0, 1.0],
            num_legs: 4,
            layout_mirror: false,
            legs: vec![leg; 4],
        }
    }

    /// Every gene drawn uniformly from its allele range.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Genome {
        let body_shape_id = rng.gen_range(BODY_SHAPE_RANGE.0..=BODY_SHAPE_RANGE.1);
        let body_scale = [random_scale(rng), random_scale(rng), random_scale(rng)];
        let num_legs = rng.gen_range(NUM_LEGS_RANGE.0..=NUM_LEGS_RANGE.1);
        let layout_mirror = rng.gen_bool(0.5);
        let legs = (0..num_legs).map(|_| random_leg(rng)).collect();
        Genome {
            body_shape_id,
            body_scale,
            num_legs,
            layout_mirror,
            legs,
        }
    }

    /// Every range and structural violation. Empty means valid.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |field: String, message: String| out.push(Violation { field, message });

        if !(BODY_SHAPE_RANGE.0..=BODY_SHAPE_RANGE.1).contains(&self.body_shape_id) {
            push("body_shape_id".into(), "out of 1–6".into());
        }
        for (i, s) in self.body_scale.iter().enumerate() {
            if !scale_ok(*s) {
                push(format!("body_scale[{i}]"), "out of [0.5, 1.5]".into());
            }
        }
        if !(NUM_LEGS_RANGE.0..=NUM_LEGS_RANGE.1).contains(&self.num_legs) {
            push("num_legs".into(), "out of 2–6".into());
        }
        if self.num_legs >= 0 && self.legs.len() != self.num_legs as usize {
            push(
                "legs".into(),
                format!(
                    "length mismatch: num_legs is {} but {} legs given",
                    self.num_legs,
                    self.legs.len()
                ),
            );
        }
        for (li, leg) in self.legs.iter().enumerate() {
            if !(LINKS_PER_LEG_RANGE.0..=LINKS_PER_LEG_RANGE.1).contains(&leg.links.len()) {
                push(format!("legs[{li}]"), "must have 2 or 3 links".into());
            }
            for (ki, link) in leg.links.iter().enumerate() {
                if !(LINK_SHAPE_RANGE.0..=LINK_SHAPE_RANGE.1).contains(&link.shape_id) {
                    push(format!("legs[{li}][{ki}].shape_id"), "out of 1–7".into());
                }
                if !scale_ok(link.length_scale) {
                    push(
                        format!("legs[{li}][{ki}].length_scale"),
                        "out of [0.5, 1.5]".into(),
                    );
                }
            }
        }
        out
    }

    pub fn validate(&self) -> crate::Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(crate::Error::InvalidGenome(v))
        }
    }

    pub fn is_valid(&self) -> bool {
        self.violations().is_empty()
    }

    pub fn slots(&self) -> Vec<LegSlot> {
        perimeter_slots(self.legs.len(), self.layout_mirror)
    }

    pub fn leg_lengths(&self) -> Vec<f64> {
        self.legs.iter().map(LegGenome::length).collect()
    }

    pub fn features(&self) -> FeatureDescriptor {
        let body_length_x = BODY_DIMS[(self.body_shape_id - 1) as usize][0] * self.body_scale[0];
        FeatureDescriptor {
            body_length_x,
            leg_length_std: population_std(&self.leg_lengths()),
        }
    }

    /// Reflect the robot across its sagittal plane: left and right leg lists
    /// swap and the layout flag flips, so an odd extra leg and the gait
    /// grouping follow their side.
    pub fn mirror(&self) -> Genome {
        let n = self.legs.len();
        let (mut left, mut right) = (Vec::new(), Vec::new());
        let mut by_slot: Vec<(LegSlot, &LegGenome)> =
            self.slots().into_iter().zip(self.legs.iter()).collect();
        by_slot.sort_by_key(|(s, _)| (s.side == Side::Right, s.index));
        for (slot, leg) in by_slot {
            match slot.side {
                Side::Left => left.push(leg.clone()),
                Side::Right => right.push(leg.clone()),
            }
        }
        let layout_mirror = !self.layout_mirror;
        // Old right-side legs become the new left side and vice versa.
        let legs = assemble_perimeter(n, layout_mirror, right, left);
        Genome {
            body_shape_id: self.body_shape_id,
            body_scale: self.body_scale,
            num_legs: self.num_legs,
            layout_mirror,
            legs,
        }
    }

    pub fn mutate<R: Rng + ?Sized>(&self, rate: f64, rng: &mut R) -> Genome {
        self.mutate_traced(rate, rng).0
    }

    /// Mutation that also reports every gene that received a mutation draw,
    /// whether or not its value changed.
    pub fn mutate_traced<R: Rng + ?Sized>(&self, rate: f64, rng: &mut R) -> (Genome, Vec<Gene>) {
        let mut g = self.clone();
        let mut trace = Vec::new();
        let rate = rate.clamp(0.0, 1.0);

        if rng.gen_bool(rate) {
            trace.push(Gene::BodyShape);
            g.body_shape_id = rng.gen_range(BODY_SHAPE_RANGE.0..=BODY_SHAPE_RANGE.1);
        }
        for i in 0..3 {
            if rng.gen_bool(rate) {
                trace.push(Gene::BodyScale(i));
                g.body_scale[i] = perturb_scale(g.body_scale[i], rng);
            }
        }
        if rng.gen_bool(rate) {
            trace.push(Gene::NumLegs);
            let n = rng.gen_range(NUM_LEGS_RANGE.0..=NUM_LEGS_RANGE.1);
            let target = n as usize;
            if target < g.legs.len() {
                g.legs.truncate(target);
            }
            while g.legs.len() < target {
                g.legs.push(random_leg(rng));
            }
            g.num_legs = n;
        }
        if rng.gen_bool(rate) {
            trace.push(Gene::LayoutMirror);
            g.layout_mirror = rng.gen_bool(0.5);
        }
        for (li, leg) in g.legs.iter_mut().enumerate() {
            if rng.gen_bool(rate) {
                trace.push(Gene::LinkCount { leg: li });
                let n = rng.gen_range(LINKS_PER_LEG_RANGE.0..=LINKS_PER_LEG_RANGE.1);
                if n < leg.links.len() {
                    leg.links.truncate(n);
                } else if let Some(last) = leg.links.last().cloned() {
                    leg.links.resize(n, last);
                }
            }
            for (ki, link) in leg.links.iter_mut().enumerate() {
                if rng.gen_bool(rate) {
                    trace.push(Gene::LinkShape { leg: li, link: ki });
                    link.shape_id = rng.gen_range(LINK_SHAPE_RANGE.0..=LINK_SHAPE_RANGE.1);
                }
                if rng.gen_bool(rate) {
                    trace.push(Gene::LinkScale { leg: li, link: ki });
                    link.length_scale = perturb_scale(link.length_scale, rng);
                }
            }
        }
        (g, trace)
    }

    /// Leg-aligned uniform crossover. The structural genes (leg count and
    /// layout flag) come together from one parent.
    pub fn crossover<R: Rng + ?Sized>(a: &Genome, b: &Genome, rng: &mut R) -> Genome {
        let structure = if rng.gen_bool(0.5) { a } else { b };
        let body_shape_id = if rng.gen_bool(0.5) {
            a.body_shape_id
        } else {
            b.body_shape_id
        };
        let mut body_scale = [0.0; 3];
        for (i, s) in body_scale.iter_mut().enumerate() {
            *s = if rng.gen_bool(0.5) {
                a.body_scale[i]
            } else {
                b.body_scale[i]
            };
        }
        let n = structure.legs.len();
        let legs = (0..n)
            .map(|i| match (a.legs.get(i), b.legs.get(i)) {
                (Some(la), Some(lb)) => {
                    if rng.gen_bool(0.5) {
                        la.clone()
                    } else {
                        lb.clone()
                    }
                }
                (Some(la), None) => la.clone(),
                (None, Some(lb)) => lb.clone(),
                (None, None) => unreachable!("leg index beyond both parents"),
            })
            .collect();
        Genome {
            body_shape_id,
            body_scale,
            num_legs: structure.num_legs,
            layout_mirror: structure.layout_mirror,
            legs,
        }
    }
}

fn assemble_perimeter(
    n: usize,
    layout_mirror: bool,
    left: Vec<LegGenome>,
    right: Vec<LegGenome>,
) -> Vec<LegGenome> {
    perimeter_slots(n, layout_mirror)
        .into_iter()
        .map(|slot| match slot.side {
            Side::Left => left[slot.index].clone(),
            Side::Right => right[slot.index].clone(),
        })
        .collect()
}

fn scale_ok(s: f64) -> bool {
    s.is_finite() && (SCALE_RANGE.0..=SCALE_RANGE.1).contains(&s)
}

fn random_scale<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.gen_range(SCALE_RANGE.0..=SCALE_RANGE.1)
}

fn random_leg<R: Rng + ?Sized>(rng: &mut R) -> LegGenome {
    let n = rng.gen_range(LINKS_PER_LEG_RANGE.0..=LINKS_PER_LEG_RANGE.1);
    LegGenome {
        links: (0..n).map(|_| random_link(rng)).collect(),
    }
}

fn random_link<R: Rng + ?Sized>(rng: &mut R) -> LinkGenome {
    LinkGenome {
        shape_id: rng.gen_range(LINK_SHAPE_RANGE.0..=LINK_SHAPE_RANGE.1),
        length_scale: random_scale(rng),
    }
}

fn perturb_scale<R: Rng + ?Sized>(value: f64, rng: &mut R) -> f64 {
    let span = (SCALE_RANGE.1 - SCALE_RANGE.0) * REAL_MUTATION_SPAN;
    (value + rng.gen_range(-span..=span)).clamp(SCALE_RANGE.0, SCALE_RANGE.1)
}

/// Population (divide-by-N) standard deviation. Values are summed in sorted
/// order so the result does not depend on leg order.
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let mut dev: Vec<f64> = sorted.iter().map(|v| (v - mean) * (v - mean)).collect();
    dev.sort_by(f64::total_cmp);
    (dev.iter().sum::<f64>() / n).sqrt()
}

/// A genome plus optional study metadata, the record type of design files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    #[serde(flatten)]
    pub genome: Genome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recorded_fitness: Option<f64>,
}

impl DesignRecord {
    pub fn bare(genome: Genome) -> Self {
        DesignRecord {
            genome,
            user_id: None,
            environment: None,
            iteration: None,
            recorded_fitness: None,
        }
    }
}

/// Parse a design file: either a single record or an array of records.
pub fn parse_design_file(text: &str) -> crate::Result<Vec<DesignRecord>> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value {
        serde_json::Value::Array(_) => Ok(serde_json::from_value(value)?),
        other => Ok(vec![serde_json::from_value(other)?]),
    }
}

pub fn write_design_file(records: &[DesignRecord]) -> crate::Result<String> {
    Ok(serde_json::to_string_pretty(records)?)
}

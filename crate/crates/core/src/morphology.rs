//! Compiles a genome into part dimensions, masses and leg attachment frames.

use serde::{Deserialize, Serialize};

use crate::genome::{Genome, LegSlot, Side, BODY_DIMS, LINK_DIMS};

/// Uniform material density of every part, g/cm³.
pub const DENSITY: f64 = 2.5;

/// Every joint rotates about the body y axis.
pub const JOINT_AXIS: [f64; 3] = [0.0, 1.0, 0.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkPhenotype {
    /// (x, y, z) in cm; z is the length axis.
    pub dims: [f64; 3],
    pub mass: f64,
}

impl LinkPhenotype {
    pub fn length(&self) -> f64 {
        self.dims[2]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegPhenotype {
    pub slot: LegSlot,
    /// Hip position in the body frame, cm. +x forward, +y left, +z up.
    pub attachment: [f64; 3],
    pub links: Vec<LinkPhenotype>,
    pub joint_axes: Vec<[f64; 3]>,
}

impl LegPhenotype {
    pub fn length(&self) -> f64 {
        self.links.iter().map(LinkPhenotype::length).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Morphology {
    pub body_dims: [f64; 3],
    pub body_mass: f64,
    /// Perimeter order, matching the genome's leg list.
    pub legs: Vec<LegPhenotype>,
}

impl Morphology {
    pub fn build(g: &Genome) -> crate::Result<Morphology> {
        g.validate()?;
        let base = BODY_DIMS[(g.body_shape_id - 1) as usize];
        let body_dims = [
            base[0] * g.body_scale[0],
            base[1] * g.body_scale[1],
            base[2] * g.body_scale[2],
        ];
        let body_mass = volume(body_dims) * DENSITY;
        let (n_left, n_right) = crate::genome::side_counts(g.legs.len(), g.layout_mirror);

        let legs = g
            .slots()
            .into_iter()
            .zip(&g.legs)
            .map(|(slot, leg)| {
                let per_side = match slot.side {
                    Side::Left => n_left,
                    Side::Right => n_right,
                };
                let links: Vec<LinkPhenotype> = leg
                    .links
                    .iter()
                    .map(|l| {
                        let d = LINK_DIMS[(l.shape_id - 1) as usize];
                        let dims = [d[0], d[1], d[2] * l.length_scale];
                        LinkPhenotype {
                            dims,
                            mass: volume(dims) * DENSITY,
                        }
                    })
                    .collect();
                LegPhenotype {
                    slot,
                    attachment: attachment_point(body_dims, slot, per_side),
                    joint_axes: vec![JOINT_AXIS; links.len()],
                    links,
                }
            })
            .collect();

        Ok(Morphology {
            body_dims,
            body_mass,
            legs,
        })
    }

    pub fn leg_lengths(&self) -> Vec<f64> {
        self.legs.iter().map(LegPhenotype::length).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.body_mass
            + self
                .legs
                .iter()
                .flat_map(|l| &l.links)
                .map(|l| l.mass)
                .sum::<f64>()
    }

    pub fn total_volume(&self) -> f64 {
        volume(self.body_dims)
            + self
                .legs
                .iter()
                .flat_map(|l| &l.links)
                .map(|l| volume(l.dims))
                .sum::<f64>()
    }

    /// Structured-text dump for debugging and UI preview.
    pub fn to_json(&self) -> crate::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn volume(d: [f64; 3]) -> f64 {
    d[0] * d[1] * d[2]
}

/// Legs sit at the z-midpoint of the side face, centred in equal x-segments
/// from front to back.
fn attachment_point(body: [f64; 3], slot: LegSlot, per_side: usize) -> [f64; 3] {
    let frac = (slot.index as f64 + 0.5) / per_side as f64;
    let x = body[0] / 2.0 - frac * body[0];
    let y = match slot.side {
        Side::Left => body[1] / 2.0,
        Side::Right => -body[1] / 2.0,
    };
    [x, y, 0.0]
}

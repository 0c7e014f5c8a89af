//! Heightfield environments.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Height reported beyond the valley's vertical wall, cm.
pub const WALL_HEIGHT: f64 = 1.0e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerrainKind {
    Ground,
    Sine,
    Valley,
}

impl TerrainKind {
    pub const ALL: [TerrainKind; 3] = [TerrainKind::Ground, TerrainKind::Sine, TerrainKind::Valley];

    pub fn name(self) -> &'static str {
        match self {
            TerrainKind::Ground => "ground",
            TerrainKind::Sine => "sine",
            TerrainKind::Valley => "valley",
        }
    }
}

impl fmt::Display for TerrainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TerrainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ground" | "g" => Ok(TerrainKind::Ground),
            "sine" | "s" => Ok(TerrainKind::Sine),
            "valley" | "v" => Ok(TerrainKind::Valley),
            other => Err(Error::Config(format!("unknown environment '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            x_min: -20.0,
            x_max: 300.0,
            y_min: -60.0,
            y_max: 60.0,
        }
    }
}

impl Bounds {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Terrain {
    pub kind: TerrainKind,
    /// Sine amplitude, cm.
    pub amplitude: f64,
    /// Sine wavelength along x, cm.
    pub wavelength: f64,
    /// Width of the flat valley floor, cm. The wall sits at +y, the 45° slope at -y.
    pub floor_width: f64,
    pub bounds: Bounds,
}

/// Partial terrain description read from a terrain config file; missing
/// fields keep the environment defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainOverrides {
    #[serde(default)]
    pub kind: Option<TerrainKind>,
    #[serde(default)]
    pub amplitude: Option<f64>,
    #[serde(default)]
    pub wavelength: Option<f64>,
    #[serde(default)]
    pub floor_width: Option<f64>,
    #[serde(default)]
    pub bounds: Option<Bounds>,
}

impl Terrain {
    pub fn new(kind: TerrainKind) -> Terrain {
        Terrain {
            kind,
            amplitude: 2.0,
            wavelength: 30.0,
            floor_width: 20.0,
            bounds: Bounds::default(),
        }
    }

    pub fn ground() -> Terrain {
        Terrain::new(TerrainKind::Ground)
    }

    pub fn sine() -> Terrain {
        Terrain::new(TerrainKind::Sine)
    }

    pub fn valley() -> Terrain {
        Terrain::new(TerrainKind::Valley)
    }

    pub fn with_overrides(mut self, o: &TerrainOverrides) -> Result<Terrain> {
        if let Some(k) = o.kind {
            self.kind = k;
        }
        if let Some(a) = o.amplitude {
            self.amplitude = a;
        }
        if let Some(w) = o.wavelength {
            self.wavelength = w;
        }
        if let Some(w) = o.floor_width {
            self.floor_width = w;
        }
        if let Some(b) = o.bounds {
            self.bounds = b;
        }
        self.check()?;
        Ok(self)
    }

    pub fn check(&self) -> Result<()> {
        let b = &self.bounds;
        let finite = [
            self.amplitude,
            self.wavelength,
            self.floor_width,
            b.x_min,
            b.x_max,
            b.y_min,
            b.y_max,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("terrain parameters must be finite".into()));
        }
        if b.x_min >= b.x_max || b.y_min >= b.y_max {
            return Err(Error::Config("terrain bounds are empty".into()));
        }
        if !b.contains(0.0, 0.0) {
            return Err(Error::Config(
                "terrain bounds must contain the start point".into(),
            ));
        }
        if self.wavelength <= 0.0 || self.floor_width <= 0.0 {
            return Err(Error::Config(
                "wavelength and floor width must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn in_bounds(&self, x: f64, y: f64) -> bool {
        self.bounds.contains(x, y)
    }

    pub fn height_at(&self, x: f64, y: f64) -> Result<f64> {
        if !self.in_bounds(x, y) {
            return Err(Error::OutOfBounds { x, y });
        }
        Ok(self.surface(x, y))
    }

    /// Unchecked surface height, total over the plane. Feet may briefly
    /// reach past the bounds while the body is still inside them.
    #[inline]
    pub fn surface(&self, x: f64, y: f64) -> f64 {
        match self.kind {
            TerrainKind::Ground => 0.0,
            TerrainKind::Sine => self.amplitude * (2.0 * PI * x / self.wavelength).sin(),
            TerrainKind::Valley => {
                let half = self.floor_width / 2.0;
                if y > half {
                    WALL_HEIGHT
                } else if y < -half {
                    -y - half
                } else {
                    0.0
                }
            }
        }
    }

    /// The y coordinate of the valley's vertical wall, if any.
    pub fn wall_y(&self) -> Option<f64> {
        match self.kind {
            TerrainKind::Valley => Some(self.floor_width / 2.0),
            _ => None,
        }
    }
}

use std::fmt;
use std::str::FromStr;

use image::codecs::png::PngEncoder;
use image::{ImageEncoder, Rgb, RgbImage};

use super::{ReplayError, Snapshot};
use crate::world::{AgentId, AgentKind, Block, Heading, Material, Position};

/// Pixels per cell.
pub const CELL_PX: u32 = 16;
/// Cells visible on each side of the agent in an egocentric frame.
pub const EGO_RADIUS: u32 = 7;

const OUTSIDE: Rgb<u8> = Rgb([20, 20, 28]);
const GROUND: Rgb<u8> = Rgb([112, 146, 88]);
const CHEST: Rgb<u8> = Rgb([206, 156, 48]);
const TABLE: Rgb<u8> = Rgb([122, 74, 36]);
const HUMAN: Rgb<u8> = Rgb([44, 96, 224]);
const AI: Rgb<u8> = Rgb([236, 204, 44]);
const NOSE: Rgb<u8> = Rgb([24, 24, 24]);

const BODY_RADIUS: f64 = 0.34;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Viewpoint {
    TopDown,
    Agent(AgentId),
}

impl FromStr for Viewpoint {
    type Err = ReplayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "topdown" | "top-down" | "top_down" => Ok(Viewpoint::TopDown),
            other => AgentId::new(other)
                .map(Viewpoint::Agent)
                .map_err(|_| ReplayError::UnknownViewpoint(other.to_string())),
        }
    }
}

impl fmt::Display for Viewpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Viewpoint::TopDown => f.write_str("topdown"),
            Viewpoint::Agent(id) => write!(f, "{id}"),
        }
    }
}

fn material_color(m: Material) -> [u8; 3] {
    match m {
        Material::Wood => [150, 100, 52],
        Material::Stone => [136, 136, 140],
        Material::Brick => [180, 62, 46],
    }
}

fn mix(a: [u8; 3], b: [u8; 3], f: f64) -> Rgb<u8> {
    let c = |i: usize| (a[i] as f64 * (1.0 - f) + b[i] as f64 * f).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

fn block_color(block: &Block) -> Rgb<u8> {
    match block {
        Block::Air => OUTSIDE,
        Block::Ground => GROUND,
        Block::Marker(m) => mix(GROUND.0, material_color(*m), 0.3),
        Block::Placed { material, .. } => Rgb(material_color(*material)),
        Block::Tower { material, .. } => mix(material_color(*material), [0, 0, 0], 0.45),
        Block::CraftingTable => TABLE,
        Block::Chest => CHEST,
    }
}

/// Unit vectors (forward, right) in world coordinates, +y pointing south.
fn axes(h: Heading) -> ((f64, f64), (f64, f64)) {
    match h {
        Heading::North => ((0.0, -1.0), (1.0, 0.0)),
        Heading::East => ((1.0, 0.0), (0.0, 1.0)),
        Heading::South => ((0.0, 1.0), (-1.0, 0.0)),
        Heading::West => ((-1.0, 0.0), (0.0, -1.0)),
    }
}

struct Glyph {
    at: Position,
    forward: (f64, f64),
    right: (f64, f64),
    body: Rgb<u8>,
}

impl Glyph {
    /// Disc with a wedge pointing along the heading.
    fn color_at(&self, p: Position) -> Option<Rgb<u8>> {
        let (dx, dy) = (p.x - self.at.x, p.y - self.at.y);
        let along = dx * self.forward.0 + dy * self.forward.1;
        let across = dx * self.right.0 + dy * self.right.1;
        let in_body = dx * dx + dy * dy <= BODY_RADIUS * BODY_RADIUS;
        let in_nose = (0.05..=0.48).contains(&along) && across.abs() <= (0.48 - along) * 0.55;
        if in_nose {
            Some(NOSE)
        } else if in_body {
            Some(self.body)
        } else {
            None
        }
    }
}

/// Renders a snapshot. The top-down frame is `width x height` cells; the
/// egocentric frame is centered on the agent, turned so it faces up, and
/// spans [`EGO_RADIUS`] cells each way.
pub fn render_frame(snapshot: &Snapshot, view: &Viewpoint) -> Result<RgbImage, ReplayError> {
    let world = &snapshot.world;
    let glyphs: Vec<Glyph> = world
        .agents
        .values()
        .map(|a| {
            let (forward, right) = axes(a.heading);
            Glyph {
                at: snapshot.display.get(&a.id).copied().unwrap_or(a.position),
                forward,
                right,
                body: if a.kind == AgentKind::Human { HUMAN } else { AI },
            }
        })
        .collect();
    let px = CELL_PX as f64;
    // Pixel center (sx, sy) maps to origin + sx * ex + sy * ey.
    let (w, h, origin, ex, ey) = match view {
        Viewpoint::TopDown => (
            world.config.width as u32 * CELL_PX,
            world.config.height as u32 * CELL_PX,
            (0.0, 0.0),
            (1.0 / px, 0.0),
            (0.0, 1.0 / px),
        ),
        Viewpoint::Agent(id) => {
            let agent = world
                .agents
                .get(id)
                .ok_or_else(|| ReplayError::UnknownViewpoint(id.to_string()))?;
            let center = snapshot.display.get(id).copied().unwrap_or(agent.position);
            let (f, r) = axes(agent.heading);
            let side = (2 * EGO_RADIUS + 1) * CELL_PX;
            let half = side as f64 / 2.0;
            let ex = (r.0 / px, r.1 / px);
            let ey = (-f.0 / px, -f.1 / px);
            let origin = (
                center.x - half * ex.0 - half * ey.0,
                center.y - half * ex.1 - half * ey.1,
            );
            (side, side, origin, ex, ey)
        }
    };
    let mut img = RgbImage::new(w, h);
    for (sx, sy, pixel) in img.enumerate_pixels_mut() {
        let (fx, fy) = (sx as f64 + 0.5, sy as f64 + 0.5);
        let p = Position::new(
            origin.0 + fx * ex.0 + fy * ey.0,
            origin.1 + fx * ex.1 + fy * ey.1,
        );
        *pixel = glyphs
            .iter()
            .find_map(|g| g.color_at(p))
            .unwrap_or_else(|| world.block(p.cell()).map_or(OUTSIDE, block_color));
    }
    Ok(img)
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, ReplayError> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .map_err(|e| ReplayError::Encode(e.to_string()))?;
    Ok(out)
}

pub fn render_png(snapshot: &Snapshot, view: &Viewpoint) -> Result<Vec<u8>, ReplayError> {
    encode_png(&render_frame(snapshot, view)?)
}

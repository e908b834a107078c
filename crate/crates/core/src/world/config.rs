use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Cell, Material};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanLayer {
    pub material: Material,
    pub cells: Vec<Cell>,
}

/// Cells to fill, grouped into layers that are built in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloorPlan {
    pub layers: Vec<PlanLayer>,
}

impl FloorPlan {
    /// Full-height columns spanning `y0..y0 + height`; each layer lists the
    /// x of its columns.
    pub fn from_columns(y0: i32, height: i32, layers: &[(Material, &[i32])]) -> Self {
        let layers = layers
            .iter()
            .map(|&(material, xs)| PlanLayer {
                material,
                cells: xs
                    .iter()
                    .flat_map(|&x| (y0..y0 + height).map(move |y| Cell::new(x, y)))
                    .collect(),
            })
            .collect();
        Self { layers }
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.cells.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(cell, material, layer index)` for every plan cell, in build order.
    pub fn cells(&self) -> impl Iterator<Item = (Cell, Material, usize)> + '_ {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.cells.iter().map(move |&c| (c, l.material, i)))
    }

    pub fn required(&self, cell: Cell) -> Option<Material> {
        self.cells().find(|&(c, _, _)| c == cell).map(|(_, m, _)| m)
    }

    pub fn material_totals(&self) -> BTreeMap<Material, u32> {
        let mut totals = BTreeMap::new();
        for (_, m, _) in self.cells() {
            *totals.entry(m).or_insert(0) += 1;
        }
        totals
    }

    pub fn centroid(&self) -> super::Position {
        let n = self.len().max(1) as f64;
        let (sx, sy) = self.cells().fold((0.0, 0.0), |(sx, sy), (c, _, _)| {
            (sx + c.x as f64 + 0.5, sy + c.y as f64 + 0.5)
        });
        super::Position::new(sx / n, sy / n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowerSpec {
    pub cell: Cell,
    pub material: Material,
    pub stock: u32,
}

/// Inclusive rectangle of candidate spawn cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpawnArea {
    pub min: Cell,
    pub max: Cell,
}

impl SpawnArea {
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (self.min.y..=self.max.y)
            .flat_map(move |y| (self.min.x..=self.max.x).map(move |x| Cell::new(x, y)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    /// Seconds of sustained mining per unit without a pickaxe.
    pub durations_s: BTreeMap<Material, f64>,
    pub pickaxe_speedup: f64,
}

impl MiningConfig {
    pub fn duration(&self, material: Material, has_pickaxe: bool) -> f64 {
        let base = self.durations_s.get(&material).copied().unwrap_or(1.0);
        if has_pickaxe {
            base / self.pickaxe_speedup
        } else {
            base
        }
    }
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            durations_s: BTreeMap::from([
                (Material::Wood, 2.0),
                (Material::Stone, 3.0),
                (Material::Brick, 3.0),
            ]),
            pickaxe_speedup: 4.0,
        }
    }
}

/// Load-time check that building the house needs more than one gatherer.
///
/// With `required`, the pickaxe-speed mining time of every plan block must
/// exceed the time limit, yet fit within it once split across `multiplier`
/// gatherers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollaborationRequirement {
    pub required: bool,
    pub multiplier: f64,
}

impl Default for CollaborationRequirement {
    fn default() -> Self {
        Self {
            required: true,
            multiplier: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionConfig {
    pub width: i32,
    pub height: i32,
    pub plan: FloorPlan,
    pub towers: Vec<TowerSpec>,
    pub crafting_table: Cell,
    pub chest: Cell,
    pub spawn_area: SpawnArea,
    pub time_limit_s: f64,
    pub tick_rate_hz: u32,
    pub seed: u64,
    pub mining: MiningConfig,
    pub pickaxe_wood_cost: u32,
    pub reach: f64,
    /// Cells per second.
    pub move_speed: f64,
    pub inventory_capacity: u32,
    pub chest_capacity: u32,
    pub phase_thresholds: [f64; 4],
    pub collaboration: CollaborationRequirement,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("floor plan is empty")]
    EmptyPlan,
    #[error("{what} at {cell} lies outside the {width}x{height} world")]
    OutOfBounds {
        what: &'static str,
        cell: Cell,
        width: i32,
        height: i32,
    },
    #[error("{0} overlaps another fixture or plan cell")]
    Overlap(Cell),
    #[error("{0}")]
    Invalid(String),
    #[error("towers hold {available} {material} but the plan needs {required}")]
    InsufficientSupply {
        material: Material,
        available: u32,
        required: u32,
    },
    #[error(
        "collaboration requirement not met: solo mining workload {workload:.2}s vs limit {limit:.2}s \
         with multiplier {multiplier}"
    )]
    Collaboration {
        workload: f64,
        limit: f64,
        multiplier: f64,
    },
    #[error("could not read config: {0}")]
    Io(String),
    #[error("could not parse config: {0}")]
    Parse(String),
}

impl Default for MissionConfig {
    /// Desk-scale mission: 90 s to build a three-layer house of 144 blocks.
    ///
    /// Each layer is two pairs of columns with a walkway between the columns
    /// of a pair, open at the south end where the towers and chest sit.
    fn default() -> Self {
        let plan = FloorPlan::from_columns(
            1,
            12,
            &[
                (Material::Wood, &[2, 4, 5, 7]),
                (Material::Stone, &[8, 10, 11, 13]),
                (Material::Brick, &[14, 16, 17, 19]),
            ],
        );
        let tower = |x, material| TowerSpec {
            cell: Cell::new(x, 15),
            material,
            stock: 40,
        };
        Self {
            width: 22,
            height: 19,
            plan,
            towers: vec![
                tower(3, Material::Wood),
                tower(6, Material::Wood),
                tower(9, Material::Stone),
                tower(12, Material::Stone),
                tower(15, Material::Brick),
                tower(18, Material::Brick),
            ],
            crafting_table: Cell::new(1, 15),
            chest: Cell::new(11, 14),
            spawn_area: SpawnArea {
                min: Cell::new(1, 17),
                max: Cell::new(20, 18),
            },
            time_limit_s: 90.0,
            tick_rate_hz: 20,
            seed: 0,
            mining: MiningConfig::default(),
            pickaxe_wood_cost: 3,
            reach: 1.5,
            move_speed: 7.0,
            inventory_capacity: 64,
            chest_capacity: 512,
            phase_thresholds: [0.2, 0.4, 0.6, 0.8],
            collaboration: CollaborationRequirement::default(),
        }
    }
}

impl MissionConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: MissionConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("mission config is always TOML-representable")
    }

    /// Same layout with no collaboration requirement and a longer limit,
    /// so a single builder can finish.
    pub fn relaxed(mut self, time_limit_s: f64) -> Self {
        self.time_limit_s = time_limit_s;
        self.collaboration.required = false;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.x >= 0 && cell.y >= 0 && cell.x < self.width && cell.y < self.height
    }

    pub fn tick_seconds(&self) -> f64 {
        1.0 / self.tick_rate_hz as f64
    }

    pub fn time_limit_ticks(&self) -> u64 {
        (self.time_limit_s * self.tick_rate_hz as f64).round() as u64
    }

    pub fn ticks_for(&self, seconds: f64) -> u64 {
        ((seconds * self.tick_rate_hz as f64).round() as u64).max(1)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("mission config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Seconds a single pickaxe-equipped gatherer needs to mine every plan block.
    pub fn solo_mining_workload(&self) -> f64 {
        self.plan
            .cells()
            .map(|(_, m, _)| self.mining.duration(m, true))
            .sum()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if self.width <= 0 || self.height <= 0 {
            return invalid(format!("world dims {}x{}", self.width, self.height));
        }
        if !(self.time_limit_s > 0.0) {
            return invalid("time_limit_s must be positive".into());
        }
        if self.tick_rate_hz == 0 {
            return invalid("tick_rate_hz must be positive".into());
        }
        let ticks = self.time_limit_s * self.tick_rate_hz as f64;
        if (ticks - ticks.round()).abs() > 1e-9 {
            return invalid("time_limit_s must be a whole number of ticks".into());
        }
        if self.plan.is_empty() || self.plan.layers.iter().any(|l| l.cells.is_empty()) {
            return Err(ConfigError::EmptyPlan);
        }
        if !(self.reach > 0.0) || !(self.move_speed > 0.0) {
            return invalid("reach and move_speed must be positive".into());
        }
        if self.inventory_capacity == 0 || self.chest_capacity == 0 {
            return invalid("capacities must be positive".into());
        }
        if !(self.mining.pickaxe_speedup >= 1.0) {
            return invalid("pickaxe_speedup must be >= 1".into());
        }
        for m in Material::ALL {
            match self.mining.durations_s.get(&m) {
                Some(d) if *d > 0.0 => {}
                _ => return invalid(format!("mining duration for {m} must be positive")),
            }
        }
        let t = self.phase_thresholds;
        if !(t[0] > 0.0 && t[3] < 1.0 && t.windows(2).all(|w| w[0] < w[1])) {
            return invalid(format!("phase thresholds {t:?} must ascend strictly inside (0, 1)"));
        }

        let mut occupied = BTreeSet::new();
        let mut claim = |what: &'static str, cell: Cell| {
            if !self.in_bounds(cell) {
                return Err(ConfigError::OutOfBounds {
                    what,
                    cell,
                    width: self.width,
                    height: self.height,
                });
            }
            if !occupied.insert(cell) {
                return Err(ConfigError::Overlap(cell));
            }
            Ok(())
        };
        for (cell, _, _) in self.plan.cells() {
            claim("plan cell", cell)?;
        }
        for tower in &self.towers {
            claim("tower", tower.cell)?;
        }
        claim("crafting table", self.crafting_table)?;
        claim("chest", self.chest)?;

        if !self.in_bounds(self.spawn_area.min) || !self.in_bounds(self.spawn_area.max) {
            return Err(ConfigError::OutOfBounds {
                what: "spawn area",
                cell: self.spawn_area.max,
                width: self.width,
                height: self.height,
            });
        }
        if !self.spawn_area.cells().any(|c| !occupied.contains(&c)) {
            return invalid("spawn area has no free cell".into());
        }

        let mut supply: BTreeMap<Material, u32> = BTreeMap::new();
        for tower in &self.towers {
            if tower.stock == 0 {
                return invalid(format!("tower at {} is empty", tower.cell));
            }
            *supply.entry(tower.material).or_insert(0) += tower.stock;
        }
        let wood_for_pickaxes = self.pickaxe_wood_cost * 2;
        for (material, mut required) in self.plan.material_totals() {
            if material == Material::Wood {
                required += wood_for_pickaxes;
            }
            let available = supply.get(&material).copied().unwrap_or(0);
            if available < required {
                return Err(ConfigError::InsufficientSupply {
                    material,
                    available,
                    required,
                });
            }
        }

        if self.collaboration.required {
            let workload = self.solo_mining_workload();
            let multiplier = self.collaboration.multiplier;
            if !(multiplier > 1.0)
                || workload <= self.time_limit_s
                || workload / multiplier > self.time_limit_s
            {
                return Err(ConfigError::Collaboration {
                    workload,
                    limit: self.time_limit_s,
                    multiplier,
                });
            }
        }
        Ok(())
    }
}

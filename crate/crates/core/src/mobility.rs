//! Straight two-sided road with constant-speed vehicles on a ring.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::grid_map::{GridCoord, GridMap, Point, Topology, Vec2};
use crate::radio_controller::InterfaceTuning;

/// 50 km/h.
pub const DEFAULT_SPEED: f64 = 50.0 / 3.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    /// Columns in the lower half of the road, travelling towards −y.
    Left,
    /// Columns in the upper half, travelling towards +y.
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: usize,
    pub position: Point,
    pub velocity: Vec2,
    pub side: Side,
    pub tuning: InterfaceTuning,
}

impl Vehicle {
    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    /// Constant-velocity step; the longitudinal coordinate wraps around the
    /// road length of `grid`.
    pub fn advance(&self, dt: f64, grid: &GridMap) -> Vehicle {
        let mut next = self.clone();
        next.position = self.position_after(dt, grid);
        next
    }

    pub fn position_after(&self, dt: f64, grid: &GridMap) -> Point {
        if dt == 0.0 {
            return self.position;
        }
        let len = grid.length();
        let oy = grid.origin().y;
        let mut y = (self.position.y + self.velocity.y * dt - oy).rem_euclid(len);
        if y >= len {
            y = 0.0;
        }
        Point::new(self.position.x + self.velocity.x * dt, y + oy)
    }

    /// The cell entered next along the straight trajectory, wrapping rows.
    pub fn predict_cell(&self, grid: &GridMap) -> GridCoord {
        let ring = grid.clone().with_topology(Topology::RowTorus);
        let here = ring.locate(self.position);
        match GridMap::approached_edge(self.velocity) {
            Some(edge) => ring.neighbor(here, edge),
            None => here,
        }
    }
}

/// Places `n_vehicles` on the road: ⌈n/2⌉ on the right half heading +y,
/// ⌊n/2⌋ on the left half heading −y, lane and longitudinal offset uniform.
pub fn spawn_scenario(n_vehicles: usize, grid: &GridMap, seed: u64, speed: f64) -> Vec<Vehicle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let right = n_vehicles.div_ceil(2);
    let half = grid.cols() / 2;
    let origin = grid.origin();
    (0..n_vehicles)
        .map(|id| {
            let side = if id < right { Side::Right } else { Side::Left };
            let (lanes, dir) = match side {
                Side::Right => (half..grid.cols(), 1.0),
                Side::Left => (0..half.max(1), -1.0),
            };
            let lane = rng.gen_range(lanes);
            let y = rng.gen_range(0.0..grid.length());
            Vehicle {
                id,
                position: Point::new(
                    origin.x + (lane as f64 + 0.5) * grid.cell_width(),
                    origin.y + y,
                ),
                velocity: Vec2::new(0.0, dir * speed),
                side,
                tuning: InterfaceTuning::unconfigured(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn road() -> GridMap {
        GridMap::new(18, 6, 5.0, 1000.0 / 18.0, Point::default(), 10.0)
            .unwrap()
            .with_topology(Topology::RowTorus)
    }

    fn mover(y: f64, vy: f64) -> Vehicle {
        Vehicle {
            id: 0,
            position: Point::new(7.5, y),
            velocity: Vec2::new(0.0, vy),
            side: Side::Right,
            tuning: InterfaceTuning::unconfigured(),
        }
    }

    #[test]
    fn spawn_splits_sides() {
        let g = road();
        let two = spawn_scenario(2, &g, 1, DEFAULT_SPEED);
        assert_eq!(two.iter().filter(|v| v.side == Side::Left).count(), 1);
        assert!(two.iter().any(|v| v.velocity.y < 0.0));
        assert!(two.iter().any(|v| v.velocity.y > 0.0));
        assert!(spawn_scenario(0, &g, 1, DEFAULT_SPEED).is_empty());
        assert_eq!(spawn_scenario(100, &g, 9, DEFAULT_SPEED), spawn_scenario(100, &g, 9, DEFAULT_SPEED));
        assert_ne!(spawn_scenario(100, &g, 9, DEFAULT_SPEED), spawn_scenario(100, &g, 10, DEFAULT_SPEED));
        for v in spawn_scenario(51, &g, 3, DEFAULT_SPEED) {
            let col = g.locate(v.position).col;
            match v.side {
                Side::Right => assert!((3..6).contains(&col) && v.velocity.y > 0.0),
                Side::Left => assert!(col < 3 && v.velocity.y < 0.0),
            }
        }
    }

    #[test]
    fn advance_examples() {
        let g = road();
        let v = mover(0.0, 13.889);
        assert!((v.advance(1.0, &g).position.y - 13.889).abs() < 1e-9);
        let edge = mover(995.0, 13.889);
        assert!((edge.advance(1.0, &g).position.y - 8.889).abs() < 1e-9);
        assert_eq!(edge.advance(0.0, &g), edge);
        let back = mover(3.0, -13.889);
        assert!((back.advance(1.0, &g).position.y - (1000.0 + 3.0 - 13.889)).abs() < 1e-9);
    }

    #[test]
    fn predict_examples() {
        let g = road();
        let h = g.cell_height();
        let mut v = mover(2.5 * h, 13.889);
        v.position.x = 7.5;
        assert_eq!(v.predict_cell(&g), GridCoord::new(3, 1));
        let mut top = mover(17.5 * h, 13.889);
        top.position.x = 22.5;
        assert_eq!(top.predict_cell(&g), GridCoord::new(0, 4));
        let still = mover(2.5 * h, 0.0);
        assert_eq!(still.predict_cell(&g), GridCoord::new(2, 1));
    }

    proptest! {
        #[test]
        fn advance_keeps_speed_and_range(y in 0.0f64..1000.0, steps in proptest::collection::vec(0.0f64..30.0, 1..20), sign in prop::bool::ANY) {
            let g = road();
            let mut v = mover(y, if sign { DEFAULT_SPEED } else { -DEFAULT_SPEED });
            for dt in steps {
                v = v.advance(dt, &g);
                prop_assert!(v.position.y >= 0.0 && v.position.y < g.length());
                prop_assert!((v.speed() - DEFAULT_SPEED).abs() < 1e-12);
            }
        }

        #[test]
        fn side_counts_balanced(n in 0usize..200, seed in any::<u64>()) {
            let vs = spawn_scenario(n, &road(), seed, DEFAULT_SPEED);
            let left = vs.iter().filter(|v| v.side == Side::Left).count();
            let right = vs.len() - left;
            prop_assert!(right >= left && right - left <= 1);
        }

        #[test]
        fn predict_matches_tz_next_cell(y in 0.0f64..1000.0, lane in 0usize..6, sign in prop::bool::ANY) {
            let g = road();
            let mut v = mover(y, if sign { DEFAULT_SPEED } else { -DEFAULT_SPEED });
            v.position.x = (lane as f64 + 0.5) * 5.0;
            if let crate::grid_map::TzStatus::InTz { next_cell, .. } = g.transition_state(v.position, v.velocity) {
                prop_assert_eq!(next_cell, v.predict_cell(&g));
            }
        }
    }
}

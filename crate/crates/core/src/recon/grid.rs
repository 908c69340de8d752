//! Uniform hash grid for fixed-radius nearest-neighbor queries.

use std::collections::HashMap;

use nalgebra::Point3;

pub(crate) struct PointGrid {
    cell: f64,
    cells: HashMap<[i32; 3], Vec<u32>>,
}

impl PointGrid {
    /// Queries are exact for radii up to `cell`.
    pub(crate) fn new(points: &[Point3<f64>], cell: f64) -> PointGrid {
        let mut cells: HashMap<[i32; 3], Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(key(p, cell)).or_default().push(i as u32);
        }
        PointGrid { cell, cells }
    }

    /// Index and squared distance of the closest point within `radius`.
    /// Ties go to the lower index.
    pub(crate) fn nearest(&self, points: &[Point3<f64>], q: &Point3<f64>, radius: f64) -> Option<(usize, f64)> {
        let k = key(q, self.cell);
        let r2 = radius * radius;
        let mut best: Option<(usize, f64)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(list) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) else { continue };
                    for &i in list {
                        let d = (points[i as usize] - q).norm_squared();
                        if d <= r2 && best.is_none_or(|(bi, bd)| d < bd || (d == bd && (i as usize) < bi)) {
                            best = Some((i as usize, d));
                        }
                    }
                }
            }
        }
        best
    }
}

fn key(p: &Point3<f64>, cell: f64) -> [i32; 3] {
    [(p.x / cell).floor() as i32, (p.y / cell).floor() as i32, (p.z / cell).floor() as i32]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_brute_force() {
        let pts: Vec<Point3<f64>> = (0..500)
            .map(|i| {
                let f = i as f64;
                Point3::new((f * 0.37).sin(), (f * 0.91).cos(), (f * 0.13).sin() * 0.5)
            })
            .collect();
        let grid = PointGrid::new(&pts, 0.2);
        for j in 0..100 {
            let f = j as f64 + 0.5;
            let q = Point3::new((f * 0.7).sin(), (f * 0.3).cos(), (f * 0.21).sin() * 0.5);
            let brute = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - q).norm_squared()))
                .filter(|(_, d)| *d <= 0.04)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            assert_eq!(grid.nearest(&pts, &q, 0.2).map(|b| b.0), brute.map(|b| b.0));
        }
    }
}

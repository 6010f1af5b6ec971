use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::area::AreaCode;
use crate::error::{invalid, Result};

/// Projected municipality centroid in kilometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub area_code: AreaCode,
    pub x_km: f64,
    pub y_km: f64,
}

impl Centroid {
    pub fn distance(&self, other: &Centroid) -> f64 {
        libm::hypot(self.x_km - other.x_km, self.y_km - other.y_km)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub area_code: AreaCode,
    pub distance_km: f64,
}

/// `k` nearest other areas of every centroid, nearest first; equal distances
/// resolve by ascending area code.
pub fn nearest_neighbors(centroids: &[Centroid], k: usize) -> Result<BTreeMap<AreaCode, Vec<Neighbor>>> {
    if k == 0 {
        return Err(invalid("k", "must be positive"));
    }
    if let Some(c) = centroids.iter().find(|c| !(c.x_km.is_finite() && c.y_km.is_finite())) {
        return Err(invalid(
            "centroids",
            alloc::format!("non-finite coordinate for {}", c.area_code),
        ));
    }
    let mut out = BTreeMap::new();
    let mut buf: Vec<Neighbor> = Vec::with_capacity(centroids.len());
    for c in centroids {
        buf.clear();
        buf.extend(
            centroids
                .iter()
                .filter(|o| o.area_code != c.area_code)
                .map(|o| Neighbor {
                    area_code: o.area_code,
                    distance_km: c.distance(o),
                }),
        );
        let cmp = |a: &Neighbor, b: &Neighbor| {
            a.distance_km
                .total_cmp(&b.distance_km)
                .then(a.area_code.cmp(&b.area_code))
        };
        let take = k.min(buf.len());
        if take > 0 && take < buf.len() {
            buf.select_nth_unstable_by(take - 1, cmp);
        }
        buf.truncate(take);
        buf.sort_by(cmp);
        out.insert(c.area_code, buf.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize, seed: u64) -> Vec<Centroid> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| Centroid {
                area_code: AreaCode::new(10_000 + i as u32).unwrap(),
                // coarse grid so exact distance ties occur
                x_km: f64::from(rng.random_range(0..12)),
                y_km: f64::from(rng.random_range(0..12)),
            })
            .collect()
    }

    #[test]
    fn matches_exhaustive_scan() {
        let cs = grid(100, 5);
        let knn = nearest_neighbors(&cs, 5).unwrap();
        for c in &cs {
            // all-pairs oracle: full sort of every other area
            let mut all: Vec<(f64, AreaCode)> = cs
                .iter()
                .filter(|o| o.area_code != c.area_code)
                .map(|o| {
                    let dx = c.x_km - o.x_km;
                    let dy = c.y_km - o.y_km;
                    (libm::sqrt(dx * dx + dy * dy), o.area_code)
                })
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let expect: Vec<AreaCode> = all.iter().take(5).map(|p| p.1).collect();
            let got: Vec<AreaCode> = knn[&c.area_code].iter().map(|n| n.area_code).collect();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn fewer_candidates_than_k() {
        let cs = grid(3, 1);
        let knn = nearest_neighbors(&cs, 5).unwrap();
        assert!(knn.values().all(|v| v.len() == 2));
        assert!(nearest_neighbors(&cs, 0).is_err());
    }
}

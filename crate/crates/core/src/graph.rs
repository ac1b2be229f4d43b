//! Station clustering and the graph the forecaster convolves over.
//!
//! Stations are grouped with k-means in raw (lat, lon) degree space; the
//! cluster centroids become graph nodes whose edge weights come from a
//! Gaussian-style kernel on great-circle distance, `exp(-d / bandwidth)`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Station;
use crate::rng;
use crate::tensor::Tensor;

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Number of k-means++ restarts; the lowest-inertia run wins.
const RESTARTS: usize = 10;

/// Great-circle distance in kilometres.
pub fn haversine(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dlat = p2 - p1;
    let dlon = (lon2 - lon1).to_radians();
    let a = (dlat / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    /// `(lat, lon)` of each cluster centre.
    pub centroids: Vec<(f64, f64)>,
    pub station_to_cluster: BTreeMap<String, usize>,
    pub inertia: f64,
}

impl ClusterAssignment {
    pub fn cluster_of(&self, station_id: &str) -> Option<usize> {
        self.station_to_cluster.get(station_id).copied()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["station_id", "cluster"])?;
        for (id, c) in &self.station_to_cluster {
            w.write_record([id.as_str(), &c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a `station_id,cluster` file; centroids are recomputed from the
    /// member stations.
    pub fn read_csv(path: &Path, stations: &[Station]) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut map = BTreeMap::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i as u64 + 2;
            let id = rec.get(0).unwrap_or_default().to_string();
            let c: usize = rec
                .get(1)
                .unwrap_or_default()
                .trim()
                .parse()
                .map_err(|e| Error::Parse {
                    line,
                    message: format!("bad cluster index: {e}"),
                })?;
            map.insert(id, c);
        }
        let k = map.values().max().map_or(0, |m| m + 1);
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for s in stations {
            if let Some(&c) = map.get(&s.station_id) {
                sums[c].0 += s.lat;
                sums[c].1 += s.lon;
                sums[c].2 += 1;
            }
        }
        if let Some(empty) = sums.iter().position(|s| s.2 == 0) {
            return Err(Error::validation(format!("cluster {empty} has no stations")));
        }
        let centroids = sums
            .iter()
            .map(|&(la, lo, n)| (la / n as f64, lo / n as f64))
            .collect();
        Ok(Self {
            k,
            centroids,
            station_to_cluster: map,
            inertia: f64::NAN,
        })
    }
}

/// Outcome of one Lloyd run.
#[derive(Debug, Clone)]
pub struct LloydRun {
    pub labels: Vec<usize>,
    pub centroids: Vec<[f64; 2]>,
    /// Inertia after every assignment step.
    pub inertia_history: Vec<f64>,
}

impl LloydRun {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap_or(&f64::INFINITY)
    }
}

fn sq_dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: &[f64; 2], centroids: &[[f64; 2]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub fn kmeans_plus_plus<R: Rng>(points: &[[f64; 2]], k: usize, rng: &mut R) -> Vec<[f64; 2]> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // every point coincides with a centroid already
            rng.random_range(0..points.len())
        };
        let c = points[next];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd iterations from the given initial centroids until the assignment
/// stops changing or `max_iters` is reached. An emptied cluster is re-seeded
/// at the point farthest from its current centroid.
pub fn lloyd(points: &[[f64; 2]], mut centroids: Vec<[f64; 2]>, max_iters: usize) -> LloydRun {
    let k = centroids.len();
    let mut labels = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            if labels[i] != j {
                labels[i] = j;
                changed = true;
            }
            inertia += d;
        }
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        let da = sq_dist(&points[a], &centroids[labels[a]]);
                        let db = sq_dist(&points[b], &centroids[labels[b]]);
                        da.total_cmp(&db)
                    })
                    .expect("non-empty point set");
                inertia -= sq_dist(&points[far], &centroids[labels[far]]);
                counts[labels[far]] -= 1;
                labels[far] = j;
                counts[j] = 1;
                centroids[j] = points[far];
                changed = true;
            }
        }
        history.push(inertia.max(0.0));
        let mut sums = vec![[0.0, 0.0]; k];
        for (p, &l) in points.iter().zip(&labels) {
            sums[l][0] += p[0];
            sums[l][1] += p[1];
        }
        for j in 0..k {
            centroids[j] = [sums[j][0] / counts[j] as f64, sums[j][1] / counts[j] as f64];
        }
        if !changed {
            break;
        }
    }
    let final_inertia: f64 = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, &centroids[l]))
        .sum();
    history.push(final_inertia);
    LloydRun {
        labels,
        centroids,
        inertia_history: history,
    }
}

/// Clusters points with k-means++ initialisation and keeps the best of a
/// fixed number of restarts.
pub fn kmeans_points(points: &[[f64; 2]], k: usize, seed: u64, max_iters: usize) -> Result<LloydRun> {
    if k == 0 {
        return Err(Error::validation("k must be at least 1"));
    }
    if points.len() < k {
        return Err(Error::validation(format!(
            "{} points cannot form {k} clusters",
            points.len()
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut best: Option<LloydRun> = None;
    for _ in 0..RESTARTS {
        let init = kmeans_plus_plus(points, k, &mut rng);
        let run = lloyd(points, init, max_iters);
        if best.as_ref().is_none_or(|b| run.inertia() < b.inertia()) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

pub fn kmeans_cluster(stations: &[Station], k: usize, seed: u64, max_iters: usize) -> Result<ClusterAssignment> {
    let points: Vec<[f64; 2]> = stations.iter().map(|s| [s.lat, s.lon]).collect();
    let run = kmeans_points(&points, k, seed, max_iters)?;
    let station_to_cluster = stations
        .iter()
        .zip(&run.labels)
        .map(|(s, &l)| (s.station_id.clone(), l))
        .collect();
    Ok(ClusterAssignment {
        k,
        centroids: run.centroids.iter().map(|c| (c[0], c[1])).collect(),
        station_to_cluster,
        inertia: run.inertia(),
    })
}

/// Raw kernel weights and their symmetric normalisation with self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyPair {
    pub a: Tensor,
    pub a_hat: Tensor,
}

/// `A[i][j] = exp(-haversine(c_i, c_j) / bandwidth_km)` off the diagonal,
/// zero on it.
pub fn build_adjacency(centroids: &[(f64, f64)], bandwidth_km: f64) -> Result<AdjacencyPair> {
    if centroids.is_empty() {
        return Err(Error::validation("adjacency needs at least one node"));
    }
    if !(bandwidth_km > 0.0) {
        return Err(Error::domain(format!("bandwidth must be positive, got {bandwidth_km}")));
    }
    let k = centroids.len();
    let mut a = Tensor::zeros(&[k, k]);
    for i in 0..k {
        for j in 0..k {
            if i != j {
                let (ci, cj) = (centroids[i], centroids[j]);
                let d = haversine(ci.0, ci.1, cj.0, cj.1);
                a.set(i, j, (-d / bandwidth_km).exp());
            }
        }
    }
    let a_hat = normalize_adjacency(&a)?;
    Ok(AdjacencyPair { a, a_hat })
}

/// `D^-1/2 (A + I) D^-1/2` with `D` the row sums of `A + I`.
pub fn normalize_adjacency(a: &Tensor) -> Result<Tensor> {
    let (k, k2) = a.dims2();
    if k != k2 {
        return Err(Error::Shape {
            op: "normalize_adjacency",
            left: a.shape().to_vec(),
            right: vec![k2, k],
        });
    }
    let mut tilde = a.clone();
    for i in 0..k {
        tilde.set(i, i, a.get(i, i) + 1.0);
    }
    let inv_sqrt: Vec<f64> = (0..k)
        .map(|i| {
            let d: f64 = (0..k).map(|j| tilde.get(i, j)).sum();
            1.0 / d.sqrt()
        })
        .collect();
    let mut out = Tensor::zeros(&[k, k]);
    for i in 0..k {
        for j in 0..k {
            out.set(i, j, inv_sqrt[i] * tilde.get(i, j) * inv_sqrt[j]);
        }
    }
    Ok(out)
}

pub fn write_matrix_csv(path: &Path, m: &Tensor) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let (r, c) = m.dims2();
    for i in 0..r {
        let row: Vec<String> = (0..c).map(|j| format!("{:?}", m.get(i, j))).collect();
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: i as u64 + 1,
                message: e.to_string(),
            })?;
        rows.push(row);
    }
    let k = rows.len();
    if rows.iter().any(|r| r.len() != k) {
        return Err(Error::validation("adjacency matrix must be square"));
    }
    Tensor::from_matrix(k, k, rows.concat())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn station(id: &str, lat: f64, lon: f64) -> Station {
        Station {
            station_id: id.into(),
            lat,
            lon,
            power_kw: 22.0,
            plugs: 2,
        }
    }

    #[test]
    fn haversine_identity_and_symmetry() {
        assert_eq!(haversine(55.0, 12.0, 55.0, 12.0), 0.0);
        let (a, b) = (haversine(55.1, 12.3, 55.9, 10.2), haversine(55.9, 10.2, 55.1, 12.3));
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn haversine_copenhagen_aarhus() {
        // vector-angle great-circle oracle, mpmath at 50 digits
        let d = haversine(55.6761, 12.5683, 56.1629, 10.2039);
        assert!((d - 156.942_723_653_180_85).abs() < 1e-6, "{d}");
        assert!((d - 156.5).abs() <= 0.5);
    }

    #[test]
    fn one_cluster_per_station() {
        let st: Vec<_> = (0..6).map(|i| station(&format!("s{i}"), 55.0 + i as f64 * 0.1, 12.0)).collect();
        let c = kmeans_cluster(&st, 6, 1, 100).unwrap();
        assert_eq!(c.inertia, 0.0);
        let mut labels: Vec<_> = c.station_to_cluster.values().copied().collect();
        labels.sort();
        assert_eq!(labels, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let mut st = Vec::new();
        for i in 0..10 {
            let off = (i as f64) * 0.001;
            st.push(station(&format!("a{i}"), 55.0 + off, 12.0 - off));
            st.push(station(&format!("b{i}"), 56.0 - off, 13.0 + off));
        }
        let c = kmeans_cluster(&st, 2, 3, 100).unwrap();
        let la = c.cluster_of("a0").unwrap();
        let lb = c.cluster_of("b0").unwrap();
        assert_ne!(la, lb);
        for i in 0..10 {
            assert_eq!(c.cluster_of(&format!("a{i}")), Some(la));
            assert_eq!(c.cluster_of(&format!("b{i}")), Some(lb));
        }
    }

    #[test]
    fn restarts_match_best_of_many() {
        // sklearn KMeans(n_init=50) on the same points: 0.19064917828059438
        let pts: Vec<[f64; 2]> = (1..=100)
            .map(|i| {
                let i = i as f64;
                [
                    55.5 + 0.3 * ((i * 0.618_033_988_749_894_9) % 1.0),
                    12.3 + 0.4 * ((i * 0.754_877_666_246_692_7) % 1.0),
                ]
            })
            .collect();
        let run = kmeans_points(&pts, 10, 7, 300).unwrap();
        assert!(run.inertia() <= 0.190_649_178_280_594_38 * 1.05, "{}", run.inertia());
        for w in run.inertia_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn too_few_stations() {
        let st = vec![station("s", 55.0, 12.0)];
        assert!(matches!(kmeans_cluster(&st, 2, 0, 10), Err(Error::Validation(_))));
    }

    #[test]
    fn single_node_adjacency() {
        let p = build_adjacency(&[(55.0, 12.0)], 1.0).unwrap();
        assert_eq!(p.a.data(), &[0.0]);
        assert_eq!(p.a_hat.data(), &[1.0]);
    }

    #[test]
    fn coincident_nodes_adjacency() {
        let p = build_adjacency(&[(55.0, 12.0), (55.0, 12.0)], 1.0).unwrap();
        assert_eq!(p.a.data(), &[0.0, 1.0, 1.0, 0.0]);
        for v in p.a_hat.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn three_node_line_adjacency() {
        // nodes on a meridian at 0, 1 and 3 km; oracle: numpy on exp(-[[0,1,3],[1,0,2],[3,2,0]])
        let step = (1.0 / EARTH_RADIUS_KM).to_degrees();
        let c = [(0.0, 0.0), (step, 0.0), (3.0 * step, 0.0)];
        let p = build_adjacency(&c, 1.0).unwrap();
        let expected = [
            [0.705_384_512_698_241_3, 0.252_004_309_454_684_05, 0.038_410_319_513_457_71],
            [0.252_004_309_454_684_05, 0.665_240_955_774_821_8, 0.101_395_558_353_908_76],
            [0.038_410_319_513_457_72, 0.101_395_558_353_908_76, 0.843_794_734_481_339_3],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!((p.a_hat.get(i, j) - expected[i][j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn matrix_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let m = Tensor::from_matrix(2, 2, vec![0.0, 0.1234567890123, 0.1234567890123, 0.0]).unwrap();
        write_matrix_csv(&path, &m).unwrap();
        assert_eq!(read_matrix_csv(&path).unwrap(), m);
    }
}

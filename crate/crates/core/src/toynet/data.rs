use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::EmbeddingSet;
use crate::rng::Rng;

/// Radius of the circle carrying the Gaussian-cluster centres.
pub const CLUSTER_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Two interleaving unit half-circles, the second offset by `(1, -0.5)`.
    TwoMoons,
    /// `classes` isotropic Gaussians centred on a circle of radius
    /// [`CLUSTER_RADIUS`].
    GaussianClusters { classes: usize },
}

impl DatasetKind {
    pub fn num_classes(self) -> usize {
        match self {
            DatasetKind::TwoMoons => 2,
            DatasetKind::GaussianClusters { classes } => classes,
        }
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    /// `two_moons` or `gaussian_clusters[:K]` (K defaults to 4).
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = s.split_once(':').map_or((s, None), |(a, b)| (a, Some(b)));
        match (name.replace('-', "_").as_str(), arg) {
            ("two_moons", None) => Ok(DatasetKind::TwoMoons),
            ("gaussian_clusters", arg) => {
                let classes = arg
                    .map(|a| a.parse().map_err(|_| Error::arg(format!("bad class count {a:?}"))))
                    .transpose()?
                    .unwrap_or(4);
                Ok(DatasetKind::GaussianClusters { classes })
            }
            _ => Err(Error::arg(format!("unknown dataset kind {s:?}"))),
        }
    }
}

/// A labelled low-dimensional point set with the recipe that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDataset {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<u32>,
    pub num_classes: usize,
    pub kind: DatasetKind,
    pub noise: f64,
    pub seed: u64,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    /// Export in the embedding-set layout, labels included.
    pub fn to_embedding_set(&self, name: &str) -> Result<EmbeddingSet> {
        EmbeddingSet::from_rows(name, self.num_classes, &self.points, Some(self.labels.clone()), None)
    }

    pub fn centroid(&self) -> Vec<f64> {
        centroid(&self.points)
    }

    /// Per-coordinate standard deviation.
    pub fn std(&self) -> Vec<f64> {
        let c = self.centroid();
        let n = self.len() as f64;
        (0..self.dim())
            .map(|d| (self.points.iter().map(|p| (p[d] - c[d]).powi(2)).sum::<f64>() / n).sqrt())
            .collect()
    }

    /// Mean of the per-coordinate standard deviations.
    pub fn scale(&self) -> f64 {
        let s = self.std();
        s.iter().sum::<f64>() / s.len() as f64
    }

    /// Largest distance from the centroid to a point.
    pub fn radius(&self) -> f64 {
        let c = self.centroid();
        self.points.iter().map(|p| dist(p, &c)).fold(0.0, f64::max)
    }

    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for p in &self.points {
            for k in 0..d {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    fn class_points(&self, class: u32) -> Vec<&Vec<f64>> {
        self.points
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == class)
            .map(|(p, _)| p)
            .collect()
    }
}

pub(crate) fn centroid(points: &[Vec<f64>]) -> Vec<f64> {
    let d = points.first().map_or(0, Vec::len);
    let n = points.len() as f64;
    (0..d).map(|k| points.iter().map(|p| p[k]).sum::<f64>() / n).collect()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn unit_vector(rng: &mut Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Balanced labels: class `c` gets `floor(n / K)` or `ceil(n / K)` points.
/// Points come back shuffled.
pub fn make_dataset(kind: DatasetKind, n: usize, noise: f64, seed: u64) -> Result<ToyDataset> {
    let k = kind.num_classes();
    if k < 2 {
        return Err(Error::arg("need at least two classes"));
    }
    if n < k {
        return Err(Error::arg(format!("n = {n} is smaller than the class count {k}")));
    }
    if noise.is_nan() || noise < 0.0 {
        return Err(Error::arg("noise must be non-negative"));
    }
    let mut rng = Rng::new(seed);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    match kind {
        DatasetKind::TwoMoons => {
            let n_outer = n.div_ceil(2);
            let n_inner = n - n_outer;
            let angle = |i: usize, m: usize| {
                if m <= 1 {
                    0.0
                } else {
                    std::f64::consts::PI * i as f64 / (m - 1) as f64
                }
            };
            for i in 0..n_outer {
                let t = angle(i, n_outer);
                points.push(vec![t.cos(), t.sin()]);
                labels.push(0);
            }
            for i in 0..n_inner {
                let t = angle(i, n_inner);
                points.push(vec![1.0 - t.cos(), 1.0 - t.sin() - 0.5]);
                labels.push(1);
            }
        }
        DatasetKind::GaussianClusters { classes } => {
            for i in 0..n {
                let c = i % classes;
                let a = std::f64::consts::TAU * c as f64 / classes as f64;
                points.push(vec![CLUSTER_RADIUS * a.cos(), CLUSTER_RADIUS * a.sin()]);
                labels.push(c as u32);
            }
        }
    }
    if noise > 0.0 {
        for p in &mut points {
            p.iter_mut().for_each(|v| *v += noise * rng.normal());
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    Ok(ToyDataset {
        points: order.iter().map(|&i| points[i].clone()).collect(),
        labels: order.iter().map(|&i| labels[i]).collect(),
        num_classes: k,
        kind,
        noise,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OodKind {
    /// A shell at a fixed margin around every class (protective).
    Ring,
    /// A tight blob just outside class 0 (partially protective).
    CollapsedBlob,
    /// Uniform over the data bounding box enlarged 1.5 times about its centre.
    UniformBox,
    /// An isotropic Gaussian far away from the data.
    NoiseCloud,
}

impl OodKind {
    pub const ALL: [OodKind; 4] = [
        OodKind::Ring,
        OodKind::CollapsedBlob,
        OodKind::UniformBox,
        OodKind::NoiseCloud,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OodKind::Ring => "ring",
            OodKind::CollapsedBlob => "collapsed_blob",
            OodKind::UniformBox => "uniform_box",
            OodKind::NoiseCloud => "noise_cloud",
        }
    }
}

impl FromStr for OodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OodKind::ALL
            .into_iter()
            .find(|k| k.name() == s.replace('-', "_"))
            .ok_or_else(|| Error::arg(format!("unknown OOD kind {s:?}")))
    }
}

/// Geometry of the synthetic OOD candidates, in units of
/// [`ToyDataset::scale`] unless noted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OodShape {
    /// Distance of ring points from the data they surround.
    pub ring_margin: f64,
    /// Offset of the collapsed blob beyond the outermost class-0 point.
    pub blob_offset: f64,
    /// Standard deviation of the collapsed blob.
    pub blob_spread: f64,
    /// Distance of the noise cloud from the centroid, in data radii.
    pub noise_cloud_distance: f64,
}

impl Default for OodShape {
    fn default() -> Self {
        Self {
            ring_margin: 0.35,
            blob_offset: 0.4,
            blob_spread: 0.05,
            noise_cloud_distance: 4.0,
        }
    }
}

/// `m` OOD points of the given kind, placed relative to `reference` with the
/// default [`OodShape`].
pub fn make_ood_candidate(kind: OodKind, reference: &ToyDataset, m: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    make_ood_candidate_with(kind, reference, m, seed, &OodShape::default())
}

pub fn make_ood_candidate_with(
    kind: OodKind,
    reference: &ToyDataset,
    m: usize,
    seed: u64,
    shape: &OodShape,
) -> Result<Vec<Vec<f64>>> {
    if m == 0 {
        return Err(Error::arg("m must be at least 1"));
    }
    if reference.is_empty() {
        return Err(Error::arg("empty reference dataset"));
    }
    let mut rng = Rng::new(seed);
    let d = reference.dim();
    let scale = reference.scale();
    let centre = reference.centroid();
    let out = match kind {
        OodKind::Ring => {
            let margin = shape.ring_margin * scale;
            let mut out = Vec::with_capacity(m);
            let mut attempts = 0usize;
            while out.len() < m {
                attempts += 1;
                if attempts > 1000 * m + 10_000 {
                    return Err(Error::Precondition(
                        "could not place ring points around the data".into(),
                    ));
                }
                let p = &reference.points[rng.below(reference.len() as u64) as usize];
                let u = unit_vector(&mut rng, d);
                let q: Vec<f64> = p.iter().zip(&u).map(|(a, b)| a + margin * b).collect();
                let nearest = reference
                    .points
                    .iter()
                    .map(|r| dist(r, &q))
                    .fold(f64::INFINITY, f64::min);
                if nearest >= 0.8 * margin {
                    out.push(q);
                }
            }
            out
        }
        OodKind::CollapsedBlob => {
            let class0 = reference.class_points(0);
            let c0 = centroid(&class0.iter().map(|p| p.to_vec()).collect::<Vec<_>>());
            let mut dir: Vec<f64> = c0.iter().zip(&centre).map(|(a, b)| a - b).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                dir = unit_vector(&mut rng, d);
            } else {
                dir.iter_mut().for_each(|v| *v /= norm);
            }
            // The class-0 point reaching furthest along `dir` anchors the blob.
            let reach = class0
                .iter()
                .map(|p| {
                    p.iter()
                        .zip(&centre)
                        .zip(&dir)
                        .map(|((a, c), u)| (a - c) * u)
                        .sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            let anchor: Vec<f64> = centre
                .iter()
                .zip(&dir)
                .map(|(c, u)| c + (reach + shape.blob_offset * scale) * u)
                .collect();
            (0..m)
                .map(|_| {
                    anchor
                        .iter()
                        .map(|a| a + shape.blob_spread * scale * rng.normal())
                        .collect()
                })
                .collect()
        }
        OodKind::UniformBox => {
            let (lo, hi) = reference.bounds();
            (0..m)
                .map(|_| {
                    lo.iter()
                        .zip(&hi)
                        .map(|(l, h)| {
                            let mid = (l + h) / 2.0;
                            let half = 0.75 * (h - l);
                            rng.uniform_in(mid - half, mid + half)
                        })
                        .collect()
                })
                .collect()
        }
        OodKind::NoiseCloud => {
            let dir = unit_vector(&mut rng, d);
            let far = shape.noise_cloud_distance * reference.radius().max(scale);
            let anchor: Vec<f64> = centre.iter().zip(&dir).map(|(c, u)| c + far * u).collect();
            (0..m)
                .map(|_| anchor.iter().map(|a| a + scale * rng.normal()).collect())
                .collect()
        }
    };
    Ok(out)
}

/// `m` points spread evenly on a circle (random directions beyond 2-D) of
/// radius `distance` data radii around the centroid.
pub fn far_probes(reference: &ToyDataset, m: usize, distance: f64, seed: u64) -> Vec<Vec<f64>> {
    let centre = reference.centroid();
    let r = distance * reference.radius();
    let mut rng = Rng::new(seed);
    let phase = rng.uniform() * std::f64::consts::TAU;
    (0..m)
        .map(|i| {
            if centre.len() == 2 {
                let a = phase + std::f64::consts::TAU * i as f64 / m as f64;
                vec![centre[0] + r * a.cos(), centre[1] + r * a.sin()]
            } else {
                let u = unit_vector(&mut rng, centre.len());
                centre.iter().zip(&u).map(|(c, v)| c + r * v).collect()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_moons_lie_on_half_circles() {
        let d = make_dataset(DatasetKind::TwoMoons, 101, 0.0, 3).unwrap();
        for (p, &l) in d.points.iter().zip(&d.labels) {
            let (cx, cy) = if l == 0 { (0.0, 0.0) } else { (1.0, 0.5) };
            let r = ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt();
            assert!((r - 1.0).abs() < 1e-12);
            if l == 0 {
                assert!(p[1] >= -1e-12);
            } else {
                assert!(p[1] <= 0.5 + 1e-12);
            }
        }
    }

    #[test]
    fn datasets_are_deterministic_and_balanced() {
        for kind in [DatasetKind::TwoMoons, DatasetKind::GaussianClusters { classes: 3 }] {
            let a = make_dataset(kind, 100, 0.2, 5).unwrap();
            assert_eq!(a, make_dataset(kind, 100, 0.2, 5).unwrap());
            let k = kind.num_classes();
            for c in 0..k as u32 {
                let count = a.labels.iter().filter(|&&l| l == c).count();
                assert!(count == 100 / k || count == 100usize.div_ceil(k), "{count}");
            }
        }
        assert!(make_dataset(DatasetKind::GaussianClusters { classes: 5 }, 4, 0.1, 0).is_err());
    }

    #[test]
    fn kinds_parse() {
        assert_eq!("two_moons".parse::<DatasetKind>().unwrap(), DatasetKind::TwoMoons);
        assert_eq!(
            "gaussian_clusters:6".parse::<DatasetKind>().unwrap(),
            DatasetKind::GaussianClusters { classes: 6 }
        );
        assert!("spirals".parse::<DatasetKind>().is_err());
        assert_eq!("uniform-box".parse::<OodKind>().unwrap(), OodKind::UniformBox);
        assert!("ring2".parse::<OodKind>().is_err());
    }

    #[test]
    fn ring_keeps_its_margin() {
        let d = make_dataset(DatasetKind::TwoMoons, 200, 0.1, 1).unwrap();
        let ring = make_ood_candidate(OodKind::Ring, &d, 100, 2).unwrap();
        let margin = OodShape::default().ring_margin * d.scale();
        for q in &ring {
            let nearest = d.points.iter().map(|p| dist(p, q)).fold(f64::INFINITY, f64::min);
            assert!(nearest >= 0.8 * margin - 1e-12 && nearest <= margin + 1e-12);
        }
    }

    #[test]
    fn uniform_box_stays_in_enlarged_box() {
        let d = make_dataset(DatasetKind::TwoMoons, 200, 0.1, 1).unwrap();
        let (lo, hi) = d.bounds();
        for q in make_ood_candidate(OodKind::UniformBox, &d, 200, 3).unwrap() {
            for k in 0..2 {
                let (mid, half) = ((lo[k] + hi[k]) / 2.0, 0.75 * (hi[k] - lo[k]));
                assert!(q[k] >= mid - half && q[k] <= mid + half);
            }
        }
    }

    #[test]
    fn candidates_are_deterministic() {
        let d = make_dataset(DatasetKind::GaussianClusters { classes: 4 }, 200, 0.5, 1).unwrap();
        for kind in OodKind::ALL {
            assert_eq!(
                make_ood_candidate(kind, &d, 50, 8).unwrap(),
                make_ood_candidate(kind, &d, 50, 8).unwrap()
            );
        }
        assert!(make_ood_candidate(OodKind::Ring, &d, 0, 8).is_err());
    }
}

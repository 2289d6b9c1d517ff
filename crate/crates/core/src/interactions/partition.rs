use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sq_dist, Matrix, RngStream};

const RESTARTS: usize = 10;
const MAX_ITER: usize = 100;

/// Hard partition of the data rows into `M` groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl Partition {
    pub fn num_groups(&self) -> usize {
        self.sizes.len()
    }

    pub fn num_points(&self) -> usize {
        self.assignments.len()
    }

    /// A single group holding every row.
    pub fn single(x: &Matrix) -> Self {
        let n = x.rows();
        let mut c = vec![0.0; x.cols()];
        for r in 0..n {
            for (ci, v) in c.iter_mut().zip(x.row(r)) {
                *ci += v;
            }
        }
        c.iter_mut().for_each(|v| *v /= n as f64);
        Self {
            centroids: Matrix::from_vec(1, x.cols(), c).expect("shape"),
            assignments: vec![0; n],
            sizes: vec![n],
        }
    }

    /// Every row its own group.
    pub fn singletons(x: &Matrix) -> Self {
        Self {
            centroids: x.clone(),
            assignments: (0..x.rows()).collect(),
            sizes: vec![1; x.rows()],
        }
    }

    fn from_assignments(x: &Matrix, m: usize, assignments: Vec<usize>) -> Self {
        let (centroids, sizes) = centroids_of(x, m, &assignments);
        Self {
            centroids,
            assignments,
            sizes,
        }
    }

    /// Within-cluster sum of squared distances.
    pub fn inertia(&self, x: &Matrix) -> f64 {
        (0..x.rows())
            .map(|r| sq_dist(x.row(r), self.centroids.row(self.assignments[r])))
            .sum()
    }
}

fn centroids_of(x: &Matrix, m: usize, assignments: &[usize]) -> (Matrix, Vec<usize>) {
    let mut c = Matrix::zeros(m, x.cols());
    let mut sizes = vec![0usize; m];
    for (r, &a) in assignments.iter().enumerate() {
        sizes[a] += 1;
        for (ci, v) in c.row_mut(a).iter_mut().zip(x.row(r)) {
            *ci += v;
        }
    }
    for (k, &s) in sizes.iter().enumerate() {
        if s > 0 {
            c.row_mut(k).iter_mut().for_each(|v| *v /= s as f64);
        }
    }
    (c, sizes)
}

fn nearest(point: &[f64], centroids: &Matrix) -> usize {
    let mut best = (f64::INFINITY, 0);
    for k in 0..centroids.rows() {
        let d = sq_dist(point, centroids.row(k));
        if d < best.0 {
            best = (d, k);
        }
    }
    best.1
}

/// k-means++ seeding.
fn seed_centroids(x: &Matrix, m: usize, rng: &mut impl Rng) -> Matrix {
    let n = x.rows();
    let mut c = Matrix::zeros(m, x.cols());
    let first = rng.random_range(0..n);
    c.row_mut(0).copy_from_slice(x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|r| sq_dist(x.row(r), c.row(0))).collect();
    for k in 1..m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (r, d) in d2.iter().enumerate() {
                if t < *d {
                    chosen = r;
                    break;
                }
                t -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        c.row_mut(k).copy_from_slice(x.row(pick));
        for r in 0..n {
            d2[r] = d2[r].min(sq_dist(x.row(r), c.row(k)));
        }
    }
    c
}

/// Give every empty cluster the point farthest from its centroid in the
/// currently largest cluster.
fn repair_empty(x: &Matrix, assignments: &mut [usize], centroids: &mut Matrix, sizes: &mut [usize]) {
    while let Some(empty) = sizes.iter().position(|s| *s == 0) {
        let largest = (0..sizes.len()).max_by_key(|&k| (sizes[k], std::cmp::Reverse(k))).unwrap();
        let far = (0..x.rows())
            .filter(|&r| assignments[r] == largest)
            .max_by(|&a, &b| {
                let da = sq_dist(x.row(a), centroids.row(largest));
                let db = sq_dist(x.row(b), centroids.row(largest));
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .unwrap();
        assignments[far] = empty;
        sizes[largest] -= 1;
        sizes[empty] = 1;
        centroids.row_mut(empty).copy_from_slice(x.row(far));
    }
}

fn lloyd(x: &Matrix, m: usize, rng: &mut impl Rng) -> Partition {
    let mut centroids = seed_centroids(x, m, rng);
    let mut assignments: Vec<usize> = (0..x.rows()).map(|r| nearest(x.row(r), &centroids)).collect();
    for _ in 0..MAX_ITER {
        let (mut c, mut sizes) = centroids_of(x, m, &assignments);
        // keep old centroids for clusters that are about to be repaired
        for k in 0..m {
            if sizes[k] == 0 {
                c.row_mut(k).copy_from_slice(centroids.row(k));
            }
        }
        repair_empty(x, &mut assignments, &mut c, &mut sizes);
        let (c2, _) = centroids_of(x, m, &assignments);
        centroids = c2;
        let next: Vec<usize> = (0..x.rows()).map(|r| nearest(x.row(r), &centroids)).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    let mut p = Partition::from_assignments(x, m, assignments);
    if p.sizes.contains(&0) {
        repair_empty(x, &mut p.assignments, &mut p.centroids, &mut p.sizes);
        let (c, s) = centroids_of(x, m, &p.assignments);
        p.centroids = c;
        p.sizes = s;
    }
    p
}

/// Lloyd's k-means with k-means++ seeding; the best of ten restarts by
/// within-cluster sum of squares. `M = 1` and `M = N` are returned exactly.
pub fn partition_kmeans(x: &Matrix, m: usize, rng: RngStream) -> Result<Partition> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::Empty("points to cluster"));
    }
    if m == 0 || m > n {
        return Err(Error::invalid(format!("cluster count {m} must lie in 1..={n}")));
    }
    if m == 1 {
        return Ok(Partition::single(x));
    }
    if m == n {
        return Ok(Partition::singletons(x));
    }
    let mut best: Option<(f64, Partition)> = None;
    for restart in 0..RESTARTS {
        let mut r = rng.child(restart as u64).rng();
        let p = lloyd(x, m, &mut r);
        let wcss = p.inertia(x);
        if best.as_ref().is_none_or(|(b, _)| wcss < *b) {
            best = Some((wcss, p));
        }
    }
    Ok(best.expect("at least one restart").1)
}

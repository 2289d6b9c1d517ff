use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    all_pairs, cluster_points, important_nodes, pairs_among, partition_kmeans, sample_effects, summarize,
    InteractionEstimate, Pair, Partition,
};
use crate::bnn::ModelCheckpoint;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::math::{Matrix, RngStream};

/// How data points are grouped before averaging Hessians.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// One group: AEH (1-GEH).
    Single,
    /// `M` k-means groups: M-GEH.
    Clusters(usize),
    /// Every point on its own: EAH (N-GEH).
    Singletons,
}

impl Grouping {
    pub fn label(&self) -> String {
        match self {
            Grouping::Single => "aeh".into(),
            Grouping::Clusters(m) => format!("{m}-geh"),
            Grouping::Singletons => "eah".into(),
        }
    }

    /// Number of groups on `n` points.
    pub fn groups(&self, n: usize) -> usize {
        match self {
            Grouping::Single => 1,
            Grouping::Clusters(m) => *m,
            Grouping::Singletons => n,
        }
    }

    pub fn partition(&self, points: &Matrix, rng: RngStream) -> Result<Partition> {
        match self {
            Grouping::Single => Ok(Partition::single(points)),
            Grouping::Singletons => Ok(Partition::singletons(points)),
            Grouping::Clusters(m) => partition_kmeans(points, *m, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectOptions {
    /// 0 = input features; `l > 0` = activations entering layer `l`.
    pub layer: usize,
    /// Hard-mask posterior samples `K`.
    pub mc_samples: usize,
    pub seed: u64,
    /// Evaluate on a seeded subsample of at most this many rows.
    pub max_rows: Option<usize>,
    /// Report input-layer effects in raw feature/target units.
    pub raw_units: bool,
    /// Only consider nodes whose keep probability reaches this level.
    pub min_keep: Option<f64>,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            layer: 0,
            mc_samples: 100,
            seed: 0,
            max_rows: None,
            raw_units: false,
            min_keep: None,
        }
    }
}

/// Estimates for each requested grouping, all from the same mask draws.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub pairs: Vec<Pair>,
    pub node_names: Vec<String>,
    pub groupings: Vec<Grouping>,
    pub estimates: Vec<Vec<InteractionEstimate>>,
    pub rows_used: usize,
}

impl Detection {
    pub fn for_grouping(&self, g: Grouping) -> Option<&[InteractionEstimate]> {
        self.groupings
            .iter()
            .position(|x| *x == g)
            .map(|i| self.estimates[i].as_slice())
    }
}

/// Standardized evaluation rows, optionally a seeded subsample kept in
/// original order.
pub fn detection_inputs(ck: &ModelCheckpoint, x_raw: &Matrix, max_rows: Option<usize>, seed: u64) -> Result<Matrix> {
    let x = ck.x_scaler.apply(x_raw)?;
    match max_rows {
        Some(n) if n < x.rows() => {
            let mut idx: Vec<usize> = (0..x.rows()).collect();
            idx.shuffle(&mut RngStream::with_stream(seed, 12).rng());
            idx.truncate(n);
            idx.sort_unstable();
            Ok(x.select_rows(&idx))
        }
        _ => Ok(x),
    }
}

/// Names for the nodes entering `layer`.
pub fn node_names(ck: &ModelCheckpoint, layer: usize) -> Vec<String> {
    if layer == 0 {
        ck.feature_names.clone()
    } else {
        (0..ck.model.net.width_at(layer)).map(|k| format!("h{layer}_{k}")).collect()
    }
}

pub fn detection_pairs(ck: &ModelCheckpoint, opts: &DetectOptions) -> Vec<Pair> {
    let net = &ck.model.net;
    match opts.min_keep {
        Some(keep) => pairs_among(&important_nodes(net, opts.layer, keep)),
        None => all_pairs(net.width_at(opts.layer)),
    }
}

/// Bayesian GEH of a checkpoint on raw-scale rows for several groupings.
pub fn detect(
    ck: &ModelCheckpoint,
    x_raw: &Matrix,
    groupings: &[Grouping],
    opts: &DetectOptions,
    exec: Exec,
) -> Result<Detection> {
    let net = &ck.model.net;
    if opts.layer >= net.depth() {
        return Err(Error::invalid(format!(
            "layer {} out of range: the network has hidden layers 1..{}",
            opts.layer,
            net.depth() - 1
        )));
    }
    if opts.raw_units && opts.layer != 0 {
        return Err(Error::invalid("raw units are only defined for the input layer"));
    }
    if groupings.is_empty() {
        return Err(Error::Empty("groupings"));
    }
    let x = detection_inputs(ck, x_raw, opts.max_rows, opts.seed)?;
    if x.rows() == 0 {
        return Err(Error::Empty("detection rows"));
    }
    let points = cluster_points(net, &x, opts.layer)?;
    let cluster_rng = RngStream::with_stream(opts.seed, 11);
    let partitions = groupings
        .iter()
        .map(|g| g.partition(&points, cluster_rng.child(g.groups(x.rows()) as u64)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Partition> = partitions.iter().collect();
    let pairs = detection_pairs(ck, opts);
    let mut samples = sample_effects(
        net,
        &x,
        &refs,
        &pairs,
        opts.layer,
        opts.mc_samples,
        RngStream::with_stream(opts.seed, 10),
        exec,
    )?;
    if opts.raw_units {
        let sy = ck.y_scaler.stds[0];
        let sx = &ck.x_scaler.stds;
        for s in &mut samples {
            for (c, &(i, j)) in pairs.iter().enumerate() {
                let scale = sy / (sx[i] * sx[j]);
                for r in 0..s.rows() {
                    let v = s[(r, c)];
                    s.row_mut(r)[c] = v * scale;
                }
            }
        }
    }
    let estimates = samples
        .iter()
        .map(|s| summarize(&pairs, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(Detection {
        pairs,
        node_names: node_names(ck, opts.layer),
        groupings: groupings.to_vec(),
        estimates,
        rows_used: x.rows(),
    })
}

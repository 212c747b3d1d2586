//! Importance scoring and structural pruning of input channels / nodes.
//!
//! For learnable layer `l` the candidate units are its inputs. Two signals
//! rank them:
//!
//! * `s_P`: row sums of the layer's `P` (grouped per channel for conv layers,
//!   `H·W` consecutive rows each). A large sum marks an unimportant unit.
//! * `s_W`: L1 norm of the previous layer's weights that produce the unit
//!   (filter `i` for conv, column `i` for fc). A small norm marks an
//!   unimportant unit.
//!
//! The prune set is the intersection of the first `⌊ξ·n⌋` entries of both
//! rankings. The first learnable layer has no producer, so it uses only the
//! first `⌊0.5·ξ·n⌋` entries of the `s_P` ranking and records the result in
//! the network's input mask.
//!
//! Layers are indexed from 0 over learnable layers only.

use crate::error::{Error, Result};
use crate::network::{LayerTopology, Network, SampleShape};
use crate::tensor::{complement, Float, Matrix};

/// Conv nets whose input has this many channels or fewer never prune the input layer.
pub const MIN_PRUNABLE_INPUT_CHANNELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitKind {
    /// Input nodes of a fully-connected layer (or original input features).
    InputNode,
    /// Input channels of a convolutional layer (or original input channels).
    InputChannel,
    /// Channels of a conv output that is flattened into a fully-connected layer.
    FlattenedChannel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceScores {
    pub layer: usize,
    pub s_p: Vec<Float>,
    /// Absent for the first learnable layer.
    pub s_w: Option<Vec<Float>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneSet {
    pub layer: usize,
    /// Ascending, unique.
    pub units: Vec<usize>,
    pub kind: UnitKind,
}

impl PruneSet {
    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

/// How `P` rows group into units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreLayout {
    Fc,
    Conv { kernel_area: usize },
}

/// Row sums of `P`, grouped into `n_units` units.
pub fn score_p(p: &Matrix, layout: ScoreLayout, n_units: usize) -> Result<Vec<Float>> {
    let group = match layout {
        ScoreLayout::Fc => 1,
        ScoreLayout::Conv { kernel_area } => kernel_area,
    };
    if group == 0 || p.rows() != p.cols() || p.rows() != group * n_units {
        return Err(Error::dim(format!(
            "P of extent {:?} cannot be split into {n_units} groups of {group} rows",
            p.shape()
        )));
    }
    let rows = p.row_sums();
    Ok(rows.chunks_exact(group).map(|c| c.iter().sum()).collect())
}

/// L1 norm of every column of the previous layer's weight matrix, i.e. of
/// the filter or node weights producing each unit.
pub fn score_w(prev_weights: &Matrix) -> Vec<Float> {
    prev_weights.column_abs_sums()
}

fn argsort_by(values: &[Float], descending: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    // stable sort: ties keep the smaller index first
    idx.sort_by(|&a, &b| {
        let ord = values[a].total_cmp(&values[b]);
        if descending {
            ord.reverse()
        } else {
            ord
        }
    });
    idx
}

/// `k_P`: indices by descending `s_P`; `k_W`: indices by ascending `s_W`.
pub fn rank(s_p: &[Float], s_w: Option<&[Float]>) -> Result<(Vec<usize>, Option<Vec<usize>>)> {
    if let Some(w) = s_w {
        if w.len() != s_p.len() {
            return Err(Error::dim(format!(
                "score vectors differ in length: {} vs {}",
                s_p.len(),
                w.len()
            )));
        }
    }
    Ok((argsort_by(s_p, true), s_w.map(|w| argsort_by(w, false))))
}

/// Number of leading entries kept by a cut at `ratio`.
pub fn cut_len(ratio: Float, n_units: usize) -> usize {
    ((ratio * n_units as Float).floor() as usize).min(n_units)
}

/// Intersects the leading `⌊ξ·n⌋` entries of both rankings; the first
/// learnable layer (`layer == 0`, no `k_W`) takes the leading `⌊0.5ξ·n⌋`
/// entries of `k_P`. At least one unit always survives.
pub fn select_prune_set(
    k_p: &[usize],
    k_w: Option<&[usize]>,
    xi: Float,
    n_units: usize,
    layer: usize,
    kind: UnitKind,
) -> PruneSet {
    let mut units: Vec<usize> = match k_w {
        Some(k_w) if layer != 0 => {
            let n = cut_len(xi, n_units);
            let mut in_w = vec![false; n_units];
            for &i in &k_w[..n.min(k_w.len())] {
                in_w[i] = true;
            }
            k_p[..n.min(k_p.len())]
                .iter()
                .copied()
                .filter(|&i| in_w[i])
                .collect()
        }
        _ => {
            let ratio = if layer == 0 { 0.5 * xi } else { xi };
            k_p[..cut_len(ratio, n_units).min(k_p.len())].to_vec()
        }
    };
    // units is in k_P order here, so truncation keeps the least important ones
    units.truncate(n_units.saturating_sub(1));
    units.sort_unstable();
    PruneSet { layer, units, kind }
}

/// Per-sample output shape of every layer.
fn layer_shapes(network: &Network) -> Result<Vec<SampleShape>> {
    network.spec.validate()
}

fn spatial_area(shape: SampleShape) -> usize {
    match shape {
        SampleShape::Spatial { height, width, .. } => height * width,
        SampleShape::Flat(_) => 1,
    }
}

/// What feeds learnable layer `l`.
enum Producer {
    Input,
    Fc(usize),
    Conv { position: usize, area: usize },
}

fn producer(network: &Network, l: usize) -> Result<Producer> {
    let positions = network.spec.learnable_positions();
    if l >= positions.len() {
        return Err(Error::Contract(format!(
            "layer {l} out of range ({} learnable layers)",
            positions.len()
        )));
    }
    if l == 0 {
        return Ok(Producer::Input);
    }
    let prev = positions[l - 1];
    let shapes = layer_shapes(network)?;
    // the shape entering layer l is the output of the layer just before it
    let entering = shapes[positions[l] - 1];
    Ok(match network.spec.layers[prev] {
        LayerTopology::Fc { .. } => Producer::Fc(prev),
        LayerTopology::Conv { .. } => Producer::Conv {
            position: prev,
            area: spatial_area(entering),
        },
        LayerTopology::MaxPool { .. } => unreachable!("pooling is not learnable"),
    })
}

/// `(n_units, layout, kind)` for scoring layer `l`'s inputs.
fn unit_layout(network: &Network, l: usize) -> Result<(usize, ScoreLayout, UnitKind)> {
    let pos = network.spec.learnable_positions()[l];
    match network.spec.layers[pos] {
        LayerTopology::Fc { in_nodes, .. } => Ok((in_nodes, ScoreLayout::Fc, UnitKind::InputNode)),
        LayerTopology::Conv {
            in_channels,
            kernel: (kh, kw),
            ..
        } => Ok((
            in_channels,
            ScoreLayout::Conv {
                kernel_area: kh * kw,
            },
            UnitKind::InputChannel,
        )),
        LayerTopology::MaxPool { .. } => unreachable!(),
    }
}

/// `s_P` and `s_W` for learnable layer `l`. For an fc layer fed by a conv
/// layer every node inherits the norm of the filter producing its channel.
pub fn layer_scores(network: &Network, l: usize) -> Result<ImportanceScores> {
    let prod = producer(network, l)?;
    let (n_units, layout, _) = unit_layout(network, l)?;
    let pos = network.spec.learnable_positions()[l];
    let state = network.states[pos].as_ref().expect("learnable");
    let p = state
        .p
        .as_ref()
        .ok_or_else(|| Error::State("pruning needs P matrices (RLS optimizer)".into()))?;
    let s_p = score_p(p, layout, n_units)?;
    let s_w = match prod {
        Producer::Input => None,
        Producer::Fc(prev) => Some(score_w(&network.states[prev].as_ref().unwrap().weights)),
        Producer::Conv { position, area } => {
            let filters = score_w(&network.states[position].as_ref().unwrap().weights);
            Some(if matches!(layout, ScoreLayout::Fc) {
                filters
                    .iter()
                    .flat_map(|&v| std::iter::repeat(v).take(area))
                    .collect()
            } else {
                filters
            })
        }
    };
    if let Some(w) = &s_w {
        if w.len() != s_p.len() {
            return Err(Error::State(format!(
                "layer {l}: {} P scores vs {} weight scores",
                s_p.len(),
                w.len()
            )));
        }
    }
    Ok(ImportanceScores { layer: l, s_p, s_w })
}

/// Scores, ranks and selects the prune set of layer `l`. Returns `None`
/// when the layer is exempt (a conv input with too few channels).
pub fn plan_prune(network: &Network, l: usize, xi: Float) -> Result<Option<PruneSet>> {
    let prod = producer(network, l)?;
    let (n_units, layout, kind) = unit_layout(network, l)?;
    if matches!(prod, Producer::Input)
        && matches!(layout, ScoreLayout::Conv { .. })
        && network.input_mask.extent() < MIN_PRUNABLE_INPUT_CHANNELS
    {
        return Ok(None);
    }
    let scores = layer_scores(network, l)?;
    let (k_p, k_w) = rank(&scores.s_p, scores.s_w.as_deref())?;
    match prod {
        Producer::Conv { area, .. } if matches!(layout, ScoreLayout::Fc) => {
            let nodes = select_prune_set(&k_p, k_w.as_deref(), xi, n_units, l, kind);
            let channels = n_units / area;
            // order channels by the k_P rank of their first selected node
            let mut chosen: Vec<usize> = Vec::new();
            let mut selected = vec![false; n_units];
            nodes.units.iter().for_each(|&n| selected[n] = true);
            for &n in &k_p {
                if selected[n] && !chosen.contains(&(n / area)) {
                    chosen.push(n / area);
                }
            }
            chosen.truncate(channels.saturating_sub(1));
            chosen.sort_unstable();
            Ok(Some(PruneSet {
                layer: l,
                units: chosen,
                kind: UnitKind::FlattenedChannel,
            }))
        }
        _ => Ok(Some(select_prune_set(
            &k_p,
            k_w.as_deref(),
            xi,
            n_units,
            l,
            kind,
        ))),
    }
}

fn check_units(units: &[usize], n: usize) -> Result<()> {
    if units.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Contract("prune set must be ascending and unique".into()));
    }
    if units.last().is_some_and(|&u| u >= n) {
        return Err(Error::Contract(format!("prune index out of range 0..{n}")));
    }
    if units.len() >= n {
        return Err(Error::Contract(format!(
            "refusing to remove all {n} units of a layer"
        )));
    }
    Ok(())
}

fn expand_blocks(units: &[usize], block: usize) -> Vec<usize> {
    units
        .iter()
        .flat_map(|&u| u * block..(u + 1) * block)
        .collect()
}

/// Physically removes the units of `set` from layer `set.layer` (rows of
/// `W`, `Ψ`, rows and columns of `P`) and from whatever produces them
/// (columns of the previous layer's `W`, `Ψ`, or the input mask).
pub fn apply_prune(network: &mut Network, set: &PruneSet) -> Result<()> {
    if set.units.is_empty() {
        return Ok(());
    }
    let prod = producer(network, set.layer)?;
    let (n_units, layout, _) = unit_layout(network, set.layer)?;
    let pos = network.spec.learnable_positions()[set.layer];

    // rows of this layer's weight matrix to delete, and the producer's unit count
    let (rows, produced_units) = match (&prod, layout, set.kind) {
        (Producer::Conv { area, .. }, ScoreLayout::Fc, UnitKind::FlattenedChannel) => {
            let channels = n_units / area;
            check_units(&set.units, channels)?;
            (expand_blocks(&set.units, *area), channels)
        }
        (Producer::Input | Producer::Fc(_), ScoreLayout::Fc, UnitKind::InputNode) => {
            check_units(&set.units, n_units)?;
            (set.units.clone(), n_units)
        }
        (Producer::Input | Producer::Conv { .. }, ScoreLayout::Conv { kernel_area }, UnitKind::InputChannel) => {
            check_units(&set.units, n_units)?;
            (expand_blocks(&set.units, kernel_area), n_units)
        }
        _ => {
            return Err(Error::Contract(format!(
                "prune set of kind {:?} does not fit layer {}",
                set.kind, set.layer
            )))
        }
    };

    let state = network.states[pos].as_mut().expect("learnable");
    let keep_rows = complement(state.weights.rows(), &rows);
    state.weights = state.weights.select_rows(&keep_rows);
    state.velocity = state.velocity.select_rows(&keep_rows);
    if let Some(p) = &state.p {
        state.p = Some(p.select_principal(&keep_rows));
    }
    let removed = set.units.len();
    match &mut network.spec.layers[pos] {
        LayerTopology::Fc { in_nodes, .. } => *in_nodes = keep_rows.len(),
        LayerTopology::Conv { in_channels, .. } => *in_channels -= removed,
        LayerTopology::MaxPool { .. } => unreachable!(),
    }

    match prod {
        Producer::Input => {
            network.input_mask.remove_positions(&set.units)?;
            network.spec.input = match network.spec.input {
                SampleShape::Spatial {
                    channels,
                    height,
                    width,
                } if set.kind == UnitKind::InputChannel => SampleShape::Spatial {
                    channels: channels - removed,
                    height,
                    width,
                },
                _ => SampleShape::Flat(network.input_mask.len()),
            };
        }
        Producer::Fc(prev) | Producer::Conv { position: prev, .. } => {
            let prev_state = network.states[prev].as_mut().expect("learnable");
            let keep_cols = complement(produced_units, &set.units);
            prev_state.weights = prev_state.weights.select_cols(&keep_cols);
            prev_state.velocity = prev_state.velocity.select_cols(&keep_cols);
            match &mut network.spec.layers[prev] {
                LayerTopology::Fc { out_nodes, .. } => *out_nodes -= removed,
                LayerTopology::Conv { out_channels, .. } => *out_channels -= removed,
                LayerTopology::MaxPool { .. } => unreachable!(),
            }
        }
    }
    network.spec.validate()?;
    Ok(())
}

/// One full pruning round over all learnable layers in ascending order.
pub fn prune_round(network: &mut Network, xi: Float) -> Result<Vec<PruneSet>> {
    let mut sets = Vec::new();
    for l in 0..network.num_learnable() {
        if let Some(set) = plan_prune(network, l, xi)? {
            apply_prune(network, &set)?;
            sets.push(set);
        }
    }
    Ok(sets)
}

/// Node and weight counts of one row of the size table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCount {
    pub name: String,
    /// Output nodes (channels × spatial extent); input features for the input row.
    pub nodes: usize,
    /// `None` for the input row.
    pub weights: Option<usize>,
}

/// The input row followed by one row per learnable layer (`conv1`, `fc1`, ...).
pub fn layer_counts(network: &Network) -> Result<Vec<LayerCount>> {
    spec_counts(&network.spec)
}

/// [`layer_counts`] from the topology alone.
pub fn spec_counts(spec: &crate::network::NetworkSpec) -> Result<Vec<LayerCount>> {
    let shapes = spec.validate()?;
    let mut rows = vec![LayerCount {
        name: "input".into(),
        nodes: spec.input.len(),
        weights: None,
    }];
    let (mut conv_i, mut fc_i) = (0, 0);
    for (i, layer) in spec.layers.iter().enumerate() {
        let name = match layer {
            LayerTopology::Conv { .. } => {
                conv_i += 1;
                format!("conv{conv_i}")
            }
            LayerTopology::Fc { .. } => {
                fc_i += 1;
                format!("fc{fc_i}")
            }
            LayerTopology::MaxPool { .. } => continue,
        };
        rows.push(LayerCount {
            name,
            nodes: shapes[i].len(),
            weights: layer.weight_shape().map(|(r, c)| r * c),
        });
    }
    Ok(rows)
}

/// Retained percentage of every row of `current` relative to `original`,
/// followed by the totals. Returns `(per_row, total_nodes_pct, total_weights_pct)`.
pub fn retained_percentages(
    original: &[LayerCount],
    current: &[LayerCount],
) -> (Vec<(f64, Option<f64>)>, f64, f64) {
    let pct = |a: usize, b: usize| 100.0 * a as f64 / b as f64;
    let rows = original
        .iter()
        .zip(current)
        .map(|(o, c)| {
            (
                pct(c.nodes, o.nodes),
                o.weights.zip(c.weights).map(|(ow, cw)| pct(cw, ow)),
            )
        })
        .collect();
    let on: usize = original.iter().map(|r| r.nodes).sum();
    let cn: usize = current.iter().map(|r| r.nodes).sum();
    let ow: usize = original.iter().filter_map(|r| r.weights).sum();
    let cw: usize = current.iter().filter_map(|r| r.weights).sum();
    (rows, pct(cn, on), pct(cw, ow))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneEvent {
    pub epoch: usize,
    pub step: u64,
    /// Loss that triggered the event (the new sentinel).
    pub loss: f64,
    /// `(learnable layer, units removed)` for every layer that lost units.
    pub removed: Vec<(usize, UnitKind, usize)>,
    pub retained_nodes_pct: f64,
    pub retained_weights_pct: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PruneReport {
    pub events: Vec<PruneEvent>,
}

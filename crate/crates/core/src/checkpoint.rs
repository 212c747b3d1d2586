//! Self-describing binary checkpoints of a whole training run.
//!
//! Layout (all integers `u64` little-endian, all reals `f64` little-endian):
//!
//! ```text
//! "RLSPRUNE" version:u32
//! config text        len + UTF-8
//! progress           epochs_done step sentinel
//! input shape        tag:u8 (0 flat, 1 spatial) + 3 extents
//! layers             count, then per layer tag:u8 + extents + activation:u8
//! input mask         kind:u8 extent count indices...
//! layer states       per learnable layer: rows cols W Ψ has_p:u8 [P]
//! original sizes     count, then per row name nodes has_w:u8 [weights]
//! metrics            count, then per epoch
//! prune report       count, then per event
//! "END."
//! ```

use std::path::Path;

use crate::config::TrainConfig;
use crate::data::{InputMask, MaskKind};
use crate::error::{Error, Result};
use crate::metrics::{EpochMetrics, LayerRetention, RunMetrics};
use crate::network::{Activation, LayerState, LayerTopology, Network, NetworkSpec, SampleShape};
use crate::prune::{LayerCount, PruneEvent, PruneReport, UnitKind};
use crate::tensor::{Float, Matrix};
use crate::train::Trainer;

pub const MAGIC: &[u8; 8] = b"RLSPRUNE";
pub const VERSION: u32 = 1;
const TRAILER: &[u8; 4] = b"END.";

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn matrix(&mut self, m: &Matrix) {
        for &v in m.data() {
            self.f64(v as f64);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.path, self.pos as u64, msg)
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated: needed {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.err("count does not fit in memory"))
    }
    /// A count of items of at least `item_bytes` each, checked against the remaining input.
    fn count(&mut self, item_bytes: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(item_bytes.max(1)) > self.bytes.len() - self.pos {
            return Err(self.err(format!("count {n} exceeds the remaining data")));
        }
        Ok(n)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(self.err(format!("invalid flag byte {v}"))),
        }
    }
    fn str(&mut self) -> Result<String> {
        let n = self.count(1)?;
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::format(self.path, at as u64, "invalid UTF-8"))
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows
            .checked_mul(cols)
            .filter(|n| n.saturating_mul(8) <= self.bytes.len() - self.pos)
            .ok_or_else(|| self.err(format!("truncated {rows}x{cols} matrix")))?;
        let data = (0..n).map(|_| self.f64().map(|v| v as Float)).collect::<Result<_>>()?;
        Matrix::new(rows, cols, data)
    }
}

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Linear => 1,
    }
}

fn unit_tag(k: UnitKind) -> u8 {
    match k {
        UnitKind::InputNode => 0,
        UnitKind::InputChannel => 1,
        UnitKind::FlattenedChannel => 2,
    }
}

/// Serializes the full run state.
pub fn to_bytes(t: &Trainer) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.0.extend_from_slice(&VERSION.to_le_bytes());
    w.str(&t.config.to_text());
    w.usize(t.epochs_done);
    w.u64(t.step);
    w.f64(t.sentinel);

    let net = &t.network;
    match net.spec.input {
        SampleShape::Flat(n) => {
            w.u8(0);
            [n, 0, 0].into_iter().for_each(|v| w.usize(v));
        }
        SampleShape::Spatial {
            channels,
            height,
            width,
        } => {
            w.u8(1);
            [channels, height, width].into_iter().for_each(|v| w.usize(v));
        }
    }
    w.usize(net.spec.layers.len());
    for layer in &net.spec.layers {
        match *layer {
            LayerTopology::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                activation,
            } => {
                w.u8(0);
                [in_channels, out_channels, kernel.0, kernel.1, stride]
                    .into_iter()
                    .for_each(|v| w.usize(v));
                w.u8(activation_tag(activation));
            }
            LayerTopology::MaxPool { window, stride } => {
                w.u8(1);
                [window, stride, 0, 0, 0].into_iter().for_each(|v| w.usize(v));
                w.u8(0);
            }
            LayerTopology::Fc {
                in_nodes,
                out_nodes,
                activation,
            } => {
                w.u8(2);
                [in_nodes, out_nodes, 0, 0, 0].into_iter().for_each(|v| w.usize(v));
                w.u8(activation_tag(activation));
            }
        }
    }
    w.u8(match net.input_mask.kind() {
        MaskKind::Features => 0,
        MaskKind::Channels => 1,
    });
    w.usize(net.input_mask.extent());
    w.usize(net.input_mask.len());
    net.input_mask.retained().iter().for_each(|&i| w.usize(i));
    for state in net.learnable() {
        w.usize(state.weights.rows());
        w.usize(state.weights.cols());
        w.matrix(&state.weights);
        w.matrix(&state.velocity);
        match &state.p {
            Some(p) => {
                w.u8(1);
                w.matrix(p);
            }
            None => w.u8(0),
        }
    }

    w.usize(t.original_counts.len());
    for c in &t.original_counts {
        w.str(&c.name);
        w.usize(c.nodes);
        match c.weights {
            Some(v) => {
                w.u8(1);
                w.usize(v);
            }
            None => w.u8(0),
        }
    }

    w.usize(t.metrics.epochs.len());
    for e in &t.metrics.epochs {
        w.usize(e.epoch);
        w.f64(e.train_loss);
        w.f64(e.test_loss);
        w.f64(e.precision);
        w.u8(u8::from(e.prune_event));
        w.f64(e.sentinel);
        w.f64(e.total_nodes_pct);
        w.f64(e.total_weights_pct);
        w.usize(e.layers.len());
        for l in &e.layers {
            w.str(&l.name);
            w.f64(l.nodes_pct);
            match l.weights_pct {
                Some(v) => {
                    w.u8(1);
                    w.f64(v);
                }
                None => w.u8(0),
            }
        }
    }

    w.usize(t.report.events.len());
    for e in &t.report.events {
        w.usize(e.epoch);
        w.u64(e.step);
        w.f64(e.loss);
        w.f64(e.retained_nodes_pct);
        w.f64(e.retained_weights_pct);
        w.usize(e.removed.len());
        for &(layer, kind, n) in &e.removed {
            w.usize(layer);
            w.u8(unit_tag(kind));
            w.usize(n);
        }
    }
    w.0.extend_from_slice(TRAILER);
    w.0
}

fn read_activation(r: &mut Reader) -> Result<Activation> {
    match r.u8()? {
        0 => Ok(Activation::Relu),
        1 => Ok(Activation::Linear),
        v => Err(r.err(format!("unknown activation tag {v}"))),
    }
}

/// Parses a checkpoint; `path` only labels errors.
pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Trainer> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8).ok() != Some(&MAGIC[..]) {
        return Err(Error::format(path, 0, "not a checkpoint (bad magic bytes)"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::format(path, 8, format!("unsupported version {version}")));
    }
    let config_at = r.pos;
    let config = TrainConfig::from_text(&r.str()?).map_err(|e| {
        Error::format(path, config_at as u64, format!("bad configuration: {e}"))
    })?;
    let epochs_done = r.usize()?;
    let step = r.u64()?;
    let sentinel = r.f64()?;

    let tag = r.u8()?;
    let (a, b, c) = (r.usize()?, r.usize()?, r.usize()?);
    let input = match tag {
        0 => SampleShape::Flat(a),
        1 => SampleShape::Spatial {
            channels: a,
            height: b,
            width: c,
        },
        v => return Err(r.err(format!("unknown input tag {v}"))),
    };
    let n_layers = r.count(42)?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let tag = r.u8()?;
        let v: Vec<usize> = (0..5).map(|_| r.usize()).collect::<Result<_>>()?;
        let activation = read_activation(&mut r)?;
        layers.push(match tag {
            0 => LayerTopology::Conv {
                in_channels: v[0],
                out_channels: v[1],
                kernel: (v[2], v[3]),
                stride: v[4],
                activation,
            },
            1 => LayerTopology::MaxPool {
                window: v[0],
                stride: v[1],
            },
            2 => LayerTopology::Fc {
                in_nodes: v[0],
                out_nodes: v[1],
                activation,
            },
            t => return Err(r.err(format!("unknown layer tag {t}"))),
        });
    }
    let spec = NetworkSpec { input, layers };
    let spec_at = r.pos;
    spec.validate()
        .map_err(|e| Error::format(path, spec_at as u64, format!("bad topology: {e}")))?;

    let kind = match r.u8()? {
        0 => MaskKind::Features,
        1 => MaskKind::Channels,
        v => return Err(r.err(format!("unknown mask kind {v}"))),
    };
    let extent = r.usize()?;
    let n = r.count(8)?;
    let retained = (0..n).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let mask_at = r.pos;
    let input_mask = InputMask::new(kind, extent, retained)
        .map_err(|e| Error::format(path, mask_at as u64, format!("bad input mask: {e}")))?;

    let mut states = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        if !layer.is_learnable() {
            states.push(None);
            continue;
        }
        let (rows, cols) = (r.usize()?, r.usize()?);
        let weights = r.matrix(rows, cols)?;
        let velocity = r.matrix(rows, cols)?;
        let p = if r.bool()? { Some(r.matrix(rows, rows)?) } else { None };
        states.push(Some(LayerState {
            weights,
            velocity,
            p,
        }));
    }
    let network = Network {
        spec,
        states,
        input_mask,
    };
    let net_at = r.pos;
    network
        .check_consistency()
        .map_err(|e| Error::format(path, net_at as u64, format!("inconsistent network: {e}")))?;

    let n = r.count(17)?;
    let mut original_counts = Vec::with_capacity(n);
    for _ in 0..n {
        let name = r.str()?;
        let nodes = r.usize()?;
        let weights = if r.bool()? { Some(r.usize()?) } else { None };
        original_counts.push(LayerCount {
            name,
            nodes,
            weights,
        });
    }

    let n = r.count(57)?;
    let mut epochs = Vec::with_capacity(n);
    for _ in 0..n {
        let epoch = r.usize()?;
        let train_loss = r.f64()?;
        let test_loss = r.f64()?;
        let precision = r.f64()?;
        let prune_event = r.bool()?;
        let sentinel = r.f64()?;
        let total_nodes_pct = r.f64()?;
        let total_weights_pct = r.f64()?;
        let k = r.count(17)?;
        let mut layers = Vec::with_capacity(k);
        for _ in 0..k {
            let name = r.str()?;
            let nodes_pct = r.f64()?;
            let weights_pct = if r.bool()? { Some(r.f64()?) } else { None };
            layers.push(LayerRetention {
                name,
                nodes_pct,
                weights_pct,
            });
        }
        epochs.push(EpochMetrics {
            epoch,
            train_loss,
            test_loss,
            precision,
            prune_event,
            sentinel,
            layers,
            total_nodes_pct,
            total_weights_pct,
        });
    }

    let n = r.count(48)?;
    let mut events = Vec::with_capacity(n);
    for _ in 0..n {
        let epoch = r.usize()?;
        let step = r.u64()?;
        let loss = r.f64()?;
        let retained_nodes_pct = r.f64()?;
        let retained_weights_pct = r.f64()?;
        let k = r.count(17)?;
        let mut removed = Vec::with_capacity(k);
        for _ in 0..k {
            let layer = r.usize()?;
            let kind = match r.u8()? {
                0 => UnitKind::InputNode,
                1 => UnitKind::InputChannel,
                2 => UnitKind::FlattenedChannel,
                v => return Err(r.err(format!("unknown unit kind {v}"))),
            };
            removed.push((layer, kind, r.usize()?));
        }
        events.push(PruneEvent {
            epoch,
            step,
            loss,
            removed,
            retained_nodes_pct,
            retained_weights_pct,
        });
    }
    if r.take(4)? != TRAILER {
        return Err(r.err("missing end marker"));
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes after end marker"));
    }
    Ok(Trainer {
        config,
        network,
        original_counts,
        epochs_done,
        step,
        sentinel,
        metrics: RunMetrics { epochs },
        report: PruneReport { events },
    })
}

/// Writes atomically: a sibling temporary file is renamed over `path`.
pub fn save(trainer: &Trainer, path: &Path) -> Result<()> {
    let bytes = to_bytes(trainer);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Trainer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}

//! pcap to labeled matrices: decode, assemble flows, compute context in
//! flow-start order, build and label one matrix per flow.

use std::io::Read;
use std::path::Path;

use crate::config::{ClassMode, RunConfig};
use crate::context::{ContextFeatures, ContextTracker};
use crate::dataset::{LabelManifest, MatrixFile};
use crate::flow::{FlowRecord, FlowTable};
use crate::matrix::{build_matrix, FlowMatrix};
use crate::pcap::{open_capture, CaptureReader, Decoder, SkipCounters};
use crate::eval::{confusion, ConfusionMatrix};
use crate::nn::{self, argmax, Model, TrainOutcome};
use crate::Error;

/// Flows recovered from one capture plus frame accounting.
#[derive(Debug)]
pub struct Extraction {
    pub flows: Vec<FlowRecord>,
    pub records: u64,
    pub decoded: u64,
    pub skipped: SkipCounters,
}

pub fn extract_from<R: Read>(reader: CaptureReader<R>, cfg: &RunConfig) -> Result<Extraction, Error> {
    let mut decoder = Decoder::default();
    let mut table = FlowTable::new(cfg.flow_timeout_us());
    let mut flows = Vec::new();
    let mut records = 0u64;
    for frame in reader {
        let frame = frame?;
        records += 1;
        if let Some(packet) = decoder.decode(&frame) {
            flows.extend(table.ingest(packet)?);
        }
    }
    flows.extend(table.flush());
    flows.sort_by_key(|f| f.seq);
    Ok(Extraction {
        flows,
        records,
        decoded: decoder.decoded,
        skipped: decoder.skipped,
    })
}

pub fn extract(path: impl AsRef<Path>, cfg: &RunConfig) -> Result<Extraction, Error> {
    extract_from(open_capture(path)?, cfg)
}

/// Context features for flows given in start order.
pub fn contexts(flows: &[FlowRecord], cfg: &RunConfig) -> Result<Vec<ContextFeatures>, Error> {
    let mut tracker = ContextTracker::new(cfg.context());
    flows
        .iter()
        .map(|f| Ok(tracker.observe_flow(f.initiator.ip, f.responder().ip, f.start_time_us)?))
        .collect()
}

/// Class id stored in the matrix for a manifest label under `mode`.
pub fn map_label(label: u16, mode: ClassMode) -> u16 {
    match mode {
        ClassMode::Binary => u16::from(label > 0),
        ClassMode::Multi => label,
    }
}

/// One matrix per flow, labeled when a manifest is given. `zero_context` clears
/// the context row (the content-only ablation).
pub fn featurize(
    flows: &[FlowRecord],
    manifest: Option<&LabelManifest>,
    cfg: &RunConfig,
    zero_context: bool,
) -> Result<Vec<FlowMatrix>, Error> {
    let mcfg = cfg.matrix();
    let ctx = contexts(flows, cfg)?;
    flows
        .iter()
        .zip(&ctx)
        .map(|(flow, c)| {
            let mut m = build_matrix(flow, c, &mcfg)?;
            if zero_context {
                m.zero_context_row();
            }
            m.label = manifest.map(|lm| map_label(lm.label_flow(flow), cfg.classes));
            Ok(m)
        })
        .collect()
}

/// Wraps matrices in a DIDM container carrying the run configuration.
pub fn matrix_file(records: Vec<FlowMatrix>, cfg: &RunConfig) -> MatrixFile {
    let mut f = MatrixFile::new(cfg.max_packets, cfg.max_bytes, records);
    f.metadata = Some(cfg.to_metadata());
    f
}

/// `(values, class)` pairs for training; unlabeled records count as class 0.
pub fn examples(file: &MatrixFile) -> Vec<(&[f32], usize)> {
    file.records
        .iter()
        .map(|r| (&r.values[..], r.label.unwrap_or(0) as usize))
        .collect()
}

/// Trains a fresh model for `cfg` on DIDM train/validation sets.
pub fn train_model(train: &MatrixFile, val: &MatrixFile, cfg: &RunConfig) -> Result<TrainOutcome, Error> {
    for f in [train, val] {
        if (f.max_packets as usize, f.max_bytes as usize) != (cfg.max_packets, cfg.max_bytes) {
            return Err(Error::Config(format!(
                "matrix file has P={} B={}, config has P={} B={}",
                f.max_packets, f.max_bytes, cfg.max_packets, cfg.max_bytes
            )));
        }
    }
    let model = Model::new(cfg.model())?;
    Ok(nn::train(model, &examples(train), &examples(val), &cfg.to_metadata())?)
}

/// Infer-mode predictions for every record.
pub fn predict(model: &Model<f32>, file: &MatrixFile) -> Result<Vec<usize>, Error> {
    let (seq_len, input_dim) = (model.config.seq_len, model.config.input_dim);
    if (file.rows(), file.cols()) != (seq_len, input_dim) {
        return Err(Error::Config(format!(
            "matrices are {}x{}, model expects {seq_len}x{input_dim}",
            file.rows(),
            file.cols()
        )));
    }
    file.records
        .iter()
        .map(|r| Ok(argmax(&model.predict(&r.values)?)))
        .collect()
}

/// Confusion matrix of `model` over a labeled file.
pub fn evaluate(model: &Model<f32>, file: &MatrixFile) -> Result<ConfusionMatrix, Error> {
    let preds = predict(model, file)?;
    let truths: Vec<usize> = file.labels().iter().map(|&l| l as usize).collect();
    Ok(confusion(&truths, &preds, model.config.n_classes)?)
}

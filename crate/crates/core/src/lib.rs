//! Offline content-based intrusion detection over packet captures.
//!
//! A capture is decoded ([`pcap`]), split into bidirectional flows ([`flow`]),
//! enriched with inter-flow context ([`context`]) and rendered as a fixed-size
//! normalized matrix per flow ([`matrix`]). Matrices are labeled, balanced and
//! split ([`dataset`]), then classified by an LSTM trained from scratch ([`nn`])
//! and scored ([`eval`]). [`synth`] generates labeled captures for testing.
//!
//! ```
//! use did::config::RunConfig;
//! use did::pipeline;
//! use did::synth::{generate, ScenarioConfig};
//!
//! let scenario = generate(&ScenarioConfig::pattern(5, 5));
//! let cfg = RunConfig { max_packets: 4, max_bytes: 40, ..Default::default() };
//! let reader = did::pcap::CaptureReader::new(&scenario.pcap[..]).unwrap();
//! let extraction = pipeline::extract_from(reader, &cfg).unwrap();
//! assert_eq!(extraction.flows.len(), 10);
//! let matrices = pipeline::featurize(&extraction.flows, Some(&scenario.manifest), &cfg, false).unwrap();
//! assert_eq!(matrices[0].values.len(), 5 * 41);
//! ```

pub mod config;
pub mod context;
pub mod dataset;
pub mod eval;
pub mod flow;
pub mod matrix;
pub mod nn;
pub mod pcap;
pub mod pipeline;
pub mod synth;

// The guide's chapters, compiled so their code blocks run as doctests.
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/intro.md")]
pub mod book_intro {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/captures.md")]
pub mod book_captures {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/context.md")]
pub mod book_context {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/matrix.md")]
pub mod book_matrix {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/dataset.md")]
pub mod book_dataset {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/classifier.md")]
pub mod book_classifier {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod book_evaluation {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
pub mod book_cli {}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Pcap(#[from] pcap::PcapError),
    #[error(transparent)]
    Flow(#[from] flow::FlowError),
    #[error(transparent)]
    Matrix(#[from] matrix::MatrixError),
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Nn(#[from] nn::NnError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

//! On-disk formats: the text interchange format for signals, the binary
//! array container, the model checkpoint container, run configuration,
//! session-layout descriptors, and the experiment report table.

pub(crate) mod kv;

pub mod array_container;
pub mod checkpoint;
pub mod config;
pub mod interchange;
pub mod mmfit;
pub mod report;

pub use array_container::{
    build_array_container, parse_array_container, read_array_container, write_array_container,
    ArrayContainer, Dtype,
};
pub use checkpoint::{build_checkpoint, parse_checkpoint, read_checkpoint, write_checkpoint};
pub use config::{load_config, parse_config, DatasetSpec, RunSpec};
pub use interchange::{
    parse_interchange, read_interchange, write_interchange, InterchangeMatrix,
};
pub use mmfit::{load_descriptor, load_mmfit_session, parse_descriptor, SessionDescriptor};
pub use report::{render_report, write_report, REPORT_HEADER};

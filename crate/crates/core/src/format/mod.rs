//! File formats for the command-line driver: TOML pipeline descriptions,
//! JSON Lines datasets and JSON Lines output files.

mod dataset_file;
mod output_file;
mod pipeline_file;

pub use dataset_file::{read_dataset, DatasetReader};
pub use output_file::{read_output, write_output, OutputRecord};
pub use pipeline_file::{
    load_pipeline, parse_pipeline_file, InputDecl, LoadError, NodeDecl, OutputDecl, ParseError, PipelineFile,
    SourceDecl,
};

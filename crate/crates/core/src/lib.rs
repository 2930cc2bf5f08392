//! Embeddable speech-corpus engine.
//!
//! User-defined metadata and annotation structures are persisted in a single-file
//! relational store whose schema is generated from the structure. On top of the
//! store sit TextGrid import/export, inter-level integrity checking with boundary
//! auto-correction, a cascade of annotators and a query layer that produces
//! rectangular datasets and keyword-in-context concordances.

pub mod integrity;
pub mod interop;
pub mod model;
pub mod pipeline;
pub mod query;
pub mod stats;
pub mod store;
pub mod structure;
pub mod time;
pub mod value;

pub use structure::{
    AnnotationAttributeDef, AnnotationLevelDef, AnnotationStructure, LevelKind, LevelRelation,
    MetadataAttribute, MetadataObject, RelationKind, StructureError,
};
pub use model::{
    AnnotationElement, CompareOp, CorpusModel, Entity, ModelError, Predicate, PredicateObject, Tier, TierKey,
};
pub use store::{Mode, Store, StoreError};
pub use time::Time;
pub use value::{DataType, Value};
pub use integrity::{auto_correct, check_annotation, CheckConfig, CorrectionReport, Violation, ViolationKind};
pub use interop::{export_textgrid, import_textgrid, parse_textgrid, write_textgrid, TextGridDoc, TierMapping};
pub use pipeline::{run_pipeline, PipelineSpec, RunReport, SonorityProfile};
pub use query::{build_dataset, concordance, ConcordanceSpec, Dataset, DatasetSpec};

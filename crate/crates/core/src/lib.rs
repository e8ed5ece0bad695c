//! Doctor/patient role-play pipeline that turns clinical notes into
//! synthetic dialogues, plus section writing and evaluation.

pub mod concepts;
pub mod config;
pub mod dialogue;
pub mod gateway;
pub mod metrics;
pub mod note;
pub mod runner;
pub mod section_writer;
pub mod template;

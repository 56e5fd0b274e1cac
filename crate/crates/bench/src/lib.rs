//! Shared fixtures for the benchmarks: one default-sized synthetic meeting
//! and a cascaded-system output for it.

use sdnc_core::experiment::{meeting_data, CorpusConfig, MeetingData};
use sdnc_core::pipeline::{run_cascaded, PipelineConfig, PipelineOutput};

pub fn meeting() -> MeetingData {
    meeting_data(&CorpusConfig::default(), 0).expect("default corpus is valid")
}

pub fn cascaded(d: &MeetingData) -> PipelineOutput {
    run_cascaded(&d.meeting, &d.seq, &PipelineConfig::default()).expect("cascaded run")
}

//! With exact embeddings, noise-free simulators and reference labels in
//! place of the clusterer, both systems reproduce the reference exactly.

use sdnc_core::experiment::{run_oracle, test_set, CorpusConfig};
use sdnc_core::pipeline::{score_meeting, Mode, PipelineConfig};
use sdnc_core::SynthConfig;

fn corpus(overlap_prob: f64) -> CorpusConfig {
    CorpusConfig {
        synth: SynthConfig {
            embed_noise_sigma: 0.0,
            overlap_prob,
            ..Default::default()
        },
        train_meetings: 0,
        test_meetings: 12,
        ..Default::default()
    }
}

fn noise_free(mode: Mode) -> PipelineConfig {
    PipelineConfig {
        mode,
        sot_count_error_prob: 0.0,
        asr_sub_prob: 0.0,
        asr_del_prob: 0.0,
        ..Default::default()
    }
}

#[test]
fn reference_labels_give_zero_error_on_single_speaker_segments() {
    let c = corpus(0.0);
    for d in test_set(&c).unwrap() {
        for mode in [Mode::CascadedSc, Mode::ParallelSdnc] {
            let cfg = noise_free(mode);
            let s = score_meeting(&d.meeting, &run_oracle(&d, &c, &cfg).unwrap(), &cfg.der).unwrap();
            for m in ["cpwer", "der", "wer"] {
                assert_eq!(s[m], Some(0.0), "{} {} {m}", d.meeting.meeting_id, mode.as_str());
            }
        }
    }
}

#[test]
fn parallel_assembly_keeps_overlapping_speakers_apart() {
    let c = corpus(0.5);
    let cfg = noise_free(Mode::ParallelSdnc);
    for d in test_set(&c).unwrap() {
        let out = run_oracle(&d, &c, &cfg).unwrap();
        let s = score_meeting(&d.meeting, &out, &cfg.der).unwrap();
        assert_eq!(s["cpwer"], Some(0.0), "{}", d.meeting.meeting_id);
        assert_eq!(s["der_h"], Some(0.0), "{}", d.meeting.meeting_id);
    }
}

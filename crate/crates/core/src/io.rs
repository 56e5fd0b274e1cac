//! Meeting JSON, embedding JSONL and RTTM readers and writers.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{EmbeddingSequence, Meeting, SpeakerSpan, TimeInterval, WindowEmbedding};

pub fn load_meeting(path: impl AsRef<Path>) -> Result<Meeting> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_meeting(&text, &path.display().to_string())
}

pub fn parse_meeting(text: &str, context: &str) -> Result<Meeting> {
    serde_json::from_str(text).map_err(|e| {
        // try_from validation failures surface as serde custom errors
        let msg = e.to_string();
        if msg.starts_with("validation failed") {
            Error::Validation(msg)
        } else {
            Error::Parse {
                context: context.to_string(),
                message: msg,
            }
        }
    })
}

pub fn save_meeting(meeting: &Meeting, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(meeting).expect("meeting serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct EmbeddingLine<'a> {
    meeting_id: std::borrow::Cow<'a, str>,
    segment_id: usize,
    start: f64,
    end: f64,
    vector: std::borrow::Cow<'a, [f64]>,
}

/// Writes one JSON object per window.
pub fn save_embeddings(seq: &EmbeddingSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for w in &seq.windows {
        let line = EmbeddingLine {
            meeting_id: (&*seq.meeting_id).into(),
            segment_id: w.segment_id,
            start: w.interval.start,
            end: w.interval.end,
            vector: (&*w.vector).into(),
        };
        serde_json::to_writer(&mut out, &line).expect("embedding serializes");
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads an embeddings JSONL file holding the windows of a single meeting.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSequence> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut meeting_id: Option<String> = None;
    let mut windows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: EmbeddingLine = serde_json::from_str(&line).map_err(|e| Error::Line {
            path: path.into(),
            line: i + 1,
            message: e.to_string(),
        })?;
        match &meeting_id {
            None => meeting_id = Some(parsed.meeting_id.to_string()),
            Some(id) if id != &parsed.meeting_id => {
                return Err(Error::Line {
                    path: path.into(),
                    line: i + 1,
                    message: format!("meeting id {} differs from {}", parsed.meeting_id, id),
                })
            }
            _ => {}
        }
        windows.push(WindowEmbedding {
            segment_id: parsed.segment_id,
            interval: TimeInterval {
                start: parsed.start,
                end: parsed.end,
            },
            vector: parsed.vector.into_owned(),
        });
    }
    let dim = windows.first().map_or(0, |w| w.vector.len());
    EmbeddingSequence::new(meeting_id.unwrap_or_default(), windows, dim)
}

/// Formats spans as RTTM `SPEAKER` lines with times rounded to 10 ms.
pub fn format_rttm(file_id: &str, spans: &[SpeakerSpan]) -> String {
    let mut s = String::new();
    for span in spans {
        s.push_str(&format!(
            "SPEAKER {} 1 {:.2} {:.2} <NA> <NA> {} <NA> <NA>\n",
            file_id,
            span.interval.start,
            span.interval.duration(),
            span.speaker
        ));
    }
    s
}

pub fn write_rttm(file_id: &str, spans: &[SpeakerSpan], path: impl AsRef<Path>) -> Result<()> {
    for span in spans {
        span.interval.validate()?;
    }
    let path = path.as_ref();
    fs::write(path, format_rttm(file_id, spans)).map_err(|e| Error::io(path, e))
}

pub fn load_rttm(path: impl AsRef<Path>) -> Result<Vec<SpeakerSpan>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rttm(&text, path)
}

pub fn parse_rttm(text: &str, path: &Path) -> Result<Vec<SpeakerSpan>> {
    let mut spans = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_err = |message: String| Error::Line {
            path: path.into(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() || fields[0].starts_with(';') {
            continue;
        }
        if fields.len() != 10 {
            return Err(line_err(format!("expected 10 fields, found {}", fields.len())));
        }
        if fields[0] != "SPEAKER" {
            continue;
        }
        let num = |s: &str, what: &str| {
            s.parse::<f64>()
                .map_err(|_| line_err(format!("bad {what} '{s}'")))
        };
        let start = num(fields[3], "start")?;
        let dur = num(fields[4], "duration")?;
        if dur < 0.0 {
            return Err(line_err(format!("negative duration {dur}")));
        }
        let interval = TimeInterval::new(start, start + dur).map_err(|e| line_err(e.to_string()))?;
        spans.push(SpeakerSpan {
            speaker: fields[7].to_string(),
            interval,
        });
    }
    spans.sort_by(|a, b| a.interval.start.total_cmp(&b.interval.start));
    Ok(spans)
}

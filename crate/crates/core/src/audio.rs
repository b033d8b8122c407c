//! Speech pipeline math: log-mel features, VAD span extraction, speaker
//! clustering, ASR/diarization alignment and transcript serialization.
//!
//! The neural parts (VAD probabilities, speaker embeddings, ASR text and
//! language posteriors) come from adapters; everything here is
//! deterministic.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::Cursor;
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::schema::{
    content_id, ContextState, Entity, EntityKind, Observation, Provenance, Relation, RelationKind,
};

#[derive(Debug, thiserror::Error)]
pub enum AudioError {
    #[error("waveform has {samples} samples, one analysis window needs {window}")]
    TooShort { samples: usize, window: usize },
    #[error("invalid mel configuration: {0}")]
    Config(String),
    #[error("invalid waveform: {0}")]
    Waveform(String),
    #[error("wav decode failed: {0}")]
    Wav(String),
    #[error("utterances are not time-ordered at index {0}")]
    Unordered(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::Waveform("sample_rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(AudioError::Waveform("samples must be finite".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Decodes RIFF/WAV PCM16. Multi-channel input is averaged to mono.
    pub fn from_wav_bytes(bytes: &[u8]) -> Result<Self, AudioError> {
        let mut reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| AudioError::Wav(e.to_string()))?;
        let spec = reader.spec();
        if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
            return Err(AudioError::Wav(format!(
                "expected 16-bit PCM, got {:?} {} bits",
                spec.sample_format, spec.bits_per_sample
            )));
        }
        let raw: Vec<i16> = reader
            .samples::<i16>()
            .collect::<Result<_, _>>()
            .map_err(|e| AudioError::Wav(e.to_string()))?;
        let channels = spec.channels.max(1) as usize;
        let samples = raw
            .chunks(channels)
            .map(|frame| frame.iter().map(|&s| s as f64 / 32768.0).sum::<f64>() / channels as f64)
            .collect();
        Waveform::new(samples, spec.sample_rate)
    }

    /// Encodes as mono PCM16 WAV.
    pub fn to_wav_bytes(&self) -> Vec<u8> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut cursor = Cursor::new(Vec::new());
        {
            let mut w = hound::WavWriter::new(&mut cursor, spec).expect("in-memory wav writer");
            for &s in &self.samples {
                let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
                w.write_sample(v).expect("in-memory write");
            }
            w.finalize().expect("in-memory finalize");
        }
        cursor.into_inner()
    }
}

/// HTK-style mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub epsilon: f64,
    /// `n_mels` rows of `n_fft / 2 + 1` nonnegative weights.
    pub filterbank: Vec<Vec<f64>>,
    /// Center frequency of every filter, Hz.
    pub centers_hz: Vec<f64>,
}

impl MelConfig {
    /// 25 ms Hann window, 10 ms hop, 512-point DFT, 80 bands, ε = 1e-10.
    pub fn default_16k() -> Self {
        Self::new(16_000, 512, 25.0, 10.0, 80, 1e-10).expect("default mel config is valid")
    }

    /// Builds triangular filters with centers equally spaced on the mel
    /// scale between 0 Hz and Nyquist.
    pub fn new(
        sample_rate: u32,
        n_fft: usize,
        window_ms: f64,
        hop_ms: f64,
        n_mels: usize,
        epsilon: f64,
    ) -> Result<Self, AudioError> {
        let bad = |m: &str| Err(AudioError::Config(m.into()));
        if sample_rate == 0 || n_fft == 0 || n_mels == 0 {
            return bad("sample_rate, n_fft and n_mels must be positive");
        }
        if !(epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(window_ms > 0.0 && hop_ms > 0.0) {
            return bad("window and hop must be positive");
        }
        let window = window_len(sample_rate, window_ms);
        if window > n_fft {
            return bad("window longer than n_fft");
        }
        let bins = n_fft / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut filterbank = vec![vec![0.0; bins]; n_mels];
        for (m, row) in filterbank.iter_mut().enumerate() {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for (k, w) in row.iter_mut().enumerate() {
                let f = k as f64 * sample_rate as f64 / n_fft as f64;
                *w = if f > lo && f <= center {
                    (f - lo) / (center - lo)
                } else if f > center && f < hi {
                    (hi - f) / (hi - center)
                } else {
                    0.0
                };
            }
            if row.iter().sum::<f64>() <= 0.0 {
                return Err(AudioError::Config(format!(
                    "mel filter {m} covers no DFT bin; raise n_fft or lower n_mels"
                )));
            }
        }
        Ok(Self {
            sample_rate,
            n_fft,
            window_ms,
            hop_ms,
            n_mels,
            epsilon,
            filterbank,
            centers_hz: edges[1..=n_mels].to_vec(),
        })
    }

    pub fn window_len(&self) -> usize {
        window_len(self.sample_rate, self.window_ms)
    }

    pub fn hop_len(&self) -> usize {
        ((self.sample_rate as f64 * self.hop_ms / 1000.0).round() as usize).max(1)
    }

    /// Periodic Hann window of `window_len()` samples.
    pub fn window(&self) -> Vec<f64> {
        hann(self.window_len())
    }
}

fn window_len(sample_rate: u32, window_ms: f64) -> usize {
    ((sample_rate as f64 * window_ms / 1000.0).round() as usize).max(1)
}

pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelFrames {
    /// `z[f][t]`: band-major log-mel energies.
    pub z: Vec<Vec<f64>>,
    /// Start time of every frame, seconds.
    pub frame_times: Vec<f64>,
}

impl MelFrames {
    pub fn n_frames(&self) -> usize {
        self.frame_times.len()
    }

    /// Band index with the largest value in frame `t`; lowest index on ties.
    pub fn argmax_band(&self, t: usize) -> usize {
        let mut best = 0;
        for f in 1..self.z.len() {
            if self.z[f][t] > self.z[best][t] {
                best = f;
            }
        }
        best
    }
}

/// `z[f][t] = ln((M |X(t, ·)|²)_f + ε)` over Hann-windowed frames, no
/// padding at the edges.
pub fn log_mel(waveform: &Waveform, cfg: &MelConfig) -> Result<MelFrames, AudioError> {
    if waveform.sample_rate != cfg.sample_rate {
        return Err(AudioError::Config(format!(
            "waveform is {} Hz, config expects {} Hz",
            waveform.sample_rate, cfg.sample_rate
        )));
    }
    let win = cfg.window_len();
    let hop = cfg.hop_len();
    let n = waveform.samples.len();
    if n < win {
        return Err(AudioError::TooShort { samples: n, window: win });
    }
    let frames = 1 + (n - win) / hop;
    let window = cfg.window();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let bins = cfg.n_fft / 2 + 1;
    let mut z = vec![vec![0.0; frames]; cfg.n_mels];
    let mut frame_times = Vec::with_capacity(frames);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut power = vec![0.0; bins];
    for t in 0..frames {
        let start = t * hop;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (i, w) in window.iter().enumerate() {
            buf[i].re = waveform.samples[start + i] * w;
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            *p = buf[k].norm_sqr();
        }
        for (f, row) in cfg.filterbank.iter().enumerate() {
            let energy: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
            z[f][t] = (energy + cfg.epsilon).ln();
        }
        frame_times.push(start as f64 / cfg.sample_rate as f64);
    }
    Ok(MelFrames { z, frame_times })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeechSpan {
    pub start_s: f64,
    pub end_s: f64,
}

impl SpeechSpan {
    pub fn new(start_s: f64, end_s: f64) -> Self {
        Self { start_s, end_s }
    }

    pub fn is_valid(&self) -> bool {
        0.0 <= self.start_s && self.start_s < self.end_s
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn overlap(&self, other: &SpeechSpan) -> f64 {
        (self.end_s.min(other.end_s) - self.start_s.max(other.start_s)).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VadParams {
    pub threshold: f64,
    pub merge_gap_frames: usize,
    pub min_len_frames: usize,
}

impl Default for VadParams {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            merge_gap_frames: 10,
            min_len_frames: 25,
        }
    }
}

/// Frame index runs `[start, end)` of speech after merging and length
/// filtering.
pub fn vad_frame_runs(probs: &[f64], params: &VadParams) -> Vec<(usize, usize)> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < probs.len() {
        if probs[i] >= params.threshold {
            let start = i;
            while i < probs.len() && probs[i] >= params.threshold {
                i += 1;
            }
            match runs.last_mut() {
                Some(last) if start - last.1 <= params.merge_gap_frames => last.1 = i,
                _ => runs.push((start, i)),
            }
        } else {
            i += 1;
        }
    }
    runs.retain(|(s, e)| e - s >= params.min_len_frames);
    runs
}

pub fn vad_spans(probs: &[f64], frame_hop_s: f64, params: &VadParams) -> Vec<SpeechSpan> {
    vad_frame_runs(probs, params)
        .into_iter()
        .map(|(s, e)| SpeechSpan::new(s as f64 * frame_hop_s, e as f64 * frame_hop_s))
        .collect()
}

/// Diarization label. `Unknown` marks an utterance no segment overlapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SpeakerLabel {
    Known(u32),
    Unknown,
}

impl fmt::Display for SpeakerLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpeakerLabel::Known(n) => write!(f, "S{n}"),
            SpeakerLabel::Unknown => f.write_str("UNKNOWN"),
        }
    }
}

impl FromStr for SpeakerLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "UNKNOWN" {
            return Ok(SpeakerLabel::Unknown);
        }
        s.strip_prefix('S')
            .and_then(|n| n.parse().ok())
            .map(SpeakerLabel::Known)
            .ok_or_else(|| format!("bad speaker label {s:?}"))
    }
}

impl Serialize for SpeakerLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SpeakerLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerSegment {
    pub span: SpeechSpan,
    pub embedding: Vec<f64>,
    #[serde(default)]
    pub label: Option<SpeakerLabel>,
}

impl SpeakerSegment {
    /// Normalizes `embedding` to unit length.
    pub fn new(span: SpeechSpan, embedding: Vec<f64>) -> Result<Self, AudioError> {
        let norm = embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(AudioError::Waveform("speaker embedding has zero or non-finite norm".into()));
        }
        Ok(Self {
            span,
            embedding: embedding.into_iter().map(|x| x / norm).collect(),
            label: None,
        })
    }
}

pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    1.0 - dot
}

/// Average-linkage agglomerative clustering on cosine distance. Clusters
/// merge while the closest pair is nearer than `stop_distance`; labels are
/// numbered in order of each cluster's first segment.
pub fn cluster_speakers(segments: &[SpeakerSegment], stop_distance: f64) -> Vec<SpeakerSegment> {
    let n = segments.len();
    if n == 0 {
        return Vec::new();
    }
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = cosine_distance(&segments[i].embedding, &segments[j].embedding);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    // clusters[i] holds member indices; a cluster is keyed by its smallest member
    let mut clusters: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..n {
            if clusters[a].is_none() {
                continue;
            }
            for b in a + 1..n {
                if clusters[b].is_none() {
                    continue;
                }
                if best.is_none_or(|(d, _, _)| dist[a][b] < d) {
                    best = Some((dist[a][b], a, b));
                }
            }
        }
        let Some((d, a, b)) = best else { break };
        if d >= stop_distance {
            break;
        }
        let na = clusters[a].as_ref().map_or(0, Vec::len) as f64;
        let nb = clusters[b].as_ref().map_or(0, Vec::len) as f64;
        let moved = clusters[b].take().expect("live cluster");
        clusters[a].as_mut().expect("live cluster").extend(moved);
        // Lance-Williams update for average linkage
        for k in 0..n {
            if k == a || clusters[k].is_none() {
                continue;
            }
            let merged = (na * dist[k][a] + nb * dist[k][b]) / (na + nb);
            dist[k][a] = merged;
            dist[a][k] = merged;
        }
    }
    let mut owner = vec![0usize; n];
    for (root, members) in clusters.iter().enumerate() {
        if let Some(members) = members {
            for &m in members {
                owner[m] = root;
            }
        }
    }
    let mut labels: BTreeMap<usize, u32> = BTreeMap::new();
    let mut out = Vec::with_capacity(n);
    for (i, seg) in segments.iter().enumerate() {
        let next = labels.len() as u32;
        let label = *labels.entry(owner[i]).or_insert(next);
        out.push(SpeakerSegment {
            label: Some(SpeakerLabel::Known(label)),
            ..seg.clone()
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub span: SpeechSpan,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<SpeakerLabel>,
}

/// Index of the segment overlapping `span` the most; ties go to the earlier
/// segment (start time, then position). `None` when nothing overlaps.
pub fn best_overlap(span: &SpeechSpan, segments: &[SpeakerSegment]) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (k, seg) in segments.iter().enumerate() {
        let ov = span.overlap(&seg.span);
        if ov <= 0.0 {
            continue;
        }
        best = match best {
            None => Some((ov, k)),
            Some((bo, bk)) => {
                let earlier = (seg.span.start_s, k) < (segments[bk].span.start_s, bk);
                if ov > bo || (ov == bo && earlier) {
                    Some((ov, k))
                } else {
                    Some((bo, bk))
                }
            }
        };
    }
    best.map(|(_, k)| k)
}

pub fn assign_speakers(utterances: &[Utterance], segments: &[SpeakerSegment]) -> Vec<Utterance> {
    utterances
        .iter()
        .map(|u| {
            let label = best_overlap(&u.span, segments)
                .and_then(|k| segments[k].label)
                .unwrap_or(SpeakerLabel::Unknown);
            Utterance {
                speaker: Some(label),
                ..u.clone()
            }
        })
        .collect()
}

/// Most probable language; lexicographically first on ties.
pub fn argmax_language(posterior: &BTreeMap<String, f64>) -> Option<String> {
    let mut best: Option<(&String, f64)> = None;
    for (lang, &p) in posterior {
        if best.is_none_or(|(_, bp)| p > bp) {
            best = Some((lang, p));
        }
    }
    best.map(|(l, _)| l.clone())
}

fn time_locator(span: &SpeechSpan) -> String {
    format!("t={:.3}-{:.3}", span.start_s, span.end_s)
}

/// One observation per utterance, one speaker entity per label, plus
/// `spoken_by` and `follows` relations. Utterances with empty text are
/// skipped.
pub fn build_transcript_state(utterances: &[Utterance], source: &Provenance) -> Result<ContextState, AudioError> {
    for i in 1..utterances.len() {
        if utterances[i].span.start_s < utterances[i - 1].span.start_s {
            return Err(AudioError::Unordered(i));
        }
    }
    let mut state = ContextState::new();
    let mut speakers: BTreeMap<SpeakerLabel, usize> = BTreeMap::new();
    let mut previous: Option<String> = None;
    for (i, u) in utterances.iter().enumerate() {
        let text = u.text.trim();
        if text.is_empty() {
            continue;
        }
        let prov = source.clone().with_locator(time_locator(&u.span));
        let obs_id = content_id("obs", &[&source.source_id, &i.to_string(), text]);
        state.observations.push(Observation {
            id: obs_id.clone(),
            text: text.to_string(),
            score: 0.0,
            provenance: vec![prov.clone()],
        });
        if let Some(label) = u.speaker {
            let speaker_id = content_id("spk", &[&source.source_id, &label.to_string()]);
            let slot = *speakers.entry(label).or_insert_with(|| {
                state.entities.push(
                    Entity::new(&speaker_id, EntityKind::Speaker, 1.0, source.clone()).with_text(label.to_string()),
                );
                state.entities.len() - 1
            });
            if let Some(lang) = &u.language {
                let langs = state.entities[slot].attributes.entry("lang".into()).or_default();
                let mut set: Vec<&str> = langs.split(',').filter(|s| !s.is_empty()).collect();
                if !set.contains(&lang.as_str()) {
                    set.push(lang);
                    set.sort_unstable();
                    *langs = set.join(",");
                }
            }
            state
                .relations
                .push(Relation::new(RelationKind::SpokenBy, &obs_id, &speaker_id, prov.clone()));
        }
        if let Some(prev) = previous.replace(obs_id.clone()) {
            state
                .relations
                .push(Relation::new(RelationKind::Follows, &obs_id, &prev, prov));
        }
    }
    state.reindex_provenance();
    Ok(state)
}

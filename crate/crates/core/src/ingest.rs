//! Paper and review ingestion.
//!
//! Loads submission text from plain-text or PDF sources and parses flat
//! review records into the canonical [`Review`] model. Reviewer identities
//! are pseudonymized on the way in; reviewer scores are captured but are
//! never rendered into any pipeline prompt.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Papers longer than this many characters are truncated from the end.
pub const DEFAULT_PAPER_CHAR_BUDGET: usize = 400_000;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("document unreadable: {0}")]
    DocumentUnreadable(String),
    #[error("review {0}: all four section fields are absent or empty")]
    MissingSections(String),
    #[error("review {review_id}: {field} score {value} outside 1..=10")]
    InvalidScore {
        review_id: String,
        field: String,
        value: i64,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed review record at line {line}: {source}")]
    MalformedRecord {
        line: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Pdf,
    PlainText,
}

/// Extracted full text of a submission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperDoc {
    pub paper_id: String,
    pub text: String,
    pub source_kind: SourceKind,
    /// Length of `text` in characters (not bytes).
    pub char_count: usize,
    /// True when the source exceeded the character budget and was cut.
    pub truncated: bool,
}

/// The four standardized review sections, in canonical order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sections {
    #[serde(default)]
    pub summary: String,
    #[serde(default)]
    pub strengths: String,
    #[serde(default)]
    pub weaknesses: String,
    #[serde(default)]
    pub questions: String,
}

impl Sections {
    /// Section (name, text) pairs in canonical order:
    /// summary, strengths, weaknesses, questions.
    pub fn ordered(&self) -> [(&'static str, &str); 4] {
        [
            ("summary", &self.summary),
            ("strengths", &self.strengths),
            ("weaknesses", &self.weaknesses),
            ("questions", &self.questions),
        ]
    }

    pub fn is_empty(&self) -> bool {
        self.ordered().iter().all(|(_, text)| text.trim().is_empty())
    }

    /// Rendering used for prompts and diff analysis. Carries section
    /// headers and bodies only; scores never appear here.
    pub fn prompt_text(&self) -> String {
        let mut out = String::new();
        for (name, text) in self.ordered() {
            if !out.is_empty() {
                out.push_str("\n\n");
            }
            let mut header: Vec<char> = name.chars().collect();
            header[0] = header[0].to_ascii_uppercase();
            let header: String = header.into_iter().collect();
            out.push_str(&header);
            out.push_str(":\n");
            out.push_str(text);
        }
        out
    }
}

/// The five reviewer scores; any of them may be absent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scores {
    pub soundness: Option<i64>,
    pub presentation: Option<i64>,
    pub contribution: Option<i64>,
    pub rating: Option<i64>,
    pub confidence: Option<i64>,
}

impl Scores {
    pub fn ordered(&self) -> [(&'static str, Option<i64>); 5] {
        [
            ("soundness", self.soundness),
            ("presentation", self.presentation),
            ("contribution", self.contribution),
            ("rating", self.rating),
            ("confidence", self.confidence),
        ]
    }
}

/// One content snapshot of a review.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewVersion {
    pub time: i64,
    pub sections: Sections,
    pub scores: Scores,
}

/// A peer review with its full version history. `sections` and `scores`
/// always mirror the latest version; `versions[0]` is the initial
/// submission and versions are ordered by timestamp ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Review {
    pub review_id: String,
    pub paper_id: String,
    pub reviewer_pseudonym: String,
    pub sections: Sections,
    pub scores: Scores,
    pub submitted_at: i64,
    pub versions: Vec<ReviewVersion>,
}

impl Review {
    pub fn initial(&self) -> &ReviewVersion {
        &self.versions[0]
    }

    pub fn latest(&self) -> &ReviewVersion {
        self.versions.last().expect("versions is nonempty")
    }

    /// Append a new snapshot. Edits arriving out of order are clamped to
    /// keep the ascending-timestamp invariant.
    pub fn push_version(&mut self, time: i64, sections: Sections, scores: Scores) {
        let time = time.max(self.latest().time);
        self.sections = sections.clone();
        self.scores = scores;
        self.versions.push(ReviewVersion {
            time,
            sections,
            scores,
        });
    }

    /// Text handed to the pipeline prompts: latest sections, no scores.
    pub fn prompt_text(&self) -> String {
        self.latest().sections.prompt_text()
    }
}

impl fmt::Display for Review {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (paper {})", self.review_id, self.paper_id)
    }
}

/// Flat review record as it arrives from the forum or a JSONL file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawReview {
    pub review_id: String,
    pub paper_id: String,
    #[serde(default)]
    pub reviewer: String,
    #[serde(default)]
    pub summary: String,
    #[serde(default)]
    pub strengths: String,
    #[serde(default)]
    pub weaknesses: String,
    #[serde(default)]
    pub questions: String,
    #[serde(default)]
    pub soundness: Option<i64>,
    #[serde(default)]
    pub presentation: Option<i64>,
    #[serde(default)]
    pub contribution: Option<i64>,
    #[serde(default)]
    pub rating: Option<i64>,
    #[serde(default)]
    pub confidence: Option<i64>,
    #[serde(default)]
    pub submitted_at: i64,
}

impl RawReview {
    pub fn sections(&self) -> Sections {
        Sections {
            summary: self.summary.clone(),
            strengths: self.strengths.clone(),
            weaknesses: self.weaknesses.clone(),
            questions: self.questions.clone(),
        }
    }

    pub fn scores(&self) -> Scores {
        Scores {
            soundness: self.soundness,
            presentation: self.presentation,
            contribution: self.contribution,
            rating: self.rating,
            confidence: self.confidence,
        }
    }
}

/// Stable pseudonym for a forum identity. The salt is installation-local
/// so the mapping cannot be reversed without it; no real names are stored.
pub fn pseudonymize(salt: &str, identity: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(salt.as_bytes());
    hasher.update([0u8]);
    hasher.update(identity.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(16);
    out.push_str("rev-");
    for byte in &digest[..6] {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Parse a flat record into the canonical review model.
///
/// Absent optional sections become empty strings; scores are captured on
/// the review but never enter prompt rendering. Fails with
/// `MissingSections` when all four section fields are absent or empty.
pub fn parse_review(raw: &RawReview, salt: &str) -> Result<Review, IngestError> {
    let sections = raw.sections();
    if sections.is_empty() {
        return Err(IngestError::MissingSections(raw.review_id.clone()));
    }
    let scores = raw.scores();
    if let Some(rating) = scores.rating {
        if !(1..=10).contains(&rating) {
            return Err(IngestError::InvalidScore {
                review_id: raw.review_id.clone(),
                field: "rating".into(),
                value: rating,
            });
        }
    }
    Ok(Review {
        review_id: raw.review_id.clone(),
        paper_id: raw.paper_id.clone(),
        reviewer_pseudonym: pseudonymize(salt, &raw.reviewer),
        sections: sections.clone(),
        scores,
        submitted_at: raw.submitted_at,
        versions: vec![ReviewVersion {
            time: raw.submitted_at,
            sections,
            scores,
        }],
    })
}

/// Read review records from a JSONL file, one object per line.
pub fn read_reviews_jsonl(path: &Path) -> Result<Vec<RawReview>, IngestError> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawReview = serde_json::from_str(&line)
            .map_err(|source| IngestError::MalformedRecord {
                line: idx + 1,
                source,
            })?;
        out.push(raw);
    }
    Ok(out)
}

/// Pluggable PDF text extraction so the pipeline does not depend on a
/// specific extractor. Page texts are returned in page order; no layout
/// reconstruction is attempted and multi-column order is best effort.
pub trait PdfExtractor {
    fn extract_pages(&self, bytes: &[u8]) -> Result<Vec<String>, IngestError>;
}

/// Default extractor backed by lopdf.
#[derive(Debug, Default)]
pub struct DefaultPdfExtractor;

impl PdfExtractor for DefaultPdfExtractor {
    fn extract_pages(&self, bytes: &[u8]) -> Result<Vec<String>, IngestError> {
        let doc = lopdf::Document::load_mem(bytes)
            .map_err(|e| IngestError::DocumentUnreadable(format!("pdf parse failed: {e}")))?;
        if doc.is_encrypted() {
            return Err(IngestError::DocumentUnreadable(
                "pdf is encrypted".into(),
            ));
        }
        let mut pages = Vec::new();
        for page_number in doc.get_pages().keys() {
            let text = doc.extract_text(&[*page_number]).unwrap_or_default();
            pages.push(text);
        }
        Ok(pages)
    }
}

/// A paper source: either a filesystem path or raw bytes.
pub enum PaperSource<'a> {
    Path(&'a Path),
    Bytes(&'a [u8]),
}

impl<'a> From<&'a Path> for PaperSource<'a> {
    fn from(path: &'a Path) -> Self {
        PaperSource::Path(path)
    }
}

impl<'a> From<&'a [u8]> for PaperSource<'a> {
    fn from(bytes: &'a [u8]) -> Self {
        PaperSource::Bytes(bytes)
    }
}

/// Load paper text with the default extractor and character budget.
pub fn load_paper_text(
    paper_id: &str,
    source: PaperSource<'_>,
    kind: SourceKind,
) -> Result<PaperDoc, IngestError> {
    load_paper_text_with(
        paper_id,
        source,
        kind,
        &DefaultPdfExtractor,
        DEFAULT_PAPER_CHAR_BUDGET,
    )
}

/// Load paper text with an explicit extractor and budget. PDF page texts
/// are concatenated in page order; plain text is passed through as-is.
pub fn load_paper_text_with(
    paper_id: &str,
    source: PaperSource<'_>,
    kind: SourceKind,
    extractor: &dyn PdfExtractor,
    char_budget: usize,
) -> Result<PaperDoc, IngestError> {
    let owned;
    let bytes: &[u8] = match source {
        PaperSource::Bytes(b) => b,
        PaperSource::Path(p) => {
            owned = fs::read(p)?;
            &owned
        }
    };
    let text = match kind {
        SourceKind::PlainText => String::from_utf8(bytes.to_vec())
            .map_err(|_| IngestError::DocumentUnreadable("not valid UTF-8".into()))?,
        SourceKind::Pdf => extractor.extract_pages(bytes)?.join("\n"),
    };
    if text.trim().is_empty() {
        return Err(IngestError::DocumentUnreadable(
            "zero extractable text".into(),
        ));
    }
    let (text, truncated) = truncate_chars(text, char_budget);
    let char_count = text.chars().count();
    Ok(PaperDoc {
        paper_id: paper_id.to_string(),
        text,
        source_kind: kind,
        char_count,
        truncated,
    })
}

fn truncate_chars(text: String, budget: usize) -> (String, bool) {
    match text.char_indices().nth(budget) {
        Some((byte_idx, _)) => {
            let mut t = text;
            t.truncate(byte_idx);
            (t, true)
        }
        None => (text, false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(summary: &str, strengths: &str, weaknesses: &str, questions: &str) -> RawReview {
        RawReview {
            review_id: "r1".into(),
            paper_id: "p1".into(),
            reviewer: "~Alex_Reviewer1".into(),
            summary: summary.into(),
            strengths: strengths.into(),
            weaknesses: weaknesses.into(),
            questions: questions.into(),
            soundness: Some(3),
            presentation: Some(2),
            contribution: Some(3),
            rating: Some(6),
            confidence: Some(4),
            submitted_at: 1_000,
        }
    }

    #[test]
    fn plain_text_passthrough() {
        let doc = load_paper_text(
            "p1",
            PaperSource::Bytes(b"Hello world"),
            SourceKind::PlainText,
        )
        .unwrap();
        assert_eq!(doc.text, "Hello world");
        assert_eq!(doc.source_kind, SourceKind::PlainText);
        assert_eq!(doc.char_count, 11);
        assert!(!doc.truncated);
    }

    /// Byte-level single-page PDF with one text-showing operator. Built
    /// by hand so the extractor under test shares no code with it; the
    /// oracle is the embedded string itself.
    fn minimal_pdf(text: &str) -> Vec<u8> {
        let content = format!("BT /F1 12 Tf 72 720 Td ({text}) Tj ET");
        let objects = [
            "<< /Type /Catalog /Pages 2 0 R >>".to_string(),
            "<< /Type /Pages /Kids [3 0 R] /Count 1 >>".to_string(),
            "<< /Type /Page /Parent 2 0 R /MediaBox [0 0 612 792] /Contents 4 0 R \
             /Resources << /Font << /F1 5 0 R >> >> >>"
                .to_string(),
            format!(
                "<< /Length {} >>\nstream\n{content}\nendstream",
                content.len()
            ),
            "<< /Type /Font /Subtype /Type1 /BaseFont /Helvetica >>".to_string(),
        ];
        let mut out = b"%PDF-1.4\n".to_vec();
        let mut offsets = Vec::new();
        for (idx, body) in objects.iter().enumerate() {
            offsets.push(out.len());
            out.extend(format!("{} 0 obj\n{body}\nendobj\n", idx + 1).bytes());
        }
        let xref_pos = out.len();
        out.extend(format!("xref\n0 {}\n0000000000 65535 f \n", objects.len() + 1).bytes());
        for offset in offsets {
            out.extend(format!("{offset:010} 00000 n \n").bytes());
        }
        out.extend(
            format!(
                "trailer\n<< /Size {} /Root 1 0 R >>\nstartxref\n{xref_pos}\n%%EOF",
                objects.len() + 1
            )
            .bytes(),
        );
        out
    }

    #[test]
    fn pdf_page_text_is_extracted() {
        let bytes = minimal_pdf("the quick brown fox");
        let doc = load_paper_text("p1", PaperSource::Bytes(&bytes), SourceKind::Pdf).unwrap();
        assert!(
            doc.text.contains("the quick brown fox"),
            "extracted: {:?}",
            doc.text
        );
        assert_eq!(doc.source_kind, SourceKind::Pdf);
        assert_eq!(doc.char_count, doc.text.chars().count());
    }

    #[test]
    fn invalid_document_is_unreadable() {
        let err = load_paper_text("p1", PaperSource::Bytes(b"\x00garbage"), SourceKind::Pdf)
            .unwrap_err();
        assert!(matches!(err, IngestError::DocumentUnreadable(_)));
    }

    #[test]
    fn empty_plain_text_is_unreadable() {
        let err =
            load_paper_text("p1", PaperSource::Bytes(b"  \n "), SourceKind::PlainText).unwrap_err();
        assert!(matches!(err, IngestError::DocumentUnreadable(_)));
    }

    #[test]
    fn truncation_flags_and_counts() {
        let long = "a".repeat(50);
        let doc = load_paper_text_with(
            "p1",
            PaperSource::Bytes(long.as_bytes()),
            SourceKind::PlainText,
            &DefaultPdfExtractor,
            10,
        )
        .unwrap();
        assert!(doc.truncated);
        assert_eq!(doc.char_count, 10);
    }

    #[test]
    fn parse_review_full_record() {
        let review = parse_review(&raw("s", "st", "w", "q"), "salt").unwrap();
        assert_eq!(review.sections.summary, "s");
        assert_eq!(review.sections.questions, "q");
        assert_eq!(review.scores.ordered().len(), 5);
        assert!(review.scores.ordered().iter().all(|(_, v)| v.is_some()));
        assert_eq!(review.versions.len(), 1);
        assert_eq!(review.versions[0].time, 1_000);
    }

    #[test]
    fn parse_review_fills_missing_sections() {
        let review = parse_review(&raw("", "", "only weaknesses here", ""), "salt").unwrap();
        assert_eq!(review.sections.summary, "");
        assert_eq!(review.sections.strengths, "");
        assert_eq!(review.sections.weaknesses, "only weaknesses here");
        assert_eq!(review.sections.questions, "");
    }

    #[test]
    fn parse_review_rejects_all_empty() {
        let err = parse_review(&raw("", "", "", ""), "salt").unwrap_err();
        assert!(matches!(err, IngestError::MissingSections(_)));
    }

    #[test]
    fn parse_review_rejects_out_of_range_rating() {
        let mut r = raw("s", "", "", "");
        r.rating = Some(11);
        let err = parse_review(&r, "salt").unwrap_err();
        assert!(matches!(err, IngestError::InvalidScore { .. }));
    }

    #[test]
    fn parse_review_is_deterministic_and_roundtrips() {
        let r = raw("s", "st", "w", "q");
        let a = parse_review(&r, "salt").unwrap();
        let b = parse_review(&r, "salt").unwrap();
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        let back: Review = serde_json::from_str(&json).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn pseudonym_is_stable_and_salted() {
        let a = pseudonymize("salt", "~Alex_Reviewer1");
        let b = pseudonymize("salt", "~Alex_Reviewer1");
        let c = pseudonymize("other", "~Alex_Reviewer1");
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.starts_with("rev-"));
        assert!(!a.contains("Alex"));
    }

    #[test]
    fn prompt_text_contains_no_scores() {
        let review = parse_review(&raw("sum", "str", "weak", "ques"), "salt").unwrap();
        let text = review.prompt_text();
        let lowered = text.to_lowercase();
        for name in [
            "soundness:",
            "presentation:",
            "contribution:",
            "rating:",
            "confidence:",
        ] {
            assert!(!lowered.contains(name), "leaked {name} into prompt text");
        }
        assert!(text.contains("Summary:\nsum"));
        assert!(text.contains("Questions:\nques"));
    }

    #[test]
    fn push_version_keeps_order_and_latest() {
        let mut review = parse_review(&raw("a", "", "", ""), "salt").unwrap();
        review.push_version(
            2_000,
            Sections {
                summary: "b".into(),
                ..Default::default()
            },
            Scores::default(),
        );
        assert_eq!(review.versions.len(), 2);
        assert!(review.versions[0].time <= review.versions[1].time);
        assert_eq!(review.latest().sections.summary, "b");
        assert_eq!(review.sections.summary, "b");
    }
}
